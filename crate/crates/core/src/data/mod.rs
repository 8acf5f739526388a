//! Recording ingestion, alignment, normalisation and windowing.

mod normalize;
pub mod synth;
mod table;
mod window;

pub use normalize::{apply_normalizer, denormalize_table, fit_normalizer, NormalizationStats};
pub use synth::{synth_gait, SynthConfig};
pub use table::{align_tables, load_csv, read_csv, resample_linear, write_csv, CsvSchema, RecordingTable, TIME_COLUMN};
pub use window::{
    make_windows, prepare, split_rows, window_count, window_starts, Batch, PreparedData, SplitPlan, WindowSet,
    WindowSpec, WindowedSample,
};
