use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use fgn_core::data::{synth_gait, write_csv, PreparedData, SynthConfig};
use fgn_core::experiment::{display_name, run_ablation, run_experiment, step_ms};
use fgn_core::metrics::{bench_inference, evaluate, render_reports, render_timing, MetricsReport, MAPE_DELTA};
use fgn_core::train::{load_checkpoint, save_checkpoint};
use fgn_core::Model;
use serde_json::json;

use crate::config::{load_or_default, Run};
use crate::{AblateArgs, BenchArgs, EvalArgs, SynthArgs, TrainArgs};

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn json_text(v: &impl serde::Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn out_dir(flag: Option<PathBuf>, run: &Run) -> Result<PathBuf> {
    let dir =
        flag.or_else(|| run.out.clone()).context("no output directory: pass --out or set `out` in the run file")?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_cycles: a.cycles as usize,
        noise_std: a.noise,
        seed: a.seed,
        rate_hz: a.rate_hz as usize,
        ..Default::default()
    };
    let table = synth_gait(&cfg)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_csv(&table, BufWriter::new(file))?;
    println!("wrote {} rows x {} channels (plus time_ms) to {}", table.len(), table.n_channels(), a.out.display());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut run = load_or_default(a.config.as_deref())?;
    let e = &mut run.experiment;
    if let Some(h) = a.horizon {
        e.model.horizon = h as usize;
    }
    if let Some(v) = a.variant {
        e.model.variant = v;
    }
    if let Some(ab) = a.ablation {
        e.model.ablation = ab;
    }
    if let Some(s) = a.seed {
        e.train.seed = s;
    }
    if let Some(p) = a.data {
        e.data.path = Some(p);
    }
    // the saved run file must resolve from any directory
    if let Some(p) = &e.data.path {
        e.data.path = Some(fs::canonicalize(p).with_context(|| format!("data file {}", p.display()))?);
    }
    let dir = out_dir(a.out, &run)?;
    let e = &mut run.experiment;

    let table = e.data.load().context("loading data")?;
    e.model = e.data.bind_model(&e.model)?;
    let data = e.data.prepare(&table, &e.model).context("preparing windows")?;
    let t0 = Instant::now();
    let out = run_experiment(&e.model, &e.train, &data, step_ms(&table))?;
    let seconds = t0.elapsed().as_secs_f64();

    save_checkpoint(&out.model, dir.join("checkpoint.fgn"))?;
    write(&dir, "trace.json", json_text(&out.trace)?)?;
    let report = json!({
        "config": e,
        "report": out.report,
        "restarts": out.restarts,
        "mean_test": out.mean_test,
        "timing": { "train_seconds": seconds },
    });
    write(&dir, "report.json", json_text(&report)?)?;
    let mut text = render_reports(std::slice::from_ref(&out.report));
    text.push_str("\nRestarts (the lowest validation loss is reported)\n");
    for r in &out.restarts {
        text.push_str(&format!("  seed {:>4}  val loss {:.6}  test MAE {:.3}\n", r.seed, r.best_val_loss, r.test.mae));
    }
    let body = text.clone();
    text.push_str(&format!("\n[timing]\ntraining wall-clock {seconds:.2} s\n"));
    write(&dir, "report.txt", text)?;
    write(&dir, "config.toml", run.to_toml()?)?;
    print!("{body}");
    println!("artifacts in {}", dir.display());
    Ok(())
}

/// Checkpoint plus the data it was trained on: `--config`, else the
/// `config.toml` written beside the checkpoint, else the defaults.
fn checkpoint_and_data(
    checkpoint: &Path,
    config: Option<&Path>,
    csv: Option<PathBuf>,
) -> Result<(Model<f32>, Run, PreparedData<f32>, f64)> {
    let model = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let sibling = checkpoint.with_file_name("config.toml");
    let config = config.map(Path::to_path_buf).or_else(|| sibling.exists().then_some(sibling));
    let mut run = load_or_default(config.as_deref())?;
    if let Some(p) = csv {
        run.experiment.data.path = Some(p);
    }
    let d = &run.experiment.data;
    let cfg = model.config();
    ensure!(
        d.features.len() == cfg.input_dim,
        "checkpoint expects {} input channels, data config selects {}",
        cfg.input_dim,
        d.features.len()
    );
    let table = d.load().context("loading data")?;
    let data = d.prepare(&table, cfg).context("preparing windows")?;
    Ok((model, run, data, step_ms(&table)))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let (model, run, data, ms) = checkpoint_and_data(&a.checkpoint, a.config.as_deref(), a.data)?;
    let cfg = model.config();
    let metrics = evaluate(&model, &data.test, &data.target_stats, run.experiment.train.batch_size)?;
    let report = MetricsReport {
        model: display_name(cfg),
        horizon_steps: cfg.horizon,
        horizon_ms: cfg.horizon as f64 * ms,
        metrics,
        mape_delta: MAPE_DELTA,
    };
    let text = render_reports(std::slice::from_ref(&report));
    if let Some(dir) = a.out {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        write(&dir, "report.json", json_text(&json!({ "report": report }))?)?;
        write(&dir, "report.txt", &text)?;
    }
    print!("{text}");
    Ok(())
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let mut run = load_or_default(a.config.as_deref())?;
    if let Some(s) = a.seed {
        run.experiment.train.seed = s;
    }
    ensure!(!a.horizons.is_empty() && !a.horizons.contains(&0), "horizons must be >= 1");
    let dir = match a.out.or_else(|| run.out.clone()) {
        Some(d) => Some(out_dir(Some(d), &run)?),
        None => None,
    };
    let table = run.experiment.data.load().context("loading data")?;
    let t0 = Instant::now();
    let grid = run_ablation(&run.experiment, &table, &a.horizons)?;
    let seconds = t0.elapsed().as_secs_f64();
    let text = grid.render(step_ms(&table));
    if let Some(dir) = dir {
        write(&dir, "ablation.json", json_text(&json!({ "grid": grid, "timing": { "total_seconds": seconds } }))?)?;
        write(&dir, "ablation.txt", format!("{text}\n[timing]\ntotal wall-clock {seconds:.2} s\n"))?;
    }
    print!("{text}");
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let (model, _, data, _) = checkpoint_and_data(&a.checkpoint, a.config.as_deref(), a.data)?;
    let n = (a.batch as usize).min(data.test.len());
    let batch = data.test.batch(&(0..n).collect::<Vec<_>>());
    let t = bench_inference(&model, &batch, a.warmup, a.trials as usize)?;
    let text = render_timing(&display_name(model.config()), &t);
    if let Some(dir) = a.out {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        write(&dir, "timing.json", json_text(&t)?)?;
    }
    print!("{text}");
    Ok(())
}
