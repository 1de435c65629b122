//! The subcommands as library functions returning their results.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;

use phenocast::checkpoint::{load_checkpoint, save_checkpoint};
use phenocast::data::{generate_archive, read_archive_from, split_archive, write_archive, LandClass, PixelSeries, Season};
use phenocast::eval::{run_grid, Climatology, EvalReport, Forecaster, GridSpec, LinearBaseline, Persistence};
use phenocast::model::Model;
use phenocast::sampling::{query_window, WindowPolicy};
use phenocast::selftest;
use phenocast::train::{self, EpochRecord, TrainHistory};

use crate::config::{dataset_id, RunConfig};
use crate::error::CliError;

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSummary {
    pub pixels: usize,
    pub steps: usize,
    pub classes: BTreeMap<LandClass, usize>,
    pub dataset_id: String,
}

/// Writes a synthetic archive to `out`.
pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<GenSummary> {
    let archive = generate_archive(&cfg.synth_config())?;
    write_archive(out, &archive).map_err(|e| match e {
        phenocast::Error::Io(io) => io_err(out, io),
        other => other.into(),
    })?;
    let bytes = std::fs::read(out).map_err(|e| io_err(out, e))?;
    let mut classes = BTreeMap::new();
    for p in &archive {
        *classes.entry(p.land_class).or_insert(0) += 1;
    }
    Ok(GenSummary {
        pixels: archive.len(),
        steps: archive.iter().map(|p| p.steps.len()).sum(),
        classes,
        dataset_id: dataset_id(&bytes),
    })
}

/// Reads an archive and returns it with its content id.
pub fn load_data(path: &Path) -> Result<(Vec<PixelSeries>, String)> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let archive = read_archive_from(&bytes[..])?;
    if archive.is_empty() {
        return Err(CliError::Usage(format!("{} holds no pixels", path.display())));
    }
    Ok((archive, dataset_id(&bytes)))
}

fn check_patch(cfg_patch: usize, archive: &[PixelSeries]) -> Result<()> {
    let n = archive[0].patch_size().unwrap_or(0);
    if n != cfg_patch {
        return Err(CliError::Usage(format!(
            "archive patches are {n}x{n} but embed.patch_size = {cfg_patch}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    pub selftest_error: f64,
    pub selftest_checked: usize,
}

const METRICS_HEADER: &str = "epoch,train_loss,train_mae,train_r2,val_mae,val_r2";

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn metrics_row(r: &EpochRecord) -> String {
    format!(
        "{},{},{},{},{},{}",
        r.epoch,
        r.train_loss,
        opt(r.train_mae),
        opt(r.train_r2),
        opt(r.val_mae),
        opt(r.val_r2)
    )
}

fn provenance(cfg: &RunConfig, data_id: &str) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("seed".to_string(), cfg.seed.to_string()),
        ("config_hash".to_string(), cfg.hash()),
        ("dataset_id".to_string(), data_id.to_string()),
        ("config".to_string(), cfg.to_json()),
    ])
}

/// Gradient self-test, then training; writes the best-validation
/// checkpoint and one metrics row per epoch.
pub fn train(cfg: &RunConfig, data: &Path, checkpoint: &Path, metrics: &Path) -> Result<TrainOutcome> {
    let (archive, data_id) = load_data(data)?;
    check_patch(cfg.embed.patch_size, &archive)?;
    let tc = cfg.train_config();
    let (train_all, _) = split_archive(&archive, cfg.split_year)?;
    let (train_set, val_set) = train_all.holdout(tc.val_fraction, cfg.seed)?;
    let mut model = Model::new(cfg.model(), cfg.seed)?;

    let check_policy = WindowPolicy {
        history_max: cfg.selftest.max_history.max(cfg.window.history_min),
        ..cfg.window
    };
    let mut windows = train::fixed_windows(&train_set, &check_policy, 1, cfg.seed)?;
    windows.truncate(cfg.selftest.examples);
    let report = selftest::gate(&model, &windows, &cfg.selftest_config()).map_err(|e| CliError::SelfTest(e.to_string()))?;
    info!(
        "gradient self-test passed: {} entries, max relative error {:.3e}",
        report.checked, report.max_rel_error
    );

    let file = File::create(metrics).map_err(|e| io_err(metrics, e))?;
    let mut out = BufWriter::new(file);
    let meta = provenance(cfg, &data_id);
    for key in ["seed", "config_hash", "dataset_id", "config"] {
        writeln!(out, "# {key}={}", meta[key]).map_err(|e| io_err(metrics, e))?;
    }
    writeln!(out, "{METRICS_HEADER}").map_err(|e| io_err(metrics, e))?;
    out.flush().map_err(|e| io_err(metrics, e))?;
    let mut write_err = None;
    let val = (!val_set.series.is_empty()).then_some(&val_set);
    let history = train::train(&mut model, &train_set, val, &tc, |r| {
        let res = writeln!(out, "{}", metrics_row(r)).and_then(|_| out.flush());
        if let Err(e) = res {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_err(metrics, e));
    }

    let mut meta = meta;
    if let (Some(e), Some(m)) = (history.best_epoch, history.best_val_mae) {
        meta.insert("best_epoch".into(), e.to_string());
        meta.insert("best_val_mae".into(), m.to_string());
    }
    save_checkpoint(checkpoint, &model, &meta).map_err(|e| match e {
        phenocast::Error::Io(io) => io_err(checkpoint, io),
        other => other.into(),
    })?;
    Ok(TrainOutcome {
        history,
        selftest_error: report.max_rel_error,
        selftest_checked: report.checked,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub pixel_id: u64,
    pub target_year: i32,
    pub target_month: u32,
    pub history_len: usize,
    pub horizon_delta: usize,
    pub prediction: f64,
    pub truth: Option<f64>,
}

impl Prediction {
    pub const HEADER: &'static str = "pixel_id,target_year,target_month,T,delta,prediction,truth,abs_error";

    pub fn to_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.pixel_id,
            self.target_year,
            self.target_month,
            self.history_len,
            self.horizon_delta,
            self.prediction,
            opt(self.truth),
            opt(self.truth.map(|t| (self.prediction - t).abs()))
        )
    }
}

/// Forecasts one pixel at `(year, month)` from the observations before it.
pub fn predict(model: &Model, archive: &[PixelSeries], pixel: u64, year: i32, month: u32, history: usize) -> Result<Prediction> {
    let season = Season::from_month(month)
        .ok_or_else(|| CliError::Usage(format!("target month {month} is not a composite month (1 or 7)")))?;
    let series = archive
        .iter()
        .find(|p| p.pixel_id == pixel)
        .ok_or_else(|| CliError::Usage(format!("pixel {pixel} is not in the archive")))?;
    let (ex, truth) = query_window(series, history, year, season)?;
    let prediction = model.predict(&ex)?;
    Ok(Prediction {
        pixel_id: pixel,
        target_year: year,
        target_month: month,
        history_len: ex.history_len(),
        horizon_delta: ex.horizon_delta,
        prediction,
        truth,
    })
}

pub fn load_model(path: &Path) -> Result<Model> {
    load_checkpoint(path).map(|(m, _)| m).map_err(|e| match e {
        phenocast::Error::Io(io) => io_err(path, io),
        other => other.into(),
    })
}

fn evaluate(cfg: &RunConfig, model: &Model, data: &Path, spec: &GridSpec, checkpoint: &Path) -> Result<EvalReport> {
    let (archive, data_id) = load_data(data)?;
    check_patch(model.cfg.embed.patch_size, &archive)?;
    let (train_set, test_set) = split_archive(&archive, cfg.split_year)?;
    let linear = LinearBaseline::fit(&train_set, cfg.eval.linear_lags, &spec.delta_values)?;
    let forecasters: [&dyn Forecaster; 4] = [model, &Persistence, &Climatology, &linear];
    let mut report = run_grid(&forecasters, &test_set, spec)?;
    report.metadata = provenance(cfg, &data_id);
    let ckpt_bytes = std::fs::read(checkpoint).map_err(|e| io_err(checkpoint, e))?;
    report.metadata.insert("checkpoint_id".into(), dataset_id(&ckpt_bytes));
    Ok(report)
}

fn write_report(report: &EvalReport, out: &Path) -> Result<()> {
    report.write(out).map_err(|e| match e {
        phenocast::Error::Io(io) => io_err(out, io),
        other => other.into(),
    })
}

/// Model and baselines on the test split at one `(T, Δ)` and full patches.
pub fn eval(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<EvalReport> {
    let model = load_model(checkpoint)?;
    let spec = GridSpec {
        t_values: vec![cfg.eval.history],
        delta_values: vec![cfg.eval.horizon],
        patch_values: vec![model.cfg.embed.patch_size],
        seed: cfg.seed,
    };
    let report = evaluate(cfg, &model, data, &spec, checkpoint)?;
    write_report(&report, out)?;
    Ok(report)
}

/// Model and baselines over the configured grid.
pub fn grid(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path, plot: Option<&PathBuf>) -> Result<EvalReport> {
    let model = load_model(checkpoint)?;
    let report = evaluate(cfg, &model, data, &cfg.grid_spec(), checkpoint)?;
    write_report(&report, out)?;
    if let Some(plot) = plot {
        let file = File::create(plot).map_err(|e| io_err(plot, e))?;
        report.write_plot_data(BufWriter::new(file))?;
    }
    Ok(report)
}
