//! Deterministic evaluation over a grid of history lengths, horizons and
//! patch sizes.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use phenocast_tensor::rng;

use super::baselines::Forecaster;
use super::metrics;
use super::report::{EvalReport, ReportRow};
use crate::data::SplitSet;
use crate::error::{Error, Result};
use crate::sampling::{crop_to, extract_window, TrainingExample};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub t_values: Vec<usize>,
    pub delta_values: Vec<usize>,
    pub patch_values: Vec<usize>,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            t_values: vec![2, 10, 20, 30, 40],
            delta_values: (1..=10).collect(),
            patch_values: vec![1, 3, 5, 7, 9],
            seed: 0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t_values.is_empty() || self.delta_values.is_empty() || self.patch_values.is_empty() {
            return Err(Error::config("grid: every axis needs at least one value"));
        }
        if self.delta_values.contains(&0) {
            return Err(Error::config("grid: horizons must be positive"));
        }
        if let Some(p) = self.patch_values.iter().find(|&&p| p % 2 == 0) {
            return Err(Error::config(format!("grid: patch size {p} is not odd")));
        }
        Ok(())
    }

    /// Axes sorted and deduplicated.
    pub fn normalized(&self) -> GridSpec {
        let norm = |v: &[usize]| {
            let mut v = v.to_vec();
            v.sort_unstable();
            v.dedup();
            v
        };
        GridSpec {
            t_values: norm(&self.t_values),
            delta_values: norm(&self.delta_values),
            patch_values: norm(&self.patch_values),
            seed: self.seed,
        }
    }
}

const TAG_GRID: u64 = 0x6e1d;

/// One window per pixel for a `(T, Δ)` cell, at full patch size.
///
/// Each pixel draws a single uniform number from the grid seed and maps it
/// onto the admissible targets of the cell, so cells with the same
/// admissible set share targets. Windows whose calendar horizon differs from
/// `delta` because of missing composites are dropped.
pub fn cell_windows(set: &SplitSet, t: usize, delta: usize, seed: u64) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for series in &set.series {
        let u: f64 = rng::stream_for(seed, &[TAG_GRID, series.pixel_id]).random();
        let targets: Vec<usize> = set
            .target_indices(series)
            .into_iter()
            .filter(|&i| i >= t + delta)
            .collect();
        if targets.is_empty() {
            continue;
        }
        let target = targets[((u * targets.len() as f64) as usize).min(targets.len() - 1)];
        let ex = extract_window(series, target - delta - t, t, delta)?;
        if ex.horizon_delta == delta {
            out.push(ex);
        }
    }
    Ok(out)
}

/// Evaluates every forecaster on every cell. Cells without windows are
/// omitted with a warning; so are forecasters that skip every window.
pub fn run_grid(forecasters: &[&dyn Forecaster], set: &SplitSet, spec: &GridSpec) -> Result<EvalReport> {
    spec.validate()?;
    let spec = spec.normalized();
    let data_patch = set
        .series
        .first()
        .and_then(|s| s.patch_size())
        .ok_or_else(|| Error::config("grid: evaluation set is empty"))?;
    if let Some(p) = spec.patch_values.iter().find(|&&p| p > data_patch) {
        return Err(Error::config(format!(
            "grid: patch size {p} exceeds the archive patch size {data_patch}"
        )));
    }
    let mut report = EvalReport::default();
    for f in forecasters {
        for &t in &spec.t_values {
            for &delta in &spec.delta_values {
                let windows = cell_windows(set, t, delta, spec.seed)?;
                for &patch in &spec.patch_values {
                    if windows.is_empty() {
                        warn!("grid cell T={t} delta={delta} patch={patch} has no windows");
                        continue;
                    }
                    let (mut preds, mut truths, mut skipped) = (Vec::new(), Vec::new(), 0usize);
                    for ex in &windows {
                        let ex = crop_to(ex.clone(), patch)?;
                        match f.predict(&ex)? {
                            Some(p) => {
                                preds.push(p);
                                truths.push(ex.target_value);
                            }
                            None => skipped += 1,
                        }
                    }
                    if preds.is_empty() {
                        warn!("{} skipped every window of cell T={t} delta={delta} patch={patch}", f.name());
                        continue;
                    }
                    report.rows.push(ReportRow {
                        model: f.name().to_string(),
                        t,
                        delta,
                        patch_size: patch,
                        mae: metrics::mae(&preds, &truths)?,
                        r2: metrics::r2(&preds, &truths).ok(),
                        n_examples: preds.len(),
                        n_skipped: skipped,
                    });
                }
            }
        }
    }
    Ok(report)
}
