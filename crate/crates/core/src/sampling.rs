//! Window extraction and the training-time augmentations: spatial masking,
//! temporal prefix masking and horizon sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{composite_index, Patch, PixelSeries, Season, SplitSet};
use crate::error::{Error, Result};

/// A history window of `T + 1` steps plus the target to predict.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub pixel_id: u64,
    pub patches: Vec<Patch>,
    pub months: Vec<u32>,
    pub years: Vec<i32>,
    /// `false` marks a masked step: its patch is zero and attention skips it.
    pub valid: Vec<bool>,
    pub lat: f64,
    pub lon: f64,
    pub target_month: u32,
    pub target_year: i32,
    pub target_value: f64,
    /// Half-year composite steps from the last history step to the target.
    pub horizon_delta: usize,
}

impl TrainingExample {
    /// `T`, the index of the last history step.
    pub fn history_len(&self) -> usize {
        self.patches.len() - 1
    }

    pub fn patch_size(&self) -> usize {
        self.patches[0].size()
    }

    /// Centre values of the valid history steps with their months.
    pub fn valid_centers(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.patches
            .iter()
            .zip(&self.months)
            .zip(&self.valid)
            .filter(|(_, &v)| v)
            .map(|((p, &m), _)| (m, p.center()))
    }
}

/// Steps `start..=start + t` as history, step `start + t + delta` as target.
pub fn extract_window(series: &PixelSeries, start: usize, t: usize, delta: usize) -> Result<TrainingExample> {
    let target = start + t + delta;
    if delta == 0 || target >= series.steps.len() {
        return Err(Error::contract(format!(
            "window start={start} T={t} delta={delta} does not fit {} steps",
            series.steps.len()
        )));
    }
    let history = &series.steps[start..=start + t];
    let last = &history[t];
    let tgt = &series.steps[target];
    Ok(TrainingExample {
        pixel_id: series.pixel_id,
        patches: history.iter().map(|s| s.patch.clone()).collect(),
        months: history.iter().map(|s| s.season.month()).collect(),
        years: history.iter().map(|s| s.year).collect(),
        valid: vec![true; t + 1],
        lat: series.lat,
        lon: series.lon,
        target_month: tgt.season.month(),
        target_year: tgt.year,
        target_value: tgt.patch.center(),
        horizon_delta: (tgt.composite_index() - last.composite_index()) as usize,
    })
}

/// Window for forecasting an arbitrary `(year, season)` of `series`.
///
/// The history is the last `T + 1` steps strictly before the target, with
/// `T` capped by `max_history` and by what the series holds. The second
/// value is the observed target when the series contains it; otherwise the
/// example's `target_value` is NaN.
pub fn query_window(
    series: &PixelSeries,
    max_history: usize,
    year: i32,
    season: Season,
) -> Result<(TrainingExample, Option<f64>)> {
    let target = composite_index(year, season);
    let before = series.steps.partition_point(|s| s.composite_index() < target);
    if before == 0 {
        return Err(Error::contract(format!(
            "pixel {} has no observation before {year} {}",
            series.pixel_id,
            season.as_str()
        )));
    }
    let t = max_history.min(before - 1);
    let history = &series.steps[before - 1 - t..before];
    let truth = series
        .steps
        .get(before)
        .filter(|s| s.composite_index() == target)
        .map(|s| s.patch.center());
    let ex = TrainingExample {
        pixel_id: series.pixel_id,
        patches: history.iter().map(|s| s.patch.clone()).collect(),
        months: history.iter().map(|s| s.season.month()).collect(),
        years: history.iter().map(|s| s.year).collect(),
        valid: vec![true; t + 1],
        lat: series.lat,
        lon: series.lon,
        target_month: season.month(),
        target_year: year,
        target_value: truth.unwrap_or(f64::NAN),
        horizon_delta: (target - history[t].composite_index()) as usize,
    };
    Ok((ex, truth))
}

/// Zeroes everything outside the central `n×n` block of every patch.
pub fn spatial_mask(mut ex: TrainingExample, n: usize) -> Result<TrainingExample> {
    let size = ex.patch_size();
    if n % 2 == 0 || n >= size {
        return Err(Error::contract(format!(
            "spatial mask size {n} must be odd and smaller than the patch size {size}"
        )));
    }
    let lo = (size - n) / 2;
    let inside = |i: usize| (lo..lo + n).contains(&i);
    for patch in &mut ex.patches {
        for (k, v) in patch.values_mut().iter_mut().enumerate() {
            if !(inside(k / size) && inside(k % size)) {
                *v = 0.0;
            }
        }
    }
    Ok(ex)
}

/// Restricts patches to the central `n×n` block; `n` equal to the patch
/// size leaves the example unchanged.
pub fn crop_to(ex: TrainingExample, n: usize) -> Result<TrainingExample> {
    if n == ex.patch_size() {
        Ok(ex)
    } else {
        spatial_mask(ex, n)
    }
}

/// Invalidates and zeroes history steps with index `< t_prime`.
pub fn temporal_mask(mut ex: TrainingExample, t_prime: usize) -> Result<TrainingExample> {
    let t = ex.history_len();
    if t_prime > 0 && t_prime >= t {
        return Err(Error::contract(format!("temporal prefix {t_prime} must be < T = {t}")));
    }
    for i in 0..t_prime {
        ex.valid[i] = false;
        ex.patches[i].values_mut().fill(0.0);
    }
    Ok(ex)
}

/// Horizon `Δ ~ Uniform{1, …, max_index − t}`.
pub fn sample_horizon<R: Rng + ?Sized>(t: usize, max_index: usize, rng: &mut R) -> Result<usize> {
    if max_index <= t {
        return Err(Error::contract(format!("max index {max_index} must exceed T = {t}")));
    }
    Ok(rng.random_range(1..=max_index - t))
}

/// Independent application probabilities of the two masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub spatial_prob: f64,
    pub temporal_prob: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            spatial_prob: 0.5,
            temporal_prob: 0.5,
        }
    }
}

impl AugmentPolicy {
    pub const NONE: AugmentPolicy = AugmentPolicy {
        spatial_prob: 0.0,
        temporal_prob: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("spatial_prob", self.spatial_prob), ("temporal_prob", self.temporal_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("augment.{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Which masks [`augment`] applied and with what parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AppliedMasks {
    pub spatial: Option<usize>,
    pub temporal: Option<usize>,
}

/// Applies each mask independently with its policy probability. The mask
/// size is uniform over odd `n < N`; the prefix uniform over `0..T`. A mask
/// that cannot apply (`N = 1` or `T = 0`) is skipped.
pub fn augment<R: Rng + ?Sized>(
    ex: TrainingExample,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> Result<(TrainingExample, AppliedMasks)> {
    policy.validate()?;
    let mut applied = AppliedMasks::default();
    let mut ex = ex;
    let size = ex.patch_size();
    if rng.random::<f64>() < policy.spatial_prob && size >= 3 {
        let n = 2 * rng.random_range(0..(size - 1) / 2) + 1;
        ex = spatial_mask(ex, n)?;
        applied.spatial = Some(n);
    }
    let t = ex.history_len();
    if rng.random::<f64>() < policy.temporal_prob && t >= 1 {
        let t_prime = rng.random_range(0..t);
        ex = temporal_mask(ex, t_prime)?;
        applied.temporal = Some(t_prime);
    }
    Ok((ex, applied))
}

/// Ranges for drawing training windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowPolicy {
    pub history_min: usize,
    pub history_max: usize,
    /// Largest horizon drawn, in composite steps.
    pub max_horizon: usize,
}

impl Default for WindowPolicy {
    fn default() -> Self {
        Self {
            history_min: 1,
            history_max: 40,
            max_horizon: 20,
        }
    }
}

impl WindowPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.history_min > self.history_max || self.max_horizon == 0 {
            return Err(Error::config(
                "window: need history_min <= history_max and max_horizon >= 1",
            ));
        }
        Ok(())
    }
}

/// Draws one window from `series` whose target is admissible in `split`.
///
/// `T` is uniform on the policy range (capped by the series), `Δ` comes
/// from [`sample_horizon`] with the largest index the series allows, and the
/// target is uniform over admissible indices at least `T + Δ` into the
/// series. Returns `None` when no window fits.
pub fn sample_window<R: Rng + ?Sized>(
    series: &PixelSeries,
    split: &SplitSet,
    policy: &WindowPolicy,
    rng: &mut R,
) -> Result<Option<TrainingExample>> {
    let targets = split.target_indices(series);
    let Some(&last) = targets.last() else {
        return Ok(None);
    };
    if policy.history_min >= last {
        return Ok(None);
    }
    let t_hi = policy.history_max.min(last - 1);
    let t = rng.random_range(policy.history_min..=t_hi);
    let max_index = (t + policy.max_horizon).min(last);
    let delta = sample_horizon(t, max_index, rng)?;
    let first = targets.partition_point(|&i| i < t + delta);
    let target = targets[rng.random_range(first..targets.len())];
    extract_window(series, target - delta - t, t, delta).map(Some)
}
