use rand::seq::SliceRandom;

use super::PixelSeries;
use crate::error::{Error, Result};
use phenocast_tensor::rng;

/// Which target years a split may predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetYears {
    pub after: Option<i32>,
    pub up_to: Option<i32>,
}

impl TargetYears {
    pub const ALL: TargetYears = TargetYears { after: None, up_to: None };

    pub fn admits(&self, year: i32) -> bool {
        self.after.is_none_or(|a| year > a) && self.up_to.is_none_or(|u| year <= u)
    }
}

/// Series plus the rule selecting admissible prediction targets.
///
/// A target needs at least one earlier observation, so index 0 of a series
/// is never a target.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSet {
    pub series: Vec<PixelSeries>,
    pub targets: TargetYears,
}

impl SplitSet {
    pub fn new(series: Vec<PixelSeries>, targets: TargetYears) -> Self {
        Self { series, targets }
    }

    pub fn is_empty(&self) -> bool {
        self.target_count() == 0
    }

    pub fn target_indices(&self, series: &PixelSeries) -> Vec<usize> {
        (1..series.steps.len())
            .filter(|&i| self.targets.admits(series.steps[i].year))
            .collect()
    }

    pub fn target_count(&self) -> usize {
        self.series.iter().map(|s| self.target_indices(s).len()).sum()
    }

    /// Moves a seeded random `fraction` of pixels into a second set with the
    /// same target rule.
    pub fn holdout(&self, fraction: f64, seed: u64) -> Result<(SplitSet, SplitSet)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::config(format!("holdout fraction {fraction} outside [0, 1)")));
        }
        let mut order: Vec<usize> = (0..self.series.len()).collect();
        order.shuffle(&mut rng::stream_for(seed, &[0x401d]));
        let n_hold = (fraction * self.series.len() as f64).round() as usize;
        let mut held: Vec<usize> = order[..n_hold].to_vec();
        held.sort_unstable();
        let (mut keep, mut hold) = (Vec::new(), Vec::new());
        for (i, s) in self.series.iter().enumerate() {
            if held.binary_search(&i).is_ok() {
                hold.push(s.clone());
            } else {
                keep.push(s.clone());
            }
        }
        Ok((SplitSet::new(keep, self.targets), SplitSet::new(hold, self.targets)))
    }
}

/// Temporal split. Training series are truncated to years `≤ split_year`;
/// test series keep their full history but only target years after the split.
pub fn split_archive(archive: &[PixelSeries], split_year: i32) -> Result<(SplitSet, SplitSet)> {
    let years = archive.iter().flat_map(|p| p.steps.iter().map(|s| s.year));
    let (lo, hi) = years.fold((i32::MAX, i32::MIN), |(lo, hi), y| (lo.min(y), hi.max(y)));
    if archive.is_empty() || lo > hi {
        return Err(Error::config("cannot split an empty archive"));
    }
    if split_year < lo || split_year >= hi {
        return Err(Error::config(format!(
            "split year {split_year} must lie in [{lo}, {}]",
            hi - 1
        )));
    }
    let train = archive
        .iter()
        .map(|p| PixelSeries {
            steps: p.steps.iter().filter(|s| s.year <= split_year).cloned().collect(),
            ..p.clone()
        })
        .collect();
    let train = SplitSet::new(
        train,
        TargetYears {
            after: None,
            up_to: Some(split_year),
        },
    );
    let test = SplitSet::new(
        archive.to_vec(),
        TargetYears {
            after: Some(split_year),
            up_to: None,
        },
    );
    Ok((train, test))
}
