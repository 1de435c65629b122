//! Pixel time series, the synthetic archive generator and its file format.

mod archive;
mod split;
mod synth;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use archive::{read_archive, read_archive_from, write_archive, write_archive_to};
pub use split::{split_archive, SplitSet, TargetYears};
pub use synth::{generate_archive, ClassParams, ClassTable, Generator, SynthConfig};

/// `(nir − red) / (nir + red)`, with `0` when both bands are zero.
pub fn ndvi(nir: f64, red: f64) -> Result<f64> {
    if !(nir >= 0.0 && red >= 0.0) || !nir.is_finite() || !red.is_finite() {
        return Err(Error::contract(format!(
            "reflectances must be finite and non-negative, got nir={nir} red={red}"
        )));
    }
    let sum = nir + red;
    if sum == 0.0 {
        return Ok(0.0);
    }
    Ok((nir - red) / sum)
}

/// Exact median; even-length input averages the two central values.
/// Returns `None` for an empty window (a missing composite).
pub fn median_composite(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        Some(sorted[mid])
    } else {
        Some((sorted[mid - 1] + sorted[mid]) / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LandClass {
    Bare,
    Grass,
    Shrub,
    Urban,
}

impl LandClass {
    pub const ALL: [LandClass; 4] = [LandClass::Bare, LandClass::Grass, LandClass::Shrub, LandClass::Urban];

    pub fn as_str(self) -> &'static str {
        match self {
            LandClass::Bare => "bare",
            LandClass::Grass => "grass",
            LandClass::Shrub => "shrub",
            LandClass::Urban => "urban",
        }
    }
}

impl fmt::Display for LandClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LandClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        LandClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown land class {s:?}"))
    }
}

/// Bi-annual composite window. Winter (October–April) is labelled with the
/// calendar year in which it ends and represented by month 1; summer
/// (May–September) by month 7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Season {
    Winter,
    Summer,
}

impl Season {
    pub fn month(self) -> u32 {
        match self {
            Season::Winter => 1,
            Season::Summer => 7,
        }
    }

    /// `+1` for winter, `−1` for summer.
    pub fn sign(self) -> f64 {
        match self {
            Season::Winter => 1.0,
            Season::Summer => -1.0,
        }
    }

    pub fn from_month(month: u32) -> Option<Season> {
        match month {
            1 => Some(Season::Winter),
            7 => Some(Season::Summer),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Season::Winter => "winter",
            Season::Summer => "summer",
        }
    }

    fn offset(self) -> i64 {
        match self {
            Season::Winter => 0,
            Season::Summer => 1,
        }
    }
}

impl FromStr for Season {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "winter" => Ok(Season::Winter),
            "summer" => Ok(Season::Summer),
            _ => Err(format!("unknown season {s:?}")),
        }
    }
}

/// Position of `(year, season)` on the half-yearly composite timeline.
pub fn composite_index(year: i32, season: Season) -> i64 {
    2 * year as i64 + season.offset()
}

/// Square `N×N` NDVI window, row-major, `N` odd.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    size: usize,
    values: Vec<f64>,
}

impl Patch {
    pub fn new(size: usize, values: Vec<f64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::contract(format!("patch size must be odd and positive, got {size}")));
        }
        if values.len() != size * size {
            return Err(Error::contract(format!(
                "patch of size {size} needs {} values, got {}",
                size * size,
                values.len()
            )));
        }
        Ok(Self { size, values })
    }

    pub fn zeros(size: usize) -> Self {
        Self::new(size, vec![0.0; size * size]).expect("odd size")
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.size + col]
    }

    pub fn center(&self) -> f64 {
        let h = self.size / 2;
        self.get(h, h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub year: i32,
    pub season: Season,
    pub patch: Patch,
}

impl Step {
    pub fn composite_index(&self) -> i64 {
        composite_index(self.year, self.season)
    }
}

/// One pixel's composite history.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSeries {
    pub pixel_id: u64,
    pub lat: f64,
    pub lon: f64,
    pub land_class: LandClass,
    pub steps: Vec<Step>,
}

impl PixelSeries {
    /// Checks ordering, value range and a single patch size.
    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::contract(format!(
                "pixel {}: coordinates ({}, {}) out of range",
                self.pixel_id, self.lat, self.lon
            )));
        }
        let size = self.steps.first().map(|s| s.patch.size());
        for (i, step) in self.steps.iter().enumerate() {
            if Some(step.patch.size()) != size {
                return Err(Error::contract(format!("pixel {}: mixed patch sizes", self.pixel_id)));
            }
            if step.patch.values().iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::contract(format!(
                    "pixel {}: NDVI outside [-1, 1] at step {i}",
                    self.pixel_id
                )));
            }
            if i > 0 && self.steps[i - 1].composite_index() >= step.composite_index() {
                return Err(Error::contract(format!(
                    "pixel {}: steps not strictly ordered at {i}",
                    self.pixel_id
                )));
            }
        }
        Ok(())
    }

    pub fn patch_size(&self) -> Option<usize> {
        self.steps.first().map(|s| s.patch.size())
    }

    pub fn center_values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.patch.center()).collect()
    }
}
