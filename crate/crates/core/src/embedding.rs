//! Turns a [`TrainingExample`] into the token matrix fed to the encoder.
//!
//! Each history step `t` becomes
//! `R_t = concat(spatial(X_t), month(M_t), year(Y_t), location(lat, lon))`,
//! projected to `d_model` and offset by a sinusoidal position code. The
//! target token at index `T + 1` carries a zero spatial slot together with
//! the target month and year.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use phenocast_tensor::{Tape, Var};

use crate::error::{Error, Result};
use crate::params::{Bindings, Linear, ParamStore};
use crate::sampling::TrainingExample;

/// Width of the cyclical month code.
pub const MONTH_DIMS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub patch_size: usize,
    pub d_spatial: usize,
    /// Month code plus year embedding; the year gets `d_temporal − 2`.
    pub d_temporal: usize,
    pub d_location: usize,
    pub d_model: usize,
    pub year_start: i32,
    pub year_end: i32,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            patch_size: 5,
            d_spatial: 128,
            d_temporal: 8,
            d_location: 8,
            d_model: 256,
            year_start: 1984,
            year_end: 2024,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.patch_size % 2 == 0 {
            return Err(Error::config(format!(
                "embed.patch_size must be odd, got {}",
                self.patch_size
            )));
        }
        if self.d_spatial == 0 || self.d_location == 0 || self.d_model == 0 {
            return Err(Error::config("embed: dimensions must be positive"));
        }
        if self.d_temporal <= MONTH_DIMS {
            return Err(Error::config("embed.d_temporal must be at least 3"));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::config("embed.d_model must be even for the position code"));
        }
        if self.year_start >= self.year_end {
            return Err(Error::config("embed: year_start must precede year_end"));
        }
        Ok(())
    }

    pub fn d_year(&self) -> usize {
        self.d_temporal - MONTH_DIMS
    }

    pub fn d_concat(&self) -> usize {
        self.d_spatial + self.d_temporal + self.d_location
    }
}

/// `[sin(2πm/12), cos(2πm/12)]`
pub fn encode_month(month: u32) -> Result<[f64; 2]> {
    if !(1..=12).contains(&month) {
        return Err(Error::contract(format!("month {month} outside 1..=12")));
    }
    let angle = 2.0 * PI * month as f64 / 12.0;
    Ok([angle.sin(), angle.cos()])
}

/// `(year − start) / (end − start)`; values beyond the bounds are allowed.
pub fn normalize_year(year: i32, start: i32, end: i32) -> Result<f64> {
    if start == end {
        return Err(Error::config("year normalization needs year_start != year_end"));
    }
    Ok((year - start) as f64 / (end - start) as f64)
}

/// Unit-sphere Cartesian point of a latitude/longitude in degrees.
pub fn sphere_point(lat: f64, lon: f64) -> Result<[f64; 3]> {
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(Error::contract(format!("coordinates ({lat}, {lon}) out of range")));
    }
    let (lat, lon) = (lat.to_radians(), lon.to_radians());
    Ok([lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()])
}

/// Transformer sinusoid: entries `2k, 2k+1` are
/// `sin(t / 10000^{2k/d})`, `cos(t / 10000^{2k/d})`.
pub fn positional_encoding(t: usize, d_model: usize) -> Result<Vec<f64>> {
    if d_model == 0 || d_model % 2 != 0 {
        return Err(Error::config(format!("position code needs an even width, got {d_model}")));
    }
    let mut out = Vec::with_capacity(d_model);
    for k in 0..d_model / 2 {
        let angle = t as f64 / 10000f64.powf(2.0 * k as f64 / d_model as f64);
        out.push(angle.sin());
        out.push(angle.cos());
    }
    Ok(out)
}

/// Token matrix of `T + 2` rows and the per-row validity flags.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    pub tokens: Var,
    pub validity: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub cfg: EmbedConfig,
    pub spatial: Linear,
    pub year: Linear,
    pub location: Linear,
    pub project: Linear,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(cfg: EmbedConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let n2 = cfg.patch_size * cfg.patch_size;
        Ok(Self {
            spatial: Linear::new(store, "embed.spatial", n2, cfg.d_spatial, rng),
            year: Linear::new(store, "embed.year", 1, cfg.d_year(), rng),
            location: Linear::new(store, "embed.location", 3, cfg.d_location, rng),
            project: Linear::new(store, "embed.project", cfg.d_concat(), cfg.d_model, rng),
            cfg,
        })
    }

    /// `Linear(flatten(patch))` for a stack of patches, one per row.
    pub fn embed_spatial(&self, tape: &mut Tape, b: &Bindings, ex: &TrainingExample) -> Result<Var> {
        let size = self.cfg.patch_size;
        if ex.patch_size() != size {
            return Err(Error::contract(format!(
                "example patch size {} does not match the model's {size}",
                ex.patch_size()
            )));
        }
        let flat: Vec<f64> = ex.patches.iter().flat_map(|p| p.values().iter().copied()).collect();
        let x = tape.constant(vec![ex.patches.len(), size * size], flat)?;
        self.spatial.forward(tape, b, x)
    }

    pub fn build_tokens(&self, tape: &mut Tape, b: &Bindings, ex: &TrainingExample) -> Result<TokenSequence> {
        let cfg = &self.cfg;
        let rows = ex.patches.len() + 1;

        let spatial = self.embed_spatial(tape, b, ex)?;
        let blank = tape.constant(vec![1, cfg.d_spatial], vec![0.0; cfg.d_spatial])?;
        let spatial = tape.concat_rows(&[spatial, blank])?;

        let months = ex.months.iter().copied().chain([ex.target_month]);
        let mut month_code = Vec::with_capacity(rows * MONTH_DIMS);
        for m in months {
            month_code.extend(encode_month(m)?);
        }
        let month = tape.constant(vec![rows, MONTH_DIMS], month_code)?;

        let years = ex.years.iter().copied().chain([ex.target_year]);
        let year_norm = years
            .map(|y| normalize_year(y, cfg.year_start, cfg.year_end))
            .collect::<Result<Vec<_>>>()?;
        let year_in = tape.constant(vec![rows, 1], year_norm)?;
        let year = self.year.forward(tape, b, year_in)?;

        let point = sphere_point(ex.lat, ex.lon)?;
        let loc_in = tape.constant(vec![rows, 3], point.repeat(rows))?;
        let location = self.location.forward(tape, b, loc_in)?;

        let concat = tape.concat_cols(&[spatial, month, year, location])?;
        let hidden = self.project.forward(tape, b, concat)?;
        let mut pe = Vec::with_capacity(rows * cfg.d_model);
        for t in 0..rows {
            pe.extend(positional_encoding(t, cfg.d_model)?);
        }
        let tokens = tape.add_const(hidden, &pe)?;

        let mut validity = ex.valid.clone();
        validity.push(true);
        Ok(TokenSequence { tokens, validity })
    }
}
