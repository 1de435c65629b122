//! Closed-form generator of bi-annual NDVI composites over a pixel grid.
//!
//! The centre value of pixel `(row, col)` at `(year, season)` is
//!
//! ```text
//! base(class) + rain_response(class)·rain(row, col)
//!   + amplitude(class)·s(season) + trend(class)·(year − year_start)
//!   + field(row, col) + noise(class)·ε
//! ```
//!
//! clipped to `[−1, 1]`, with `s(winter) = +1`, `s(summer) = −1` and `ε`
//! standard normal. `rain` is a linear gradient across the grid and `field`
//! a fixed low-frequency sinusoid. Land classes come from a coarse random
//! lattice so they form contiguous regions.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{LandClass, Patch, PixelSeries, Season, Step};
use crate::error::{Error, Result};
use phenocast_tensor::rng;

const TAG_NOISE: u64 = 1;
const TAG_MISSING: u64 = 2;
const TAG_LATTICE: u64 = 3;
const TAG_PHASE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassParams {
    pub base: f64,
    /// NDVI change per unit of the rainfall index.
    pub rain_response: f64,
    pub amplitude: f64,
    /// NDVI change per year.
    pub trend: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassTable {
    pub bare: ClassParams,
    pub grass: ClassParams,
    pub shrub: ClassParams,
    pub urban: ClassParams,
}

impl ClassTable {
    pub fn get(&self, class: LandClass) -> &ClassParams {
        match class {
            LandClass::Bare => &self.bare,
            LandClass::Grass => &self.grass,
            LandClass::Shrub => &self.shrub,
            LandClass::Urban => &self.urban,
        }
    }

    fn all(&self) -> [&ClassParams; 4] {
        [&self.bare, &self.grass, &self.shrub, &self.urban]
    }
}

impl Default for ClassTable {
    fn default() -> Self {
        Self {
            bare: ClassParams {
                base: 0.10,
                rain_response: 0.3,
                amplitude: 0.02,
                trend: 0.0005,
                noise: 0.02,
            },
            grass: ClassParams {
                base: 0.30,
                rain_response: 1.0,
                amplitude: 0.10,
                trend: -0.001,
                noise: 0.02,
            },
            shrub: ClassParams {
                base: 0.42,
                rain_response: 0.8,
                amplitude: 0.06,
                trend: 0.002,
                noise: 0.02,
            },
            urban: ClassParams {
                base: 0.12,
                rain_response: 0.1,
                amplitude: 0.01,
                trend: -0.0005,
                noise: 0.02,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub grid_height: usize,
    pub grid_width: usize,
    pub year_start: i32,
    pub year_end: i32,
    pub patch_size: usize,
    /// Latitude of the top-left pixel, degrees.
    pub origin_lat: f64,
    /// Longitude of the top-left pixel, degrees.
    pub origin_lon: f64,
    pub pixel_spacing_deg: f64,
    /// Direction of increasing rainfall in grid coordinates, degrees
    /// counter-clockwise from east.
    pub rain_direction_deg: f64,
    /// Rainfall index change per pixel along the gradient direction.
    pub rain_slope: f64,
    pub field_amplitude: f64,
    /// Wavelength of the smooth field, pixels.
    pub field_wavelength: f64,
    /// Spacing of the land-class lattice, pixels.
    pub class_scale: f64,
    pub classes: ClassTable,
    /// Probability that a pixel's composite is missing; 0 disables.
    pub missing_prob: f64,
    /// Set from the run seed rather than the configuration section.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            grid_height: 64,
            grid_width: 64,
            year_start: 1984,
            year_end: 2024,
            patch_size: 5,
            origin_lat: 31.5,
            origin_lon: 34.8,
            pixel_spacing_deg: 0.00027,
            rain_direction_deg: 90.0,
            rain_slope: 0.004,
            field_amplitude: 0.03,
            field_wavelength: 40.0,
            class_scale: 12.0,
            classes: ClassTable::default(),
            missing_prob: 0.0,
            seed: 1984,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_height == 0 || self.grid_width == 0 {
            return Err(Error::config("synth: grid must contain at least one pixel"));
        }
        if self.year_start >= self.year_end {
            return Err(Error::config("synth: year_start must precede year_end"));
        }
        if self.patch_size == 0 || self.patch_size % 2 == 0 {
            return Err(Error::config(format!(
                "synth.patch_size must be odd and positive, got {}",
                self.patch_size
            )));
        }
        if self.classes.all().iter().any(|c| !(c.noise >= 0.0)) {
            return Err(Error::config("synth: noise std must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.missing_prob) {
            return Err(Error::config("synth.missing_prob must lie in [0, 1)"));
        }
        if !(self.field_wavelength > 0.0) || !(self.class_scale > 0.0) || !(self.pixel_spacing_deg > 0.0) {
            return Err(Error::config("synth: wavelengths, scales and spacing must be positive"));
        }
        let lat_end = self.origin_lat - (self.grid_height - 1) as f64 * self.pixel_spacing_deg;
        let lon_end = self.origin_lon + (self.grid_width - 1) as f64 * self.pixel_spacing_deg;
        if !(-90.0..=90.0).contains(&self.origin_lat)
            || !(-90.0..=90.0).contains(&lat_end)
            || !(-180.0..=180.0).contains(&self.origin_lon)
            || !(-180.0..=180.0).contains(&lon_end)
        {
            return Err(Error::config("synth: grid extends beyond valid coordinates"));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.grid_height * self.grid_width
    }

    pub fn steps_per_pixel(&self) -> usize {
        2 * (self.year_end - self.year_start + 1) as usize
    }

    /// Upper bound on the noise-free centre-value difference between
    /// 4-adjacent pixels of one class: gradient slope times the largest
    /// rain response, plus the smooth field's one-pixel Lipschitz bound.
    pub fn neighbor_step_bound(&self) -> f64 {
        let max_response = self
            .classes
            .all()
            .iter()
            .map(|c| c.rain_response.abs())
            .fold(0.0, f64::max);
        self.rain_slope.abs() * max_response
            + self.field_amplitude.abs() * 2.0 * std::f64::consts::PI / self.field_wavelength
    }
}

/// Deterministic spatial structure of one configured archive.
#[derive(Debug, Clone)]
pub struct Generator {
    cfg: SynthConfig,
    phases: (f64, f64),
    classes: Vec<LandClass>,
}

impl Generator {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut phase_rng = rng::stream_for(cfg.seed, &[TAG_PHASE]);
        let tau = 2.0 * std::f64::consts::PI;
        let phases = (phase_rng.random::<f64>() * tau, phase_rng.random::<f64>() * tau);
        let mut g = Self {
            cfg: cfg.clone(),
            phases,
            classes: Vec::new(),
        };
        g.classes = (0..cfg.pixel_count())
            .map(|id| g.classify(id / cfg.grid_width, id % cfg.grid_width))
            .collect();
        Ok(g)
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    /// Phases of the smooth field along columns and rows.
    pub fn field_phases(&self) -> (f64, f64) {
        self.phases
    }

    pub fn land_class(&self, row: usize, col: usize) -> LandClass {
        self.classes[row * self.cfg.grid_width + col]
    }

    pub fn coordinates(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.cfg.origin_lat - row as f64 * self.cfg.pixel_spacing_deg,
            self.cfg.origin_lon + col as f64 * self.cfg.pixel_spacing_deg,
        )
    }

    /// Rainfall index, zero at the grid centre.
    pub fn rain(&self, row: usize, col: usize) -> f64 {
        let theta = self.cfg.rain_direction_deg.to_radians();
        let cx = (self.cfg.grid_width as f64 - 1.0) / 2.0;
        let cy = (self.cfg.grid_height as f64 - 1.0) / 2.0;
        let along = (col as f64 - cx) * theta.cos() + (cy - row as f64) * theta.sin();
        self.cfg.rain_slope * along
    }

    pub fn field(&self, row: usize, col: usize) -> f64 {
        let k = 2.0 * std::f64::consts::PI / self.cfg.field_wavelength;
        self.cfg.field_amplitude * (k * col as f64 + self.phases.0).sin() * (k * row as f64 + self.phases.1).sin()
    }

    /// Noise-free, unclipped centre value.
    pub fn expected(&self, row: usize, col: usize, year: i32, season: Season) -> f64 {
        let p = self.cfg.classes.get(self.land_class(row, col));
        p.base
            + p.rain_response * self.rain(row, col)
            + p.amplitude * season.sign()
            + p.trend * (year - self.cfg.year_start) as f64
            + self.field(row, col)
    }

    fn lattice_value(&self, i: i64, j: i64) -> f64 {
        let key = ((i as u64) << 32) ^ (j as u64 & 0xFFFF_FFFF);
        rng::stream_for(self.cfg.seed, &[TAG_LATTICE, key]).random::<f64>()
    }

    fn classify(&self, row: usize, col: usize) -> LandClass {
        let s = self.cfg.class_scale;
        let (y, x) = (row as f64 / s, col as f64 / s);
        let (i, j) = (y.floor() as i64, x.floor() as i64);
        let (fy, fx) = (y - i as f64, x - j as f64);
        let v = self.lattice_value(i, j) * (1.0 - fy) * (1.0 - fx)
            + self.lattice_value(i, j + 1) * (1.0 - fy) * fx
            + self.lattice_value(i + 1, j) * fy * (1.0 - fx)
            + self.lattice_value(i + 1, j + 1) * fy * fx;
        // Wetter ground favours vegetation.
        let v = v + 2.0 * self.rain(row, col);
        if v < 0.32 {
            LandClass::Bare
        } else if v < 0.42 {
            LandClass::Urban
        } else if v < 0.62 {
            LandClass::Grass
        } else {
            LandClass::Shrub
        }
    }

    /// Centre values of every pixel, `[step][row * width + col]`, including
    /// noise, clipped to `[−1, 1]`.
    pub fn grid_values(&self) -> Vec<Vec<f64>> {
        let cfg = &self.cfg;
        let timeline = timeline(cfg);
        let mut grids = vec![vec![0.0; cfg.pixel_count()]; timeline.len()];
        for id in 0..cfg.pixel_count() {
            let (row, col) = (id / cfg.grid_width, id % cfg.grid_width);
            let noise_std = cfg.classes.get(self.land_class(row, col)).noise;
            let mut noise = rng::stream_for(cfg.seed, &[TAG_NOISE, id as u64]);
            for (k, &(year, season)) in timeline.iter().enumerate() {
                let eps: f64 = StandardNormal.sample(&mut noise);
                let v = self.expected(row, col, year, season) + noise_std * eps;
                grids[k][id] = v.clamp(-1.0, 1.0);
            }
        }
        grids
    }
}

fn timeline(cfg: &SynthConfig) -> Vec<(i32, Season)> {
    (cfg.year_start..=cfg.year_end)
        .flat_map(|y| [(y, Season::Winter), (y, Season::Summer)])
        .collect()
}

/// Generates one series per grid pixel (`pixel_id = row · width + col`).
pub fn generate_archive(cfg: &SynthConfig) -> Result<Vec<PixelSeries>> {
    let gen = Generator::new(cfg)?;
    let grids = gen.grid_values();
    let timeline = timeline(cfg);
    let (h, w) = (cfg.grid_height, cfg.grid_width);
    let half = (cfg.patch_size / 2) as i64;

    let mut archive = Vec::with_capacity(cfg.pixel_count());
    for id in 0..cfg.pixel_count() {
        let (row, col) = (id / w, id % w);
        let mut missing = rng::stream_for(cfg.seed, &[TAG_MISSING, id as u64]);
        let mut steps = Vec::with_capacity(timeline.len());
        for (k, &(year, season)) in timeline.iter().enumerate() {
            if cfg.missing_prob > 0.0 && missing.random::<f64>() < cfg.missing_prob {
                continue;
            }
            let mut values = Vec::with_capacity(cfg.patch_size * cfg.patch_size);
            for dr in -half..=half {
                let r = (row as i64 + dr).clamp(0, h as i64 - 1) as usize;
                for dc in -half..=half {
                    let c = (col as i64 + dc).clamp(0, w as i64 - 1) as usize;
                    values.push(grids[k][r * w + c]);
                }
            }
            steps.push(Step {
                year,
                season,
                patch: Patch::new(cfg.patch_size, values)?,
            });
        }
        let (lat, lon) = gen.coordinates(row, col);
        archive.push(PixelSeries {
            pixel_id: id as u64,
            lat,
            lon,
            land_class: gen.land_class(row, col),
            steps,
        });
    }
    Ok(archive)
}
