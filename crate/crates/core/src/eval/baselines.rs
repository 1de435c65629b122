//! Reference forecasters: persistence, seasonal climatology and a per-horizon
//! least-squares autoregression on lagged centre values.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::data::{composite_index, Season, SplitSet};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::sampling::TrainingExample;

/// Anything that maps a window to a centre-pixel forecast. `Ok(None)` means
/// the window lacks the history the method needs and is skipped.
pub trait Forecaster {
    fn name(&self) -> &str;
    fn predict(&self, ex: &TrainingExample) -> Result<Option<f64>>;
}

impl Forecaster for Model {
    fn name(&self) -> &str {
        "transformer"
    }

    fn predict(&self, ex: &TrainingExample) -> Result<Option<f64>> {
        Model::predict(self, ex).map(Some)
    }
}

/// Last valid centre value.
#[derive(Debug, Clone, Copy, Default)]
pub struct Persistence;

impl Forecaster for Persistence {
    fn name(&self) -> &str {
        "persistence"
    }

    fn predict(&self, ex: &TrainingExample) -> Result<Option<f64>> {
        Ok(ex.valid_centers().last().map(|(_, v)| v))
    }
}

/// Mean of the valid history centres from the target's season.
#[derive(Debug, Clone, Copy, Default)]
pub struct Climatology;

impl Forecaster for Climatology {
    fn name(&self) -> &str {
        "climatology"
    }

    fn predict(&self, ex: &TrainingExample) -> Result<Option<f64>> {
        let (sum, n) = ex
            .valid_centers()
            .filter(|&(m, _)| m == ex.target_month)
            .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
        Ok((n > 0).then(|| sum / n as f64))
    }
}

/// `x[t+Δ] ≈ c + Σ_k w_k · x[t−k]` fitted separately for every horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBaseline {
    pub lags: usize,
    /// Intercept first, then lag weights from the most recent step back.
    pub coefficients: BTreeMap<usize, Vec<f64>>,
}

fn step_index(year: i32, month: u32) -> Result<i64> {
    let season = Season::from_month(month).ok_or_else(|| Error::contract(format!("month {month} is not a composite month")))?;
    Ok(composite_index(year, season))
}

/// Centre values keyed by composite index.
fn timeline(series: &crate::data::PixelSeries) -> BTreeMap<i64, f64> {
    series.steps.iter().map(|s| (s.composite_index(), s.patch.center())).collect()
}

impl LinearBaseline {
    pub const DEFAULT_LAGS: usize = 4;

    /// Fits one model per horizon in `deltas` on every complete lag window of
    /// `train` whose target is admissible there.
    pub fn fit(train: &SplitSet, lags: usize, deltas: &[usize]) -> Result<Self> {
        if lags == 0 {
            return Err(Error::config("linear baseline needs at least one lag"));
        }
        let p = lags + 1;
        let mut coefficients = BTreeMap::new();
        for &delta in deltas {
            let mut gram = DMatrix::<f64>::zeros(p, p);
            let mut rhs = DVector::<f64>::zeros(p);
            let mut rows = 0usize;
            let mut x = vec![0.0; p];
            for series in &train.series {
                let line = timeline(series);
                for step in &series.steps {
                    if !train.targets.admits(step.year) {
                        continue;
                    }
                    let target = step.composite_index();
                    let anchor = target - delta as i64;
                    x[0] = 1.0;
                    let complete = (0..lags).all(|k| match line.get(&(anchor - k as i64)) {
                        Some(&v) => {
                            x[k + 1] = v;
                            true
                        }
                        None => false,
                    });
                    if !complete {
                        continue;
                    }
                    let y = step.patch.center();
                    for i in 0..p {
                        rhs[i] += x[i] * y;
                        for j in 0..p {
                            gram[(i, j)] += x[i] * x[j];
                        }
                    }
                    rows += 1;
                }
            }
            if rows == 0 {
                log::warn!("linear baseline: no training rows for delta {delta}");
                continue;
            }
            let svd = gram.svd(true, true);
            let tol = svd.singular_values.max() * 1e-12;
            let w = svd.solve(&rhs, tol).map_err(|e| Error::contract(e.to_string()))?;
            coefficients.insert(delta, w.iter().copied().collect());
        }
        Ok(Self { lags, coefficients })
    }
}

impl Forecaster for LinearBaseline {
    fn name(&self) -> &str {
        "linear"
    }

    fn predict(&self, ex: &TrainingExample) -> Result<Option<f64>> {
        let Some(w) = self.coefficients.get(&ex.horizon_delta) else {
            return Ok(None);
        };
        let t = ex.history_len();
        if t + 1 < self.lags {
            return Ok(None);
        }
        let last = step_index(ex.years[t], ex.months[t])?;
        let mut y = w[0];
        for k in 0..self.lags {
            let i = t - k;
            if !ex.valid[i] || step_index(ex.years[i], ex.months[i])? != last - k as i64 {
                return Ok(None);
            }
            y += w[k + 1] * ex.patches[i].center();
        }
        Ok(Some(y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LandClass, Patch, PixelSeries, Step, TargetYears};
    use crate::sampling::extract_window;

    fn series(id: u64, values: &[f64]) -> PixelSeries {
        PixelSeries {
            pixel_id: id,
            lat: 31.0,
            lon: 35.0,
            land_class: LandClass::Grass,
            steps: values
                .iter()
                .enumerate()
                .map(|(i, &v)| Step {
                    year: 2000 + (i / 2) as i32,
                    season: if i % 2 == 0 { Season::Winter } else { Season::Summer },
                    patch: Patch::new(1, vec![v]).unwrap(),
                })
                .collect(),
        }
    }

    #[test]
    fn constant_series_is_reproduced_by_all() {
        let s = series(0, &[0.37; 20]);
        let split = SplitSet::new(vec![s.clone()], TargetYears::ALL);
        let lin = LinearBaseline::fit(&split, 4, &[1, 3]).unwrap();
        for delta in [1, 3] {
            let ex = extract_window(&s, 2, 8, delta).unwrap();
            assert_eq!(Persistence.predict(&ex).unwrap(), Some(0.37));
            assert!((Climatology.predict(&ex).unwrap().unwrap() - 0.37).abs() < 1e-15);
            assert!((lin.predict(&ex).unwrap().unwrap() - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn alternating_series() {
        let amp = 0.05;
        let values: Vec<f64> = (0..20).map(|i| 0.3 + if i % 2 == 0 { amp } else { -amp }).collect();
        let s = series(0, &values);
        let ex = extract_window(&s, 0, 9, 1).unwrap();
        assert!((Climatology.predict(&ex).unwrap().unwrap() - ex.target_value).abs() < 1e-15);
        let err = (Persistence.predict(&ex).unwrap().unwrap() - ex.target_value).abs();
        assert!((err - 2.0 * amp).abs() < 1e-15);
    }

    #[test]
    fn insufficient_history_is_skipped() {
        let s = series(0, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let split = SplitSet::new(vec![s.clone()], TargetYears::ALL);
        let lin = LinearBaseline::fit(&split, 4, &[1]).unwrap();
        let short = extract_window(&s, 0, 1, 1).unwrap();
        assert_eq!(lin.predict(&short).unwrap(), None);
        let other_delta = extract_window(&s, 0, 3, 2).unwrap();
        assert_eq!(lin.predict(&other_delta).unwrap(), None);
        let mut masked = extract_window(&s, 0, 3, 1).unwrap();
        masked.valid = vec![false, false, false, true];
        assert_eq!(Climatology.predict(&masked).unwrap(), None);
        assert_eq!(Persistence.predict(&masked).unwrap(), Some(0.4));
    }
}
