//! Finite-difference check of the full model's parameter gradients.

use rand::seq::index;

use phenocast_tensor::gradcheck::{self, GradCheckReport};
use phenocast_tensor::{rng, Tape};

use crate::error::{Error, Result};
use crate::model::{ForwardStats, Model};
use crate::params::Bindings;
use crate::sampling::TrainingExample;

/// Central-difference settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfTestConfig {
    pub step: f64,
    /// Lower bound on the denominator of the relative error.
    pub floor: f64,
    pub tolerance: f64,
    /// Entries checked per tensor; `None` checks every entry.
    pub per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for SelfTestConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            tolerance: 1e-3,
            per_tensor: Some(12),
            seed: 0,
        }
    }
}

/// Compares analytic and numeric gradients of the summed evaluation-mode
/// predictions over `examples` with respect to every parameter tensor.
pub fn gradient_check(model: &Model, examples: &[TrainingExample], cfg: &SelfTestConfig) -> Result<GradCheckReport> {
    if examples.is_empty() {
        return Err(Error::contract("gradient check needs at least one example"));
    }
    let mut params: Vec<_> = model.params.tensors().to_vec();
    let entries: Vec<(usize, usize)> = match cfg.per_tensor {
        None => params
            .iter()
            .enumerate()
            .flat_map(|(ti, t)| (0..t.len()).map(move |ei| (ti, ei)))
            .collect(),
        Some(k) => {
            let mut r = rng::stream_for(cfg.seed, &[0x5e1f]);
            params
                .iter()
                .enumerate()
                .flat_map(|(ti, t)| {
                    let mut picks = index::sample(&mut r, t.len(), k.min(t.len())).into_vec();
                    picks.sort_unstable();
                    picks.into_iter().map(move |ei| (ti, ei)).collect::<Vec<_>>()
                })
                .collect()
        }
    };
    let report = gradcheck::check_entries(&mut params, &entries, cfg.step, cfg.floor, |tape: &mut Tape, leaves| {
        let b = Bindings::from_vars(leaves.to_vec());
        let mut r = rng::stream(0, 0);
        let mut stats = ForwardStats::default();
        let preds = examples
            .iter()
            .map(|ex| model.forward(tape, &b, ex, false, &mut r, &mut stats))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| phenocast_tensor::TensorError::Contract(e.to_string()))?;
        let joined = if preds.len() == 1 { preds[0] } else { tape.concat_rows(&preds)? };
        Ok(tape.sum(joined))
    })?;
    Ok(report)
}

/// Runs [`gradient_check`] and turns a failure into an error naming the
/// worst tensor.
pub fn gate(model: &Model, examples: &[TrainingExample], cfg: &SelfTestConfig) -> Result<GradCheckReport> {
    let report = gradient_check(model, examples, cfg)?;
    if !report.passes(cfg.tolerance) {
        let (ti, ei, a, n) = report.worst.unwrap_or((0, 0, f64::NAN, f64::NAN));
        return Err(Error::contract(format!(
            "gradient self-test failed: relative error {:.3e} at {}[{ei}] (analytic {a:.6e}, numeric {n:.6e})",
            report.max_rel_error,
            model.params.names()[ti]
        )));
    }
    Ok(report)
}
