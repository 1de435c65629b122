//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward pass, so it is an
//! independent check on the reverse-mode path.
//!
//! When a probe at `x ± h` crosses a ReLU or abs kink, the central
//! difference averages two slopes and says nothing about either. Such
//! entries use the one-sided difference on the side that stays on the
//! base point's branch.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Result of comparing analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(tensor index, element index, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
    /// Entries compared against a one-sided difference because one probe
    /// crossed a kink.
    pub one_sided: usize,
    /// Entries whose probes both crossed a kink; compared centrally anyway.
    pub straddled: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
///
/// The floor keeps gradients that are zero up to rounding from producing
/// meaningless ratios.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks `d f / d params` for every element of every tensor.
///
/// `f` builds a scalar on a fresh tape from the parameter leaves (in the
/// order given). `step` is the central-difference half-width.
pub fn check<F>(params: &mut [Tensor], step: f64, floor: f64, f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let entries: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(ti, t)| (0..t.len()).map(move |ei| (ti, ei)))
        .collect();
    check_entries(params, &entries, step, floor, f)
}

/// Like [`check`], restricted to the `(tensor, element)` pairs in `entries`.
pub fn check_entries<F>(params: &mut [Tensor], entries: &[(usize, usize)], step: f64, floor: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = params
        .iter()
        .map(|p| {
            let mut p = p.clone();
            p.set_requires_grad(true);
            tape.leaf(&p)
        })
        .collect();
    let out = f(&mut tape, &leaves)?;
    let base = tape.item(out);
    let base_pattern = tape.branch_pattern();
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|&v| tape.grad(v).expect("leaf gradient").to_vec())
        .collect();
    drop(tape);

    let mut eval = |params: &[Tensor]| -> Result<(f64, bool)> {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
        let out = f(&mut tape, &leaves)?;
        Ok((tape.item(out), tape.branch_pattern() == base_pattern))
    };

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        one_sided: 0,
        straddled: 0,
    };
    for &(ti, ei) in entries {
        let original = params[ti].data()[ei];
        params[ti].data_mut()[ei] = original + step;
        let (up, up_same) = eval(params)?;
        params[ti].data_mut()[ei] = original - step;
        let (down, down_same) = eval(params)?;
        params[ti].data_mut()[ei] = original;

        let numeric = match (up_same, down_same) {
            (true, true) => (up - down) / (2.0 * step),
            (true, false) => {
                report.one_sided += 1;
                (up - base) / step
            }
            (false, true) => {
                report.one_sided += 1;
                (base - down) / step
            }
            (false, false) => {
                report.straddled += 1;
                (up - down) / (2.0 * step)
            }
        };
        let a = analytic[ti][ei];
        let err = relative_error(a, numeric, floor);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            if err >= report.max_rel_error {
                report.worst = Some((ti, ei, a, numeric));
            }
        }
    }
    Ok(report)
}
