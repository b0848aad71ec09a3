//! Central finite differences against the analytic gradient of the total loss.

use serde::{Deserialize, Serialize};

use super::{batch_inputs, objective, prepare_all, Prepared};
use crate::error::{Error, Result};
use crate::geometry::Sample;
use crate::layers::Mode;
use crate::network::Model;

/// Small enough that a step rarely crosses a ReLU kink, large enough that
/// rounding noise in the difference quotient stays near 1e-11.
pub const GRADCHECK_STEP: f64 = 1e-5;

/// Denominator floor of the relative error: gradients smaller than this are
/// judged on an absolute scale of `tol * 1e-6`, well above the ~1e-11
/// rounding noise of the difference quotient.
const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub name: String,
    pub numel: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Elements measured with a one-sided stencil to avoid a ReLU kink.
    pub one_sided: usize,
    /// Elements with no kink-free step; these fail the check.
    pub unresolved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradcheckEntry>,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn worst(&self) -> Option<&GradcheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Finite-difference estimate of `d loss / d p[i]` that stays on the smooth
/// piece containing the current point: a central difference when neither
/// step flips a ReLU, otherwise a second-order one-sided difference on a side
/// that does not, shrinking the step if both sides flip.
fn directional_derivative(
    p: &crate::numerics::Tensor,
    i: usize,
    f0: f64,
    pattern0: &[bool],
    eval: &dyn Fn() -> Result<(f64, Vec<bool>)>,
) -> Result<Option<(f64, Stencil)>> {
    let orig = p.data()[i];
    let at = |offset: f64| -> Result<(f64, bool)> {
        p.data_mut()[i] = orig + offset;
        let r = eval();
        p.data_mut()[i] = orig;
        let (f, pat) = r?;
        Ok((f, pat == pattern0))
    };
    let mut h = GRADCHECK_STEP;
    for _ in 0..4 {
        let (fp, smooth_p) = at(h)?;
        let (fm, smooth_m) = at(-h)?;
        if smooth_p && smooth_m {
            return Ok(Some(((fp - fm) / (2.0 * h), Stencil::Central)));
        }
        if smooth_m {
            let (fm2, ok) = at(-2.0 * h)?;
            if ok {
                return Ok(Some((
                    (3.0 * f0 - 4.0 * fm + fm2) / (2.0 * h),
                    Stencil::OneSided,
                )));
            }
        }
        if smooth_p {
            let (fp2, ok) = at(2.0 * h)?;
            if ok {
                return Ok(Some((
                    (-3.0 * f0 + 4.0 * fp - fp2) / (2.0 * h),
                    Stencil::OneSided,
                )));
            }
        }
        h /= 10.0;
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stencil {
    Central,
    OneSided,
}

/// Checks every element of every parameter tensor of `model` on the total
/// objective over `samples` (one batch, train-mode batch norm).
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
///
/// The network is piecewise smooth (ReLU), so each finite difference is
/// taken on the smooth piece of the current point; see
/// [`crate::numerics::Tensor::relu_pattern`]. An element whose every
/// candidate step leaves that piece is reported as unresolved and fails the
/// check.
pub fn gradcheck(model: &Model, samples: &[Sample], tol: f64) -> Result<GradcheckReport> {
    if samples.is_empty() {
        return Err(Error::Empty("gradcheck samples"));
    }
    let prepared = prepare_all(samples, model.config())?;
    let refs: Vec<&Prepared> = prepared.iter().collect();
    let (xa, xb) = batch_inputs(&refs);
    let labels: Vec<usize> = samples.iter().map(|s| s.me_label).collect();
    let au: Vec<Vec<u8>> = samples.iter().map(|s| s.au_labels.clone()).collect();
    let eval = || -> Result<(f64, Vec<bool>)> {
        let out = model.forward(&xa, xb.as_ref(), Mode::Train)?;
        let total = objective(model, &out, &labels, &au)?.total;
        Ok((total.item(), total.relu_pattern()))
    };

    model.zero_grad();
    let out = model.forward(&xa, xb.as_ref(), Mode::Train)?;
    let total = objective(model, &out, &labels, &au)?.total;
    total.backward()?;
    let (f0, pattern0) = (total.item(), total.relu_pattern());
    drop((out, total));

    let mut entries = Vec::new();
    for (name, p) in model.named_parameters() {
        let analytic = p.grad().ok_or_else(|| Error::MissingGrad(name.clone()))?;
        let (mut max_rel, mut max_abs) = (0.0f64, 0.0f64);
        let (mut one_sided, mut unresolved) = (0, 0);
        for (i, &a) in analytic.iter().enumerate() {
            match directional_derivative(&p, i, f0, &pattern0, &eval)? {
                Some((numeric, stencil)) => {
                    if stencil == Stencil::OneSided {
                        one_sided += 1;
                    }
                    let diff = (a - numeric).abs();
                    let scale = a.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
                    max_abs = max_abs.max(diff);
                    max_rel = max_rel.max(diff / scale);
                }
                None => unresolved += 1,
            }
        }
        entries.push(GradcheckEntry {
            name,
            numel: p.numel(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
            one_sided,
            unresolved,
        });
    }
    model.zero_grad();
    let passed = entries
        .iter()
        .all(|e| e.max_rel_err < tol && e.unresolved == 0);
    Ok(GradcheckReport {
        tolerance: tol,
        entries,
        passed,
    })
}
