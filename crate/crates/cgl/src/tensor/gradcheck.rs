//! Central finite-difference verification of reverse-mode gradients.
//!
//! The forward closure must be deterministic (normalization in eval mode)
//! and rebuild the graph from the current leaf values on every call.

use crate::error::Result;
use crate::tensor::{Parameter, Tensor};

/// Probe step for central differences on 64-bit reals. Small enough that
/// second-order truncation error stays well below the tolerance even for
/// small-magnitude gradients, while roundoff (~eps/step) remains negligible.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }

    pub fn failing_params(&self) -> Vec<&ParamCheck> {
        self.params
            .iter()
            .filter(|p| p.max_rel_error >= self.tolerance)
            .collect()
    }
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / f64::max(1e-6, f64::max(a.abs(), n.abs()))
}

fn check_one(
    f: &mut dyn FnMut() -> Tensor,
    leaf: &Tensor,
    analytic: &[f64],
    base_loss: f64,
) -> (f64, usize) {
    let base = leaf.values();
    let mut worst = (0.0, 0usize);
    for i in 0..base.len() {
        let mut probe = base.clone();
        probe[i] = base[i] + FD_STEP;
        leaf.set_values(&probe).expect("probe values stay finite");
        let plus = f().item();
        probe[i] = base[i] - FD_STEP;
        leaf.set_values(&probe).expect("probe values stay finite");
        let minus = f().item();
        probe[i] = base[i];
        leaf.set_values(&probe).expect("restore values");

        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let central_rel = rel_error(analytic[i], numeric);

        // When the probe straddles a point where the model is not smooth (a
        // rectifier kink), the central difference is meaningless. Fall back
        // to the one-sided slopes: any value between them is a valid
        // subgradient, with the bracket widened by their disagreement to
        // absorb curvature of the same order. Corrupted gradients fail both
        // the central and the bracket check.
        let d_plus = (plus - base_loss) / FD_STEP;
        let d_minus = (base_loss - minus) / FD_STEP;
        let spread = (d_plus - d_minus).abs();
        let scale = f64::max(1e-3, f64::max(d_plus.abs(), d_minus.abs()));
        let margin = spread + 1e-3 * scale;
        let lo = f64::min(d_plus, d_minus) - margin;
        let hi = f64::max(d_plus, d_minus) + margin;
        let bracket_rel = if analytic[i] < lo {
            rel_error(analytic[i], lo)
        } else if analytic[i] > hi {
            rel_error(analytic[i], hi)
        } else {
            0.0
        };

        let rel = f64::min(central_rel, bracket_rel);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    worst
}

/// Compare reverse-mode gradients of `f` (scalar output) to central finite
/// differences for every parameter; reports the max relative error each.
pub fn gradcheck(
    mut f: impl FnMut() -> Tensor,
    params: &[Parameter],
    tolerance: f64,
) -> Result<GradcheckReport> {
    for p in params {
        p.tensor.zero_grad();
    }
    let loss = f();
    let base_loss = loss.item();
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.tensor.grad().unwrap_or_else(|| vec![0.0; p.tensor.numel()]))
        .collect();
    for p in params {
        p.tensor.zero_grad();
    }
    let mut report = GradcheckReport {
        params: Vec::new(),
        tolerance,
    };
    for (p, a) in params.iter().zip(&analytic) {
        let (max_rel_error, worst_index) = check_one(&mut f, &p.tensor, a, base_loss);
        report.params.push(ParamCheck {
            name: p.name.clone(),
            max_rel_error,
            worst_index,
        });
    }
    Ok(report)
}

/// Test helper: gradcheck over bare tensors, returning the overall max
/// relative error.
pub fn gradcheck_tensors(mut f: impl FnMut() -> Tensor, leaves: &[Tensor]) -> f64 {
    let params: Vec<Parameter> = leaves
        .iter()
        .enumerate()
        .map(|(i, t)| Parameter {
            name: format!("t{i}"),
            tensor: t.clone(),
        })
        .collect();
    gradcheck(&mut f, &params, f64::INFINITY)
        .expect("gradcheck forward failed")
        .max_rel_error()
}
