//! Central finite-difference verification of analytic gradients.

use std::sync::Arc;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Probe settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Half-width of the central difference.
    pub step: f64,
    /// Denominator floor: relative error is `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
}

impl GradCheck {
    /// For fragments evaluated in `f64`.
    pub const F64: GradCheck = GradCheck { step: 1e-5, floor: 1e-6 };
    /// For fragments evaluated in `f32` (`h = 1e-3`).
    pub const F32: GradCheck = GradCheck { step: 1e-3, floor: 1e-2 };
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Compares the analytic gradient of a scalar fragment against central
/// differences at `points`.
///
/// `fragment` receives one differentiable leaf per point and must return a
/// scalar. Outputs of `stop_gradient` are held at their base-point values
/// during the probes, so blocked branches are excluded from the numeric
/// derivative exactly as they are from the analytic one.
pub fn grad_check<E, F>(points: &[Tensor<E>], probe: GradCheck, fragment: F) -> Result<GradCheckReport>
where
    E: Element,
    F: Fn(&mut Graph<E>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = points.iter().map(|p| g.leaf(p.clone())).collect();
    let loss = fragment(&mut g, &vars)?;
    if g.value(loss).len() != 1 {
        return Err(TensorError::NotScalar("fragment output", g.value(loss).shape().to_vec()));
    }
    let grads = g.backward(loss)?;
    let frozen: Vec<Arc<Tensor<E>>> = g.stop_gradient_values().to_vec();

    let eval = |inputs: &[Tensor<E>]| -> Result<f64> {
        let mut g = Graph::with_frozen_stops(frozen.clone());
        let vars: Vec<Var> = inputs.iter().map(|p| g.leaf(p.clone())).collect();
        let out = fragment(&mut g, &vars)?;
        Ok(g.value(out).data()[0].as_f64())
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0 };
    let mut work: Vec<Tensor<E>> = points.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        for ei in 0..points[pi].len() {
            let base = points[pi].data()[ei];
            work[pi].data_mut()[ei] = E::from_f64(base.as_f64() + probe.step);
            let plus = eval(&work)?;
            work[pi].data_mut()[ei] = E::from_f64(base.as_f64() - probe.step);
            let minus = eval(&work)?;
            work[pi].data_mut()[ei] = base;
            let numeric = (plus - minus) / (2.0 * probe.step);
            let analytic = grads.get(*var).map_or(0.0, |t| t.data()[ei].as_f64());
            let denom = analytic.abs().max(numeric.abs()).max(probe.floor);
            let rel = (analytic - numeric).abs() / denom;
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((pi, ei));
            }
        }
    }
    Ok(report)
}
