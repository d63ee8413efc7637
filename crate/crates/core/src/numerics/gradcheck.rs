use std::collections::HashMap;

use crate::scalar::Scalar;

use super::eval::{eval_backward, Evaluation};
use super::graph::{Bindings, Graph};
use super::{NumericsError, Tensor};

pub const DEFAULT_STEP: f64 = 1e-4;

/// Smallest denominator of the relative error. Gradients below it are
/// compared near-absolutely, since finite differences of an O(1) loss
/// carry roughly 1e-12 of rounding noise.
pub const DENOMINATOR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter elements compared.
    pub compared: usize,
    /// Elements skipped because the perturbation crossed a kink
    /// (relu, hinge, or a zero distance).
    pub excluded: usize,
}

/// Compares reverse-mode gradients with the fourth-order central difference
/// `(f(p - 2h) - 8 f(p - h) + 8 f(p + h) - f(p + 2h)) / 12h` for every
/// parameter element. An element is skipped when the four evaluations do
/// not share one kink pattern.
///
/// Relative error uses the denominator `max(|analytic|, |numeric|, DENOMINATOR_FLOOR)`.
pub fn grad_check<T: Scalar>(
    graph: &Graph<T>,
    bindings: &Bindings<'_, T>,
    step: f64,
) -> Result<GradCheckReport, NumericsError> {
    assert!(step > 0.0, "finite-difference step must be positive");
    let analytic = eval_backward(graph, bindings)?;
    let mut perturbed: HashMap<String, Tensor<T>> = HashMap::new();
    for name in graph.param_names() {
        let t = bindings
            .get(&name)
            .ok_or_else(|| NumericsError::UnboundInput(name.clone()))?;
        perturbed.insert(name, t.clone());
    }

    let evaluate =
        |overrides: &HashMap<String, Tensor<T>>| -> Result<(f64, Vec<bool>), NumericsError> {
            let layered = bindings.over(overrides);
            let eval = Evaluation::run(graph, &layered)?;
            Ok((eval.output()?.item().as_f64(), eval.kink_pattern()))
        };

    let h = T::lit(step);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        compared: 0,
        excluded: 0,
    };
    for name in graph.param_names() {
        let len = perturbed[&name].len();
        for i in 0..len {
            let orig = perturbed[&name].data()[i];
            let mut samples = [
                (0.0, Vec::new()),
                (0.0, Vec::new()),
                (0.0, Vec::new()),
                (0.0, Vec::new()),
            ];
            for (slot, k) in samples.iter_mut().zip([-2.0, -1.0, 1.0, 2.0]) {
                perturbed.get_mut(&name).unwrap().data_mut()[i] = orig + T::lit(k) * h;
                *slot = evaluate(&perturbed)?;
            }
            perturbed.get_mut(&name).unwrap().data_mut()[i] = orig;
            if samples.iter().any(|s| s.1 != samples[0].1) {
                report.excluded += 1;
                continue;
            }
            let [m2, m1, p1, p2] = [samples[0].0, samples[1].0, samples[2].0, samples[3].0];
            let numeric = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * step);
            let exact = analytic.grads[&name].data()[i].as_f64();
            let denom = exact.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR);
            let rel = (exact - numeric).abs() / denom;
            report.max_rel_error = report.max_rel_error.max(rel);
            report.compared += 1;
        }
    }
    Ok(report)
}
