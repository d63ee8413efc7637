use std::collections::BTreeMap;

use crate::scalar::Scalar;

use super::{Gradients, NumericsError, Tensor};

/// Moment estimates and step counter of the Adam optimizer.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Default for AdamState<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<&(Tensor<T>, Tensor<T>)> {
        self.moments.get(name)
    }

    /// One bias-corrected update. `lr_for` picks the learning rate per
    /// parameter; `None` leaves that parameter and its moments untouched.
    /// The step counter advances exactly once per call.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor<T>>,
        grads: &Gradients<T>,
        lr_for: &dyn Fn(&str) -> Option<f64>,
    ) -> Result<(), NumericsError> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| NumericsError::UnboundInput(name.clone()))?;
            if p.shape() != g.shape() {
                return Err(NumericsError::ShapeMismatch {
                    node: 0,
                    op: "adam_step",
                    expected: format!("gradient shaped like parameter {name} {:?}", p.shape()),
                    actual: vec![g.shape().to_vec()],
                });
            }
        }
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let t = self.step as i32;
        let bc1 = T::one() - T::lit(self.beta1.powi(t));
        let bc2 = T::one() - T::lit(self.beta2.powi(t));
        let eps = T::lit(self.epsilon);
        for (name, g) in grads {
            let Some(lr) = lr_for(name) else {
                continue;
            };
            let lr = T::lit(lr);
            let p = params.get_mut(name).expect("checked above");
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            for (((pi, mi), vi), &gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Applies one Adam step with a single learning rate to every parameter
/// that has a gradient.
pub fn adam_step<T: Scalar>(
    params: &mut BTreeMap<String, Tensor<T>>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<(), NumericsError> {
    state.step(params, grads, &|_| Some(lr))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([("p".to_string(), Tensor::scalar(v))])
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        for g in [3.0, -0.02, 250.0] {
            let mut params = single(1.0);
            let mut state = AdamState::new();
            adam_step(&mut params, &single(g), &mut state, 0.1).unwrap();
            let delta = params["p"].item() - 1.0;
            assert!(
                (delta + 0.1 * f64::signum(g)).abs() < 1e-6,
                "g={g} delta={delta}"
            );
            assert_eq!(state.step_count(), 1);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut params = single(0.7);
        let mut state = AdamState::new();
        adam_step(&mut params, &single(0.0), &mut state, 0.1).unwrap();
        assert_eq!(params["p"].item(), 0.7);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn constant_gradient_steps_do_not_grow() {
        let mut params = single(0.0);
        let mut state = AdamState::new();
        adam_step(&mut params, &single(0.5), &mut state, 0.01).unwrap();
        let first = params["p"].item().abs();
        let before = params["p"].item();
        adam_step(&mut params, &single(0.5), &mut state, 0.01).unwrap();
        let second = (params["p"].item() - before).abs();
        assert!(second <= first + 1e-9);
    }

    #[test]
    fn update_ignores_parameter_magnitude() {
        let grads = [0.3, -1.2, 0.8];
        let mut deltas = Vec::new();
        for start in [0.0, 1e3, -42.0] {
            let mut params = single(start);
            let mut state = AdamState::new();
            for g in grads {
                adam_step(&mut params, &single(g), &mut state, 0.05).unwrap();
            }
            deltas.push(params["p"].item() - start);
        }
        assert!((deltas[0] - deltas[2]).abs() < 1e-12);
        assert!((deltas[0] - deltas[1]).abs() < 1e-9);
    }

    #[test]
    fn rejects_mismatched_gradient_shape() {
        let mut params = single(0.0);
        let grads = BTreeMap::from([("p".to_string(), Tensor::<f64>::zeros(&[2]))]);
        let mut state = AdamState::new();
        assert!(adam_step(&mut params, &grads, &mut state, 0.1).is_err());
        assert_eq!(state.step_count(), 0);
    }
}
