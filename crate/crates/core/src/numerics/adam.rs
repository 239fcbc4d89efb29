//! Adam optimizer with bias correction and decoupled weight decay.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::matrix::Matrix;

/// Optimizer hyperparameters. The defaults mirror the experiment setup:
/// learning rate 5e-5, epsilon 1e-6, weight decay 0.2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-6,
            weight_decay: 0.2,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let checks: [(&'static str, bool); 5] = [
            ("learning_rate", self.learning_rate >= 0.0),
            ("beta1", (0.0..1.0).contains(&self.beta1)),
            ("beta2", (0.0..1.0).contains(&self.beta2)),
            ("epsilon", self.epsilon > 0.0),
            ("weight_decay", self.weight_decay >= 0.0),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(Error::InvalidParameter {
                    name,
                    message: "out of range".to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Per-parameter first/second moment state plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    hyper: AdamHyper,
    step_count: u64,
    moments: BTreeMap<String, (Matrix, Matrix)>,
}

impl AdamState {
    pub fn new(hyper: AdamHyper) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            hyper,
            step_count: 0,
            moments: BTreeMap::new(),
        })
    }

    pub fn hyper(&self) -> &AdamHyper {
        &self.hyper
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One optimizer step over a set of named parameters.
    ///
    /// Decoupled weight decay shrinks each parameter by `lr * wd` before the
    /// adaptive update, leaving the moment statistics untouched. The step
    /// counter advances once per call, not per parameter.
    pub fn step<'a, I>(&mut self, entries: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a mut Matrix, &'a Matrix)>,
    {
        self.step_count += 1;
        let t = self.step_count;
        let h = self.hyper;
        let bias1 = 1.0 - h.beta1.powi(t as i32);
        let bias2 = 1.0 - h.beta2.powi(t as i32);

        for (name, param, grad) in entries {
            if param.shape() != grad.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left_rows: param.rows(),
                    left_cols: param.cols(),
                    right_rows: grad.rows(),
                    right_cols: grad.cols(),
                });
            }
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| {
                    let z = Matrix::zeros(param.rows(), param.cols()).expect("nonempty shape");
                    (z.clone(), z)
                });
            if m.shape() != param.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_moments",
                    left_rows: m.rows(),
                    left_cols: m.cols(),
                    right_rows: param.rows(),
                    right_cols: param.cols(),
                });
            }

            if h.weight_decay != 0.0 {
                let shrink = 1.0 - h.learning_rate * h.weight_decay;
                for p in param.data_mut() {
                    *p *= shrink;
                }
            }

            let md = m.data_mut();
            let vd = v.data_mut();
            let pd = param.data_mut();
            let gd = grad.data();
            for i in 0..pd.len() {
                md[i] = h.beta1 * md[i] + (1.0 - h.beta1) * gd[i];
                vd[i] = h.beta2 * vd[i] + (1.0 - h.beta2) * gd[i] * gd[i];
                let m_hat = md[i] / bias1;
                let v_hat = vd[i] / bias2;
                pd[i] -= h.learning_rate * m_hat / (v_hat.sqrt() + h.epsilon);
            }
            if !param.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("adam update of {name}"),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper(lr: f64, wd: f64) -> AdamHyper {
        AdamHyper {
            learning_rate: lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-6,
            weight_decay: wd,
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut adam = AdamState::new(hyper(0.1, 0.0)).unwrap();
        let mut p = Matrix::from_vec(2, 2, vec![1.0, -2.0, 0.25, 4.0]).unwrap();
        let before = p.clone();
        let g = Matrix::zeros(2, 2).unwrap();
        adam.step([("p", &mut p, &g)]).unwrap();
        assert!(p.bits_eq(&before));
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // Scalar recurrence: m=0.1, v=0.001, both bias-correct to 1, so the
        // first update is lr / (1 + eps).
        let mut adam = AdamState::new(hyper(0.1, 0.0)).unwrap();
        let mut p = Matrix::zeros(1, 1).unwrap();
        let g = Matrix::filled(1, 1, 1.0).unwrap();
        adam.step([("p", &mut p, &g)]).unwrap();
        assert!((p.get(0, 0) + 0.1).abs() < 1e-6);
    }

    #[test]
    fn second_step_with_zero_grad_shrinks() {
        let mut adam = AdamState::new(hyper(0.1, 0.0)).unwrap();
        let mut p = Matrix::zeros(1, 1).unwrap();
        let g1 = Matrix::filled(1, 1, 1.0).unwrap();
        adam.step([("p", &mut p, &g1)]).unwrap();
        let after_first = p.get(0, 0);
        let first_move = after_first.abs();

        let g0 = Matrix::zeros(1, 1).unwrap();
        adam.step([("p", &mut p, &g0)]).unwrap();
        let second_move = (p.get(0, 0) - after_first).abs();
        assert!(second_move > 0.0);
        assert!(second_move < first_move);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        // With zero gradient the only effect is the multiplicative shrink.
        let mut adam = AdamState::new(hyper(0.5, 0.1)).unwrap();
        let mut p = Matrix::filled(1, 1, 2.0).unwrap();
        let g = Matrix::zeros(1, 1).unwrap();
        adam.step([("p", &mut p, &g)]).unwrap();
        assert!((p.get(0, 0) - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut adam = AdamState::new(hyper(0.1, 0.0)).unwrap();
        let mut p = Matrix::zeros(2, 2).unwrap();
        let g = Matrix::zeros(2, 1).unwrap();
        assert!(matches!(
            adam.step([("p", &mut p, &g)]),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
