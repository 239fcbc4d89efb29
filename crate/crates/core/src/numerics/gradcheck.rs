//! Finite-difference gradient checking.

use crate::error::{Error, Result};
use crate::numerics::matrix::Matrix;

/// Loss with analytic gradients, as produced by one tape evaluation.
pub struct LossAndGrads {
    pub loss: f64,
    pub grads: Vec<Matrix>,
}

/// Compare analytic gradients against central finite differences.
///
/// `f` evaluates the loss (and its gradients) at the given parameter values;
/// the gradients must line up with `params` positionally. Probing perturbs
/// one entry at a time by `h` and uses (f(x+h) - f(x-h)) / 2h.
///
/// Returns the maximum over all entries of `|g_ad - g_fd| / max(1, |g_fd|)`.
pub fn finite_diff_check<F>(f: F, params: &[Matrix], h: f64) -> Result<f64>
where
    F: Fn(&[Matrix]) -> Result<LossAndGrads>,
{
    if h <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "h",
            message: "step must be positive".to_string(),
        });
    }

    let base = f(params)?;
    if !base.loss.is_finite() {
        return Err(Error::NonFinite {
            context: "finite_diff_check base loss".to_string(),
        });
    }
    if base.grads.len() != params.len() {
        return Err(Error::State {
            message: format!(
                "gradient count {} does not match parameter count {}",
                base.grads.len(),
                params.len()
            ),
        });
    }

    let mut work: Vec<Matrix> = params.to_vec();
    let mut max_err = 0.0_f64;

    for (pi, param) in params.iter().enumerate() {
        if base.grads[pi].shape() != param.shape() {
            return Err(Error::ShapeMismatch {
                op: "finite_diff_check",
                left_rows: base.grads[pi].rows(),
                left_cols: base.grads[pi].cols(),
                right_rows: param.rows(),
                right_cols: param.cols(),
            });
        }
        for idx in 0..param.len() {
            let original = param.data()[idx];

            work[pi].data_mut()[idx] = original + h;
            let plus = f(&work)?.loss;
            work[pi].data_mut()[idx] = original - h;
            let minus = f(&work)?.loss;
            work[pi].data_mut()[idx] = original;

            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite {
                    context: "finite_diff_check probe".to_string(),
                });
            }
            let g_fd = (plus - minus) / (2.0 * h);
            let g_ad = base.grads[pi].data()[idx];
            let err = (g_ad - g_fd).abs() / g_fd.abs().max(1.0);
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tape::Tape;

    fn linear_loss(params: &[Matrix]) -> Result<LossAndGrads> {
        let mut tape = Tape::new();
        let w = tape.trainable(params[0].clone());
        let mean = tape.mean(w)?;
        let loss = tape.scale(mean, 3.0)?;
        let grads = tape.backward(loss)?;
        Ok(LossAndGrads {
            loss: tape.value(loss).get(0, 0),
            grads: vec![grads.get(w).unwrap().clone()],
        })
    }

    fn quadratic_loss(params: &[Matrix]) -> Result<LossAndGrads> {
        // loss = mean(tanh-free quadratic): sum(x^2) via hadamard on the tape
        // is not a primitive, so square through matmul with the transpose.
        let mut tape = Tape::new();
        let w = tape.trainable(params[0].clone());
        let wt = tape.transpose(w)?;
        let sq = tape.matmul(w, wt)?;
        let loss = tape.mean(sq)?;
        let grads = tape.backward(loss)?;
        Ok(LossAndGrads {
            loss: tape.value(loss).get(0, 0),
            grads: vec![grads.get(w).unwrap().clone()],
        })
    }

    #[test]
    fn linear_loss_is_exact() {
        let p = Matrix::from_vec(2, 3, vec![0.5, -1.0, 2.0, 0.1, 0.2, -0.3]).unwrap();
        let err = finite_diff_check(linear_loss, &[p], 1e-4).unwrap();
        assert!(err <= 1e-9, "err = {err}");
    }

    #[test]
    fn quadratic_loss_within_tolerance() {
        let p = Matrix::from_vec(1, 4, vec![0.7, -0.4, 1.2, 0.05]).unwrap();
        let err = finite_diff_check(quadratic_loss, &[p], 1e-4).unwrap();
        assert!(err <= 1e-7, "err = {err}");
    }

    #[test]
    fn rejects_non_positive_step() {
        let p = Matrix::filled(1, 1, 1.0).unwrap();
        assert!(finite_diff_check(linear_loss, &[p], 0.0).is_err());
    }
}
