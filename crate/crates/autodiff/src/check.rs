//! Central-difference gradient verification.

use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

/// Conventional step size for [`finite_diff_check`].
pub const DEFAULT_STEP: f64 = 1e-5;

/// Builds the graph twice: once to read analytic gradients, then once per
/// perturbed coordinate for central differences `(f(x+h) - f(x-h)) / 2h`.
/// Returns the worst relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`
/// over every coordinate of every input.
///
/// The closure must produce a scalar from the given leaves. Inputs are bound
/// with gradients enabled for the analytic pass. Callers are responsible for
/// probing at smooth points: coordinates entering relu/max-style kinks should
/// sit at least `10 h` away from the kink.
pub fn finite_diff_check<F>(inputs: &[Tensor], h: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
{
    if h <= 0.0 {
        return Err(Error::InvalidConfig(format!("step must be positive, got {h}")));
    }
    let eval = |probe: &[Tensor], with_grad: bool| -> Result<(Tape, Vec<TensorId>, TensorId)> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = probe
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.set_requires_grad(with_grad);
                tape.leaf(t)
            })
            .collect();
        let out = build(&mut tape, &ids)?;
        if tape.value(out).len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "finite_diff_check",
                detail: format!("closure must yield a scalar, got {:?}", tape.value(out).shape()),
            });
        }
        Ok((tape, ids, out))
    };

    let (tape, ids, out) = eval(inputs, true)?;
    let grads = tape.reverse_accumulate(out)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| {
            grads.wrt(id).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    #[allow(clippy::needless_range_loop)] // ti/j index probe, inputs and analytic together
    for ti in 0..inputs.len() {
        for j in 0..inputs[ti].len() {
            let x = inputs[ti].data()[j];
            let mut at = |v: f64| -> Result<f64> {
                probe[ti].data_mut()[j] = v;
                let (tape, _, out) = eval(&probe, false)?;
                Ok(tape.value(out).item())
            };
            let plus = at(x + h)?;
            let minus = at(x - h)?;
            probe[ti].data_mut()[j] = x;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[ti][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_verifies() {
        // loss = sum(x .* x); analytic gradient 2x is exact under central
        // differences up to rounding.
        let x = Tensor::vector(vec![0.7, -1.3, 2.1]);
        let err = finite_diff_check(&[x], DEFAULT_STEP, |tape, ids| {
            let sq = tape.hadamard(ids[0], ids[0])?;
            Ok(tape.sum_all(sq))
        })
        .unwrap();
        assert!(err < 1e-9, "relative error {err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // scale forward 3x with a deliberately inconsistent closure: the
        // analytic pass sees 3x but the numeric probes see 2x, so the check
        // must flag a large error.
        let x = Tensor::vector(vec![1.0]);
        let err = finite_diff_check(&[x], DEFAULT_STEP, |tape, ids| {
            let factor = if tape.value(ids[0]).requires_grad() { 3.0 } else { 2.0 };
            Ok(tape.scale(ids[0], factor))
        })
        .unwrap();
        assert!(err > 0.3, "expected a flagged mismatch, got {err}");
    }

    #[test]
    fn rejects_non_scalar_outputs_and_bad_step() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        assert!(finite_diff_check(std::slice::from_ref(&x), DEFAULT_STEP, |tape, ids| {
            Ok(tape.scale(ids[0], 1.0))
        })
        .is_err());
        assert!(finite_diff_check(&[x], 0.0, |tape, ids| Ok(tape.sum_all(ids[0]))).is_err());
    }
}
