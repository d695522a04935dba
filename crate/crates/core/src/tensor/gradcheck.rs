//! Central-difference gradient verification in 64-bit precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{shape_err, Result};

/// Scalar value and per-input analytic gradients.
pub type Evaluation = Result<(f64, Vec<Tensor<f64>>)>;

/// Outcome of one [`gradcheck`] run.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    /// Worst element-wise relative error.
    pub max_rel_error: f64,
    /// Which input and flat element produced it.
    pub worst: (usize, usize),
    /// Number of elements probed.
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Compares analytic gradients against `(f(x+ε) − f(x−ε)) / 2ε` for every
/// element of every input.
///
/// `objective` returns the scalar value and its analytic gradient with
/// respect to each input. A large error is reported, not raised.
pub fn gradcheck<F>(inputs: &[Tensor<f64>], eps: f64, objective: F) -> Result<GradcheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Evaluation,
{
    let (_, analytic) = objective(inputs)?;
    if analytic.len() != inputs.len() {
        return Err(shape_err!(
            "objective returned {} gradients for {} inputs",
            analytic.len(),
            inputs.len()
        ));
    }
    let mut probe = inputs.to_vec();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for (i, grad) in analytic.iter().enumerate() {
        if grad.shape() != inputs[i].shape() {
            return Err(shape_err!("gradient {} for input {}", grad.shape(), inputs[i].shape()));
        }
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            probe[i].data_mut()[j] = x + eps;
            let (plus, _) = objective(&probe)?;
            probe[i].data_mut()[j] = x - eps;
            let (minus, _) = objective(&probe)?;
            probe[i].data_mut()[j] = x;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(grad.data()[j], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (i, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Wraps a tape-built op as a scalar objective `⟨op(inputs), R⟩` with a
/// fixed seeded projection `R`, so that any tensor-valued op can be checked.
///
/// Every input is registered as a trainable leaf.
pub fn projected<B>(build: B, seed: u64) -> impl Fn(&[Tensor<f64>]) -> Evaluation
where
    B: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    move |inputs: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let shape = tape.value(out).shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
        let value = tape.value(out).dot(&projection)?;
        let mut grads = tape.backward(out, projection)?;
        let analytic = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((value, analytic))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ConvGeometry;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 0.5) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn detects_wrong_gradient() {
        let x = vec![Tensor::full([1, 1, 1, 3], 2.0)];
        // f = Σx², but claim the gradient is x instead of 2x.
        let report = gradcheck(&x, 1e-3, |inp| {
            let v = inp[0].data().iter().map(|a| a * a).sum();
            Ok((v, vec![inp[0].clone()]))
        })
        .unwrap();
        assert!(report.max_rel_error > 0.4);
    }

    #[test]
    fn linear_conv_is_near_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn([1, 2, 4, 4], |_| rng.gen_range(-1.0..1.0));
        let w = Tensor::from_fn([3, 2, 3, 3], |_| rng.gen_range(-1.0..1.0));
        let b = Tensor::from_fn([1, 3, 1, 1], |_| rng.gen_range(-1.0..1.0));
        let report = gradcheck(
            &[w, b],
            1e-3,
            projected(
                move |tape, v| {
                    let input = tape.constant(x.clone());
                    tape.conv2d(input, v[0], v[1], ConvGeometry::same(3))
                },
                9,
            ),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert_eq!(report.checked, 54 + 3);
    }
}
