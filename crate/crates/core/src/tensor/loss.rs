use super::{Scalar, Tensor};
use crate::error::{shape_err, Result};
use crate::label::LabelMap;

/// Scalar loss together with its gradient with respect to the logits.
#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    pub loss: T,
    pub grad: Tensor<T>,
}

/// Per-pixel softmax cross-entropy averaged over all `N·H·W` pixels.
///
/// With `class_weights`, each pixel's term (and its gradient) is scaled by
/// the weight of its target class; the divisor stays the pixel count.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &LabelMap,
    class_weights: Option<&[f64]>,
) -> Result<LossOutput<T>> {
    let s = logits.shape();
    if labels.dims() != (s.batch, s.height, s.width) {
        return Err(shape_err!("labels {:?} do not match logits {s}", labels.dims()));
    }
    labels.check_range(s.channels)?;
    if let Some(w) = class_weights {
        if w.len() != s.channels {
            return Err(shape_err!("{} class weights for {} classes", w.len(), s.channels));
        }
    }
    let plane = s.plane();
    let pixels = (s.batch * plane) as f64;
    let inv = T::from_f64_lossy(1.0 / pixels);
    let mut grad = Tensor::zeros(s);
    let mut total = 0.0f64;
    let mut probs = vec![T::zero(); s.channels];
    for n in 0..s.batch {
        let z = logits.item(n);
        let g = grad.item_mut(n);
        let target = labels.item(n);
        for p in 0..plane {
            let mut max = z[p];
            for c in 1..s.channels {
                max = max.max(z[c * plane + p]);
            }
            let mut sum = T::zero();
            for (c, pr) in probs.iter_mut().enumerate() {
                *pr = (z[c * plane + p] - max).exp();
                sum += *pr;
            }
            let label = target[p] as usize;
            let weight = class_weights.map_or(1.0, |w| w[label]);
            let log_p = (z[label * plane + p] - max) - sum.ln();
            total -= weight * log_p.as_f64();
            let scale = inv * T::from_f64_lossy(weight);
            for (c, &pr) in probs.iter().enumerate() {
                let onehot = if c == label { T::one() } else { T::zero() };
                g[c * plane + p] = (pr / sum - onehot) * scale;
            }
        }
    }
    Ok(LossOutput {
        loss: T::from_f64_lossy(total / pixels),
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let z = Tensor::<f64>::full([1, 4, 2, 3], 0.7);
        let y = LabelMap::filled(1, 2, 3, 2);
        let out = softmax_cross_entropy(&z, &y, None).unwrap();
        assert!((out.loss - 4f64.ln()).abs() < 1e-12);
        assert!((out.loss - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn two_class_closed_form() {
        let z = Tensor::from_vec([1, 2, 1, 1], vec![1.0f64, 2.0]).unwrap();
        let y = LabelMap::filled(1, 1, 1, 1);
        let out = softmax_cross_entropy(&z, &y, None).unwrap();
        let expect = (1.0 + (-1.0f64).exp()).ln();
        assert!((out.loss - expect).abs() < 1e-12);
        assert!((out.loss - 0.313262).abs() < 1e-6);
        // softmax - onehot
        let p1 = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((out.grad.data()[0] - (1.0 - p1)).abs() < 1e-12);
        assert!((out.grad.data()[1] - (p1 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_class() {
        let z = Tensor::from_vec([1, 3, 1, 1], vec![0.0f32, 1000.0, 0.0]).unwrap();
        let y = LabelMap::filled(1, 1, 1, 1);
        let out = softmax_cross_entropy(&z, &y, None).unwrap();
        assert!(out.loss.abs() < 1e-6);
        assert!(out.grad.is_finite());
    }

    #[test]
    fn gradient_is_averaged_over_pixels() {
        let z = Tensor::<f64>::zeros([2, 2, 2, 2]);
        let y = LabelMap::filled(2, 2, 2, 0);
        let out = softmax_cross_entropy(&z, &y, None).unwrap();
        assert!((out.grad.get([0, 0, 0, 0]) - (0.5 - 1.0) / 8.0).abs() < 1e-15);
        assert!((out.grad.get([1, 1, 1, 1]) - 0.5 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_range_label() {
        let z = Tensor::<f32>::zeros([1, 2, 1, 2]);
        let y = LabelMap::new(1, 1, 2, vec![0, 2]).unwrap();
        assert!(softmax_cross_entropy(&z, &y, None).is_err());
    }

    #[test]
    fn class_weights_scale_terms() {
        let z = Tensor::<f64>::zeros([1, 2, 1, 2]);
        let y = LabelMap::new(1, 1, 2, vec![0, 1]).unwrap();
        let plain = softmax_cross_entropy(&z, &y, None).unwrap();
        let weighted = softmax_cross_entropy(&z, &y, Some(&[1.0, 3.0])).unwrap();
        assert!((weighted.loss - 2.0 * plain.loss).abs() < 1e-12);
    }
}
