use super::{Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

/// In-place parameter update from a list of gradients.
pub trait Optimizer<T: Scalar> {
    /// Applies one update. Fails without touching `params` when any gradient
    /// is non-finite or shapes disagree.
    fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()>;

    /// Number of updates applied so far.
    fn steps(&self) -> usize;
}

fn validate<T: Scalar>(params: &[Tensor<T>], grads: &[Tensor<T>], step: usize) -> Result<()> {
    if params.len() != grads.len() {
        return Err(shape_err!("{} gradients for {} parameters", grads.len(), params.len()));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(shape_err!("gradient {} for parameter {}", g.shape(), p.shape()));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite { what: "gradient", step });
        }
    }
    Ok(())
}

fn zeros_like<T: Scalar>(params: &[Tensor<T>]) -> Vec<Tensor<T>> {
    params.iter().map(|p| Tensor::zeros(p.shape())).collect()
}

/// Heavy-ball momentum SGD: `v ← μ·v + g`, `θ ← θ − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    velocity: Vec<Tensor<T>>,
    steps: usize,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
            steps: 0,
        }
    }
}

impl<T: Scalar> Optimizer<T> for Sgd<T> {
    fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        validate(params, grads, self.steps)?;
        if self.velocity.is_empty() {
            self.velocity = zeros_like(params);
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = self.momentum * *vv + gv;
                *pv -= self.lr * *vv;
            }
        }
        self.steps += 1;
        Ok(())
    }

    fn steps(&self) -> usize {
        self.steps
    }
}

/// Adam with bias-corrected first and second moments.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    steps: usize,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: T, beta1: T, beta2: T, eps: T) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }
}

impl<T: Scalar> Optimizer<T> for Adam<T> {
    fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        validate(params, grads, self.steps)?;
        if self.first.is_empty() {
            self.first = zeros_like(params);
            self.second = zeros_like(params);
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (T::one() - self.beta1) * gv;
                *vv = self.beta2 * *vv + (T::one() - self.beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        self.steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::full([1, 1, 1, 2], v)]
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut p = param(1.5);
        let g = param(3.0);
        Sgd::new(0.0, 0.9).step(&mut p, &g).unwrap();
        assert_eq!(p, param(1.5));
        Adam::new(0.0, 0.9, 0.999, 1e-8).step(&mut p, &g).unwrap();
        assert_eq!(p, param(1.5));
    }

    #[test]
    fn plain_gradient_descent() {
        let mut p = param(1.0);
        Sgd::new(0.1, 0.0).step(&mut p, &param(2.0)).unwrap();
        assert!((p[0].data()[0] - (1.0 - 0.2)).abs() < 1e-15);
    }

    #[test]
    fn momentum_unrolls() {
        let mut p = param(0.0);
        let g = param(1.0);
        let mut opt = Sgd::new(0.1, 0.9);
        opt.step(&mut p, &g).unwrap();
        opt.step(&mut p, &g).unwrap();
        // lr·g·(1 + (1 + μ))
        assert!((p[0].data()[0] + 0.1 * 2.9).abs() < 1e-12);
        assert_eq!(opt.steps(), 2);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = param(0.0);
        Adam::new(0.01, 0.9, 0.999, 1e-8).step(&mut p, &param(5.0)).unwrap();
        assert!((p[0].data()[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = param(1.0);
        let err = Sgd::new(0.1, 0.9).step(&mut p, &param(f64::NAN)).unwrap_err();
        assert_eq!(err.code(), "non_finite");
        assert_eq!(p, param(1.0));
    }
}
