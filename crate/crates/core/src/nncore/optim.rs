use super::tensor::Tensor;
use super::{NnError, Result};

pub fn global_norm(grads: &[&Tensor]) -> f64 {
    grads.iter().map(|g| g.sum_squares()).sum::<f64>().sqrt()
}

/// Rescales all gradients by `threshold / norm` when their joint L2 norm
/// exceeds `threshold`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut Tensor], threshold: f64) -> Result<f64> {
    assert!(threshold > 0.0, "clip threshold must be positive");
    let norm = grads.iter().map(|g| g.sum_squares()).sum::<f64>().sqrt();
    if !norm.is_finite() {
        let idx = grads.iter().position(|g| !g.is_finite()).unwrap_or(0);
        return Err(NnError::NonFiniteGradient { tensor: format!("#{idx}") });
    }
    if norm > threshold {
        let k = threshold / norm;
        for g in grads.iter_mut() {
            g.scale(k);
        }
    }
    Ok(norm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamaxConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamaxConfig {
    fn default() -> Self {
        AdamaxConfig { lr: 0.025, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adamax: first moment plus an exponentially weighted infinity norm.
///
/// ```text
/// m ← β1·m + (1−β1)·g
/// u ← max(β2·u, |g|)
/// θ ← θ − lr/(1−β1^t) · m/(u+ε)
/// ```
#[derive(Debug, Clone)]
pub struct Adamax {
    pub config: AdamaxConfig,
    pub step: u64,
    m: Vec<Tensor>,
    u: Vec<Tensor>,
}

impl Adamax {
    pub fn new(params: &[&Tensor], config: AdamaxConfig) -> Self {
        let m: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adamax { config, step: 0, u: m.clone(), m }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn infinity_norms(&self) -> &[Tensor] {
        &self.u
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::ShapeMismatch(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return Err(NnError::ShapeMismatch(format!("tensor {i}: shape {:?} vs {:?}", p.shape(), g.shape())));
            }
        }
        self.step += 1;
        let AdamaxConfig { lr, beta1, beta2, eps } = self.config;
        let rate = lr / (1.0 - beta1.powi(self.step as i32));
        for ((p, g), (m, u)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.u.iter_mut())) {
            let pd = p.data_mut();
            for (((theta, &gi), mi), ui) in pd.iter_mut().zip(g.data()).zip(m.data_mut()).zip(u.data_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *ui = (beta2 * *ui).max(gi.abs());
                *theta -= rate * *mi / (*ui + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_halves_norm_ten() {
        let mut a = Tensor::from_vec(&[2], vec![6.0, 0.0]).unwrap();
        let mut b = Tensor::from_vec(&[1], vec![8.0]).unwrap();
        let norm = clip_global_norm(&mut [&mut a, &mut b], 5.0).unwrap();
        assert_eq!(norm, 10.0);
        assert_eq!(a.data(), &[3.0, 0.0]);
        assert_eq!(b.data(), &[4.0]);
    }

    #[test]
    fn clip_leaves_small_norm() {
        let mut a = Tensor::from_vec(&[2], vec![3.0, 0.0]).unwrap();
        clip_global_norm(&mut [&mut a], 5.0).unwrap();
        assert_eq!(a.data(), &[3.0, 0.0]);
    }

    #[test]
    fn clip_rejects_nan() {
        let mut a = Tensor::from_vec(&[2], vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(clip_global_norm(&mut [&mut a], 5.0), Err(NnError::NonFiniteGradient { .. })));
    }

    #[test]
    fn zero_gradient_never_moves() {
        let mut p = Tensor::from_vec(&[3], vec![0.3, -1.0, 2.0]).unwrap();
        let g = Tensor::zeros(&[3]);
        let mut opt = Adamax::new(&[&p], AdamaxConfig::default());
        for _ in 0..100 {
            opt.step(&mut [&mut p], &[&g]).unwrap();
        }
        assert_eq!(p.data(), &[0.3, -1.0, 2.0]);
        assert_eq!(opt.step, 100);
    }

    #[test]
    fn first_step_with_unit_gradient() {
        let mut p = Tensor::zeros(&[1]);
        let g = Tensor::full(&[1], 1.0);
        let mut opt = Adamax::new(&[&p], AdamaxConfig::default());
        opt.step(&mut [&mut p], &[&g]).unwrap();
        // m = 0.1, u = 1, bias correction 1/(1-0.9) = 10
        let expected = -0.025 * 1.0 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15, "{}", p.data()[0]);
    }

    #[test]
    fn infinity_norm_decays_no_faster_than_beta2() {
        let mut p = Tensor::zeros(&[1]);
        let mut opt = Adamax::new(&[&p], AdamaxConfig::default());
        let mut prev = 0.0;
        for k in 0..50 {
            let g = Tensor::full(&[1], if k % 7 == 0 { 2.0 } else { 0.01 });
            opt.step(&mut [&mut p], &[&g]).unwrap();
            let u = opt.infinity_norms()[0].data()[0];
            assert!(u >= 0.999 * prev);
            prev = u;
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Tensor::zeros(&[2]);
        let g = Tensor::zeros(&[3]);
        let mut opt = Adamax::new(&[&p], AdamaxConfig::default());
        assert!(opt.step(&mut [&mut p], &[&g]).is_err());
    }
}
