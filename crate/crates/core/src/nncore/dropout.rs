use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use super::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// One column mask shared by every timestep of a sequence. Kept entries are
/// scaled by `1 / (1 - rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(Vec<f64>);

impl DropoutMask {
    pub fn sample<R: Rng>(width: usize, rate: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::BadRate(rate));
        }
        let keep = 1.0 / (1.0 - rate);
        Ok(DropoutMask(
            (0..width)
                .map(|_| if rate > 0.0 && rng.gen::<f64>() < rate { 0.0 } else { keep })
                .collect(),
        ))
    }

    pub fn identity(width: usize) -> Self {
        DropoutMask(vec![1.0; width])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Applies the mask to every row. The backward pass is the same call.
    pub fn apply(&self, x: &mut Tensor) {
        for t in 0..x.rows() {
            for (v, m) in x.row_mut(t).iter_mut().zip(&self.0) {
                *v *= m;
            }
        }
    }
}

pub fn variational_dropout(x: &Tensor, rate: f64, mode: Mode, seed: u64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::BadRate(rate));
    }
    let mut out = x.clone();
    if mode == Mode::Train && rate > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DropoutMask::sample(x.cols(), rate, &mut rng)?.apply(&mut out);
    }
    Ok(out)
}
