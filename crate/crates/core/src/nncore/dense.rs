use rand::Rng;

use super::tensor::Tensor;
use super::{NnError, ParamSet, Result};

/// Row-wise affine map `y_t = W x_t + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone)]
pub struct DenseTape {
    input: Tensor,
}

impl DenseParams {
    pub fn zeros(input: usize, output: usize) -> Self {
        DenseParams { w: Tensor::zeros(&[output, input]), b: Tensor::zeros(&[output]) }
    }

    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        DenseParams { w: Tensor::uniform(&[output, input], 0.1, rng), b: Tensor::zeros(&[output]) }
    }

    pub fn input(&self) -> usize {
        self.w.cols()
    }

    pub fn output(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, xs: &Tensor) -> Result<(Tensor, DenseTape)> {
        if xs.cols() != self.input() {
            return Err(NnError::ShapeMismatch(format!(
                "dense layer expects width {}, got {}",
                self.input(),
                xs.cols()
            )));
        }
        let mut out = Tensor::zeros(&[xs.rows(), self.output()]);
        for t in 0..xs.rows() {
            let row = out.row_mut(t);
            row.copy_from_slice(self.b.data());
            self.w.matvec_acc(xs.row(t), row);
        }
        Ok((out, DenseTape { input: xs.clone() }))
    }

    pub fn backward(&self, tape: &DenseTape, dy: &Tensor, grads: &mut DenseParams) -> Tensor {
        let mut dx = Tensor::zeros(&[dy.rows(), self.input()]);
        for t in 0..dy.rows() {
            let d = dy.row(t);
            grads.w.outer_acc(d, tape.input.row(t));
            grads.b.data_mut().iter_mut().zip(d).for_each(|(g, v)| *g += v);
            self.w.matvec_t_acc(d, dx.row_mut(t));
        }
        dx
    }
}

impl ParamSet for DenseParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w, &mut self.b]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{grad_check, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_values() {
        let p = DenseParams {
            w: Tensor::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0], vec![0.0, 1.0]]),
            b: Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap(),
        };
        let (y, _) = p.forward(&Tensor::from_rows(&[vec![2.0, 1.0]])).unwrap();
        assert_eq!(y.row(0), &[1.1, 3.2, 1.3]);
        assert!(p.forward(&Tensor::zeros(&[1, 3])).is_err());
    }

    #[test]
    fn gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = DenseParams::init(4, 3, &mut rng);
        let xs = Tensor::uniform(&[5, 4], 1.0, &mut rng);
        let wts = Tensor::uniform(&[5, 3], 1.0, &mut rng);
        let loss = |p: &DenseParams| -> f64 {
            let (y, _) = p.forward(&xs).unwrap();
            y.data().iter().zip(wts.data()).map(|(a, b)| a * b * a).sum()
        };
        let (y, tape) = p.forward(&xs).unwrap();
        let mut dy = y.clone();
        dy.data_mut().iter_mut().zip(wts.data()).for_each(|(v, w)| *v *= 2.0 * w);
        let mut g = p.zeros_like();
        p.backward(&tape, &dy, &mut g);
        let report = grad_check(&p, &g, loss, &GradCheckConfig::default());
        assert!(report.passed, "{report:?}");
    }
}
