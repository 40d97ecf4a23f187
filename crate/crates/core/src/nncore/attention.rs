use rand::Rng;

use super::tensor::{axpy, dot, softmax_in_place, Tensor};
use super::{NnError, ParamSet, Result};

/// Single-head scaled dot-product self-attention with a residual connection:
/// `Z = (softmax(Q Kᵀ / √d) V) W_oᵀ + Y` where `Q`, `K`, `V` are linear maps
/// of `Y`. No positional encoding; order comes from the recurrent encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
}

#[derive(Debug, Clone)]
pub struct AttentionTape {
    y: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Attention weights, `L × L`, rows sum to one.
    pub weights: Tensor,
    ctx: Tensor,
}

fn project(w: &Tensor, y: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(&[y.rows(), w.rows()]);
    for t in 0..y.rows() {
        w.matvec_acc(y.row(t), out.row_mut(t));
    }
    out
}

impl AttentionParams {
    pub fn zeros(d: usize) -> Self {
        let z = || Tensor::zeros(&[d, d]);
        AttentionParams { w_q: z(), w_k: z(), w_v: z(), w_o: z() }
    }

    pub fn init<R: Rng>(d: usize, rng: &mut R) -> Self {
        let mut u = || Tensor::uniform(&[d, d], 0.1, rng);
        AttentionParams { w_q: u(), w_k: u(), w_v: u(), w_o: u() }
    }

    pub fn width(&self) -> usize {
        self.w_q.rows()
    }

    pub fn forward(&self, y: &Tensor) -> Result<(Tensor, AttentionTape)> {
        let d = self.width();
        if y.cols() != d {
            return Err(NnError::ShapeMismatch(format!("attention expects width {d}, got {}", y.cols())));
        }
        if y.rows() == 0 {
            return Err(NnError::ShapeMismatch("empty input sequence".into()));
        }
        let len = y.rows();
        let scale = 1.0 / (d as f64).sqrt();
        let q = project(&self.w_q, y);
        let k = project(&self.w_k, y);
        let v = project(&self.w_v, y);
        let mut weights = Tensor::zeros(&[len, len]);
        let mut ctx = Tensor::zeros(&[len, d]);
        for t in 0..len {
            let row = weights.row_mut(t);
            for (s, a) in row.iter_mut().enumerate() {
                *a = dot(q.row(t), k.row(s)) * scale;
            }
            softmax_in_place(row);
            let c = ctx.row_mut(t);
            for s in 0..len {
                axpy(weights.get(t, s), v.row(s), c);
            }
        }
        let mut z = y.clone();
        for t in 0..len {
            self.w_o.matvec_acc(ctx.row(t), z.row_mut(t));
        }
        Ok((z, AttentionTape { y: y.clone(), q, k, v, weights, ctx }))
    }

    pub fn backward(&self, tape: &AttentionTape, dz: &Tensor, grads: &mut AttentionParams) -> Tensor {
        let len = dz.rows();
        let d = self.width();
        let scale = 1.0 / (d as f64).sqrt();
        let mut dy = dz.clone();
        let mut dctx = Tensor::zeros(&[len, d]);
        for t in 0..len {
            grads.w_o.outer_acc(dz.row(t), tape.ctx.row(t));
            self.w_o.matvec_t_acc(dz.row(t), dctx.row_mut(t));
        }
        let mut dq = Tensor::zeros(&[len, d]);
        let mut dk = Tensor::zeros(&[len, d]);
        let mut dv = Tensor::zeros(&[len, d]);
        let mut da = vec![0.0; len];
        for t in 0..len {
            let a = tape.weights.row(t);
            for s in 0..len {
                da[s] = dot(dctx.row(t), tape.v.row(s));
                axpy(a[s], dctx.row(t), dv.row_mut(s));
            }
            let mean: f64 = a.iter().zip(&da).map(|(p, g)| p * g).sum();
            for s in 0..len {
                let ds = a[s] * (da[s] - mean) * scale;
                if ds != 0.0 {
                    axpy(ds, tape.k.row(s), dq.row_mut(t));
                    axpy(ds, tape.q.row(t), dk.row_mut(s));
                }
            }
        }
        for (w, g, d) in [
            (&self.w_q, &mut grads.w_q, &dq),
            (&self.w_k, &mut grads.w_k, &dk),
            (&self.w_v, &mut grads.w_v, &dv),
        ] {
            for t in 0..len {
                g.outer_acc(d.row(t), tape.y.row(t));
                w.matvec_t_acc(d.row(t), dy.row_mut(t));
            }
        }
        dy
    }
}

impl ParamSet for AttentionParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_q".into(), &self.w_q),
            ("w_k".into(), &self.w_k),
            ("w_v".into(), &self.w_v),
            ("w_o".into(), &self.w_o),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o]
    }
}

/// Forward pass only; returns the output and the attention weights.
pub fn self_attention(params: &AttentionParams, y: &Tensor) -> Result<(Tensor, Tensor)> {
    let (z, tape) = params.forward(y)?;
    Ok((z, tape.weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{grad_check, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_position_attends_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = AttentionParams::init(3, &mut rng);
        let (_, a) = self_attention(&p, &Tensor::uniform(&[1, 3], 1.0, &mut rng)).unwrap();
        assert_eq!(a.data(), &[1.0]);
    }

    #[test]
    fn rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = AttentionParams::init(4, &mut rng);
        p.w_q.scale(30.0);
        let (_, a) = self_attention(&p, &Tensor::uniform(&[9, 4], 3.0, &mut rng)).unwrap();
        for t in 0..9 {
            let row = a.row(t);
            assert!(row.iter().all(|&x| x >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = Tensor::uniform(&[3, 2], 1.0, &mut rng);
        let (z, _) = self_attention(&AttentionParams::zeros(2), &y).unwrap();
        assert_eq!(z, y);
    }

    #[derive(Clone)]
    struct Wrap(AttentionParams, Tensor);

    impl ParamSet for Wrap {
        fn tensors(&self) -> Vec<(String, &Tensor)> {
            let mut v = self.0.tensors();
            v.push(("y".into(), &self.1));
            v
        }
        fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
            let mut v = self.0.tensors_mut();
            v.push(&mut self.1);
            v
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut p = AttentionParams::init(4, &mut rng);
        p.w_q.scale(5.0);
        p.w_k.scale(5.0);
        let y = Tensor::uniform(&[5, 4], 1.0, &mut rng);
        let wts = Tensor::uniform(&[5, 4], 1.0, &mut rng);
        let (_, tape) = p.forward(&y).unwrap();
        let mut g = p.zeros_like();
        let dy = p.backward(&tape, &wts, &mut g);
        let report = grad_check(
            &Wrap(p, y),
            &Wrap(g, dy),
            |w: &Wrap| {
                let (z, _) = w.0.forward(&w.1).unwrap();
                z.data().iter().zip(wts.data()).map(|(a, b)| a * b).sum()
            },
            &GradCheckConfig { samples_per_tensor: 32, ..Default::default() },
        );
        assert!(report.passed, "{report:?}");
    }
}
