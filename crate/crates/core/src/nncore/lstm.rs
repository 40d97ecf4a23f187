use rand::Rng;

use super::tensor::Tensor;
use super::{prefixed, sigmoid, NnError, ParamSet, Result};

/// Weights of one LSTM direction. `w_*` act on the previous hidden state
/// (`h × h`), `u_*` on the input (`h × d`), `b_*` are biases of length `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_i: Tensor,
    pub w_f: Tensor,
    pub w_c: Tensor,
    pub w_o: Tensor,
    pub u_i: Tensor,
    pub u_f: Tensor,
    pub u_c: Tensor,
    pub u_o: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_c: Tensor,
    pub b_o: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Activations of one sequence pass, in processing order.
#[derive(Debug, Clone)]
pub struct LstmTape {
    reverse: bool,
    steps: Vec<StepCache>,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let hh = || Tensor::zeros(&[hidden, hidden]);
        let hd = || Tensor::zeros(&[hidden, input]);
        let b = || Tensor::zeros(&[hidden]);
        LstmParams {
            w_i: hh(),
            w_f: hh(),
            w_c: hh(),
            w_o: hh(),
            u_i: hd(),
            u_f: hd(),
            u_c: hd(),
            u_o: hd(),
            b_i: b(),
            b_f: b(),
            b_c: b(),
            b_o: b(),
        }
    }

    /// Uniform `[-0.1, 0.1]` weights, forget bias 1, other biases 0.
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = LstmParams::zeros(input, hidden);
        for t in [
            &mut p.w_i, &mut p.w_f, &mut p.w_c, &mut p.w_o, &mut p.u_i, &mut p.u_f, &mut p.u_c, &mut p.u_o,
        ] {
            *t = Tensor::uniform(t.shape(), 0.1, rng);
        }
        p.b_f.fill(1.0);
        p
    }

    pub fn hidden(&self) -> usize {
        self.b_i.len()
    }

    pub fn input(&self) -> usize {
        self.u_i.cols()
    }

    fn step(&self, h_prev: &[f64], c_prev: &[f64], x: &[f64]) -> StepCache {
        let h = self.hidden();
        let gate = |w: &Tensor, u: &Tensor, b: &Tensor| -> Vec<f64> {
            let mut a = b.data().to_vec();
            w.matvec_acc(h_prev, &mut a);
            u.matvec_acc(x, &mut a);
            a
        };
        let i: Vec<f64> = gate(&self.w_i, &self.u_i, &self.b_i).into_iter().map(sigmoid).collect();
        let f: Vec<f64> = gate(&self.w_f, &self.u_f, &self.b_f).into_iter().map(sigmoid).collect();
        let g: Vec<f64> = gate(&self.w_c, &self.u_c, &self.b_c).into_iter().map(f64::tanh).collect();
        let o: Vec<f64> = gate(&self.w_o, &self.u_o, &self.b_o).into_iter().map(sigmoid).collect();
        let mut tanh_c = vec![0.0; h];
        for k in 0..h {
            tanh_c[k] = (f[k] * c_prev[k] + i[k] * g[k]).tanh();
        }
        StepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            i,
            f,
            g,
            o,
            tanh_c,
        }
    }

    fn check_input(&self, d: usize) -> Result<()> {
        if d != self.input() {
            return Err(NnError::ShapeMismatch(format!("LSTM expects input width {}, got {d}", self.input())));
        }
        Ok(())
    }

    /// Runs the cell over the rows of `xs`, right to left when `reverse`.
    /// Output row `t` is the hidden state after consuming row `t`.
    pub fn forward_seq(&self, xs: &Tensor, reverse: bool) -> Result<(Tensor, LstmTape)> {
        let len = xs.rows();
        self.check_input(xs.cols())?;
        let h = self.hidden();
        let mut out = Tensor::zeros(&[len, h]);
        let mut steps = Vec::with_capacity(len);
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for k in 0..len {
            let t = if reverse { len - 1 - k } else { k };
            let cache = self.step(&h_prev, &c_prev, xs.row(t));
            let c: Vec<f64> = (0..h).map(|j| cache.f[j] * c_prev[j] + cache.i[j] * cache.g[j]).collect();
            let hv: Vec<f64> = (0..h).map(|j| cache.o[j] * cache.tanh_c[j]).collect();
            out.row_mut(t).copy_from_slice(&hv);
            h_prev = hv;
            c_prev = c;
            steps.push(cache);
        }
        Ok((out, LstmTape { reverse, steps }))
    }

    /// Backpropagation through time. `dh` holds the loss gradient with
    /// respect to each output row; parameter gradients are accumulated into
    /// `grads` and the input gradient is returned.
    pub fn backward_seq(&self, tape: &LstmTape, dh: &Tensor, grads: &mut LstmParams) -> Tensor {
        let len = tape.steps.len();
        let h = self.hidden();
        let mut dx = Tensor::zeros(&[len, self.input()]);
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut da_i = vec![0.0; h];
        let mut da_f = vec![0.0; h];
        let mut da_c = vec![0.0; h];
        let mut da_o = vec![0.0; h];
        for k in (0..len).rev() {
            let t = if tape.reverse { len - 1 - k } else { k };
            let s = &tape.steps[k];
            let dh_t = dh.row(t);
            for j in 0..h {
                let dhj = dh_t[j] + dh_next[j];
                let dc = dhj * s.o[j] * (1.0 - s.tanh_c[j] * s.tanh_c[j]) + dc_next[j];
                da_o[j] = dhj * s.tanh_c[j] * s.o[j] * (1.0 - s.o[j]);
                da_i[j] = dc * s.g[j] * s.i[j] * (1.0 - s.i[j]);
                da_f[j] = dc * s.c_prev[j] * s.f[j] * (1.0 - s.f[j]);
                da_c[j] = dc * s.i[j] * (1.0 - s.g[j] * s.g[j]);
                dc_next[j] = dc * s.f[j];
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            let dxt = dx.row_mut(t);
            for (da, w, u, gw, gu, gb) in [
                (&da_i, &self.w_i, &self.u_i, &mut grads.w_i, &mut grads.u_i, &mut grads.b_i),
                (&da_f, &self.w_f, &self.u_f, &mut grads.w_f, &mut grads.u_f, &mut grads.b_f),
                (&da_c, &self.w_c, &self.u_c, &mut grads.w_c, &mut grads.u_c, &mut grads.b_c),
                (&da_o, &self.w_o, &self.u_o, &mut grads.w_o, &mut grads.u_o, &mut grads.b_o),
            ] {
                gw.outer_acc(da, &s.h_prev);
                gu.outer_acc(da, &s.x);
                gb.data_mut().iter_mut().zip(da.iter()).for_each(|(g, d)| *g += d);
                w.matvec_t_acc(da, &mut dh_next);
                u.matvec_t_acc(da, dxt);
            }
        }
        dx
    }
}

impl ParamSet for LstmParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_i".into(), &self.w_i),
            ("w_f".into(), &self.w_f),
            ("w_c".into(), &self.w_c),
            ("w_o".into(), &self.w_o),
            ("u_i".into(), &self.u_i),
            ("u_f".into(), &self.u_f),
            ("u_c".into(), &self.u_c),
            ("u_o".into(), &self.u_o),
            ("b_i".into(), &self.b_i),
            ("b_f".into(), &self.b_f),
            ("b_c".into(), &self.b_c),
            ("b_o".into(), &self.b_o),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_i,
            &mut self.w_f,
            &mut self.w_c,
            &mut self.w_o,
            &mut self.u_i,
            &mut self.u_f,
            &mut self.u_c,
            &mut self.u_o,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_c,
            &mut self.b_o,
        ]
    }
}

/// One LSTM step:
///
/// ```text
/// i = σ(W_i h + U_i x + b_i)     f = σ(W_f h + U_f x + b_f)
/// c̃ = tanh(W_c h + U_c x + b_c)  o = σ(W_o h + U_o x + b_o)
/// c' = f ⊙ c + i ⊙ c̃             h' = o ⊙ tanh(c')
/// ```
pub fn lstm_step(params: &LstmParams, state: &LstmState, x: &[f64]) -> Result<LstmState> {
    params.check_input(x.len())?;
    let h = params.hidden();
    if state.h.len() != h || state.c.len() != h {
        return Err(NnError::ShapeMismatch(format!(
            "LSTM state has widths ({}, {}), expected {h}",
            state.h.len(),
            state.c.len()
        )));
    }
    let s = params.step(&state.h, &state.c, x);
    let c: Vec<f64> = (0..h).map(|j| s.f[j] * state.c[j] + s.i[j] * s.g[j]).collect();
    let hv = (0..h).map(|j| s.o[j] * s.tanh_c[j]).collect();
    Ok(LstmState { h: hv, c })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

#[derive(Debug, Clone)]
pub struct BiLstmTape {
    fwd: LstmTape,
    bwd: LstmTape,
}

impl BiLstmParams {
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let fwd = LstmParams::init(input, hidden, rng);
        let bwd = LstmParams::init(input, hidden, rng);
        BiLstmParams { fwd, bwd }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        BiLstmParams { fwd: LstmParams::zeros(input, hidden), bwd: LstmParams::zeros(input, hidden) }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden()
    }

    pub fn output_width(&self) -> usize {
        self.fwd.hidden() + self.bwd.hidden()
    }

    /// Row `t` of the output is `[→h_t ; ←h_t]`.
    pub fn forward(&self, xs: &Tensor) -> Result<(Tensor, BiLstmTape)> {
        let (f, ft) = self.fwd.forward_seq(xs, false)?;
        let (b, bt) = self.bwd.forward_seq(xs, true)?;
        Ok((concat_cols(&f, &b), BiLstmTape { fwd: ft, bwd: bt }))
    }

    pub fn backward(&self, tape: &BiLstmTape, dy: &Tensor, grads: &mut BiLstmParams) -> Tensor {
        let hf = self.fwd.hidden();
        let (df, db) = split_cols(dy, hf);
        let mut dx = self.fwd.backward_seq(&tape.fwd, &df, &mut grads.fwd);
        dx.add_assign(&self.bwd.backward_seq(&tape.bwd, &db, &mut grads.bwd));
        dx
    }
}

impl ParamSet for BiLstmParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("fwd", self.fwd.tensors());
        v.extend(prefixed("bwd", self.bwd.tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.fwd.tensors_mut();
        v.extend(self.bwd.tensors_mut());
        v
    }
}

pub fn bilstm_forward(fwd: &LstmParams, bwd: &LstmParams, xs: &Tensor) -> Result<Tensor> {
    if xs.rows() == 0 {
        return Err(NnError::ShapeMismatch("empty input sequence".into()));
    }
    let (f, _) = fwd.forward_seq(xs, false)?;
    let (b, _) = bwd.forward_seq(xs, true)?;
    Ok(concat_cols(&f, &b))
}

pub(crate) fn concat_cols(a: &Tensor, b: &Tensor) -> Tensor {
    let rows = a.rows();
    let mut out = Tensor::zeros(&[rows, a.cols() + b.cols()]);
    for t in 0..rows {
        let r = out.row_mut(t);
        r[..a.cols()].copy_from_slice(a.row(t));
        r[a.cols()..].copy_from_slice(b.row(t));
    }
    out
}

pub(crate) fn split_cols(x: &Tensor, at: usize) -> (Tensor, Tensor) {
    let rows = x.rows();
    let mut a = Tensor::zeros(&[rows, at]);
    let mut b = Tensor::zeros(&[rows, x.cols() - at]);
    for t in 0..rows {
        a.row_mut(t).copy_from_slice(&x.row(t)[..at]);
        b.row_mut(t).copy_from_slice(&x.row(t)[at..]);
    }
    (a, b)
}
