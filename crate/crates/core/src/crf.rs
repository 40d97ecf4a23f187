//! Linear-chain CRF over the five-tag alphabet.
//!
//! A path `y` over emissions `s` scores
//! `π[y₁] + s[1][y₁] + Σ_{t≥2} (T[y_{t−1}][y_t] + s[t][y_t])`, accumulated in
//! that order everywhere (scoring, Viterbi, brute force) so equal paths get
//! bit-identical scores. Ties between best paths go to the lowest tag index,
//! decided from the last position backwards.

use rand::Rng;
use thiserror::Error;

use crate::corpus::is_whitespace;
use crate::nncore::{logsumexp, ParamSet, Tensor};
use crate::tags::{Tag, TagSequence, NUM_TAGS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrfError {
    #[error("length mismatch: {emissions} emission rows, {other} labels")]
    LengthMismatch { emissions: usize, other: usize },
    #[error("emission matrix has {found} columns, expected {expected}")]
    TagCountMismatch { expected: usize, found: usize },
    #[error("empty sequence")]
    Empty,
    #[error("no tag path satisfies the constraints")]
    NoAllowedPath,
    #[error("the gold path is forbidden by the constraints")]
    GoldPathForbidden,
    #[error("{paths} paths exceed the enumeration limit")]
    InstanceTooLarge { paths: f64 },
}

pub type Result<T> = std::result::Result<T, CrfError>;

const K: usize = NUM_TAGS;

#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    /// `transitions[a][b]`: score of tag `b` following tag `a`.
    pub transitions: Tensor,
    pub start: Tensor,
}

impl CrfParams {
    pub fn zeros() -> Self {
        CrfParams { transitions: Tensor::zeros(&[K, K]), start: Tensor::zeros(&[K]) }
    }

    pub fn random<R: Rng>(scale: f64, rng: &mut R) -> Self {
        CrfParams { transitions: Tensor::uniform(&[K, K], scale, rng), start: Tensor::uniform(&[K], scale, rng) }
    }

    #[inline]
    fn trans(&self, a: usize, b: usize) -> f64 {
        self.transitions.get(a, b)
    }

    #[inline]
    fn start(&self, k: usize) -> f64 {
        self.start.data()[k]
    }
}

impl ParamSet for CrfParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("transitions".into(), &self.transitions), ("start".into(), &self.start)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.transitions, &mut self.start]
    }
}

/// Hard constraints on tag paths. Disallowed choices score `-∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMask {
    pub allowed_start: [bool; K],
    pub allowed_end: [bool; K],
    pub allowed_transitions: [[bool; K]; K],
    /// Per-position allowed tags.
    pub positions: Vec<[bool; K]>,
}

impl ConstraintMask {
    pub fn permissive(len: usize) -> Self {
        ConstraintMask {
            allowed_start: [true; K],
            allowed_end: [true; K],
            allowed_transitions: [[true; K]; K],
            positions: vec![[true; K]; len],
        }
    }

    /// The BIESX grammar: whitespace is forced to `X`, other characters may
    /// not be `X`, and only transitions that keep `(X | S | B I* E)*` are open.
    pub fn grammar(chars: &[char]) -> Self {
        use Tag::*;
        let mut allowed_transitions = [[false; K]; K];
        for (a, b) in [(B, I), (B, E), (I, I), (I, E), (E, B), (E, S), (E, X), (S, B), (S, S), (S, X), (X, B), (X, S)] {
            allowed_transitions[a.index()][b.index()] = true;
        }
        let mut allowed_start = [false; K];
        for t in [B, S, X] {
            allowed_start[t.index()] = true;
        }
        let mut allowed_end = [false; K];
        for t in [E, S, X] {
            allowed_end[t.index()] = true;
        }
        let positions = chars
            .iter()
            .map(|&c| {
                let mut row = [!is_whitespace(c); K];
                row[X.index()] = is_whitespace(c);
                row
            })
            .collect();
        ConstraintMask { allowed_start, allowed_end, allowed_transitions, positions }
    }

    pub fn allows(&self, path: &[usize]) -> bool {
        if path.len() != self.positions.len() {
            return false;
        }
        let Some((&first, _)) = path.split_first() else { return true };
        self.allowed_start[first]
            && self.allowed_end[*path.last().unwrap()]
            && path.iter().enumerate().all(|(t, &k)| self.positions[t][k])
            && path.windows(2).all(|w| self.allowed_transitions[w[0]][w[1]])
    }
}

fn check(emissions: &Tensor, mask: Option<&ConstraintMask>) -> Result<usize> {
    let len = emissions.rows();
    if len == 0 {
        return Err(CrfError::Empty);
    }
    if emissions.cols() != K {
        return Err(CrfError::TagCountMismatch { expected: K, found: emissions.cols() });
    }
    if let Some(m) = mask {
        if m.positions.len() != len {
            return Err(CrfError::LengthMismatch { emissions: len, other: m.positions.len() });
        }
    }
    Ok(len)
}

/// Emission and start scores with the mask folded in as `-∞`.
struct Lattice {
    len: usize,
    emit: Vec<[f64; K]>,
    start: [f64; K],
    end: [f64; K],
    trans: [[f64; K]; K],
}

impl Lattice {
    fn new(emissions: &Tensor, params: &CrfParams, mask: Option<&ConstraintMask>) -> Self {
        let len = emissions.rows();
        let ninf = f64::NEG_INFINITY;
        let mut emit = vec![[0.0; K]; len];
        let mut start = [0.0; K];
        let mut end = [0.0; K];
        let mut trans = [[0.0; K]; K];
        for t in 0..len {
            for k in 0..K {
                let ok = mask.map_or(true, |m| m.positions[t][k]);
                emit[t][k] = if ok { emissions.get(t, k) } else { ninf };
            }
        }
        for k in 0..K {
            start[k] = if mask.map_or(true, |m| m.allowed_start[k]) { params.start(k) } else { ninf };
            end[k] = if mask.map_or(true, |m| m.allowed_end[k]) { 0.0 } else { ninf };
            for b in 0..K {
                trans[k][b] = if mask.map_or(true, |m| m.allowed_transitions[k][b]) { params.trans(k, b) } else { ninf };
            }
        }
        Lattice { len, emit, start, end, trans }
    }

    fn forward(&self) -> Vec<[f64; K]> {
        let mut alpha = vec![[0.0; K]; self.len];
        for k in 0..K {
            alpha[0][k] = self.start[k] + self.emit[0][k];
        }
        let mut buf = [0.0; K];
        for t in 1..self.len {
            for b in 0..K {
                for a in 0..K {
                    buf[a] = alpha[t - 1][a] + self.trans[a][b];
                }
                alpha[t][b] = logsumexp(&buf) + self.emit[t][b];
            }
        }
        alpha
    }

    fn backward(&self) -> Vec<[f64; K]> {
        let mut beta = vec![[0.0; K]; self.len];
        beta[self.len - 1] = self.end;
        let mut buf = [0.0; K];
        for t in (0..self.len - 1).rev() {
            for a in 0..K {
                for b in 0..K {
                    buf[b] = self.trans[a][b] + self.emit[t + 1][b] + beta[t + 1][b];
                }
                beta[t][a] = logsumexp(&buf);
            }
        }
        beta
    }

    fn log_partition(&self, alpha: &[[f64; K]]) -> f64 {
        let last = alpha[self.len - 1];
        let v: Vec<f64> = (0..K).map(|k| last[k] + self.end[k]).collect();
        logsumexp(&v)
    }
}

pub fn sequence_score(emissions: &Tensor, tags: &[usize], params: &CrfParams) -> Result<f64> {
    let len = emissions.rows();
    if tags.len() != len {
        return Err(CrfError::LengthMismatch { emissions: len, other: tags.len() });
    }
    if len == 0 {
        return Ok(0.0);
    }
    if emissions.cols() != K {
        return Err(CrfError::TagCountMismatch { expected: K, found: emissions.cols() });
    }
    let mut acc = params.start(tags[0]) + emissions.get(0, tags[0]);
    for t in 1..len {
        acc += params.trans(tags[t - 1], tags[t]);
        acc += emissions.get(t, tags[t]);
    }
    Ok(acc)
}

/// Log of the summed exponentiated scores of every allowed path.
pub fn log_partition(emissions: &Tensor, params: &CrfParams, mask: Option<&ConstraintMask>) -> Result<f64> {
    check(emissions, mask)?;
    let lat = Lattice::new(emissions, params, mask);
    let z = lat.log_partition(&lat.forward());
    if z == f64::NEG_INFINITY {
        return Err(CrfError::NoAllowedPath);
    }
    Ok(z)
}

/// Marginal probabilities `P(y_t = k)` for every position.
pub fn marginals(emissions: &Tensor, params: &CrfParams, mask: Option<&ConstraintMask>) -> Result<Tensor> {
    check(emissions, mask)?;
    let lat = Lattice::new(emissions, params, mask);
    let alpha = lat.forward();
    let beta = lat.backward();
    let z = lat.log_partition(&alpha);
    if z == f64::NEG_INFINITY {
        return Err(CrfError::NoAllowedPath);
    }
    let mut out = Tensor::zeros(&[lat.len, K]);
    for t in 0..lat.len {
        for k in 0..K {
            out.set(t, k, (alpha[t][k] + beta[t][k] - z).exp());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CrfLoss {
    pub loss: f64,
    /// Gradient with respect to the emission matrix.
    pub d_emissions: Tensor,
    pub grads: CrfParams,
}

/// `−log P(gold | emissions)` with gradients equal to expected minus gold
/// feature counts, from forward–backward marginals.
pub fn nll_loss(
    emissions: &Tensor,
    gold: &[usize],
    params: &CrfParams,
    mask: Option<&ConstraintMask>,
) -> Result<CrfLoss> {
    let len = check(emissions, mask)?;
    if gold.len() != len {
        return Err(CrfError::LengthMismatch { emissions: len, other: gold.len() });
    }
    if let Some(m) = mask {
        if !m.allows(gold) {
            return Err(CrfError::GoldPathForbidden);
        }
    }
    let lat = Lattice::new(emissions, params, mask);
    let alpha = lat.forward();
    let beta = lat.backward();
    let z = lat.log_partition(&alpha);
    let gold_score = sequence_score(emissions, gold, params)?;

    let mut d_emissions = Tensor::zeros(&[len, K]);
    let mut grads = CrfParams::zeros();
    for t in 0..len {
        for k in 0..K {
            let p = (alpha[t][k] + beta[t][k] - z).exp();
            d_emissions.set(t, k, p);
            if t == 0 {
                grads.start.data_mut()[k] += p;
            }
        }
    }
    for t in 1..len {
        for a in 0..K {
            if alpha[t - 1][a] == f64::NEG_INFINITY {
                continue;
            }
            for b in 0..K {
                let lp = alpha[t - 1][a] + lat.trans[a][b] + lat.emit[t][b] + beta[t][b] - z;
                let p = lp.exp();
                let cur = grads.transitions.get(a, b);
                grads.transitions.set(a, b, cur + p);
            }
        }
    }
    for (t, &k) in gold.iter().enumerate() {
        let cur = d_emissions.get(t, k);
        d_emissions.set(t, k, cur - 1.0);
        if t > 0 {
            let a = gold[t - 1];
            let cur = grads.transitions.get(a, k);
            grads.transitions.set(a, k, cur - 1.0);
        }
    }
    grads.start.data_mut()[gold[0]] -= 1.0;
    Ok(CrfLoss { loss: (z - gold_score).max(0.0), d_emissions, grads })
}

/// Highest-scoring allowed path by max-product dynamic programming.
pub fn viterbi_decode(
    emissions: &Tensor,
    params: &CrfParams,
    mask: Option<&ConstraintMask>,
) -> Result<(TagSequence, f64)> {
    let len = check(emissions, mask)?;
    let lat = Lattice::new(emissions, params, mask);
    let mut delta = vec![[0.0; K]; len];
    let mut back = vec![[0usize; K]; len];
    for k in 0..K {
        delta[0][k] = lat.start[k] + lat.emit[0][k];
    }
    for t in 1..len {
        for b in 0..K {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for a in 0..K {
                let v = delta[t - 1][a] + lat.trans[a][b];
                if v > best {
                    best = v;
                    arg = a;
                }
            }
            delta[t][b] = best + lat.emit[t][b];
            back[t][b] = arg;
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for k in 0..K {
        let v = delta[len - 1][k] + lat.end[k];
        if v > best {
            best = v;
            last = k;
        }
    }
    if best == f64::NEG_INFINITY {
        return Err(CrfError::NoAllowedPath);
    }
    let mut path = vec![0; len];
    path[len - 1] = last;
    for t in (1..len).rev() {
        path[t - 1] = back[t][path[t]];
    }
    let tags = TagSequence::from_indices(&path).expect("indices below K");
    Ok((tags, delta[len - 1][last]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForce {
    pub best_path: Vec<usize>,
    pub best_score: f64,
    pub log_partition: f64,
}

pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// Exhaustive enumeration of every allowed path. Testing oracle.
pub fn brute_force_paths(
    emissions: &Tensor,
    params: &CrfParams,
    mask: Option<&ConstraintMask>,
) -> Result<BruteForce> {
    let len = check(emissions, mask)?;
    let paths = (K as f64).powi(len as i32);
    if paths > BRUTE_FORCE_LIMIT {
        return Err(CrfError::InstanceTooLarge { paths });
    }
    let mut path = vec![0usize; len];
    let mut best_path: Option<Vec<usize>> = None;
    let mut best_score = f64::NEG_INFINITY;
    let mut scores = Vec::new();
    loop {
        if mask.map_or(true, |m| m.allows(&path)) {
            let s = sequence_score(emissions, &path, params)?;
            scores.push(s);
            let better = match &best_path {
                None => true,
                Some(bp) => s > best_score || (s == best_score && reverse_lex_less(&path, bp)),
            };
            if better {
                best_score = s;
                best_path = Some(path.clone());
            }
        }
        // odometer increment, position 0 fastest
        let mut t = 0;
        loop {
            if t == len {
                let best_path = best_path.ok_or(CrfError::NoAllowedPath)?;
                return Ok(BruteForce { best_path, best_score, log_partition: logsumexp(&scores) });
            }
            path[t] += 1;
            if path[t] < K {
                break;
            }
            path[t] = 0;
            t += 1;
        }
    }
}

fn reverse_lex_less(a: &[usize], b: &[usize]) -> bool {
    a.iter().rev().cmp(b.iter().rev()) == std::cmp::Ordering::Less
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{grad_check, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_emissions<R: Rng>(len: usize, rng: &mut R) -> Tensor {
        Tensor::uniform(&[len, K], 2.0, rng)
    }

    #[test]
    fn score_without_transitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = random_emissions(1, &mut rng);
        let s = sequence_score(&e, &[3], &CrfParams::zeros()).unwrap();
        assert_eq!(s, e.get(0, 3));
        let z = Tensor::zeros(&[4, K]);
        assert_eq!(sequence_score(&z, &[0, 1, 2, 4], &CrfParams::zeros()).unwrap(), 0.0);
        assert!(sequence_score(&z, &[0, 1], &CrfParams::zeros()).is_err());
    }

    #[test]
    fn score_term_by_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = random_emissions(4, &mut rng);
        let p = CrfParams::random(1.0, &mut rng);
        let y = [2, 0, 4, 1];
        let mut expected = p.start.data()[2];
        expected += e.get(0, 2) + e.get(1, 0) + e.get(2, 4) + e.get(3, 1);
        expected += p.transitions.get(2, 0) + p.transitions.get(0, 4) + p.transitions.get(4, 1);
        assert!((sequence_score(&e, &y, &p).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn uniform_partition() {
        let p = CrfParams::zeros();
        assert!((log_partition(&Tensor::zeros(&[1, K]), &p, None).unwrap() - 5f64.ln()).abs() < 1e-14);
        assert!((log_partition(&Tensor::zeros(&[2, K]), &p, None).unwrap() - 25f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn zero_scores_decode_to_all_b() {
        let (tags, score) = viterbi_decode(&Tensor::zeros(&[4, K]), &CrfParams::zeros(), None).unwrap();
        assert_eq!(tags.to_string(), "BBBB");
        assert_eq!(score, 0.0);
    }

    #[test]
    fn factorized_decode_is_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = random_emissions(6, &mut rng);
        let (tags, _) = viterbi_decode(&e, &CrfParams::zeros(), None).unwrap();
        for t in 0..6 {
            let row = e.row(t);
            let arg = (0..K).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
            assert_eq!(tags.indices()[t], arg);
        }
    }

    #[test]
    fn uniform_loss_single_position() {
        let r = nll_loss(&Tensor::zeros(&[1, K]), &[2], &CrfParams::zeros(), None).unwrap();
        assert!((r.loss - 5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn peaked_emissions_give_zero_loss() {
        let gold = [0, 1, 2, 3, 4];
        let mut e = Tensor::zeros(&[5, K]);
        for (t, &k) in gold.iter().enumerate() {
            e.set(t, k, 50.0);
        }
        let r = nll_loss(&e, &gold, &CrfParams::zeros(), None).unwrap();
        assert!(r.loss < 1e-8, "{}", r.loss);
    }

    #[test]
    fn single_allowed_path() {
        let chars: Vec<char> = "a b".chars().collect();
        let mut mask = ConstraintMask::grammar(&chars);
        // only S X S remains once B is removed everywhere
        for row in mask.positions.iter_mut() {
            row[Tag::B.index()] = false;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = random_emissions(3, &mut rng);
        let p = CrfParams::random(1.0, &mut rng);
        let bf = brute_force_paths(&e, &p, Some(&mask)).unwrap();
        assert_eq!(bf.best_path, vec![3, 4, 3]);
        let z = log_partition(&e, &p, Some(&mask)).unwrap();
        assert!((z - bf.best_score).abs() < 1e-12);
        let r = nll_loss(&e, &[3, 4, 3], &p, Some(&mask)).unwrap();
        assert!(r.loss.abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let mut mask = ConstraintMask::permissive(2);
        mask.positions[1] = [false; K];
        let e = Tensor::zeros(&[2, K]);
        assert_eq!(log_partition(&e, &CrfParams::zeros(), Some(&mask)), Err(CrfError::NoAllowedPath));
        assert_eq!(viterbi_decode(&e, &CrfParams::zeros(), Some(&mask)).unwrap_err(), CrfError::NoAllowedPath);
        let grammar = ConstraintMask::grammar(&['a', 'b']);
        assert_eq!(
            nll_loss(&e, &[4, 4], &CrfParams::zeros(), Some(&grammar)).unwrap_err(),
            CrfError::GoldPathForbidden
        );
        assert!(matches!(
            brute_force_paths(&Tensor::zeros(&[11, K]), &CrfParams::zeros(), None),
            Err(CrfError::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn grammar_mask_decodes_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let chars: Vec<char> = "ab cde f gh".chars().collect();
        let mask = ConstraintMask::grammar(&chars);
        for _ in 0..50 {
            let e = Tensor::uniform(&[chars.len(), K], 5.0, &mut rng);
            let p = CrfParams::random(2.0, &mut rng);
            let (tags, _) = viterbi_decode(&e, &p, Some(&mask)).unwrap();
            assert!(tags.is_well_formed(), "{tags}");
            for (c, t) in chars.iter().zip(tags.iter()) {
                assert_eq!(*c == ' ', *t == Tag::X);
            }
        }
    }

    #[derive(Clone)]
    struct Wrap(CrfParams, Tensor);

    impl ParamSet for Wrap {
        fn tensors(&self) -> Vec<(String, &Tensor)> {
            let mut v = self.0.tensors();
            v.push(("emissions".into(), &self.1));
            v
        }
        fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
            let mut v = self.0.tensors_mut();
            v.push(&mut self.1);
            v
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let e = random_emissions(5, &mut rng);
        let p = CrfParams::random(1.0, &mut rng);
        let gold = [0, 2, 3, 1, 4];
        let r = nll_loss(&e, &gold, &p, None).unwrap();
        let report = grad_check(
            &Wrap(p, e),
            &Wrap(r.grads, r.d_emissions),
            |w: &Wrap| nll_loss(&w.1, &gold, &w.0, None).unwrap().loss,
            &GradCheckConfig { tolerance: 1e-6, samples_per_tensor: 100, ..Default::default() },
        );
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn masked_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let chars: Vec<char> = "ab c".chars().collect();
        let mask = ConstraintMask::grammar(&chars);
        let e = random_emissions(4, &mut rng);
        let p = CrfParams::random(1.0, &mut rng);
        let gold = [0, 2, 4, 3];
        let r = nll_loss(&e, &gold, &p, Some(&mask)).unwrap();
        let report = grad_check(
            &Wrap(p, e),
            &Wrap(r.grads, r.d_emissions),
            |w: &Wrap| nll_loss(&w.1, &gold, &w.0, Some(&mask)).unwrap().loss,
            &GradCheckConfig { tolerance: 1e-6, samples_per_tensor: 100, ..Default::default() },
        );
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let e = random_emissions(4, &mut rng);
        let p = CrfParams::random(1.0, &mut rng);
        let z = log_partition(&e, &p, None).unwrap();
        let mut total = 0.0;
        let mut path = [0usize; 4];
        for code in 0..K.pow(4) {
            let mut c = code;
            for slot in path.iter_mut() {
                *slot = c % K;
                c /= K;
            }
            let pr = (sequence_score(&e, &path, &p).unwrap() - z).exp();
            assert!(pr > 0.0 && pr <= 1.0);
            total += pr;
        }
        assert!((total - 1.0).abs() < 1e-8);
        let m = marginals(&e, &p, None).unwrap();
        for t in 0..4 {
            assert!((m.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
