//! Character n-gram vocabularies and per-character input features.
//!
//! Every whitespace-delimited token is read as a sequence of anchored
//! n-grams: at position `i` the n-gram is `c_i .. c_{i+n-1}`, right-padded
//! with a filler symbol when it runs past the token end. The filler is an
//! ordinary vocabulary symbol with its own learned embedding.
//!
//! A token's subword vector concatenates the final forward state and the
//! first backward state of a character-level BiLSTM run over the stacked
//! n-gram embeddings of its positions.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{is_whitespace, whitespace_runs, Sentence};
use crate::nncore::{prefixed, BiLstmParams, BiLstmTape, ParamSet, Tensor};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
/// Unigram id of whitespace characters.
pub const SPACE: u32 = 2;
const RESERVED: u32 = 3;

/// Right-padding symbol for n-grams that run past the token end
/// (a private-use code point).
pub const FILLER: char = '\u{E000}';

pub const MAX_N: usize = 4;

#[derive(Debug, Error)]
pub enum SubwordError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("embedder does not match the vocabulary: {0}")]
    UninitializedEmbedder(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("vocab file line {line}: {reason}")]
    BadVocabFile { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SubwordError>;

/// Contiguous n-grams of `token`; a single padded n-gram when the token is
/// shorter than `n`.
pub fn extract_ngrams(token: &[char], n: usize) -> Vec<String> {
    assert!((1..=MAX_N).contains(&n), "n-gram order must be 1..=4");
    if token.len() < n {
        let mut g: String = token.iter().collect();
        g.extend(std::iter::repeat(FILLER).take(n - token.len()));
        return vec![g];
    }
    token.windows(n).map(|w| w.iter().collect()).collect()
}

/// The n-gram anchored at every position of `token`, right-padded.
pub fn anchored_ngrams(token: &[char], n: usize) -> Vec<String> {
    (0..token.len())
        .map(|i| {
            (0..n)
                .map(|k| token.get(i + k).copied().unwrap_or(FILLER))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Table {
    ids: HashMap<String, u32>,
    /// `(ngram, frequency)` indexed by `id - RESERVED`.
    entries: Vec<(String, u64)>,
}

impl Table {
    fn size(&self) -> usize {
        RESERVED as usize + self.entries.len()
    }
}

/// Frozen n-gram → id maps for n = 1..=4. Ids 0, 1, 2 are reserved for the
/// filler-only n-gram, unknown n-grams and whitespace.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramVocab {
    tables: [Table; MAX_N],
    min_freq: [u64; MAX_N],
}

pub const DEFAULT_MIN_FREQ: [u64; MAX_N] = [1, 2, 2, 2];

/// Counts anchored n-grams over the whitespace-delimited tokens of `corpus`
/// and keeps those seen at least `min_freq[n-1]` times. Ids follow first
/// occurrence, so the result depends only on corpus order.
pub fn build_vocab<'a>(corpus: impl IntoIterator<Item = &'a Sentence>, min_freq: [u64; MAX_N]) -> Result<NgramVocab> {
    let mut counts: [Vec<(String, u64)>; MAX_N] = Default::default();
    let mut index: [HashMap<String, usize>; MAX_N] = Default::default();
    let mut any = false;
    for sentence in corpus {
        for (a, b) in whitespace_runs(&sentence.chars) {
            any = true;
            let token = &sentence.chars[a..b];
            for n in 1..=MAX_N {
                for g in anchored_ngrams(token, n) {
                    match index[n - 1].get(&g) {
                        Some(&i) => counts[n - 1][i].1 += 1,
                        None => {
                            index[n - 1].insert(g.clone(), counts[n - 1].len());
                            counts[n - 1].push((g, 1));
                        }
                    }
                }
            }
        }
    }
    if !any {
        return Err(SubwordError::EmptyCorpus);
    }
    let mut tables: [Table; MAX_N] = Default::default();
    for n in 0..MAX_N {
        for (g, f) in std::mem::take(&mut counts[n]) {
            if f >= min_freq[n] {
                let id = RESERVED + tables[n].entries.len() as u32;
                tables[n].ids.insert(g.clone(), id);
                tables[n].entries.push((g, f));
            }
        }
    }
    Ok(NgramVocab { tables, min_freq })
}

const VOCAB_HEADER: &str = "#sgnws-vocab\tv1";

impl NgramVocab {
    pub fn lookup(&self, n: usize, ngram: &str) -> u32 {
        if ngram.chars().all(|c| c == FILLER) {
            return PAD;
        }
        self.tables[n - 1].ids.get(ngram).copied().unwrap_or(UNK)
    }

    /// Number of ids (reserved included) for order `n`.
    pub fn size(&self, n: usize) -> usize {
        self.tables[n - 1].size()
    }

    pub fn min_freq(&self) -> [u64; MAX_N] {
        self.min_freq
    }

    pub fn entries(&self, n: usize) -> impl Iterator<Item = (&str, u32, u64)> {
        self.tables[n - 1]
            .entries
            .iter()
            .enumerate()
            .map(|(i, (g, f))| (g.as_str(), RESERVED + i as u32, *f))
    }

    /// Ids of the anchored n-grams at every position of `token`.
    pub fn token_ids(&self, token: &[char], n: usize) -> Vec<u32> {
        anchored_ngrams(token, n).iter().map(|g| self.lookup(n, g)).collect()
    }

    /// Canonical text form:
    /// a header line, then `<n>\t<ngram>\t<id>\t<freq>` per entry.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mf: Vec<String> = self.min_freq.iter().map(u64::to_string).collect();
        writeln!(out, "{VOCAB_HEADER}\tmin_freq={}", mf.join(",")).unwrap();
        for n in 1..=MAX_N {
            for (g, id, f) in self.entries(n) {
                writeln!(out, "{n}\t{g}\t{id}\t{f}").unwrap();
            }
        }
        out
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let bad = |line: usize, reason: &str| SubwordError::BadVocabFile { line, reason: reason.to_string() };
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad(1, "missing header"))??;
        let rest = header.strip_prefix(VOCAB_HEADER).ok_or_else(|| bad(1, "unknown header"))?;
        let mf = rest.trim_start_matches('\t').strip_prefix("min_freq=").ok_or_else(|| bad(1, "missing min_freq"))?;
        let parsed: Vec<u64> = mf
            .split(',')
            .map(|s| s.parse::<u64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(1, "bad min_freq"))?;
        let min_freq: [u64; MAX_N] = parsed.try_into().map_err(|_| bad(1, "min_freq needs four values"))?;
        let mut tables: [Table; MAX_N] = Default::default();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line?;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad(lineno, "expected four tab-separated fields"));
            }
            let n: usize = fields[0].parse().map_err(|_| bad(lineno, "bad order"))?;
            if !(1..=MAX_N).contains(&n) {
                return Err(bad(lineno, "order out of range"));
            }
            let id: u32 = fields[2].parse().map_err(|_| bad(lineno, "bad id"))?;
            let freq: u64 = fields[3].parse().map_err(|_| bad(lineno, "bad frequency"))?;
            let gram = fields[1].to_string();
            if gram.chars().count() != n {
                return Err(bad(lineno, "n-gram length does not match its order"));
            }
            let table = &mut tables[n - 1];
            if id != RESERVED + table.entries.len() as u32 {
                return Err(bad(lineno, "ids must be dense and ascending"));
            }
            if table.ids.insert(gram.clone(), id).is_some() {
                return Err(bad(lineno, "duplicate n-gram"));
            }
            table.entries.push((gram, freq));
        }
        Ok(NgramVocab { tables, min_freq })
    }

    /// SHA-256 of the canonical text form, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            write!(s, "{b:02x}").unwrap();
            s
        })
    }
}

/// Which inputs feed the tagger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSet {
    /// Highest n-gram order used, 1..=4.
    pub max_n: usize,
    /// Whether the composed subword vector is appended.
    pub subword: bool,
}

impl FeatureSet {
    pub fn width(&self, d_emb: usize) -> usize {
        self.max_n * d_emb + if self.subword { 2 * d_emb } else { 0 }
    }
}

/// Embedding tables (one per n-gram order in use) and the subword composer.
#[derive(Debug, Clone, PartialEq)]
pub struct SubwordEmbedder {
    pub tables: Vec<Tensor>,
    pub composer: Option<BiLstmParams>,
}

const TABLE_NAMES: [&str; MAX_N] = ["unigram", "bigram", "trigram", "fourgram"];

impl SubwordEmbedder {
    pub fn init<R: Rng>(vocab: &NgramVocab, features: FeatureSet, d_emb: usize, rng: &mut R) -> Self {
        let tables = (1..=features.max_n)
            .map(|n| Tensor::uniform(&[vocab.size(n), d_emb], 0.1, rng))
            .collect();
        let composer = features
            .subword
            .then(|| BiLstmParams::init(features.max_n * d_emb, d_emb, rng));
        SubwordEmbedder { tables, composer }
    }

    pub fn zeros(vocab: &NgramVocab, features: FeatureSet, d_emb: usize) -> Self {
        let tables = (1..=features.max_n).map(|n| Tensor::zeros(&[vocab.size(n), d_emb])).collect();
        let composer = features.subword.then(|| BiLstmParams::zeros(features.max_n * d_emb, d_emb));
        SubwordEmbedder { tables, composer }
    }

    pub fn d_emb(&self) -> usize {
        self.tables[0].cols()
    }

    pub fn features(&self) -> FeatureSet {
        FeatureSet { max_n: self.tables.len(), subword: self.composer.is_some() }
    }

    pub fn width(&self) -> usize {
        self.features().width(self.d_emb())
    }

    fn check(&self, vocab: &NgramVocab) -> Result<()> {
        if self.tables.is_empty() || self.tables.len() > MAX_N {
            return Err(SubwordError::UninitializedEmbedder("no embedding tables".into()));
        }
        for (i, t) in self.tables.iter().enumerate() {
            if t.rows() != vocab.size(i + 1) || t.cols() != self.d_emb() {
                return Err(SubwordError::UninitializedEmbedder(format!(
                    "{} table is {:?}, vocab has {} ids",
                    TABLE_NAMES[i],
                    t.shape(),
                    vocab.size(i + 1)
                )));
            }
        }
        if let Some(c) = &self.composer {
            if c.fwd.input() != self.tables.len() * self.d_emb() || c.hidden() != self.d_emb() {
                return Err(SubwordError::UninitializedEmbedder("composer shape".into()));
            }
        }
        Ok(())
    }

    /// Stacked n-gram embeddings of one position.
    fn gather(&self, ids: &[u32], out: &mut [f64]) {
        let d = self.d_emb();
        for (n, &id) in ids.iter().enumerate() {
            out[n * d..(n + 1) * d].copy_from_slice(self.tables[n].row(id as usize));
        }
    }

    fn scatter(&self, ids: &[u32], grad: &[f64], grads: &mut SubwordEmbedder) {
        let d = self.d_emb();
        for (n, &id) in ids.iter().enumerate() {
            let row = grads.tables[n].row_mut(id as usize);
            for (g, v) in row.iter_mut().zip(&grad[n * d..(n + 1) * d]) {
                *g += v;
            }
        }
    }

    fn position_ids(&self, vocab: &NgramVocab, token: &[char]) -> Vec<Vec<u32>> {
        let per_n: Vec<Vec<u32>> = (1..=self.tables.len()).map(|n| vocab.token_ids(token, n)).collect();
        (0..token.len()).map(|i| per_n.iter().map(|v| v[i]).collect()).collect()
    }

    fn compose_ids(&self, ids: &[Vec<u32>]) -> Option<(Vec<f64>, ComposeTape)> {
        let composer = self.composer.as_ref()?;
        let width = self.tables.len() * self.d_emb();
        let mut xs = Tensor::zeros(&[ids.len(), width]);
        for (t, pos) in ids.iter().enumerate() {
            self.gather(pos, xs.row_mut(t));
        }
        let (y, tape) = composer.forward(&xs).expect("composer input width checked");
        let d = composer.hidden();
        let last = ids.len() - 1;
        let mut emb = Vec::with_capacity(2 * d);
        emb.extend_from_slice(&y.row(last)[..d]);
        emb.extend_from_slice(&y.row(0)[d..]);
        Some((emb, ComposeTape { ids: ids.to_vec(), tape }))
    }

    fn compose_backward(&self, tape: &ComposeTape, d_emb_s: &[f64], grads: &mut SubwordEmbedder) {
        let composer = self.composer.as_ref().expect("composer present");
        let d = composer.hidden();
        let len = tape.ids.len();
        let mut dy = Tensor::zeros(&[len, 2 * d]);
        dy.row_mut(len - 1)[..d].copy_from_slice(&d_emb_s[..d]);
        for (g, v) in dy.row_mut(0)[d..].iter_mut().zip(&d_emb_s[d..]) {
            *g += v;
        }
        let dx = composer.backward(&tape.tape, &dy, grads.composer.as_mut().expect("composer grads"));
        for (t, pos) in tape.ids.iter().enumerate() {
            self.scatter(pos, dx.row(t), grads);
        }
    }
}

impl ParamSet for SubwordEmbedder {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v: Vec<(String, &Tensor)> =
            self.tables.iter().enumerate().map(|(i, t)| (TABLE_NAMES[i].to_string(), t)).collect();
        if let Some(c) = &self.composer {
            v.extend(prefixed("composer", c.tensors()));
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.tables.iter_mut().collect();
        if let Some(c) = &mut self.composer {
            v.extend(c.tensors_mut());
        }
        v
    }
}

#[derive(Debug, Clone)]
struct ComposeTape {
    ids: Vec<Vec<u32>>,
    tape: BiLstmTape,
}

/// Composed subword vector of one token, `2 · d_emb` wide.
pub fn compose_subword(token: &[char], vocab: &NgramVocab, embedder: &SubwordEmbedder) -> Result<Vec<f64>> {
    embedder.check(vocab)?;
    if embedder.composer.is_none() {
        return Err(SubwordError::UninitializedEmbedder("no subword composer".into()));
    }
    if token.is_empty() {
        return Err(SubwordError::LengthMismatch("empty token".into()));
    }
    let ids = embedder.position_ids(vocab, token);
    Ok(embedder.compose_ids(&ids).expect("composer present").0)
}

/// Everything needed to push feature gradients back into the embedder.
#[derive(Debug, Clone)]
pub struct FeatureTape {
    ids: Vec<Option<Vec<u32>>>,
    chunks: Vec<((usize, usize), ComposeTape)>,
}

/// Input matrix of a sentence, one row per character:
/// `[E¹(c_t) ; E²(t) ; E³(t) ; E⁴(t) ; Emb_S(token ∋ t)]`, restricted to the
/// embedder's feature set. Whitespace rows use the SPACE unigram, filler
/// n-grams and a zero subword vector.
pub fn char_features(sentence: &Sentence, vocab: &NgramVocab, embedder: &SubwordEmbedder) -> Result<Tensor> {
    Ok(char_features_taped(&sentence.chars, vocab, embedder)?.0)
}

pub fn char_features_taped(
    chars: &[char],
    vocab: &NgramVocab,
    embedder: &SubwordEmbedder,
) -> Result<(Tensor, FeatureTape)> {
    embedder.check(vocab)?;
    let d = embedder.d_emb();
    let max_n = embedder.tables.len();
    let width = embedder.width();
    let mut out = Tensor::zeros(&[chars.len(), width]);
    let mut ids: Vec<Option<Vec<u32>>> = vec![None; chars.len()];
    let mut chunks = Vec::new();
    let mut space_ids = vec![PAD; max_n];
    space_ids[0] = SPACE;
    for (t, &c) in chars.iter().enumerate() {
        if is_whitespace(c) {
            embedder.gather(&space_ids, &mut out.row_mut(t)[..max_n * d]);
            ids[t] = Some(space_ids.clone());
        }
    }
    for (a, b) in whitespace_runs(chars) {
        let pos = embedder.position_ids(vocab, &chars[a..b]);
        for (k, p) in pos.iter().enumerate() {
            embedder.gather(p, &mut out.row_mut(a + k)[..max_n * d]);
        }
        if let Some((emb, tape)) = embedder.compose_ids(&pos) {
            for t in a..b {
                out.row_mut(t)[max_n * d..].copy_from_slice(&emb);
            }
            chunks.push(((a, b), tape));
        }
        for (k, p) in pos.into_iter().enumerate() {
            ids[a + k] = Some(p);
        }
    }
    if ids.iter().any(Option::is_none) {
        return Err(SubwordError::LengthMismatch("feature rows do not cover the sentence".into()));
    }
    Ok((out, FeatureTape { ids, chunks }))
}

/// Accumulates the gradient of the feature matrix into `grads`.
pub fn char_features_backward(
    embedder: &SubwordEmbedder,
    tape: &FeatureTape,
    d_features: &Tensor,
    grads: &mut SubwordEmbedder,
) {
    let d = embedder.d_emb();
    let base = embedder.tables.len() * d;
    for (t, ids) in tape.ids.iter().enumerate() {
        let ids = ids.as_ref().expect("every row has ids");
        embedder.scatter(ids, &d_features.row(t)[..base], grads);
    }
    for ((a, b), ct) in &tape.chunks {
        let mut d_emb_s = vec![0.0; 2 * d];
        for t in *a..*b {
            for (acc, v) in d_emb_s.iter_mut().zip(&d_features.row(t)[base..]) {
                *acc += v;
            }
        }
        embedder.compose_backward(ct, &d_emb_s, grads);
    }
}
