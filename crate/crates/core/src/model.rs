//! Tagger assembly, training loop and checkpoints.
//!
//! Layer order for every variant:
//!
//! ```text
//! features → dropout → recurrent encoder → dropout → dense hidden layer (tanh)
//!          → [self-attention] → output projection (5 scores) → CRF | softmax
//! ```
//!
//! Only `sgnws` has the attention layer, and it always has it.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError, TrainingInfo};
use crate::corpus::{normalize_line, segmentation_from_tags, CorpusError, Labeled, Segmentation};
use crate::crf::{nll_loss, viterbi_decode, ConstraintMask, CrfError, CrfParams};
use crate::eval::{tag_prf, token_counts, Counts, EvalError, MetricsReport};
use crate::nncore::{
    clip_global_norm, logsumexp, prefixed, Adamax, AdamaxConfig, AttentionParams, AttentionTape, BiLstmParams,
    BiLstmTape, DenseParams, DenseTape, DropoutMask, LstmParams, LstmTape, NnError, ParamSet, Tensor,
};
use crate::subword::{
    char_features_backward, char_features_taped, FeatureSet, FeatureTape, NgramVocab, SubwordEmbedder, SubwordError,
};
use crate::tags::{TagSequence, NUM_TAGS};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("length mismatch: {chars} characters, {tags} tags")]
    LengthMismatch { chars: usize, tags: usize },
    #[error("vocabulary hash {found} does not match the checkpoint's {expected}")]
    VocabMismatch { expected: String, found: String },
    #[error("non-finite gradient in {tensor} (epoch {epoch}, step {step})")]
    NonFiniteGradient { tensor: String, epoch: usize, step: usize },
    #[error("training set is empty")]
    EmptyTrain,
    #[error("dev set is empty")]
    EmptyDev,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Subword(#[from] SubwordError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    LstmSoftmax,
    BilstmSoftmax,
    BilstmCrf,
    BilstmCrfChar,
    BilstmCrfBigram,
    BilstmCrfTrigram,
    Sgnws,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::LstmSoftmax,
        Variant::BilstmSoftmax,
        Variant::BilstmCrf,
        Variant::BilstmCrfChar,
        Variant::BilstmCrfBigram,
        Variant::BilstmCrfTrigram,
        Variant::Sgnws,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::LstmSoftmax => "lstm_softmax",
            Variant::BilstmSoftmax => "bilstm_softmax",
            Variant::BilstmCrf => "bilstm_crf",
            Variant::BilstmCrfChar => "bilstm_crf_char",
            Variant::BilstmCrfBigram => "bilstm_crf_bigram",
            Variant::BilstmCrfTrigram => "bilstm_crf_trigram",
            Variant::Sgnws => "sgnws",
        }
    }

    pub fn uses_crf(self) -> bool {
        !matches!(self, Variant::LstmSoftmax | Variant::BilstmSoftmax)
    }

    pub fn bidirectional(self) -> bool {
        self != Variant::LstmSoftmax
    }

    pub fn features(self, use_4grams: bool) -> FeatureSet {
        let (max_n, subword) = match self {
            Variant::LstmSoftmax | Variant::BilstmSoftmax | Variant::BilstmCrf => (1, false),
            Variant::BilstmCrfChar => (1, true),
            Variant::BilstmCrfBigram => (2, true),
            Variant::BilstmCrfTrigram => (3, true),
            Variant::Sgnws => (if use_4grams { 4 } else { 3 }, true),
        };
        FeatureSet { max_n, subword }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| ModelError::BadConfig(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adamax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub d_emb: usize,
    /// Hidden size of each encoder direction, the dense layer and attention.
    pub hidden: usize,
    pub dropout: f64,
    pub lr: f64,
    pub grad_clip: f64,
    pub epochs: usize,
    pub optimizer: Optimizer,
    pub use_attention: bool,
    pub use_4grams: bool,
    pub use_start_scores: bool,
    pub constrained_decode: bool,
    pub batch_size: usize,
    pub seed: u64,
    pub num_layers: usize,
    /// Multiplies the learning rate after every epoch; 1 disables decay.
    pub lr_decay: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::for_variant(Variant::Sgnws)
    }
}

/// Config keys in canonical order, shared by config files and flag dumps.
pub const CONFIG_KEYS: [&str; 16] = [
    "variant",
    "d_emb",
    "hidden",
    "dropout",
    "lr",
    "grad_clip",
    "epochs",
    "optimizer",
    "use_attention",
    "use_4grams",
    "use_start_scores",
    "constrained_decode",
    "batch_size",
    "seed",
    "num_layers",
    "lr_decay",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| ModelError::BadConfig(format!("invalid value {value:?} for {key}")))
}

impl ModelConfig {
    /// Defaults with the variant-dependent switches set consistently.
    pub fn for_variant(variant: Variant) -> Self {
        ModelConfig {
            variant,
            d_emb: 64,
            hidden: 200,
            dropout: 0.25,
            lr: 0.025,
            grad_clip: 5.0,
            epochs: 40,
            optimizer: Optimizer::Adamax,
            use_attention: variant == Variant::Sgnws,
            use_4grams: true,
            use_start_scores: variant.uses_crf(),
            constrained_decode: variant.uses_crf(),
            batch_size: 1,
            seed: 1,
            num_layers: 1,
            lr_decay: 1.0,
        }
    }

    pub fn features(&self) -> FeatureSet {
        self.variant.features(self.use_4grams)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::BadConfig(m));
        for (name, v) in [
            ("d_emb", self.d_emb),
            ("hidden", self.hidden),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("num_layers", self.num_layers),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, v) in [("lr", self.lr), ("grad_clip", self.grad_clip)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        let sgnws = self.variant == Variant::Sgnws;
        if self.use_attention != sgnws {
            return bad(if sgnws {
                "sgnws always has its attention layer".into()
            } else {
                format!("{} has no attention layer", self.variant)
            });
        }
        if !self.variant.uses_crf() && (self.use_start_scores || self.constrained_decode) {
            return bad(format!("{} has no CRF; use_start_scores and constrained_decode must be false", self.variant));
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "variant" => self.variant.to_string(),
            "d_emb" => self.d_emb.to_string(),
            "hidden" => self.hidden.to_string(),
            "dropout" => self.dropout.to_string(),
            "lr" => self.lr.to_string(),
            "grad_clip" => self.grad_clip.to_string(),
            "epochs" => self.epochs.to_string(),
            "optimizer" => "adamax".into(),
            "use_attention" => self.use_attention.to_string(),
            "use_4grams" => self.use_4grams.to_string(),
            "use_start_scores" => self.use_start_scores.to_string(),
            "constrained_decode" => self.constrained_decode.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "seed" => self.seed.to_string(),
            "num_layers" => self.num_layers.to_string(),
            "lr_decay" => self.lr_decay.to_string(),
            _ => return None,
        })
    }

    /// Sets one field from its textual form. Changing `variant` does not
    /// touch the other fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "variant" => self.variant = value.trim().parse()?,
            "d_emb" => self.d_emb = parse_value(key, value)?,
            "hidden" => self.hidden = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "grad_clip" => self.grad_clip = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "optimizer" => {
                if value.trim() != "adamax" {
                    return Err(ModelError::BadConfig(format!("unsupported optimizer {value:?}")));
                }
            }
            "use_attention" => self.use_attention = parse_value(key, value)?,
            "use_4grams" => self.use_4grams = parse_value(key, value)?,
            "use_start_scores" => self.use_start_scores = parse_value(key, value)?,
            "constrained_decode" => self.constrained_decode = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "num_layers" => self.num_layers = parse_value(key, value)?,
            "lr_decay" => self.lr_decay = parse_value(key, value)?,
            _ => return Err(ModelError::BadConfig(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// `key=value` lines in canonical order.
    pub fn to_kv(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("known key")))
            .collect()
    }
}

/// Parses `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ModelError::BadConfig(format!("line {}: expected key=value", i + 1)))?;
        let k = k.trim();
        if !CONFIG_KEYS.contains(&k) {
            return Err(ModelError::BadConfig(format!("line {}: unknown config key {k:?}", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Recurrent {
    Uni(LstmParams),
    Bi(BiLstmParams),
}

#[derive(Debug, Clone)]
enum RecurrentTape {
    Uni(LstmTape),
    Bi(BiLstmTape),
}

impl Recurrent {
    pub fn output_width(&self) -> usize {
        match self {
            Recurrent::Uni(p) => p.hidden(),
            Recurrent::Bi(p) => p.output_width(),
        }
    }

    fn forward(&self, xs: &Tensor) -> Result<(Tensor, RecurrentTape)> {
        Ok(match self {
            Recurrent::Uni(p) => {
                let (h, t) = p.forward_seq(xs, false)?;
                (h, RecurrentTape::Uni(t))
            }
            Recurrent::Bi(p) => {
                let (h, t) = p.forward(xs)?;
                (h, RecurrentTape::Bi(t))
            }
        })
    }

    fn backward(&self, tape: &RecurrentTape, dy: &Tensor, grads: &mut Recurrent) -> Tensor {
        match (self, tape, grads) {
            (Recurrent::Uni(p), RecurrentTape::Uni(t), Recurrent::Uni(g)) => p.backward_seq(t, dy, g),
            (Recurrent::Bi(p), RecurrentTape::Bi(t), Recurrent::Bi(g)) => p.backward(t, dy, g),
            _ => unreachable!("gradient buffer built from the same parameters"),
        }
    }
}

impl ParamSet for Recurrent {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        match self {
            Recurrent::Uni(p) => prefixed("fwd", p.tensors()),
            Recurrent::Bi(p) => p.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Recurrent::Uni(p) => p.tensors_mut(),
            Recurrent::Bi(p) => p.tensors_mut(),
        }
    }
}

/// Every trainable tensor of a tagger. Gradient buffers use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embedder: SubwordEmbedder,
    pub encoder: Vec<Recurrent>,
    pub hidden: DenseParams,
    pub attention: Option<AttentionParams>,
    pub output: DenseParams,
    pub crf: Option<CrfParams>,
}

impl ModelParams {
    fn build(config: &ModelConfig, vocab: &NgramVocab, rng: Option<&mut ChaCha8Rng>) -> Self {
        let features = config.features();
        let (d, h) = (config.d_emb, config.hidden);
        let mut rng = rng;
        let embedder = match rng.as_deref_mut() {
            Some(r) => SubwordEmbedder::init(vocab, features, d, r),
            None => SubwordEmbedder::zeros(vocab, features, d),
        };
        let mut encoder = Vec::with_capacity(config.num_layers);
        let mut width = features.width(d);
        for _ in 0..config.num_layers {
            let layer = match (config.variant.bidirectional(), rng.as_deref_mut()) {
                (true, Some(r)) => Recurrent::Bi(BiLstmParams::init(width, h, r)),
                (true, None) => Recurrent::Bi(BiLstmParams::zeros(width, h)),
                (false, Some(r)) => Recurrent::Uni(LstmParams::init(width, h, r)),
                (false, None) => Recurrent::Uni(LstmParams::zeros(width, h)),
            };
            width = layer.output_width();
            encoder.push(layer);
        }
        let hidden = match rng.as_deref_mut() {
            Some(r) => DenseParams::init(width, h, r),
            None => DenseParams::zeros(width, h),
        };
        let attention = config.use_attention.then(|| match rng.as_deref_mut() {
            Some(r) => AttentionParams::init(h, r),
            None => AttentionParams::zeros(h),
        });
        let output = match rng.as_deref_mut() {
            Some(r) => DenseParams::init(h, NUM_TAGS, r),
            None => DenseParams::zeros(h, NUM_TAGS),
        };
        let crf = config.variant.uses_crf().then(CrfParams::zeros);
        ModelParams { embedder, encoder, hidden, attention, output, crf }
    }
}

impl ParamSet for ModelParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("embedder", self.embedder.tensors());
        for (i, layer) in self.encoder.iter().enumerate() {
            v.extend(prefixed(&format!("encoder.{i}"), layer.tensors()));
        }
        v.extend(prefixed("hidden", self.hidden.tensors()));
        if let Some(a) = &self.attention {
            v.extend(prefixed("attention", a.tensors()));
        }
        v.extend(prefixed("output", self.output.tensors()));
        if let Some(c) = &self.crf {
            v.extend(prefixed("crf", c.tensors()));
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.embedder.tensors_mut();
        for layer in &mut self.encoder {
            v.extend(layer.tensors_mut());
        }
        v.extend(self.hidden.tensors_mut());
        if let Some(a) = &mut self.attention {
            v.extend(a.tensors_mut());
        }
        v.extend(self.output.tensors_mut());
        if let Some(c) = &mut self.crf {
            v.extend(c.tensors_mut());
        }
        v
    }
}

struct Tape {
    features: FeatureTape,
    input_mask: Option<DropoutMask>,
    encoder: Vec<RecurrentTape>,
    encoder_mask: Option<DropoutMask>,
    hidden: DenseTape,
    /// Hidden-layer activations after tanh.
    hidden_out: Tensor,
    attention: Option<AttentionTape>,
    output: DenseTape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: NgramVocab,
    pub params: ModelParams,
    pub training: TrainingInfo,
}

impl Model {
    /// Fresh randomly initialized model. The vocabulary must already be built.
    pub fn build(config: ModelConfig, vocab: NgramVocab) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ModelParams::build(&config, &vocab, Some(&mut rng));
        Ok(Model { config, vocab, params, training: TrainingInfo::default() })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_parameters()
    }

    fn forward(&self, p: &ModelParams, chars: &[char], rng: Option<&mut ChaCha8Rng>) -> Result<(Tensor, Tape)> {
        let (mut x, features) = char_features_taped(chars, &self.vocab, &p.embedder)?;
        let rate = self.config.dropout;
        let (input_mask, encoder_mask) = match rng {
            Some(r) if rate > 0.0 => {
                let enc_width = p.encoder.last().expect("at least one layer").output_width();
                (Some(DropoutMask::sample(x.cols(), rate, r)?), Some(DropoutMask::sample(enc_width, rate, r)?))
            }
            _ => (None, None),
        };
        if let Some(m) = &input_mask {
            m.apply(&mut x);
        }
        let mut encoder = Vec::with_capacity(p.encoder.len());
        for layer in &p.encoder {
            let (h, t) = layer.forward(&x)?;
            encoder.push(t);
            x = h;
        }
        if let Some(m) = &encoder_mask {
            m.apply(&mut x);
        }
        let (mut y, hidden) = p.hidden.forward(&x)?;
        y.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        let hidden_out = y.clone();
        let attention = match &p.attention {
            Some(a) => {
                let (z, t) = a.forward(&y)?;
                y = z;
                Some(t)
            }
            None => None,
        };
        let (scores, output) = p.output.forward(&y)?;
        Ok((scores, Tape { features, input_mask, encoder, encoder_mask, hidden, hidden_out, attention, output }))
    }

    fn backward(&self, p: &ModelParams, tape: &Tape, d_scores: &Tensor, grads: &mut ModelParams) {
        let mut d = p.output.backward(&tape.output, d_scores, &mut grads.output);
        if let (Some(a), Some(t), Some(g)) = (&p.attention, &tape.attention, &mut grads.attention) {
            d = a.backward(t, &d, g);
        }
        for (dv, y) in d.data_mut().iter_mut().zip(tape.hidden_out.data()) {
            *dv *= 1.0 - y * y;
        }
        d = p.hidden.backward(&tape.hidden, &d, &mut grads.hidden);
        if let Some(m) = &tape.encoder_mask {
            m.apply(&mut d);
        }
        for ((layer, t), g) in p.encoder.iter().zip(&tape.encoder).zip(grads.encoder.iter_mut()).rev() {
            d = layer.backward(t, &d, g);
        }
        if let Some(m) = &tape.input_mask {
            m.apply(&mut d);
        }
        char_features_backward(&p.embedder, &tape.features, &d, &mut grads.embedder);
    }

    fn loss_inner(
        &self,
        p: &ModelParams,
        chars: &[char],
        gold: &TagSequence,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, ModelParams)> {
        if chars.len() != gold.len() {
            return Err(ModelError::LengthMismatch { chars: chars.len(), tags: gold.len() });
        }
        let mut grads = p.zeros_like();
        if chars.is_empty() {
            return Ok((0.0, grads));
        }
        let (scores, tape) = self.forward(p, chars, rng)?;
        let gold = gold.indices();
        let (loss, d_scores) = match &p.crf {
            Some(crf) => {
                let out = nll_loss(&scores, &gold, crf, None)?;
                let g = grads.crf.as_mut().expect("crf gradient buffer");
                *g = out.grads;
                if !self.config.use_start_scores {
                    g.start.fill(0.0);
                }
                (out.loss, out.d_emissions)
            }
            None => softmax_cross_entropy(&scores, &gold),
        };
        self.backward(p, &tape, &d_scores, &mut grads);
        Ok((loss, grads))
    }

    /// Training objective of one sentence (no dropout) and its gradient.
    pub fn loss(&self, chars: &[char], gold: &TagSequence) -> Result<(f64, ModelParams)> {
        self.loss_inner(&self.params, chars, gold, None)
    }

    /// Same as [`Model::loss`] but evaluated at `params` instead of the
    /// model's own parameters.
    pub fn loss_at(&self, params: &ModelParams, chars: &[char], gold: &TagSequence) -> Result<(f64, ModelParams)> {
        self.loss_inner(params, chars, gold, None)
    }

    /// Per-position tag scores: CRF emissions or softmax logits.
    pub fn scores(&self, chars: &[char]) -> Result<Tensor> {
        if chars.is_empty() {
            return Ok(Tensor::zeros(&[0, NUM_TAGS]));
        }
        Ok(self.forward(&self.params, chars, None)?.0)
    }

    pub fn predict(&self, chars: &[char]) -> Result<TagSequence> {
        if chars.is_empty() {
            return Ok(TagSequence(Vec::new()));
        }
        let scores = self.scores(chars)?;
        match &self.params.crf {
            Some(crf) => {
                let mask = self.config.constrained_decode.then(|| ConstraintMask::grammar(chars));
                Ok(viterbi_decode(&scores, crf, mask.as_ref())?.0)
            }
            None => {
                let idx: Vec<usize> = (0..scores.rows())
                    .map(|t| {
                        let row = scores.row(t);
                        // first maximum wins
                        (0..NUM_TAGS).fold(0, |best, k| if row[k] > row[best] { k } else { best })
                    })
                    .collect();
                Ok(TagSequence::from_indices(&idx).expect("indices below tag count"))
            }
        }
    }

    /// Normalizes one raw line, tags it and rebuilds the tokens.
    pub fn segment(&self, line: &str) -> Result<Segmentation> {
        let chars: Vec<char> = normalize_line(line).chars().collect();
        let tags = self.predict(&chars)?;
        Ok(segmentation_from_tags(&chars, &tags)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: serde_json::to_value(&self.config).expect("config serializes"),
            vocab_hash: self.vocab.hash(),
            training: self.training,
            tensors: self.params.tensors().into_iter().map(|(n, t)| (n, t.clone())).collect(),
        }
    }

    /// Rebuilds a model, checking the vocabulary hash and every tensor name
    /// and shape before any parameter is used.
    pub fn from_checkpoint(ck: Checkpoint, vocab: NgramVocab) -> Result<Self> {
        let found = vocab.hash();
        if found != ck.vocab_hash {
            return Err(ModelError::VocabMismatch { expected: ck.vocab_hash, found });
        }
        let config = config_of(&ck)?;
        let mut params = ModelParams::build(&config, &vocab, None);
        let expected: Vec<(String, Vec<usize>)> =
            params.tensors().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
        if expected.len() != ck.tensors.len() {
            return Err(CheckpointError::ShapeMismatch(format!(
                "model has {} tensors, checkpoint has {}",
                expected.len(),
                ck.tensors.len()
            ))
            .into());
        }
        for ((name, shape), (cname, t)) in expected.iter().zip(&ck.tensors) {
            if name != cname || shape.as_slice() != t.shape() {
                return Err(CheckpointError::ShapeMismatch(format!(
                    "expected {name} {shape:?}, found {cname} {:?}",
                    t.shape()
                ))
                .into());
            }
        }
        for (dst, (_, src)) in params.tensors_mut().into_iter().zip(ck.tensors) {
            *dst = src;
        }
        Ok(Model { config, vocab, params, training: ck.training })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>, vocab: NgramVocab) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?, vocab)
    }
}

/// The validated config stored in a checkpoint.
pub fn config_of(ck: &Checkpoint) -> Result<ModelConfig> {
    let config: ModelConfig =
        serde_json::from_value(ck.config.clone()).map_err(|e| ModelError::BadConfig(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Mean per-position cross-entropy and its gradient with respect to the logits.
fn softmax_cross_entropy(logits: &Tensor, gold: &[usize]) -> (f64, Tensor) {
    let len = logits.rows();
    let inv = 1.0 / len as f64;
    let mut d = Tensor::zeros(&[len, NUM_TAGS]);
    let mut loss = 0.0;
    for (t, &g) in gold.iter().enumerate() {
        let row = logits.row(t);
        let z = logsumexp(row);
        loss += z - row[g];
        for (k, dv) in d.row_mut(t).iter_mut().enumerate() {
            *dv = ((row[k] - z).exp() - if k == g { 1.0 } else { 0.0 }) * inv;
        }
    }
    (loss * inv, d)
}

/// Tag metrics, plus exact-span token counts, of `model` on labeled data.
pub fn evaluate(model: &Model, data: &[Labeled]) -> Result<MetricsReport> {
    let mut gold = Vec::with_capacity(data.len());
    let mut pred = Vec::with_capacity(data.len());
    let mut tokens = Counts::default();
    for item in data {
        let p = model.predict(&item.sentence.chars)?;
        let seg = segmentation_from_tags(&item.sentence.chars, &p)?;
        let c = token_counts(&item.sentence.tokens(), &seg.tokens);
        tokens.correct += c.correct;
        tokens.predicted += c.predicted;
        tokens.gold += c.gold;
        gold.push(item.tags.clone());
        pred.push(p);
    }
    let mut report = tag_prf(&gold, &pred)?;
    report.variant = model.config.variant.to_string();
    report.token = Some(tokens);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub dev_p: f64,
    pub dev_r: f64,
    pub dev_f: f64,
}

impl EpochRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The model at its best dev epoch.
    pub model: Model,
    pub log: Vec<EpochRecord>,
}

/// Per-sentence Adamax training with global-norm clipping and best-dev
/// model selection.
pub struct Trainer<'a> {
    model: Model,
    train: &'a [Labeled],
    dev: &'a [Labeled],
    optimizer: Adamax,
    rng: ChaCha8Rng,
    best: Option<(ModelParams, TrainingInfo)>,
    log: Vec<EpochRecord>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: Model, train: &'a [Labeled], dev: &'a [Labeled]) -> Result<Self> {
        model.config.validate()?;
        if train.is_empty() {
            return Err(ModelError::EmptyTrain);
        }
        if dev.is_empty() {
            return Err(ModelError::EmptyDev);
        }
        for item in train.iter().chain(dev) {
            if item.sentence.chars.len() != item.tags.len() {
                return Err(ModelError::LengthMismatch { chars: item.sentence.chars.len(), tags: item.tags.len() });
            }
        }
        let cfg = AdamaxConfig { lr: model.config.lr, ..AdamaxConfig::default() };
        let tensors: Vec<&Tensor> = model.params.tensors().into_iter().map(|(_, t)| t).collect();
        let optimizer = Adamax::new(&tensors, cfg);
        // The stream for shuffling and dropout is independent of the init stream.
        let rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x5EED_5EED_5EED_5EED);
        Ok(Trainer { model, train, dev, optimizer, rng, best: None, log: Vec::new() })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn log(&self) -> &[EpochRecord] {
        &self.log
    }

    pub fn epochs_done(&self) -> usize {
        self.log.len()
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.log.len() + 1;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for (step, batch) in order.chunks(self.model.config.batch_size).enumerate() {
            let mut grads: Option<ModelParams> = None;
            for &i in batch {
                let item = &self.train[i];
                let (loss, g) =
                    self.model.loss_inner(&self.model.params, &item.sentence.chars, &item.tags, Some(&mut self.rng))?;
                total += loss;
                match &mut grads {
                    Some(acc) => acc.add_assign(&g),
                    None => grads = Some(g),
                }
            }
            let mut grads = grads.expect("batches are non-empty");
            if batch.len() > 1 {
                let k = 1.0 / batch.len() as f64;
                grads.tensors_mut().into_iter().for_each(|t| t.scale(k));
            }
            if let Err(NnError::NonFiniteGradient { .. }) =
                clip_global_norm(&mut grads.tensors_mut(), self.model.config.grad_clip)
            {
                let tensor = grads
                    .tensors()
                    .into_iter()
                    .find(|(_, t)| !t.is_finite())
                    .map(|(n, _)| n)
                    .unwrap_or_default();
                return Err(ModelError::NonFiniteGradient { tensor, epoch, step: step + 1 });
            }
            let g: Vec<&Tensor> = grads.tensors().into_iter().map(|(_, t)| t).collect();
            self.optimizer.step(&mut self.model.params.tensors_mut(), &g)?;
        }
        let lr = self.optimizer.config.lr * self.model.config.lr_decay;
        self.optimizer.set_lr(lr);

        let prf = evaluate(&self.model, self.dev)?.micro().prf();
        let record = EpochRecord {
            epoch,
            loss: total / self.train.len() as f64,
            dev_p: prf.precision,
            dev_r: prf.recall,
            dev_f: prf.f1,
        };
        if self.best.as_ref().is_none_or(|(_, info)| prf.f1 > info.dev_f) {
            self.best = Some((self.model.params.clone(), TrainingInfo { epoch, dev_f: prf.f1 }));
        }
        self.log.push(record.clone());
        Ok(record)
    }

    /// Runs the remaining configured epochs, calling `on_epoch` after each.
    pub fn run_with(mut self, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
        while self.log.len() < self.model.config.epochs {
            let r = self.run_epoch()?;
            on_epoch(&r);
        }
        Ok(self.finish())
    }

    pub fn run(self) -> Result<TrainOutcome> {
        self.run_with(|_| {})
    }

    /// Stops and returns the best model seen so far.
    pub fn finish(self) -> TrainOutcome {
        let mut model = self.model;
        if let Some((params, info)) = self.best {
            model.params = params;
            model.training = info;
        }
        TrainOutcome { model, log: self.log }
    }
}

pub fn train(model: Model, train: &[Labeled], dev: &[Labeled]) -> Result<TrainOutcome> {
    Trainer::new(model, train, dev)?.run()
}
