//! `sgnws`: prepare corpora, train, segment, evaluate and inspect models.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sgnws_core::checkpoint::Checkpoint;
use sgnws_core::corpus::{
    normalize_line, normalize_text, read_labeled_file, split_dataset, split_sentences, write_labeled,
    write_labeled_file, CorpusStats, Labeled, Sentence,
};
use sgnws_core::eval::{report_emit, tag_prf, token_counts, Counts, ReportFormat};
use sgnws_core::model::{config_of, evaluate, parse_kv, Model, ModelConfig, ModelError, Trainer, Variant};
use sgnws_core::subword::{build_vocab, NgramVocab, MAX_N};

const TRAIN_FILE: &str = "train.tsv";
const DEV_FILE: &str = "dev.tsv";
const TEST_FILE: &str = "test.tsv";
const VOCAB_FILE: &str = "vocab.tsv";
const MODEL_FILE: &str = "model.ckpt";
const LOG_FILE: &str = "epochs.jsonl";

#[derive(Parser, Debug)]
#[command(name = "sgnws", version, about = "Neural word segmentation")]
struct Cli {
    /// Print progress to stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalize a raw corpus, split it and write labeled files plus a vocabulary.
    Prepare(PrepareArgs),
    /// Train a tagger on a prepared data directory.
    Train(TrainArgs),
    /// Segment raw text, one line at a time.
    Segment(SegmentArgs),
    /// Score a model on a labeled file.
    Evaluate(EvaluateArgs),
    /// Describe a checkpoint.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// Raw UTF-8 text, one paragraph or sentence per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Train, dev and test proportions.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    ratios: String,
    #[arg(long, default_value_t = 5)]
    min_tokens: usize,
    #[arg(long, default_value_t = 300)]
    max_tokens: usize,
    /// Minimum counts for 1- to 4-grams.
    #[arg(long, default_value = "1,2,2,2")]
    min_freq: String,
}

/// One flag per model hyperparameter. Unset flags fall back to the config
/// file, then to the defaults of the chosen variant.
#[derive(Args, Debug, Default)]
struct ModelFlags {
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    d_emb: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    use_attention: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    use_4grams: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    use_start_scores: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    constrained_decode: Option<bool>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    num_layers: Option<usize>,
    #[arg(long)]
    lr_decay: Option<f64>,
}

impl ModelFlags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        macro_rules! push {
            ($($field:ident),*) => {
                $(if let Some(x) = &self.$field { v.push((stringify!($field), x.to_string())); })*
            };
        }
        push!(
            variant,
            d_emb,
            hidden,
            dropout,
            lr,
            grad_clip,
            epochs,
            optimizer,
            use_attention,
            use_4grams,
            use_start_scores,
            constrained_decode,
            batch_size,
            seed,
            num_layers,
            lr_decay
        );
        v
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory written by `prepare`.
    #[arg(long, required_unless_present = "dump_config")]
    data: Option<PathBuf>,
    /// Output directory for the checkpoint, vocabulary and epoch log.
    #[arg(long, required_unless_present = "dump_config")]
    out: Option<PathBuf>,
    /// `key=value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dump_config: bool,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[arg(long)]
    model: PathBuf,
    /// Defaults to vocab.tsv next to the checkpoint.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Defaults to stdin.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Defaults to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write predicted tags in the labeled format.
    #[arg(long)]
    emit_tags: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long, required_unless_present = "oracle")]
    model: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Labeled file to score.
    #[arg(long)]
    data: PathBuf,
    /// `json_lines` or `tsv`.
    #[arg(long, default_value = "json_lines")]
    format: String,
    /// Defaults to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Score the gold tags against themselves, bypassing any model.
    #[arg(long)]
    oracle: bool,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::BadConfig(m) => CliError::Usage(m),
            ModelError::NonFiniteGradient { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn data_err(context: &Path) -> impl Fn(&dyn std::fmt::Display) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", context.display()))
}

fn io_err(e: io::Error) -> CliError {
    CliError::Data(e.to_string())
}

fn parse_list<T: std::str::FromStr>(flag: &str, s: &str, n: usize) -> Result<Vec<T>, CliError> {
    let v: Vec<T> = s
        .split(',')
        .map(|x| x.trim().parse().map_err(|_| CliError::Usage(format!("--{flag}: cannot parse {x:?}"))))
        .collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(CliError::Usage(format!("--{flag} needs {n} comma-separated values")));
    }
    Ok(v)
}

fn cmd_prepare(args: &PrepareArgs, verbose: u8) -> Result<(), CliError> {
    let ratios: Vec<f64> = parse_list("ratios", &args.ratios, 3)?;
    let min_freq: Vec<u64> = parse_list("min-freq", &args.min_freq, MAX_N)?;
    let raw = fs::read(&args.input).map_err(|e| data_err(&args.input)(&e))?;
    let lines = normalize_text(&raw).map_err(|e| data_err(&args.input)(&e))?;
    let sentences = split_sentences(&lines, args.min_tokens, args.max_tokens);
    let labeled: Vec<Labeled> = sentences
        .into_iter()
        .map(Labeled::from_sentence)
        .collect::<Result<_, _>>()
        .map_err(|e| data_err(&args.input)(&e))?;
    let split = split_dataset(labeled, (ratios[0], ratios[1], ratios[2]), args.seed).map_err(|e| match e {
        sgnws_core::corpus::CorpusError::BadRatios(_) => CliError::Usage(e.to_string()),
        e => data_err(&args.input)(&e),
    })?;
    let vocab = build_vocab(split.train.iter().map(|l| &l.sentence), min_freq.try_into().unwrap())
        .map_err(|e| CliError::Data(format!("vocabulary: {e}")))?;

    fs::create_dir_all(&args.out_dir).map_err(io_err)?;
    for (name, part) in [(TRAIN_FILE, &split.train), (DEV_FILE, &split.dev), (TEST_FILE, &split.test)] {
        write_labeled_file(args.out_dir.join(name), part).map_err(|e| CliError::Data(e.to_string()))?;
    }
    vocab
        .write(File::create(args.out_dir.join(VOCAB_FILE)).map_err(io_err)?)
        .map_err(|e| CliError::Data(e.to_string()))?;

    let mut out = io::stdout().lock();
    let stats_line = |name: &str, s: CorpusStats| {
        format!(
            "{name}\t{}\t{}\t{}\t{:.4}\n",
            s.sentences, s.tokens, s.unique_words, s.average_word_length
        )
    };
    let mut text = String::from("split\tsentences\ttokens\tunique_words\tavg_word_length\n");
    text += &stats_line("train", CorpusStats::compute(&split.train));
    text += &stats_line("dev", CorpusStats::compute(&split.dev));
    text += &stats_line("test", CorpusStats::compute(&split.test));
    text += &stats_line("total", CorpusStats::compute(split.train.iter().chain(&split.dev).chain(&split.test)));
    out.write_all(text.as_bytes()).map_err(io_err)?;
    if verbose > 0 {
        eprintln!("vocabulary sizes: {:?}", (1..=MAX_N).map(|n| vocab.size(n)).collect::<Vec<_>>());
    }
    Ok(())
}

fn resolve_config(args: &TrainArgs) -> Result<ModelConfig, CliError> {
    let file_pairs = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| data_err(p)(&e))?;
            parse_kv(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => Vec::new(),
    };
    let flag_pairs = args.model.pairs();
    let variant = flag_pairs
        .iter()
        .find(|(k, _)| *k == "variant")
        .map(|(_, v)| v.clone())
        .or_else(|| file_pairs.iter().find(|(k, _)| k == "variant").map(|(_, v)| v.clone()));
    let variant: Variant = match variant {
        Some(v) => v.parse()?,
        None => Variant::Sgnws,
    };
    let mut cfg = ModelConfig::for_variant(variant);
    for (k, v) in file_pairs.iter().map(|(k, v)| (k.as_str(), v)).chain(flag_pairs.iter().map(|(k, v)| (*k, v))) {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_vocab(path: &Path) -> Result<NgramVocab, CliError> {
    let f = File::open(path).map_err(|e| data_err(path)(&e))?;
    NgramVocab::read(BufReader::new(f)).map_err(|e| data_err(path)(&e))
}

fn read_labeled(path: &Path) -> Result<Vec<Labeled>, CliError> {
    read_labeled_file(path).map_err(|e| data_err(path)(&e))
}

fn cmd_train(args: &TrainArgs, verbose: u8) -> Result<(), CliError> {
    let cfg = resolve_config(args)?;
    if args.dump_config {
        print!("{}", cfg.to_kv());
        return Ok(());
    }
    let (data, out) = (args.data.as_ref().unwrap(), args.out.as_ref().unwrap());
    let train = read_labeled(&data.join(TRAIN_FILE))?;
    let dev = read_labeled(&data.join(DEV_FILE))?;
    let vocab_path = data.join(VOCAB_FILE);
    let vocab = read_vocab(&vocab_path)?;

    let model = Model::build(cfg, vocab.clone())?;
    if verbose > 0 {
        eprintln!("{} parameters, {} train / {} dev sentences", model.num_parameters(), train.len(), dev.len());
    }
    let trainer = Trainer::new(model, &train, &dev)?;
    fs::create_dir_all(out).map_err(io_err)?;
    let mut log = BufWriter::new(File::create(out.join(LOG_FILE)).map_err(io_err)?);
    let mut log_err = None;
    let outcome = trainer.run_with(|r| {
        let line = r.to_json_line();
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_err.get_or_insert(e);
        }
        if verbose > 0 {
            eprintln!("{line}");
        }
    })?;
    if let Some(e) = log_err {
        return Err(io_err(e));
    }
    outcome.model.save(out.join(MODEL_FILE))?;
    fs::copy(&vocab_path, out.join(VOCAB_FILE)).map_err(io_err)?;
    if verbose > 0 {
        eprintln!("best dev F {:.4} at epoch {}", outcome.model.training.dev_f, outcome.model.training.epoch);
    }
    Ok(())
}

fn load_model(model: &Path, vocab: Option<&PathBuf>) -> Result<Model, CliError> {
    let default_vocab = model.parent().unwrap_or(Path::new(".")).join(VOCAB_FILE);
    let vocab = read_vocab(vocab.unwrap_or(&default_vocab))?;
    Ok(Model::load(model, vocab)?)
}

fn cmd_segment(args: &SegmentArgs) -> Result<(), CliError> {
    let model = load_model(&args.model, args.vocab.as_ref())?;
    let mut raw = Vec::new();
    match &args.input {
        Some(p) => raw = fs::read(p).map_err(|e| data_err(p)(&e))?,
        None => {
            io::stdin().lock().read_to_end(&mut raw).map_err(io_err)?;
        }
    }
    let text = String::from_utf8(raw).map_err(|e| CliError::Data(format!("input is not UTF-8: {e}")))?;
    let mut out: Box<dyn Write> = match &args.output {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(io_err)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let mut tagged = Vec::new();
    for line in text.lines() {
        let chars: Vec<char> = normalize_line(line).chars().collect();
        let tags = model.predict(&chars)?;
        let seg = sgnws_core::corpus::segmentation_from_tags(&chars, &tags).map_err(|e| CliError::Data(e.to_string()))?;
        writeln!(out, "{}", seg.tokens.join(" ")).map_err(io_err)?;
        if args.emit_tags.is_some() && !chars.is_empty() {
            tagged.push(Labeled { sentence: Sentence::new(chars, Some(seg.spans)), tags });
        }
    }
    out.flush().map_err(io_err)?;
    if let Some(p) = &args.emit_tags {
        let f = BufWriter::new(File::create(p).map_err(io_err)?);
        write_labeled(f, &tagged).map_err(|e| CliError::Data(e.to_string()))?;
    }
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let format: ReportFormat = args.format.parse().map_err(CliError::Usage)?;
    let data = read_labeled(&args.data)?;
    let report = if args.oracle {
        let gold: Vec<_> = data.iter().map(|l| l.tags.clone()).collect();
        let mut r = tag_prf(&gold, &gold).map_err(|e| CliError::Data(e.to_string()))?;
        r.variant = "oracle".into();
        let mut tokens = Counts::default();
        for l in &data {
            let t = l.sentence.tokens();
            let c = token_counts(&t, &t);
            tokens.correct += c.correct;
            tokens.predicted += c.predicted;
            tokens.gold += c.gold;
        }
        r.token = Some(tokens);
        r
    } else {
        let model = load_model(args.model.as_ref().unwrap(), args.vocab.as_ref())?;
        evaluate(&model, &data)?
    };
    let result = match &args.output {
        Some(p) => report_emit(&report, BufWriter::new(File::create(p).map_err(io_err)?), format),
        None => report_emit(&report, io::stdout().lock(), format),
    };
    result.map_err(|e| CliError::Data(e.to_string()))
}

fn cmd_inspect(args: &InspectArgs) -> Result<(), CliError> {
    let ck = Checkpoint::load(&args.model).map_err(|e| data_err(&args.model)(&e))?;
    let cfg = config_of(&ck)?;
    let mut out = String::new();
    out += &format!("vocab_hash\t{}\n", ck.vocab_hash);
    out += &format!("best_epoch\t{}\n", ck.training.epoch);
    out += &format!("dev_f\t{:.6}\n", ck.training.dev_f);
    let total: usize = ck.tensors.iter().map(|(_, t)| t.len()).sum();
    out += &format!("parameters\t{total}\n");
    for line in cfg.to_kv().lines() {
        let (k, v) = line.split_once('=').unwrap();
        out += &format!("config.{k}\t{v}\n");
    }
    for (name, t) in &ck.tensors {
        out += &format!("tensor\t{name}\t{:?}\n", t.shape());
    }
    io::stdout().lock().write_all(out.as_bytes()).map_err(io_err)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Prepare(a) => cmd_prepare(a, cli.verbose),
        Command::Train(a) => cmd_train(a, cli.verbose),
        Command::Segment(a) => cmd_segment(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sgnws: {e}");
            ExitCode::from(e.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sgnws_core::subword::DEFAULT_MIN_FREQ;

    #[test]
    fn every_config_key_has_a_flag() {
        let cmd = <Cli as clap::CommandFactory>::command();
        let train = cmd.find_subcommand("train").unwrap();
        let flags: Vec<String> = train.get_arguments().filter_map(|a| a.get_long().map(String::from)).collect();
        for key in sgnws_core::model::CONFIG_KEYS {
            let flag = key.replace('_', "-");
            assert_eq!(flags.iter().filter(|f| **f == flag).count(), 1, "--{flag}");
        }
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        fs::write(&p, "variant=bilstm_crf\nlr=0.5\nepochs=3\n").unwrap();
        let cli = Cli::try_parse_from(["sgnws", "train", "--dump-config", "--config", p.to_str().unwrap(), "--lr", "0.1"])
            .unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        let cfg = resolve_config(&a).unwrap();
        assert_eq!((cfg.variant, cfg.lr, cfg.epochs), (Variant::BilstmCrf, 0.1, 3));
        assert!(!cfg.use_attention);
    }

    #[test]
    fn min_freq_default_matches_core() {
        let v: Vec<u64> = parse_list("min-freq", "1,2,2,2", MAX_N).unwrap();
        assert_eq!(v, DEFAULT_MIN_FREQ.to_vec());
    }
}
