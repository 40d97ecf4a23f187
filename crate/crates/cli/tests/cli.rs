use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sgnws_core::corpus::{read_labeled_file, write_labeled_file};
use sgnws_core::eval::parse_json_lines;
use sgnws_core::model::{evaluate, Model};
use sgnws_core::subword::{build_vocab, NgramVocab, DEFAULT_MIN_FREQ};
use sgnws_core::synthetic::toy_task;

fn sgnws(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgnws")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn toy_raw(dir: &Path) -> std::path::PathBuf {
    let text: String = (0..10).map(|i| format!("s{i} the  cat\u{00A0}sat down.\n")).collect();
    let path = dir.join("raw.txt");
    fs::write(&path, text).unwrap();
    path
}

fn prepare(raw: &Path, out: &Path) -> Output {
    sgnws(&["prepare", "--input", p(raw), "--out-dir", p(out), "--seed", "7"])
}

#[test]
fn prepare_splits_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let raw = toy_raw(dir.path());
    let out = dir.path().join("data");
    let o = prepare(&raw, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sizes: Vec<usize> = ["train.tsv", "dev.tsv", "test.tsv"]
        .iter()
        .map(|f| read_labeled_file(out.join(f)).unwrap().len())
        .collect();
    assert_eq!(sizes, vec![8, 1, 1]);
    assert!(out.join("vocab.tsv").exists());
    // 6 tokens per sentence: s<i> the cat sat down .
    // unique: ten s<i> plus the, cat, sat, down, "." ; characters per sentence 2+3+3+3+4+1 = 16
    let text = stdout(&o);
    assert!(text.starts_with("split\tsentences\ttokens\tunique_words\tavg_word_length\n"), "{text}");
    assert!(text.contains("total\t10\t60\t15\t2.6667\n"), "{text}");
    assert!(text.contains("train\t8\t48\t13\t2.6667\n"), "{text}");
}

#[test]
fn prepare_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let raw = toy_raw(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(prepare(&raw, &a).status.success());
    assert!(prepare(&raw, &b).status.success());
    for f in ["train.tsv", "dev.tsv", "test.tsv", "vocab.tsv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn dump_config_shows_defaults() {
    let o = sgnws(&["train", "--dump-config", "--variant", "sgnws"]);
    assert!(o.status.success());
    assert_eq!(
        stdout(&o),
        "variant=sgnws\nd_emb=64\nhidden=200\ndropout=0.25\nlr=0.025\ngrad_clip=5\nepochs=40\noptimizer=adamax\n\
         use_attention=true\nuse_4grams=true\nuse_start_scores=true\nconstrained_decode=true\nbatch_size=1\n\
         seed=1\nnum_layers=1\nlr_decay=1\n"
    );
    let o = sgnws(&["train", "--dump-config", "--variant", "lstm_softmax", "--lr", "0.01"]);
    let text = stdout(&o);
    assert!(text.contains("lr=0.01\n") && text.contains("use_attention=false\n") && text.contains("constrained_decode=false\n"));
}

#[test]
fn usage_errors_exit_1() {
    let o = sgnws(&["train", "--dump-config", "--variant", "lstm_softmax", "--constrained-decode"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(sgnws(&["train", "--dump-config", "--variant", "bilstm_crf", "--use-attention"]).status.code(), Some(1));
    assert_eq!(sgnws(&["train", "--dump-config", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(sgnws(&["train", "--dump-config", "--variant", "transformer"]).status.code(), Some(1));
    assert_eq!(sgnws(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn missing_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = sgnws(&["train", "--data", p(&dir.path().join("nope")), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let o = sgnws(&["evaluate", "--oracle", "--data", p(&dir.path().join("nope.tsv"))]);
    assert_eq!(o.status.code(), Some(2));
}

fn write_toy_data(dir: &Path) -> NgramVocab {
    let (_, train, dev) = toy_task(21);
    write_labeled_file(dir.join("train.tsv"), &train).unwrap();
    write_labeled_file(dir.join("dev.tsv"), &dev).unwrap();
    let vocab = build_vocab(train.iter().map(|l| &l.sentence), DEFAULT_MIN_FREQ).unwrap();
    vocab.write(fs::File::create(dir.join("vocab.tsv")).unwrap()).unwrap();
    vocab
}

#[test]
fn one_epoch_then_segment_evaluate_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    let vocab = write_toy_data(&data);
    let out = dir.path().join("run");
    let o = sgnws(&["train", "--data", p(&data), "--out", p(&out), "--epochs", "1", "--d-emb", "8", "--hidden", "8"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = out.join("model.ckpt");
    let model = Model::load(&ckpt, vocab).unwrap();
    assert_eq!(model.config.epochs, 1);
    let log = fs::read_to_string(out.join("epochs.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert!(log.starts_with("{\"epoch\":1,\"loss\":"));

    let input = dir.path().join("in.txt");
    fs::write(&input, "abc  de\n\n   \nqq rs tt\n").unwrap();
    let seg_out = dir.path().join("out.txt");
    let tags = dir.path().join("tags.tsv");
    let o = sgnws(&["segment", "--model", p(&ckpt), "--input", p(&input), "--output", p(&seg_out), "--emit-tags", p(&tags)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&seg_out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1], "");
    assert_eq!(lines[2], "");
    for l in &lines {
        assert!(!l.contains("  ") && !l.starts_with(' ') && !l.ends_with(' '));
    }
    assert_eq!(lines[0].replace(' ', ""), "abcde");
    assert_eq!(read_labeled_file(&tags).unwrap().len(), 2);

    let report_path = dir.path().join("report.jsonl");
    let dev_path = data.join("dev.tsv");
    let o = sgnws(&["evaluate", "--model", p(&ckpt), "--data", p(&dev_path), "--output", p(&report_path)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let parsed = parse_json_lines(&fs::read_to_string(&report_path).unwrap()).unwrap();
    let direct = evaluate(&model, &read_labeled_file(&dev_path).unwrap()).unwrap();
    assert_eq!(parsed, direct);

    let o = sgnws(&["evaluate", "--model", p(&ckpt), "--data", p(&dev_path), "--format", "tsv"]);
    assert!(stdout(&o).starts_with("variant\tscope\tname\tcorrect\tpredicted\ttrue\tprecision\trecall\tf1\n"));

    let o = sgnws(&["inspect", "--model", p(&ckpt)]);
    let text = stdout(&o);
    assert!(text.contains("config.variant\tsgnws\n") && text.contains("tensor\tcrf.transitions\t[5, 5]\n"), "{text}");
}

#[test]
fn oracle_evaluation_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_data(dir.path());
    let o = sgnws(&["evaluate", "--oracle", "--data", p(&dir.path().join("dev.tsv"))]);
    assert!(o.status.success());
    let report = parse_json_lines(&stdout(&o)).unwrap();
    assert_eq!(report.f1(), 1.0);
    assert_eq!(report.token.unwrap().prf().f1, 1.0);
}

#[test]
fn trained_model_reproduces_training_segmentation() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    write_toy_data(&data);
    let out = dir.path().join("run");
    let o = sgnws(&[
        "train", "--data", p(&data), "--out", p(&out), "--epochs", "10", "--d-emb", "16", "--hidden", "32",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let train = read_labeled_file(data.join("train.tsv")).unwrap();
    let input: String = train.iter().take(20).map(|l| l.sentence.text() + "\n").collect();
    let input_path = dir.path().join("in.txt");
    fs::write(&input_path, input).unwrap();
    let o = sgnws(&["segment", "--model", p(&out.join("model.ckpt")), "--input", p(&input_path)]);
    let got = stdout(&o);
    let expected: String = train.iter().take(20).map(|l| l.sentence.tokens().join(" ") + "\n").collect();
    assert_eq!(got, expected);
}
