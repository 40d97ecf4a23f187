//! Tag-level precision, recall and F-score, plus an exact-span token F.
//!
//! Counting is position-wise: for tag `t`, `predicted` counts positions
//! predicted `t`, `true` counts gold `t`, and `correct` counts positions where
//! both are `t`. Aggregates are micro-averaged. Any ratio with a zero
//! denominator is 0.

use std::fmt::Write as _;
use std::io::Write;

use serde_json::Value;
use thiserror::Error;

use crate::corpus::is_whitespace;
use crate::tags::{Tag, TagSequence, NUM_TAGS};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sentence {sentence}: gold has {gold} tags, prediction has {pred}")]
    LengthMismatch { sentence: usize, gold: usize, pred: usize },
    #[error("{gold} gold sentences but {pred} predictions")]
    CountMismatch { gold: usize, pred: usize },
    #[error("report line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub correct: u64,
    pub predicted: u64,
    pub gold: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl Counts {
    pub fn prf(&self) -> Prf {
        let precision = ratio(self.correct, self.predicted);
        let recall = ratio(self.correct, self.gold);
        Prf { precision, recall, f1: f_score(precision, recall) }
    }

    fn add(&mut self, o: &Counts) {
        self.correct += o.correct;
        self.predicted += o.predicted;
        self.gold += o.gold;
    }
}

/// Counts only; every ratio is derived on demand.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetricsReport {
    pub variant: String,
    pub per_tag: [Counts; NUM_TAGS],
    pub token: Option<Counts>,
}

impl MetricsReport {
    pub fn tag(&self, t: Tag) -> Counts {
        self.per_tag[t.index()]
    }

    pub fn micro(&self) -> Counts {
        let mut c = Counts::default();
        self.per_tag.iter().for_each(|t| c.add(t));
        c
    }

    pub fn micro_excluding_x(&self) -> Counts {
        let mut c = Counts::default();
        self.per_tag
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != Tag::X.index())
            .for_each(|(_, t)| c.add(t));
        c
    }

    /// Unweighted mean of the per-tag values.
    pub fn macro_prf(&self) -> Prf {
        let n = NUM_TAGS as f64;
        let all: Vec<Prf> = self.per_tag.iter().map(Counts::prf).collect();
        Prf {
            precision: all.iter().map(|p| p.precision).sum::<f64>() / n,
            recall: all.iter().map(|p| p.recall).sum::<f64>() / n,
            f1: all.iter().map(|p| p.f1).sum::<f64>() / n,
        }
    }

    /// Headline tag F-score (micro over all five tags).
    pub fn f1(&self) -> f64 {
        self.micro().prf().f1
    }
}

pub fn tag_prf(gold: &[TagSequence], pred: &[TagSequence]) -> Result<MetricsReport> {
    if gold.len() != pred.len() {
        return Err(EvalError::CountMismatch { gold: gold.len(), pred: pred.len() });
    }
    let mut report = MetricsReport::default();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(EvalError::LengthMismatch { sentence: i, gold: g.len(), pred: p.len() });
        }
        for (&gt, &pt) in g.iter().zip(p.iter()) {
            report.per_tag[gt.index()].gold += 1;
            report.per_tag[pt.index()].predicted += 1;
            if gt == pt {
                report.per_tag[gt.index()].correct += 1;
            }
        }
    }
    Ok(report)
}

/// Token spans measured in non-whitespace characters, so that spacing
/// outside tokens does not matter.
fn compact_spans<S: AsRef<str>>(tokens: &[S]) -> Vec<(usize, usize)> {
    let mut pos = 0;
    tokens
        .iter()
        .map(|t| {
            let len = t.as_ref().chars().filter(|&c| !is_whitespace(c)).count();
            let span = (pos, pos + len);
            pos += len;
            span
        })
        .collect()
}

/// Exact-span token matching for one sentence.
pub fn token_counts<S: AsRef<str>, T: AsRef<str>>(gold: &[S], pred: &[T]) -> Counts {
    let g = compact_spans(gold);
    let p = compact_spans(pred);
    let gold_set: std::collections::HashSet<_> = g.iter().collect();
    Counts {
        correct: p.iter().filter(|s| gold_set.contains(s)).count() as u64,
        predicted: p.len() as u64,
        gold: g.len() as u64,
    }
}

/// Token-level P/R/F over many sentences.
pub fn token_f<S: AsRef<str>, T: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<T>]) -> Result<Counts> {
    if gold.len() != pred.len() {
        return Err(EvalError::CountMismatch { gold: gold.len(), pred: pred.len() });
    }
    let mut c = Counts::default();
    for (g, p) in gold.iter().zip(pred) {
        c.add(&token_counts(g, p));
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    JsonLines,
    Tsv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "json_lines" | "jsonl" => Ok(ReportFormat::JsonLines),
            "tsv" => Ok(ReportFormat::Tsv),
            _ => Err(format!("unknown report format {s:?}")),
        }
    }
}

/// TSV column order.
pub const TSV_FIELDS: [&str; 9] = ["variant", "scope", "name", "correct", "predicted", "true", "precision", "recall", "f1"];

struct Row<'a> {
    scope: &'static str,
    name: &'a str,
    counts: Option<Counts>,
    prf: Prf,
}

fn rows(report: &MetricsReport) -> Vec<Row<'static>> {
    let mut out = Vec::new();
    for t in Tag::ALL {
        let c = report.tag(t);
        out.push(Row { scope: "tag", name: TAG_NAMES[t.index()], counts: Some(c), prf: c.prf() });
    }
    let m = report.micro();
    out.push(Row { scope: "micro", name: "all", counts: Some(m), prf: m.prf() });
    let mx = report.micro_excluding_x();
    out.push(Row { scope: "micro", name: "excl_x", counts: Some(mx), prf: mx.prf() });
    out.push(Row { scope: "macro", name: "all", counts: None, prf: report.macro_prf() });
    if let Some(t) = report.token {
        out.push(Row { scope: "token", name: "exact_span", counts: Some(t), prf: t.prf() });
    }
    out
}

const TAG_NAMES: [&str; NUM_TAGS] = ["B", "I", "E", "S", "X"];

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

/// Renders the report. Field order is fixed and floats carry six decimals,
/// so equal reports give byte-identical output.
pub fn render_report(report: &MetricsReport, format: ReportFormat) -> String {
    let mut out = String::new();
    let variant = &report.variant;
    if format == ReportFormat::Tsv {
        out.push_str(&TSV_FIELDS.join("\t"));
        out.push('\n');
    }
    for r in rows(report) {
        let Prf { precision, recall, f1 } = r.prf;
        match format {
            ReportFormat::JsonLines => {
                let counts = match r.counts {
                    Some(c) => format!("\"correct\":{},\"predicted\":{},\"true\":{}", c.correct, c.predicted, c.gold),
                    None => "\"correct\":null,\"predicted\":null,\"true\":null".to_string(),
                };
                writeln!(
                    out,
                    "{{\"variant\":{},\"scope\":\"{}\",\"name\":\"{}\",{counts},\"precision\":{precision:.6},\"recall\":{recall:.6},\"f1\":{f1:.6}}}",
                    json_string(variant),
                    r.scope,
                    r.name
                )
                .unwrap();
            }
            ReportFormat::Tsv => {
                let (c, p, g) = match r.counts {
                    Some(c) => (c.correct.to_string(), c.predicted.to_string(), c.gold.to_string()),
                    None => ("-".into(), "-".into(), "-".into()),
                };
                writeln!(
                    out,
                    "{variant}\t{}\t{}\t{c}\t{p}\t{g}\t{precision:.6}\t{recall:.6}\t{f1:.6}",
                    r.scope, r.name
                )
                .unwrap();
            }
        }
    }
    out
}

pub fn report_emit<W: Write>(report: &MetricsReport, mut w: W, format: ReportFormat) -> Result<()> {
    w.write_all(render_report(report, format).as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Rebuilds a report from its JSON-lines rendering.
pub fn parse_json_lines(text: &str) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    for (i, line) in text.lines().enumerate() {
        let err = |reason: &str| EvalError::Parse { line: i + 1, reason: reason.to_string() };
        let v: Value = serde_json::from_str(line).map_err(|e| err(&e.to_string()))?;
        let field = |k: &str| v.get(k).ok_or_else(|| err(&format!("missing {k}")));
        let count = |k: &str| field(k).and_then(|x| x.as_u64().ok_or_else(|| err(&format!("{k} is not a count"))));
        report.variant = field("variant")?.as_str().ok_or_else(|| err("variant"))?.to_string();
        let scope = field("scope")?.as_str().unwrap_or_default();
        let name = field("name")?.as_str().unwrap_or_default();
        let counts = || -> Result<Counts> {
            Ok(Counts { correct: count("correct")?, predicted: count("predicted")?, gold: count("true")? })
        };
        match scope {
            "tag" => {
                let idx = TAG_NAMES.iter().position(|n| *n == name).ok_or_else(|| err("unknown tag"))?;
                report.per_tag[idx] = counts()?;
            }
            "token" => report.token = Some(counts()?),
            "micro" | "macro" => {}
            _ => return Err(err("unknown scope")),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> TagSequence {
        s.parse().unwrap()
    }

    #[test]
    fn identity_is_perfect() {
        let g = vec![ts("BEXS"), ts("BIIE")];
        let r = tag_prf(&g, &g).unwrap();
        let p = r.micro().prf();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn eight_of_ten() {
        let g = vec![ts("BIEXSBEXSS")];
        let p = vec![ts("BIEXSBEXBE")];
        let r = tag_prf(&g, &p).unwrap();
        let m = r.micro();
        assert_eq!(m, Counts { correct: 8, predicted: 10, gold: 10 });
        let prf = m.prf();
        assert_eq!((prf.precision, prf.recall), (0.8, 0.8));
        assert!((prf.f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_denominators() {
        let c = Counts::default();
        assert_eq!(c.prf(), Prf { precision: 0.0, recall: 0.0, f1: 0.0 });
        let r = tag_prf(&[ts("SS")], &[ts("XX")]).unwrap();
        assert_eq!(r.tag(Tag::B).prf().f1, 0.0);
        assert_eq!(r.tag(Tag::S).prf().recall, 0.0);
    }

    #[test]
    fn length_mismatch_names_sentence() {
        let err = tag_prf(&[ts("S"), ts("BE")], &[ts("S"), ts("B")]).unwrap_err();
        assert!(matches!(err, EvalError::LengthMismatch { sentence: 1, .. }));
    }

    #[test]
    fn token_matching() {
        let c = token_counts(&["ab", "c"], &["ab", "c"]);
        assert_eq!(c.prf().f1, 1.0);
        let c = token_counts(&["ab", "c"], &["abc"]);
        assert_eq!(c.prf(), Prf { precision: 0.0, recall: 0.0, f1: 0.0 });
        // gold spans (0,2) (2,4) (4,5); predicted (0,1) (1,2) (2,4) (4,5)
        let c = token_counts(&["ab", "cd", "e"], &["a", "b", "cd", "e"]);
        assert_eq!(c, Counts { correct: 2, predicted: 4, gold: 3 });
        let p = c.prf();
        assert_eq!(p.precision, 0.5);
        assert!((p.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.f1 - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn emitted_reports_are_stable() {
        let r = tag_prf(&[ts("BIEXSBEXSS")], &[ts("BIEXSBEXBE")]).unwrap();
        let a = render_report(&r, ReportFormat::JsonLines);
        assert_eq!(a, render_report(&r, ReportFormat::JsonLines));
        assert_eq!(parse_json_lines(&a).unwrap(), r);
        let tsv = render_report(&r, ReportFormat::Tsv);
        assert_eq!(tsv.lines().next().unwrap(), "variant\tscope\tname\tcorrect\tpredicted\ttrue\tprecision\trecall\tf1");
        assert!(tsv.contains("\tmicro\tall\t8\t10\t10\t0.800000\t0.800000\t0.800000\n"));
    }
}
