//! Raw text ingestion, sentence splitting, BIESX tag conversion and the
//! character-per-line labeled file format.
//!
//! The labeled format is one character per line, `<char>\t<tag>`, with a
//! blank line after every sentence. A space is written as `\s`, a tab as `\t`
//! and a backslash as `\\`, so every data line is exactly one visible symbol,
//! a tab, and a tag letter.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::tags::{Tag, TagSequence};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid UTF-8 at byte {position}")]
    InvalidUtf8 { position: usize },
    #[error("token spans violate the sentence invariants: {0}")]
    SpanViolation(String),
    #[error("length mismatch: {chars} characters but {tags} tags")]
    LengthMismatch { chars: usize, tags: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios((f64, f64, f64)),
    #[error("line {line}: unknown tag {tag:?}")]
    BadTag { line: usize, tag: String },
    #[error("line {line}: bad escape {escape:?}")]
    BadEscape { line: usize, escape: String },
    #[error("line {line}: expected `<char>\\t<tag>`")]
    Malformed { line: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Half-open character index range `[start, end)`.
pub type Span = (usize, usize);

/// The whitespace class that triggers the `X` tag.
pub fn is_whitespace(c: char) -> bool {
    c == ' ' || c == '\t'
}

/// Sentence-final punctuation: period, comma, question mark, colon,
/// semicolon, exclamation mark, plus the Arabic-script comma, question mark,
/// semicolon and full stop. The dash is handled separately.
pub fn is_delimiter(c: char) -> bool {
    matches!(
        c,
        '.' | ',' | '?' | ':' | ';' | '!' | '\u{060C}' | '\u{061B}' | '\u{061F}' | '\u{06D4}'
    )
}

fn is_dash(c: char) -> bool {
    matches!(c, '-' | '\u{2010}' | '\u{2013}' | '\u{2014}')
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Sentence {
    /// Characters in logical order.
    pub chars: Vec<char>,
    /// Gold token spans. `None` means tokens are the whitespace-delimited runs.
    pub token_spans: Option<Vec<Span>>,
}

impl Sentence {
    pub fn new(chars: Vec<char>, token_spans: Option<Vec<Span>>) -> Self {
        Sentence { chars, token_spans }
    }

    /// Builds a sentence whose gold tokens are the whitespace-delimited runs
    /// of `text`, except that a trailing sentence delimiter glued to a longer
    /// run becomes its own single-character token.
    pub fn from_text(text: &str) -> Self {
        let chars: Vec<char> = text.chars().collect();
        let mut spans = Vec::new();
        for (start, end) in whitespace_runs(&chars) {
            if end - start > 1 && is_delimiter(chars[end - 1]) {
                spans.push((start, end - 1));
                spans.push((end - 1, end));
            } else {
                spans.push((start, end));
            }
        }
        Sentence { chars, token_spans: Some(spans) }
    }

    /// Builds a sentence from gold tokens and the separators between them.
    /// `joins[i]` says whether token `i` and `i + 1` are written without a space.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S], joins: &[bool]) -> Self {
        let mut chars = Vec::new();
        let mut spans = Vec::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if i > 0 && !joins.get(i - 1).copied().unwrap_or(false) {
                chars.push(' ');
            }
            let start = chars.len();
            chars.extend(tok.as_ref().chars());
            spans.push((start, chars.len()));
        }
        Sentence { chars, token_spans: Some(spans) }
    }

    pub fn text(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// Gold spans, or the whitespace-delimited runs when none are stored.
    pub fn spans(&self) -> Vec<Span> {
        match &self.token_spans {
            Some(s) => s.clone(),
            None => whitespace_runs(&self.chars),
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        self.spans()
            .iter()
            .map(|&(a, b)| self.chars[a..b].iter().collect())
            .collect()
    }

    /// Number of whitespace-delimited tokens, the unit of the length filters.
    pub fn whitespace_token_count(&self) -> usize {
        whitespace_runs(&self.chars).len()
    }

    fn slice(&self, start: usize, end: usize) -> Sentence {
        let chars = self.chars[start..end].to_vec();
        let token_spans = self.token_spans.as_ref().map(|spans| {
            spans
                .iter()
                .filter(|&&(a, b)| a >= start && b <= end)
                .map(|&(a, b)| (a - start, b - start))
                .collect()
        });
        Sentence { chars, token_spans }
    }
}

/// Maximal runs of non-whitespace characters.
pub fn whitespace_runs(chars: &[char]) -> Vec<Span> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &c) in chars.iter().enumerate() {
        match (is_whitespace(c), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                runs.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, chars.len()));
    }
    runs
}

/// Normalizes one line: NFC, Unicode space separators mapped to U+0020,
/// whitespace runs collapsed to their first character, ends trimmed.
pub fn normalize_line(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut prev_ws = true;
    for c in line.nfc() {
        let c = if c != '\t' && c != '\n' && (c.is_whitespace() || c == '\u{00A0}') {
            ' '
        } else {
            c
        };
        if is_whitespace(c) {
            if !prev_ws {
                out.push(c);
            }
            prev_ws = true;
        } else {
            out.push(c);
            prev_ws = false;
        }
    }
    while out.ends_with(is_whitespace) {
        out.pop();
    }
    out
}

/// Decodes a raw byte stream into one normalized sentence per input line.
/// CR LF and lone CR count as line breaks.
pub fn normalize_text(raw: &[u8]) -> Result<Vec<Sentence>> {
    let text = std::str::from_utf8(raw).map_err(|e| CorpusError::InvalidUtf8 {
        position: e.valid_up_to(),
    })?;
    let text = text.replace("\r\n", "\n").replace('\r', "\n");
    let mut lines: Vec<&str> = text.split('\n').collect();
    if text.ends_with('\n') {
        lines.pop();
    }
    Ok(lines.into_iter().map(|l| Sentence::from_text(&normalize_line(l))).collect())
}

/// Splits at sentence delimiters and enforces the token-count window.
///
/// A delimiter ends a sentence only when followed by whitespace or the end of
/// the line, and a dash only when it stands alone between whitespace, so
/// dates and decimals stay intact. Pieces longer than `max_tokens` are cut
/// into `max_tokens`-sized chunks at whitespace; pieces shorter than
/// `min_tokens` are dropped.
pub fn split_sentences(
    sentences: &[Sentence],
    min_tokens: usize,
    max_tokens: usize,
) -> Vec<Sentence> {
    let mut out = Vec::new();
    for sentence in sentences {
        for piece in split_at_delimiters(sentence) {
            for chunk in split_long(&piece, max_tokens) {
                if chunk.whitespace_token_count() >= min_tokens {
                    out.push(chunk);
                }
            }
        }
    }
    out
}

fn split_at_delimiters(sentence: &Sentence) -> Vec<Sentence> {
    let chars = &sentence.chars;
    let n = chars.len();
    let mut cuts = Vec::new();
    for i in 0..n {
        let next_ws = i + 1 == n || is_whitespace(chars[i + 1]);
        let prev_ws = i == 0 || is_whitespace(chars[i - 1]);
        if next_ws && (is_delimiter(chars[i]) || (is_dash(chars[i]) && prev_ws)) {
            cuts.push(i + 1);
        }
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    for cut in cuts.into_iter().chain(std::iter::once(n)) {
        if let Some(p) = trimmed_slice(sentence, start, cut) {
            pieces.push(p);
        }
        start = cut;
    }
    pieces
}

fn trimmed_slice(sentence: &Sentence, mut start: usize, mut end: usize) -> Option<Sentence> {
    while start < end && is_whitespace(sentence.chars[start]) {
        start += 1;
    }
    while end > start && is_whitespace(sentence.chars[end - 1]) {
        end -= 1;
    }
    (start < end).then(|| sentence.slice(start, end))
}

fn split_long(sentence: &Sentence, max_tokens: usize) -> Vec<Sentence> {
    let runs = whitespace_runs(&sentence.chars);
    if runs.len() <= max_tokens || max_tokens == 0 {
        return vec![sentence.clone()];
    }
    runs.chunks(max_tokens)
        .filter_map(|chunk| trimmed_slice(sentence, chunk[0].0, chunk[chunk.len() - 1].1))
        .collect()
}

fn validate_spans(chars: &[char], spans: &[Span]) -> Result<()> {
    let mut covered = vec![false; chars.len()];
    let mut prev_end = 0;
    for (k, &(a, b)) in spans.iter().enumerate() {
        if a >= b || b > chars.len() {
            return Err(CorpusError::SpanViolation(format!("span {k} ({a},{b}) is empty or out of range")));
        }
        if k > 0 && a < prev_end {
            return Err(CorpusError::SpanViolation(format!("span {k} ({a},{b}) overlaps or precedes span {}", k - 1)));
        }
        if let Some(i) = (a..b).find(|&i| is_whitespace(chars[i])) {
            return Err(CorpusError::SpanViolation(format!("span {k} covers whitespace at {i}")));
        }
        covered[a..b].iter_mut().for_each(|c| *c = true);
        prev_end = b;
    }
    if let Some(i) = (0..chars.len()).find(|&i| !covered[i] && !is_whitespace(chars[i])) {
        return Err(CorpusError::SpanViolation(format!("character {i} is not covered by any span")));
    }
    Ok(())
}

/// Labels every character: `S` for one-character tokens, `B I* E` for longer
/// ones, `X` for whitespace. Digits and punctuation inside one span get one
/// continuous run.
pub fn tags_from_segmentation(sentence: &Sentence) -> Result<TagSequence> {
    let spans = sentence.spans();
    validate_spans(&sentence.chars, &spans)?;
    let mut tags = vec![Tag::X; sentence.chars.len()];
    for (a, b) in spans {
        if b - a == 1 {
            tags[a] = Tag::S;
        } else {
            tags[a] = Tag::B;
            tags[a + 1..b - 1].iter_mut().for_each(|t| *t = Tag::I);
            tags[b - 1] = Tag::E;
        }
    }
    Ok(TagSequence(tags))
}

/// Tokens recovered from a tag sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Segmentation {
    pub tokens: Vec<String>,
    pub spans: Vec<Span>,
    /// Number of places where the tags broke the `(X | S | B I* E)*` grammar
    /// or disagreed with the whitespace in the text.
    pub repair_count: usize,
}

impl Segmentation {
    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Inverse of [`tags_from_segmentation`].
///
/// A token is closed after every `E` and `S`, before every `B`, `S` and `X`,
/// and at the end of the sequence. Whitespace characters never join a token
/// and non-whitespace characters are never dropped; each disagreement between
/// the two, and each token that is not `S` or `B I* E`, counts one repair.
pub fn segmentation_from_tags(chars: &[char], tags: &TagSequence) -> Result<Segmentation> {
    if chars.len() != tags.len() {
        return Err(CorpusError::LengthMismatch { chars: chars.len(), tags: tags.len() });
    }
    let mut seg = Segmentation::default();
    let mut current: Option<(usize, Vec<Tag>)> = None;

    fn close(seg: &mut Segmentation, chars: &[char], cur: &mut Option<(usize, Vec<Tag>)>, end: usize) {
        if let Some((start, tags)) = cur.take() {
            if !TagSequence(tags).is_well_formed() {
                seg.repair_count += 1;
            }
            seg.tokens.push(chars[start..end].iter().collect());
            seg.spans.push((start, end));
        }
    }

    for (i, (&c, &tag)) in chars.iter().zip(tags.iter()).enumerate() {
        if is_whitespace(c) {
            close(&mut seg, chars, &mut current, i);
            if tag != Tag::X {
                seg.repair_count += 1;
            }
            continue;
        }
        match tag {
            Tag::X => {
                // non-whitespace tagged X: keep the character, open a token
                close(&mut seg, chars, &mut current, i);
                seg.repair_count += 1;
                current = Some((i, vec![Tag::B]));
            }
            Tag::B => {
                close(&mut seg, chars, &mut current, i);
                current = Some((i, vec![Tag::B]));
            }
            Tag::S => {
                close(&mut seg, chars, &mut current, i);
                current = Some((i, vec![Tag::S]));
                close(&mut seg, chars, &mut current, i + 1);
            }
            Tag::I | Tag::E => {
                current.get_or_insert_with(|| (i, Vec::new())).1.push(tag);
                if tag == Tag::E {
                    close(&mut seg, chars, &mut current, i + 1);
                }
            }
        }
    }
    close(&mut seg, chars, &mut current, chars.len());
    Ok(seg)
}

/// A sentence paired with its tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeled {
    pub sentence: Sentence,
    pub tags: TagSequence,
}

impl Labeled {
    pub fn from_sentence(sentence: Sentence) -> Result<Self> {
        let tags = tags_from_segmentation(&sentence)?;
        Ok(Labeled { sentence, tags })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle followed by a contiguous partition. Boundaries are the
/// floors of the cumulative ratios, so every part is within one item of its
/// exact share.
pub fn split_dataset<T>(mut items: Vec<T>, ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit<T>> {
    let (a, b, c) = ratios;
    if a < 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadRatios(ratios));
    }
    if items.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    let n = items.len();
    let cut = |r: f64| ((n as f64 * r + 1e-9).floor() as usize).min(n);
    let first = cut(a);
    let second = cut(a + b).max(first);
    let test = items.split_off(second);
    let dev = items.split_off(first);
    Ok(DatasetSplit { train: items, dev, test })
}

fn escape_char(c: char, out: &mut String) {
    match c {
        ' ' => out.push_str("\\s"),
        '\t' => out.push_str("\\t"),
        '\\' => out.push_str("\\\\"),
        c => out.push(c),
    }
}

/// Writes labeled sentences in the character-per-line format.
pub fn write_labeled<W: Write>(mut w: W, data: &[Labeled]) -> Result<()> {
    let mut line = String::new();
    for item in data {
        if item.sentence.chars.len() != item.tags.len() {
            return Err(CorpusError::LengthMismatch {
                chars: item.sentence.chars.len(),
                tags: item.tags.len(),
            });
        }
        for (&c, tag) in item.sentence.chars.iter().zip(item.tags.iter()) {
            line.clear();
            escape_char(c, &mut line);
            line.push('\t');
            line.push(tag.as_char());
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_labeled_file(path: impl AsRef<Path>, data: &[Labeled]) -> Result<()> {
    write_labeled(BufWriter::new(File::create(path)?), data)
}

fn parse_line(line: &str, lineno: usize) -> Result<(char, Tag)> {
    let (sym, tag) = line.split_once('\t').ok_or(CorpusError::Malformed { line: lineno })?;
    let tag = Tag::from_str_exact(tag).ok_or_else(|| CorpusError::BadTag { line: lineno, tag: tag.to_string() })?;
    let mut it = sym.chars();
    let c = match (it.next(), it.next(), it.next()) {
        (Some('\\'), Some(e), None) => match e {
            's' => ' ',
            't' => '\t',
            '\\' => '\\',
            _ => return Err(CorpusError::BadEscape { line: lineno, escape: sym.to_string() }),
        },
        (Some('\\'), _, _) => return Err(CorpusError::BadEscape { line: lineno, escape: sym.to_string() }),
        (Some(c), None, _) => c,
        _ => return Err(CorpusError::Malformed { line: lineno }),
    };
    Ok((c, tag))
}

impl Tag {
    fn from_str_exact(s: &str) -> Option<Tag> {
        let mut it = s.chars();
        match (it.next(), it.next()) {
            (Some(c), None) => Tag::from_char(c),
            _ => None,
        }
    }
}

/// Reads the character-per-line format. Gold spans are recovered from the
/// tags when they are well formed.
pub fn read_labeled<R: BufRead>(r: R) -> Result<Vec<Labeled>> {
    let mut out = Vec::new();
    let mut chars = Vec::new();
    let mut tags = Vec::new();
    let flush = |chars: &mut Vec<char>, tags: &mut Vec<Tag>, out: &mut Vec<Labeled>| {
        if chars.is_empty() {
            return;
        }
        let tags = TagSequence(std::mem::take(tags));
        let chars = std::mem::take(chars);
        let spans = if tags.is_well_formed() {
            segmentation_from_tags(&chars, &tags)
                .ok()
                .filter(|s| s.repair_count == 0)
                .map(|s| s.spans)
        } else {
            None
        };
        out.push(Labeled { sentence: Sentence::new(chars, spans), tags });
    };
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            flush(&mut chars, &mut tags, &mut out);
            continue;
        }
        let (c, t) = parse_line(&line, i + 1)?;
        chars.push(c);
        tags.push(t);
    }
    flush(&mut chars, &mut tags, &mut out);
    Ok(out)
}

pub fn read_labeled_file(path: impl AsRef<Path>) -> Result<Vec<Labeled>> {
    read_labeled(BufReader::new(File::open(path)?))
}

/// Corpus statistics: sentences, tokens, unique words, average word length.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub sentences: usize,
    pub tokens: usize,
    pub unique_words: usize,
    pub average_word_length: f64,
}

impl CorpusStats {
    pub fn compute<'a>(data: impl IntoIterator<Item = &'a Labeled>) -> Self {
        let mut sentences = 0;
        let mut tokens = 0;
        let mut chars = 0;
        let mut unique = HashSet::new();
        for item in data {
            sentences += 1;
            for tok in item.sentence.tokens() {
                tokens += 1;
                chars += tok.chars().count();
                unique.insert(tok);
            }
        }
        CorpusStats {
            sentences,
            tokens,
            unique_words: unique.len(),
            average_word_length: if tokens == 0 { 0.0 } else { chars as f64 / tokens as f64 },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(s: &str) -> TagSequence {
        s.parse().unwrap()
    }

    #[test]
    fn collapses_double_space() {
        assert_eq!(normalize_line("ab  c"), "ab c");
        assert_eq!(normalize_line("  ab \t c  "), "ab c");
    }

    #[test]
    fn ascii_is_fixed_point() {
        let s = "The quick brown fox, 25-06-2020.";
        assert_eq!(normalize_line(s), s);
    }

    #[test]
    fn composes_combining_marks() {
        // oracle pairs from the Unicode composition tables
        let cases = [
            ("e\u{0301}", "\u{00E9}"),
            ("A\u{030A}", "\u{00C5}"),
            ("\u{0627}\u{0653}", "\u{0622}"),
            ("\u{0627}\u{0654}", "\u{0623}"),
            ("\u{0648}\u{0654}", "\u{0624}"),
            ("\u{064A}\u{0654}", "\u{0626}"),
        ];
        for (input, expected) in cases {
            assert_eq!(normalize_line(input), expected);
        }
    }

    #[test]
    fn other_spaces_become_ascii_space() {
        assert_eq!(normalize_line("a\u{00A0}b\u{3000}c"), "a b c");
        // ZWNJ is an ordinary character
        assert_eq!(normalize_line("a\u{200C}b"), "a\u{200C}b");
    }

    #[test]
    fn invalid_utf8_reports_position() {
        let err = normalize_text(b"ab\xffcd").unwrap_err();
        assert!(matches!(err, CorpusError::InvalidUtf8 { position: 2 }));
    }

    #[test]
    fn normalize_text_splits_lines() {
        let out = normalize_text(b"a  b\r\nc\rd\n\ne\n").unwrap();
        let texts: Vec<_> = out.iter().map(|s| s.text()).collect();
        assert_eq!(texts, vec!["a b", "c", "d", "", "e"]);
    }

    fn words(n: usize) -> String {
        (1..=n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn split_drops_short_fragment() {
        let s = Sentence::from_text("w1 w2 w3 w4 w5. w6 w7");
        let out = split_sentences(&[s], 5, 300);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].text(), "w1 w2 w3 w4 w5.");
        assert_eq!(out[0].tokens().last().unwrap(), ".");
    }

    #[test]
    fn split_long_sentences() {
        let out = split_sentences(&[Sentence::from_text(&words(301))], 5, 300);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].whitespace_token_count(), 300);

        let out = split_sentences(&[Sentence::from_text(&words(600))], 5, 300);
        let counts: Vec<_> = out.iter().map(|s| s.whitespace_token_count()).collect();
        assert_eq!(counts, vec![300, 300]);
        assert_eq!(out[1].chars[0..4].iter().collect::<String>(), "w301");
    }

    #[test]
    fn intra_token_punctuation_survives() {
        let s = Sentence::from_text("on 25-06-2020 paid 4736$ or 689.0967 - then more words here");
        let out = split_sentences(&[s], 1, 300);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].text(), "on 25-06-2020 paid 4736$ or 689.0967 -");
        assert_eq!(out[1].text(), "then more words here");
    }

    #[test]
    fn date_gets_continuous_tags() {
        let s = Sentence::from_text("25-06-2020");
        assert_eq!(tags_from_segmentation(&s).unwrap(), tags("BIIIIIIIIE"));
    }

    #[test]
    fn basic_tagging() {
        assert_eq!(tags_from_segmentation(&Sentence::from_text("a")).unwrap(), tags("S"));
        assert_eq!(tags_from_segmentation(&Sentence::from_text("ab c")).unwrap(), tags("BEXS"));
        let joined = Sentence::from_tokens(&["ab", "c", "de"], &[true, false]);
        assert_eq!(joined.text(), "abc de");
        assert_eq!(tags_from_segmentation(&joined).unwrap(), tags("BESXBE"));
    }

    #[test]
    fn span_violations() {
        let chars: Vec<char> = "ab c".chars().collect();
        let overlap = Sentence::new(chars.clone(), Some(vec![(0, 2), (1, 2), (3, 4)]));
        assert!(matches!(tags_from_segmentation(&overlap), Err(CorpusError::SpanViolation(_))));
        let ws = Sentence::new(chars.clone(), Some(vec![(0, 4)]));
        assert!(matches!(tags_from_segmentation(&ws), Err(CorpusError::SpanViolation(_))));
        let gap = Sentence::new(chars, Some(vec![(0, 2)]));
        assert!(matches!(tags_from_segmentation(&gap), Err(CorpusError::SpanViolation(_))));
    }

    #[test]
    fn inverse_and_repair() {
        let chars: Vec<char> = "ab c".chars().collect();
        let seg = segmentation_from_tags(&chars, &tags("BEXS")).unwrap();
        assert_eq!(seg.tokens, vec!["ab", "c"]);
        assert_eq!(seg.repair_count, 0);

        let chars: Vec<char> = "abc".chars().collect();
        let seg = segmentation_from_tags(&chars, &tags("BII")).unwrap();
        assert_eq!(seg.tokens, vec!["abc"]);
        assert_eq!(seg.repair_count, 1);

        let seg = segmentation_from_tags(&chars, &tags("BBE")).unwrap();
        assert_eq!(seg.tokens, vec!["a", "bc"]);
        assert_eq!(seg.repair_count, 1);

        assert!(matches!(
            segmentation_from_tags(&chars, &tags("BE")),
            Err(CorpusError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn whitespace_never_joins_tokens() {
        let chars: Vec<char> = "ab c".chars().collect();
        let seg = segmentation_from_tags(&chars, &tags("BIIE")).unwrap();
        assert_eq!(seg.tokens, vec!["ab", "c"]);
        assert!(seg.repair_count >= 1);
        let seg = segmentation_from_tags(&chars, &tags("BXXS")).unwrap();
        assert_eq!(seg.tokens, vec!["a", "b", "c"]);
        assert!(seg.repair_count >= 1);
    }

    #[test]
    fn split_ratios() {
        let split = split_dataset((0..10).collect(), (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!((split.train.len(), split.dev.len(), split.test.len()), (8, 1, 1));
        let again = split_dataset((0..10).collect(), (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(split, again);

        let big = split_dataset((0..91_753).collect(), (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!((big.train.len(), big.dev.len(), big.test.len()), (73_402, 9_175, 9_176));
        let mut all: Vec<i32> = big.train.iter().chain(&big.dev).chain(&big.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..91_753).collect::<Vec<_>>());
    }

    #[test]
    fn split_errors() {
        assert!(matches!(split_dataset(Vec::<u8>::new(), (0.8, 0.1, 0.1), 0), Err(CorpusError::EmptyCorpus)));
        assert!(matches!(split_dataset(vec![1], (0.5, 0.1, 0.1), 0), Err(CorpusError::BadRatios(_))));
    }

    #[test]
    fn labeled_format_lines() {
        let item = Labeled::from_sentence(Sentence::from_text("ab c")).unwrap();
        let mut buf = Vec::new();
        write_labeled(&mut buf, &[item]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a\tB\nb\tE\n\\s\tX\nc\tS\n\n");
    }

    #[test]
    fn labeled_read_errors() {
        let err = read_labeled("a\tB\nb\tQ\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::BadTag { line: 2, .. }), "{err}");
        let err = read_labeled("\\q\tS\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::BadEscape { line: 1, .. }));
        let err = read_labeled("ab\tS\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 1 }));
    }

    #[test]
    fn escapes_round_trip() {
        let s = Sentence::from_tokens(&["a\\b", "c"], &[false]);
        let item = Labeled::from_sentence(s).unwrap();
        let mut buf = Vec::new();
        write_labeled(&mut buf, std::slice::from_ref(&item)).unwrap();
        let back = read_labeled(buf.as_slice()).unwrap();
        assert_eq!(back, vec![item]);
    }

    #[test]
    fn stats_hand_count() {
        let data: Vec<_> = ["ab cd ab", "e fgh"]
            .iter()
            .map(|t| Labeled::from_sentence(Sentence::from_text(t)).unwrap())
            .collect();
        let stats = CorpusStats::compute(&data);
        assert_eq!(stats.sentences, 2);
        assert_eq!(stats.tokens, 5);
        assert_eq!(stats.unique_words, 4);
        assert!((stats.average_word_length - 10.0 / 5.0).abs() < 1e-12);
    }
}
