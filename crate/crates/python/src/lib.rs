//! Python bindings: `sgnws.Config`, `sgnws.Vocab`, `sgnws.Model` and a few
//! free functions over the tagging scheme and the labeled file format.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use sgnws_core::corpus::{
    normalize_line, read_labeled_file, segmentation_from_tags as seg_from_tags, tags_from_segmentation as tags_from_seg,
    write_labeled_file, Labeled, Sentence,
};
use sgnws_core::model::{self, ModelConfig, ModelError, Trainer, Variant};
use sgnws_core::subword::{build_vocab, NgramVocab, DEFAULT_MIN_FREQ, MAX_N};
use sgnws_core::TagSequence;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn model_err(e: ModelError) -> PyErr {
    match e {
        ModelError::Io(e) => PyIOError::new_err(e.to_string()),
        e => value_err(e),
    }
}

fn read_data(path: &str) -> PyResult<Vec<Labeled>> {
    read_labeled_file(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))
}

/// Hyperparameters, addressed by the same keys as the `key=value` config files.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ModelConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (variant = "sgnws", **kwargs))]
    fn new(variant: &str, kwargs: Option<HashMap<String, Bound<'_, PyAny>>>) -> PyResult<Self> {
        let v: Variant = variant.parse().map_err(value_err)?;
        let mut cfg = PyConfig { inner: ModelConfig::for_variant(v) };
        for (k, val) in kwargs.unwrap_or_default() {
            cfg.set(&k, &val)?;
        }
        cfg.inner.validate().map_err(value_err)?;
        Ok(cfg)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner.get(key).ok_or_else(|| value_err(format!("unknown config key {key:?}")))
    }

    /// Bools are written `true`/`false`; anything else goes through `str()`.
    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let text = match value.extract::<bool>() {
            Ok(b) => b.to_string(),
            Err(_) => value.str()?.to_string(),
        };
        self.inner.set(key, &text).map_err(value_err)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(value_err)
    }

    fn to_kv(&self) -> String {
        self.inner.to_kv()
    }

    fn __repr__(&self) -> String {
        format!("Config({})", self.inner.to_kv().trim_end().replace('\n', ", "))
    }
}

#[pyclass(name = "Vocab", from_py_object)]
#[derive(Clone)]
struct PyVocab {
    inner: NgramVocab,
}

#[pymethods]
impl PyVocab {
    /// Builds the n-gram vocabulary from raw sentences (normalized first).
    #[staticmethod]
    #[pyo3(signature = (sentences, min_freq = None))]
    fn build(sentences: Vec<String>, min_freq: Option<Vec<u64>>) -> PyResult<Self> {
        let min_freq: [u64; MAX_N] = match min_freq {
            None => DEFAULT_MIN_FREQ,
            Some(v) => v.try_into().map_err(|_| value_err(format!("min_freq needs {MAX_N} values")))?,
        };
        let parsed: Vec<Sentence> = sentences.iter().map(|s| Sentence::from_text(&normalize_line(s))).collect();
        Ok(PyVocab { inner: build_vocab(&parsed, min_freq).map_err(value_err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let f = File::open(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        Ok(PyVocab { inner: NgramVocab::read(BufReader::new(f)).map_err(value_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let f = File::create(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        self.inner.write(f).map_err(value_err)
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn size(&self, n: usize) -> usize {
        self.inner.size(n)
    }

    fn lookup(&self, n: usize, ngram: &str) -> u32 {
        self.inner.lookup(n, ngram)
    }
}

#[pyclass(name = "Model")]
struct PyModel {
    inner: model::Model,
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(config: PyConfig, vocab: PyVocab) -> PyResult<Self> {
        Ok(PyModel { inner: model::Model::build(config.inner, vocab.inner).map_err(model_err)? })
    }

    #[staticmethod]
    fn load(path: &str, vocab: PyVocab) -> PyResult<Self> {
        Ok(PyModel { inner: model::Model::load(path, vocab.inner).map_err(model_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(model_err)
    }

    #[getter]
    fn config(&self) -> PyConfig {
        PyConfig { inner: self.inner.config.clone() }
    }

    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }

    /// Tag string for a normalized line.
    fn predict(&self, line: &str) -> PyResult<String> {
        let s = Sentence::from_text(&normalize_line(line));
        Ok(self.inner.predict(&s.chars).map_err(model_err)?.to_string())
    }

    fn segment(&self, line: &str) -> PyResult<Vec<String>> {
        Ok(self.inner.segment(line).map_err(model_err)?.tokens)
    }

    /// Trains in place on two labeled files and returns the per-epoch log.
    /// The model ends up holding the parameters of the best dev epoch.
    fn train(&mut self, train_path: &str, dev_path: &str) -> PyResult<Vec<HashMap<String, f64>>> {
        let train = read_data(train_path)?;
        let dev = read_data(dev_path)?;
        let out = Trainer::new(self.inner.clone(), &train, &dev).and_then(|t| t.run()).map_err(model_err)?;
        self.inner = out.model;
        Ok(out
            .log
            .iter()
            .map(|r| {
                HashMap::from([
                    ("epoch".to_string(), r.epoch as f64),
                    ("loss".to_string(), r.loss),
                    ("dev_p".to_string(), r.dev_p),
                    ("dev_r".to_string(), r.dev_r),
                    ("dev_f".to_string(), r.dev_f),
                ])
            })
            .collect())
    }

    /// Micro tag scores and exact-span token scores on a labeled file.
    fn evaluate(&self, path: &str) -> PyResult<HashMap<String, f64>> {
        let report = model::evaluate(&self.inner, &read_data(path)?).map_err(model_err)?;
        let micro = report.micro().prf();
        let token = report.token.unwrap_or_default().prf();
        Ok(HashMap::from([
            ("precision".to_string(), micro.precision),
            ("recall".to_string(), micro.recall),
            ("f1".to_string(), micro.f1),
            ("token_f1".to_string(), token.f1),
        ]))
    }
}

/// Tags for `tokens`; `joins[i]` glues token `i` to token `i + 1` with no space.
#[pyfunction]
#[pyo3(signature = (tokens, joins = None))]
fn tags_from_segmentation(tokens: Vec<String>, joins: Option<Vec<bool>>) -> PyResult<String> {
    let s = Sentence::from_tokens(&tokens, &joins.unwrap_or_default());
    Ok(tags_from_seg(&s).map_err(value_err)?.to_string())
}

#[pyfunction]
fn segmentation_from_tags(text: &str, tags: &str) -> PyResult<Vec<String>> {
    let chars: Vec<char> = text.chars().collect();
    let tags: TagSequence = tags.parse().map_err(value_err)?;
    Ok(seg_from_tags(&chars, &tags).map_err(value_err)?.tokens)
}

#[pyfunction(name = "normalize_line")]
fn py_normalize_line(line: &str) -> String {
    normalize_line(line)
}

/// `(text, tags)` pairs from a labeled file.
#[pyfunction]
fn read_labeled(path: &str) -> PyResult<Vec<(String, String)>> {
    Ok(read_data(path)?.into_iter().map(|l| (l.sentence.text(), l.tags.to_string())).collect())
}

/// Writes whitespace-tokenized lines as a labeled file.
#[pyfunction]
fn write_labeled(path: &str, lines: Vec<String>) -> PyResult<()> {
    let data: Vec<Labeled> = lines
        .iter()
        .map(|l| Labeled::from_sentence(Sentence::from_text(&normalize_line(l))))
        .collect::<Result<_, _>>()
        .map_err(value_err)?;
    write_labeled_file(path, &data).map_err(|e| PyIOError::new_err(e.to_string()))
}

#[pymodule]
fn sgnws(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyVocab>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(tags_from_segmentation, m)?)?;
    m.add_function(wrap_pyfunction!(segmentation_from_tags, m)?)?;
    m.add_function(wrap_pyfunction!(py_normalize_line, m)?)?;
    m.add_function(wrap_pyfunction!(read_labeled, m)?)?;
    m.add_function(wrap_pyfunction!(write_labeled, m)?)?;
    m.add("VARIANTS", Variant::ALL.iter().map(|v| v.name()).collect::<Vec<_>>())?;
    Ok(())
}
