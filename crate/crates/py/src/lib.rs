//! Python bindings.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use nuer_core::annotate::annotate_corpus;
use nuer_core::checkpoint::{load_checkpoint, save_checkpoint};
use nuer_core::corpus::{self as corp, GenConfig, SplitRatios};
use nuer_core::encoder::EncoderConfig;
use nuer_core::fitb::{self, FitbMode, NumeralVocab};
use nuer_core::qa::{self, QaMode};
use nuer_core::tagger;
use nuer_core::train::TrainConfig;
use nuer_core::{diagnostics, tokenizer, EntityLabel, ModelConfig, Task};

create_exception!(nuer, NuerError, PyException);

fn err(e: nuer_core::Error) -> PyErr {
    NuerError::new_err(format!("{}: {}", e.kind(), e))
}

fn json_err(e: serde_json::Error) -> PyErr {
    NuerError::new_err(format!("config: {e}"))
}

fn to_py<T: serde::Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(json_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn encoder_config(json: Option<&str>, vocab: &tokenizer::Vocabulary, seed: u64) -> PyResult<EncoderConfig> {
    let mut c: EncoderConfig = match json {
        Some(s) => serde_json::from_str(s).map_err(json_err)?,
        None => EncoderConfig::default(),
    };
    c.vocab_size = vocab.len();
    c.seed = seed;
    Ok(c)
}

/// A collection of tokenized, labeled sentences.
#[pyclass(module = "nuer", skip_from_py_object)]
#[derive(Clone)]
struct Corpus {
    inner: corp::Corpus,
}

#[pymethods]
impl Corpus {
    /// Generates a synthetic corpus. `config_json` holds generator fields;
    /// the keyword arguments override it.
    #[staticmethod]
    #[pyo3(signature = (n=None, seed=None, questions=false, shared_template_prob=None, config_json=None))]
    fn generate(
        n: Option<usize>,
        seed: Option<u64>,
        questions: bool,
        shared_template_prob: Option<f64>,
        config_json: Option<&str>,
    ) -> PyResult<Self> {
        let mut c: GenConfig = match config_json {
            Some(s) => serde_json::from_str(s).map_err(json_err)?,
            None => GenConfig::default(),
        };
        if let Some(n) = n {
            c.n_sentences = n;
        }
        if let Some(s) = seed {
            c.seed = s;
        }
        if let Some(p) = shared_template_prob {
            c.shared_template_prob = p;
        }
        c.questions |= questions;
        Ok(Corpus {
            inner: corp::generate_corpus(&c).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Corpus {
            inner: corp::load_dataset(path).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (text, source="python"))]
    fn from_jsonl(text: &str, source: &str) -> PyResult<Self> {
        Ok(Corpus {
            inner: corp::parse_dataset(text, source).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        corp::save_dataset(&self.inner, path).map_err(err)
    }

    fn to_jsonl(&self) -> String {
        corp::write_dataset(&self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Corpus(len={}, provenance={:?})", self.inner.len(), self.inner.provenance)
    }

    #[getter]
    fn provenance(&self) -> String {
        self.inner.provenance.clone()
    }

    /// Sentences as plain dicts.
    fn sentences(&self, py: Python<'_>) -> PyResult<Vec<Py<PyAny>>> {
        let json = py.import("json")?;
        corp::write_dataset(&self.inner)
            .lines()
            .skip(1)
            .map(|l| Ok(json.call_method1("loads", (l,))?.unbind()))
            .collect()
    }

    /// Token counts per label name.
    fn label_histogram<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (code, n) in self.inner.label_histogram().iter().enumerate() {
            d.set_item(EntityLabel::from_code(code).unwrap().as_str(), n)?;
        }
        Ok(d)
    }

    #[pyo3(signature = (seed=0, train=0.75, val=0.10, test=0.15))]
    fn split(&self, seed: u64, train: f64, val: f64, test: f64) -> PyResult<(Corpus, Corpus, Corpus)> {
        let (a, b, c) = corp::split_corpus(&self.inner, SplitRatios { train, val, test }, seed).map_err(err)?;
        Ok((Corpus { inner: a }, Corpus { inner: b }, Corpus { inner: c }))
    }

    /// Magnitude-stratified subset of `n` sentences.
    #[pyo3(signature = (n, seed=0))]
    fn audit_sample(&self, n: usize, seed: u64) -> PyResult<Corpus> {
        Ok(Corpus {
            inner: corp::magnitude_audit_sample(&self.inner, n, seed).map_err(err)?,
        })
    }
}

#[pyclass(module = "nuer", skip_from_py_object)]
#[derive(Clone)]
struct Vocabulary {
    inner: tokenizer::Vocabulary,
}

#[pymethods]
impl Vocabulary {
    #[staticmethod]
    #[pyo3(signature = (corpus, min_freq=1))]
    fn build(corpus: &Corpus, min_freq: usize) -> PyResult<Self> {
        Ok(Vocabulary {
            inner: tokenizer::build_vocab(&corpus.inner, min_freq).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Vocabulary {
            inner: tokenizer::Vocabulary::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, token: &str) -> bool {
        self.inner.get(token).is_some()
    }

    /// Id of `token`, `None` if absent.
    fn id(&self, token: &str) -> Option<u32> {
        self.inner.get(token)
    }

    fn token(&self, id: u32) -> Option<String> {
        self.inner.token(id).map(str::to_string)
    }

    fn sha256(&self) -> String {
        self.inner.sha256()
    }
}

/// A trained encoder with a tagging, QA or masked-numeral head.
#[pyclass(module = "nuer", skip_from_py_object)]
#[derive(Clone)]
struct Model {
    inner: nuer_core::Model,
}

#[pymethods]
impl Model {
    /// Loads a checkpoint; with `vocab`, its hash must match.
    #[staticmethod]
    #[pyo3(signature = (path, vocab=None))]
    fn load(path: &str, vocab: Option<&Vocabulary>) -> PyResult<Self> {
        let (inner, _) = load_checkpoint(path, vocab.map(|v| &v.inner)).map_err(err)?;
        Ok(Model { inner })
    }

    fn save(&self, path: &str, vocab: &Vocabulary) -> PyResult<()> {
        save_checkpoint(&self.inner, &vocab.inner, path).map_err(err)
    }

    /// Model configuration as a dict.
    fn config(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.config())
    }

    fn param_count(&self) -> usize {
        use nuer_core::nn::HasParams;
        self.inner.params().iter().map(|(_, p)| p.len()).sum()
    }

    /// Tags a whitespace-tokenized sentence. Returns `(label, confidence)` per token.
    fn tag(&self, tokens: Vec<String>, vocab: &Vocabulary) -> PyResult<Vec<(String, f64)>> {
        let n = tokens.len();
        let s = nuer_core::Sentence::new("py", tokens, vec![EntityLabel::Other; n]);
        let t = tagger::tag_sentence(&self.inner, &vocab.inner, &s).map_err(err)?;
        let conf = t.confidences();
        Ok(t.labels.iter().zip(conf).map(|(l, c)| (l.as_str().to_string(), c)).collect())
    }

    fn __repr__(&self) -> String {
        format!("Model(task={:?}, params={})", self.inner.task, self.param_count())
    }
}

fn train_config(epochs: usize, lr: f64, batch: usize, seed: u64, verbose: bool) -> TrainConfig {
    let mut c = TrainConfig::new(epochs, lr, batch, seed);
    c.verbose = verbose;
    c
}

fn empty_val(val: Option<&Corpus>) -> corp::Corpus {
    val.map(|v| v.inner.clone()).unwrap_or_else(|| corp::Corpus::new(Vec::new(), "none"))
}

#[pyfunction]
#[pyo3(signature = (train, vocab, val=None, epochs=tagger::DEFAULT_EPOCHS, lr=tagger::DEFAULT_LR, batch=tagger::DEFAULT_BATCH, seed=0, encoder_json=None, verbose=false))]
#[allow(clippy::too_many_arguments)]
fn train_tagger(
    py: Python<'_>,
    train: &Corpus,
    vocab: &Vocabulary,
    val: Option<&Corpus>,
    epochs: usize,
    lr: f64,
    batch: usize,
    seed: u64,
    encoder_json: Option<&str>,
    verbose: bool,
) -> PyResult<Model> {
    let encoder = encoder_config(encoder_json, &vocab.inner, seed)?;
    let (tr, va, vo) = (&train.inner, empty_val(val), &vocab.inner);
    let cfg = train_config(epochs, lr, batch, seed, verbose);
    let best = py.detach(|| {
        let mut m = nuer_core::Model::new(ModelConfig {
            encoder,
            task: Task::Tagger,
        })?;
        tagger::train_tagger(&mut m, vo, tr, &va, &cfg).map(|r| r.0)
    });
    Ok(Model { inner: best.map_err(err)? })
}

#[pyfunction]
#[pyo3(signature = (train, vocab, mode="jem", val=None, epochs=qa::DEFAULT_EPOCHS, lr=qa::DEFAULT_LR, batch=qa::DEFAULT_BATCH, seed=0, encoder_json=None, verbose=false))]
#[allow(clippy::too_many_arguments)]
fn train_qa(
    py: Python<'_>,
    train: &Corpus,
    vocab: &Vocabulary,
    mode: &str,
    val: Option<&Corpus>,
    epochs: usize,
    lr: f64,
    batch: usize,
    seed: u64,
    encoder_json: Option<&str>,
    verbose: bool,
) -> PyResult<Model> {
    let mode: QaMode = mode.parse().map_err(err)?;
    let encoder = encoder_config(encoder_json, &vocab.inner, seed)?;
    let (tr, va, vo) = (&train.inner, empty_val(val), &vocab.inner);
    let cfg = train_config(epochs, lr, batch, seed, verbose);
    let best = py.detach(|| {
        let mut m = nuer_core::Model::new(ModelConfig {
            encoder,
            task: Task::Qa { mode },
        })?;
        qa::train_qa(&mut m, vo, tr, &va, &cfg).map(|r| r.0)
    });
    Ok(Model { inner: best.map_err(err)? })
}

#[pyfunction]
#[pyo3(signature = (train, vocab, mode="entity", val=None, epochs=fitb::DEFAULT_EPOCHS, lr=fitb::DEFAULT_LR, batch=fitb::DEFAULT_BATCH, seed=0, encoder_json=None, verbose=false))]
#[allow(clippy::too_many_arguments)]
fn train_fitb(
    py: Python<'_>,
    train: &Corpus,
    vocab: &Vocabulary,
    mode: &str,
    val: Option<&Corpus>,
    epochs: usize,
    lr: f64,
    batch: usize,
    seed: u64,
    encoder_json: Option<&str>,
    verbose: bool,
) -> PyResult<Model> {
    let mode: FitbMode = mode.parse().map_err(err)?;
    let encoder = encoder_config(encoder_json, &vocab.inner, seed)?;
    let numerals = NumeralVocab::from_vocabulary(&vocab.inner).map_err(err)?;
    let (tr, va, vo) = (&train.inner, empty_val(val), &vocab.inner);
    let cfg = train_config(epochs, lr, batch, seed, verbose);
    let best = py.detach(|| {
        let mut m = nuer_core::Model::new(ModelConfig {
            encoder,
            task: Task::Fitb {
                mode,
                n_numerals: numerals.len(),
            },
        })?;
        fitb::train_fitb(&mut m, vo, &numerals, tr, &va, &cfg).map(|r| r.0)
    });
    Ok(Model { inner: best.map_err(err)? })
}

/// Per-entity precision, recall and F1 plus micro totals.
#[pyfunction]
fn evaluate_tagger(py: Python<'_>, model: &Model, vocab: &Vocabulary, data: &Corpus) -> PyResult<Py<PyAny>> {
    let m = tagger::evaluate_tagger(&model.inner, &vocab.inner, &data.inner).map_err(err)?;
    to_py(py, &m)
}

/// Exact match and token F1. Entity inputs come from `tagger` when given,
/// gold labels otherwise.
#[pyfunction]
#[pyo3(signature = (model, vocab, data, tagger=None))]
fn evaluate_qa(
    py: Python<'_>,
    model: &Model,
    vocab: &Vocabulary,
    data: &Corpus,
    tagger: Option<&Model>,
) -> PyResult<Py<PyAny>> {
    let source = match tagger {
        Some(t) => qa::EntitySource::Tagger(&t.inner),
        None => qa::EntitySource::Gold,
    };
    let m = qa::evaluate_qa(&model.inner, &vocab.inner, &data.inner, source).map_err(err)?;
    to_py(py, &m)
}

/// Top-k accuracy and mean value distance over masked numerals.
#[pyfunction]
#[pyo3(signature = (model, vocab, data, ks=fitb::DEFAULT_KS.to_vec(), tagger=None))]
fn evaluate_fitb(
    py: Python<'_>,
    model: &Model,
    vocab: &Vocabulary,
    data: &Corpus,
    ks: Vec<usize>,
    tagger: Option<&Model>,
) -> PyResult<Py<PyAny>> {
    let numerals = NumeralVocab::from_vocabulary(&vocab.inner).map_err(err)?;
    let source = match tagger {
        Some(t) => fitb::EntitySource::Tagger(&t.inner),
        None => fitb::EntitySource::Gold,
    };
    let m = fitb::evaluate_fitb(&model.inner, &vocab.inner, &numerals, &data.inner, &ks, source).map_err(err)?;
    to_py(py, &m)
}

/// Relabels `data` with tagger predictions, keeping only numerals whose
/// confidence reaches `threshold`.
#[pyfunction]
#[pyo3(signature = (model, vocab, data, threshold=nuer_core::annotate::DEFAULT_THRESHOLD))]
fn annotate(model: &Model, vocab: &Vocabulary, data: &Corpus, threshold: f64) -> PyResult<Corpus> {
    Ok(Corpus {
        inner: annotate_corpus(&model.inner, &vocab.inner, &data.inner, threshold).map_err(err)?,
    })
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    tokenizer::tokenize(text)
}

#[pyfunction]
fn numeral_value(token: &str) -> Option<f64> {
    corp::numeral_value(token)
}

#[pyfunction]
fn magnitude_bucket(value: f64) -> i32 {
    corp::magnitude_bucket(value)
}

/// Finite-difference checks of the layer primitives.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn primitive_checks(py: Python<'_>, seed: u64) -> PyResult<Py<PyAny>> {
    to_py(py, &diagnostics::primitive_checks(seed).map_err(err)?)
}

/// Runs the command-line interface with `args` (without the program name)
/// and returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    py.detach(|| nuer_core::cli::run(std::iter::once("nuer".to_string()).chain(args)))
}

#[pymodule]
fn nuer(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NuerError", m.py().get_type::<NuerError>())?;
    m.add("LABELS", EntityLabel::ALL.iter().map(|l| l.as_str()).collect::<Vec<_>>())?;
    m.add_class::<Corpus>()?;
    m.add_class::<Vocabulary>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(train_tagger, m)?)?;
    m.add_function(wrap_pyfunction!(train_qa, m)?)?;
    m.add_function(wrap_pyfunction!(train_fitb, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_tagger, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_qa, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_fitb, m)?)?;
    m.add_function(wrap_pyfunction!(annotate, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(numeral_value, m)?)?;
    m.add_function(wrap_pyfunction!(magnitude_bucket, m)?)?;
    m.add_function(wrap_pyfunction!(primitive_checks, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
