//! Python bindings for the `propdial` core.
//!
//! Ranked lists cross the boundary as lists of `(id, score)` tuples.

use std::collections::{BTreeMap, BTreeSet};

use propdial::gateway::TemplateName;
use propdial::retrieval::{self, Bm25Params, RankedList, VectorRecord};
use propdial::{corpus, eval, gateway, rewrite, Error};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Argument(_) | Error::Validation(_) | Error::Template { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn pairs(list: RankedList) -> Vec<(String, f64)> {
    list.entries.into_iter().map(|e| (e.id, e.score)).collect()
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    retrieval::tokenize(text)
}

#[pyfunction]
fn split_sentences(text: &str) -> Vec<String> {
    corpus::split_text(text)
}

/// Returns the sublists as lists of unit ids.
#[pyfunction]
fn chunk_units(units: Vec<String>, n: usize) -> PyResult<Vec<Vec<String>>> {
    Ok(corpus::chunk_units(&units, n)
        .map_err(py_err)?
        .into_iter()
        .map(|s| s.unit_ids)
        .collect())
}

#[pyclass(name = "Bm25Index", frozen)]
struct PyBm25Index(retrieval::Bm25Index);

#[pymethods]
impl PyBm25Index {
    #[new]
    #[pyo3(signature = (items, k1 = Bm25Params::TUNED.k1, b = Bm25Params::TUNED.b))]
    fn new(items: Vec<(String, String)>, k1: f64, b: f64) -> PyResult<Self> {
        retrieval::Bm25Index::build(items, Bm25Params { k1, b })
            .map(Self)
            .map_err(py_err)
    }

    #[pyo3(signature = (query, k = 20))]
    fn query(&self, query: &str, k: usize) -> PyResult<Vec<(String, f64)>> {
        self.0.query(query, k).map(pairs).map_err(py_err)
    }

    fn score_all(&self, query: &str) -> Vec<(String, f64)> {
        self.0.score_all(query)
    }

    fn idf(&self, term: &str) -> f64 {
        self.0.idf(term)
    }

    fn ids(&self) -> Vec<String> {
        self.0.ids().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        retrieval::Bm25Index::from_json(text).map(Self).map_err(py_err)
    }
}

#[pyclass(name = "DenseIndex", frozen)]
struct PyDenseIndex(retrieval::DenseIndex);

#[pymethods]
impl PyDenseIndex {
    #[new]
    fn new(items: Vec<(String, Vec<f64>)>) -> PyResult<Self> {
        retrieval::DenseIndex::build(items.into_iter().map(|(id, vector)| VectorRecord { id, vector }))
            .map(Self)
            .map_err(py_err)
    }

    #[pyo3(signature = (vector, k = 20))]
    fn query(&self, vector: Vec<f64>, k: usize) -> PyResult<Vec<(String, f64)>> {
        self.0.query(&vector, k).map(pairs).map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Fuses two ranked id lists (best first).
#[pyfunction]
#[pyo3(signature = (a, b, k = 60, depth = 100))]
fn rrf_fuse(a: Vec<String>, b: Vec<String>, k: u32, depth: usize) -> PyResult<Vec<(String, f64)>> {
    retrieval::rrf_fuse(&RankedList::from_ids("a", a), &RankedList::from_ids("b", b), k, depth)
        .map(pairs)
        .map_err(py_err)
}

#[pyfunction]
fn average_precision(ranked: Vec<String>, relevant: BTreeSet<String>) -> PyResult<f64> {
    eval::average_precision(&RankedList::from_ids("q", ranked), &relevant).map_err(py_err)
}

#[pyfunction]
fn recall_at_k(ranked: Vec<String>, relevant: BTreeSet<String>, k: usize) -> PyResult<f64> {
    eval::recall_at_k(&RankedList::from_ids("q", ranked), &relevant, k).map_err(py_err)
}

#[pyfunction]
fn corpus_bleu4(hypotheses: Vec<String>, references: Vec<String>) -> PyResult<f64> {
    eval::corpus_bleu4(&hypotheses, &references).map_err(py_err)
}

/// Returns `(query, was_rewritten)`.
#[pyfunction]
fn conditional_rewrite(output: &str, original: &str) -> (String, bool) {
    let r = rewrite::conditional_rewrite(output, original);
    (r.query, r.was_rewritten)
}

#[pyfunction]
fn render_prompt(template: &str, bindings: BTreeMap<String, String>) -> PyResult<String> {
    let name: TemplateName = template.parse().map_err(py_err)?;
    gateway::render_prompt(&name.template(), &bindings).map_err(py_err)
}

/// Returns the recovered JSON value serialized as a string.
#[pyfunction]
fn extract_structured(text: &str) -> PyResult<String> {
    gateway::extract_structured(text).map(|v| v.to_string()).map_err(py_err)
}

#[pymodule]
fn propdial_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBm25Index>()?;
    m.add_class::<PyDenseIndex>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(split_sentences, m)?)?;
    m.add_function(wrap_pyfunction!(chunk_units, m)?)?;
    m.add_function(wrap_pyfunction!(rrf_fuse, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_bleu4, m)?)?;
    m.add_function(wrap_pyfunction!(conditional_rewrite, m)?)?;
    m.add_function(wrap_pyfunction!(render_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(extract_structured, m)?)?;
    Ok(())
}
