//! Python bindings for the `sumcap` core: the latency model, the mock
//! providers, the summarizer benchmark and the paired-data store.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyList;

use sumcap::bench::{report_table, run_bench as core_run_bench, BenchOptions};
use sumcap::clock::VirtualClock;
use sumcap::latency::{self, LatencyError};
use sumcap::providers::registry::builtin_descriptors;
use sumcap::providers::{
    build_prompt as core_build_prompt, MapTranslator, ProviderKind, ProviderRegistry, Summarizer, Translator,
    TruncateSummarizer, DEFAULT_PROMPT_TEMPLATE,
};
use sumcap::store::{self, CorrectionDraft, ExportFilter, PairedDraft, StoreError};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn store_err(e: StoreError) -> PyErr {
    match e {
        StoreError::Io(e) => PyIOError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn latency_err(e: LatencyError) -> PyErr {
    value_err(e)
}

/// Parses serialized JSON into Python objects.
fn to_python<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(module = "sumcap_py", name = "RateConstants", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyRateConstants(latency::RateConstants);

#[pymethods]
impl PyRateConstants {
    #[new]
    #[pyo3(signature = (reading_wpm = latency::DEFAULT_READING_WPM, speaking_wpm = latency::DEFAULT_SPEAKING_WPM))]
    fn new(reading_wpm: f64, speaking_wpm: f64) -> PyResult<Self> {
        latency::RateConstants::new(reading_wpm, speaking_wpm)
            .map(Self)
            .map_err(latency_err)
    }

    #[getter]
    fn reading_wpm(&self) -> f64 {
        self.0.reading_wpm
    }

    #[getter]
    fn speaking_wpm(&self) -> f64 {
        self.0.speaking_wpm
    }

    fn __repr__(&self) -> String {
        format!(
            "RateConstants(reading_wpm={}, speaking_wpm={})",
            self.0.reading_wpm, self.0.speaking_wpm
        )
    }
}

#[pyclass(module = "sumcap_py", name = "TimingParams", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyTimingParams(latency::TimingParams);

#[pymethods]
impl PyTimingParams {
    #[new]
    #[pyo3(signature = (wc, sigma, gamma = 0.0, t_trans = 0.0, t_sum = 0.0))]
    fn new(wc: u64, sigma: f64, gamma: f64, t_trans: f64, t_sum: f64) -> PyResult<Self> {
        latency::TimingParams::new(wc, sigma, gamma, t_trans, t_sum)
            .map(Self)
            .map_err(latency_err)
    }

    #[getter]
    fn wc(&self) -> u64 {
        self.0.wc
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.0.sigma
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.0.gamma
    }

    #[getter]
    fn t_trans(&self) -> f64 {
        self.0.t_trans
    }

    #[getter]
    fn t_sum(&self) -> f64 {
        self.0.t_sum
    }

    fn __repr__(&self) -> String {
        let p = &self.0;
        format!(
            "TimingParams(wc={}, sigma={}, gamma={}, t_trans={}, t_sum={})",
            p.wc, p.sigma, p.gamma, p.t_trans, p.t_sum
        )
    }
}

#[pyclass(
    module = "sumcap_py",
    name = "LatencyBreakdown",
    frozen,
    get_all,
    skip_from_py_object
)]
#[derive(Clone, Copy)]
struct PyLatencyBreakdown {
    reading_s: f64,
    speaking_s: f64,
    cognition_s: f64,
    translation_s: f64,
    summarization_s: f64,
    total_s: f64,
    epsilon_s_per_word: f64,
}

impl From<latency::LatencyBreakdown> for PyLatencyBreakdown {
    fn from(b: latency::LatencyBreakdown) -> Self {
        Self {
            reading_s: b.reading_s,
            speaking_s: b.speaking_s,
            cognition_s: b.cognition_s,
            translation_s: b.translation_s,
            summarization_s: b.summarization_s,
            total_s: b.total_s,
            epsilon_s_per_word: b.epsilon_s_per_word,
        }
    }
}

#[pymethods]
impl PyLatencyBreakdown {
    fn __repr__(&self) -> String {
        format!(
            "LatencyBreakdown(reading_s={}, speaking_s={}, total_s={})",
            self.reading_s, self.speaking_s, self.total_s
        )
    }
}

fn rates_or_default(rates: Option<PyRateConstants>) -> latency::RateConstants {
    rates.map(|r| r.0).unwrap_or_default()
}

#[pyfunction]
#[pyo3(signature = (params, rates = None))]
fn transmission_time(params: PyTimingParams, rates: Option<PyRateConstants>) -> PyResult<PyLatencyBreakdown> {
    latency::transmission_time(&params.0, &rates_or_default(rates))
        .map(Into::into)
        .map_err(latency_err)
}

#[pyfunction]
#[pyo3(signature = (wc, sigma, rates = None))]
fn savings(wc: f64, sigma: f64, rates: Option<PyRateConstants>) -> PyResult<f64> {
    latency::savings(wc, sigma, &rates_or_default(rates)).map_err(latency_err)
}

/// `(min_exclusive, max_inclusive)` of the seconds-per-word coefficient.
#[pyfunction]
#[pyo3(signature = (rates = None))]
fn epsilon_bounds(rates: Option<PyRateConstants>) -> (f64, f64) {
    let b = latency::epsilon_bounds(&rates_or_default(rates));
    (b.min_exclusive, b.max_inclusive)
}

/// Returns `(total_s, [LatencyBreakdown, ...])`.
#[pyfunction]
#[pyo3(signature = (turns, rates = None))]
fn simulate_dialogue(
    turns: Vec<PyTimingParams>,
    rates: Option<PyRateConstants>,
) -> PyResult<(f64, Vec<PyLatencyBreakdown>)> {
    let turns: Vec<_> = turns.into_iter().map(|t| t.0).collect();
    let d = latency::simulate_dialogue(&turns, &rates_or_default(rates)).map_err(latency_err)?;
    Ok((d.total_s, d.per_turn.into_iter().map(Into::into).collect()))
}

#[pyfunction]
fn measure_sigma(source_text: &str, summary_text: &str) -> PyResult<f64> {
    sumcap::text::measure_sigma(source_text, summary_text).map_err(value_err)
}

#[pyfunction]
fn word_count(text: &str) -> usize {
    sumcap::text::word_count(text)
}

#[pyfunction]
#[pyo3(signature = (text, template = DEFAULT_PROMPT_TEMPLATE))]
fn build_prompt(text: &str, template: &str) -> String {
    core_build_prompt(template, text)
}

/// Deterministic mock translation (each word prefixed with `tgt:`).
#[pyfunction]
#[pyo3(signature = (text, src = "en", tgt = "ja"))]
fn mock_translate(text: &str, src: &str, tgt: &str) -> PyResult<String> {
    MapTranslator.translate(text, src, tgt).map_err(value_err)
}

/// Keeps the first `ceil(target_sigma * n)` words.
#[pyfunction]
#[pyo3(signature = (text, target_sigma = 2.0 / 3.0))]
fn truncate_summarize(text: &str, target_sigma: f64) -> PyResult<String> {
    TruncateSummarizer
        .summarize(text, DEFAULT_PROMPT_TEMPLATE, target_sigma)
        .map_err(value_err)
}

/// Names of the built-in summarizers that can be benchmarked.
#[pyfunction]
fn summarizer_presets() -> Vec<String> {
    builtin_descriptors()
        .into_iter()
        .filter(|d| d.kind == ProviderKind::Summarize)
        .map(|d| d.provider_id)
        .collect()
}

/// Benchmarks a built-in summarizer on virtual time, so injected delays cost
/// no wall time. Returns the result as a dict with an extra `table` entry.
#[pyfunction]
#[pyo3(signature = (provider_id, input, n_reps = 10, seed = 0, target_sigma = 2.0 / 3.0))]
fn run_bench<'py>(
    py: Python<'py>,
    provider_id: &str,
    input: &str,
    n_reps: usize,
    seed: u64,
    target_sigma: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let desc = builtin_descriptors()
        .into_iter()
        .find(|d| d.kind == ProviderKind::Summarize && d.provider_id == provider_id)
        .ok_or_else(|| value_err(format!("unknown summarizer preset `{provider_id}`")))?
        .with_seed(seed);
    let clock = Arc::new(VirtualClock::new());
    let mut registry = ProviderRegistry::new();
    registry.add(&desc, clock.clone(), None).map_err(value_err)?;
    let entry = registry.summarizer(provider_id).expect("registered above");
    let opts = BenchOptions {
        n_reps,
        target_sigma,
        prompt_template: DEFAULT_PROMPT_TEMPLATE.into(),
        seed: Some(seed),
    };
    let result =
        core_run_bench(entry.provider.as_ref(), provider_id, input, &opts, clock.as_ref()).map_err(value_err)?;
    let out = to_python(py, &result)?;
    out.set_item("table", report_table(std::slice::from_ref(&result)))?;
    Ok(out)
}

/// Append-only paired-data store.
#[pyclass(module = "sumcap_py", name = "DataStore", frozen)]
struct PyDataStore(store::DataStore);

#[pymethods]
impl PyDataStore {
    #[new]
    fn open(dir: PathBuf) -> PyResult<Self> {
        store::DataStore::open(dir).map(Self).map_err(store_err)
    }

    #[pyo3(signature = (session_id, source_lang, source_text, target_lang, translated_text, summarized_text, sigma_measured = None))]
    #[allow(clippy::too_many_arguments)]
    fn append(
        &self,
        session_id: String,
        source_lang: String,
        source_text: String,
        target_lang: String,
        translated_text: String,
        summarized_text: String,
        sigma_measured: Option<f64>,
    ) -> PyResult<u64> {
        self.0
            .append(PairedDraft {
                session_id,
                source_lang,
                source_text,
                target_lang,
                translated_text,
                summarized_text,
                sigma_measured,
            })
            .map_err(store_err)
    }

    #[pyo3(signature = (record_id, corrected_summary, author_label = "python".to_owned()))]
    fn apply_correction(&self, record_id: u64, corrected_summary: String, author_label: String) -> PyResult<u64> {
        self.0
            .apply_correction(CorrectionDraft {
                record_id,
                corrected_summary,
                author_label,
            })
            .map_err(store_err)
    }

    fn records<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &self.0.records())
    }

    #[pyo3(signature = (prefer_corrections = false, session_id = None, source_lang = None, target_lang = None))]
    fn export_rows<'py>(
        &self,
        py: Python<'py>,
        prefer_corrections: bool,
        session_id: Option<String>,
        source_lang: Option<String>,
        target_lang: Option<String>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let filter = ExportFilter {
            session_id,
            source_lang,
            target_lang,
        };
        to_python(py, &self.0.export_rows(&filter, prefer_corrections))
    }

    /// Writes the export to `path`; returns the number of rows.
    #[pyo3(signature = (path, prefer_corrections = false))]
    fn export_jsonl(&self, path: PathBuf, prefer_corrections: bool) -> PyResult<usize> {
        let file = std::fs::File::create(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        self.0
            .export_jsonl(file, &ExportFilter::default(), prefer_corrections)
            .map_err(store_err)
    }

    /// Imports an export file; returns the new record ids.
    #[pyo3(signature = (path, session_id = "imported".to_owned()))]
    fn import_jsonl<'py>(&self, py: Python<'py>, path: PathBuf, session_id: String) -> PyResult<Bound<'py, PyList>> {
        let rows = store::import_jsonl(&path).map_err(store_err)?;
        let ids = self.0.import_rows(rows, &session_id).map_err(store_err)?;
        PyList::new(py, ids)
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &self.0.stats())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pymodule]
fn sumcap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRateConstants>()?;
    m.add_class::<PyTimingParams>()?;
    m.add_class::<PyLatencyBreakdown>()?;
    m.add_class::<PyDataStore>()?;
    m.add_function(wrap_pyfunction!(transmission_time, m)?)?;
    m.add_function(wrap_pyfunction!(savings, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_dialogue, m)?)?;
    m.add_function(wrap_pyfunction!(measure_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(word_count, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(mock_translate, m)?)?;
    m.add_function(wrap_pyfunction!(truncate_summarize, m)?)?;
    m.add_function(wrap_pyfunction!(summarizer_presets, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    m.add("DEFAULT_PROMPT_TEMPLATE", DEFAULT_PROMPT_TEMPLATE)?;
    Ok(())
}
