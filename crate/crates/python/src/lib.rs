//! Python module `basen`: losses and metrics, Gumbel selection weights, MUA preprocessing,
//! corpus synthesis, training pipelines, checkpoints and evaluation. Arrays cross the
//! boundary as plain lists; structured results as JSON strings or small classes.

use std::path::PathBuf;

use basen_core::config::RunConfig;
use basen_core::corpus::{generate_dataset, preprocess_example, read_dataset, write_dataset, SynthConfig};
use basen_core::eval;
use basen_core::losses;
use basen_core::model::{load_checkpoint, save_checkpoint, BrainModel, ModelConfig, SelectMode, SelectorConfig};
use basen_core::nn::Tensor;
use basen_core::selection::{self, GammaOrK, GumbelSelectorState};
use basen_core::signal::{compute_mua as core_mua, AudioWaveform, EegStage, EegTrial};
use basen_core::training::{self, RunLog};
use basen_core::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Divergence { .. } | Error::Json(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows differ in length"));
    }
    Ok(Tensor::new(&[rows.len(), cols], rows.concat()))
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    let (_, c) = t.dims2();
    t.data().chunks(c.max(1)).map(<[f64]>::to_vec).collect()
}

fn run_config(config_json: Option<&str>) -> PyResult<RunConfig> {
    let doc = config_json.map(serde_json::from_str).transpose().map_err(json_err)?;
    RunConfig::resolve(doc, &[]).map_err(py_err)
}

/// SI-SDR of `est` against `reference` in dB.
#[pyfunction]
fn si_sdr(est: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    losses::si_sdr(&est, &reference).map_err(py_err)
}

/// Discretization loss of a batch of selection vectors (rows).
#[pyfunction]
#[pyo3(signature = (s, k1=100.0, b=0.25, q=0.5))]
fn discretization_loss(s: Vec<Vec<f64>>, k1: f64, b: f64, q: f64) -> PyResult<f64> {
    losses::discretization_loss(&matrix(&s)?, k1, b, q).map_err(py_err)
}

/// Sparsity loss of a batch of selection vectors (rows).
#[pyfunction]
#[pyo3(signature = (s, k2=0.25))]
fn sparsity_loss(s: Vec<Vec<f64>>, k2: f64) -> PyResult<f64> {
    losses::sparsity_loss(&matrix(&s)?, k2).map_err(py_err)
}

/// Relaxed Gumbel selection weights, one row per neuron; `noise=None` means zero noise.
#[pyfunction]
#[pyo3(signature = (log_alpha, tau, noise=None))]
fn gumbel_weights(log_alpha: Vec<Vec<f64>>, tau: f64, noise: Option<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<f64>>> {
    let la = matrix(&log_alpha)?;
    let noise = match noise {
        Some(n) => matrix(&n)?,
        None => Tensor::zeros(la.shape()),
    };
    Ok(rows_of(&selection::gumbel_weights(&la, &noise, tau).map_err(py_err)?))
}

/// Test-time channel of every Gumbel neuron.
#[pyfunction]
fn gumbel_argmax(log_alpha: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
    let st = GumbelSelectorState::new(matrix(&log_alpha)?, 1.0).map_err(py_err)?;
    Ok(selection::gcs_test_select(&st, selection::SelectionMethod::Gcs).indices)
}

/// `{"unique": [...], "duplicated": [...]}` by multiplicity.
#[pyfunction]
fn duplicate_report(py: Python<'_>, indices: Vec<usize>) -> PyResult<Bound<'_, PyDict>> {
    let r = eval::duplicate_report(&indices);
    let d = PyDict::new(py);
    d.set_item("unique", r.unique)?;
    d.set_item("duplicated", r.duplicated)?;
    Ok(d)
}

/// MUA transform of band-limited EEG channels.
#[pyfunction]
#[pyo3(signature = (channels, fs, a_gamma=0.5, a_delta=0.5))]
fn compute_mua(channels: Vec<Vec<f64>>, fs: f64, a_gamma: f64, a_delta: f64) -> PyResult<Vec<Vec<f64>>> {
    let q = channels.len();
    let e = EegTrial::new(channels, fs, EegTrial::default_labels(q), EegStage::Filtered).map_err(py_err)?;
    let out = core_mua(&e, a_gamma, a_delta).map_err(py_err)?;
    Ok((0..q).map(|c| out.trial.channel(c).to_vec()).collect())
}

/// Full default run configuration as JSON.
#[pyfunction]
fn default_config() -> String {
    serde_json::to_string_pretty(&RunConfig::default()).expect("serializable")
}

/// Generates the synthetic corpus into `out_dir`; `config_json` holds synth keys only.
#[pyfunction]
#[pyo3(signature = (out_dir, config_json=None))]
fn synth(out_dir: PathBuf, config_json: Option<&str>) -> PyResult<usize> {
    let cfg: SynthConfig = match config_json {
        Some(s) => serde_json::from_str(s).map_err(json_err)?,
        None => SynthConfig::default(),
    };
    cfg.validate().map_err(py_err)?;
    let ex = generate_dataset(&cfg).map_err(py_err)?;
    write_dataset(&out_dir, &ex).map_err(py_err)?;
    Ok(ex.len())
}

/// Filters, MUA-transforms and segments a dataset; returns the number of segments written.
#[pyfunction]
#[pyo3(signature = (in_dir, out_dir, seg_len_s=2.0, a_gamma=0.5, a_delta=0.5))]
fn preprocess(in_dir: PathBuf, out_dir: PathBuf, seg_len_s: f64, a_gamma: f64, a_delta: f64) -> PyResult<usize> {
    let mut out = Vec::new();
    for ex in read_dataset(&in_dir).map_err(py_err)? {
        out.extend(preprocess_example(&ex, seg_len_s, a_gamma, a_delta).map_err(py_err)?);
    }
    write_dataset(&out_dir, &out).map_err(py_err)?;
    Ok(out.len())
}

#[pyclass(name = "ChannelSubset", module = "basen", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyChannelSubset {
    inner: selection::ChannelSubset,
}

#[pymethods]
impl PyChannelSubset {
    #[getter]
    fn method(&self) -> String {
        serde_json::to_value(self.inner.method).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
    }

    #[getter]
    fn indices(&self) -> Vec<usize> {
        self.inner.indices.clone()
    }

    #[getter]
    fn duplicate_count(&self) -> usize {
        self.inner.duplicate_count
    }

    #[getter]
    fn mean_probabilities(&self) -> Vec<f64> {
        self.inner.mean_probabilities.clone()
    }

    /// `K` for Gumbel methods, `None` for ConvRS.
    #[getter]
    fn k(&self) -> Option<usize> {
        match self.inner.gamma_or_k {
            GammaOrK::K(k) => Some(k),
            GammaOrK::Gamma(_) => None,
        }
    }

    /// Sparsity weight for ConvRS, `None` for Gumbel methods.
    #[getter]
    fn gamma(&self) -> Option<f64> {
        match self.inner.gamma_or_k {
            GammaOrK::Gamma(g) => Some(g),
            GammaOrK::K(_) => None,
        }
    }

    fn unique(&self) -> Vec<usize> {
        self.inner.unique()
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("serializable")
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyChannelSubset { inner: serde_json::from_str(text).map_err(json_err)? })
    }

    fn __repr__(&self) -> String {
        format!("ChannelSubset(method={:?}, indices={:?})", self.method(), self.inner.indices)
    }
}

#[pyclass(name = "Model", module = "basen")]
struct PyModel {
    inner: BrainModel,
}

#[pymethods]
impl PyModel {
    /// A freshly initialized BASEN for `q` channels; `config_json` holds model keys only.
    #[new]
    #[pyo3(signature = (q, config_json=None, seed=0))]
    fn new(q: usize, config_json: Option<&str>, seed: u64) -> PyResult<Self> {
        let cfg: ModelConfig = match config_json {
            Some(s) => serde_json::from_str(s).map_err(json_err)?,
            None => ModelConfig::desk(),
        };
        Ok(PyModel { inner: BrainModel::new(&cfg, q, &SelectorConfig::None, seed).map_err(py_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel { inner: load_checkpoint(&path).map_err(py_err)?.0 })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, &path, serde_json::Value::Null).map_err(py_err)
    }

    #[getter]
    fn q(&self) -> usize {
        self.inner.q()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    fn config_json(&self) -> String {
        serde_json::to_string(self.inner.config()).expect("serializable")
    }

    /// Estimated sources (target first) for one mixture and its EEG channels.
    #[pyo3(signature = (mixture, eeg, fs_audio, fs_eeg=128.0))]
    fn separate(&self, mixture: Vec<f64>, eeg: Vec<Vec<f64>>, fs_audio: f64, fs_eeg: f64) -> PyResult<Vec<Vec<f64>>> {
        let q = eeg.len();
        let mix = AudioWaveform::new(mixture, fs_audio).map_err(py_err)?;
        let e = EegTrial::new(eeg, fs_eeg, EegTrial::default_labels(q), EegStage::Mua).map_err(py_err)?;
        let mode = SelectMode::for_selector(self.inner.selector_config());
        let out = self.inner.separate(&mix, &e, mode).map_err(py_err)?;
        Ok(out.into_iter().map(AudioWaveform::into_samples).collect())
    }

    /// Test-time subset of an attached Gumbel selector.
    fn subset(&self) -> Option<PyChannelSubset> {
        self.inner.gumbel_subset().map(|inner| PyChannelSubset { inner })
    }
}

/// Trains `method` (`basen`, `gcs`, `resgs` or `convrs`) on a preprocessed dataset, writing
/// the run to `run_dir`. Returns the final validation point and subsets as JSON.
#[pyfunction]
#[pyo3(signature = (method, data_dir, run_dir, config_json=None))]
fn train(py: Python<'_>, method: &str, data_dir: PathBuf, run_dir: PathBuf, config_json: Option<&str>) -> PyResult<String> {
    let cfg = run_config(config_json)?;
    let data = read_dataset(&data_dir).map_err(py_err)?;
    let method = method.to_string();
    py.detach(move || {
        let mut log = RunLog::create(&run_dir, &cfg)?;
        let (m, t) = (&cfg.model, &cfg.train);
        let outcomes: Vec<(Option<f64>, training::TrainOutcome)> = match method.as_str() {
            "basen" => vec![(None, training::train_basen(m, t, &data, &mut log)?)],
            "gcs" => vec![(None, training::train_gcs(m, t, &data, &mut log)?)],
            "resgs" => {
                let base = training::train_basen(m, t, &data, &mut log)?;
                vec![(None, training::train_resgs(&base.model, t, &data, &mut log)?)]
            }
            "convrs" => training::train_convrs_progressive(m, t, &data, &mut log)?
                .into_iter()
                .map(|g| (Some(g.gamma), g.outcome))
                .collect(),
            other => return Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        };
        let entries: Vec<_> = outcomes
            .iter()
            .map(|(g, o)| serde_json::json!({"gamma": g, "subset": o.subset, "final_val": o.final_val()}))
            .collect();
        Ok(serde_json::to_string(&entries)?)
    })
    .map_err(py_err)
}

/// Evaluates a checkpoint on a dataset; returns the summary JSON.
#[pyfunction]
#[pyo3(signature = (checkpoint, data_dir, subset=None))]
fn evaluate(py: Python<'_>, checkpoint: PathBuf, data_dir: PathBuf, subset: Option<Vec<usize>>) -> PyResult<String> {
    py.detach(move || {
        let (model, _) = load_checkpoint(&checkpoint)?;
        let data = read_dataset(&data_dir)?;
        let s = eval::evaluate(&model, &data, subset.as_deref())?;
        Ok(serde_json::to_string(&s)?)
    })
    .map_err(py_err)
}

#[pymodule]
pub fn basen(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyChannelSubset>()?;
    m.add_function(wrap_pyfunction!(si_sdr, m)?)?;
    m.add_function(wrap_pyfunction!(discretization_loss, m)?)?;
    m.add_function(wrap_pyfunction!(sparsity_loss, m)?)?;
    m.add_function(wrap_pyfunction!(gumbel_weights, m)?)?;
    m.add_function(wrap_pyfunction!(gumbel_argmax, m)?)?;
    m.add_function(wrap_pyfunction!(duplicate_report, m)?)?;
    m.add_function(wrap_pyfunction!(compute_mua, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
