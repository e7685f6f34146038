//! Python bindings for the medrec pipeline.

use std::path::PathBuf;

use medrec_core::config::{self, RunConfig};
use medrec_core::correction::{correct_one, CorrectionConfig};
use medrec_core::ehr::{DdiMatrix, EntityKind};
use medrec_core::mining::{mine, MiningArtifacts};
use medrec_core::pipeline::{self, Dataset, Experiment, RunPaths};
use medrec_core::train::{
    alpha_schedule, audit_patient, metric_f1, metric_jaccard, metric_prauc, Correction,
    MetricReport, REPORT_COLUMNS,
};
use medrec_core::Error;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyFileNotFoundError, PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(medrec, NumericError, PyException);

/// `(diseases, procedures, medications)` codes of one visit.
type VisitCodes = (Vec<String>, Vec<String>, Vec<String>);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::UnknownCode { .. } => {
            PyValueError::new_err(e.to_string())
        }
        Error::MissingArtifact(_) => PyFileNotFoundError::new_err(e.to_string()),
        Error::Numeric(_) => NumericError::new_err(e.to_string()),
        other => PyException::new_err(other.to_string()),
    }
}

fn kind_of(name: &str) -> PyResult<EntityKind> {
    match name {
        "disease" => Ok(EntityKind::Disease),
        "procedure" => Ok(EntityKind::Procedure),
        "medication" => Ok(EntityKind::Medication),
        _ => Err(PyValueError::new_err(format!(
            "kind must be disease, procedure or medication, not `{name}`"
        ))),
    }
}

/// Flat key/value run configuration.
#[pyclass(name = "RunConfig")]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (path=None, overrides=None))]
    fn new(path: Option<PathBuf>, overrides: Option<Vec<String>>) -> PyResult<Self> {
        let mut inner = match path {
            Some(p) => RunConfig::from_file(&p).map_err(to_py)?,
            None => RunConfig::default(),
        };
        inner
            .apply_overrides(&overrides.unwrap_or_default())
            .map_err(to_py)?;
        inner.validate().map_err(to_py)?;
        Ok(PyRunConfig { inner })
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .get(key)
            .map_err(|e| PyKeyError::new_err(e.to_string()))
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(to_py)?;
        self.inner.validate().map_err(to_py)
    }

    #[staticmethod]
    fn keys() -> Vec<&'static str> {
        config::KEYS.iter().map(|(k, _)| *k).collect()
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn run_id(&self) -> String {
        self.inner.run_id()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(run_id='{}')", self.inner.run_id())
    }
}

/// Patient records with vocabularies, DDI pairs and the molecule map.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Synthetic corpus from the configuration's generator settings.
    #[staticmethod]
    fn synthetic(config: &PyRunConfig) -> PyResult<Self> {
        let inner = pipeline::generate(&config.inner).map_err(to_py)?.into();
        Ok(PyDataset { inner })
    }

    /// Reads a data directory written by `save` or the `generate` command.
    #[staticmethod]
    #[pyo3(signature = (data_dir, strict=false))]
    fn load(data_dir: PathBuf, strict: bool) -> PyResult<Self> {
        let paths = RunPaths {
            root: data_dir.clone(),
            data: data_dir,
        };
        let inner = pipeline::read_dataset(&paths, strict).map_err(to_py)?;
        Ok(PyDataset { inner })
    }

    fn save(&self, data_dir: PathBuf) -> PyResult<()> {
        let paths = RunPaths {
            root: data_dir.clone(),
            data: data_dir,
        };
        pipeline::write_dataset(&paths, &self.inner, None).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }

    fn patient_ids(&self) -> Vec<String> {
        self.inner
            .records
            .iter()
            .map(|r| r.patient_id.clone())
            .collect()
    }

    fn codes(&self, kind: &str) -> PyResult<Vec<String>> {
        Ok(self.inner.vocabs.get(kind_of(kind)?).codes().to_vec())
    }

    /// Visits of one patient as lists of `(diseases, procedures, medications)` codes.
    fn visits(&self, patient_id: &str) -> PyResult<Vec<VisitCodes>> {
        let v = &self.inner.vocabs;
        let r = self
            .inner
            .records
            .iter()
            .find(|r| r.patient_id == patient_id)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown patient `{patient_id}`")))?;
        let names = |vocab: &medrec_core::ehr::Vocabulary, idx: &[usize]| {
            idx.iter()
                .map(|&i| vocab.code(i).map(str::to_string))
                .collect::<Result<Vec<_>, _>>()
        };
        r.visits
            .iter()
            .map(|x| {
                Ok((
                    names(&v.diseases, &x.diseases)?,
                    names(&v.procedures, &x.procedures)?,
                    names(&v.medications, &x.medications)?,
                ))
            })
            .collect::<Result<_, Error>>()
            .map_err(to_py)
    }

    fn ddi_pairs(&self) -> PyResult<Vec<(String, String)>> {
        let m = &self.inner.vocabs.medications;
        self.inner
            .ddi
            .pairs()
            .into_iter()
            .map(|(a, b)| Ok((m.code(a)?.to_string(), m.code(b)?.to_string())))
            .collect::<Result<_, Error>>()
            .map_err(to_py)
    }
}

/// Mined causal graphs, effect matrices and relevance strata.
#[pyclass(name = "MiningArtifacts", frozen)]
struct PyMining {
    inner: MiningArtifacts,
    dataset: Py<PyDataset>,
}

#[pymethods]
impl PyMining {
    /// Effect of a disease or procedure code on a medication code.
    fn effect(&self, kind: &str, source: &str, medication: &str) -> PyResult<f64> {
        let kind = kind_of(kind)?;
        let ds = &self.dataset.get().inner;
        let s = ds.vocabs.get(kind).lookup(source).map_err(to_py)?;
        let m = ds.vocabs.medications.lookup(medication).map_err(to_py)?;
        Ok(self.inner.effects(kind).get(s, m))
    }

    /// Directed edges of one causal graph as code pairs.
    fn edges(&self, kind: &str) -> PyResult<Vec<(String, String)>> {
        let kind = kind_of(kind)?;
        let vocab = self.dataset.get().inner.vocabs.get(kind);
        self.inner
            .graph(kind)
            .edges()
            .iter()
            .map(|&(a, b)| Ok((vocab.code(a)?.to_string(), vocab.code(b)?.to_string())))
            .collect::<Result<_, Error>>()
            .map_err(to_py)
    }

    #[getter]
    fn strata_sizes(&self) -> Vec<usize> {
        self.inner.strata.sizes.clone()
    }

    #[getter]
    fn strata_relevance(&self) -> Vec<f64> {
        self.inner.strata.relevance.clone()
    }
}

fn report_dict<'py>(py: Python<'py>, r: &MetricReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for ((name, m), s) in REPORT_COLUMNS
        .iter()
        .zip(r.mean.columns())
        .zip(r.stderr.columns())
    {
        d.set_item(*name, (m, s))?;
    }
    Ok(d)
}

/// Result of an in-memory split, mine, train and evaluate run.
#[pyclass(name = "Experiment", frozen)]
struct PyExperiment {
    inner: Experiment,
    config: RunConfig,
    dataset: Py<PyDataset>,
}

#[pymethods]
impl PyExperiment {
    /// Metric name to `(mean, stderr)` over bootstrap rounds.
    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        report_dict(py, &self.inner.report)
    }

    fn baseline<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        report_dict(py, &self.inner.baseline)
    }

    fn report_csv(&self) -> String {
        self.inner.report.to_csv()
    }

    #[getter]
    fn epoch_losses(&self) -> Vec<f64> {
        self.inner
            .outcome
            .epoch_losses
            .iter()
            .map(|l| l.total)
            .collect()
    }

    #[getter]
    fn best_epoch(&self) -> usize {
        self.inner.outcome.best_epoch
    }

    fn test_patient_ids(&self) -> Vec<String> {
        self.inner
            .splits
            .2
            .iter()
            .map(|r| r.patient_id.clone())
            .collect()
    }

    /// Raw per-visit probabilities for any patient in the dataset.
    fn predict(&self, patient_id: &str) -> PyResult<Vec<Vec<f64>>> {
        let ds = &self.dataset.get().inner;
        let r = ds
            .records
            .iter()
            .find(|r| r.patient_id == patient_id)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown patient `{patient_id}`")))?;
        self.inner.model.predict(r).map_err(to_py)
    }

    /// Correction audit rows for one patient as dictionaries.
    fn explain<'py>(&self, py: Python<'py>, patient_id: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let ds = &self.dataset.get().inner;
        let art = self.inner.artifacts.as_ref().ok_or_else(|| {
            to_py(Error::MissingArtifact(
                "this experiment ran without effect matrices".into(),
            ))
        })?;
        let r = ds
            .records
            .iter()
            .find(|r| r.patient_id == patient_id)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown patient `{patient_id}`")))?;
        let corr = Correction {
            dm: &art.disease_effects,
            pm: &art.procedure_effects,
            config: &self.config.correction,
        };
        let rows = audit_patient(&self.inner.model, r, &corr).map_err(to_py)?;
        rows.iter()
            .map(|a| {
                let d = PyDict::new(py);
                d.set_item("visit", a.visit)?;
                d.set_item(
                    "medication",
                    ds.vocabs.medications.code(a.medication).map_err(to_py)?,
                )?;
                d.set_item("raw", a.raw)?;
                d.set_item("effect", a.effect)?;
                d.set_item("branch", a.branch.as_str())?;
                d.set_item("corrected", a.corrected)?;
                d.set_item("selected", a.selected)?;
                d.set_item("prescribed", a.prescribed)?;
                Ok(d)
            })
            .collect()
    }
}

/// Mines graphs, effects and strata from every record of the dataset.
#[pyfunction]
#[pyo3(name = "mine")]
fn py_mine(py: Python<'_>, dataset: Py<PyDataset>, config: &PyRunConfig) -> PyResult<PyMining> {
    let inner = {
        let ds = &dataset.get().inner;
        let cfg = config.inner.mining;
        py.detach(|| mine(&ds.records, &ds.vocabs, &cfg))
            .map_err(to_py)?
    };
    Ok(PyMining { inner, dataset })
}

/// Runs the full pipeline in memory.
#[pyfunction]
fn run_experiment(
    py: Python<'_>,
    config: &PyRunConfig,
    dataset: Py<PyDataset>,
) -> PyResult<PyExperiment> {
    let cfg = config.inner.clone();
    let inner = {
        let ds = &dataset.get().inner;
        py.detach(|| pipeline::run_experiment(&cfg, ds, &mut |_| Ok(())))
            .map_err(to_py)?
    };
    Ok(PyExperiment {
        inner,
        config: cfg,
        dataset,
    })
}

#[pyfunction]
fn jaccard(truth: Vec<usize>, pred: Vec<usize>) -> f64 {
    metric_jaccard(&truth, &pred)
}

#[pyfunction]
fn f1(truth: Vec<usize>, pred: Vec<usize>) -> f64 {
    metric_f1(&truth, &pred)
}

#[pyfunction]
fn prauc(truth: Vec<usize>, probs: Vec<f64>) -> f64 {
    metric_prauc(&truth, &probs)
}

/// Interacting pairs over all pairs of a recommended set.
#[pyfunction]
fn ddi_rate(pred: Vec<usize>, n_medications: usize, pairs: Vec<(usize, usize)>) -> PyResult<f64> {
    let ddi = DdiMatrix::from_pairs(n_medications, &pairs).map_err(to_py)?;
    Ok(medrec_core::train::metric_ddi([pred.as_slice()], &ddi))
}

/// DDI loss weight for a patient's DDI rate.
#[pyfunction]
#[pyo3(signature = (rate, gamma=0.06, kp=0.05))]
fn alpha(rate: f64, gamma: f64, kp: f64) -> f64 {
    alpha_schedule(rate, gamma, kp)
}

/// Corrected probability and branch name for one medication.
#[pyfunction]
#[pyo3(signature = (raw, effect, delta1=0.97, delta2=0.90, tau1=0.10, tau2=0.10))]
fn correct(
    raw: f64,
    effect: f64,
    delta1: f64,
    delta2: f64,
    tau1: f64,
    tau2: f64,
) -> PyResult<(f64, &'static str)> {
    let cfg = CorrectionConfig {
        upper: delta1,
        lower: delta2,
        boost: tau1,
        penalty: tau2,
        ..CorrectionConfig::default()
    };
    cfg.validate().map_err(to_py)?;
    let (v, b) = correct_one(raw, effect, &cfg);
    Ok((v, b.as_str()))
}

#[pymodule]
fn medrec(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyMining>()?;
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(py_mine, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard, m)?)?;
    m.add_function(wrap_pyfunction!(f1, m)?)?;
    m.add_function(wrap_pyfunction!(prauc, m)?)?;
    m.add_function(wrap_pyfunction!(ddi_rate, m)?)?;
    m.add_function(wrap_pyfunction!(alpha, m)?)?;
    m.add_function(wrap_pyfunction!(correct, m)?)?;
    m.add("NumericError", m.py().get_type::<NumericError>())?;
    Ok(())
}
