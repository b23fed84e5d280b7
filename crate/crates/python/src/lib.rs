//! Python bindings: `import ldc`.

use std::path::PathBuf;

use ldc_core::eval::{self, InjectionTarget};
use ldc_core::store;
use ldc_core::{
    BinaryModel, BipolarVector, DatasetManifest, HdcClassifier, HdcConfig, LdcConfig, LdcNetwork, ModelDescriptor,
    QuantizedDataset, Schedule, TrainConfig,
};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

fn err(e: ldc_core::Error) -> PyErr {
    match e {
        ldc_core::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn bipolar(xs: &[i8]) -> PyResult<BipolarVector> {
    if xs.iter().any(|&x| x != 1 && x != -1) {
        return Err(PyValueError::new_err("entries must be +1 or -1"));
    }
    Ok(BipolarVector::from_signs(xs))
}

/// Quantized samples: `num_features` levels per row, one label per row.
#[pyclass(name = "Dataset", module = "ldc", frozen)]
struct PyDataset {
    inner: QuantizedDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (levels, labels, num_classes=None, num_levels=256))]
    fn new(levels: Vec<Vec<u8>>, labels: Vec<u32>, num_classes: Option<usize>, num_levels: usize) -> PyResult<Self> {
        let n = levels.first().map_or(0, Vec::len);
        if levels.iter().any(|r| r.len() != n) {
            return Err(PyValueError::new_err("rows differ in length"));
        }
        let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |&m| m as usize + 1));
        let inner = QuantizedDataset::new(n, num_levels, k, levels.concat(), labels).map_err(err)?;
        Ok(PyDataset { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn num_features(&self) -> usize {
        self.inner.num_features()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn num_levels(&self) -> usize {
        self.inner.num_levels()
    }

    #[getter]
    fn labels(&self) -> Vec<u32> {
        self.inner.labels().to_vec()
    }

    fn sample(&self, i: usize) -> PyResult<Vec<u8>> {
        if i >= self.inner.len() {
            return Err(PyValueError::new_err(format!("index {i} out of range")));
        }
        Ok(self.inner.sample(i).to_vec())
    }

    fn subset(&self, indices: Vec<usize>) -> PyResult<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.inner.len()) {
            return Err(PyValueError::new_err(format!("index {i} out of range")));
        }
        Ok(PyDataset {
            inner: self.inner.subset(&indices),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(samples={}, features={}, classes={})",
            self.inner.len(),
            self.inner.num_features(),
            self.inner.num_classes()
        )
    }
}

/// Loads a dataset manifest and returns `(train, test)`.
#[pyfunction]
fn load_dataset(manifest: PathBuf) -> PyResult<(PyDataset, PyDataset)> {
    let prepared = DatasetManifest::from_file(&manifest).and_then(|m| m.prepare()).map_err(err)?;
    Ok((PyDataset { inner: prepared.train }, PyDataset { inner: prepared.test }))
}

/// Synthetic dataset with class-dependent level offsets.
#[pyfunction]
#[pyo3(signature = (samples, num_features, num_classes, spread=40, seed=0))]
fn synthetic(samples: usize, num_features: usize, num_classes: usize, spread: u8, seed: u64) -> PyDataset {
    PyDataset {
        inner: ldc_core::data::synthetic(samples, num_features, num_classes, spread, seed),
    }
}

/// Extracted binary classifier (LDC or HDC).
#[pyclass(name = "Model", module = "ldc", frozen)]
struct PyModel {
    inner: BinaryModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: store::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        store::save(&self.inner, &path).map_err(err)
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(PyModel {
            inner: store::from_bytes(data).map_err(err)?,
        })
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &store::to_bytes(&self.inner))
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.name()
    }

    #[getter]
    fn num_features(&self) -> usize {
        self.inner.item_memory().num_features()
    }

    #[getter]
    fn num_levels(&self) -> usize {
        self.inner.item_memory().num_levels()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.classes().len()
    }

    #[getter]
    fn value_dim(&self) -> usize {
        self.inner.item_memory().value_dim()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.item_memory().feature_dim()
    }

    #[getter]
    fn size_bits(&self) -> u64 {
        store::model_size_bits(&self.inner.descriptor())
    }

    fn predict(&self, levels: Vec<u8>) -> PyResult<usize> {
        ldc_core::Classifier::predict(&self.inner, &levels).map_err(err)
    }

    fn predict_many(&self, data: &PyDataset) -> PyResult<Vec<usize>> {
        (0..data.inner.len())
            .map(|i| ldc_core::Classifier::predict(&self.inner, data.inner.sample(i)).map_err(err))
            .collect()
    }

    /// Sample vector as a list of +1/-1.
    fn encode(&self, levels: Vec<u8>) -> PyResult<Vec<i8>> {
        Ok(self.inner.encode(&levels).map_err(err)?.to_signs())
    }

    fn distances(&self, levels: Vec<u8>) -> PyResult<Vec<usize>> {
        self.inner.distances(&levels).map_err(err)
    }

    fn class_vectors(&self) -> Vec<Vec<i8>> {
        self.inner.classes().iter().map(BipolarVector::to_signs).collect()
    }

    fn value_vectors(&self) -> Vec<Vec<i8>> {
        self.inner.item_memory().values().iter().map(BipolarVector::to_signs).collect()
    }

    fn feature_vectors(&self) -> Vec<Vec<i8>> {
        self.inner.item_memory().features().iter().map(BipolarVector::to_signs).collect()
    }

    /// Accuracy on `data`.
    fn evaluate(&self, py: Python<'_>, data: &PyDataset) -> PyResult<f64> {
        let (model, data) = (&self.inner, &data.inner);
        py.detach(|| eval::evaluate(model, data)).map(|r| r.accuracy).map_err(err)
    }

    fn confusion(&self, py: Python<'_>, data: &PyDataset) -> PyResult<Vec<Vec<usize>>> {
        let (model, data) = (&self.inner, &data.inner);
        py.detach(|| eval::evaluate(model, data)).map(|r| r.confusion).map_err(err)
    }

    /// Copy with each stored bit flipped independently with probability `p`.
    #[pyo3(signature = (p, seed=0, target="associative-memory"))]
    fn inject(&self, p: f64, seed: u64, target: &str) -> PyResult<Self> {
        let target: InjectionTarget = target.parse().map_err(err)?;
        Ok(PyModel {
            inner: eval::inject_bit_errors(&self.inner, p, seed, target).map_err(err)?,
        })
    }

    #[pyo3(signature = (clock_mhz=eval::DEFAULT_CLOCK_MHZ))]
    fn cycles<'py>(&self, py: Python<'py>, clock_mhz: f64) -> PyResult<Bound<'py, PyDict>> {
        estimate_dict(py, &self.inner.descriptor(), clock_mhz)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        let im = self.inner.item_memory();
        format!(
            "Model(kind={}, N={}, M={}, K={}, D_V={}, D_F={})",
            self.inner.kind.name(),
            im.num_features(),
            im.num_levels(),
            self.inner.classes().len(),
            im.value_dim(),
            im.feature_dim()
        )
    }
}

fn estimate_dict<'py>(py: Python<'py>, desc: &ModelDescriptor, clock_mhz: f64) -> PyResult<Bound<'py, PyDict>> {
    let e = eval::cycle_estimate(desc, clock_mhz);
    let d = PyDict::new(py);
    d.set_item("encode_cycles", e.encode_cycles)?;
    d.set_item("similarity_cycles", e.similarity_cycles)?;
    d.set_item("total_cycles", e.total_cycles)?;
    d.set_item("clock_mhz", e.clock_mhz)?;
    d.set_item("latency_us", e.latency_us)?;
    Ok(d)
}

/// Trains an LDC network and returns the extracted model with its per-epoch
/// metrics as dicts.
#[pyfunction]
#[pyo3(signature = (
    data, value_dim=4, feature_dim=64, lr=1e-3, wd=0.0, epochs=50, schedule="halve-5",
    batch_size=64, validation_fraction=0.1, seed=0,
))]
#[allow(clippy::too_many_arguments)]
fn train_ldc<'py>(
    py: Python<'py>,
    data: &PyDataset,
    value_dim: usize,
    feature_dim: usize,
    lr: f64,
    wd: f64,
    epochs: usize,
    schedule: &str,
    batch_size: usize,
    validation_fraction: f64,
    seed: u64,
) -> PyResult<(PyModel, Vec<Bound<'py, PyDict>>)> {
    let schedule: Schedule = schedule.parse().map_err(err)?;
    let data = &data.inner;
    let net_cfg = LdcConfig {
        num_levels: data.num_levels(),
        ..LdcConfig::new(data.num_features(), data.num_classes(), value_dim, feature_dim)
    };
    let cfg = TrainConfig {
        epochs,
        schedule,
        batch_size,
        validation_fraction,
        seed,
        ..TrainConfig::new(lr, wd)
    };
    let (model, history) = py
        .detach(|| {
            let mut net = LdcNetwork::new(net_cfg, seed)?;
            let report = ldc_core::train::fit(&mut net, data, &cfg, |_| {})?;
            Ok::<_, ldc_core::Error>((net.extract(seed), report.history))
        })
        .map_err(err)?;
    let records = history
        .iter()
        .map(|m| {
            let d = PyDict::new(py);
            d.set_item("epoch", m.epoch)?;
            d.set_item("split", format!("{:?}", m.split).to_lowercase())?;
            d.set_item("loss", m.loss)?;
            d.set_item("accuracy", m.accuracy)?;
            d.set_item("learning_rate", m.learning_rate)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((PyModel { inner: model }, records))
}

/// Builds a random-hypervector HDC model, optionally with retraining epochs.
#[pyfunction]
#[pyo3(signature = (data, dim=8000, retrain_epochs=0, seed=0))]
fn train_hdc(py: Python<'_>, data: &PyDataset, dim: usize, retrain_epochs: usize, seed: u64) -> PyResult<PyModel> {
    let data = &data.inner;
    let cfg = HdcConfig {
        dim,
        num_levels: data.num_levels(),
        seed,
        retrain_epochs,
        ..HdcConfig::new(data.num_features(), data.num_classes())
    };
    let clf = py
        .detach(|| HdcClassifier::fit(&cfg, data, retrain_epochs > 0))
        .map_err(err)?;
    Ok(PyModel {
        inner: clf.to_binary_model(),
    })
}

/// Stored bits of a model: `M*D_V + (N+K)*D_F`.
#[pyfunction]
#[pyo3(signature = (num_features, num_levels, num_classes, value_dim, feature_dim))]
fn model_size_bits(num_features: usize, num_levels: usize, num_classes: usize, value_dim: usize, feature_dim: usize) -> u64 {
    store::model_size_bits(&ModelDescriptor::ldc(num_features, num_levels, num_classes, value_dim, feature_dim))
}

#[pyfunction]
#[pyo3(signature = (num_features, num_classes, feature_dim, clock_mhz=eval::DEFAULT_CLOCK_MHZ))]
fn cycle_estimate<'py>(
    py: Python<'py>,
    num_features: usize,
    num_classes: usize,
    feature_dim: usize,
    clock_mhz: f64,
) -> PyResult<Bound<'py, PyDict>> {
    estimate_dict(py, &ModelDescriptor::ldc(num_features, 256, num_classes, 1, feature_dim), clock_mhz)
}

#[pyfunction]
fn hamming(a: Vec<i8>, b: Vec<i8>) -> PyResult<usize> {
    Ok(bipolar(&a)?.hamming_distance(&bipolar(&b)?).map_err(err)?.differing)
}

#[pyfunction]
fn dot(a: Vec<i8>, b: Vec<i8>) -> PyResult<i64> {
    bipolar(&a)?.dot(&bipolar(&b)?).map_err(err)
}

#[pyfunction]
fn bind(a: Vec<i8>, b: Vec<i8>) -> PyResult<Vec<i8>> {
    Ok(bipolar(&a)?.bind(&bipolar(&b)?).map_err(err)?.to_signs())
}

#[pymodule]
fn ldc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train_ldc, m)?)?;
    m.add_function(wrap_pyfunction!(train_hdc, m)?)?;
    m.add_function(wrap_pyfunction!(model_size_bits, m)?)?;
    m.add_function(wrap_pyfunction!(cycle_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(hamming, m)?)?;
    m.add_function(wrap_pyfunction!(dot, m)?)?;
    m.add_function(wrap_pyfunction!(bind, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
