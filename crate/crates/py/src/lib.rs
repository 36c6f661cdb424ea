//! Python bindings: link simulation, spline functions, equalizer models,
//! training, pruning and Pareto extraction.

use std::path::PathBuf;

use kaneq::channel::build_frame;
use kaneq::pruning::{default_thresholds, prune};
use kaneq::search::{pareto_front as front, ParetoPoint};
use kaneq::seed::rng;
use kaneq::training::{self, evaluate_ber};
use pyo3::exceptions::{PyIndexError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: kaneq::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "LinkConfig", module = "kaneq_py", from_py_object)]
#[derive(Clone)]
struct PyLinkConfig {
    inner: kaneq::LinkConfig,
}

#[pymethods]
impl PyLinkConfig {
    #[new]
    #[pyo3(signature = (rop = None))]
    fn new(rop: Option<f64>) -> Self {
        let mut inner = kaneq::LinkConfig::default();
        if let Some(rop) = rop {
            inner.rop = rop;
        }
        Self { inner }
    }

    /// Only noise and the receiver filter enabled.
    #[staticmethod]
    fn linear() -> Self {
        Self {
            inner: kaneq::LinkConfig::linear(),
        }
    }

    #[staticmethod]
    fn clean() -> Self {
        Self {
            inner: kaneq::LinkConfig::clean(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner: kaneq::LinkConfig = toml::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    fn to_toml(&self) -> PyResult<String> {
        toml::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn rop(&self) -> f64 {
        self.inner.rop
    }

    #[setter]
    fn set_rop(&mut self, rop: f64) {
        self.inner.rop = rop;
    }

    fn __repr__(&self) -> String {
        format!("LinkConfig(rop={})", self.inner.rop)
    }
}

#[pyclass(name = "Frame", module = "kaneq_py", from_py_object)]
#[derive(Clone)]
struct PyFrame {
    inner: kaneq::WaveformFrame,
}

#[pymethods]
impl PyFrame {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: kaneq::WaveformFrame::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    #[getter]
    fn samples(&self) -> Vec<f32> {
        self.inner.samples.clone()
    }

    #[getter]
    fn symbols(&self) -> Vec<u8> {
        self.inner.symbols.clone()
    }

    #[getter]
    fn bits(&self) -> Vec<u8> {
        self.inner.bits.clone()
    }

    #[getter]
    fn sps(&self) -> usize {
        self.inner.sps
    }

    #[getter]
    fn rop(&self) -> f64 {
        self.inner.rop
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// Accumulated dispersion in ps/nm.
    #[getter]
    fn accumulated_dispersion(&self) -> f64 {
        self.inner.accumulated_dispersion
    }

    fn slicer_ber(&self) -> f64 {
        self.inner.slicer_ber()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Frame(symbols={}, rop={})", self.inner.len(), self.inner.rop)
    }
}

/// Simulate `n_symbols` PAM4 symbols through the link.
#[pyfunction]
#[pyo3(signature = (config, n_symbols, seed = 0))]
fn simulate(config: &PyLinkConfig, n_symbols: usize, seed: u64) -> PyResult<PyFrame> {
    Ok(PyFrame {
        inner: build_frame(&config.inner, n_symbols, seed).map_err(py_err)?,
    })
}

#[pyclass(name = "SplineFunction", module = "kaneq_py", from_py_object)]
#[derive(Clone)]
struct PySpline {
    inner: kaneq::SplineFunction,
    lut: kaneq::LutCompiled,
}

#[pymethods]
impl PySpline {
    #[new]
    fn new(coeffs: Vec<f64>) -> PyResult<Self> {
        let grid = kaneq::SplineGrid::new(coeffs.len()).map_err(py_err)?;
        let inner = kaneq::SplineFunction::new(grid, coeffs).map_err(py_err)?;
        let lut = kaneq::LutCompiled::from_function(&inner);
        Ok(Self { inner, lut })
    }

    #[getter]
    fn coeffs(&self) -> Vec<f64> {
        self.inner.coeffs.clone()
    }

    #[getter]
    fn points(&self) -> Vec<f64> {
        self.inner.grid.points()
    }

    fn eval(&self, x: f64) -> f64 {
        self.inner.eval(x)
    }

    fn eval_basis_sum(&self, x: f64) -> f64 {
        self.inner.eval_basis_sum(x)
    }

    fn eval_lut(&self, x: f64) -> f64 {
        self.lut.eval_function(0, x)
    }

    fn __call__(&self, x: f64) -> f64 {
        self.inner.eval(x)
    }
}

#[pyclass(name = "TrainRecord", module = "kaneq_py", get_all, skip_from_py_object)]
struct PyTrainRecord {
    loss: Vec<f64>,
    test_ber: Vec<Option<f64>>,
    lr: Vec<f64>,
    final_mean_ber: f64,
}

#[pyclass(name = "Equalizer", module = "kaneq_py", from_py_object)]
#[derive(Clone)]
struct PyEqualizer {
    inner: kaneq::EqualizerModel,
}

#[pymethods]
impl PyEqualizer {
    /// New model from a descriptor such as `kan2-c2-k64-s1-g9-k32-s2-g9`.
    #[new]
    #[pyo3(signature = (descriptor, seed = 0))]
    fn new(descriptor: &str, seed: u64) -> PyResult<Self> {
        let arch = kaneq::Architecture::from_descriptor(descriptor).map_err(py_err)?;
        Ok(Self {
            inner: kaneq::EqualizerModel::new(arch, &mut rng(seed)).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: kaneq::EqualizerModel::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    #[getter]
    fn descriptor(&self) -> String {
        self.inner.architecture().descriptor()
    }

    #[getter]
    fn family(&self) -> String {
        self.inner.family().to_string()
    }

    #[getter]
    fn rvms(&self) -> f64 {
        self.inner.count_rvms().total
    }

    #[getter]
    fn rvms_per_layer(&self) -> Vec<f64> {
        self.inner.count_rvms().per_layer
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    #[getter]
    fn receptive_field(&self) -> usize {
        self.inner.architecture().receptive_field()
    }

    /// Raw forward pass over a 2-sps sample stream, one output per symbol.
    fn forward(&self, samples: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&samples).map_err(py_err)
    }

    /// Symbol estimates for `first..first+count` of a frame.
    fn estimate(&self, frame: &PyFrame, first: usize, count: usize) -> PyResult<Vec<f64>> {
        self.inner
            .estimate(&frame.inner.samples_f64(), first, count)
            .map_err(py_err)
    }

    /// BER over the usable symbols of `frame`, or over `start..end`.
    #[pyo3(signature = (frame, start = None, end = None))]
    fn ber(&self, frame: &PyFrame, start: Option<usize>, end: Option<usize>) -> PyResult<f64> {
        let usable = self.inner.architecture().usable_symbols(frame.inner.len());
        let region = start.unwrap_or(usable.start)..end.unwrap_or(usable.end);
        if region.start < usable.start || region.end > usable.end {
            return Err(PyIndexError::new_err(format!("region outside usable symbols {usable:?}")));
        }
        evaluate_ber(&self.inner, &frame.inner, region).map_err(py_err)
    }

    /// Train in place on one frame.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (frame, iterations = None, lr = None, l1_weight = None, test_blocks = None, seed = None))]
    fn train(
        &mut self,
        py: Python<'_>,
        frame: &PyFrame,
        iterations: Option<usize>,
        lr: Option<f64>,
        l1_weight: Option<f64>,
        test_blocks: Option<usize>,
        seed: Option<u64>,
    ) -> PyResult<PyTrainRecord> {
        let d = kaneq::TrainConfig::default();
        let cfg = kaneq::TrainConfig {
            iterations: iterations.unwrap_or(d.iterations),
            lr: lr.unwrap_or(d.lr),
            l1_weight: l1_weight.unwrap_or(d.l1_weight),
            test_blocks: test_blocks.unwrap_or(d.test_blocks),
            seed: seed.unwrap_or(d.seed),
            ..d
        };
        let model = &mut self.inner;
        let data = &frame.inner;
        let r = py.detach(|| training::train(model, data, &cfg)).map_err(py_err)?;
        Ok(PyTrainRecord {
            loss: r.loss,
            test_ber: r.test_ber,
            lr: r.lr,
            final_mean_ber: r.final_mean_ber,
        })
    }

    /// Copy with connections below `threshold_pct` % of each layer's
    /// largest magnitude masked.
    fn prune(&self, threshold_pct: f64) -> PyResult<Self> {
        let out = prune(&self.inner, threshold_pct).map_err(py_err)?;
        if out.is_degenerate() {
            return Err(PyValueError::new_err(format!(
                "threshold {threshold_pct} removes every connection of layers {:?}",
                out.empty_layers
            )));
        }
        Ok(Self { inner: out.model })
    }

    fn active_connections(&self) -> Vec<usize> {
        self.inner.layers().iter().map(|l| l.active_connections()).collect()
    }

    fn __repr__(&self) -> String {
        format!("Equalizer({:?}, rvms={})", self.descriptor(), self.rvms())
    }
}

/// Indices of the non-dominated `(rvms, metric)` points, sorted by rvms.
#[pyfunction]
fn pareto_front(points: Vec<(f64, f64)>) -> Vec<usize> {
    let tagged: Vec<ParetoPoint> = points
        .iter()
        .enumerate()
        .map(|(i, &(r, m))| ParetoPoint {
            candidate: i.to_string(),
            ..ParetoPoint::new(r, m)
        })
        .collect();
    front(&tagged)
        .iter()
        .map(|p| p.candidate.parse().expect("index tag"))
        .collect()
}

#[pyfunction]
fn prune_thresholds() -> Vec<f64> {
    default_thresholds()
}

#[pymodule]
fn kaneq_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLinkConfig>()?;
    m.add_class::<PyFrame>()?;
    m.add_class::<PySpline>()?;
    m.add_class::<PyEqualizer>()?;
    m.add_class::<PyTrainRecord>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(pareto_front, m)?)?;
    m.add_function(wrap_pyfunction!(prune_thresholds, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn front_indices_skip_dominated_points() {
        assert_eq!(pareto_front(vec![(21.0, 1e-2), (51.0, 2e-2), (121.0, 1e-3)]), vec![0, 2]);
        assert_eq!(pareto_front(vec![(5.0, 0.1), (5.0, 0.1)]), vec![0]);
    }
}
