//! Python bindings. Settings cross the boundary as lists of ints, datasets as
//! lists of `(offsets, wait_s)` tuples and configurations as TOML or JSON text.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sigsurr::analysis;
use sigsurr::datagen::{self, LabeledRecord};
use sigsurr::error::Error;
use sigsurr::featurize;
use sigsurr::ga::{self, Fitness, GaConfig, GaRunLog, OracleFitness, SurrogateFitness};
use sigsurr::microsim::{self, SimConfig};
use sigsurr::mitigation::{Aggregation, EnsembleModel};
use sigsurr::netmodel::{self, NetworkConfig, RoadNetwork, SignalSetting};
use sigsurr::surrogate::{self, ModelSpec, Predictor, SurrogateModel};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for sigsurr::error::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn setting(offsets: Vec<i64>) -> PyResult<SignalSetting> {
    SignalSetting::from_lifted(&offsets).py()
}

fn settings(rows: Vec<Vec<i64>>) -> PyResult<Vec<SignalSetting>> {
    rows.into_iter().map(setting).collect()
}

fn records(rows: Vec<(Vec<i64>, f64)>) -> PyResult<Vec<LabeledRecord>> {
    rows.into_iter()
        .map(|(o, wait_s)| Ok(LabeledRecord { setting: setting(o)?, wait_s }))
        .collect()
}

fn offsets(s: &SignalSetting) -> Vec<u8> {
    s.offsets().to_vec()
}

fn sim_config(text: Option<&str>) -> PyResult<SimConfig> {
    let cfg: SimConfig = match text {
        None => SimConfig::default(),
        Some(t) => toml::from_str(t).map_err(|e| PyValueError::new_err(e.to_string()))?,
    };
    cfg.validate().py()?;
    Ok(cfg)
}

/// A grid road network plus the simulation settings used to label it.
#[pyclass(name = "Network", frozen)]
struct PyNetwork {
    network: RoadNetwork,
    sim: SimConfig,
}

#[pymethods]
impl PyNetwork {
    /// `config` is network TOML (rows, cols, segment_cells, injection_prob),
    /// `sim` is simulation TOML (horizon_s, warmup_s, v_max, p_brake, seed).
    #[new]
    #[pyo3(signature = (config=None, sim=None))]
    fn new(config: Option<&str>, sim: Option<&str>) -> PyResult<Self> {
        let cfg = match config {
            None => NetworkConfig::default(),
            Some(t) => NetworkConfig::from_toml(t).py()?,
        };
        Ok(PyNetwork {
            network: RoadNetwork::from_config(&cfg).py()?,
            sim: sim_config(sim)?,
        })
    }

    #[getter]
    fn n_intersections(&self) -> usize {
        self.network.n_intersections()
    }

    /// Total red-light waiting time in seconds, plus vehicle counts.
    fn simulate<'py>(&self, py: Python<'py>, offsets: Vec<i64>) -> PyResult<Bound<'py, PyDict>> {
        let s = setting(offsets)?;
        let r = py.detach(|| microsim::simulate(&self.network, &s, &self.sim)).py()?;
        let d = PyDict::new(py);
        d.set_item("total_red_wait_s", r.total_red_wait_s)?;
        d.set_item("vehicles_injected", r.vehicles_injected)?;
        d.set_item("vehicles_exited", r.vehicles_exited)?;
        d.set_item("vehicles_remaining", r.vehicles_remaining)?;
        Ok(d)
    }

    #[pyo3(signature = (rows, workers=1))]
    fn simulate_batch(&self, py: Python<'_>, rows: Vec<Vec<i64>>, workers: usize) -> PyResult<Vec<u64>> {
        let s = settings(rows)?;
        let r = py
            .detach(|| microsim::batch_simulate(&self.network, &s, &self.sim, workers))
            .py()?;
        Ok(r.into_iter().map(|x| x.total_red_wait_s).collect())
    }

    /// `n` random settings labeled by the simulator.
    #[pyo3(signature = (n, seed, workers=1))]
    fn dataset(&self, py: Python<'_>, n: usize, seed: u64, workers: usize) -> PyResult<Vec<(Vec<u8>, f64)>> {
        let data = py
            .detach(|| datagen::generate_dataset(&self.network, &self.sim, n, seed, workers))
            .py()?;
        Ok(data.iter().map(|r| (offsets(&r.setting), r.wait_s)).collect())
    }
}

/// A trained metamodel (neural network, boosted trees or an ensemble).
#[pyclass(name = "Model", frozen)]
struct PyModel {
    model: SurrogateModel,
}

#[pymethods]
impl PyModel {
    /// Trains from TOML with a `family = "nn"` or `family = "gbt"` key.
    #[staticmethod]
    fn train(py: Python<'_>, spec: &str, data: Vec<(Vec<i64>, f64)>) -> PyResult<Self> {
        let spec: ModelSpec = toml::from_str(spec).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let data = records(data)?;
        let model = py.detach(|| spec.train(&data)).py()?;
        Ok(PyModel { model })
    }

    /// Averages members, optionally trimming `trim` of them from each end.
    #[staticmethod]
    #[pyo3(signature = (members, trim=None))]
    fn ensemble(members: Vec<PyRef<'_, PyModel>>, trim: Option<f64>) -> PyResult<Self> {
        let aggregation = match trim {
            None => Aggregation::Mean,
            Some(fraction) => Aggregation::TrimmedMean { fraction },
        };
        let members = members.iter().map(|m| m.model.clone()).collect();
        Ok(PyModel {
            model: SurrogateModel::Ensemble(EnsembleModel::new(members, aggregation).py()?),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            model: SurrogateModel::load(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.model.save(&path).py()
    }

    #[getter]
    fn label(&self) -> String {
        self.model.label()
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.model.family()
    }

    fn predict(&self, offsets: Vec<i64>) -> PyResult<f64> {
        self.model.predict(&setting(offsets)?).py()
    }

    fn predict_batch(&self, py: Python<'_>, rows: Vec<Vec<i64>>) -> PyResult<Vec<f64>> {
        let s = settings(rows)?;
        py.detach(|| self.model.predict_batch(&s)).py()
    }

    /// Mean absolute relative error on labeled records.
    fn test_error(&self, py: Python<'_>, data: Vec<(Vec<i64>, f64)>) -> PyResult<f64> {
        let data = records(data)?;
        Ok(py.detach(|| surrogate::test_error(&self.model, &data)).py()?.0)
    }

    fn __repr__(&self) -> String {
        format!("Model({})", self.model.label())
    }
}

/// One recorded GA run.
#[pyclass(name = "GaRun", frozen)]
struct PyGaRun {
    log: GaRunLog,
}

#[pymethods]
impl PyGaRun {
    #[getter]
    fn fitness_id(&self) -> String {
        self.log.fitness_id.clone()
    }

    #[getter]
    fn best_fitness(&self) -> f64 {
        self.log.best_fitness()
    }

    #[getter]
    fn best(&self) -> Vec<u8> {
        offsets(&self.log.iterations.last().expect("runs have iterations").best)
    }

    /// Best setting of every iteration.
    fn trajectory(&self) -> Vec<Vec<u8>> {
        self.log.trajectory().iter().map(offsets).collect()
    }

    /// Best fitness of every iteration.
    fn best_curve(&self) -> Vec<f64> {
        self.log.iterations.iter().map(|it| it.best_fitness).collect()
    }

    /// Distinct settings of the run ranked by fitness (at most 100).
    fn final_best(&self) -> Vec<(Vec<u8>, f64)> {
        self.log.final_best.iter().map(|s| (offsets(&s.setting), s.fitness)).collect()
    }

    fn is_elitist_monotone(&self) -> bool {
        self.log.is_elitist_monotone()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.log.save(&path).py()
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyGaRun {
            log: GaRunLog::load(&path).py()?,
        })
    }

    /// Oracle-labels the final best settings and returns the error summary of
    /// `model` against them.
    fn optima_errors<'py>(
        &self,
        py: Python<'py>,
        network: &PyNetwork,
        model: &PyModel,
    ) -> PyResult<Bound<'py, PyDict>> {
        let oracle = OracleFitness {
            network: &network.network,
            config: &network.sim,
            workers: 1,
        };
        let fitness = SurrogateFitness {
            name: model.model.label(),
            model: &model.model,
        };
        let eval = py.detach(|| analysis::evaluate_optima(&self.log, &oracle, &fitness)).py()?;
        summary_dict(py, &eval.summary)
    }
}

fn summary_dict<'py>(py: Python<'py>, s: &analysis::ErrorSummary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("n", s.n)?;
    d.set_item("mean_signed_rel", s.mean_signed_rel)?;
    d.set_item("mean_abs_rel", s.mean_abs_rel)?;
    d.set_item("max_abs_rel", s.max_abs_rel)?;
    d.set_item("frac_under", s.frac_under)?;
    Ok(d)
}

fn ga_config(n: usize, config: Option<&str>, iterations: Option<usize>, population: Option<usize>, seed: Option<u64>) -> PyResult<GaConfig> {
    let mut cfg = match config {
        None => GaConfig::default_for(n),
        Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(e.to_string()))?,
    };
    if let Some(i) = iterations {
        cfg.iterations = i;
    }
    if let Some(p) = population {
        cfg.population = p;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().py()?;
    Ok(cfg)
}

fn run(py: Python<'_>, fitness: &dyn Fitness, n: usize, cfg: &GaConfig) -> PyResult<PyGaRun> {
    let log = py.detach(|| ga::ga_run(fitness, n, cfg)).py()?;
    Ok(PyGaRun { log })
}

/// Minimizes a model's prediction. `config` is a full GA configuration as
/// JSON; the keyword overrides apply on top of it or of the defaults.
#[pyfunction]
#[pyo3(signature = (model, config=None, iterations=None, population=None, seed=None))]
fn optimize(
    py: Python<'_>,
    model: &PyModel,
    config: Option<&str>,
    iterations: Option<usize>,
    population: Option<usize>,
    seed: Option<u64>,
) -> PyResult<PyGaRun> {
    let n = model.model.n_intersections();
    let cfg = ga_config(n, config, iterations, population, seed)?;
    let fitness = SurrogateFitness {
        name: model.model.label(),
        model: &model.model,
    };
    run(py, &fitness, n, &cfg)
}

/// Minimizes simulated waiting time directly.
#[pyfunction]
#[pyo3(signature = (network, config=None, iterations=None, population=None, seed=None, workers=1))]
fn optimize_oracle(
    py: Python<'_>,
    network: &PyNetwork,
    config: Option<&str>,
    iterations: Option<usize>,
    population: Option<usize>,
    seed: Option<u64>,
    workers: usize,
) -> PyResult<PyGaRun> {
    let n = network.network.n_intersections();
    let cfg = ga_config(n, config, iterations, population, seed)?;
    let fitness = OracleFitness {
        network: &network.network,
        config: &network.sim,
        workers,
    };
    run(py, &fitness, n, &cfg)
}

#[pyfunction]
fn random_setting(n_intersections: usize, seed: u64) -> Vec<u8> {
    offsets(&netmodel::random_setting(n_intersections, seed))
}

/// `(cos, sin)` of each offset's phase angle, flattened.
#[pyfunction]
fn encode(offsets: Vec<i64>) -> PyResult<Vec<f64>> {
    Ok(featurize::encode(&setting(offsets)?))
}

/// Summary of signed relative errors over `(predicted, simulated)` pairs.
#[pyfunction]
fn summarize_errors<'py>(py: Python<'py>, pairs: Vec<(f64, f64)>) -> PyResult<Bound<'py, PyDict>> {
    summary_dict(py, &analysis::summarize_errors(&pairs).py()?)
}

/// Principal components of row-major points; returns a dict with
/// `components`, `eigenvalues`, `explained_variance_ratio`, `projected` and
/// `mean`.
#[pyfunction]
fn pca<'py>(py: Python<'py>, points: Vec<Vec<f64>>, k: usize) -> PyResult<Bound<'py, PyDict>> {
    let r = analysis::pca(&points, k).py()?;
    let d = PyDict::new(py);
    d.set_item("components", r.components)?;
    d.set_item("eigenvalues", r.eigenvalues)?;
    d.set_item("explained_variance_ratio", r.explained_variance_ratio)?;
    d.set_item("projected", r.projected)?;
    d.set_item("mean", r.mean)?;
    Ok(d)
}

#[pymodule]
fn sigsurr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyGaRun>()?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(random_setting, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(summarize_errors, m)?)?;
    m.add_function(wrap_pyfunction!(pca, m)?)?;
    Ok(())
}
