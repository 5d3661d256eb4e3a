use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use delvekit::harness;
use delvekit::oracle::{self, OracleStatistic};
use delvekit::{DelveError, Design, Hypothesis, Variant};

create_exception!(delvekit_py, PreconditionError, PyValueError, "A variant's input requirements are not met.");

fn to_py(e: DelveError) -> PyErr {
    if e.is_precondition() {
        PreconditionError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn variant(name: &str) -> PyResult<Variant> {
    name.parse().map_err(to_py)
}

/// Sparse nonnegative integer count matrix, one row per sample.
#[pyclass(frozen, name = "CountMatrix", module = "delvekit_py")]
struct PyCountMatrix(delvekit::CountMatrix);

#[pymethods]
impl PyCountMatrix {
    /// Build from a dense list of rows.
    #[new]
    fn new(rows: Vec<Vec<u64>>) -> PyResult<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(PyValueError::new_err("rows must all have the same length"));
        }
        delvekit::CountMatrix::from_dense(&rows, p).map(Self).map_err(to_py)
    }

    /// Build from `(row, col, count)` triples.
    #[staticmethod]
    fn from_triples(triples: Vec<(usize, usize, u64)>, n_rows: usize, n_cols: usize) -> PyResult<Self> {
        delvekit::CountMatrix::from_triples(&triples, n_rows, n_cols).map(Self).map_err(to_py)
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.0.n_rows()
    }

    #[getter]
    fn n_cols(&self) -> usize {
        self.0.n_cols()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.0.nnz()
    }

    #[getter]
    fn row_totals(&self) -> Vec<u64> {
        self.0.row_totals().to_vec()
    }

    fn to_dense(&self) -> Vec<Vec<u64>> {
        self.0.to_dense()
    }

    fn __repr__(&self) -> String {
        format!("CountMatrix({} x {}, nnz={})", self.0.n_rows(), self.0.n_cols(), self.0.nnz())
    }
}

/// Assignment of rows to groups `0..k`.
#[pyclass(frozen, name = "GroupPartition", module = "delvekit_py")]
struct PyGroupPartition(delvekit::GroupPartition);

#[pymethods]
impl PyGroupPartition {
    #[new]
    #[pyo3(signature = (labels, k=None))]
    fn new(labels: Vec<usize>, k: Option<usize>) -> PyResult<Self> {
        let g = match k {
            Some(k) => delvekit::GroupPartition::new(labels, k),
            None => delvekit::GroupPartition::from_labels(labels),
        };
        g.map(Self).map_err(to_py)
    }

    /// Every row in its own group.
    #[staticmethod]
    fn singletons(n: usize) -> Self {
        Self(delvekit::GroupPartition::singletons(n))
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.k()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.0.labels().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(frozen, get_all, name = "TestResult", module = "delvekit_py")]
struct PyTestResult {
    variant: String,
    statistic: f64,
    variance_estimate: Option<f64>,
    psi: Option<f64>,
    p_value: Option<f64>,
    weighted_statistic: Option<f64>,
    per_coordinate: Option<Vec<(usize, f64)>>,
}

#[pymethods]
impl PyTestResult {
    fn __repr__(&self) -> String {
        format!(
            "TestResult(variant={}, statistic={}, psi={:?}, p_value={:?})",
            self.variant, self.statistic, self.psi, self.p_value
        )
    }
}

impl From<delvekit::TestResult> for PyTestResult {
    fn from(r: delvekit::TestResult) -> Self {
        Self {
            variant: r.variant.as_str().to_string(),
            statistic: r.statistic,
            variance_estimate: r.variance_estimate,
            psi: r.psi,
            p_value: r.p_value,
            weighted_statistic: r.weighted_statistic,
            per_coordinate: r.per_coordinate,
        }
    }
}

/// Runs one test variant. Without `groups`, every row is its own group.
#[pyfunction]
#[pyo3(signature = (x, groups=None, variant="delve", weighted=false))]
fn delve_test(
    py: Python<'_>,
    x: &PyCountMatrix,
    groups: Option<&PyGroupPartition>,
    variant: &str,
    weighted: bool,
) -> PyResult<PyTestResult> {
    let v = self::variant(variant)?;
    let g = groups
        .map(|g| g.0.clone())
        .unwrap_or_else(|| delvekit::GroupPartition::singletons(x.0.n_rows()));
    let res = py.detach(|| {
        if weighted {
            delvekit::delve_test_weighted(&x.0, &g, v)
        } else {
            delvekit::delve_test(&x.0, &g, v)
        }
    });
    res.map(Into::into).map_err(to_py)
}

/// Two-group test of the rows of `a` against the rows of `b`.
#[pyfunction]
fn two_sample(a: &PyCountMatrix, b: &PyCountMatrix) -> PyResult<PyTestResult> {
    delvekit::two_sample(&a.0, &b.0).map(Into::into).map_err(to_py)
}

type PairwiseOut = (Vec<String>, Vec<Vec<Option<f64>>>, Vec<String>);

/// Z-score for every pair of groups; failed pairs are `None`.
/// Returns `(labels, matrix, warnings)`.
#[pyfunction]
#[pyo3(signature = (x, groups, labels=None, variant="delve_plus"))]
fn pairwise_zscores(
    py: Python<'_>,
    x: &PyCountMatrix,
    groups: &PyGroupPartition,
    labels: Option<Vec<String>>,
    variant: &str,
) -> PyResult<PairwiseOut> {
    let v = self::variant(variant)?;
    let labels = labels.unwrap_or_else(|| (0..groups.0.k()).map(|i| i.to_string()).collect());
    let m = py
        .detach(|| harness::pairwise_zscores(&x.0, &groups.0, &labels, v))
        .map_err(to_py)?;
    Ok((m.labels, m.values, m.warnings))
}

/// Population parameters: row lengths, row PMFs and group labels.
#[pyclass(frozen, name = "TrueParams", module = "delvekit_py")]
struct PyTrueParams(delvekit::TrueParams);

#[pymethods]
impl PyTrueParams {
    #[new]
    fn new(totals: Vec<u64>, omega: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<Self> {
        let g = delvekit::GroupPartition::from_labels(labels).map_err(to_py)?;
        delvekit::TrueParams::new(totals, omega, g).map(Self).map_err(to_py)
    }

    /// Plug-in parameters from observed counts.
    #[staticmethod]
    fn plugin(x: &PyCountMatrix, groups: &PyGroupPartition) -> PyResult<Self> {
        delvekit::TrueParams::plugin(&x.0, &groups.0).map(Self).map_err(to_py)
    }

    #[getter]
    fn is_plugin(&self) -> bool {
        self.0.plugin
    }

    fn rho_squared(&self) -> f64 {
        delvekit::rho_squared(&self.0)
    }

    fn omega_sq(&self) -> PyResult<f64> {
        delvekit::omega_sq(&self.0).map_err(to_py)
    }

    fn snr(&self) -> f64 {
        delvekit::snr(&self.0)
    }

    /// `(alpha_n, beta_n)`.
    fn alpha_beta(&self) -> (f64, f64) {
        delvekit::alpha_beta(&self.0)
    }

    /// `(theta1, theta2, theta3, theta4)`.
    fn theta(&self) -> PyResult<(f64, f64, f64, f64)> {
        let t = delvekit::theta_components(&self.0).map_err(to_py)?;
        Ok((t.theta1, t.theta2, t.theta3, t.theta4))
    }

    /// Exact expectation of `"t"`, `"v"` or `"vtilde"` by full enumeration.
    fn expected(&self, statistic: &str) -> PyResult<f64> {
        let stat = match statistic {
            "t" => OracleStatistic::T,
            "v" => OracleStatistic::V,
            "vtilde" => OracleStatistic::Vtilde,
            other => return Err(PyValueError::new_err(format!("unknown statistic '{other}'"))),
        };
        oracle::oracle_expected_statistic(&self.0, stat).map_err(to_py)
    }
}

#[pyfunction]
fn dimension_ratio(n: f64, mean_length: f64, k: f64, p: f64) -> f64 {
    delvekit::dimension_ratio(n, mean_length, k, p)
}

/// Simulation design settings. `signal` is the design's strength parameter.
#[pyclass(frozen, name = "SimConfig", module = "delvekit_py")]
struct PySimConfig(delvekit::SimConfig);

#[pymethods]
impl PySimConfig {
    #[new]
    #[pyo3(signature = (design, n, p, k, n_min, n_max, phi=1.0, hypothesis="null", signal=0.0, seed=0, fixed_mu=false))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        design: &str,
        n: usize,
        p: usize,
        k: usize,
        n_min: u64,
        n_max: u64,
        phi: f64,
        hypothesis: &str,
        signal: f64,
        seed: u64,
        fixed_mu: bool,
    ) -> PyResult<Self> {
        let hypothesis = match hypothesis {
            "null" => Hypothesis::Null,
            "alt" => Hypothesis::Alt,
            other => return Err(PyValueError::new_err(format!("hypothesis must be 'null' or 'alt', got '{other}'"))),
        };
        let cfg = delvekit::SimConfig {
            design: Design::parse(design).map_err(to_py)?,
            n,
            p,
            k,
            n_min,
            n_max,
            phi,
            hypothesis,
            signal,
            fixed_mu,
            seed,
        };
        cfg.validate().map_err(to_py)?;
        Ok(Self(cfg))
    }

    /// Replicate `index` as `(counts, groups)`.
    fn draw(&self, index: u64) -> PyResult<(PyCountMatrix, PyGroupPartition)> {
        let d = self.0.draw(index).map_err(to_py)?;
        Ok((PyCountMatrix(d.counts), PyGroupPartition(d.groups)))
    }

    /// Per-replicate values (`psi`, or the raw statistic for uncalibrated
    /// variants) keyed by variant name.
    #[pyo3(signature = (reps, variants=vec!["delve".to_string(), "delve_plus".to_string()]))]
    fn run(&self, py: Python<'_>, reps: u64, variants: Vec<String>) -> PyResult<Vec<(String, Vec<f64>)>> {
        let vs = variants.iter().map(|v| variant(v)).collect::<PyResult<Vec<_>>>()?;
        let report = py.detach(|| harness::run_simulation(&self.0, reps, &vs)).map_err(to_py)?;
        Ok(report
            .variants
            .into_iter()
            .map(|s| (s.variant.as_str().to_string(), s.values))
            .collect())
    }
}

#[pymodule]
pub fn delvekit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCountMatrix>()?;
    m.add_class::<PyGroupPartition>()?;
    m.add_class::<PyTestResult>()?;
    m.add_class::<PyTrueParams>()?;
    m.add_class::<PySimConfig>()?;
    m.add_function(wrap_pyfunction!(delve_test, m)?)?;
    m.add_function(wrap_pyfunction!(two_sample, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_zscores, m)?)?;
    m.add_function(wrap_pyfunction!(dimension_ratio, m)?)?;
    m.add("PreconditionError", m.py().get_type::<PreconditionError>())?;
    Ok(())
}
