//! Python module `urnld`.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pythonize::pythonize;

use urn_core::drift::{equilibrium_solve, remark_condition_checks, DriftProfile, DEFAULT_TOL};
use urn_core::exact::dp_distribution;
use urn_core::ldp::{
    b6_constant_ceiling, bound_verification, martingale_sum_exceedance, mc_tail_grid,
    Lemma31Params, TailEstimate, DEFAULT_WORK_CAP,
};
use urn_core::model::{simulate_path, ReplacementMatrix, SkewSpec, UrnConfig};
use urn_core::sa::{
    condition_audit, predicted_regimes, run_sa, tail_experiment, urn_as_sa, Drift, NoiseSource,
    StepSchedule,
};
use urn_core::UrnError;

create_exception!(urnld, UrnldError, PyException);
create_exception!(urnld, ResourceCapError, UrnldError);

fn to_py(e: UrnError) -> PyErr {
    match e {
        UrnError::ResourceCap { .. } => ResourceCapError::new_err(e.to_string()),
        _ => UrnldError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> OrPy<T> for Result<T, UrnError> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn skew_from(
    name: &str,
    p: Option<f64>,
    knots: Option<Vec<(f64, f64)>>,
    concave: bool,
) -> PyResult<SkewSpec> {
    let need_p = || p.ok_or_else(|| UrnldError::new_err(format!("skew `{name}` needs p")));
    match name {
        "identity" => Ok(SkewSpec::identity()),
        "power" => SkewSpec::power(need_p()?).py_err(),
        "mirror_power" => SkewSpec::mirror_power(need_p()?).py_err(),
        "table" => {
            let knots = knots.ok_or_else(|| UrnldError::new_err("table skew needs knots"))?;
            SkewSpec::table(knots, concave).py_err()
        }
        other => Err(UrnldError::new_err(format!("unknown skew `{other}`"))),
    }
}

/// Two-color urn with replacement matrix `h` (rows), skew function and
/// initial counts.
#[pyclass(name = "Urn", module = "urnld", frozen)]
struct Urn {
    inner: UrnConfig,
}

#[pymethods]
impl Urn {
    #[new]
    #[pyo3(signature = (h, skew = "identity", p = None, knots = None, concave = false, y0 = (1.0, 1.0), allow_invalid = false))]
    fn new(
        h: [[f64; 2]; 2],
        skew: &str,
        p: Option<f64>,
        knots: Option<Vec<(f64, f64)>>,
        concave: bool,
        y0: (f64, f64),
        allow_invalid: bool,
    ) -> PyResult<Self> {
        let matrix = ReplacementMatrix::from_rows(h).py_err()?;
        let skew = skew_from(skew, p, knots, concave)?;
        let inner = if allow_invalid {
            UrnConfig::unchecked(matrix, skew, y0)
        } else {
            UrnConfig::new(matrix, skew, y0)
        }
        .py_err()?;
        Ok(Self { inner })
    }

    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        Ok(pythonize(py, &self.inner.validate())?)
    }

    #[getter]
    fn is_valid(&self) -> bool {
        self.inner.validate().passed()
    }

    fn drift(&self, y: f64) -> PyResult<f64> {
        DriftProfile::new(self.inner.matrix, self.inner.skew.clone())
            .eval(y)
            .py_err()
    }

    fn drift_derivative(&self, y: f64) -> PyResult<f64> {
        DriftProfile::new(self.inner.matrix, self.inner.skew.clone())
            .derivative(y)
            .py_err()
    }

    #[pyo3(signature = (tol = DEFAULT_TOL))]
    fn equilibrium<'py>(&self, py: Python<'py>, tol: f64) -> PyResult<Bound<'py, PyAny>> {
        let profile = DriftProfile::new(self.inner.matrix, self.inner.skew.clone());
        let report = equilibrium_solve(&profile, tol).py_err()?;
        Ok(pythonize(py, &report)?)
    }

    fn remark_checks<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let report = remark_condition_checks(&self.inner.matrix, &self.inner.skew).py_err()?;
        Ok(pythonize(py, &report)?)
    }

    /// States and step records of one path on stream 0 of `seed`.
    fn simulate<'py>(&self, py: Python<'py>, n: u64, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let path = py.detach(|| simulate_path(&self.inner, n, seed)).py_err()?;
        Ok(pythonize(py, &(path.states, path.steps))?)
    }

    /// `[(k, z, probability), ...]` for the law of `Z_n`.
    fn exact(&self, py: Python<'_>, n: u64) -> PyResult<Vec<(u64, f64, f64)>> {
        let d = py.detach(|| dp_distribution(&self.inner, n)).py_err()?;
        Ok(d.support
            .iter()
            .map(|a| (a.k, a.z, a.probability))
            .collect())
    }

    fn exact_tail(&self, py: Python<'_>, n: u64, eps: f64, y_star: f64) -> PyResult<f64> {
        let d = py.detach(|| dp_distribution(&self.inner, n)).py_err()?;
        Ok(d.tail(y_star, eps))
    }

    #[pyo3(signature = (y_star, n_grid, eps, trials, seed, exact_ci = false))]
    #[allow(clippy::too_many_arguments)]
    fn mc_tails<'py>(
        &self,
        py: Python<'py>,
        y_star: f64,
        n_grid: Vec<u64>,
        eps: Vec<f64>,
        trials: u64,
        seed: u64,
        exact_ci: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut est = py
            .detach(|| {
                mc_tail_grid(
                    &self.inner,
                    y_star,
                    &n_grid,
                    &eps,
                    trials,
                    seed,
                    DEFAULT_WORK_CAP,
                )
            })
            .py_err()?;
        if exact_ci {
            est = est
                .into_iter()
                .map(TailEstimate::with_exact_interval_for_rare)
                .collect();
        }
        Ok(pythonize(py, &est)?)
    }

    #[pyo3(signature = (y_star, n, paths, seed, eps_inclusion = 0.05))]
    fn bounds<'py>(
        &self,
        py: Python<'py>,
        y_star: f64,
        n: u64,
        paths: u64,
        seed: u64,
        eps_inclusion: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let report = py
            .detach(|| bound_verification(&self.inner, n, paths, seed, y_star, eps_inclusion))
            .py_err()?;
        Ok(pythonize(py, &report)?)
    }

    /// `(frequency, bound)` for `|sum_{i=k}^n dM_{i+1} / T_{i+1}| >= eps`.
    #[pyo3(signature = (k, n, eps, paths, seed, k_hat, beta = std::f64::consts::E))]
    #[allow(clippy::too_many_arguments)]
    fn martingale_sum(
        &self,
        py: Python<'_>,
        k: u64,
        n: u64,
        eps: f64,
        paths: u64,
        seed: u64,
        k_hat: f64,
        beta: f64,
    ) -> PyResult<(f64, f64)> {
        let params = Lemma31Params {
            beta,
            k,
            n,
            eps,
            big_k: k_hat,
            matrix: self.inner.matrix,
        };
        let bound = params.evaluate().py_err()?.bound;
        let freq = py
            .detach(|| martingale_sum_exceedance(&self.inner, k, n, eps, paths, seed))
            .py_err()?
            .p_hat;
        Ok((freq, bound))
    }

    #[getter]
    fn k_ceiling(&self) -> f64 {
        b6_constant_ceiling(&self.inner.matrix)
    }

    fn __repr__(&self) -> String {
        let h = &self.inner.matrix;
        format!(
            "Urn(h=[[{}, {}], [{}, {}]], skew={}, y0={:?})",
            h.h11,
            h.h12,
            h.h21,
            h.h22,
            self.inner.skew.family_name(),
            self.inner.y0
        )
    }
}

/// Stochastic approximation recursion `X_{n+1} = X_n + gamma_{n+1} (g(X_n) + U_{n+1})`.
#[pyclass(name = "SaProblem", module = "urnld", frozen)]
struct SaProblem {
    inner: urn_core::sa::SaProblem,
}

fn synthetic(
    drift: Drift,
    noise_scale: f64,
    gamma_scale: f64,
    gamma_offset: f64,
    x0: f64,
    bounded: bool,
) -> PyResult<SaProblem> {
    let schedule = StepSchedule::harmonic(gamma_scale, gamma_offset).py_err()?;
    let noise = NoiseSource::Rademacher { scale: noise_scale };
    let inner = urn_core::sa::SaProblem::synthetic(drift, schedule, noise, x0, bounded).py_err()?;
    Ok(SaProblem { inner })
}

#[pymethods]
impl SaProblem {
    /// `g(x) = -scale tanh(x - center)` with Rademacher noise, unbounded.
    #[staticmethod]
    #[pyo3(signature = (scale, center = 0.0, noise_scale = 1.0, gamma_scale = 1.0, gamma_offset = 0.0))]
    fn tanh(
        scale: f64,
        center: f64,
        noise_scale: f64,
        gamma_scale: f64,
        gamma_offset: f64,
    ) -> PyResult<Self> {
        synthetic(
            Drift::Tanh { scale, center },
            noise_scale,
            gamma_scale,
            gamma_offset,
            center,
            false,
        )
    }

    /// `g(x) = -slope (x - center)` with Rademacher noise.
    #[staticmethod]
    #[pyo3(signature = (slope, center, noise_scale = 1.0, gamma_scale = 1.0, gamma_offset = 0.0, bounded = false))]
    fn linear(
        slope: f64,
        center: f64,
        noise_scale: f64,
        gamma_scale: f64,
        gamma_offset: f64,
        bounded: bool,
    ) -> PyResult<Self> {
        synthetic(
            Drift::Linear { slope, center },
            noise_scale,
            gamma_scale,
            gamma_offset,
            center,
            bounded,
        )
    }

    /// The urn proportion viewed as a recursion.
    #[staticmethod]
    fn from_urn(urn: &Urn) -> Self {
        Self {
            inner: urn_as_sa(&urn.inner),
        }
    }

    #[getter]
    fn constants<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        Ok(pythonize(py, &self.inner.constants)?)
    }

    fn predicted_regimes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        Ok(pythonize(py, &predicted_regimes(&self.inner))?)
    }

    fn run(&self, py: Python<'_>, n: u64, seed: u64) -> PyResult<Vec<f64>> {
        Ok(py.detach(|| run_sa(&self.inner, n, seed)).py_err()?.states)
    }

    fn audit<'py>(&self, py: Python<'py>, n: u64, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let t = py.detach(|| run_sa(&self.inner, n, seed)).py_err()?;
        Ok(pythonize(py, &condition_audit(&t))?)
    }

    fn tail_experiment<'py>(
        &self,
        py: Python<'py>,
        x_star: f64,
        n_grid: Vec<u64>,
        eps: f64,
        trials: u64,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let x = py
            .detach(|| tail_experiment(&self.inner, x_star, &n_grid, eps, trials, seed))
            .py_err()?;
        Ok(pythonize(py, &x)?)
    }
}

/// Fit `log p = log C - a n`; zero estimates are dropped.
#[pyfunction]
fn rate_fit<'py>(py: Python<'py>, ns: Vec<u64>, ps: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    if ns.len() != ps.len() {
        return Err(UrnldError::new_err("ns and ps differ in length"));
    }
    let est: Vec<TailEstimate> = ns
        .iter()
        .zip(&ps)
        .map(|(&n, &p)| TailEstimate::exact(n, 0.0, p))
        .collect();
    let fit = urn_core::ldp::rate_fit(&est).py_err()?;
    Ok(pythonize(py, &fit)?)
}

#[pymodule]
fn urnld(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Urn>()?;
    m.add_class::<SaProblem>()?;
    m.add_function(wrap_pyfunction!(rate_fit, m)?)?;
    m.add("UrnldError", m.py().get_type::<UrnldError>())?;
    m.add("ResourceCapError", m.py().get_type::<ResourceCapError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
