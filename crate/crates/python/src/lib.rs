//! Python bindings: results come back as frozen classes with read-only
//! attributes, exact rationals as `"num/den"` strings.

use std::collections::BTreeMap;

use kac_ising::{effective, ising1d, mc, monomial, phase, polymer, Coupling, FieldVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: kac_ising::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn coupling(lambda: f64) -> PyResult<Coupling> {
    Coupling::new(lambda).map_err(py_err)
}

/// Transfer-matrix results for a ring in site-dependent fields.
#[pyclass(module = "kac_ising", frozen, get_all)]
pub struct RingPartition {
    log_z: f64,
    magnetizations: Vec<f64>,
    correlations_nn: Vec<f64>,
}

#[pymethods]
impl RingPartition {
    fn __repr__(&self) -> String {
        format!("RingPartition(log_z={}, sites={})", self.log_z, self.magnetizations.len())
    }
}

/// `log Z`, magnetizations and nearest-neighbour correlations of the ring.
#[pyfunction]
fn ring_log_z(lambda: f64, h: Vec<f64>) -> PyResult<RingPartition> {
    let fields = FieldVector::new(h).map_err(py_err)?;
    let r = ising1d::ring_log_z(coupling(lambda)?, &fields);
    Ok(RingPartition {
        log_z: r.log_z,
        magnetizations: r.magnetizations,
        correlations_nn: r.correlations_nn,
    })
}

/// Infinite-chain pressure `p_λ(h)`.
#[pyfunction]
fn pressure(lambda: f64, h: f64) -> PyResult<f64> {
    Ok(ising1d::pressure(coupling(lambda)?, h))
}

#[pyfunction]
fn magnetization_of_field(lambda: f64, h: f64) -> PyResult<f64> {
    Ok(ising1d::magnetization_of_field(coupling(lambda)?, h))
}

/// Canonical free energy `f_λ(m)`.
#[pyfunction]
fn free_energy(lambda: f64, m: f64) -> PyResult<f64> {
    ising1d::free_energy_canonical(coupling(lambda)?, m).map_err(py_err)
}

/// Minimization of the mean-field functional at fixed `(λ, h_ext)`.
#[pyclass(module = "kac_ising", frozen, get_all)]
pub struct PhasePoint {
    lambda: f64,
    h_ext: f64,
    minimizer_m: f64,
    minimizers: Vec<f64>,
    pressure_lp: f64,
    degenerate: bool,
}

#[pymethods]
impl PhasePoint {
    fn __repr__(&self) -> String {
        format!(
            "PhasePoint(lambda={}, h_ext={}, minimizer_m={}, pressure_lp={})",
            self.lambda, self.h_ext, self.minimizer_m, self.pressure_lp
        )
    }
}

#[pyfunction]
fn lp_pressure(lambda: f64, h_ext: f64) -> PyResult<PhasePoint> {
    let p = phase::lp_pressure(lambda, h_ext).map_err(py_err)?;
    Ok(PhasePoint {
        lambda: p.lambda,
        h_ext: p.h_ext,
        minimizer_m: p.minimizer_m,
        minimizers: p.minimizers,
        pressure_lp: p.pressure_lp,
        degenerate: p.degenerate,
    })
}

#[pyfunction]
fn spontaneous_magnetization(lambda: f64) -> PyResult<f64> {
    phase::spontaneous_magnetization(lambda).map_err(py_err)
}

#[pyfunction]
fn mean_field_solve(lambda: f64, h_ext: f64) -> PyResult<Vec<f64>> {
    phase::mean_field_solve(lambda, h_ext).map_err(py_err)
}

#[pyfunction]
fn dobrushin_ratio(lambda: f64, h_ext: f64) -> f64 {
    phase::dobrushin_ratio(lambda, h_ext)
}

#[pyfunction]
fn threshold_h_star() -> f64 {
    phase::threshold_h_star()
}

/// `Z*` summed over spin configurations.
#[pyfunction]
fn z_star_enumerate(lambda: f64, u: Vec<f64>) -> PyResult<f64> {
    polymer::z_star_enumerate(lambda, &u).map_err(py_err)
}

/// `Z*` as a polymer-gas sum.
#[pyfunction]
fn z_star_polymer(lambda: f64, u: Vec<f64>) -> PyResult<f64> {
    polymer::z_star_polymer(lambda, &u).map_err(py_err)
}

#[pyclass(module = "kac_ising", frozen, get_all)]
pub struct KpReport {
    lambda: f64,
    b: f64,
    holds: bool,
    lhs_max: f64,
    rhs: f64,
    ratio: f64,
}

#[pymethods]
impl KpReport {
    fn __repr__(&self) -> String {
        format!("KpReport(lambda={}, b={}, holds={}, lhs_max={})", self.lambda, self.b, self.holds, self.lhs_max)
    }
}

/// Kotecký-Preiss check; `b` defaults to `(5/12) log(1/λ)`.
#[pyfunction]
#[pyo3(signature = (lambda, b=None))]
fn kp_check(lambda: f64, b: Option<f64>) -> PyResult<KpReport> {
    let b = b.unwrap_or_else(|| polymer::kp_exponent(lambda));
    let r = polymer::kp_check(lambda, b).map_err(py_err)?;
    Ok(KpReport {
        lambda: r.lambda,
        b: r.b,
        holds: r.holds,
        lhs_max: r.lhs_max,
        rhs: r.rhs,
        ratio: r.ratio,
    })
}

#[pyfunction]
fn max_lambda_kp() -> f64 {
    polymer::max_lambda_kp()
}

/// Cluster coefficients `A_N` of `log Z*`.
#[pyclass(module = "kac_ising", frozen)]
pub struct CoeffMap {
    inner: polymer::CoeffMap,
}

#[pymethods]
impl CoeffMap {
    /// `A_N` for per-site powers `N` (zero when absent).
    fn get(&self, powers: Vec<u32>) -> f64 {
        self.inner.get(&powers)
    }

    #[getter]
    fn a0(&self) -> f64 {
        self.inner.a0()
    }

    /// Pair coefficient `α_d`.
    fn alpha(&self, d: usize) -> f64 {
        self.inner.alpha(d)
    }

    /// Truncated series `Σ A_N u^N`.
    fn evaluate(&self, u: Vec<f64>) -> PyResult<f64> {
        if u.len() != self.inner.ring_length() {
            return Err(PyValueError::new_err("u must have one entry per ring site"));
        }
        Ok(self.inner.evaluate(&u))
    }

    /// `(powers, value)` pairs.
    fn entries(&self) -> Vec<(Vec<u32>, f64)> {
        self.inner.iter().collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyfunction]
#[pyo3(signature = (lambda, ell, max_degree=6))]
fn cluster_coefficients(lambda: f64, ell: usize, max_degree: u32) -> PyResult<CoeffMap> {
    Ok(CoeffMap {
        inner: polymer::cluster_coefficients(lambda, ell, max_degree).map_err(py_err)?,
    })
}

/// Gradient-squared decomposition of a monomial.
#[pyclass(module = "kac_ising", frozen)]
pub struct Decomposition {
    n: monomial::MultiIndex,
    inner: monomial::GradDecomposition,
}

#[pymethods]
impl Decomposition {
    /// Weights `p_i` as `"num/den"` strings.
    #[getter]
    fn p(&self) -> Vec<String> {
        self.inner.p.iter().map(monomial::rational_string).collect()
    }

    /// `d_{i,j}` keyed by `(i, j)`, each a list of `(powers, coefficient)`.
    #[getter]
    fn d(&self) -> BTreeMap<(usize, usize), Vec<(Vec<u32>, String)>> {
        self.inner
            .d
            .iter()
            .map(|(&key, poly)| {
                let terms = poly
                    .terms()
                    .iter()
                    .map(|(powers, c)| (powers.clone(), monomial::rational_string(c)))
                    .collect();
                (key, terms)
            })
            .collect()
    }

    /// Exact check of the polynomial identity.
    fn verify(&self) -> bool {
        monomial::verify_identity(&self.n, &self.inner)
    }

    fn all_coefficients_nonpositive(&self) -> bool {
        self.inner.all_coefficients_nonpositive()
    }
}

#[pyfunction]
#[pyo3(signature = (powers, canonical=false))]
fn decompose(powers: Vec<u32>, canonical: bool) -> PyResult<Decomposition> {
    let n = monomial::MultiIndex::new(powers).map_err(py_err)?;
    let inner = monomial::decompose_with(&n, canonical).map_err(py_err)?;
    Ok(Decomposition { n, inner })
}

/// Tanh fields reproducing the requested magnetizations.
#[pyclass(module = "kac_ising", frozen, get_all)]
pub struct UVector {
    u: Vec<f64>,
    h: Vec<f64>,
    residual: f64,
    contraction_norm: f64,
    iterations: usize,
}

#[pyfunction]
fn u_from_m(lambda: f64, m: Vec<f64>) -> PyResult<UVector> {
    let r = effective::u_from_m(coupling(lambda)?, &m).map_err(py_err)?;
    Ok(UVector {
        u: r.u,
        h: r.h,
        residual: r.residual,
        contraction_norm: r.contraction_norm,
        iterations: r.iterations,
    })
}

/// `(value, gradient)` of the effective hamiltonian.
#[pyfunction]
fn eff_energy(lambda: f64, h_ext: f64, u: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
    let e = effective::eff_energy(coupling(lambda)?, h_ext, &u).map_err(py_err)?;
    Ok((e.value, e.gradient))
}

#[pyclass(module = "kac_ising", frozen, get_all)]
pub struct MinimizeResult {
    argmin: Vec<f64>,
    value: f64,
    spread: f64,
    max_global_spread: f64,
    global_minima: Vec<Vec<f64>>,
    u_plus: f64,
}

#[pyfunction]
#[pyo3(signature = (lambda, h_ext, ell, restarts=effective::DEFAULT_RESTARTS))]
fn minimize_eff(py: Python<'_>, lambda: f64, h_ext: f64, ell: usize, restarts: usize) -> PyResult<MinimizeResult> {
    let c = coupling(lambda)?;
    let r = py
        .detach(|| effective::minimize_eff(c, h_ext, ell, restarts))
        .map_err(py_err)?;
    Ok(MinimizeResult {
        argmin: r.argmin,
        value: r.value,
        spread: r.spread,
        max_global_spread: r.max_global_spread,
        global_minima: r.global_minima.into_iter().map(|g| g.u).collect(),
        u_plus: r.u_plus,
    })
}

#[pyfunction]
fn theta(a: f64, b: f64) -> f64 {
    effective::theta(a, b)
}

/// `(gap, phi, grand)` at common layer magnetization `m`.
#[pyfunction]
fn ensemble_gap(lambda: f64, ell: usize, m: f64) -> PyResult<(f64, f64, f64)> {
    let g = effective::ensemble_gap(coupling(lambda)?, ell, &vec![m; ell]).map_err(py_err)?;
    Ok((g.gap, g.phi, g.grand))
}

#[pyclass(module = "kac_ising", frozen, get_all)]
pub struct McResult {
    mean_magnetization: f64,
    stderr: f64,
    magnetization_trace: Vec<f64>,
    energy_trace: Vec<f64>,
    acceptance_rate: f64,
    seed: u64,
    rng: String,
    side: usize,
}

#[pymethods]
impl McResult {
    fn __repr__(&self) -> String {
        format!("McResult(mean_magnetization={}, stderr={})", self.mean_magnetization, self.stderr)
    }
}

/// Metropolis run of the two-dimensional model.
#[pyfunction]
#[pyo3(signature = (lambda, h_ext, gamma, side, sweeps, warmup, seed=0, shape="raised-cosine"))]
#[allow(clippy::too_many_arguments)]
fn run_metropolis(
    py: Python<'_>,
    lambda: f64,
    h_ext: f64,
    gamma: f64,
    side: usize,
    sweeps: usize,
    warmup: usize,
    seed: u64,
    shape: &str,
) -> PyResult<McResult> {
    let params = mc::ModelParams {
        shape: shape.parse().map_err(py_err)?,
        ..mc::ModelParams::new(lambda, h_ext, gamma)
    };
    let r = py
        .detach(|| mc::run_metropolis(&params, side, sweeps, warmup, seed))
        .map_err(py_err)?;
    Ok(McResult {
        mean_magnetization: r.mean_magnetization,
        stderr: r.stderr,
        magnetization_trace: r.magnetization_trace,
        energy_trace: r.energy_trace,
        acceptance_rate: r.acceptance_rate,
        seed: r.seed,
        rng: r.rng,
        side: r.side,
    })
}

#[pymodule]
#[pyo3(name = "kac_ising")]
fn init_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<RingPartition>()?;
    m.add_class::<PhasePoint>()?;
    m.add_class::<KpReport>()?;
    m.add_class::<CoeffMap>()?;
    m.add_class::<Decomposition>()?;
    m.add_class::<UVector>()?;
    m.add_class::<MinimizeResult>()?;
    m.add_class::<McResult>()?;
    m.add_function(wrap_pyfunction!(ring_log_z, m)?)?;
    m.add_function(wrap_pyfunction!(pressure, m)?)?;
    m.add_function(wrap_pyfunction!(magnetization_of_field, m)?)?;
    m.add_function(wrap_pyfunction!(free_energy, m)?)?;
    m.add_function(wrap_pyfunction!(lp_pressure, m)?)?;
    m.add_function(wrap_pyfunction!(spontaneous_magnetization, m)?)?;
    m.add_function(wrap_pyfunction!(mean_field_solve, m)?)?;
    m.add_function(wrap_pyfunction!(dobrushin_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_h_star, m)?)?;
    m.add_function(wrap_pyfunction!(z_star_enumerate, m)?)?;
    m.add_function(wrap_pyfunction!(z_star_polymer, m)?)?;
    m.add_function(wrap_pyfunction!(kp_check, m)?)?;
    m.add_function(wrap_pyfunction!(max_lambda_kp, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(u_from_m, m)?)?;
    m.add_function(wrap_pyfunction!(eff_energy, m)?)?;
    m.add_function(wrap_pyfunction!(minimize_eff, m)?)?;
    m.add_function(wrap_pyfunction!(theta, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_gap, m)?)?;
    m.add_function(wrap_pyfunction!(run_metropolis, m)?)?;
    Ok(())
}
