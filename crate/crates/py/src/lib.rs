//! Python bindings. Exact quantities cross the boundary as strings
//! (`p` or `p/q`, or decimals on input) so no precision is lost.

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use rug::Rational;

use subexp_lab::cline::{self, ClineParams};
use subexp_lab::convolution;
use subexp_lab::mixture::build_schedule;
use subexp_lab::numerics::{exact_string, parse_rational, DEFAULT_PRECISION};
use subexp_lab::paper::{KnotKind, PaperDensity};
use subexp_lab::piecewise::PiecewisePoly;
use subexp_lab::probes;
use subexp_lab::verify::{self, VerifyConfig};
use subexp_lab::LabError;

fn to_py(e: LabError) -> PyErr {
    match e {
        LabError::PrecisionFailure { .. } => PyArithmeticError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn number(s: &str) -> PyResult<Rational> {
    parse_rational(s).map_err(to_py)
}

/// The truncated paper density on [0, a_{N+1}].
#[pyclass(name = "PaperDensity", frozen)]
struct PyPaperDensity {
    inner: PaperDensity,
}

#[pymethods]
impl PyPaperDensity {
    #[new]
    #[pyo3(signature = (n, precision_bits = DEFAULT_PRECISION))]
    fn new(n: u32, precision_bits: u32) -> PyResult<Self> {
        Ok(PyPaperDensity {
            inner: PaperDensity::build(n, precision_bits).map_err(to_py)?,
        })
    }

    #[getter]
    fn n(&self) -> u32 {
        self.inner.n_trunc()
    }

    #[getter]
    fn segments(&self) -> usize {
        self.inner.dense().num_segments()
    }

    /// Total mass of the unnormalized density, exact.
    fn mass(&self) -> String {
        exact_string(self.inner.mass())
    }

    /// Normalized density at x, exact.
    fn density(&self, x: &str) -> PyResult<String> {
        Ok(exact_string(&self.inner.density(&number(x)?).map_err(to_py)?))
    }

    /// Knot position; kind is one of "a", "b", "c".
    fn knot(&self, kind: &str, n: u64) -> PyResult<String> {
        let kind: KnotKind = kind.parse().map_err(to_py)?;
        Ok(exact_string(&self.inner.knot(kind, n).map_err(to_py)?))
    }

    /// Knot file text for the unnormalized density.
    fn knot_text(&self) -> String {
        self.inner.dense().to_text(&verify::paper_header(&self.inner))
    }

    #[pyo3(signature = (x, t = "1"))]
    fn long_tail_ratio(&self, x: &str, t: &str) -> PyResult<String> {
        let r = probes::long_tail_ratio(self.inner.dense(), &number(x)?, &number(t)?).map_err(to_py)?;
        Ok(exact_string(&r))
    }

    fn subexp_ratio(&self, x: &str) -> PyResult<String> {
        let r = probes::subexp_ratio_scaled(self.inner.dense(), self.inner.mass(), &number(x)?).map_err(to_py)?;
        Ok(exact_string(&r))
    }
}

/// Exact self-convolution of a piecewise-linear knot file, or its
/// convolution with `other` when given. Returns knot file text.
#[pyfunction]
#[pyo3(signature = (text, other = None))]
fn convolve(text: &str, other: Option<&str>) -> PyResult<String> {
    let p = PiecewisePoly::from_text(text).map_err(to_py)?;
    let q = match other {
        Some(t) => PiecewisePoly::from_text(t).map_err(to_py)?,
        None => p.clone(),
    };
    Ok(convolution::conv_linear_exact(&p, &q).map_err(to_py)?.to_text(&[]))
}

/// (n, f(c_n)/f(b_n), equals the snapped ln(n+1)) for n = 2..=n_max.
#[pyfunction]
#[pyo3(signature = (n_max, precision_bits = DEFAULT_PRECISION))]
fn knot_ratio_series(n_max: u32, precision_bits: u32) -> PyResult<Vec<(u64, String, bool)>> {
    let pd = PaperDensity::build(n_max, precision_bits).map_err(to_py)?;
    Ok(probes::knot_ratio_series(&pd, n_max as u64)
        .map_err(to_py)?
        .into_iter()
        .map(|r| (r.n, exact_string(&r.ratio), r.ratio == r.lambda))
        .collect())
}

/// Karamata ratio of the Cline density at x as (value, error estimate).
#[pyfunction]
#[pyo3(signature = (x, alpha = 1.0, delta = 0.25, quad_tol = cline::DEFAULT_QUAD_TOL))]
fn karamata_ratio(x: f64, alpha: f64, delta: f64, quad_tol: f64) -> PyResult<(f64, f64)> {
    let params = ClineParams::new(alpha, delta, quad_tol, None, DEFAULT_PRECISION).map_err(to_py)?;
    let r = cline::karamata_ratio(x, &params).map_err(to_py)?;
    Ok((r.value, r.error))
}

/// Blow-up schedule rows (m, n_m, mass, lower bound), exact.
#[pyfunction]
#[pyo3(signature = (m_max = 6, precision_bits = DEFAULT_PRECISION))]
fn blowup_schedule(m_max: u32, precision_bits: u32) -> PyResult<Vec<(u32, String, String, String)>> {
    let s = build_schedule(m_max, precision_bits).map_err(to_py)?;
    Ok(s.entries()
        .iter()
        .map(|e| (e.m, e.n.to_string(), exact_string(&e.mass), exact_string(&e.lower_bound)))
        .collect())
}

/// Runs the verification battery; returns (name, pass, detail) per check.
#[pyfunction]
#[pyo3(signature = (precision_bits = DEFAULT_PRECISION))]
fn run_verify(precision_bits: u32) -> Vec<(String, bool, String)> {
    let report = verify::run_verify(&VerifyConfig {
        precision_bits,
        knot_file: None,
    });
    report
        .checks
        .into_iter()
        .map(|c| (c.name.to_string(), c.pass, c.detail))
        .collect()
}

#[pymodule]
fn subexp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPaperDensity>()?;
    m.add_function(wrap_pyfunction!(convolve, m)?)?;
    m.add_function(wrap_pyfunction!(knot_ratio_series, m)?)?;
    m.add_function(wrap_pyfunction!(karamata_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(blowup_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(run_verify, m)?)?;
    Ok(())
}
