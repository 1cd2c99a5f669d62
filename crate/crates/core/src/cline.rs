//! Cline's density f(x) = a·e^{−χ(x)} with χ(x) = x^{1/2 + δ·cos(ln(x+1))},
//! its tail F̄₀(x) = e^{−αx−χ(x)} and the integrated tail F̄₀^I.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};

use rug::float::Constant;
use rug::Float;

use crate::error::{LabError, Result};
use crate::numerics::{check_precision, LogValue, DEFAULT_PRECISION};
use crate::quad::{self, QuadOptions, QuadResult};

pub const DEFAULT_QUAD_TOL: f64 = 1e-8;
const MAX_X_MAX: f64 = 1e15;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClineParams {
    alpha: f64,
    delta: f64,
    quad_tol: f64,
    x_max: f64,
    precision_bits: u32,
}

impl ClineParams {
    /// Validates the parameters; `x_max = None` picks the cutoff whose
    /// certified tail bound is below quad_tol/10.
    pub fn new(alpha: f64, delta: f64, quad_tol: f64, x_max: Option<f64>, precision_bits: u32) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(LabError::invalid("alpha must be positive"));
        }
        if !(delta > 0.0 && delta < 0.5) {
            return Err(LabError::invalid("delta must lie in (0, 1/2)"));
        }
        if !(quad_tol > 0.0 && quad_tol <= 1e-4) {
            return Err(LabError::invalid("quad_tol must lie in (0, 1e-4]"));
        }
        check_precision(precision_bits)?;
        let x_max = match x_max {
            Some(x) if x > 1.0 && x.is_finite() => x,
            Some(_) => return Err(LabError::invalid("x_max must be a finite number above 1")),
            None => default_x_max(delta, quad_tol / 10.0)?,
        };
        Ok(ClineParams {
            alpha,
            delta,
            quad_tol,
            x_max,
            precision_bits,
        })
    }

    pub fn standard() -> Self {
        ClineParams::new(1.0, 0.25, DEFAULT_QUAD_TOL, None, DEFAULT_PRECISION).expect("valid defaults")
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn quad_tol(&self) -> f64 {
        self.quad_tol
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn precision_bits(&self) -> u32 {
        self.precision_bits
    }

    pub fn with_precision(mut self, precision_bits: u32) -> Result<Self> {
        check_precision(precision_bits)?;
        self.precision_bits = precision_bits;
        Ok(self)
    }

    fn cache_key(&self) -> [u64; 4] {
        [
            self.alpha.to_bits(),
            self.delta.to_bits(),
            self.quad_tol.to_bits(),
            self.x_max.to_bits(),
        ]
    }
}

/// Upper bound on ∫_X^∞ e^{−y^{1/s}} dy = s·Γ(s, Z), Z = X^{1/s}, valid for Z > s − 1.
pub fn envelope_tail_bound(x: f64, delta: f64) -> f64 {
    let s = 1.0 / (0.5 - delta);
    let z = x.powf(0.5 - delta);
    if z <= s - 1.0 {
        return f64::INFINITY;
    }
    (s.ln() + (s - 1.0) * z.ln() - z - (1.0 - (s - 1.0) / z).ln()).exp()
}

fn default_x_max(delta: f64, target: f64) -> Result<f64> {
    let s = 1.0 / (0.5 - delta);
    let bound_at = |z: f64| envelope_tail_bound(z.powf(s), delta);
    let mut hi = s.max(2.0);
    while bound_at(hi) > target {
        hi *= 2.0;
        if hi.powf(s) > MAX_X_MAX {
            return Err(LabError::invalid(
                "delta too close to 1/2 for an automatic x_max; pass x_max explicitly",
            ));
        }
    }
    let mut lo = hi / 2.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if bound_at(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi.powf(s).ceil())
}

fn check_x(x: f64) -> Result<()> {
    if x < 0.0 || x.is_nan() {
        return Err(LabError::domain("x must be nonnegative"));
    }
    Ok(())
}

/// χ(x) in f64.
pub fn chi(x: f64, p: &ClineParams) -> Result<f64> {
    check_x(x)?;
    Ok(chi_unchecked(x, p.delta))
}

fn chi_unchecked(x: f64, delta: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    ((0.5 + delta * x.ln_1p().cos()) * x.ln()).exp()
}

/// χ(x) evaluated with MPFR at the parameter precision.
pub fn chi_mp(x: &Float, p: &ClineParams) -> Result<Float> {
    if x.is_sign_negative() && !x.is_zero() {
        return Err(LabError::domain("x must be nonnegative"));
    }
    let wp = p.precision_bits;
    if x.is_zero() {
        return Ok(Float::new(wp));
    }
    let cos_term = Float::with_val(wp, x + 1u32).ln().cos();
    let expo = cos_term * Float::with_val(wp, p.delta) + 0.5f64;
    let ln_x = Float::with_val(wp, x.ln_ref());
    Ok((expo * ln_x).exp())
}

/// e^{kπ} − 1 for k ≥ 0, the points where cos(ln(x+1)) = ±1.
pub fn anchor(k: u32, precision_bits: u32) -> Float {
    let pi = Float::with_val(precision_bits, Constant::Pi);
    (pi * k).exp() - 1u32
}

pub fn anchors_f64(limit: f64) -> Vec<f64> {
    (1..)
        .map(|k| (k as f64 * PI).exp() - 1.0)
        .take_while(|x| *x < limit)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalizers {
    /// a with a⁻¹ = ∫₀^∞ e^{−χ}
    pub a: f64,
    /// bound on |a − a_true|/a
    pub a_rel_err: f64,
    /// b with b⁻¹ = ∫₀^∞ F̄₀
    pub b: f64,
    pub b_rel_err: f64,
    /// certified bound on the density integral beyond x_max
    pub tail_bound: f64,
}

fn normalizer_cache() -> &'static Mutex<HashMap<[u64; 4], Normalizers>> {
    static CACHE: OnceLock<Mutex<HashMap<[u64; 4], Normalizers>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn breaks_upto(hi: f64) -> Vec<f64> {
    quad::log_grid(0.0, hi, &anchors_f64(hi))
}

pub fn normalizers(p: &ClineParams) -> Result<Normalizers> {
    let key = p.cache_key();
    if let Some(n) = normalizer_cache().lock().unwrap().get(&key) {
        return Ok(*n);
    }
    let opts = QuadOptions::relative(p.quad_tol / 4.0);
    let delta = p.delta;
    let alpha = p.alpha;
    let breaks = breaks_upto(p.x_max);
    let qa = quad::integrate(|y| (-chi_unchecked(y, delta)).exp(), &breaks, opts)?;
    let tail_a = envelope_tail_bound(p.x_max, delta);
    let qb = quad::integrate(|y| (-alpha * y - chi_unchecked(y, delta)).exp(), &breaks, opts)?;
    let tail_b = (-alpha * p.x_max).exp() / alpha;
    let n = Normalizers {
        a: 1.0 / qa.value,
        a_rel_err: (qa.error + tail_a) / qa.value,
        b: 1.0 / qb.value,
        b_rel_err: (qb.error + tail_b) / qb.value,
        tail_bound: tail_a,
    };
    if n.a_rel_err > p.quad_tol || n.b_rel_err > p.quad_tol {
        return Err(LabError::PrecisionFailure {
            what: "Cline normalizer".into(),
            achieved: n.a_rel_err.max(n.b_rel_err),
        });
    }
    normalizer_cache().lock().unwrap().insert(key, n);
    Ok(n)
}

/// ln f(x) = ln a − χ(x), as a LogValue.
pub fn cline_density(x: &Float, p: &ClineParams) -> Result<LogValue> {
    let n = normalizers(p)?;
    let wp = p.precision_bits;
    let ln_f = Float::with_val(wp, n.a).ln() - chi_mp(x, p)?;
    Ok(LogValue::from_ln(&ln_f, wp))
}

/// ln f(y) − ln f(x) = χ(x) − χ(y), independent of the normalizer.
pub fn log_density_ratio(x: &Float, y: &Float, p: &ClineParams) -> Result<LogValue> {
    let d = chi_mp(x, p)? - chi_mp(y, p)?;
    Ok(LogValue::from_ln(&d, p.precision_bits))
}

/// F̄₀(x) = e^{−αx−χ(x)}.
pub fn f0_tail(x: &Float, p: &ClineParams) -> Result<LogValue> {
    let wp = p.precision_bits;
    let ln = -(Float::with_val(wp, x * p.alpha)) - chi_mp(x, p)?;
    Ok(LogValue::from_ln(&ln, wp))
}

/// J(x) = ∫_x^∞ F̄₀(y) dy / F̄₀(x), with the certified truncation bound
/// included in the reported error.
pub fn scaled_tail_integral(x: f64, p: &ClineParams) -> Result<QuadResult> {
    check_x(x)?;
    let (alpha, delta) = (p.alpha, p.delta);
    let chi_x = chi_unchecked(x, delta);
    let len = (chi_x.max(0.0) + (10.0 / (alpha * p.quad_tol)).ln()) / alpha;
    let extra: Vec<f64> = anchors_f64(x + len)
        .into_iter()
        .filter(|a| *a > x)
        .map(|a| a - x)
        .collect();
    let breaks = quad::log_grid(0.0, len, &extra);
    let mut r = quad::integrate(
        |t| (-alpha * t - (chi_unchecked(x + t, delta) - chi_x)).exp(),
        &breaks,
        QuadOptions::relative(p.quad_tol / 4.0),
    )?;
    r.error += (chi_x - alpha * len).exp() / alpha;
    Ok(r)
}

/// F̄₀^I(x) = b·F̄₀(x)·J(x), with its relative error bound.
pub fn f0i_tail(x: f64, p: &ClineParams) -> Result<(LogValue, f64)> {
    let n = normalizers(p)?;
    let j = scaled_tail_integral(x, p)?;
    let wp = p.precision_bits;
    let scale = LogValue::from_ln(&Float::with_val(wp, n.b * j.value).ln(), wp);
    let tail = f0_tail(&Float::with_val(wp, x), p)?;
    Ok((tail.mul(&scale), n.b_rel_err + j.error / j.value))
}

/// F̄₀^I(x) / (α⁻¹·b·F̄₀(x)) = α·J(x).
pub fn karamata_ratio(x: f64, p: &ClineParams) -> Result<QuadResult> {
    let j = scaled_tail_integral(x, p)?;
    Ok(QuadResult {
        value: p.alpha * j.value,
        error: p.alpha * j.error,
        evals: j.evals,
    })
}

/// ∫_{h}^{x−h} f(x−y)f(y)dy / f(x) with h = x^{h_exp}, in log scale.
#[derive(Clone, Debug)]
pub struct MiddleIntegral {
    pub value: LogValue,
    pub rel_err: f64,
    pub h: f64,
}

pub fn cline_middle_integral(x: f64, h_exp: f64, p: &ClineParams) -> Result<MiddleIntegral> {
    if !(h_exp > 0.0 && h_exp < 1.0) {
        return Err(LabError::invalid("h_exp must lie in (0, 1)"));
    }
    check_x(x)?;
    let h = x.powf(h_exp);
    if x <= 2.0 * h {
        return Err(LabError::domain("x must exceed 2·x^h_exp"));
    }
    let n = normalizers(p)?;
    let delta = p.delta;
    let chi_x = chi_unchecked(x, delta);
    let half = 0.5 * x;
    let mut extra = anchors_f64(x);
    extra.extend(anchors_f64(x).into_iter().map(|a| x - a));
    let breaks = quad::log_grid(h, half, &extra);
    let g = |y: f64| chi_x - chi_unchecked(x - y, delta) - chi_unchecked(y, delta);
    // Rescale by the largest sampled exponent so the integrand stays in range.
    let samples = 4096;
    let ratio = half / h;
    let g_max = breaks
        .iter()
        .copied()
        .chain((0..=samples).map(|i| h * ratio.powf(i as f64 / samples as f64)))
        .map(g)
        .fold(f64::NEG_INFINITY, f64::max);
    let r = quad::integrate(|y| (g(y) - g_max).exp(), &breaks, QuadOptions::relative(p.quad_tol))?;
    let wp = p.precision_bits;
    let ln_value = Float::with_val(wp, 2.0 * n.a * r.value).ln() + g_max;
    Ok(MiddleIntegral {
        value: LogValue::from_ln(&ln_value, wp),
        rel_err: r.error / r.value + n.a_rel_err,
        h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_examples() {
        let p = ClineParams::standard();
        assert_eq!(chi(0.0, &p).unwrap(), 0.0);
        let e1 = std::f64::consts::E - 1.0;
        let expected = e1.powf(0.5 + 0.25 * 1f64.cos());
        assert!((chi(e1, &p).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 1.410_271_436_613_449).abs() < 1e-12);
        let x = anchor(1, 256);
        let v = chi_mp(&x, &p).unwrap();
        let direct = Float::with_val(256, x.to_f64()).to_f64().powf(0.25);
        assert!((v.to_f64() - direct).abs() < 1e-9);
        assert!((v.to_f64() - 2.169_191_034_215_352).abs() < 1e-12);
        assert!(matches!(chi(-1.0, &p), Err(LabError::OutOfDomain(_))));
    }

    #[test]
    fn chi_envelope_and_precision_consistency() {
        let p = ClineParams::standard();
        let p2 = p.with_precision(512).unwrap();
        for k in 0..200 {
            let x = 1.0 + k as f64 * 37.3;
            let c = chi(x, &p).unwrap();
            assert!(x.powf(0.25) * (1.0 - 1e-12) <= c && c <= x.powf(0.75) * (1.0 + 1e-12));
            let xf = Float::with_val(64, x);
            let diff = Float::with_val(600, chi_mp(&xf, &p).unwrap() - chi_mp(&xf, &p2).unwrap());
            assert!(diff.abs().to_f64() < 1e-60);
        }
    }

    #[test]
    fn params_validation() {
        assert!(ClineParams::new(0.0, 0.25, 1e-8, None, 256).is_err());
        assert!(ClineParams::new(1.0, 0.5, 1e-8, None, 256).is_err());
        assert!(ClineParams::new(1.0, 0.25, 1e-3, None, 256).is_err());
        let p = ClineParams::standard();
        assert!(envelope_tail_bound(p.x_max(), 0.25) < 1e-9);
    }

    #[test]
    fn density_integrates_to_one() {
        let p = ClineParams::standard();
        let n = normalizers(&p).unwrap();
        let breaks = breaks_upto(p.x_max());
        let q = quad::integrate(
            |y| n.a * (-chi_unchecked(y, 0.25)).exp(),
            &breaks,
            QuadOptions::relative(1e-9),
        )
        .unwrap();
        assert!((q.value - 1.0).abs() < n.a_rel_err + n.tail_bound * n.a + 1e-9);
        let f0 = cline_density(&Float::with_val(64, 0), &p).unwrap();
        assert!((f0.to_f64() - n.a).abs() < 1e-12 * n.a);
    }

    #[test]
    fn tails_at_origin() {
        let p = ClineParams::standard();
        assert_eq!(f0_tail(&Float::with_val(64, 0), &p).unwrap().to_f64(), 1.0);
        let (fi, err) = f0i_tail(0.0, &p).unwrap();
        assert!((fi.to_f64() - 1.0).abs() < 10.0 * err.max(1e-8));
        let t10 = f0_tail(&Float::with_val(64, 10), &p).unwrap();
        let expected = -10.0 - chi(10.0, &p).unwrap();
        assert!((t10.log2_f64() * std::f64::consts::LN_2 - expected).abs() < 1e-12);
    }

    #[test]
    fn middle_integral_domain() {
        let p = ClineParams::standard();
        assert!(matches!(
            cline_middle_integral(2.0, 0.9, &p),
            Err(LabError::OutOfDomain(_))
        ));
    }
}
