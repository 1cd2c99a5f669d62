//! The piecewise-linear subexponential density that is not almost decreasing.
//!
//! Knots: `a_n = 2^{n²}`, `b_n = a_n + a_{m_n} λ_n²`, `c_n = (a_{n+1} + b_n)/2`
//! with `f₀(0) = 1`, `f₀(a_n) = f₀(c_n) = 2 a_n^{-3}` and `f₀(b_n) = f₀(a_n)/λ_n`,
//! where `λ_n` is the snapped value of `ln(n+1)`. Between knots `f₀` is linear.
//!
//! The dense object is truncated at `a_{N+1}`; anything past that is reached
//! through the log-space accessors on [`KnotView`].

use std::fmt;

use rug::{Integer, Rational};

use crate::error::{LabError, Result};
use crate::numerics::{check_precision, log_nat_big, snap_pow, LogValue};
use crate::piecewise::{Knot, PiecewisePoly};

pub const DEFAULT_DENSE_LIMIT: u32 = 64;

/// Smallest positive k with 6k² ≥ 5n², i.e. k ≥ √(5/6)·n.
pub fn m_of(n: u64) -> Result<u64> {
    Ok(m_of_big(&Integer::from(n))?
        .to_u64()
        .expect("m_n never exceeds n"))
}

pub fn m_of_big(n: &Integer) -> Result<Integer> {
    if *n <= 0 {
        return Err(LabError::invalid("m_n requires n >= 1"));
    }
    let five_n2 = Integer::from(n.square_ref()) * 5u32;
    let mut k = Integer::from(&five_n2 / 6u32).sqrt();
    let holds = |k: &Integer| Integer::from(k.square_ref()) * 6u32 >= five_n2;
    while !holds(&k) {
        k += 1u32;
    }
    while k > 1 && holds(&Integer::from(&k - 1u32)) {
        k -= 1u32;
    }
    Ok(k.max(Integer::from(1)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KnotKind {
    A,
    B,
    C,
    D,
    S,
}

impl fmt::Display for KnotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            KnotKind::A => "a",
            KnotKind::B => "b",
            KnotKind::C => "c",
            KnotKind::D => "d",
            KnotKind::S => "s",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for KnotKind {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(KnotKind::A),
            "b" => Ok(KnotKind::B),
            "c" => Ok(KnotKind::C),
            "d" => Ok(KnotKind::D),
            "s" => Ok(KnotKind::S),
            _ => Err(LabError::invalid(format!("unknown knot kind '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnotIndex {
    pub kind: KnotKind,
    pub n: Integer,
}

impl KnotIndex {
    pub fn new(kind: KnotKind, n: impl Into<Integer>) -> Self {
        KnotIndex { kind, n: n.into() }
    }
}

impl fmt::Display for KnotIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind, self.n)
    }
}

/// Threshold knots d_n ∈ [b_n, c_n] and s_n ∈ [c_n, a_{n+1}] where f₀ equals
/// `f₀(b_n)·σ_n`, σ_n the snapped √λ_n.
#[derive(Clone, Debug)]
pub struct ThresholdKnots {
    pub n: Integer,
    pub sqrt_lambda: Rational,
    pub target_logf: LogValue,
    /// Exact positions and target value, present when n is within the dense limit.
    pub dense: Option<DenseThreshold>,
    /// d_n − b_n.
    pub d_offset: LogValue,
    /// s_n − b_n.
    pub s_offset: LogValue,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseThreshold {
    pub d: Rational,
    pub s: Rational,
    pub target: Rational,
}

impl ThresholdKnots {
    /// Midpoint of (d_n − b_n, s_n − b_n).
    pub fn midpoint_offset(&self) -> LogValue {
        self.d_offset
            .add(&self.s_offset)
            .mul(&LogValue::pow2(-1, self.d_offset.precision_bits()))
    }
}

/// Accessor for knot positions and log-densities at arbitrary n.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KnotView {
    precision_bits: u32,
    dense_limit: u32,
}

impl KnotView {
    pub fn new(precision_bits: u32) -> Result<Self> {
        Self::with_dense_limit(precision_bits, DEFAULT_DENSE_LIMIT)
    }

    pub fn with_dense_limit(precision_bits: u32, dense_limit: u32) -> Result<Self> {
        check_precision(precision_bits)?;
        if dense_limit == 0 {
            return Err(LabError::invalid("dense limit must be positive"));
        }
        Ok(KnotView {
            precision_bits,
            dense_limit,
        })
    }

    pub fn precision_bits(&self) -> u32 {
        self.precision_bits
    }

    pub fn dense_limit(&self) -> u32 {
        self.dense_limit
    }

    pub fn lambda(&self, n: u64) -> Result<Rational> {
        self.lambda_big(&Integer::from(n))
    }

    pub fn lambda_big(&self, n: &Integer) -> Result<Rational> {
        log_nat_big(n, self.precision_bits)
    }

    pub fn sqrt_lambda(&self, n: &Integer) -> Result<Rational> {
        snap_pow(&self.lambda_big(n)?, 1, 2, self.precision_bits)
    }

    fn dense_n(&self, n: u64, allow_next: bool) -> Result<u32> {
        let limit = self.dense_limit as u64 + u64::from(allow_next);
        if n == 0 {
            return Err(LabError::invalid("knot index n must be >= 1"));
        }
        if n > limit {
            return Err(LabError::DenseLimit {
                n: n.to_string(),
                limit: self.dense_limit,
            });
        }
        Ok(n as u32)
    }

    /// a_n = 2^{n²}. Allowed up to dense_limit + 1 so that c_n is available at the limit.
    pub fn a(&self, n: u64) -> Result<Integer> {
        let n = self.dense_n(n, true)?;
        Ok(Integer::from(1) << (n * n))
    }

    pub fn b(&self, n: u64) -> Result<Rational> {
        self.dense_n(n, false)?;
        let lambda = self.lambda(n)?;
        let am = self.a(m_of(n)?)?;
        Ok(Rational::from(self.a(n)?) + Rational::from(lambda.square_ref()) * am)
    }

    pub fn c(&self, n: u64) -> Result<Rational> {
        let sum = self.b(n)? + self.a(n + 1)?;
        Ok(sum / 2u32)
    }

    /// f₀(a_n) = f₀(c_n) = 2^{1−3n²}.
    pub fn fa(&self, n: u64) -> Result<Rational> {
        let n = self.dense_n(n, true)?;
        Ok(Rational::from((Integer::from(1), Integer::from(1) << (3 * n * n - 1))))
    }

    pub fn fb(&self, n: u64) -> Result<Rational> {
        Ok(self.fa(n)? / self.lambda(n)?)
    }

    pub fn knot_position(&self, kind: KnotKind, n: u64) -> Result<Rational> {
        match kind {
            KnotKind::A => Ok(Rational::from(self.a(n)?)),
            KnotKind::B => self.b(n),
            KnotKind::C => self.c(n),
            KnotKind::D | KnotKind::S => {
                self.dense_n(n, false)?;
                let t = self.threshold_knots(&Integer::from(n))?;
                let dense = t.dense.expect("dense threshold within the dense limit");
                Ok(if kind == KnotKind::D { dense.d } else { dense.s })
            }
        }
    }

    /// Exact f₀ at a knot.
    pub fn knot_value(&self, kind: KnotKind, n: u64) -> Result<Rational> {
        match kind {
            KnotKind::A | KnotKind::C => self.fa(n),
            KnotKind::B => self.fb(n),
            KnotKind::D | KnotKind::S => {
                self.dense_n(n, false)?;
                let t = self.threshold_knots(&Integer::from(n))?;
                Ok(t.dense.expect("dense threshold").target)
            }
        }
    }

    /// log₂ f₀ at a knot, for any n (no dense materialization).
    pub fn knot_logf(&self, idx: &KnotIndex) -> Result<LogValue> {
        if idx.n <= 0 {
            return Err(LabError::invalid("knot index n must be >= 1"));
        }
        let p = self.precision_bits;
        let base = LogValue::pow2(Integer::from(1) - Integer::from(idx.n.square_ref()) * 3u32, p);
        match idx.kind {
            KnotKind::A | KnotKind::C => Ok(base),
            KnotKind::B => {
                let lambda = LogValue::from_rational(&self.lambda_big(&idx.n)?, p);
                base.div(&lambda)
            }
            KnotKind::D | KnotKind::S => Err(LabError::UnsupportedIndex(
                "d/s knots are computed by threshold_knots".into(),
            )),
        }
    }

    /// log₂ of the knot position, for any n.
    pub fn knot_log_position(&self, kind: KnotKind, n: &Integer) -> Result<LogValue> {
        let p = self.precision_bits;
        match kind {
            KnotKind::A => Ok(LogValue::pow2(Integer::from(n.square_ref()), p)),
            KnotKind::B => self.log_b(n),
            KnotKind::C => {
                let a1 = LogValue::pow2(Integer::from(n + 1u32).square(), p);
                Ok(a1.add(&self.log_b(n)?).mul(&LogValue::pow2(-1, p)))
            }
            KnotKind::D | KnotKind::S => {
                let t = self.threshold_knots(n)?;
                let off = if kind == KnotKind::D { &t.d_offset } else { &t.s_offset };
                Ok(self.log_b(n)?.add(off))
            }
        }
    }

    fn log_b(&self, n: &Integer) -> Result<LogValue> {
        let p = self.precision_bits;
        let m = m_of_big(n)?;
        let lambda = self.lambda_big(n)?;
        let tail = LogValue::pow2(m.square(), p)
            .mul(&LogValue::from_rational(&Rational::from(lambda.square_ref()), p));
        Ok(LogValue::pow2(Integer::from(n.square_ref()), p).add(&tail))
    }

    /// d_n and s_n. Requires λ_n > 1 (n ≥ 2) so the target sits strictly
    /// between f₀(b_n) and f₀(a_n).
    pub fn threshold_knots(&self, n: &Integer) -> Result<ThresholdKnots> {
        if *n <= 0 {
            return Err(LabError::invalid("knot index n must be >= 1"));
        }
        let p = self.precision_bits;
        let lambda = self.lambda_big(n)?;
        if lambda <= 1 {
            return Err(LabError::UnsupportedIndex(format!(
                "threshold knots need ln(n+1) > 1; n = {n} gives f0(b_n) > f0(a_n)"
            )));
        }
        let sigma = self.sqrt_lambda(n)?;
        let target_logf = self
            .knot_logf(&KnotIndex::new(KnotKind::B, n.clone()))?
            .mul(&LogValue::from_rational(&sigma, p));

        if *n <= self.dense_limit {
            let nn = n.to_u64().unwrap();
            let (b, c) = (self.b(nn)?, self.c(nn)?);
            let a1 = Rational::from(self.a(nn + 1)?);
            let (fa, fb, fa1) = (self.fa(nn)?, self.fb(nn)?, self.fa(nn + 1)?);
            let target = Rational::from(&fb * &sigma);
            let d = Rational::from(&target - &fb) * Rational::from(&c - &b)
                / Rational::from(&fa - &fb)
                + &b;
            let s = Rational::from(&fa - &target) * Rational::from(&a1 - &c)
                / Rational::from(&fa - &fa1)
                + &c;
            let d_offset = LogValue::from_rational(&Rational::from(&d - &b), p);
            let s_offset = LogValue::from_rational(&Rational::from(&s - &b), p);
            return Ok(ThresholdKnots {
                n: n.clone(),
                sqrt_lambda: sigma,
                target_logf,
                dense: Some(DenseThreshold { d, s, target }),
                d_offset,
                s_offset,
            });
        }

        // c_n − b_n = (a_{n+1} − b_n)/2; both offsets are multiples of it.
        let a1 = LogValue::pow2(Integer::from(n + 1u32).square(), p);
        let half_gap = a1.sub(&self.log_b(n)?).mul(&LogValue::pow2(-1, p));
        let d_factor = Rational::from(&sigma - 1u32) / Rational::from(&lambda - 1u32);
        // 1 − f₀(a_{n+1})/f₀(a_n) = 1 − 2^{−3(2n+1)}; the power vanishes below the grid.
        let drop_exp = Integer::from(n * 6u32) + 3u32;
        let denom = if drop_exp > p + 64 {
            Rational::from(1)
        } else {
            let e = drop_exp.to_u32().unwrap();
            Rational::from(1) - Rational::from((Integer::from(1), Integer::from(1) << e))
        };
        let s_factor = Rational::from(1) + (Rational::from(1) - Rational::from(&sigma / &lambda)) / denom;
        Ok(ThresholdKnots {
            n: n.clone(),
            sqrt_lambda: sigma,
            target_logf,
            dense: None,
            d_offset: half_gap.mul(&LogValue::from_rational(&d_factor, p)),
            s_offset: half_gap.mul(&LogValue::from_rational(&s_factor, p)),
        })
    }
}

/// The truncated dense density on [0, a_{N+1}], stored unnormalized with its mass.
#[derive(Clone, Debug)]
pub struct PaperDensity {
    n_trunc: u32,
    dense: PiecewisePoly,
    mass: Rational,
    view: KnotView,
}

impl PaperDensity {
    pub fn build(n_trunc: u32, precision_bits: u32) -> Result<Self> {
        Self::build_with_view(n_trunc, KnotView::new(precision_bits)?)
    }

    pub fn build_with_view(n_trunc: u32, view: KnotView) -> Result<Self> {
        if n_trunc == 0 {
            return Err(LabError::invalid("truncation index N must be >= 1"));
        }
        if n_trunc > view.dense_limit() {
            return Err(LabError::DenseLimit {
                n: n_trunc.to_string(),
                limit: view.dense_limit(),
            });
        }
        let mut knots = Vec::with_capacity(3 * n_trunc as usize + 2);
        // a₀ := 0: the first piece runs from f₀(0) = 1 to f₀(a₁).
        knots.push(Knot::new(0, 1));
        knots.push(Knot::new(view.a(1)?, view.fa(1)?));
        for n in 1..=n_trunc as u64 {
            knots.push(Knot::new(view.b(n)?, view.fb(n)?));
            knots.push(Knot::new(view.c(n)?, view.fa(n)?));
            knots.push(Knot::new(view.a(n + 1)?, view.fa(n + 1)?));
        }
        let dense = PiecewisePoly::from_linear_knots(&knots)?;
        let mass = dense.total_integral();
        Ok(PaperDensity {
            n_trunc,
            dense,
            mass,
            view,
        })
    }

    pub fn n_trunc(&self) -> u32 {
        self.n_trunc
    }

    pub fn dense(&self) -> &PiecewisePoly {
        &self.dense
    }

    pub fn mass(&self) -> &Rational {
        &self.mass
    }

    pub fn view(&self) -> &KnotView {
        &self.view
    }

    pub fn precision_bits(&self) -> u32 {
        self.view.precision_bits()
    }

    /// Unnormalized f₀(x).
    pub fn f0(&self, x: &Rational) -> Result<Rational> {
        self.dense.eval(x)
    }

    /// Normalized f(x) = f₀(x)/mass.
    pub fn density(&self, x: &Rational) -> Result<Rational> {
        Ok(self.dense.eval(x)? / &self.mass)
    }

    pub fn normalized(&self) -> PiecewisePoly {
        self.dense.scale(&Rational::from(self.mass.recip_ref()))
    }

    /// Knot position restricted to the materialized range.
    pub fn knot(&self, kind: KnotKind, n: u64) -> Result<Rational> {
        let max = match kind {
            KnotKind::A => self.n_trunc as u64 + 1,
            _ => self.n_trunc as u64,
        };
        if n == 0 || n > max {
            return Err(LabError::domain(format!(
                "knot {kind}{n} is outside the truncation N = {}",
                self.n_trunc
            )));
        }
        self.view.knot_position(kind, n)
    }

    /// Upper bound f₀(a_{N+1})·(a_{N+2} − a_{N+1}) on the unnormalized mass past the truncation.
    pub fn omitted_tail_bound(&self) -> LogValue {
        let p = self.precision_bits();
        let n1 = Integer::from(self.n_trunc + 1);
        let n2 = Integer::from(self.n_trunc + 2);
        let f = LogValue::pow2(Integer::from(1) - Integer::from(n1.square_ref()) * 3u32, p);
        let gap = LogValue::pow2(n2.square(), p).sub(&LogValue::pow2(n1.square(), p));
        f.mul(&gap)
    }

    /// For n ≤ N, |slope|/min(endpoint values) on J_{n1}, J_{n2}, J_{n3}.
    pub fn slope_value_ratios(&self, n: u64) -> Result<[Rational; 3]> {
        if n == 0 || n > self.n_trunc as u64 {
            return Err(LabError::domain("segment index outside the truncation"));
        }
        // segment 0 is [0, a₁]; J_{n1} follows at 1 + 3(n−1)
        let first = 1 + 3 * (n as usize - 1);
        Ok(std::array::from_fn(|k| {
            let i = first + k;
            let left = self.dense.segment(i)[0].clone();
            let right = self.dense.right_limit(i);
            let slope = Rational::from(self.dense.segment(i)[1].abs_ref());
            slope / left.min(right)
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: u32 = 256;

    fn view() -> KnotView {
        KnotView::new(P).unwrap()
    }

    #[test]
    fn m_of_examples() {
        assert_eq!(m_of(1).unwrap(), 1);
        assert_eq!(m_of(5).unwrap(), 5);
        assert_eq!(m_of(12).unwrap(), 11);
        assert!(m_of(0).is_err());
    }

    #[test]
    fn knot_positions_small_n() {
        let v = view();
        assert_eq!(v.knot_position(KnotKind::A, 3).unwrap(), 512);
        let b1 = v.knot_position(KnotKind::B, 1).unwrap().to_f64();
        let ln2 = std::f64::consts::LN_2;
        assert!((b1 - (2.0 + 2.0 * ln2 * ln2)).abs() < 1e-12);
        let c2 = v.knot_position(KnotKind::C, 2).unwrap().to_f64();
        let ln3 = 3f64.ln();
        assert!((c2 - (512.0 + 16.0 + 16.0 * ln3 * ln3) / 2.0).abs() < 1e-10);
        assert!(matches!(
            v.knot_position(KnotKind::B, 65),
            Err(LabError::DenseLimit { .. })
        ));
    }

    #[test]
    fn knot_logf_examples() {
        let v = view();
        let a4 = v.knot_logf(&KnotIndex::new(KnotKind::A, 4)).unwrap();
        assert_eq!(*a4.log2mag(), -47);
        let c10 = v.knot_logf(&KnotIndex::new(KnotKind::C, 10)).unwrap();
        assert_eq!(*c10.log2mag(), -299);
        let b9 = v.knot_logf(&KnotIndex::new(KnotKind::B, 9)).unwrap();
        let expected = -242.0 - 10f64.ln().log2();
        assert!((b9.log2_f64() - expected).abs() < 1e-12);
        assert!(v.knot_logf(&KnotIndex::new(KnotKind::D, 3)).is_err());
    }

    #[test]
    fn build_rejects_zero_and_limit() {
        assert!(PaperDensity::build(0, P).is_err());
        let small = KnotView::with_dense_limit(P, 4).unwrap();
        assert!(PaperDensity::build_with_view(5, small).is_err());
    }

    #[test]
    fn dense_knot_values() {
        let pd = PaperDensity::build(2, P).unwrap();
        assert_eq!(pd.dense().num_segments(), 7);
        assert_eq!(pd.f0(&Rational::from(16)).unwrap(), Rational::from((1, 2048)));
        assert_eq!(pd.f0(&Rational::from(1)).unwrap(), Rational::from((5, 8)));
        let fb2 = pd.f0(&pd.knot(KnotKind::B, 2).unwrap()).unwrap().to_f64();
        assert!((fb2 - 0.00048828125 / 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn c_over_b_is_lambda_exactly() {
        let pd = PaperDensity::build(6, P).unwrap();
        for n in 1..=6 {
            let fc = pd.f0(&pd.knot(KnotKind::C, n).unwrap()).unwrap();
            let fb = pd.f0(&pd.knot(KnotKind::B, n).unwrap()).unwrap();
            assert_eq!(fc / fb, pd.view().lambda(n).unwrap());
        }
    }

    #[test]
    fn threshold_n1_is_unsupported() {
        assert!(matches!(
            view().threshold_knots(&Integer::from(1)),
            Err(LabError::UnsupportedIndex(_))
        ));
    }

    #[test]
    fn threshold_hits_target_exactly() {
        let v = view();
        let pd = PaperDensity::build(3, P).unwrap();
        for n in 2..=3u64 {
            let t = v.threshold_knots(&Integer::from(n)).unwrap();
            let dense = t.dense.clone().unwrap();
            assert_eq!(pd.f0(&dense.d).unwrap(), dense.target);
            assert_eq!(pd.f0(&dense.s).unwrap(), dense.target);
            assert!(pd.knot(KnotKind::B, n).unwrap() <= dense.d);
            assert!(dense.d <= pd.knot(KnotKind::C, n).unwrap());
            assert!(pd.knot(KnotKind::C, n).unwrap() <= dense.s);
            assert!(dense.s <= pd.knot(KnotKind::A, n + 1).unwrap());
        }
    }

    #[test]
    fn symbolic_threshold_matches_dense_path() {
        let dense = view();
        let symbolic = KnotView::with_dense_limit(P, 1).unwrap();
        for n in [3u64, 9, 20] {
            let t1 = dense.threshold_knots(&Integer::from(n)).unwrap();
            let t2 = symbolic.threshold_knots(&Integer::from(n)).unwrap();
            assert!(t2.dense.is_none());
            assert_eq!(t1.target_logf, t2.target_logf);
            let dd = (t1.d_offset.log2_f64() - t2.d_offset.log2_f64()).abs();
            let ds = (t1.s_offset.log2_f64() - t2.s_offset.log2_f64()).abs();
            assert!(dd < 1e-12 && ds < 1e-12, "n={n}: {dd} {ds}");
        }
    }

    #[test]
    fn log_positions_match_dense() {
        let v = view();
        for n in [2u64, 7, 30] {
            for kind in [KnotKind::A, KnotKind::B, KnotKind::C, KnotKind::D, KnotKind::S] {
                let exact = v.knot_position(kind, n).unwrap();
                let lv = v.knot_log_position(kind, &Integer::from(n)).unwrap();
                let direct = LogValue::from_rational(&exact, P);
                let diff = Rational::from(lv.log2mag() - direct.log2mag()).abs();
                assert!(diff < Rational::from((1, 1u64 << 60)), "{kind}{n}");
            }
        }
    }

    #[test]
    fn knot_logf_agrees_with_dense_eval() {
        let pd = PaperDensity::build(8, P).unwrap();
        let v = pd.view();
        for n in 1..=8u64 {
            for kind in [KnotKind::A, KnotKind::B, KnotKind::C] {
                let x = pd.knot(kind, n).unwrap();
                let dense = LogValue::from_rational(&pd.f0(&x).unwrap(), P);
                let sym = v.knot_logf(&KnotIndex::new(kind, n)).unwrap();
                let diff = Rational::from(dense.log2mag() - sym.log2mag()).abs();
                assert!(diff <= Rational::from((1, 1u64 << 62)), "{kind}{n}");
            }
        }
    }

    #[test]
    fn omitted_tail_is_tiny() {
        let pd = PaperDensity::build(3, P).unwrap();
        // f₀(a₄)·(a₅ − a₄) = 2^{-47}·(2^{25} − 2^{16})
        let expected = -47.0 + (33554432.0f64 - 65536.0).log2();
        assert!((pd.omitted_tail_bound().log2_f64() - expected).abs() < 1e-12);
    }
}
