//! Diagnostic probes: ratios, scans and bound checks, each reportable as CSV rows.

use std::collections::BTreeMap;
use std::io::Write;

use rug::{Float, Integer, Rational};

use crate::cline::{self, ClineParams};
use crate::convolution::{self, MixtureSpec};
use crate::error::{LabError, Result};
use crate::mixture::BlowupSchedule;
use crate::numerics::{decimal_digits, decimal_string, LogValue};
use crate::paper::{m_of, KnotIndex, KnotKind, KnotView, PaperDensity};
use crate::piecewise::PiecewisePoly;

pub const CSV_HEADER: [&str; 5] = ["probe", "x_or_n", "value", "aux_json", "precision_flag"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProbeRow {
    pub probe: String,
    pub x_or_n: String,
    pub value: String,
    pub aux: BTreeMap<String, String>,
    pub precision_flag: bool,
}

impl ProbeRow {
    pub fn new(probe: &str, x_or_n: impl Into<String>, value: impl Into<String>) -> Self {
        ProbeRow {
            probe: probe.to_string(),
            x_or_n: x_or_n.into(),
            value: value.into(),
            aux: BTreeMap::new(),
            precision_flag: false,
        }
    }

    pub fn aux(mut self, key: &str, value: impl Into<String>) -> Self {
        self.aux.insert(key.to_string(), value.into());
        self
    }

    pub fn flagged(mut self, flag: bool) -> Self {
        self.precision_flag |= flag;
        self
    }

    fn aux_json(&self) -> String {
        let map: serde_json::Map<String, serde_json::Value> = self
            .aux
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
            .collect();
        serde_json::Value::Object(map).to_string()
    }
}

pub fn write_csv<W: Write>(rows: &[ProbeRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| LabError::invalid(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.probe.as_str(),
            r.x_or_n.as_str(),
            r.value.as_str(),
            r.aux_json().as_str(),
            if r.precision_flag { "true" } else { "false" },
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| LabError::invalid(format!("csv: {e}")))?;
    Ok(())
}

pub fn csv_string(rows: &[ProbeRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

/// Decimal rendering used for all rational probe values.
pub fn dec(r: &Rational, precision_bits: u32) -> String {
    decimal_string(r, decimal_digits(precision_bits))
}

fn nonzero_at(p: &PiecewisePoly, x: &Rational) -> Result<Rational> {
    let v = p.eval(x)?;
    if v == 0 {
        return Err(LabError::DegenerateInput(format!(
            "density vanishes at x = {}",
            x.to_f64()
        )));
    }
    Ok(v)
}

/// f(x+t)/f(x).
pub fn long_tail_ratio(p: &PiecewisePoly, x: &Rational, t: &Rational) -> Result<Rational> {
    let fx = nonzero_at(p, x)?;
    Ok(p.eval(&Rational::from(x + t))? / fx)
}

/// f^{⊗2}(x)/(2f(x)) for a density given with its total mass: the density
/// is p/mass, so the ratio is (p∗p)(x)/(2·mass·p(x)).
pub fn subexp_ratio_scaled(p: &PiecewisePoly, mass: &Rational, x: &Rational) -> Result<Rational> {
    let fx = nonzero_at(p, x)?;
    let conv = convolution::self_conv_value(p, x)?;
    Ok(conv / (fx * mass * 2u32))
}

/// f^{⊗2}(x)/(2f(x)) for a normalized density.
pub fn subexp_ratio(p: &PiecewisePoly, x: &Rational) -> Result<Rational> {
    subexp_ratio_scaled(p, &Rational::from(1), x)
}

/// F(x+Δ_d)/(d·f(x)).
pub fn local_tail_ratio(p: &PiecewisePoly, x: &Rational, d: &Rational) -> Result<Rational> {
    let fx = nonzero_at(p, x)?;
    let hi = Rational::from(x + d);
    if hi > *p.hi() {
        return Err(LabError::domain("x + d lies outside the support"));
    }
    Ok(p.interval_mass(x, d)? / (fx * d))
}

/// Index pair (i, j), i ≤ j, maximizing ratio(v_j, v_i), together with the ratio.
fn sup_increase<T, R: PartialOrd>(vals: &[T], ratio: impl Fn(&T, &T) -> R, le: impl Fn(&T, &T) -> bool) -> (R, usize, usize) {
    let mut i_min = 0;
    let mut best = (ratio(&vals[0], &vals[0]), 0, 0);
    for j in 1..vals.len() {
        if le(&vals[j], &vals[i_min]) {
            i_min = j;
        }
        let r = ratio(&vals[j], &vals[i_min]);
        if r > best.0 {
            best = (r, i_min, j);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseScan {
    pub sup_ratio: Rational,
    pub x: Rational,
    pub y: Rational,
}

/// sup_{x0 ≤ x ≤ y} f(y)/f(x) over breakpoints of a piecewise-linear density.
pub fn almost_decrease_scan_dense(p: &PiecewisePoly, x0: &Rational) -> Result<DenseScan> {
    if x0 < p.lo() || x0 >= p.hi() {
        return Err(LabError::invalid("scan range is empty"));
    }
    if p.degree() > 1 {
        return Err(LabError::UnsupportedDegree {
            segment: 0,
            degree: p.degree(),
            max: 1,
        });
    }
    let mut pts = vec![x0.clone()];
    pts.extend(p.breakpoints().iter().filter(|b| *b > x0).cloned());
    let vals = pts.iter().map(|x| p.eval(x)).collect::<Result<Vec<_>>>()?;
    if vals.iter().any(|v| *v <= 0) {
        return Err(LabError::DegenerateInput("density vanishes inside the scan range".into()));
    }
    let (sup, i, j) = sup_increase(&vals, |y, x| Rational::from(y / x), |a, b| a <= b);
    Ok(DenseScan {
        sup_ratio: sup,
        x: pts[i].clone(),
        y: pts[j].clone(),
    })
}

#[derive(Clone, Debug)]
pub struct KnotScan {
    pub sup_ratio: LogValue,
    pub x: KnotIndex,
    pub y: KnotIndex,
    pub lossy: bool,
}

/// Knot-view scan over a_n, b_n, c_n for n_from ≤ n ≤ horizon and a_{horizon+1}.
pub fn almost_decrease_scan_knots(view: &KnotView, n_from: u64, horizon: u64) -> Result<KnotScan> {
    if n_from == 0 || horizon < n_from {
        return Err(LabError::invalid("scan range is empty"));
    }
    let mut idx = Vec::new();
    for n in n_from..=horizon {
        for kind in [KnotKind::A, KnotKind::B, KnotKind::C] {
            idx.push(KnotIndex::new(kind, n));
        }
    }
    idx.push(KnotIndex::new(KnotKind::A, horizon + 1));
    let vals = idx.iter().map(|k| view.knot_logf(k)).collect::<Result<Vec<_>>>()?;
    let (sup, i, j) = sup_increase(
        &vals,
        |y, x| y.div(x).expect("knot values are positive"),
        |a, b| a <= b,
    );
    let lossy = sup.is_lossy();
    Ok(KnotScan {
        sup_ratio: sup,
        x: idx[i].clone(),
        y: idx[j].clone(),
        lossy,
    })
}

#[derive(Clone, Debug)]
pub struct ClineScan {
    /// sup_{x ≤ y} f(y)/f(x)
    pub sup_ratio: LogValue,
    pub x: Float,
    pub y: Float,
    /// (k, f(e^{2kπ−1})/f(e^{(2k+1)π−1})) for 2k+1 ≤ k_max.
    pub even_to_odd_anchor: Vec<(u32, LogValue)>,
    pub lossy: bool,
}

/// Log-spaced grid on [0, e^{k_max·π}] with `per_unit` points per unit of
/// ln(x+1), augmented with e^{kπ}−1 and e^{kπ−1} for k ≤ k_max.
pub fn cline_grid(k_max: u32, per_unit: u32, precision_bits: u32) -> Vec<Float> {
    let wp = precision_bits;
    let top = k_max as f64 * std::f64::consts::PI;
    let steps = (top * per_unit as f64).ceil() as u32;
    let mut pts: Vec<Float> = (0..=steps)
        .map(|i| {
            let u = Float::with_val(wp, i) * top / steps;
            u.exp_m1()
        })
        .collect();
    for k in 1..=k_max {
        let a = cline::anchor(k, wp);
        let b = (Float::with_val(wp, rug::float::Constant::Pi) * k - 1u32).exp();
        pts.push(a);
        pts.push(b);
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    pts
}

pub fn almost_decrease_scan_cline(p: &ClineParams, k_max: u32, per_unit: u32) -> Result<ClineScan> {
    if k_max == 0 {
        return Err(LabError::invalid("scan range is empty"));
    }
    let wp = p.precision_bits();
    let grid = cline_grid(k_max, per_unit, wp);
    let chis = grid.iter().map(|x| cline::chi_mp(x, p)).collect::<Result<Vec<_>>>()?;
    // f(y)/f(x) = e^{χ(x)−χ(y)}: minimize f ⇔ maximize χ.
    let (sup_ln, i, j) = sup_increase(
        &chis,
        |cy, cx| Float::with_val(wp, cx - cy),
        |a, b| a >= b,
    );
    let sup = LogValue::from_ln(&sup_ln, wp);
    let pi = Float::with_val(wp, rug::float::Constant::Pi);
    let mut even_to_odd_anchor = Vec::new();
    let mut k = 1;
    while 2 * k + 1 <= k_max {
        let x = (Float::with_val(wp, &pi * (2 * k)) - 1u32).exp();
        let y = (Float::with_val(wp, &pi * (2 * k + 1)) - 1u32).exp();
        // f(x)/f(y)
        even_to_odd_anchor.push((k, cline::log_density_ratio(&y, &x, p)?));
        k += 1;
    }
    let lossy = sup.is_lossy() || even_to_odd_anchor.iter().any(|(_, v)| v.is_lossy());
    Ok(ClineScan {
        sup_ratio: sup,
        x: grid[i].clone(),
        y: grid[j].clone(),
        even_to_odd_anchor,
        lossy,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnotRatio {
    pub n: u64,
    pub ratio: Rational,
    pub lambda: Rational,
}

/// f(c_n)/f(b_n) evaluated on the materialized density for 2 ≤ n ≤ n_max.
pub fn knot_ratio_series(pd: &PaperDensity, n_max: u64) -> Result<Vec<KnotRatio>> {
    if n_max < 2 {
        return Err(LabError::invalid("n_max must be >= 2"));
    }
    (2..=n_max)
        .map(|n| {
            let fb = pd.f0(&pd.knot(KnotKind::B, n)?)?;
            let fc = pd.f0(&pd.knot(KnotKind::C, n)?)?;
            Ok(KnotRatio {
                n,
                ratio: fc / fb,
                lambda: pd.view().lambda(n)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct I2Check {
    pub n: u64,
    pub m: u64,
    pub i2: Rational,
    pub bound: Rational,
    pub pass: bool,
    /// exponent e with f₀(a_m)²·a_{n+1} = 2^e for the unnormalized density
    pub unnormalized_exponent: Integer,
    pub unnormalized_bound: Rational,
}

/// I₂(c_n) against f(a_{m_n})²·a_{n+1}, both normalized.
pub fn i2_bound_check(pd: &PaperDensity, n: u64) -> Result<I2Check> {
    if n < 2 {
        return Err(LabError::invalid("i2_bound_check needs n >= 2"));
    }
    let x = pd.knot(KnotKind::C, n)?;
    let split = convolution::split_integrals(pd, n, &x)?;
    let m = m_of(n)?;
    let fam = pd.f0(&split.cut)?;
    let a_next = pd.knot(KnotKind::A, n + 1)?;
    let unnormalized_bound = Rational::from(fam.square_ref()) * &a_next;
    let bound = Rational::from(&unnormalized_bound / Rational::from(pd.mass().square_ref()));
    let exponent = Integer::from((n + 1) * (n + 1)) + 2u32 - Integer::from(6 * m * m);
    Ok(I2Check {
        n,
        m,
        pass: split.i2 <= bound,
        i2: split.i2,
        bound,
        unnormalized_exponent: exponent,
        unnormalized_bound,
    })
}

/// I₂(x)/f(x): the paper density's middle integral with cut a_{m_n}.
pub fn paper_middle_integral(pd: &PaperDensity, n: u64, x: &Rational) -> Result<Rational> {
    let split = convolution::split_integrals(pd, n, x)?;
    Ok(split.i2 / pd.density(x)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlowupExact {
    /// F₁∗F₂(b₂+Δ_d)/(d·f(b₂))
    pub ratio: Rational,
    /// F^{*2}(b₂+Δ_d)/F(b₂+Δ_d)
    pub local_ratio: Rational,
    pub lower_bound: Rational,
    pub pass: bool,
}

/// The materialized m = 1 row; requires the first atom to be exact.
pub fn mixture_blowup_exact(spec: &MixtureSpec, schedule: &BlowupSchedule, d: &Rational) -> Result<BlowupExact> {
    let entry = schedule.entry(1)?;
    let n = entry
        .n
        .to_u64()
        .ok_or_else(|| LabError::UnsupportedIndex("first atom is symbolic".into()))?;
    let x = spec.f1().knot(KnotKind::B, n)?;
    let f1f2 = spec.f1f2_window(&x, d)?;
    let fx = spec.f1().density(&x)?;
    let ratio = f1f2 / (Rational::from(d * &fx));
    let local = spec.mixture_local_conv(&x, d)?;
    let window = spec.window(&x, d)?;
    let lower_bound = entry.lower_bound.clone();
    let threshold = Rational::from((9, 10)) * &lower_bound;
    Ok(BlowupExact {
        pass: ratio >= threshold,
        ratio,
        local_ratio: local.total / window,
        lower_bound,
    })
}

pub fn mixture_blowup_probe(spec: &MixtureSpec, schedule: &BlowupSchedule, d: &Rational) -> Result<Vec<ProbeRow>> {
    let p = schedule.precision_bits();
    let exact = mixture_blowup_exact(spec, schedule, d)?;
    let mut rows = vec![ProbeRow::new("mixture_blowup", "1", dec(&exact.ratio, p))
        .aux("kind", "exact")
        .aux("local_ratio", dec(&exact.local_ratio, p))
        .aux("lower_bound", dec(&exact.lower_bound, p))
        .aux("n_m", schedule.entry(1)?.n.to_string())
        .aux("pass_0.9_slack", exact.pass.to_string())];
    for e in &schedule.entries()[1..] {
        rows.push(
            ProbeRow::new("mixture_blowup", e.m.to_string(), dec(&e.lower_bound, p))
                .aux("kind", "symbolic_lower_bound")
                .aux("n_m", e.n.to_string())
                .aux("mass", dec(&e.mass, p))
                .aux("log2_f_b", e.log2_f_b.to_string())
                .flagged(e.log2_f_b.is_lossy()),
        );
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::piecewise::Knot;

    fn q(n: i64, d: u64) -> Rational {
        Rational::from((n, d))
    }

    #[test]
    fn trivial_ratios() {
        let u = PiecewisePoly::from_linear_knots(&[Knot::new(0, 1), Knot::new(1, 1)]).unwrap();
        assert_eq!(long_tail_ratio(&u, &q(1, 2), &q(0, 1)).unwrap(), 1);
        assert_eq!(subexp_ratio(&u, &q(1, 1)).unwrap(), q(1, 2));
        assert_eq!(local_tail_ratio(&u, &q(1, 4), &q(1, 2)).unwrap(), 1);
        let z = PiecewisePoly::from_linear_knots(&[Knot::new(0, 0), Knot::new(1, 1)]).unwrap();
        assert!(matches!(
            long_tail_ratio(&z, &q(0, 1), &q(1, 2)),
            Err(LabError::DegenerateInput(_))
        ));
    }

    #[test]
    fn paper_long_tail_examples() {
        let pd = PaperDensity::build(4, 256).unwrap();
        let f = pd.dense();
        let a4 = pd.knot(KnotKind::A, 4).unwrap();
        let r = long_tail_ratio(f, &a4, &q(1, 1)).unwrap().to_f64();
        let (b4, fa, fb) = (
            pd.knot(KnotKind::B, 4).unwrap().to_f64(),
            pd.f0(&a4).unwrap().to_f64(),
            pd.f0(&pd.knot(KnotKind::B, 4).unwrap()).unwrap().to_f64(),
        );
        let oracle = 1.0 + (fb - fa) / (b4 - a4.to_f64()) / fa;
        assert!((r - oracle).abs() < 1e-12);
        assert!((r - 0.9999978).abs() < 5e-7, "{r}");
        let c2 = pd.knot(KnotKind::C, 2).unwrap();
        let r = long_tail_ratio(f, &c2, &q(10, 1)).unwrap().to_f64();
        assert!((r - 0.958).abs() < 1e-3, "{r}");
    }

    #[test]
    fn monotone_density_scan() {
        let p = PiecewisePoly::from_linear_knots(&[Knot::new(0, 3), Knot::new(1, 2), Knot::new(4, 1)]).unwrap();
        let s = almost_decrease_scan_dense(&p, &q(0, 1)).unwrap();
        assert!(s.sup_ratio <= 1);
        assert_eq!(s.x, s.y);
        assert!(almost_decrease_scan_dense(&p, &q(4, 1)).is_err());
    }

    #[test]
    fn paper_scans_find_lambda() {
        let pd = PaperDensity::build(12, 256).unwrap();
        let s = almost_decrease_scan_dense(pd.dense(), &q(0, 1)).unwrap();
        assert_eq!(s.sup_ratio, pd.view().lambda(12).unwrap());
        assert_eq!(s.x, pd.knot(KnotKind::B, 12).unwrap());
        assert_eq!(s.y, pd.knot(KnotKind::C, 12).unwrap());
        let k = almost_decrease_scan_knots(pd.view(), 1, 40).unwrap();
        assert_eq!(k.x, KnotIndex::new(KnotKind::B, 40));
        assert_eq!(k.y, KnotIndex::new(KnotKind::C, 40));
        assert!((k.sup_ratio.to_f64() - 41f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn knot_series_values() {
        let pd = PaperDensity::build(9, 256).unwrap();
        let s = knot_ratio_series(&pd, 9).unwrap();
        assert!(s.iter().all(|r| r.ratio == r.lambda));
        assert!((s[1].ratio.to_f64() - 4f64.ln()).abs() < 1e-12);
        assert!((s[7].ratio.to_f64() - 10f64.ln()).abs() < 1e-12);
        assert!(s.windows(2).all(|w| w[0].ratio < w[1].ratio));
    }

    #[test]
    fn i2_unnormalized_exponent() {
        let pd = PaperDensity::build(10, 256).unwrap();
        let c = i2_bound_check(&pd, 10).unwrap();
        assert!(c.pass);
        assert_eq!(c.m, 10);
        assert_eq!(c.unnormalized_exponent, -477);
        assert_eq!(
            c.unnormalized_bound,
            Rational::from((Integer::from(1), Integer::from(1) << 477u32))
        );
    }

    #[test]
    fn cline_scan_finds_witness() {
        let p = ClineParams::standard();
        let s = almost_decrease_scan_cline(&p, 8, 4).unwrap();
        assert!(s.sup_ratio.log2_f64() > 1000f64.log2());
        assert!(s.x < s.y);
        // f(e^{2kπ}−1)/f(e^{(2k+1)π}−1) shrinks with k
        assert!(s.even_to_odd_anchor.windows(2).all(|w| w[1].1 < w[0].1));
    }
}
