//! The acceptance battery behind `subexp verify`.

use std::path::PathBuf;
use std::time::Instant;

use rug::{Integer, Rational};

use crate::cline::{self, ClineParams, DEFAULT_QUAD_TOL};
use crate::convolution;
use crate::error::{LabError, Result};
use crate::mixture::{build_schedule, DEFAULT_M_MAX};
use crate::numerics::{log2_rational, log_nat, snap_pow, LogValue, DEFAULT_PRECISION};
use crate::paper::{KnotIndex, KnotKind, KnotView, PaperDensity};
use crate::piecewise::{Knot, PiecewisePoly};
use crate::probes::{self, dec, ProbeRow};
use crate::quad::{self, QuadOptions};

/// Agreement demanded between runs at p and 2p bits.
pub const SELF_CONSISTENCY_BITS: u32 = 64;

#[derive(Clone, Debug)]
pub struct VerifyConfig {
    pub precision_bits: u32,
    /// Knot file to check against a fresh build of the same construction.
    pub knot_file: Option<PathBuf>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            precision_bits: DEFAULT_PRECISION,
            knot_file: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    pub rows: Vec<ProbeRow>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "{:<width$}  {}  {:>8.3}s  {}\n",
                    c.name,
                    if c.pass { "PASS" } else { "FAIL" },
                    c.seconds,
                    c.detail
                )
            })
            .collect()
    }
}

/// Van der Corput points in (0, 1), exact dyadic rationals.
pub fn van_der_corput(count: usize) -> Vec<Rational> {
    (1..=count as u64)
        .map(|mut i| {
            let mut v = Rational::new();
            let mut scale = Rational::from((1, 2));
            while i > 0 {
                if i & 1 == 1 {
                    v += &scale;
                }
                scale /= 2u32;
                i >>= 1;
            }
            v
        })
        .collect()
}

type Outcome = Result<(bool, String, Vec<ProbeRow>)>;

struct Battery {
    p: u32,
    rows: Vec<ProbeRow>,
    checks: Vec<CheckResult>,
}

impl Battery {
    fn run(&mut self, name: &'static str, f: impl FnOnce(u32) -> Outcome) {
        let t = Instant::now();
        let (pass, detail) = match f(self.p) {
            Ok((pass, detail, rows)) => {
                self.rows.extend(rows.into_iter().map(|r| r.aux("check", name)));
                (pass, detail)
            }
            Err(e) => (false, format!("error: {e}")),
        };
        self.checks.push(CheckResult {
            name,
            pass,
            detail,
            seconds: t.elapsed().as_secs_f64(),
        });
    }
}

fn log2_abs_dev(r: &Rational) -> f64 {
    let d = Rational::from(r - 1u32).abs();
    if d == 0 {
        f64::NEG_INFINITY
    } else {
        log2_rational(&d, 64).to_f64()
    }
}

fn check_convolution_exactness(_p: u32) -> Outcome {
    let u = PiecewisePoly::from_linear_knots(&[Knot::new(0, 1), Knot::new(1, 1)])?;
    let tri = PiecewisePoly::from_linear_knots(&[Knot::new(0, 0), Knot::new(1, 1), Knot::new(2, 0)])?;
    let c = convolution::conv_linear_exact(&u, &u)?;
    let mut pts: Vec<Rational> = tri.breakpoints().to_vec();
    pts.extend(van_der_corput(100).into_iter().map(|v| v * 2u32));
    let mut bad = 0;
    for x in &pts {
        if c.eval(x)? != tri.eval(x)? || convolution::self_conv_value(&u, x)? != tri.eval(x)? {
            bad += 1;
        }
    }
    Ok((
        bad == 0 && c.breakpoints() == tri.breakpoints(),
        format!("{} points, {bad} mismatches", pts.len()),
        vec![ProbeRow::new("conv_triangle", "1", dec(&c.eval(&Rational::from(1))?, 64))],
    ))
}

fn check_convolution_quadrature(p: u32) -> Outcome {
    let pd = PaperDensity::build(3, p)?;
    let f = pd.normalized();
    let knots: Vec<f64> = f.breakpoints().iter().map(|b| b.to_f64()).collect();
    let top = knots[knots.len() - 1];
    let eval = |y: f64| -> f64 {
        if y < 0.0 || y > top {
            return 0.0;
        }
        let i = knots.partition_point(|k| *k < y).saturating_sub(1).min(knots.len() - 2);
        let s = f.segment(i);
        s[0].to_f64() + s[1].to_f64() * (y - knots[i])
    };
    let mut worst = 0f64;
    let mut rows = Vec::new();
    for v in van_der_corput(20) {
        let x = Rational::from(f.hi() * 2u32) * v;
        let exact = convolution::self_conv_value(&f, &x)?.to_f64();
        let xf = x.to_f64();
        let (lo, hi) = ((xf - top).max(0.0), xf.min(top));
        let mut breaks: Vec<f64> = knots
            .iter()
            .flat_map(|k| [*k, xf - *k])
            .filter(|b| *b > lo && *b < hi)
            .collect();
        breaks.push(lo);
        breaks.push(hi);
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let q = quad::integrate(|y| eval(xf - y) * eval(y), &breaks, QuadOptions::relative(1e-8))?;
        let rel = ((exact - q.value) / exact).abs();
        worst = worst.max(rel);
        rows.push(ProbeRow::new("conv_cross_validation", dec(&x, p), format!("{rel:e}")));
    }
    Ok((worst < 1e-6, format!("max relative gap {worst:.3e} over 20 points"), rows))
}

fn check_knot_ratio_identity(p: u32) -> Outcome {
    let pd = PaperDensity::build(40, p)?;
    let series = probes::knot_ratio_series(&pd, 40)?;
    let exact = series.iter().all(|r| r.ratio == r.lambda);
    let last = &series.last().unwrap().ratio;
    let pass = exact && *last > Rational::from((37, 10));
    let rows = series
        .iter()
        .map(|r| ProbeRow::new("knot_ratio_series", r.n.to_string(), dec(&r.ratio, p)).aux("equals_lambda", (r.ratio == r.lambda).to_string()))
        .collect();
    Ok((pass, format!("exact identity {exact}, ratio at n=40 {:.6}", last.to_f64()), rows))
}

fn check_long_tail(p: u32) -> Outcome {
    let pd = PaperDensity::build(10, p)?;
    let f = pd.dense();
    let mut rows = Vec::new();
    let mut pass = true;
    for kind in [KnotKind::A, KnotKind::B, KnotKind::C] {
        let x = pd.knot(kind, 10)? + 1u32;
        let r = probes::long_tail_ratio(f, &x, &Rational::from(1))?;
        pass &= Rational::from(&r - 1u32).abs() < Rational::from((1, 1000));
        rows.push(ProbeRow::new("long_tail_ratio", format!("{kind}10+1"), dec(&r, p)));
    }
    Ok((pass, "t = 1 at a10+1, b10+1, c10+1".into(), rows))
}

fn check_subexp_trend(p: u32) -> Outcome {
    let pd = PaperDensity::build(35, p)?;
    let mut devs = Vec::new();
    let mut rows = Vec::new();
    for n in [15u64, 25, 35] {
        let x = pd.knot(KnotKind::C, n)?;
        let r = probes::subexp_ratio_scaled(pd.dense(), pd.mass(), &x)?;
        let dev = Rational::from(&r - 1u32).abs();
        rows.push(ProbeRow::new("subexp_ratio", format!("c{n}"), dec(&r, p)).aux("log2_abs_dev", format!("{:.6}", log2_abs_dev(&r))));
        devs.push(dev);
    }
    let decreasing = devs.windows(2).all(|w| w[1] < w[0]);
    let small = devs[2] < Rational::from((1, 10));
    Ok((
        decreasing && small,
        format!(
            "log2|ratio-1| = {}",
            devs.iter()
                .map(|d| format!("{:.1}", if *d == 0 { f64::NEG_INFINITY } else { log2_rational(d, 64).to_f64() }))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        rows,
    ))
}

fn check_i2_bound(p: u32) -> Outcome {
    let pd = PaperDensity::build(15, p)?;
    let mut pass = true;
    let mut rows = Vec::new();
    for n in [5u64, 10, 15] {
        let c = probes::i2_bound_check(&pd, n)?;
        let e = c.unnormalized_exponent.to_i64().unwrap();
        let closed = if e >= 0 {
            Rational::from(Integer::from(1) << e as u32)
        } else {
            Rational::from((Integer::from(1), Integer::from(1) << (-e) as u32))
        };
        pass &= c.pass && closed == c.unnormalized_bound;
        rows.push(
            ProbeRow::new("i2_bound_check", n.to_string(), dec(&c.i2, p))
                .aux("bound", dec(&c.bound, p))
                .aux("pass", c.pass.to_string())
                .aux("unnormalized_bound", format!("2^{e}")),
        );
    }
    Ok((pass, "n = 5, 10, 15".into(), rows))
}

fn check_split_partition(p: u32) -> Outcome {
    let pd = PaperDensity::build(10, p)?;
    let mut pass = true;
    let mut rows = Vec::new();
    for kind in [KnotKind::C, KnotKind::B] {
        let x = pd.knot(kind, 10)?;
        let s = convolution::split_integrals(&pd, 10, &x)?;
        let ok = Rational::from(&s.i1 * 2u32) + &s.i2 == s.total;
        pass &= ok;
        rows.push(
            ProbeRow::new("split_integrals", format!("{kind}10"), dec(&s.total, p))
                .aux("i1", dec(&s.i1, p))
                .aux("i2", dec(&s.i2, p))
                .aux("exact_partition", ok.to_string()),
        );
    }
    Ok((pass, "2*I1 + I2 = I at c10, b10".into(), rows))
}

fn check_local_tail(p: u32) -> Outcome {
    let pd = PaperDensity::build(10, p)?;
    let f = pd.normalized();
    let x = pd.knot(KnotKind::C, 10)?;
    let mut pass = true;
    let mut rows = Vec::new();
    for d in [Rational::from((1, 2)), Rational::from(1), Rational::from(2)] {
        let r = probes::local_tail_ratio(&f, &x, &d)?;
        pass &= r > Rational::from((99, 100)) && r < Rational::from((101, 100));
        rows.push(ProbeRow::new("local_tail_ratio", format!("c10,d={d}"), dec(&r, p)));
    }
    Ok((pass, "d = 1/2, 1, 2 at c10".into(), rows))
}

fn check_cline_scan(p: u32) -> Outcome {
    let params = ClineParams::new(1.0, 0.25, DEFAULT_QUAD_TOL, None, p)?;
    let s = probes::almost_decrease_scan_cline(&params, 8, 4)?;
    let threshold = LogValue::from_rational(&Rational::from(1000), p);
    let pass = s.sup_ratio > threshold;
    let mut row = ProbeRow::new("almost_decrease_scan", "cline,k<=8", s.sup_ratio.to_string())
        .aux("witness_x", s.x.to_string_radix(10, Some(20)))
        .aux("witness_y", s.y.to_string_radix(10, Some(20)))
        .flagged(s.lossy);
    for (k, v) in &s.even_to_odd_anchor {
        row = row.aux(&format!("even_to_odd_anchor_k{k}"), v.to_string());
    }
    Ok((pass, format!("sup log2 ratio {:.1}", s.sup_ratio.log2_f64()), vec![row]))
}

fn check_karamata(p: u32) -> Outcome {
    let params = ClineParams::new(1.0, 0.25, 1e-8, None, p)?;
    let r2 = cline::karamata_ratio(1e2, &params)?;
    let r4 = cline::karamata_ratio(1e4, &params)?;
    let (d2, d4) = ((r2.value - 1.0).abs(), (r4.value - 1.0).abs());
    let pass = d4 < d2 && d4 < 0.1;
    let rows = vec![
        ProbeRow::new("karamata_ratio", "100", format!("{:.12e}", r2.value)).aux("error", format!("{:.3e}", r2.error)),
        ProbeRow::new("karamata_ratio", "10000", format!("{:.12e}", r4.value)).aux("error", format!("{:.3e}", r4.error)),
    ];
    Ok((pass, format!("|r-1| = {d2:.3e} at 1e2, {d4:.3e} at 1e4"), rows))
}

fn check_blowup(p: u32) -> Outcome {
    let schedule = build_schedule(DEFAULT_M_MAX, p)?;
    let spec = schedule.mixture_spec(3, Rational::from((1, 2)))?;
    let exact = probes::mixture_blowup_exact(&spec, &schedule, &Rational::from(1))?;
    let lbs: Vec<Rational> = (1..=DEFAULT_M_MAX)
        .map(|m| schedule.blowup_lower_bound(m))
        .collect::<Result<_>>()?;
    let increasing = lbs.windows(2).all(|w| w[0] < w[1]);
    let growth = Rational::from(&lbs[5] / &lbs[0]);
    let pass = exact.pass && increasing && growth > 3;
    let rows = probes::mixture_blowup_probe(&spec, &schedule, &Rational::from(1))?;
    Ok((
        pass,
        format!(
            "m=1 ratio {:.4} vs 0.9*bound {:.4}; bound growth {:.3}",
            exact.ratio.to_f64(),
            0.9 * exact.lower_bound.to_f64(),
            growth.to_f64()
        ),
        rows,
    ))
}

/// Quantities that depend on the snapped constants, at a given precision.
fn precision_sensitive(p: u32) -> Result<Vec<Rational>> {
    let view = KnotView::new(p)?;
    let mut out = Vec::new();
    for n in [2u64, 9, 40, 1000] {
        out.push(log_nat(n, p)?);
        out.push(snap_pow(&log_nat(n, p)?, 1, 6, p)?);
    }
    out.push(view.knot_logf(&KnotIndex::new(KnotKind::B, 9))?.log2mag().clone());
    let schedule = build_schedule(3, p)?;
    out.extend(schedule.entries().iter().map(|e| e.lower_bound.clone()));
    Ok(out)
}

fn check_precision_consistency(p: u32) -> Outcome {
    let coarse = precision_sensitive(p)?;
    let fine = precision_sensitive(2 * p)?;
    let tol = Rational::from((Integer::from(1), Integer::from(1) << SELF_CONSISTENCY_BITS));
    let worst = coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| Rational::from(a - b).abs())
        .max()
        .unwrap_or_default();
    let log2 = if worst == 0 { f64::NEG_INFINITY } else { log2_rational(&worst, 64).to_f64() };
    Ok((
        worst <= tol,
        format!("max |v(p) - v(2p)| = 2^{log2:.1}, required 2^-{SELF_CONSISTENCY_BITS}"),
        Vec::new(),
    ))
}

fn header_value(text: &str, key: &str) -> Option<String> {
    text.lines()
        .filter_map(|l| l.strip_prefix('#'))
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == key)
        .map(|(_, v)| v.trim().to_string())
}

/// Header lines written in front of a paper knot file.
pub fn paper_header(pd: &PaperDensity) -> Vec<String> {
    vec![
        "construction = paper".to_string(),
        format!("N = {}", pd.n_trunc()),
        format!("precision_bits = {}", pd.precision_bits()),
    ]
}

/// Compares a knot file against a fresh build; the error names the first
/// violated invariant.
pub fn knot_file_integrity(text: &str, default_p: u32) -> std::result::Result<(), String> {
    let n: u32 = header_value(text, "N")
        .and_then(|v| v.parse().ok())
        .ok_or("header: missing or invalid N")?;
    let p: u32 = header_value(text, "precision_bits")
        .and_then(|v| v.parse().ok())
        .unwrap_or(default_p);
    let loaded = PiecewisePoly::from_text(text).map_err(|e| format!("parse: {e}"))?;
    if !loaded.is_continuous() {
        return Err("continuity: the density jumps at a knot".into());
    }
    let fresh = PaperDensity::build(n, p).map_err(|e| e.to_string())?;
    let f = fresh.dense();
    if loaded.breakpoints() != f.breakpoints() {
        return Err("knot positions differ from the construction".into());
    }
    for i in 0..f.num_segments() {
        if loaded.segment(i) != f.segment(i) {
            return Err(format!("knot value: segment {i} differs from the construction"));
        }
    }
    Ok(())
}

fn check_knot_file(p: u32, file: Option<&PathBuf>) -> Outcome {
    let (text, source) = match file {
        Some(path) => (
            std::fs::read_to_string(path).map_err(|e| LabError::invalid(format!("{}: {e}", path.display())))?,
            path.display().to_string(),
        ),
        None => {
            let pd = PaperDensity::build(10, p)?;
            (pd.dense().to_text(&paper_header(&pd)), "round trip N=10".to_string())
        }
    };
    match knot_file_integrity(&text, p) {
        Ok(()) => Ok((true, source, Vec::new())),
        Err(why) => Ok((false, format!("{source}: {why}"), Vec::new())),
    }
}

fn battery(cfg: &VerifyConfig) -> Battery {
    let mut b = Battery {
        p: cfg.precision_bits,
        rows: Vec::new(),
        checks: Vec::new(),
    };
    b.run("convolution_exactness", check_convolution_exactness);
    b.run("convolution_cross_validation", check_convolution_quadrature);
    b.run("knot_ratio_identity", check_knot_ratio_identity);
    b.run("long_tail_evidence", check_long_tail);
    b.run("subexp_trend", check_subexp_trend);
    b.run("i2_bound", check_i2_bound);
    b.run("split_partition", check_split_partition);
    b.run("local_tail_ratio", check_local_tail);
    b.run("cline_non_almost_decrease", check_cline_scan);
    b.run("karamata_ratio", check_karamata);
    b.run("mixture_blowup", check_blowup);
    b.run("precision_self_consistency", check_precision_consistency);
    let file = cfg.knot_file.clone();
    b.run("knot_file_integrity", move |p| check_knot_file(p, file.as_ref()));
    b
}

pub fn run_verify(cfg: &VerifyConfig) -> VerifyReport {
    let first = battery(cfg);
    let t = Instant::now();
    let second = battery(cfg);
    let same = probes::csv_string(&first.rows) == probes::csv_string(&second.rows);
    let mut checks = first.checks;
    checks.insert(
        12,
        CheckResult {
            name: "determinism",
            pass: same,
            detail: format!("{} rows, byte-identical rerun: {same}", first.rows.len()),
            seconds: t.elapsed().as_secs_f64(),
        },
    );
    VerifyReport {
        checks,
        rows: first.rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn van_der_corput_points() {
        let v = van_der_corput(4);
        assert_eq!(v, vec![Rational::from((1, 2)), Rational::from((1, 4)), Rational::from((3, 4)), Rational::from((1, 8))]);
    }

    #[test]
    fn tampered_knot_file_is_named() {
        let pd = PaperDensity::build(3, 128).unwrap();
        let text = pd.dense().to_text(&paper_header(&pd));
        assert!(knot_file_integrity(&text, 128).is_ok());
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let idx = lines.iter().position(|l| l.starts_with("knot 16 ")).unwrap();
        lines[idx] = "knot 16 1/1024".into();
        let err = knot_file_integrity(&lines.join("\n"), 128).unwrap_err();
        assert!(err.starts_with("knot value"), "{err}");
    }

    #[test]
    fn low_precision_fails_self_consistency() {
        let (pass, _, _) = check_precision_consistency(32).unwrap();
        assert!(!pass);
        let (pass, _, _) = check_precision_consistency(128).unwrap();
        assert!(pass);
    }
}
