//! Piecewise polynomials with exact rational coefficients.
//!
//! Segment `i` covers `(x_i, x_{i+1}]` (the first segment also owns `x_0`) and
//! stores up to four coefficients in the local variable `x - x_i`.

use std::fmt::Write as _;

use rug::Rational;

use crate::error::{LabError, Result};
use crate::numerics::{exact_string, parse_rational};
use crate::poly;

pub const MAX_DEGREE: usize = 3;

pub type Coeffs = [Rational; MAX_DEGREE + 1];

#[derive(Clone, Debug, PartialEq)]
pub struct Knot {
    pub x: Rational,
    pub f: Rational,
}

impl Knot {
    pub fn new(x: impl Into<Rational>, f: impl Into<Rational>) -> Self {
        Knot {
            x: x.into(),
            f: f.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PiecewisePoly {
    breaks: Vec<Rational>,
    segs: Vec<Coeffs>,
}

fn zero_coeffs() -> Coeffs {
    std::array::from_fn(|_| Rational::new())
}

impl PiecewisePoly {
    /// Linear interpolation through `knots`.
    pub fn from_linear_knots(knots: &[Knot]) -> Result<Self> {
        if knots.len() < 2 {
            return Err(LabError::invalid("at least two knots are required"));
        }
        for (i, k) in knots.iter().enumerate() {
            if k.f < 0 {
                return Err(LabError::invalid(format!("knot {i} has a negative value")));
            }
        }
        let mut breaks = Vec::with_capacity(knots.len());
        let mut segs = Vec::with_capacity(knots.len() - 1);
        for w in knots.windows(2) {
            let (l, r) = (&w[0], &w[1]);
            if r.x <= l.x {
                return Err(LabError::invalid(
                    "knot abscissas must be strictly increasing",
                ));
            }
            let slope = Rational::from(&r.f - &l.f) / Rational::from(&r.x - &l.x);
            let mut c = zero_coeffs();
            c[0] = l.f.clone();
            c[1] = slope;
            breaks.push(l.x.clone());
            segs.push(c);
        }
        breaks.push(knots.last().unwrap().x.clone());
        Ok(PiecewisePoly { breaks, segs })
    }

    /// General constructor; each coefficient list has at most four entries.
    pub fn from_segments(breaks: Vec<Rational>, coeffs: Vec<Vec<Rational>>) -> Result<Self> {
        if breaks.len() < 2 || coeffs.len() + 1 != breaks.len() {
            return Err(LabError::invalid(
                "segment count must equal breakpoint count minus one",
            ));
        }
        if breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LabError::invalid("breakpoints must be strictly increasing"));
        }
        let mut segs = Vec::with_capacity(coeffs.len());
        for (i, c) in coeffs.into_iter().enumerate() {
            let deg = poly::degree(&c);
            if c.len() > MAX_DEGREE + 1 && deg > MAX_DEGREE {
                return Err(LabError::UnsupportedDegree {
                    segment: i,
                    degree: deg,
                    max: MAX_DEGREE,
                });
            }
            let mut s = zero_coeffs();
            for (k, v) in c.into_iter().take(MAX_DEGREE + 1).enumerate() {
                s[k] = v;
            }
            segs.push(s);
        }
        Ok(PiecewisePoly { breaks, segs })
    }

    pub(crate) fn from_parts_unchecked(breaks: Vec<Rational>, segs: Vec<Coeffs>) -> Self {
        debug_assert_eq!(breaks.len(), segs.len() + 1);
        PiecewisePoly { breaks, segs }
    }

    pub fn breakpoints(&self) -> &[Rational] {
        &self.breaks
    }

    pub fn num_segments(&self) -> usize {
        self.segs.len()
    }

    pub fn segment(&self, i: usize) -> &Coeffs {
        &self.segs[i]
    }

    pub fn lo(&self) -> &Rational {
        &self.breaks[0]
    }

    pub fn hi(&self) -> &Rational {
        self.breaks.last().unwrap()
    }

    pub fn degree(&self) -> usize {
        self.segs.iter().map(|c| poly::degree(c)).max().unwrap_or(0)
    }

    pub fn segment_len(&self, i: usize) -> Rational {
        Rational::from(&self.breaks[i + 1] - &self.breaks[i])
    }

    /// Index of the segment owning `x` under the right-continuous convention.
    pub fn segment_index(&self, x: &Rational) -> Option<usize> {
        if x < self.lo() || x > self.hi() {
            return None;
        }
        let idx = self.breaks.partition_point(|b| b < x);
        Some(idx.saturating_sub(1).min(self.segs.len() - 1))
    }

    fn in_support(&self, x: &Rational) -> Result<usize> {
        self.segment_index(x).ok_or_else(|| {
            LabError::domain(format!(
                "x = {} lies outside the support [{}, {}]",
                x.to_f64(),
                self.lo().to_f64(),
                self.hi().to_f64()
            ))
        })
    }

    pub fn eval(&self, x: &Rational) -> Result<Rational> {
        let i = self.in_support(x)?;
        Ok(self.eval_segment(i, x))
    }

    pub(crate) fn eval_segment(&self, i: usize, x: &Rational) -> Rational {
        let u = Rational::from(x - &self.breaks[i]);
        poly::eval(&self.segs[i], &u)
    }

    /// Value of segment `i` at its right endpoint (left limit at `x_{i+1}`).
    pub fn right_limit(&self, i: usize) -> Rational {
        poly::eval(&self.segs[i], &self.segment_len(i))
    }

    pub fn is_continuous(&self) -> bool {
        (0..self.segs.len() - 1).all(|i| self.right_limit(i) == self.segs[i + 1][0])
    }

    /// Exact ∫_lo^hi.
    pub fn integral(&self, lo: &Rational, hi: &Rational) -> Result<Rational> {
        if hi < lo {
            return Err(LabError::invalid("integral bounds are reversed"));
        }
        let i0 = self.in_support(lo)?;
        let i1 = self.in_support(hi)?;
        Ok(self.integral_indexed(lo, i0, hi, i1))
    }

    fn integral_indexed(&self, lo: &Rational, i0: usize, hi: &Rational, i1: usize) -> Rational {
        let mut total = Rational::new();
        for i in i0..=i1 {
            let a = if i == i0 { lo } else { &self.breaks[i] };
            let b = if i == i1 { hi } else { &self.breaks[i + 1] };
            let u0 = Rational::from(a - &self.breaks[i]);
            let u1 = Rational::from(b - &self.breaks[i]);
            total += poly::integrate(&self.segs[i], &u0, &u1);
        }
        total
    }

    pub fn total_integral(&self) -> Rational {
        (0..self.segs.len())
            .map(|i| poly::integrate_from_zero(&self.segs[i], &self.segment_len(i)))
            .sum()
    }

    pub fn scale(&self, k: &Rational) -> PiecewisePoly {
        let segs = self
            .segs
            .iter()
            .map(|c| std::array::from_fn(|j| Rational::from(&c[j] * k)))
            .collect();
        PiecewisePoly {
            breaks: self.breaks.clone(),
            segs,
        }
    }

    /// Rescales to unit mass; returns the original mass.
    pub fn normalize(&self) -> Result<(PiecewisePoly, Rational)> {
        let mass = self.total_integral();
        if mass <= 0 {
            return Err(LabError::DegenerateInput(
                "total integral must be positive".into(),
            ));
        }
        let inv = Rational::from(mass.recip_ref());
        Ok((self.scale(&inv), mass))
    }

    /// ∫ over (x, x+d] ∩ support.
    pub fn interval_mass(&self, x: &Rational, d: &Rational) -> Result<Rational> {
        if *d <= 0 {
            return Err(LabError::invalid("window width d must be positive"));
        }
        let end = Rational::from(x + d);
        let a = if x < self.lo() { self.lo() } else { x };
        let b = if &end > self.hi() { self.hi() } else { &end };
        if a >= b {
            return Ok(Rational::new());
        }
        self.integral(a, b)
    }

    /// ∫ over (x, x_K].
    pub fn tail_mass(&self, x: &Rational) -> Result<Rational> {
        let i = self.in_support(x)?;
        Ok(self.integral_indexed(x, i, self.hi(), self.segs.len() - 1))
    }

    pub fn cumulative(&self, x: &Rational) -> Result<Rational> {
        let i = self.in_support(x)?;
        Ok(self.integral_indexed(self.lo(), 0, x, i))
    }

    /// Knot list for continuous piecewise-linear functions.
    pub fn linear_knots(&self) -> Option<Vec<Knot>> {
        if self.degree() > 1 || !self.is_continuous() {
            return None;
        }
        let mut knots: Vec<Knot> = (0..self.segs.len())
            .map(|i| Knot::new(self.breaks[i].clone(), self.segs[i][0].clone()))
            .collect();
        knots.push(Knot::new(
            self.hi().clone(),
            self.right_limit(self.segs.len() - 1),
        ));
        Some(knots)
    }

    /// Serializes as `knot <x> <f>` lines when the function is continuous and
    /// piecewise linear, otherwise as `seg <x_lo> <x_hi> <c0> <c1> <c2> <c3>`.
    /// Numbers are exact (`p` or `p/q`). `header` lines are emitted as `#` comments.
    pub fn to_text(&self, header: &[String]) -> String {
        let mut out = String::new();
        for h in header {
            let _ = writeln!(out, "# {h}");
        }
        match self.linear_knots() {
            Some(knots) => {
                for k in knots {
                    let _ = writeln!(out, "knot {} {}", exact_string(&k.x), exact_string(&k.f));
                }
            }
            None => {
                for (i, c) in self.segs.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "seg {} {} {} {} {} {}",
                        exact_string(&self.breaks[i]),
                        exact_string(&self.breaks[i + 1]),
                        exact_string(&c[0]),
                        exact_string(&c[1]),
                        exact_string(&c[2]),
                        exact_string(&c[3])
                    );
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut knots = Vec::new();
        let mut breaks: Vec<Rational> = Vec::new();
        let mut coeffs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| LabError::Parse {
                line: lineno + 1,
                msg,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let nums = fields[1..]
                .iter()
                .map(|s| parse_rational(s))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| parse_err(e.to_string()))?;
            match fields[0] {
                "knot" if nums.len() == 2 => {
                    let mut it = nums.into_iter();
                    knots.push(Knot::new(it.next().unwrap(), it.next().unwrap()));
                }
                "seg" if nums.len() == 6 => {
                    let mut it = nums.into_iter();
                    let lo = it.next().unwrap();
                    let hi = it.next().unwrap();
                    match breaks.last() {
                        None => breaks.push(lo),
                        Some(prev) if *prev == lo => {}
                        Some(_) => {
                            return Err(parse_err("segments are not contiguous".into()));
                        }
                    }
                    breaks.push(hi);
                    coeffs.push(it.collect::<Vec<_>>());
                }
                other => {
                    return Err(parse_err(format!(
                        "unrecognized record '{other}' with {} fields",
                        nums.len()
                    )))
                }
            }
        }
        match (knots.is_empty(), coeffs.is_empty()) {
            (false, true) => Self::from_linear_knots(&knots),
            (true, false) => Self::from_segments(breaks, coeffs),
            (true, true) => Err(LabError::Parse {
                line: 0,
                msg: "no knot or seg records".into(),
            }),
            (false, false) => Err(LabError::Parse {
                line: 0,
                msg: "file mixes knot and seg records".into(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: u64) -> Rational {
        Rational::from((n, d))
    }

    fn triangle() -> PiecewisePoly {
        PiecewisePoly::from_linear_knots(&[Knot::new(0, 0), Knot::new(1, 1), Knot::new(2, 0)])
            .unwrap()
    }

    #[test]
    fn two_point_line() {
        let p = PiecewisePoly::from_linear_knots(&[Knot::new(0, 1), Knot::new(2, q(1, 4))])
            .unwrap();
        assert_eq!(p.num_segments(), 1);
        assert_eq!(p.segment(0)[1], q(-3, 8));
        assert_eq!(p.integral(&q(0, 1), &q(2, 1)).unwrap(), q(5, 4));
    }

    #[test]
    fn triangle_eval_and_mass() {
        let t = triangle();
        assert_eq!(t.eval(&q(1, 2)).unwrap(), q(1, 2));
        assert_eq!(t.eval(&q(1, 1)).unwrap(), 1);
        assert_eq!(t.integral(&q(0, 1), &q(2, 1)).unwrap(), 1);
        assert_eq!(t.interval_mass(&q(0, 1), &q(2, 1)).unwrap(), 1);
        assert_eq!(t.interval_mass(&q(1, 1), &q(1, 1)).unwrap(), q(1, 2));
        assert_eq!(t.tail_mass(&q(1, 1)).unwrap(), q(1, 2));
        assert_eq!(t.tail_mass(&q(2, 1)).unwrap(), 0);
        assert!(t.is_continuous());
    }

    #[test]
    fn rejects_bad_knots() {
        let dup = [Knot::new(0, 1), Knot::new(0, 2)];
        assert!(matches!(
            PiecewisePoly::from_linear_knots(&dup),
            Err(LabError::InvalidArgument(_))
        ));
        let neg = [Knot::new(0, 1), Knot::new(1, -1)];
        assert!(PiecewisePoly::from_linear_knots(&neg).is_err());
        assert!(PiecewisePoly::from_linear_knots(&[Knot::new(0, 1)]).is_err());
    }

    #[test]
    fn domain_and_argument_errors() {
        let t = triangle();
        assert!(matches!(t.eval(&q(3, 1)), Err(LabError::OutOfDomain(_))));
        assert!(matches!(
            t.integral(&q(1, 1), &q(0, 1)),
            Err(LabError::InvalidArgument(_))
        ));
        assert!(matches!(
            t.interval_mass(&q(0, 1), &q(0, 1)),
            Err(LabError::InvalidArgument(_))
        ));
    }

    #[test]
    fn right_continuous_ownership() {
        let step = PiecewisePoly::from_segments(
            vec![q(0, 1), q(1, 1), q(2, 1)],
            vec![vec![q(1, 1)], vec![q(5, 1)]],
        )
        .unwrap();
        assert_eq!(step.eval(&q(0, 1)).unwrap(), 1);
        assert_eq!(step.eval(&q(1, 1)).unwrap(), 1);
        assert_eq!(step.eval(&q(3, 2)).unwrap(), 5);
        assert!(!step.is_continuous());
    }

    #[test]
    fn normalize_scales_to_unit_mass() {
        let t2 = triangle().scale(&q(2, 1));
        let (n, mass) = t2.normalize().unwrap();
        assert_eq!(mass, 2);
        assert_eq!(n, triangle());
        let zero =
            PiecewisePoly::from_linear_knots(&[Knot::new(0, 0), Knot::new(1, 0)]).unwrap();
        assert!(matches!(zero.normalize(), Err(LabError::DegenerateInput(_))));
    }

    #[test]
    fn window_clamps_to_support() {
        let t = triangle();
        assert_eq!(t.interval_mass(&q(-5, 1), &q(6, 1)).unwrap(), q(1, 2));
        assert_eq!(t.interval_mass(&q(5, 1), &q(1, 1)).unwrap(), 0);
    }

    #[test]
    fn text_round_trip() {
        let t = triangle().scale(&q(1, 3));
        let back = PiecewisePoly::from_text(&t.to_text(&["test".into()])).unwrap();
        assert_eq!(back, t);

        let cubic = PiecewisePoly::from_segments(
            vec![q(0, 1), q(1, 2), q(3, 1)],
            vec![vec![q(1, 1), q(0, 1), q(0, 1), q(-1, 7)], vec![q(2, 1)]],
        )
        .unwrap();
        let text = cubic.to_text(&[]);
        assert!(text.starts_with("seg 0 1/2 1 0 0 -1/7"));
        assert_eq!(PiecewisePoly::from_text(&text).unwrap(), cubic);
    }

    #[test]
    fn text_errors() {
        assert!(PiecewisePoly::from_text("# only a comment\n").is_err());
        assert!(PiecewisePoly::from_text("knot 0 1\nseg 0 1 0 0 0 0\n").is_err());
        let err = PiecewisePoly::from_text("knot 0 1\nknot x 2\n").unwrap_err();
        assert!(matches!(err, LabError::Parse { line: 2, .. }));
    }
}
