//! Exact convolution of piecewise polynomials and the localized two-sided
//! mixture convolution.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rayon::prelude::*;
use rug::Rational;

use crate::error::{LabError, Result};
use crate::numerics::LogValue;
use crate::paper::{m_of, KnotKind, PaperDensity};
use crate::piecewise::{Coeffs, PiecewisePoly, MAX_DEGREE};
use crate::poly;

fn check_linear(p: &PiecewisePoly) -> Result<()> {
    for i in 0..p.num_segments() {
        let deg = poly::degree(p.segment(i));
        if deg > 1 {
            return Err(LabError::UnsupportedDegree {
                segment: i,
                degree: deg,
                max: 1,
            });
        }
    }
    Ok(())
}

/// ∫_0^T (α0 + α1(s − t))(β0 + β1 t) dt as a polynomial in s, for T = T(s).
fn pair_antiderivative(alpha: (&Rational, &Rational), beta: (&Rational, &Rational), t: &[Rational]) -> Vec<Rational> {
    let (a0, a1) = alpha;
    let (b0, b1) = beta;
    // A(s) = α0 + α1 s
    let big_a = [a0.clone(), a1.clone()];
    let t2 = poly::mul(t, t);
    let t3 = poly::mul(&t2, t);
    let lin: Vec<Rational> = big_a.iter().map(|c| Rational::from(c * b0)).collect();
    let mut quad: Vec<Rational> = big_a.iter().map(|c| Rational::from(c * b1)).collect();
    quad[0] -= Rational::from(a1 * b0);
    let cubic = Rational::from(a1 * b1) / 3u32;

    let mut out = poly::mul(&lin, t);
    let q: Vec<Rational> = poly::mul(&quad, &t2)
        .into_iter()
        .map(|c| c / 2u32)
        .collect();
    poly::add_assign(&mut out, &q);
    let c: Vec<Rational> = t3.iter().map(|c| -Rational::from(c * &cubic)).collect();
    poly::add_assign(&mut out, &c);
    out
}

fn add_event(events: &mut BTreeMap<Rational, Vec<Rational>>, at: Rational, poly_in_s: &[Rational], offset: &Rational) {
    let local = poly::taylor_shift(poly_in_s, offset);
    match events.get_mut(&at) {
        Some(acc) => poly::add_assign(acc, &local),
        None => {
            events.insert(at, local);
        }
    }
}

/// Contribution of one pair of linear pieces, folded into the event map.
///
/// With s = z − (a0+b0), t = y − b0 and piece lengths La, Lb the pair's
/// convolution is H(s, U) − H(s, L) with U = min(Lb, s), L = max(0, s − La).
/// Each switch of U or L is recorded as a polynomial jump at its breakpoint.
fn fold_pair(
    events: &mut BTreeMap<Rational, Vec<Rational>>,
    (a_lo, a_len, alpha): (&Rational, &Rational, (&Rational, &Rational)),
    (b_lo, b_len, beta): (&Rational, &Rational, (&Rational, &Rational)),
) {
    if (*alpha.0 == 0 && *alpha.1 == 0) || (*beta.0 == 0 && *beta.1 == 0) {
        return;
    }
    let z0 = Rational::from(a_lo + b_lo);
    let t_eq_s = [Rational::new(), Rational::from(1)];
    let t_eq_lb = [b_len.clone()];
    let t_eq_shift = [Rational::from(-a_len), Rational::from(1)];

    let h_s = pair_antiderivative(alpha, beta, &t_eq_s);
    let h_lb = pair_antiderivative(alpha, beta, &t_eq_lb);
    let h_shift = pair_antiderivative(alpha, beta, &t_eq_shift);

    let neg = |v: &[Rational]| v.iter().map(|c| Rational::from(-c)).collect::<Vec<_>>();
    let diff = |a: &[Rational], b: &[Rational]| {
        let mut out = a.to_vec();
        poly::add_assign(&mut out, &neg(b));
        out
    };

    add_event(events, z0.clone(), &h_s, &Rational::new());
    add_event(events, Rational::from(&z0 + b_len), &diff(&h_lb, &h_s), b_len);
    add_event(events, Rational::from(&z0 + a_len), &neg(&h_shift), a_len);
    let both = Rational::from(a_len + b_len);
    add_event(events, Rational::from(&z0 + &both), &diff(&h_shift, &h_lb), &both);
}

fn merge_events(mut a: BTreeMap<Rational, Vec<Rational>>, b: BTreeMap<Rational, Vec<Rational>>) -> BTreeMap<Rational, Vec<Rational>> {
    for (k, v) in b {
        match a.get_mut(&k) {
            Some(acc) => poly::add_assign(acc, &v),
            None => {
                a.insert(k, v);
            }
        }
    }
    a
}

/// Exact piecewise-cubic (P∗Q)(x) = ∫ P(x−y) Q(y) dy for piecewise-linear inputs.
///
/// Output breakpoints are the distinct pairwise sums of input breakpoints.
/// Pair contributions are streamed into a map of polynomial jumps keyed by
/// breakpoint, then swept left to right.
pub fn conv_linear_exact(p: &PiecewisePoly, q: &PiecewisePoly) -> Result<PiecewisePoly> {
    check_linear(p)?;
    check_linear(q)?;
    let events = (0..p.num_segments())
        .into_par_iter()
        .fold(BTreeMap::new, |mut events, i| {
            let a_len = p.segment_len(i);
            let ca = p.segment(i);
            for j in 0..q.num_segments() {
                let b_len = q.segment_len(j);
                let cb = q.segment(j);
                fold_pair(
                    &mut events,
                    (&p.breakpoints()[i], &a_len, (&ca[0], &ca[1])),
                    (&q.breakpoints()[j], &b_len, (&cb[0], &cb[1])),
                );
            }
            events
        })
        .reduce(BTreeMap::new, merge_events);
    let mut events = events;
    // Anchor the support even when every product vanishes.
    for end in [Rational::from(p.lo() + q.lo()), Rational::from(p.hi() + q.hi())] {
        events.entry(end).or_insert_with(|| vec![Rational::new(); MAX_DEGREE + 1]);
    }

    let mut breaks = Vec::with_capacity(events.len());
    let mut segs: Vec<Coeffs> = Vec::with_capacity(events.len());
    let mut running: Vec<Rational> = vec![Rational::new(); MAX_DEGREE + 1];
    let mut prev: Option<Rational> = None;
    for (at, jump) in events {
        if let Some(prev) = &prev {
            let h = Rational::from(&at - prev);
            segs.push(std::array::from_fn(|k| running[k].clone()));
            running = poly::taylor_shift(&running, &h);
        }
        poly::add_assign(&mut running, &jump);
        breaks.push(at.clone());
        prev = Some(at);
    }
    debug_assert!(running.iter().all(|c| *c == 0), "convolution does not vanish past its support");
    Ok(PiecewisePoly::from_parts_unchecked(breaks, segs))
}

/// ∫_{y_lo}^{y_hi} P(x−y) Q(y) dy, clamped to where both factors are supported.
pub fn conv_window(
    p: &PiecewisePoly,
    q: &PiecewisePoly,
    x: &Rational,
    y_lo: &Rational,
    y_hi: &Rational,
) -> Result<Rational> {
    let z_lo = Rational::from(p.lo() + q.lo());
    let z_hi = Rational::from(p.hi() + q.hi());
    if *x < z_lo || *x > z_hi {
        return Err(LabError::domain(format!(
            "x = {} lies outside the convolution support",
            x.to_f64()
        )));
    }
    if y_hi < y_lo {
        return Err(LabError::invalid("window bounds are reversed"));
    }
    let lo = [q.lo().clone(), Rational::from(x - p.hi()), y_lo.clone()]
        .into_iter()
        .max()
        .unwrap();
    let hi = [q.hi().clone(), Rational::from(x - p.lo()), y_hi.clone()]
        .into_iter()
        .min()
        .unwrap();
    if lo >= hi {
        return Ok(Rational::new());
    }
    let mut cuts: Vec<Rational> = q
        .breakpoints()
        .iter()
        .filter(|b| **b > lo && **b < hi)
        .cloned()
        .collect();
    cuts.extend(
        p.breakpoints()
            .iter()
            .map(|b| Rational::from(x - b))
            .filter(|y| *y > lo && *y < hi),
    );
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort();
    cuts.dedup();

    let mut total = Rational::new();
    for w in cuts.windows(2) {
        let (u, v) = (&w[0], &w[1]);
        let mid = Rational::from(u + v) / 2u32;
        let j = q.segment_index(&mid).expect("midpoint inside Q support");
        let x_mid = Rational::from(x - &mid);
        let i = p.segment_index(&x_mid).expect("x - midpoint inside P support");
        let qj = poly::taylor_shift(q.segment(j), &Rational::from(u - &q.breakpoints()[j]));
        let shift = Rational::from(x - u) - &p.breakpoints()[i];
        let pi = poly::reflect(&poly::taylor_shift(p.segment(i), &shift));
        let prod = poly::mul(&pi, &qj);
        total += poly::integrate_from_zero(&prod, &Rational::from(v - u));
    }
    Ok(total)
}

/// (P∗Q)(x) at a single point.
pub fn conv_value(p: &PiecewisePoly, q: &PiecewisePoly, x: &Rational) -> Result<Rational> {
    conv_window(p, q, x, q.lo(), q.hi())
}

/// (P∗P)(x) at a single point, without building the whole convolution.
pub fn self_conv_value(p: &PiecewisePoly, x: &Rational) -> Result<Rational> {
    conv_value(p, p, x)
}

/// Split of the normalized self-convolution at x ∈ J_n = (a_n, a_{n+1}] with
/// cut point a_{m_n}: `I(x) = 2·I1 + I2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitIntegrals {
    pub n: u64,
    pub cut: Rational,
    pub i1: Rational,
    pub i2: Rational,
    pub total: Rational,
}

pub fn split_integrals(pd: &PaperDensity, n: u64, x: &Rational) -> Result<SplitIntegrals> {
    if n == 0 || n > pd.n_trunc() as u64 {
        return Err(LabError::InconsistentArguments(format!(
            "n = {n} outside the truncation N = {}",
            pd.n_trunc()
        )));
    }
    let a_n = pd.knot(KnotKind::A, n)?;
    let a_next = pd.knot(KnotKind::A, n + 1)?;
    if *x <= a_n || *x > a_next {
        return Err(LabError::InconsistentArguments(format!(
            "x = {} is not in J_{n} = (a_{n}, a_{}]",
            x.to_f64(),
            n + 1
        )));
    }
    let cut = Rational::from(pd.view().a(m_of(n)?)?);
    let upper = Rational::from(x - &cut);
    if upper < cut {
        return Err(LabError::InconsistentArguments(
            "x - a_{m_n} must be at least a_{m_n}".into(),
        ));
    }
    let f = pd.dense();
    let scale = Rational::from(pd.mass().square_ref()).recip();
    let zero = Rational::new();
    let i1 = conv_window(f, f, x, &zero, &cut)? * &scale;
    let i2 = conv_window(f, f, x, &cut, &upper)? * &scale;
    let total = self_conv_value(f, x)? * &scale;
    Ok(SplitIntegrals {
        n,
        cut,
        i1,
        i2,
        total,
    })
}

/// Position of an atom of X₂ (F₂ is the law of −X₂).
#[derive(Clone, Debug)]
pub enum AtomValue {
    Exact(Rational),
    /// Too large to materialize; only its log₂ is known.
    Symbolic(LogValue),
}

#[derive(Clone, Debug)]
pub struct Atom {
    pub value: AtomValue,
    pub mass: Rational,
}

#[derive(Clone, Debug)]
pub struct AtomList {
    atoms: Vec<Atom>,
    residual: Atom,
}

impl AtomList {
    pub fn new(atoms: Vec<Atom>, residual: Atom) -> Result<Self> {
        for a in atoms.iter() {
            if a.mass <= 0 {
                return Err(LabError::invalid("atom masses must be positive"));
            }
        }
        if residual.mass < 0 {
            return Err(LabError::invalid("residual mass must be nonnegative"));
        }
        for a in atoms.iter().chain(std::iter::once(&residual)) {
            let positive = match &a.value {
                AtomValue::Exact(v) => *v > 0,
                AtomValue::Symbolic(lv) => lv.sign() == crate::numerics::Sign::Positive,
            };
            if !positive {
                return Err(LabError::invalid("atom values of X2 must be positive"));
            }
        }
        let total: Rational = atoms.iter().map(|a| a.mass.clone()).sum::<Rational>() + &residual.mass;
        if total != 1 {
            return Err(LabError::invalid(format!(
                "atom masses sum to {} instead of 1",
                total.to_f64()
            )));
        }
        Ok(AtomList { atoms, residual })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn residual(&self) -> &Atom {
        &self.residual
    }

    pub fn iter_all(&self) -> impl Iterator<Item = &Atom> {
        self.atoms.iter().chain(std::iter::once(&self.residual))
    }
}

/// F = q₁F₁ + q₂F₂ with F₁ the paper density and F₂ a discrete law on ℝ⁻.
#[derive(Debug)]
pub struct MixtureSpec {
    q1: Rational,
    q2: Rational,
    f1: PaperDensity,
    f2: AtomList,
    f1_normalized: PiecewisePoly,
    f1_self_conv: OnceLock<PiecewisePoly>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalConv {
    /// F₁∗F₁(x+Δ_d]
    pub f1f1: Rational,
    /// F₁∗F₂(x+Δ_d]
    pub f1f2: Rational,
    /// F^{*2}(x+Δ_d] = q₁²·f1f1 + 2q₁q₂·f1f2
    pub total: Rational,
}

impl MixtureSpec {
    pub fn new(q1: Rational, f1: PaperDensity, f2: AtomList) -> Result<Self> {
        if q1 <= 0 || q1 > 1 {
            return Err(LabError::invalid("q1 must lie in (0, 1]"));
        }
        let q2 = Rational::from(1) - &q1;
        let f1_normalized = f1.normalized();
        Ok(MixtureSpec {
            q1,
            q2,
            f1,
            f2,
            f1_normalized,
            f1_self_conv: OnceLock::new(),
        })
    }

    pub fn q1(&self) -> &Rational {
        &self.q1
    }

    pub fn q2(&self) -> &Rational {
        &self.q2
    }

    pub fn f1(&self) -> &PaperDensity {
        &self.f1
    }

    pub fn f2(&self) -> &AtomList {
        &self.f2
    }

    pub fn f1_self_conv(&self) -> &PiecewisePoly {
        self.f1_self_conv.get_or_init(|| {
            conv_linear_exact(&self.f1_normalized, &self.f1_normalized)
                .expect("paper density is piecewise linear")
        })
    }

    /// F₁(x+Δ_d], normalized.
    pub fn f1_window(&self, x: &Rational, d: &Rational) -> Result<Rational> {
        self.f1_normalized.interval_mass(x, d)
    }

    /// F(x+Δ_d] = q₁·F₁(x+Δ_d] for x > 0.
    pub fn window(&self, x: &Rational, d: &Rational) -> Result<Rational> {
        Ok(self.f1_window(x, d)? * &self.q1)
    }

    pub fn f1f2_window(&self, x: &Rational, d: &Rational) -> Result<Rational> {
        let top = LogValue::from_rational(self.f1_normalized.hi(), self.f1.precision_bits());
        let mut sum = Rational::new();
        for atom in self.f2.iter_all() {
            match &atom.value {
                AtomValue::Exact(v) => {
                    sum += self.f1_window(&Rational::from(x + v), d)? * &atom.mass;
                }
                AtomValue::Symbolic(v) => {
                    if *v <= top {
                        return Err(LabError::Unsupported(
                            "symbolic atom inside the materialized support".into(),
                        ));
                    }
                    // Window lies past the truncation: contributes nothing.
                }
            }
        }
        Ok(sum)
    }

    /// Local mass of F^{*2} over (x, x+d] for x > 0.
    pub fn mixture_local_conv(&self, x: &Rational, d: &Rational) -> Result<LocalConv> {
        if *x <= 0 {
            return Err(LabError::Unsupported(
                "x must be positive: the F2*F2 term is not modelled".into(),
            ));
        }
        if *d <= 0 {
            return Err(LabError::invalid("window width d must be positive"));
        }
        let f1f1 = self.f1_self_conv().interval_mass(x, d)?;
        let f1f2 = self.f1f2_window(x, d)?;
        let total = Rational::from(self.q1.square_ref()) * &f1f1
            + Rational::from(&self.q1 * &self.q2) * 2u32 * &f1f2;
        Ok(LocalConv { f1f1, f1f2, total })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::piecewise::Knot;

    fn q(n: i64, d: u64) -> Rational {
        Rational::from((n, d))
    }

    fn uniform() -> PiecewisePoly {
        PiecewisePoly::from_linear_knots(&[Knot::new(0, 1), Knot::new(1, 1)]).unwrap()
    }

    fn triangle() -> PiecewisePoly {
        PiecewisePoly::from_linear_knots(&[Knot::new(0, 0), Knot::new(1, 1), Knot::new(2, 0)])
            .unwrap()
    }

    #[test]
    fn uniform_self_convolution_is_triangle() {
        let c = conv_linear_exact(&uniform(), &uniform()).unwrap();
        assert_eq!(c.breakpoints(), triangle().breakpoints());
        for x in [q(0, 1), q(1, 2), q(1, 1), q(3, 2), q(2, 1), q(1, 3)] {
            assert_eq!(c.eval(&x).unwrap(), triangle().eval(&x).unwrap());
        }
        assert_eq!(self_conv_value(&uniform(), &q(1, 1)).unwrap(), 1);
        assert_eq!(self_conv_value(&uniform(), &q(1, 2)).unwrap(), q(1, 2));
    }

    #[test]
    fn zero_convolution_keeps_its_support() {
        let z = PiecewisePoly::from_linear_knots(&[Knot::new(1, 0), Knot::new(2, 0)]).unwrap();
        let c = conv_linear_exact(&z, &uniform()).unwrap();
        assert_eq!(c.breakpoints(), [q(1, 1), q(3, 1)]);
        assert_eq!(c.eval(&q(2, 1)).unwrap(), 0);
    }

    #[test]
    fn rejects_nonlinear_inputs() {
        let cubic = conv_linear_exact(&uniform(), &uniform()).unwrap();
        let tri3 = conv_linear_exact(&triangle(), &uniform()).unwrap();
        assert!(matches!(
            conv_linear_exact(&cubic, &tri3),
            Err(LabError::UnsupportedDegree { .. })
        ));
    }

    #[test]
    fn point_value_matches_full_convolution() {
        let a = PiecewisePoly::from_linear_knots(&[
            Knot::new(0, 2),
            Knot::new(q(1, 3), 1),
            Knot::new(2, 5),
            Knot::new(q(7, 2), 0),
        ])
        .unwrap();
        let b = triangle();
        let full = conv_linear_exact(&a, &b).unwrap();
        for k in 0..=44 {
            let x = q(k, 8);
            assert_eq!(full.eval(&x).unwrap(), conv_value(&a, &b, &x).unwrap(), "x={k}/8");
        }
        assert_eq!(full.total_integral(), a.total_integral() * b.total_integral());
    }

    #[test]
    fn out_of_domain_point() {
        assert!(matches!(
            self_conv_value(&uniform(), &q(3, 1)),
            Err(LabError::OutOfDomain(_))
        ));
    }

    #[test]
    fn split_rejects_inconsistent_arguments() {
        let pd = PaperDensity::build(4, 128).unwrap();
        let c3 = pd.knot(KnotKind::C, 3).unwrap();
        assert!(matches!(
            split_integrals(&pd, 2, &c3),
            Err(LabError::InconsistentArguments(_))
        ));
        assert!(matches!(
            split_integrals(&pd, 9, &c3),
            Err(LabError::InconsistentArguments(_))
        ));
        let s = split_integrals(&pd, 3, &c3).unwrap();
        assert_eq!(Rational::from(&s.i1 * 2u32) + &s.i2, s.total);
    }

    fn degenerate_mixture(q1: Rational, v: i64) -> MixtureSpec {
        let pd = PaperDensity::build(2, 128).unwrap();
        let atoms = AtomList::new(
            vec![],
            Atom {
                value: AtomValue::Exact(Rational::from(v)),
                mass: Rational::from(1),
            },
        )
        .unwrap();
        MixtureSpec::new(q1, pd, atoms).unwrap()
    }

    #[test]
    fn mixture_degenerate_q2_zero() {
        let m = degenerate_mixture(Rational::from(1), 1);
        let (x, d) = (q(7, 1), q(1, 1));
        let lc = m.mixture_local_conv(&x, &d).unwrap();
        assert_eq!(lc.total, lc.f1f1);
        assert_eq!(lc.f1f1, m.f1_self_conv().interval_mass(&x, &d).unwrap());
    }

    #[test]
    fn mixture_single_atom_formula() {
        let m = degenerate_mixture(q(1, 2), 1);
        let (x, d) = (q(5, 1), q(1, 1));
        let lc = m.mixture_local_conv(&x, &d).unwrap();
        let expected = m.f1_self_conv().interval_mass(&x, &d).unwrap() / 4u32
            + m.f1_window(&q(6, 1), &d).unwrap() / 2u32;
        assert_eq!(lc.total, expected);
        assert!(matches!(
            m.mixture_local_conv(&q(0, 1), &d),
            Err(LabError::Unsupported(_))
        ));
    }

    #[test]
    fn atom_list_requires_unit_mass() {
        let bad = AtomList::new(
            vec![Atom {
                value: AtomValue::Exact(q(1, 1)),
                mass: q(1, 2),
            }],
            Atom {
                value: AtomValue::Exact(q(1, 1)),
                mass: q(1, 3),
            },
        );
        assert!(bad.is_err());
    }
}
