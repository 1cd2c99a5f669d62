//! Dense univariate polynomial helpers over exact rationals, coefficients in
//! ascending order of degree.

use rug::Rational;

pub(crate) fn eval(coeffs: &[Rational], u: &Rational) -> Rational {
    let mut acc = Rational::new();
    for c in coeffs.iter().rev() {
        acc *= u;
        acc += c;
    }
    acc
}

pub(crate) fn degree(coeffs: &[Rational]) -> usize {
    coeffs.iter().rposition(|c| *c != 0).unwrap_or(0)
}

/// Coefficients of p(u + h).
pub(crate) fn taylor_shift(coeffs: &[Rational], h: &Rational) -> Vec<Rational> {
    let mut out = coeffs.to_vec();
    if *h == 0 {
        return out;
    }
    let n = out.len();
    for i in 0..n {
        for j in (i..n.saturating_sub(1)).rev() {
            let t = Rational::from(&out[j + 1] * h);
            out[j] += t;
        }
    }
    out
}

/// Coefficients of p(−u).
pub(crate) fn reflect(coeffs: &[Rational]) -> Vec<Rational> {
    coeffs
        .iter()
        .enumerate()
        .map(|(k, c)| if k % 2 == 1 { Rational::from(-c) } else { c.clone() })
        .collect()
}

pub(crate) fn mul(a: &[Rational], b: &[Rational]) -> Vec<Rational> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![Rational::new(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if *x == 0 {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] += Rational::from(x * y);
        }
    }
    out
}

pub(crate) fn add_assign(acc: &mut Vec<Rational>, other: &[Rational]) {
    if acc.len() < other.len() {
        acc.resize(other.len(), Rational::new());
    }
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

/// ∫_0^len p(u) du.
pub(crate) fn integrate_from_zero(coeffs: &[Rational], len: &Rational) -> Rational {
    // Horner on Σ c_k len^{k+1}/(k+1).
    let mut acc = Rational::new();
    for (k, c) in coeffs.iter().enumerate().rev() {
        acc *= len;
        acc += Rational::from(c / (k as u32 + 1));
    }
    acc * len
}

pub(crate) fn integrate(coeffs: &[Rational], u0: &Rational, u1: &Rational) -> Rational {
    integrate_from_zero(coeffs, u1) - integrate_from_zero(coeffs, u0)
}
