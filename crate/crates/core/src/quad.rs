//! Globally adaptive Simpson quadrature in f64.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    /// Estimated absolute error.
    pub error: f64,
    pub evals: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct QuadOptions {
    pub rel_tol: f64,
    /// Absolute error accepted regardless of the size of the integral.
    pub abs_tol: f64,
    pub max_evals: usize,
}

impl QuadOptions {
    pub fn relative(rel_tol: f64) -> Self {
        QuadOptions {
            rel_tol,
            abs_tol: 0.0,
            max_evals: 2_000_000,
        }
    }
}

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    // quarter points
    fl: f64,
    fr: f64,
    value: f64,
    error: f64,
}

impl Panel {
    fn new<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> Panel {
        let m = 0.5 * (a + b);
        let fl = f(0.5 * (a + m));
        let fr = f(0.5 * (m + b));
        let h = b - a;
        let coarse = h / 6.0 * (fa + 4.0 * fm + fb);
        let fine = h / 12.0 * (fa + 4.0 * fl + 2.0 * fm + 4.0 * fr + fb);
        let diff = fine - coarse;
        Panel {
            a,
            b,
            fa,
            fm,
            fb,
            fl,
            fr,
            value: fine + diff / 15.0,
            error: diff.abs() / 15.0,
        }
    }
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.a.total_cmp(&self.a))
    }
}

/// ∫ f over [breaks[0], breaks.last()], never refining across a break.
///
/// The panel with the largest error estimate is bisected until the summed
/// estimate falls below max(rel_tol·|I|, abs_tol).
pub fn integrate<F: Fn(f64) -> f64>(f: F, breaks: &[f64], opts: QuadOptions) -> Result<QuadResult> {
    if breaks.len() < 2 {
        return Err(LabError::invalid("quadrature needs at least two break points"));
    }
    if breaks.windows(2).any(|w| !(w[0] < w[1])) || breaks.iter().any(|b| !b.is_finite()) {
        return Err(LabError::invalid("quadrature break points must be finite and increasing"));
    }
    let mut heap = BinaryHeap::new();
    let mut evals = 0usize;
    let mut fa = f(breaks[0]);
    evals += 1;
    for w in breaks.windows(2) {
        let fm = f(0.5 * (w[0] + w[1]));
        let fb = f(w[1]);
        heap.push(Panel::new(&f, w[0], w[1], fa, fm, fb));
        evals += 4;
        fa = fb;
    }
    let (mut total, mut err) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error));
    loop {
        if !total.is_finite() {
            return Err(LabError::PrecisionFailure {
                what: "quadrature produced a non-finite value".into(),
                achieved: f64::INFINITY,
            });
        }
        if err <= (opts.rel_tol * total.abs()).max(opts.abs_tol) {
            break;
        }
        if evals >= opts.max_evals {
            return Err(LabError::PrecisionFailure {
                what: "quadrature budget exhausted".into(),
                achieved: if total != 0.0 { err / total.abs() } else { err },
            });
        }
        let p = heap.pop().expect("at least one panel");
        let m = 0.5 * (p.a + p.b);
        if !(p.a < m && m < p.b) {
            // Panel no longer divisible in f64; accept it as is.
            return Err(LabError::PrecisionFailure {
                what: "quadrature panel reached f64 resolution".into(),
                achieved: if total != 0.0 { err / total.abs() } else { err },
            });
        }
        let left = Panel::new(&f, p.a, m, p.fa, p.fl, p.fm);
        let right = Panel::new(&f, m, p.b, p.fm, p.fr, p.fb);
        evals += 4;
        total += left.value + right.value - p.value;
        err += left.error + right.error - p.error;
        heap.push(left);
        heap.push(right);
        if heap.len() % 4096 == 0 {
            // refresh running sums against drift
            let (v, e) = heap
                .iter()
                .fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error));
            total = v;
            err = e;
        }
    }
    let (value, error) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error));
    Ok(QuadResult {
        value,
        error,
        evals,
    })
}

/// Merges user break points with a geometric grid 0, 1, 2, 4, … over [lo, hi].
pub fn log_grid(lo: f64, hi: f64, extra: &[f64]) -> Vec<f64> {
    let mut pts = vec![lo, hi];
    let mut t = 1.0f64;
    while t < hi {
        if t > lo {
            pts.push(t);
        }
        t *= 2.0;
    }
    pts.extend(extra.iter().copied().filter(|x| *x > lo && *x < hi));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}
