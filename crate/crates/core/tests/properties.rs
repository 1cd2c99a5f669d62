use proptest::prelude::*;
use rug::Rational;

use subexp_lab::convolution::{conv_linear_exact, self_conv_value, split_integrals};
use subexp_lab::numerics::{LogValue, Sign};
use subexp_lab::paper::{KnotKind, PaperDensity};
use subexp_lab::piecewise::{Knot, PiecewisePoly};
use subexp_lab::probes::{almost_decrease_scan_dense, long_tail_ratio};

fn q(n: i64, d: u64) -> Rational {
    Rational::from((n, d))
}

/// Nonnegative piecewise-linear function from gaps and values.
fn linear_from(gaps: &[(u8, u8)], start: u8, values: &[u8]) -> PiecewisePoly {
    let mut x = Rational::from(start);
    let mut knots = vec![Knot::new(x.clone(), values[0])];
    for (i, (num, den)) in gaps.iter().enumerate() {
        x += Rational::from((*num as u32 + 1, *den as u32 + 1));
        knots.push(Knot::new(x.clone(), values[i + 1]));
    }
    PiecewisePoly::from_linear_knots(&knots).unwrap()
}

fn arb_linear() -> impl Strategy<Value = PiecewisePoly> {
    (1usize..6)
        .prop_flat_map(|k| {
            (
                prop::collection::vec((0u8..8, 0u8..4), k),
                0u8..3,
                prop::collection::vec(0u8..10, k + 1),
            )
        })
        .prop_map(|(gaps, start, values)| linear_from(&gaps, start, &values))
}

fn arb_unit() -> impl Strategy<Value = Rational> {
    (0u32..=1000).prop_map(|k| Rational::from((k, 1000u32)))
}

fn paper() -> &'static PaperDensity {
    use std::sync::OnceLock;
    static PD: OnceLock<PaperDensity> = OnceLock::new();
    PD.get_or_init(|| PaperDensity::build(8, 128).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn convolution_conserves_mass(p in arb_linear(), r in arb_linear()) {
        let c = conv_linear_exact(&p, &r).unwrap();
        prop_assert_eq!(c.total_integral(), p.total_integral() * r.total_integral());
    }

    #[test]
    fn convolution_commutes(p in arb_linear(), r in arb_linear(), u in arb_unit()) {
        let pr = conv_linear_exact(&p, &r).unwrap();
        let rp = conv_linear_exact(&r, &p).unwrap();
        prop_assert_eq!(pr.breakpoints(), rp.breakpoints());
        let x = Rational::from(pr.hi() - pr.lo()) * u + pr.lo();
        prop_assert_eq!(pr.eval(&x).unwrap(), rp.eval(&x).unwrap());
    }

    #[test]
    fn convolution_is_nonnegative(p in arb_linear(), r in arb_linear()) {
        let c = conv_linear_exact(&p, &r).unwrap();
        let b = c.breakpoints();
        for w in b.windows(2) {
            prop_assert!(c.eval(&w[0]).unwrap() >= 0);
            let mid = Rational::from(&w[0] + &w[1]) / 2u32;
            prop_assert!(c.eval(&mid).unwrap() >= 0);
        }
    }

    #[test]
    fn point_value_matches_full_convolution(p in arb_linear(), u in arb_unit()) {
        let c = conv_linear_exact(&p, &p).unwrap();
        let x = Rational::from(c.hi() - c.lo()) * u + c.lo();
        prop_assert_eq!(c.eval(&x).unwrap(), self_conv_value(&p, &x).unwrap());
    }

    #[test]
    fn split_partition_identity(n in 3u64..=8, u in arb_unit()) {
        let pd = paper();
        let lo = pd.knot(KnotKind::B, n).unwrap();
        let hi = pd.knot(KnotKind::A, n + 1).unwrap();
        let x = Rational::from(&hi - &lo) * u + &lo;
        let s = split_integrals(pd, n, &x).unwrap();
        prop_assert_eq!(Rational::from(&s.i1 * 2u32) + &s.i2, s.total);
    }

    #[test]
    fn long_tail_ratio_is_multiplicative(u in arb_unit(), t1 in 0u32..50, t2 in 0u32..50) {
        let pd = paper();
        let f = pd.dense();
        let x = Rational::from(f.hi() - 200u32) * u;
        let (t1, t2) = (Rational::from(t1), Rational::from(t2));
        let whole = long_tail_ratio(f, &x, &Rational::from(&t1 + &t2)).unwrap();
        let parts = long_tail_ratio(f, &x, &t1).unwrap()
            * long_tail_ratio(f, &Rational::from(&x + &t1), &t2).unwrap();
        prop_assert_eq!(whole, parts);
    }

    #[test]
    fn nonincreasing_density_scan_is_bounded(gaps in prop::collection::vec((0u8..8, 0u8..4), 1..6), drops in prop::collection::vec(0u8..5, 6)) {
        let mut values = vec![60u8];
        for d in drops.iter().take(gaps.len()) {
            values.push(values.last().unwrap() - d);
        }
        let p = linear_from(&gaps, 0, &values);
        let s = almost_decrease_scan_dense(&p, &q(0, 1)).unwrap();
        prop_assert!(s.sup_ratio <= 1);
    }

    #[test]
    fn piecewise_text_is_lossless(p in arb_linear()) {
        let back = PiecewisePoly::from_text(&p.to_text(&[])).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn log_value_tracks_f64(a in -60i32..60, b in -60i32..60, neg in any::<bool>()) {
        let x = LogValue::pow2(a, 128);
        let y = LogValue::pow2(b, 128);
        let y = if neg { y.neg() } else { y };
        let (xf, yf) = (2f64.powi(a), if neg { -2f64.powi(b) } else { 2f64.powi(b) });
        prop_assert!((x.mul(&y).to_f64() - xf * yf).abs() <= 1e-12 * (xf * yf).abs());
        let s = x.add(&y);
        let exact = xf + yf;
        if exact == 0.0 {
            prop_assert_eq!(s.sign(), Sign::Zero);
        } else {
            prop_assert!((s.to_f64() - exact).abs() <= 1e-12 * exact.abs());
        }
    }
}
