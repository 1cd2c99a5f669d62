//! The two-sided blow-up distribution: atoms of X₂ at the threshold-knot
//! midpoints of J_{n_m}, n_m = ⌊e^{m⁴}⌋, with masses c·λ_{n_m}^{−1/3}.

use rug::float::Round;
use rug::{Float, Integer, Rational};

use crate::convolution::{Atom, AtomList, AtomValue, MixtureSpec};
use crate::error::{LabError, Result};
use crate::numerics::{decimal_digits, decimal_string, log_nat_big, snap_pow, LogValue};
use crate::paper::{KnotIndex, KnotKind, KnotView, PaperDensity};

pub const DEFAULT_M_MAX: u32 = 6;
const MAX_FLOOR_PRECISION: u32 = 1 << 22;

/// Mass reserved for the residual atom.
pub fn default_residual_fraction() -> Rational {
    Rational::from((1, 20))
}

/// Value of X₂ carrying the residual mass.
pub fn residual_value() -> Rational {
    Rational::from(1)
}

/// ⌊e^{m⁴}⌋ with a certified floor: e^{m⁴} is bracketed by directed
/// roundings and the precision grows until both brackets share a floor.
pub fn schedule_index(m: u32) -> Result<Integer> {
    if m == 0 {
        return Err(LabError::invalid("schedule index m must be >= 1"));
    }
    let m4 = Integer::from(m as u64 * m as u64 * m as u64 * m as u64);
    let int_bits = (m4.to_f64() * std::f64::consts::LOG2_E).ceil() as u32;
    let mut wp = int_bits + 64;
    while wp <= MAX_FLOOR_PRECISION {
        let mut lo = Float::with_val(wp, &m4);
        lo.exp_round(Round::Down);
        let mut hi = Float::with_val(wp, &m4);
        hi.exp_round(Round::Up);
        let (lo, hi) = (lo.floor().to_integer(), hi.floor().to_integer());
        if let (Some(lo), Some(hi)) = (lo, hi) {
            if lo == hi {
                return Ok(lo);
            }
        }
        wp *= 2;
    }
    Err(LabError::PrecisionFailure {
        what: format!("floor of e^{{{m}^4}}"),
        achieved: 0.0,
    })
}

#[derive(Clone, Debug)]
pub struct ScheduleEntry {
    pub m: u32,
    pub n: Integer,
    pub lambda: Rational,
    pub mass: Rational,
    pub value: AtomValue,
    pub log2_f_b: LogValue,
    pub lower_bound: Rational,
}

#[derive(Clone, Debug)]
pub struct BlowupSchedule {
    entries: Vec<ScheduleEntry>,
    c: Rational,
    residual_mass: Rational,
    precision_bits: u32,
}

pub fn build_schedule(m_max: u32, precision_bits: u32) -> Result<BlowupSchedule> {
    build_schedule_with(m_max, precision_bits, default_residual_fraction())
}

pub fn build_schedule_with(m_max: u32, precision_bits: u32, residual: Rational) -> Result<BlowupSchedule> {
    if m_max == 0 {
        return Err(LabError::invalid("M_max must be >= 1"));
    }
    if residual < 0 || residual >= 1 {
        return Err(LabError::invalid("residual fraction must lie in [0, 1)"));
    }
    let view = KnotView::new(precision_bits)?;
    let p = precision_bits;
    let mut rows = Vec::with_capacity(m_max as usize);
    for m in 1..=m_max {
        let n = schedule_index(m)?;
        let lambda = log_nat_big(&n, p)?;
        let r = snap_pow(&lambda, -1, 3, p)?;
        let sixth = snap_pow(&lambda, 1, 6, p)?;
        let tk = view.threshold_knots(&n)?;
        let value = match &tk.dense {
            Some(d) => {
                let b = view.knot_position(KnotKind::B, n.to_u64().unwrap())?;
                AtomValue::Exact((Rational::from(&d.d + &d.s) / 2u32) - b)
            }
            None => AtomValue::Symbolic(tk.midpoint_offset()),
        };
        let log2_f_b = view.knot_logf(&KnotIndex::new(KnotKind::B, n.clone()))?;
        rows.push((m, n, lambda, r, sixth, value, log2_f_b));
    }
    let total_r: Rational = rows.iter().map(|row| row.3.clone()).sum();
    let c = (Rational::from(1) - &residual) / total_r;
    let entries = rows
        .into_iter()
        .map(|(m, n, lambda, r, sixth, value, log2_f_b)| ScheduleEntry {
            m,
            n,
            lambda,
            mass: Rational::from(&c * &r),
            value,
            log2_f_b,
            lower_bound: Rational::from(&c * &sixth),
        })
        .collect();
    Ok(BlowupSchedule {
        entries,
        c,
        residual_mass: residual,
        precision_bits,
    })
}

impl BlowupSchedule {
    pub fn m_max(&self) -> u32 {
        self.entries.len() as u32
    }

    pub fn entries(&self) -> &[ScheduleEntry] {
        &self.entries
    }

    pub fn c(&self) -> &Rational {
        &self.c
    }

    pub fn residual_mass(&self) -> &Rational {
        &self.residual_mass
    }

    pub fn precision_bits(&self) -> u32 {
        self.precision_bits
    }

    pub fn entry(&self, m: u32) -> Result<&ScheduleEntry> {
        if m == 0 || m > self.m_max() {
            return Err(LabError::invalid(format!("m = {m} outside the schedule 1..={}", self.m_max())));
        }
        Ok(&self.entries[m as usize - 1])
    }

    /// c·λ_{n_m}^{1/6}.
    pub fn blowup_lower_bound(&self, m: u32) -> Result<Rational> {
        Ok(self.entry(m)?.lower_bound.clone())
    }

    pub fn atom_list(&self) -> Result<AtomList> {
        let atoms = self
            .entries
            .iter()
            .map(|e| Atom {
                value: e.value.clone(),
                mass: e.mass.clone(),
            })
            .collect();
        AtomList::new(
            atoms,
            Atom {
                value: AtomValue::Exact(residual_value()),
                mass: self.residual_mass.clone(),
            },
        )
    }

    /// The mixture q₁F₁ + (1−q₁)F₂ with F₁ the paper density truncated at N.
    pub fn mixture_spec(&self, n_trunc: u32, q1: Rational) -> Result<MixtureSpec> {
        let f1 = PaperDensity::build(n_trunc, self.precision_bits)?;
        MixtureSpec::new(q1, f1, self.atom_list()?)
    }

    pub fn to_csv(&self) -> Result<String> {
        let digits = decimal_digits(self.precision_bits);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["m", "n_m", "mass", "log2_f_b", "lower_bound"])
            .map_err(csv_err)?;
        for e in &self.entries {
            w.write_record([
                e.m.to_string(),
                e.n.to_string(),
                decimal_string(&e.mass, digits),
                decimal_string(e.log2_f_b.log2mag(), digits),
                decimal_string(&e.lower_bound, digits),
            ])
            .map_err(csv_err)?;
        }
        w.write_record([
            "residual".to_string(),
            String::new(),
            decimal_string(&self.residual_mass, digits),
            String::new(),
            String::new(),
        ])
        .map_err(csv_err)?;
        let bytes = w.into_inner().map_err(|e| LabError::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn csv_err(e: csv::Error) -> LabError {
    LabError::invalid(format!("csv: {e}"))
}
