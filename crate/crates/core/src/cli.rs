//! Command-line front end for `subexp`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rug::Rational;

use crate::cline::{self, ClineParams, DEFAULT_QUAD_TOL};
use crate::convolution;
use crate::error::LabError;
use crate::mixture::{build_schedule, DEFAULT_M_MAX};
use crate::numerics::{decimal_digits, decimal_string, parse_rational, DEFAULT_PRECISION};
use crate::paper::{KnotKind, PaperDensity};
use crate::piecewise::PiecewisePoly;
use crate::probes::{self, dec, ProbeRow};
use crate::verify::{self, VerifyConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PRECISION: i32 = 3;
pub const EXIT_IO: i32 = 4;

const KEYS: &[&str] = &[
    "construction",
    "N",
    "M_max",
    "precision_bits",
    "alpha",
    "delta",
    "quad_tol",
    "x_max",
    "d",
    "out",
    "x",
    "t",
    "n",
    "n_max",
    "x0",
    "horizon",
    "k_max",
    "per_unit",
    "h_exp",
    "q1",
    "knot_file",
    "mode",
    "with",
];

const PAPER_PROBES: &[&str] = &[
    "long_tail_ratio",
    "subexp_ratio",
    "almost_decrease_scan",
    "knot_ratio_series",
    "local_tail_ratio",
    "i2_bound_check",
    "paper_middle_integral",
];
const CLINE_PROBES: &[&str] = &["almost_decrease_scan", "karamata_ratio", "cline_middle_integral"];
const MIXTURE_PROBES: &[&str] = &["blowup"];
const FILE_PROBES: &[&str] = &["long_tail_ratio", "subexp_ratio", "almost_decrease_scan", "local_tail_ratio"];

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Check(String),
    Precision(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
            CliError::Check(_) => EXIT_CHECK,
            CliError::Precision(_) => EXIT_PRECISION,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Check(m) | CliError::Precision(m) => m,
        }
    }
}

impl From<LabError> for CliError {
    fn from(e: LabError) -> Self {
        match e {
            LabError::PrecisionFailure { .. } => CliError::Precision(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(name = "subexp", version, about = "Constructions and probes for subexponential densities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// paper | cline | mixture | file:<path>
    #[arg(long, global = true)]
    construction: Option<String>,
    /// Truncation index N of the paper density
    #[arg(long = "n", global = true)]
    n_trunc: Option<String>,
    /// Number of blow-up atoms in the mixture schedule
    #[arg(long, global = true)]
    m_max: Option<String>,
    /// Bits used to snap transcendental constants (default 256)
    #[arg(long, global = true)]
    precision_bits: Option<String>,
    /// Cline exponential rate
    #[arg(long, global = true)]
    alpha: Option<String>,
    /// Cline oscillation amplitude, in (0, 1/2)
    #[arg(long, global = true)]
    delta: Option<String>,
    /// Relative quadrature tolerance for the Cline integrals
    #[arg(long, global = true)]
    quad_tol: Option<String>,
    /// Cline quadrature cutoff (default derived from the tolerance)
    #[arg(long, global = true)]
    x_max: Option<String>,
    /// Window width
    #[arg(long, global = true)]
    d: Option<String>,
    /// Output file (probe, convolve, verify, report) or directory (build)
    #[arg(long, global = true)]
    out: Option<String>,
    /// Flat `key = value` config file; flags and positionals override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a construction and write it with metadata
    Build {
        /// Construction, then key=value settings
        args: Vec<String>,
    },
    /// Run named probes and write CSV
    Probe {
        /// Construction, probe name(s), then key=value settings
        args: Vec<String>,
    },
    /// Self-convolve a piecewise-linear file (or convolve with `with=<file>`)
    Convolve {
        input: PathBuf,
        /// key=value settings
        args: Vec<String>,
    },
    /// Run the acceptance checks
    Verify {
        args: Vec<String>,
    },
    /// Run the default probe battery for every construction
    Report {
        args: Vec<String>,
    },
}

/// Merged settings: config file < positional key=value < flags.
#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        if !KEYS.contains(&key) {
            return Err(CliError::Usage(format!(
                "unknown key '{key}'; valid keys: {}",
                KEYS.join(", ")
            )));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn parse_file(text: &str) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn rational(&self, key: &str) -> CliResult<Option<Rational>> {
        self.get(key)
            .map(|v| parse_rational(v).map_err(|e| CliError::Usage(format!("{key}: {e}"))))
            .transpose()
    }

    fn f64_or(&self, key: &str, default: f64) -> CliResult<f64> {
        Ok(self.rational(key)?.map(|r| r.to_f64()).unwrap_or(default))
    }

    fn u32_or(&self, key: &str, default: u32) -> CliResult<u32> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Usage(format!("{key}: expected a nonnegative integer, got '{v}'"))),
        }
    }

    fn u64_list(&self, key: &str) -> CliResult<Option<Vec<u64>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|_| CliError::Usage(format!("{key}: expected integers, got '{s}'")))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn precision_bits(&self) -> CliResult<u32> {
        self.u32_or("precision_bits", DEFAULT_PRECISION)
    }

    fn cline_params(&self) -> CliResult<ClineParams> {
        let x_max = self.rational("x_max")?.map(|r| r.to_f64());
        Ok(ClineParams::new(
            self.f64_or("alpha", 1.0)?,
            self.f64_or("delta", 0.25)?,
            self.f64_or("quad_tol", DEFAULT_QUAD_TOL)?,
            x_max,
            self.precision_bits()?,
        )?)
    }
}

fn build_config(flags: &Flags, positional: &[String]) -> CliResult<(RunConfig, Vec<String>)> {
    let mut cfg = match &flags.config {
        Some(path) => RunConfig::parse_file(&std::fs::read_to_string(path).map_err(|e| io_err(path, e))?)?,
        None => RunConfig::default(),
    };
    let mut words = Vec::new();
    for arg in positional {
        match arg.split_once('=') {
            Some((k, v)) => cfg.set(k.trim(), v)?,
            None => words.push(arg.clone()),
        }
    }
    let pairs = [
        ("construction", &flags.construction),
        ("N", &flags.n_trunc),
        ("M_max", &flags.m_max),
        ("precision_bits", &flags.precision_bits),
        ("alpha", &flags.alpha),
        ("delta", &flags.delta),
        ("quad_tol", &flags.quad_tol),
        ("x_max", &flags.x_max),
        ("d", &flags.d),
        ("out", &flags.out),
    ];
    for (k, v) in pairs {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    Ok((cfg, words))
}

#[derive(Clone, Debug, PartialEq)]
enum Construction {
    Paper,
    Cline,
    Mixture,
    File(PathBuf),
}

fn parse_construction(s: &str) -> CliResult<Construction> {
    match s {
        "paper" => Ok(Construction::Paper),
        "cline" => Ok(Construction::Cline),
        "mixture" => Ok(Construction::Mixture),
        other => match other.strip_prefix("file:") {
            Some(p) if !p.is_empty() => Ok(Construction::File(PathBuf::from(p))),
            _ => Err(CliError::Usage(format!(
                "unknown construction '{other}'; expected paper, cline, mixture or file:<path>"
            ))),
        },
    }
}

/// Takes the construction from the first word unless given by key.
fn take_construction(cfg: &RunConfig, words: &mut Vec<String>) -> CliResult<Construction> {
    if let Some(c) = cfg.get("construction") {
        return parse_construction(c);
    }
    if words.is_empty() {
        return Err(CliError::Usage("missing construction (paper, cline, mixture, file:<path>)".into()));
    }
    parse_construction(&words.remove(0))
}

/// A point on the paper density: decimal, or a knot label like `c10`,
/// `b9+1` or `a4-1/2`.
fn parse_point(s: &str) -> CliResult<(Rational, Option<(KnotKind, u64)>)> {
    let s = s.trim();
    let usage = || CliError::Usage(format!("cannot parse point '{s}'"));
    let first = s.chars().next().ok_or_else(usage)?;
    if first.is_ascii_alphabetic() {
        let split = s.find(['+', '-']).unwrap_or(s.len());
        let (label, offset) = s.split_at(split);
        let kind: KnotKind = label[..1].parse().map_err(|_| usage())?;
        let n: u64 = label[1..].parse().map_err(|_| usage())?;
        let off = if offset.is_empty() {
            Rational::new()
        } else {
            parse_rational(offset).map_err(|_| usage())?
        };
        Ok((off, Some((kind, n))))
    } else {
        Ok((parse_rational(s).map_err(|_| usage())?, None))
    }
}

struct Point {
    label: String,
    x: Rational,
    knot: Option<(KnotKind, u64)>,
}

fn points(cfg: &RunConfig, default: &str) -> CliResult<Vec<Point>> {
    cfg.get("x")
        .unwrap_or(default)
        .split(',')
        .map(|s| {
            let (x, knot) = parse_point(s)?;
            Ok(Point {
                label: s.trim().to_string(),
                x,
                knot,
            })
        })
        .collect()
}

fn resolve(pd: &PaperDensity, pt: &Point) -> CliResult<Rational> {
    match pt.knot {
        Some((kind, n)) => Ok(pd.knot(kind, n)? + &pt.x),
        None => Ok(pt.x.clone()),
    }
}

/// Truncation N: the configured value, or large enough for every referenced knot.
fn paper_n(cfg: &RunConfig, pts: &[Point], extra: u64) -> CliResult<u32> {
    if let Some(n) = cfg.get("N") {
        return n.parse().map_err(|_| CliError::Usage(format!("N: expected an integer, got '{n}'")));
    }
    let need = pts
        .iter()
        .filter_map(|p| p.knot.map(|(k, n)| if k == KnotKind::A { n.saturating_sub(1) } else { n }))
        .chain([extra, 3])
        .max()
        .unwrap();
    Ok(need as u32)
}

fn paper_rows(cfg: &RunConfig, probe: &str) -> CliResult<Vec<ProbeRow>> {
    let p = cfg.precision_bits()?;
    match probe {
        "long_tail_ratio" | "subexp_ratio" | "local_tail_ratio" => {
            let pts = points(cfg, "c10")?;
            let pd = PaperDensity::build(paper_n(cfg, &pts, 0)?, p)?;
            let f = pd.normalized();
            let mut rows = Vec::new();
            let mut devs = Vec::new();
            for pt in &pts {
                let x = resolve(&pd, pt)?;
                let row = match probe {
                    "long_tail_ratio" => {
                        let t = cfg.rational("t")?.unwrap_or_else(|| Rational::from(1));
                        let r = probes::long_tail_ratio(&f, &x, &t)?;
                        ProbeRow::new(probe, &pt.label, dec(&r, p)).aux("t", dec(&t, p))
                    }
                    "subexp_ratio" => {
                        let r = probes::subexp_ratio_scaled(pd.dense(), pd.mass(), &x)?;
                        devs.push(Rational::from(&r - 1u32).abs());
                        ProbeRow::new(probe, &pt.label, dec(&r, p))
                    }
                    _ => {
                        let d = cfg.rational("d")?.unwrap_or_else(|| Rational::from(1));
                        let r = probes::local_tail_ratio(&f, &x, &d)?;
                        ProbeRow::new(probe, &pt.label, dec(&r, p)).aux("d", dec(&d, p))
                    }
                };
                rows.push(row.aux("N", pd.n_trunc().to_string()));
            }
            if probe == "subexp_ratio" && devs.len() > 1 {
                let improving = devs.windows(2).all(|w| w[1] < w[0]);
                rows.push(
                    ProbeRow::new("subexp_ratio_trend", pts.iter().map(|p| p.label.as_str()).collect::<Vec<_>>().join(";"), improving.to_string())
                        .aux("abs_dev", devs.iter().map(|d| dec(d, 64)).collect::<Vec<_>>().join(";")),
                );
            }
            Ok(rows)
        }
        "almost_decrease_scan" => {
            let horizon = cfg.u32_or("horizon", 40)? as u64;
            if cfg.get("mode") == Some("knots") {
                let view = crate::paper::KnotView::new(p)?;
                let s = probes::almost_decrease_scan_knots(&view, 1, horizon)?;
                return Ok(vec![ProbeRow::new(probe, format!("knots,n<={horizon}"), s.sup_ratio.to_string())
                    .aux("witness_x", s.x.to_string())
                    .aux("witness_y", s.y.to_string())
                    .flagged(s.lossy)]);
            }
            let n = cfg.get("N").map(|_| paper_n(cfg, &[], 0)).transpose()?.unwrap_or(horizon as u32);
            let pd = PaperDensity::build(n, p)?;
            let x0 = cfg.rational("x0")?.unwrap_or_default();
            let s = probes::almost_decrease_scan_dense(pd.dense(), &x0)?;
            Ok(vec![ProbeRow::new(probe, format!("dense,N={n}"), dec(&s.sup_ratio, p))
                .aux("witness_x", dec(&s.x, p))
                .aux("witness_y", dec(&s.y, p))])
        }
        "knot_ratio_series" => {
            let n_max = cfg.u32_or("n_max", 40)? as u64;
            let pd = PaperDensity::build(n_max as u32, p)?;
            Ok(probes::knot_ratio_series(&pd, n_max)?
                .into_iter()
                .map(|r| ProbeRow::new(probe, r.n.to_string(), dec(&r.ratio, p)).aux("equals_lambda", (r.ratio == r.lambda).to_string()))
                .collect())
        }
        "i2_bound_check" => {
            let ns = cfg.u64_list("n")?.unwrap_or_else(|| vec![5, 10, 15]);
            let pd = PaperDensity::build(paper_n(cfg, &[], *ns.iter().max().unwrap())?, p)?;
            ns.iter()
                .map(|&n| {
                    let c = probes::i2_bound_check(&pd, n)?;
                    Ok(ProbeRow::new(probe, n.to_string(), dec(&c.i2, p))
                        .aux("bound", dec(&c.bound, p))
                        .aux("m_n", c.m.to_string())
                        .aux("pass", c.pass.to_string())
                        .aux("unnormalized_bound", format!("2^{}", c.unnormalized_exponent)))
                })
                .collect()
        }
        "paper_middle_integral" => {
            let ns = cfg.u64_list("n")?.unwrap_or_else(|| vec![10]);
            let pd = PaperDensity::build(paper_n(cfg, &[], *ns.iter().max().unwrap())?, p)?;
            ns.iter()
                .map(|&n| {
                    let x = pd.knot(KnotKind::C, n)?;
                    let v = probes::paper_middle_integral(&pd, n, &x)?;
                    Ok(ProbeRow::new(probe, format!("c{n}"), dec(&v, p)))
                })
                .collect()
        }
        other => Err(unknown_probe(other, PAPER_PROBES)),
    }
}

fn cline_rows(cfg: &RunConfig, probe: &str) -> CliResult<Vec<ProbeRow>> {
    let params = cfg.cline_params()?;
    match probe {
        "almost_decrease_scan" => {
            let k_max = cfg.u32_or("k_max", 8)?;
            let s = probes::almost_decrease_scan_cline(&params, k_max, cfg.u32_or("per_unit", 4)?)?;
            let mut row = ProbeRow::new(probe, format!("k<={k_max}"), s.sup_ratio.to_string())
                .aux("witness_x", s.x.to_string_radix(10, Some(20)))
                .aux("witness_y", s.y.to_string_radix(10, Some(20)))
                .flagged(s.lossy);
            for (k, v) in &s.even_to_odd_anchor {
                row = row.aux(&format!("even_to_odd_anchor_k{k}"), v.to_string());
            }
            Ok(vec![row])
        }
        "karamata_ratio" => cfg
            .get("x")
            .unwrap_or("100,1000,10000")
            .split(',')
            .map(|s| {
                let x = parse_rational(s).map_err(|e| CliError::Usage(e.to_string()))?.to_f64();
                let r = cline::karamata_ratio(x, &params)?;
                Ok(ProbeRow::new(probe, s.trim(), format!("{:.15e}", r.value)).aux("error", format!("{:.3e}", r.error)))
            })
            .collect(),
        "cline_middle_integral" => {
            let h_exp = cfg.f64_or("h_exp", 0.3)?;
            let xs: Vec<(String, f64)> = match cfg.get("x") {
                Some(list) => list
                    .split(',')
                    .map(|s| Ok((s.trim().to_string(), parse_rational(s).map_err(|e| CliError::Usage(e.to_string()))?.to_f64())))
                    .collect::<CliResult<_>>()?,
                None => (3..=6)
                    .map(|k| (format!("e^{k}pi-1"), cline::anchor(k, 64).to_f64()))
                    .collect(),
            };
            xs.into_iter()
                .map(|(label, x)| {
                    let m = cline::cline_middle_integral(x, h_exp, &params)?;
                    Ok(ProbeRow::new(probe, label, m.value.to_string())
                        .aux("h_exp", format!("{h_exp}"))
                        .aux("rel_err", format!("{:.3e}", m.rel_err))
                        .flagged(m.value.is_lossy()))
                })
                .collect()
        }
        other => Err(unknown_probe(other, CLINE_PROBES)),
    }
}

fn mixture_rows(cfg: &RunConfig, probe: &str) -> CliResult<Vec<ProbeRow>> {
    if probe != "blowup" {
        return Err(unknown_probe(probe, MIXTURE_PROBES));
    }
    let p = cfg.precision_bits()?;
    let schedule = build_schedule(cfg.u32_or("M_max", DEFAULT_M_MAX)?, p)?;
    let q1 = cfg.rational("q1")?.unwrap_or_else(|| Rational::from((1, 2)));
    let spec = schedule.mixture_spec(cfg.u32_or("N", 3)?, q1)?;
    let d = cfg.rational("d")?.unwrap_or_else(|| Rational::from(1));
    Ok(probes::mixture_blowup_probe(&spec, &schedule, &d)?)
}

fn load_piecewise(path: &Path) -> CliResult<PiecewisePoly> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(PiecewisePoly::from_text(&text)?)
}

fn file_rows(cfg: &RunConfig, path: &Path, probe: &str) -> CliResult<Vec<ProbeRow>> {
    let raw = load_piecewise(path)?;
    let (f, _) = raw.normalize()?;
    let p = cfg.precision_bits()?;
    let xs = || -> CliResult<Vec<(String, Rational)>> {
        cfg.get("x")
            .ok_or_else(|| CliError::Usage("file probes need x=<decimal list>".into()))?
            .split(',')
            .map(|s| Ok((s.trim().to_string(), parse_rational(s).map_err(|e| CliError::Usage(e.to_string()))?)))
            .collect()
    };
    match probe {
        "long_tail_ratio" => {
            let t = cfg.rational("t")?.unwrap_or_else(|| Rational::from(1));
            xs()?.into_iter().map(|(l, x)| Ok(ProbeRow::new(probe, l, dec(&probes::long_tail_ratio(&f, &x, &t)?, p)))).collect()
        }
        "subexp_ratio" => xs()?.into_iter().map(|(l, x)| Ok(ProbeRow::new(probe, l, dec(&probes::subexp_ratio(&f, &x)?, p)))).collect(),
        "local_tail_ratio" => {
            let d = cfg.rational("d")?.unwrap_or_else(|| Rational::from(1));
            xs()?.into_iter().map(|(l, x)| Ok(ProbeRow::new(probe, l, dec(&probes::local_tail_ratio(&f, &x, &d)?, p)))).collect()
        }
        "almost_decrease_scan" => {
            let x0 = cfg.rational("x0")?.unwrap_or_else(|| f.lo().clone());
            let s = probes::almost_decrease_scan_dense(&f, &x0)?;
            Ok(vec![ProbeRow::new(probe, dec(&x0, p), dec(&s.sup_ratio, p))
                .aux("witness_x", dec(&s.x, p))
                .aux("witness_y", dec(&s.y, p))])
        }
        other => Err(unknown_probe(other, FILE_PROBES)),
    }
}

fn unknown_probe(name: &str, valid: &[&str]) -> CliError {
    CliError::Usage(format!("unknown probe '{name}'; valid probes: {}", valid.join(", ")))
}

fn probe_rows(cfg: &RunConfig, construction: &Construction, probe: &str) -> CliResult<Vec<ProbeRow>> {
    match construction {
        Construction::Paper => paper_rows(cfg, probe),
        Construction::Cline => cline_rows(cfg, probe),
        Construction::Mixture => mixture_rows(cfg, probe),
        Construction::File(path) => file_rows(cfg, path, probe),
    }
}

fn emit(cfg: &RunConfig, text: &str, stdout: &mut dyn Write) -> CliResult<()> {
    match cfg.get("out") {
        Some(path) => {
            let path = Path::new(path);
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
            std::fs::write(path, text).map_err(|e| io_err(path, e))
        }
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(e.to_string())),
    }
}

fn json_string(map: BTreeMap<&str, String>) -> String {
    let obj: serde_json::Map<String, serde_json::Value> = map
        .into_iter()
        .map(|(k, v)| (k.to_string(), serde_json::Value::String(v)))
        .collect();
    let mut s = serde_json::to_string_pretty(&serde_json::Value::Object(obj)).expect("json");
    s.push('\n');
    s
}

fn write_file(dir: &Path, name: &str, text: &str) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

fn cmd_build(cfg: &RunConfig, mut words: Vec<String>, stdout: &mut dyn Write) -> CliResult<()> {
    let construction = take_construction(cfg, &mut words)?;
    if let Some(w) = words.first() {
        return Err(CliError::Usage(format!("unexpected argument '{w}'")));
    }
    let dir = PathBuf::from(cfg.get("out").unwrap_or("build"));
    let p = cfg.precision_bits()?;
    let digits = decimal_digits(p);
    let written = match construction {
        Construction::Paper => {
            let n = paper_n(cfg, &[], 0)?;
            let pd = PaperDensity::build(n, p)?;
            let knots = write_file(&dir, &format!("paper_N{n}.knots"), &pd.dense().to_text(&verify::paper_header(&pd)))?;
            let meta = BTreeMap::from([
                ("construction", "paper".to_string()),
                ("N", n.to_string()),
                ("precision_bits", p.to_string()),
                ("segments", pd.dense().num_segments().to_string()),
                ("mass", decimal_string(pd.mass(), digits)),
                ("support_top", pd.dense().hi().to_string()),
                ("omitted_tail_bound", pd.omitted_tail_bound().to_string()),
            ]);
            let json = write_file(&dir, &format!("paper_N{n}.json"), &json_string(meta))?;
            vec![knots, json]
        }
        Construction::Cline => {
            let params = cfg.cline_params()?;
            let n = cline::normalizers(&params)?;
            let meta = BTreeMap::from([
                ("construction", "cline".to_string()),
                ("alpha", format!("{}", params.alpha())),
                ("delta", format!("{}", params.delta())),
                ("quad_tol", format!("{:e}", params.quad_tol())),
                ("x_max", format!("{}", params.x_max())),
                ("a", format!("{:.17e}", n.a)),
                ("a_rel_err", format!("{:.3e}", n.a_rel_err)),
                ("b", format!("{:.17e}", n.b)),
                ("b_rel_err", format!("{:.3e}", n.b_rel_err)),
                ("tail_bound", format!("{:.3e}", n.tail_bound)),
            ]);
            vec![write_file(&dir, "cline.json", &json_string(meta))?]
        }
        Construction::Mixture => {
            let m = cfg.u32_or("M_max", DEFAULT_M_MAX)?;
            let s = build_schedule(m, p)?;
            let csv = write_file(&dir, &format!("mixture_M{m}.csv"), &s.to_csv()?)?;
            let meta = BTreeMap::from([
                ("construction", "mixture".to_string()),
                ("M_max", m.to_string()),
                ("precision_bits", p.to_string()),
                ("c", decimal_string(s.c(), digits)),
                ("residual_mass", decimal_string(s.residual_mass(), digits)),
                ("residual_value", "1".to_string()),
                ("q1", cfg.get("q1").unwrap_or("1/2").to_string()),
            ]);
            let json = write_file(&dir, &format!("mixture_M{m}.json"), &json_string(meta))?;
            vec![csv, json]
        }
        Construction::File(path) => {
            let f = load_piecewise(&path)?;
            let (_, mass) = f.normalize()?;
            let meta = BTreeMap::from([
                ("construction", format!("file:{}", path.display())),
                ("segments", f.num_segments().to_string()),
                ("mass", decimal_string(&mass, digits)),
            ]);
            vec![write_file(&dir, "file.json", &json_string(meta))?]
        }
    };
    for w in written {
        writeln!(stdout, "wrote {}", w.display()).map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(())
}

fn cmd_probe(cfg: &RunConfig, mut words: Vec<String>, stdout: &mut dyn Write) -> CliResult<()> {
    let construction = take_construction(cfg, &mut words)?;
    if words.is_empty() {
        return Err(CliError::Usage("missing probe name".into()));
    }
    let mut rows = Vec::new();
    for probe in &words {
        rows.extend(probe_rows(cfg, &construction, probe)?);
    }
    emit(cfg, &probes::csv_string(&rows), stdout)
}

fn cmd_convolve(cfg: &RunConfig, input: &Path, stdout: &mut dyn Write) -> CliResult<()> {
    let p = load_piecewise(input)?;
    let q = match cfg.get("with") {
        Some(other) => load_piecewise(Path::new(other))?,
        None => p.clone(),
    };
    let c = convolution::conv_linear_exact(&p, &q)?;
    let header = vec![format!("convolution of {}", input.display())];
    emit(cfg, &c.to_text(&header), stdout)
}

fn cmd_verify(cfg: &RunConfig, stdout: &mut dyn Write) -> CliResult<()> {
    let vcfg = VerifyConfig {
        precision_bits: cfg.precision_bits()?,
        knot_file: cfg.get("knot_file").map(PathBuf::from),
    };
    let report = verify::run_verify(&vcfg);
    write!(stdout, "{}", report.table()).map_err(|e| CliError::Io(e.to_string()))?;
    if let Some(path) = cfg.get("out") {
        let path = Path::new(path);
        std::fs::write(path, probes::csv_string(&report.rows)).map_err(|e| io_err(path, e))?;
    }
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("failed checks: {}", failed.join(", "))))
    }
}

fn cmd_report(cfg: &RunConfig, stdout: &mut dyn Write) -> CliResult<()> {
    let mut rows = Vec::new();
    let paper = |k: &str, v: &str| -> RunConfig {
        let mut c = cfg.clone();
        c.values.insert(k.to_string(), v.to_string());
        c
    };
    rows.extend(paper_rows(&paper("x", "a10+1,b10+1,c10+1"), "long_tail_ratio")?);
    rows.extend(paper_rows(&paper("x", "c10,c20,c30"), "subexp_ratio")?);
    rows.extend(paper_rows(&paper("x", "c10"), "local_tail_ratio")?);
    rows.extend(paper_rows(cfg, "almost_decrease_scan")?);
    rows.extend(paper_rows(cfg, "knot_ratio_series")?);
    rows.extend(paper_rows(cfg, "i2_bound_check")?);
    rows.extend(paper_rows(cfg, "paper_middle_integral")?);
    for probe in CLINE_PROBES {
        rows.extend(cline_rows(cfg, probe)?);
    }
    rows.extend(mixture_rows(cfg, "blowup")?);
    emit(cfg, &probes::csv_string(&rows), stdout)
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Build { args } => {
            let (cfg, words) = build_config(&cli.flags, &args)?;
            cmd_build(&cfg, words, stdout)
        }
        Command::Probe { args } => {
            let (cfg, words) = build_config(&cli.flags, &args)?;
            cmd_probe(&cfg, words, stdout)
        }
        Command::Convolve { input, args } => {
            let (cfg, words) = build_config(&cli.flags, &args)?;
            if let Some(w) = words.first() {
                return Err(CliError::Usage(format!("unexpected argument '{w}'")));
            }
            cmd_convolve(&cfg, &input, stdout)
        }
        Command::Verify { args } => {
            let (cfg, words) = build_config(&cli.flags, &args)?;
            if let Some(w) = words.first() {
                return Err(CliError::Usage(format!("unexpected argument '{w}'")));
            }
            cmd_verify(&cfg, stdout)
        }
        Command::Report { args } => {
            let (cfg, words) = build_config(&cli.flags, &args)?;
            if let Some(w) = words.first() {
                return Err(CliError::Usage(format!("unexpected argument '{w}'")));
            }
            cmd_report(&cfg, stdout)
        }
    }
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return EXIT_USAGE;
            }
            let _ = write!(stdout, "{e}");
            return EXIT_OK;
        }
    };
    match dispatch(cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut argv = vec!["subexp"];
        argv.extend_from_slice(args);
        let code = run(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn point_labels() {
        let (off, knot) = parse_point("b9+1").unwrap();
        assert_eq!(off, 1);
        assert_eq!(knot, Some((KnotKind::B, 9)));
        let (x, knot) = parse_point("2.5").unwrap();
        assert_eq!(x, Rational::from((5, 2)));
        assert!(knot.is_none());
        assert!(parse_point("q3").is_err());
    }

    #[test]
    fn unknown_key_and_probe_are_usage_errors() {
        let (code, _, err) = run_capture(&["probe", "paper", "subexp_ratio", "bogus=1"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("unknown key"));
        let (code, _, err) = run_capture(&["probe", "paper", "nope"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("valid probes"));
    }

    #[test]
    fn knot_ratio_series_rows() {
        let (code, out, _) = run_capture(&["probe", "paper", "knot_ratio_series", "n_max=40"]);
        assert_eq!(code, EXIT_OK);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 40);
        assert!(lines[39].starts_with("knot_ratio_series,40,3.7135"));
    }

    #[test]
    fn subexp_probe_has_trend_row() {
        let (code, out, _) = run_capture(&["probe", "paper", "subexp_ratio", "x=c10,c20,c30"]);
        assert_eq!(code, EXIT_OK, "{out}");
        assert_eq!(out.lines().count(), 5);
        assert!(out.lines().last().unwrap().starts_with("subexp_ratio_trend,c10;c20;c30,true"));
    }

    #[test]
    fn mixture_probe_rows() {
        let (code, out, _) = run_capture(&["probe", "mixture", "blowup", "d=1", "M_max=6"]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(out.lines().count(), 7);
        assert_eq!(out.lines().filter(|l| l.contains("symbolic_lower_bound")).count(), 5);
    }

    #[test]
    fn config_file_is_flat_and_strict() {
        let cfg = RunConfig::parse_file("# comment\nN = 3\nprecision_bits=128\n").unwrap();
        assert_eq!(cfg.get("N"), Some("3"));
        assert!(RunConfig::parse_file("what = 1").is_err());
        assert!(RunConfig::parse_file("N 3").is_err());
    }
}
