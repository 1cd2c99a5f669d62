use std::path::Path;
use std::process::{Command, Output};

fn subexp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subexp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

/// Value column of the rows produced by `probe`.
fn values(csv: &str, probe: &str) -> Vec<String> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|cols| cols[0] == probe)
        .map(|cols| cols[2].to_string())
        .collect()
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

#[test]
fn build_writes_knots_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let out = subexp(&["build", "paper", "N=3", &format!("out={}", path_str(dir.path()))]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let knots = std::fs::read_to_string(dir.path().join("paper_N3.knots")).unwrap();
    assert!(knots.lines().any(|l| l == "# construction = paper"));
    assert_eq!(knots.lines().filter(|l| l.starts_with("knot ")).count(), 11);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("paper_N3.json")).unwrap()).unwrap();
    assert_eq!(meta["segments"], "10");
    assert!(meta["mass"].as_str().unwrap().starts_with("4.529"));
}

#[test]
fn loaded_knot_file_probes_like_the_construction() {
    let dir = tempfile::tempdir().unwrap();
    let out_arg = format!("out={}", path_str(dir.path()));
    assert_eq!(subexp(&["build", "paper", "N=6", &out_arg]).status.code(), Some(0));
    let file = format!("file:{}", path_str(&dir.path().join("paper_N6.knots")));
    let xs = "x=3,17.25,600,5000.5,70000";
    for probe in ["long_tail_ratio", "subexp_ratio", "local_tail_ratio"] {
        let built = subexp(&["probe", "paper", probe, xs, "N=6"]);
        let loaded = subexp(&["probe", &file, probe, xs]);
        assert_eq!(built.status.code(), Some(0), "{}", text(&built.stderr));
        assert_eq!(loaded.status.code(), Some(0), "{}", text(&loaded.stderr));
        let (b, l) = (values(&text(&built.stdout), probe), values(&text(&loaded.stdout), probe));
        assert_eq!(b.len(), 5);
        assert_eq!(b, l, "{probe}");
    }
}

#[test]
fn convolve_reports_exact_segments() {
    let dir = tempfile::tempdir().unwrap();
    let unit = dir.path().join("unit.knots");
    std::fs::write(&unit, "knot 0 1\nknot 1 1\n").unwrap();
    let out = subexp(&["convolve", path_str(&unit)]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let body: Vec<String> = text(&out.stdout).lines().filter(|l| !l.starts_with('#')).map(String::from).collect();
    assert_eq!(body, ["knot 0 0", "knot 1 1", "knot 2 0"]);
}

#[test]
fn tampered_knot_file_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let out_arg = format!("out={}", path_str(dir.path()));
    assert_eq!(subexp(&["build", "paper", "N=10", &out_arg]).status.code(), Some(0));
    let path = dir.path().join("paper_N10.knots");
    let good = std::fs::read_to_string(&path).unwrap();
    let knot_arg = format!("knot_file={}", path_str(&path));
    assert_eq!(subexp(&["verify", &knot_arg]).status.code(), Some(0));

    // Bump the value of one interior knot.
    let mut lines: Vec<String> = good.lines().map(String::from).collect();
    let idx = lines.iter().position(|l| l.starts_with("knot ")).unwrap() + 5;
    let mut parts: Vec<String> = lines[idx].split(' ').map(String::from).collect();
    parts[2] = format!("{}1", parts[2]);
    lines[idx] = parts.join(" ");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();

    let out = subexp(&["verify", &knot_arg]);
    assert_eq!(out.status.code(), Some(1));
    let table = text(&out.stdout);
    let row = table.lines().find(|l| l.starts_with("knot_file_integrity")).unwrap();
    assert!(row.contains("FAIL"), "{row}");
    assert!(row.contains("knot value"), "{row}");
    assert!(text(&out.stderr).contains("knot_file_integrity"));
}

#[test]
fn exit_codes_follow_the_error_class() {
    assert_eq!(subexp(&["probe", "paper", "subexp_ratio", "bogus=1"]).status.code(), Some(2));
    assert_eq!(subexp(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(subexp(&["probe", "paper", "long_tail_ratio", "x=c3", "precision_bits=16"]).status.code(), Some(2));
    assert_eq!(subexp(&["probe", "file:/nonexistent/x.knots", "subexp_ratio", "x=1"]).status.code(), Some(4));
    assert_eq!(subexp(&["verify", "precision_bits=32"]).status.code(), Some(1));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# run\nn_max = 12\n").unwrap();
    let cfg = path_str(&cfg);
    let from_file = subexp(&["--config", cfg, "probe", "paper", "knot_ratio_series"]);
    assert_eq!(text(&from_file.stdout).lines().count(), 12);
    let overridden = subexp(&["--config", cfg, "probe", "paper", "knot_ratio_series", "n_max=5"]);
    assert_eq!(text(&overridden.stdout).lines().count(), 5);
}
