use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pitchfork")
}

fn write_spec(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run(spec: &Path, out: &Path, cmd: &str, extra: &[&str]) -> Output {
    Command::new(bin())
        .arg("--spec")
        .arg(spec)
        .arg("--out")
        .arg(out)
        .args(extra)
        .arg(cmd)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write_spec(dir.path(), "ok.json", r#"{"family": {"kind": "canonical"}, "mu": [0.02]}"#);
    assert_eq!(run(&ok, &dir.path().join("a"), "check", &[]).status.code(), Some(0));

    let before = write_spec(
        dir.path(),
        "before.json",
        r#"{"family": {"kind": "canonical"}, "mu": [-0.02], "conditions": ["repelling-after"]}"#,
    );
    let o = run(&before, &dir.path().join("b"), "check", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("repelling-after"));

    let missing = write_spec(dir.path(), "missing.json", r#"{"family": {"kind": "canonical"}}"#);
    let o = run(&missing, &dir.path().join("c"), "check", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mu"));

    let typo = write_spec(dir.path(), "typo.json", r#"{"family": {"kind": "canonical"}, "mu": [0.02], "alpah": 0.2}"#);
    assert_eq!(run(&typo, &dir.path().join("d"), "check", &[]).status.code(), Some(1));

    let no_spec = Command::new(bin()).arg("check").output().unwrap();
    assert_eq!(no_spec.status.code(), Some(1));
}

#[test]
fn solve_reports_branches_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "s.json", r#"{"family": {"kind": "canonical", "rotation": {"angle": 0.4}}, "mu": [0.01]}"#);
    let out = dir.path().join("out");
    let o = run(&spec, &out, "solve", &[]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("plus branch: mean offset 0.100000"), "{text}");
    assert!(text.contains("minus branch: mean offset -0.100000"), "{text}");
    let csv = fs::read_to_string(out.join("plus_mu0.01.csv")).unwrap();
    assert!(csv.starts_with("node,y1,y2,value"));
    assert_eq!(csv.lines().count(), 257);

    let at_threshold = write_spec(dir.path(), "z.json", r#"{"family": {"kind": "canonical"}, "mu": [0.0]}"#);
    let o = run(&at_threshold, &dir.path().join("z"), "solve", &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no bifurcation"));
}

#[test]
fn reversing_solve_reports_the_swap() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "r.json",
        r#"{"family": {"kind": "canonical-reversing", "rotation": {"angle": 0.4}}, "mu": [0.02], "mesh_resolution": 64}"#,
    );
    let o = run(&spec, &dir.path().join("out"), "solve", &[]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("image of the plus branch vs minus branch"));
}

#[test]
fn scan_marks_branches_after_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "scan.json",
        r#"{"family": {"kind": "canonical"}, "mu": {"start": -0.04, "stop": 0.04, "step": 0.002}, "mesh_resolution": 32}"#,
    );
    let out = dir.path().join("out");
    assert_eq!(run(&spec, &out, "scan", &[]).status.code(), Some(0));
    let mut rdr = csv::Reader::from_path(out.join("scan.csv")).unwrap();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let mu: f64 = rec[0].parse().unwrap();
        let has = &rec[1] == "true";
        assert_eq!(has, mu > 1e-12, "mu = {mu}");
        if has {
            let plus: f64 = rec[2].parse().unwrap();
            let minus: f64 = rec[3].parse().unwrap();
            assert!((plus - mu.sqrt()).abs() < 1e-8 && (minus + mu.sqrt()).abs() < 1e-8);
        }
        rows += 1;
    }
    assert_eq!(rows, 41);

    let empty = write_spec(
        dir.path(),
        "empty.json",
        r#"{"family": {"kind": "canonical"}, "mu": {"start": 0.01, "stop": 0.0, "step": 0.001}}"#,
    );
    assert_eq!(run(&empty, &dir.path().join("e"), "scan", &[]).status.code(), Some(1));
}

#[test]
fn gronwall_flags_violations() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "g.json",
        r#"{"family": {"kind": "canonical"}, "gronwall": {"params": [{"s": 1, "sigma": 0, "nu": 0}, {"s": 0.1, "sigma": 0.3, "nu": 0}], "times": [1]}}"#,
    );
    let out = dir.path().join("out");
    assert_eq!(run(&spec, &out, "gronwall", &[]).status.code(), Some(0));
    let mut rdr = csv::Reader::from_path(out.join("gronwall.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(&rows[0][col("ineq_ok")], "true");
    let e0: f64 = rows[0][col("ref_e0")].parse().unwrap();
    assert!((e0 - (-2.0f64).exp()).abs() < 1e-15);
    assert_eq!(&rows[1][col("ineq_ok")], "false");
}

#[test]
fn outputs_are_deterministic_and_listed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "d.json",
        r#"{"family": {"kind": "canonical", "ambient_dim": 3, "rotation": {"axis": [1, 2, 2], "angle": 0.7}},
            "mu": [-0.02, 0.02], "mesh_resolution": 42, "simulate": {"radii": [0.1, -0.05], "count": 2, "iterations": 50}}"#,
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        for cmd in ["check", "simulate", "solve"] {
            let o = run(&spec, out, cmd, &["--seed", "11", "--threads", "1"]);
            assert!(o.status.code().unwrap() <= 3, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        }
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let commands = manifest["commands"].as_object().unwrap();
    assert_eq!(commands.len(), 3);
    let mut listed = 0;
    for rec in commands.values() {
        for f in rec["outputs"].as_array().unwrap() {
            let name = f.as_str().unwrap();
            assert!(a.join(name).is_file());
            assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
            listed += 1;
        }
    }
    let on_disk = fs::read_dir(&a).unwrap().count() - 1;
    assert_eq!(listed, on_disk);
}

#[test]
fn plugin_family_over_json_lines() {
    if Command::new("python3").arg("--version").output().is_err() {
        eprintln!("python3 not available; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    // r -> (1 + mu) r - r^3 along rays, no rotation
    let script = r#"
import json, math, sys
for line in sys.stdin:
    req = json.loads(line)
    x, mu = req["x"], req["mu"]
    rho = math.sqrt(sum(v * v for v in x))
    r = rho - 1.0
    s = 1.0 + (1.0 + mu) * r - r ** 3
    print(json.dumps({"x": [v * s / rho for v in x]}), flush=True)
"#;
    fs::write(dir.path().join("cubic.py"), script).unwrap();
    write_spec(
        dir.path(),
        "p.json",
        r#"{"family": {"kind": "plugin", "command": ["python3", "cubic.py"], "ambient_dim": 2, "mu_range": [-0.04, 0.04]},
            "mu": [0.02], "mesh_resolution": 16, "radial_intervals": 8, "mu_star": 0.0}"#,
    );
    let o = Command::new(bin())
        .current_dir(dir.path())
        .args(["--spec", "p.json", "--out", "out", "solve"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("mean offset 0.141421"), "{}", stdout(&o));
}
