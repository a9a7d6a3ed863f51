use std::path::Path;
use std::process::{Command, Output};
use std::sync::OnceLock;

use elasto::raster::read_raster_f64;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_elasto");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn elasto")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small pair plus a basis learned at the same size.
struct Shared {
    dir: TempDir,
}

impl Shared {
    fn sim(&self) -> std::path::PathBuf {
        self.dir.path().join("sim")
    }
    fn modes(&self) -> std::path::PathBuf {
        self.dir.path().join("modes")
    }
}

fn shared() -> &'static Shared {
    static SHARED: OnceLock<Shared> = OnceLock::new();
    SHARED.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let sim = dir.path().join("sim");
        let modes = dir.path().join("modes");
        ok(&["simulate", "--out", s(&sim), "--rows", "128", "--lines", "32", "--seed", "3"]);
        ok(&[
            "learn-modes", "--synthetic", "40", "--rows", "128", "--lines", "32", "--search-range", "12", "--out",
            s(&modes), "--seed", "1",
        ]);
        Shared { dir }
    })
}

fn read_raster(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn identical_frames_give_near_zero_strain() {
    let sh = shared();
    let out = TempDir::new().unwrap();
    let pre = sh.sim().join("pre.elas");
    ok(&[
        "estimate", "--pre", s(&pre), "--post", s(&pre), "--modes", s(&sh.modes()), "--search-range", "12", "--out",
        s(out.path()),
    ]);
    let strain = out.path().join("strain.elas");
    let eval = out.path().join("eval");
    ok(&[
        "evaluate", "--strain", s(&strain), "--target", "40,80,8,24", "--background", "0,128,0,32", "--reference",
        s(&strain), "--out", s(&eval),
    ]);
    let m = json(&eval.join("metrics.json"));
    assert_eq!(m["rms_error"].as_f64(), Some(0.0));
    let manifest = json(&out.path().join("manifest.json"));
    assert!(manifest["outputs"].as_array().unwrap().iter().any(|o| o == "strain.elas"));
    let values = read_raster_f64(&strain).unwrap();
    assert_eq!(values.dim(), (128, 32));
    let worst = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(worst <= 1e-3, "{worst}");
}

#[test]
fn unknown_flag_is_a_usage_error_and_writes_nothing() {
    let out = TempDir::new().unwrap();
    let target = out.path().join("never");
    let res = run(&["simulate", "--out", s(&target), "--bogus"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!target.exists());
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_one() {
    let out = TempDir::new().unwrap();
    let res = run(&[
        "estimate", "--pre", "/definitely/missing.elas", "--post", "/definitely/missing.elas", "--stage", "dp", "--out",
        s(out.path()),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error:"));
}

#[test]
fn same_arguments_give_identical_bytes() {
    let sh = shared();
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [&a, &b] {
        ok(&[
            "estimate", "--pre", s(&sh.sim().join("pre.elas")), "--post", s(&sh.sim().join("post.elas")), "--modes",
            s(&sh.modes()), "--search-range", "12", "--stage", "refined", "--out", s(dir.path()),
        ]);
    }
    for name in ["refined_axial.elas", "refined_lateral.elas", "strain.elas"] {
        assert_eq!(read_raster(&a.path().join(name)), read_raster(&b.path().join(name)), "{name}");
    }
    let c = TempDir::new().unwrap();
    let d = TempDir::new().unwrap();
    for dir in [&c, &d] {
        ok(&["simulate", "--out", s(dir.path()), "--rows", "64", "--lines", "16", "--seed", "9", "--kind", "rotation", "--magnitude", "0.03"]);
    }
    for name in ["pre.elas", "post.elas", "oracle_axial.elas", "oracle_lateral.elas"] {
        assert_eq!(read_raster(&c.path().join(name)), read_raster(&d.path().join(name)), "{name}");
    }
}

#[test]
fn more_dp_lines_give_a_better_coarse_estimate() {
    let sh = shared();
    let out = TempDir::new().unwrap();
    ok(&[
        "sweep", "--param", "p", "--modes", s(&sh.modes()), "--rows", "128", "--lines", "32", "--search-range", "12",
        "--out", s(out.path()),
    ]);
    let summary = json(&out.path().join("sweep.json"));
    let coarse: Vec<f64> = summary["points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["coarse_rms"].as_f64().unwrap())
        .collect();
    assert_eq!(coarse.len(), 3);
    assert!(coarse[2] < coarse[0], "{coarse:?}");
    for v in ["p2", "p5", "p10"] {
        assert!(out.path().join(format!("strain_{v}.elas")).exists());
    }
}

#[test]
fn dp_stage_needs_no_modes() {
    let sh = shared();
    let out = TempDir::new().unwrap();
    ok(&[
        "estimate", "--pre", s(&sh.sim().join("pre.elas")), "--post", s(&sh.sim().join("post.elas")), "--stage", "dp",
        "--search-range", "12", "--out", s(out.path()),
    ]);
    let lines = json(&out.path().join("dp_lines.json"));
    assert_eq!(lines.as_array().unwrap().len(), 5);
    let missing = TempDir::new().unwrap();
    let res = run(&[
        "estimate", "--pre", s(&sh.sim().join("pre.elas")), "--post", s(&sh.sim().join("post.elas")), "--stage",
        "coarse", "--out", s(missing.path()),
    ]);
    assert_eq!(res.status.code(), Some(1));
}
