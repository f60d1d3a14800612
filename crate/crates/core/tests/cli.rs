use std::path::Path;
use std::process::{Command, Output};

fn fvlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fvlab"))
        .args(args)
        .current_dir(dir)
        .env_remove("FVLAB_THREADS")
        .output()
        .unwrap()
}

fn result_line(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout);
    stdout
        .lines()
        .find(|l| l.starts_with("RESULT "))
        .unwrap_or_else(|| panic!("no RESULT line in {stdout:?}"))
        .to_string()
}

fn field(line: &str, key: &str) -> String {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing from {line}"))
        .to_string()
}

#[test]
fn study_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let out = fvlab(
        dir.path(),
        &["study", "--dim", "3", "--solution", "sine_product", "--levels", "4,8,16",
          "--mesh", "uniform", "--out", "study.csv", "--svg", "study.svg"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("study.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("dim,family,seed,M,h,l2,l2_rel,h1semi,h1h,max,ord_l2,ord_h1h,ord_max,iters"));
    assert!(std::fs::read_to_string(dir.path().join("study.svg")).unwrap().contains("<svg"));
    let line = result_line(&out);
    assert_eq!(field(&line, "completed"), "3");
    let order: f64 = field(&line, "ord_h1h").parse().unwrap();
    assert!((1.8..=2.2).contains(&order), "{order}");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = |name: &'static str, threads: &'static str| {
        vec!["--threads", threads, "study", "--dim", "2", "--solution", "difference:gaussian_cube,mollifier",
             "--levels", "8,16", "--mesh", "random", "--seed", "11", "--out", name]
    };
    for (name, threads) in [("a.csv", "1"), ("b.csv", "4")] {
        assert_eq!(fvlab(dir.path(), &args(name, threads)).status.code(), Some(0));
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn mesh_file_solve_dumps_every_node() {
    let dir = tempfile::tempdir().unwrap();
    let gen = fvlab(dir.path(), &["mesh-gen", "--dim", "3", "--mesh", "random", "--M", "5", "--seed", "3", "--out", "m.txt"]);
    assert_eq!(gen.status.code(), Some(0));
    std::fs::write(dir.path().join("p.json"), r#"{"c": 2.0}"#).unwrap();
    let out = fvlab(
        dir.path(),
        &["solve", "--mesh-file", "m.txt", "--solution", "gaussian_cube", "--params", "p.json",
          "--dump-solution", "u.csv", "--dump-matrix", "a.mtx"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dump = std::fs::read_to_string(dir.path().join("u.csv")).unwrap();
    let mut lines = dump.lines();
    assert_eq!(lines.next(), Some("i,j,k,x,y,z,u_h,u_exact,abs_err"));
    assert_eq!(lines.count(), 6 * 6 * 6);
    let mtx = std::fs::read_to_string(dir.path().join("a.mtx")).unwrap();
    assert!(mtx.lines().nth(1).unwrap().starts_with("64 64 "));
    assert_eq!(field(&result_line(&out), "dofs"), "64");
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["solve", "--bogus"],
        vec!["frobnicate"],
        vec!["solve", "--solution", "nope", "--M", "4"],
        vec!["study", "--levels", "8,4"],
        vec!["solve", "--mesh-file", "missing.txt"],
        vec!["solve", "--tol", "0"],
    ] {
        let out = fvlab(dir.path(), &args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert_eq!(stderr.trim_end().lines().count(), 1, "{args:?}: {stderr}");
    }
}

#[test]
fn non_convergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = fvlab(dir.path(), &["solve", "--dim", "2", "--M", "32", "--solution", "mollifier", "--max-iter", "3"]);
    assert_eq!(out.status.code(), Some(2));
    let study = fvlab(
        dir.path(),
        &["study", "--dim", "2", "--levels", "4,32", "--solution", "mollifier", "--max-iter", "3", "--out", "s.csv"],
    );
    assert_eq!(study.status.code(), Some(2));
    assert_eq!(field(&result_line(&study), "completed"), "1");
    assert_eq!(std::fs::read_to_string(dir.path().join("s.csv")).unwrap().lines().count(), 2);
}

#[test]
fn verify_strict_passes_in_two_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let out = fvlab(dir.path(), &["verify", "--dim", "2", "--trials", "20", "--seed", "7", "--strict", "--out", "v.json"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(field(&result_line(&out), "pass"), "true");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("v.json")).unwrap()).unwrap();
    assert_eq!(json["checks"].as_array().unwrap().len(), 5);
}

#[test]
fn thread_env_fallback_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fvlab"))
        .args(["mesh-gen", "--dim", "2", "--M", "4", "--out", "m.txt"])
        .current_dir(dir.path())
        .env("FVLAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
