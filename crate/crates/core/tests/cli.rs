use std::path::Path;
use std::process::{Command, Output};

fn mmv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_spec(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const SMALL: &str = "name = wse_awgn\nN = 300\nJ = 1, 3\nR = 0.5\ntrials = 2\nbase_seed = 3\n";

#[test]
fn missing_spec_exits_with_spec_error() {
    let o = mmv(&["run", "definitely-missing.spec"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("error"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_named_in_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "bad.spec", "name = wse_awgn\nfrobnicate = 1\n");
    let o = mmv(&["run", &spec]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("frobnicate"), "{}", stderr(&o));
}

#[test]
fn limits_prints_mmwse() {
    let o = mmv(&[
        "limits",
        "--mmwse",
        "--delta-v",
        "1",
        "--rho",
        "0.1",
        "--beta",
        "0.2",
        "--J",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header
        .iter()
        .position(|h| *h == "value")
        .expect("value column");
    let value: f64 = row[col].parse().unwrap();
    assert!((value - 0.07111).abs() <= 1e-4, "{value}");
}

#[test]
fn limits_without_beta_is_rejected() {
    let o = mmv(&["limits", "--mmwse", "--delta-v", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_is_reproducible_across_invocations_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "small.spec", SMALL);
    let a = mmv(&["run", &spec, "--threads", "1"]);
    let b = mmv(&["run", &spec, "--threads", "4"]);
    let c = mmv(&["run", &spec]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
}

#[test]
fn out_flag_writes_the_csv_file() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "small.spec", SMALL);
    let out = dir.path().join("nested/result.csv");
    let o = mmv(&["run", &spec, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(out).unwrap();
    assert_eq!(text, stdout(&mmv(&["run", &spec])));
}

#[test]
fn seed_flag_changes_the_draws() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "small.spec", SMALL);
    let a = mmv(&["run", &spec]);
    let b = mmv(&["run", &spec, "--seed", "99"]);
    assert!(b.status.success());
    assert_ne!(a.stdout, b.stdout);
}

#[test]
fn aud_rejects_other_experiments() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "small.spec", SMALL);
    let o = mmv(&["aud", &spec]);
    assert_eq!(o.status.code(), Some(2));
    let aud = write_spec(
        dir.path(),
        "aud.spec",
        "name = aud\nN = 300\nR = 0.5\nnoise = 0.1\ntrials = 2\n",
    );
    let o = mmv(&["aud", &aud]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn gamp_trace_lists_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "small.spec", SMALL);
    let o = mmv(&["gamp-trace", &spec, "--sweep", "1", "--trial", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("iteration"));
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.split(',').next().unwrap(), (i + 1).to_string());
    }
}
