mod common;

use std::path::Path;

use common::{small_diode_toml, write};
use ddfem::cli::{run, EXIT_IO, EXIT_OK, EXIT_STALL, EXIT_USAGE};

fn ddfem(args: &[&str]) -> i32 {
    run(std::iter::once("ddfem").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn check_accepts_shipped_configs() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["diode.toml", "nmos_ii.toml", "pmos_standin.toml"] {
        assert_eq!(ddfem(&["check", "--config", s(&root.join(name))]), EXIT_OK, "{name}");
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "empty.toml", "");
    assert_eq!(ddfem(&["check", "--config", s(&empty)]), EXIT_USAGE);
    assert_eq!(ddfem(&["check", "--config", s(&dir.path().join("missing.toml"))]), EXIT_USAGE);
    assert_eq!(ddfem(&["check", "--bogus"]), EXIT_USAGE);
    assert_eq!(ddfem(&["frobnicate"]), EXIT_USAGE);

    let good = write(dir.path(), "ok.toml", &small_diode_toml(""));
    assert_eq!(ddfem(&["sweep", "--config", s(&good), "--method", "nonsense"]), EXIT_USAGE);

    let unknown_key = write(dir.path(), "typo.toml", &small_diode_toml("[solver]\ngumel_tol = 1e-6\n"));
    assert_eq!(ddfem(&["check", "--config", s(&unknown_key)]), EXIT_USAGE);

    let bad_contact = small_diode_toml("").replace("name = \"top\"\n\n", "name = \"gate\"\n\n");
    let bad_contact = write(dir.path(), "contact.toml", &bad_contact);
    assert_eq!(ddfem(&["check", "--config", s(&bad_contact)]), EXIT_USAGE);
}

#[test]
fn sweep_writes_iv_table_and_final_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "d.toml", &small_diode_toml(""));
    let out = dir.path().join("out");
    assert_eq!(ddfem(&["sweep", "--config", s(&cfg), "--output-dir", s(&out)]), EXIT_OK);

    let mut rdr = csv::Reader::from_path(out.join("iv.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["bias", "I_top", "I_body", "iterations", "step"]);
    let rows: Vec<Vec<f64>> =
        rdr.records().map(|r| r.unwrap().iter().map(|x| x.parse().unwrap()).collect()).collect();
    let biases: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(biases, [0.0, 0.2, 0.4]);
    // forward bias on the p side: conventional current enters at the body
    assert!(rows[2][2] < 0.0 && rows[2][1] > 0.0);
    // the default schedule dumps only the final point
    assert!(out.join("fields_0002.vtk").is_file());
    assert!(!out.join("fields_0000.vtk").exists());
}

#[test]
fn simulate_writes_one_balanced_row() {
    let dir = tempfile::tempdir().unwrap();
    // well into forward bias, so the current is far above the round-off floor
    let cfg = small_diode_toml("").replace("start = 0.0", "start = 0.6");
    let cfg = write(dir.path(), "d.toml", &cfg);
    let out = dir.path().join("sim");
    assert_eq!(ddfem(&["simulate", "--config", s(&cfg), "--output-dir", s(&out), "--method", "ddfe"]), EXIT_OK);

    let text = std::fs::read_to_string(out.join("currents.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let v: Vec<f64> = lines[1].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(v[0], 0.6);
    let scale = v[1].abs().max(v[2].abs());
    assert!(scale > 0.0);
    assert!((v[1] + v[2]).abs() <= 1e-8 * scale, "{} + {}", v[1], v[2]);
    assert!(out.join("fields.vtk").is_file());
}

#[test]
fn stalled_sweep_exits_three_with_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_diode_toml("[solver]\ngummel_max_iter = 2\n")
        .replace("stop = 0.4, step = 0.2, min_step = 0.05", "stop = 0.8, step = 0.8, min_step = 0.4");
    let cfg = write(dir.path(), "d.toml", &cfg);
    let out = dir.path().join("o");
    assert_eq!(ddfem(&["sweep", "--config", s(&cfg), "--output-dir", s(&out)]), EXIT_STALL);
    let text = std::fs::read_to_string(out.join("iv.csv")).unwrap();
    assert!(text.lines().count() >= 2);
}

#[test]
fn unwritable_output_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "d.toml", &small_diode_toml(""));
    // a regular file where the output directory should go
    let blocker = write(dir.path(), "blocker", "");
    assert_eq!(ddfem(&["simulate", "--config", s(&cfg), "--output-dir", s(&blocker.join("x"))]), EXIT_IO);
}
