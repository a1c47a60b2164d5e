use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"
n_realizations = 2
base_seed = 7
n_streams = 1
schemes = ["fully-digital", "pca-fca", "as"]
snr_grid_db = [0.0, 10.0]
metrics = ["se", "ee", "ber"]
ber_symbols = 4

[tx]
n_vertical = 2
n_horizontal = 4

[rx]
n_vertical = 2
n_horizontal = 4

[channel]
n_clusters = 3
n_rays = 2
n_subcarriers = 8
n_taps = 4

[rf]
tx = 2
rx = 2
"#;

fn hybridsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybridsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run_to(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    hybridsim(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn validate_reports_row_count() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "tiny.toml", TINY);
    let o = hybridsim(&["validate", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    // 2 realizations x 3 schemes x 1 Q x 2 SNRs
    assert_eq!(stdout(&o).trim(), "ok: 12 rows");
}

#[test]
fn shipped_default_config_validates() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let o = hybridsim(&["validate", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "ok: 1500 rows");
}

#[test]
fn run_writes_one_row_per_cell() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "tiny.toml", TINY);
    let out = dir.path().join("out.csv");
    let o = run_to(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("seed,scheme,architecture,Q,snr_db"));
    assert_eq!(header.split(',').count(), 19);
    assert_eq!(lines.count(), 12);
}

#[test]
fn runs_are_byte_identical_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "tiny.toml", TINY);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert!(run_to(&cfg, &a, &[]).status.success());
    assert!(run_to(&cfg, &b, &["--parallel", "3"]).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn filter_restricts_schemes() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "tiny.toml", TINY);
    let out = dir.path().join("as.csv");
    let o = run_to(&cfg, &out, &["--filter", "scheme=as"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("as")));
}

#[test]
fn unknown_scheme_fails_and_lists_valid_names() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "bad.toml",
        &TINY.replace(r#""pca-fca""#, r#""pca-fcx""#),
    );
    let o = hybridsim(&["validate", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("pca-fcx"), "{err}");
    for name in ["fully-digital", "pca-fca", "somp", "fs:interlaced", "as"] {
        assert!(err.contains(name), "{name} missing from: {err}");
    }
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "bad.toml", &format!("n_realisations = 3\n{TINY}"));
    let o = hybridsim(&["validate", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("n_realisations"), "{}", stderr(&o));
}

#[test]
fn infeasible_pattern_is_a_row_error_not_a_crash() {
    let dir = TempDir::new().unwrap();
    // 8 antennas cannot split into 3 equal fixed subarrays.
    let text = TINY
        .replace(r#""as"]"#, r#""as", "fs:vertical"]"#)
        .replace("tx = 2\nrx = 2", "tx = 3\nrx = 3");
    let cfg = write_config(&dir, "fs.toml", &text);
    let out = dir.path().join("fs.csv");
    let o = run_to(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("row error"), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let fs_rows: Vec<&str> = text.lines().filter(|l| l.contains("fs:vertical")).collect();
    assert_eq!(fs_rows.len(), 4);
    // Metric columns stay empty on error rows.
    assert!(fs_rows.iter().all(|r| r.split(',').nth(11) == Some("")));
}

#[test]
fn oracle_grouping_reports_both_objectives() {
    let o = hybridsim(&["oracle-grouping", "--n", "8", "--nrf", "2", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for objective in ["approx", "exact"] {
        let line = text
            .lines()
            .find(|l| l.starts_with(&format!("[{objective}] shared-ahc")))
            .unwrap_or_else(|| panic!("no {objective} ratio line in:\n{text}"));
        let ratio: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
        assert!(ratio > 0.0 && ratio <= 1.0 + 1e-12, "{line}");
    }
    assert!(text.contains("over 127 candidates"), "{text}");
}

#[test]
fn oracle_grouping_rejects_too_many_chains() {
    let o = hybridsim(&["oracle-grouping", "--n", "4", "--nrf", "5", "--seed", "0"]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error:"));
}
