use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cellcycle(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cellcycle"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn same_seed_gives_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let o = cellcycle(dir.path(), &["--seed", "7", "simulate", "--n", "40", "--cycles", "5"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["trajectory.csv", "simulate.meta.json"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
    let c = tempfile::tempdir().unwrap();
    cellcycle(c.path(), &["--seed", "8", "simulate", "--n", "40", "--cycles", "5"]);
    assert_ne!(read(a.path(), "trajectory.csv"), read(c.path(), "trajectory.csv"));
}

#[test]
fn sweep_does_not_depend_on_thread_count() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["sweep-fig4", "--gamma", "-0.6", "--points", "6", "--n", "200"];
    let one = cellcycle(a.path(), &[&["--threads", "1"], &args[..]].concat());
    let four = cellcycle(b.path(), &[&["--threads", "4"], &args[..]].concat());
    assert!(one.status.success() && four.status.success());
    let csv = read(a.path(), "sweep_fig4_g-0.6.csv");
    assert_eq!(csv, read(b.path(), "sweep_fig4_g-0.6.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "sweep_value,M,N,verdict");
    assert_eq!(lines.len(), 7);
}

#[test]
fn zero_alpha_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = cellcycle(dir.path(), &["retmap", "--alpha", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn retmap_reads_its_config_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[retmap]\ns = 0.2\nr = 0.6\nalpha = -0.3\ngrid = 100\n").unwrap();
    let o = cellcycle(dir.path(), &["--config", cfg.to_str().unwrap(), "retmap"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let csv = read(dir.path(), "retmap.csv");
    assert_eq!(csv.lines().next(), Some("x,F(x),F2(x)"));
    assert_eq!(csv.lines().count(), 102);
    let report: serde_json::Value = serde_json::from_str(&read(dir.path(), "retmap_fixed_points.json")).unwrap();
    let text = report.to_string();
    assert!(text.contains("stable"), "{text}");

    let meta: serde_json::Value = serde_json::from_str(&read(dir.path(), "retmap.meta.json")).unwrap();
    assert_eq!(meta["config"]["alpha"], -0.3);
    assert_eq!(meta["config_sha256"].as_str().map(str::len), Some(64));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[retmap]\nbeta = 1.0\n").unwrap();
    let o = cellcycle(dir.path(), &["--config", cfg.to_str().unwrap(), "retmap"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pde_profile_has_constant_flux() {
    let dir = tempfile::tempdir().unwrap();
    let o = cellcycle(dir.path(), &["pde-steady", "--c", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(dir.path(), "pde_steady.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,u,b,flux"));
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|t| t.parse().unwrap()).collect();
        assert!((v[3] - 1.0).abs() < 1e-14, "{line}");
        if v[0] >= 0.75 {
            assert!((v[1] - 1.0 / 1.15).abs() < 1e-12, "{line}");
        }
    }
}

#[test]
fn cyclic_writes_regions_and_spectra() {
    let dir = tempfile::tempdir().unwrap();
    let o = cellcycle(dir.path(), &["cyclic", "--grid", "40"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let regions = read(dir.path(), "cyclic_regions.csv");
    assert_eq!(regions.lines().next(), Some("r,s,k,case"));
    let spectra = read(dir.path(), "cyclic_spectrum.csv");
    let mut lines = spectra.lines();
    assert_eq!(lines.next(), Some("k,beta,case,d,spectral_radius,min_modulus"));
    let mut k2 = 0;
    for line in lines {
        let r: Vec<&str> = line.split(',').collect();
        let beta: f64 = r[1].parse().unwrap();
        let radius: f64 = r[4].parse().unwrap();
        match (r[0], r[2]) {
            ("2", "I") => {
                // the single eigenvalue of the 1x1 matrix is -(1 + beta)
                assert!((radius - (1.0 + beta)).abs() < 1e-12, "{line}");
                k2 += 1;
            }
            (_, "II" | "III") => assert!((radius - 1.0).abs() < 1e-9, "{line}"),
            _ => {}
        }
    }
    assert!(k2 > 0);
}
