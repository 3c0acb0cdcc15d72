use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn ldiff(args: &[&str], config: &Path, out: &Path) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_ldiff"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .status()
        .expect("binary runs");
    status.code().expect("exit code")
}

fn report(dir: &Path, name: &str) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join(name)).unwrap()).unwrap()
}

#[test]
fn analyze_identity_noise() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(ldiff(&["analyze"], &configs().join("identity-noise.json"), out.path()), 0);
    let r = report(out.path(), "analyze.json");
    let res = &r["result"];
    assert!(res["v"][0].as_f64().unwrap().abs() < 1e-8);
    assert!((res["sigma"][0][0].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!((res["gap"].as_f64().unwrap() - 1.0).abs() < 1e-10);
    assert_eq!(r["version"], lindblad_diffusion::VERSION);
    assert_eq!(r["config_sha256"].as_str().unwrap().len(), 64);
    assert!(out.path().join("analyze.manifest.json").exists());
}

#[test]
fn coscos_is_an_assumption_violation() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(ldiff(&["analyze"], &configs().join("coscos.json"), out.path()), 3);
    let r = report(out.path(), "analyze.json");
    assert_eq!(r["error"]["kind"], "NonSimpleKernel");
    assert_eq!(r["error"]["kernel_dim"], 2);
    assert_eq!(r["status"], "fail");
}

#[test]
fn bad_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("garbage.json", "{ not json"),
        ("unknown_key.json", r#"{"model": {"model": "identity-noise"}, "grid": {"d": 1, "N": 16}, "bogus": 1}"#),
        ("odd_grid.json", r#"{"model": {"model": "identity-noise"}, "grid": {"d": 1, "N": 15}}"#),
        ("unknown_model.json", r#"{"model": {"model": "nope"}, "grid": {"d": 1, "N": 16}}"#),
        ("missing_file.json", r#"{"model": "does/not/exist.json", "grid": {"d": 1, "N": 16}}"#),
        ("bad_radius.json", r#"{"model": {"model": "identity-noise"}, "grid": {"d": 1, "N": 16}, "fit": {"radius": 5}}"#),
        ("bad_version.json", r#"{"schema_version": 9, "model": {"model": "identity-noise"}, "grid": {"d": 1, "N": 16}}"#),
    ];
    for (name, body) in cases {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        assert_eq!(ldiff(&["analyze"], &p, &dir.path().join("out")), 2, "{name}");
    }
    let missing = dir.path().join("absent.json");
    assert_eq!(ldiff(&["validate"], &missing, &dir.path().join("out")), 2);
}

#[test]
fn same_seed_gives_identical_reports() {
    let cfg = configs().join("identity-noise.json");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        assert_eq!(ldiff(&["mc", "--seed", "11"], &cfg, d.path()), 0);
        assert_eq!(ldiff(&["evolve"], &cfg, d.path()), 0);
    }
    for f in ["mc.json", "evolve.json", "evolve.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between runs");
    }
    let m = report(a.path(), "mc.manifest.json");
    assert_eq!(m["run"]["seed"], 11);
    assert!(m["started_unix"].is_number());
}

#[test]
fn spectrum_and_evolve_csv() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("identity-noise.json");
    assert_eq!(ldiff(&["spectrum"], &cfg, out.path()), 0);
    let mut rdr = csv::Reader::from_path(out.path().join("spectrum.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["index", "re", "im"]);
    assert_eq!(rdr.records().count(), 64);

    assert_eq!(ldiff(&["evolve"], &cfg, out.path()), 0);
    let mut rdr = csv::Reader::from_path(out.path().join("evolve.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["t", "mean_0", "cov_00", "phi_gaussian_distance"]);
    let rows: Vec<_> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    let last: f64 = rows[2][3].parse().unwrap();
    assert!(last < 0.02);
}

#[test]
fn crosscheck_mult_kraus() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(ldiff(&["crosscheck"], &configs().join("mult-kraus.json"), out.path()), 0);
    let r = report(out.path(), "crosscheck.json");
    let routes = r["result"]["routes"].as_array().unwrap();
    let names: Vec<_> = routes.iter().map(|x| x["route"].as_str().unwrap()).collect();
    for want in ["formula_vs_fit", "symmetric_vs_formula", "mc_vs_green_kubo"] {
        assert!(names.contains(&want), "missing {want}");
    }
    assert!(routes.iter().all(|x| x["pass"] == true));
}

#[test]
fn crosscheck_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("tight.json");
    std::fs::write(
        &p,
        r#"{"model": {"model": "mult-kraus"}, "grid": {"d": 1, "N": 16},
            "crosscheck": {"sigma_rel_tol": 1e-15, "run_mc": false}}"#,
    )
    .unwrap();
    assert_eq!(ldiff(&["crosscheck"], &p, &dir.path().join("out")), 1);
}

#[test]
fn mc_horizon_too_short_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("short.json");
    std::fs::write(
        &p,
        r#"{"model": {"model": "mult-kraus"}, "grid": {"d": 1, "N": 32}, "mc": {"n_traj": 200, "t_max": 2}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    assert_eq!(ldiff(&["mc"], &p, &out), 3);
    assert_eq!(report(&out, "mc.json")["error"]["kind"], "HorizonTooShort");
}

#[test]
fn validate_and_classical_mc() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("classical-jump.json");
    assert_eq!(ldiff(&["validate"], &cfg, out.path()), 0);
    assert_eq!(report(out.path(), "validate.json")["result"]["passed"], true);
    assert_eq!(ldiff(&["mc"], &cfg, out.path()), 0);
    let r = report(out.path(), "mc.json");
    assert_eq!(r["result"]["estimator"], "classical_particle");
}
