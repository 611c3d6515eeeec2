use std::path::PathBuf;
use std::process::Command;

use rfftensor::estimators::Method;
use rfftensor::harness::{
    read_convergence, read_rows, run_convergence, run_crlb_only, run_sweep, write_rows, ExperimentConfig, SweepAxis,
    CRLB_LABEL, RESULT_HEADER,
};

fn config_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper_fig1.cfg")
}

fn small_config(trials: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&config_path()).unwrap();
    cfg.run.trials = trials;
    cfg.sweep.snr_db = vec![10.0, 20.0];
    cfg
}

fn csv_bytes(cfg: &ExperimentConfig, axis: SweepAxis, jobs: Option<usize>) -> Vec<u8> {
    let rows = run_sweep(cfg, axis, jobs).unwrap();
    let mut buf = Vec::new();
    write_rows(&rows, &mut buf).unwrap();
    buf
}

#[test]
fn checked_in_config_matches_scenario() {
    let cfg = ExperimentConfig::load(&config_path()).unwrap();
    let counts: Vec<usize> = cfg.devices.iter().map(|d| d.doas_deg.len()).collect();
    assert_eq!(counts, vec![1, 2, 2]);
    assert_eq!(cfg.scene.antennas, 8);
    assert_eq!(cfg.tals.rho, 1e-10);
    assert!(cfg.devices.iter().all(|d| d.pa_row.len() == 3));
    assert_eq!(cfg.run.methods, Method::ALL.to_vec());
}

#[test]
fn same_seed_gives_identical_bytes_for_any_job_count() {
    let cfg = small_config(3);
    let a = csv_bytes(&cfg, SweepAxis::SnrDb, Some(1));
    let b = csv_bytes(&cfg, SweepAxis::SnrDb, Some(1));
    let c = csv_bytes(&cfg, SweepAxis::SnrDb, Some(3));
    assert_eq!(a, b);
    assert_eq!(a, c);
    let text = String::from_utf8(a.clone()).unwrap();
    assert_eq!(text.lines().next().unwrap(), RESULT_HEADER);
    assert_eq!(text.lines().count(), 1 + 3 * 2);

    let mut other = cfg.clone();
    other.run.seed += 1;
    assert_ne!(csv_bytes(&other, SweepAxis::SnrDb, Some(1)), a);
}

#[test]
fn written_rows_parse_back() {
    let cfg = small_config(2);
    let rows = run_sweep(&cfg, SweepAxis::SnrDb, None).unwrap();
    let mut buf = Vec::new();
    write_rows(&rows, &mut buf).unwrap();
    assert_eq!(read_rows(buf.as_slice()).unwrap(), rows);
    for r in &rows {
        assert!(r.rmse_theta_deg.unwrap() >= 0.0 && r.rmse_z.unwrap() >= 0.0);
        assert!(r.crlb_sqrt_theta_deg.is_some() && r.crlb_sqrt_z.is_some());
        assert_eq!(r.trials, 2);
        assert_eq!(r.fail_rate, 0.0);
    }
    assert_eq!(rows[0].method(), Some(Method::Tals));
    assert!(rows[0].mean_iters.is_some());
    assert!(rows.iter().filter(|r| r.method() != Some(Method::Tals)).all(|r| r.mean_iters.is_none()));
}

#[test]
fn noiseless_single_trial_is_exact() {
    let mut cfg = small_config(1);
    cfg.scene.noiseless = true;
    cfg.run.methods = vec![Method::Tals];
    let rows = run_sweep(&cfg, SweepAxis::SnrDb, None).unwrap();
    for r in &rows {
        assert!(r.rmse_theta_deg.unwrap() < 1e-4, "{r:?}");
        assert!(r.rmse_z.unwrap() < 1e-6, "{r:?}");
        assert!(r.crlb_sqrt_theta_deg.is_none());
    }
}

#[test]
fn unit_scale_matches_the_snr_sweep() {
    let mut cfg = small_config(3);
    cfg.sweep.snr_db = vec![cfg.sweep.fixed_snr_db];
    cfg.sweep.amplitude_scales = vec![1.0];
    cfg.sweep.phase_scales = vec![1.0];
    cfg.run.methods = vec![Method::Tals, Method::Ls];
    let snr = run_sweep(&cfg, SweepAxis::SnrDb, None).unwrap();
    for axis in [SweepAxis::AmplitudeScale, SweepAxis::PhaseScale] {
        let rows = run_sweep(&cfg, axis, None).unwrap();
        for (a, b) in rows.iter().zip(&snr) {
            assert_eq!(a.rmse_theta_deg, b.rmse_theta_deg);
            assert_eq!(a.rmse_z, b.rmse_z);
            assert_eq!(a.crlb_sqrt_z, b.crlb_sqrt_z);
        }
    }
}

#[test]
fn zero_imbalance_is_still_estimable() {
    let mut cfg = small_config(3);
    cfg.sweep.amplitude_scales = vec![0.0];
    cfg.run.methods = vec![Method::Tals];
    let rows = run_sweep(&cfg, SweepAxis::AmplitudeScale, None).unwrap();
    let z = rows[0].rmse_z.unwrap();
    assert!(z.is_finite() && z < 0.2, "{z}");
}

#[test]
fn errors_decrease_with_snr_under_paired_seeds() {
    let mut cfg = small_config(20);
    cfg.sweep.snr_db = vec![0.0, 10.0, 20.0, 30.0];
    cfg.run.crlb = false;
    let rows = run_sweep(&cfg, SweepAxis::SnrDb, None).unwrap();
    for m in Method::ALL {
        let curve: Vec<_> = rows.iter().filter(|r| r.method() == Some(m)).collect();
        for w in curve.windows(2) {
            assert!(w[1].rmse_theta_deg < w[0].rmse_theta_deg, "{m}: {w:?}");
            assert!(w[1].rmse_z < w[0].rmse_z, "{m}: {w:?}");
        }
    }
}

#[test]
fn crlb_only_rows() {
    let cfg = small_config(2);
    let rows = run_crlb_only(&cfg, None).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.method == CRLB_LABEL && r.rmse_theta_deg.is_none()));
    assert!(rows[1].crlb_sqrt_theta_deg.unwrap() < rows[0].crlb_sqrt_theta_deg.unwrap());

    let mut noiseless = cfg.clone();
    noiseless.scene.noiseless = true;
    assert!(run_crlb_only(&noiseless, None).is_err());
}

#[test]
fn convergence_traces_are_monotone() {
    let mut cfg = small_config(4);
    cfg.sweep.convergence_snr_db = vec![0.0, 20.0];
    let report = run_convergence(&cfg, None).unwrap();
    assert!(report.failures.is_empty());
    assert_eq!(report.iterations_at(20.0).len(), 4);
    for w in report.rows.windows(2) {
        if w[0].trial == w[1].trial && w[0].sweep_value == w[1].sweep_value {
            assert_eq!(w[1].iteration, w[0].iteration + 1);
            assert!(w[1].loss <= w[0].loss * (1.0 + 1e-9));
        }
    }
    assert!(report.median_iterations(20.0).unwrap() <= 30.0);
}

#[test]
fn invalid_settings_are_rejected() {
    let mut cfg = small_config(0);
    assert!(run_sweep(&cfg, SweepAxis::SnrDb, None).is_err());
    cfg.run.trials = 1;
    cfg.sweep.snr_db.clear();
    assert!(run_sweep(&cfg, SweepAxis::SnrDb, None).is_err());
    cfg.sweep.snr_db = vec![10.0];
    cfg.run.methods.clear();
    assert!(run_sweep(&cfg, SweepAxis::SnrDb, None).is_err());
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rfftensor"))
}

#[test]
fn cli_sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/snr.csv");
    let status = cli()
        .args(["sweep-snr", "--config"])
        .arg(config_path())
        .args(["--seed", "9", "--trials", "1", "--methods", "TALS,ls", "--jobs", "1", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let rows = read_rows(std::fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(rows.len(), 2 * 7);
    assert!(rows.iter().all(|r| r.seed == 9 && r.trials == 1));
    assert_eq!(rows.last().unwrap().method(), Some(Method::Ls));
}

#[test]
fn cli_other_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let conv = dir.path().join("conv.csv");
    let status = cli()
        .args(["convergence", "--trials", "1", "--config"])
        .arg(config_path())
        .arg("--out")
        .arg(&conv)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(!read_convergence(std::fs::File::open(&conv).unwrap()).unwrap().is_empty());

    let crlb = cli().args(["crlb-only", "--trials", "1", "--config"]).arg(config_path()).output().unwrap();
    assert!(crlb.status.success());
    let rows = read_rows(crlb.stdout.as_slice()).unwrap();
    assert_eq!(rows.len(), 7);

    let amp = cli()
        .args(["sweep-amplitude", "--trials", "1", "--methods", "KRF", "--config"])
        .arg(config_path())
        .output()
        .unwrap();
    assert!(amp.status.success());
    let rows = read_rows(amp.stdout.as_slice()).unwrap();
    assert!(rows.iter().all(|r| r.sweep_axis == SweepAxis::AmplitudeScale));
}

#[test]
fn cli_reports_bad_input() {
    let missing = cli().args(["sweep-phase", "--config", "/nonexistent.cfg"]).output().unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error"));
    let bad_method = cli().args(["sweep-snr", "--methods", "ML", "--config"]).arg(config_path()).output().unwrap();
    assert!(!bad_method.status.success());
}
