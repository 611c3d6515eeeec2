//! Monte-Carlo trial execution and aggregation.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::matching::matched_sq_error_deg;
use super::results::{sort_rows, ConvergenceRow, ResultRow, SweepAxis, CRLB_LABEL};
use crate::crlb::scene_crlb;
use crate::error::{Error, Result};
use crate::estimators::{krf_estimate, ls_estimate, tals_run, Estimate, EstimationInput, Method, StopReason};
use crate::scene::{synthesize_tensor, ReceivedTensor, SceneSpec};

// ---------------------------------------------------------------------------
// Sweep points and seeding
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub value: f64,
    pub snr_db: f64,
    pub amplitude_scale: f64,
    pub phase_scale: f64,
}

pub fn sweep_points(cfg: &ExperimentConfig, axis: SweepAxis) -> Result<Vec<SweepPoint>> {
    let s = &cfg.sweep;
    let points: Vec<_> = match axis {
        SweepAxis::SnrDb => s
            .snr_db
            .iter()
            .map(|&v| SweepPoint { axis, value: v, snr_db: v, amplitude_scale: 1.0, phase_scale: 1.0 })
            .collect(),
        SweepAxis::AmplitudeScale => s
            .amplitude_scales
            .iter()
            .map(|&v| SweepPoint { axis, value: v, snr_db: s.fixed_snr_db, amplitude_scale: v, phase_scale: 1.0 })
            .collect(),
        SweepAxis::PhaseScale => s
            .phase_scales
            .iter()
            .map(|&v| SweepPoint { axis, value: v, snr_db: s.fixed_snr_db, amplitude_scale: 1.0, phase_scale: v })
            .collect(),
    };
    if points.is_empty() {
        return Err(Error::Config(format!("the {} sweep list is empty", axis.as_str())));
    }
    if points.iter().any(|p| !p.value.is_finite()) {
        return Err(Error::Config("sweep values must be finite".into()));
    }
    Ok(points)
}

/// Generator of trial `trial`. It depends on the trial index only, so every
/// sweep point of a run sees the same pilots, fading phases and noise.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

pub fn realize_trial(spec: &SceneSpec, snr_db: f64, seed: u64, trial: usize) -> Result<ReceivedTensor> {
    let mut rng = trial_rng(seed, trial);
    let scene = spec.realize(snr_db, &mut rng)?;
    Ok(synthesize_tensor(Arc::new(scene), &mut rng))
}

pub fn run_method(method: Method, input: &EstimationInput<'_>, cfg: &ExperimentConfig) -> Result<Estimate> {
    match method {
        Method::Tals => tals_run(input, &cfg.tals),
        Method::Krf => krf_estimate(input, &cfg.tals, &cfg.krf),
        Method::Ls => ls_estimate(input, &cfg.tals),
    }
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

// ---------------------------------------------------------------------------
// Single trial
// ---------------------------------------------------------------------------

/// Squared errors of one successful estimate against the truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialError {
    /// `Σ_l (θ̂ − θ)²` in degrees² after angle matching.
    pub sq_theta_deg: f64,
    /// `Σ_k ‖ẑ_k − z_k‖²` in the common gauge.
    pub sq_z: f64,
    /// `None` for closed-form estimators.
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub point: usize,
    pub trial: usize,
    /// One entry per requested method; `None` marks an estimator failure.
    pub outcomes: Vec<(Method, Option<TrialError>)>,
    /// `(Σ_l CRLB(θ_l) in rad², Σ CRLB(z̄))` when requested and identifiable.
    pub crlb: Option<(f64, f64)>,
}

pub fn trial_error(est: &Estimate, rx: &ReceivedTensor) -> Result<TrialError> {
    let truth = rx.scene.paths.flat();
    let sq_theta_deg = matched_sq_error_deg(&est.theta, &truth)?;
    let (z_true, _) = rx.scene.normalized_truth();
    if est.z.len() != z_true.len() {
        return Err(Error::Dimension("device count of the estimate differs from the truth".into()));
    }
    let sq_z = est.z.iter().zip(&z_true).map(|(e, t)| (e - t).norm_squared()).sum();
    let iterations = (est.stop != StopReason::ClosedForm).then_some(est.iterations);
    Ok(TrialError { sq_theta_deg, sq_z, iterations })
}

fn evaluate(method: Method, input: &EstimationInput<'_>, rx: &ReceivedTensor, cfg: &ExperimentConfig) -> Option<TrialError> {
    let err = run_method(method, input, cfg).and_then(|e| trial_error(&e, rx)).ok()?;
    (err.sq_theta_deg.is_finite() && err.sq_z.is_finite()).then_some(err)
}

fn trial_crlb(rx: &ReceivedTensor) -> Option<(f64, f64)> {
    let scene = &rx.scene;
    if scene.noise_var <= 0.0 {
        return None;
    }
    let b = scene_crlb(scene, scene.noise_var).ok()?;
    Some((b.theta.iter().sum(), b.z.iter().flatten().sum()))
}

pub fn run_trial(
    spec: &SceneSpec,
    point: &SweepPoint,
    index: usize,
    trial: usize,
    methods: &[Method],
    with_crlb: bool,
    cfg: &ExperimentConfig,
) -> Result<TrialRecord> {
    let rx = realize_trial(spec, point.snr_db, cfg.run.seed, trial)?;
    let input = EstimationInput::from_received(&rx)?;
    let outcomes = methods.iter().map(|&m| (m, evaluate(m, &input, &rx, cfg))).collect();
    let crlb = if with_crlb { trial_crlb(&rx) } else { None };
    Ok(TrialRecord { point: index, trial, outcomes, crlb })
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

fn crlb_fields(records: &[&TrialRecord]) -> (Option<f64>, Option<f64>) {
    let bounds: Vec<_> = records.iter().filter_map(|r| r.crlb).collect();
    if bounds.is_empty() {
        return (None, None);
    }
    let n = bounds.len() as f64;
    let theta = (bounds.iter().map(|b| b.0).sum::<f64>() / n).sqrt().to_degrees();
    let z = (bounds.iter().map(|b| b.1).sum::<f64>() / n).sqrt();
    (Some(theta), Some(z))
}

/// One row per method: RMSE over the successful trials, failures as a rate.
pub fn aggregate(point: &SweepPoint, records: &[&TrialRecord], methods: &[Method], seed: u64) -> Vec<ResultRow> {
    let (crlb_theta, crlb_z) = crlb_fields(records);
    let trials = records.len();
    methods
        .iter()
        .map(|&m| {
            let ok: Vec<TrialError> = records
                .iter()
                .filter_map(|r| r.outcomes.iter().find(|(mm, _)| *mm == m).and_then(|(_, e)| *e))
                .collect();
            let n = ok.len() as f64;
            let mean = |f: fn(&TrialError) -> f64| (!ok.is_empty()).then(|| ok.iter().map(f).sum::<f64>() / n);
            ResultRow {
                method: m.as_str().into(),
                sweep_axis: point.axis,
                sweep_value: point.value,
                rmse_theta_deg: mean(|e| e.sq_theta_deg).map(f64::sqrt),
                rmse_z: mean(|e| e.sq_z).map(f64::sqrt),
                crlb_sqrt_theta_deg: crlb_theta,
                crlb_sqrt_z: crlb_z,
                mean_iters: if ok.iter().all(|e| e.iterations.is_some()) {
                    mean(|e| e.iterations.unwrap_or(0) as f64)
                } else {
                    None
                },
                fail_rate: (trials - ok.len()) as f64 / trials as f64,
                trials,
                seed,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Runners
// ---------------------------------------------------------------------------

fn point_specs(cfg: &ExperimentConfig, points: &[SweepPoint]) -> Result<Vec<SceneSpec>> {
    points.iter().map(|p| cfg.scene_spec_scaled(p.amplitude_scale, p.phase_scale)).collect()
}

fn run_records(
    cfg: &ExperimentConfig,
    points: &[SweepPoint],
    methods: &[Method],
    with_crlb: bool,
    jobs: Option<usize>,
) -> Result<Vec<TrialRecord>> {
    let specs = point_specs(cfg, points)?;
    let pairs: Vec<(usize, usize)> =
        (0..points.len()).flat_map(|p| (0..cfg.run.trials).map(move |t| (p, t))).collect();
    with_pool(jobs, || {
        pairs
            .par_iter()
            .map(|&(p, t)| run_trial(&specs[p], &points[p], p, t, methods, with_crlb, cfg))
            .collect::<Result<Vec<_>>>()
    })?
}

fn group(records: &[TrialRecord], point: usize) -> Vec<&TrialRecord> {
    records.iter().filter(|r| r.point == point).collect()
}

/// Runs every configured method over the sweep list of `axis`.
pub fn run_sweep(cfg: &ExperimentConfig, axis: SweepAxis, jobs: Option<usize>) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let points = sweep_points(cfg, axis)?;
    let with_crlb = cfg.run.crlb && !cfg.scene.noiseless;
    let records = run_records(cfg, &points, &cfg.run.methods, with_crlb, jobs)?;
    let mut rows: Vec<_> = points
        .iter()
        .enumerate()
        .flat_map(|(i, p)| aggregate(p, &group(&records, i), &cfg.run.methods, cfg.run.seed))
        .collect();
    sort_rows(&mut rows);
    Ok(rows)
}

/// Bound rows only, one per SNR point. `fail_rate` counts trials whose
/// Fisher matrix could not be inverted.
pub fn run_crlb_only(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    if cfg.scene.noiseless {
        return Err(Error::Config("the CRLB needs a noisy scene".into()));
    }
    let points = sweep_points(cfg, SweepAxis::SnrDb)?;
    let records = run_records(cfg, &points, &[], true, jobs)?;
    let rows = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let g = group(&records, i);
            let (theta, z) = crlb_fields(&g);
            let ok = g.iter().filter(|r| r.crlb.is_some()).count();
            ResultRow {
                method: CRLB_LABEL.into(),
                sweep_axis: p.axis,
                sweep_value: p.value,
                rmse_theta_deg: None,
                rmse_z: None,
                crlb_sqrt_theta_deg: theta,
                crlb_sqrt_z: z,
                mean_iters: None,
                fail_rate: (g.len() - ok) as f64 / g.len() as f64,
                trials: g.len(),
                seed: cfg.run.seed,
            }
        })
        .collect();
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// `(snr, trial)` pairs where TALS returned an error.
    pub failures: Vec<(f64, usize)>,
}

impl ConvergenceReport {
    /// Iteration counts of the successful trials at `snr_db`, sorted.
    pub fn iterations_at(&self, snr_db: f64) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .rows
            .iter()
            .filter(|r| r.sweep_value == snr_db && r.iteration == 0)
            .map(|r0| {
                self.rows
                    .iter()
                    .filter(|r| r.sweep_value == snr_db && r.trial == r0.trial)
                    .map(|r| r.iteration)
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        out.sort_unstable();
        out
    }

    pub fn median_iterations(&self, snr_db: f64) -> Option<f64> {
        let it = self.iterations_at(snr_db);
        let n = it.len();
        match n {
            0 => None,
            _ if n % 2 == 1 => Some(it[n / 2] as f64),
            _ => Some((it[n / 2 - 1] + it[n / 2]) as f64 / 2.0),
        }
    }

    pub fn stop_reasons(&self) -> Vec<StopReason> {
        self.rows.iter().filter(|r| r.iteration == 0).map(|r| r.stop_reason).collect()
    }
}

/// TALS loss traces at each convergence SNR, one row per iteration.
pub fn run_convergence(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let snrs = &cfg.sweep.convergence_snr_db;
    if snrs.is_empty() {
        return Err(Error::Config("convergence_snr_db is empty".into()));
    }
    let spec = cfg.scene_spec()?;
    let pairs: Vec<(f64, usize)> = snrs.iter().flat_map(|&s| (0..cfg.run.trials).map(move |t| (s, t))).collect();
    let traces = with_pool(jobs, || {
        pairs
            .par_iter()
            .map(|&(snr, trial)| {
                let rx = realize_trial(&spec, snr, cfg.run.seed, trial)?;
                let input = EstimationInput::from_received(&rx)?;
                Ok(tals_run(&input, &cfg.tals).ok())
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let mut report = ConvergenceReport { rows: Vec::new(), failures: Vec::new() };
    for (&(snr, trial), est) in pairs.iter().zip(traces) {
        match est {
            Some(e) => report.rows.extend(e.trace.iter().enumerate().map(|(i, &loss)| ConvergenceRow {
                sweep_value: snr,
                trial,
                iteration: i,
                loss,
                stop_reason: e.stop,
            })),
            None => report.failures.push((snr, trial)),
        }
    }
    Ok(report)
}
