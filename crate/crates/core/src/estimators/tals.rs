//! Tensor alternating least squares with steering-structured angles.

use crate::error::{Error, Result};
use crate::hardware::PilotMatrix;
use crate::linalg::{
    frobenius, hpd_solve, khatri_rao, regularized_rows_solve, sorted_svd, CMat, CVec, C64,
};
use crate::scene::{steering_matrix, PathLayout};
use crate::tensor::Mode;

use super::baselines::{krf_estimate, KrfConfig};
use super::music::{default_subarray_len, refine_angles, smoothing_music};
use super::{
    device_assignments, normalize_ambiguity, sort_within_devices, EstimationInput, Estimate, Method, StopReason,
    TalsConfig,
};

/// `U = V·Ψᵀ` with `V(:, k) = S̃_k·z_k`.
pub fn combined_factor(pilots: &[PilotMatrix], z: &[CVec], layout: &PathLayout) -> CMat {
    let j = pilots[0].len();
    let mut u = CMat::zeros(j, layout.total_paths());
    for (k, (p, zk)) in pilots.iter().zip(z).enumerate() {
        let v = &p.s_tilde * zk;
        for c in layout.paths_of(k) {
            u.set_column(c, &v);
        }
    }
    u
}

/// `‖W1 − U(Γ ⊙ A)ᵀ‖_F`
pub fn reconstruction_loss(w1: &CMat, u: &CMat, a: &CMat, gamma: &CMat) -> Result<f64> {
    let model = u * khatri_rao(gamma, a)?.transpose();
    Ok(frobenius(&(w1 - model)))
}

/// Dominant left singular subspaces of `W1` (rank `u_rank`) and `W3` (rank `gamma_rank`).
pub fn svd_init(w1: &CMat, w3: &CMat, u_rank: usize, gamma_rank: usize) -> Result<(CMat, CMat)> {
    Ok((dominant_subspace(w1, u_rank)?, dominant_subspace(w3, gamma_rank)?))
}

fn dominant_subspace(m: &CMat, r: usize) -> Result<CMat> {
    let available = m.nrows().min(m.ncols());
    if r == 0 || r > available {
        return Err(Error::RankTooLarge { requested: r, available });
    }
    let (u, s, _) = sorted_svd(m);
    if !(s[r - 1] > 1e-12 * s[0]) {
        return Err(Error::RankDeficient(format!(
            "rank {r} requested but singular value {} of {} vanishes",
            r,
            s.len()
        )));
    }
    Ok(u.columns(0, r).into_owned())
}

pub fn update_a(w2: &CMat, b1: &CMat, a_prev: &CMat, tau: f64) -> Result<CMat> {
    regularized_rows_solve(w2, b1, a_prev, tau)
}

pub fn update_gamma(w3: &CMat, b3: &CMat, gamma_prev: &CMat, tau: f64) -> Result<CMat> {
    regularized_rows_solve(w3, b3, gamma_prev, tau)
}

/// Structured regularized LS for the per-device feature vectors, holding
/// `Γ` and `A` fixed. The design matrix is `[c_1 ⊗ S̃_1, …, c_K ⊗ S̃_K]`
/// with `c_k = ((Γ ⊙ A)Ψ)(:, k)`; only its Gram blocks are formed.
pub fn update_z(
    w1: &CMat,
    gamma: &CMat,
    a: &CMat,
    layout: &PathLayout,
    pilots: &[PilotMatrix],
    z_prev: &[CVec],
    tau: f64,
) -> Result<Vec<CVec>> {
    let kr = khatri_rao(gamma, a)?;
    if w1.ncols() != kr.nrows() {
        return Err(Error::Dimension("W1 columns must equal M·Q".into()));
    }
    let devices = layout.devices();
    let lp = pilots[0].s_tilde.ncols();
    let c: Vec<CVec> = (0..devices)
        .map(|k| layout.paths_of(k).fold(CVec::zeros(kr.nrows()), |acc, p| acc + kr.column(p)))
        .collect();
    let n = devices * lp;
    let mut g = CMat::zeros(n, n);
    let mut rhs = CMat::zeros(n, 1);
    for k1 in 0..devices {
        let s1h = pilots[k1].s_tilde.adjoint();
        for k2 in k1..devices {
            let block = &s1h * &pilots[k2].s_tilde * c[k1].dotc(&c[k2]);
            g.view_mut((k1 * lp, k2 * lp), (lp, lp)).copy_from(&block);
            if k2 != k1 {
                g.view_mut((k2 * lp, k1 * lp), (lp, lp)).copy_from(&block.adjoint());
            }
        }
        let r = &s1h * (w1 * c[k1].map(|x| x.conj()));
        rhs.view_mut((k1 * lp, 0), (lp, 1)).copy_from(&r);
        for i in 0..lp {
            g[(k1 * lp + i, k1 * lp + i)] += C64::new(tau, 0.0);
            rhs[(k1 * lp + i, 0)] += z_prev[k1][i] * tau;
        }
    }
    let sol = hpd_solve(g, &rhs)
        .map_err(|_| Error::RankDeficient("feature design matrix is rank deficient".into()))?;
    Ok((0..devices).map(|k| sol.view((k * lp, 0), (lp, 1)).column(0).into_owned()).collect())
}

/// Per-path complex scales `d` minimizing `‖W1 − U(Γ·diag(d) ⊙ A)ᵀ‖`.
pub fn column_scales(w1: &CMat, u: &CMat, a: &CMat, gamma: &CMat) -> Result<CVec> {
    let kr = khatri_rao(gamma, a)?;
    let n = u.ncols();
    let uu = u.adjoint() * u;
    let kk = kr.adjoint() * &kr;
    let g = CMat::from_fn(n, n, |r, c| uu[(r, c)] * kk[(r, c)]);
    let proj = u.adjoint() * w1 * kr.map(|x| x.conj());
    let rhs = CMat::from_fn(n, 1, |r, _| proj[(r, r)]);
    Ok(hpd_solve(g, &rhs)?.column(0).into_owned())
}

#[derive(Debug, Clone)]
pub struct InitialFactors {
    pub theta: Vec<f64>,
    pub a: CMat,
    pub z: Vec<CVec>,
    pub gamma: CMat,
}

/// MUSIC angles, subspace features and the fading LS fit for the best
/// assignment of angles to devices.
pub fn tals_init(input: &EstimationInput<'_>, config: &TalsConfig) -> Result<InitialFactors> {
    let t = input.tensor;
    let (w1, w2, w3) = (t.unfold(Mode::One), t.unfold(Mode::Two), t.unfold(Mode::Three));
    let layout = &input.layout;
    let k_tilde = layout.total_paths();
    let q = input.geometry.antennas();
    let max_l = layout.counts().iter().copied().max().unwrap_or(1);
    let sub = config.subarray_len.unwrap_or_else(|| default_subarray_len(q, k_tilde, max_l));
    let angles = smoothing_music(&w2, input.geometry, k_tilde, sub, config.music_grid())?;

    let gamma_rank = k_tilde.min(w3.nrows());
    let (us, gs) = svd_init(&w1, &w3, layout.devices(), gamma_rank)?;
    let z: Vec<CVec> = input
        .pilots
        .iter()
        .map(|p| {
            let resid = &p.s_tilde - &us * (us.adjoint() * &p.s_tilde);
            let (_, _, v) = sorted_svd(&resid);
            v.column(v.ncols() - 1).into_owned()
        })
        .collect();
    let u = combined_factor(input.pilots, &z, layout);
    let zero = CMat::zeros(w3.nrows(), k_tilde);

    let mut best: Option<(f64, Vec<f64>, CMat, CMat)> = None;
    for assign in device_assignments(layout.counts(), config.max_assignments)? {
        let theta: Vec<f64> = assign.iter().map(|&i| angles[i]).collect();
        let a = steering_matrix(&theta, input.geometry);
        let b3 = khatri_rao(&a, &u)?.transpose();
        let Ok(gamma) = regularized_rows_solve(&w3, &b3, &zero, 0.0) else {
            continue;
        };
        let resid = frobenius(&(&w3 - &gamma * &b3));
        if best.as_ref().is_none_or(|b| resid < b.0) {
            best = Some((resid, theta, a, gamma));
        }
    }
    let (_, theta, a, gamma) =
        best.ok_or_else(|| Error::Initialization("no angle assignment admits a fading fit".into()))?;
    let gamma = &gs * (gs.adjoint() * gamma);
    Ok(InitialFactors { theta, a, z, gamma })
}

/// Runs the full TALS loop and returns the gauge-normalized estimate.
///
/// With `krf_start` the loop is also run from the KRF estimate and the run
/// with the lower final loss is returned.
pub fn tals_run(input: &EstimationInput<'_>, config: &TalsConfig) -> Result<Estimate> {
    config.validate()?;
    let own = tals_init(input, config).and_then(|init| tals_iterate(input, config, init));
    if !config.krf_start {
        return own;
    }
    let warm = krf_estimate(input, config, &KrfConfig::default()).and_then(|k| {
        let init = InitialFactors { theta: k.theta, a: k.a, z: k.z, gamma: k.gamma };
        tals_iterate(input, config, init)
    });
    match (own, warm) {
        (Ok(a), Ok(b)) => Ok(if final_loss(&b) < final_loss(&a) { b } else { a }),
        (Ok(a), Err(_)) => Ok(a),
        (Err(_), Ok(b)) => Ok(b),
        (Err(e), Err(_)) => Err(e),
    }
}

fn final_loss(e: &Estimate) -> f64 {
    e.trace.last().copied().unwrap_or(f64::INFINITY)
}

/// The alternating loop from a given starting point.
pub fn tals_iterate(input: &EstimationInput<'_>, config: &TalsConfig, init: InitialFactors) -> Result<Estimate> {
    let t = input.tensor;
    let (w1, w2, w3) = (t.unfold(Mode::One), t.unfold(Mode::Two), t.unfold(Mode::Three));
    let layout = &input.layout;
    let pilots = input.pilots;
    let geom = input.geometry;
    let beam = config.beam_grid();
    let floor = config.loss_floor * frobenius(&w1);

    let InitialFactors { mut theta, mut a, mut z, mut gamma } = init;
    (z, gamma) = normalize_ambiguity(&z, &gamma, layout)?;
    let mut u = combined_factor(pilots, &z, layout);
    let mut loss = reconstruction_loss(&w1, &u, &a, &gamma)?;
    let mut trace = vec![loss];
    let mut tau = config.tau0;
    let mut stop = StopReason::MaxIters;
    let mut iterations = 0;

    for _ in 0..config.max_iters {
        let prev = loss;

        let b1 = khatri_rao(&u, &gamma)?.transpose();
        let a_free = update_a(&w2, &b1, &a, tau)?;
        let (theta_s, a_s) = refine_angles(&a_free, geom, beam);
        if let Ok(d) = column_scales(&w1, &u, &a_s, &gamma) {
            let gamma_s = &gamma * CMat::from_diagonal(&d);
            let l = reconstruction_loss(&w1, &u, &a_s, &gamma_s)?;
            if l <= loss {
                (theta, a, gamma, loss) = (theta_s, a_s, gamma_s, l);
            }
        }

        let z_new = update_z(&w1, &gamma, &a, layout, pilots, &z, tau)?;
        if let Ok((z_n, gamma_n)) = normalize_ambiguity(&z_new, &gamma, layout) {
            let u_n = combined_factor(pilots, &z_n, layout);
            let l = reconstruction_loss(&w1, &u_n, &a, &gamma_n)?;
            if l <= loss {
                (z, gamma, u, loss) = (z_n, gamma_n, u_n, l);
            }
        }

        let b3 = khatri_rao(&a, &u)?.transpose();
        let gamma_new = update_gamma(&w3, &b3, &gamma, tau)?;
        let l = reconstruction_loss(&w1, &u, &a, &gamma_new)?;
        if l <= loss {
            (gamma, loss) = (gamma_new, l);
        }

        tau *= config.delta;
        trace.push(loss);
        iterations += 1;
        if loss <= floor {
            stop = StopReason::LossFloor;
            break;
        }
        if (prev - loss).abs() / prev < config.rho {
            stop = StopReason::RelativeChange;
            break;
        }
    }

    let (theta, a, gamma) = sort_within_devices(&theta, &gamma, layout, geom);
    Ok(Estimate { method: Method::Tals, theta, a, gamma, z, trace, iterations, stop })
}
