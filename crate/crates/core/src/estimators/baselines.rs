//! Non-iterative reference estimators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    hermitian_eigen, khatri_rao, least_squares, regularized_rows_solve, sorted_svd, CMat, CVec, C64, ZERO,
};
use crate::scene::steering_matrix;

use super::music::{default_subarray_len, smoothing_music};
use super::{
    device_assignments, normalize_ambiguity, sort_within_devices, EstimationInput, Estimate, Method, StopReason,
    TalsConfig,
};

/// Plain least squares `argmin_X ‖w − X·b‖` over rows.
fn rows_ls(w: &CMat, b: &CMat) -> Result<CMat> {
    regularized_rows_solve(w, b, &CMat::zeros(w.nrows(), b.nrows()), 0.0)
        .map_err(|_| Error::RankDeficient(format!("{}x{} row design", b.nrows(), b.ncols())))
}

fn hermitian_sqrt(g: &CMat) -> CMat {
    let (vals, vecs) = hermitian_eigen(g);
    let root = CVec::from_iterator(vals.len(), vals.iter().map(|v| C64::new(v.max(0.0).sqrt(), 0.0)));
    &vecs * CMat::from_diagonal(&root) * vecs.adjoint()
}

/// Splits a `rows × L_p` matrix that is rank one in the noiseless case into
/// `(γ, z)` with `γ·zᵀ` its best rank-one approximation.
fn rank_one_split(m: &CMat) -> (CVec, CVec) {
    let (u, s, v) = sorted_svd(m);
    let gamma = u.column(0) * C64::new(s[0], 0.0);
    let z = v.column(0).map(|x| x.conj());
    (gamma, z)
}

/// Stacked-pilot LS channel estimate per block, MUSIC on the stacked channel
/// and a rank-one split into fading and features per device.
pub fn ls_estimate(input: &EstimationInput<'_>, config: &TalsConfig) -> Result<Estimate> {
    let layout = &input.layout;
    let geom = input.geometry;
    let (_, q, m) = input.tensor.dims();
    let k_tilde = layout.total_paths();
    let lp = input.feature_len();
    let devices = layout.devices();
    if input.tensor.dims().0 < devices * lp {
        return Err(Error::RankDeficient("fewer snapshots than stacked pilot columns".into()));
    }
    let mut y = CMat::zeros(devices * lp, input.tensor.dims().0);
    for (k, p) in input.pilots.iter().enumerate() {
        y.rows_mut(k * lp, lp).copy_from(&p.s_tilde.transpose());
    }
    let h: Vec<CMat> = (0..m).map(|mb| rows_ls(&input.tensor.block(mb), &y)).collect::<Result<_>>()?;
    // Noise in Ĥ_m has column covariance σ²(YYᴴ)⁻¹; whiten before MUSIC so
    // poorly excited high-order pilot columns do not dominate the covariance.
    let white = hermitian_sqrt(&(&y * y.adjoint()));
    let mut stacked = CMat::zeros(q, m * devices * lp);
    for (mb, hm) in h.iter().enumerate() {
        stacked.columns_mut(mb * devices * lp, devices * lp).copy_from(&(hm * &white));
    }
    let max_l = layout.counts().iter().copied().max().unwrap_or(1);
    let sub = config.subarray_len.unwrap_or_else(|| default_subarray_len(q, k_tilde, max_l));
    let angles = smoothing_music(&stacked, geom, k_tilde, sub, config.music_grid())?;
    let a_all = steering_matrix(&angles, geom);
    let p: Vec<CMat> = h.iter().map(|hm| least_squares(&a_all, hm)).collect::<Result<_>>()?;

    // energy[i][k]: power of angle i's row on device k's pilot block
    let energy: Vec<Vec<f64>> = (0..k_tilde)
        .map(|i| {
            (0..devices)
                .map(|k| p.iter().map(|pm| pm.view((i, k * lp), (1, lp)).norm_squared()).sum())
                .collect()
        })
        .collect();
    let assign = device_assignments(layout.counts(), config.max_assignments)?
        .into_iter()
        .max_by(|x, y| {
            let score = |a: &Vec<usize>| -> f64 {
                a.iter().enumerate().map(|(slot, &i)| energy[i][layout.device_of(slot)]).sum()
            };
            score(x).total_cmp(&score(y))
        })
        .ok_or_else(|| Error::Initialization("no device assignment".into()))?;

    let theta: Vec<f64> = assign.iter().map(|&i| angles[i]).collect();
    let mut gamma = CMat::zeros(m, k_tilde);
    let mut z = Vec::with_capacity(devices);
    for k in 0..devices {
        let slots: Vec<usize> = layout.paths_of(k).collect();
        let rows = CMat::from_fn(m * slots.len(), lp, |r, c| {
            let (mb, s) = (r / slots.len(), r % slots.len());
            p[mb][(assign[slots[s]], k * lp + c)]
        });
        let (g, zk) = rank_one_split(&rows);
        for (s, &slot) in slots.iter().enumerate() {
            for mb in 0..m {
                gamma[(mb, slot)] = g[mb * slots.len() + s];
            }
        }
        z.push(zk);
    }
    let (z, gamma) = normalize_ambiguity(&z, &gamma, layout)?;
    let (theta, a, gamma) = sort_within_devices(&theta, &gamma, layout, geom);
    Ok(Estimate { method: Method::Ls, theta, a, gamma, z, trace: Vec::new(), iterations: 0, stop: StopReason::ClosedForm })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KrfConfig {
    /// Number of waveform passes. The first assumes ideal hardware; later
    /// passes reuse the waveforms implied by the previous feature estimate.
    pub passes: usize,
}

impl Default for KrfConfig {
    fn default() -> Self {
        Self { passes: 2 }
    }
}

/// Khatri-Rao factorization: LS fit of `(Γ ⊙ A)Ψ` against assumed
/// waveforms, then per-device low-rank split of each reshaped column.
pub fn krf_estimate(input: &EstimationInput<'_>, config: &TalsConfig, krf: &KrfConfig) -> Result<Estimate> {
    let layout = &input.layout;
    let geom = input.geometry;
    let (j, q, m) = input.tensor.dims();
    let devices = layout.devices();
    let k_tilde = layout.total_paths();
    let w1 = input.tensor.unfold(crate::tensor::Mode::One);
    let mut v = CMat::from_fn(j, devices, |r, k| input.pilots[k].s[r]);
    let mut result = None;
    for _ in 0..krf.passes.max(1) {
        let ft = least_squares(&v, &w1)?;
        let mut theta = vec![0.0; k_tilde];
        let mut gamma = CMat::zeros(m, k_tilde);
        for k in 0..devices {
            let lk = layout.counts()[k];
            // H_k(m, q) = Σ_l γ_{m,l}·a_l(q) for the paths of device k
            let hk = CMat::from_fn(m, q, |mb, qq| ft[(k, mb * q + qq)]);
            let (u, s, vv) = sorted_svd(&hk.transpose());
            let r = lk.min(s.len());
            let low = u.columns(0, r)
                * CMat::from_diagonal(&CVec::from_iterator(r, s[..r].iter().map(|&x| C64::new(x, 0.0))))
                * vv.columns(0, r).adjoint();
            let sub = config.subarray_len.unwrap_or_else(|| default_subarray_len(q, lk, lk)).min(q);
            let th = smoothing_music(&low, geom, lk, sub.max(lk + 1), config.music_grid())?;
            let ak = steering_matrix(&th, geom);
            let gk = rows_ls(&hk, &ak.transpose())?;
            for (i, p) in layout.paths_of(k).enumerate() {
                theta[p] = th[i];
                gamma.set_column(p, &gk.column(i));
            }
        }
        let a = steering_matrix(&theta, geom);
        let f = khatri_rao(&gamma, &a)? * layout.selection();
        let v_hat = rows_ls(&w1, &f.transpose())?;
        let z: Vec<CVec> = (0..devices)
            .map(|k| least_squares(&input.pilots[k].s_tilde, &v_hat.columns(k, 1).into_owned()).map(|x| x.column(0).into_owned()))
            .collect::<Result<_>>()?;
        v = CMat::from_fn(j, devices, |_, _| ZERO);
        for k in 0..devices {
            v.set_column(k, &(&input.pilots[k].s_tilde * &z[k]));
        }
        result = Some((theta, gamma, z));
    }
    let (theta, gamma, z) = result.expect("at least one pass");
    let (z, gamma) = normalize_ambiguity(&z, &gamma, layout)?;
    let (theta, a, gamma) = sort_within_devices(&theta, &gamma, layout, geom);
    Ok(Estimate { method: Method::Krf, theta, a, gamma, z, trace: Vec::new(), iterations: 0, stop: StopReason::ClosedForm })
}
