//! Joint TALS estimator and the KRF / LS baselines.

mod baselines;
mod music;
mod tals;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hardware::PilotMatrix;
use crate::linalg::{CMat, CVec, C64};
use crate::scene::{steering_matrix, ArrayGeometry, PathLayout, ReceivedTensor};
use crate::tensor::CTensor3;

pub use baselines::{krf_estimate, ls_estimate, KrfConfig};
pub use music::{
    beam_gain, default_subarray_len, golden_section, refine_angles, smoothed_covariance, smoothing_music,
    AngleGrid, NullSpectrum,
};
pub use tals::{
    column_scales, combined_factor, reconstruction_loss, svd_init, tals_init, tals_iterate, tals_run, update_a, update_gamma,
    update_z, InitialFactors,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "TALS")]
    Tals,
    #[serde(rename = "KRF")]
    Krf,
    #[serde(rename = "LS")]
    Ls,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Tals, Method::Krf, Method::Ls];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Tals => "TALS",
            Method::Krf => "KRF",
            Method::Ls => "LS",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "TALS" => Ok(Method::Tals),
            "KRF" => Ok(Method::Krf),
            "LS" => Ok(Method::Ls),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Relative loss change fell below `rho`.
    RelativeChange,
    /// Loss reached the numerical floor of an exact fit.
    LossFloor,
    MaxIters,
    /// Non-iterative estimator.
    ClosedForm,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::RelativeChange => "relative_change",
            StopReason::LossFloor => "loss_floor",
            StopReason::MaxIters => "max_iters",
            StopReason::ClosedForm => "closed_form",
        }
    }

    pub fn converged(self) -> bool {
        !matches!(self, StopReason::MaxIters)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TalsConfig {
    pub tau0: f64,
    pub delta: f64,
    pub rho: f64,
    pub max_iters: usize,
    /// Stop once the loss is below `loss_floor · ‖W1‖`.
    pub loss_floor: f64,
    pub music_step_deg: f64,
    pub beam_step_deg: f64,
    /// Smoothing sub-array length; derived from the array and path counts when absent.
    pub subarray_len: Option<usize>,
    /// Upper bound on angle-to-device assignments tried at initialization.
    pub max_assignments: usize,
    /// Also start from the KRF estimate and keep the run with the lower final loss.
    pub krf_start: bool,
}

impl Default for TalsConfig {
    fn default() -> Self {
        Self {
            tau0: 0.1,
            delta: 0.9,
            rho: 1e-10,
            max_iters: 100,
            loss_floor: 1e-13,
            music_step_deg: AngleGrid::MUSIC.step_deg,
            beam_step_deg: AngleGrid::BEAMFORMING.step_deg,
            subarray_len: None,
            max_assignments: 20_000,
            krf_start: true,
        }
    }
}

impl TalsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.rho > 0.0) {
            return Err(Error::Config("rho must be positive".into()));
        }
        if !(self.tau0 >= 0.0) {
            return Err(Error::Config("tau0 must be non-negative".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        if !(self.music_step_deg > 0.0 && self.beam_step_deg > 0.0) {
            return Err(Error::Config("angle grid steps must be positive".into()));
        }
        Ok(())
    }

    pub fn music_grid(&self) -> AngleGrid {
        AngleGrid { step_deg: self.music_step_deg, ..AngleGrid::MUSIC }
    }

    pub fn beam_grid(&self) -> AngleGrid {
        AngleGrid { step_deg: self.beam_step_deg, ..AngleGrid::BEAMFORMING }
    }
}

/// Everything an estimator may use: the received cube and the known
/// pilots, path counts and array geometry.
#[derive(Debug, Clone)]
pub struct EstimationInput<'a> {
    pub tensor: &'a CTensor3,
    pub pilots: &'a [PilotMatrix],
    pub layout: PathLayout,
    pub geometry: &'a ArrayGeometry,
}

impl<'a> EstimationInput<'a> {
    pub fn new(
        tensor: &'a CTensor3,
        pilots: &'a [PilotMatrix],
        layout: PathLayout,
        geometry: &'a ArrayGeometry,
    ) -> Result<Self> {
        let input = Self { tensor, pilots, layout, geometry };
        input.validate()?;
        Ok(input)
    }

    pub fn from_received(rx: &'a ReceivedTensor) -> Result<Self> {
        Self::new(&rx.data, &rx.scene.pilots, rx.scene.layout(), &rx.scene.geometry)
    }

    fn validate(&self) -> Result<()> {
        let (j, q, _) = self.tensor.dims();
        if self.pilots.len() != self.layout.devices() {
            return Err(Error::Dimension("one pilot matrix per device is required".into()));
        }
        if self.pilots.iter().any(|p| p.len() != j) {
            return Err(Error::Dimension("pilot length must equal the snapshot count".into()));
        }
        if q != self.geometry.antennas() {
            return Err(Error::Dimension("antenna count mismatch".into()));
        }
        if self.layout.total_paths() >= q {
            return Err(Error::Dimension(format!(
                "{} paths need more than {q} antennas",
                self.layout.total_paths()
            )));
        }
        Ok(())
    }

    pub fn feature_len(&self) -> usize {
        self.pilots[0].s_tilde.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub method: Method,
    /// Path angles in radians, grouped by device and ascending within a device.
    pub theta: Vec<f64>,
    pub a: CMat,
    pub gamma: CMat,
    /// Per-device feature vectors with second-to-last entry equal to one.
    pub z: Vec<CVec>,
    /// Loss before the first iteration followed by the loss after each one.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub stop: StopReason,
}

/// Moves the `z_k` ↔ `Γ` scale into `Γ` so that every `z_k` has unit
/// second-to-last entry.
pub fn normalize_ambiguity(z: &[CVec], gamma: &CMat, layout: &PathLayout) -> Result<(Vec<CVec>, CMat)> {
    let mut g = gamma.clone();
    let mut out = Vec::with_capacity(z.len());
    for (k, zk) in z.iter().enumerate() {
        let n = zk.len();
        if n < 2 {
            return Err(Error::DegenerateProfile { device: k });
        }
        let pivot = zk[n - 2];
        if pivot.norm() <= f64::MIN_POSITIVE || !pivot.re.is_finite() || !pivot.im.is_finite() {
            return Err(Error::DegenerateProfile { device: k });
        }
        let mut zn = zk / pivot;
        zn[n - 2] = C64::new(1.0, 0.0);
        for c in layout.paths_of(k) {
            g.column_mut(c).iter_mut().for_each(|x| *x *= pivot);
        }
        out.push(zn);
    }
    Ok((out, g))
}

/// Reorders paths so angles ascend within each device; `a` is rebuilt from the angles.
pub fn sort_within_devices(
    theta: &[f64],
    gamma: &CMat,
    layout: &PathLayout,
    geom: &ArrayGeometry,
) -> (Vec<f64>, CMat, CMat) {
    let mut order = Vec::with_capacity(theta.len());
    for k in 0..layout.devices() {
        let mut idx: Vec<usize> = layout.paths_of(k).collect();
        idx.sort_by(|&a, &b| theta[a].total_cmp(&theta[b]));
        order.extend(idx);
    }
    let sorted: Vec<f64> = order.iter().map(|&i| theta[i]).collect();
    let g = CMat::from_fn(gamma.nrows(), order.len(), |r, c| gamma[(r, order[c])]);
    let a = steering_matrix(&sorted, geom);
    (sorted, a, g)
}

/// Every way of dealing `counts.iter().sum()` sorted items into device
/// groups of the given sizes, keeping ascending order inside each group.
/// Each assignment maps path slot to item index.
pub fn device_assignments(counts: &[usize], limit: usize) -> Result<Vec<Vec<usize>>> {
    fn rec(
        counts: &[usize],
        remaining: &[usize],
        current: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
        limit: usize,
    ) -> Result<()> {
        let Some((&l, rest)) = counts.split_first() else {
            if out.len() >= limit {
                return Err(Error::Initialization(format!(
                    "more than {limit} angle-to-device assignments"
                )));
            }
            out.push(current.clone());
            return Ok(());
        };
        let mut pick = Vec::with_capacity(l);
        choose(remaining, l, 0, &mut pick, &mut |chosen| {
            let left: Vec<usize> = remaining.iter().copied().filter(|x| !chosen.contains(x)).collect();
            let base = current.len();
            current.extend_from_slice(chosen);
            let r = rec(rest, &left, current, out, limit);
            current.truncate(base);
            r
        })
    }

    fn choose(
        items: &[usize],
        l: usize,
        start: usize,
        pick: &mut Vec<usize>,
        f: &mut dyn FnMut(&[usize]) -> Result<()>,
    ) -> Result<()> {
        if pick.len() == l {
            return f(pick);
        }
        for i in start..items.len() {
            if items.len() - i < l - pick.len() {
                break;
            }
            pick.push(items[i]);
            choose(items, l, i + 1, pick, f)?;
            pick.pop();
        }
        Ok(())
    }

    let n: usize = counts.iter().sum();
    let items: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    rec(counts, &items, &mut Vec::with_capacity(n), &mut out, limit)?;
    Ok(out)
}
