//! Ground-truth scene synthesis: array steering, multipath selection, block
//! fading and additive noise, stacked into the `J × Q × M` received cube.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::hardware::{build_pilot_matrix, HardwareProfile, PilotMatrix};
use crate::linalg::{CMat, CVec, C64};
use crate::pilots::{generate_pilots, PilotKind};
use crate::tensor::CTensor3;

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    /// `d_q` in meters; `spacings[0] == 0` is the reference element.
    spacings: Vec<f64>,
    wavelength: f64,
}

impl ArrayGeometry {
    pub fn new(spacings: Vec<f64>, wavelength: f64) -> Result<Self> {
        if spacings.len() < 2 {
            return Err(Error::Config("array needs at least two antennas".into()));
        }
        if spacings[0] != 0.0 {
            return Err(Error::Config("first antenna must be the reference (d = 0)".into()));
        }
        if !(wavelength > 0.0) {
            return Err(Error::Config("wavelength must be positive".into()));
        }
        Ok(Self { spacings, wavelength })
    }

    /// Uniform linear array with spacing given in wavelengths.
    pub fn ula(antennas: usize, spacing_wavelengths: f64, wavelength: f64) -> Result<Self> {
        let d = spacing_wavelengths * wavelength;
        Self::new((0..antennas).map(|q| q as f64 * d).collect(), wavelength)
    }

    pub fn antennas(&self) -> usize {
        self.spacings.len()
    }

    pub fn spacings(&self) -> &[f64] {
        &self.spacings
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    /// Electrical phase slope `2π·d_q/λ` per element.
    pub fn phase_slopes(&self) -> impl Iterator<Item = f64> + '_ {
        self.spacings.iter().map(move |d| 2.0 * PI * d / self.wavelength)
    }

    pub fn is_uniform(&self) -> bool {
        let d1 = self.spacings[1];
        self.spacings
            .iter()
            .enumerate()
            .all(|(q, d)| (d - q as f64 * d1).abs() <= 1e-12 * d1.abs().max(1e-300))
    }

    /// The first `len` elements, used by spatial smoothing.
    pub fn subarray(&self, len: usize) -> Result<Self> {
        Self::new(self.spacings[..len].to_vec(), self.wavelength)
    }
}

pub fn steering_vector(theta: f64, geom: &ArrayGeometry) -> CVec {
    let s = theta.sin();
    CVec::from_iterator(geom.antennas(), geom.phase_slopes().map(|k| C64::from_polar(1.0, -k * s)))
}

/// `∂a(θ)/∂θ`: element `q` is `−j·2π·d_q·cos θ/λ · a_q(θ)`.
pub fn steering_derivative(theta: f64, geom: &ArrayGeometry) -> CVec {
    let (s, c) = theta.sin_cos();
    CVec::from_iterator(
        geom.antennas(),
        geom.phase_slopes()
            .map(|k| C64::new(0.0, -k * c) * C64::from_polar(1.0, -k * s)),
    )
}

pub fn steering_matrix(thetas: &[f64], geom: &ArrayGeometry) -> CMat {
    let mut a = CMat::zeros(geom.antennas(), thetas.len());
    for (c, &t) in thetas.iter().enumerate() {
        a.set_column(c, &steering_vector(t, geom));
    }
    a
}

/// Device-to-path layout: device `k` owns `counts[k]` consecutive columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathLayout {
    counts: Vec<usize>,
}

impl PathLayout {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() || counts.contains(&0) {
            return Err(Error::Config("every device needs at least one path".into()));
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn devices(&self) -> usize {
        self.counts.len()
    }

    /// `K̃`
    pub fn total_paths(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn paths_of(&self, device: usize) -> std::ops::Range<usize> {
        let start: usize = self.counts[..device].iter().sum();
        start..start + self.counts[device]
    }

    pub fn device_of(&self, path: usize) -> usize {
        let mut acc = 0;
        for (k, &l) in self.counts.iter().enumerate() {
            acc += l;
            if path < acc {
                return k;
            }
        }
        panic!("path {path} out of range");
    }

    pub fn selection(&self) -> CMat {
        build_selection_matrix(&self.counts)
    }
}

/// `Ψ = blkdiag(1_{l_1}, …, 1_{l_K})`, `K̃ × K`.
pub fn build_selection_matrix(counts: &[usize]) -> CMat {
    let total: usize = counts.iter().sum();
    let mut psi = CMat::zeros(total, counts.len());
    let mut row = 0;
    for (k, &l) in counts.iter().enumerate() {
        for _ in 0..l {
            psi[(row, k)] = C64::new(1.0, 0.0);
            row += 1;
        }
    }
    psi
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub doas: Vec<Vec<f64>>,
}

impl PathSet {
    pub fn new(doas: Vec<Vec<f64>>) -> Result<Self> {
        let flat: Vec<f64> = doas.iter().flatten().copied().collect();
        if doas.iter().any(|d| d.is_empty()) {
            return Err(Error::Config("every device needs at least one DoA".into()));
        }
        if flat.iter().any(|t| !(t.abs() < PI / 2.0)) {
            return Err(Error::Config("DoAs must lie strictly inside (−90°, 90°)".into()));
        }
        for (i, a) in flat.iter().enumerate() {
            if flat[i + 1..].iter().any(|b| a == b) {
                return Err(Error::Config("DoAs must be distinct".into()));
            }
        }
        Ok(Self { doas })
    }

    pub fn layout(&self) -> PathLayout {
        PathLayout { counts: self.doas.iter().map(Vec::len).collect() }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.doas.iter().flatten().copied().collect()
    }
}

/// `Γ`, `M × K̃`: row `m` is the fading vector of block `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingMatrix(pub CMat);

/// Fading magnitude that makes the expected noiseless power per tensor
/// entry equal `snr · noise_var`, given the mean power of each path's
/// transmitted envelope. Steering entries have unit modulus and the random
/// phases decorrelate paths, so that power is `g² · Σ path_powers`.
pub fn fading_magnitude(snr_db: f64, noise_var: f64, path_powers: &[f64]) -> f64 {
    let snr = 10f64.powf(snr_db / 10.0);
    let total: f64 = path_powers.iter().sum();
    (snr * noise_var / total).sqrt()
}

pub fn draw_fading<R: Rng + ?Sized>(
    snr_db: f64,
    noise_var: f64,
    path_powers: &[f64],
    blocks: usize,
    rng: &mut R,
) -> FadingMatrix {
    let g = fading_magnitude(snr_db, noise_var, path_powers);
    FadingMatrix(CMat::from_fn(blocks, path_powers.len(), |_, _| {
        C64::from_polar(g, rng.random_range(-PI..PI))
    }))
}

pub fn complex_gaussian<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> C64 {
    let sd = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(sd * re, sd * im)
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub geometry: ArrayGeometry,
    pub paths: PathSet,
    pub fading: FadingMatrix,
    pub profiles: Vec<HardwareProfile>,
    pub pilots: Vec<PilotMatrix>,
    /// Power of the additive noise; zero gives a noiseless cube.
    pub noise_var: f64,
    pub blocks: usize,
    pub snapshots: usize,
}

impl Scene {
    pub fn layout(&self) -> PathLayout {
        self.paths.layout()
    }

    pub fn selection(&self) -> CMat {
        self.layout().selection()
    }

    pub fn steering(&self) -> CMat {
        steering_matrix(&self.paths.flat(), &self.geometry)
    }

    /// `Y = [S̃_1, …, S̃_K]ᵀ`, `K·L_p × J`.
    pub fn y_matrix(&self) -> CMat {
        let lp = self.pilots[0].s_tilde.ncols();
        let mut y = CMat::zeros(lp * self.pilots.len(), self.snapshots);
        for (k, p) in self.pilots.iter().enumerate() {
            y.rows_mut(k * lp, lp).copy_from(&p.s_tilde.transpose());
        }
        y
    }

    /// `Z = blkdiag(z_1ᵀ, …, z_Kᵀ)`, `K × K·L_p`.
    pub fn z_matrix(&self) -> CMat {
        let lp = self.profiles[0].z.len();
        let mut z = CMat::zeros(self.profiles.len(), lp * self.profiles.len());
        for (k, p) in self.profiles.iter().enumerate() {
            z.view_mut((k, k * lp), (1, lp)).copy_from(&p.z.transpose());
        }
        z
    }

    /// `V = Yᵀ·Zᵀ`, column `k` is device `k`'s impaired envelope.
    pub fn waveforms(&self) -> CMat {
        let mut v = CMat::zeros(self.snapshots, self.profiles.len());
        for (k, (p, h)) in self.pilots.iter().zip(&self.profiles).enumerate() {
            v.set_column(k, &(&p.s_tilde * &h.z));
        }
        v
    }

    /// `U = V·Ψᵀ`, `J × K̃`.
    pub fn combined_factor(&self) -> CMat {
        self.waveforms() * self.selection().transpose()
    }

    /// Mean power of the envelope feeding each path.
    pub fn path_powers(&self) -> Vec<f64> {
        path_powers(&self.waveforms(), &self.layout())
    }

    /// Ground-truth `(z̄ normalized, Γ)` in the gauge where the
    /// second-to-last entry of every `z_k` equals one.
    pub fn normalized_truth(&self) -> (Vec<CVec>, CMat) {
        let layout = self.layout();
        let mut gamma = self.fading.0.clone();
        let z = self
            .profiles
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let pivot = p.z[p.z.len() - 2];
                for c in layout.paths_of(k) {
                    gamma.column_mut(c).scale_mut_complex(pivot);
                }
                &p.z / pivot
            })
            .collect();
        (z, gamma)
    }

    pub fn noiseless_tensor(&self) -> CTensor3 {
        CTensor3::from_factors(&self.combined_factor(), &self.steering(), &self.fading.0)
            .expect("scene factors are consistent")
    }
}

trait ScaleComplex {
    fn scale_mut_complex(&mut self, c: C64);
}

impl<S: nalgebra::StorageMut<C64, nalgebra::Dyn, nalgebra::U1>> ScaleComplex
    for nalgebra::Matrix<C64, nalgebra::Dyn, nalgebra::U1, S>
{
    fn scale_mut_complex(&mut self, c: C64) {
        self.iter_mut().for_each(|x| *x *= c);
    }
}

pub fn path_powers(waveforms: &CMat, layout: &PathLayout) -> Vec<f64> {
    (0..layout.total_paths())
        .map(|p| {
            let col = waveforms.column(layout.device_of(p));
            col.iter().map(|x| x.norm_sqr()).sum::<f64>() / col.len() as f64
        })
        .collect()
}

/// Static scenario description; [`SceneSpec::realize`] draws the random
/// pilots and fading of one trial.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub geometry: ArrayGeometry,
    pub paths: PathSet,
    pub profiles: Vec<HardwareProfile>,
    pub pilot_kind: PilotKind,
    pub blocks: usize,
    pub snapshots: usize,
    /// Noise power that the SNR refers to.
    pub noise_var: f64,
    /// Skip the additive noise while keeping the SNR-scaled fading.
    pub noiseless: bool,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.profiles.len() != self.paths.doas.len() {
            return Err(Error::Config("one hardware profile per device is required".into()));
        }
        let order = self.profiles[0].pa.order();
        if self.profiles.iter().any(|p| p.pa.order() != order) {
            return Err(Error::Config("all devices must share the PA order".into()));
        }
        if self.paths.layout().total_paths() >= self.geometry.antennas() {
            return Err(Error::Config("the path count must be below the antenna count".into()));
        }
        if self.blocks == 0 || self.snapshots == 0 {
            return Err(Error::Config("blocks and snapshots must be positive".into()));
        }
        if !(self.noise_var > 0.0) {
            return Err(Error::Config("noise_var must be positive".into()));
        }
        Ok(())
    }

    /// Draws pilots then fading phases, in that order.
    pub fn realize<R: Rng + ?Sized>(&self, snr_db: f64, rng: &mut R) -> Result<Scene> {
        self.validate()?;
        let order = self.profiles[0].pa.order();
        let pilots = self
            .profiles
            .iter()
            .map(|_| build_pilot_matrix(&generate_pilots(&self.pilot_kind, self.snapshots, rng), order))
            .collect::<Result<Vec<_>>>()?;
        let mut scene = Scene {
            geometry: self.geometry.clone(),
            paths: self.paths.clone(),
            fading: FadingMatrix(CMat::zeros(self.blocks, self.paths.layout().total_paths())),
            profiles: self.profiles.clone(),
            pilots,
            noise_var: if self.noiseless { 0.0 } else { self.noise_var },
            blocks: self.blocks,
            snapshots: self.snapshots,
        };
        let powers = scene.path_powers();
        scene.fading = draw_fading(snr_db, self.noise_var, &powers, self.blocks, rng);
        Ok(scene)
    }
}

/// `R_m = A·diag(γ̃_m)·Ψ·Z·Y + N_m`, `Q × J`.
pub fn synthesize_block<R: Rng + ?Sized>(scene: &Scene, m: usize, rng: &mut R) -> CMat {
    let a = scene.steering();
    let gm = CVec::from_iterator(
        scene.fading.0.ncols(),
        scene.fading.0.row(m).iter().copied(),
    );
    let mut block = a * CMat::from_diagonal(&gm) * scene.selection() * scene.z_matrix() * scene.y_matrix();
    if scene.noise_var > 0.0 {
        block.iter_mut().for_each(|x| *x += complex_gaussian(scene.noise_var, rng));
    }
    block
}

#[derive(Debug, Clone)]
pub struct ReceivedTensor {
    pub data: CTensor3,
    pub scene: Arc<Scene>,
}

pub fn synthesize_tensor<R: Rng + ?Sized>(scene: Arc<Scene>, rng: &mut R) -> ReceivedTensor {
    let (j, q, m) = (scene.snapshots, scene.geometry.antennas(), scene.blocks);
    let mut data = CTensor3::zeros((j, q, m));
    for mb in 0..m {
        let block = synthesize_block(&scene, mb, rng);
        for qq in 0..q {
            for jj in 0..j {
                data.set(jj, qq, mb, block[(qq, jj)]);
            }
        }
    }
    ReceivedTensor { data, scene }
}
