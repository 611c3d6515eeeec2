//! Subspace and beamforming angle estimators.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, CMat, CVec, C64};
use crate::scene::{steering_derivative, steering_matrix, steering_vector, ArrayGeometry};

/// Search grid shared by the MUSIC scan and the beamforming refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleGrid {
    /// Coarse scan step in degrees.
    pub step_deg: f64,
    /// Golden-section stopping width in radians.
    pub tol_rad: f64,
}

impl AngleGrid {
    pub const MUSIC: AngleGrid = AngleGrid { step_deg: 0.1, tol_rad: 1e-9 };
    pub const BEAMFORMING: AngleGrid = AngleGrid { step_deg: 0.5, tol_rad: 1e-6 };

    fn points(&self) -> Vec<f64> {
        let n = (180.0 / self.step_deg).round() as usize;
        (1..n).map(|i| (-90.0 + i as f64 * self.step_deg).to_radians()).collect()
    }
}

/// Golden-section minimizer on `[a, b]`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Forward-smoothed sample covariance over sub-arrays of length `sub_len`.
pub fn smoothed_covariance(data: &CMat, sub_len: usize) -> Result<CMat> {
    let q = data.nrows();
    if sub_len == 0 || sub_len > q {
        return Err(Error::Dimension(format!("sub-array length {sub_len} for {q} antennas")));
    }
    let full = data * data.adjoint() / C64::new(data.ncols() as f64, 0.0);
    let count = q - sub_len + 1;
    let mut r = CMat::zeros(sub_len, sub_len);
    for i in 0..count {
        r += full.view((i, i), (sub_len, sub_len));
    }
    Ok(r / C64::new(count as f64, 0.0))
}

/// Largest sub-array that still yields `max_coherent` shifted copies and leaves
/// a noise subspace for `sources` paths.
pub fn default_subarray_len(antennas: usize, sources: usize, max_coherent: usize) -> usize {
    (antennas + 1).saturating_sub(max_coherent.max(1)).max(sources + 1)
}

/// MUSIC null spectrum `‖E_nᴴ a(θ)‖² / ‖a(θ)‖²`; minima mark the sources.
pub struct NullSpectrum {
    noise: CMat,
    geom: ArrayGeometry,
}

impl NullSpectrum {
    pub fn new(cov: &CMat, sources: usize, geom: ArrayGeometry) -> Result<Self> {
        let n = cov.nrows();
        if sources >= n {
            return Err(Error::RankTooLarge { requested: sources, available: n - 1 });
        }
        let (_, vecs) = hermitian_eigen(cov);
        Ok(Self { noise: vecs.columns(0, n - sources).into_owned(), geom })
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let a = steering_vector(theta, &self.geom);
        (self.noise.adjoint() * &a).norm_squared() / a.norm_squared()
    }
}

/// Spatial-smoothing MUSIC. `data` holds one array snapshot per column.
/// Returns `sources` angles in ascending order.
pub fn smoothing_music(
    data: &CMat,
    geom: &ArrayGeometry,
    sources: usize,
    sub_len: usize,
    grid: AngleGrid,
) -> Result<Vec<f64>> {
    if data.nrows() != geom.antennas() {
        return Err(Error::Dimension("data rows must equal the antenna count".into()));
    }
    if sub_len <= sources {
        return Err(Error::Dimension(format!(
            "sub-array length {sub_len} leaves no noise subspace for {sources} sources"
        )));
    }
    if sub_len < geom.antennas() && !geom.is_uniform() {
        return Err(Error::InvalidModel("spatial smoothing needs a uniform array".into()));
    }
    let cov = smoothed_covariance(data, sub_len)?;
    let spectrum = NullSpectrum::new(&cov, sources, geom.subarray(sub_len)?)?;
    music_minima(&spectrum, sources, grid)
}

fn music_minima(spectrum: &NullSpectrum, sources: usize, grid: AngleGrid) -> Result<Vec<f64>> {
    let pts = grid.points();
    let vals: Vec<f64> = pts.iter().map(|&t| spectrum.eval(t)).collect();
    let mut minima: Vec<usize> = (0..pts.len())
        .filter(|&i| {
            let left = if i == 0 { f64::INFINITY } else { vals[i - 1] };
            let right = if i + 1 == pts.len() { f64::INFINITY } else { vals[i + 1] };
            vals[i] < left && vals[i] <= right
        })
        .collect();
    if minima.len() < sources {
        return Err(Error::Initialization(format!(
            "MUSIC found {} separable peaks, {sources} required",
            minima.len()
        )));
    }
    minima.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    let step = grid.step_deg.to_radians();
    let mut theta: Vec<f64> = minima[..sources]
        .iter()
        .map(|&i| {
            let lo = (pts[i] - step).max(-FRAC_PI_2 + 1e-9);
            let hi = (pts[i] + step).min(FRAC_PI_2 - 1e-9);
            golden_section(|t| spectrum.eval(t), lo, hi, grid.tol_rad)
        })
        .collect();
    theta.sort_by(f64::total_cmp);
    Ok(theta)
}

/// Normalized beamformer gain `|a(θ)ᴴx|² / (‖a‖²‖x‖²)`.
pub fn beam_gain(theta: f64, x: &CVec, geom: &ArrayGeometry) -> f64 {
    let a = steering_vector(theta, geom);
    a.dotc(x).norm_sqr() / (a.norm_squared() * x.norm_squared())
}

fn steering_second_derivative(theta: f64, geom: &ArrayGeometry) -> CVec {
    let (s, c) = theta.sin_cos();
    CVec::from_iterator(
        geom.antennas(),
        geom.phase_slopes()
            .map(|k| C64::new(-k * k * c * c, k * s) * C64::from_polar(1.0, -k * s)),
    )
}

/// Newton polish of a beamformer peak on the analytic derivative of `|a(θ)ᴴx|²`.
fn polish_peak(theta0: f64, x: &CVec, geom: &ArrayGeometry, radius: f64) -> f64 {
    let mut theta = theta0;
    for _ in 0..4 {
        let h = steering_vector(theta, geom).dotc(x);
        let h1 = steering_derivative(theta, geom).dotc(x);
        let h2 = steering_second_derivative(theta, geom).dotc(x);
        let d1 = 2.0 * (h.conj() * h1).re;
        let d2 = 2.0 * (h1.norm_sqr() + (h.conj() * h2).re);
        if !(d2 < 0.0) {
            break;
        }
        let next = theta - d1 / d2;
        if (next - theta0).abs() > radius || !next.is_finite() {
            break;
        }
        let done = (next - theta).abs() < 1e-15;
        theta = next;
        if done {
            break;
        }
    }
    if beam_gain(theta, x, geom) >= beam_gain(theta0, x, geom) {
        theta
    } else {
        theta0
    }
}

/// Per-column beamforming: coarse scan, golden-section refinement, Newton
/// polish. Returns the angles and the steering matrix rebuilt from them.
pub fn refine_angles(a_est: &CMat, geom: &ArrayGeometry, grid: AngleGrid) -> (Vec<f64>, CMat) {
    let pts = grid.points();
    let step = grid.step_deg.to_radians();
    let theta: Vec<f64> = a_est
        .column_iter()
        .map(|col| {
            let x = col.into_owned();
            if x.norm_squared() == 0.0 {
                return 0.0;
            }
            let best = pts
                .iter()
                .copied()
                .max_by(|&a, &b| beam_gain(a, &x, geom).total_cmp(&beam_gain(b, &x, geom)))
                .unwrap_or(0.0);
            let lo = (best - step).max(-FRAC_PI_2 + 1e-9);
            let hi = (best + step).min(FRAC_PI_2 - 1e-9);
            let t = golden_section(|t| -beam_gain(t, &x, geom), lo, hi, grid.tol_rad);
            polish_peak(t, &x, geom, step)
        })
        .collect();
    let a = steering_matrix(&theta, geom);
    (theta, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::complex_gaussian;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom() -> ArrayGeometry {
        ArrayGeometry::ula(8, 0.5, 1.0).unwrap()
    }

    fn snapshots(thetas: &[f64], n: usize, coherent: bool, noise: f64, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = steering_matrix(thetas, &geom());
        let base: Vec<C64> = (0..n).map(|_| complex_gaussian(1.0, &mut rng)).collect();
        let src = CMat::from_fn(thetas.len(), n, |r, c| {
            if coherent {
                base[c] * C64::from_polar(1.0, r as f64 * 0.9)
            } else {
                complex_gaussian(1.0, &mut rng)
            }
        });
        let mut x = a * src;
        if noise > 0.0 {
            x.iter_mut().for_each(|v| *v += complex_gaussian(noise, &mut rng));
        }
        x
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let t = golden_section(|x| (x - 0.3).powi(2), -1.0, 1.0, 1e-10);
        assert!((t - 0.3).abs() < 1e-9);
    }

    #[test]
    fn single_source_noiseless() {
        let truth = 12.34f64.to_radians();
        let x = snapshots(&[truth], 32, false, 0.0, 1);
        let est = smoothing_music(&x, &geom(), 1, 8, AngleGrid::MUSIC).unwrap();
        assert!((est[0] - truth).abs() < 0.1f64.to_radians());
    }

    #[test]
    fn coherent_pair_needs_smoothing() {
        let truth = [(-3.57f64).to_radians(), 17.96f64.to_radians()];
        let x = snapshots(&truth, 64, true, 0.0, 2);
        let smooth = smoothing_music(&x, &geom(), 2, 7, AngleGrid::MUSIC).unwrap();
        for (e, t) in smooth.iter().zip(&truth) {
            assert!((e - t).abs() < 1e-6, "smoothed estimate {e} vs {t}");
        }
        // Without smoothing the coherent pair collapses to a rank-one covariance.
        let plain = smoothing_music(&x, &geom(), 2, 8, AngleGrid::MUSIC);
        let resolved = plain
            .map(|est| est.iter().zip(&truth).all(|(e, t)| (e - t).abs() < 0.5f64.to_radians()))
            .unwrap_or(false);
        assert!(!resolved);
    }

    #[test]
    fn too_many_sources_is_an_error() {
        let x = snapshots(&[0.2], 16, false, 0.0, 3);
        assert!(smoothing_music(&x, &geom(), 8, 8, AngleGrid::MUSIC).is_err());
    }

    #[test]
    fn refine_exact_steering() {
        let truth = [-0.43, -0.06, 0.31, 0.45, 0.71];
        let (theta, a) = refine_angles(&steering_matrix(&truth, &geom()), &geom(), AngleGrid::BEAMFORMING);
        for (e, t) in theta.iter().zip(&truth) {
            assert!((e - t).abs() < 1e-10);
        }
        assert!((a - steering_matrix(&truth, &geom())).norm() < 1e-9);
    }

    #[test]
    fn refine_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = [-0.2, 0.5];
        let mut a = steering_matrix(&truth, &geom());
        a.iter_mut().for_each(|x| *x += complex_gaussian(0.01, &mut rng));
        let (base, _) = refine_angles(&a, &geom(), AngleGrid::BEAMFORMING);
        let mut scaled = a.clone();
        for mut col in scaled.column_iter_mut() {
            let c = C64::from_polar(rng.random_range(0.1..10.0), rng.random_range(-3.0..3.0));
            col.iter_mut().for_each(|x| *x *= c);
        }
        let (other, _) = refine_angles(&scaled, &geom(), AngleGrid::BEAMFORMING);
        for (x, y) in base.iter().zip(&other) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn refine_under_noise_beats_beamwidth() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = 0.4;
        // 30 dB per element
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let mut a = steering_matrix(&[truth], &geom());
            a.iter_mut().for_each(|x| *x += complex_gaussian(1e-3, &mut rng));
            let (t, _) = refine_angles(&a, &geom(), AngleGrid::BEAMFORMING);
            worst = worst.max((t[0] - truth).abs());
        }
        let beamwidth = 2.0 / (8.0 * 0.5 * truth.cos());
        assert!(worst < 0.02 * beamwidth, "worst {worst}");
    }

    #[test]
    fn subarray_length_rule() {
        assert_eq!(default_subarray_len(8, 5, 2), 7);
        assert_eq!(default_subarray_len(8, 5, 1), 8);
        assert_eq!(default_subarray_len(8, 6, 4), 7);
    }
}
