//! Fisher information and Cramér-Rao bounds for `(θ, z̄, γ)`.
//!
//! Real parameter layout: `[θ; Re z̄; Re γ; Im z̄; Im γ]`, where `z̄_k` is
//! `z_k` without its normalized (second-to-last) entry and `γ` stacks the
//! rows of `Γ`, index `m·K̃ + l`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, RMat, C64, ZERO};
use crate::scene::{steering_derivative, steering_matrix, Scene};
use crate::tensor::{CTensor3, Dims, Mode};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub theta: Vec<f64>,
    pub z_bar: Vec<CVec>,
    /// `M × K̃`
    pub gamma: CMat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub paths: usize,
    pub devices: usize,
    /// `L_p − 1`
    pub z_len: usize,
    pub blocks: usize,
}

impl ParamLayout {
    pub fn complex_z(&self) -> usize {
        self.devices * self.z_len
    }

    pub fn complex_gamma(&self) -> usize {
        self.blocks * self.paths
    }

    pub fn complex_len(&self) -> usize {
        self.complex_z() + self.complex_gamma()
    }

    /// `K̃ + 2K(L_p − 1) + 2MK̃`
    pub fn real_len(&self) -> usize {
        self.paths + 2 * self.complex_len()
    }
}

/// Position of `z̄` entry `p` inside the full length-`lp` vector.
fn full_index(p: usize, lp: usize) -> usize {
    if p < lp - 2 {
        p
    } else {
        p + 1
    }
}

impl ParamVector {
    /// Ground truth of a scene in the normalized gauge.
    pub fn from_scene(scene: &Scene) -> Self {
        let (z, gamma) = scene.normalized_truth();
        let z_bar = z
            .iter()
            .map(|zk| {
                let lp = zk.len();
                CVec::from_iterator(lp - 1, (0..lp - 1).map(|p| zk[full_index(p, lp)]))
            })
            .collect();
        Self { theta: scene.paths.flat(), z_bar, gamma }
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            paths: self.theta.len(),
            devices: self.z_bar.len(),
            z_len: self.z_bar[0].len(),
            blocks: self.gamma.nrows(),
        }
    }

    pub fn full_z(&self) -> Vec<CVec> {
        self.z_bar
            .iter()
            .map(|zb| {
                let lp = zb.len() + 1;
                let mut z = CVec::from_element(lp, C64::new(1.0, 0.0));
                for p in 0..lp - 1 {
                    z[full_index(p, lp)] = zb[p];
                }
                z
            })
            .collect()
    }

    fn complex_values(&self) -> Vec<C64> {
        let mut out: Vec<C64> = self.z_bar.iter().flat_map(|z| z.iter().copied()).collect();
        for m in 0..self.gamma.nrows() {
            out.extend(self.gamma.row(m).iter().copied());
        }
        out
    }

    pub fn to_real(&self) -> Vec<f64> {
        let c = self.complex_values();
        let mut r = self.theta.clone();
        r.extend(c.iter().map(|x| x.re));
        r.extend(c.iter().map(|x| x.im));
        r
    }

    pub fn from_real(layout: ParamLayout, r: &[f64]) -> Result<Self> {
        if r.len() != layout.real_len() {
            return Err(Error::Dimension(format!("expected {} real parameters", layout.real_len())));
        }
        let nc = layout.complex_len();
        let t = layout.paths;
        let c: Vec<C64> = (0..nc).map(|i| C64::new(r[t + i], r[t + nc + i])).collect();
        let z_bar = (0..layout.devices)
            .map(|k| CVec::from_column_slice(&c[k * layout.z_len..(k + 1) * layout.z_len]))
            .collect();
        let off = layout.complex_z();
        let gamma = CMat::from_fn(layout.blocks, layout.paths, |m, l| c[off + m * layout.paths + l]);
        Ok(Self { theta: r[..t].to_vec(), z_bar, gamma })
    }

    /// Noiseless cube these parameters generate on `scene`'s pilots and array.
    pub fn mean_tensor(&self, scene: &Scene) -> Result<CTensor3> {
        let u = crate::estimators::combined_factor(&scene.pilots, &self.full_z(), &scene.layout());
        let a = steering_matrix(&self.theta, &scene.geometry);
        CTensor3::from_factors(&u, &a, &self.gamma)
    }
}

/// One rank-one term `u ∘ a ∘ g` of a derivative tensor.
#[derive(Debug, Clone)]
struct Atom {
    u: CVec,
    a: CVec,
    g: CVec,
}

impl Atom {
    fn inner(&self, other: &Atom) -> C64 {
        self.u.dotc(&other.u) * self.a.dotc(&other.a) * self.g.dotc(&other.g)
    }

    fn add_to(&self, out: &mut [C64], dims: Dims, scale: C64) {
        let (j, q, _) = dims;
        for (mi, gm) in self.g.iter().enumerate() {
            if *gm == ZERO {
                continue;
            }
            for (qi, aq) in self.a.iter().enumerate() {
                let ag = aq * gm * scale;
                let base = j * (qi + q * mi);
                for (ji, uj) in self.u.iter().enumerate() {
                    out[base + ji] += uj * ag;
                }
            }
        }
    }
}

/// Complex derivative tensors of the mean, one per complex-direction
/// parameter: `K̃` angles, then `z̄`, then `γ`.
fn derivative_atoms(scene: &Scene, params: &ParamVector) -> Vec<Vec<Atom>> {
    let layout = scene.layout();
    let z = params.full_z();
    let u = crate::estimators::combined_factor(&scene.pilots, &z, &layout);
    let a = steering_matrix(&params.theta, &scene.geometry);
    let g = &params.gamma;
    let m = g.nrows();
    let mut out = Vec::new();
    for (l, &t) in params.theta.iter().enumerate() {
        out.push(vec![Atom {
            u: u.column(l).into_owned(),
            a: steering_derivative(t, &scene.geometry),
            g: g.column(l).into_owned(),
        }]);
    }
    for k in 0..layout.devices() {
        let lp = z[k].len();
        for p in 0..lp - 1 {
            let s = scene.pilots[k].s_tilde.column(full_index(p, lp)).into_owned();
            out.push(
                layout
                    .paths_of(k)
                    .map(|l| Atom { u: s.clone(), a: a.column(l).into_owned(), g: g.column(l).into_owned() })
                    .collect(),
            );
        }
    }
    for mi in 0..m {
        let mut e = CVec::zeros(m);
        e[mi] = C64::new(1.0, 0.0);
        for l in 0..params.theta.len() {
            out.push(vec![Atom { u: u.column(l).into_owned(), a: a.column(l).into_owned(), g: e.clone() }]);
        }
    }
    out
}

/// Real-symmetric Fisher matrix over the real parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix {
    pub matrix: RMat,
    pub layout: ParamLayout,
}

fn real_from_complex_gram(g: &CMat, layout: ParamLayout, sigma2: f64) -> RMat {
    let t = layout.paths;
    let nc = layout.complex_len();
    let n = layout.real_len();
    let s = 2.0 / sigma2;
    RMat::from_fn(n, n, |r, c| {
        // Gram index and whether the derivative carries a factor j (imaginary parts).
        let split = |i: usize| if i < t + nc { (i, false) } else { (i - nc, true) };
        let (gr, jr) = split(r);
        let (gc, jc) = split(c);
        let v = g[(gr, gc)];
        // Re((j^a d_r)ᴴ (j^b d_c)) = Re(conj(j^a) j^b · v)
        let w = match (jr, jc) {
            (false, false) | (true, true) => v.re,
            (false, true) => -v.im,
            (true, false) => v.im,
        };
        s * w
    })
}

/// `F = (2/σ²)·Re(JᴴJ)` from the structured Gram of the derivative tensors.
pub fn fim(scene: &Scene, params: &ParamVector, sigma2: f64) -> Result<FisherMatrix> {
    if !(sigma2 > 0.0) {
        return Err(Error::Config("sigma2 must be positive".into()));
    }
    let atoms = derivative_atoms(scene, params);
    let n = atoms.len();
    let mut g = CMat::zeros(n, n);
    for r in 0..n {
        for c in r..n {
            let v: C64 = atoms[r].iter().flat_map(|x| atoms[c].iter().map(move |y| x.inner(y))).sum();
            g[(r, c)] = v;
            g[(c, r)] = v.conj();
        }
    }
    let layout = params.layout();
    Ok(FisherMatrix { matrix: real_from_complex_gram(&g, layout, sigma2), layout })
}

/// `∂ vec(mean)/∂ real parameter`, rows in the cube's storage order.
pub fn mean_jacobian(scene: &Scene, params: &ParamVector) -> CMat {
    let atoms = derivative_atoms(scene, params);
    let layout = params.layout();
    let dims = (scene.snapshots, scene.geometry.antennas(), params.gamma.nrows());
    let rows = dims.0 * dims.1 * dims.2;
    let t = layout.paths;
    let nc = layout.complex_len();
    let mut jac = CMat::zeros(rows, layout.real_len());
    for (i, terms) in atoms.iter().enumerate() {
        let mut col = vec![ZERO; rows];
        for atom in terms {
            atom.add_to(&mut col, dims, C64::new(1.0, 0.0));
        }
        jac.set_column(i, &CVec::from_vec(col.clone()));
        if i >= t {
            let jcol: Vec<C64> = col.iter().map(|x| x * C64::new(0.0, 1.0)).collect();
            jac.set_column(i + nc, &CVec::from_vec(jcol));
        }
    }
    jac
}

/// Central-difference Jacobian of the mean over the real parameters.
pub fn finite_difference_jacobian(scene: &Scene, params: &ParamVector, step: f64) -> Result<CMat> {
    let layout = params.layout();
    let base = params.to_real();
    let mut cols = Vec::with_capacity(base.len());
    for p in 0..base.len() {
        let mut hi = base.clone();
        let mut lo = base.clone();
        hi[p] += step;
        lo[p] -= step;
        let th = ParamVector::from_real(layout, &hi)?.mean_tensor(scene)?;
        let tl = ParamVector::from_real(layout, &lo)?.mean_tensor(scene)?;
        cols.push(CVec::from_iterator(
            th.as_slice().len(),
            th.as_slice().iter().zip(tl.as_slice()).map(|(a, b)| (a - b) / (2.0 * step)),
        ));
    }
    Ok(CMat::from_columns(&cols))
}

/// `(2/σ²)·Re(JᴴJ)` for an explicit Jacobian.
pub fn fim_from_jacobian(jac: &CMat, layout: ParamLayout, sigma2: f64) -> FisherMatrix {
    let g = jac.adjoint() * jac;
    FisherMatrix { matrix: g.map(|x| 2.0 * x.re / sigma2), layout }
}

/// Blocks that can be written directly from the factor matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormBlocks {
    /// `K̃ × K̃` angle block.
    pub f1: RMat,
    /// Feature block, within-device entries only (`K(L_p−1)` square).
    pub o1: CMat,
    /// Fading block (`MK̃` square), block-diagonal across `m`.
    pub o3: CMat,
    /// Pseudo-covariance of the complex score; zero for circular noise.
    pub m2: CMat,
}

/// Closed-form blocks with complex convention `(1/σ²)·Bᵀ·B*`, so that the
/// real FIM blocks are `2·Re(·)` and `2·Im(·)` of them.
pub fn closed_form_blocks(scene: &Scene, params: &ParamVector, sigma2: f64) -> Result<ClosedFormBlocks> {
    let pl = params.layout();
    let layout = scene.layout();
    let z = params.full_z();
    let u = crate::estimators::combined_factor(&scene.pilots, &z, &layout);
    let a = steering_matrix(&params.theta, &scene.geometry);
    let g = &params.gamma;
    let kt = pl.paths;

    // F1: 2cosθ₁cosθ₂/σ² · Re Σ_q |β_q|² A_{q,l₁} A*_{q,l₂} (U ⊙ Γ)ᵀ_{l₁,:}(U ⊙ Γ)*_{:,l₂}, β_q = j2πd_q/λ
    let ug = crate::linalg::khatri_rao(&u, g)?;
    let beta2: Vec<f64> = scene.geometry.phase_slopes().map(|k| k * k).collect();
    let f1 = RMat::from_fn(kt, kt, |l1, l2| {
        let zeta: C64 = (0..a.nrows()).map(|q| a[(q, l1)] * a[(q, l2)].conj() * beta2[q]).sum::<C64>()
            * ug.column(l1).iter().zip(ug.column(l2).iter()).map(|(x, y)| x * y.conj()).sum::<C64>();
        2.0 * params.theta[l1].cos() * params.theta[l2].cos() * zeta.re / sigma2
    });

    let nz = pl.complex_z();
    let mut o1 = CMat::zeros(nz, nz);
    let ga = crate::linalg::khatri_rao(g, &a)? * layout.selection();
    for k in 0..pl.devices {
        let ck = ga.column(k);
        let cc: C64 = ck.iter().map(|x| x * x.conj()).sum();
        let s = &scene.pilots[k].s_tilde;
        let lp = s.ncols();
        for p1 in 0..pl.z_len {
            for p2 in 0..pl.z_len {
                let (d1, d2) = (full_index(p1, lp), full_index(p2, lp));
                let ss: C64 = s.column(d1).iter().zip(s.column(d2).iter()).map(|(x, y)| x * y.conj()).sum();
                o1[(k * pl.z_len + p1, k * pl.z_len + p2)] = ss * cc / sigma2;
            }
        }
    }

    let b = crate::linalg::khatri_rao(&a, &u)?;
    let bb = b.transpose() * b.map(|x| x.conj()) / C64::new(sigma2, 0.0);
    let ng = pl.complex_gamma();
    let mut o3 = CMat::zeros(ng, ng);
    for m in 0..pl.blocks {
        o3.view_mut((m * kt, m * kt), (kt, kt)).copy_from(&bb);
    }

    // E[n²] for circular CN(0, σ²): E[x²] − E[y²] + 2jE[xy] with x, y iid N(0, σ²/2).
    let (var_re, var_im, cov_re_im) = (sigma2 / 2.0, sigma2 / 2.0, 0.0);
    let pseudo = C64::new(var_re - var_im, 2.0 * cov_re_im);
    let nall = pl.complex_len();
    let m2 = CMat::from_element(nall, nall, pseudo / (sigma2 * sigma2));

    Ok(ClosedFormBlocks { f1, o1, o3, m2 })
}

/// `E[(W_a(x, :))ᴴ · W_b(y, :)]` for white noise of power `σ²`: entry
/// `(r, c)` is `σ²` when column `r` of row `x` in unfolding `a` and column
/// `c` of row `y` in unfolding `b` address the same cube element.
pub fn noise_cross_correlation(a: Mode, x: usize, b: Mode, y: usize, dims: Dims, sigma2: f64) -> CMat {
    let probe = CTensor3::from_fn(dims, |j, q, m| C64::new((j + dims.0 * (q + dims.1 * m)) as f64, 0.0));
    let wa = probe.unfold(a);
    let wb = probe.unfold(b);
    CMat::from_fn(wa.ncols(), wb.ncols(), |r, c| {
        if wa[(x, r)] == wb[(y, c)] {
            C64::new(sigma2, 0.0)
        } else {
            ZERO
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrlbResult {
    /// Per-path angle variance bound, radians².
    pub theta: Vec<f64>,
    /// Per device, per `z̄` coefficient: `var(Re) + var(Im)`.
    pub z: Vec<Vec<f64>>,
    /// `M × K̃`, same convention as `z`.
    pub gamma: RMat,
}

impl CrlbResult {
    /// `sqrt(Σ_l CRLB(θ_l))` in degrees, matching the summed RMSE(θ) definition.
    pub fn sqrt_theta_deg(&self) -> f64 {
        self.theta.iter().sum::<f64>().sqrt().to_degrees()
    }

    pub fn sqrt_z(&self) -> f64 {
        self.z.iter().flatten().sum::<f64>().sqrt()
    }
}

fn spd_inverse(m: &RMat, what: &str) -> Result<RMat> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

/// Inverts `F` and extracts per-parameter bounds. The angle block is
/// obtained twice, from the partitioned inverse
/// `F₁⁻¹ + F₁⁻¹F₃ᵀ(F₂ − F₃F₁⁻¹F₃ᵀ)⁻¹F₃F₁⁻¹` and from the full inverse, and
/// the two must agree.
pub fn crlb_extract(f: &FisherMatrix) -> Result<CrlbResult> {
    let fm = &f.matrix;
    let n = fm.nrows();
    let eig = fm.clone().symmetric_eigen();
    let (imin, &lmin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty FIM");
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if !(lmin > 1e-12 * lmax) {
        return Err(Error::Identifiability {
            min_eigenvalue: lmin,
            null_direction: eig.eigenvectors.column(imin).iter().copied().collect(),
        });
    }
    let full = spd_inverse(fm, "Fisher matrix")?;

    let t = f.layout.paths;
    let f1 = fm.view((0, 0), (t, t)).into_owned();
    let f3 = fm.view((t, 0), (n - t, t)).into_owned();
    let f2 = fm.view((t, t), (n - t, n - t)).into_owned();
    let f1i = spd_inverse(&f1, "angle block")?;
    let c2 = &f2 - &f3 * &f1i * f3.transpose();
    let c2i = spd_inverse(&c2, "Schur complement")?;
    let block = &f1i + &f1i * f3.transpose() * c2i * &f3 * &f1i;
    let diff = (&block - full.view((0, 0), (t, t))).norm();
    let rel = diff / block.norm();
    if rel > 1e-6 {
        return Err(Error::RouteMismatch(rel));
    }

    let d = DVector::from_iterator(n, (0..n).map(|i| full[(i, i)]));
    let l = f.layout;
    let nc = l.complex_len();
    let var = |i: usize| d[t + i] + d[t + nc + i];
    let theta = (0..t).map(|i| block[(i, i)]).collect();
    let z = (0..l.devices).map(|k| (0..l.z_len).map(|p| var(k * l.z_len + p)).collect()).collect();
    let off = l.complex_z();
    let gamma = RMat::from_fn(l.blocks, l.paths, |m, p| var(off + m * l.paths + p));
    Ok(CrlbResult { theta, z, gamma })
}

/// Bounds for the ground truth of `scene` at noise power `sigma2`.
pub fn scene_crlb(scene: &Scene, sigma2: f64) -> Result<CrlbResult> {
    let params = ParamVector::from_scene(scene);
    crlb_extract(&fim(scene, &params, sigma2)?)
}
