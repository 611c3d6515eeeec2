//! Three-way complex data cube and its three canonical unfoldings.
//!
//! For a cube built from factor matrices `(U, A, Γ)` as
//! `R(j,q,m) = Σ_k U(j,k)·A(q,k)·Γ(m,k)` the unfoldings are
//!
//! * mode 1: `J × MQ`, column `m·Q + q`, equal to `U (Γ ⊙ A)ᵀ`
//! * mode 2: `Q × MJ`, column `j·M + m`, equal to `A (U ⊙ Γ)ᵀ`
//! * mode 3: `M × QJ`, column `q·J + j`, equal to `Γ (A ⊙ U)ᵀ`
//!
//! with zero-based indices and [`khatri_rao`](crate::linalg::khatri_rao)
//! ordering (first factor slowest).

use crate::error::{Error, Result};
use crate::linalg::{khatri_rao, CMat, C64, ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl TryFrom<u8> for Mode {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        match value {
            1 => Ok(Mode::One),
            2 => Ok(Mode::Two),
            3 => Ok(Mode::Three),
            other => Err(Error::InvalidMode(other)),
        }
    }
}

/// Dimensions `(J, Q, M)`: snapshots, antennas, blocks.
pub type Dims = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct CTensor3 {
    dims: Dims,
    // index j + J·(q + Q·m)
    data: Vec<C64>,
}

impl CTensor3 {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![ZERO; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> C64) -> Self {
        let mut t = Self::zeros(dims);
        for m in 0..dims.2 {
            for q in 0..dims.1 {
                for j in 0..dims.0 {
                    let idx = t.offset(j, q, m);
                    t.data[idx] = f(j, q, m);
                }
            }
        }
        t
    }

    /// Entrywise construction from CP factors; the reference every unfolding
    /// identity is checked against.
    pub fn from_factors(u: &CMat, a: &CMat, gamma: &CMat) -> Result<Self> {
        let r = u.ncols();
        if a.ncols() != r || gamma.ncols() != r {
            return Err(Error::Dimension("factor matrices need equal column counts".into()));
        }
        Ok(Self::from_fn((u.nrows(), a.nrows(), gamma.nrows()), |j, q, m| {
            (0..r).map(|k| u[(j, k)] * a[(q, k)] * gamma[(m, k)]).sum()
        }))
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    fn offset(&self, j: usize, q: usize, m: usize) -> usize {
        j + self.dims.0 * (q + self.dims.1 * m)
    }

    #[inline]
    pub fn get(&self, j: usize, q: usize, m: usize) -> C64 {
        self.data[self.offset(j, q, m)]
    }

    #[inline]
    pub fn set(&mut self, j: usize, q: usize, m: usize, value: C64) {
        let idx = self.offset(j, q, m);
        self.data[idx] = value;
    }

    /// Column-major vectorization, index `j + J·(q + Q·m)`.
    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Slice `m` in `(q, j)` layout, the `Q × J` received block.
    pub fn block(&self, m: usize) -> CMat {
        let (jn, qn, _) = self.dims;
        CMat::from_fn(qn, jn, |q, j| self.get(j, q, m))
    }

    pub fn unfold(&self, mode: Mode) -> CMat {
        let (jn, qn, mn) = self.dims;
        match mode {
            Mode::One => CMat::from_fn(jn, mn * qn, |j, col| self.get(j, col % qn, col / qn)),
            Mode::Two => CMat::from_fn(qn, mn * jn, |q, col| self.get(col / mn, q, col % mn)),
            Mode::Three => CMat::from_fn(mn, qn * jn, |m, col| self.get(col % jn, col / jn, m)),
        }
    }

    pub fn fold(w: &CMat, mode: Mode, dims: Dims) -> Result<Self> {
        let (jn, qn, mn) = dims;
        let expected = match mode {
            Mode::One => (jn, mn * qn),
            Mode::Two => (qn, mn * jn),
            Mode::Three => (mn, qn * jn),
        };
        if w.shape() != expected {
            return Err(Error::Dimension(format!(
                "fold {:?}: matrix is {:?}, expected {:?}",
                mode,
                w.shape(),
                expected
            )));
        }
        Ok(Self::from_fn(dims, |j, q, m| match mode {
            Mode::One => w[(j, m * qn + q)],
            Mode::Two => w[(q, j * mn + m)],
            Mode::Three => w[(m, q * jn + j)],
        }))
    }
}

/// `U (Γ ⊙ A)ᵀ`, the noiseless mode-1 unfolding of a CP model.
pub fn mode1_model(u: &CMat, a: &CMat, gamma: &CMat) -> Result<CMat> {
    Ok(u * khatri_rao(gamma, a)?.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius, CVec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cmat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMat {
        CMat::from_fn(rows, cols, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn random_tensor(dims: Dims, rng: &mut ChaCha8Rng) -> CTensor3 {
        CTensor3::from_fn(dims, |_, _, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(Mode::try_from(2).unwrap(), Mode::Two);
        assert!(matches!(Mode::try_from(4), Err(Error::InvalidMode(4))));
    }

    #[test]
    fn rank_one_unfolding() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = random_cmat(3, 1, &mut rng);
        let a = random_cmat(4, 1, &mut rng);
        let g = random_cmat(2, 1, &mut rng);
        let t = CTensor3::from_factors(&u, &a, &g).unwrap();
        let ga: CVec = g.column(0).kronecker(&a.column(0));
        let expect = &u * ga.transpose();
        assert!(frobenius(&(t.unfold(Mode::One) - expect)) < 1e-14);
    }

    #[test]
    fn unfold_entries_follow_index_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let t = random_tensor((3, 4, 2), &mut rng);
        let (w1, w2, w3) = (t.unfold(Mode::One), t.unfold(Mode::Two), t.unfold(Mode::Three));
        for j in 0..3 {
            for q in 0..4 {
                for m in 0..2 {
                    assert_eq!(w1[(j, m * 4 + q)], t.get(j, q, m));
                    assert_eq!(w2[(q, j * 2 + m)], t.get(j, q, m));
                    assert_eq!(w3[(m, q * 3 + j)], t.get(j, q, m));
                }
            }
        }
    }

    #[test]
    fn fold_zero_and_mismatch() {
        let z = CTensor3::fold(&CMat::zeros(3, 8), Mode::One, (3, 4, 2)).unwrap();
        assert_eq!(z, CTensor3::zeros((3, 4, 2)));
        assert!(CTensor3::fold(&CMat::zeros(3, 7), Mode::One, (3, 4, 2)).is_err());
    }

    #[test]
    fn factor_identities_hold_for_all_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let u = random_cmat(5, 3, &mut rng);
        let a = random_cmat(4, 3, &mut rng);
        let g = random_cmat(6, 3, &mut rng);
        let t = CTensor3::from_factors(&u, &a, &g).unwrap();
        let w1 = &u * khatri_rao(&g, &a).unwrap().transpose();
        let w2 = &a * khatri_rao(&u, &g).unwrap().transpose();
        let w3 = &g * khatri_rao(&a, &u).unwrap().transpose();
        assert!(frobenius(&(t.unfold(Mode::One) - w1)) < 1e-13);
        assert!(frobenius(&(t.unfold(Mode::Two) - w2)) < 1e-13);
        assert!(frobenius(&(t.unfold(Mode::Three) - w3)) < 1e-13);
    }

    proptest! {
        #[test]
        fn fold_inverts_unfold(j in 1usize..5, q in 1usize..5, m in 1usize..5, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tensor((j, q, m), &mut rng);
            for mode in [Mode::One, Mode::Two, Mode::Three] {
                let back = CTensor3::fold(&t.unfold(mode), mode, t.dims()).unwrap();
                prop_assert_eq!(&back, &t);
            }
        }

        #[test]
        fn khatri_rao_column_is_kronecker(i in 1usize..5, j in 1usize..5, r in 1usize..4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_cmat(i, r, &mut rng);
            let b = random_cmat(j, r, &mut rng);
            let kr = khatri_rao(&a, &b).unwrap();
            for c in 0..r {
                let col = a.column(c).kronecker(&b.column(c));
                prop_assert!((kr.column(c) - col).norm() < 1e-14);
            }
        }
    }
}
