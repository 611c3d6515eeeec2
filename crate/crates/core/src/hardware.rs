//! Transmitter impairment model: I/Q modulator imbalance followed by an
//! odd-order polynomial power amplifier.
//!
//! The baseband envelope of one device is `x̃ = S̃·z`, where `S̃` is built
//! from the pilot samples alone and `z` (the hardware feature vector) carries
//! every impairment coefficient. Monomials `s^a·conj(s)^b` with `a + b = 2m+1`
//! form block `m`; blocks are laid out from the highest order down to the
//! linear term `[s, conj(s)]`, so the second-to-last entry of `z` is always
//! `λ_1·μ`.

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, C64, ONE, ZERO};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IqImbalance {
    pub eps_i: f64,
    pub eps_q: f64,
    /// radians
    pub beta_i: f64,
    /// radians
    pub beta_q: f64,
}

impl IqImbalance {
    pub fn new(eps_i: f64, eps_q: f64, beta_i: f64, beta_q: f64) -> Result<Self> {
        let iq = Self { eps_i, eps_q, beta_i, beta_q };
        iq.validate()?;
        Ok(iq)
    }

    /// Antisymmetric imbalance `ε_I = −ε_Q = ε`, `β_I = −β_Q = β`.
    pub fn symmetric(eps: f64, beta: f64) -> Result<Self> {
        Self::new(eps, -eps, beta, -beta)
    }

    pub fn ideal() -> Self {
        Self { eps_i: 0.0, eps_q: 0.0, beta_i: 0.0, beta_q: 0.0 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps_i.abs() < 1.0 && self.eps_q.abs() < 1.0) {
            return Err(Error::InvalidModel(format!(
                "gain errors must satisfy |ε| < 1, got ({}, {})",
                self.eps_i, self.eps_q
            )));
        }
        if !(self.beta_i.is_finite() && self.beta_q.is_finite()) {
            return Err(Error::InvalidModel("phase errors must be finite".into()));
        }
        Ok(())
    }
}

/// Odd-order Taylor model of the amplifier; only odd orders reach the
/// baseband envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct PaModel {
    order: usize,
    /// `λ_1, λ_3, …, λ_L`
    lambdas: Vec<f64>,
}

impl PaModel {
    pub fn new(order: usize, odd_lambdas: Vec<f64>) -> Result<Self> {
        if order.is_multiple_of(2) {
            return Err(Error::InvalidModel(format!("PA order must be odd, got {order}")));
        }
        if odd_lambdas.len() != order.div_ceil(2) {
            return Err(Error::InvalidModel(format!(
                "order {order} needs {} odd coefficients, got {}",
                order.div_ceil(2),
                odd_lambdas.len()
            )));
        }
        if odd_lambdas[0] == 0.0 {
            return Err(Error::InvalidModel("λ_1 must be non-zero".into()));
        }
        if odd_lambdas.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidModel("PA coefficients must be finite".into()));
        }
        Ok(Self { order, lambdas: odd_lambdas })
    }

    /// Builds the model from a full coefficient row `λ_1, λ_2, …, λ_L`;
    /// even-order entries are dropped.
    pub fn from_full_row(row: &[f64]) -> Result<Self> {
        if row.is_empty() {
            return Err(Error::InvalidModel("empty PA coefficient row".into()));
        }
        let order = if row.len() % 2 == 1 { row.len() } else { row.len() - 1 };
        let odd = row.iter().step_by(2).take(order.div_ceil(2)).copied().collect();
        Self::new(order, odd)
    }

    pub fn linear() -> Self {
        Self { order: 1, lambdas: vec![1.0] }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn odd_lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// `L_A = (L − 1)/2`
    pub fn highest_block(&self) -> usize {
        (self.order - 1) / 2
    }

    /// `λ_{2m+1}·C(2m+1, m+1)/2^{2m}`, the envelope weight of block `m`.
    pub fn envelope_weight(&self, m: usize) -> f64 {
        self.lambdas[m] * binomial(2 * m + 1, m + 1) / 4f64.powi(m as i32)
    }
}

/// `L_p = (L+1)(L+3)/4`
pub fn feature_len(order: usize) -> usize {
    (order + 1) * (order + 3) / 4
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn iq_coeffs(iq: &IqImbalance) -> (C64, C64) {
    let gi = 1.0 + iq.eps_i;
    let gq = 1.0 + iq.eps_q;
    let mu = (C64::from_polar(gi, iq.beta_i) + C64::from_polar(gq, iq.beta_q)) / 2.0;
    let v = (C64::from_polar(gi, -iq.beta_i) - C64::from_polar(gq, -iq.beta_q)) / 2.0;
    (mu, v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardwareProfile {
    pub iq: IqImbalance,
    pub pa: PaModel,
    pub mu: C64,
    pub v: C64,
    pub z: CVec,
}

impl HardwareProfile {
    pub fn new(iq: IqImbalance, pa: PaModel) -> Self {
        let (mu, v) = iq_coeffs(&iq);
        let z = build_feature_vector(&iq, &pa);
        Self { iq, pa, mu, v, z }
    }

    pub fn feature_len(&self) -> usize {
        self.z.len()
    }

    /// `z / z(L_p − 1)` (1-based), the gauge-fixed fingerprint.
    pub fn normalized_z(&self) -> CVec {
        let pivot = self.z[self.z.len() - 2];
        &self.z / pivot
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotMatrix {
    pub s: CVec,
    /// `J × L_p`, blocks `[S_{L_A}, …, S_0]`
    pub s_tilde: CMat,
    order: usize,
}

impl PilotMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

/// `(a, b)` exponents of each column of `S̃` for PA order `order`.
pub fn monomial_exponents(order: usize) -> Vec<(usize, usize)> {
    let la = (order - 1) / 2;
    (0..=la)
        .rev()
        .flat_map(|m| (0..=2 * m + 1).map(move |b| (2 * m + 1 - b, b)))
        .collect()
}

pub fn build_pilot_matrix(s: &[C64], order: usize) -> Result<PilotMatrix> {
    if s.is_empty() {
        return Err(Error::InvalidModel("empty pilot sequence".into()));
    }
    if order.is_multiple_of(2) {
        return Err(Error::InvalidModel(format!("PA order must be odd, got {order}")));
    }
    let exps = monomial_exponents(order);
    let s_tilde = CMat::from_fn(s.len(), exps.len(), |t, col| {
        let (a, b) = exps[col];
        s[t].powu(a as u32) * s[t].conj().powu(b as u32)
    });
    Ok(PilotMatrix {
        s: CVec::from_column_slice(s),
        s_tilde,
        order,
    })
}

// Homogeneous polynomials in (s, conj s) of degree n, stored by the number of
// conjugate factors b = 0..=n.
fn poly_mul(p: &[C64], q: &[C64]) -> Vec<C64> {
    let mut out = vec![ZERO; p.len() + q.len() - 1];
    for (i, &pi) in p.iter().enumerate() {
        for (k, &qk) in q.iter().enumerate() {
            out[i + k] += pi * qk;
        }
    }
    out
}

fn poly_pow(p: &[C64], n: usize) -> Vec<C64> {
    (0..n).fold(vec![ONE], |acc, _| poly_mul(&acc, p))
}

/// Coefficients of `λ̃_{2m+1}·e^{m+1}·conj(e)^m` with `e = μs + v·conj(s)`,
/// collected on the `S̃` column basis.
pub fn build_feature_vector(iq: &IqImbalance, pa: &PaModel) -> CVec {
    let (mu, v) = iq_coeffs(iq);
    let e = [mu, v];
    let e_conj = [v.conj(), mu.conj()];
    let mut z = Vec::with_capacity(feature_len(pa.order()));
    for m in (0..=pa.highest_block()).rev() {
        let block = poly_mul(&poly_pow(&e, m + 1), &poly_pow(&e_conj, m));
        let w = pa.envelope_weight(m);
        z.extend(block.into_iter().map(|c| c * w));
    }
    CVec::from_vec(z)
}

/// Direct per-sample evaluation of the impaired envelope.
pub fn envelope_oracle(s: &[C64], iq: &IqImbalance, pa: &PaModel) -> CVec {
    let (mu, v) = iq_coeffs(iq);
    CVec::from_iterator(
        s.len(),
        s.iter().map(|&st| {
            let e = mu * st + v * st.conj();
            let p = e.norm_sqr();
            (0..=pa.highest_block())
                .map(|m| e * (pa.envelope_weight(m) * p.powi(m as i32)))
                .sum::<C64>()
        }),
    )
}

/// Feature vector through the `Δ·λ` recursion over `α_{a,b}` coefficients.
///
/// `α_{a,b}` with `b ≤ m` uses the closed-form sum; `b > m` follows from the
/// self-conjugacy of `|e|^{2m}`, `α_{a,b} = conj(α_{b,a})`. Limited to
/// `L ≤ 3`.
pub fn alpha_recursion_reference(iq: &IqImbalance, pa: &PaModel) -> Result<CVec> {
    if pa.order() > 3 {
        return Err(Error::UnsupportedOrder(pa.order()));
    }
    let (mu, v) = iq_coeffs(iq);
    let c = |n: usize, k: usize| binomial(n, k);
    let alpha = |m: usize, b: usize| -> C64 {
        let closed = |b: usize| -> C64 {
            (0..=b)
                .map(|k| {
                    mu.powu((m - k) as u32)
                        * v.powu(k as u32)
                        * v.conj().powu((m + k - b) as u32)
                        * mu.conj().powu((b - k) as u32)
                        * (c(m, k) * c(m, b - k))
                })
                .sum()
        };
        if b <= m {
            closed(b)
        } else {
            closed(2 * m - b).conj()
        }
    };
    let mut z = Vec::with_capacity(feature_len(pa.order()));
    for m in (0..=pa.highest_block()).rev() {
        let w = pa.envelope_weight(m);
        for b in 0..=2 * m + 1 {
            let a_bar = match b {
                0 => mu * alpha(m, 0),
                b if b == 2 * m + 1 => v * alpha(m, 2 * m),
                b => mu * alpha(m, b) + v * alpha(m, b - 1),
            };
            z.push(a_bar * w);
        }
    }
    Ok(CVec::from_vec(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pilots::qpsk_symbols;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn deg(x: f64) -> f64 {
        x.to_radians()
    }

    fn rel_err(a: &CVec, b: &CVec) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn perfect_hardware_coeffs() {
        let (mu, v) = iq_coeffs(&IqImbalance::ideal());
        assert_eq!(mu, ONE);
        assert_eq!(v, ZERO);
    }

    #[test]
    fn phase_only_imbalance_coeffs() {
        let beta = 0.01;
        let (mu, v) = iq_coeffs(&IqImbalance::symmetric(0.0, beta).unwrap());
        assert!((mu - C64::new(beta.cos(), 0.0)).norm() < 1e-15);
        // ((e^{-jβ} − e^{jβ}))/2 = −j·sin β
        assert!((v - C64::new(0.0, -beta.sin())).norm() < 1e-15);
    }

    #[test]
    fn device_two_coeffs() {
        let iq = IqImbalance::symmetric(-0.0028, deg(0.0175)).unwrap();
        let (mu, v) = iq_coeffs(&iq);
        let beta = deg(0.0175);
        let eps = -0.0028;
        assert!((mu - C64::new(beta.cos(), eps * beta.sin())).norm() < 1e-15);
        assert!((v - C64::new(eps * beta.cos(), -beta.sin())).norm() < 1e-15);
        assert!(v.norm() < 0.01);
    }

    #[test]
    fn invalid_models_are_rejected() {
        assert!(IqImbalance::new(1.0, 0.0, 0.0, 0.0).is_err());
        assert!(PaModel::new(2, vec![1.0]).is_err());
        assert!(PaModel::new(3, vec![1.0]).is_err());
        assert!(PaModel::new(1, vec![0.0]).is_err());
        assert!(build_pilot_matrix(&[], 3).is_err());
        assert!(build_pilot_matrix(&[ONE], 2).is_err());
    }

    #[test]
    fn full_row_keeps_odd_orders() {
        let pa = PaModel::from_full_row(&[1.0, 0.0, 0.3]).unwrap();
        assert_eq!(pa.order(), 3);
        assert_eq!(pa.odd_lambdas(), &[1.0, 0.3]);
        assert!((pa.envelope_weight(1) - 0.75 * 0.3).abs() < 1e-15);
    }

    #[test]
    fn feature_length_law() {
        for (order, lp) in [(1, 2), (3, 6), (5, 12), (7, 20)] {
            assert_eq!(feature_len(order), lp);
            let pa = PaModel::new(order, vec![1.0; order.div_ceil(2)]).unwrap();
            assert_eq!(build_feature_vector(&IqImbalance::ideal(), &pa).len(), lp);
            assert_eq!(monomial_exponents(order).len(), lp);
        }
    }

    #[test]
    fn smallest_pilot_matrix() {
        let s = [C64::new(0.3, -0.2), C64::new(-1.0, 0.5)];
        let p = build_pilot_matrix(&s, 1).unwrap();
        assert_eq!(p.s_tilde.shape(), (2, 2));
        for t in 0..2 {
            assert_eq!(p.s_tilde[(t, 0)], s[t]);
            assert_eq!(p.s_tilde[(t, 1)], s[t].conj());
        }
        assert_eq!(build_pilot_matrix(&s, 3).unwrap().s_tilde.ncols(), 6);
    }

    #[test]
    fn qpsk_pilot_columns_follow_power_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = qpsk_symbols(32, &mut rng);
        let p = build_pilot_matrix(&s, 3).unwrap();
        let exps = monomial_exponents(3);
        for t in 0..s.len() {
            for (col, &(a, b)) in exps.iter().enumerate() {
                // unit modulus: s^a conj(s)^b = s^{a-b}
                let direct = s[t].powi(a as i32 - b as i32);
                assert!((p.s_tilde[(t, col)] - direct).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn impairment_free_limit() {
        let pa = PaModel::new(3, vec![1.0, 0.0]).unwrap();
        let z = build_feature_vector(&IqImbalance::ideal(), &pa);
        let expect = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        for (zi, e) in z.iter().zip(expect) {
            assert!((zi - C64::new(e, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn cubic_term_without_imbalance() {
        let lambda3 = 0.6;
        let pa = PaModel::new(3, vec![1.0, lambda3]).unwrap();
        let z = build_feature_vector(&IqImbalance::ideal(), &pa);
        // |s|²s = s²·conj(s) is column (2, 1), index 1.
        let expect = [0.0, 0.75 * lambda3, 0.0, 0.0, 1.0, 0.0];
        for (zi, e) in z.iter().zip(expect) {
            assert!((zi - C64::new(e, 0.0)).norm() < 1e-15);
        }
    }

    fn random_profile(rng: &mut ChaCha8Rng, order: usize) -> (IqImbalance, PaModel) {
        let iq = IqImbalance::new(
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
        )
        .unwrap();
        let mut lambdas = vec![rng.random_range(0.5..1.5)];
        lambdas.extend((1..order.div_ceil(2)).map(|_| rng.random_range(-0.5..0.5)));
        (iq, PaModel::new(order, lambdas).unwrap())
    }

    #[test]
    fn pilot_times_feature_reproduces_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for order in [1, 3, 5, 7] {
            for _ in 0..10 {
                let (iq, pa) = random_profile(&mut rng, order);
                let s: Vec<C64> = (0..1000)
                    .map(|_| C64::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)))
                    .collect();
                let p = build_pilot_matrix(&s, order).unwrap();
                let z = build_feature_vector(&iq, &pa);
                let via_model = &p.s_tilde * z;
                let oracle = envelope_oracle(&s, &iq, &pa);
                let rms = (oracle.iter().map(|x| x.norm_sqr()).sum::<f64>() / s.len() as f64).sqrt();
                for t in 0..s.len() {
                    let err = (via_model[t] - oracle[t]).norm() / oracle[t].norm().max(rms);
                    assert!(err < 1e-12, "order {order}, sample {t}: {err}");
                }
            }
        }
    }

    #[test]
    fn envelope_oracle_simple_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let s = qpsk_symbols(16, &mut rng);
        let x = envelope_oracle(&s, &IqImbalance::ideal(), &PaModel::new(3, vec![1.0, 0.0]).unwrap());
        for t in 0..s.len() {
            assert!((x[t] - s[t]).norm() < 1e-15);
        }
        let iq = IqImbalance::new(0.02, -0.01, 0.03, -0.05).unwrap();
        let (mu, v) = iq_coeffs(&iq);
        let ones = vec![ONE; 4];
        let x = envelope_oracle(&ones, &iq, &PaModel::linear());
        for t in 0..4 {
            assert!((x[t] - (mu + v)).norm() < 1e-15);
        }
    }

    #[test]
    fn first_device_matches_model_path() {
        let iq = IqImbalance::symmetric(0.0001, deg(-0.018)).unwrap();
        let pa = PaModel::from_full_row(&[1.0, 0.0, 0.3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let s = qpsk_symbols(256, &mut rng);
        let p = build_pilot_matrix(&s, 3).unwrap();
        let lhs = &p.s_tilde * build_feature_vector(&iq, &pa);
        assert!(rel_err(&lhs, &envelope_oracle(&s, &iq, &pa)) < 1e-12);
    }

    #[test]
    fn alpha_recursion_agrees_with_expansion() {
        let l1 = alpha_recursion_reference(&IqImbalance::new(0.01, 0.02, 0.1, -0.2).unwrap(), &PaModel::new(1, vec![2.0]).unwrap()).unwrap();
        let (mu, v) = iq_coeffs(&IqImbalance::new(0.01, 0.02, 0.1, -0.2).unwrap());
        assert!((l1[0] - mu * 2.0).norm() < 1e-15 && (l1[1] - v * 2.0).norm() < 1e-15);

        let pa = PaModel::new(3, vec![1.0, 0.4]).unwrap();
        let ideal = IqImbalance::ideal();
        assert!(rel_err(&alpha_recursion_reference(&ideal, &pa).unwrap(), &build_feature_vector(&ideal, &pa)) < 1e-15);

        let dev3 = IqImbalance::symmetric(-0.0051, deg(0.0120)).unwrap();
        let z_ref = alpha_recursion_reference(&dev3, &pa).unwrap();
        assert!(rel_err(&z_ref, &build_feature_vector(&dev3, &pa)) < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..20 {
            let (iq, pa) = random_profile(&mut rng, 3);
            let z = build_feature_vector(&iq, &pa);
            assert!(rel_err(&alpha_recursion_reference(&iq, &pa).unwrap(), &z) < 1e-12);
        }
        assert!(matches!(
            alpha_recursion_reference(&ideal, &PaModel::new(5, vec![1.0, 0.1, 0.1]).unwrap()),
            Err(Error::UnsupportedOrder(5))
        ));
    }

    #[test]
    fn second_to_last_entry_is_linear_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for order in [1, 3, 5] {
            for _ in 0..10 {
                let (iq, pa) = random_profile(&mut rng, order);
                let z = build_feature_vector(&iq, &pa);
                let (mu, _) = iq_coeffs(&iq);
                assert!((z[z.len() - 2] - mu * pa.odd_lambdas()[0]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn impairment_free_kills_conjugate_terms() {
        let pa = PaModel::new(5, vec![1.0, 0.3, -0.2]).unwrap();
        let z = build_feature_vector(&IqImbalance::ideal(), &pa);
        for (zi, (a, b)) in z.iter().zip(monomial_exponents(5)) {
            // with v = 0 only |s|^{2m}·s survives, i.e. a = b + 1
            if a != b + 1 {
                assert_eq!(zi.norm(), 0.0);
            } else {
                assert!(zi.norm() > 0.0);
            }
        }
    }
}
