//! Pilot waveforms.
//!
//! Unit-modulus QPSK symbols satisfy `s⁴ = −1`, so every odd monomial
//! `s^a·conj(s)^b` collapses onto `s` or `conj(s)` and `S̃` has rank 2.
//! Pulse shaping with a root-raised-cosine filter restores the envelope
//! variation the higher-order columns need.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::C64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PilotKind {
    /// Raw unit-modulus QPSK symbols, one per sample.
    Qpsk,
    /// QPSK through a root-raised-cosine pulse, unit mean power.
    QpskRrc {
        #[serde(default = "default_rolloff")]
        rolloff: f64,
        #[serde(default = "default_sps")]
        samples_per_symbol: usize,
        #[serde(default = "default_span")]
        span_symbols: usize,
    },
}

fn default_rolloff() -> f64 {
    0.35
}
fn default_sps() -> usize {
    2
}
fn default_span() -> usize {
    8
}

impl Default for PilotKind {
    fn default() -> Self {
        PilotKind::QpskRrc {
            rolloff: default_rolloff(),
            samples_per_symbol: default_sps(),
            span_symbols: default_span(),
        }
    }
}

pub fn qpsk_symbols<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<C64> {
    (0..n)
        .map(|_| {
            let re = if rng.random::<bool>() { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            let im = if rng.random::<bool>() { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            C64::new(re, im)
        })
        .collect()
}

/// Root-raised-cosine taps sampled at `sps` per symbol over `span` symbols,
/// normalized to unit energy.
pub fn rrc_taps(rolloff: f64, sps: usize, span: usize) -> Vec<f64> {
    let half = (span * sps / 2) as isize;
    let b = rolloff;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|n| {
            let t = n as f64 / sps as f64;
            if n == 0 {
                1.0 - b + 4.0 * b / PI
            } else if b > 0.0 && ((4.0 * b * t).abs() - 1.0).abs() < 1e-12 {
                b / 2f64.sqrt()
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * b)).sin()
                        + (1.0 - 2.0 / PI) * (PI / (4.0 * b)).cos())
            } else {
                let num = (PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos();
                let den = PI * t * (1.0 - (4.0 * b * t).powi(2));
                num / den
            }
        })
        .collect();
    let energy = taps.iter().map(|x| x * x).sum::<f64>().sqrt();
    taps.iter_mut().for_each(|x| *x /= energy);
    taps
}

pub fn generate_pilots<R: Rng + ?Sized>(kind: &PilotKind, len: usize, rng: &mut R) -> Vec<C64> {
    match *kind {
        PilotKind::Qpsk => qpsk_symbols(len, rng),
        PilotKind::QpskRrc { rolloff, samples_per_symbol, span_symbols } => {
            let sps = samples_per_symbol.max(1);
            let taps = rrc_taps(rolloff, sps, span_symbols);
            let delay = taps.len() / 2;
            let n_sym = (len + taps.len()).div_ceil(sps) + 1;
            let symbols = qpsk_symbols(n_sym, rng);
            let mut up = vec![C64::new(0.0, 0.0); n_sym * sps];
            for (i, s) in symbols.into_iter().enumerate() {
                up[i * sps] = s;
            }
            // Steady-state window past the filter transient.
            let mut out: Vec<C64> = (0..len)
                .map(|t| {
                    let center = t + 2 * delay;
                    taps.iter()
                        .enumerate()
                        .map(|(k, &h)| up[center - k] * h)
                        .sum()
                })
                .collect();
            let power = out.iter().map(|x| x.norm_sqr()).sum::<f64>() / len as f64;
            let scale = power.sqrt().recip();
            out.iter_mut().for_each(|x| *x *= scale);
            out
        }
    }
}
