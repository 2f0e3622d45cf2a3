//! Gaussian tail helpers, matched-filter SINR and finite-blocklength outage.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::{AssociationMatrix, GainTensors};

pub const LOG2_E: f64 = std::f64::consts::LOG2_E;
pub const LN_2: f64 = std::f64::consts::LN_2;
/// Approximate channel dispersion `(log2 e)^2`.
pub const DISPERSION: f64 = LOG2_E * LOG2_E;

/// Gaussian tail `Q(x) = P(Z > x)`.
pub fn q_func(x: f64) -> f64 {
    if x < 0.0 {
        1.0 - q_func(-x)
    } else {
        0.5 * erfc(x / std::f64::consts::SQRT_2)
    }
}

fn ln_q(x: f64) -> f64 {
    let q = q_func(x);
    if q > 1e-300 {
        q.ln()
    } else {
        // Asymptotic tail, accurate to ~1/x² where erfc underflows.
        -0.5 * x * x - (x * (2.0 * std::f64::consts::PI).sqrt()).ln() + (1.0 - 1.0 / (x * x)).ln()
    }
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse Gaussian tail. Errors outside the open unit interval.
pub fn q_inv(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("q_inv requires 0 < p < 1, got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p > 0.5 {
        return Ok(-q_inv(1.0 - p)?);
    }
    // Newton on ln Q(x) - ln p, kept inside a shrinking bracket on [0, 40].
    let target = p.ln();
    let (mut lo, mut hi) = (0.0_f64, 40.0_f64);
    let mut x = (-2.0 * target).sqrt().min(39.0) * 0.5;
    for _ in 0..200 {
        let f = ln_q(x) - target;
        if f > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let q = q_func(x);
        let slope = if q > 1e-300 { -std_normal_pdf(x) / q } else { -x };
        let mut next = x - f / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1.0) {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// `γ = signal / (interference + noise)`.
pub fn sinr(signal: f64, interference: f64, noise: f64) -> f64 {
    signal / (interference + noise)
}

/// Uplink SINR `γ̄[m][k]`; interference at BS m comes from the other plants
/// with `α[m][l] > 0`. `noise[m]` is the receiver noise power at BS m.
pub fn uplink_sinr(
    power_up: &[Vec<f64>],
    gains: &GainTensors,
    alpha: &AssociationMatrix,
    noise: &[f64],
) -> Vec<Vec<f64>> {
    mf_sinr(power_up, &gains.xi, alpha, noise)
}

/// Downlink SINR `γ[m][k]` at the actuator of plant k served by BS m.
pub fn downlink_sinr(
    power_down: &[Vec<f64>],
    gains: &GainTensors,
    alpha: &AssociationMatrix,
    noise: &[f64],
) -> Vec<Vec<f64>> {
    mf_sinr(power_down, &gains.zeta, alpha, noise)
}

fn mf_sinr(
    power: &[Vec<f64>],
    gain: &[Vec<Vec<f64>>],
    alpha: &AssociationMatrix,
    noise: &[f64],
) -> Vec<Vec<f64>> {
    let k_count = alpha.num_plants();
    (0..alpha.num_bs())
        .map(|m| {
            (0..k_count)
                .map(|k| {
                    let interference: f64 = (0..k_count)
                        .filter(|&l| l != k && alpha.get(m, l) > 0.0)
                        .map(|l| power[m][l] * gain[m][l][k])
                        .sum();
                    sinr(power[m][k] * gain[m][k][k], interference, noise[m])
                })
                .collect()
        })
        .collect()
}

/// `ln2 · (√(tB) log2(1+γ) − λ/√(tB))`, the argument of Q in the outage.
pub fn reliability_margin(gamma: f64, slot_s: f64, bits: f64, bandwidth_hz: f64) -> f64 {
    let n = (slot_s * bandwidth_hz).sqrt();
    LN_2 * (n * (1.0 + gamma).log2() - bits / n)
}

/// Finite-blocklength outage of a `bits` payload over a `slot_s` slot.
pub fn outage(gamma: f64, slot_s: f64, bits: f64, bandwidth_hz: f64) -> f64 {
    q_func(reliability_margin(gamma, slot_s, bits, bandwidth_hz))
}

/// Outage under a relaxed association: the Q argument is the α-weighted
/// sum of the per-BS margins.
pub fn relaxed_outage(weights: &[f64], margins: &[f64]) -> f64 {
    q_func(weights.iter().zip(margins).map(|(a, m)| a * m).sum())
}

/// Probability that either of two independent links fails.
pub fn overall_outage(eps_up: f64, eps_down: f64) -> f64 {
    1.0 - (1.0 - eps_up) * (1.0 - eps_down)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkOutcome {
    pub sinr: f64,
    pub blocklength: f64,
    pub payload_bits: f64,
    pub outage: f64,
}

impl LinkOutcome {
    pub fn evaluate(gamma: f64, slot_s: f64, bits: f64, bandwidth_hz: f64) -> Self {
        LinkOutcome {
            sinr: gamma,
            blocklength: slot_s * bandwidth_hz,
            payload_bits: bits,
            outage: outage(gamma, slot_s, bits, bandwidth_hz),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_inv_reference_points() {
        assert_eq!(q_inv(0.5).unwrap(), 0.0);
        assert!((q_inv(1e-3).unwrap() - 3.09023).abs() < 1e-4);
        assert!((q_func(-8.0) - 1.0).abs() < 1e-12);
        assert!(q_inv(0.0).is_err());
        assert!(q_inv(1.0).is_err());
        assert!(q_inv(f64::NAN).is_err());
    }

    #[test]
    fn q_inv_deep_tail() {
        for p in [1e-20, 1e-100, 1e-300] {
            let x = q_inv(p).unwrap();
            assert!(((q_func(x) / p) - 1.0).abs() < 1e-6, "p={p} x={x}");
        }
    }

    #[test]
    fn sinr_examples() {
        let alpha = AssociationMatrix { alpha: vec![vec![1.0, 1.0]] };
        let gains = GainTensors {
            xi: vec![vec![vec![2.0, 0.5], vec![0.5, 2.0]]],
            zeta: vec![vec![vec![2.0, 0.5], vec![0.5, 2.0]]],
        };
        let g = uplink_sinr(&[vec![0.5, 0.5]], &gains, &alpha, &[1.0]);
        assert!((g[0][0] - 0.8).abs() < 1e-15);
        let g = uplink_sinr(&[vec![0.0, 0.5]], &gains, &alpha, &[1.0]);
        assert_eq!(g[0][0], 0.0);

        let alone = AssociationMatrix { alpha: vec![vec![1.0, 0.0]] };
        let g = downlink_sinr(&[vec![0.5, 0.5]], &gains, &alone, &[0.25]);
        assert!((g[0][0] - 0.5 * 2.0 / 0.25).abs() < 1e-15);
    }

    #[test]
    fn outage_examples() {
        // √(tB)·log2(1+γ) = λ/√(tB): 10·1 = 100/10.
        assert!((outage(1.0, 100.0, 100.0, 1.0) - 0.5).abs() < 1e-15);
        let eps = outage(1.0, 100.0, 50.0, 1.0);
        assert!((reliability_margin(1.0, 100.0, 50.0, 1.0) - 3.4657359).abs() < 1e-6);
        assert!((eps - 2.643_912_065e-4).abs() < 1e-12, "{eps}");
        assert!((eps / 2.65e-4 - 1.0).abs() < 5e-3);
        let mut prev = 1.0;
        for g in [1.0, 1.5, 2.0, 3.0, 4.0] {
            let e = outage(g, 100.0, 50.0, 1.0);
            assert!(e < prev);
            prev = e;
        }
        assert_eq!(outage(1e4, 100.0, 50.0, 1.0), 0.0);
    }

    #[test]
    fn overall_examples() {
        assert_eq!(overall_outage(0.0, 0.0), 0.0);
        assert!((overall_outage(0.1, 0.2) - 0.28).abs() < 1e-15);
        let e = 1e-3;
        assert!((overall_outage(e, e) - (1.0 - (1.0 - e) * (1.0 - e))).abs() < 1e-18);
    }
}
