//! Uplink pilots and MMSE channel estimation.
//!
//! Observations are produced directly in the decorrelated domain: for pilot
//! `t` at O-RU `l`, `y = Σ_{i: t_i = t} √(τ_p p_i) h_{l,i} + n` with
//! `n ~ CN(0, σ² I)`. This is statistically identical to receiving the full
//! `N × τ_p` pilot block and correlating it with the pilot sequence.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Result, SimError};
use crate::linalg::{all_finite, complex_normal_vec, hermitian_inverse, CMat, CVec};

#[derive(Debug, Clone, PartialEq)]
pub struct PilotConfig {
    pub tau_p: usize,
    pub pilot_of_ue: Vec<usize>,
    /// Transmit power per UE, watts.
    pub powers: Vec<f64>,
}

impl PilotConfig {
    /// Round-robin pilots and equal powers.
    pub fn new(num_ues: usize, tau_p: usize, power_w: f64) -> Self {
        PilotConfig {
            tau_p,
            pilot_of_ue: assign_pilots(num_ues, tau_p),
            powers: vec![power_w; num_ues],
        }
    }

    pub fn num_ues(&self) -> usize {
        self.pilot_of_ue.len()
    }

    /// `P_k`: every UE on the same pilot as `k`, including `k`.
    pub fn sharing_set(&self, k: usize) -> Vec<usize> {
        let t = self.pilot_of_ue[k];
        (0..self.num_ues()).filter(|&i| self.pilot_of_ue[i] == t).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau_p == 0 {
            return Err(SimError::config("tau_p", "must be at least 1"));
        }
        if self.pilot_of_ue.iter().any(|&t| t >= self.tau_p) {
            return Err(SimError::config("tau_p", "pilot index out of range"));
        }
        if self.powers.len() != self.pilot_of_ue.len() || self.powers.iter().any(|p| !(*p > 0.0)) {
            return Err(SimError::config("ue_power_mw", "every UE needs a positive power"));
        }
        Ok(())
    }
}

/// Orthogonal pilots when `K ≤ τ_p`, round-robin reuse otherwise.
pub fn assign_pilots(num_ues: usize, tau_p: usize) -> Vec<usize> {
    assert!(tau_p >= 1);
    (0..num_ues).map(|k| k % tau_p).collect()
}

/// Decorrelated pilot observations at one O-RU, indexed by pilot.
///
/// `channels[i]` is `h_{l,i}`. Pilots nobody uses still get a pure-noise
/// observation so that the rng consumption does not depend on occupancy.
pub fn observe_pilots<R: Rng + ?Sized>(
    channels: &[CVec],
    pilots: &PilotConfig,
    noise_power: f64,
    rng: &mut R,
) -> Vec<CVec> {
    let n = channels.first().map_or(0, |h| h.len());
    let noise_scale = Complex64::new(noise_power.sqrt(), 0.0);
    let mut obs: Vec<CVec> = (0..pilots.tau_p)
        .map(|_| complex_normal_vec(n, rng) * noise_scale)
        .collect();
    for (i, h) in channels.iter().enumerate() {
        let amp = (pilots.tau_p as f64 * pilots.powers[i]).sqrt();
        obs[pilots.pilot_of_ue[i]].axpy(Complex64::new(amp, 0.0), h, Complex64::new(1.0, 0.0));
    }
    obs
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub h_hat: CVec,
    pub error_cov: CMat,
}

/// Precomputed MMSE estimator for one (O-RU, UE) pair:
/// `ĥ = √(τ_p p_k) R Ψ⁻¹ y` with `Ψ = Σ_{i∈P_k} τ_p p_i R_i + σ² I`, and
/// error covariance `C = R − τ_p p_k R Ψ⁻¹ R`.
#[derive(Debug, Clone)]
pub struct MmseEstimator {
    pub gain: CMat,
    pub error_cov: CMat,
}

impl MmseEstimator {
    /// `sharing` lists `(R_{l,i}, p_i)` for every UE in `P_k`, `k` included.
    pub fn new(
        r_k: &CMat,
        sharing: &[(&CMat, f64)],
        tau_p: usize,
        power_k: f64,
        noise_power: f64,
    ) -> Result<Self> {
        let n = r_k.nrows();
        let tau = tau_p as f64;
        let mut psi = CMat::identity(n, n) * Complex64::new(noise_power, 0.0);
        for (r_i, p_i) in sharing {
            psi += *r_i * Complex64::new(tau * p_i, 0.0);
        }
        if !all_finite(&psi) || !all_finite(r_k) {
            return Err(SimError::numerical("non-finite input to MMSE estimator"));
        }
        let psi_inv = hermitian_inverse(&psi)?;
        let r_psi_inv = r_k * &psi_inv;
        let gain = &r_psi_inv * Complex64::new((tau * power_k).sqrt(), 0.0);
        let error_cov = r_k - &r_psi_inv * r_k * Complex64::new(tau * power_k, 0.0);
        Ok(MmseEstimator { gain, error_cov })
    }

    pub fn estimate(&self, y: &CVec) -> CVec {
        &self.gain * y
    }
}

pub fn mmse_estimate(
    r_k: &CMat,
    sharing: &[(&CMat, f64)],
    y: &CVec,
    tau_p: usize,
    power_k: f64,
    noise_power: f64,
) -> Result<ChannelEstimate> {
    if !y.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(SimError::numerical("non-finite pilot observation"));
    }
    let est = MmseEstimator::new(r_k, sharing, tau_p, power_k, noise_power)?;
    Ok(ChannelEstimate {
        h_hat: est.estimate(y),
        error_cov: est.error_cov,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{one_ring_covariance, ChannelSampler};
    use crate::linalg::{complex_normal, hermitian_defect, min_eigenvalue, rel_frobenius};
    use crate::rng::SimRng;
    use rand::SeedableRng;
    use std::f64::consts::PI;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn pilot_assignment_examples() {
        let p = PilotConfig::new(40, 100, 0.1);
        let mut seen = p.pilot_of_ue.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 40);
        for k in 0..40 {
            assert_eq!(p.sharing_set(k), vec![k]);
        }
        let p = PilotConfig::new(3, 1, 0.1);
        assert_eq!(p.pilot_of_ue, vec![0, 0, 0]);
        assert_eq!(p.sharing_set(1), vec![0, 1, 2]);
        let mut exact = assign_pilots(7, 7);
        exact.sort();
        assert_eq!(exact, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn noiseless_orthogonal_observation() {
        let pilots = PilotConfig::new(2, 4, 0.2);
        let mut rng = SimRng::seed_from_u64(1);
        let h = vec![complex_normal_vec(3, &mut rng), complex_normal_vec(3, &mut rng)];
        let obs = observe_pilots(&h, &pilots, 0.0, &mut rng);
        let want = &h[1] * c((4.0f64 * 0.2).sqrt());
        assert!((&obs[pilots.pilot_of_ue[1]] - want).norm() < 1e-14);
    }

    #[test]
    fn shared_pilot_superposes_channels() {
        let pilots = PilotConfig::new(2, 1, 0.5);
        let mut rng = SimRng::seed_from_u64(2);
        let h = vec![complex_normal_vec(2, &mut rng), complex_normal_vec(2, &mut rng)];
        let obs = observe_pilots(&h, &pilots, 0.0, &mut rng);
        let want = (&h[0] + &h[1]) * c(0.5f64.sqrt());
        assert!((&obs[0] - want).norm() < 1e-14);
    }

    /// Simulates the full N × τ_p pilot block and correlates it with the
    /// pilot sequence of UE `k`.
    fn full_block_observation(
        h: &[CVec],
        pilots: &PilotConfig,
        noise: f64,
        k: usize,
        rng: &mut SimRng,
    ) -> CVec {
        let n = h[0].len();
        let tau = pilots.tau_p;
        // columns of the τ_p-point DFT: φ_tᴴφ_s = τ_p δ_ts
        let phi = |t: usize| -> CVec {
            CVec::from_fn(tau, |s, _| Complex64::from_polar(1.0, -2.0 * PI * (t * s) as f64 / tau as f64))
        };
        let mut y = CMat::from_fn(n, tau, |_, _| complex_normal(rng) * c(noise.sqrt()));
        for (i, hi) in h.iter().enumerate() {
            y += hi * phi(pilots.pilot_of_ue[i]).transpose() * c(pilots.powers[i].sqrt());
        }
        let phi_k = phi(pilots.pilot_of_ue[k]).map(|z| z.conj());
        let m = y * phi_k / c((tau as f64).sqrt());
        CVec::from_column_slice(m.as_slice())
    }

    #[test]
    fn decorrelated_shortcut_matches_full_block() {
        let pilots = PilotConfig {
            tau_p: 3,
            pilot_of_ue: vec![0, 1, 0],
            powers: vec![0.1, 0.2, 0.3],
        };
        let h = vec![
            CVec::from_vec(vec![c(1.0), Complex64::new(0.0, 1.0)]),
            CVec::from_vec(vec![c(-0.5), c(2.0)]),
            CVec::from_vec(vec![Complex64::new(0.3, -0.2), c(0.7)]),
        ];
        let noise = 0.4;
        let draws = 100_000;
        let mut rng = SimRng::seed_from_u64(3);
        let mut stats = [(CVec::zeros(2), CMat::zeros(2, 2)), (CVec::zeros(2), CMat::zeros(2, 2))];
        for _ in 0..draws {
            let direct = observe_pilots(&h, &pilots, noise, &mut rng)[0].clone();
            let full = full_block_observation(&h, &pilots, noise, 0, &mut rng);
            for (acc, y) in stats.iter_mut().zip([direct, full]) {
                acc.0 += &y;
                acc.1 += &y * y.adjoint();
            }
        }
        let mean_want = (&h[0] * c((3.0f64 * 0.1).sqrt())) + (&h[2] * c((3.0f64 * 0.3).sqrt()));
        for (sum, outer) in &stats {
            let mean = sum / c(draws as f64);
            let cov = outer / c(draws as f64) - &mean * mean.adjoint();
            // noise has variance 0.4 per entry; std error of the mean ≈ √(0.4/1e5)
            let se = (noise / draws as f64).sqrt();
            for i in 0..2 {
                assert!((mean[i] - mean_want[i]).norm() < 3.0 * 1.5 * se);
                assert!((cov[(i, i)].re - noise).abs() < 3.0 * noise * (2.0 / draws as f64).sqrt() * 1.5);
            }
            assert!(cov[(0, 1)].norm() < 3.0 * noise / (draws as f64).sqrt() * 1.5);
        }
    }

    #[test]
    fn scalar_estimate_closed_form() {
        let (beta, p, tau, noise) = (2.0e-3, 0.1, 10usize, 5.0e-4);
        let r = CMat::from_element(1, 1, c(beta));
        let y = CVec::from_element(1, Complex64::new(0.3, -0.7));
        let est = mmse_estimate(&r, &[(&r, p)], &y, tau, p, noise).unwrap();
        let tp = tau as f64 * p;
        let want = y[0] * ((tp.sqrt() * beta) / (tp * beta + noise));
        assert!((est.h_hat[0] - want).norm() <= 1e-12 * want.norm());
        let want_c = beta - tp * beta * beta / (tp * beta + noise);
        assert!((est.error_cov[(0, 0)].re - want_c).abs() <= 1e-12 * beta);
    }

    #[test]
    fn equal_snr_halves_error() {
        // τ_p p β = σ²  ⇒  C = β/2
        let (beta, p, tau) = (0.25, 0.4, 5usize);
        let noise = tau as f64 * p * beta;
        let r = CMat::from_element(1, 1, c(beta));
        let y = CVec::from_element(1, c(1.0));
        let est = mmse_estimate(&r, &[(&r, p)], &y, tau, p, noise).unwrap();
        assert!((est.error_cov[(0, 0)].re - beta / 2.0).abs() <= 1e-12 * beta);
    }

    #[test]
    fn noiseless_limit_recovers_channel() {
        let cov = one_ring_covariance(1.0, 0.3, 0.6, 3, 0.5).unwrap();
        let mut rng = SimRng::seed_from_u64(4);
        let h = ChannelSampler::new(&cov.r).unwrap().sample(&mut rng);
        let (tau, p) = (4usize, 0.5);
        let y = &h * c((tau as f64 * p).sqrt());
        let est = mmse_estimate(&cov.r, &[(&cov.r, p)], &y, tau, p, 1e-14).unwrap();
        assert!((est.h_hat - &h).norm() < 1e-6 * h.norm());
        assert!(est.error_cov.norm() < 1e-6);
    }

    #[test]
    fn estimate_is_linear_in_observation() {
        let cov = one_ring_covariance(1.0, 0.3, 0.2, 4, 0.5).unwrap();
        let est = MmseEstimator::new(&cov.r, &[(&cov.r, 0.1)], 10, 0.1, 0.05).unwrap();
        let mut rng = SimRng::seed_from_u64(6);
        let (y1, y2) = (complex_normal_vec(4, &mut rng), complex_normal_vec(4, &mut rng));
        let (a, b) = (Complex64::new(0.5, -1.5), Complex64::new(2.0, 0.25));
        let lhs = est.estimate(&(&y1 * a + &y2 * b));
        let rhs = est.estimate(&y1) * a + est.estimate(&y2) * b;
        assert!((lhs - rhs).norm() < 1e-12 * (1.0 + est.estimate(&y1).norm()));
    }

    #[test]
    fn error_covariance_is_bounded_by_prior() {
        let r1 = one_ring_covariance(1.0, 0.3, 0.2, 4, 0.5).unwrap().r;
        let r2 = one_ring_covariance(0.7, -0.9, 0.2, 4, 0.5).unwrap().r;
        let est = MmseEstimator::new(&r1, &[(&r1, 0.1), (&r2, 0.1)], 10, 0.1, 0.05).unwrap();
        let c_mat = &est.error_cov;
        assert!(hermitian_defect(c_mat) < 1e-12);
        assert!(min_eigenvalue(c_mat) > -1e-12);
        assert!(min_eigenvalue(&(&r1 - c_mat)) > -1e-12);
        assert!(rel_frobenius(c_mat, &r1) < 1.0);
    }

    #[test]
    fn non_finite_observation_is_rejected() {
        let r = CMat::identity(2, 2);
        let y = CVec::from_vec(vec![c(f64::NAN), c(0.0)]);
        assert!(mmse_estimate(&r, &[(&r, 1.0)], &y, 1, 1.0, 1.0).is_err());
    }
}
