//! Large-scale channel evolution and spatially correlated Rayleigh fading.
//!
//! Shadow fading follows a distance-driven AR(1) process per (O-RU, UE)
//! pair. Path loss, angle of arrival and the one-ring covariance are
//! recomputed from scratch at every sample instant. Small-scale fading is
//! drawn independently per coherence block.

use std::io::{self, Read, Write};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SimError};
use crate::geometry::{wrap_angle, wrap_distance, Topology, UeState};
use crate::linalg::{complex_normal_vec, psd_factor, CMat, CVec};
use crate::quadrature::{bessel_j0, gauss_legendre_128, gauss_legendre_64};
use crate::rng::{substream, Stream};

pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Temporal correlation of a single multipath component under Jakes'
/// model, `J0(π·D_s·T_s)` with Doppler spread `D_s = 2 f_c v / c`.
///
/// Kept as a reference only: at the sample periods used here the value is
/// essentially zero, which is why small-scale fading is redrawn every step.
pub fn jakes_autocorrelation(carrier_hz: f64, speed: f64, sample_time: f64) -> f64 {
    let doppler_spread = 2.0 * carrier_hz * speed / SPEED_OF_LIGHT;
    bessel_j0(std::f64::consts::PI * doppler_spread * sample_time)
}

/// `e^{-α v T_s}`: correlation of shadowing between two consecutive samples.
pub fn shadow_correlation(alpha: f64, speed: f64, sample_time: f64) -> f64 {
    (-alpha * speed * sample_time).exp()
}

/// Shadow fading in dB for every (O-RU, UE) pair, stored O-RU-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowState {
    pub num_orus: usize,
    pub num_ues: usize,
    pub values_db: Vec<f64>,
    pub sigma_sf_db: f64,
    /// Reciprocal decorrelation distance, 1/m.
    pub alpha: f64,
}

impl ShadowState {
    pub fn zeros(num_orus: usize, num_ues: usize, sigma_sf_db: f64, alpha: f64) -> Self {
        ShadowState {
            num_orus,
            num_ues,
            values_db: vec![0.0; num_orus * num_ues],
            sigma_sf_db,
            alpha,
        }
    }

    /// Draws from the stationary distribution N(0, σ²), one substream per pair.
    pub fn stationary(num_orus: usize, num_ues: usize, sigma_sf_db: f64, alpha: f64, seed: u64) -> Self {
        let mut s = Self::zeros(num_orus, num_ues, sigma_sf_db, alpha);
        for l in 0..num_orus {
            for k in 0..num_ues {
                let mut rng = substream(seed, Stream::ShadowInit, &[l as u64, k as u64]);
                let z: f64 = rng.sample(StandardNormal);
                s.values_db[l * num_ues + k] = sigma_sf_db * z;
            }
        }
        s
    }

    pub fn get(&self, l: usize, k: usize) -> f64 {
        self.values_db[l * self.num_ues + k]
    }

    /// One AR(1) step for every pair, drawing innovations from `rng` in
    /// O-RU-major order. `speeds[k]` is UE `k`'s speed in m/s.
    pub fn evolve<R: Rng + ?Sized>(&self, speeds: &[f64], sample_time: f64, rng: &mut R) -> Self {
        self.evolve_by(speeds, sample_time, |_, _| rng.sample(StandardNormal))
    }

    /// Same as [`ShadowState::evolve`] but with an independent substream per
    /// pair keyed by `(seed, t, l, k)`.
    pub fn evolve_seeded(&self, speeds: &[f64], sample_time: f64, seed: u64, t: u64) -> Self {
        self.evolve_by(speeds, sample_time, |l, k| {
            substream(seed, Stream::ShadowStep, &[t, l as u64, k as u64]).sample(StandardNormal)
        })
    }

    fn evolve_by(&self, speeds: &[f64], sample_time: f64, mut innovation: impl FnMut(usize, usize) -> f64) -> Self {
        assert_eq!(speeds.len(), self.num_ues);
        let mut next = self.clone();
        for l in 0..self.num_orus {
            for (k, &v) in speeds.iter().enumerate() {
                let rho = shadow_correlation(self.alpha, v, sample_time);
                let z = innovation(l, k);
                let idx = l * self.num_ues + k;
                // a stationary UE keeps its shadowing bit-for-bit
                next.values_db[idx] = if rho == 1.0 {
                    self.values_db[idx]
                } else {
                    rho * self.values_db[idx] + (1.0 - rho * rho).sqrt() * self.sigma_sf_db * z
                };
            }
        }
        next
    }
}

/// `-34 - 38 log10(d) + F` in dB, with `d` in metres.
pub fn path_loss_db(distance: f64, shadow_db: f64) -> f64 {
    -34.0 - 38.0 * distance.log10() + shadow_db
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LargeScaleGain {
    pub beta_db: f64,
    pub beta_lin: f64,
}

impl LargeScaleGain {
    pub fn from_db(beta_db: f64) -> Self {
        LargeScaleGain {
            beta_db,
            beta_lin: db_to_lin(beta_db),
        }
    }
}

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCovariance {
    pub r: CMat,
    pub beta_lin: f64,
    pub aoa: f64,
    pub spread: f64,
    pub antenna_spacing: f64,
}

/// Normalised one-ring correlation `(1/2ξ)∫ e^{2πj d_H Δ sin(φ+δ)} dδ` for
/// antenna offset `Δ`, using the given Gauss–Legendre rule.
fn one_ring_entry(rule: &(Vec<f64>, Vec<f64>), aoa: f64, spread: f64, spacing: f64, offset: f64) -> Complex64 {
    let (nodes, weights) = rule;
    let mut acc = Complex64::new(0.0, 0.0);
    for (x, w) in nodes.iter().zip(weights) {
        let phase = 2.0 * std::f64::consts::PI * spacing * offset * (aoa + spread * x).sin();
        acc += Complex64::from_polar(*w, phase);
    }
    acc * 0.5
}

/// Steering vector `a_n = e^{-2πj d_H n sin φ}` so that `a aᴴ` matches the
/// one-ring convention for a point scatterer.
pub fn steering_vector(n: usize, aoa: f64, spacing: f64) -> CVec {
    CVec::from_fn(n, |i, _| {
        Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * spacing * i as f64 * aoa.sin())
    })
}

/// One-ring covariance of an `n`-antenna ULA with a uniform angular spread
/// of ±`spread` radians around `aoa`.
///
/// Entries are evaluated with a 64-node Gauss–Legendre rule and checked
/// against the 128-node rule; a normalised discrepancy above 1e-9 is
/// reported as a numerical error.
pub fn one_ring_covariance(beta_lin: f64, aoa: f64, spread: f64, n: usize, spacing: f64) -> Result<SpatialCovariance> {
    assert!(n >= 1);
    if !(spread >= 0.0) {
        return Err(SimError::numerical(format!("angular spread {spread} must be non-negative")));
    }
    let mut corr = vec![Complex64::new(1.0, 0.0); n];
    if spread == 0.0 {
        for (d, c) in corr.iter_mut().enumerate().skip(1) {
            let phase = 2.0 * std::f64::consts::PI * spacing * d as f64 * aoa.sin();
            *c = Complex64::from_polar(1.0, phase);
        }
    } else {
        for (d, c) in corr.iter_mut().enumerate().skip(1) {
            let coarse = one_ring_entry(gauss_legendre_64(), aoa, spread, spacing, d as f64);
            let fine = one_ring_entry(gauss_legendre_128(), aoa, spread, spacing, d as f64);
            if (coarse - fine).norm() > 1e-9 {
                return Err(SimError::numerical(format!(
                    "one-ring quadrature did not converge for antenna offset {d}"
                )));
            }
            *c = coarse;
        }
    }
    let r = CMat::from_fn(n, n, |m, k| {
        let v = if k >= m { corr[k - m] } else { corr[m - k].conj() };
        v * beta_lin
    });
    Ok(SpatialCovariance {
        r,
        beta_lin,
        aoa,
        spread,
        antenna_spacing: spacing,
    })
}

/// Draws `h ~ CN(0, R)` through a precomputed factor `F Fᴴ = R`.
#[derive(Debug, Clone)]
pub struct ChannelSampler {
    factor: CMat,
}

impl ChannelSampler {
    pub fn new(r: &CMat) -> Result<Self> {
        Ok(ChannelSampler { factor: psd_factor(r)? })
    }

    pub fn factor(&self) -> &CMat {
        &self.factor
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CVec {
        let z = complex_normal_vec(self.factor.ncols(), rng);
        &self.factor * z
    }
}

pub fn sample_channel<R: Rng + ?Sized>(r: &CMat, rng: &mut R) -> Result<CVec> {
    Ok(ChannelSampler::new(r)?.sample(rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub sigma_sf_db: f64,
    pub alpha: f64,
    /// Antenna spacing in wavelengths.
    pub antenna_spacing: f64,
    /// Half-width of the uniform angular spread, radians.
    pub angular_spread: f64,
    pub min_distance_m: f64,
    pub carrier_hz: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            sigma_sf_db: 4.0,
            alpha: 1.0 / 20.0,
            antenna_spacing: 0.5,
            angular_spread: 10f64.to_radians(),
            min_distance_m: 1.0,
            carrier_hz: 3.5e9,
        }
    }
}

/// Second-order statistics of every (O-RU, UE) link at one sample instant.
#[derive(Debug, Clone)]
pub struct ChannelStatistics {
    pub num_orus: usize,
    pub num_ues: usize,
    pub antennas: usize,
    pub gains: Vec<LargeScaleGain>,
    pub distances: Vec<f64>,
    pub angles: Vec<f64>,
    pub covariances: Vec<CMat>,
}

impl ChannelStatistics {
    fn idx(&self, l: usize, k: usize) -> usize {
        l * self.num_ues + k
    }

    pub fn gain(&self, l: usize, k: usize) -> LargeScaleGain {
        self.gains[self.idx(l, k)]
    }

    pub fn beta_db(&self, l: usize, k: usize) -> f64 {
        self.gains[self.idx(l, k)].beta_db
    }

    pub fn beta_lin(&self, l: usize, k: usize) -> f64 {
        self.gains[self.idx(l, k)].beta_lin
    }

    pub fn covariance(&self, l: usize, k: usize) -> &CMat {
        &self.covariances[self.idx(l, k)]
    }

    /// Gains in dB as an O-RU-major table.
    pub fn gain_table_db(&self) -> GainTable {
        GainTable {
            num_orus: self.num_orus,
            num_ues: self.num_ues,
            db: self.gains.iter().map(|g| g.beta_db).collect(),
        }
    }
}

/// Large-scale gains in dB, O-RU-major; the view the clustering logic works on.
#[derive(Debug, Clone, PartialEq)]
pub struct GainTable {
    pub num_orus: usize,
    pub num_ues: usize,
    pub db: Vec<f64>,
}

impl GainTable {
    pub fn from_fn(num_orus: usize, num_ues: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut db = Vec::with_capacity(num_orus * num_ues);
        for l in 0..num_orus {
            for k in 0..num_ues {
                db.push(f(l, k));
            }
        }
        GainTable { num_orus, num_ues, db }
    }

    pub fn db(&self, l: usize, k: usize) -> f64 {
        self.db[l * self.num_ues + k]
    }

    pub fn lin(&self, l: usize, k: usize) -> f64 {
        db_to_lin(self.db(l, k))
    }

    /// Gains of UE `k` towards every O-RU.
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.num_orus).map(|l| self.db(l, k)).collect()
    }

    /// Same table with every entry shifted by `delta_db`.
    pub fn shifted(&self, delta_db: f64) -> Self {
        GainTable {
            db: self.db.iter().map(|v| v + delta_db).collect(),
            ..self.clone()
        }
    }
}

/// Recomputes distance, angle, gain and covariance for every pair from the
/// current UE positions and shadowing.
pub fn refresh_statistics(
    topology: &Topology,
    ues: &[UeState],
    shadow: &ShadowState,
    params: &ChannelParams,
) -> Result<ChannelStatistics> {
    let (num_orus, num_ues) = (topology.num_orus(), ues.len());
    let n = topology.antennas_per_oru;
    let mut gains = Vec::with_capacity(num_orus * num_ues);
    let mut distances = Vec::with_capacity(num_orus * num_ues);
    let mut angles = Vec::with_capacity(num_orus * num_ues);
    let mut covariances = Vec::with_capacity(num_orus * num_ues);
    for l in 0..num_orus {
        let oru = topology.oru_positions[l];
        for (k, ue) in ues.iter().enumerate() {
            let d = wrap_distance(oru, ue.position, topology.grid_side_m).max(params.min_distance_m);
            let phi = wrap_angle(oru, topology.array_orientation[l], ue.position, topology.grid_side_m);
            let gain = LargeScaleGain::from_db(path_loss_db(d, shadow.get(l, k)));
            let cov = one_ring_covariance(gain.beta_lin, phi, params.angular_spread, n, params.antenna_spacing)?;
            gains.push(gain);
            distances.push(d);
            angles.push(phi);
            covariances.push(cov.r);
        }
    }
    Ok(ChannelStatistics {
        num_orus,
        num_ues,
        antennas: n,
        gains,
        distances,
        angles,
        covariances,
    })
}

/// Magic bytes opening a covariance dump.
pub const COVARIANCE_DUMP_MAGIC: &[u8; 8] = b"CFCOV01\0";

/// Writes every covariance as a binary dump for offline inspection.
///
/// Layout (little endian): the 8-byte magic, then `u32` O-RU count, `u32` UE
/// count, `u32` antenna count, `u32` zero padding, followed by the matrices
/// in O-RU-major pair order. Each matrix is row-major with every entry
/// stored as an `(re, im)` pair of `f64`.
pub fn write_covariance_dump<W: Write>(stats: &ChannelStatistics, mut out: W) -> io::Result<()> {
    out.write_all(COVARIANCE_DUMP_MAGIC)?;
    for v in [stats.num_orus, stats.num_ues, stats.antennas, 0] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    for r in &stats.covariances {
        for i in 0..r.nrows() {
            for j in 0..r.ncols() {
                out.write_all(&r[(i, j)].re.to_le_bytes())?;
                out.write_all(&r[(i, j)].im.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads a dump produced by [`write_covariance_dump`]; returns
/// `(num_orus, num_ues, matrices)`.
pub fn read_covariance_dump<R: Read>(mut input: R) -> io::Result<(usize, usize, Vec<CMat>)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != COVARIANCE_DUMP_MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "not a covariance dump"));
    }
    let mut header = [0usize; 4];
    for h in header.iter_mut() {
        let mut b = [0u8; 4];
        input.read_exact(&mut b)?;
        *h = u32::from_le_bytes(b) as usize;
    }
    let [l, k, n, _] = header;
    let mut read_f64 = || -> io::Result<f64> {
        let mut b = [0u8; 8];
        input.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    let mut mats = Vec::with_capacity(l * k);
    for _ in 0..l * k {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let re = read_f64()?;
                let im = read_f64()?;
                m[(i, j)] = Complex64::new(re, im);
            }
        }
        mats.push(m);
    }
    Ok((l, k, mats))
}
