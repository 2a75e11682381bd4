//! LP-MMSE local combining, effective-gain statistics, n-opt LSFD weights,
//! uplink SINR and the two-stage (per O-DU, then primary O-DU) fusion.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::channel::{ChannelSampler, ChannelStatistics};
use crate::error::{Result, SimError};
use crate::linalg::{hermitian_solve, hermitian_solve_vec, CMat, CVec, ZERO};
use crate::pilot::{observe_pilots, MmseEstimator, PilotConfig};
use crate::rng::{substream, Stream};
use crate::signaling::SignalingLedger;

/// Estimate of a UE served by the O-RU whose combiner is being built.
#[derive(Debug, Clone)]
pub struct ServedEstimate<'a> {
    pub ue: usize,
    pub h_hat: &'a CVec,
    pub error_cov: &'a CMat,
    pub power: f64,
}

/// LP-MMSE combiners for every UE in `served`, in the same order:
/// `v_k = p_k (Σ_i p_i (ĥ_i ĥ_iᴴ + C_i) + σ² I)⁻¹ ĥ_k`.
pub fn lp_mmse_combiners(served: &[ServedEstimate<'_>], noise_power: f64) -> Result<Vec<CVec>> {
    let Some(first) = served.first() else {
        return Ok(Vec::new());
    };
    let n = first.h_hat.len();
    let mut base = CMat::identity(n, n) * Complex64::new(noise_power, 0.0);
    for s in served {
        base += s.error_cov * Complex64::new(s.power, 0.0);
    }
    combiners_with_base(&base, served.iter().map(|s| (s.h_hat, s.power)))
}

/// Shared tail of the combiner computation once `Σ p_i C_i + σ² I` is known.
fn combiners_with_base<'a>(base: &CMat, served: impl Iterator<Item = (&'a CVec, f64)> + Clone) -> Result<Vec<CVec>> {
    let n = base.nrows();
    let mut z = base.clone();
    let mut rhs_cols = Vec::new();
    for (h, p) in served.clone() {
        z.ger(Complex64::new(p, 0.0), h, &h.conjugate(), Complex64::new(1.0, 0.0));
        rhs_cols.push((h, p));
    }
    if rhs_cols.is_empty() {
        return Ok(Vec::new());
    }
    let rhs = CMat::from_fn(n, rhs_cols.len(), |r, c| rhs_cols[c].0[r] * rhs_cols[c].1);
    let sol = hermitian_solve(&z, &rhs)?;
    Ok((0..rhs_cols.len()).map(|c| sol.column(c).into_owned()).collect())
}

/// Combiner of UE `k` at one O-RU; the zero vector when `k` is not served.
pub fn lp_mmse_combiner(served: &[ServedEstimate<'_>], noise_power: f64, k: usize, antennas: usize) -> Result<CVec> {
    match served.iter().position(|s| s.ue == k) {
        Some(pos) => Ok(lp_mmse_combiners(served, noise_power)?.swap_remove(pos)),
        None => Ok(CVec::zeros(antennas)),
    }
}

/// Who serves whom: `served[l]` is `D_l` and `serving[k]` is `M_k^s`, both
/// sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct ServingMap {
    pub served: Vec<Vec<usize>>,
    pub serving: Vec<Vec<usize>>,
}

impl ServingMap {
    pub fn from_served(served: Vec<Vec<usize>>, num_ues: usize) -> Self {
        let mut serving = vec![Vec::new(); num_ues];
        let mut served = served;
        for (l, d) in served.iter_mut().enumerate() {
            d.sort_unstable();
            d.dedup();
            for &k in d.iter() {
                serving[k].push(l);
            }
        }
        ServingMap { served, serving }
    }

    pub fn num_orus(&self) -> usize {
        self.served.len()
    }

    pub fn num_ues(&self) -> usize {
        self.serving.len()
    }

    /// `S_k`: UEs that share at least one serving O-RU with `k` (`k` included
    /// whenever it is served at all).
    pub fn interferers(&self, k: usize) -> Vec<usize> {
        let mut s: Vec<usize> = self.serving[k]
            .iter()
            .flat_map(|&l| self.served[l].iter().copied())
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Monte-Carlo statistics of the effective gains `[g_ki]_l = v_{l,k}ᴴ h_{l,i}`
/// for one UE `k`, stored on the serving support only.
///
/// Gains at different O-RUs are independent, so the second moment has
/// off-diagonal entries `E[g_l] E[g_m]*` and diagonal `E|g_l|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveGainStats {
    pub ue: usize,
    pub num_orus: usize,
    /// `M_k^s`, ascending.
    pub support: Vec<usize>,
    /// `S_k`, ascending.
    pub interferers: Vec<usize>,
    /// `E[g_ki]` on the support, one vector per entry of `interferers`.
    pub mean_gains: Vec<CVec>,
    /// `E[g_ki g_kiᴴ]` on the support, one matrix per entry of `interferers`.
    pub second_moments: Vec<CMat>,
    /// Diagonal of `F_k = σ² diag(E‖v_{l,k}‖²)` on the support.
    pub noise_diag: Vec<f64>,
    /// Largest relative standard error among the entries of `E[g_kk]`.
    pub max_rel_stderr: f64,
    pub draws: usize,
}

/// Relative standard error above which `E[g_kk]` is considered undersampled.
pub const MAX_REL_STDERR: f64 = 0.05;

impl EffectiveGainStats {
    fn position_of(&self, i: usize) -> Option<usize> {
        self.interferers.binary_search(&i).ok()
    }

    pub fn mean_own_gain(&self) -> &CVec {
        &self.mean_gains[self.position_of(self.ue).expect("served UE interferes with itself")]
    }

    pub fn second_moment_of(&self, i: usize) -> Option<&CMat> {
        self.position_of(i).map(|p| &self.second_moments[p])
    }

    pub fn is_undersampled(&self) -> bool {
        self.max_rel_stderr > MAX_REL_STDERR
    }

    /// `Σ_{i∈S_k} p_i E[g_ki g_kiᴴ] + F_k` on the support.
    pub fn weighted_second_moment(&self, powers: &[f64]) -> CMat {
        let m = self.support.len();
        let mut acc = CMat::zeros(m, m);
        for (&i, mom) in self.interferers.iter().zip(&self.second_moments) {
            acc += mom * Complex64::new(powers[i], 0.0);
        }
        for (d, f) in self.noise_diag.iter().enumerate() {
            acc[(d, d)] += f;
        }
        acc
    }

    /// Embeds a support-sized vector into all `L` O-RUs.
    pub fn embed(&self, v: &CVec) -> CVec {
        let mut full = CVec::zeros(self.num_orus);
        for (pos, &l) in self.support.iter().enumerate() {
            full[l] = v[pos];
        }
        full
    }

    pub fn restrict(&self, full: &CVec) -> CVec {
        CVec::from_iterator(self.support.len(), self.support.iter().map(|&l| full[l]))
    }

    /// `E[g_kk]` as an `L`-vector.
    pub fn mean_own_gain_full(&self) -> CVec {
        self.embed(self.mean_own_gain())
    }

    /// `E[g_ki g_kiᴴ]` as an `L × L` matrix (zero outside the support).
    pub fn second_moment_full(&self, i: usize) -> Option<CMat> {
        let mom = self.second_moment_of(i)?;
        let mut full = CMat::zeros(self.num_orus, self.num_orus);
        for (a, &la) in self.support.iter().enumerate() {
            for (b, &lb) in self.support.iter().enumerate() {
                full[(la, lb)] = mom[(a, b)];
            }
        }
        Some(full)
    }

    /// `F_k` as an `L × L` diagonal matrix.
    pub fn noise_matrix_full(&self) -> CMat {
        let mut full = CMat::zeros(self.num_orus, self.num_orus);
        for (pos, &l) in self.support.iter().enumerate() {
            full[(l, l)] = Complex64::new(self.noise_diag[pos], 0.0);
        }
        full
    }
}

/// Everything needed to run the per-epoch Monte-Carlo over `(h, ĥ)`.
pub struct CombiningSetup<'a> {
    pub stats: &'a ChannelStatistics,
    pub pilots: &'a PilotConfig,
    pub noise_power: f64,
    pub serving: &'a ServingMap,
}

/// Estimates effective-gain statistics for every served UE from `n_mc`
/// joint draws of channels and pilot noise. Draw `d` uses the substream
/// `(seed, d)`, so results do not depend on evaluation order.
///
/// Unserved UEs get `None`.
pub fn effective_gain_stats(setup: &CombiningSetup<'_>, n_mc: usize, seed: u64) -> Result<Vec<Option<EffectiveGainStats>>> {
    if n_mc == 0 {
        return Err(SimError::config("n_mc", "must be at least 1"));
    }
    let stats = setup.stats;
    let (num_orus, num_ues, n) = (stats.num_orus, stats.num_ues, stats.antennas);
    let serving = setup.serving;
    let powers = &setup.pilots.powers;

    let samplers = stats
        .covariances
        .iter()
        .map(ChannelSampler::new)
        .collect::<Result<Vec<_>>>()?;

    // estimators and Σ p_i C_i + σ² I for each O-RU's served set
    let mut estimators: Vec<Vec<MmseEstimator>> = Vec::with_capacity(num_orus);
    let mut bases = Vec::with_capacity(num_orus);
    for l in 0..num_orus {
        let mut ests = Vec::with_capacity(serving.served[l].len());
        let mut base = CMat::identity(n, n) * Complex64::new(setup.noise_power, 0.0);
        for &k in &serving.served[l] {
            let sharing: Vec<(&CMat, f64)> = setup
                .pilots
                .sharing_set(k)
                .into_iter()
                .map(|i| (stats.covariance(l, i), powers[i]))
                .collect();
            let est = MmseEstimator::new(stats.covariance(l, k), &sharing, setup.pilots.tau_p, powers[k], setup.noise_power)?;
            base += &est.error_cov * Complex64::new(powers[k], 0.0);
            ests.push(est);
        }
        estimators.push(ests);
        bases.push(base);
    }

    struct Acc {
        support: Vec<usize>,
        interferers: Vec<usize>,
        sum: Vec<Vec<Complex64>>,
        sum_sq: Vec<Vec<f64>>,
        v_norm_sq: Vec<f64>,
    }
    let mut accs: Vec<Option<Acc>> = (0..num_ues)
        .map(|k| {
            let support = serving.serving[k].clone();
            if support.is_empty() {
                return None;
            }
            let interferers = serving.interferers(k);
            let (s, m) = (interferers.len(), support.len());
            Some(Acc {
                support,
                interferers,
                sum: vec![vec![ZERO; m]; s],
                sum_sq: vec![vec![0.0; m]; s],
                v_norm_sq: vec![0.0; m],
            })
        })
        .collect();

    // position of UE k inside D_l, for looking up v_{l,k}
    let slot: Vec<BTreeMap<usize, usize>> = serving
        .served
        .iter()
        .map(|d| d.iter().enumerate().map(|(pos, &k)| (k, pos)).collect())
        .collect();

    for d in 0..n_mc {
        let mut rng = substream(seed, Stream::SmallScale, &[d as u64]);
        let mut channels: Vec<Vec<CVec>> = Vec::with_capacity(num_orus);
        for l in 0..num_orus {
            channels.push((0..num_ues).map(|k| samplers[l * num_ues + k].sample(&mut rng)).collect());
        }
        let mut combiners: Vec<Vec<CVec>> = Vec::with_capacity(num_orus);
        for l in 0..num_orus {
            if serving.served[l].is_empty() {
                combiners.push(Vec::new());
                continue;
            }
            let obs = observe_pilots(&channels[l], setup.pilots, setup.noise_power, &mut rng);
            let h_hats: Vec<CVec> = serving.served[l]
                .iter()
                .zip(&estimators[l])
                .map(|(&k, est)| est.estimate(&obs[setup.pilots.pilot_of_ue[k]]))
                .collect();
            let v = combiners_with_base(
                &bases[l],
                h_hats.iter().zip(serving.served[l].iter().map(|&k| powers[k])),
            )?;
            combiners.push(v);
        }
        for (k, acc) in accs.iter_mut().enumerate() {
            let Some(acc) = acc else { continue };
            for (pos, &l) in acc.support.iter().enumerate() {
                let v = &combiners[l][slot[l][&k]];
                acc.v_norm_sq[pos] += v.norm_squared();
                for (ii, &i) in acc.interferers.iter().enumerate() {
                    let g = v.dotc(&channels[l][i]);
                    acc.sum[ii][pos] += g;
                    acc.sum_sq[ii][pos] += g.norm_sqr();
                }
            }
        }
    }

    let inv = 1.0 / n_mc as f64;
    let out = accs
        .into_iter()
        .enumerate()
        .map(|(k, acc)| {
            acc.map(|acc| {
                let m = acc.support.len();
                let mut mean_gains = Vec::with_capacity(acc.interferers.len());
                let mut second_moments = Vec::with_capacity(acc.interferers.len());
                let mut max_rel_stderr: f64 = 0.0;
                for (ii, &i) in acc.interferers.iter().enumerate() {
                    let mean = CVec::from_iterator(m, acc.sum[ii].iter().map(|s| s * inv));
                    let power: Vec<f64> = acc.sum_sq[ii].iter().map(|s| s * inv).collect();
                    let mut mom = &mean * mean.adjoint();
                    for (pos, p) in power.iter().enumerate() {
                        mom[(pos, pos)] = Complex64::new(*p, 0.0);
                    }
                    if i == k {
                        for (pos, p) in power.iter().enumerate() {
                            let var = (p - mean[pos].norm_sqr()).max(0.0);
                            let se = (var * inv).sqrt();
                            let rel = if mean[pos].norm() > 0.0 { se / mean[pos].norm() } else { f64::INFINITY };
                            max_rel_stderr = max_rel_stderr.max(rel);
                        }
                    }
                    mean_gains.push(mean);
                    second_moments.push(mom);
                }
                EffectiveGainStats {
                    ue: k,
                    num_orus,
                    support: acc.support,
                    interferers: acc.interferers,
                    mean_gains,
                    second_moments,
                    noise_diag: acc.v_norm_sq.iter().map(|s| setup.noise_power * s * inv).collect(),
                    max_rel_stderr,
                    draws: n_mc,
                }
            })
        })
        .collect();
    Ok(out)
}

/// n-opt LSFD weights `a_k = p_k (Σ_i p_i E[g_ki g_kiᴴ] + F_k)⁻¹ E[g_kk]`,
/// solved on the support and returned as an `L`-vector.
pub fn lsfd_weights(stats: &EffectiveGainStats, powers: &[f64]) -> Result<CVec> {
    let a = stats.weighted_second_moment(powers);
    let rhs = stats.mean_own_gain() * Complex64::new(powers[stats.ue], 0.0);
    let w = hermitian_solve_vec(&a, &rhs).map_err(|e| {
        SimError::numerical(format!("LSFD system for UE {} on O-RUs {:?}: {e}", stats.ue, stats.support))
    })?;
    Ok(stats.embed(&w))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsfdResult {
    pub sinr: f64,
    /// bit/s/Hz
    pub se: f64,
}

pub fn spectral_efficiency(sinr: f64) -> f64 {
    (1.0 + sinr).log2()
}

/// Uplink SINR for weights `a` (an `L`-vector; entries off the support are
/// ignored) and the resulting SE.
pub fn uplink_sinr(a: &CVec, stats: &EffectiveGainStats, powers: &[f64]) -> Result<LsfdResult> {
    let a = stats.restrict(a);
    let m = stats.mean_own_gain();
    let pk = powers[stats.ue];
    let signal = pk * a.dotc(m).norm_sqr();
    let mut b = stats.weighted_second_moment(powers);
    b.ger(Complex64::new(-pk, 0.0), m, &m.conjugate(), Complex64::new(1.0, 0.0));
    let denom = a.dotc(&(&b * &a)).re;
    if !(denom > 0.0) || !signal.is_finite() {
        return Err(SimError::numerical(format!(
            "invalid sample for UE {}: SINR denominator {denom:e}",
            stats.ue
        )));
    }
    let sinr = signal / denom;
    Ok(LsfdResult {
        sinr,
        se: spectral_efficiency(sinr),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedEstimate {
    pub value: Complex64,
    /// `ŝ_k^c` for every O-DU that holds at least one serving O-RU.
    pub partials: BTreeMap<usize, Complex64>,
}

/// Two-stage LSFD fusion of local estimates `(l, ŝ_{l,k})`.
///
/// Each O-DU sums `[a_k*]_l ŝ_{l,k}` over its own O-RUs in ascending O-RU
/// order; the primary O-DU then adds the partial sums in ascending O-DU
/// order. Every partial produced away from the primary O-DU is one sample
/// over the inter-O-DU interface and is booked in `ledger` when given.
pub fn fuse_estimates(
    local: &[(usize, Complex64)],
    a: &CVec,
    odu_of_oru: &[usize],
    primary_odu: usize,
    step: usize,
    mut ledger: Option<&mut SignalingLedger>,
) -> FusedEstimate {
    let mut sorted: Vec<(usize, Complex64)> = local.to_vec();
    sorted.sort_by_key(|(l, _)| *l);
    let mut partials: BTreeMap<usize, Complex64> = BTreeMap::new();
    for (l, s) in sorted {
        *partials.entry(odu_of_oru[l]).or_insert(ZERO) += a[l].conj() * s;
    }
    let mut value = ZERO;
    for (&c, &p) in &partials {
        value += p;
        if c != primary_odu {
            if let Some(ledger) = ledger.as_deref_mut() {
                ledger.add_inter_odu(step, c, primary_odu, 1);
            }
        }
    }
    FusedEstimate { value, partials }
}

/// Single-stage reference: `Σ_l [a_k*]_l ŝ_{l,k}` in ascending O-RU order.
pub fn fuse_flat(local: &[(usize, Complex64)], a: &CVec) -> Complex64 {
    let mut sorted: Vec<(usize, Complex64)> = local.to_vec();
    sorted.sort_by_key(|(l, _)| *l);
    sorted.iter().fold(ZERO, |acc, (l, s)| acc + a[*l].conj() * s)
}
