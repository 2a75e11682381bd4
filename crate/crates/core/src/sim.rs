//! Episode loop and Monte-Carlo campaigns.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{refresh_statistics, ShadowState};
use crate::clustering::{is_handover, ClusterManager, ClusterState, HandoverEvent, Strategy};
use crate::combining::{effective_gain_stats, lsfd_weights, uplink_sinr, CombiningSetup};
use crate::config::SimConfig;
use crate::error::{Result, SimError};
use crate::geometry::{generate_deployment, place_ues, step_ue, Topology, UeState};
use crate::rng::{derive_seed, substream, Stream};
use crate::signaling::{account_control_plane, account_data_plane, account_lsfd_statistics, SignalingLedger};

/// One point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CampaignCell {
    pub strategy: Strategy,
    /// `None` for strategies without a tunable threshold.
    pub threshold_db: Option<f64>,
    pub speed_kmh: f64,
}

impl CampaignCell {
    fn handover_threshold(&self, fallback: f64) -> f64 {
        self.threshold_db.unwrap_or(fallback)
    }
}

/// Seed of setup `index`; depends on nothing else, so every cell of a
/// campaign sees the same deployments and UE tracks.
pub fn setup_seed(campaign_seed: u64, index: usize) -> u64 {
    derive_seed(campaign_seed, Stream::Setup, &[index as u64])
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub cell: CampaignCell,
    pub setup: usize,
    pub num_ues: usize,
    pub sim_time_s: f64,
    /// `se[t-1][k]` for steps `t = 1..=T`, bit/s/Hz.
    pub se: Vec<Vec<f64>>,
    /// Primary O-RU per step, including the initial state at index 0.
    pub primaries: Vec<Vec<usize>>,
    pub events: Vec<HandoverEvent>,
    pub ledger: SignalingLedger,
}

impl EpisodeResult {
    pub fn num_steps(&self) -> usize {
        self.se.len()
    }

    pub fn mean_se(&self) -> f64 {
        let n = (self.se.len() * self.num_ues) as f64;
        self.se.iter().flatten().sum::<f64>() / n
    }

    pub fn handover_count(&self) -> usize {
        self.events.iter().filter(|e| is_handover(e)).count()
    }

    /// Handovers per UE per second.
    pub fn handover_frequency(&self) -> f64 {
        self.handover_count() as f64 / (self.num_ues as f64 * self.sim_time_s)
    }

    pub fn per_ue_handover_frequency(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.num_ues];
        for e in self.events.iter().filter(|e| is_handover(e)) {
            counts[e.ue] += 1;
        }
        counts.into_iter().map(|c| c as f64 / self.sim_time_s).collect()
    }

    pub fn ric_messages(&self) -> u64 {
        self.ledger.cumulative().ric_total()
    }

    pub fn inter_odu_samples(&self) -> u64 {
        self.ledger.cumulative().inter_odu_total()
    }

    /// Writes `setup,t,ue,se,primary,handovers` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        write_episodes_csv(std::slice::from_ref(self), out)
    }
}

#[derive(Serialize)]
struct EpisodeRow {
    setup: usize,
    t: usize,
    ue: usize,
    se: f64,
    primary: usize,
    handovers: usize,
}

pub fn write_episodes_csv<W: Write>(episodes: &[EpisodeResult], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if episodes.is_empty() {
        w.write_record(["setup", "t", "ue", "se", "primary", "handovers"])?;
    }
    for ep in episodes {
        for (i, row) in ep.se.iter().enumerate() {
            let t = i + 1;
            for (k, &se) in row.iter().enumerate() {
                let handovers = ep.events.iter().filter(|e| e.t == t && e.ue == k && is_handover(e)).count();
                w.serialize(EpisodeRow {
                    setup: ep.setup,
                    t,
                    ue: k,
                    se,
                    primary: ep.primaries[t][k],
                    handovers,
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes every event as `setup,t,ue,kind,old,new`.
pub fn write_events_csv<W: Write>(episodes: &[EpisodeResult], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["setup", "t", "ue", "kind", "old", "new"])?;
    for ep in episodes {
        for e in &ep.events {
            w.write_record([
                ep.setup.to_string(),
                e.t.to_string(),
                e.ue.to_string(),
                e.kind.name().to_string(),
                e.old.to_string(),
                e.new.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn at_step(setup: usize, step: usize) -> impl FnOnce(SimError) -> SimError {
    move |e| match e {
        SimError::Config { .. } => e,
        other => SimError::Episode {
            setup,
            step,
            source: Box::new(other),
        },
    }
}

fn check_state(state: &ClusterState, manager: &ClusterManager) -> Result<()> {
    state
        .check_invariants(manager.enforced_capacity())
        .map_err(|msg| SimError::numerical(format!("cluster invariant violated: {msg}")))
}

/// Per-UE SE at one step from the current statistics and clusters.
fn step_se(
    config: &SimConfig,
    stats: &crate::channel::ChannelStatistics,
    state: &ClusterState,
    seed: u64,
) -> Result<Vec<f64>> {
    let pilots = config.pilot_config();
    let serving = state.serving_map();
    let setup = CombiningSetup {
        stats,
        pilots: &pilots,
        noise_power: config.noise_power_w(),
        serving: &serving,
    };
    let gains = effective_gain_stats(&setup, config.n_mc, seed)?;
    let prelog = config.prelog();
    gains
        .iter()
        .map(|g| match g {
            Some(g) => {
                let a = lsfd_weights(g, &pilots.powers)?;
                Ok(prelog * uplink_sinr(&a, g, &pilots.powers)?.se)
            }
            None => Ok(0.0),
        })
        .collect()
}

/// Runs one episode of `config` for `cell` on setup `setup`.
pub fn run_episode(config: &SimConfig, cell: CampaignCell, setup: usize) -> Result<EpisodeResult> {
    let seed = setup_seed(config.seed, setup);
    let topology = generate_deployment(&config.deployment, &mut substream(seed, Stream::Deployment, &[]))?;
    run_episode_on(config, cell, setup, &topology)
}

/// Same as [`run_episode`] on a given topology.
pub fn run_episode_on(config: &SimConfig, cell: CampaignCell, setup: usize, topology: &Topology) -> Result<EpisodeResult> {
    let seed = setup_seed(config.seed, setup);
    let d = &config.deployment;
    let ts = config.sample_time_s;
    let mut handover = config.handover.clone();
    handover.strategy = cell.strategy;
    handover.threshold_db = cell.handover_threshold(handover.threshold_db);
    let manager = ClusterManager::new(handover, d.antennas_per_oru);

    let mut ues: Vec<UeState> = place_ues(
        d.num_ues,
        d.grid_side_m,
        cell.speed_kmh / 3.6,
        &mut substream(seed, Stream::UePlacement, &[]),
    );
    let speeds: Vec<f64> = ues.iter().map(|u| u.speed).collect();
    let ch = &config.channel;
    let mut shadow = ShadowState::stationary(topology.num_orus(), d.num_ues, ch.sigma_sf_db, ch.alpha, seed);

    let stats = refresh_statistics(topology, &ues, &shadow, ch).map_err(at_step(setup, 0))?;
    let mut state = manager.init(&stats.gain_table_db(), topology).map_err(at_step(setup, 0))?;
    check_state(&state, &manager).map_err(at_step(setup, 0))?;

    let steps = config.num_steps();
    let mut se = Vec::with_capacity(steps);
    let mut primaries = vec![state.primary.clone()];
    let mut events = Vec::new();
    let mut ledger = SignalingLedger::default();
    for t in 1..=steps {
        let wrap = at_step(setup, t);
        let result: Result<()> = (|| {
            for u in ues.iter_mut() {
                *u = step_ue(*u, ts, d.grid_side_m);
            }
            shadow = shadow.evolve_seeded(&speeds, ts, seed, t as u64);
            let stats = refresh_statistics(topology, &ues, &shadow, ch)?;
            let step_events = manager.step(&mut state, &stats.gain_table_db(), topology, t);
            check_state(&state, &manager)?;

            let mut delta = account_control_plane(&step_events, cell.strategy, &state, topology);
            delta.merge(&account_data_plane(&state, topology, &config.frame));
            delta.merge(&account_lsfd_statistics(&state, topology));
            ledger.record(t, &delta);

            se.push(step_se(config, &stats, &state, derive_seed(seed, Stream::SmallScale, &[t as u64]))?);
            primaries.push(state.primary.clone());
            events.extend(step_events);
            Ok(())
        })();
        result.map_err(wrap)?;
    }

    Ok(EpisodeResult {
        cell,
        setup,
        num_ues: d.num_ues,
        sim_time_s: config.sim_time_s,
        se,
        primaries,
        events,
        ledger,
    })
}

/// Summary of one sweep cell over all setups.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAggregate {
    pub cell: CampaignCell,
    pub setups: usize,
    pub mean_se: f64,
    pub se_stderr: f64,
    pub ho_freq: f64,
    pub ho_stderr: f64,
    /// Mean RIC messages per episode.
    pub ric_msgs: f64,
    /// Mean inter-O-DU data samples per episode.
    pub inter_odu_samples: f64,
    /// Episode mean SE per setup, in setup order.
    pub setup_se: Vec<f64>,
    /// Episode handover frequency per setup, in setup order.
    pub setup_ho_freq: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AggregateResult {
    pub cells: Vec<CellAggregate>,
}

#[derive(Serialize)]
struct AggregateRow {
    strategy: &'static str,
    threshold_db: Option<f64>,
    speed_kmh: f64,
    mean_se: f64,
    se_stderr: f64,
    ho_freq: f64,
    ho_stderr: f64,
    ric_msgs: f64,
    inter_odu_samples: f64,
}

pub const AGGREGATE_HEADER: [&str; 9] = [
    "strategy",
    "threshold_db",
    "speed_kmh",
    "mean_se",
    "se_stderr",
    "ho_freq",
    "ho_stderr",
    "ric_msgs",
    "inter_odu_samples",
];

impl AggregateResult {
    pub fn find(&self, strategy: Strategy, threshold_db: Option<f64>, speed_kmh: f64) -> Option<&CellAggregate> {
        self.cells.iter().find(|c| {
            c.cell.strategy == strategy && c.cell.threshold_db == threshold_db && c.cell.speed_kmh == speed_kmh
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.cells.is_empty() {
            w.write_record(AGGREGATE_HEADER)?;
        }
        for c in &self.cells {
            w.serialize(AggregateRow {
                strategy: c.cell.strategy.name(),
                threshold_db: c.cell.threshold_db,
                speed_kmh: c.cell.speed_kmh,
                mean_se: c.mean_se,
                se_stderr: c.se_stderr,
                ho_freq: c.ho_freq,
                ho_stderr: c.ho_stderr,
                ric_msgs: c.ric_msgs,
                inter_odu_samples: c.inter_odu_samples,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sample mean and standard error of the mean, summed in slice order.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean and standard error of the per-setup differences `a - b`.
///
/// All cells of a campaign share their setups, so paired differences
/// cancel the setup-to-setup spread that dominates each cell on its own.
pub fn paired_difference(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert_eq!(a.len(), b.len(), "cells must share their setups");
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    mean_stderr(&diffs)
}

/// Strategies × thresholds × speeds from `config`. Strategies without a
/// threshold get one cell per speed.
pub fn campaign_cells(config: &SimConfig) -> Vec<CampaignCell> {
    let mut cells = Vec::new();
    for &strategy in &config.strategies {
        let thresholds: Vec<Option<f64>> = match strategy {
            Strategy::Fixed | Strategy::Opportunistic => config.thresholds_db.iter().map(|&m| Some(m)).collect(),
            Strategy::Ubiquitous | Strategy::Cellular => vec![None],
        };
        for threshold_db in thresholds {
            for &speed_kmh in &config.speeds_kmh {
                cells.push(CampaignCell {
                    strategy,
                    threshold_db,
                    speed_kmh,
                });
            }
        }
    }
    cells
}

pub fn aggregate(cell: CampaignCell, episodes: &[EpisodeResult]) -> CellAggregate {
    let se: Vec<f64> = episodes.iter().map(EpisodeResult::mean_se).collect();
    let ho: Vec<f64> = episodes.iter().map(EpisodeResult::handover_frequency).collect();
    let ric: Vec<f64> = episodes.iter().map(|e| e.ric_messages() as f64).collect();
    let inter: Vec<f64> = episodes.iter().map(|e| e.inter_odu_samples() as f64).collect();
    let (mean_se, se_stderr) = mean_stderr(&se);
    let (ho_freq, ho_stderr) = mean_stderr(&ho);
    CellAggregate {
        cell,
        setups: episodes.len(),
        mean_se,
        se_stderr,
        ho_freq,
        ho_stderr,
        ric_msgs: mean_stderr(&ric).0,
        inter_odu_samples: mean_stderr(&inter).0,
        setup_se: se,
        setup_ho_freq: ho,
    }
}

/// Runs `config.num_setups` episodes for every cell on at most
/// `parallelism` worker threads (0 = rayon default). Results are reduced in
/// cell and setup order, so they do not depend on scheduling.
pub fn run_campaign(config: &SimConfig, cells: &[CampaignCell], parallelism: usize) -> Result<AggregateResult> {
    config.validate()?;
    let topologies: Vec<Topology> = (0..config.num_setups)
        .map(|s| {
            let seed = setup_seed(config.seed, s);
            generate_deployment(&config.deployment, &mut substream(seed, Stream::Deployment, &[]))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..config.num_setups).map(move |s| (c, s)))
        .collect();
    let run = || {
        jobs.par_iter()
            .map(|&(c, s)| run_episode_on(config, cells[c], s, &topologies[s]))
            .collect::<Vec<_>>()
    };
    let results = if parallelism == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| SimError::config("parallelism", e.to_string()))?
            .install(run)
    };
    let episodes = results.into_iter().collect::<Result<Vec<_>>>()?;
    let cells = episodes
        .chunks(config.num_setups)
        .zip(cells)
        .map(|(eps, &cell)| aggregate(cell, eps))
        .collect();
    Ok(AggregateResult { cells })
}

/// Runs every setup of one cell and keeps the full episode results.
pub fn run_setups(config: &SimConfig, cell: CampaignCell, parallelism: usize) -> Result<Vec<EpisodeResult>> {
    config.validate()?;
    let run = || {
        (0..config.num_setups)
            .into_par_iter()
            .map(|s| run_episode(config, cell, s))
            .collect::<Result<Vec<_>>>()
    };
    if parallelism == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| SimError::config("parallelism", e.to_string()))?
            .install(run)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SimConfig {
        let mut cfg = SimConfig::desk_scale();
        cfg.deployment.num_ues = 4;
        cfg.n_mc = 8;
        cfg.sim_time_s = 2.0;
        cfg.num_setups = 2;
        cfg
    }

    fn cell(strategy: Strategy, threshold_db: Option<f64>, speed_kmh: f64) -> CampaignCell {
        CampaignCell {
            strategy,
            threshold_db,
            speed_kmh,
        }
    }

    #[test]
    fn episode_has_one_row_per_step() {
        let mut cfg = tiny();
        cfg.sim_time_s = 10.0;
        let ep = run_episode(&cfg, cell(Strategy::Fixed, Some(2.0), 30.0), 0).unwrap();
        assert_eq!(ep.num_steps(), 20);
        assert_eq!(ep.primaries.len(), 21);
        assert!(ep.se.iter().flatten().all(|&s| s >= 0.0 && s.is_finite()));
        assert!(ep.mean_se() > 0.0);
    }

    #[test]
    fn static_network_with_infinite_threshold_never_hands_over() {
        let cfg = tiny();
        for s in [Strategy::Fixed, Strategy::Opportunistic] {
            let ep = run_episode(&cfg, cell(s, Some(f64::INFINITY), 0.0), 0).unwrap();
            assert!(ep.events.iter().all(|e| !is_handover(e)));
            assert_eq!(ep.handover_frequency(), 0.0);
        }
    }

    #[test]
    fn episodes_are_deterministic() {
        let cfg = tiny();
        let c = cell(Strategy::Opportunistic, Some(2.0), 120.0);
        assert_eq!(run_episode(&cfg, c, 1).unwrap(), run_episode(&cfg, c, 1).unwrap());
    }

    #[test]
    fn campaign_grid_and_single_setup() {
        let mut cfg = tiny();
        cfg.strategies = vec![Strategy::Fixed, Strategy::Opportunistic];
        cfg.thresholds_db = vec![2.0, 3.0];
        assert_eq!(campaign_cells(&cfg).len() * 25, 400);

        cfg.num_setups = 1;
        cfg.speeds_kmh = vec![3.0];
        cfg.strategies = vec![Strategy::Cellular];
        let cells = campaign_cells(&cfg);
        assert_eq!(cells.len(), 1);
        let agg = run_campaign(&cfg, &cells, 1).unwrap();
        let ep = run_episode(&cfg, cells[0], 0).unwrap();
        let row = &agg.cells[0];
        assert_eq!(row.mean_se, ep.mean_se());
        assert_eq!(row.ho_freq, ep.handover_frequency());
        assert_eq!(row.se_stderr, 0.0);
    }

    #[test]
    fn aggregate_csv_header() {
        let mut buf = Vec::new();
        AggregateResult::default().write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().trim(),
            "strategy,threshold_db,speed_kmh,mean_se,se_stderr,ho_freq,ho_stderr,ric_msgs,inter_odu_samples"
        );
    }

    #[test]
    fn mean_and_stderr() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_stderr(&[7.0]), (7.0, 0.0));
    }
}
