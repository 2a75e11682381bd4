//! Cluster formation and handover.
//!
//! Four strategies share one [`ClusterState`]:
//! - fixed: the serving cluster is the strongest `|M^s|` O-RUs of the
//!   measurement cluster, rebuilt when the cluster power falls a threshold
//!   below its value at formation;
//! - opportunistic: every O-RU fills its `N` slots with its primary UEs
//!   first and the strongest tracked UEs after that; primaries move when a
//!   measurement-cluster O-RU beats the current one by the threshold;
//! - ubiquitous: everyone serves everyone;
//! - cellular: the O-RUs of a single O-DU serve the UE, with a hysteresis
//!   handover between O-DUs.
//!
//! Downlink gains are taken equal to the uplink large-scale gains and are
//! known exactly.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::channel::{lin_to_db, GainTable};
use crate::combining::ServingMap;
use crate::error::{Result, SimError};
use crate::geometry::{wrap_distance, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Fixed,
    Opportunistic,
    Ubiquitous,
    Cellular,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Fixed, Strategy::Opportunistic, Strategy::Ubiquitous, Strategy::Cellular];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Fixed => "fixed",
            Strategy::Opportunistic => "opportunistic",
            Strategy::Ubiquitous => "ubiquitous",
            Strategy::Cellular => "cellular",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fixed" => Ok(Strategy::Fixed),
            "opportunistic" | "opp" => Ok(Strategy::Opportunistic),
            "ubiquitous" => Ok(Strategy::Ubiquitous),
            "cellular" => Ok(Strategy::Cellular),
            other => Err(SimError::config("strategy", format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandoverConfig {
    pub strategy: Strategy,
    /// Hysteresis threshold in dB for the fixed and opportunistic strategies.
    pub threshold_db: f64,
    pub serving_size: usize,
    pub measurement_size: usize,
    pub cellular_hysteresis_db: f64,
}

impl Default for HandoverConfig {
    fn default() -> Self {
        HandoverConfig {
            strategy: Strategy::Fixed,
            threshold_db: 2.0,
            serving_size: 16,
            measurement_size: 25,
            cellular_hysteresis_db: 2.0,
        }
    }
}

impl HandoverConfig {
    pub fn validate(&self, num_orus: usize) -> Result<()> {
        if !(self.threshold_db >= 0.0) {
            return Err(SimError::config("threshold_db", "must be non-negative"));
        }
        if !(self.cellular_hysteresis_db >= 0.0) {
            return Err(SimError::config("cellular_hysteresis_db", "must be non-negative"));
        }
        if self.serving_size == 0 {
            return Err(SimError::config("serving_size", "must be at least 1"));
        }
        if self.serving_size > self.measurement_size {
            return Err(SimError::config(
                "serving_size",
                format!("{} exceeds measurement_size {}", self.serving_size, self.measurement_size),
            ));
        }
        if self.measurement_size > num_orus {
            return Err(SimError::config(
                "measurement_size",
                format!("{} exceeds the number of O-RUs {num_orus}", self.measurement_size),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    PrimaryChange,
    FixedRecluster,
    OpportunisticReload,
    CellularHandover,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::PrimaryChange => "primary_change",
            EventKind::FixedRecluster => "fixed_recluster",
            EventKind::OpportunisticReload => "opportunistic_reload",
            EventKind::CellularHandover => "cellular_handover",
        }
    }
}

/// What changed in an event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Oru(usize),
    Odu(usize),
    /// A serving cluster.
    Orus(Vec<usize>),
    /// The served set of one O-RU.
    OruLoad(usize, Vec<usize>),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        match self {
            Endpoint::Oru(l) => write!(f, "oru:{l}"),
            Endpoint::Odu(c) => write!(f, "odu:{c}"),
            Endpoint::Orus(v) => write!(f, "orus:{}", join(v)),
            Endpoint::OruLoad(l, v) => write!(f, "oru:{l}[{}]", join(v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandoverEvent {
    pub t: usize,
    /// The UE concerned; for reloads, the strongest newly admitted UE.
    pub ue: usize,
    pub kind: EventKind,
    pub old: Endpoint,
    pub new: Endpoint,
}

/// Per-UE and per-O-RU association state.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub primary: Vec<usize>,
    /// `M_k^m`, nearest-first around the primary.
    pub measurement: Vec<Vec<usize>>,
    /// `M_k^s`.
    pub serving: Vec<BTreeSet<usize>>,
    /// `D_l`.
    pub served: Vec<BTreeSet<usize>>,
    /// `P̄_k`, linear; only meaningful for the fixed strategy.
    pub reference_power: Vec<f64>,
    /// Serving O-DU per UE; only meaningful for the cellular strategy.
    pub serving_odu: Vec<Option<usize>>,
}

impl ClusterState {
    pub fn empty(num_orus: usize, num_ues: usize) -> Self {
        ClusterState {
            primary: vec![0; num_ues],
            measurement: vec![Vec::new(); num_ues],
            serving: vec![BTreeSet::new(); num_ues],
            served: vec![BTreeSet::new(); num_orus],
            reference_power: vec![0.0; num_ues],
            serving_odu: vec![None; num_ues],
        }
    }

    pub fn num_ues(&self) -> usize {
        self.primary.len()
    }

    pub fn num_orus(&self) -> usize {
        self.served.len()
    }

    pub fn serve(&mut self, l: usize, k: usize) {
        self.served[l].insert(k);
        self.serving[k].insert(l);
    }

    pub fn unserve(&mut self, l: usize, k: usize) {
        self.served[l].remove(&k);
        self.serving[k].remove(&l);
    }

    pub fn set_served(&mut self, l: usize, ues: BTreeSet<usize>) {
        for k in std::mem::take(&mut self.served[l]) {
            self.serving[k].remove(&l);
        }
        for &k in &ues {
            self.serving[k].insert(l);
        }
        self.served[l] = ues;
    }

    pub fn set_serving(&mut self, k: usize, orus: BTreeSet<usize>) {
        for l in std::mem::take(&mut self.serving[k]) {
            self.served[l].remove(&k);
        }
        for &l in &orus {
            self.served[l].insert(k);
        }
        self.serving[k] = orus;
    }

    /// `K*_l` for every O-RU.
    pub fn primary_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_orus()];
        for &l in &self.primary {
            counts[l] += 1;
        }
        counts
    }

    pub fn primaries_of(&self, l: usize) -> BTreeSet<usize> {
        (0..self.num_ues()).filter(|&k| self.primary[k] == l).collect()
    }

    pub fn serving_map(&self) -> ServingMap {
        ServingMap {
            served: self.served.iter().map(|d| d.iter().copied().collect()).collect(),
            serving: self.serving.iter().map(|m| m.iter().copied().collect()).collect(),
        }
    }

    /// Checks the structural invariants; `capacity` additionally enforces
    /// `|D_l| ≤ N` and `K*_l ≤ N`.
    pub fn check_invariants(&self, capacity: Option<usize>) -> std::result::Result<(), String> {
        for k in 0..self.num_ues() {
            let p = self.primary[k];
            if !self.serving[k].contains(&p) {
                return Err(format!("UE {k}: primary O-RU {p} not in serving cluster"));
            }
            let meas: BTreeSet<usize> = self.measurement[k].iter().copied().collect();
            if !self.serving[k].is_subset(&meas) {
                return Err(format!("UE {k}: serving cluster not inside measurement cluster"));
            }
            for &l in &self.serving[k] {
                if !self.served[l].contains(&k) {
                    return Err(format!("UE {k} lists O-RU {l} but D_{l} lacks it"));
                }
            }
        }
        for (l, d) in self.served.iter().enumerate() {
            for &k in d {
                if !self.serving[k].contains(&l) {
                    return Err(format!("D_{l} lists UE {k} but its serving cluster lacks O-RU {l}"));
                }
            }
        }
        if let Some(n) = capacity {
            for (l, d) in self.served.iter().enumerate() {
                if d.len() > n {
                    return Err(format!("O-RU {l} serves {} UEs, capacity {n}", d.len()));
                }
            }
            for (l, c) in self.primary_counts().into_iter().enumerate() {
                if c > n {
                    return Err(format!("O-RU {l} is primary for {c} UEs, capacity {n}"));
                }
            }
        }
        Ok(())
    }
}

/// Index of the strongest gain; ties go to the lowest index.
pub fn select_primary(gains_db: &[f64]) -> usize {
    assert!(!gains_db.is_empty());
    let mut best = 0;
    for (l, &g) in gains_db.iter().enumerate().skip(1) {
        if g > gains_db[best] {
            best = l;
        }
    }
    best
}

/// The `size` O-RUs closest to `primary` on the torus, nearest first; the
/// primary always comes first and distance ties go to the lower index.
pub fn measurement_cluster(topology: &Topology, primary: usize, size: usize) -> Vec<usize> {
    let origin = topology.oru_positions[primary];
    let mut order: Vec<(bool, f64, usize)> = (0..topology.num_orus())
        .map(|l| (l != primary, wrap_distance(origin, topology.oru_positions[l], topology.grid_side_m), l))
        .collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    order.into_iter().take(size).map(|(_, _, l)| l).collect()
}

/// `O_k[t]`: the `size` strongest members (by linear gain, ties to the lower
/// index) and their summed linear gain.
pub fn fixed_cluster(members: &[usize], gains_lin: &[f64], size: usize) -> (BTreeSet<usize>, f64) {
    let mut ranked: Vec<usize> = members.to_vec();
    ranked.sort_by(|&a, &b| gains_lin[b].total_cmp(&gains_lin[a]).then(a.cmp(&b)));
    let chosen: BTreeSet<usize> = ranked.into_iter().take(size).collect();
    let power = chosen.iter().map(|&l| gains_lin[l]).sum();
    (chosen, power)
}

fn column_lin(gains: &GainTable, k: usize) -> Vec<f64> {
    (0..gains.num_orus).map(|l| gains.lin(l, k)).collect()
}

fn form_fixed_cluster(state: &mut ClusterState, gains: &GainTable, topology: &Topology, cfg: &HandoverConfig, k: usize) {
    let primary = select_primary(&gains.column(k));
    state.primary[k] = primary;
    state.measurement[k] = measurement_cluster(topology, primary, cfg.measurement_size);
    let (serving, power) = fixed_cluster(&state.measurement[k], &column_lin(gains, k), cfg.serving_size);
    state.set_serving(k, serving);
    state.reference_power[k] = power;
}

pub fn fixed_init(gains: &GainTable, topology: &Topology, cfg: &HandoverConfig) -> ClusterState {
    let mut state = ClusterState::empty(gains.num_orus, gains.num_ues);
    for k in 0..gains.num_ues {
        form_fixed_cluster(&mut state, gains, topology, cfg, k);
    }
    state
}

/// Current serving-cluster power `P_k[t]`, linear.
pub fn cluster_power(state: &ClusterState, gains: &GainTable, k: usize) -> f64 {
    state.serving[k].iter().map(|&l| gains.lin(l, k)).sum()
}

/// Rebuilds the cluster of every UE whose cluster power dropped more than
/// `threshold_db` below its reference.
pub fn fixed_handover_step(
    state: &mut ClusterState,
    gains: &GainTable,
    topology: &Topology,
    cfg: &HandoverConfig,
    t: usize,
) -> Vec<HandoverEvent> {
    let mut events = Vec::new();
    for k in 0..state.num_ues() {
        let now_db = lin_to_db(cluster_power(state, gains, k));
        if now_db < lin_to_db(state.reference_power[k]) - cfg.threshold_db {
            let old_primary = state.primary[k];
            let old_cluster: Vec<usize> = state.serving[k].iter().copied().collect();
            form_fixed_cluster(state, gains, topology, cfg, k);
            events.push(HandoverEvent {
                t,
                ue: k,
                kind: EventKind::FixedRecluster,
                old: Endpoint::Orus(old_cluster),
                new: Endpoint::Orus(state.serving[k].iter().copied().collect()),
            });
            if state.primary[k] != old_primary {
                events.push(HandoverEvent {
                    t,
                    ue: k,
                    kind: EventKind::PrimaryChange,
                    old: Endpoint::Oru(old_primary),
                    new: Endpoint::Oru(state.primary[k]),
                });
            }
        }
    }
    events
}

/// `Q_l^{(w)}`: the `w` strongest UEs towards `l` among those tracking `l`
/// in their measurement cluster, excluding UEs whose primary is `l`.
fn best_candidates(state: &ClusterState, gains: &GainTable, l: usize, w: usize) -> Vec<usize> {
    let mut cands: Vec<usize> = (0..state.num_ues())
        .filter(|&k| state.primary[k] != l && state.measurement[k].contains(&l))
        .collect();
    cands.sort_by(|&a, &b| gains.db(l, b).total_cmp(&gains.db(l, a)).then(a.cmp(&b)));
    cands.truncate(w);
    cands
}

/// `D_l ← Q_l^{(N − K*_l)} ∪ {k : l*_k = l}`.
fn reload(state: &mut ClusterState, gains: &GainTable, l: usize, capacity: usize) {
    let mut load = state.primaries_of(l);
    let free = capacity.saturating_sub(load.len());
    load.extend(best_candidates(state, gains, l, free));
    state.set_served(l, load);
}

/// Initial opportunistic formation.
///
/// Primaries go to the strongest O-RU. When more than `capacity` UEs pick
/// the same O-RU, the weakest of them move to their next-best O-RU that still
/// has primary capacity. Each O-RU is then filled with its primaries plus
/// the strongest UEs that track it.
pub fn opportunistic_init(
    gains: &GainTable,
    topology: &Topology,
    capacity: usize,
    measurement_size: usize,
) -> Result<ClusterState> {
    let (num_orus, num_ues) = (gains.num_orus, gains.num_ues);
    if capacity == 0 || num_ues > num_orus * capacity {
        return Err(SimError::config(
            "num_ues",
            format!("{num_ues} UEs cannot all get a primary O-RU with {num_orus} O-RUs of {capacity} slots"),
        ));
    }
    let mut state = ClusterState::empty(num_orus, num_ues);
    let mut counts = vec![0usize; num_orus];
    let wanted: Vec<usize> = (0..num_ues).map(|k| select_primary(&gains.column(k))).collect();
    // strongest claims first so overflow spills the weakest
    let mut order: Vec<usize> = (0..num_ues).collect();
    order.sort_by(|&a, &b| gains.db(wanted[b], b).total_cmp(&gains.db(wanted[a], a)).then(a.cmp(&b)));
    for k in order {
        let primary = if counts[wanted[k]] < capacity {
            wanted[k]
        } else {
            let mut ranked: Vec<usize> = (0..num_orus).collect();
            ranked.sort_by(|&a, &b| gains.db(b, k).total_cmp(&gains.db(a, k)).then(a.cmp(&b)));
            ranked.into_iter().find(|&l| counts[l] < capacity).expect("capacity checked")
        };
        counts[primary] += 1;
        state.primary[k] = primary;
    }
    for k in 0..num_ues {
        state.measurement[k] = measurement_cluster(topology, state.primary[k], measurement_size);
    }
    for l in 0..num_orus {
        reload(&mut state, gains, l, capacity);
    }
    Ok(state)
}

/// One step of opportunistic tracking.
///
/// UEs are visited in ascending index order for primary handovers, then
/// O-RUs in ascending order for reloads. A primary handover is skipped when
/// the target O-RU's slots are all taken by primaries. After a handover the
/// UE is dropped by O-RUs that left its measurement cluster. An O-RU reloads
/// when a tracked, unserved UE beats its weakest served UE by the threshold,
/// or when it has a free slot and such a UE exists.
pub fn opportunistic_track(
    state: &mut ClusterState,
    gains: &GainTable,
    topology: &Topology,
    threshold_db: f64,
    capacity: usize,
    measurement_size: usize,
    t: usize,
) -> Vec<HandoverEvent> {
    let mut events = Vec::new();
    for k in 0..state.num_ues() {
        let current = state.primary[k];
        let best = state.measurement[k]
            .iter()
            .copied()
            .fold(None, |acc: Option<usize>, l| match acc {
                Some(b) if gains.db(b, k) > gains.db(l, k) || (gains.db(b, k) == gains.db(l, k) && b < l) => Some(b),
                _ => Some(l),
            })
            .expect("measurement cluster is never empty");
        if best == current || !(gains.db(best, k) > gains.db(current, k) + threshold_db) {
            continue;
        }
        if state.primary_counts()[best] >= capacity {
            continue;
        }
        state.primary[k] = best;
        state.measurement[k] = measurement_cluster(topology, best, measurement_size);
        let stale: Vec<usize> = state.serving[k]
            .iter()
            .copied()
            .filter(|l| !state.measurement[k].contains(l))
            .collect();
        for l in stale {
            state.unserve(l, k);
        }
        reload(state, gains, current, capacity);
        reload(state, gains, best, capacity);
        events.push(HandoverEvent {
            t,
            ue: k,
            kind: EventKind::PrimaryChange,
            old: Endpoint::Oru(current),
            new: Endpoint::Oru(best),
        });
    }

    for l in 0..state.num_orus() {
        let weakest = state.served[l]
            .iter()
            .map(|&k| gains.db(l, k))
            .fold(f64::INFINITY, f64::min);
        let outsiders: Vec<usize> = (0..state.num_ues())
            .filter(|&k| !state.served[l].contains(&k) && state.measurement[k].contains(&l))
            .collect();
        let Some(&strongest) = outsiders
            .iter()
            .max_by(|&&a, &&b| gains.db(l, a).total_cmp(&gains.db(l, b)).then(b.cmp(&a)))
        else {
            continue;
        };
        let beats = gains.db(l, strongest) > weakest + threshold_db;
        let has_room = state.served[l].len() < capacity;
        if !(beats || has_room) {
            continue;
        }
        let before: Vec<usize> = state.served[l].iter().copied().collect();
        reload(state, gains, l, capacity);
        let after: Vec<usize> = state.served[l].iter().copied().collect();
        if after != before {
            events.push(HandoverEvent {
                t,
                ue: strongest,
                kind: EventKind::OpportunisticReload,
                old: Endpoint::OruLoad(l, before),
                new: Endpoint::OruLoad(l, after),
            });
        }
    }
    events
}

/// Ubiquitous or cellular assignment from scratch.
pub fn baseline_assign(strategy: Strategy, gains: &GainTable, topology: &Topology) -> Result<ClusterState> {
    let (num_orus, num_ues) = (gains.num_orus, gains.num_ues);
    let mut state = ClusterState::empty(num_orus, num_ues);
    let everyone: Vec<usize> = (0..num_orus).collect();
    for k in 0..num_ues {
        let primary = select_primary(&gains.column(k));
        state.primary[k] = primary;
        state.measurement[k] = everyone.clone();
        match strategy {
            Strategy::Ubiquitous => state.set_serving(k, everyone.iter().copied().collect()),
            Strategy::Cellular => {
                let c = topology.odu_of_oru[primary];
                state.serving_odu[k] = Some(c);
                state.set_serving(k, topology.orus_of_odu(c).into_iter().collect());
            }
            other => {
                return Err(SimError::config("strategy", format!("{other} is not a baseline")));
            }
        }
    }
    Ok(state)
}

/// Cellular handover: switch O-DU when an O-RU of another O-DU beats the
/// best O-RU of the serving O-DU by more than `hysteresis_db`. The primary
/// O-RU follows the strongest O-RU of the serving O-DU without signaling.
pub fn cellular_handover_step(
    state: &mut ClusterState,
    gains: &GainTable,
    topology: &Topology,
    hysteresis_db: f64,
    t: usize,
) -> Vec<HandoverEvent> {
    let mut events = Vec::new();
    for k in 0..state.num_ues() {
        let c = state.serving_odu[k].expect("cellular state has a serving O-DU");
        let strongest = |inside: bool| {
            (0..gains.num_orus)
                .filter(|&l| (topology.odu_of_oru[l] == c) == inside)
                .fold(None, |acc: Option<usize>, l| match acc {
                    Some(b) if gains.db(b, k) >= gains.db(l, k) => Some(b),
                    _ => Some(l),
                })
        };
        let inside = strongest(true).expect("every O-DU owns O-RUs");
        let mut anchor = inside;
        if let Some(outside) = strongest(false) {
            if gains.db(outside, k) > gains.db(inside, k) + hysteresis_db {
                let target = topology.odu_of_oru[outside];
                state.serving_odu[k] = Some(target);
                state.set_serving(k, topology.orus_of_odu(target).into_iter().collect());
                anchor = outside;
                events.push(HandoverEvent {
                    t,
                    ue: k,
                    kind: EventKind::CellularHandover,
                    old: Endpoint::Odu(c),
                    new: Endpoint::Odu(target),
                });
            }
        }
        state.primary[k] = anchor;
    }
    events
}

/// Ubiquitous serving never changes; the primary tracks the strongest O-RU.
pub fn ubiquitous_step(state: &mut ClusterState, gains: &GainTable) {
    for k in 0..state.num_ues() {
        state.primary[k] = select_primary(&gains.column(k));
    }
}

/// Strategy dispatcher used by the episode loop.
#[derive(Debug, Clone)]
pub struct ClusterManager {
    pub config: HandoverConfig,
    /// Per-O-RU UE limit `N` (the antenna count).
    pub capacity: usize,
}

impl ClusterManager {
    pub fn new(config: HandoverConfig, capacity: usize) -> Self {
        ClusterManager { config, capacity }
    }

    /// The capacity limit that applies to this strategy's states.
    pub fn enforced_capacity(&self) -> Option<usize> {
        (self.config.strategy == Strategy::Opportunistic).then_some(self.capacity)
    }

    pub fn init(&self, gains: &GainTable, topology: &Topology) -> Result<ClusterState> {
        match self.config.strategy {
            Strategy::Fixed => Ok(fixed_init(gains, topology, &self.config)),
            Strategy::Opportunistic => {
                opportunistic_init(gains, topology, self.capacity, self.config.measurement_size)
            }
            s => baseline_assign(s, gains, topology),
        }
    }

    pub fn step(&self, state: &mut ClusterState, gains: &GainTable, topology: &Topology, t: usize) -> Vec<HandoverEvent> {
        match self.config.strategy {
            Strategy::Fixed => fixed_handover_step(state, gains, topology, &self.config, t),
            Strategy::Opportunistic => opportunistic_track(
                state,
                gains,
                topology,
                self.config.threshold_db,
                self.capacity,
                self.config.measurement_size,
                t,
            ),
            Strategy::Ubiquitous => {
                ubiquitous_step(state, gains);
                Vec::new()
            }
            Strategy::Cellular => cellular_handover_step(state, gains, topology, self.config.cellular_hysteresis_db, t),
        }
    }
}

/// Whether `event` counts as a handover for the handover-frequency metric.
pub fn is_handover(event: &HandoverEvent) -> bool {
    matches!(event.kind, EventKind::PrimaryChange | EventKind::CellularHandover)
}
