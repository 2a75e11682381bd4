//! Fronthaul, inter-O-DU and Near-RT RIC signaling counters.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::clustering::{ClusterState, Endpoint, EventKind, HandoverEvent, Strategy};
use crate::error::{Result, SimError};
use crate::geometry::Topology;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameConfig {
    /// Data symbols per coherence block.
    pub tau_u: u64,
    pub blocks_per_step: u64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig {
            tau_u: 100,
            blocks_per_step: 1,
        }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_u == 0 {
            return Err(SimError::config("tau_u", "must be at least 1"));
        }
        if self.blocks_per_step == 0 {
            return Err(SimError::config("blocks_per_step", "must be at least 1"));
        }
        Ok(())
    }

    pub fn samples_per_step(&self) -> u64 {
        self.tau_u * self.blocks_per_step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CounterClass {
    Fronthaul,
    InterOdu,
    LsfdStats,
    Ric,
}

impl CounterClass {
    pub fn name(self) -> &'static str {
        match self {
            CounterClass::Fronthaul => "fronthaul",
            CounterClass::InterOdu => "inter_odu",
            CounterClass::LsfdStats => "lsfd_stats",
            CounterClass::Ric => "ric",
        }
    }
}

impl fmt::Display for CounterClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Counts accumulated over some span of steps.
///
/// Fronthaul keys are `(oru, odu)`; inter-O-DU and LSFD keys are
/// `(source odu, primary odu)`; RIC counts are keyed by the reporting O-DU.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LedgerDelta {
    pub fronthaul: BTreeMap<(usize, usize), u64>,
    pub inter_odu: BTreeMap<(usize, usize), u64>,
    pub lsfd_stats: BTreeMap<(usize, usize), u64>,
    pub ric: BTreeMap<usize, u64>,
}

impl LedgerDelta {
    pub fn is_empty(&self) -> bool {
        self.fronthaul.is_empty() && self.inter_odu.is_empty() && self.lsfd_stats.is_empty() && self.ric.is_empty()
    }

    pub fn merge(&mut self, other: &LedgerDelta) {
        for (k, v) in &other.fronthaul {
            *self.fronthaul.entry(*k).or_default() += v;
        }
        for (k, v) in &other.inter_odu {
            *self.inter_odu.entry(*k).or_default() += v;
        }
        for (k, v) in &other.lsfd_stats {
            *self.lsfd_stats.entry(*k).or_default() += v;
        }
        for (k, v) in &other.ric {
            *self.ric.entry(*k).or_default() += v;
        }
    }

    pub fn fronthaul_total(&self) -> u64 {
        self.fronthaul.values().sum()
    }

    pub fn inter_odu_total(&self) -> u64 {
        self.inter_odu.values().sum()
    }

    pub fn lsfd_total(&self) -> u64 {
        self.lsfd_stats.values().sum()
    }

    pub fn ric_total(&self) -> u64 {
        self.ric.values().sum()
    }

    fn add(map: &mut BTreeMap<(usize, usize), u64>, key: (usize, usize), amount: u64) {
        if amount > 0 {
            *map.entry(key).or_default() += amount;
        }
    }

    pub fn add_fronthaul(&mut self, oru: usize, odu: usize, amount: u64) {
        Self::add(&mut self.fronthaul, (oru, odu), amount);
    }

    pub fn add_inter_odu(&mut self, src: usize, dst: usize, amount: u64) {
        Self::add(&mut self.inter_odu, (src, dst), amount);
    }

    pub fn add_lsfd_stats(&mut self, src: usize, dst: usize, amount: u64) {
        Self::add(&mut self.lsfd_stats, (src, dst), amount);
    }

    pub fn add_ric(&mut self, odu: usize, amount: u64) {
        if amount > 0 {
            *self.ric.entry(odu).or_default() += amount;
        }
    }

    /// Rows as `(class, source, destination, amount)` in a stable order.
    pub fn rows(&self) -> Vec<(CounterClass, String, String, u64)> {
        let mut rows = Vec::new();
        for (&(l, c), &n) in &self.fronthaul {
            rows.push((CounterClass::Fronthaul, format!("oru:{l}"), format!("odu:{c}"), n));
        }
        for (&(a, b), &n) in &self.inter_odu {
            rows.push((CounterClass::InterOdu, format!("odu:{a}"), format!("odu:{b}"), n));
        }
        for (&(a, b), &n) in &self.lsfd_stats {
            rows.push((CounterClass::LsfdStats, format!("odu:{a}"), format!("odu:{b}"), n));
        }
        for (&c, &n) in &self.ric {
            rows.push((CounterClass::Ric, format!("odu:{c}"), "ric".to_string(), n));
        }
        rows
    }
}

#[derive(Debug, Serialize)]
struct LedgerRow<'a> {
    step: usize,
    counter_class: &'a str,
    source: &'a str,
    destination: &'a str,
    amount: u64,
}

/// Per-step deltas plus their running total.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SignalingLedger {
    steps: BTreeMap<usize, LedgerDelta>,
    total: LedgerDelta,
}

impl SignalingLedger {
    pub fn record(&mut self, step: usize, delta: &LedgerDelta) {
        if delta.is_empty() {
            return;
        }
        self.steps.entry(step).or_default().merge(delta);
        self.total.merge(delta);
    }

    pub fn add_inter_odu(&mut self, step: usize, src: usize, dst: usize, amount: u64) {
        let mut d = LedgerDelta::default();
        d.add_inter_odu(src, dst, amount);
        self.record(step, &d);
    }

    pub fn add_ric(&mut self, step: usize, odu: usize, amount: u64) {
        let mut d = LedgerDelta::default();
        d.add_ric(odu, amount);
        self.record(step, &d);
    }

    /// The delta booked at `step`; empty when nothing happened.
    pub fn step(&self, step: usize) -> LedgerDelta {
        self.steps.get(&step).cloned().unwrap_or_default()
    }

    pub fn steps(&self) -> impl Iterator<Item = (usize, &LedgerDelta)> {
        self.steps.iter().map(|(t, d)| (*t, d))
    }

    pub fn cumulative(&self) -> &LedgerDelta {
        &self.total
    }

    pub fn merge(&mut self, other: &SignalingLedger) {
        for (t, d) in other.steps() {
            self.record(t, d);
        }
    }

    /// Writes `step,counter_class,source,destination,amount` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.steps.is_empty() {
            w.write_record(["step", "counter_class", "source", "destination", "amount"])?;
        }
        for (step, delta) in self.steps() {
            for (class, source, destination, amount) in delta.rows() {
                w.serialize(LedgerRow {
                    step,
                    counter_class: class.name(),
                    source: &source,
                    destination: &destination,
                    amount,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Non-primary O-DUs that own serving O-RUs of UE `k`.
fn cooperating_odus(cluster: &ClusterState, topology: &Topology, k: usize) -> (usize, Vec<usize>) {
    let primary = topology.odu_of_oru[cluster.primary[k]];
    let mut odus: Vec<usize> = cluster.serving[k]
        .iter()
        .map(|&l| topology.odu_of_oru[l])
        .filter(|&c| c != primary)
        .collect();
    odus.sort_unstable();
    odus.dedup();
    (primary, odus)
}

/// Data-plane samples for one step: `τ_u` per served UE on every fronthaul
/// link and `τ_u` per UE from every cooperating O-DU to the primary O-DU.
pub fn account_data_plane(cluster: &ClusterState, topology: &Topology, frame: &FrameConfig) -> LedgerDelta {
    let per_ue = frame.samples_per_step();
    let mut delta = LedgerDelta::default();
    for (l, d) in cluster.served.iter().enumerate() {
        delta.add_fronthaul(l, topology.odu_of_oru[l], per_ue * d.len() as u64);
    }
    for k in 0..cluster.num_ues() {
        let (primary, others) = cooperating_odus(cluster, topology, k);
        for c in others {
            delta.add_inter_odu(c, primary, per_ue);
        }
    }
    delta
}

/// One effective-gain statistics message per cooperating O-DU and UE.
pub fn account_lsfd_statistics(cluster: &ClusterState, topology: &Topology) -> LedgerDelta {
    let mut delta = LedgerDelta::default();
    for k in 0..cluster.num_ues() {
        let (primary, others) = cooperating_odus(cluster, topology, k);
        for c in others {
            delta.add_lsfd_stats(c, primary, 1);
        }
    }
    delta
}

/// Near-RT RIC messages caused by `events`.
///
/// A fixed recluster costs one gain report per measurement-cluster O-RU,
/// booked on the O-DU that owns it; an opportunistic primary change or a
/// cellular handover costs one notification from the new O-DU. Events that
/// do not belong to `strategy` are free.
pub fn account_control_plane(
    events: &[HandoverEvent],
    strategy: Strategy,
    cluster: &ClusterState,
    topology: &Topology,
) -> LedgerDelta {
    let mut delta = LedgerDelta::default();
    for e in events {
        match (strategy, e.kind) {
            (Strategy::Fixed, EventKind::FixedRecluster) => {
                for &l in &cluster.measurement[e.ue] {
                    delta.add_ric(topology.odu_of_oru[l], 1);
                }
            }
            (Strategy::Opportunistic, EventKind::PrimaryChange) => {
                if let Endpoint::Oru(l) = e.new {
                    delta.add_ric(topology.odu_of_oru[l], 1);
                }
            }
            (Strategy::Cellular, EventKind::CellularHandover) => {
                if let Endpoint::Odu(c) = e.new {
                    delta.add_ric(c, 1);
                }
            }
            _ => {}
        }
    }
    delta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use std::collections::BTreeSet;

    /// Nine O-RUs in a row, three per O-DU.
    fn row_topology() -> Topology {
        Topology {
            grid_side_m: 900.0,
            antennas_per_oru: 4,
            oru_positions: (0..9).map(|l| Point::new(50.0 + 100.0 * l as f64, 50.0)).collect(),
            odu_of_oru: (0..9).map(|l| l / 3).collect(),
            array_orientation: vec![0.0; 9],
            num_odus: 3,
        }
    }

    fn state_with(serving: &[&[usize]], primary: &[usize]) -> ClusterState {
        let mut s = ClusterState::empty(9, serving.len());
        for (k, orus) in serving.iter().enumerate() {
            s.primary[k] = primary[k];
            s.measurement[k] = (0..9).collect();
            s.set_serving(k, orus.iter().copied().collect::<BTreeSet<_>>());
        }
        s
    }

    #[test]
    fn three_odus_give_two_inter_odu_transfers() {
        let topo = row_topology();
        let s = state_with(&[&[0, 4, 8]], &[0]);
        let d = account_data_plane(&s, &topo, &FrameConfig::default());
        assert_eq!(d.inter_odu_total(), 200);
        assert_eq!(d.inter_odu.get(&(1, 0)), Some(&100));
        assert_eq!(d.inter_odu.get(&(2, 0)), Some(&100));
        assert_eq!(account_lsfd_statistics(&s, &topo).lsfd_total(), 2);
    }

    #[test]
    fn single_odu_needs_no_cooperation() {
        let topo = row_topology();
        let s = state_with(&[&[3, 4, 5]], &[4]);
        let d = account_data_plane(&s, &topo, &FrameConfig::default());
        assert_eq!(d.inter_odu_total(), 0);
        assert_eq!(d.fronthaul_total(), 300);
    }

    #[test]
    fn fronthaul_is_tau_u_per_served_ue() {
        let topo = row_topology();
        let s = state_with(&[&[2], &[2], &[2], &[2]], &[2, 2, 2, 2]);
        let d = account_data_plane(&s, &topo, &FrameConfig { tau_u: 100, blocks_per_step: 1 });
        assert_eq!(d.fronthaul.get(&(2, 0)), Some(&400));
        let d = account_data_plane(&s, &topo, &FrameConfig { tau_u: 100, blocks_per_step: 3 });
        assert_eq!(d.fronthaul_total(), 1200);
    }

    fn recluster(ue: usize) -> HandoverEvent {
        HandoverEvent {
            t: 1,
            ue,
            kind: EventKind::FixedRecluster,
            old: Endpoint::Orus(vec![]),
            new: Endpoint::Orus(vec![]),
        }
    }

    #[test]
    fn fixed_worst_case_burst() {
        // K = 40 UEs with 25-O-RU measurement clusters on a 36-O-RU topology
        let topo = Topology {
            grid_side_m: 600.0,
            antennas_per_oru: 4,
            oru_positions: (0..36)
                .map(|l| Point::new(50.0 + 100.0 * (l % 6) as f64, 50.0 + 100.0 * (l / 6) as f64))
                .collect(),
            odu_of_oru: (0..36).map(|l| l / 4).collect(),
            array_orientation: vec![0.0; 36],
            num_odus: 9,
        };
        let mut s = ClusterState::empty(36, 40);
        for k in 0..40 {
            s.primary[k] = k % 36;
            s.measurement[k] = crate::clustering::measurement_cluster(&topo, k % 36, 25);
        }
        let events: Vec<_> = (0..40).map(recluster).collect();
        let d = account_control_plane(&events, Strategy::Fixed, &s, &topo);
        assert_eq!(d.ric_total(), 1000);
    }

    #[test]
    fn opportunistic_costs_one_message_per_primary_change() {
        let topo = row_topology();
        let s = state_with(&[&[0], &[1], &[2]], &[0, 1, 2]);
        let events: Vec<_> = (0..3)
            .map(|k| HandoverEvent {
                t: 1,
                ue: k,
                kind: EventKind::PrimaryChange,
                old: Endpoint::Oru(k),
                new: Endpoint::Oru(k + 3),
            })
            .collect();
        let d = account_control_plane(&events, Strategy::Opportunistic, &s, &topo);
        assert_eq!(d.ric_total(), 3);
        assert_eq!(d.ric.get(&1), Some(&3));
        assert!(account_control_plane(&[], Strategy::Opportunistic, &s, &topo).is_empty());
        assert!(account_control_plane(&events, Strategy::Ubiquitous, &s, &topo).is_empty());
    }

    #[test]
    fn ledger_is_additive_and_exports_csv() {
        let topo = row_topology();
        let s = state_with(&[&[0, 4], &[5, 8]], &[0, 8]);
        let frame = FrameConfig::default();
        let mut whole = SignalingLedger::default();
        let mut parts = SignalingLedger::default();
        let mut total = LedgerDelta::default();
        for t in 0..3 {
            let d = account_data_plane(&s, &topo, &frame);
            whole.record(t, &d);
            total.merge(&d);
        }
        parts.record(0, &whole.step(0));
        let mut tail = SignalingLedger::default();
        tail.record(1, &whole.step(1));
        tail.record(2, &whole.step(2));
        parts.merge(&tail);
        assert_eq!(parts, whole);
        assert_eq!(whole.cumulative(), &total);

        let mut buf = Vec::new();
        whole.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("step,counter_class,source,destination,amount"));
        assert!(text.contains("0,inter_odu,odu:1,odu:0,100"));

        let mut buf = Vec::new();
        SignalingLedger::default().write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), "step,counter_class,source,destination,amount");
    }
}
