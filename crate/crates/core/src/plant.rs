//! The on-board side: downlink gating, the carried-over buffer and selection.
//!
//! Every tick the vehicle ranks up to four candidate sequences by the
//! finite-horizon cost from its current state:
//!
//! 1. the cloud sequence meant for this tick, if it arrived in time,
//! 2. the edge sequence meant for this tick, if it arrived in time,
//! 3. the previous buffer shifted by one and padded with the on-board law,
//! 4. a fresh on-board sequence.
//!
//! The cheapest becomes the new buffer and its first input is applied.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::controllers::Tier;
use crate::costs::CostModel;
use crate::dynamics::{predict, Input, State};
use crate::error::{Error, Result};
use crate::network::{DownlinkPacket, UplinkPacket};

/// Which candidate a buffer came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Cloud,
    Edge,
    /// The shifted previous buffer (`B⁺`).
    Carryover,
    Onboard,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::Cloud, Source::Edge, Source::Carryover, Source::Onboard];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Cloud => "cloud",
            Source::Edge => "edge",
            Source::Carryover => "buffer",
            Source::Onboard => "onboard",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }

    pub fn index(self) -> usize {
        match self {
            Source::Cloud => 0,
            Source::Edge => 1,
            Source::Carryover => 2,
            Source::Onboard => 3,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The stored sequence, with the tier that computed each element.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferState {
    pub sequence: Vec<Input>,
    pub origins: Vec<Tier>,
    pub source: Source,
    pub selected_at: u64,
}

/// Holds early downlink packets until their activation tick.
#[derive(Debug, Clone)]
pub struct DownlinkGate {
    tier: Tier,
    pending: BTreeMap<u64, DownlinkPacket>,
    outdated: u64,
}

impl DownlinkGate {
    pub fn new(tier: Tier) -> Self {
        Self {
            tier,
            pending: BTreeMap::new(),
            outdated: 0,
        }
    }

    /// Packets dropped because they arrived after their activation tick.
    pub fn outdated(&self) -> u64 {
        self.outdated
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Files a packet delivered at `now`.  Late packets are dropped; two
    /// packets for the same activation tick indicate a broken link model.
    pub fn accept(&mut self, pkt: DownlinkPacket, now: u64) -> Result<()> {
        if pkt.activation_tick < now {
            self.outdated += 1;
            return Ok(());
        }
        let tick = pkt.activation_tick;
        if self.pending.insert(tick, pkt).is_some() {
            return Err(Error::DuplicateActivation {
                tier: self.tier.as_str(),
                tick,
            });
        }
        Ok(())
    }

    /// The sequence activating at `now`, if it arrived in time (`γ = 1`).
    pub fn take(&mut self, now: u64) -> Option<Vec<Input>> {
        // Anything older can no longer be used.
        let keep = self.pending.split_off(&now);
        self.pending = keep;
        self.pending.remove(&now).map(|p| p.sequence)
    }
}

/// `B⁺`: the previous buffer shifted by one, padded with the on-board input
/// at the state reached after the `N − 1` remaining inputs.
pub fn auxiliary_buffer(cost: &CostModel, prev: &[Input], x: &State) -> Result<Vec<Input>> {
    let n = cost.horizon;
    if prev.len() != n {
        return Err(Error::SequenceLength {
            expected: n,
            got: prev.len(),
        });
    }
    let mut out = prev[1..].to_vec();
    let end = predict(&cost.model, x, &out, n - 1)?;
    out.push(cost.law.input(&end, &cost.task));
    Ok(out)
}

/// Candidates available at one tick.
#[derive(Debug, Clone, Default)]
pub struct CandidateSet {
    pub cloud: Option<Vec<Input>>,
    pub edge: Option<Vec<Input>>,
    pub carryover: Option<Vec<Input>>,
    pub onboard: Vec<Input>,
}

impl CandidateSet {
    /// In tie-break priority order: cloud, edge, carryover, on-board.
    pub fn iter(&self) -> impl Iterator<Item = (Source, &[Input])> {
        [
            (Source::Cloud, self.cloud.as_deref()),
            (Source::Edge, self.edge.as_deref()),
            (Source::Carryover, self.carryover.as_deref()),
            (Source::Onboard, Some(self.onboard.as_slice())),
        ]
        .into_iter()
        .filter_map(|(s, v)| v.map(|v| (s, v)))
    }

    pub fn get(&self, source: Source) -> Option<&[Input]> {
        self.iter().find(|(s, _)| *s == source).map(|(_, v)| v)
    }
}

/// Cost of every candidate; `None` when the candidate was absent.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CandidateCosts {
    pub cloud: Option<f64>,
    pub edge: Option<f64>,
    pub carryover: Option<f64>,
    pub onboard: Option<f64>,
}

impl CandidateCosts {
    pub fn get(&self, s: Source) -> Option<f64> {
        match s {
            Source::Cloud => self.cloud,
            Source::Edge => self.edge,
            Source::Carryover => self.carryover,
            Source::Onboard => self.onboard,
        }
    }

    fn set(&mut self, s: Source, v: f64) {
        match s {
            Source::Cloud => self.cloud = Some(v),
            Source::Edge => self.edge = Some(v),
            Source::Carryover => self.carryover = Some(v),
            Source::Onboard => self.onboard = Some(v),
        }
    }
}

/// Outcome of the argmin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub source: Source,
    pub cost: f64,
    pub costs: CandidateCosts,
    /// Candidates dropped for a non-finite cost.
    pub excluded: u32,
}

/// Picks the cheapest candidate; exact ties go to the earlier one in
/// cloud > edge > carryover > on-board order.
pub fn select(x: &State, candidates: &CandidateSet, cost: &CostModel, tick: u64) -> Result<Selection> {
    let mut costs = CandidateCosts::default();
    let mut best: Option<(Source, f64)> = None;
    let mut excluded = 0;
    for (source, seq) in candidates.iter() {
        let v = cost.finite_horizon_cost(x, seq, tick)?;
        costs.set(source, v);
        if !v.is_finite() {
            excluded += 1;
            continue;
        }
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((source, v));
        }
    }
    let (source, v) = best.unwrap_or((Source::Onboard, f64::NAN));
    Ok(Selection {
        source,
        cost: v,
        costs,
        excluded,
    })
}

/// What the vehicle did at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub gamma_cloud: bool,
    pub gamma_edge: bool,
    pub selection: Selection,
    pub input: Input,
}

/// Counters kept by the vehicle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PlantCounters {
    pub cloud_on_time: u64,
    pub edge_on_time: u64,
    pub excluded_candidates: u64,
}

/// The vehicle-side controller.
#[derive(Debug, Clone)]
pub struct PlantNode {
    cost: CostModel,
    cloud_gate: DownlinkGate,
    edge_gate: DownlinkGate,
    buffer: Option<BufferState>,
    counters: PlantCounters,
}

impl PlantNode {
    pub fn new(cost: CostModel) -> Self {
        Self {
            cost,
            cloud_gate: DownlinkGate::new(Tier::Cloud),
            edge_gate: DownlinkGate::new(Tier::Edge),
            buffer: None,
            counters: PlantCounters::default(),
        }
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    pub fn buffer(&self) -> Option<&BufferState> {
        self.buffer.as_ref()
    }

    pub fn counters(&self) -> PlantCounters {
        self.counters
    }

    pub fn outdated(&self) -> (u64, u64) {
        (self.cloud_gate.outdated(), self.edge_gate.outdated())
    }

    pub fn accept_downlink(&mut self, pkt: DownlinkPacket, now: u64) -> Result<()> {
        match pkt.tier {
            Tier::Cloud => self.cloud_gate.accept(pkt, now),
            Tier::Edge => self.edge_gate.accept(pkt, now),
            Tier::Onboard => Err(Error::Config("on-board sequences are not sent over links".into())),
        }
    }

    /// Gates, builds the candidates, selects and stores the new buffer.
    pub fn decide(&mut self, x: &State, now: u64) -> Result<Decision> {
        let cloud = self.cloud_gate.take(now);
        let edge = self.edge_gate.take(now);
        let (gamma_cloud, gamma_edge) = (cloud.is_some(), edge.is_some());
        self.counters.cloud_on_time += u64::from(gamma_cloud);
        self.counters.edge_on_time += u64::from(gamma_edge);

        let onboard = self.cost.law.solve(&self.cost.model, x, &self.cost.task, self.cost.horizon);
        let carryover = match &self.buffer {
            Some(b) => Some(auxiliary_buffer(&self.cost, &b.sequence, x)?),
            None => None,
        };
        let candidates = CandidateSet {
            cloud,
            edge,
            carryover,
            onboard,
        };
        let selection = select(x, &candidates, &self.cost, now)?;
        self.counters.excluded_candidates += u64::from(selection.excluded);

        let n = self.cost.horizon;
        let origins = match selection.source {
            Source::Cloud => vec![Tier::Cloud; n],
            Source::Edge => vec![Tier::Edge; n],
            Source::Onboard => vec![Tier::Onboard; n],
            Source::Carryover => {
                let prev = self.buffer.as_ref().expect("carryover implies a previous buffer");
                let mut o = prev.origins[1..].to_vec();
                o.push(Tier::Onboard);
                o
            }
        };
        let CandidateSet {
            cloud,
            edge,
            carryover,
            onboard,
        } = candidates;
        let sequence = match selection.source {
            Source::Cloud => cloud,
            Source::Edge => edge,
            Source::Carryover => carryover,
            Source::Onboard => Some(onboard),
        }
        .expect("selected candidate is present");
        let input = sequence[0];
        self.buffer = Some(BufferState {
            sequence,
            origins,
            source: selection.source,
            selected_at: now,
        });
        Ok(Decision {
            gamma_cloud,
            gamma_edge,
            selection,
            input,
        })
    }

    /// The uplink payload `(x(now), B(now))`.
    pub fn emit_uplink(&self, x: &State, now: u64) -> Option<UplinkPacket> {
        let b = self.buffer.as_ref()?;
        Some(UplinkPacket {
            sent_at: now,
            state: *x,
            buffer: b.sequence.clone(),
        })
    }
}
