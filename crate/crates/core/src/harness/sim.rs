//! The deterministic tick loop.
//!
//! Each tick runs, in order:
//!
//! 1. deliver every packet due on the four links;
//! 2. the cloud node, then the edge node, compensate and send a downlink;
//! 3. the vehicle gates downlinks, selects a buffer, applies its first input
//!    and the plant steps (with disturbance, if enabled);
//! 4. the vehicle sends `(x(k), B(k))` on both uplinks.
//!
//! Since remote nodes act before the vehicle, a packet sent on an ideal link
//! at tick `k` is first seen remotely at tick `k + 1`.

use nalgebra::Vector4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{Mode, ScenarioConfig};
use crate::controllers::cloud::CloudController;
use crate::controllers::edge::EdgeController;
use crate::controllers::{extend_with_onboard, Tier};
use crate::costs::{stage_cost, CostModel, TerminalHorizon};
use crate::dynamics::{DisturbanceModel, Input, PlantModel, State};
use crate::error::{Error, Result};
use crate::network::{Channel, ChannelStats, DelayDistribution, DownlinkPacket, UplinkPacket};
use crate::plant::{CandidateCosts, PlantCounters, PlantNode, Source};
use crate::remote::{RemoteCounters, RemoteNode};
use crate::stability::{check_decrease, estimate_constants, DecreaseReport, LyapunovSample, SamplingRegion};
use crate::stability::DECREASE_TOLERANCE;

/// Random stream identifiers; every link and the disturbance get their own.
pub mod streams {
    pub const CLOUD_UPLINK: u64 = 1;
    pub const CLOUD_DOWNLINK: u64 = 2;
    pub const EDGE_UPLINK: u64 = 3;
    pub const EDGE_DOWNLINK: u64 = 4;
    pub const DISTURBANCE: u64 = 5;
    pub const ESTIMATION: u64 = 6;
}

/// Everything logged for one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub tick: u64,
    pub state: State,
    pub input: Input,
    pub source: Source,
    /// Tier that computed the applied input.
    pub origin: Tier,
    pub gamma_cloud: bool,
    pub gamma_edge: bool,
    pub costs: CandidateCosts,
    /// `V_N(x(k), B(k))`.
    pub value: f64,
    /// `C(x(k), u(k))`.
    pub stage_cost: f64,
    /// `V_N(k+1) − V_N(k) + C(x(k), u(k))`; absent on the last tick.
    pub residual: Option<f64>,
    pub obstacle_free: bool,
    pub buffer: Vec<Input>,
}

/// Fractions of ticks per selection source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SourceFractions {
    pub cloud: f64,
    pub edge: f64,
    pub buffer: f64,
    pub onboard: f64,
}

impl SourceFractions {
    pub fn from_counts(counts: [u64; 4]) -> Self {
        let total: u64 = counts.iter().sum();
        let f = |i: usize| if total == 0 { 0.0 } else { counts[i] as f64 / total as f64 };
        Self {
            cloud: f(Source::Cloud.index()),
            edge: f(Source::Edge.index()),
            buffer: f(Source::Carryover.index()),
            onboard: f(Source::Onboard.index()),
        }
    }

    pub fn get(&self, s: Source) -> f64 {
        match s {
            Source::Cloud => self.cloud,
            Source::Edge => self.edge,
            Source::Carryover => self.buffer,
            Source::Onboard => self.onboard,
        }
    }

    pub fn sum(&self) -> f64 {
        self.cloud + self.edge + self.buffer + self.onboard
    }
}

/// Link and node counters of one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RunCounters {
    pub cloud_node: RemoteCounters,
    pub edge_node: RemoteCounters,
    pub plant: PlantCounters,
    pub cloud_uplink: ChannelStats,
    pub cloud_downlink: ChannelStats,
    pub edge_uplink: ChannelStats,
    pub edge_downlink: ChannelStats,
    pub cloud_outdated: u64,
    pub edge_outdated: u64,
    /// Cloud solves that fell back to their reference sequence.
    pub cloud_fallbacks: u64,
}

/// Summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub ticks: u64,
    /// Time average of the stage cost.
    pub average_cost: f64,
    pub sources: SourceFractions,
    /// Fraction of ticks whose applied input was computed by the cloud.
    pub cloud_origin: f64,
    pub counters: RunCounters,
    pub lyapunov: DecreaseReport,
    pub final_distance: f64,
    pub collision_ticks: u64,
}

/// Trace and metrics of one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub config_hash: String,
    pub trace: Vec<StepRecord>,
    pub metrics: RunMetrics,
}

/// A validated configuration with everything that does not depend on the seed.
#[derive(Debug, Clone)]
pub struct Scenario {
    cfg: ScenarioConfig,
    hash: String,
    cost: CostModel,
    cloud_law: Option<DelayDistribution>,
    edge_law: Option<DelayDistribution>,
    disturbance: DisturbanceModel<4>,
    eta: f64,
}

impl Scenario {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let terminal = match cfg.run.terminal_steps {
            Some(h) => TerminalHorizon::Fixed(h),
            None => TerminalHorizon::UntilTick(cfg.run.ticks + cfg.run.horizon as u64),
        };
        let cost = CostModel::new(cfg.model, cfg.task, cfg.onboard, cfg.run.horizon, terminal);
        let cloud_law = if cfg.cloud.enabled {
            cfg.cloud.link.resolve(cfg.cloud.depth)?
        } else {
            None
        };
        let edge_law = if cfg.edge.enabled {
            cfg.edge.link.resolve(cfg.edge.depth)?
        } else {
            None
        };
        let disturbance = if cfg.disturbance.enabled {
            DisturbanceModel::uniform(Vector4::from(cfg.disturbance.bounds))?
        } else {
            DisturbanceModel::none()
        };
        let eta = if disturbance.is_active() {
            estimate_eta(&cfg, &cost, &disturbance)?
        } else {
            0.0
        };
        let hash = cfg.hash();
        Ok(Self {
            cfg,
            hash,
            cost,
            cloud_law,
            edge_law,
            disturbance,
            eta,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    /// Decrease slack `η(ε)` used by the Lyapunov report.
    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn cloud_law(&self) -> Option<DelayDistribution> {
        self.cloud_law
    }

    pub fn edge_law(&self) -> Option<DelayDistribution> {
        self.edge_law
    }

    /// Simulates one run.
    pub fn run(&self, seed: u64) -> Result<RunOutput> {
        let mut dist_rng = ChaCha8Rng::seed_from_u64(seed);
        dist_rng.set_stream(streams::DISTURBANCE);
        let mut trace = match self.cfg.run.mode {
            Mode::Proposed => self.run_proposed(seed, &mut dist_rng)?,
            Mode::IdealCloud => self.run_ideal_cloud(&mut dist_rng)?,
            Mode::OnboardLaw => self.run_onboard(&mut dist_rng)?,
        };
        let (records, counters, final_state) = (&mut trace.0, trace.1, trace.2);
        for k in 0..records.len().saturating_sub(1) {
            let r = records[k + 1].value - records[k].value + records[k].stage_cost;
            records[k].residual = Some(r);
        }
        let metrics = self.summarise(records, counters, &final_state)?;
        Ok(RunOutput {
            seed,
            config_hash: self.hash.clone(),
            trace: std::mem::take(records),
            metrics,
        })
    }

    fn advance(&self, x: &State, u: &Input, rng: &mut ChaCha8Rng) -> State {
        if self.disturbance.is_active() {
            let w = self.disturbance.sample(rng);
            self.cost.model.step(x, u, &w)
        } else {
            self.cost.model.nominal_step(x, u)
        }
    }

    fn record(&self, tick: u64, x: &State, input: Input, source: Source, origin: Tier) -> StepRecord {
        StepRecord {
            tick,
            state: *x,
            input,
            source,
            origin,
            gamma_cloud: false,
            gamma_edge: false,
            costs: CandidateCosts::default(),
            value: f64::NAN,
            stage_cost: stage_cost(x, &input, &self.cost.task),
            residual: None,
            obstacle_free: !self.cost.task.collides(x),
            buffer: Vec::new(),
        }
    }

    fn run_proposed(&self, seed: u64, rng: &mut ChaCha8Rng) -> Result<(Vec<StepRecord>, RunCounters, State)> {
        let cfg = &self.cfg;
        fn link<P>(law: Option<DelayDistribution>, seed: u64, stream: u64) -> Channel<P> {
            law.map_or_else(Channel::disabled, |l| Channel::new(l, seed, stream))
        }
        let mut cloud_up: Channel<UplinkPacket> = link(self.cloud_law, seed, streams::CLOUD_UPLINK);
        let mut cloud_down: Channel<DownlinkPacket> = link(self.cloud_law, seed, streams::CLOUD_DOWNLINK);
        let mut edge_up: Channel<UplinkPacket> = link(self.edge_law, seed, streams::EDGE_UPLINK);
        let mut edge_down: Channel<DownlinkPacket> = link(self.edge_law, seed, streams::EDGE_DOWNLINK);

        let mut cloud = match self.cloud_law {
            Some(_) => Some(RemoteNode::new(
                cfg.cloud.depth,
                self.cost.clone(),
                CloudController::new(self.cost.clone(), cfg.cloud.solver),
            )?),
            None => None,
        };
        let mut edge = match self.edge_law {
            Some(_) => Some(RemoteNode::new(
                cfg.edge.depth,
                self.cost.clone(),
                EdgeController::new(self.cost.clone(), cfg.edge.solver),
            )?),
            None => None,
        };
        let mut plant = PlantNode::new(self.cost.clone());
        let mut x = State::from(cfg.run.initial_state);
        let mut records = Vec::with_capacity(cfg.run.ticks as usize);
        let mut fallbacks = 0;

        for k in 0..cfg.run.ticks {
            // (1) deliveries
            if let Some(node) = cloud.as_mut() {
                for d in cloud_up.deliver(k) {
                    node.receive_uplink(d.payload, k);
                }
            }
            if let Some(node) = edge.as_mut() {
                for d in edge_up.deliver(k) {
                    node.receive_uplink(d.payload, k);
                }
            }
            for d in cloud_down.deliver(k).into_iter().chain(edge_down.deliver(k)) {
                plant.accept_downlink(d.payload, k)?;
            }
            // (2) remote compensation
            if let Some(node) = cloud.as_mut() {
                if let Some(p) = node.compensate(k) {
                    fallbacks += u64::from(node.controller().last_report().fell_back);
                    cloud_down.send(k, p);
                }
            }
            if let Some(node) = edge.as_mut() {
                if let Some(p) = node.compensate(k) {
                    edge_down.send(k, p);
                }
            }
            // (3) selection and plant step
            let decision = plant.decide(&x, k)?;
            let buffer = plant.buffer().expect("buffer after decide");
            let mut rec = self.record(k, &x, decision.input, decision.selection.source, buffer.origins[0]);
            rec.gamma_cloud = decision.gamma_cloud;
            rec.gamma_edge = decision.gamma_edge;
            rec.costs = decision.selection.costs;
            rec.value = decision.selection.cost;
            rec.buffer = buffer.sequence.clone();
            records.push(rec);
            let next = self.advance(&x, &decision.input, rng);
            // (4) uplinks carry the state measured at this tick
            if let Some(pkt) = plant.emit_uplink(&x, k) {
                if cloud.is_some() {
                    cloud_up.send(k, pkt.clone());
                }
                if edge.is_some() {
                    edge_up.send(k, pkt);
                }
            }
            x = next;
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteState);
            }
        }

        let (cloud_outdated, edge_outdated) = plant.outdated();
        let counters = RunCounters {
            cloud_node: cloud.as_ref().map(|n| n.counters()).unwrap_or_default(),
            edge_node: edge.as_ref().map(|n| n.counters()).unwrap_or_default(),
            plant: plant.counters(),
            cloud_uplink: cloud_up.stats(),
            cloud_downlink: cloud_down.stats(),
            edge_uplink: edge_up.stats(),
            edge_downlink: edge_down.stats(),
            cloud_outdated,
            edge_outdated,
            cloud_fallbacks: fallbacks,
        };
        Ok((records, counters, x))
    }

    fn run_ideal_cloud(&self, rng: &mut ChaCha8Rng) -> Result<(Vec<StepRecord>, RunCounters, State)> {
        let cfg = &self.cfg;
        let mut solver = CloudController::new(self.cost.clone(), cfg.cloud.solver);
        let mut x = State::from(cfg.run.initial_state);
        let mut records = Vec::with_capacity(cfg.run.ticks as usize);
        let mut counters = RunCounters::default();
        let mut prev: Option<Vec<Input>> = None;
        for k in 0..cfg.run.ticks {
            // Receding horizon: warm start from the previous solution, shifted.
            let warm = prev.as_ref().map(|p| extend_with_onboard(&self.cost, &x, &p[1..]));
            let seq = solver.optimize(&x, k, warm.as_deref());
            counters.cloud_fallbacks += u64::from(solver.last_report().fell_back);
            let mut rec = self.record(k, &x, seq[0], Source::Cloud, Tier::Cloud);
            rec.value = self.cost.finite_horizon_cost(&x, &seq, k)?;
            rec.costs.cloud = Some(rec.value);
            rec.buffer = seq.clone();
            records.push(rec);
            x = self.advance(&x, &seq[0], rng);
            prev = Some(seq);
        }
        Ok((records, counters, x))
    }

    fn run_onboard(&self, rng: &mut ChaCha8Rng) -> Result<(Vec<StepRecord>, RunCounters, State)> {
        let cfg = &self.cfg;
        let c = &self.cost;
        let mut x = State::from(cfg.run.initial_state);
        let mut records = Vec::with_capacity(cfg.run.ticks as usize);
        for k in 0..cfg.run.ticks {
            let seq = c.law.solve(&c.model, &x, &c.task, c.horizon);
            let mut rec = self.record(k, &x, seq[0], Source::Onboard, Tier::Onboard);
            rec.value = c.finite_horizon_cost(&x, &seq, k)?;
            rec.costs.onboard = Some(rec.value);
            rec.buffer = seq.clone();
            records.push(rec);
            x = self.advance(&x, &seq[0], rng);
        }
        Ok((records, RunCounters::default(), x))
    }

    fn summarise(&self, trace: &[StepRecord], counters: RunCounters, final_state: &State) -> Result<RunMetrics> {
        let n = trace.len() as f64;
        let average_cost = trace.iter().map(|r| r.stage_cost).sum::<f64>() / n;
        let mut counts = [0u64; 4];
        for r in trace {
            counts[r.source.index()] += 1;
        }
        let cloud_origin = trace.iter().filter(|r| r.origin == Tier::Cloud).count() as f64 / n;
        let samples = lyapunov_samples(trace);
        let lyapunov = if samples.len() >= 2 {
            check_decrease(&samples, self.eta, DECREASE_TOLERANCE)?
        } else {
            DecreaseReport {
                ticks_checked: 0,
                eta: self.eta,
                tolerance: DECREASE_TOLERANCE,
                violations: Vec::new(),
                obstacle_violations: Vec::new(),
                max_residual: f64::NEG_INFINITY,
                monotone: true,
            }
        };
        let goal = self.cost.task.goal;
        Ok(RunMetrics {
            ticks: trace.len() as u64,
            average_cost,
            sources: SourceFractions::from_counts(counts),
            cloud_origin,
            counters,
            lyapunov,
            final_distance: (final_state[0] - goal[0]).hypot(final_state[1] - goal[1]),
            collision_ticks: trace.iter().filter(|r| !r.obstacle_free).count() as u64,
        })
    }
}

/// Selection fractions recomputed from a trace.
pub fn fractions_from_trace(trace: &[StepRecord]) -> (SourceFractions, f64) {
    let mut counts = [0u64; 4];
    let mut cloud = 0u64;
    for r in trace {
        counts[r.source.index()] += 1;
        cloud += u64::from(r.origin == Tier::Cloud);
    }
    (SourceFractions::from_counts(counts), cloud as f64 / trace.len().max(1) as f64)
}

/// The per-tick values checked by the Lyapunov monitor.
pub fn lyapunov_samples(trace: &[StepRecord]) -> Vec<LyapunovSample> {
    trace
        .iter()
        .map(|r| LyapunovSample {
            value: r.value,
            stage_cost: r.stage_cost,
            obstacle_free: r.obstacle_free,
        })
        .collect()
}

/// Samples the assumption constants over a box around the task and returns
/// `η(ε)`.
fn estimate_eta(cfg: &ScenarioConfig, cost: &CostModel, dist: &DisturbanceModel<4>) -> Result<f64> {
    let s = cfg.run.initial_state;
    let g = cfg.task.goal;
    let pad = 5.0;
    let region = SamplingRegion {
        state_lo: State::new(s[0].min(g[0]) - pad, s[1].min(g[1]) - pad, -std::f64::consts::PI, -3.0),
        state_hi: State::new(s[0].max(g[0]) + pad, s[1].max(g[1]) + pad, std::f64::consts::PI, 3.0),
        input_lo: Input::new(-cfg.cloud.solver.max_slip, -3.0),
        input_hi: Input::new(cfg.cloud.solver.max_slip, 3.0),
    };
    let task = cost.task;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    rng.set_stream(streams::ESTIMATION);
    let est = estimate_constants(
        &cost.model,
        |x: &State, u: &Input| (!task.collides(x)).then(|| stage_cost(x, u, &task)),
        &dist.bounds(),
        &region,
        20_000,
        cfg.run.horizon,
        &mut rng,
    )?;
    Ok(est.eta)
}

/// Runs one scenario with `seed`.
pub fn run_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<RunOutput> {
    Scenario::new(cfg.clone())?.run(seed)
}
