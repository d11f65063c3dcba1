//! The remote (edge or cloud) side of the loop.
//!
//! A remote node only ever sees stale measurements.  From the freshest uplink
//! packet, sent `a` ticks ago, it replays the buffer the vehicle was applying
//! to estimate the current state, predicts `D` more ticks ahead, and solves
//! for a sequence that is meant to start exactly `D` ticks from now.  Any
//! downlink delay up to `D` is thereby hidden.

use serde::Serialize;

use crate::controllers::{extend_with_onboard, Controller, Tier};
use crate::costs::CostModel;
use crate::dynamics::{predict, State};
use crate::error::{Error, Result};
use crate::network::{DownlinkPacket, UplinkPacket};

/// Per-node counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RemoteCounters {
    pub received: u64,
    /// Uplinks that arrived after a fresher one.
    pub stale_ignored: u64,
    /// Ticks skipped because `a + D > N`.
    pub skipped_beyond_horizon: u64,
    /// Ticks skipped because no uplink had arrived yet.
    pub skipped_no_information: u64,
    pub sent: u64,
}

/// State predictions made for one downlink packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub age: u64,
    /// Estimate of the state now.
    pub current: State,
    /// Estimate of the state at the activation tick.
    pub activation: State,
}

/// A compensating remote controller.
#[derive(Debug, Clone)]
pub struct RemoteNode<C> {
    depth: u64,
    cost: CostModel,
    controller: C,
    latest: Option<UplinkPacket>,
    counters: RemoteCounters,
    last_prediction: Option<Prediction>,
}

impl<C: Controller> RemoteNode<C> {
    /// `cost` supplies the model, horizon and on-board law used to predict
    /// and to pad warm starts.
    pub fn new(depth: u64, cost: CostModel, controller: C) -> Result<Self> {
        if depth == 0 || depth as usize > cost.horizon {
            return Err(Error::Config(format!(
                "prediction depth {depth} must lie in 1..={}",
                cost.horizon
            )));
        }
        Ok(Self {
            depth,
            cost,
            controller,
            latest: None,
            counters: RemoteCounters::default(),
            last_prediction: None,
        })
    }

    pub fn tier(&self) -> Tier {
        self.controller.tier()
    }

    pub fn depth(&self) -> u64 {
        self.depth
    }

    pub fn counters(&self) -> RemoteCounters {
        self.counters
    }

    pub fn latest(&self) -> Option<&UplinkPacket> {
        self.latest.as_ref()
    }

    pub fn last_prediction(&self) -> Option<Prediction> {
        self.last_prediction
    }

    pub fn controller(&self) -> &C {
        &self.controller
    }

    /// Age of the freshest packet at `now`.
    pub fn age(&self, now: u64) -> Option<u64> {
        self.latest.as_ref().map(|p| now.saturating_sub(p.sent_at))
    }

    /// Keeps `pkt` only if it is strictly fresher than what we hold.
    pub fn receive_uplink(&mut self, pkt: UplinkPacket, _now: u64) {
        self.counters.received += 1;
        match &self.latest {
            Some(held) if held.sent_at >= pkt.sent_at => self.counters.stale_ignored += 1,
            _ => self.latest = Some(pkt),
        }
    }

    /// Predicted `(x̂(now), x̂(now + D))` from the freshest packet, if usable.
    pub fn predict_states(&self, now: u64) -> Option<Prediction> {
        let pkt = self.latest.as_ref()?;
        let a = now.checked_sub(pkt.sent_at)?;
        let n = self.cost.horizon as u64;
        if a + self.depth > n {
            return None;
        }
        let (a_us, d_us) = (a as usize, self.depth as usize);
        let current = predict(&self.cost.model, &pkt.state, &pkt.buffer, a_us).ok()?;
        let activation = predict(&self.cost.model, &current, &pkt.buffer[a_us..], d_us).ok()?;
        Some(Prediction {
            age: a,
            current,
            activation,
        })
    }

    /// Runs the compensator for tick `now`.
    pub fn compensate(&mut self, now: u64) -> Option<DownlinkPacket> {
        let Some(pkt) = self.latest.as_ref() else {
            self.counters.skipped_no_information += 1;
            return None;
        };
        let Some(pred) = self.predict_states(now) else {
            self.counters.skipped_beyond_horizon += 1;
            return None;
        };
        let activation = now + self.depth;
        // Warm start from the plan the vehicle is following: the unused tail
        // of the uplinked buffer, padded with the on-board law.
        let used = (pred.age + self.depth) as usize;
        let warm = extend_with_onboard(&self.cost, &pred.activation, &pkt.buffer[used..]);
        let seq = self.controller.solve(&pred.activation, activation, Some(&warm));
        self.last_prediction = Some(pred);
        let tier = self.controller.tier();
        let out = DownlinkPacket::new(tier, now, activation, seq, self.cost.horizon).ok()?;
        self.counters.sent += 1;
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::onboard::{OnboardController, OnboardLaw};
    use crate::costs::{TaskSpec, TerminalHorizon};
    use crate::dynamics::{Bicycle, Input, PlantModel};

    fn setup(depth: u64) -> RemoteNode<OnboardController> {
        let cm = CostModel::new(
            Bicycle::default(),
            TaskSpec::default(),
            OnboardLaw::default(),
            25,
            TerminalHorizon::Fixed(10),
        );
        let ctrl = OnboardController {
            law: cm.law,
            model: cm.model,
            task: cm.task,
            horizon: 25,
        };
        RemoteNode::new(depth, cm, ctrl).unwrap()
    }

    fn packet(sent_at: u64) -> UplinkPacket {
        let buf: Vec<Input> = (0..25).map(|i| Input::new(0.01 * i as f64, 0.2)).collect();
        UplinkPacket::new(sent_at, State::new(1.0, 2.0, 0.1, 0.5), buf, 25).unwrap()
    }

    #[test]
    fn single_step_prediction() {
        let mut node = setup(1);
        let pkt = packet(3);
        node.receive_uplink(pkt.clone(), 3);
        let out = node.compensate(3).unwrap();
        let expect = Bicycle::default().nominal_step(&pkt.state, &pkt.buffer[0]);
        assert_eq!(node.last_prediction().unwrap().activation, expect);
        assert_eq!(out.activation_tick - out.computed_at, 1);
        let law = OnboardLaw::default();
        assert_eq!(out.sequence, law.solve(&Bicycle::default(), &expect, &TaskSpec::default(), 25));
    }

    #[test]
    fn freshness_is_monotone() {
        let mut node = setup(4);
        node.receive_uplink(packet(4), 8);
        node.receive_uplink(packet(7), 8);
        assert_eq!(node.latest().unwrap().sent_at, 7);
        node.receive_uplink(packet(5), 9);
        assert_eq!(node.latest().unwrap().sent_at, 7);
        assert_eq!(node.counters().stale_ignored, 1);
    }

    #[test]
    fn skips_beyond_horizon_and_without_information() {
        let mut node = setup(4);
        assert!(node.compensate(0).is_none());
        assert_eq!(node.counters().skipped_no_information, 1);
        node.receive_uplink(packet(0), 0);
        // a = N − D is the last usable age.
        assert!(node.compensate(21).is_some());
        assert!(node.compensate(22).is_none());
        assert_eq!(node.counters().skipped_beyond_horizon, 1);
    }

    #[test]
    fn depth_bounds() {
        let cm = CostModel::new(Bicycle::default(), TaskSpec::default(), OnboardLaw::default(), 25, TerminalHorizon::Fixed(1));
        let ctrl = OnboardController { law: cm.law, model: cm.model, task: cm.task, horizon: 25 };
        assert!(RemoteNode::new(0, cm.clone(), ctrl.clone()).is_err());
        assert!(RemoteNode::new(26, cm, ctrl).is_err());
    }
}
