use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::DelayDistribution;

/// A packet handed out by [`Channel::deliver`].
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery<P> {
    pub payload: P,
    pub sent_at: u64,
    pub delay: u64,
}

/// Per-link counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ChannelStats {
    pub sent: u64,
    pub delivered: u64,
    /// Packets offered to a disabled link.
    pub dropped: u64,
}

/// One direction of a link: every packet gets an independent delay draw and
/// becomes deliverable `delay` ticks after it was sent.
#[derive(Debug, Clone)]
pub struct Channel<P> {
    law: Option<DelayDistribution>,
    rng: ChaCha8Rng,
    // Keyed by (arrival tick, send order) so delivery order is deterministic.
    in_flight: BTreeMap<(u64, u64), (u64, u64, P)>,
    next_id: u64,
    stats: ChannelStats,
}

impl<P> Channel<P> {
    /// A link drawing delays from `law`, with its own random stream.
    pub fn new(law: DelayDistribution, seed: u64, stream: u64) -> Self {
        Self::build(Some(law), seed, stream)
    }

    /// A link that never delivers anything.
    pub fn disabled() -> Self {
        Self::build(None, 0, 0)
    }

    fn build(law: Option<DelayDistribution>, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            law,
            rng,
            in_flight: BTreeMap::new(),
            next_id: 0,
            stats: ChannelStats::default(),
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.law.is_some()
    }

    pub fn stats(&self) -> ChannelStats {
        self.stats
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    /// Sends `payload` at tick `now`; returns the sampled delay, or `None`
    /// on a disabled link.
    pub fn send(&mut self, now: u64, payload: P) -> Option<u64> {
        let Some(law) = self.law else {
            self.stats.dropped += 1;
            return None;
        };
        let delay = law.sample_delay(&mut self.rng);
        let id = self.next_id;
        self.next_id += 1;
        self.stats.sent += 1;
        self.in_flight
            .insert((now.saturating_add(delay), id), (now, delay, payload));
        Some(delay)
    }

    /// All packets due at or before `now`, in arrival order.
    pub fn deliver(&mut self, now: u64) -> Vec<Delivery<P>> {
        let later = self.in_flight.split_off(&(now.saturating_add(1), 0));
        let due = std::mem::replace(&mut self.in_flight, later);
        self.stats.delivered += due.len() as u64;
        due.into_values()
            .map(|(sent_at, delay, payload)| Delivery {
                payload,
                sent_at,
                delay,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn never_early_never_twice() {
        let law = DelayDistribution::LogNormal { mu: 1.0, sigma: 1.0 };
        let mut ch = Channel::new(law, 5, 1);
        let mut delays = Vec::new();
        let mut seen = Vec::new();
        for now in 0..2000u64 {
            for d in ch.deliver(now) {
                assert!(now >= d.sent_at + d.delay);
                assert_eq!(now, d.sent_at + d.delay);
                seen.push(d.payload);
            }
            if now < 1000 {
                delays.push(ch.send(now, now).unwrap());
            }
        }
        let mut sorted = seen.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), seen.len());
        let expected = delays.iter().enumerate().filter(|(s, d)| *s as u64 + **d < 2000).count();
        assert_eq!(seen.len(), expected);
    }

    #[test]
    fn zero_delay_round_trip_is_exact() {
        let mut ch = Channel::new(DelayDistribution::Degenerate { ticks: 0.0 }, 0, 0);
        let payload = vec![0.1f64, -3.5e-300, f64::MIN_POSITIVE];
        ch.send(7, payload.clone());
        let got = ch.deliver(7);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].payload, payload);
        assert_eq!(got[0].delay, 0);
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        let law = DelayDistribution::Exponential { rate: 0.3 };
        let mut a = Channel::new(law, 9, 1);
        let mut b = Channel::new(law, 9, 2);
        let mut a2 = Channel::new(law, 9, 1);
        let da: Vec<_> = (0..50).map(|t| a.send(t, ()).unwrap()).collect();
        let db: Vec<_> = (0..50).map(|t| b.send(t, ()).unwrap()).collect();
        let da2: Vec<_> = (0..50).map(|t| a2.send(t, ()).unwrap()).collect();
        assert_eq!(da, da2);
        assert_ne!(da, db);
    }

    #[test]
    fn disabled_drops() {
        let mut ch: Channel<u8> = Channel::disabled();
        assert_eq!(ch.send(0, 1), None);
        assert!(ch.deliver(100).is_empty());
        assert_eq!(ch.stats().dropped, 1);
    }
}
