//! Lossy delayed links between the vehicle and the remote tiers.
//!
//! Loss is not a separate event: a packet is "lost" when its delay exceeds
//! the time it stays useful, exactly as an outdated packet would be.


use crate::controllers::Tier;
use crate::dynamics::{Input, State};
use crate::error::{Error, Result};

mod aoi;
mod channel;
mod distribution;

pub use aoi::age_of_information;
pub use channel::{Channel, ChannelStats, Delivery};
pub use distribution::{standard_normal_quantile, DelayDistribution, DelayFamily};

/// Vehicle → remote: the measured state and the buffer at `sent_at`.
#[derive(Debug, Clone, PartialEq)]
pub struct UplinkPacket {
    pub sent_at: u64,
    pub state: State,
    pub buffer: Vec<Input>,
}

impl UplinkPacket {
    pub fn new(sent_at: u64, state: State, buffer: Vec<Input>, horizon: usize) -> Result<Self> {
        if buffer.len() != horizon {
            return Err(Error::SequenceLength {
                expected: horizon,
                got: buffer.len(),
            });
        }
        Ok(Self {
            sent_at,
            state,
            buffer,
        })
    }
}

/// Remote → vehicle: a sequence meant to start at `activation_tick`.
#[derive(Debug, Clone, PartialEq)]
pub struct DownlinkPacket {
    pub tier: Tier,
    pub computed_at: u64,
    pub activation_tick: u64,
    pub sequence: Vec<Input>,
}

impl DownlinkPacket {
    pub fn new(
        tier: Tier,
        computed_at: u64,
        activation_tick: u64,
        sequence: Vec<Input>,
        horizon: usize,
    ) -> Result<Self> {
        if activation_tick <= computed_at {
            return Err(Error::Config(format!(
                "activation tick {activation_tick} must follow computation tick {computed_at}"
            )));
        }
        if sequence.len() != horizon {
            return Err(Error::SequenceLength {
                expected: horizon,
                got: sequence.len(),
            });
        }
        Ok(Self {
            tier,
            computed_at,
            activation_tick,
            sequence,
        })
    }
}
