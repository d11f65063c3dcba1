//! Discrete-time simulator for multi-tier (on-board / edge / cloud) control
//! over lossy, delayed links.
//!
//! A vehicle keeps a buffer of future inputs. Every tick it compares, by a
//! finite-horizon cost, the sequences that arrived in time from remote
//! controllers, a fresh on-board sequence and its own shifted buffer, and
//! applies the first input of the cheapest one. Remote controllers predict
//! ahead to hide the link delay.
//!
//! Start with [`harness::sim::run_scenario`], or read the guide in `book/`.

pub mod controllers;
pub mod costs;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod network;
pub mod plant;
pub mod remote;
pub mod stability;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/plant-model.md")]
    mod plant_model {}
    #[doc = include_str!("../../../book/src/costs.md")]
    mod costs {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/compensation.md")]
    mod compensation {}
    #[doc = include_str!("../../../book/src/selection.md")]
    mod selection {}
    #[doc = include_str!("../../../book/src/stability.md")]
    mod stability {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
