//! Proactive caching of time-sensitive content under a fluctuating channel.
//!
//! Content items arrive in batches with a lifetime in slots. The user opens
//! the app at random times and must find every live item cached; items can be
//! downloaded earlier, while the channel is cheap, into a finite cache.

pub mod bounds;
pub mod channel;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod fdm;
pub mod mdp;
pub mod multiset;
pub mod policy;
pub mod rollout;
pub mod seed;

pub use error::{Error, Result};
