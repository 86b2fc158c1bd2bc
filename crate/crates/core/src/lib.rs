//! Over-the-air computation with balanced numerals.
//!
//! Edge devices encode each gradient entry as a balanced base-`β` numeral
//! sequence, activate one OFDM cell per non-zero numeral, and the server
//! recovers per-symbol vote counts from the superposed energy to rebuild the
//! average gradient.

pub mod analysis;
pub mod channel;
pub mod codec;
pub mod config;
pub mod detector;
pub mod error;
pub mod feel;
pub mod link;
pub mod output;
pub mod resource;
pub mod rng;
pub mod runner;
pub mod stats;

pub use codec::{decode, encode, BalancedConfig, NumeralSequence};
pub use error::{Error, Result};
pub use link::{oac_round, AggregationMode, LinkConfig, LinkOutput};
