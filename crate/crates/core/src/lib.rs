//! Multi-antenna OTFS link simulation: geometric time-variant channel,
//! OTFS/OFDM modems, matched-filter beamforming and joint message-passing
//! detection with maximum ratio combining.

// `!(x >= 0.0)` style guards deliberately reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beamformer;
pub mod channel;
pub mod detector;
pub mod error;
pub mod modem;

pub use error::{Error, Result};
pub mod sim;
