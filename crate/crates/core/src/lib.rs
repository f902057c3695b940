//! Satellite-to-ground decoy-state BB84 pass simulator and security analyzer.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`] produces the range/elevation time series of a pass.
//! * [`link`] turns geometry into per-channel link efficiencies and count rates.
//! * [`protocol`] evaluates sifted rates and QBER bounds, and samples detection
//!   events with a Monte Carlo model including timing, filtering and sync.
//! * [`fitting`] recovers extinction, channel efficiencies and noise
//!   coefficients from observed count series with a bounded Levenberg-Marquardt.
//! * [`security`] computes decoy-state and detector-mismatch finite key lengths.
//! * [`postproc`] covers sifting, leakage accounting, Toeplitz privacy
//!   amplification and one-time-pad transfer with a spent-key ledger.

// `!(x > 0.0)` is the NaN-rejecting form used throughout validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod error;
pub mod fitting;
pub mod geometry;
pub mod link;
pub mod pipeline;
pub mod postproc;
pub mod protocol;
pub mod security;

pub use channel::{Basis, Channel, ChannelMap, Intensity, IntensityMap};
pub use config::{ReceiverConfig, SecurityConfig, SimulationConfig, SourceConfig};
pub use error::{Error, Result};
pub use geometry::{PassProfile, PassSample};
