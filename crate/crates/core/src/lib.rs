//! Simulation and estimation toolkit for hardware-impaired multi-device
//! uplinks observed by an antenna array.
//!
//! The received `snapshots × antennas × blocks` cube follows a CP model whose
//! factors are the transmitter envelopes (pilots times each device's hardware
//! feature vector), the steering matrix and the block-fading matrix.
//! [`estimators::tals_run`] recovers all three jointly; [`crlb`] bounds the
//! achievable accuracy; [`harness`] runs the Monte-Carlo sweeps.

pub mod crlb;
pub mod error;
pub mod estimators;
pub mod hardware;
pub mod harness;
pub mod linalg;
pub mod pilots;
pub mod scene;
pub mod tensor;

pub use error::{Error, Result};
pub use linalg::{CMat, CVec, C64};
pub use tensor::{CTensor3, Mode};
