//! Time-varying gesture operational models for full-body joint-angle data.
//!
//! Each joint-angle channel gets a second-order autoregressive equation
//! whose cross-channel regressors come from the skeleton's structure. The
//! coefficients vary over time and are estimated from one reference
//! movement per class with a Kalman filter inside a maximum-likelihood loop.
//! The fitted trajectories feed significance analysis, sensor selection,
//! tolerance bands, closed-loop movement generation and HMM recognition.

pub mod analysis;
pub mod dtw;
pub mod error;
pub mod exchange;
pub mod generation;
pub mod gom;
pub mod hmm;
pub mod kalman;
pub mod motion;
pub mod optim;
pub mod recognition;
pub mod seed;
pub mod synth;
pub mod topology;
pub mod trainer;

pub use error::{GomError, Result};
