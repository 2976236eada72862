//! Multi-channel speech separation toolkit built around a MIMO
//! self-attentive RNN beamformer.
//!
//! The pipeline simulates reverberant overlapped-speech scenes, extracts
//! spatial features, estimates complex ratio filters with a dilated-conv
//! network on a fixed STFT front end, turns them into frame-wise speech and
//! noise covariance matrices, and maps those to per-speaker beamforming
//! weights — either with the conventional MVDR solution or with the
//! recurrent/self-attentive network family trained end-to-end on Si-SNR.
//!
//! The companion guide under `book/` walks through each stage; module docs
//! here carry the precise contracts.

pub mod beam;
pub mod dsp;
pub mod error;
pub mod features;
pub mod model;
pub mod pipeline;
pub mod sim;

pub use error::{Error, Result};
