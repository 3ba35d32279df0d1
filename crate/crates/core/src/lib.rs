//! Factor-graph symbol detection for intersymbol-interference channels.
//!
//! The crate builds Forney-style and Ungerboeck-style factor graphs for a
//! block transmission over a linear ISI channel, runs log-domain sum-product
//! message passing on them, and trains per-edge message weights and a linear
//! observation preprocessor by gradient descent on a bit-metric loss.

pub mod autodiff;
pub mod channel;
pub mod constellation;
pub mod detectors;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod observation;
pub mod params;
pub mod reference;
mod selftest;
pub mod spa;
pub mod training;

pub use channel::{transmit, ChannelModel, TransmissionFrame};
pub use constellation::{ebn0_to_sigma2, make_constellation, modulate, Constellation, Modulation};
pub use error::{Error, Result};
pub use experiment::{run_selftest, run_sweep, run_train, Settings, SweepConfig, TrainRunConfig};
pub use observation::{matched_filter_model, preprocessed_model, ObservationModel, Preprocessor};
pub use spa::{FactorGraph, MessageWeights};
pub use detectors::{detect, DetectorKind, DetectorParams};
pub use params::{load_params, save_params};
