//! The two attacks on feature visualization: a detector-gated circuit that
//! shows a decoy under visualization, and a bias-silenced hijack branch that
//! only wakes up outside the natural input range.

mod circuit;
mod detector;
mod gate;
mod preserve;
mod silent;

pub use circuit::{calibrate_k, embed_image_filter, graft_fooling_circuit, oracle_detector, CircuitMode, FoolingCircuitSpec};
pub use detector::{
    detector_accuracy, detector_architecture, detector_dataset, image_batch, synthetic_pool, train_detector, DetectorAccuracy,
    NATURAL,
};
pub use gate::gate_forward;
pub use preserve::{verify_preservation, PreservationReport};
pub use silent::{inject_silent_hijack, visualization_target, HijackedUnit, SilentInjectionSpec, SilentReport};

use thiserror::Error;

use crate::featviz::VizError;
use crate::netgraph::NetError;
use crate::tensorcore::TensorError;

#[derive(Debug, Error)]
pub enum FoolError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Viz(#[from] VizError),
    #[error("gate constant k={k} is below max(x, y)={bound}")]
    GateBound { k: f64, bound: f64 },
    #[error("gate input must be non-negative and finite, got {0}")]
    GateInput(f64),
    #[error("invalid attack spec: {0}")]
    Spec(String),
    #[error("detector must have a single output, found {0}")]
    DetectorOutput(usize),
    #[error("layer `{0}` is not a conv block")]
    NotConvBlock(String),
    #[error("models differ in shape: {0}")]
    Incompatible(String),
}

impl From<TensorError> for FoolError {
    fn from(e: TensorError) -> Self {
        FoolError::Net(e.into())
    }
}
