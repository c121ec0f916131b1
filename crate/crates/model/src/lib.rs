//! Event-guided deblurring network for videos with unknown exposure time.
//!
//! The network encodes the blurred frame, the events of the previous shutter
//! period and the events of the current period (split into short units), scores
//! every event slot against the frame to suppress readout-only events, fuses the
//! selected events with the frame features and decodes a sharp frame at three
//! scales. All computation runs on the `edeblur-tensor` tape.

pub mod activation;
pub mod batch;
pub mod config;
pub mod encoders;
pub mod error;
pub mod etes;
pub mod fusion;
mod layers;
pub mod model;
pub mod optim;
pub mod params;
pub mod toy;
pub mod train;

pub use batch::{Batch, SampleTensors};
pub use config::{LossConfig, ModelConfig, TrainConfig, SCALES};
pub use error::{ModelError, Result};
pub use model::{Forward, Model, Prediction};
pub use optim::Adam;
pub use params::{Bound, Init, ParamSpec, Params, SpecList};
pub use toy::ToyConfig;
pub use train::{StepRecord, Trainer};
