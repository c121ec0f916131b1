//! Physical event/blur model, exposure-readout dataset synthesis, event
//! embeddings, image metrics and the file formats that connect them.

mod error;
pub mod event;
pub mod formats;
mod image;
pub mod metrics;
pub mod physics;
pub mod repr;
pub mod shutter;
pub mod synthetic;

pub use error::{CoreError, Result};
pub use event::{Event, EventStream, Polarity};
pub use image::{Image, LUMA_WEIGHTS};
pub use metrics::{psnr, ssim, MetricReport};
pub use physics::{
    edi_deblur, integrate_events, residual_sum, simulate_events, synthesize_blur, EventSimulator,
    FrameSequence, ResidualSum,
};
pub use repr::{partition_past_current, split_units, to_voxel, EventUnits, PolarityMode, VoxelGrid};
pub use shutter::{build_dataset, make_blur_sample, split_shutter, BlurSample, ShutterConfig, ShutterWindow};
