//! Toy segmentation network, its losses and the training loop.

pub mod checkpoint;
pub mod losses;
pub mod net;
pub mod train;

pub use losses::{ce_loss, cls_loss};
pub use net::{ModelShape, ToyModel};
pub use train::{refine, StepMetrics, TrainConfig, TrainItem, Trainer};
