pub mod gmp;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod preprocessing;
pub mod segmentation;
pub mod volume_io;
