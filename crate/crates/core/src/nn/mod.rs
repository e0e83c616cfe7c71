//! Spatial operators with forward kernels and recorded backward rules.

mod batchnorm;
mod conv;
mod pool;
mod upsample;

pub use batchnorm::{BatchStats, Mode, RunningStats, BN_EPSILON, BN_MOMENTUM};
pub use conv::{conv2d_forward, transposed_conv2d_forward, ConvSpec};
pub use pool::{avg_pool_forward, max_pool_forward, PoolSpec};
pub use upsample::{bilinear_upsample_forward, resize_plane};
