//! Forward kernels and their tape-recorded, differentiable counterparts.
//!
//! Each op comes as a free `*_forward` function over plain tensors and as a
//! method on [`Tape`](crate::Tape) that also records the backward pass.

pub mod conv1d;
pub mod conv2d;
pub mod conv3d;
pub mod elementwise;
pub mod gradcheck;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;

pub use conv1d::{conv1d_channelwise_forward, conv1d_forward, conv1d_temporalwise_forward};
pub use conv2d::{conv2d_forward, conv_out_len, Conv2dConfig};
pub use conv3d::conv3d_t311_forward;
pub use elementwise::relu_forward;
pub use gradcheck::{grad_check, run_op_checks, GradCheckReport, OP_NAMES};
pub use linear::fc_forward;
pub use loss::{log_mean_softmax_forward, softmax, softmax_cross_entropy_forward};
pub use norm::{batch_norm_forward, BatchStats, BnConfig, Mode, RunningStats, BN_EPS, BN_MOMENTUM};
pub use pool::{global_avg_pool2d_forward, max_pool2d_forward, temporal_max_pool_forward};
