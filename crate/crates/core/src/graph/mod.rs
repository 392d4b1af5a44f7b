//! Architecture specs, model assembly, initialization and checkpoints.

pub mod checkpoint;
pub mod init;
pub mod model;
pub mod spec;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use init::{inflate_first_conv, init_tm_block, BnParams, ChannelwiseParams, TemporalConv3dParams, TemporalwiseParams};
pub use model::{
    buffer_shapes, build_model, build_txb, fold_snippets, parameter_shapes, unfold_snippets, ForwardPass, Model32, Model64,
    ModelInstance,
};
pub use spec::{ArchSpec, BlockKind, HeadKind, StageSpec, StemSpec, TxbSpec, PRESETS};
