//! A small 64-bit neural-network engine: dense, slot-shared conv1d,
//! batch-norm, ReLU, sigmoid, dropout and residual blocks, with tape-based
//! reverse-mode gradients, Adam, and a binary checkpoint format.

mod adam;
pub mod checkpoint;
mod error;
mod layer;
mod param;
mod tensor;

pub use adam::Adam;
pub use checkpoint::{checkpoint_bytes, read_checkpoint, write_checkpoint};
pub use error::{NnError, Result};
pub use layer::{sigmoid, LayerSpec, LayerSummary, Mode, Network, Tape, BN_EPS, BN_MOMENTUM};
pub use param::{Param, ParamId, ParamRole, ParamStore};
pub use tensor::{gemm, Tensor};
