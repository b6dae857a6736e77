//! Minimal reverse-mode differentiation over `ndarray` matrices.
//!
//! Everything trains through [`tape::Tensor`]: a graph node holding a value,
//! an accumulated gradient, and a backward closure. Forward math shared with
//! the inference paths lives in [`math`] so training and sampling cannot
//! drift apart.

pub mod adam;
pub mod layers;
pub mod math;
pub mod tape;

pub use adam::Adam;
pub use layers::{DecoderBlock, LayerNorm, Linear, SelfAttention};
pub use tape::{backward, concat_cols, concat_rows, layer_norm, softmin, Tensor};
