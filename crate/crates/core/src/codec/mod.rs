//! Conversion between LLM-side virtual tokens and the NVM-side encoded form.
//!
//! Tokens are projected per row through a linear autoencoder, quantized to
//! symmetric int16 with a per-tensor scale, and each int16 is split into
//! `b`-bit device levels for storage.

mod autoencoder;
mod quant;
mod slice;

pub(crate) use autoencoder::stack_rows;
pub use autoencoder::{train_autoencoder, AeTrainConfig, LinearAutoencoder, TrainLog};
pub use quant::{decode, dequantize, encode, quantize, EncodedPrompt, VirtualTokenSet, QMAX};
pub use slice::{bit_slice, unslice, BitSliceLayout};
