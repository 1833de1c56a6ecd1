//! Neural network substrate: positional encoding, dense layers, a one-shot
//! reverse-mode tape, Adam and the `NWTS` checkpoint container.

mod adam;
mod checkpoint;
mod encoding;
mod layer;
mod mlp;
pub mod numerics;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{decode_nwts, encode_nwts, read_nwts, write_nwts, NWTS_MAGIC, NWTS_VERSION};
pub(crate) use checkpoint::Cursor;
pub use encoding::PositionalEncoding;
pub use layer::{Activation, Layer, LayerGrad};
pub use mlp::{Gradients, Mlp, Tape};
