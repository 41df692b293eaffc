//! The coordinate network: frequency encodings, the positional trunk, the
//! spectro-directional head with its validity-preserving output mapping, and
//! exact reverse-mode gradients.

mod checkpoint;
mod encoding;
mod model;
pub mod network;
mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use encoding::{encoded_width, positional_encoding, EncodingConfig};
pub use model::{FieldOutput, FieldQuery, NeuralField, OutputGradient};
pub use network::{stokes_from_raw, ForwardPass};
pub use params::{init_params, Dense, FieldArch, FieldParams, STOKES_HEAD_INIT_SCALE};
