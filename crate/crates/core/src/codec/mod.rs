//! The recurrent autoencoder: encoder, binarizer, decoder and the
//! residual recurrence that turns them into a scalable code.

mod arch;
mod binarize;
mod canvas;
mod model;
mod params;
mod recurrence;

pub use arch::{ArchConfig, LayerSpecs, DOWNSAMPLE};
pub use binarize::{binarize, binarize_values, BinarizeMode, CodeTensor};
pub use canvas::{crop_images, pad_images, pad_to_grid, padded_side};
pub use model::{check_image_shape, decode_step, encode_step, RecurrentState};
pub use params::{ConvVars, DecoderParams, DecoderVars, EncoderParams, EncoderVars, ParamSet};
pub use recurrence::{
    compress, normalize, reconstruct_prefix, snap_to_grid, to_pixels, unroll, CompressionTrace,
    SourceUnroll, DEFAULT_ITERATIONS, GRID_BITS,
};
