//! Integer coding tables, the arithmetic coder, the container format and
//! the encode/decode pipelines.

pub mod arith;
pub mod bitstream;
pub mod cdf;
pub mod pipeline;

pub use arith::{ac_decode, ac_encode, ArithDecoder, ArithEncoder};
pub use bitstream::{Bitstream, Header};
pub use cdf::{build_cdf, QuantizedCdf, CDF_TOTAL};
pub use pipeline::{decode_image, encode_image, CodecOptions, Decoded, Encoded, StageTimes};
