//! Entropy coding back end: a range asymmetric numeral system coder and
//! the byte-level container that frames its streams.

mod bitstream;
mod rans;

pub use bitstream::{
    CompressionOrder, Frame, FrameError, StreamId, CONTAINER_VERSION, MAGIC, N_SLOTS, N_STREAMS,
    STREAM_NAMES,
};
pub use rans::{CoderError, RansDecoder, RansEncoder};
