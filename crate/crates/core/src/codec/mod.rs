//! Serialization of compressed scenes.

pub mod container;
pub mod huffman;
pub mod positions;

pub use container::{pack, unpack, Attributes, ContainerConfig, RawAttributes, SceneParts};
pub use huffman::{huffman_decode, huffman_encode, HuffmanStream};
pub use positions::{decode_positions, dequantize_positions, encode_positions, quantize_positions};
