//! The `.omg` container.
//!
//! The file is a single xz stream. Its decompressed payload is, little-endian:
//!
//! ```text
//! "OMGC"  u8 version  u64 N  f32×6 AABB (min xyz, max xyz)
//! u16 config length, config block
//! { u8 stream id, u64 length, payload }*
//! u32 CRC-32 of everything above
//! ```
//!
//! Config block: u8 position codec, u8 SVQ flag, three `(u8 dim, u8 L,
//! u8 bits)` group triples when SVQ is on, u32 k-means iterations, f64 λ,
//! u32 K, u8 prune flag, f64 τ, u8 PE frequencies, u16 space dim, u16 hidden
//! width, u8 hidden layers, u64 seed.
//!
//! Stream ids: `0x01` positions; `0x10+m`, `0x20+m`, `0x30+m` Huffman index
//! streams for scale, rotation and appearance partition `m`; `0x18`, `0x28`,
//! `0x38` the matching codebooks (f16, partitions back to back); `0x1F`,
//! `0x2F`, `0x3F` raw f32 attributes when SVQ is off; `0x50` field weights
//! (f16); `0x60` provenance JSON.

use std::io::Cursor;

use half::f16;

use super::huffman::{huffman_decode, huffman_encode, HuffmanStream};
use super::positions::{decode_positions, encode_sorted_positions};
use crate::error::{Error, Result};
use crate::field::{FieldArch, FieldWeights};
use crate::model::Aabb;
use crate::svq::{Codebook, GroupCodes, GroupConfig, SvqCodebookSet};

pub const MAGIC: &[u8; 4] = b"OMGC";
pub const VERSION: u8 = 1;
pub const XZ_PRESET: u32 = 6;
const XZ_MAGIC: [u8; 6] = [0xFD, b'7', b'z', b'X', b'Z', 0x00];

pub const POSITION_CODEC_MORTON_DELTA: u8 = 0;

pub const STREAM_POSITIONS: u8 = 0x01;
pub const STREAM_SCALE: u8 = 0x10;
pub const STREAM_ROTATION: u8 = 0x20;
pub const STREAM_APPEARANCE: u8 = 0x30;
pub const CODEBOOK_OFFSET: u8 = 0x08;
pub const RAW_OFFSET: u8 = 0x0F;
pub const STREAM_FIELD: u8 = 0x50;
pub const STREAM_PROVENANCE: u8 = 0x60;

/// Settings recorded in the header.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainerConfig {
    pub position_codec: u8,
    /// Scale, rotation, appearance groups; `None` stores raw attributes.
    pub svq: Option<[GroupConfig; 3]>,
    pub kmeans_iters: u32,
    pub lambda: f64,
    pub k: u32,
    /// `None` when pruning was disabled.
    pub tau: Option<f64>,
    pub arch: FieldArch,
    pub seed: u64,
}

/// Raw per-Gaussian attributes, used when SVQ is disabled.
#[derive(Debug, Clone, PartialEq)]
pub struct RawAttributes {
    pub log_scales: Vec<[f32; 3]>,
    pub rotations: Vec<[f32; 4]>,
    /// `cat(T, V)`.
    pub appearance: Vec<[f32; 6]>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Attributes {
    Svq(SvqCodebookSet),
    Raw(RawAttributes),
}

/// Everything stored in a container. Per-Gaussian data is in stream order
/// (Morton order of the quantized positions).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParts {
    pub aabb: Aabb,
    pub config: ContainerConfig,
    pub positions: Vec<[u16; 3]>,
    pub attributes: Attributes,
    pub field: FieldWeights,
    pub provenance: String,
}

impl SceneParts {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn config_bytes(c: &ContainerConfig) -> Vec<u8> {
    let mut b = vec![c.position_codec, c.svq.is_some() as u8];
    if let Some(groups) = c.svq {
        for g in groups {
            b.extend_from_slice(&[g.dim as u8, g.sub_len as u8, g.bits as u8]);
        }
    }
    b.extend_from_slice(&c.kmeans_iters.to_le_bytes());
    b.extend_from_slice(&c.lambda.to_le_bytes());
    b.extend_from_slice(&c.k.to_le_bytes());
    b.push(c.tau.is_some() as u8);
    b.extend_from_slice(&c.tau.unwrap_or(1.0).to_le_bytes());
    b.push(c.arch.pe_frequencies as u8);
    b.extend_from_slice(&(c.arch.space_dim as u16).to_le_bytes());
    b.extend_from_slice(&(c.arch.hidden_width as u16).to_le_bytes());
    b.push(c.arch.hidden_layers as u8);
    b.extend_from_slice(&c.seed.to_le_bytes());
    b
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::corrupt("container payload is truncated"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }
}

fn parse_config(data: &[u8]) -> Result<ContainerConfig> {
    let mut r = Reader { data, pos: 0 };
    let position_codec = r.u8()?;
    if position_codec != POSITION_CODEC_MORTON_DELTA {
        return Err(Error::Format(format!("unknown position codec {position_codec}")));
    }
    let svq = match r.u8()? {
        0 => None,
        1 => {
            let mut groups = [GroupConfig::new(0, 0, 0); 3];
            for (g, dim) in groups.iter_mut().zip([3, 4, 6]) {
                let b = r.take(3)?;
                *g = GroupConfig::new(b[0] as usize, b[1] as usize, b[2] as u32);
                if g.dim != dim {
                    return Err(Error::corrupt("SVQ group dimension does not match its attribute"));
                }
                g.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
            }
            Some(groups)
        }
        _ => return Err(Error::corrupt("bad SVQ flag")),
    };
    let kmeans_iters = r.u32()?;
    let lambda = r.f64()?;
    let k = r.u32()?;
    let prune = r.u8()?;
    let tau = r.f64()?;
    let arch = FieldArch {
        pe_frequencies: r.u8()? as usize,
        space_dim: r.u16()? as usize,
        hidden_width: r.u16()? as usize,
        hidden_layers: r.u8()? as usize,
    };
    arch.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
    let seed = r.u64()?;
    if r.remaining() != 0 {
        return Err(Error::corrupt("trailing bytes in config block"));
    }
    Ok(ContainerConfig { position_codec, svq, kmeans_iters, lambda, k, tau: (prune == 1).then_some(tau), arch, seed })
}

fn group_base(g: usize) -> u8 {
    [STREAM_SCALE, STREAM_ROTATION, STREAM_APPEARANCE][g]
}

/// The `(id, payload)` streams of a scene, in file order.
pub fn streams(parts: &SceneParts) -> Result<Vec<(u8, Vec<u8>)>> {
    let mut out = vec![(STREAM_POSITIONS, encode_sorted_positions(&parts.positions))];
    match &parts.attributes {
        Attributes::Svq(codes) => {
            for (g, group) in codes.groups().into_iter().enumerate() {
                for (m, ix) in group.indices.iter().enumerate() {
                    let h = huffman_encode(ix, group.config.codes())?;
                    out.push((group_base(g) + m as u8, h.to_bytes()));
                }
                let books: Vec<u8> = group.books.iter().flat_map(Codebook::to_half_bytes).collect();
                out.push((group_base(g) + CODEBOOK_OFFSET, books));
            }
        }
        Attributes::Raw(raw) => {
            let f = |vals: &mut dyn Iterator<Item = f32>| vals.flat_map(f32::to_le_bytes).collect::<Vec<u8>>();
            out.push((STREAM_SCALE + RAW_OFFSET, f(&mut raw.log_scales.iter().flatten().copied())));
            out.push((STREAM_ROTATION + RAW_OFFSET, f(&mut raw.rotations.iter().flatten().copied())));
            out.push((STREAM_APPEARANCE + RAW_OFFSET, f(&mut raw.appearance.iter().flatten().copied())));
        }
    }
    out.push((STREAM_FIELD, parts.field.to_half_bytes()));
    out.push((STREAM_PROVENANCE, parts.provenance.as_bytes().to_vec()));
    Ok(out)
}

/// Fixed header bytes (magic through config block).
pub fn header_bytes(parts: &SceneParts) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(parts.len() as u64).to_le_bytes());
    for v in parts.aabb.min.iter().chain(&parts.aabb.max) {
        put_f32(&mut out, *v);
    }
    let cfg = config_bytes(&parts.config);
    out.extend_from_slice(&(cfg.len() as u16).to_le_bytes());
    out.extend_from_slice(&cfg);
    out
}

/// Uncompressed payload including the trailing CRC.
pub fn payload(parts: &SceneParts) -> Result<Vec<u8>> {
    validate_parts(parts)?;
    let mut out = header_bytes(parts);
    for (id, data) in streams(parts)? {
        out.push(id);
        out.extend_from_slice(&(data.len() as u64).to_le_bytes());
        out.extend_from_slice(&data);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn validate_parts(parts: &SceneParts) -> Result<()> {
    let n = parts.len();
    match &parts.attributes {
        Attributes::Svq(codes) => {
            let Some(groups) = parts.config.svq else {
                return Err(Error::config("SVQ attributes but the header says raw"));
            };
            for (g, cfg) in codes.groups().into_iter().zip(groups) {
                if g.config != cfg || g.indices.len() != cfg.partitions() || g.books.len() != cfg.partitions() {
                    return Err(Error::config("SVQ codes disagree with the header config"));
                }
                if g.indices.iter().any(|ix| ix.len() != n) {
                    return Err(Error::DimensionMismatch { expected: n, actual: g.len() });
                }
            }
        }
        Attributes::Raw(raw) => {
            if parts.config.svq.is_some() {
                return Err(Error::config("raw attributes but the header says SVQ"));
            }
            for len in [raw.log_scales.len(), raw.rotations.len(), raw.appearance.len()] {
                if len != n {
                    return Err(Error::DimensionMismatch { expected: n, actual: len });
                }
            }
        }
    }
    if parts.field.arch != parts.config.arch {
        return Err(Error::config("field architecture disagrees with the header"));
    }
    Ok(())
}

pub fn xz_compress(data: &[u8]) -> Result<Vec<u8>> {
    Ok(liblzma::encode_all(Cursor::new(data), XZ_PRESET)?)
}

pub fn xz_decompress(data: &[u8]) -> Result<Vec<u8>> {
    liblzma::decode_all(Cursor::new(data)).map_err(|e| Error::Integrity(format!("xz: {e}")))
}

pub fn pack(parts: &SceneParts) -> Result<Vec<u8>> {
    xz_compress(&payload(parts)?)
}

pub fn unpack(file: &[u8]) -> Result<SceneParts> {
    if file.len() < XZ_MAGIC.len() || file[..XZ_MAGIC.len()] != XZ_MAGIC {
        return Err(Error::Format("not an xz-wrapped OMGC container".into()));
    }
    let data = xz_decompress(file)?;
    parse_payload(&data)
}

fn f32_array<const D: usize>(data: &[u8], n: usize) -> Result<Vec<[f32; D]>> {
    if data.len() != n * D * 4 {
        return Err(Error::corrupt("raw attribute stream has the wrong length"));
    }
    Ok(data
        .chunks_exact(D * 4)
        .map(|c| std::array::from_fn(|k| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap())))
        .collect())
}

/// Parses a decompressed payload (CRC included).
pub fn parse_payload(data: &[u8]) -> Result<SceneParts> {
    if data.len() < MAGIC.len() + 1 + 4 {
        return Err(Error::Format("payload too short for an OMGC header".into()));
    }
    if &data[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    if data[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {} (expected {VERSION})", data[4])));
    }
    let (body, crc) = data.split_at(data.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(Error::Integrity("CRC-32 mismatch".into()));
    }
    let mut r = Reader { data: body, pos: 5 };
    let n = r.u64()? as usize;
    let mut b = [0f32; 6];
    for v in &mut b {
        *v = r.f32()?;
    }
    let aabb = Aabb { min: [b[0], b[1], b[2]], max: [b[3], b[4], b[5]] };
    let cfg_len = r.u16()? as usize;
    let config = parse_config(r.take(cfg_len)?)?;

    let mut streams: Vec<(u8, &[u8])> = Vec::new();
    while r.remaining() > 0 {
        let id = r.u8()?;
        let len = r.u64()?;
        if len > r.remaining() as u64 {
            return Err(Error::corrupt(format!("stream 0x{id:02x} declares {len} bytes past the end")));
        }
        if streams.iter().any(|(s, _)| *s == id) {
            return Err(Error::corrupt(format!("duplicate stream 0x{id:02x}")));
        }
        streams.push((id, r.take(len as usize)?));
    }
    let get = |id: u8| -> Result<&[u8]> {
        streams
            .iter()
            .find(|(s, _)| *s == id)
            .map(|(_, d)| *d)
            .ok_or_else(|| Error::corrupt(format!("missing stream 0x{id:02x}")))
    };
    let mut known = vec![STREAM_POSITIONS, STREAM_FIELD, STREAM_PROVENANCE];

    let positions = decode_positions(get(STREAM_POSITIONS)?)?;
    if positions.len() != n {
        return Err(Error::corrupt(format!("header declares {n} Gaussians, position stream has {}", positions.len())));
    }

    let attributes = match config.svq {
        Some(groups) => {
            let mut out = Vec::with_capacity(3);
            for (g, cfg) in groups.into_iter().enumerate() {
                let base = group_base(g);
                let mut indices = Vec::with_capacity(cfg.partitions());
                for m in 0..cfg.partitions() {
                    let id = base + m as u8;
                    known.push(id);
                    let stream = HuffmanStream::from_bytes(get(id)?)?;
                    if stream.alphabet != cfg.codes() || stream.count != n as u64 {
                        return Err(Error::corrupt(format!("index stream 0x{id:02x} has the wrong shape")));
                    }
                    indices.push(huffman_decode(&stream)?);
                }
                known.push(base + CODEBOOK_OFFSET);
                let raw = get(base + CODEBOOK_OFFSET)?;
                let book_bytes = cfg.codes() * cfg.sub_len * 2;
                if raw.len() != book_bytes * cfg.partitions() {
                    return Err(Error::corrupt("codebook stream has the wrong length"));
                }
                let books = raw
                    .chunks_exact(book_bytes)
                    .map(|c| Codebook::from_half_bytes(cfg.sub_len, c))
                    .collect::<Result<Vec<_>>>()?;
                out.push(GroupCodes { config: cfg, books, indices });
            }
            let appearance = out.pop().unwrap();
            let rotation = out.pop().unwrap();
            let scale = out.pop().unwrap();
            Attributes::Svq(SvqCodebookSet { scale, rotation, appearance })
        }
        None => {
            known.extend([STREAM_SCALE + RAW_OFFSET, STREAM_ROTATION + RAW_OFFSET, STREAM_APPEARANCE + RAW_OFFSET]);
            let raw = RawAttributes {
                log_scales: f32_array(get(STREAM_SCALE + RAW_OFFSET)?, n)?,
                rotations: f32_array(get(STREAM_ROTATION + RAW_OFFSET)?, n)?,
                appearance: f32_array(get(STREAM_APPEARANCE + RAW_OFFSET)?, n)?,
            };
            let finite = raw.log_scales.iter().flatten().chain(raw.rotations.iter().flatten()).chain(raw.appearance.iter().flatten()).all(|v| v.is_finite());
            if !finite {
                return Err(Error::corrupt("raw attributes contain non-finite values"));
            }
            Attributes::Raw(raw)
        }
    };
    if let Some((id, _)) = streams.iter().find(|(s, _)| !known.contains(s)) {
        return Err(Error::corrupt(format!("unknown stream 0x{id:02x}")));
    }

    let field = FieldWeights::from_half_bytes(config.arch, aabb, get(STREAM_FIELD)?)?;
    let provenance = String::from_utf8(get(STREAM_PROVENANCE)?.to_vec())
        .map_err(|_| Error::corrupt("provenance is not UTF-8"))?;
    Ok(SceneParts { aabb, config, positions, attributes, field, provenance })
}

/// Rounds to half precision the way the container stores it.
pub fn half_round(v: f32) -> f32 {
    f16::from_f32(v).to_f32()
}
