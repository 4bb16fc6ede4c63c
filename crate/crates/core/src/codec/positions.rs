//! 16-bit position quantization and the Morton-delta position stream.
//!
//! Stream layout: varint `N`, then three planes (x, y, z) of zig-zag varint
//! deltas between consecutive points in Morton order. The first delta of each
//! plane is taken against 0.

use crate::error::{Error, Result};
use crate::importance::interleave;
use crate::model::Aabb;

pub const POSITION_LEVELS: u32 = 65535;

/// Uniform per-axis quantization of `positions` over `aabb` to `0..=65535`.
pub fn quantize_positions(positions: &[[f32; 3]], aabb: &Aabb) -> Result<Vec<[u16; 3]>> {
    positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if !aabb.contains(*p) {
                return Err(Error::InvalidInput(format!("gaussian {i} lies outside the scene bounds")));
            }
            let mut q = [0u16; 3];
            for a in 0..3 {
                let ext = aabb.max[a] as f64 - aabb.min[a] as f64;
                q[a] = if ext > 0.0 {
                    ((p[a] as f64 - aabb.min[a] as f64) / ext * POSITION_LEVELS as f64).round() as u16
                } else {
                    0
                };
            }
            Ok(q)
        })
        .collect()
}

pub fn dequantize_positions(q: &[[u16; 3]], aabb: &Aabb) -> Vec<[f32; 3]> {
    q.iter()
        .map(|v| {
            std::array::from_fn(|a| {
                let ext = aabb.max[a] as f64 - aabb.min[a] as f64;
                (aabb.min[a] as f64 + v[a] as f64 / POSITION_LEVELS as f64 * ext) as f32
            })
        })
        .collect()
}

/// Morton key over the 16-bit grid.
pub fn grid_key(q: [u16; 3]) -> u64 {
    interleave([q[0] as u32, q[1] as u32, q[2] as u32])
}

/// Stable Morton order of quantized positions.
pub fn grid_order(q: &[[u16; 3]]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by_key(|&i| grid_key(q[i]));
    order
}

pub(crate) fn write_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

pub(crate) fn read_varint(data: &[u8], pos: &mut usize) -> Result<u64> {
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let b = *data.get(*pos).ok_or_else(|| Error::corrupt("truncated varint"))?;
        *pos += 1;
        v |= ((b & 0x7f) as u64) << shift;
        if b & 0x80 == 0 {
            return Ok(v);
        }
    }
    Err(Error::corrupt("varint longer than 64 bits"))
}

fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

fn unzigzag(v: u64) -> i64 {
    ((v >> 1) as i64) ^ -((v & 1) as i64)
}

/// Sorts `q` into Morton order and delta-codes it. Returns the stream and the
/// permutation applied (`sorted[k] = q[perm[k]]`).
pub fn encode_positions(q: &[[u16; 3]]) -> (Vec<u8>, Vec<usize>) {
    let perm = grid_order(q);
    let sorted: Vec<[u16; 3]> = perm.iter().map(|&i| q[i]).collect();
    (encode_sorted_positions(&sorted), perm)
}

/// Delta-codes positions in their given order.
pub fn encode_sorted_positions(sorted: &[[u16; 3]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(sorted.len() * 3 + 10);
    write_varint(&mut out, sorted.len() as u64);
    for a in 0..3 {
        let mut prev = 0i64;
        for p in sorted {
            let v = p[a] as i64;
            write_varint(&mut out, zigzag(v - prev));
            prev = v;
        }
    }
    out
}

/// Inverse of [`encode_positions`]; points come back in Morton order.
pub fn decode_positions(data: &[u8]) -> Result<Vec<[u16; 3]>> {
    let mut pos = 0;
    let n = read_varint(data, &mut pos)? as usize;
    // Every coordinate takes at least one byte.
    if n > data.len() / 3 + 1 {
        return Err(Error::corrupt("position count exceeds stream size"));
    }
    let mut out = vec![[0u16; 3]; n];
    for a in 0..3 {
        let mut prev = 0i64;
        for p in out.iter_mut() {
            let v = prev + unzigzag(read_varint(data, &mut pos)?);
            if !(0..=u16::MAX as i64).contains(&v) {
                return Err(Error::corrupt("position delta leaves the 16-bit grid"));
            }
            p[a] = v as u16;
            prev = v;
        }
    }
    if pos != data.len() {
        return Err(Error::corrupt("trailing bytes after position stream"));
    }
    Ok(out)
}
