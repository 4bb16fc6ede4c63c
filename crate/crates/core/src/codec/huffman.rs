//! Canonical Huffman coding of 16-bit symbol streams.
//!
//! Serialized form: u32 alphabet size, u64 symbol count, one code-length byte
//! per alphabet entry, then the MSB-first bitstream padded with zero bits.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

pub const MAX_ALPHABET: usize = 1 << 16;
const MAX_CODE_LEN: u8 = 64;

/// Code lengths from symbol frequencies. Unused symbols get length 0; a single
/// used symbol gets length 1.
pub fn code_lengths(freqs: &[u64]) -> Vec<u8> {
    let mut lengths = vec![0u8; freqs.len()];
    let used: Vec<usize> = (0..freqs.len()).filter(|&s| freqs[s] > 0).collect();
    match used.len() {
        0 => return lengths,
        1 => {
            lengths[used[0]] = 1;
            return lengths;
        }
        _ => {}
    }
    // Node ids: leaves are symbols, internal nodes follow.
    let mut parent: Vec<usize> = vec![usize::MAX; freqs.len() + used.len()];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = used.iter().map(|&s| Reverse((freqs[s], s))).collect();
    let mut next = freqs.len();
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().unwrap();
        let Reverse((wb, b)) = heap.pop().unwrap();
        parent[a] = next;
        parent[b] = next;
        heap.push(Reverse((wa + wb, next)));
        next += 1;
    }
    let root = next - 1;
    let mut depth = vec![0u8; next];
    for id in (freqs.len()..root).rev() {
        depth[id] = depth[parent[id]] + 1;
    }
    for &s in &used {
        lengths[s] = depth[parent[s]] + 1;
    }
    lengths
}

/// Canonical codes: shorter codes first, equal lengths ordered by symbol.
pub fn canonical_codes(lengths: &[u8]) -> Vec<u64> {
    let max = lengths.iter().copied().max().unwrap_or(0) as usize;
    let mut count = vec![0u64; max + 1];
    for &l in lengths {
        if l > 0 {
            count[l as usize] += 1;
        }
    }
    let mut next = vec![0u64; max + 2];
    let mut code = 0u64;
    for len in 1..=max {
        code = (code + count[len - 1]) << 1;
        next[len] = code;
    }
    lengths
        .iter()
        .map(|&l| {
            if l == 0 {
                0
            } else {
                let c = next[l as usize];
                next[l as usize] += 1;
                c
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanStream {
    pub alphabet: usize,
    pub count: u64,
    pub lengths: Vec<u8>,
    pub bits: Vec<u8>,
    pub bit_len: u64,
}

impl HuffmanStream {
    /// Bytes spent on the header and code-length table.
    pub fn table_bytes(&self) -> usize {
        4 + 8 + self.lengths.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.table_bytes() + self.bits.len());
        out.extend_from_slice(&(self.alphabet as u32).to_le_bytes());
        out.extend_from_slice(&self.count.to_le_bytes());
        out.extend_from_slice(&self.lengths);
        out.extend_from_slice(&self.bits);
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        if data.len() < 12 {
            return Err(Error::corrupt("huffman stream shorter than its header"));
        }
        let alphabet = u32::from_le_bytes(data[0..4].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(data[4..12].try_into().unwrap());
        if alphabet > MAX_ALPHABET || data.len() < 12 + alphabet {
            return Err(Error::corrupt("huffman code-length table is truncated"));
        }
        let lengths = data[12..12 + alphabet].to_vec();
        let bits = data[12 + alphabet..].to_vec();
        let bit_len = bits.len() as u64 * 8;
        Ok(Self { alphabet, count, lengths, bits, bit_len })
    }
}

pub fn huffman_encode(symbols: &[u16], alphabet: usize) -> Result<HuffmanStream> {
    if alphabet > MAX_ALPHABET {
        return Err(Error::config(format!("alphabet of {alphabet} exceeds 2^16")));
    }
    let mut freqs = vec![0u64; alphabet];
    for &s in symbols {
        let s = s as usize;
        if s >= alphabet {
            return Err(Error::InvalidInput(format!("symbol {s} outside alphabet of {alphabet}")));
        }
        freqs[s] += 1;
    }
    let lengths = code_lengths(&freqs);
    let codes = canonical_codes(&lengths);
    let total_bits: u64 = symbols.iter().map(|&s| lengths[s as usize] as u64).sum();
    let mut bits = vec![0u8; total_bits.div_ceil(8) as usize];
    let mut pos = 0u64;
    for &s in symbols {
        let (code, len) = (codes[s as usize], lengths[s as usize] as u64);
        for b in (0..len).rev() {
            if (code >> b) & 1 == 1 {
                bits[(pos / 8) as usize] |= 0x80 >> (pos % 8);
            }
            pos += 1;
        }
    }
    Ok(HuffmanStream { alphabet, count: symbols.len() as u64, lengths, bits, bit_len: total_bits })
}

pub fn huffman_decode(stream: &HuffmanStream) -> Result<Vec<u16>> {
    let lengths = &stream.lengths;
    if lengths.iter().any(|&l| l > MAX_CODE_LEN) {
        return Err(Error::corrupt("huffman code length exceeds 64"));
    }
    let max = lengths.iter().copied().max().unwrap_or(0) as usize;
    if stream.count == 0 {
        return Ok(Vec::new());
    }
    if max == 0 {
        return Err(Error::corrupt("huffman table is empty but symbols are declared"));
    }
    // Kraft inequality, scaled by 2^max.
    let kraft: u128 = lengths.iter().filter(|&&l| l > 0).map(|&l| 1u128 << (max - l as usize)).sum();
    if kraft > 1u128 << max {
        return Err(Error::corrupt("huffman code lengths violate the Kraft inequality"));
    }
    let mut count = vec![0u64; max + 1];
    for &l in lengths {
        if l > 0 {
            count[l as usize] += 1;
        }
    }
    let mut sorted: Vec<u16> = (0..lengths.len() as u32).filter(|&s| lengths[s as usize] > 0).map(|s| s as u16).collect();
    sorted.sort_by_key(|&s| (lengths[s as usize], s));
    let mut first = vec![0u64; max + 1];
    let mut offset = vec![0u64; max + 1];
    let mut code = 0u64;
    let mut off = 0u64;
    for len in 1..=max {
        code = (code + count[len - 1]) << 1;
        first[len] = code;
        offset[len] = off;
        off += count[len];
    }

    if stream.count > stream.bits.len() as u64 * 8 {
        return Err(Error::corrupt("huffman stream is shorter than its symbol count"));
    }
    let mut out = Vec::with_capacity(stream.count as usize);
    let total_bits = stream.bits.len() as u64 * 8;
    let mut pos = 0u64;
    for _ in 0..stream.count {
        let mut code = 0u64;
        let mut len = 0usize;
        loop {
            if pos >= total_bits {
                return Err(Error::corrupt("huffman bitstream ended mid-symbol"));
            }
            let bit = (stream.bits[(pos / 8) as usize] >> (7 - pos % 8)) & 1;
            pos += 1;
            code = (code << 1) | bit as u64;
            len += 1;
            if len > max {
                return Err(Error::corrupt("invalid huffman code in bitstream"));
            }
            if count[len] > 0 && code >= first[len] && code - first[len] < count[len] {
                out.push(sorted[(offset[len] + code - first[len]) as usize]);
                break;
            }
        }
    }
    if pos.div_ceil(8) != stream.bits.len() as u64 {
        return Err(Error::corrupt("trailing bytes after huffman bitstream"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_symbol_uses_one_bit() {
        let s = huffman_encode(&[3; 20], 8).unwrap();
        assert_eq!(s.lengths[3], 1);
        assert_eq!(s.bit_len, 20);
        assert_eq!(huffman_decode(&s).unwrap(), vec![3; 20]);
    }

    #[test]
    fn uniform_power_of_two_is_balanced() {
        let symbols: Vec<u16> = (0..64).flat_map(|_| 0..16u16).collect();
        let s = huffman_encode(&symbols, 16).unwrap();
        assert!(s.lengths.iter().all(|&l| l == 4));
    }

    #[test]
    fn empty_input() {
        let s = huffman_encode(&[], 4).unwrap();
        assert!(s.lengths.iter().all(|&l| l == 0));
        assert!(s.bits.is_empty());
        assert!(huffman_decode(&s).unwrap().is_empty());
    }

    #[test]
    fn bytes_round_trip() {
        let symbols = [0u16, 1, 1, 2, 2, 2, 2, 5];
        let s = huffman_encode(&symbols, 6).unwrap();
        let back = HuffmanStream::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(huffman_decode(&back).unwrap(), symbols);
    }

    #[test]
    fn canonical_code_values() {
        // lengths a:2 b:1 c:3 d:3 → b=0, a=10, c=110, d=111
        assert_eq!(canonical_codes(&[2, 1, 3, 3]), vec![0b10, 0b0, 0b110, 0b111]);
    }

    #[test]
    fn rejects_symbol_outside_alphabet() {
        assert!(huffman_encode(&[4], 4).is_err());
    }
}
