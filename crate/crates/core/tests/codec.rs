mod common;

use common::*;
use omg_core::codec::container::{header_bytes, parse_payload, payload, streams, xz_compress};
use omg_core::codec::huffman::{canonical_codes, code_lengths};
use omg_core::codec::positions::{encode_sorted_positions, grid_order, POSITION_LEVELS};
use omg_core::codec::{
    decode_positions, dequantize_positions, encode_positions, huffman_decode, huffman_encode, pack, quantize_positions,
    unpack, HuffmanStream,
};
use omg_core::synth::{synth_scene, SynthSpec};
use omg_core::{Aabb, ErrorKind};
use proptest::prelude::*;
use rand::Rng;

fn fixed_width_bits(alphabet: usize) -> u64 {
    (usize::BITS - (alphabet.max(2) - 1).leading_zeros()) as u64
}

proptest! {
    #[test]
    fn dequantization_error_is_half_a_step(seed in any::<u64>(), n in 1usize..200) {
        let mut r = rng(seed);
        let pts: Vec<[f32; 3]> = (0..n).map(|_| std::array::from_fn(|_| r.random_range(-50.0..50.0))).collect();
        let aabb = Aabb::from_points(&pts);
        let q = quantize_positions(&pts, &aabb).unwrap();
        let back = dequantize_positions(&q, &aabb);
        for i in 0..n {
            for a in 0..3 {
                let ext = aabb.max[a] as f64 - aabb.min[a] as f64;
                let grid = aabb.min[a] as f64 + q[i][a] as f64 / POSITION_LEVELS as f64 * ext;
                let bound = ext / 131_070.0;
                prop_assert!((grid - pts[i][a] as f64).abs() <= bound * (1.0 + 1e-9));
                let ulp = (back[i][a].abs() * f32::EPSILON) as f64;
                prop_assert!((back[i][a] as f64 - pts[i][a] as f64).abs() <= bound * (1.0 + 1e-9) + ulp);
            }
        }
    }

    #[test]
    fn position_stream_round_trips(seed in any::<u64>(), n in 0usize..500) {
        let mut r = rng(seed);
        let q: Vec<[u16; 3]> = (0..n).map(|_| std::array::from_fn(|_| r.random())).collect();
        let (bytes, perm) = encode_positions(&q);
        let sorted: Vec<[u16; 3]> = perm.iter().map(|&i| q[i]).collect();
        prop_assert_eq!(decode_positions(&bytes).unwrap(), sorted);
    }

    #[test]
    fn huffman_stays_within_fixed_width_bound_and_round_trips(seed in any::<u64>(), bits in 0u32..12, n in 0usize..3000) {
        let mut r = rng(seed);
        let alphabet = 1usize << bits;
        let skew: f64 = r.random_range(0.2..4.0);
        let sym: Vec<u16> = (0..n).map(|_| (r.random::<f64>().powf(skew) * alphabet as f64) as u16).collect();
        let h = huffman_encode(&sym, alphabet).unwrap();
        let fixed = (n as u64 * fixed_width_bits(alphabet)).div_ceil(8) as usize;
        prop_assert!(h.bits.len() <= fixed + h.table_bytes());
        prop_assert!(h.to_bytes().len() <= fixed + h.table_bytes());
        let back = HuffmanStream::from_bytes(&h.to_bytes()).unwrap();
        prop_assert_eq!(huffman_decode(&back).unwrap(), sym);
    }

    #[test]
    fn code_lengths_are_optimal(seed in any::<u64>(), k in 2usize..300) {
        let mut r = rng(seed);
        let freqs: Vec<u64> = (0..k).map(|_| if r.random_bool(0.1) { 0 } else { r.random_range(1..1000) }).collect();
        prop_assume!(freqs.iter().filter(|f| **f > 0).count() >= 2);
        let lengths = code_lengths(&freqs);
        let total: u64 = freqs.iter().sum();
        let ours = freqs.iter().zip(&lengths).map(|(f, l)| f * *l as u64).sum::<u64>() as f64 / total as f64;
        prop_assert!((ours - huffman_optimal_bits(&freqs)).abs() < 1e-12);
        // Unused symbols get no code; Kraft sum is exactly one.
        let max = *lengths.iter().max().unwrap() as u32;
        let kraft: u128 = lengths.iter().filter(|l| **l > 0).map(|&l| 1u128 << (max - l as u32)).sum();
        prop_assert_eq!(kraft, 1u128 << max);
        for (f, l) in freqs.iter().zip(&lengths) {
            prop_assert_eq!(*f == 0, *l == 0);
        }
    }
}

#[test]
fn canonical_codes_are_prefix_free() {
    let lengths = code_lengths(&[50, 20, 20, 5, 3, 1, 1, 0]);
    let codes = canonical_codes(&lengths);
    for i in 0..8 {
        for j in 0..8 {
            if i == j || lengths[i] == 0 || lengths[j] == 0 || lengths[i] > lengths[j] {
                continue;
            }
            let shifted = codes[j] >> (lengths[j] - lengths[i]);
            assert_ne!(shifted, codes[i], "code {i} is a prefix of code {j}");
        }
    }
}

#[test]
fn skewed_distribution_is_near_the_optimum() {
    let mut r = rng(31);
    let sym = skewed_symbols(200_000, 1024, &mut r);
    let mut freqs = vec![0u64; 1024];
    sym.iter().for_each(|&s| freqs[s as usize] += 1);
    let h = huffman_encode(&sym, 1024).unwrap();
    let avg = h.bit_len as f64 / sym.len() as f64;
    let opt = huffman_optimal_bits(&freqs);
    assert!((avg - opt).abs() <= 0.05 * opt, "{avg} vs {opt}");
}

#[test]
fn corrupted_huffman_streams_are_rejected() {
    let sym: Vec<u16> = (0..100).map(|i| (i % 7) as u16).collect();
    let h = huffman_encode(&sym, 8).unwrap();
    let mut bytes = h.to_bytes();
    // Over-subscribed code lengths.
    bytes[12..20].copy_from_slice(&[1, 1, 1, 0, 0, 0, 0, 0]);
    let bad = HuffmanStream::from_bytes(&bytes).unwrap();
    assert_eq!(huffman_decode(&bad).unwrap_err().kind(), ErrorKind::Data);
    // Truncated bit payload.
    let mut short = h.clone();
    short.bits.truncate(short.bits.len() / 2);
    assert!(huffman_decode(&short).is_err());
    assert!(HuffmanStream::from_bytes(&bytes[..10]).is_err());
}

#[test]
fn morton_coherent_positions_beat_raw_size() {
    let set = synth_scene(&SynthSpec { gaussians: 100_000, seed: 1, ..SynthSpec::default() }).unwrap();
    let aabb = Aabb::from_points(&set.positions);
    let q = quantize_positions(&set.positions, &aabb).unwrap();
    let (bytes, perm) = encode_positions(&q);
    assert!(bytes.len() < 6 * q.len(), "{} bytes for {} points", bytes.len(), q.len());
    let sorted: Vec<[u16; 3]> = perm.iter().map(|&i| q[i]).collect();
    assert_eq!(decode_positions(&bytes).unwrap(), sorted);
    assert_eq!(grid_order(&sorted), (0..sorted.len()).collect::<Vec<_>>());
}

#[test]
fn malformed_position_streams_are_rejected() {
    let q = vec![[1u16, 2, 3], [65535, 0, 9]];
    let bytes = encode_sorted_positions(&q);
    assert!(decode_positions(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_positions(&extra).is_err());
    // A delta that walks off the grid.
    let mut off = bytes.clone();
    off[1] = 1; // first x delta becomes -1
    assert!(decode_positions(&off).is_err());
}

#[test]
fn containers_round_trip_and_account_for_every_byte() {
    let mut r = rng(40);
    for (n, svq) in [(1, true), (37, false), (500, true), (2000, false), (5000, true)] {
        let parts = random_parts(n, svq, &mut r);
        let raw = payload(&parts).unwrap();
        let streams = streams(&parts).unwrap();
        let expected = header_bytes(&parts).len() + streams.iter().map(|(_, s)| 9 + s.len()).sum::<usize>() + 4;
        assert_eq!(raw.len(), expected);
        assert_eq!(parse_payload(&raw).unwrap(), parts);

        let file = pack(&parts).unwrap();
        assert_eq!(unpack(&file).unwrap(), parts);
        assert!(file.len() <= raw.len() + 1024);
        assert_eq!(xz_compress(&raw).unwrap(), file);
    }
}

#[test]
fn payload_byte_flips_fail_the_checksum() {
    let mut r = rng(41);
    let parts = random_parts(300, true, &mut r);
    let raw = payload(&parts).unwrap();
    for _ in 0..50 {
        let mut bad = raw.clone();
        let at = r.random_range(0..bad.len());
        bad[at] ^= 1 << r.random_range(0..8);
        let err = parse_payload(&bad).unwrap_err();
        assert_eq!(err.kind(), ErrorKind::Data, "{err}");
    }
}

#[test]
fn file_byte_flips_never_yield_a_different_scene() {
    let mut r = rng(42);
    let parts = random_parts(200, true, &mut r);
    let file = pack(&parts).unwrap();
    for _ in 0..50 {
        let mut bad = file.clone();
        let at = r.random_range(0..bad.len());
        bad[at] ^= 1 << r.random_range(0..8);
        match unpack(&bad) {
            Ok(p) => assert_eq!(p, parts),
            Err(e) => assert_eq!(e.kind(), ErrorKind::Data),
        }
    }
}

#[test]
fn non_container_input_is_a_data_error() {
    assert_eq!(unpack(b"hello world").unwrap_err().kind(), ErrorKind::Data);
    assert_eq!(unpack(&[]).unwrap_err().kind(), ErrorKind::Data);
    let not_omg = xz_compress(b"PLY but not really").unwrap();
    assert_eq!(unpack(&not_omg).unwrap_err().kind(), ErrorKind::Data);
}
