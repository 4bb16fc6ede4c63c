//! Sub-vector quantization.
//!
//! An attribute vector of dimension `D` is split into `M = D / L` consecutive
//! sub-vectors of length `L`; partition `m` has its own codebook of `2^bits`
//! half-precision codewords. Codebooks come from k-means and are then refit
//! with the assignments frozen.

use half::f16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{canonical_quaternion, normalize_quaternion, OmgGaussianSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupConfig {
    pub dim: usize,
    pub sub_len: usize,
    pub bits: u32,
}

impl GroupConfig {
    pub const fn new(dim: usize, sub_len: usize, bits: u32) -> Self {
        Self { dim, sub_len, bits }
    }

    pub fn partitions(&self) -> usize {
        self.dim / self.sub_len
    }

    pub fn codes(&self) -> usize {
        1 << self.bits
    }

    pub fn index_bits(&self) -> u32 {
        self.partitions() as u32 * self.bits
    }

    pub fn validate(&self) -> Result<()> {
        if self.sub_len == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.sub_len) {
            return Err(Error::config(format!(
                "sub-vector length {} must divide dimension {}",
                self.sub_len, self.dim
            )));
        }
        if !(1..=16).contains(&self.bits) {
            return Err(Error::config(format!("codebook bits must be in 1..=16, got {}", self.bits)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum RefitMode {
    /// Each codeword becomes the mean of its assigned sub-vectors.
    ClosedForm,
    /// Gradient descent on the squared error with frozen indices.
    Gradient { steps: usize, lr: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvqConfig {
    pub scale: GroupConfig,
    pub rotation: GroupConfig,
    pub appearance: GroupConfig,
    pub kmeans_iters: usize,
    pub seed: u64,
    pub refit: RefitMode,
}

impl Default for SvqConfig {
    fn default() -> Self {
        Self {
            scale: GroupConfig::new(3, 1, 6),
            rotation: GroupConfig::new(4, 2, 9),
            appearance: GroupConfig::new(6, 2, 10),
            kmeans_iters: 10,
            seed: 0,
            refit: RefitMode::ClosedForm,
        }
    }
}

impl SvqConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, g, dim) in [("scale", self.scale, 3), ("rotation", self.rotation, 4), ("appearance", self.appearance, 6)] {
            if g.dim != dim {
                return Err(Error::config(format!("{name} group must have dimension {dim}, got {}", g.dim)));
            }
            g.validate()?;
        }
        if let RefitMode::Gradient { lr, .. } = self.refit {
            if !(lr > 0.0 && lr <= 0.5) {
                return Err(Error::config(format!("gradient refit step must lie in (0, 0.5], got {lr}")));
            }
        }
        Ok(())
    }

    pub fn index_bits_per_gaussian(&self) -> u32 {
        self.scale.index_bits() + self.rotation.index_bits() + self.appearance.index_bits()
    }
}

/// `codes × sub_len` codewords, values held at half precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub sub_len: usize,
    pub data: Vec<f32>,
}

impl Codebook {
    pub fn codes(&self) -> usize {
        self.data.len() / self.sub_len
    }

    pub fn codeword(&self, j: usize) -> &[f32] {
        &self.data[j * self.sub_len..(j + 1) * self.sub_len]
    }

    pub fn round_to_half(&mut self) {
        for v in &mut self.data {
            *v = f16::from_f32(*v).to_f32();
        }
    }

    pub fn to_half_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| f16::from_f32(*v).to_le_bytes()).collect()
    }

    pub fn from_half_bytes(sub_len: usize, bytes: &[u8]) -> Result<Self> {
        if sub_len == 0 || !bytes.len().is_multiple_of(2 * sub_len) {
            return Err(Error::corrupt("codebook payload has the wrong length"));
        }
        let data = bytes
            .chunks_exact(2)
            .map(|b| f16::from_le_bytes([b[0], b[1]]).to_f32())
            .collect::<Vec<_>>();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::corrupt("codebook contains non-finite values"));
        }
        Ok(Self { sub_len, data })
    }
}

fn dist2(a: &[f64], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - *y as f64).powi(2)).sum()
}

fn nearest(v: &[f64], book: &Codebook) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for j in 0..book.codes() {
        let d = dist2(v, book.codeword(j));
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Mean squared error per vector (summed over the `L` components).
pub fn quantization_mse(vectors: &[f64], sub_len: usize, indices: &[u16], book: &Codebook) -> f64 {
    let n = vectors.len() / sub_len;
    if n == 0 {
        return 0.0;
    }
    let total: f64 = vectors
        .chunks_exact(sub_len)
        .zip(indices)
        .map(|(v, &i)| dist2(v, book.codeword(i as usize)))
        .sum();
    total / n as f64
}

#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub book: Codebook,
    pub indices: Vec<u16>,
    /// MSE after the seeding assignment, then after each Lloyd iteration.
    pub mse_trace: Vec<f64>,
}

fn check_finite(vectors: &[f64]) -> Result<()> {
    if vectors.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("k-means input contains non-finite values".into()));
    }
    Ok(())
}

fn assign_all(vectors: &[f64], book: &Codebook) -> (Vec<u16>, Vec<f64>) {
    vectors
        .par_chunks_exact(book.sub_len)
        .map(|v| {
            let (j, d) = nearest(v, book);
            (j as u16, d)
        })
        .unzip()
}

fn kmeans_pp_seed(vectors: &[f64], l: usize, codes: usize, rng: &mut ChaCha8Rng) -> Codebook {
    let n = vectors.len() / l;
    let mut data: Vec<f32> = Vec::with_capacity(codes * l);
    let first = rng.random_range(0..n);
    data.extend(vectors[first * l..(first + 1) * l].iter().map(|v| *v as f32));
    let mut d2: Vec<f64> = vectors
        .par_chunks_exact(l)
        .map(|v| dist2(v, &data[0..l]))
        .collect();
    let mut chosen = vec![first];
    while data.len() < codes * l {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = d2.iter().rposition(|d| *d > 0.0).unwrap_or(0);
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // Fewer distinct points than codes: repeat earlier choices.
            chosen[(data.len() / l) % chosen.len()]
        };
        chosen.push(pick);
        let start = data.len();
        data.extend(vectors[pick * l..(pick + 1) * l].iter().map(|v| *v as f32));
        let cw = data[start..start + l].to_vec();
        d2.par_iter_mut().zip(vectors.par_chunks_exact(l)).for_each(|(d, v)| {
            let nd = dist2(v, &cw);
            if nd < *d {
                *d = nd;
            }
        });
    }
    Codebook { sub_len: l, data }
}

/// Lloyd's algorithm with k-means++ seeding on `N × L` row-major vectors.
/// Codewords are rounded to half precision after every update.
pub fn kmeans(vectors: &[f64], sub_len: usize, codes: usize, iterations: usize, seed: u64) -> Result<KmeansResult> {
    if sub_len == 0 || !vectors.len().is_multiple_of(sub_len) {
        return Err(Error::DimensionMismatch { expected: sub_len, actual: vectors.len() % sub_len.max(1) });
    }
    let n = vectors.len() / sub_len;
    if n == 0 {
        return Err(Error::InvalidInput("k-means needs at least one vector".into()));
    }
    if codes == 0 {
        return Err(Error::config("codebook must have at least one code"));
    }
    check_finite(vectors)?;
    let l = sub_len;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut book = kmeans_pp_seed(vectors, l, codes, &mut rng);
    book.round_to_half();
    let (mut indices, mut dists) = assign_all(vectors, &book);
    let mut mse_trace = vec![dists.iter().sum::<f64>() / n as f64];

    for _ in 0..iterations {
        let mut sums = vec![0.0f64; codes * l];
        let mut counts = vec![0usize; codes];
        let mut sse_old = vec![0.0f64; codes];
        for (i, v) in vectors.chunks_exact(l).enumerate() {
            let j = indices[i] as usize;
            counts[j] += 1;
            sse_old[j] += dists[i];
            for c in 0..l {
                sums[j * l + c] += v[c];
            }
        }
        let mut next = book.clone();
        for j in 0..codes {
            if counts[j] == 0 {
                continue;
            }
            let mut cw: Vec<f32> = (0..l).map(|c| (sums[j * l + c] / counts[j] as f64) as f32).collect();
            cw.iter_mut().for_each(|v| *v = f16::from_f32(*v).to_f32());
            // Keep the old codeword unless the update actually lowers its cluster error.
            let sse_new: f64 = vectors
                .chunks_exact(l)
                .zip(&indices)
                .filter(|(_, &ix)| ix as usize == j)
                .map(|(v, _)| dist2(v, &cw))
                .sum();
            if sse_new < sse_old[j] {
                next.data[j * l..(j + 1) * l].copy_from_slice(&cw);
            }
        }
        // Empty clusters move onto the points farthest from their codeword.
        let mut far: Vec<usize> = Vec::new();
        let empties: Vec<usize> = (0..codes).filter(|&j| counts[j] == 0).collect();
        if !empties.is_empty() {
            let mut by_dist: Vec<usize> = (0..n).filter(|&i| dists[i] > 0.0).collect();
            by_dist.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
            far.extend(by_dist.into_iter().take(empties.len()));
            for (&j, &i) in empties.iter().zip(&far) {
                for c in 0..l {
                    next.data[j * l + c] = f16::from_f32(vectors[i * l + c] as f32).to_f32();
                }
            }
        }
        book = next;
        let (ni, nd) = assign_all(vectors, &book);
        indices = ni;
        dists = nd;
        mse_trace.push(dists.iter().sum::<f64>() / n as f64);
    }
    Ok(KmeansResult { book, indices, mse_trace })
}

/// Nearest codeword per partition; ties go to the smaller index.
/// `z` is `N × (M·L)` row-major; the result is one index array per partition.
pub fn assign(z: &[f64], dim: usize, books: &[Codebook]) -> Result<Vec<Vec<u16>>> {
    let total: usize = books.iter().map(|b| b.sub_len).sum();
    if total != dim {
        return Err(Error::DimensionMismatch { expected: dim, actual: total });
    }
    if dim == 0 || !z.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch { expected: dim, actual: z.len() % dim.max(1) });
    }
    let mut offset = 0;
    let mut out = Vec::with_capacity(books.len());
    for book in books {
        let l = book.sub_len;
        let idx = z
            .par_chunks_exact(dim)
            .map(|row| nearest(&row[offset..offset + l], book).0 as u16)
            .collect();
        out.push(idx);
        offset += l;
    }
    Ok(out)
}

/// Concatenates the selected codewords; `N × Σ L` row-major.
pub fn dequantize(indices: &[Vec<u16>], books: &[Codebook]) -> Result<Vec<f32>> {
    if indices.len() != books.len() {
        return Err(Error::corrupt("partition count mismatch between indices and codebooks"));
    }
    let n = indices.first().map_or(0, Vec::len);
    if indices.iter().any(|ix| ix.len() != n) {
        return Err(Error::corrupt("index arrays have different lengths"));
    }
    let dim: usize = books.iter().map(|b| b.sub_len).sum();
    let mut out = Vec::with_capacity(n * dim);
    for i in 0..n {
        for (ix, book) in indices.iter().zip(books) {
            let j = ix[i] as usize;
            if j >= book.codes() {
                return Err(Error::corrupt(format!("index {j} out of range for a {}-code book", book.codes())));
            }
            out.extend_from_slice(book.codeword(j));
        }
    }
    Ok(out)
}

/// Refits one partition's codebook with frozen `indices`; unreferenced
/// codewords keep their values.
pub fn refit_codebook(vectors: &[f64], indices: &[u16], book: &Codebook, mode: RefitMode) -> Codebook {
    let l = book.sub_len;
    let codes = book.codes();
    let mut sums = vec![0.0f64; codes * l];
    let mut counts = vec![0usize; codes];
    for (v, &j) in vectors.chunks_exact(l).zip(indices) {
        counts[j as usize] += 1;
        for c in 0..l {
            sums[j as usize * l + c] += v[c];
        }
    }
    let mut out = book.clone();
    for j in 0..codes {
        if counts[j] == 0 {
            continue;
        }
        for c in 0..l {
            let mean = sums[j * l + c] / counts[j] as f64;
            let target = match mode {
                RefitMode::ClosedForm => mean,
                RefitMode::Gradient { steps, lr } => {
                    // d/dc of the per-codeword mean squared error is 2(c − mean).
                    let mut x = book.data[j * l + c] as f64;
                    for _ in 0..steps {
                        x -= lr * 2.0 * (x - mean);
                    }
                    x
                }
            };
            let old = book.data[j * l + c];
            let new = f16::from_f64(target).to_f32();
            // Coordinate-wise, the squared error only depends on |c − mean|.
            if (new as f64 - mean).abs() <= (old as f64 - mean).abs() {
                out.data[j * l + c] = new;
            }
        }
    }
    out
}

/// Applies [`refit_codebook`] to every partition of `z` (`N × dim`).
pub fn refit_codebooks(z: &[f64], dim: usize, indices: &[Vec<u16>], books: &[Codebook], mode: RefitMode) -> Vec<Codebook> {
    let mut offset = 0;
    books
        .iter()
        .zip(indices)
        .map(|(book, ix)| {
            let l = book.sub_len;
            let part: Vec<f64> = z.chunks_exact(dim).flat_map(|row| row[offset..offset + l].iter().copied()).collect();
            offset += l;
            refit_codebook(&part, ix, book, mode)
        })
        .collect()
}

/// Codebooks and per-partition index arrays for one attribute group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCodes {
    pub config: GroupConfig,
    pub books: Vec<Codebook>,
    pub indices: Vec<Vec<u16>>,
}

impl GroupCodes {
    pub fn len(&self) -> usize {
        self.indices.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dequantize(&self) -> Result<Vec<f32>> {
        dequantize(&self.indices, &self.books)
    }

    pub fn select(&self, order: &[usize]) -> Self {
        Self {
            config: self.config,
            books: self.books.clone(),
            indices: self.indices.iter().map(|ix| order.iter().map(|&i| ix[i]).collect()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvqCodebookSet {
    pub scale: GroupCodes,
    pub rotation: GroupCodes,
    pub appearance: GroupCodes,
}

impl SvqCodebookSet {
    pub fn groups(&self) -> [&GroupCodes; 3] {
        [&self.scale, &self.rotation, &self.appearance]
    }

    pub fn select(&self, order: &[usize]) -> Self {
        Self { scale: self.scale.select(order), rotation: self.rotation.select(order), appearance: self.appearance.select(order) }
    }
}

/// Quantizes one group: k-means per partition, assign, frozen-index refit.
pub fn quantize_group(z: &[f64], config: GroupConfig, iters: usize, seed: u64, refit: RefitMode) -> Result<GroupCodes> {
    config.validate()?;
    let dim = config.dim;
    let l = config.sub_len;
    let n = z.len() / dim;
    if n == 0 {
        let books = (0..config.partitions())
            .map(|_| Codebook { sub_len: l, data: vec![0.0; config.codes() * l] })
            .collect();
        return Ok(GroupCodes { config, books, indices: vec![Vec::new(); config.partitions()] });
    }
    let mut books = Vec::with_capacity(config.partitions());
    for m in 0..config.partitions() {
        let part: Vec<f64> = z.chunks_exact(dim).flat_map(|row| row[m * l..(m + 1) * l].iter().copied()).collect();
        let km = kmeans(&part, l, config.codes(), iters, seed.wrapping_add(m as u64))?;
        books.push(km.book);
    }
    let indices = assign(z, dim, &books)?;
    let books = refit_codebooks(z, dim, &indices, &books, refit);
    Ok(GroupCodes { config, books, indices })
}

pub fn scale_vectors(set: &OmgGaussianSet) -> Vec<f64> {
    set.log_scales.iter().flatten().map(|v| *v as f64).collect()
}

pub fn rotation_vectors(set: &OmgGaussianSet) -> Vec<f64> {
    set.rotations
        .iter()
        .flat_map(|q| canonical_quaternion(normalize_quaternion(*q).unwrap_or([1.0, 0.0, 0.0, 0.0])))
        .map(|v| v as f64)
        .collect()
}

pub fn appearance_vectors(set: &OmgGaussianSet) -> Vec<f64> {
    set.static_features
        .iter()
        .zip(&set.view_features)
        .flat_map(|(t, v)| t.iter().chain(v.iter()).map(|x| *x as f64).collect::<Vec<_>>())
        .collect()
}

/// Replaces scale, rotation and appearance attributes by their dequantized values.
pub fn apply_codes(set: &mut OmgGaussianSet, codes: &SvqCodebookSet) -> Result<()> {
    let n = set.len();
    for g in codes.groups() {
        if g.len() != n {
            return Err(Error::corrupt(format!("index stream covers {} Gaussians, scene has {n}", g.len())));
        }
    }
    let s = codes.scale.dequantize()?;
    let r = codes.rotation.dequantize()?;
    let a = codes.appearance.dequantize()?;
    for i in 0..n {
        set.log_scales[i].copy_from_slice(&s[3 * i..3 * i + 3]);
        let q = [r[4 * i], r[4 * i + 1], r[4 * i + 2], r[4 * i + 3]];
        set.rotations[i] = normalize_quaternion(q).unwrap_or([1.0, 0.0, 0.0, 0.0]);
        set.static_features[i].copy_from_slice(&a[6 * i..6 * i + 3]);
        set.view_features[i].copy_from_slice(&a[6 * i + 3..6 * i + 6]);
    }
    Ok(())
}

/// Quantizes scale (log domain), rotation (canonical sign) and `cat(T, V)`.
pub fn quantize_attributes(set: &OmgGaussianSet, config: &SvqConfig) -> Result<(OmgGaussianSet, SvqCodebookSet)> {
    config.validate()?;
    let q = |z: Vec<f64>, g: GroupConfig, salt: u64| {
        quantize_group(&z, g, config.kmeans_iters, config.seed.wrapping_mul(31).wrapping_add(salt), config.refit)
    };
    let codes = SvqCodebookSet {
        scale: q(scale_vectors(set), config.scale, 0x100)?,
        rotation: q(rotation_vectors(set), config.rotation, 0x200)?,
        appearance: q(appearance_vectors(set), config.appearance, 0x300)?,
    };
    let mut out = set.clone();
    apply_codes(&mut out, &codes)?;
    Ok((out, codes))
}
