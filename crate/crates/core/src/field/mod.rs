//! Appearance field.
//!
//! Each Gaussian carries a 3-dim static feature `T` and a 3-dim view feature
//! `V`. A space feature `F = MLP_s(γ(p))` is computed from the normalized
//! center, and four small MLPs decode
//!
//! - `h_dc   = MLP_t(cat(T, F))`
//! - `o      = sigmoid(MLP_o(cat(T, F)))`
//! - `h_rest = MLP_v(cat(V, F))`
//!
//! Hidden layers use ReLU, outputs are linear.

mod distill;
mod mlp;

pub use distill::{
    distill_fit, DistillConfig, DistillProblem, DistillResult, DistillState, LossCheckpoint,
    LossWeights,
};
pub use mlp::{Dense, Mlp};

use half::f16;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Aabb, OmgGaussianSet, SourceGaussianSet, SH_REST};

/// Storage budget for all four MLPs at half precision.
pub const FIELD_BUDGET_BYTES: usize = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldArch {
    pub pe_frequencies: usize,
    pub space_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl Default for FieldArch {
    fn default() -> Self {
        Self { pe_frequencies: 6, space_dim: 16, hidden_width: 32, hidden_layers: 1 }
    }
}

impl FieldArch {
    pub fn encoding_dim(&self) -> usize {
        3 + 6 * self.pe_frequencies
    }

    fn dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        d.push(output);
        d
    }

    pub fn space_dims(&self) -> Vec<usize> {
        self.dims(self.encoding_dim(), self.space_dim)
    }

    pub fn static_dims(&self) -> Vec<usize> {
        self.dims(3 + self.space_dim, 3)
    }

    pub fn opacity_dims(&self) -> Vec<usize> {
        self.dims(3 + self.space_dim, 1)
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.dims(3 + self.space_dim, SH_REST)
    }

    pub fn param_count(&self) -> usize {
        [self.space_dims(), self.static_dims(), self.opacity_dims(), self.view_dims()]
            .iter()
            .map(|d| Mlp::param_count_for(d))
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.space_dim == 0 || self.pe_frequencies > 20 {
            return Err(Error::config("field: space_dim must be ≥ 1 and pe_frequencies ≤ 20"));
        }
        if self.hidden_layers > 0 && self.hidden_width == 0 {
            return Err(Error::config("field: hidden_width must be ≥ 1"));
        }
        for v in [self.pe_frequencies, self.space_dim, self.hidden_width, self.hidden_layers] {
            if v > u8::MAX as usize {
                return Err(Error::config("field: architecture dimensions must fit in a byte"));
            }
        }
        Ok(())
    }
}

/// `[p, sin(2⁰πp), cos(2⁰πp), …, sin(2^{F-1}πp), cos(2^{F-1}πp)]` for a
/// position already normalized to `[-1, 1]³`.
pub fn positional_encoding(p: [f64; 3], frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 + 6 * frequencies);
    out.extend_from_slice(&p);
    let mut scale = std::f64::consts::PI;
    for _ in 0..frequencies {
        out.extend(p.iter().map(|v| (scale * v).sin()));
        out.extend(p.iter().map(|v| (scale * v).cos()));
        scale *= 2.0;
    }
    out
}

/// Decoded appearance for one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Appearance {
    pub sh_dc: [f64; 3],
    pub opacity: f64,
    pub sh_rest: [f64; SH_REST],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldWeights {
    pub arch: FieldArch,
    /// Bounds used to normalize positions before encoding.
    pub aabb: Aabb,
    pub space: Mlp,
    pub static_color: Mlp,
    pub opacity: Mlp,
    pub view: Mlp,
}

impl FieldWeights {
    pub fn zeros(arch: FieldArch, aabb: Aabb) -> Self {
        Self {
            arch,
            aabb,
            space: Mlp::zeros(&arch.space_dims()),
            static_color: Mlp::zeros(&arch.static_dims()),
            opacity: Mlp::zeros(&arch.opacity_dims()),
            view: Mlp::zeros(&arch.view_dims()),
        }
    }

    pub fn random(arch: FieldArch, aabb: Aabb, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            arch,
            aabb,
            space: Mlp::random(&arch.space_dims(), &mut rng),
            static_color: Mlp::random(&arch.static_dims(), &mut rng),
            opacity: Mlp::random(&arch.opacity_dims(), &mut rng),
            view: Mlp::random(&arch.view_dims(), &mut rng),
        }
    }

    fn mlps(&self) -> [&Mlp; 4] {
        [&self.space, &self.static_color, &self.opacity, &self.view]
    }

    fn mlps_mut(&mut self) -> [&mut Mlp; 4] {
        [&mut self.space, &mut self.static_color, &mut self.opacity, &mut self.view]
    }

    pub fn param_count(&self) -> usize {
        self.mlps().iter().map(|m| m.param_count()).sum()
    }

    /// Parameters in serialization order: space, static, opacity, view; each
    /// MLP layer by layer, weights (row-major, out × in) then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for m in self.mlps() {
            m.flatten_into(&mut out);
        }
        out
    }

    pub fn load_flat(&mut self, params: &[f64]) {
        let mut offset = 0;
        for m in self.mlps_mut() {
            offset += m.load_flat(&params[offset..]);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }

    pub fn half_size_bytes(&self) -> usize {
        2 * self.param_count()
    }

    /// Rounds every parameter to the nearest half-precision value.
    pub fn round_to_half(&mut self) {
        let flat: Vec<f64> = self.flatten().iter().map(|&v| f16::from_f64(v).to_f64()).collect();
        self.load_flat(&flat);
    }

    pub fn to_half_bytes(&self) -> Vec<u8> {
        self.flatten().iter().flat_map(|&v| f16::from_f64(v).to_le_bytes()).collect()
    }

    pub fn from_half_bytes(arch: FieldArch, aabb: Aabb, bytes: &[u8]) -> Result<Self> {
        let mut w = Self::zeros(arch, aabb);
        let n = w.param_count();
        if bytes.len() != 2 * n {
            return Err(Error::corrupt(format!(
                "field weights: expected {} bytes, got {}",
                2 * n,
                bytes.len()
            )));
        }
        let flat: Vec<f64> = bytes
            .chunks_exact(2)
            .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f64())
            .collect();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::corrupt("field weights contain non-finite values"));
        }
        w.load_flat(&flat);
        Ok(w)
    }

    pub fn encode_position(&self, p: [f32; 3]) -> Vec<f64> {
        positional_encoding(self.aabb.normalize(p), self.arch.pe_frequencies)
    }

    /// `F = MLP_s(γ(p))` for a world-space position.
    pub fn space_feature(&self, p: [f32; 3]) -> Vec<f64> {
        self.space.forward(&self.encode_position(p))
    }

    pub fn decode_point(&self, p: [f32; 3], static_feature: [f32; 3], view_feature: [f32; 3]) -> Appearance {
        let f = self.space_feature(p);
        let mut input = Vec::with_capacity(3 + f.len());
        input.extend(static_feature.iter().map(|&v| v as f64));
        input.extend_from_slice(&f);
        let dc = self.static_color.forward(&input);
        let raw_opacity = self.opacity.forward(&input)[0];
        input[..3].iter_mut().zip(view_feature).for_each(|(d, v)| *d = v as f64);
        let rest = self.view.forward(&input);
        Appearance {
            sh_dc: [dc[0], dc[1], dc[2]],
            opacity: crate::model::sigmoid(raw_opacity),
            sh_rest: rest.try_into().expect("view MLP emits 45 outputs"),
        }
    }
}

/// Decodes the appearance of Gaussian `n`.
pub fn decode(set: &OmgGaussianSet, n: usize) -> Appearance {
    set.field.decode_point(set.positions[n], set.static_features[n], set.view_features[n])
}

/// Materializes the field outputs so the compact set can be rendered or
/// written as an ordinary 3DGS scene. Geometry is copied through.
pub fn export_decoded(set: &OmgGaussianSet) -> SourceGaussianSet {
    let decoded: Vec<Appearance> = (0..set.len()).into_par_iter().map(|n| decode(set, n)).collect();
    SourceGaussianSet {
        positions: set.positions.clone(),
        log_scales: set.log_scales.clone(),
        rotations: set.rotations.clone(),
        opacities: decoded.iter().map(|a| a.opacity).collect(),
        sh_dc: decoded.iter().map(|a| a.sh_dc.map(|v| v as f32)).collect(),
        sh_rest: decoded.iter().map(|a| a.sh_rest.map(|v| v as f32)).collect(),
    }
}
