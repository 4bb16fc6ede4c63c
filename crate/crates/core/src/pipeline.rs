//! End-to-end encoding and decoding.
//!
//! Encoding runs: distillation, 16-bit position quantization, optional
//! importance pruning on the decoded scene, Morton reordering, sub-vector
//! quantization (or raw attributes), half-precision field weights, packing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::container::{
    self, header_bytes, streams, xz_compress, Attributes, ContainerConfig, RawAttributes, SceneParts,
    POSITION_CODEC_MORTON_DELTA,
};
use crate::codec::positions::{dequantize_positions, grid_order, quantize_positions};
use crate::error::{Error, Result};
use crate::field::{distill_fit, export_decoded, DistillConfig, DistillResult, FieldWeights};
use crate::importance::{self, ImportanceReport};
use crate::model::{canonical_quaternion, normalize_quaternion, Camera, OmgGaussianSet, SourceGaussianSet};
use crate::raster::{render_with_stats, RenderOptions};
use crate::svq::{apply_codes, quantize_attributes, SvqConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Xs,
    S,
    M,
    L,
    Xl,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Xs, Preset::S, Preset::M, Preset::L, Preset::Xl];

    pub fn tau(self) -> f64 {
        match self {
            Preset::Xs => 0.96,
            Preset::S => 0.98,
            Preset::M => 0.99,
            Preset::L => 0.999,
            Preset::Xl => 0.9999,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Xs => "xs",
            Preset::S => "s",
            Preset::M => "m",
            Preset::L => "l",
            Preset::Xl => "xl",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown preset `{s}` (expected xs, s, m, l or xl)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub preset: Option<Preset>,
    /// Overrides the preset when set.
    pub tau: Option<f64>,
    pub prune: bool,
    pub lambda: f64,
    pub k: usize,
    pub svq_enabled: bool,
    pub svq: SvqConfig,
    pub distill: DistillConfig,
    /// Seeds distillation and k-means.
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            preset: None,
            tau: None,
            prune: true,
            lambda: 0.5,
            k: 8,
            svq_enabled: true,
            svq: SvqConfig::default(),
            distill: DistillConfig::default(),
            seed: 0,
            threads: None,
        }
    }
}

impl PipelineConfig {
    pub const DEFAULT_PRESET: Preset = Preset::M;

    pub fn effective_tau(&self) -> f64 {
        self.tau.unwrap_or_else(|| self.preset.unwrap_or(Self::DEFAULT_PRESET).tau())
    }

    /// Copies the top-level seed into the stage configs and fills in τ.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.tau = Some(self.effective_tau());
        c.distill.seed = self.seed;
        c.svq.seed = self.seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        importance::validate_tau(self.effective_tau())?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config(format!("λ must be finite and non-negative, got {}", self.lambda)));
        }
        if self.k == 0 || self.k > u32::MAX as usize {
            return Err(Error::config("K must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(Error::config("thread count must be at least 1"));
        }
        self.svq.validate()?;
        self.distill.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config file line {}: {e}", e.line())))
    }
}

pub struct EncodeOutput {
    pub file: Vec<u8>,
    pub parts: SceneParts,
    /// What a decoder reconstructs from `file`, in stream order.
    pub decoded: OmgGaussianSet,
    pub importance: Option<ImportanceReport>,
    pub report: SizeReport,
}

pub fn distill(source: &SourceGaussianSet, config: &PipelineConfig) -> Result<DistillResult> {
    let cfg = config.resolved();
    cfg.validate()?;
    distill_fit(source, &cfg.distill)
}

/// Everything after distillation.
pub fn compress_distilled(distilled: &OmgGaussianSet, cameras: &[Camera], config: &PipelineConfig) -> Result<EncodeOutput> {
    let cfg = config.resolved();
    cfg.validate()?;
    if distilled.field.arch != cfg.distill.arch {
        return Err(Error::config("distilled field architecture differs from the configured one"));
    }
    let aabb = distilled.field.aabb;
    let q = quantize_positions(&distilled.positions, &aabb)?;
    let mut set = distilled.clone();
    set.positions = dequantize_positions(&q, &aabb);

    let tau = cfg.effective_tau();
    let importance = if cfg.prune {
        if cameras.is_empty() {
            return Err(Error::config("pruning needs at least one camera (or disable pruning)"));
        }
        let decoded = export_decoded(&set);
        let (_, stats) = render_with_stats(&decoded, cameras, &RenderOptions::default());
        Some(importance::score(&stats, &set.positions, &set.static_features, cfg.lambda, cfg.k, tau)?)
    } else {
        None
    };
    let keep: Vec<usize> = match &importance {
        Some(r) => (0..set.len()).filter(|&i| r.keep_mask[i]).collect(),
        None => (0..set.len()).collect(),
    };

    let q_kept: Vec<[u16; 3]> = keep.iter().map(|&i| q[i]).collect();
    let stream_index: Vec<usize> = grid_order(&q_kept).into_iter().map(|k| keep[k]).collect();
    let sorted = set.select(&stream_index);
    let positions: Vec<[u16; 3]> = stream_index.iter().map(|&i| q[i]).collect();

    let attributes = if cfg.svq_enabled {
        let (_, codes) = quantize_attributes(&sorted, &cfg.svq)?;
        Attributes::Svq(codes)
    } else {
        Attributes::Raw(RawAttributes {
            log_scales: sorted.log_scales.clone(),
            rotations: sorted.rotations.clone(),
            appearance: sorted
                .static_features
                .iter()
                .zip(&sorted.view_features)
                .map(|(t, v)| [t[0], t[1], t[2], v[0], v[1], v[2]])
                .collect(),
        })
    };
    let mut field = distilled.field.clone();
    field.round_to_half();

    // Thread count never changes the output, so it stays out of the file.
    let provenance = serde_json::json!({
        "config": PipelineConfig { threads: None, ..cfg.clone() },
        "source_gaussians": distilled.len(),
        "kept_gaussians": keep.len(),
    });
    let parts = SceneParts {
        aabb,
        config: ContainerConfig {
            position_codec: POSITION_CODEC_MORTON_DELTA,
            svq: cfg.svq_enabled.then_some([cfg.svq.scale, cfg.svq.rotation, cfg.svq.appearance]),
            kmeans_iters: cfg.svq.kmeans_iters as u32,
            lambda: cfg.lambda,
            k: cfg.k as u32,
            tau: cfg.prune.then_some(tau),
            arch: cfg.distill.arch,
            seed: cfg.seed,
        },
        positions,
        attributes,
        field,
        provenance: serde_json::to_string(&provenance).expect("provenance serializes"),
    };
    let file = container::pack(&parts)?;
    let decoded = parts_to_set(&parts)?;
    let report = size_report_for(&parts, file.len())?;
    Ok(EncodeOutput { file, parts, decoded, importance, report })
}

/// Distills `source` and compresses the result.
pub fn encode_scene(source: &SourceGaussianSet, cameras: &[Camera], config: &PipelineConfig) -> Result<EncodeOutput> {
    let distilled = distill(source, config)?;
    compress_distilled(&distilled.set, cameras, config)
}

/// Rebuilds the compact scene from unpacked container parts.
pub fn parts_to_set(parts: &SceneParts) -> Result<OmgGaussianSet> {
    let n = parts.len();
    let mut set = OmgGaussianSet {
        positions: dequantize_positions(&parts.positions, &parts.aabb),
        log_scales: vec![[0.0; 3]; n],
        rotations: vec![[1.0, 0.0, 0.0, 0.0]; n],
        static_features: vec![[0.0; 3]; n],
        view_features: vec![[0.0; 3]; n],
        field: parts.field.clone(),
    };
    match &parts.attributes {
        Attributes::Svq(codes) => apply_codes(&mut set, codes)?,
        Attributes::Raw(raw) => {
            set.log_scales.clone_from(&raw.log_scales);
            set.rotations.clone_from(&raw.rotations);
            for (i, a) in raw.appearance.iter().enumerate() {
                set.static_features[i] = [a[0], a[1], a[2]];
                set.view_features[i] = [a[3], a[4], a[5]];
            }
        }
    }
    Ok(set)
}

pub fn decode_scene(file: &[u8]) -> Result<OmgGaussianSet> {
    parts_to_set(&container::unpack(file)?)
}

/// Canonical-sign unit quaternions, the form rotations are quantized in.
pub fn canonical_rotations(rotations: &[[f32; 4]]) -> Vec<[f32; 4]> {
    rotations
        .iter()
        .map(|q| canonical_quaternion(normalize_quaternion(*q).unwrap_or([1.0, 0.0, 0.0, 0.0])))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentSize {
    pub name: String,
    /// Fixed-width bits per Gaussian before entropy coding.
    pub bits_per_gaussian: u32,
    /// Serialized stream bytes (tables and codebooks included) before xz.
    pub stream_bytes: usize,
    /// Size of the component's streams compressed on their own with xz.
    pub compressed_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeReport {
    pub gaussians: u64,
    pub svq: bool,
    /// Position, Scale, Rotation, Appearance, MLPs.
    pub components: Vec<ComponentSize>,
    pub index_bits_per_gaussian: u32,
    pub header_bytes: usize,
    pub payload_bytes: usize,
    pub file_bytes: usize,
}

pub const COMPONENT_NAMES: [&str; 5] = ["Position", "Scale", "Rotation", "Appearance", "MLPs"];

fn component_of(id: u8) -> Option<usize> {
    match id {
        0x01 => Some(0),
        0x10..=0x1F => Some(1),
        0x20..=0x2F => Some(2),
        0x30..=0x3F => Some(3),
        0x50 => Some(4),
        _ => None,
    }
}

fn size_report_for(parts: &SceneParts, file_bytes: usize) -> Result<SizeReport> {
    let mut buckets: Vec<Vec<u8>> = vec![Vec::new(); COMPONENT_NAMES.len()];
    let mut payload_bytes = header_bytes(parts).len() + 4;
    for (id, data) in streams(parts)? {
        payload_bytes += 9 + data.len();
        if let Some(c) = component_of(id) {
            buckets[c].extend_from_slice(&data);
        }
    }
    let bits = match parts.config.svq {
        Some([s, r, a]) => [48, s.index_bits(), r.index_bits(), a.index_bits(), 0],
        None => [48, 96, 128, 192, 0],
    };
    let components = COMPONENT_NAMES
        .iter()
        .zip(buckets)
        .zip(bits)
        .map(|((name, data), bits)| {
            Ok(ComponentSize {
                name: name.to_string(),
                bits_per_gaussian: bits,
                stream_bytes: data.len(),
                compressed_bytes: xz_compress(&data)?.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SizeReport {
        gaussians: parts.len() as u64,
        svq: parts.config.svq.is_some(),
        index_bits_per_gaussian: bits.iter().sum(),
        components,
        header_bytes: header_bytes(parts).len(),
        payload_bytes,
        file_bytes,
    })
}

/// Size breakdown of an encoded file.
pub fn size_report(file: &[u8]) -> Result<SizeReport> {
    size_report_for(&container::unpack(file)?, file.len())
}

impl SizeReport {
    pub fn component(&self, name: &str) -> Option<&ComponentSize> {
        self.components.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mb = |b: usize| b as f64 / 1e6;
        let mut s = format!(
            "{:<11} {:>8} {:>14} {:>14} {:>10}\n",
            "component", "bits/G", "stream bytes", "xz bytes", "xz MB"
        );
        for c in &self.components {
            s += &format!(
                "{:<11} {:>8} {:>14} {:>14} {:>10.4}\n",
                c.name, c.bits_per_gaussian, c.stream_bytes, c.compressed_bytes, mb(c.compressed_bytes)
            );
        }
        s += &format!("{:<11} {:>8}\n", "total", self.index_bits_per_gaussian);
        s += &format!(
            "gaussians {}  svq {}  header {} B  payload {} B  file {} B ({:.4} MB)\n",
            self.gaussians,
            if self.svq { "on" } else { "off" },
            self.header_bytes,
            self.payload_bytes,
            self.file_bytes,
            mb(self.file_bytes)
        );
        s
    }
}

/// Field weights as the container stores them.
pub fn stored_field(field: &FieldWeights) -> FieldWeights {
    let mut f = field.clone();
    f.round_to_half();
    f
}
