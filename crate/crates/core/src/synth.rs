//! Deterministic synthetic scenes: Gaussians clustered on ellipsoidal shells,
//! with colour, opacity and view-dependent terms that vary smoothly in space,
//! viewed by a ring of cameras.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Camera, SourceGaussianSet, SH_REST};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub gaussians: usize,
    pub seed: u64,
    pub clusters: usize,
    pub cameras: usize,
    pub width: u32,
    pub height: u32,
    /// Vertical field of view in degrees.
    pub fov_y: f64,
    /// Camera ring radius; the scene occupies roughly `[-1, 1]³`.
    pub radius: f64,
    /// Typical Gaussian standard deviation in world units.
    pub mean_scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { gaussians: 10_000, seed: 0, clusters: 24, cameras: 8, width: 256, height: 256, fov_y: 50.0, radius: 3.2, mean_scale: 0.015 }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.cameras == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::config("synth: clusters, cameras and image size must be ≥ 1"));
        }
        if !(self.fov_y > 0.0 && self.fov_y < 180.0 && self.radius > 0.0 && self.mean_scale > 0.0) {
            return Err(Error::config("synth: fov must be in (0, 180) degrees, radius and scale positive"));
        }
        Ok(())
    }
}

// Smooth colour field over space.
fn color_field(p: [f64; 3], phase: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|c| {
        let k = 1.3 + 0.4 * c as f64;
        0.9 * (k * p[0] + phase[c]).sin() * (k * p[1] - phase[(c + 1) % 3]).cos() + 0.5 * (k * p[2] + phase[(c + 2) % 3]).sin()
    })
}

fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

// Rotation taking +z onto the unit vector `n`.
fn align_z(n: [f64; 3]) -> [f64; 4] {
    if n[2] < -1.0 + 1e-9 {
        return [0.0, 1.0, 0.0, 0.0];
    }
    let q = [1.0 + n[2], -n[1], n[0], 0.0];
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / norm)
}

/// Gaussians lying on a set of ellipsoidal shells, flattened along the
/// surface normal. Deterministic for a given spec.
pub fn synth_scene(spec: &SynthSpec) -> Result<SourceGaussianSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phase: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
    let shells: Vec<([f64; 3], [f64; 3])> = (0..spec.clusters)
        .map(|_| {
            let c = std::array::from_fn(|_| rng.random_range(-0.8..0.8));
            let r = rng.random_range(0.12..0.35);
            (c, std::array::from_fn(|_| r * rng.random_range(0.7..1.3)))
        })
        .collect();
    // Pick shells in proportion to their (approximate) area.
    let area: Vec<f64> = shells.iter().map(|(_, r)| r[0] * r[1] + r[1] * r[2] + r[0] * r[2]).collect();
    let total_area: f64 = area.iter().sum();
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut set = SourceGaussianSet::with_capacity(spec.gaussians);
    for _ in 0..spec.gaussians {
        let mut t = rng.random::<f64>() * total_area;
        let mut k = 0;
        while k + 1 < shells.len() && t >= area[k] {
            t -= area[k];
            k += 1;
        }
        let (c, r) = shells[k];
        let u: [f64; 3] = UnitSphere.sample(&mut rng);
        let normal_raw: [f64; 3] = std::array::from_fn(|a| u[a] / r[a]);
        let nn = normal_raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let normal = normal_raw.map(|v| v / nn);
        let jitter = 0.004 * std.sample(&mut rng);
        let p: [f64; 3] = std::array::from_fn(|a| c[a] + r[a] * u[a] + jitter * normal[a]);
        set.positions.push(p.map(|v| v as f32));

        let large = if rng.random::<f64>() < 0.1 { 2.0f64.ln() } else { 0.0 };
        let base = spec.mean_scale.ln() + large + rng.random_range(-0.3..0.3);
        let sx = base + 0.2 * std.sample(&mut rng);
        let sy = base + 0.2 * std.sample(&mut rng);
        let sz = base + 0.25f64.ln() + 0.2 * std.sample(&mut rng);
        set.log_scales.push([sx as f32, sy as f32, sz as f32]);

        let spin = rng.random_range(0.0..PI);
        let q = quat_mul(align_z(normal), [spin.cos(), 0.0, 0.0, spin.sin()]);
        set.rotations.push(q.map(|v| v as f32));

        let o = 0.6 + 0.3 * (2.1 * p[0] - 1.7 * p[2] + phase[0]).sin() + 0.02 * std.sample(&mut rng);
        set.opacities.push(o.clamp(0.05, 0.98));

        let col = color_field(p, phase);
        set.sh_dc.push(col.map(|v| (v + 0.03 * std.sample(&mut rng)) as f32));

        let mut rest = [0f32; SH_REST];
        for (k, r) in rest.iter_mut().enumerate() {
            let degree_falloff = if k % 15 < 3 { 0.12 } else if k % 15 < 8 { 0.05 } else { 0.02 };
            let f = ((0.8 + 0.15 * (k % 7) as f64) * p[k % 3] + phase[k % 3] + k as f64).sin();
            *r = (degree_falloff * f) as f32;
        }
        set.sh_rest.push(rest);
    }
    Ok(set)
}

/// A ring of cameras around the origin, slightly above the equator.
pub fn ring_cameras(spec: &SynthSpec) -> Result<Vec<Camera>> {
    spec.validate()?;
    (0..spec.cameras)
        .map(|i| {
            let theta = 2.0 * PI * i as f64 / spec.cameras as f64;
            let elev: f64 = 0.35 * if i % 2 == 0 { 1.0 } else { -0.6 };
            let r = spec.radius;
            let eye = [r * theta.cos() * elev.cos(), r * elev.sin(), r * theta.sin() * elev.cos()];
            Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], spec.fov_y.to_radians(), spec.width, spec.height)
        })
        .collect()
}
