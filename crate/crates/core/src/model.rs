//! Scene containers and the geometric primitives shared by every stage:
//! covariance construction, spherical-harmonic color evaluation, quaternion
//! handling, cameras and axis-aligned bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldWeights;

/// Number of spherical-harmonic coefficients per color channel above degree 0.
pub const SH_REST_PER_CHANNEL: usize = 15;
/// Length of the view-dependent SH block (3 channels, channel-major).
pub const SH_REST: usize = 3 * SH_REST_PER_CHANNEL;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// A raw Gaussian splatting scene as produced by a standard 3DGS trainer.
///
/// Opacities are held in `[0, 1]` as `f64` (the PLY logits are converted on
/// load; double precision keeps that conversion invertible) and
/// `sh_rest` uses the reference channel-major layout: coefficients 1..=15 of
/// red, then green, then blue.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SourceGaussianSet {
    pub positions: Vec<[f32; 3]>,
    pub log_scales: Vec<[f32; 3]>,
    pub rotations: Vec<[f32; 4]>,
    pub opacities: Vec<f64>,
    pub sh_dc: Vec<[f32; 3]>,
    pub sh_rest: Vec<[f32; SH_REST]>,
}

impl SourceGaussianSet {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            positions: Vec::with_capacity(n),
            log_scales: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            opacities: Vec::with_capacity(n),
            sh_dc: Vec::with_capacity(n),
            sh_rest: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Checks array lengths, finiteness, opacity range and quaternion norms.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for (name, len) in [
            ("log_scales", self.log_scales.len()),
            ("rotations", self.rotations.len()),
            ("opacities", self.opacities.len()),
            ("sh_dc", self.sh_dc.len()),
            ("sh_rest", self.sh_rest.len()),
        ] {
            if len != n {
                return Err(Error::InvalidInput(format!(
                    "{name} has {len} entries, expected {n}"
                )));
            }
        }
        for i in 0..n {
            let finite = self.positions[i].iter().all(|v| v.is_finite())
                && self.log_scales[i].iter().all(|v| v.is_finite())
                && self.rotations[i].iter().all(|v| v.is_finite())
                && self.sh_dc[i].iter().all(|v| v.is_finite())
                && self.sh_rest[i].iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::InvalidInput(format!("gaussian {i} has non-finite attributes")));
            }
            let o = self.opacities[i];
            if !(0.0..=1.0).contains(&o) {
                return Err(Error::InvalidInput(format!("gaussian {i} opacity {o} outside [0, 1]")));
            }
            if quat_norm(self.rotations[i]) == 0.0 {
                return Err(Error::InvalidInput(format!("gaussian {i} has a zero quaternion")));
            }
        }
        Ok(())
    }

    /// Keeps the Gaussians at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            log_scales: indices.iter().map(|&i| self.log_scales[i]).collect(),
            rotations: indices.iter().map(|&i| self.rotations[i]).collect(),
            opacities: indices.iter().map(|&i| self.opacities[i]).collect(),
            sh_dc: indices.iter().map(|&i| self.sh_dc[i]).collect(),
            sh_rest: indices.iter().map(|&i| self.sh_rest[i]).collect(),
        }
    }
}

/// The compact representation: geometry plus per-Gaussian static (`T`) and
/// view-dependent (`V`) appearance features, decoded through a shared field.
/// No opacity or SH is stored per Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct OmgGaussianSet {
    pub positions: Vec<[f32; 3]>,
    pub log_scales: Vec<[f32; 3]>,
    pub rotations: Vec<[f32; 4]>,
    pub static_features: Vec<[f32; 3]>,
    pub view_features: Vec<[f32; 3]>,
    pub field: FieldWeights,
}

impl OmgGaussianSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            log_scales: indices.iter().map(|&i| self.log_scales[i]).collect(),
            rotations: indices.iter().map(|&i| self.rotations[i]).collect(),
            static_features: indices.iter().map(|&i| self.static_features[i]).collect(),
            view_features: indices.iter().map(|&i| self.view_features[i]).collect(),
            field: self.field.clone(),
        }
    }
}

/// Axis-aligned bounding box, kept in single precision because that is how
/// it travels in the container header.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f32; 3],
    pub max: [f32; 3],
}

impl Aabb {
    /// Tight bounds of `points`; the unit cube around the origin when empty.
    pub fn from_points(points: &[[f32; 3]]) -> Self {
        if points.is_empty() {
            return Self { min: [-1.0; 3], max: [1.0; 3] };
        }
        let mut min = [f32::INFINITY; 3];
        let mut max = [f32::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        Self { min, max }
    }

    pub fn extent(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.max[a] as f64 - self.min[a] as f64)
    }

    pub fn contains(&self, p: [f32; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Maps `p` into `[-1, 1]³`. Degenerate axes map to 0.
    pub fn normalize(&self, p: [f32; 3]) -> [f64; 3] {
        let ext = self.extent();
        std::array::from_fn(|a| {
            if ext[a] > 0.0 {
                let t = 2.0 * (p[a] as f64 - self.min[a] as f64) / ext[a] - 1.0;
                t.clamp(-1.0, 1.0)
            } else {
                0.0
            }
        })
    }
}

/// Pinhole camera with a world-to-camera rigid transform. Camera space looks
/// down +z with +y pointing down the image, matching the 3DGS convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major world-to-camera rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub width: u32,
    pub height: u32,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy, rotation, translation, width, height };
        cam.validate()?;
        Ok(cam)
    }

    /// Builds a camera from a (w, x, y, z) world-to-camera quaternion, which
    /// is normalized first.
    #[allow(clippy::too_many_arguments)]
    pub fn from_quaternion(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        quaternion: [f64; 4],
        translation: [f64; 3],
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let rotation = quat_to_matrix(quaternion)
            .ok_or_else(|| Error::InvalidInput("camera quaternion has zero norm".into()))?;
        Self::new(fx, fy, cx, cy, rotation, translation, width, height)
    }

    /// A camera at `eye` looking at `target`. `up` is a world-space hint.
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        fov_y: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let forward = normalize3(sub3(target, eye))
            .ok_or_else(|| Error::InvalidInput("camera eye equals target".into()))?;
        // Image y points down, so the camera's y axis is the negated up vector.
        let right = normalize3(cross3(forward, up))
            .ok_or_else(|| Error::InvalidInput("camera up vector parallel to view".into()))?;
        let down = cross3(forward, right);
        let rotation = [right, down, forward];
        let translation = std::array::from_fn(|r| -dot3(rotation[r], eye));
        let fy = 0.5 * height as f64 / (0.5 * fov_y).tan();
        Self::new(
            fy,
            fy,
            0.5 * width as f64,
            0.5 * height as f64,
            rotation,
            translation,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("camera image size must be at least 1x1".into()));
        }
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidInput("camera intrinsics must be finite and positive".into()));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let d = dot3(r[i], r[j]);
                let expected = if i == j { 1.0 } else { 0.0 };
                if (d - expected).abs() > 1e-6 {
                    return Err(Error::InvalidInput("camera rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|r| dot3(self.rotation[r], p) + self.translation[r])
    }

    /// Camera center in world space, `-Rᵀ t`.
    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|c| -(0..3).map(|r| self.rotation[r][c] * self.translation[r]).sum::<f64>())
    }

    /// Unit (w, x, y, z) quaternion of the rotation, w ≥ 0.
    pub fn quaternion(&self) -> [f64; 4] {
        matrix_to_quat(&self.rotation)
    }
}

fn quat_norm(q: [f32; 4]) -> f64 {
    q.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

/// Rotation matrix of a (w, x, y, z) quaternion after normalization; `None`
/// for the zero quaternion.
pub fn quat_to_matrix(q: [f64; 4]) -> Option<[[f64; 3]; 3]> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    let [w, x, y, z] = q.map(|v| v / n);
    Some([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])
}

fn matrix_to_quat(m: &[[f64; 3]; 3]) -> [f64; 4] {
    let trace = m[0][0] + m[1][1] + m[2][2];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        [0.25 * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s]
    } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
        let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
        [(m[2][1] - m[1][2]) / s, 0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s]
    } else if m[1][1] > m[2][2] {
        let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
        [(m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s]
    } else {
        let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
        [(m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s]
    };
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sign = if q[0] < 0.0 { -1.0 } else { 1.0 };
    q.map(|v| sign * v / n)
}

/// Σ = R · diag(exp(log_scale))² · Rᵀ for the normalized quaternion.
pub fn build_covariance(log_scale: [f64; 3], rotation: [f64; 4]) -> Result<[[f64; 3]; 3]> {
    let r = quat_to_matrix(rotation)
        .ok_or_else(|| Error::InvalidInput("zero-norm quaternion".into()))?;
    let s2 = log_scale.map(|l| (2.0 * l).exp());
    let mut cov = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let v = (0..3).map(|k| r[i][k] * s2[k] * r[j][k]).sum::<f64>();
            cov[i][j] = v;
            cov[j][i] = v;
        }
    }
    Ok(cov)
}

/// View-dependent color from degree-3 SH, reference 3DGS convention:
/// `0.5 + C₀·h_dc + Σ_{l≥1} Y_lm(dir)·h_lm`. The result is not clamped.
pub fn eval_sh(sh_dc: [f64; 3], sh_rest: &[f64; SH_REST], dir: [f64; 3]) -> [f64; 3] {
    let [x, y, z] = dir;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    let basis = [
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * xy,
        SH_C2[1] * yz,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * xz,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * xy * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ];
    std::array::from_fn(|c| {
        let rest = &sh_rest[c * SH_REST_PER_CHANNEL..(c + 1) * SH_REST_PER_CHANNEL];
        let view: f64 = basis.iter().zip(rest).map(|(b, h)| b * h).sum();
        0.5 + SH_C0 * sh_dc[c] + view
    })
}

/// Scales every quaternion to unit norm.
pub fn normalize_quaternions(mut set: SourceGaussianSet) -> Result<SourceGaussianSet> {
    for (i, q) in set.rotations.iter_mut().enumerate() {
        *q = normalize_quaternion(*q)
            .ok_or_else(|| Error::InvalidInput(format!("gaussian {i} has a zero quaternion")))?;
    }
    Ok(set)
}

pub fn normalize_quaternion(q: [f32; 4]) -> Option<[f32; 4]> {
    let n = quat_norm(q);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(q.map(|v| (v as f64 / n) as f32))
}

/// Flips the sign so the first non-zero component is positive; `q` and `-q`
/// encode the same rotation and must quantize identically.
pub fn canonical_quaternion(q: [f32; 4]) -> [f32; 4] {
    match q.iter().find(|v| **v != 0.0) {
        Some(v) if *v < 0.0 => q.map(|c| -c),
        _ => q,
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse of [`sigmoid`]; 0 and 1 are nudged inward so the result stays finite.
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
    (p / (1.0 - p)).ln()
}

pub(crate) fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn normalize3(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = dot3(v, v).sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.map(|c| c / n))
}

pub(crate) fn to_f64<const N: usize>(v: [f32; N]) -> [f64; N] {
    v.map(|c| c as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn covariance_identity_and_axis_scale() {
        let id = build_covariance([0.0; 3], [1.0, 0.0, 0.0, 0.0]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!(close(id[i][j], if i == j { 1.0 } else { 0.0 }, 1e-12));
            }
        }
        let s = build_covariance([2f64.ln(), 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(close(s[0][0], 4.0, 1e-12));
        assert!(close(s[1][1], 1.0, 1e-12));
        assert!(close(s[2][2], 1.0, 1e-12));
        assert!(close(s[0][1], 0.0, 1e-12));
    }

    #[test]
    fn covariance_rejects_zero_quaternion() {
        assert!(matches!(
            build_covariance([0.0; 3], [0.0; 4]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn sh_zero_rest_is_dc_only() {
        let dc = [0.3, -1.2, 2.0];
        let c = eval_sh(dc, &[0.0; SH_REST], [0.0, 0.6, 0.8]);
        for k in 0..3 {
            assert!(close(c[k], 0.5 + SH_C0 * dc[k], 1e-15));
        }
    }

    #[test]
    fn sh_degree_one_is_odd() {
        let mut rest = [0.0; SH_REST];
        for c in 0..3 {
            for k in 0..3 {
                rest[c * 15 + k] = 0.1 * (c * 3 + k + 1) as f64;
            }
        }
        let d = [0.48, -0.6, 0.64];
        let a = eval_sh([0.0; 3], &rest, d);
        let b = eval_sh([0.0; 3], &rest, d.map(|v| -v));
        for c in 0..3 {
            assert!(close(a[c] - 0.5, -(b[c] - 0.5), 1e-14));
        }
    }

    #[test]
    fn quaternion_normalization() {
        let set = SourceGaussianSet {
            positions: vec![[0.0; 3]; 2],
            log_scales: vec![[0.0; 3]; 2],
            rotations: vec![[2.0, 0.0, 0.0, 0.0], [0.5, 0.5, 0.5, 0.5]],
            opacities: vec![0.5; 2],
            sh_dc: vec![[0.0; 3]; 2],
            sh_rest: vec![[0.0; SH_REST]; 2],
        };
        let out = normalize_quaternions(set.clone()).unwrap();
        assert_eq!(out.rotations[0], [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(out.rotations[1], set.rotations[1]);

        let mut bad = set;
        bad.rotations[1] = [0.0; 4];
        let err = normalize_quaternions(bad).unwrap_err();
        assert!(err.to_string().contains("gaussian 1"));
    }

    #[test]
    fn canonical_sign() {
        assert_eq!(canonical_quaternion([-0.5, 0.5, 0.5, 0.5]), [0.5, -0.5, -0.5, -0.5]);
        assert_eq!(canonical_quaternion([0.0, -1.0, 0.0, 0.0]), [0.0, 1.0, 0.0, 0.0]);
        assert_eq!(canonical_quaternion([0.0, 1.0, 0.0, 0.0]), [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn look_at_camera_sees_target_on_axis() {
        let cam = Camera::look_at([0.0, 0.0, -5.0], [0.0; 3], [0.0, 1.0, 0.0], 0.8, 64, 48).unwrap();
        let t = cam.world_to_camera([0.0; 3]);
        assert!(close(t[0], 0.0, 1e-12) && close(t[1], 0.0, 1e-12) && close(t[2], 5.0, 1e-12));
        let c = cam.center();
        assert!(close(c[2], -5.0, 1e-12));
        let q = cam.quaternion();
        let back = quat_to_matrix(q).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!(close(back[i][j], cam.rotation[i][j], 1e-12));
            }
        }
    }

    #[test]
    fn camera_rejects_bad_rotation_and_size() {
        let mut r = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, r, [0.0; 3], 0, 4).is_err());
        r[0][1] = 0.1;
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, r, [0.0; 3], 4, 4).is_err());
    }

    #[test]
    fn aabb_normalize_maps_corners() {
        let b = Aabb { min: [0.0, -2.0, 5.0], max: [1.0, 2.0, 5.0] };
        assert_eq!(b.normalize([0.0, -2.0, 5.0]), [-1.0, -1.0, 0.0]);
        assert_eq!(b.normalize([1.0, 2.0, 5.0]), [1.0, 1.0, 0.0]);
    }
}
