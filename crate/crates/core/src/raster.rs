//! Forward-only tile-based CPU splatting.
//!
//! Gaussians are projected with the EWA affine approximation, sorted by depth,
//! binned into 16×16 tiles by their 3σ radius and composited front to back.
//! The same traversal optionally records, for every ray, each Gaussian's
//! blending weight `α·T` and which Gaussian dominated the ray; these feed the
//! importance scores.

use rayon::prelude::*;

use crate::image::Image;
use crate::model::{build_covariance, eval_sh, normalize3, sub3, to_f64, Camera, SourceGaussianSet};

pub const NEAR_PLANE: f64 = 0.01;
pub const TILE_SIZE: u32 = 16;
/// Added to the diagonal of every projected covariance.
pub const COVARIANCE_DILATION: f64 = 0.3;
pub const MAX_ALPHA: f64 = 0.99;
/// Contributions below this are skipped when heuristics are on.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
/// A ray stops when its transmittance would drop below this (heuristics on).
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Footprint cutoff in standard deviations: a Gaussian contributes nothing
/// beyond Mahalanobis distance 3.
pub const SUPPORT_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian {
    /// Pixel-space center; pixel `(i, j)` is sampled at `(i + 0.5, j + 0.5)`.
    pub center: [f64; 2],
    /// Symmetric 2×2 covariance `[xx, xy, yy]` in pixel², dilation included.
    pub cov: [f64; 3],
    /// Inverse of `cov`, same layout.
    pub conic: [f64; 3],
    pub depth: f64,
    /// `3·sqrt(λ_max(cov))`.
    pub radius: f64,
    pub index: usize,
}

impl ProjectedGaussian {
    pub fn mahalanobis_sq(&self, x: [f64; 2]) -> f64 {
        let dx = x[0] - self.center[0];
        let dy = x[1] - self.center[1];
        self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy
    }
}

/// Projects one Gaussian; `None` when it lies on or behind the near plane.
pub fn project_gaussian(
    position: [f64; 3],
    log_scale: [f64; 3],
    rotation: [f64; 4],
    camera: &Camera,
    index: usize,
) -> Option<ProjectedGaussian> {
    let t = camera.world_to_camera(position);
    if t[2] <= NEAR_PLANE {
        return None;
    }
    let cov3 = build_covariance(log_scale, rotation).ok()?;

    // Clamp the Jacobian's lateral offset like the reference renderer does, so
    // Gaussians far outside the frustum do not blow up.
    let lim_x = 1.3 * 0.5 * camera.width as f64 / camera.fx;
    let lim_y = 1.3 * 0.5 * camera.height as f64 / camera.fy;
    let tz = t[2];
    let tx = (t[0] / tz).clamp(-lim_x, lim_x) * tz;
    let ty = (t[1] / tz).clamp(-lim_y, lim_y) * tz;
    let j = [
        [camera.fx / tz, 0.0, -camera.fx * tx / (tz * tz)],
        [0.0, camera.fy / tz, -camera.fy * ty / (tz * tz)],
    ];
    let w = &camera.rotation;
    // M = J·W (2×3), Σ' = M Σ Mᵀ.
    let m: [[f64; 3]; 2] =
        std::array::from_fn(|r| std::array::from_fn(|c| (0..3).map(|k| j[r][k] * w[k][c]).sum()));
    let ms: [[f64; 3]; 2] = std::array::from_fn(|r| {
        std::array::from_fn(|c| (0..3).map(|k| m[r][k] * cov3[k][c]).sum())
    });
    let entry = |r: usize, c: usize| (0..3).map(|k| ms[r][k] * m[c][k]).sum::<f64>();
    let a = entry(0, 0) + COVARIANCE_DILATION;
    let b = entry(0, 1);
    let c = entry(1, 1) + COVARIANCE_DILATION;
    let det = a * c - b * b;
    if det <= 0.0 || !det.is_finite() {
        return None;
    }
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    Some(ProjectedGaussian {
        center: [camera.fx * t[0] / tz + camera.cx, camera.fy * t[1] / tz + camera.cy],
        cov: [a, b, c],
        conic: [c / det, -b / det, a / det],
        depth: tz,
        radius: SUPPORT_SIGMAS * lambda_max.sqrt(),
        index,
    })
}

/// Projects every Gaussian in front of the near plane, sorted by depth with
/// ties broken by source index.
pub fn project(set: &SourceGaussianSet, camera: &Camera) -> Vec<ProjectedGaussian> {
    let mut out: Vec<ProjectedGaussian> = (0..set.len())
        .into_par_iter()
        .filter_map(|i| {
            project_gaussian(
                to_f64(set.positions[i]),
                to_f64(set.log_scales[i]),
                to_f64(set.rotations[i]),
                camera,
                i,
            )
        })
        .collect();
    out.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    out
}

/// `o·exp(−½ (x−p′)ᵀ Σ′⁻¹ (x−p′))`, clamped to [`MAX_ALPHA`].
pub fn alpha_at(g: &ProjectedGaussian, opacity: f64, x: [f64; 2]) -> f64 {
    (opacity * (-0.5 * g.mahalanobis_sq(x)).exp()).min(MAX_ALPHA)
}

/// [`alpha_at`] restricted to the 3σ footprint.
pub fn footprint_alpha(g: &ProjectedGaussian, opacity: f64, x: [f64; 2]) -> f64 {
    if g.mahalanobis_sq(x) > SUPPORT_SIGMAS * SUPPORT_SIGMAS {
        0.0
    } else {
        alpha_at(g, opacity, x)
    }
}

/// A projected Gaussian with its opacity and view-dependent color resolved.
#[derive(Debug, Clone, Copy)]
pub struct Splat {
    pub projected: ProjectedGaussian,
    pub opacity: f64,
    pub color: [f64; 3],
}

/// SH color of Gaussian `i` seen from `camera`, clamped at zero.
pub fn gaussian_color(set: &SourceGaussianSet, i: usize, camera: &Camera) -> [f64; 3] {
    let p = to_f64(set.positions[i]);
    let dir = normalize3(sub3(p, camera.center())).unwrap_or([0.0, 0.0, 1.0]);
    let rest = set.sh_rest[i].map(|v| v as f64);
    eval_sh(to_f64(set.sh_dc[i]), &rest, dir).map(|c| c.max(0.0))
}

pub fn prepare_splats(set: &SourceGaussianSet, camera: &Camera) -> Vec<Splat> {
    project(set, camera)
        .into_par_iter()
        .map(|g| Splat {
            opacity: set.opacities[g.index],
            color: gaussian_color(set, g.index, camera),
            projected: g,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub background: [f64; 3],
    /// Enables the 1/255 alpha skip and early ray termination.
    pub heuristics: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { background: [0.0; 3], heuristics: true }
    }
}

impl RenderOptions {
    pub fn exact() -> Self {
        Self { heuristics: false, ..Self::default() }
    }
}

/// Per-Gaussian aggregates over every ray of every rendered view.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RenderStats {
    /// `Σ_ρ w_{i,ρ}`.
    pub weight_sum: Vec<f64>,
    /// Whether Gaussian `i` had the largest weight on at least one ray.
    pub is_max_contributor: Vec<bool>,
}

impl RenderStats {
    pub fn zeros(n: usize) -> Self {
        Self { weight_sum: vec![0.0; n], is_max_contributor: vec![false; n] }
    }
}

struct TileOutput {
    rgb: Vec<f32>,
    weights: Vec<f64>,
    dominant: Vec<bool>,
}

/// Splat indices (into the depth-sorted list) overlapping each tile.
fn bin_tiles(splats: &[Splat], width: u32, height: u32) -> Vec<Vec<u32>> {
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut bins = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (s, splat) in splats.iter().enumerate() {
        let g = &splat.projected;
        // Pixels whose sample point can lie inside the footprint.
        let x0 = (g.center[0] - g.radius - 0.5).ceil().max(0.0);
        let x1 = (g.center[0] + g.radius - 0.5).floor().min(width as f64 - 1.0);
        let y0 = (g.center[1] - g.radius - 0.5).ceil().max(0.0);
        let y1 = (g.center[1] + g.radius - 0.5).floor().min(height as f64 - 1.0);
        if !(x0 <= x1 && y0 <= y1) {
            continue;
        }
        let (tx0, tx1) = (x0 as u32 / TILE_SIZE, x1 as u32 / TILE_SIZE);
        let (ty0, ty1) = (y0 as u32 / TILE_SIZE, y1 as u32 / TILE_SIZE);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                bins[(ty * tiles_x + tx) as usize].push(s as u32);
            }
        }
    }
    bins
}

fn render_tile(
    splats: &[Splat],
    list: &[u32],
    tile: (u32, u32),
    camera: &Camera,
    opts: &RenderOptions,
    with_stats: bool,
) -> TileOutput {
    let x_start = tile.0 * TILE_SIZE;
    let y_start = tile.1 * TILE_SIZE;
    let x_end = (x_start + TILE_SIZE).min(camera.width);
    let y_end = (y_start + TILE_SIZE).min(camera.height);
    let mut rgb = Vec::with_capacity(((x_end - x_start) * (y_end - y_start) * 3) as usize);
    let mut weights = if with_stats { vec![0.0; list.len()] } else { Vec::new() };
    let mut dominant = if with_stats { vec![false; list.len()] } else { Vec::new() };

    for py in y_start..y_end {
        for px in x_start..x_end {
            let x = [px as f64 + 0.5, py as f64 + 0.5];
            let mut transmittance = 1.0;
            let mut color = [0.0f64; 3];
            let mut best: Option<(f64, usize)> = None;
            for (slot, &s) in list.iter().enumerate() {
                let splat = &splats[s as usize];
                let alpha = footprint_alpha(&splat.projected, splat.opacity, x);
                if alpha <= 0.0 {
                    continue;
                }
                if opts.heuristics {
                    if alpha < MIN_ALPHA {
                        continue;
                    }
                    if transmittance * (1.0 - alpha) < MIN_TRANSMITTANCE {
                        break;
                    }
                }
                let w = alpha * transmittance;
                for c in 0..3 {
                    color[c] += w * splat.color[c];
                }
                if with_stats {
                    weights[slot] += w;
                    // Strict comparison: ties go to the nearer Gaussian.
                    if best.is_none_or(|(bw, _)| w > bw) {
                        best = Some((w, slot));
                    }
                }
                transmittance *= 1.0 - alpha;
            }
            if let Some((_, slot)) = best {
                dominant[slot] = true;
            }
            for c in 0..3 {
                let v = color[c] + transmittance * opts.background[c];
                rgb.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    TileOutput { rgb, weights, dominant }
}

fn render_view(
    set: &SourceGaussianSet,
    camera: &Camera,
    opts: &RenderOptions,
    stats: Option<&mut RenderStats>,
) -> Image {
    let splats = prepare_splats(set, camera);
    let bins = bin_tiles(&splats, camera.width, camera.height);
    let tiles_x = camera.width.div_ceil(TILE_SIZE);
    let with_stats = stats.is_some();
    let outputs: Vec<TileOutput> = bins
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let tile = (t as u32 % tiles_x, t as u32 / tiles_x);
            render_tile(&splats, list, tile, camera, opts, with_stats)
        })
        .collect();

    let mut img = Image::filled(camera.width, camera.height, [0.0; 3]);
    for (t, out) in outputs.iter().enumerate() {
        let x_start = (t as u32 % tiles_x) * TILE_SIZE;
        let y_start = (t as u32 / tiles_x) * TILE_SIZE;
        let tile_w = (x_start + TILE_SIZE).min(camera.width) - x_start;
        for (k, px) in out.rgb.chunks_exact(3).enumerate() {
            let (dx, dy) = (k as u32 % tile_w, k as u32 / tile_w);
            img.set_pixel(x_start + dx, y_start + dy, [px[0], px[1], px[2]]);
        }
    }
    // Fixed reduction order (tile, then depth order) keeps sums reproducible.
    if let Some(stats) = stats {
        for (list, out) in bins.iter().zip(&outputs) {
            for (slot, &s) in list.iter().enumerate() {
                let idx = splats[s as usize].projected.index;
                stats.weight_sum[idx] += out.weights[slot];
                stats.is_max_contributor[idx] |= out.dominant[slot];
            }
        }
    }
    img
}

/// Renders `set` from `camera`; background fills the residual transmittance.
pub fn render(set: &SourceGaussianSet, camera: &Camera, opts: &RenderOptions) -> Image {
    render_view(set, camera, opts, None)
}

/// Renders every camera and accumulates blending-weight statistics.
pub fn render_with_stats(
    set: &SourceGaussianSet,
    cameras: &[Camera],
    opts: &RenderOptions,
) -> (Vec<Image>, RenderStats) {
    let mut stats = RenderStats::zeros(set.len());
    let images = cameras.iter().map(|cam| render_view(set, cam, opts, Some(&mut stats))).collect();
    (images, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{SH_C0, SH_REST};

    fn camera(w: u32, h: u32, f: f64) -> Camera {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        Camera::new(f, f, w as f64 / 2.0, h as f64 / 2.0, id, [0.0; 3], w, h).unwrap()
    }

    fn single(pos: [f32; 3], log_scale: f32, opacity: f64, dc: [f32; 3]) -> SourceGaussianSet {
        SourceGaussianSet {
            positions: vec![pos],
            log_scales: vec![[log_scale; 3]],
            rotations: vec![[1.0, 0.0, 0.0, 0.0]],
            opacities: vec![opacity],
            sh_dc: vec![dc],
            sh_rest: vec![[0.0; SH_REST]],
        }
    }

    #[test]
    fn on_axis_projection() {
        let cam = camera(64, 48, 100.0);
        let (d, sigma) = (5.0, 0.2f64);
        let g = project_gaussian([0.0, 0.0, d], [sigma.ln(); 3], [1.0, 0.0, 0.0, 0.0], &cam, 0).unwrap();
        assert_eq!(g.center, [32.0, 24.0]);
        let expected = (100.0 * sigma / d).powi(2);
        assert!((g.cov[0] - COVARIANCE_DILATION - expected).abs() < 1e-9);
        assert!((g.cov[2] - COVARIANCE_DILATION - expected).abs() < 1e-9);
        assert!(g.cov[1].abs() < 1e-12);
        assert!((g.radius - 3.0 * (expected + COVARIANCE_DILATION).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn behind_camera_excluded() {
        let cam = camera(8, 8, 10.0);
        let set = single([0.0, 0.0, -1.0], 0.0, 0.5, [0.0; 3]);
        assert!(project(&set, &cam).is_empty());
        let set = single([0.0, 0.0, 0.005], 0.0, 0.5, [0.0; 3]);
        assert!(project(&set, &cam).is_empty());
    }

    #[test]
    fn alpha_center_and_unit_mahalanobis() {
        let g = ProjectedGaussian {
            center: [3.0, 4.0],
            cov: [1.0, 0.0, 1.0],
            conic: [1.0, 0.0, 1.0],
            depth: 1.0,
            radius: 3.0,
            index: 0,
        };
        assert_eq!(alpha_at(&g, 0.5, [3.0, 4.0]), 0.5);
        assert_eq!(alpha_at(&g, 1.0, [3.0, 4.0]), MAX_ALPHA);
        let a = alpha_at(&g, 1.0, [4.0, 5.0]);
        assert!((a - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn empty_scene_is_background() {
        let cam = camera(20, 10, 10.0);
        let opts = RenderOptions { background: [0.2, 0.4, 0.6], heuristics: true };
        let img = render(&SourceGaussianSet::default(), &cam, &opts);
        for px in img.data.chunks_exact(3) {
            assert_eq!(px, [0.2f32, 0.4, 0.6]);
        }
    }

    #[test]
    fn opaque_huge_gaussian_hits_alpha_clamp() {
        let cam = camera(16, 16, 20.0);
        let c = [0.2f32, 0.5, 0.7];
        // Pick the DC so the SH color equals `c`.
        let dc = c.map(|v| ((v as f64 - 0.5) / SH_C0) as f32);
        let set = single([0.0, 0.0, 2.0], 3.0, 1.0, dc);
        let bg = [1.0, 0.0, 0.5];
        let img = render(&set, &cam, &RenderOptions { background: bg, heuristics: false });
        let px = img.pixel(8, 8);
        for k in 0..3 {
            let expected = c[k] as f64 * 0.99 + bg[k] * 0.01;
            assert!((px[k] as f64 - expected).abs() < 1e-4, "{px:?}");
        }
    }

    #[test]
    fn single_gaussian_stats() {
        // 1×1 image, Gaussian centered on the only ray with opacity 0.6.
        let cam = camera(1, 1, 10.0);
        let set = single([0.0, 0.0, 1.0], -1.0, 0.6, [0.0; 3]);
        let (_, stats) = render_with_stats(&set, &[cam], &RenderOptions::exact());
        assert!((stats.weight_sum[0] - 0.6).abs() < 1e-12);
        assert!(stats.is_max_contributor[0]);
    }

    #[test]
    fn occluded_gaussian_not_dominant() {
        let cam = camera(4, 4, 4.0);
        let mut set = single([0.0, 0.0, 1.0], 2.0, 1.0, [0.0; 3]);
        let back = single([0.0, 0.0, 3.0], 2.0, 1.0, [0.0; 3]);
        set.positions.extend(back.positions);
        set.log_scales.extend(back.log_scales);
        set.rotations.extend(back.rotations);
        set.opacities.extend(back.opacities);
        set.sh_dc.extend(back.sh_dc);
        set.sh_rest.extend(back.sh_rest);
        let (_, stats) = render_with_stats(&set, &[cam], &RenderOptions::exact());
        assert!(stats.weight_sum[1] <= 0.01 * 16.0 + 1e-12);
        assert!(stats.is_max_contributor[0]);
        assert!(!stats.is_max_contributor[1]);
    }
}
