#![allow(dead_code)]

//! Independent reference implementations used by the integration tests.

use omg_core::model::{SH_REST, SH_REST_PER_CHANNEL};
use omg_core::raster::{project, Splat};
use omg_core::{Camera, SourceGaussianSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random scene inside `[-1, 1]³` with moderate scales and random SH.
pub fn random_source(n: usize, rng: &mut impl Rng) -> SourceGaussianSet {
    let mut set = SourceGaussianSet::with_capacity(n);
    for _ in 0..n {
        set.positions.push(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
        set.log_scales.push(std::array::from_fn(|_| rng.random_range(-4.0..-1.5)));
        let q: [f32; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-3);
        set.rotations.push(q.map(|v| v / n));
        set.opacities.push(rng.random_range(0.05..0.99));
        set.sh_dc.push(std::array::from_fn(|_| rng.random_range(-1.5..1.5)));
        set.sh_rest.push(std::array::from_fn(|_| rng.random_range(-0.2..0.2)));
    }
    set
}

/// Camera at the origin looking down +z.
pub fn axis_camera(width: u32, height: u32, focal: f64) -> Camera {
    let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    Camera::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, id, [0.0; 3], width, height).unwrap()
}

// ---------------------------------------------------------------------------
// Geometry

/// Rotation matrix via the axis-angle (Rodrigues) form of the quaternion.
pub fn rodrigues(q: [f64; 4]) -> [[f64; 3]; 3] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    let s = (x * x + y * y + z * z).sqrt();
    if s < 1e-300 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let angle = 2.0 * s.atan2(w);
    let k = [x / s, y / s, z / s];
    let kx = [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]];
    let kk = matmul(&kx, &kx);
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let id = if i == j { 1.0 } else { 0.0 };
            r[i][j] = id + angle.sin() * kx[i][j] + (1.0 - angle.cos()) * kk[i][j];
        }
    }
    r
}

pub fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

pub fn transpose(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| a[j][i]))
}

/// `(R S)(R S)ᵀ` with explicit matrix products.
pub fn covariance_oracle(log_scale: [f64; 3], q: [f64; 4]) -> [[f64; 3]; 3] {
    let r = rodrigues(q);
    let mut s = [[0.0; 3]; 3];
    for i in 0..3 {
        s[i][i] = log_scale[i].exp();
    }
    let m = matmul(&r, &s);
    matmul(&m, &transpose(&m))
}

// ---------------------------------------------------------------------------
// Spherical harmonics

fn factorial(n: u32) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// Associated Legendre polynomial with the Condon–Shortley phase.
fn legendre(l: u32, m: u32, x: f64) -> f64 {
    let mut pmm = 1.0;
    if m > 0 {
        let s = ((1.0 - x) * (1.0 + x)).sqrt();
        let mut fact = 1.0;
        for _ in 0..m {
            pmm *= -fact * s;
            fact += 2.0;
        }
    }
    if l == m {
        return pmm;
    }
    let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
    if l == m + 1 {
        return pmmp1;
    }
    let mut pll = 0.0;
    for ll in (m + 2)..=l {
        pll = ((2 * ll - 1) as f64 * x * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
        pmm = pmmp1;
        pmmp1 = pll;
    }
    pll
}

/// Real spherical harmonic `Y_lm` in spherical coordinates.
pub fn real_sh(l: u32, m: i32, dir: [f64; 3]) -> f64 {
    let theta = dir[2].clamp(-1.0, 1.0).acos();
    let phi = dir[1].atan2(dir[0]);
    let am = m.unsigned_abs();
    let k = (((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI)) * factorial(l - am) / factorial(l + am)).sqrt();
    let p = legendre(l, am, theta.cos());
    match m.cmp(&0) {
        std::cmp::Ordering::Equal => k * p,
        std::cmp::Ordering::Greater => std::f64::consts::SQRT_2 * k * (am as f64 * phi).cos() * p,
        std::cmp::Ordering::Less => std::f64::consts::SQRT_2 * k * (am as f64 * phi).sin() * p,
    }
}

/// Color from the degree-0..3 basis, coefficients ordered by `(l, m)` with
/// `m` ascending, channel-major.
pub fn sh_color_oracle(dc: [f64; 3], rest: &[f64; SH_REST], dir: [f64; 3]) -> [f64; 3] {
    let mut basis = Vec::new();
    for l in 1..=3u32 {
        for m in -(l as i32)..=(l as i32) {
            basis.push(real_sh(l, m, dir));
        }
    }
    std::array::from_fn(|c| {
        let coeffs = &rest[c * SH_REST_PER_CHANNEL..(c + 1) * SH_REST_PER_CHANNEL];
        0.5 + real_sh(0, 0, dir) * dc[c] + basis.iter().zip(coeffs).map(|(b, h)| b * h).sum::<f64>()
    })
}

// ---------------------------------------------------------------------------
// Rasterization

pub struct BruteForce {
    pub rgb: Vec<[f64; 3]>,
    /// Residual transmittance per pixel.
    pub transmittance: Vec<f64>,
    /// Per pixel, `(gaussian index, weight)` in compositing order.
    pub weights: Vec<Vec<(usize, f64)>>,
}

/// Per-pixel compositing over every Gaussian, sorted by depth then index,
/// with no tiling, no culling and no heuristics.
pub fn brute_force_render(splats: &[Splat], width: u32, height: u32, background: [f64; 3]) -> BruteForce {
    brute_force_with(splats, width, height, background, adjugate_alpha)
}

/// Alpha from the adjugate of the projected covariance, 3σ cutoff, 0.99 clamp.
pub fn adjugate_alpha(s: &Splat, x: [f64; 2]) -> f64 {
    let g = &s.projected;
    let dx = x[0] - g.center[0];
    let dy = x[1] - g.center[1];
    let det = g.cov[0] * g.cov[2] - g.cov[1] * g.cov[1];
    let m = (g.cov[2] * dx * dx - 2.0 * g.cov[1] * dx * dy + g.cov[0] * dy * dy) / det;
    if m > 9.0 {
        return 0.0;
    }
    (s.opacity * (-0.5 * m).exp()).min(0.99)
}

pub fn brute_force_with(
    splats: &[Splat],
    width: u32,
    height: u32,
    background: [f64; 3],
    alpha_fn: impl Fn(&Splat, [f64; 2]) -> f64,
) -> BruteForce {
    let mut order: Vec<&Splat> = splats.iter().collect();
    order.sort_by(|a, b| {
        a.projected.depth.partial_cmp(&b.projected.depth).unwrap().then(a.projected.index.cmp(&b.projected.index))
    });
    let mut out = BruteForce { rgb: Vec::new(), transmittance: Vec::new(), weights: Vec::new() };
    for py in 0..height {
        for px in 0..width {
            let x = px as f64 + 0.5;
            let y = py as f64 + 0.5;
            let mut t = 1.0;
            let mut c = [0.0; 3];
            let mut ws = Vec::new();
            for s in &order {
                let alpha = alpha_fn(s, [x, y]);
                if alpha <= 0.0 {
                    continue;
                }
                let w = alpha * t;
                for k in 0..3 {
                    c[k] += w * s.color[k];
                }
                ws.push((s.projected.index, w));
                t *= 1.0 - alpha;
            }
            out.rgb.push(std::array::from_fn(|k| (c[k] + t * background[k]).clamp(0.0, 1.0)));
            out.transmittance.push(t);
            out.weights.push(ws);
        }
    }
    out
}

/// Weight sums and max-contributor flags accumulated by the brute-force
/// renderer over several views; ties go to the earlier (nearer) Gaussian.
/// Alpha comes from the library's footprint evaluation so sums can be
/// compared bit for bit; the aggregation is what is under test.
pub fn brute_force_stats(set: &SourceGaussianSet, cameras: &[Camera]) -> (Vec<f64>, Vec<bool>) {
    let n = set.len();
    let mut sums = vec![0.0; n];
    let mut flags = vec![false; n];
    for cam in cameras {
        let splats = omg_core::raster::prepare_splats(set, cam);
        let bf = brute_force_with(&splats, cam.width, cam.height, [0.0; 3], |s, x| {
            omg_core::raster::footprint_alpha(&s.projected, s.opacity, x)
        });
        let mut view = vec![0.0; n];
        for ws in &bf.weights {
            let mut best: Option<(usize, f64)> = None;
            for &(i, w) in ws {
                view[i] += w;
                if best.is_none_or(|(_, bw)| w > bw) {
                    best = Some((i, w));
                }
            }
            if let Some((i, _)) = best {
                flags[i] = true;
            }
        }
        for i in 0..n {
            sums[i] += view[i];
        }
    }
    (sums, flags)
}

pub fn projected_count(set: &SourceGaussianSet, cam: &Camera) -> usize {
    project(set, cam).len()
}

// ---------------------------------------------------------------------------
// Ordering and neighbours

/// Morton key by explicit bit loop: bit `b` of axis `a` lands at `3b + a`.
pub fn morton_bit_loop(q: [u32; 3]) -> u64 {
    let mut key = 0u64;
    for b in 0..21 {
        for (a, v) in q.iter().enumerate() {
            key |= (((v >> b) & 1) as u64) << (3 * b + a);
        }
    }
    key
}

/// Exact Euclidean K nearest neighbours (ties by index).
pub fn exact_knn(points: &[[f32; 3]], k: usize) -> Vec<Vec<usize>> {
    (0..points.len())
        .map(|i| {
            let mut d: Vec<(f64, usize)> = (0..points.len())
                .filter(|&j| j != i)
                .map(|j| ((0..3).map(|a| (points[i][a] as f64 - points[j][a] as f64).powi(2)).sum(), j))
                .collect();
            d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            d.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Entropy coding

/// Optimal average code length (bits/symbol) via the textbook merge loop:
/// the total weighted length equals the sum of all merged node weights.
pub fn huffman_optimal_bits(freqs: &[u64]) -> f64 {
    let mut heap: std::collections::BinaryHeap<std::cmp::Reverse<u64>> =
        freqs.iter().filter(|f| **f > 0).map(|f| std::cmp::Reverse(*f)).collect();
    let total: u64 = freqs.iter().sum();
    if heap.len() == 1 {
        return 1.0;
    }
    let mut cost = 0u64;
    while heap.len() > 1 {
        let a = heap.pop().unwrap().0;
        let b = heap.pop().unwrap().0;
        cost += a + b;
        heap.push(std::cmp::Reverse(a + b));
    }
    cost as f64 / total as f64
}

/// Geometric-like skewed distribution used by the entropy-coder checks.
pub fn skewed_symbols(count: usize, alphabet: usize, rng: &mut impl Rng) -> Vec<u16> {
    (0..count)
        .map(|_| {
            let u: f64 = rng.random();
            ((-(1.0 - u).ln() * 6.0) as usize).min(alphabet - 1) as u16
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Field

/// Positional encoding written out term by term.
pub fn pe_oracle(p: [f64; 3], freqs: usize) -> Vec<f64> {
    let mut out = p.to_vec();
    for k in 0..freqs {
        let w = 2f64.powi(k as i32) * std::f64::consts::PI;
        for v in p {
            out.push((w * v).sin());
        }
        for v in p {
            out.push((w * v).cos());
        }
    }
    out
}

/// Forward pass with explicit index loops over the stored row-major weights.
pub fn mlp_oracle(mlp: &omg_core::field::Mlp, input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    let last = mlp.layers.len() - 1;
    for (l, layer) in mlp.layers.iter().enumerate() {
        let mut y = vec![0.0; layer.outputs];
        for o in 0..layer.outputs {
            let mut acc = layer.bias[o];
            for i in 0..layer.inputs {
                acc += layer.weights[o * layer.inputs + i] * x[i];
            }
            y[o] = if l == last { acc } else { acc.max(0.0) };
        }
        x = y;
    }
    x
}

pub fn sh_rest_zero() -> [f32; SH_REST] {
    [0.0; SH_REST]
}

/// Up to `n` Gaussians in front of [`axis_camera`], sized to cover a few
/// pixels each, some partially outside the image.
pub fn random_view_scene(n: usize, rng: &mut impl Rng) -> SourceGaussianSet {
    let mut set = random_source(n, rng);
    for i in 0..n {
        let z: f32 = rng.random_range(1.0..5.0);
        set.positions[i] = [rng.random_range(-0.6..0.6) * z, rng.random_range(-0.6..0.6) * z, z];
        set.log_scales[i] = std::array::from_fn(|_| rng.random_range(-3.5..-1.0));
    }
    set
}

/// Random container contents: positions on the grid, random codebooks and
/// indices (or raw attributes) and half-precision field weights.
pub fn random_parts(n: usize, svq: bool, rng: &mut impl Rng) -> omg_core::codec::SceneParts {
    use omg_core::codec::container::{ContainerConfig, POSITION_CODEC_MORTON_DELTA};
    use omg_core::codec::{Attributes, RawAttributes, SceneParts};
    use omg_core::field::{FieldArch, FieldWeights};
    use omg_core::svq::{Codebook, GroupCodes, SvqCodebookSet, SvqConfig};

    let lo: [f32; 3] = std::array::from_fn(|_| rng.random_range(-10.0..0.0));
    let hi: [f32; 3] = std::array::from_fn(|a| lo[a] + rng.random_range(0.5..20.0));
    let aabb = omg_core::Aabb { min: lo, max: hi };
    let mut positions: Vec<[u16; 3]> = (0..n).map(|_| std::array::from_fn(|_| rng.random())).collect();
    positions.sort_by_key(|q| omg_core::codec::positions::grid_key(*q));
    let svq_cfg = SvqConfig::default();
    let attributes = if svq {
        let mut group = |cfg: omg_core::svq::GroupConfig| {
            let books = (0..cfg.partitions())
                .map(|_| {
                    let mut b = Codebook {
                        sub_len: cfg.sub_len,
                        data: (0..cfg.codes() * cfg.sub_len).map(|_| rng.random_range(-4.0..4.0)).collect(),
                    };
                    b.round_to_half();
                    b
                })
                .collect();
            // Skewed indices so the Huffman tables are not trivial.
            let indices = (0..cfg.partitions())
                .map(|_| (0..n).map(|_| (rng.random::<f64>().powi(3) * cfg.codes() as f64) as u16).collect())
                .collect();
            GroupCodes { config: cfg, books, indices }
        };
        Attributes::Svq(SvqCodebookSet {
            scale: group(svq_cfg.scale),
            rotation: group(svq_cfg.rotation),
            appearance: group(svq_cfg.appearance),
        })
    } else {
        Attributes::Raw(RawAttributes {
            log_scales: (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-6.0..0.0))).collect(),
            rotations: (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect(),
            appearance: (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0))).collect(),
        })
    };
    let arch = FieldArch::default();
    let mut field = FieldWeights::random(arch, aabb, rng.random());
    field.round_to_half();
    SceneParts {
        aabb,
        config: ContainerConfig {
            position_codec: POSITION_CODEC_MORTON_DELTA,
            svq: svq.then_some([svq_cfg.scale, svq_cfg.rotation, svq_cfg.appearance]),
            kmeans_iters: 10,
            lambda: 0.5,
            k: 8,
            tau: Some(0.99),
            arch,
            seed: rng.random(),
        },
        positions,
        attributes,
        field,
        provenance: format!("{{\"n\": {n}}}"),
    }
}
