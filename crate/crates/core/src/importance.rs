//! Importance scoring and CDF pruning.
//!
//! Base importance is the accumulated blending weight of Gaussians that were
//! the dominant contributor for at least one ray. It is multiplied by a local
//! distinctiveness term, the mean L1 distance between a Gaussian's static
//! feature and those of its Morton-order neighbours, raised to `λ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Aabb;
use crate::raster::RenderStats;

pub const MORTON_BITS: u32 = 21;
const DEGENERATE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub base: Vec<f64>,
    pub distinctiveness: Vec<f64>,
    pub importance: Vec<f64>,
    pub lambda: f64,
    pub k: usize,
    pub tau: f64,
    pub keep_mask: Vec<bool>,
}

impl ImportanceReport {
    pub fn kept(&self) -> usize {
        self.keep_mask.iter().filter(|k| **k).count()
    }
}

pub fn base_importance(stats: &RenderStats) -> Vec<f64> {
    stats
        .weight_sum
        .iter()
        .zip(&stats.is_max_contributor)
        .map(|(w, flagged)| if *flagged { *w } else { 0.0 })
        .collect()
}

fn spread_bits(v: u64) -> u64 {
    let mut x = v & 0x1f_ffff;
    x = (x | (x << 32)) & 0x1f00000000ffff;
    x = (x | (x << 16)) & 0x1f0000ff0000ff;
    x = (x | (x << 8)) & 0x100f00f00f00f00f;
    x = (x | (x << 4)) & 0x10c30c30c30c30c3;
    x = (x | (x << 2)) & 0x1249249249249249;
    x
}

/// Interleaves three 21-bit coordinates; bit 0 comes from `x`.
pub fn interleave(q: [u32; 3]) -> u64 {
    spread_bits(q[0] as u64) | (spread_bits(q[1] as u64) << 1) | (spread_bits(q[2] as u64) << 2)
}

/// Quantizes a point to the 21-bit grid over `aabb` and interleaves.
pub fn morton_key(p: [f32; 3], aabb: &Aabb) -> u64 {
    let max = ((1u64 << MORTON_BITS) - 1) as f64;
    let mut q = [0u32; 3];
    for a in 0..3 {
        let lo = aabb.min[a] as f64;
        let mut ext = aabb.max[a] as f64 - lo;
        if ext <= 0.0 {
            ext = DEGENERATE_EPS;
        }
        let t = ((p[a] as f64 - lo) / ext).clamp(0.0, 1.0);
        q[a] = (t * max).round() as u32;
    }
    interleave(q)
}

/// Stable sort of indices by Morton key.
pub fn morton_order(positions: &[[f32; 3]], aabb: &Aabb) -> Vec<usize> {
    let keys: Vec<u64> = positions.par_iter().map(|p| morton_key(*p, aabb)).collect();
    let mut order: Vec<usize> = (0..positions.len()).collect();
    order.par_sort_by_key(|&i| keys[i]);
    order
}

/// Neighbours of each Gaussian in the Morton sequence: `⌈K/2⌉` predecessors
/// and `⌊K/2⌋` successors, with the window shifted inward at the ends.
/// Result is indexed by original Gaussian index.
pub fn approx_neighbors(order: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    let n = order.len();
    if k >= n {
        return Err(Error::config(format!("neighbour count K={k} must be smaller than N={n}")));
    }
    let mut out = vec![Vec::new(); n];
    for r in 0..n {
        let start = r.saturating_sub(k.div_ceil(2)).min(n - k - 1);
        let list = (start..=start + k).filter(|&s| s != r).map(|s| order[s]).collect();
        out[order[r]] = list;
    }
    Ok(out)
}

pub fn local_distinctiveness(features: &[[f32; 3]], neighbors: &[Vec<usize>]) -> Vec<f64> {
    neighbors
        .par_iter()
        .enumerate()
        .map(|(i, list)| {
            if list.is_empty() {
                return 0.0;
            }
            let ti = features[i];
            let sum: f64 = list
                .iter()
                .map(|&j| (0..3).map(|c| (ti[c] as f64 - features[j][c] as f64).abs()).sum::<f64>())
                .sum();
            sum / list.len() as f64
        })
        .collect()
}

/// `I = Ī · d^λ`, with `0⁰ = 1`.
pub fn final_importance(base: &[f64], distinctiveness: &[f64], lambda: f64) -> Vec<f64> {
    base.iter()
        .zip(distinctiveness)
        .map(|(b, d)| if lambda == 0.0 { *b } else { b * d.powf(lambda) })
        .collect()
}

pub fn validate_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("τ must lie in (0, 1], got {tau}")))
    }
}

/// Keeps the shortest prefix of Gaussians, sorted by decreasing importance
/// (ties by index), whose cumulative importance reaches `τ · ΣI`.
pub fn prune_cdf(importance: &[f64], tau: f64) -> Result<Vec<bool>> {
    validate_tau(tau)?;
    if importance.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput("importance values must be finite and non-negative".into()));
    }
    let total: f64 = importance.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput("all importance values are zero; nothing to keep".into()));
    }
    let mut order: Vec<usize> = (0..importance.len()).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    let mut keep = vec![false; importance.len()];
    let target = tau * total;
    let mut cum = 0.0;
    for &i in &order {
        if importance[i] <= 0.0 {
            break;
        }
        keep[i] = true;
        cum += importance[i];
        if cum >= target {
            break;
        }
    }
    Ok(keep)
}

/// Runs the whole scoring chain on precomputed render statistics.
pub fn score(
    stats: &RenderStats,
    positions: &[[f32; 3]],
    static_features: &[[f32; 3]],
    lambda: f64,
    k: usize,
    tau: f64,
) -> Result<ImportanceReport> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::config(format!("λ must be non-negative, got {lambda}")));
    }
    let base = base_importance(stats);
    let aabb = Aabb::from_points(positions);
    let order = morton_order(positions, &aabb);
    let neighbors = approx_neighbors(&order, k)?;
    let distinctiveness = local_distinctiveness(static_features, &neighbors);
    let importance = final_importance(&base, &distinctiveness, lambda);
    let keep_mask = prune_cdf(&importance, tau)?;
    Ok(ImportanceReport { base, distinctiveness, importance, lambda, k, tau, keep_mask })
}
