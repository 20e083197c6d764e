//! Binned distributions over augmentation operations.
//!
//! A [`BinnedPolicy`] partitions a scalar augmentation range (scale or
//! rotation) into bins; an [`OcclusionPolicy`] spreads mass over the cells of
//! a coarse grid laid over the feature maps. Both are plain probability
//! vectors that can be sampled, compared with KL divergence, and nudged by
//! the reward/penalty rule that supplies the generator's online targets.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};
use crate::geometry::Raster;
use crate::rng::Rng;

/// Smallest probability any bin keeps after an update.
pub const PROB_FLOOR: f64 = 1e-4;

const NORM_TOL: f64 = 1e-9;
const MAX_REJECTIONS: usize = 64;

/// Access to the probability vector shared by both policy kinds.
pub trait Policy: Sized {
    fn probs(&self) -> &[f64];

    /// Same policy metadata with a different probability vector.
    fn with_probs(&self, probs: Vec<f64>) -> Result<Self>;

    fn len(&self) -> usize {
        self.probs().len()
    }

    fn is_empty(&self) -> bool {
        self.probs().is_empty()
    }

    fn argmax(&self) -> usize {
        let p = self.probs();
        (0..p.len()).fold(0, |best, i| if p[i] > p[best] { i } else { best })
    }
}

fn check_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidPolicy("empty probability vector".into()));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidPolicy("probabilities must be finite and non-negative".into()));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > NORM_TOL {
        return Err(Error::InvalidPolicy(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedPolicy {
    probs: Vec<f64>,
    edges: Vec<f64>,
}

impl BinnedPolicy {
    pub fn new(probs: Vec<f64>, edges: Vec<f64>) -> Result<Self> {
        check_probs(&probs)?;
        if edges.len() != probs.len() + 1 {
            return Err(Error::InvalidPolicy(format!(
                "{} bins need {} edges, got {}",
                probs.len(),
                probs.len() + 1,
                edges.len()
            )));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidPolicy("bin edges must be finite and strictly increasing".into()));
        }
        Ok(Self { probs, edges })
    }

    pub fn uniform(edges: Vec<f64>) -> Result<Self> {
        let k = edges.len().saturating_sub(1);
        if k == 0 {
            return Err(Error::InvalidPolicy("need at least one bin".into()));
        }
        Self::new(vec![1.0 / k as f64; k], edges)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        0.5 * (self.edges[i] + self.edges[i + 1])
    }

    pub fn bin_width(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }
}

impl Policy for BinnedPolicy {
    fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn with_probs(&self, probs: Vec<f64>) -> Result<Self> {
        Self::new(probs, self.edges.clone())
    }
}

/// Distribution over the cells of a `w x h` grid, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionPolicy {
    w: usize,
    h: usize,
    probs: Vec<f64>,
}

impl OcclusionPolicy {
    pub fn new(w: usize, h: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != w * h {
            return Err(Error::InvalidPolicy(format!(
                "{}x{} grid needs {} cells, got {}",
                w,
                h,
                w * h,
                probs.len()
            )));
        }
        check_probs(&probs)?;
        Ok(Self { w, h, probs })
    }

    pub fn uniform(w: usize, h: usize) -> Result<Self> {
        Self::new(w, h, vec![1.0 / (w * h) as f64; w * h])
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn h(&self) -> usize {
        self.h
    }
}

impl Policy for OcclusionPolicy {
    fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn with_probs(&self, probs: Vec<f64>) -> Result<Self> {
        Self::new(self.w, self.h, probs)
    }
}

/// Reward and penalty strengths, both in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl RewardConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let cfg = Self { alpha, beta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0 && v <= 1.0) {
                return invalid_arg(format!("{name} must lie in (0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

/// `k + 1` evenly spaced edges covering `[lo, hi]`.
pub fn make_bin_edges(lo: f64, hi: f64, k: usize) -> Result<Vec<f64>> {
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return invalid_arg(format!("bin range [{lo}, {hi}] is empty"));
    }
    if k < 2 {
        return invalid_arg(format!("need at least two bins, got {k}"));
    }
    let mut edges: Vec<f64> = (0..=k).map(|i| lo + (hi - lo) * i as f64 / k as f64).collect();
    edges[k] = hi;
    Ok(edges)
}

/// Inverse-CDF draw of an index from a probability vector.
pub fn sample_index(probs: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = probs.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u at or past the last cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

pub fn sample_bin<P: Policy>(policy: &P, rng: &mut Rng) -> usize {
    sample_index(policy.probs(), rng)
}

/// Draw from the truncated Gaussian attached to bin `i`: centered on the
/// bin, sigma a quarter of the bin width, confined to `[lo, hi)`.
pub fn sample_within_bin(policy: &BinnedPolicy, i: usize, rng: &mut Rng) -> Result<f64> {
    if i >= policy.len() {
        return invalid_arg(format!("bin {i} out of range for {} bins", policy.len()));
    }
    let (lo, hi) = (policy.edges[i], policy.edges[i + 1]);
    if !(hi > lo) {
        return Err(Error::InvalidPolicy(format!("bin {i} has zero width")));
    }
    let normal = Normal::new(0.5 * (lo + hi), (hi - lo) / 4.0).map_err(|e| Error::InvalidPolicy(e.to_string()))?;
    let mut x = normal.sample(rng);
    for _ in 1..MAX_REJECTIONS {
        if x >= lo && x < hi {
            return Ok(x);
        }
        x = normal.sample(rng);
    }
    Ok(x.clamp(lo, hi.next_down()))
}

/// `sum_i p_i ln(p_i / q_i)` with `0 ln(0 / q) = 0`.
pub fn kl_divergence(target: &[f64], predicted: &[f64]) -> Result<f64> {
    if target.len() != predicted.len() {
        return invalid_arg(format!(
            "KL between distributions of length {} and {}",
            target.len(),
            predicted.len()
        ));
    }
    let mut sum = 0.0;
    for (&p, &q) in target.iter().zip(predicted) {
        if p > 0.0 {
            if !(q > 0.0) {
                return invalid_arg("predicted probability is zero where the target has mass");
            }
            sum += p * (p / q).ln();
        }
    }
    Ok(sum)
}

pub fn policy_kl<P: Policy>(target: &P, predicted: &P) -> Result<f64> {
    kl_divergence(target.probs(), predicted.probs())
}

fn check_update(probs: &[f64], i: usize, strength: f64) -> Result<()> {
    let k = probs.len();
    if k < 2 {
        return invalid_arg("a single bin has no mass to move");
    }
    if i >= k {
        return invalid_arg(format!("bin {i} out of range for {k} bins"));
    }
    if !(strength > 0.0 && strength <= 1.0) {
        return invalid_arg(format!("update strength must lie in (0, 1], got {strength}"));
    }
    Ok(())
}

/// Raw reward step: bin `i` gains `alpha p_i`, every other bin gives up an
/// equal share of it. No clamping.
pub fn reward_raw(probs: &[f64], i: usize, alpha: f64) -> Result<Vec<f64>> {
    check_update(probs, i, alpha)?;
    let moved = alpha * probs[i];
    let share = moved / (probs.len() - 1) as f64;
    Ok(probs
        .iter()
        .enumerate()
        .map(|(j, &p)| if j == i { p + moved } else { p - share })
        .collect())
}

/// Raw penalty step: bin `i` loses `beta p_i`, redistributed equally over
/// the other bins. No clamping.
pub fn penalty_raw(probs: &[f64], i: usize, beta: f64) -> Result<Vec<f64>> {
    check_update(probs, i, beta)?;
    let moved = beta * probs[i];
    let share = moved / (probs.len() - 1) as f64;
    Ok(probs
        .iter()
        .enumerate()
        .map(|(j, &p)| if j == i { p - moved } else { p + share })
        .collect())
}

/// Project onto the simplex with every entry at least [`PROB_FLOOR`]: floored
/// entries are pinned, the rest are rescaled to absorb the remaining mass.
pub fn apply_floor(probs: &[f64]) -> Vec<f64> {
    let k = probs.len();
    assert!(k as f64 * PROB_FLOOR < 1.0, "floor {PROB_FLOOR} infeasible for {k} bins");
    let mut pinned = vec![false; k];
    loop {
        let n_pinned = pinned.iter().filter(|&&p| p).count();
        let free_mass = 1.0 - n_pinned as f64 * PROB_FLOOR;
        let free_sum: f64 = probs.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(&v, _)| v.max(0.0)).sum();
        let mut changed = false;
        if free_sum > 0.0 {
            let scale = free_mass / free_sum;
            for j in 0..k {
                if !pinned[j] && probs[j].max(0.0) * scale < PROB_FLOOR {
                    pinned[j] = true;
                    changed = true;
                }
            }
            if !changed {
                return (0..k)
                    .map(|j| if pinned[j] { PROB_FLOOR } else { probs[j].max(0.0) * scale })
                    .collect();
            }
        } else {
            // nothing left to rescale: spread the free mass evenly
            let free = k - n_pinned;
            return (0..k)
                .map(|j| if pinned[j] { PROB_FLOOR } else { free_mass / free as f64 })
                .collect();
        }
    }
}

pub fn reward_update<P: Policy>(pred: &P, i: usize, alpha: f64) -> Result<P> {
    pred.with_probs(apply_floor(&reward_raw(pred.probs(), i, alpha)?))
}

pub fn penalty_update<P: Policy>(pred: &P, i: usize, beta: f64) -> Result<P> {
    pred.with_probs(apply_floor(&penalty_raw(pred.probs(), i, beta)?))
}

/// Binary grid; 0 marks an occluded cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcclusionMask {
    w: usize,
    h: usize,
    bits: Vec<u8>,
}

impl OcclusionMask {
    /// Mask with the listed cells zeroed. Must zero one or two cells.
    pub fn new(w: usize, h: usize, occluded: &[usize]) -> Result<Self> {
        let mask = Self::with_cells_zeroed(w, h, occluded)?;
        let zeros = mask.occluded_cells().len();
        if !(1..=2).contains(&zeros) {
            return invalid_arg(format!("an occlusion mask zeroes 1 or 2 cells, got {zeros}"));
        }
        Ok(mask)
    }

    /// Any mask, including all-ones and all-zeros; used for ablations.
    pub fn with_cells_zeroed(w: usize, h: usize, occluded: &[usize]) -> Result<Self> {
        let mut bits = vec![1u8; w * h];
        for &c in occluded {
            if c >= w * h {
                return invalid_arg(format!("cell {c} outside {w}x{h} grid"));
            }
            bits[c] = 0;
        }
        Ok(Self { w, h, bits })
    }

    pub fn ones(w: usize, h: usize) -> Self {
        Self {
            w,
            h,
            bits: vec![1; w * h],
        }
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.bits[row * self.w + col]
    }

    pub fn occluded_cells(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&c| self.bits[c] == 0).collect()
    }
}

/// Zero `n_cells` distinct cells drawn without replacement from `policy`.
pub fn sample_occlusion_mask(policy: &OcclusionPolicy, n_cells: usize, rng: &mut Rng) -> Result<OcclusionMask> {
    if !(1..=2).contains(&n_cells) {
        return invalid_arg(format!("occlusion masks zero 1 or 2 cells, got {n_cells}"));
    }
    if n_cells >= policy.len() {
        return invalid_arg("grid too small for the requested number of cells");
    }
    let mut probs = policy.probs().to_vec();
    let mut cells = Vec::with_capacity(n_cells);
    for _ in 0..n_cells {
        let c = sample_index(&probs, rng);
        cells.push(c);
        probs[c] = 0.0;
    }
    OcclusionMask::new(policy.w, policy.h, &cells)
}

/// Nearest-neighbour block replication of the mask to `target_h x target_w`.
pub fn upscale_mask(mask: &OcclusionMask, target_h: usize, target_w: usize) -> Result<Raster> {
    if target_h == 0 || target_w == 0 || !target_h.is_multiple_of(mask.h) || !target_w.is_multiple_of(mask.w) {
        return invalid_arg(format!(
            "{}x{} is not a multiple of the {}x{} grid",
            target_h, target_w, mask.h, mask.w
        ));
    }
    let (bh, bw) = (target_h / mask.h, target_w / mask.w);
    let mut data = Vec::with_capacity(target_h * target_w);
    for y in 0..target_h {
        for x in 0..target_w {
            data.push(mask.get(y / bh, x / bw) as f64);
        }
    }
    Raster::new(target_h, target_w, 1, data)
}
