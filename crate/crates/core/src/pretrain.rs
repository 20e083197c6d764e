//! Ground-truth policies for the augmentation network and the
//! pre-training loops that fit it while the pose network stays frozen.

use rand::seq::SliceRandom;

use crate::aug_net::{AugNet, AugTargets};
use crate::error::{invalid_arg, Result};
use crate::geometry::{AnnotatedImage, AugmentParams};
use crate::net::RmsProp;
use crate::policy::{apply_floor, sample_within_bin, BinnedPolicy, OcclusionPolicy};
use crate::pose_net::{heatmap_targets, BridgeFeatures, PoseNet};
use crate::rng::Rng;
use crate::synthdata::FLIP_PAIRS;
use crate::trainer::{random_augment, TrainConfig};

/// How each of the m x n augmentations is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsrMode {
    /// Scale and rotation at the bin centers.
    BinCenter,
    /// One draw from each bin's truncated Gaussian.
    Stochastic,
}

/// Scale and rotation targets. `raw_*` are the normalized loss marginals
/// before the probability floor.
#[derive(Debug, Clone, PartialEq)]
pub struct AsrTargets {
    pub scale: BinnedPolicy,
    pub rot: BinnedPolicy,
    pub raw_scale: Vec<f64>,
    pub raw_rot: Vec<f64>,
}

fn normalize(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / weights.len() as f64; weights.len()]
    }
}

/// Accumulates `loss(scale, rotation)` over the m x n grid into its two
/// marginals. All-zero losses give uniform targets.
pub fn asr_targets_from_loss<F>(scale_edges: &[f64], rot_edges: &[f64], mode: AsrMode, rng: &mut Rng, mut loss: F) -> Result<AsrTargets>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    let scale_u = BinnedPolicy::uniform(scale_edges.to_vec())?;
    let rot_u = BinnedPolicy::uniform(rot_edges.to_vec())?;
    let (m, n) = (scale_edges.len() - 1, rot_edges.len() - 1);
    let mut by_scale = vec![0.0; m];
    let mut by_rot = vec![0.0; n];
    for i in 0..m {
        for j in 0..n {
            let (s, r) = match mode {
                AsrMode::BinCenter => (scale_u.bin_center(i), rot_u.bin_center(j)),
                AsrMode::Stochastic => (sample_within_bin(&scale_u, i, rng)?, sample_within_bin(&rot_u, j, rng)?),
            };
            let l = loss(s, r)?;
            if !(l >= 0.0) || !l.is_finite() {
                return invalid_arg(format!("augmentation loss must be finite and non-negative, got {l}"));
            }
            by_scale[i] += l;
            by_rot[j] += l;
        }
    }
    let (raw_scale, raw_rot) = (normalize(&by_scale), normalize(&by_rot));
    Ok(AsrTargets {
        scale: BinnedPolicy::new(apply_floor(&raw_scale), scale_edges.to_vec())?,
        rot: BinnedPolicy::new(apply_floor(&raw_rot), rot_edges.to_vec())?,
        raw_scale,
        raw_rot,
    })
}

/// Targets from the pose network's loss on every scale/rotation bin pair.
pub fn build_asr_targets(
    d: &PoseNet,
    sample: &AnnotatedImage,
    scale_edges: &[f64],
    rot_edges: &[f64],
    mode: AsrMode,
    rng: &mut Rng,
) -> Result<AsrTargets> {
    asr_targets_from_loss(scale_edges, rot_edges, mode, rng, |scale, rot_deg| {
        let aug = sample.augmented(
            AugmentParams {
                scale,
                rot_deg,
                flip: false,
            },
            &FLIP_PAIRS,
        )?;
        d.loss(&aug.image, &heatmap_targets(&aug.keypoints)?, None)
    })
}

/// Dataset-wide joint-location target. `raw` is the normalized vote
/// count before the floor.
#[derive(Debug, Clone, PartialEq)]
pub struct AhoTarget {
    pub policy: OcclusionPolicy,
    pub counts: Vec<usize>,
    pub raw: Vec<f64>,
}

/// Grid cell holding pixel `(x, y)`; coordinates on the far edge belong to
/// the last cell.
pub fn cell_of(x: f64, y: f64, w: usize, h: usize, img_size: usize) -> usize {
    let idx = |v: f64, k: usize| ((v * k as f64 / img_size as f64).floor().max(0.0) as usize).min(k - 1);
    idx(y, h) * w + idx(x, w)
}

pub fn build_aho_target(dataset: &[AnnotatedImage], w: usize, h: usize, img_size: usize) -> Result<AhoTarget> {
    if w == 0 || h == 0 || img_size == 0 {
        return invalid_arg("grid and image size must be positive");
    }
    let mut counts = vec![0usize; w * h];
    for sample in dataset {
        for k in sample.keypoints.iter().filter(|k| k.visible) {
            counts[cell_of(k.x, k.y, w, h, img_size)] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return invalid_arg("no visible joints to vote with");
    }
    let raw: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(AhoTarget {
        policy: OcclusionPolicy::new(w, h, apply_floor(&raw))?,
        counts,
        raw,
    })
}

/// Mean pre-update loss of every epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PretrainHistory {
    pub epoch_losses: Vec<f64>,
}

impl PretrainHistory {
    /// Whether most consecutive epochs did not increase the loss.
    pub fn mostly_nonincreasing(&self) -> bool {
        let pairs = self.epoch_losses.windows(2).count();
        let down = self.epoch_losses.windows(2).filter(|p| p[1] <= p[0]).count();
        pairs == 0 || 2 * down > pairs
    }
}

fn bridges_of(d: &PoseNet, data: &[AnnotatedImage]) -> Result<Vec<BridgeFeatures>> {
    data.iter().map(|s| Ok(d.forward_pose(&s.image, None)?.1)).collect()
}

fn fit<F>(g: &mut AugNet, bridges: &[BridgeFeatures], epochs: usize, rng: &mut Rng, targets: F) -> Result<PretrainHistory>
where
    F: Fn(usize) -> AugTargets,
{
    let mut history = PretrainHistory::default();
    let mut order: Vec<usize> = (0..bridges.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        for &i in &order {
            let pred = g.predict_policies(&bridges[i])?;
            sum += g.update_augnet(&pred, &targets(i))?;
        }
        history.epoch_losses.push(sum / bridges.len().max(1) as f64);
    }
    Ok(history)
}

/// Fits the scale and rotation heads to per-image ASR targets. The pose
/// network is only read, so its bridges and the targets are computed once.
pub fn pretrain_asr(
    g: &mut AugNet,
    d: &PoseNet,
    data: &[AnnotatedImage],
    epochs: usize,
    mode: AsrMode,
    rng: &mut Rng,
) -> Result<PretrainHistory> {
    if epochs == 0 {
        return Ok(PretrainHistory::default());
    }
    let (se, re) = (g.scale_edges().to_vec(), g.rot_edges().to_vec());
    let targets = data
        .iter()
        .map(|s| build_asr_targets(d, s, &se, &re, mode, rng))
        .collect::<Result<Vec<_>>>()?;
    let bridges = bridges_of(d, data)?;
    fit(g, &bridges, epochs, rng, |i| {
        AugTargets::scale_rotation(targets[i].scale.clone(), targets[i].rot.clone())
    })
}

/// Fits the occlusion head to the dataset-wide vote.
pub fn pretrain_aho(g: &mut AugNet, d: &PoseNet, data: &[AnnotatedImage], epochs: usize, rng: &mut Rng) -> Result<PretrainHistory> {
    if epochs == 0 {
        return Ok(PretrainHistory::default());
    }
    let (w, h) = g.grid();
    let side = data.first().map_or(1, |s| s.image.width());
    let target = build_aho_target(data, w, h, side)?.policy;
    let bridges = bridges_of(d, data)?;
    fit(g, &bridges, epochs, rng, |_| AugTargets::occlusion(target.clone()))
}

/// First stage: the pose network alone on randomly augmented images, one
/// RMSProp step per image.
pub fn pretrain_pose(
    d: &mut PoseNet,
    opt: &mut RmsProp,
    data: &[AnnotatedImage],
    cfg: &TrainConfig,
    epochs: usize,
    rng: &mut Rng,
) -> Result<PretrainHistory> {
    let mut history = PretrainHistory::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        for &i in &order {
            let aug = random_augment(&data[i], cfg, rng)?;
            let (loss, grads) = d.loss_and_gradients(&aug.image, &heatmap_targets(&aug.keypoints)?, None)?;
            opt.step(d.network_mut(), &grads)?;
            sum += loss;
        }
        history.epoch_losses.push(sum / data.len().max(1) as f64);
    }
    Ok(history)
}
