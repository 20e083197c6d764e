//! Joint training of the pose and augmentation networks.
//!
//! Each batch is shuffled and cut into thirds. The first third trains the
//! pose network on random augmentations. Every image of the second third
//! goes through the scale/rotation scheme and every image of the last third
//! through the occlusion scheme:
//!
//! 1. forward the clean image to get bridge features
//! 2. predict the augmentation policies from them
//! 3. sample an adversarial augmentation from the policies
//! 4. pose loss on the adversarial sample
//! 5. pose loss on a random augmentation of the same image, as reference
//! 6. reward the sampled bins if the adversarial loss is higher, else penalize
//! 7. one augmentation-network step towards the rewarded/penalized policy
//! 8. one pose-network step on the adversarial sample
//!
//! The random-only baseline sends every image down the first path, so both
//! modes take exactly one pose-network step per image.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::aug_net::{AugNet, AugTargets};
use crate::error::{invalid_arg, Result};
use crate::geometry::{AnnotatedImage, AugmentParams};
use crate::net::RmsProp;
use crate::policy::{
    make_bin_edges, penalty_update, reward_update, sample_bin, sample_occlusion_mask, sample_within_bin, BinnedPolicy, OcclusionMask,
    OcclusionPolicy, Policy, RewardConfig,
};
use crate::pose_net::{heatmap_targets, pck_counts, pck_norm, PoseNet, GRID};
use crate::pretrain::AsrMode;
use crate::rng::{self, Rng};
use crate::synthdata::FLIP_PAIRS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[serde(alias = "random-only")]
    Random,
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AsrSampling {
    BinCenter,
    Stochastic,
}

impl From<AsrSampling> for AsrMode {
    fn from(s: AsrSampling) -> Self {
        match s {
            AsrSampling::BinCenter => AsrMode::BinCenter,
            AsrSampling::Stochastic => AsrMode::Stochastic,
        }
    }
}

/// Every knob of a run. Missing fields in a config file take these defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub seed: u64,
    pub batch_size: usize,
    /// Reward strength.
    pub alpha: f64,
    /// Penalty strength.
    pub beta: f64,
    pub lr_d: f64,
    /// Pose learning rate after the validation plateau.
    pub lr_d_decayed: f64,
    /// Augmentation-network learning rate while pre-training.
    pub lr_g_pretrain: f64,
    /// Augmentation-network learning rate during joint training.
    pub lr_g: f64,
    pub plateau_patience: usize,
    /// Minimum gain in validation PCK (as a fraction) that resets patience.
    pub plateau_threshold: f64,
    pub pose_epochs: usize,
    pub aug_epochs: usize,
    pub epochs: usize,
    /// Cap on the images used to build scale/rotation pre-training targets.
    pub asr_pretrain_images: Option<usize>,
    pub asr_sampling: AsrSampling,
    pub scale_range: (f64, f64),
    pub rot_range: (f64, f64),
    pub flip_prob: f64,
    pub scale_bins: usize,
    pub rot_bins: usize,
    pub grid: (usize, usize),
    pub pck_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Adversarial,
            seed: 0,
            batch_size: 12,
            alpha: 0.3,
            beta: 0.3,
            lr_d: 2.5e-4,
            lr_d_decayed: 5e-5,
            lr_g_pretrain: 2.5e-4,
            lr_g: 5e-5,
            plateau_patience: 5,
            plateau_threshold: 0.002,
            pose_epochs: 5,
            aug_epochs: 20,
            epochs: 10,
            asr_pretrain_images: None,
            asr_sampling: AsrSampling::Stochastic,
            scale_range: (0.75, 1.25),
            rot_range: (-30.0, 30.0),
            flip_prob: 0.5,
            scale_bins: 7,
            rot_bins: 9,
            grid: (GRID, GRID),
            pck_threshold: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return invalid_arg("batch_size must be positive");
        }
        if self.mode == Mode::Adversarial && !self.batch_size.is_multiple_of(3) {
            return invalid_arg(format!(
                "adversarial batches split into thirds; {} is not divisible by 3",
                self.batch_size
            ));
        }
        RewardConfig::new(self.alpha, self.beta)?;
        for (name, lr) in [
            ("lr_d", self.lr_d),
            ("lr_d_decayed", self.lr_d_decayed),
            ("lr_g_pretrain", self.lr_g_pretrain),
            ("lr_g", self.lr_g),
        ] {
            if !(lr > 0.0) || !lr.is_finite() {
                return invalid_arg(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(self.scale_range.0 > 0.0) {
            return invalid_arg("scales must be positive");
        }
        make_bin_edges(self.scale_range.0, self.scale_range.1, self.scale_bins)?;
        make_bin_edges(self.rot_range.0, self.rot_range.1, self.rot_bins)?;
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return invalid_arg(format!("flip_prob must lie in [0, 1], got {}", self.flip_prob));
        }
        if self.grid != (GRID, GRID) {
            return invalid_arg(format!("the pose network's bridges take a {GRID}x{GRID} occlusion grid"));
        }
        if !(self.pck_threshold > 0.0) || !(self.plateau_threshold >= 0.0) {
            return invalid_arg("thresholds must be positive");
        }
        Ok(())
    }

    pub fn scale_edges(&self) -> Result<Vec<f64>> {
        make_bin_edges(self.scale_range.0, self.scale_range.1, self.scale_bins)
    }

    pub fn rot_edges(&self) -> Result<Vec<f64>> {
        make_bin_edges(self.rot_range.0, self.rot_range.1, self.rot_bins)
    }

    /// A freshly initialised augmentation network for this configuration.
    pub fn new_aug_net(&self) -> Result<AugNet> {
        AugNet::new(
            self.scale_edges()?,
            self.rot_edges()?,
            self.grid,
            self.lr_g_pretrain,
            &mut rng::stream(self.seed, rng::roles::AUG_INIT),
        )
    }

    pub fn new_pose_net(&self, joints: usize) -> Result<PoseNet> {
        PoseNet::new(joints, &mut rng::stream(self.seed, rng::roles::POSE_INIT))
    }
}

/// Uniform scale and rotation, fair-coin-weighted flip.
pub fn random_params(cfg: &TrainConfig, rng: &mut Rng) -> AugmentParams {
    let scale = rng.random_range(cfg.scale_range.0..=cfg.scale_range.1);
    let rot_deg = rng.random_range(cfg.rot_range.0..=cfg.rot_range.1);
    let flip = rng.random::<f64>() < cfg.flip_prob;
    AugmentParams { scale, rot_deg, flip }
}

pub fn random_augment(x: &AnnotatedImage, cfg: &TrainConfig, rng: &mut Rng) -> Result<AnnotatedImage> {
    x.augmented(random_params(cfg, rng), &FLIP_PAIRS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Reward,
    Penalty,
}

/// Strictly harder is a reward; ties are penalized.
pub fn judge(adversarial: f64, reference: f64) -> Verdict {
    if adversarial > reference {
        Verdict::Reward
    } else {
        Verdict::Penalty
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    Random,
    Asr,
    Aho,
}

/// Stages of the per-image scheme, recorded in the order they ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Bridges,
    PredictPolicies,
    SampleAdversarial,
    AdversarialLoss,
    ReferenceLoss,
    Judge,
    UpdateAug,
    UpdatePose,
}

pub const ADVERSARIAL_STEPS: [Step; 8] = [
    Step::Bridges,
    Step::PredictPolicies,
    Step::SampleAdversarial,
    Step::AdversarialLoss,
    Step::ReferenceLoss,
    Step::Judge,
    Step::UpdateAug,
    Step::UpdatePose,
];

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub path: PathKind,
    /// Loss the pose network trained on (adversarial or random sample).
    pub d_loss: f64,
    pub adversarial_loss: Option<f64>,
    pub reference_loss: Option<f64>,
    pub verdict: Option<Verdict>,
    /// Augmentation-network KL before its step.
    pub g_loss: Option<f64>,
    /// Sampled `[scale bin, rotation bin]`, or the occluded cells.
    pub sampled: Vec<usize>,
    pub steps: Vec<Step>,
}

/// Test hooks that pin otherwise random or loss-driven choices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub verdict: Option<Verdict>,
    pub mask: Option<OcclusionMask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_sr_loss: Option<f64>,
    pub g_aho_loss: Option<f64>,
    pub val_pck: f64,
    pub rewards: usize,
    pub penalties: usize,
    pub lr_d: f64,
    pub random_images: usize,
    pub asr_images: usize,
    pub aho_images: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossHistogram {
    pub bin_centers: Vec<f64>,
    pub losses: Vec<f64>,
    pub cv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Validation loss per rotation bin after training.
    pub rotation_histogram: Option<LossHistogram>,
}

/// Population standard deviation over mean; 0 for an all-zero vector.
pub fn coefficient_of_variation(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

/// Mean loss of `d` on `data` rotated to each rotation bin center, scale 1.
pub fn loss_histogram(d: &PoseNet, data: &[AnnotatedImage], rot_range: (f64, f64), n_bins: usize) -> Result<LossHistogram> {
    let edges = make_bin_edges(rot_range.0, rot_range.1, n_bins)?;
    let bins = BinnedPolicy::uniform(edges)?;
    if data.is_empty() {
        return invalid_arg("loss histogram needs at least one image");
    }
    let bin_centers: Vec<f64> = (0..n_bins).map(|i| bins.bin_center(i)).collect();
    let mut losses = Vec::with_capacity(n_bins);
    for &rot_deg in &bin_centers {
        let mut sum = 0.0;
        for x in data {
            let aug = x.augmented(
                AugmentParams {
                    scale: 1.0,
                    rot_deg,
                    flip: false,
                },
                &FLIP_PAIRS,
            )?;
            sum += d.loss(&aug.image, &heatmap_targets(&aug.keypoints)?, None)?;
        }
        losses.push(sum / data.len() as f64);
    }
    let cv = coefficient_of_variation(&losses);
    Ok(LossHistogram { bin_centers, losses, cv })
}

/// Mean of the predicted rotation policy over `data`.
pub fn mean_rotation_policy(g: &AugNet, d: &PoseNet, data: &[AnnotatedImage]) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; g.rot_edges().len() - 1];
    for x in data {
        let bridges = d.forward_pose(&x.image, None)?.1;
        for (a, p) in acc.iter_mut().zip(g.predict_policies(&bridges)?.rot.probs()) {
            *a += p;
        }
    }
    let n = data.len().max(1) as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// PCK per threshold, per joint and pooled over all visible joints.
#[derive(Debug, Clone, PartialEq)]
pub struct PckTable {
    pub thresholds: Vec<f64>,
    /// `per_joint[t][j]`; joints never visible score 1.
    pub per_joint: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

pub fn evaluate_pck(d: &PoseNet, data: &[AnnotatedImage], thresholds: &[f64]) -> Result<PckTable> {
    let k = d.joints();
    let mut correct = vec![vec![0usize; k]; thresholds.len()];
    let mut visible = vec![0usize; k];
    for x in data {
        if x.keypoints.len() != k {
            return invalid_arg(format!("network predicts {k} joints, sample has {}", x.keypoints.len()));
        }
        let pred = d.predict(&x.image)?;
        let norm = pck_norm(&x.keypoints);
        for j in 0..k {
            if !x.keypoints[j].visible {
                continue;
            }
            visible[j] += 1;
            for (t, &tau) in thresholds.iter().enumerate() {
                correct[t][j] += pck_counts(&pred[j..=j], &x.keypoints[j..=j], norm, tau).0;
            }
        }
    }
    let total_visible: usize = visible.iter().sum();
    let per_joint = correct
        .iter()
        .map(|row| {
            row.iter()
                .zip(&visible)
                .map(|(&c, &v)| if v == 0 { 1.0 } else { c as f64 / v as f64 })
                .collect()
        })
        .collect();
    let mean = correct
        .iter()
        .map(|row| {
            if total_visible == 0 {
                1.0
            } else {
                row.iter().sum::<usize>() as f64 / total_visible as f64
            }
        })
        .collect();
    Ok(PckTable {
        thresholds: thresholds.to_vec(),
        per_joint,
        mean,
    })
}

/// Pooled PCK at one threshold.
pub fn validation_pck(d: &PoseNet, data: &[AnnotatedImage], tau: f64) -> Result<f64> {
    Ok(evaluate_pck(d, data, &[tau])?.mean[0])
}

/// Both networks, the pose optimizer, and the training stream.
pub struct Trainer {
    cfg: TrainConfig,
    pub d: PoseNet,
    pub g: AugNet,
    d_opt: RmsProp,
    rng: Rng,
    pub overrides: Overrides,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, d: PoseNet, mut g: AugNet) -> Result<Self> {
        cfg.validate()?;
        if g.scale_edges() != cfg.scale_edges()? || g.rot_edges() != cfg.rot_edges()? || g.grid() != cfg.grid {
            return invalid_arg("augmentation network bins differ from the configuration");
        }
        g.set_learning_rate(cfg.lr_g);
        let d_opt = RmsProp::new(d.network(), cfg.lr_d);
        let rng = rng::stream(cfg.seed, rng::roles::JOINT);
        Ok(Self {
            cfg,
            d,
            g,
            d_opt,
            rng,
            overrides: Overrides::default(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn lr_d(&self) -> f64 {
        self.d_opt.lr
    }

    pub fn into_parts(self) -> (PoseNet, AugNet) {
        (self.d, self.g)
    }

    fn verdict(&self, adversarial: f64, reference: f64) -> Verdict {
        self.overrides.verdict.unwrap_or_else(|| judge(adversarial, reference))
    }

    fn reference_loss(&mut self, x: &AnnotatedImage) -> Result<f64> {
        let r = random_augment(x, &self.cfg, &mut self.rng)?;
        self.d.loss(&r.image, &heatmap_targets(&r.keypoints)?, None)
    }

    fn update<P: Policy>(&self, p: &P, i: usize, v: Verdict) -> Result<P> {
        match v {
            Verdict::Reward => reward_update(p, i, self.cfg.alpha),
            Verdict::Penalty => penalty_update(p, i, self.cfg.beta),
        }
    }

    /// One pose-network step on a random augmentation.
    pub fn train_image_random(&mut self, x: &AnnotatedImage) -> Result<ImageRecord> {
        let r = random_augment(x, &self.cfg, &mut self.rng)?;
        let (loss, grads) = self.d.loss_and_gradients(&r.image, &heatmap_targets(&r.keypoints)?, None)?;
        self.d_opt.step(self.d.network_mut(), &grads)?;
        Ok(ImageRecord {
            path: PathKind::Random,
            d_loss: loss,
            adversarial_loss: None,
            reference_loss: None,
            verdict: None,
            g_loss: None,
            sampled: Vec::new(),
            steps: vec![Step::UpdatePose],
        })
    }

    /// The per-image scheme with an adversarial scale and rotation.
    pub fn train_image_asr(&mut self, x: &AnnotatedImage) -> Result<ImageRecord> {
        let mut steps = Vec::with_capacity(8);
        let bridges = self.d.forward_pose(&x.image, None)?.1;
        steps.push(Step::Bridges);
        let pred = self.g.predict_policies(&bridges)?;
        steps.push(Step::PredictPolicies);

        let (is, ir) = (sample_bin(&pred.scale, &mut self.rng), sample_bin(&pred.rot, &mut self.rng));
        let scale = sample_within_bin(&pred.scale, is, &mut self.rng)?;
        let rot_deg = sample_within_bin(&pred.rot, ir, &mut self.rng)?;
        let adv = x.augmented(
            AugmentParams {
                scale,
                rot_deg,
                flip: false,
            },
            &FLIP_PAIRS,
        )?;
        steps.push(Step::SampleAdversarial);
        let (adv_loss, d_grads) = self.d.loss_and_gradients(&adv.image, &heatmap_targets(&adv.keypoints)?, None)?;
        steps.push(Step::AdversarialLoss);
        let ref_loss = self.reference_loss(x)?;
        steps.push(Step::ReferenceLoss);

        let verdict = self.verdict(adv_loss, ref_loss);
        let targets = AugTargets::scale_rotation(self.update(&pred.scale, is, verdict)?, self.update(&pred.rot, ir, verdict)?);
        steps.push(Step::Judge);
        let g_loss = self.g.update_augnet(&pred, &targets)?;
        steps.push(Step::UpdateAug);
        self.d_opt.step(self.d.network_mut(), &d_grads)?;
        steps.push(Step::UpdatePose);

        Ok(ImageRecord {
            path: PathKind::Asr,
            d_loss: adv_loss,
            adversarial_loss: Some(adv_loss),
            reference_loss: Some(ref_loss),
            verdict: Some(verdict),
            g_loss: Some(g_loss),
            sampled: vec![is, ir],
            steps,
        })
    }

    /// The per-image scheme with an adversarial bridge occlusion of one or
    /// two cells on the unwarped image.
    pub fn train_image_aho(&mut self, x: &AnnotatedImage) -> Result<ImageRecord> {
        let mut steps = Vec::with_capacity(8);
        let bridges = self.d.forward_pose(&x.image, None)?.1;
        steps.push(Step::Bridges);
        let pred = self.g.predict_policies(&bridges)?;
        steps.push(Step::PredictPolicies);

        let mask = match &self.overrides.mask {
            Some(m) => m.clone(),
            None => {
                let cells = if self.rng.random::<bool>() { 2 } else { 1 };
                sample_occlusion_mask(&pred.occ, cells, &mut self.rng)?
            }
        };
        steps.push(Step::SampleAdversarial);
        let (adv_loss, d_grads) = self.d.loss_and_gradients(&x.image, &heatmap_targets(&x.keypoints)?, Some(&mask))?;
        steps.push(Step::AdversarialLoss);
        let ref_loss = self.reference_loss(x)?;
        steps.push(Step::ReferenceLoss);

        let verdict = self.verdict(adv_loss, ref_loss);
        let cells = mask.occluded_cells();
        let mut target: OcclusionPolicy = pred.occ.clone();
        for &c in &cells {
            target = self.update(&target, c, verdict)?;
        }
        steps.push(Step::Judge);
        let g_loss = self.g.update_augnet(&pred, &AugTargets::occlusion(target))?;
        steps.push(Step::UpdateAug);
        self.d_opt.step(self.d.network_mut(), &d_grads)?;
        steps.push(Step::UpdatePose);

        Ok(ImageRecord {
            path: PathKind::Aho,
            d_loss: adv_loss,
            adversarial_loss: Some(adv_loss),
            reference_loss: Some(ref_loss),
            verdict: Some(verdict),
            g_loss: Some(g_loss),
            sampled: cells,
            steps,
        })
    }

    /// Random-only mode trains every image on the random path. Adversarial
    /// mode shuffles the batch into thirds: random, scale/rotation,
    /// occlusion, processed in that order.
    pub fn train_batch(&mut self, batch: &[&AnnotatedImage]) -> Result<Vec<ImageRecord>> {
        match self.cfg.mode {
            Mode::Random => batch.iter().map(|x| self.train_image_random(x)).collect(),
            Mode::Adversarial => {
                if !batch.len().is_multiple_of(3) {
                    return invalid_arg(format!("batch of {} cannot be split into thirds", batch.len()));
                }
                let mut order: Vec<usize> = (0..batch.len()).collect();
                order.shuffle(&mut self.rng);
                let third = batch.len() / 3;
                let mut records = Vec::with_capacity(batch.len());
                for (pos, &i) in order.iter().enumerate() {
                    let rec = match pos / third {
                        0 => self.train_image_random(batch[i])?,
                        1 => self.train_image_asr(batch[i])?,
                        _ => self.train_image_aho(batch[i])?,
                    };
                    records.push(rec);
                }
                Ok(records)
            }
        }
    }

    /// One pass over shuffled full batches; a trailing partial batch is
    /// skipped so both modes see the same number of images.
    pub fn train_epoch(&mut self, train: &[AnnotatedImage]) -> Result<Vec<ImageRecord>> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut records = Vec::with_capacity(train.len());
        for chunk in order.chunks_exact(self.cfg.batch_size) {
            let batch: Vec<&AnnotatedImage> = chunk.iter().map(|&i| &train[i]).collect();
            records.extend(self.train_batch(&batch)?);
        }
        Ok(records)
    }

    /// The full joint phase: epochs, validation PCK, and the pose learning
    /// rate drop once validation stops improving.
    pub fn joint_train(&mut self, train: &[AnnotatedImage], val: &[AnnotatedImage]) -> Result<TrainReport> {
        let mut report = TrainReport {
            epochs: Vec::with_capacity(self.cfg.epochs),
            rotation_histogram: None,
        };
        if self.cfg.epochs == 0 {
            return Ok(report);
        }
        let mut best = f64::NEG_INFINITY;
        let mut stale = 0;
        for epoch in 1..=self.cfg.epochs {
            let lr_d = self.d_opt.lr;
            let records = self.train_epoch(train)?;
            let val_pck = if val.is_empty() {
                0.0
            } else {
                validation_pck(&self.d, val, self.cfg.pck_threshold)?
            };
            report.epochs.push(summarize(epoch, &records, val_pck, lr_d));

            if val_pck > best + self.cfg.plateau_threshold {
                best = val_pck;
                stale = 0;
            } else {
                stale += 1;
                if stale >= self.cfg.plateau_patience {
                    self.d_opt.lr = self.cfg.lr_d_decayed;
                }
            }
        }
        if !val.is_empty() {
            report.rotation_histogram = Some(loss_histogram(&self.d, val, self.cfg.rot_range, self.cfg.rot_bins)?);
        }
        Ok(report)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

fn summarize(epoch: usize, records: &[ImageRecord], val_pck: f64, lr_d: f64) -> EpochStats {
    let count = |k: PathKind| records.iter().filter(|r| r.path == k).count();
    let g_mean = |k: PathKind| mean(records.iter().filter(|r| r.path == k).filter_map(|r| r.g_loss));
    EpochStats {
        epoch,
        d_loss: mean(records.iter().map(|r| r.d_loss)).unwrap_or(0.0),
        g_sr_loss: g_mean(PathKind::Asr),
        g_aho_loss: g_mean(PathKind::Aho),
        val_pck,
        rewards: records.iter().filter(|r| r.verdict == Some(Verdict::Reward)).count(),
        penalties: records.iter().filter(|r| r.verdict == Some(Verdict::Penalty)).count(),
        lr_d,
        random_images: count(PathKind::Random),
        asr_images: count(PathKind::Asr),
        aho_images: count(PathKind::Aho),
    }
}

/// Builds a [`Trainer`] and runs the joint phase.
pub fn joint_train(
    train: &[AnnotatedImage],
    val: &[AnnotatedImage],
    d: PoseNet,
    g: AugNet,
    cfg: &TrainConfig,
) -> Result<(PoseNet, AugNet, TrainReport)> {
    let mut t = Trainer::new(cfg.clone(), d, g)?;
    let report = t.joint_train(train, val)?;
    let (d, g) = t.into_parts();
    Ok((d, g, report))
}
