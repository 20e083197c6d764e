use std::path::{Path, PathBuf};

use advaug::aug_net::AugNet;
use advaug::net::{load_network, save_network, RmsProp};
use advaug::pose_net::PoseNet;
use advaug::pretrain::{pretrain_aho, pretrain_asr, pretrain_pose};
use advaug::rng::{self, roles};
use advaug::synthdata::{generate, load_dataset, save_dataset, Dataset, FigureSpec, Split, JOINT_NAMES, SIDE};
use advaug::trainer::{coefficient_of_variation, evaluate_pck, loss_histogram, mean_rotation_policy, Mode, TrainConfig, Trainer};
use clap::{Args, ValueEnum};

use crate::config::{effective_config, env_seed};
use crate::error::{CliError, Result};
use crate::report::{opt, strings, CsvOut};

pub const POSE_CHECKPOINT: &str = "pose.ckpt";
pub const AUG_CHECKPOINT: &str = "aug.ckpt";
pub const TRAINED_POSE_CHECKPOINT: &str = "pose_trained.ckpt";
pub const TRAINED_AUG_CHECKPOINT: &str = "aug_trained.ckpt";
pub const PRETRAIN_CSV: &str = "pretrain.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const ROTATION_CSV: &str = "rotation_loss.csv";
pub const EVAL_THRESHOLDS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

/// Options shared by every training and evaluation command.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides ADVAUG_SEED and the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Serial execution. Every run is serial today, so this is always on.
    #[arg(long)]
    pub deterministic: bool,
}

impl RunArgs {
    fn config(&self) -> Result<TrainConfig> {
        let cfg = effective_config(self.config.as_deref(), self.seed)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: usize,
    /// Defaults to ADVAUG_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainPoseArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// Receives the checkpoint and pretrain.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Overrides `pose_epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PretrainAugArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Pose checkpoint; defaults to pose.ckpt in the output directory.
    #[arg(long)]
    pub pose: Option<PathBuf>,
    /// Overrides `aug_epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Random,
    Adversarial,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Overrides the config's `mode`.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Defaults to pose.ckpt in the output directory.
    #[arg(long)]
    pub pose: Option<PathBuf>,
    /// Defaults to aug.ckpt in the output directory.
    #[arg(long)]
    pub aug: Option<PathBuf>,
    /// Overrides `epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// Pose checkpoint to evaluate.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HistogramArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub pose: PathBuf,
    /// Adds the mean predicted rotation policy row.
    #[arg(long)]
    pub aug: Option<PathBuf>,
    #[arg(long, default_value = "val")]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let seed = match args.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let ds = generate(&FigureSpec::default(), args.count, seed)?;
    save_dataset(&ds, &args.out).map_err(|e| match e {
        advaug::Error::Io(io) => CliError::io(&args.out, io),
        other => other.into(),
    })?;
    println!("samples={} joints={} side={}", ds.len(), JOINT_NAMES.len(), SIDE);
    Ok(())
}

fn load_data(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(CliError::Input(format!("dataset {} does not exist", path.display())));
    }
    Ok(load_dataset(path)?)
}

fn joints_of(ds: &Dataset) -> Result<usize> {
    ds.samples
        .first()
        .map(|s| s.keypoints.len())
        .ok_or_else(|| CliError::Input("dataset is empty".into()))
}

fn load_pose(path: &Path, joints: usize, missing_hint: &str) -> Result<PoseNet> {
    if !path.exists() {
        return Err(CliError::Input(format!(
            "pose checkpoint {} not found: {missing_hint}",
            path.display()
        )));
    }
    let d = PoseNet::from_network(load_network(path)?)?;
    if d.joints() != joints {
        return Err(CliError::Input(format!(
            "checkpoint {} predicts {} joints but the dataset has {joints}",
            path.display(),
            d.joints()
        )));
    }
    Ok(d)
}

fn load_aug(path: &Path, cfg: &TrainConfig, missing_hint: &str) -> Result<AugNet> {
    if !path.exists() {
        return Err(CliError::Input(format!(
            "augmentation checkpoint {} not found: {missing_hint}",
            path.display()
        )));
    }
    Ok(AugNet::from_network(
        load_network(path)?,
        cfg.scale_edges()?,
        cfg.rot_edges()?,
        cfg.grid,
        cfg.lr_g_pretrain,
    )?)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn pretrain_rows(dir: &Path, cfg: &TrainConfig, stage: &str, losses: &[f64]) -> Result<()> {
    let mut out = CsvOut::append(&dir.join(PRETRAIN_CSV), cfg, &strings(["stage", "epoch", "loss"]))?;
    for (i, l) in losses.iter().enumerate() {
        out.row(&strings([stage.to_string(), (i + 1).to_string(), l.to_string()]))?;
    }
    out.finish()
}

const POSE_FIRST: &str = "run pretrain-pose first (stages: pretrain-pose, pretrain-aug, train)";
const AUG_FIRST: &str = "run pretrain-aug first (stages: pretrain-pose, pretrain-aug, train)";

pub fn pretrain_pose_cmd(args: &PretrainPoseArgs) -> Result<()> {
    let mut cfg = args.run.config()?;
    if let Some(e) = args.epochs {
        cfg.pose_epochs = e;
    }
    let ds = load_data(&args.data)?;
    let mut d = cfg.new_pose_net(joints_of(&ds)?)?;
    let mut opt = RmsProp::new(d.network(), cfg.lr_d);
    let mut r = rng::stream(cfg.seed, roles::POSE_PRETRAIN);
    let history = pretrain_pose(&mut d, &mut opt, ds.split(Split::Train), &cfg, cfg.pose_epochs, &mut r)?;
    create_dir(&args.out_dir)?;
    save_network(d.network(), &args.out_dir.join(POSE_CHECKPOINT))?;
    pretrain_rows(&args.out_dir, &cfg, "pose", &history.epoch_losses)
}

pub fn pretrain_aug_cmd(args: &PretrainAugArgs) -> Result<()> {
    let mut cfg = args.run.config()?;
    if let Some(e) = args.epochs {
        cfg.aug_epochs = e;
    }
    let ds = load_data(&args.data)?;
    let pose_path = args.pose.clone().unwrap_or_else(|| args.out_dir.join(POSE_CHECKPOINT));
    let d = load_pose(&pose_path, joints_of(&ds)?, POSE_FIRST)?;
    let train = ds.split(Split::Train);
    let asr_data = &train[..cfg.asr_pretrain_images.unwrap_or(train.len()).min(train.len())];
    let mut g = cfg.new_aug_net()?;
    let mut r = rng::stream(cfg.seed, roles::AUG_PRETRAIN);
    let asr = pretrain_asr(&mut g, &d, asr_data, cfg.aug_epochs, cfg.asr_sampling.into(), &mut r)?;
    let aho = pretrain_aho(&mut g, &d, train, cfg.aug_epochs, &mut r)?;
    create_dir(&args.out_dir)?;
    save_network(g.network(), &args.out_dir.join(AUG_CHECKPOINT))?;
    pretrain_rows(&args.out_dir, &cfg, "asr", &asr.epoch_losses)?;
    pretrain_rows(&args.out_dir, &cfg, "aho", &aho.epoch_losses)
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let mut cfg = args.run.config()?;
    if let Some(m) = args.mode {
        cfg.mode = match m {
            ModeArg::Random => Mode::Random,
            ModeArg::Adversarial => Mode::Adversarial,
        };
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    let ds = load_data(&args.data)?;
    let pose_path = args.pose.clone().unwrap_or_else(|| args.out_dir.join(POSE_CHECKPOINT));
    let aug_path = args.aug.clone().unwrap_or_else(|| args.out_dir.join(AUG_CHECKPOINT));
    let d = load_pose(&pose_path, joints_of(&ds)?, POSE_FIRST)?;
    let g = match cfg.mode {
        Mode::Adversarial => load_aug(&aug_path, &cfg, AUG_FIRST)?,
        // the baseline never consults G; it is carried through untouched
        Mode::Random if aug_path.exists() => load_aug(&aug_path, &cfg, AUG_FIRST)?,
        Mode::Random => cfg.new_aug_net()?,
    };

    let mut trainer = Trainer::new(cfg.clone(), d, g)?;
    let report = trainer.joint_train(ds.split(Split::Train), ds.split(Split::Val))?;
    let (d, g) = trainer.into_parts();

    create_dir(&args.out_dir)?;
    save_network(d.network(), &args.out_dir.join(TRAINED_POSE_CHECKPOINT))?;
    save_network(g.network(), &args.out_dir.join(TRAINED_AUG_CHECKPOINT))?;
    let header = strings([
        "epoch",
        "d_loss",
        "g_sr_loss",
        "g_aho_loss",
        "val_pck",
        "rewards",
        "penalties",
        "lr_d",
    ]);
    let mut out = CsvOut::create(&args.out_dir.join(REPORT_CSV), &cfg, &header)?;
    for e in &report.epochs {
        out.row(&[
            e.epoch.to_string(),
            e.d_loss.to_string(),
            opt(e.g_sr_loss),
            opt(e.g_aho_loss),
            e.val_pck.to_string(),
            e.rewards.to_string(),
            e.penalties.to_string(),
            e.lr_d.to_string(),
        ])?;
    }
    out.finish()?;
    if let Some(h) = &report.rotation_histogram {
        let mut out = CsvOut::create(&args.out_dir.join(ROTATION_CSV), &cfg, &histogram_header(&h.bin_centers))?;
        out.row(&histogram_row("loss", h.cv, &h.losses))?;
        out.finish()?;
    }
    Ok(())
}

pub fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let cfg = args.run.config()?;
    let ds = load_data(&args.data)?;
    let d = load_pose(&args.checkpoint, joints_of(&ds)?, POSE_FIRST)?;
    let table = evaluate_pck(&d, ds.split(args.split), &EVAL_THRESHOLDS)?;
    let mut header = strings(["split", "joint"]);
    header.extend(EVAL_THRESHOLDS.iter().map(|t| format!("pck@{t}")));
    let mut out = CsvOut::create(&args.out, &cfg, &header)?;
    for j in 0..d.joints() {
        let name = JOINT_NAMES.get(j).map_or_else(|| j.to_string(), |n| n.to_string());
        let mut row = vec![args.split.name().to_string(), name];
        row.extend(table.per_joint.iter().map(|per_t| per_t[j].to_string()));
        out.row(&row)?;
    }
    let mut row = strings([args.split.name(), "mean"]);
    row.extend(table.mean.iter().map(|v| v.to_string()));
    out.row(&row)?;
    out.finish()
}

fn histogram_header(centers: &[f64]) -> Vec<String> {
    let mut h = strings(["row", "cv"]);
    h.extend(centers.iter().map(|c| format!("rot{c:+.3}")));
    h
}

fn histogram_row(name: &str, cv: f64, values: &[f64]) -> Vec<String> {
    let mut row = vec![name.to_string(), cv.to_string()];
    row.extend(values.iter().map(|v| v.to_string()));
    row
}

pub fn loss_histogram_cmd(args: &HistogramArgs) -> Result<()> {
    let cfg = args.run.config()?;
    let ds = load_data(&args.data)?;
    let d = load_pose(&args.pose, joints_of(&ds)?, POSE_FIRST)?;
    let data = ds.split(args.split);
    let hist = loss_histogram(&d, data, cfg.rot_range, cfg.rot_bins)?;
    let policy = match &args.aug {
        Some(path) => Some(mean_rotation_policy(&load_aug(path, &cfg, AUG_FIRST)?, &d, data)?),
        None => None,
    };
    let mut out = CsvOut::create(&args.out, &cfg, &histogram_header(&hist.bin_centers))?;
    out.row(&histogram_row("loss", hist.cv, &hist.losses))?;
    if let Some(p) = policy {
        out.row(&histogram_row("policy", coefficient_of_variation(&p), &p))?;
    }
    out.finish()
}
