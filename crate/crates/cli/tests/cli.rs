use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use advaug::geometry::{AnnotatedImage, Keypoint, Raster};
use advaug::net::{save_network, LayerSpec, Network, Tensor};
use advaug::synthdata::{save_dataset, Dataset};

const SMALL_CONFIG: &str = r#"{
    "pose_epochs": 1,
    "aug_epochs": 1,
    "epochs": 2,
    "asr_pretrain_images": 3,
    "batch_size": 6
}"#;

fn advaug(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_advaug"));
    cmd.args(args).env_remove("ADVAUG_SEED");
    if let Some(s) = seed_env {
        cmd.env("ADVAUG_SEED", s);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        std::fs::write(root.join("config.json"), SMALL_CONFIG).unwrap();
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn synth(&self, count: usize) -> PathBuf {
        let out = self.path("data.bin");
        ok(&advaug(
            &["synth", "--count", &count.to_string(), "--seed", "5", "--out", s(&out)],
            None,
        ));
        out
    }

    fn pretrained(&self, out_dir: &str) -> (PathBuf, PathBuf) {
        let data = self.synth(60);
        let dir = self.path(out_dir);
        let cfg = self.path("config.json");
        ok(&advaug(
            &["pretrain-pose", "--config", s(&cfg), "--data", s(&data), "--out-dir", s(&dir)],
            None,
        ));
        ok(&advaug(
            &["pretrain-aug", "--config", s(&cfg), "--data", s(&data), "--out-dir", s(&dir)],
            None,
        ));
        (data, dir)
    }
}

/// Data rows of a CSV written by the tool, after the comment and header.
fn csv_rows(path: &Path) -> (String, Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let comment = lines.next().unwrap().to_string();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (comment, header, rows)
}

#[test]
fn synth_writes_a_dataset_and_a_summary() {
    let ws = Workspace::new();
    let out = ws.path("d.bin");
    let run = advaug(&["synth", "--count", "10", "--seed", "1", "--out", s(&out)], None);
    ok(&run);
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "samples=10 joints=5 side=64");
    let first = std::fs::read(&out).unwrap();
    ok(&advaug(&["synth", "--count", "10", "--seed", "1", "--out", s(&out)], None));
    assert_eq!(std::fs::read(&out).unwrap(), first);
    assert_eq!(advaug::synthdata::load_dataset(&out).unwrap().len(), 10);
}

#[test]
fn usage_errors_exit_64_and_write_nothing() {
    let ws = Workspace::new();
    let run = advaug(&["synth", "--count", "10", "--seed", "1"], None);
    assert_eq!(run.status.code(), Some(64));
    let run = advaug(&["train", "--mode", "sideways", "--data", "x", "--out-dir", s(&ws.path("o"))], None);
    assert_eq!(run.status.code(), Some(64));
    assert!(!ws.path("o").exists());
    assert_eq!(advaug(&["frobnicate"], None).status.code(), Some(64));
    assert_eq!(advaug(&["--help"], None).status.code(), Some(0));
}

#[test]
fn unwritable_output_exits_2() {
    let ws = Workspace::new();
    let run = advaug(&["synth", "--count", "2", "--out", s(&ws.path("missing/dir/d.bin"))], None);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn stages_must_run_in_order() {
    let ws = Workspace::new();
    let data = ws.synth(12);
    let run = advaug(&["pretrain-aug", "--data", s(&data), "--out-dir", s(&ws.path("o"))], None);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("pretrain-pose first"));
}

#[test]
fn pretraining_logs_one_row_per_stream_and_repeats_exactly() {
    let ws = Workspace::new();
    let (data, dir) = ws.pretrained("a");
    let (comment, header, rows) = csv_rows(&dir.join("pretrain.csv"));
    assert!(comment.starts_with("# config_hash=") && comment.ends_with(" seed=0"), "{comment}");
    assert_eq!(header, ["stage", "epoch", "loss"]);
    let stages: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(stages, ["pose", "asr", "aho"]);

    let cfg = ws.path("config.json");
    let again = ws.path("b");
    ok(&advaug(
        &["pretrain-pose", "--config", s(&cfg), "--data", s(&data), "--out-dir", s(&again)],
        None,
    ));
    ok(&advaug(
        &["pretrain-aug", "--config", s(&cfg), "--data", s(&data), "--out-dir", s(&again)],
        None,
    ));
    for f in ["pose.ckpt", "aug.ckpt", "pretrain.csv"] {
        assert_eq!(std::fs::read(dir.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn train_reports_and_accounts() {
    let ws = Workspace::new();
    let (data, dir) = ws.pretrained("run");
    let cfg = ws.path("config.json");

    let random = ws.path("random");
    let pose = dir.join("pose.ckpt");
    let aug = dir.join("aug.ckpt");
    let base = ["--config", s(&cfg), "--data", s(&data), "--pose", s(&pose), "--aug", s(&aug)];
    let mut args = vec!["train", "--mode", "random", "--epochs", "3", "--out-dir", s(&random)];
    args.extend(base);
    ok(&advaug(&args, None));
    let (_, header, rows) = csv_rows(&random.join("report.csv"));
    assert_eq!(
        header,
        [
            "epoch",
            "d_loss",
            "g_sr_loss",
            "g_aho_loss",
            "val_pck",
            "rewards",
            "penalties",
            "lr_d"
        ]
    );
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert!(r[2].is_empty() && r[3].is_empty());
        assert_eq!((r[5].as_str(), r[6].as_str()), ("0", "0"));
    }
    // G is carried through bit for bit
    assert_eq!(
        std::fs::read(&aug).unwrap(),
        std::fs::read(random.join("aug_trained.ckpt")).unwrap()
    );

    let adv = ws.path("adv");
    let mut args = vec!["train", "--mode", "adversarial", "--out-dir", s(&adv)];
    args.extend(base);
    ok(&advaug(&args, None));
    let (_, _, rows) = csv_rows(&adv.join("report.csv"));
    assert_eq!(rows.len(), 2);
    // 48 training images, batches of 6: 8 batches, two thirds adversarial
    for r in &rows {
        let events: usize = r[5].parse::<usize>().unwrap() + r[6].parse::<usize>().unwrap();
        assert_eq!(events, 2 * (8 * 6 / 3));
        assert!(!r[2].is_empty() && !r[3].is_empty());
    }
    let (_, header, rows) = csv_rows(&adv.join("rotation_loss.csv"));
    assert_eq!(header.len(), 2 + 9);
    assert_eq!(rows.len(), 1);
}

#[test]
fn adversarial_training_needs_a_pretrained_g() {
    let ws = Workspace::new();
    let data = ws.synth(24);
    let dir = ws.path("o");
    ok(&advaug(
        &[
            "pretrain-pose",
            "--config",
            s(&ws.path("config.json")),
            "--data",
            s(&data),
            "--out-dir",
            s(&dir),
        ],
        None,
    ));
    let run = advaug(&["train", "--mode", "adversarial", "--data", s(&data), "--out-dir", s(&dir)], None);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("pretrain-aug first"));
}

#[test]
fn seed_precedence_is_flag_then_env_then_config() {
    let ws = Workspace::new();
    let data = ws.synth(12);
    std::fs::write(ws.path("seeded.json"), r#"{"seed": 7, "pose_epochs": 1}"#).unwrap();
    let cfg = ws.path("seeded.json");
    let seed_of = |dir: &str, flag: Option<&str>, env: Option<&str>| {
        let out = ws.path(dir);
        let mut args = vec!["pretrain-pose", "--config", s(&cfg), "--data", s(&data), "--out-dir", s(&out)];
        if let Some(f) = flag {
            args.extend(["--seed", f]);
        }
        ok(&advaug(&args, env));
        csv_rows(&out.join("pretrain.csv")).0
    };
    assert!(seed_of("c", None, None).ends_with(" seed=7"));
    assert!(seed_of("e", None, Some("8")).ends_with(" seed=8"));
    assert!(seed_of("f", Some("9"), Some("8")).ends_with(" seed=9"));
    let bad = advaug(&["pretrain-pose", "--data", s(&data), "--out-dir", s(&ws.path("g"))], Some("x"));
    assert_eq!(bad.status.code(), Some(64));
}

#[test]
fn eval_labels_splits_and_thresholds_nest() {
    let ws = Workspace::new();
    let (data, dir) = ws.pretrained("run");
    let pose = dir.join("pose.ckpt");
    for split in ["train", "test"] {
        let out = ws.path(&format!("eval_{split}.csv"));
        ok(&advaug(
            &[
                "eval",
                "--data",
                s(&data),
                "--checkpoint",
                s(&pose),
                "--split",
                split,
                "--out",
                s(&out),
            ],
            None,
        ));
        let (_, header, rows) = csv_rows(&out);
        assert_eq!(header, ["split", "joint", "pck@0.1", "pck@0.2", "pck@0.3", "pck@0.4", "pck@0.5"]);
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[5][1], "mean");
        for r in &rows {
            assert_eq!(r[0], split);
            let v: Vec<f64> = r[2..].iter().map(|x| x.parse().unwrap()).collect();
            assert!(v.windows(2).all(|w| w[0] <= w[1]), "{r:?}");
        }
    }
}

/// A dataset whose images mark joint `j` with a single pixel of
/// intensity `j + 1`.
fn dotted_dataset() -> Dataset {
    let spots = [(8, 10), (40, 12), (20, 44), (52, 50), (30, 28)];
    let samples = (0..20)
        .map(|i| {
            let mut image = Raster::zeros(64, 64, 1);
            let keypoints = spots
                .iter()
                .enumerate()
                .map(|(j, &(x, y))| {
                    let (x, y) = ((x + i) % 60 + 2, (y + 2 * i) % 60 + 2);
                    image.set(y, x, 0, (j + 1) as f64);
                    Keypoint::new(x as f64, y as f64)
                })
                .collect();
            AnnotatedImage { image, keypoints }
        })
        .collect();
    Dataset::new(samples)
}

/// Pose network that reads those dots back: the first layer thresholds
/// the intensity at 0..=6, the second turns adjacent thresholds into a
/// bump per intensity, and the skip path carries the bumps to the head.
fn oracle_network(joints: usize) -> Network {
    let width = 16;
    let conv = |w: Vec<f64>, b: Vec<f64>, i: usize| {
        (
            LayerSpec::Conv3x3 { in_ch: i, out_ch: width },
            vec![Tensor::new(vec![width, i, 3, 3], w).unwrap(), Tensor::new(vec![width], b).unwrap()],
        )
    };
    let center = |o: usize, i: usize, in_ch: usize| (o * in_ch + i) * 9 + 4;
    let mut w0 = vec![0.0; width * 9];
    let mut b0 = vec![0.0; width];
    for t in 0..7 {
        w0[center(t, 0, 1)] = 1.0;
        b0[t] = -(t as f64);
    }
    let mut w1 = vec![0.0; width * width * 9];
    for j in 0..5 {
        w1[center(j, j, width)] = 1.0;
        w1[center(j, j + 1, width)] = -2.0;
        w1[center(j, j + 2, width)] = 1.0;
    }
    let zero = || conv(vec![0.0; width * width * 9], vec![0.0; width], width);
    let mut w7 = vec![0.0; width * width * 9];
    for j in 0..5 {
        w7[center(j, j, width)] = 1.0;
    }
    let mut head = vec![0.0; joints * width];
    for j in 0..joints {
        head[j * width + j] = 1.0;
    }
    Network::from_parts(vec![
        conv(w0, b0, 1),
        conv(w1, vec![0.0; width], width),
        zero(),
        zero(),
        zero(),
        zero(),
        zero(),
        conv(w7, vec![0.0; width], width),
        (
            LayerSpec::Conv1x1 {
                in_ch: width,
                out_ch: joints,
            },
            vec![
                Tensor::new(vec![joints, width], head).unwrap(),
                Tensor::new(vec![joints], vec![0.0; joints]).unwrap(),
            ],
        ),
    ])
    .unwrap()
}

#[test]
fn perfect_oracle_scores_one_everywhere() {
    let ws = Workspace::new();
    let data = ws.path("dots.bin");
    save_dataset(&dotted_dataset(), &data).unwrap();
    let ckpt = ws.path("oracle.ckpt");
    save_network(&oracle_network(5), &ckpt).unwrap();
    let out = ws.path("eval.csv");
    ok(&advaug(
        &[
            "eval",
            "--data",
            s(&data),
            "--checkpoint",
            s(&ckpt),
            "--split",
            "train",
            "--out",
            s(&out),
        ],
        None,
    ));
    let (_, _, rows) = csv_rows(&out);
    for r in &rows {
        assert!(r[2..].iter().all(|v| v == "1"), "{r:?}");
    }
}

#[test]
fn eval_refuses_a_joint_count_mismatch() {
    let ws = Workspace::new();
    let data = ws.path("dots.bin");
    save_dataset(&dotted_dataset(), &data).unwrap();
    let ckpt = ws.path("oracle.ckpt");
    save_network(&oracle_network(4), &ckpt).unwrap();
    let run = advaug(
        &["eval", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&ws.path("e.csv"))],
        None,
    );
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn loss_histogram_rows_and_cv() {
    let ws = Workspace::new();
    let (data, dir) = ws.pretrained("run");
    let pose = dir.join("pose.ckpt");
    let out = ws.path("h.csv");
    ok(&advaug(
        &["loss-histogram", "--data", s(&data), "--pose", s(&pose), "--out", s(&out)],
        None,
    ));
    let (_, header, rows) = csv_rows(&out);
    assert_eq!(header.len(), 11);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "loss");

    let aug = dir.join("aug.ckpt");
    ok(&advaug(
        &[
            "loss-histogram",
            "--data",
            s(&data),
            "--pose",
            s(&pose),
            "--aug",
            s(&aug),
            "--out",
            s(&out),
        ],
        None,
    ));
    let (_, _, rows) = csv_rows(&out);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][0], "policy");
    for r in &rows {
        assert_eq!(r.len(), 11);
        let v: Vec<f64> = r[2..].iter().map(|x| x.parse().unwrap()).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        let cv: f64 = r[1].parse().unwrap();
        assert!((cv - sd / mean).abs() <= 1e-9);
    }
}
