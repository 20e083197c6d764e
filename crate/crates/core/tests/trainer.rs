use advaug::geometry::AnnotatedImage;
use advaug::net::RmsProp;
use advaug::pose_net::{heatmap_targets, PoseNet};
use advaug::rng;
use advaug::synthdata::{generate, FigureSpec};
use advaug::trainer::{loss_histogram, Mode, PathKind, TrainConfig, Trainer, Verdict};
use rand::Rng as _;

fn data(count: usize, seed: u64) -> Vec<AnnotatedImage> {
    generate(&FigureSpec::default(), count, seed).unwrap().samples
}

fn trainer(mode: Mode, seed: u64, epochs: usize) -> Trainer {
    let cfg = TrainConfig {
        mode,
        seed,
        epochs,
        ..TrainConfig::default()
    };
    let d = cfg.new_pose_net(5).unwrap();
    let g = cfg.new_aug_net().unwrap();
    Trainer::new(cfg, d, g).unwrap()
}

fn mean_loss(d: &PoseNet, data: &[AnnotatedImage]) -> f64 {
    data.iter()
        .map(|x| d.loss(&x.image, &heatmap_targets(&x.keypoints).unwrap(), None).unwrap())
        .sum::<f64>()
        / data.len() as f64
}

#[test]
fn five_epochs_on_two_hundred_images_lower_the_loss() {
    let train = data(200, 60);
    for mode in [Mode::Random, Mode::Adversarial] {
        let mut t = trainer(mode, 60, 5);
        let before = mean_loss(&t.d, &train);
        let report = t.joint_train(&train, &[]).unwrap();
        assert_eq!(report.epochs.len(), 5);
        let after = mean_loss(&t.d, &train);
        assert!(after < before, "{mode:?}: {after} >= {before}");
    }
}

#[test]
fn adversarial_accounting_and_event_direction() {
    let train = data(60, 61);
    let mut t = trainer(Mode::Adversarial, 61, 1);
    let third = t.config().batch_size / 3;
    for _ in 0..2 {
        let records = t.train_epoch(&train).unwrap();
        assert_eq!(records.len(), 60);
        for batch in records.chunks(t.config().batch_size) {
            for kind in [PathKind::Random, PathKind::Asr, PathKind::Aho] {
                assert_eq!(batch.iter().filter(|r| r.path == kind).count(), third);
            }
        }
        let events = records.iter().filter(|r| r.verdict.is_some()).count();
        assert_eq!(events, 40);
        for r in &records {
            assert_eq!(r.verdict.is_some(), r.path != PathKind::Random);
            if r.verdict == Some(Verdict::Reward) {
                assert!(r.adversarial_loss.unwrap() > r.reference_loss.unwrap());
            }
            if r.path == PathKind::Aho {
                assert!(matches!(r.sampled.len(), 1 | 2));
            }
        }
    }
}

#[test]
fn epoch_stats_reconcile_with_paths() {
    let (train, val) = (data(48, 62), data(6, 63));
    let mut t = trainer(Mode::Adversarial, 62, 2);
    let report = t.joint_train(&train, &val).unwrap();
    for e in &report.epochs {
        assert_eq!(e.rewards + e.penalties, e.asr_images + e.aho_images);
        assert_eq!(e.random_images + e.asr_images + e.aho_images, 48);
        assert_eq!(3 * (e.asr_images + e.aho_images), 2 * 48);
    }
    let h = report.rotation_histogram.unwrap();
    assert_eq!(h.losses.len(), 9);
    assert!(h.losses.iter().all(|&l| l >= 0.0));
}

#[test]
fn random_only_mode_leaves_g_bit_identical() {
    let train = data(30, 64);
    let mut t = trainer(Mode::Random, 64, 2);
    let before = t.g.network().flat_params();
    let report = t.joint_train(&train, &data(3, 65)).unwrap();
    assert!(report
        .epochs
        .iter()
        .all(|e| e.rewards == 0 && e.penalties == 0 && e.random_images == 24));
    let after = t.g.network().flat_params();
    assert!(before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn same_seed_same_run() {
    let (train, val) = (data(24, 66), data(3, 67));
    let run = || {
        let mut t = trainer(Mode::Adversarial, 66, 2);
        let report = t.joint_train(&train, &val).unwrap();
        (report, t.d.network().flat_params(), t.g.network().flat_params())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a.2.iter().zip(&b.2).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn untrained_network_has_no_rotation_preference() {
    let val = data(20, 68);
    let cfg = TrainConfig::default();
    let mut d = cfg.new_pose_net(5).unwrap();
    // the head starts blank; give it random weights too
    let mut r = rng::stream(68, 1);
    let head = d.network().layers().len() - 1;
    for t in d.network_mut().params_mut(head) {
        for v in t.data_mut() {
            *v = 0.2 * (r.random::<f64>() - 0.5);
        }
    }
    let h = loss_histogram(&d, &val, cfg.rot_range, cfg.rot_bins).unwrap();
    assert!(h.cv < 0.5, "{}", h.cv);
}

#[test]
fn upright_training_makes_rotation_hard() {
    let train = data(600, 69);
    let val = data(40, 70);
    let cfg = TrainConfig::default();
    let mut d = cfg.new_pose_net(5).unwrap();
    let mut opt = RmsProp::new(d.network(), cfg.lr_d);
    for _ in 0..2 {
        for x in &train {
            let (_, grads) = d
                .loss_and_gradients(&x.image, &heatmap_targets(&x.keypoints).unwrap(), None)
                .unwrap();
            opt.step(d.network_mut(), &grads).unwrap();
        }
    }
    let h = loss_histogram(&d, &val, cfg.rot_range, cfg.rot_bins).unwrap();
    let mid = h.losses.len() / 2;
    // walking outward from upright on either side, allowing one inversion
    let inversions = |side: Vec<f64>| side.windows(2).filter(|w| w[1] < w[0]).count();
    let right: Vec<f64> = h.losses[mid..].to_vec();
    let left: Vec<f64> = h.losses[..=mid].iter().rev().copied().collect();
    let total = inversions(left) + inversions(right);
    assert!(total <= 1, "{:?}", h.losses);
    assert!(h.losses[0] > h.losses[mid] && h.losses[h.losses.len() - 1] > h.losses[mid]);
}
