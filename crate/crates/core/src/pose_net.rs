//! The pose (target) network: a small U-net heatmap regressor.
//!
//! ```text
//! 64 ─conv─pool─▶ 32 ─conv═╦═pool─▶ 16 ─conv═╦═pool─▶ 8 ─conv═╦═pool─▶ 4 ─conv
//!                          ║ bridge 32       ║ bridge 16      ║ bridge 8     │ up
//!                          ║                 ║                ╚══(mask)══▶ add ─conv─ up
//!                          ║                 ╚═════════(mask)════════▶ add ─conv─ up
//!                          ╚═════════════════(mask)══════════▶ add ─conv─ head ─▶ K x 32 x 32
//! ```
//!
//! Bridges are the encoder activations carried across skip connections.
//! An occlusion mask multiplies every bridge (all channels) before the
//! decoder consumes it; the encoder path itself is never masked.

use crate::error::{invalid_arg, Result};
use crate::geometry::{render_heatmaps, Heatmaps, Keypoint, Raster};
use crate::net::{Gradients, LayerSpec, Network, Tape, Tensor, Var};
use crate::policy::{upscale_mask, OcclusionMask};
use crate::rng::Rng;

pub const INPUT_SIZE: usize = 64;
pub const HEATMAP_RES: usize = 32;
pub const HEATMAP_SIGMA: f64 = 1.0;
pub const WIDTH: usize = 16;
pub const GRID: usize = 4;
/// Bridge resolutions, highest first.
pub const BRIDGE_RES: [usize; 3] = [32, 16, 8];
/// Channel maxima below this decode as invisible.
pub const VISIBILITY_THRESHOLD: f64 = 0.05;

const ENC64: usize = 0;
const ENC32: usize = 1;
const ENC16: usize = 2;
const ENC8: usize = 3;
const BOTTOM: usize = 4;
const DEC8: usize = 5;
const DEC16: usize = 6;
const DEC32: usize = 7;
const HEAD: usize = 8;

fn layer_specs(joints: usize) -> Vec<LayerSpec> {
    let c = |i, o| LayerSpec::Conv3x3 { in_ch: i, out_ch: o };
    vec![
        c(1, WIDTH),
        c(WIDTH, WIDTH),
        c(WIDTH, WIDTH),
        c(WIDTH, WIDTH),
        c(WIDTH, WIDTH),
        c(WIDTH, WIDTH),
        c(WIDTH, WIDTH),
        c(WIDTH, WIDTH),
        LayerSpec::Conv1x1 {
            in_ch: WIDTH,
            out_ch: joints,
        },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseNet {
    net: Network,
    joints: usize,
}

/// Encoder activations handed across the skip connections, `[32, 16, 8]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeFeatures {
    pub maps: Vec<Tensor>,
}

pub struct PoseTape {
    tape: Tape,
    output: Var,
    bridges: [Var; 3],
}

impl PoseTape {
    pub fn tape(&self) -> &Tape {
        &self.tape
    }
}

impl PoseNet {
    pub fn new(joints: usize, rng: &mut Rng) -> Result<Self> {
        if joints == 0 {
            return invalid_arg("pose network needs at least one joint");
        }
        let mut net = Network::new(&layer_specs(joints), rng)?;
        // A blank initial prediction: a He-scaled head starts far above the
        // sparse targets and the first corrections kill the last ReLU layer.
        for t in net.params_mut(HEAD) {
            t.data_mut().fill(0.0);
        }
        Ok(Self { net, joints })
    }

    /// Wraps a network loaded from a checkpoint, checking its layout.
    pub fn from_network(net: Network) -> Result<Self> {
        let specs = net.specs();
        let joints = match specs.last() {
            Some(LayerSpec::Conv1x1 { out_ch, .. }) => *out_ch,
            _ => return invalid_arg("not a pose network checkpoint"),
        };
        if specs != layer_specs(joints) {
            return invalid_arg("not a pose network checkpoint");
        }
        Ok(Self { net, joints })
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    fn input_tensor(img: &Raster) -> Result<Tensor> {
        if img.height() != INPUT_SIZE || img.width() != INPUT_SIZE || img.channels() != 1 {
            return invalid_arg(format!(
                "pose network takes {0}x{0}x1 images, got {1}x{2}x{3}",
                INPUT_SIZE,
                img.height(),
                img.width(),
                img.channels()
            ));
        }
        Tensor::new(vec![1, INPUT_SIZE, INPUT_SIZE], img.data().to_vec())
    }

    fn block(&self, tape: &mut Tape, layer: usize, x: Var) -> Result<Var> {
        let y = tape.conv(&self.net, layer, x)?;
        Ok(tape.relu(y))
    }

    fn run(&self, img: &Raster, mask: Option<&OcclusionMask>, skips: bool) -> Result<(Heatmaps, BridgeFeatures, PoseTape)> {
        if let Some(m) = mask {
            if m.w() != GRID || m.h() != GRID {
                return invalid_arg(format!("occlusion grid must be {GRID}x{GRID}"));
            }
        }
        let mut tape = Tape::new(&self.net);
        let x = tape.input(Self::input_tensor(img)?);

        let e64 = self.block(&mut tape, ENC64, x)?;
        let p32 = tape.max_pool2(e64)?;
        let e32 = self.block(&mut tape, ENC32, p32)?;
        let p16 = tape.max_pool2(e32)?;
        let e16 = self.block(&mut tape, ENC16, p16)?;
        let p8 = tape.max_pool2(e16)?;
        let e8 = self.block(&mut tape, ENC8, p8)?;
        let p4 = tape.max_pool2(e8)?;
        let bottom = self.block(&mut tape, BOTTOM, p4)?;

        let mut bridges = [e32, e16, e8];
        if let Some(m) = mask {
            for (b, &res) in bridges.iter_mut().zip(BRIDGE_RES.iter()) {
                let up = upscale_mask(m, res, res)?;
                let factors: Vec<f64> = (0..WIDTH).flat_map(|_| up.data().iter().copied()).collect();
                *b = tape.scale(*b, factors)?;
            }
        }

        let mut cur = tape.upsample2(bottom)?;
        for (layer, bridge) in [(DEC8, bridges[2]), (DEC16, bridges[1])] {
            if skips {
                cur = tape.add(cur, bridge)?;
            }
            let d = self.block(&mut tape, layer, cur)?;
            cur = tape.upsample2(d)?;
        }
        if skips {
            cur = tape.add(cur, bridges[0])?;
        }
        let d32 = self.block(&mut tape, DEC32, cur)?;
        let out = tape.conv(&self.net, HEAD, d32)?;

        let heatmaps = Heatmaps::new(self.joints, HEATMAP_RES, HEATMAP_RES, tape.value(out).data().to_vec())?;
        let features = BridgeFeatures {
            maps: bridges.iter().map(|&b| tape.value(b).clone()).collect(),
        };
        Ok((
            heatmaps,
            features,
            PoseTape {
                tape,
                output: out,
                bridges,
            },
        ))
    }

    /// Heatmaps and (masked, when a mask is given) bridge features.
    pub fn forward_pose(&self, img: &Raster, mask: Option<&OcclusionMask>) -> Result<(Heatmaps, BridgeFeatures, PoseTape)> {
        self.run(img, mask, true)
    }

    /// The decoder fed only by the bottleneck, no skip connections.
    pub fn forward_without_skips(&self, img: &Raster) -> Result<Heatmaps> {
        Ok(self.run(img, None, false)?.0)
    }

    /// Parameter gradients given the gradient of the loss w.r.t. the heatmaps.
    pub fn backward(&self, tape: &PoseTape, heatmap_grad: &Heatmaps) -> Result<Gradients> {
        let seed = Tensor::new(vec![self.joints, HEATMAP_RES, HEATMAP_RES], heatmap_grad.data().to_vec())?;
        Ok(tape.tape.backward(&self.net, &[(tape.output, seed)])?.0)
    }

    /// Like [`Self::backward`] but also returns the gradient reaching each
    /// bridge tensor, `[32, 16, 8]`.
    pub fn backward_with_bridges(&self, tape: &PoseTape, heatmap_grad: &Heatmaps) -> Result<(Gradients, Vec<Tensor>)> {
        let seed = Tensor::new(vec![self.joints, HEATMAP_RES, HEATMAP_RES], heatmap_grad.data().to_vec())?;
        let (g, vars) = tape.tape.backward(&self.net, &[(tape.output, seed)])?;
        let bridge_grads = tape
            .bridges
            .iter()
            .map(|b| {
                vars[b.index()]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(tape.tape.value(*b).shape()))
            })
            .collect();
        Ok((g, bridge_grads))
    }

    /// Forward plus MSE against `target`, and the parameter gradients.
    pub fn loss_and_gradients(&self, img: &Raster, target: &Heatmaps, mask: Option<&OcclusionMask>) -> Result<(f64, Gradients)> {
        let (pred, _, tape) = self.forward_pose(img, mask)?;
        let loss = mse_loss(&pred, target)?;
        let grads = self.backward(&tape, &mse_grad(&pred, target)?)?;
        Ok((loss, grads))
    }

    pub fn loss(&self, img: &Raster, target: &Heatmaps, mask: Option<&OcclusionMask>) -> Result<f64> {
        mse_loss(&self.forward_pose(img, mask)?.0, target)
    }

    pub fn predict(&self, img: &Raster) -> Result<Vec<Keypoint>> {
        Ok(decode_keypoints(&self.forward_pose(img, None)?.0))
    }
}

/// Heatmap targets for keypoints given in input-image pixels.
pub fn heatmap_targets(kps: &[Keypoint]) -> Result<Heatmaps> {
    let s = HEATMAP_RES as f64 / INPUT_SIZE as f64;
    let scaled: Vec<Keypoint> = kps
        .iter()
        .map(|k| Keypoint {
            x: k.x * s,
            y: k.y * s,
            visible: k.visible,
        })
        .collect();
    render_heatmaps(&scaled, HEATMAP_RES, HEATMAP_SIGMA)
}

pub fn mse_loss(pred: &Heatmaps, target: &Heatmaps) -> Result<f64> {
    if !pred.same_shape(target) {
        return invalid_arg("heatmap shapes differ");
    }
    let n = pred.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / n as f64)
}

/// Gradient of [`mse_loss`] with respect to `pred`.
pub fn mse_grad(pred: &Heatmaps, target: &Heatmaps) -> Result<Heatmaps> {
    if !pred.same_shape(target) {
        return invalid_arg("heatmap shapes differ");
    }
    let n = pred.data().len().max(1) as f64;
    let data = pred.data().iter().zip(target.data()).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Heatmaps::new(pred.joints(), pred.height(), pred.width(), data)
}

/// Argmax per channel, mapped back to input pixels. Ties go to the lowest
/// row-major index; weak channels decode as invisible.
pub fn decode_keypoints(hm: &Heatmaps) -> Vec<Keypoint> {
    let up = INPUT_SIZE as f64 / hm.width() as f64;
    (0..hm.joints())
        .map(|j| {
            let ch = hm.channel(j);
            let mut best = 0;
            for (i, &v) in ch.iter().enumerate() {
                if v > ch[best] {
                    best = i;
                }
            }
            let (y, x) = (best / hm.width(), best % hm.width());
            Keypoint {
                x: x as f64 * up,
                y: y as f64 * up,
                visible: ch.get(best).is_some_and(|&v| v >= VISIBILITY_THRESHOLD),
            }
        })
        .collect()
}

/// Number of ground-truth-visible joints and how many of them the
/// prediction places within `tau * norm`.
pub fn pck_counts(pred: &[Keypoint], gt: &[Keypoint], norm: f64, tau: f64) -> (usize, usize) {
    let mut correct = 0;
    let mut visible = 0;
    for (p, g) in pred.iter().zip(gt) {
        if !g.visible {
            continue;
        }
        visible += 1;
        if p.visible && ((p.x - g.x).powi(2) + (p.y - g.y).powi(2)).sqrt() <= tau * norm {
            correct += 1;
        }
    }
    (correct, visible)
}

/// Fraction of visible ground-truth joints predicted within `tau * norm`.
/// An annotation with no visible joints scores 1.
pub fn pck(pred: &[Keypoint], gt: &[Keypoint], norm: f64, tau: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return invalid_arg(format!("{} predicted joints vs {} annotated", pred.len(), gt.len()));
    }
    if !(norm > 0.0) {
        return invalid_arg(format!("PCK normaliser must be positive, got {norm}"));
    }
    let (c, v) = pck_counts(pred, gt, norm, tau);
    Ok(if v == 0 { 1.0 } else { c as f64 / v as f64 })
}

/// Diagonal of the tight box around the visible joints, at least one pixel.
pub fn pck_norm(gt: &[Keypoint]) -> f64 {
    let vis: Vec<&Keypoint> = gt.iter().filter(|k| k.visible).collect();
    if vis.is_empty() {
        return 1.0;
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for k in vis {
        x0 = x0.min(k.x);
        x1 = x1.max(k.x);
        y0 = y0.min(k.y);
        y1 = y1.max(k.y);
    }
    ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn random_image(seed: u64) -> Raster {
        let mut r = rng::stream(seed, 1);
        let data = (0..INPUT_SIZE * INPUT_SIZE).map(|_| r.random::<f64>()).collect();
        Raster::new(INPUT_SIZE, INPUT_SIZE, 1, data).unwrap()
    }

    fn net(seed: u64) -> PoseNet {
        PoseNet::new(5, &mut rng::stream(seed, 0)).unwrap()
    }

    #[test]
    fn output_and_bridge_shapes() {
        let (hm, br, _) = net(1).forward_pose(&random_image(2), None).unwrap();
        assert_eq!((hm.joints(), hm.height(), hm.width()), (5, 32, 32));
        let shapes: Vec<_> = br.maps.iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![16, 32, 32], vec![16, 16, 16], vec![16, 8, 8]]);
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let img = Raster::zeros(32, 32, 1);
        assert!(matches!(net(1).forward_pose(&img, None), Err(crate::Error::InvalidArgument(_))));
        let mask = OcclusionMask::ones(2, 2);
        assert!(net(1).forward_pose(&random_image(3), Some(&mask)).is_err());
    }

    #[test]
    fn all_ones_mask_is_identity() {
        let (n, img) = (net(3), random_image(4));
        let a = n.forward_pose(&img, None).unwrap().0;
        let b = n.forward_pose(&img, Some(&OcclusionMask::ones(4, 4))).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn all_zero_mask_matches_skipless_decoder() {
        let (n, img) = (net(5), random_image(6));
        let mask = OcclusionMask::with_cells_zeroed(4, 4, &(0..16).collect::<Vec<_>>()).unwrap();
        let (hm, br, _) = n.forward_pose(&img, Some(&mask)).unwrap();
        assert!(br.maps.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert_eq!(hm, n.forward_without_skips(&img).unwrap());
    }

    #[test]
    fn single_cell_mask_zeroes_its_block_only() {
        let (n, img) = (net(7), random_image(8));
        let (_, plain, _) = n.forward_pose(&img, None).unwrap();
        let mask = OcclusionMask::new(4, 4, &[0]).unwrap();
        let (_, masked, _) = n.forward_pose(&img, Some(&mask)).unwrap();
        for ((p, m), res) in plain.maps.iter().zip(&masked.maps).zip(BRIDGE_RES) {
            let block = res / GRID;
            for c in 0..WIDTH {
                for y in 0..res {
                    for x in 0..res {
                        let i = c * res * res + y * res + x;
                        if y < block && x < block {
                            assert_eq!(m.data()[i], 0.0);
                        } else {
                            assert_eq!(m.data()[i].to_bits(), p.data()[i].to_bits());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn occluded_skip_carries_no_gradient() {
        // Deep encoder silenced, so the first two layers only learn through
        // the 32x32 skip. The image lives inside cell 5, away from its edges.
        let mut n = net(9);
        n.network_mut().params_mut(HEAD)[0].data_mut().fill(0.1);
        for layer in [ENC16, ENC8, BOTTOM] {
            for t in n.network_mut().params_mut(layer) {
                t.data_mut().fill(0.0);
            }
        }
        for layer in [ENC64, ENC32] {
            n.network_mut().params_mut(layer)[1].data_mut().fill(0.0);
        }
        let mut img = Raster::zeros(64, 64, 1);
        for y in 22..26 {
            for x in 22..26 {
                img.set(y, x, 0, 1.0);
            }
        }
        let target = heatmap_targets(&[Keypoint::new(24.0, 24.0); 5]).unwrap();
        let open = n.loss_and_gradients(&img, &target, None).unwrap().1;
        assert!(open.layer(ENC32)[0].data().iter().any(|&g| g != 0.0));
        let mask = OcclusionMask::new(4, 4, &[5]).unwrap();
        let shut = n.loss_and_gradients(&img, &target, Some(&mask)).unwrap().1;
        for layer in [ENC64, ENC32] {
            for t in shut.layer(layer) {
                assert!(t.data().iter().all(|&g| g == 0.0));
            }
        }
    }

    #[test]
    fn mse_examples() {
        let t = Heatmaps::new(1, 2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(mse_loss(&t, &t).unwrap(), 0.0);
        let p = Heatmaps::new(1, 2, 2, t.data().iter().map(|v| v + 0.1).collect()).unwrap();
        assert!((mse_loss(&p, &t).unwrap() - 0.01).abs() < 1e-12);
        let other = Heatmaps::zeros(2, 2, 2);
        assert!(mse_loss(&t, &other).is_err());
    }

    #[test]
    fn mse_matches_scalar_loop() {
        let mut r = rng::stream(11, 0);
        let mk = |r: &mut Rng| Heatmaps::new(2, 4, 4, (0..32).map(|_| r.random::<f64>()).collect()).unwrap();
        let (a, b) = (mk(&mut r), mk(&mut r));
        let mut sum = 0.0;
        for j in 0..2 {
            for i in 0..16 {
                let d = a.channel(j)[i] - b.channel(j)[i];
                sum += d * d;
            }
        }
        assert!((mse_loss(&a, &b).unwrap() - sum / 32.0).abs() < 1e-12);
    }

    #[test]
    fn decode_round_trips_rendered_targets() {
        let kps = [Keypoint::new(10.0, 50.0), Keypoint::new(33.0, 7.0), Keypoint::hidden(5.0, 5.0)];
        let back = decode_keypoints(&heatmap_targets(&kps).unwrap());
        for (k, b) in kps.iter().zip(&back) {
            assert_eq!(b.visible, k.visible);
            if k.visible {
                assert!((b.x - k.x).abs() <= 1.0 && (b.y - k.y).abs() <= 1.0, "{b:?} vs {k:?}");
            }
        }
    }

    #[test]
    fn decode_tie_breaks_to_lowest_index() {
        let mut hm = Heatmaps::zeros(1, 32, 32);
        hm.data_mut()[5 * 32 + 20] = 0.7;
        hm.data_mut()[9 * 32 + 3] = 0.7;
        let k = decode_keypoints(&hm)[0];
        assert_eq!((k.x, k.y, k.visible), (40.0, 10.0, true));
    }

    #[test]
    fn pck_examples() {
        let gt = vec![
            Keypoint::new(0.0, 0.0),
            Keypoint::new(10.0, 0.0),
            Keypoint::new(0.0, 10.0),
            Keypoint::new(10.0, 10.0),
        ];
        assert_eq!(pck(&gt, &gt, 5.0, 0.2).unwrap(), 1.0);
        let shifted: Vec<_> = gt.iter().map(|k| Keypoint::new(k.x + 1.0, k.y)).collect();
        assert_eq!(pck(&shifted, &gt, 5.0, 0.2).unwrap(), 1.0);
        let mut three = gt.clone();
        three[2].x += 5.0;
        assert_eq!(pck(&three, &gt, 5.0, 0.2).unwrap(), 0.75);
        assert!(pck(&gt[..3], &gt, 5.0, 0.2).is_err());
    }

    #[test]
    fn pck_norm_is_visible_box_diagonal() {
        let gt = [Keypoint::new(1.0, 2.0), Keypoint::new(4.0, 6.0), Keypoint::hidden(60.0, 60.0)];
        assert!((pck_norm(&gt) - 5.0).abs() < 1e-12);
        assert_eq!(pck_norm(&[Keypoint::new(3.0, 3.0)]), 1.0);
    }

    #[test]
    fn checkpoint_layout_is_validated() {
        let n = net(1);
        assert_eq!(PoseNet::from_network(n.network().clone()).unwrap(), n);
        let other = Network::new(&[LayerSpec::Conv1x1 { in_ch: 1, out_ch: 5 }], &mut rng::stream(0, 0)).unwrap();
        assert!(PoseNet::from_network(other).is_err());
    }
}
