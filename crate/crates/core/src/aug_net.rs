//! The augmentation (generator) network: a small encoder over the pose
//! network's bridge features with three softmax heads, one per policy.

use crate::error::{invalid_arg, Result};
use crate::net::{Gradients, LayerSpec, Network, RmsProp, Tape, Tensor, Var};
use crate::policy::{kl_divergence, BinnedPolicy, OcclusionPolicy, Policy};
use crate::pose_net::{BridgeFeatures, BRIDGE_RES, WIDTH};
use crate::rng::Rng;

/// Channels each bridge is reduced to before pooling.
pub const REDUCED: usize = 8;
/// Spatial size every reduced bridge is pooled down to.
pub const POOLED: usize = 4;
pub const HIDDEN: usize = 64;

const TRUNK: usize = 3;
const SCALE_HEAD: usize = 4;
const ROT_HEAD: usize = 5;
const OCC_HEAD: usize = 6;

fn layer_specs(m: usize, n: usize, cells: usize) -> Vec<LayerSpec> {
    let reduce = LayerSpec::Conv3x3 {
        in_ch: WIDTH,
        out_ch: REDUCED,
    };
    let flat = BRIDGE_RES.len() * REDUCED * POOLED * POOLED;
    vec![
        reduce,
        reduce,
        reduce,
        LayerSpec::Dense {
            inputs: flat,
            outputs: HIDDEN,
        },
        LayerSpec::Dense {
            inputs: HIDDEN,
            outputs: m,
        },
        LayerSpec::Dense {
            inputs: HIDDEN,
            outputs: n,
        },
        LayerSpec::Dense {
            inputs: HIDDEN,
            outputs: cells,
        },
    ]
}

#[derive(Debug, Clone)]
pub struct AugNet {
    net: Network,
    scale_edges: Vec<f64>,
    rot_edges: Vec<f64>,
    grid: (usize, usize),
    opt: RmsProp,
}

/// The three predicted policies and the activations that produced them.
pub struct PolicyPrediction {
    pub scale: BinnedPolicy,
    pub rot: BinnedPolicy,
    pub occ: OcclusionPolicy,
    pub tape: AugTape,
}

pub struct AugTape {
    tape: Tape,
    heads: [Var; 3],
}

/// Targets for one update. Heads without a target receive no gradient.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AugTargets {
    pub scale: Option<BinnedPolicy>,
    pub rot: Option<BinnedPolicy>,
    pub occ: Option<OcclusionPolicy>,
}

impl AugTargets {
    pub fn scale_rotation(scale: BinnedPolicy, rot: BinnedPolicy) -> Self {
        Self {
            scale: Some(scale),
            rot: Some(rot),
            occ: None,
        }
    }

    pub fn occlusion(occ: OcclusionPolicy) -> Self {
        Self {
            occ: Some(occ),
            ..Self::default()
        }
    }
}

/// Scale/rotation KL loss: the sum of the two component divergences.
pub fn loss_sr(target_s: &BinnedPolicy, target_r: &BinnedPolicy, pred_s: &BinnedPolicy, pred_r: &BinnedPolicy) -> Result<f64> {
    Ok(kl_divergence(target_s.probs(), pred_s.probs())? + kl_divergence(target_r.probs(), pred_r.probs())?)
}

pub fn loss_aho(target: &OcclusionPolicy, pred: &OcclusionPolicy) -> Result<f64> {
    if (target.w(), target.h()) != (pred.w(), pred.h()) {
        return invalid_arg("occlusion grids differ");
    }
    kl_divergence(target.probs(), pred.probs())
}

impl AugNet {
    pub fn new(scale_edges: Vec<f64>, rot_edges: Vec<f64>, grid: (usize, usize), lr: f64, rng: &mut Rng) -> Result<Self> {
        let net = Network::new(
            &layer_specs(
                scale_edges.len().saturating_sub(1),
                rot_edges.len().saturating_sub(1),
                grid.0 * grid.1,
            ),
            rng,
        )?;
        Self::from_network(net, scale_edges, rot_edges, grid, lr)
    }

    /// Wraps a loaded network, checking it against the bin layout.
    pub fn from_network(net: Network, scale_edges: Vec<f64>, rot_edges: Vec<f64>, grid: (usize, usize), lr: f64) -> Result<Self> {
        // validates the edges
        BinnedPolicy::uniform(scale_edges.clone())?;
        BinnedPolicy::uniform(rot_edges.clone())?;
        OcclusionPolicy::uniform(grid.0, grid.1)?;
        if net.specs()
            != layer_specs(
                scale_edges.len().saturating_sub(1),
                rot_edges.len().saturating_sub(1),
                grid.0 * grid.1,
            )
        {
            return invalid_arg("network does not match the augmentation layout");
        }
        let opt = RmsProp::new(&net, lr);
        Ok(Self {
            net,
            scale_edges,
            rot_edges,
            grid,
            opt,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn scale_edges(&self) -> &[f64] {
        &self.scale_edges
    }

    pub fn rot_edges(&self) -> &[f64] {
        &self.rot_edges
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn learning_rate(&self) -> f64 {
        self.opt.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.opt.lr = lr;
    }

    /// Bridges enter as constants: nothing flows back into the pose network.
    pub fn predict_policies(&self, bridges: &BridgeFeatures) -> Result<PolicyPrediction> {
        if bridges.maps.len() != BRIDGE_RES.len() {
            return invalid_arg(format!("expected {} bridges, got {}", BRIDGE_RES.len(), bridges.maps.len()));
        }
        let mut tape = Tape::new(&self.net);
        let mut pooled = Vec::with_capacity(BRIDGE_RES.len());
        for (layer, (map, &res)) in bridges.maps.iter().zip(BRIDGE_RES.iter()).enumerate() {
            if map.shape() != [WIDTH, res, res] {
                return invalid_arg(format!(
                    "bridge {layer} has shape {:?}, expected [{WIDTH}, {res}, {res}]",
                    map.shape()
                ));
            }
            let x = tape.input(map.clone());
            let c = tape.conv(&self.net, layer, x)?;
            let mut h = tape.relu(c);
            let mut size = res;
            while size > POOLED {
                h = tape.max_pool2(h)?;
                size /= 2;
            }
            pooled.push(h);
        }
        let flat = tape.concat(&pooled);
        let trunk = tape.dense(&self.net, TRUNK, flat)?;
        let trunk = tape.relu(trunk);
        let mut heads = [Var::input(); 3];
        for (slot, layer) in heads.iter_mut().zip([SCALE_HEAD, ROT_HEAD, OCC_HEAD]) {
            let logits = tape.dense(&self.net, layer, trunk)?;
            *slot = tape.softmax(logits);
        }
        let probs = |v: Var| tape.value(v).data().to_vec();
        Ok(PolicyPrediction {
            scale: BinnedPolicy::new(probs(heads[0]), self.scale_edges.clone())?,
            rot: BinnedPolicy::new(probs(heads[1]), self.rot_edges.clone())?,
            occ: OcclusionPolicy::new(self.grid.0, self.grid.1, probs(heads[2]))?,
            tape: AugTape { tape, heads },
        })
    }

    /// KL loss of the prediction against `targets` and its parameter gradients.
    pub fn loss_and_gradients(&self, pred: &PolicyPrediction, targets: &AugTargets) -> Result<(f64, Gradients)> {
        let tape = &pred.tape;
        let mut loss = 0.0;
        let mut seeds = Vec::new();
        let pairs: [(Option<&[f64]>, Var); 3] = [
            (targets.scale.as_ref().map(|p| p.probs()), tape.heads[0]),
            (targets.rot.as_ref().map(|p| p.probs()), tape.heads[1]),
            (targets.occ.as_ref().map(|p| p.probs()), tape.heads[2]),
        ];
        if let Some(occ) = &targets.occ {
            if (occ.w(), occ.h()) != self.grid {
                return invalid_arg("occlusion target grid differs from the network's");
            }
        }
        for (target, head) in pairs {
            let Some(target) = target else { continue };
            let q = tape.tape.value(head).data();
            loss += kl_divergence(target, q)?;
            // d KL / d q = -p / q
            let g = target.iter().zip(q).map(|(p, q)| if *p > 0.0 { -p / q } else { 0.0 }).collect();
            seeds.push((head, Tensor::from_vec(g)));
        }
        let (grads, _) = tape.tape.backward(&self.net, &seeds)?;
        Ok((loss, grads))
    }

    /// One RMSProp step on the KL loss for `targets`. Returns the loss
    /// before the step.
    pub fn update_augnet(&mut self, pred: &PolicyPrediction, targets: &AugTargets) -> Result<f64> {
        let (loss, grads) = self.loss_and_gradients(pred, targets)?;
        self.opt.step(&mut self.net, &grads)?;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::make_bin_edges;
    use crate::rng;
    use rand::Rng as _;

    fn aug(seed: u64) -> AugNet {
        AugNet::new(
            make_bin_edges(0.75, 1.25, 7).unwrap(),
            make_bin_edges(-30.0, 30.0, 9).unwrap(),
            (4, 4),
            1e-3,
            &mut rng::stream(seed, 0),
        )
        .unwrap()
    }

    fn bridges(seed: u64) -> BridgeFeatures {
        let mut r = rng::stream(seed, 3);
        BridgeFeatures {
            maps: BRIDGE_RES
                .iter()
                .map(|&s| Tensor::new(vec![WIDTH, s, s], (0..WIDTH * s * s).map(|_| r.random::<f64>()).collect()).unwrap())
                .collect(),
        }
    }

    fn zero_bridges() -> BridgeFeatures {
        BridgeFeatures {
            maps: BRIDGE_RES.iter().map(|&s| Tensor::zeros(&[WIDTH, s, s])).collect(),
        }
    }

    #[test]
    fn heads_are_normalised() {
        let p = aug(1).predict_policies(&bridges(2)).unwrap();
        assert_eq!((p.scale.len(), p.rot.len(), p.occ.len()), (7, 9, 16));
        for probs in [p.scale.probs(), p.rot.probs(), p.occ.probs()] {
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(probs.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn zero_heads_give_uniform_policies() {
        let mut g = aug(1);
        for layer in [SCALE_HEAD, ROT_HEAD, OCC_HEAD] {
            for t in g.network_mut().params_mut(layer) {
                t.data_mut().fill(0.0);
            }
        }
        let p = g.predict_policies(&zero_bridges()).unwrap();
        assert!(p.scale.probs().iter().all(|&v| (v - 1.0 / 7.0).abs() < 1e-15));
        assert!(p.rot.probs().iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-15));
        assert!(p.occ.probs().iter().all(|&v| (v - 1.0 / 16.0).abs() < 1e-15));
    }

    #[test]
    fn prediction_is_deterministic() {
        let a = aug(4).predict_policies(&bridges(5)).unwrap();
        let b = aug(4).predict_policies(&bridges(5)).unwrap();
        assert_eq!(a.scale, b.scale);
        assert_eq!(a.rot, b.rot);
        assert_eq!(a.occ, b.occ);
    }

    #[test]
    fn bad_bridge_shape_is_rejected() {
        let mut b = bridges(1);
        b.maps[1] = Tensor::zeros(&[WIDTH, 8, 8]);
        assert!(aug(1).predict_policies(&b).is_err());
        b.maps.pop();
        assert!(aug(1).predict_policies(&b).is_err());
    }

    #[test]
    fn loss_sr_hand_case() {
        let e = make_bin_edges(0.0, 1.0, 2).unwrap();
        let p = |v: Vec<f64>| BinnedPolicy::new(v, e.clone()).unwrap();
        let l = loss_sr(&p(vec![1.0, 0.0]), &p(vec![0.5, 0.5]), &p(vec![0.5, 0.5]), &p(vec![0.5, 0.5])).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-6);
        let t = p(vec![0.3, 0.7]);
        assert_eq!(loss_sr(&t, &t, &t, &t).unwrap(), 0.0);
    }

    #[test]
    fn loss_aho_hand_case() {
        let mut one_hot = vec![0.0; 16];
        one_hot[3] = 1.0;
        let t = OcclusionPolicy::new(4, 4, one_hot).unwrap();
        let u = OcclusionPolicy::uniform(4, 4).unwrap();
        assert!((loss_aho(&t, &u).unwrap() - 16f64.ln()).abs() < 1e-12);
        assert!((loss_aho(&t, &u).unwrap() - 2.772589).abs() < 1e-6);
        assert_eq!(loss_aho(&u, &u).unwrap(), 0.0);
        assert!(loss_aho(&u, &OcclusionPolicy::uniform(2, 8).unwrap()).is_err());
    }

    #[test]
    fn self_target_leaves_parameters_in_place() {
        let mut g = aug(6);
        let p = g.predict_policies(&bridges(7)).unwrap();
        let targets = AugTargets {
            scale: Some(p.scale.clone()),
            rot: Some(p.rot.clone()),
            occ: Some(p.occ.clone()),
        };
        let before = g.network().flat_params();
        let loss = g.update_augnet(&p, &targets).unwrap();
        assert!(loss.abs() < 1e-12);
        for (a, b) in before.iter().zip(g.network().flat_params()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn stale_prediction_is_rejected() {
        let mut g = aug(6);
        let p = g.predict_policies(&bridges(7)).unwrap();
        let t = AugTargets::occlusion(OcclusionPolicy::uniform(4, 4).unwrap());
        g.update_augnet(&p, &t).unwrap();
        assert!(matches!(g.update_augnet(&p, &t), Err(crate::Error::InvalidState(_))));
    }
}
