use advaug::geometry::Raster;
use advaug::net::Network;
use advaug::policy::{upscale_mask, OcclusionMask};
use advaug::pose_net::{heatmap_targets, PoseNet, BRIDGE_RES, GRID, INPUT_SIZE, WIDTH};
use advaug::rng;
use advaug::synthdata::FigureSpec;
use rand::Rng as _;

fn step_along(net: &Network, grads: &[f64], lr: f64) -> Network {
    let mut out = net.clone();
    let mut k = 0;
    for li in 0..out.layers().len() {
        for t in out.params_mut(li) {
            for v in t.data_mut() {
                *v -= lr * grads[k];
                k += 1;
            }
        }
    }
    out
}

#[test]
fn small_steps_down_the_gradient_lower_the_loss() {
    let spec = FigureSpec::default();
    for seed in 0..10 {
        // the head starts at zero; jitter it so every parameter sees a gradient
        let mut d = PoseNet::new(5, &mut rng::stream(seed, 0)).unwrap();
        let mut r = rng::stream(seed, 1);
        for li in 0..d.network().layers().len() {
            for t in d.network_mut().params_mut(li) {
                for v in t.data_mut() {
                    *v += 0.01 * (r.random::<f64>() - 0.5);
                }
            }
        }
        let x = spec.sample(seed, 0);
        let target = heatmap_targets(&x.keypoints).unwrap();
        let (before, grads) = d.loss_and_gradients(&x.image, &target, None).unwrap();
        let g = grads.flat();
        let norm2: f64 = g.iter().map(|v| v * v).sum();
        assert!(norm2 > 0.0);
        let lr = 1e-3 / norm2.sqrt();
        let stepped = PoseNet::from_network(step_along(d.network(), &g, lr)).unwrap();
        let after = stepped.loss(&x.image, &target, None).unwrap();
        assert!(after < before, "seed {seed}: {after} >= {before}");
    }
}

#[test]
fn occlusion_only_touches_its_cells() {
    let spec = FigureSpec::default();
    let mut r = rng::stream(11, 0);
    for trial in 0..20 {
        let d = PoseNet::new(5, &mut rng::stream(trial, 0)).unwrap();
        let x = spec.sample(11, trial);
        let n = r.random_range(1..=2);
        let mut cells = rand::seq::index::sample(&mut r, GRID * GRID, n).into_vec();
        cells.sort();
        let mask = OcclusionMask::new(GRID, GRID, &cells).unwrap();
        let (_, plain, _) = d.forward_pose(&x.image, None).unwrap();
        let (_, masked, _) = d.forward_pose(&x.image, Some(&mask)).unwrap();
        for ((p, m), &res) in plain.maps.iter().zip(&masked.maps).zip(BRIDGE_RES.iter()) {
            let up = upscale_mask(&mask, res, res).unwrap();
            for c in 0..WIDTH {
                for i in 0..res * res {
                    let k = c * res * res + i;
                    if up.data()[i] == 0.0 {
                        assert_eq!(m.data()[k], 0.0);
                    } else {
                        assert_eq!(m.data()[k].to_bits(), p.data()[k].to_bits());
                    }
                }
            }
        }
    }
}

#[test]
fn rejects_a_blank_canvas_of_the_wrong_size() {
    let d = PoseNet::new(5, &mut rng::stream(0, 0)).unwrap();
    assert!(d.predict(&Raster::zeros(INPUT_SIZE / 2, INPUT_SIZE, 1)).is_err());
}
