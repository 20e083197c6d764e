use rand::seq::index::sample;

use super::{Network, Tensor};
use crate::error::Result;
use crate::rng;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Fraction of parameters probed.
    pub fraction: f64,
    /// Lower bound on the number probed (all of them if the net is smaller).
    pub min_params: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            fraction: 0.05,
            min_params: 10,
            step: 1e-5,
            seed: 0,
        }
    }
}

/// Largest relative error between backprop and central differences over a
/// random subset of parameters. `loss_fn` maps the network output to the
/// loss and its gradient.
pub fn grad_check<F>(net: &Network, input: &Tensor, loss_fn: F, opts: GradCheckOptions) -> Result<f64>
where
    F: Fn(&Tensor) -> (f64, Tensor),
{
    let (out, tape) = net.forward(input)?;
    let (_, dout) = loss_fn(&out);
    let (grads, _) = net.backward(&tape, &dout)?;
    let analytic = grads.flat();

    // (layer, tensor, element) for every scalar parameter, in flat order
    let mut index = Vec::with_capacity(analytic.len());
    for (li, layer) in net.layers().iter().enumerate() {
        for (ti, t) in layer.params().iter().enumerate() {
            for e in 0..t.len() {
                index.push((li, ti, e));
            }
        }
    }
    let n = index.len();
    if n == 0 {
        return Ok(0.0);
    }
    let count = ((n as f64 * opts.fraction).ceil() as usize).max(opts.min_params).min(n);
    let mut r = rng::stream(opts.seed, 0x67c);
    let picks = sample(&mut r, n, count);

    let mut probe = net.clone();
    let mut eval = |li: usize, ti: usize, e: usize, value: f64| -> Result<f64> {
        probe.params_mut(li)[ti].data_mut()[e] = value;
        let (o, _) = probe.forward(input)?;
        Ok(loss_fn(&o).0)
    };

    let mut worst: f64 = 0.0;
    for flat in picks.iter() {
        let (li, ti, e) = index[flat];
        let orig = net.layers()[li].params()[ti].data()[e];
        let plus = eval(li, ti, e, orig + opts.step)?;
        let minus = eval(li, ti, e, orig - opts.step)?;
        eval(li, ti, e, orig)?;
        let numeric = (plus - minus) / (2.0 * opts.step);
        let a = analytic[flat];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
