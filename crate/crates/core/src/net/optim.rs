use super::{Gradients, Network, Tensor};
use crate::error::{invalid_arg, Result};

/// RMSProp: `acc <- rho acc + (1 - rho) g^2`, `p <- p - lr g / (sqrt(acc) + eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    acc: Vec<Vec<Tensor>>,
}

impl RmsProp {
    pub const DEFAULT_RHO: f64 = 0.99;
    pub const DEFAULT_EPS: f64 = 1e-8;

    pub fn new(net: &Network, lr: f64) -> Self {
        Self::with_params(net, lr, Self::DEFAULT_RHO, Self::DEFAULT_EPS)
    }

    pub fn with_params(net: &Network, lr: f64, rho: f64, eps: f64) -> Self {
        Self {
            lr,
            rho,
            eps,
            acc: net
                .layers()
                .iter()
                .map(|l| l.params().iter().map(|p| Tensor::zeros(p.shape())).collect())
                .collect(),
        }
    }

    pub fn accumulators(&self) -> impl Iterator<Item = &Tensor> {
        self.acc.iter().flatten()
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        if self.acc.len() != net.layers().len() {
            return invalid_arg("optimizer state does not match the network");
        }
        let (lr, rho, eps) = (self.lr, self.rho, self.eps);
        for (li, acc_layer) in self.acc.iter_mut().enumerate() {
            if acc_layer.is_empty() {
                continue;
            }
            let g_layer = grads.layer(li);
            let params = net.params_mut(li);
            for ((p, g), a) in params.iter_mut().zip(g_layer).zip(acc_layer.iter_mut()) {
                if p.shape() != g.shape() || p.shape() != a.shape() {
                    return invalid_arg("gradient shape does not match its parameter");
                }
                for ((pv, gv), av) in p.data_mut().iter_mut().zip(g.data()).zip(a.data_mut()) {
                    *av = rho * *av + (1.0 - rho) * gv * gv;
                    *pv -= lr * gv / (av.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
