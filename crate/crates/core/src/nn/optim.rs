use serde::{Deserialize, Serialize};

use super::{Real, Sequential};

/// Update rule. `Adam::beta1` and `Sgd::momentum` play the momentum role.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.5,
            beta2: 0.999,
        }
    }
}

/// Optimizer state for one network.
#[derive(Debug, Clone)]
pub struct Optimizer<F> {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Vec<F>>,
    second: Vec<Vec<F>>,
}

impl<F: Real> Optimizer<F> {
    pub fn new(kind: OptimizerKind, lr: f64, net: &Sequential<F>) -> Self {
        let zeros = net.zero_grads();
        Self {
            kind,
            lr,
            step: 0,
            second: match kind {
                OptimizerKind::Adam { .. } => zeros.clone(),
                OptimizerKind::Sgd { .. } => Vec::new(),
            },
            first: zeros,
        }
    }

    pub fn step(&mut self, net: &mut Sequential<F>, grads: &[Vec<F>]) {
        self.step += 1;
        let lr = F::of(self.lr);
        match self.kind {
            OptimizerKind::Sgd { momentum } => {
                let mu = F::of(momentum);
                for ((p, g), vel) in net.params_mut().into_iter().zip(grads).zip(&mut self.first) {
                    for ((w, &gi), v) in p.value.iter_mut().zip(g).zip(vel.iter_mut()) {
                        *v = mu * *v + gi;
                        *w = *w - lr * *v;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2 } => {
                let (b1, b2) = (F::of(beta1), F::of(beta2));
                let c1 = F::of(1.0 - beta1.powi(self.step as i32));
                let c2 = F::of(1.0 - beta2.powi(self.step as i32));
                let eps = F::of(1e-8);
                for (((p, g), m), v) in net
                    .params_mut()
                    .into_iter()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((w, &gi), mi), vi) in p.value.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = b1 * *mi + (F::one() - b1) * gi;
                        *vi = b2 * *vi + (F::one() - b2) * gi * gi;
                        let mh = *mi / c1;
                        let vh = *vi / c2;
                        *w = *w - lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layer, Tensor};
    use rand::SeedableRng;

    fn quadratic_descends(kind: OptimizerKind, lr: f64) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut net = Sequential::<f64>::new(vec![Layer::dense("fc", 3, 1, 1.0, &mut rng)]);
        let mut opt = Optimizer::new(kind, lr, &net);
        let x = Tensor::from_vec(vec![1.0, 0.5, -0.3], 3, 1, 1, 1);
        let loss = |n: &Sequential<f64>| n.forward(x.clone()).data[0].powi(2);
        let start = loss(&net);
        for _ in 0..200 {
            let (y, tr) = net.forward_traced(x.clone());
            let dy = Tensor::from_vec(vec![2.0 * y.data[0]], 1, 1, 1, 1);
            let mut g = net.zero_grads();
            net.backward(&tr, dy, Some(&mut g));
            opt.step(&mut net, &g);
        }
        assert!(
            loss(&net) < 1e-3 * start.max(1e-3),
            "{kind:?} stalled at {}",
            loss(&net)
        );
    }

    #[test]
    fn sgd_and_adam_minimize_a_quadratic() {
        quadratic_descends(OptimizerKind::Sgd { momentum: 0.9 }, 0.02);
        quadratic_descends(OptimizerKind::default(), 0.02);
    }
}
