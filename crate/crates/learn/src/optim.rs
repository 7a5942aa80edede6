use serde::{Deserialize, Serialize};

use crate::graph::Mat;
use crate::params::Params;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    m: Params,
    v: Params,
}

impl Adam {
    pub fn new(params: &Params, lr: f64) -> Self {
        let zeros = || {
            let mut p = Params::new();
            for (n, m) in params.names().iter().zip(params.values()) {
                p.add(n.clone(), Mat::zeros(m.raw_dim()));
            }
            p
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut Params, grads: &[Mat]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (k, g) in grads.iter().enumerate() {
            let m = &mut self.m.values_mut()[k];
            m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            let v = &mut self.v.values_mut()[k];
            v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let p = &mut params.values_mut()[k];
            ndarray::Zip::from(p)
                .and(&self.m.values()[k])
                .and(&self.v.values()[k])
                .for_each(|p, &m, &v| *p -= lr * (m / c1) / ((v / c2).sqrt() + eps));
        }
    }
}
