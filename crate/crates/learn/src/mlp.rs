use ndarray::Axis;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{sigmoid, Bound, Graph, Mat, Var};
use crate::params::{uniform_init, Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Elu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Elu => g.elu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }

    fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

/// Fully connected network; rows of the input are samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    pub params: Params,
}

impl Mlp {
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let mut params = Params::new();
        for (k, w) in sizes.windows(2).enumerate() {
            params.add(format!("w{k}"), uniform_init(w[0], w[1], w[0], rng));
            params.add(format!("b{k}"), uniform_init(1, w[1], w[0], rng));
        }
        Self {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Differentiable forward pass using leaves from `bound`.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Var {
        let mut h = x;
        for k in 0..self.layers() {
            let z = g.matmul(h, bound.var(2 * k));
            let z = g.add_row(z, bound.var(2 * k + 1));
            let act = if k + 1 == self.layers() { self.output } else { self.hidden };
            h = act.apply(g, z);
        }
        h
    }

    /// Forward pass without recording a graph.
    pub fn predict(&self, x: &Mat) -> Mat {
        let mut h = x.clone();
        for k in 0..self.layers() {
            let w = &self.params.values()[2 * k];
            let b = &self.params.values()[2 * k + 1];
            let mut z = h.dot(w);
            z += b;
            let act = if k + 1 == self.layers() { self.output } else { self.hidden };
            z.mapv_inplace(|v| act.eval(v));
            h = z;
        }
        h
    }

    pub fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        let m = Mat::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        self.predict(&m).index_axis(Axis(0), 0).to_vec()
    }
}
