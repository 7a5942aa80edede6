//! Central finite-difference checks of analytic gradients.
//!
//! The reported error is the norm-wise relative error
//! `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`, maximized over the
//! checked tensors.

use crate::graph::{Bound, Graph, Mat, Var};
use crate::params::Params;

const STEP: f64 = 1e-6;

fn relative_error(a: &Mat, n: &Mat) -> f64 {
    let diff = (a - n).mapv(|x| x * x).sum().sqrt();
    let scale = a.mapv(|x| x * x).sum().sqrt().max(n.mapv(|x| x * x).sum().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Checks `d loss / d x` for a loss built by `f` from the leaf `x`.
pub fn check_input_gradient(x: &Mat, f: impl Fn(&mut Graph, Var) -> Var) -> f64 {
    let eval = |m: &Mat| {
        let mut g = Graph::new();
        let v = g.input(m.clone());
        let loss = f(&mut g, v);
        g.scalar(loss)
    };
    let mut g = Graph::new();
    let v = g.input(x.clone());
    let loss = f(&mut g, v);
    g.backward(loss);
    let analytic = g.grad(v).cloned().unwrap_or_else(|| Mat::zeros(x.raw_dim()));
    let mut numeric = Mat::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[r, c]];
        probe[[r, c]] = orig + STEP;
        let up = eval(&probe);
        probe[[r, c]] = orig - STEP;
        let down = eval(&probe);
        probe[[r, c]] = orig;
        numeric[[r, c]] = (up - down) / (2.0 * STEP);
    }
    relative_error(&analytic, &numeric)
}

/// Checks the gradient of a loss with respect to every matrix of `params`.
pub fn check_param_gradients(params: &Params, f: impl Fn(&mut Graph, &Bound) -> Var) -> f64 {
    let eval = |p: &Params| {
        let mut g = Graph::new();
        let b = g.bind(p);
        let loss = f(&mut g, &b);
        g.scalar(loss)
    };
    let mut g = Graph::new();
    let bound = g.bind(params);
    let loss = f(&mut g, &bound);
    g.backward(loss);
    let analytic = g.grads_of(&bound);
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for (k, a) in analytic.iter().enumerate() {
        let mut numeric = Mat::zeros(a.raw_dim());
        for idx in 0..a.len() {
            let (r, c) = (idx / a.ncols(), idx % a.ncols());
            let orig = probe.values()[k][[r, c]];
            probe.values_mut()[k][[r, c]] = orig + STEP;
            let up = eval(&probe);
            probe.values_mut()[k][[r, c]] = orig - STEP;
            let down = eval(&probe);
            probe.values_mut()[k][[r, c]] = orig;
            numeric[[r, c]] = (up - down) / (2.0 * STEP);
        }
        worst = worst.max(relative_error(a, &numeric));
    }
    worst
}
