//! Central finite-difference checks for graph-built losses.

use super::graph::{Graph, Var};
use super::params::ParamSet;

/// One compared scalar: `(analytic, numeric)`.
pub type GradPair = (f64, f64);

/// Compares the tape gradient of every parameter scalar with a central
/// difference `(f(θ+h) − f(θ−h)) / 2h`.
pub fn check_param_gradients<F>(params: &ParamSet, build: F, h: f64) -> Vec<GradPair>
where
    F: for<'p> Fn(&mut Graph<'p>, &'p ParamSet) -> Var,
{
    let analytic = {
        let mut g = Graph::new();
        let loss = build(&mut g, params);
        g.backward(loss, params)
    };
    let eval = |p: &ParamSet| {
        let mut g = Graph::new();
        let loss = build(&mut g, p);
        g.scalar(loss)
    };
    let mut work = params.clone();
    let mut out = Vec::new();
    for id in params.ids() {
        let n = params.get(id).len();
        for k in 0..n {
            let orig = params.get(id).as_slice().unwrap()[k];
            work.get_mut(id).as_slice_mut().unwrap()[k] = orig + h;
            let up = eval(&work);
            work.get_mut(id).as_slice_mut().unwrap()[k] = orig - h;
            let down = eval(&work);
            work.get_mut(id).as_slice_mut().unwrap()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic
                .get(id)
                .map(|g| g.as_standard_layout()[[k / g.ncols(), k % g.ncols()]])
                .unwrap_or(0.0);
            out.push((a, numeric));
        }
    }
    out
}

/// Largest `|a − n| / max(|a|, |n|, floor)` over the pairs. The floor keeps
/// entries that are zero on both sides from dominating.
pub fn max_relative_error(pairs: &[GradPair]) -> f64 {
    pairs
        .iter()
        .map(|&(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
