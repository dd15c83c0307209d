//! Central finite-difference verification of analytic gradients.

use super::{Graph, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |analytic|, |numeric|)` over all coordinates.
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst coordinate.
    pub worst: (usize, usize),
    pub coords_checked: usize,
    /// Some nonsmooth primitive saw a trainable value within `10 * step` of
    /// its kink; the finite difference may straddle it and is unreliable.
    pub near_nonsmooth: bool,
}

impl GradCheckReport {
    pub fn reliable(&self) -> bool {
        !self.near_nonsmooth
    }
}

pub fn grad_check<F>(f: F, point: &Tensor<f64>, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    grad_check_multi(|g, vars| f(g, vars[0]), std::slice::from_ref(point), step)
}

/// Checks the gradient of a scalar function w.r.t. every coordinate of every
/// input in `points`.
pub fn grad_check_multi<F>(f: F, points: &[Tensor<f64>], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::new();
    graph.set_kink_margin(Some(10.0 * step));
    let vars: Vec<Var> = points.iter().map(|p| graph.param(p.clone())).collect();
    let loss = f(&mut graph, &vars)?;
    graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(points)
        .map(|(&v, p)| graph.grad(v).map_or_else(|| vec![0.0; p.numel()], <[f64]>::to_vec))
        .collect();

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|p| g.param(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.item(out))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coords_checked: 0,
        near_nonsmooth: graph.near_kink(),
    };
    let mut shifted: Vec<Tensor<f64>> = points.to_vec();
    for (i, point) in points.iter().enumerate() {
        for j in 0..point.numel() {
            let base = point.data()[j];
            shifted[i].data_mut()[j] = base + step;
            let plus = eval(&shifted)?;
            shifted[i].data_mut()[j] = base - step;
            let minus = eval(&shifted)?;
            shifted[i].data_mut()[j] = base;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[i][j];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (i, j);
            }
            report.coords_checked += 1;
        }
    }
    Ok(report)
}
