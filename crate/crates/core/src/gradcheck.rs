//! Central finite-difference checks for the autodiff tape.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Tensor};
use crate::params::ParamStore;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest per-tensor `‖a − n‖ / (‖a‖ + ‖n‖)`.
    pub max_rel_error: f64,
    /// Tensor attaining `max_rel_error`.
    pub worst: String,
    /// Number of scalar entries probed.
    pub probed: usize,
}

impl GradCheckReport {
    fn merge(&mut self, name: &str, err: f64, probed: usize) {
        self.probed += probed;
        if err > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = name.to_string();
        }
    }
}

/// Below this norm both gradients are treated as exactly zero.
const ZERO_NORM: f64 = 1e-12;

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let denom = norm(analytic) + norm(numeric);
    if denom < ZERO_NORM {
        0.0
    } else {
        norm(&diff) / denom
    }
}

fn total(g: &Graph, out: NodeId) -> f64 {
    g.value(out).sum()
}

/// Every `stride`-th entry, so at most `max_entries` are probed per tensor.
fn probe_indices(len: usize, max_entries: usize) -> impl Iterator<Item = usize> {
    let stride = len.div_ceil(max_entries.max(1)).max(1);
    (0..len).step_by(stride)
}

/// Compares tape gradients of `sum(build(params))` against central
/// differences for every parameter in `params`.
pub fn check_params<F>(params: &ParamStore, eps: f64, max_entries: usize, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let out = build(&mut g, params)?;
    let grads = g.backward(out).params(params);
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: String::new(), probed: 0 };
    let mut probe = params.clone();
    for (name, value) in params.iter() {
        let analytic_full = grads.get(name).cloned().unwrap_or_else(|| Tensor::zeros(value.raw_dim()));
        let flat: Vec<f64> = value.iter().copied().collect();
        let analytic_all: Vec<f64> = analytic_full.iter().copied().collect();
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for i in probe_indices(flat.len(), max_entries) {
            let eval = |delta: f64, probe: &mut ParamStore| -> Result<f64> {
                let t = probe.get_mut(name)?;
                let slot = t.iter_mut().nth(i).expect("index in range");
                *slot = flat[i] + delta;
                let mut g = Graph::new();
                let out = build(&mut g, probe)?;
                Ok(total(&g, out))
            };
            let plus = eval(eps, &mut probe)?;
            let minus = eval(-eps, &mut probe)?;
            eval(0.0, &mut probe)?;
            numeric.push((plus - minus) / (2.0 * eps));
            analytic.push(analytic_all[i]);
        }
        let err = relative_error(&analytic, &numeric);
        if !err.is_finite() {
            return Err(Error::Degenerate(format!("non-finite gradient for {name}")));
        }
        report.merge(name, err, analytic.len());
    }
    Ok(report)
}

/// Same check with respect to a single input tensor.
pub fn check_input<F>(x: &Tensor, eps: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let xin = g.input(x.clone());
    let out = build(&mut g, xin)?;
    let analytic: Vec<f64> = g.backward(out).wrt(xin).map(|t| t.iter().copied().collect()).unwrap_or_else(|| vec![0.0; x.len()]);
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let f = |delta: f64| -> Result<f64> {
            let mut p = x.clone();
            *p.iter_mut().nth(i).expect("index in range") += delta;
            let mut g = Graph::new();
            let xin = g.input(p);
            let out = build(&mut g, xin)?;
            Ok(total(&g, out))
        };
        numeric.push((f(eps)? - f(-eps)?) / (2.0 * eps));
    }
    Ok(GradCheckReport { max_rel_error: relative_error(&analytic, &numeric), worst: "input".into(), probed: x.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn quadratic_matches() {
        let x = array![[0.3, -1.2, 2.0]];
        let r = check_input(&x, 1e-5, |g, x| Ok(g.mul(x, x))).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn detects_wrong_gradient() {
        assert!(relative_error(&[1.0, 2.0], &[1.0, 2.5]) > 0.05);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }
}
