//! Central-difference gradient verification.

use super::{Graph, Tensor, Var};
use crate::Result;

/// Worst disagreement between analytic and central-difference gradients.
///
/// The relative error of an entry is `|a − n| / max(|a|, |n|, 1e-3·‖a‖∞)`:
/// entries that are tiny compared with the largest gradient are judged on an
/// absolute scale instead of amplifying finite-difference noise.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat entry index)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    /// Smallest distance of the graph from a non-smooth switch point.
    pub kink_margin: f64,
    pub evaluations: usize,
}

/// Check the gradient of the scalar built by `f` with respect to each tensor
/// in `inputs`, using step `h`.
pub fn grad_check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
    let kink_margin = g.kink_margin();

    let scale = analytic.iter().fold(0.0f64, |m, t| m.max(t.max_abs()));
    let floor = (1e-3 * scale).max(1e-12);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        kink_margin,
        evaluations: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let orig = work[ti].data()[k];
            work[ti].data_mut()[k] = orig + h;
            let plus = eval(&work)?;
            work[ti].data_mut()[k] = orig - h;
            let minus = eval(&work)?;
            work[ti].data_mut()[k] = orig;
            report.evaluations += 2;

            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (ti, k);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
