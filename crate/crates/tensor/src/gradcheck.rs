use crate::error::{invalid, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    /// `max |analytic − fd| / max(1, |analytic|, |fd|)` over checked coordinates.
    pub max_rel_error: f64,
    /// `(input, coordinate)` of the worst checked coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Coordinates whose `±eps` perturbation crosses a non-differentiable
    /// point (a ReLU sign change, a new argmax, a clamp edge).
    pub skipped: Vec<(usize, usize)>,
}

impl GradcheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

fn evaluate<F>(inputs: &[Tensor<f64>], f: &F) -> Result<(f64, u64)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    g.set_check_finite(true);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect();
    let out = f(&mut g, &vars)?;
    Ok((g.value(out).data()[0], g.branch_signature()))
}

/// Compare the tape's gradient of the scalar `f(inputs)` with central
/// finite differences, coordinate by coordinate.
pub fn gradcheck<F>(inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(invalid("gradcheck", "eps must be positive"));
    }
    let mut g = Graph::new();
    g.set_check_finite(true);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    let signature = g.branch_signature();
    g.backward(out)?;

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: Vec::new(),
    };
    let mut probe = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for (j, &a) in analytic.iter().enumerate() {
            let x = inputs[i].data()[j];
            probe[i].data_mut()[j] = x + eps;
            let (fp, sp) = evaluate(&probe, &f)?;
            probe[i].data_mut()[j] = x - eps;
            let (fm, sm) = evaluate(&probe, &f)?;
            probe[i].data_mut()[j] = x;
            if sp != signature || sm != signature {
                report.skipped.push((i, j));
                continue;
            }
            let fd = (fp - fm) / (2.0 * eps);
            let rel = (a - fd).abs() / 1f64.max(a.abs()).max(fd.abs());
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((i, j));
                }
            }
        }
    }
    Ok(report)
}
