//! Finite-difference verification of analytic gradients.

use super::{Graph, Scalar, Tensor, TensorError, TensorId};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub entries_checked: usize,
}

/// Compare analytic gradients against central finite differences, in double
/// precision.
///
/// `forward` receives a graph, the parameter leaves in the order of `params`,
/// and an input leaf; it returns the network output. A non-scalar output is
/// reduced to its mean before differentiation. The returned report carries
/// the max over every parameter entry of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(
    forward: F,
    params: &mut [(String, Tensor<f64>)],
    input: &Tensor<f64>,
    epsilon: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph<f64>, &[TensorId], TensorId) -> Result<TensorId, TensorError>,
{
    if epsilon <= 0.0 {
        return Err(TensorError::BadArgument {
            op: "grad_check",
            msg: format!("epsilon must be positive, got {epsilon}"),
        });
    }

    // Analytic pass.
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new();
        let ids: Vec<TensorId> = params.iter().map(|(_, t)| g.leaf_param(t)).collect();
        let x = g.leaf_detached(input);
        let out = forward(&mut g, &ids, x)?;
        let loss = if g.value(out).len() == 1 { out } else { g.mean(out)? };
        g.backward(loss)?;
        ids.iter()
            .zip(params.iter())
            .map(|(&id, (_, t))| {
                g.grad(id).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()])
            })
            .collect()
    };

    let eval = |params: &[(String, Tensor<f64>)]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let ids: Vec<TensorId> = params.iter().map(|(_, t)| g.leaf_detached(t)).collect();
        let x = g.leaf_detached(input);
        let out = forward(&mut g, &ids, x)?;
        let loss = if g.value(out).len() == 1 { out } else { g.mean(out)? };
        Ok(g.scalar_value(loss))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        entries_checked: 0,
    };
    for pi in 0..params.len() {
        for j in 0..params[pi].1.numel() {
            let orig = params[pi].1.data()[j];
            params[pi].1.data_mut()[j] = orig + epsilon;
            let f_plus = eval(params)?;
            params[pi].1.data_mut()[j] = orig - epsilon;
            let f_minus = eval(params)?;
            params[pi].1.data_mut()[j] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * epsilon);
            let a = analytic[pi][j];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(TensorError::NonFiniteParam { name: params[pi].0.clone(), index: j });
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.entries_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = params[pi].0.clone();
                report.worst_index = j;
            }
        }
    }
    Ok(report)
}

impl<S: Scalar> Graph<S> {
    /// Leaf that is tracked regardless of the tensor's `requires_grad` flag;
    /// used by the checker so callers need not pre-flag clones.
    pub fn leaf_param(&mut self, t: &Tensor<S>) -> TensorId {
        let flagged = t.clone().with_grad();
        self.leaf(&flagged)
    }
}
