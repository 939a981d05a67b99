//! Central finite-difference verification of analytic gradients.
//!
//! The checker re-runs the caller's graph builder with each parameter
//! coordinate perturbed by ±eps, so it is independent of the backward pass
//! it verifies.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::tensor::Tensor;

/// Floor for the relative-error denominator.
pub const REL_DENOM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub rel_tol: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }
}

/// Compare the analytic gradient of a scalar loss against central finite
/// differences `(f(x+eps) - f(x-eps)) / (2 eps)` for every coordinate of
/// every parameter. Relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(
    builder: F,
    params: &[(String, Tensor)],
    eps: f64,
    rel_tol: f64,
) -> Result<CheckReport>
where
    F: Fn(&mut Graph, &[TensorId]) -> Result<TensorId>,
{
    if eps <= 0.0 {
        return Err(Error::invalid(format!("grad_check eps must be positive, got {eps}")));
    }
    if rel_tol <= 0.0 {
        return Err(Error::invalid(format!("grad_check rel_tol must be positive, got {rel_tol}")));
    }

    // Analytic pass: every parameter tracked.
    let mut graph = Graph::new();
    let mut ids = Vec::with_capacity(params.len());
    for (_, t) in params {
        ids.push(graph.leaf_from(t.shape.clone(), t.data.clone(), true)?);
    }
    let loss = builder(&mut graph, &ids)?;
    if graph.data(loss).len() != 1 {
        return Err(Error::invalid(format!(
            "grad_check builder must return a scalar loss, got shape {:?}",
            graph.shape(loss)
        )));
    }
    graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(params.iter())
        .map(|(&id, (_, t))| {
            graph
                .grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let eval = |data: &[Vec<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let mut ids = Vec::with_capacity(params.len());
        for ((_, t), d) in params.iter().zip(data) {
            ids.push(g.leaf_from(t.shape.clone(), d.clone(), false)?);
        }
        let loss = builder(&mut g, &ids)?;
        Ok(g.value(loss))
    };

    let base: Vec<Vec<f64>> = params.iter().map(|(_, t)| t.data.clone()).collect();
    let mut report_params = Vec::with_capacity(params.len());
    let mut overall = 0.0f64;
    for (p, (name, tensor)) in params.iter().enumerate() {
        let mut worst = 0.0f64;
        for i in 0..tensor.numel() {
            let mut plus = base.clone();
            plus[p][i] += eps;
            let mut minus = base.clone();
            minus[p][i] -= eps;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            let a = analytic[p][i];
            let denom = a.abs().max(numeric.abs()).max(REL_DENOM_FLOOR);
            let rel = (a - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
        overall = overall.max(worst);
        report_params.push(ParamCheck {
            name: name.clone(),
            max_rel_error: worst,
            passed: worst < rel_tol,
        });
    }

    Ok(CheckReport { params: report_params, max_rel_error: overall, rel_tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_regression_gradients_pass() {
        // loss = mean((x W + b - y)^2) over a fixed design; 10 parameters
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = Tensor::randn(vec![4, 2], 0.5, &mut rng);
        let b = Tensor::randn(vec![2], 0.5, &mut rng);
        let x_data: Vec<f64> = (0..12).map(|i| (i as f64) * 0.25 - 1.5).collect();
        let y_data: Vec<f64> = (0..6).map(|i| (i as f64) * 0.5 - 1.0).collect();
        let params = vec![("w".to_string(), w), ("b".to_string(), b)];

        let report = grad_check(
            |g, ids| {
                let x = g.leaf_from(vec![3, 4], x_data.clone(), false)?;
                let y = g.leaf_from(vec![3, 2], y_data.clone(), false)?;
                let xw = g.matmul(x, ids[0])?;
                let pred = g.add(xw, ids[1])?;
                let neg_y = g.scale(y, -1.0)?;
                let diff = g.add(pred, neg_y)?;
                let sq = g.mul(diff, diff)?;
                g.mean_all(sq)
            },
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "max rel error {}", report.max_rel_error);
        assert!(report.max_rel_error < 1e-4);
    }

    #[test]
    fn zero_eps_rejected() {
        let params = vec![("x".to_string(), Tensor::zeros(vec![1]))];
        let err = grad_check(|g, ids| g.sum_all(ids[0]), &params, 0.0, 1e-4);
        assert!(err.is_err());
    }

    #[test]
    fn unreachable_parameter_reports_zero_error() {
        let params = vec![
            ("used".to_string(), Tensor::full(vec![2], 0.3)),
            ("unused".to_string(), Tensor::full(vec![2], 0.7)),
        ];
        let report = grad_check(
            |g, ids| {
                let s = g.sigmoid(ids[0])?;
                g.mean_all(s)
            },
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed());
        assert_eq!(report.params[1].max_rel_error, 0.0);
    }
}
