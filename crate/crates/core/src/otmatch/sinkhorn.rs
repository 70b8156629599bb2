//! Log-domain Sinkhorn for entropic optimal transport.

use serde::{Deserialize, Serialize};

use super::matrix::Mat;
use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornConfig {
    /// Entropic weight, in units of the (normalized) cost.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Stop when the L1 marginal violation drops below this.
    pub tol: f64,
    /// Divide the cost by its largest entry before solving.
    pub normalize_cost: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            max_iters: 1000,
            tol: 1e-6,
            normalize_cost: true,
        }
    }
}

impl SinkhornConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Coupling between two discrete measures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub plan: Mat,
    pub source_marginal: Vec<f64>,
    pub target_marginal: Vec<f64>,
    pub converged: bool,
    /// L1 distance of the plan's marginals to the prescribed ones.
    pub violation: f64,
    pub iterations: usize,
}

impl TransportPlan {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.plan.get(i, j)
    }
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn check_marginal(m: &[f64], len: usize, what: &str) -> Result<()> {
    if m.len() != len {
        return Err(Error::Shape(format!(
            "{what} marginal has length {}, expected {len}",
            m.len()
        )));
    }
    if m.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Range(format!("{what} marginal must be strictly positive")));
    }
    let total: f64 = m.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Range(format!(
            "{what} marginal sums to {total}, expected 1"
        )));
    }
    Ok(())
}

/// L1 marginal violation of an arbitrary plan.
pub fn marginal_violation(plan: &Mat, a: &[f64], b: &[f64]) -> f64 {
    let rows: f64 = plan.row_sums().iter().zip(a).map(|(r, a)| (r - a).abs()).sum();
    let cols: f64 = plan.col_sums().iter().zip(b).map(|(c, b)| (c - b).abs()).sum();
    rows + cols
}

/// Solves `min <P, C> + ε Σ P (log P − 1)` over couplings of `a` and `b`.
///
/// Potentials are kept in units of ε; the plan is
/// `P_ij = exp(f_i + g_j − C_ij / ε)`. A run that exhausts `max_iters`
/// returns its last plan with `converged = false`.
pub fn sinkhorn(cost: &Mat, a: &[f64], b: &[f64], cfg: &SinkhornConfig) -> Result<TransportPlan> {
    cfg.validate()?;
    let (n, m) = (cost.rows(), cost.cols());
    if n == 0 || m == 0 {
        return Err(Error::Shape("empty cost matrix".into()));
    }
    check_marginal(a, n, "source")?;
    check_marginal(b, m, "target")?;
    if !cost.is_finite() {
        return Err(Error::Numerical("cost matrix has non-finite entries".into()));
    }

    let scale = if cfg.normalize_cost {
        let max = cost.max();
        if max > 0.0 {
            1.0 / max
        } else {
            1.0
        }
    } else {
        1.0
    };
    // kernel exponent −C/ε, row-major and column-major copies
    let inv_eps = 1.0 / cfg.epsilon;
    let k = Mat::from_fn(n, m, |i, j| -(cost.get(i, j) * scale) * inv_eps);
    let kt = k.transpose();
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();

    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut row_lse = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations <= cfg.max_iters {
        // row log-sums of the current plan, up to f
        for (i, out) in row_lse.iter_mut().enumerate() {
            let row = k.row(i);
            *out = log_sum_exp(row.iter().zip(&g).map(|(kij, gj)| kij + gj));
        }
        if iterations > 0 {
            // columns are exact after the g-update, so rows carry the violation
            let violation: f64 = row_lse
                .iter()
                .zip(&f)
                .zip(a)
                .map(|((l, fi), ai)| ((l + fi).exp() - ai).abs())
                .sum();
            if !violation.is_finite() {
                return Err(Error::Numerical(format!(
                    "sinkhorn diverged at iteration {iterations} (epsilon {})",
                    cfg.epsilon
                )));
            }
            if violation < cfg.tol {
                converged = true;
                break;
            }
            if iterations == cfg.max_iters {
                break;
            }
        }
        for i in 0..n {
            f[i] = log_a[i] - row_lse[i];
        }
        for j in 0..m {
            let col = kt.row(j);
            g[j] = log_b[j] - log_sum_exp(col.iter().zip(&f).map(|(kij, fi)| kij + fi));
        }
        iterations += 1;
    }

    let plan = Mat::from_fn(n, m, |i, j| (f[i] + g[j] + k.get(i, j)).exp());
    if !plan.is_finite() {
        return Err(Error::Numerical("transport plan has non-finite entries".into()));
    }
    let violation = marginal_violation(&plan, a, b);
    Ok(TransportPlan {
        plan,
        source_marginal: a.to_vec(),
        target_marginal: b.to_vec(),
        converged,
        violation,
        iterations,
    })
}
