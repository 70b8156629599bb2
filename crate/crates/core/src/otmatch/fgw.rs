//! Fused Gromov-Wasserstein matching between two embedded image sets.
//!
//! The quadratic structure term is linearized around the current plan,
//! `S_ij(T) = Σ_{i',j'} (D_X(i,i') − D_Y(j,j'))² T_{i'j'}`, and the fused cost
//! `(1 − α) C + α S(T)` is re-solved with Sinkhorn for a fixed number of
//! outer iterations starting from the product coupling.

use super::matrix::Mat;
use super::sinkhorn::{sinkhorn, SinkhornConfig, TransportPlan};
use crate::error::{Error, Result};
use crate::imgcore::EmbeddingSet;

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_OUTER_ITERS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrices {
    /// `‖x_i − y_j‖²`, source × target.
    pub cross: Mat,
    /// `‖x_i − x_i'‖²`.
    pub intra_source: Mat,
    /// `‖y_j − y_j'‖²`.
    pub intra_target: Mat,
    pub alpha: f64,
}

impl CostMatrices {
    pub fn source_count(&self) -> usize {
        self.cross.rows()
    }

    pub fn target_count(&self) -> usize {
        self.cross.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        let (n, m) = (self.source_count(), self.target_count());
        if self.intra_source.rows() != n
            || self.intra_source.cols() != n
            || self.intra_target.rows() != m
            || self.intra_target.cols() != m
        {
            return Err(Error::Shape(
                "intra-domain matrices do not match the cross cost".into(),
            ));
        }
        for (mat, what) in [
            (&self.cross, "cross"),
            (&self.intra_source, "source"),
            (&self.intra_target, "target"),
        ] {
            if mat.data().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Range(format!(
                    "{what} cost must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }
}

pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn check_vectors(v: &[Vec<f64>], dim: usize, what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Shape(format!("{what} set is empty")));
    }
    for (i, x) in v.iter().enumerate() {
        if x.len() != dim {
            return Err(Error::Shape(format!(
                "{what} vector {i} has dimension {}, expected {dim}",
                x.len()
            )));
        }
        if x.iter().any(|e| !e.is_finite()) {
            return Err(Error::Range(format!("{what} vector {i} is not finite")));
        }
    }
    Ok(())
}

pub fn pairwise_sq_distances(x: &[Vec<f64>], y: &[Vec<f64>]) -> Mat {
    Mat::from_fn(x.len(), y.len(), |i, j| squared_distance(&x[i], &y[j]))
}

pub fn build_costs_from_vectors(
    source: &[Vec<f64>],
    target: &[Vec<f64>],
    alpha: f64,
) -> Result<CostMatrices> {
    let dim = source.first().map_or(0, Vec::len);
    check_vectors(source, dim, "source")?;
    check_vectors(target, dim, "target")?;
    let costs = CostMatrices {
        cross: pairwise_sq_distances(source, target),
        intra_source: pairwise_sq_distances(source, source),
        intra_target: pairwise_sq_distances(target, target),
        alpha,
    };
    costs.validate()?;
    Ok(costs)
}

pub fn build_costs(source: &EmbeddingSet, target: &EmbeddingSet, alpha: f64) -> Result<CostMatrices> {
    if source.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "embedding dimensions differ: {} vs {}",
            source.dim(),
            target.dim()
        )));
    }
    let widen = |set: &EmbeddingSet| -> Vec<Vec<f64>> {
        set.records()
            .iter()
            .map(|r| r.vector.iter().map(|&v| v as f64).collect())
            .collect()
    };
    build_costs_from_vectors(&widen(source), &widen(target), alpha)
}

fn normalized(m: &Mat) -> Mat {
    let max = m.max();
    if max > 0.0 {
        m.scaled(1.0 / max)
    } else {
        m.clone()
    }
}

/// Linearized structure cost `S(T)`, in `O(n² m + n m²)`.
pub fn structure_cost(dx: &Mat, dy: &Mat, plan: &Mat) -> Mat {
    let row_mass = plan.row_sums();
    let col_mass = plan.col_sums();
    let sq_x: Vec<f64> = (0..dx.rows())
        .map(|i| dx.row(i).iter().zip(&row_mass).map(|(d, r)| d * d * r).sum())
        .collect();
    let sq_y: Vec<f64> = (0..dy.rows())
        .map(|j| dy.row(j).iter().zip(&col_mass).map(|(d, c)| d * d * c).sum())
        .collect();
    let cross = dx.matmul(plan).matmul(&dy.transpose());
    Mat::from_fn(plan.rows(), plan.cols(), |i, j| {
        (sq_x[i] + sq_y[j] - 2.0 * cross.get(i, j)).max(0.0)
    })
}

/// `(1 − α)<C, T> + α Σ (D_X − D_Y)² T T` on the given (already scaled) matrices.
pub fn fused_objective(cross: &Mat, dx: &Mat, dy: &Mat, alpha: f64, plan: &Mat) -> f64 {
    let linear = cross.dot(plan);
    if alpha == 0.0 {
        return linear;
    }
    let quad = structure_cost(dx, dy, plan).dot(plan);
    (1.0 - alpha) * linear + alpha * quad
}

#[derive(Clone, Debug)]
pub struct FgwResult {
    pub plan: TransportPlan,
    /// Fused objective of the product initialization followed by each outer
    /// iterate, on the scaled costs.
    pub objectives: Vec<f64>,
}

pub fn fgw_match(
    costs: &CostMatrices,
    a: &[f64],
    b: &[f64],
    cfg: &SinkhornConfig,
    outer_iters: usize,
) -> Result<FgwResult> {
    costs.validate()?;
    if outer_iters == 0 {
        return Err(Error::Config("outer_iters must be at least 1".into()));
    }
    let (n, m) = (costs.source_count(), costs.target_count());
    if a.len() != n || b.len() != m {
        return Err(Error::Shape("marginals do not match the cost matrix".into()));
    }
    let (cross, dx, dy) = if cfg.normalize_cost {
        (
            normalized(&costs.cross),
            normalized(&costs.intra_source),
            normalized(&costs.intra_target),
        )
    } else {
        (
            costs.cross.clone(),
            costs.intra_source.clone(),
            costs.intra_target.clone(),
        )
    };
    let alpha = costs.alpha;

    let mut current = Mat::from_fn(n, m, |i, j| a[i] * b[j]);
    let mut objectives = vec![fused_objective(&cross, &dx, &dy, alpha, &current)];
    let mut last = None;
    for _ in 0..outer_iters {
        let fused = if alpha == 0.0 {
            cross.clone()
        } else {
            let s = structure_cost(&dx, &dy, &current);
            Mat::from_fn(n, m, |i, j| (1.0 - alpha) * cross.get(i, j) + alpha * s.get(i, j))
        };
        let plan = sinkhorn(&fused, a, b, cfg)?;
        current = plan.plan.clone();
        objectives.push(fused_objective(&cross, &dx, &dy, alpha, &current));
        last = Some(plan);
    }
    Ok(FgwResult {
        plan: last.expect("at least one outer iteration"),
        objectives,
    })
}
