//! Multivariate total conditional variance (MultiTCV).
//!
//! For every area the conditional covariance of the `J` spatial effects given
//! all other areas is the inverse of the area's diagonal block of the joint
//! precision; its determinant (generalized variance) is summed over areas.
//! Smaller totals mean stronger theoretical smoothing.
//!
//! Because each block is `M′⁻¹ diag(Q_j[i,i]) M⁻¹` (or `Q[i,i] Σ_b⁻¹` in the
//! separable case), the determinant reduces to
//! `|Σ_b| · Π_j (λ_j w⁺_i + 1 − λ_j)⁻¹`, which is what the default path uses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ArealGraph;
use crate::prior::{joint_precision_block, BetweenCov, CarPrecision, PriorKind, PriorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TcvMethod {
    Generic,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TcvResult {
    pub total: f64,
    /// Per-area generalized conditional variances `|[(Σ⁻¹)_ii]⁻¹|`.
    pub per_area: Vec<f64>,
    pub method: TcvMethod,
}

fn check_isolated(spec: &PriorSpec, graph: &ArealGraph, dim: usize) -> Result<()> {
    for (i, &w) in graph.neighbor_counts().iter().enumerate() {
        if w == 0 && (0..dim).any(|j| spec.lambda_for(j) >= 1.0) {
            return Err(Error::IsolatedArea { area: i + 1 });
        }
    }
    Ok(())
}

/// Closed-form MultiTCV.
pub fn multivariate_tcv(spec: &PriorSpec, sigma_b: &BetweenCov, graph: &ArealGraph) -> Result<TcvResult> {
    let dim = sigma_b.dim();
    spec.validate(dim)?;
    check_isolated(spec, graph, dim)?;
    let det = sigma_b.determinant();
    let precisions: Vec<CarPrecision> = (0..dim).map(|j| CarPrecision::new(graph, spec.lambda_for(j))).collect();
    let per_area: Vec<f64> = (0..graph.num_areas())
        .map(|i| det / precisions.iter().map(|q| q.diag(i)).product::<f64>())
        .collect();
    Ok(TcvResult {
        total: per_area.iter().sum(),
        per_area,
        method: TcvMethod::ClosedForm,
    })
}

/// MultiTCV by inverting every joint-precision block and taking its
/// determinant.
pub fn multivariate_tcv_generic(spec: &PriorSpec, sigma_b: &BetweenCov, graph: &ArealGraph) -> Result<TcvResult> {
    let dim = sigma_b.dim();
    spec.validate(dim)?;
    check_isolated(spec, graph, dim)?;
    let per_area = (0..graph.num_areas())
        .map(|i| {
            let block = joint_precision_block(spec, sigma_b, graph, i)?;
            let chol = block
                .cholesky()
                .ok_or_else(|| Error::Numerical(format!("precision block of area {} not SPD", i + 1)))?;
            Ok(1.0 / chol.determinant())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(TcvResult {
        total: per_area.iter().sum(),
        per_area,
        method: TcvMethod::Generic,
    })
}

/// One hyperparameter cell of a bivariate TCV grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaCell {
    pub sigma11: f64,
    pub sigma22: f64,
    pub rho: f64,
}

impl SigmaCell {
    pub fn between_cov(&self) -> Result<BetweenCov> {
        BetweenCov::bivariate(self.sigma11, self.sigma22, self.rho)
    }
}

/// Cartesian product of the Σ₁₁, Σ₂₂ and ρ grids, in that nesting order.
pub fn sigma_grid(sigma11: &[f64], sigma22: &[f64], rho: &[f64]) -> Vec<SigmaCell> {
    let mut out = Vec::new();
    for &s11 in sigma11 {
        for &s22 in sigma22 {
            for &r in rho {
                out.push(SigmaCell {
                    sigma11: s11,
                    sigma22: s22,
                    rho: r,
                });
            }
        }
    }
    out
}

/// The prior specifications a family expands to over a lambda grid: one iCAR
/// spec (the grid is ignored), one LCAR spec per λ, and every ordered pair
/// `(λ₁, λ₂)` for bivariate LjCAR.
pub fn expand_family(kind: PriorKind, lambda_grid: &[f64]) -> Result<Vec<PriorSpec>> {
    match kind {
        PriorKind::Icar => Ok(vec![PriorSpec::Icar]),
        PriorKind::Lcar => {
            if lambda_grid.is_empty() {
                return Err(Error::Parameter("empty lambda grid for LCAR".into()));
            }
            lambda_grid.iter().map(|&l| PriorSpec::lcar(l)).collect()
        }
        PriorKind::Ljcar => {
            if lambda_grid.is_empty() {
                return Err(Error::Parameter("empty lambda grid for LjCAR".into()));
            }
            let mut out = Vec::new();
            for &a in lambda_grid {
                for &b in lambda_grid {
                    out.push(PriorSpec::ljcar(vec![a, b])?);
                }
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TcvRow {
    pub spec: PriorSpec,
    pub cell: SigmaCell,
    pub result: TcvResult,
}

/// Evaluates every (Σ cell, λ combination) in deterministic order: the Σ
/// grid is the outer loop.
pub fn tcv_grid(
    kind: PriorKind,
    sigma_cells: &[SigmaCell],
    lambda_grid: &[f64],
    graph: &ArealGraph,
) -> Result<Vec<TcvRow>> {
    if sigma_cells.is_empty() {
        return Err(Error::Parameter("empty covariance grid".into()));
    }
    let specs = expand_family(kind, lambda_grid)?;
    let mut rows = Vec::with_capacity(sigma_cells.len() * specs.len());
    for cell in sigma_cells {
        let sigma_b = cell.between_cov()?;
        for spec in &specs {
            rows.push(TcvRow {
                spec: spec.clone(),
                cell: *cell,
                result: multivariate_tcv(spec, &sigma_b, graph)?,
            });
        }
    }
    Ok(rows)
}

pub const TCV_CSV_HEADER: &str = "prior,lambda1,lambda2,sigma11,sigma22,rho,multitcv";

/// CSV line in the `prior,lambda1,lambda2,sigma11,sigma22,rho,multitcv`
/// schema. Values are written at full precision.
pub fn tcv_csv_line(row: &TcvRow) -> String {
    let (l1, l2) = match &row.spec {
        PriorSpec::Icar => (String::new(), String::new()),
        PriorSpec::Lcar { lambda } => (lambda.to_string(), String::new()),
        PriorSpec::Ljcar { lambdas } => (
            lambdas[0].to_string(),
            lambdas.get(1).map(|l| l.to_string()).unwrap_or_default(),
        ),
    };
    format!(
        "{},{},{},{},{},{},{:e}",
        row.spec.kind(),
        l1,
        l2,
        row.cell.sigma11,
        row.cell.sigma22,
        row.cell.rho,
        row.result.total
    )
}
