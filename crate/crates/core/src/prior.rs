//! M-model prior machinery: between-disease covariance, the mixing matrix,
//! Bartlett-factor draws and the within/joint precision matrices.
//!
//! Joint vectors are ordered area-major: entry `i * J + j` holds disease `j`
//! in area `i`, so the `i`-th diagonal `J x J` block of the joint precision
//! is contiguous.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ArealGraph;

/// Default cap on `G * J` for dense joint matrices.
pub const DEFAULT_DENSE_LIMIT: usize = 4000;

/// Symmetric positive-definite between-disease covariance Σ_b.
#[derive(Debug, Clone, PartialEq)]
pub struct BetweenCov(DMatrix<f64>);

impl BetweenCov {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() || values.nrows() == 0 {
            return Err(Error::NotPositiveDefinite(format!(
                "between-disease covariance must be square and non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite("non-finite entry".into()));
        }
        let scale = values.amax().max(f64::MIN_POSITIVE);
        let asym = (&values - values.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(Error::NotPositiveDefinite(format!(
                "asymmetry {asym:e} exceeds tolerance"
            )));
        }
        let sym = (&values + values.transpose()) * 0.5;
        let min_eig = SymmetricEigen::new(sym.clone()).eigenvalues.min();
        if min_eig <= 0.0 || sym.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite(format!("smallest eigenvalue {min_eig:e}")));
        }
        Ok(Self(sym))
    }

    /// Σ_b for two diseases with Σ₁₂ = ρ√(Σ₁₁Σ₂₂).
    pub fn bivariate(sigma11: f64, sigma22: f64, rho: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::Parameter(format!("correlation {rho} outside [-1, 1]")));
        }
        let s12 = rho * (sigma11 * sigma22).sqrt();
        Self::new(DMatrix::from_row_slice(2, 2, &[sigma11, s12, s12, sigma22]))
    }

    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(variances)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn determinant(&self) -> f64 {
        self.0.clone().cholesky().expect("validated SPD").determinant()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.0.clone().cholesky().expect("validated SPD").inverse()
    }

    /// Correlation between diseases `j` and `l`.
    pub fn correlation(&self, j: usize, l: usize) -> f64 {
        self.0[(j, l)] / (self.0[(j, j)] * self.0[(l, l)]).sqrt()
    }
}

/// Which spatial prior family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Icar,
    Lcar,
    Ljcar,
}

impl PriorKind {
    pub fn name(self) -> &'static str {
        match self {
            PriorKind::Icar => "icar",
            PriorKind::Lcar => "lcar",
            PriorKind::Ljcar => "ljcar",
        }
    }

    pub fn is_separable(self) -> bool {
        !matches!(self, PriorKind::Ljcar)
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "icar" => Ok(PriorKind::Icar),
            "lcar" => Ok(PriorKind::Lcar),
            "ljcar" => Ok(PriorKind::Ljcar),
            other => Err(Error::Prior(format!("unknown prior {other:?}"))),
        }
    }
}

/// A spatial prior together with its dependence parameter(s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PriorSpec {
    Icar,
    Lcar { lambda: f64 },
    Ljcar { lambdas: Vec<f64> },
}

fn check_lambda(l: f64) -> Result<()> {
    if (0.0..=1.0).contains(&l) {
        Ok(())
    } else {
        Err(Error::Prior(format!("lambda {l} outside [0, 1]")))
    }
}

impl PriorSpec {
    pub fn lcar(lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(PriorSpec::Lcar { lambda })
    }

    pub fn ljcar(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::Prior("LjCAR needs one lambda per disease".into()));
        }
        for &l in &lambdas {
            check_lambda(l)?;
        }
        Ok(PriorSpec::Ljcar { lambdas })
    }

    pub fn kind(&self) -> PriorKind {
        match self {
            PriorSpec::Icar => PriorKind::Icar,
            PriorSpec::Lcar { .. } => PriorKind::Lcar,
            PriorSpec::Ljcar { .. } => PriorKind::Ljcar,
        }
    }

    /// Checks the lambda values and, for LjCAR, their arity against `dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            PriorSpec::Icar => Ok(()),
            PriorSpec::Lcar { lambda } => check_lambda(*lambda),
            PriorSpec::Ljcar { lambdas } => {
                if lambdas.len() != dim {
                    return Err(Error::Prior(format!(
                        "LjCAR has {} lambdas for {dim} diseases",
                        lambdas.len()
                    )));
                }
                lambdas.iter().try_for_each(|&l| check_lambda(l))
            }
        }
    }

    /// Effective lambda for disease `j` (1 for iCAR).
    pub fn lambda_for(&self, j: usize) -> f64 {
        match self {
            PriorSpec::Icar => 1.0,
            PriorSpec::Lcar { lambda } => *lambda,
            PriorSpec::Ljcar { lambdas } => lambdas[j],
        }
    }

    /// Lambda values of every disease, length `dim`.
    pub fn lambdas(&self, dim: usize) -> Vec<f64> {
        (0..dim).map(|j| self.lambda_for(j)).collect()
    }

    /// Same family with new lambda values (ignored for iCAR).
    pub fn with_lambdas(&self, lambdas: &[f64]) -> Self {
        match self {
            PriorSpec::Icar => PriorSpec::Icar,
            PriorSpec::Lcar { .. } => PriorSpec::Lcar { lambda: lambdas[0] },
            PriorSpec::Ljcar { .. } => PriorSpec::Ljcar {
                lambdas: lambdas.to_vec(),
            },
        }
    }
}

/// Sparse Leroux precision `λR + (1−λ)I` (λ = 1 gives the intrinsic case).
#[derive(Debug, Clone, Copy)]
pub struct CarPrecision<'g> {
    pub graph: &'g ArealGraph,
    pub lambda: f64,
}

impl<'g> CarPrecision<'g> {
    pub fn new(graph: &'g ArealGraph, lambda: f64) -> Self {
        Self { graph, lambda }
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.lambda * self.graph.neighbor_counts()[i] as f64 + 1.0 - self.lambda
    }

    /// Off-diagonal value shared by all neighbouring pairs.
    pub fn off_diag(&self) -> f64 {
        -self.lambda
    }

    pub fn is_intrinsic(&self) -> bool {
        self.lambda >= 1.0
    }

    /// x′Qx.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let diag: f64 = (0..x.len()).map(|i| self.diag(i) * x[i] * x[i]).sum();
        let cross: f64 = self.graph.edges().iter().map(|&(i, k)| x[i] * x[k]).sum();
        diag + 2.0 * self.off_diag() * cross
    }

    /// Σ_k Q[i,k] x[k] over neighbours k ≠ i.
    pub fn neighbor_sum(&self, i: usize, x: &[f64]) -> f64 {
        self.off_diag() * self.graph.neighbors(i).iter().map(|&k| x[k]).sum::<f64>()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let r = self.graph.structure_matrix();
        let g = r.nrows();
        r * self.lambda + DMatrix::identity(g, g) * (1.0 - self.lambda)
    }
}

fn sort_eigen(sym: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(sym.clone());
    let n = sym.nrows();
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let argmax = |c: usize| {
        let col = eig.eigenvectors.column(c);
        col.iamax()
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (ka, kb) = (eig.eigenvalues[a], eig.eigenvalues[b]);
        if (ka - kb).abs() <= 1e-12 * scale {
            argmax(a).cmp(&argmax(b))
        } else {
            kb.partial_cmp(&ka).expect("finite eigenvalues")
        }
    });
    let mut vectors = DMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        if let Some(first) = col.iter().copied().find(|v| v.abs() > 1e-12) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
        vectors.set_column(dst, &col);
        values.push(eig.eigenvalues[src]);
    }
    (values, vectors)
}

/// Eigen-based mixing matrix `M = H diag(√κ)` with `M M′ = Σ_b`.
///
/// Eigenvalues are sorted descending, ties ordered by the position of each
/// eigenvector's dominant component, and every eigenvector is signed so its
/// first nonzero component is positive.
pub fn mixing_matrix(sigma_b: &BetweenCov) -> DMatrix<f64> {
    let (values, mut vectors) = sort_eigen(sigma_b.matrix());
    for (c, &k) in values.iter().enumerate() {
        let s = k.max(0.0).sqrt();
        vectors.column_mut(c).scale_mut(s);
    }
    vectors
}

/// Lower-triangular Bartlett factor `A` of a Wishart(v, I_J) matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BartlettFactor {
    /// Diagonal entries `c_j > 0`.
    pub diag: Vec<f64>,
    /// Strict lower entries `n_jl`, row-major (`(1,0), (2,0), (2,1), ...`).
    pub lower: Vec<f64>,
    pub dof: f64,
}

impl BartlettFactor {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Offset of `n_jl` (j > l) in [`BartlettFactor::lower`].
    pub fn lower_index(j: usize, l: usize) -> usize {
        debug_assert!(j > l);
        j * (j - 1) / 2 + l
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut a = DMatrix::zeros(n, n);
        for j in 0..n {
            a[(j, j)] = self.diag[j];
            for l in 0..j {
                a[(j, l)] = self.lower[Self::lower_index(j, l)];
            }
        }
        a
    }

    /// Σ_b = A A′ (V = I_J so the scale factor L is the identity).
    pub fn sigma_b_matrix(&self) -> DMatrix<f64> {
        let a = self.matrix();
        &a * a.transpose()
    }

    pub fn sigma_b(&self) -> Result<BetweenCov> {
        BetweenCov::new(self.sigma_b_matrix())
    }

    /// Degrees of freedom of the chi-square law of `c_j²` (0-based `j`).
    pub fn chi2_dof(&self, j: usize) -> f64 {
        self.dof - j as f64
    }
}

/// Draws `c_j² ~ χ²_{v−j+1}` (1-based j) and `n_jl ~ N(0,1)` independently.
pub fn sample_bartlett<R: Rng + ?Sized>(dim: usize, dof: f64, rng: &mut R) -> Result<BartlettFactor> {
    if dim == 0 {
        return Err(Error::Parameter("Bartlett dimension must be positive".into()));
    }
    if !(dof >= dim as f64) {
        return Err(Error::Parameter(format!(
            "degrees of freedom {dof} below dimension {dim}"
        )));
    }
    let mut diag = Vec::with_capacity(dim);
    for j in 0..dim {
        let chi = ChiSquared::new(dof - j as f64).map_err(|e| Error::Parameter(e.to_string()))?;
        diag.push(chi.sample(rng).sqrt());
    }
    let lower = (0..dim * (dim - 1) / 2).map(|_| StandardNormal.sample(rng)).collect();
    Ok(BartlettFactor { diag, lower, dof })
}

fn check_disease_index(spec: &PriorSpec, disease: Option<usize>) -> Result<f64> {
    match (spec, disease) {
        (PriorSpec::Ljcar { lambdas }, Some(j)) => lambdas
            .get(j)
            .copied()
            .ok_or_else(|| Error::Prior(format!("disease index {j} out of range"))),
        (PriorSpec::Ljcar { .. }, None) => Err(Error::Prior("LjCAR precision needs a disease index".into())),
        (_, Some(_)) => Err(Error::Prior("disease index only applies to LjCAR".into())),
        (spec, None) => Ok(spec.lambda_for(0)),
    }
}

/// Within-disease precision Q (`G x G`); `disease` is required for LjCAR
/// and rejected otherwise.
pub fn within_precision(spec: &PriorSpec, graph: &ArealGraph, disease: Option<usize>) -> Result<DMatrix<f64>> {
    let lambda = check_disease_index(spec, disease)?;
    check_lambda(lambda)?;
    Ok(CarPrecision::new(graph, lambda).to_dense())
}

fn invert_square(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical(format!("{what} is singular")))
}

/// `i`-th (0-based) diagonal `J x J` block of the joint precision Σ⁻¹.
pub fn joint_precision_block(
    spec: &PriorSpec,
    sigma_b: &BetweenCov,
    graph: &ArealGraph,
    area: usize,
) -> Result<DMatrix<f64>> {
    let dim = sigma_b.dim();
    spec.validate(dim)?;
    if area >= graph.num_areas() {
        return Err(Error::Parameter(format!(
            "area {area} out of range for {} areas",
            graph.num_areas()
        )));
    }
    if spec.kind().is_separable() {
        let q = CarPrecision::new(graph, spec.lambda_for(0)).diag(area);
        return Ok(sigma_b.inverse() * q);
    }
    let m = mixing_matrix(sigma_b);
    let m_inv = invert_square(&m, "mixing matrix")?;
    let d = DMatrix::from_fn(dim, dim, |r, c| {
        if r == c {
            CarPrecision::new(graph, spec.lambda_for(r)).diag(area)
        } else {
            0.0
        }
    });
    let block = m_inv.transpose() * d * &m_inv;
    Ok((&block + block.transpose()) * 0.5)
}

/// Dense joint precision Σ⁻¹ (`GJ x GJ`) using the eigen mixing matrix.
pub fn full_joint_precision(spec: &PriorSpec, sigma_b: &BetweenCov, graph: &ArealGraph) -> Result<DMatrix<f64>> {
    full_joint_precision_with_mixing(spec, &mixing_matrix(sigma_b), graph, DEFAULT_DENSE_LIMIT)
}

/// Dense joint precision for an arbitrary mixing matrix `M` (any factor
/// with `M M′ = Σ_b`), refusing dimensions above `limit`.
pub fn full_joint_precision_with_mixing(
    spec: &PriorSpec,
    mixing: &DMatrix<f64>,
    graph: &ArealGraph,
    limit: usize,
) -> Result<DMatrix<f64>> {
    let dim = mixing.nrows();
    spec.validate(dim)?;
    let g = graph.num_areas();
    let n = g * dim;
    if n > limit {
        return Err(Error::DenseBudget {
            what: "joint precision",
            requested: n,
            limit,
        });
    }
    let m_inv = invert_square(mixing, "mixing matrix")?;
    let m_inv_t = m_inv.transpose();
    let precisions: Vec<DMatrix<f64>> = (0..dim)
        .map(|j| CarPrecision::new(graph, spec.lambda_for(j)).to_dense())
        .collect();
    let mut out = DMatrix::zeros(n, n);
    for l in 0..g {
        for k in 0..g {
            let entries: Vec<f64> = precisions.iter().map(|q| q[(l, k)]).collect();
            if entries.iter().all(|&v| v == 0.0) {
                continue;
            }
            let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(entries));
            let block = &m_inv_t * d * &m_inv;
            out.view_mut((l * dim, k * dim), (dim, dim)).copy_from(&block);
        }
    }
    Ok((&out + out.transpose()) * 0.5)
}

/// Kronecker product `a ⊗ b`.
pub fn kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}
