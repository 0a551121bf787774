use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::ArealGraph;
use crate::prior::{mixing_matrix, BetweenCov, CarPrecision, PriorSpec, DEFAULT_DENSE_LIMIT};

/// Sampler for one unit-variance CAR field with precision `λR + (1−λ)I`.
///
/// Proper fields use `x = L′⁻¹z` with `Q = LL′`; the intrinsic field is drawn
/// on the sum-to-zero subspace from the eigenvectors of R with nonzero
/// eigenvalue.
#[derive(Debug, Clone)]
pub struct UnitFieldSampler {
    factor: DMatrix<f64>,
}

impl UnitFieldSampler {
    pub fn new(graph: &ArealGraph, lambda: f64) -> Result<Self> {
        let g = graph.num_areas();
        if g > DEFAULT_DENSE_LIMIT {
            return Err(Error::DenseBudget {
                what: "prior field",
                requested: g,
                limit: DEFAULT_DENSE_LIMIT,
            });
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Prior(format!("lambda {lambda} outside [0, 1]")));
        }
        let q = CarPrecision::new(graph, lambda).to_dense();
        let factor = if lambda < 1.0 {
            let l = q
                .cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite("Leroux precision".into()))?
                .unpack();
            l.transpose()
                .solve_upper_triangular(&DMatrix::identity(g, g))
                .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?
        } else {
            if !graph.is_connected() {
                return Err(Error::Graph(
                    "intrinsic prior draws need a connected graph (one constraint per component)".into(),
                ));
            }
            let eig = q.symmetric_eigen();
            let tol = 1e-9 * eig.eigenvalues.max();
            let mut f = DMatrix::zeros(g, g);
            for k in 0..g {
                let e = eig.eigenvalues[k];
                if e > tol {
                    f.set_column(k, &(eig.eigenvectors.column(k) / e.sqrt()));
                }
            }
            f
        };
        Ok(Self { factor })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.factor * z
    }
}

/// Prepared sampler for Θ = Mφ under a prior spec and Σ_b.
#[derive(Debug, Clone)]
pub struct PriorFieldSampler {
    rows: Vec<UnitFieldSampler>,
    m: DMatrix<f64>,
}

impl PriorFieldSampler {
    pub fn new(spec: &PriorSpec, sigma_b: &BetweenCov, graph: &ArealGraph) -> Result<Self> {
        let jn = sigma_b.dim();
        spec.validate(jn)?;
        let rows = (0..jn)
            .map(|j| UnitFieldSampler::new(graph, spec.lambda_for(j)))
            .collect::<Result<_>>()?;
        Ok(Self {
            rows,
            m: mixing_matrix(sigma_b),
        })
    }

    /// J×G draw of Θ.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let g = self.rows[0].factor.nrows();
        let mut phi = DMatrix::zeros(self.rows.len(), g);
        for (j, s) in self.rows.iter().enumerate() {
            phi.set_row(j, &s.sample(rng).transpose());
        }
        &self.m * phi
    }
}

/// One prior draw of Θ (J×G).
pub fn sample_prior_field<R: Rng + ?Sized>(
    spec: &PriorSpec,
    sigma_b: &BetweenCov,
    graph: &ArealGraph,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    Ok(PriorFieldSampler::new(spec, sigma_b, graph)?.sample(rng))
}
