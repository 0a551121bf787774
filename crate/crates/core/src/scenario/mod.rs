//! Simulation of bivariate count data from coregionalized Gaussian surfaces.
//!
//! The pipeline is: independent Matérn surfaces ω_j on a fine grid, mixed by a
//! lower-triangular matrix A and shifted by a per-disease logit baseline,
//! averaged over each area on the probability scale, then Poisson-sampled
//! against area populations.

pub mod bessel;
pub mod gp;
pub mod grid;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::CountDataset;
use crate::error::{Error, Result};
use crate::rng::{substream, tag};

pub use gp::{matern, simulate_gp_fields, DiseaseSurface, FieldSampler, GpConfig, GpMethod};
pub use grid::Grid;

pub type Coreg = [[f64; 2]; 2];

/// Free coefficients of A. Scenario 1 uses `(a11, a21, a22)`, Scenario 3
/// uses `a22_independent`; Scenarios 2 and 4 divide by the rarity divisor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoregCoefficients {
    pub a11: f64,
    pub a21: f64,
    pub a22: f64,
    pub a22_independent: f64,
}

impl Default for CoregCoefficients {
    fn default() -> Self {
        Self {
            a11: 1.0,
            a21: 0.9,
            a22: 0.5,
            a22_independent: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub min: f64,
    pub max: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self { min: 2e4, max: 5e5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario_id: u8,
    #[serde(default)]
    pub coefficients: CoregCoefficients,
    #[serde(default = "default_divisor")]
    pub rarity_divisor: f64,
    /// Explicit A; must agree with the matrix implied by the scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coreg: Option<Coreg>,
    #[serde(default = "default_baseline")]
    pub baseline: [f64; 2],
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default)]
    pub population: PopulationConfig,
    #[serde(default = "default_resolution")]
    pub grid_resolution: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_divisor() -> f64 {
    2.5
}

fn default_baseline() -> [f64; 2] {
    [-7.0, -7.0]
}

fn default_resolution() -> usize {
    100
}

impl ScenarioConfig {
    pub fn new(scenario_id: u8) -> Result<Self> {
        let c = Self {
            scenario_id,
            coefficients: CoregCoefficients::default(),
            rarity_divisor: default_divisor(),
            coreg: None,
            baseline: default_baseline(),
            gp: GpConfig::default(),
            population: PopulationConfig::default(),
            grid_resolution: default_resolution(),
            seed: 0,
        };
        c.validate()?;
        Ok(c)
    }

    /// Same settings under a different scenario id.
    pub fn for_scenario(&self, scenario_id: u8) -> Result<Self> {
        let c = Self {
            scenario_id,
            coreg: None,
            ..self.clone()
        };
        c.validate()?;
        Ok(c)
    }

    /// A implied by the scenario id.
    pub fn coreg_matrix(&self) -> Coreg {
        let k = &self.coefficients;
        let d = self.rarity_divisor;
        let (a21, a22) = match self.scenario_id {
            1 => (k.a21, k.a22),
            2 => (k.a21 / d, k.a22 / d),
            3 => (0.0, k.a22_independent),
            _ => (0.0, k.a22_independent / d),
        };
        [[k.a11, 0.0], [a21, a22]]
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.scenario_id) {
            return Err(Error::Parameter(format!(
                "scenario_id must be 1..4, got {}",
                self.scenario_id
            )));
        }
        if !(self.rarity_divisor > 1.0 && self.rarity_divisor.is_finite()) {
            return Err(Error::Parameter("rarity_divisor must exceed 1".into()));
        }
        let k = &self.coefficients;
        if [k.a11, k.a21, k.a22, k.a22_independent].iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("coregionalization coefficients must be finite".into()));
        }
        if self.baseline.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("baseline must be finite".into()));
        }
        self.gp.validate()?;
        if self.gp.diseases.len() != 2 {
            return Err(Error::Parameter(
                "scenarios are defined for exactly two diseases".into(),
            ));
        }
        if !(self.population.min >= 1.0 && self.population.max >= self.population.min) {
            return Err(Error::Parameter(
                "population bounds must satisfy 1 <= min <= max".into(),
            ));
        }
        if self.grid_resolution == 0 {
            return Err(Error::Parameter("grid_resolution must be positive".into()));
        }
        if let Some(a) = &self.coreg {
            if a[0][1] != 0.0 {
                return Err(Error::Parameter("coreg a12 must be 0".into()));
            }
            let want = self.coreg_matrix();
            for r in 0..2 {
                for c in 0..2 {
                    let tol = 1e-12 * want[r][c].abs().max(1.0);
                    if (a[r][c] - want[r][c]).abs() > tol {
                        return Err(Error::Parameter(format!(
                            "coreg entry a{}{} = {} inconsistent with scenario {} (expected {})",
                            r + 1,
                            c + 1,
                            a[r][c],
                            self.scenario_id,
                            want[r][c]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Logit-rate surfaces: baseline_j + (Aω)_j.
    pub fn logit_surfaces(&self, omega: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut r = coregionalize(omega, &self.coreg_matrix())?;
        for (row, b) in r.iter_mut().zip(self.baseline) {
            row.iter_mut().for_each(|v| *v += b);
        }
        Ok(r)
    }

    /// Areal rates for this scenario given the latent surfaces.
    pub fn areal_rates(&self, omega: &[Vec<f64>], grid: &Grid) -> Result<DMatrix<f64>> {
        aggregate_rates(&self.logit_surfaces(omega)?, grid)
    }
}

/// r₁ = a₁₁ω₁, r₂ = a₂₁ω₁ + a₂₂ω₂.
pub fn coregionalize(omega: &[Vec<f64>], a: &Coreg) -> Result<Vec<Vec<f64>>> {
    if omega.len() != 2 {
        return Err(Error::Dimension(format!("expected 2 surfaces, got {}", omega.len())));
    }
    if omega[0].len() != omega[1].len() {
        return Err(Error::Dimension("surfaces have different lengths".into()));
    }
    if a[0][1] != 0.0 {
        return Err(Error::Parameter("coreg a12 must be 0".into()));
    }
    let r1 = omega[0].iter().map(|w| a[0][0] * w).collect();
    let r2 = omega[0]
        .iter()
        .zip(&omega[1])
        .map(|(w1, w2)| a[1][0] * w1 + a[1][1] * w2)
        .collect();
    Ok(vec![r1, r2])
}

fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// J×G areal rates: per-area mean of inverse-logit surface values.
pub fn aggregate_rates(logits: &[Vec<f64>], grid: &Grid) -> Result<DMatrix<f64>> {
    let g = grid.num_areas();
    let mut out = DMatrix::zeros(logits.len(), g);
    for (j, surface) in logits.iter().enumerate() {
        if surface.len() != grid.num_points() {
            return Err(Error::Dimension(format!(
                "surface {} has {} values for {} grid points",
                j + 1,
                surface.len(),
                grid.num_points()
            )));
        }
        for (&v, &a) in surface.iter().zip(grid.assignment()) {
            out[(j, a)] += inv_logit(v);
        }
        for i in 0..g {
            out[(j, i)] /= grid.points_per_area()[i] as f64;
            let r = out[(j, i)];
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Numerical(format!(
                    "aggregated rate {r} for disease {} area {} is outside (0,1)",
                    j + 1,
                    i + 1
                )));
            }
        }
    }
    Ok(out)
}

/// Log-uniform integer populations between the configured bounds.
pub fn generate_population(num_areas: usize, cfg: &PopulationConfig, seed: u64) -> Vec<u64> {
    let mut rng = substream(seed, &[tag::POPULATION]);
    let (lo, hi) = (cfg.min.ln(), cfg.max.ln());
    (0..num_areas)
        .map(|_| {
            let u: f64 = rng.random();
            (lo + u * (hi - lo)).exp().round().max(1.0) as u64
        })
        .collect()
}

const MAX_POISSON_MEAN: f64 = 1e15;

/// Independent Poisson(n_i r_ji) counts, deterministic in `(seed, replicate)`.
pub fn sample_counts(rates: &DMatrix<f64>, population: &[u64], seed: u64, replicate: u64) -> Result<CountDataset> {
    if rates.ncols() != population.len() {
        return Err(Error::Dimension(format!(
            "{} rate columns for {} populations",
            rates.ncols(),
            population.len()
        )));
    }
    let mut rng = substream(seed, &[tag::COUNTS, replicate]);
    let mut counts = DMatrix::zeros(rates.nrows(), rates.ncols());
    for j in 0..rates.nrows() {
        for i in 0..rates.ncols() {
            let mean = population[i] as f64 * rates[(j, i)];
            if !(mean <= MAX_POISSON_MEAN) {
                return Err(Error::Numerical(format!(
                    "Poisson mean {mean:e} for disease {} area {} exceeds {MAX_POISSON_MEAN:e}",
                    j + 1,
                    i + 1
                )));
            }
            counts[(j, i)] = if mean > 0.0 {
                Poisson::new(mean)
                    .map_err(|e| Error::Numerical(e.to_string()))?
                    .sample(&mut rng) as u64
            } else {
                0
            };
        }
    }
    Ok(CountDataset::new(counts, population.to_vec(), Some(rates.clone()))?.with_replicate(replicate))
}

/// Pearson correlation between the two rows of a 2×G rate matrix.
pub fn empirical_disease_correlation(rates: &DMatrix<f64>) -> Result<f64> {
    if rates.nrows() != 2 {
        return Err(Error::Dimension(format!("need 2 diseases, got {}", rates.nrows())));
    }
    let g = rates.ncols() as f64;
    let m0 = rates.row(0).sum() / g;
    let m1 = rates.row(1).sum() / g;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..rates.ncols() {
        let x = rates[(0, i)] - m0;
        let y = rates[(1, i)] - m1;
        sxy += x * y;
        sxx += x * x;
        syy += y * y;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("constant rate vector".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}
