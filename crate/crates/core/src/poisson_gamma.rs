//! Conjugate analysis of the bivariate shared-component Poisson-Gamma model.
//!
//! `η⁽ʲ⁾ = φ⁽ʲ⁾ + ξ` with `φ⁽ʲ⁾ ~ Gamma(a⁽ʲ⁾, b)` and a shared
//! `ξ ~ Gamma(c, b)`, so `η⁽ʲ⁾ ~ Gamma(a⁽ʲ⁾ + c, b)` marginally. Counts are
//! `O⁽ʲ⁾ | η⁽ʲ⁾ ~ Poisson(E⁽ʲ⁾ η⁽ʲ⁾)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gamma shapes `a⁽¹⁾, a⁽²⁾`, shared shape `c` and common rate `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PGParams {
    pub a: [f64; 2],
    pub c: f64,
    pub b: f64,
}

impl PGParams {
    pub fn new(a: [f64; 2], c: f64, b: f64) -> Result<Self> {
        let p = Self { a, c, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.a.iter().all(|&a| a > 0.0 && a.is_finite()) {
            return Err(Error::Parameter(format!("shapes {:?} must be positive", self.a)));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::Parameter(format!("shared shape {} must be >= 0", self.c)));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::Parameter(format!("rate {} must be positive", self.b)));
        }
        Ok(())
    }

    fn shape(&self, disease: usize) -> Result<f64> {
        self.a
            .get(disease)
            .copied()
            .ok_or_else(|| Error::Parameter(format!("disease index {disease} not in 0..2")))
    }

    /// Prior mean μ⁽ʲ⁾ = (a⁽ʲ⁾ + c)/b.
    pub fn mean(&self, disease: usize) -> Result<f64> {
        Ok((self.shape(disease)? + self.c) / self.b)
    }

    /// Prior variance σ²⁽ʲ⁾ = (a⁽ʲ⁾ + c)/b².
    pub fn variance(&self, disease: usize) -> Result<f64> {
        Ok((self.shape(disease)? + self.c) / (self.b * self.b))
    }
}

/// corr(η⁽¹⁾, η⁽²⁾) = c / √((a⁽¹⁾+c)(a⁽²⁾+c)).
pub fn eta_correlation(params: &PGParams) -> f64 {
    let [a1, a2] = params.a;
    params.c / ((a1 + params.c) * (a2 + params.c)).sqrt()
}

/// Posterior mean of the relative risk and the data weight `w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskPosterior {
    pub mean: f64,
    pub weight: f64,
}

/// `E(η | O) = (a + c + O)/(b + E)` with `w = E/(μ/σ² + E) = E/(b + E)`.
pub fn posterior_relative_risk(
    params: &PGParams,
    disease: usize,
    observed: f64,
    expected: f64,
) -> Result<RiskPosterior> {
    if !(expected > 0.0) {
        return Err(Error::Parameter(format!("expected count {expected} must be positive")));
    }
    if !(observed >= 0.0) {
        return Err(Error::Parameter(format!("observed count {observed} must be >= 0")));
    }
    let shape = params.shape(disease)? + params.c;
    let mean = (shape + observed) / (params.b + expected);
    // μ/σ² = b
    let weight = expected / (params.b + expected);
    Ok(RiskPosterior { mean, weight })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatePosterior {
    pub mean_rate: f64,
    /// Shrinkage factor `1 − w = b/(r̄ n + b)`.
    pub one_minus_w: f64,
}

fn check_rate_inputs(observed: f64, population: f64, rbar: f64) -> Result<()> {
    if !(population > 0.0) {
        return Err(Error::Parameter(format!("population {population} must be positive")));
    }
    if !(rbar > 0.0) {
        return Err(Error::Parameter(format!("average rate {rbar} must be positive")));
    }
    if !(observed >= 0.0) {
        return Err(Error::Parameter(format!("observed count {observed} must be >= 0")));
    }
    Ok(())
}

/// Rate-scale posterior mean `(1 − w) r̄ μ + w O/n`.
///
/// The shrinkage factor depends only on `b`, `r̄` and `n`, never on `c`.
pub fn posterior_rate(
    params: &PGParams,
    disease: usize,
    observed: f64,
    population: f64,
    rbar: f64,
) -> Result<RatePosterior> {
    check_rate_inputs(observed, population, rbar)?;
    let mu = params.mean(disease)?;
    let one_minus_w = params.b / (rbar * population + params.b);
    let w = 1.0 - one_minus_w;
    Ok(RatePosterior {
        mean_rate: one_minus_w * rbar * mu + w * observed / population,
        one_minus_w,
    })
}

/// `E(r | O) − r̂ = μ/(r̄ σ² n + μ) · (r̄ μ − r̂)`, evaluated through μ and σ²
/// rather than through the shrinkage factor.
pub fn smoothing_difference(
    params: &PGParams,
    disease: usize,
    observed: f64,
    population: f64,
    rbar: f64,
) -> Result<f64> {
    check_rate_inputs(observed, population, rbar)?;
    let mu = params.mean(disease)?;
    let var = params.variance(disease)?;
    let crude = observed / population;
    Ok(mu / (rbar * var * population + mu) * (rbar * mu - crude))
}
