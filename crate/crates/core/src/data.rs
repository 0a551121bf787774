use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Observed counts for J diseases over G areas.
#[derive(Debug, Clone, PartialEq)]
pub struct CountDataset {
    /// J×G counts.
    counts: DMatrix<u64>,
    population: Vec<u64>,
    true_rates: Option<DMatrix<f64>>,
    pub replicate_id: u64,
}

impl CountDataset {
    pub fn new(counts: DMatrix<u64>, population: Vec<u64>, true_rates: Option<DMatrix<f64>>) -> Result<Self> {
        if counts.nrows() == 0 {
            return Err(Error::Dimension("dataset needs at least one disease".into()));
        }
        if counts.ncols() != population.len() {
            return Err(Error::Dimension(format!(
                "counts cover {} areas but population has {}",
                counts.ncols(),
                population.len()
            )));
        }
        if let Some(i) = population.iter().position(|&n| n == 0) {
            return Err(Error::Degenerate(format!("area {} has zero population", i + 1)));
        }
        if let Some(r) = &true_rates {
            if r.shape() != counts.shape() {
                return Err(Error::Dimension("true rates shape differs from counts".into()));
            }
            if r.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
                return Err(Error::Parameter("true rates must lie in (0, 1)".into()));
            }
        }
        Ok(Self {
            counts,
            population,
            true_rates,
            replicate_id: 0,
        })
    }

    pub fn with_replicate(mut self, id: u64) -> Self {
        self.replicate_id = id;
        self
    }

    pub fn num_diseases(&self) -> usize {
        self.counts.nrows()
    }

    pub fn num_areas(&self) -> usize {
        self.counts.ncols()
    }

    pub fn counts(&self) -> &DMatrix<u64> {
        &self.counts
    }

    pub fn count(&self, disease: usize, area: usize) -> u64 {
        self.counts[(disease, area)]
    }

    pub fn population(&self) -> &[u64] {
        &self.population
    }

    pub fn true_rates(&self) -> Option<&DMatrix<f64>> {
        self.true_rates.as_ref()
    }

    /// r̂_ji = O_ji / n_i.
    pub fn crude_rate(&self, disease: usize, area: usize) -> f64 {
        self.counts[(disease, area)] as f64 / self.population[area] as f64
    }

    pub fn crude_rates(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.num_diseases(), self.num_areas(), |j, i| self.crude_rate(j, i))
    }

    /// Dataset restricted to the listed diseases, in that order.
    pub fn select_diseases(&self, diseases: &[usize]) -> Result<Self> {
        if let Some(&bad) = diseases.iter().find(|&&j| j >= self.num_diseases()) {
            return Err(Error::Dimension(format!("disease {} not present", bad + 1)));
        }
        let g = self.num_areas();
        let counts = DMatrix::from_fn(diseases.len(), g, |r, i| self.counts[(diseases[r], i)]);
        let true_rates = self
            .true_rates
            .as_ref()
            .map(|t| DMatrix::from_fn(diseases.len(), g, |r, i| t[(diseases[r], i)]));
        Ok(Self {
            counts,
            population: self.population.clone(),
            true_rates,
            replicate_id: self.replicate_id,
        })
    }
}
