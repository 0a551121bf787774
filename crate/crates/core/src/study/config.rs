use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{read_centroids, ArealGraph};
use crate::mcmc::FitConfig;
use crate::metrics::{MetricsOptions, RateAverage};
use crate::prior::PriorKind;
use crate::scenario::{Grid, ScenarioConfig};
use crate::tcv::{sigma_grid, SigmaCell};

/// Where the areal graph comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSource {
    Lattice {
        rows: usize,
        cols: usize,
    },
    /// Bundled 47-province adjacency with approximate centroids.
    Spain47,
    EdgeList {
        path: PathBuf,
        #[serde(default)]
        num_areas: Option<usize>,
        #[serde(default)]
        labels: Option<PathBuf>,
        /// `x,y` per line, used to assign scenario grid points to areas.
        #[serde(default)]
        centroids: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub counts: PathBuf,
    pub population: PathBuf,
    #[serde(default)]
    pub geojson: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgCell {
    /// 1-based disease index.
    pub disease: usize,
    pub observed: f64,
    #[serde(default)]
    pub expected: Option<f64>,
    #[serde(default)]
    pub population: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgConfig {
    pub a: [f64; 2],
    pub c: f64,
    pub b: f64,
    /// Average rates r̄ per disease, needed for population cells.
    #[serde(default)]
    pub rbar: Option<[f64; 2]>,
    pub cells: Vec<PgCell>,
}

fn default_scenario() -> ScenarioConfig {
    ScenarioConfig::new(1).expect("default scenario is valid")
}

fn default_scenarios() -> Vec<u8> {
    vec![1, 2, 3, 4]
}

fn default_priors() -> Vec<PriorKind> {
    vec![PriorKind::Icar, PriorKind::Lcar, PriorKind::Ljcar]
}

fn default_sigma() -> Vec<f64> {
    vec![0.0025, 0.04, 0.25]
}

fn default_rho() -> Vec<f64> {
    vec![0.0, 0.7]
}

fn default_lambda() -> Vec<f64> {
    vec![0.2, 0.8]
}

fn default_replicates() -> usize {
    10
}

fn default_metrics() -> MetricsOptions {
    MetricsOptions {
        rate_scale: 1e5,
        average: RateAverage::Weighted,
    }
}

fn default_seed() -> u64 {
    1
}

fn is_default_graph(g: &GraphSource) -> bool {
    *g == GraphSource::Spain47
}

fn default_graph() -> GraphSource {
    GraphSource::Spain47
}

/// A complete study description. One JSON document drives every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_graph", skip_serializing_if = "is_default_graph")]
    pub graph: GraphSource,
    /// Explicit scenario grid (`x,y,area` CSV) instead of the derived one.
    #[serde(default)]
    pub grid: Option<PathBuf>,
    /// Base scenario settings; the id is replaced per scenario.
    #[serde(default = "default_scenario")]
    pub scenario: ScenarioConfig,
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<u8>,
    /// Observed data; when absent, commands that need data simulate it.
    #[serde(default)]
    pub data: Option<DataPaths>,
    #[serde(default = "default_priors")]
    pub priors: Vec<PriorKind>,
    #[serde(default = "default_sigma")]
    pub sigma11: Vec<f64>,
    #[serde(default = "default_sigma")]
    pub sigma22: Vec<f64>,
    #[serde(default = "default_rho")]
    pub rho: Vec<f64>,
    #[serde(default = "default_lambda")]
    pub lambda: Vec<f64>,
    /// Explicit covariance cells; replaces the Σ₁₁ × Σ₂₂ × ρ product.
    #[serde(default)]
    pub cells: Option<Vec<SigmaCell>>,
    /// Σ_b for fixed-mode fits outside the within-prior study (defaults to
    /// the first cell).
    #[serde(default)]
    pub fixed: Option<SigmaCell>,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_metrics")]
    pub metrics: MetricsOptions,
    #[serde(default)]
    pub pg: Option<PgConfig>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for StudyConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config uses defaults")
    }
}

impl StudyConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: StudyConfig = serde_json::from_str(text)?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::input(path, e.to_string()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &base).map_err(|e| match e {
            Error::Json(j) => Error::input(path, j.to_string()),
            other => other,
        })
    }

    /// Canonical JSON used for the provenance hash.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Parameter("replicates must be at least 1".into()));
        }
        if self.priors.is_empty() || self.scenarios.is_empty() || self.lambda.is_empty() {
            return Err(Error::Parameter(
                "priors, scenarios and lambda grids must be non-empty".into(),
            ));
        }
        if self.sigma_cells().is_empty() {
            return Err(Error::Parameter("covariance grid is empty".into()));
        }
        for &s in &self.scenarios {
            self.scenario.for_scenario(s)?;
        }
        self.fit.validate()?;
        let mut paths: Vec<&PathBuf> = Vec::new();
        if let GraphSource::EdgeList {
            path,
            labels,
            centroids,
            ..
        } = &self.graph
        {
            paths.push(path);
            paths.extend(labels.iter());
            paths.extend(centroids.iter());
        }
        paths.extend(self.grid.iter());
        if let Some(d) = &self.data {
            paths.push(&d.counts);
            paths.push(&d.population);
            paths.extend(d.geojson.iter());
        }
        for p in paths {
            let r = self.resolve(p);
            if !r.exists() {
                return Err(Error::input(r, "file not found"));
            }
        }
        Ok(())
    }

    pub fn sigma_cells(&self) -> Vec<SigmaCell> {
        match &self.cells {
            Some(c) => c.clone(),
            None => sigma_grid(&self.sigma11, &self.sigma22, &self.rho),
        }
    }

    pub fn fixed_cell(&self) -> Result<SigmaCell> {
        self.fixed
            .or_else(|| self.sigma_cells().first().copied())
            .ok_or_else(|| Error::Parameter("no covariance cell for fixed mode".into()))
    }

    pub fn load_graph(&self) -> Result<ArealGraph> {
        match &self.graph {
            GraphSource::Lattice { rows, cols } => ArealGraph::lattice(*rows, *cols),
            GraphSource::Spain47 => Ok(ArealGraph::spain47()),
            GraphSource::EdgeList {
                path,
                num_areas,
                labels,
                ..
            } => {
                let g = ArealGraph::read_edge_list(&self.resolve(path), *num_areas)?;
                match labels {
                    Some(l) => g.read_labels(&self.resolve(l)),
                    None => Ok(g),
                }
            }
        }
    }

    /// Fine grid for the scenario surfaces, assigned to the areas of `graph`.
    pub fn load_grid(&self, graph: &ArealGraph) -> Result<Grid> {
        let res = self.scenario.grid_resolution;
        if let Some(p) = &self.grid {
            return Grid::read(&self.resolve(p), graph.num_areas());
        }
        match &self.graph {
            GraphSource::Lattice { rows, cols } => Grid::lattice_partition(res, *rows, *cols),
            GraphSource::Spain47 => Grid::nearest_centroid(res, &ArealGraph::spain47_centroids()),
            GraphSource::EdgeList { centroids: Some(c), .. } => {
                let pts = read_centroids(&self.resolve(c))?;
                if pts.len() != graph.num_areas() {
                    return Err(Error::input(
                        self.resolve(c),
                        format!("{} centroids for {} areas", pts.len(), graph.num_areas()),
                    ));
                }
                Grid::nearest_centroid(res, &pts)
            }
            GraphSource::EdgeList { .. } => Err(Error::Parameter(
                "simulating scenarios on an edge-list graph needs `grid` or `centroids`".into(),
            )),
        }
    }
}
