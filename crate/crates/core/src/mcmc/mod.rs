//! Adaptive Metropolis-within-Gibbs for the multivariate Poisson–logit-normal
//! M-model.
//!
//! Chains run in parallel on independent streams and are pooled in chain
//! order, so results depend only on the seed and the chain count.

pub mod diagnostics;
pub mod geweke;
mod model;
mod prior_draw;

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CountDataset;
use crate::error::{Error, Result};
use crate::graph::ArealGraph;
use crate::prior::{PriorKind, PriorSpec};
use crate::rng::{substream, tag};

pub use model::{log_likelihood, log_posterior, AlphaPrior, FitMode, LogPosterior, ModelState, ProposalScales};
pub use prior_draw::{sample_prior_field, PriorFieldSampler, UnitFieldSampler};

use model::{Chain, Model, GROUPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub adapt_batch: usize,
    pub alpha_prior: AlphaPrior,
    pub scales: ProposalScales,
    /// Potential scale reduction above which a warning is attached.
    pub psrf_warn: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 6000,
            burn_in: 2000,
            thin: 2,
            chains: 4,
            seed: 1,
            target_accept: 0.44,
            adapt_batch: 50,
            alpha_prior: AlphaPrior::Flat,
            scales: ProposalScales::default(),
            psrf_warn: 1.05,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Parameter("iterations must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Parameter(format!(
                "burn_in ({}) must be below iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 || self.chains == 0 || self.adapt_batch == 0 {
            return Err(Error::Parameter("thin, chains and adapt_batch must be positive".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Parameter("target_accept must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn kept_per_chain(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub lo95: f64,
    pub hi95: f64,
    #[serde(with = "crate::io::nonfinite")]
    pub ess: f64,
    #[serde(with = "crate::io::nonfinite")]
    pub psrf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    /// J×G posterior mean rates E(r_ji | O).
    pub mean_rates: DMatrix<f64>,
    pub lo95: DMatrix<f64>,
    pub hi95: DMatrix<f64>,
    /// Intercepts, and in full mode Σ_b entries, correlations and λ.
    pub hyper: Vec<ParamSummary>,
    pub rate_ess_min: f64,
    pub rate_psrf_max: f64,
    /// Post-adaptation acceptance rate per update group.
    pub acceptance: Vec<(String, f64)>,
    pub warnings: Vec<String>,
}

struct ChainOutput {
    /// kept × (J·G) rates, disease-major within a draw.
    rates: Vec<f64>,
    /// kept × hyper count.
    hyper: Vec<f64>,
    accepted: [u64; 4],
    attempted: [u64; 4],
}

fn hyper_names(jn: usize, kind: PriorKind, full: bool) -> Vec<String> {
    let mut names: Vec<String> = (1..=jn).map(|j| format!("alpha{j}")).collect();
    if full {
        for j in 1..=jn {
            for l in j..=jn {
                names.push(format!("sigma{j}{l}"));
            }
        }
        for j in 1..=jn {
            for l in j + 1..=jn {
                names.push(format!("rho{j}{l}"));
            }
        }
        match kind {
            PriorKind::Icar => {}
            PriorKind::Lcar => names.push("lambda".into()),
            PriorKind::Ljcar => names.extend((1..=jn).map(|j| format!("lambda{j}"))),
        }
    }
    names
}

fn hyper_values(chain: &Chain<'_>, out: &mut Vec<f64>) {
    let jn = chain.state.alpha.len();
    out.extend_from_slice(&chain.state.alpha);
    if let Some(b) = &chain.state.bartlett {
        let s = b.sigma_b_matrix();
        for j in 0..jn {
            for l in j..jn {
                out.push(s[(j, l)]);
            }
        }
        for j in 0..jn {
            for l in j + 1..jn {
                out.push(s[(j, l)] / (s[(j, j)] * s[(l, l)]).sqrt());
            }
        }
        match chain.model.kind {
            PriorKind::Icar => {}
            PriorKind::Lcar => out.push(chain.state.lambda[0]),
            PriorKind::Ljcar => out.extend_from_slice(&chain.state.lambda),
        }
    }
}

fn run_chain(model: &Model<'_>, cfg: &FitConfig, index: usize) -> Result<ChainOutput> {
    let mut rng: ChaCha8Rng = substream(cfg.seed, &[tag::CHAIN, index as u64]);
    let state = Chain::initial_state(model, &mut rng);
    let mut chain = Chain::new(model.clone(), state, &cfg.scales)?;
    let jn = model.num_diseases();
    let g = model.num_areas();
    let kept = cfg.kept_per_chain();
    let mut rates = Vec::with_capacity(kept * jn * g);
    let mut hyper = Vec::new();
    for it in 0..cfg.iterations {
        let adapt = (it < cfg.burn_in).then_some((cfg.target_accept, cfg.adapt_batch));
        if it == cfg.burn_in {
            chain.reset_counts();
        }
        chain.sweep(&mut rng, adapt);
        if it >= cfg.burn_in && (it - cfg.burn_in).is_multiple_of(cfg.thin) {
            if chain.eta.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "chain {} diverged at iteration {it}",
                    index + 1
                )));
            }
            let r = chain.rates();
            for j in 0..jn {
                for i in 0..g {
                    rates.push(r[(j, i)]);
                }
            }
            hyper_values(&chain, &mut hyper);
        }
    }
    Ok(ChainOutput {
        rates,
        hyper,
        accepted: chain.accepted,
        attempted: chain.attempted,
    })
}

fn column(flat: &[f64], width: usize, k: usize) -> Vec<f64> {
    flat.iter().skip(k).step_by(width).copied().collect()
}

/// Fits the model and summarizes pooled post-burn-in draws.
pub fn fit(
    data: &CountDataset,
    graph: &ArealGraph,
    spec: &PriorSpec,
    mode: &FitMode,
    cfg: &FitConfig,
) -> Result<PosteriorSummary> {
    cfg.validate()?;
    let model = Model::new(data, graph, spec, mode, cfg.alpha_prior)?;
    let outputs = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(&model, cfg, c))
        .collect::<Result<Vec<_>>>()?;

    let jn = data.num_diseases();
    let g = data.num_areas();
    let width = jn * g;
    let mut mean_rates = DMatrix::zeros(jn, g);
    let mut lo95 = DMatrix::zeros(jn, g);
    let mut hi95 = DMatrix::zeros(jn, g);
    let mut rate_ess_min = f64::INFINITY;
    let mut rate_psrf_max: f64 = 0.0;
    for j in 0..jn {
        for i in 0..g {
            let k = j * g + i;
            let per_chain: Vec<Vec<f64>> = outputs.iter().map(|o| column(&o.rates, width, k)).collect();
            let refs: Vec<&[f64]> = per_chain.iter().map(Vec::as_slice).collect();
            let pooled: Vec<f64> = per_chain.concat();
            let (m, lo, hi) = diagnostics::summarize(&pooled);
            mean_rates[(j, i)] = m;
            lo95[(j, i)] = lo.min(m);
            hi95[(j, i)] = hi.max(m);
            rate_ess_min = rate_ess_min.min(diagnostics::ess(&refs));
            let r = diagnostics::split_rhat(&refs);
            if r.is_finite() {
                rate_psrf_max = rate_psrf_max.max(r);
            }
        }
    }

    let names = hyper_names(jn, spec.kind(), mode.is_full());
    let hw = names.len();
    let hyper: Vec<ParamSummary> = names
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            let per_chain: Vec<Vec<f64>> = outputs.iter().map(|o| column(&o.hyper, hw, k)).collect();
            let refs: Vec<&[f64]> = per_chain.iter().map(Vec::as_slice).collect();
            let (mean, lo95, hi95) = diagnostics::summarize(&per_chain.concat());
            ParamSummary {
                name,
                mean,
                lo95,
                hi95,
                ess: diagnostics::ess(&refs),
                psrf: diagnostics::split_rhat(&refs),
            }
        })
        .collect();

    let acceptance: Vec<(String, f64)> = GROUPS
        .iter()
        .enumerate()
        .filter_map(|(k, name)| {
            let tried: u64 = outputs.iter().map(|o| o.attempted[k]).sum();
            let acc: u64 = outputs.iter().map(|o| o.accepted[k]).sum();
            (tried > 0).then(|| (name.to_string(), acc as f64 / tried as f64))
        })
        .collect();

    let mut warnings = Vec::new();
    if rate_psrf_max > cfg.psrf_warn {
        warnings.push(format!(
            "max potential scale reduction over rates is {rate_psrf_max:.3} (> {})",
            cfg.psrf_warn
        ));
    }
    for h in &hyper {
        if h.psrf > cfg.psrf_warn {
            warnings.push(format!("{} has potential scale reduction {:.3}", h.name, h.psrf));
        }
    }
    Ok(PosteriorSummary {
        mean_rates,
        lo95,
        hi95,
        hyper,
        rate_ess_min,
        rate_psrf_max,
        acceptance,
        warnings,
    })
}
