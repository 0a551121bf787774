//! Joint-distribution check of the sampler.
//!
//! Marginal-conditional draws come straight from the prior. The
//! successive-conditional chain alternates one sampler sweep with a fresh
//! draw of the counts given the current parameters. Both sequences target
//! the same joint law, so the means of any test function must agree.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::diagnostics::ess_single;
use super::model::{inv_logit, AlphaPrior, Chain, FitMode, Model, ModelState, ProposalScales};
use super::prior_draw::UnitFieldSampler;
use crate::data::CountDataset;
use crate::error::{Error, Result};
use crate::graph::ArealGraph;
use crate::prior::{sample_bartlett, PriorKind, PriorSpec};
use crate::rng::{substream, tag};

#[derive(Debug, Clone)]
pub struct GewekeConfig {
    pub mode: FitMode,
    /// Successive-conditional sweeps kept after burn-in.
    pub iterations: usize,
    /// Initial sweeps with proposal adaptation; scales are frozen afterwards.
    pub burn_in: usize,
    pub thin: usize,
    pub prior_draws: usize,
    pub population: u64,
    pub alpha_mean: f64,
    pub alpha_sd: f64,
    pub seed: u64,
    pub threshold: f64,
    /// Prior used by the transition kernel instead of `spec`. Only meant for
    /// fault injection.
    pub kernel_spec: Option<PriorSpec>,
}

impl Default for GewekeConfig {
    fn default() -> Self {
        Self {
            mode: FitMode::Full,
            iterations: 200_000,
            burn_in: 2_000,
            thin: 5,
            prior_draws: 100_000,
            population: 30,
            alpha_mean: -2.0,
            alpha_sd: 0.7,
            seed: 1,
            threshold: 4.0,
            kernel_spec: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GewekeStat {
    pub name: String,
    pub prior_mean: f64,
    pub chain_mean: f64,
    pub chain_ess: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GewekeReport {
    pub stats: Vec<GewekeStat>,
    pub threshold: f64,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.stats.iter().map(|s| s.z.abs()).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.stats
            .iter()
            .all(|s| s.z.is_finite() && s.z.abs() <= self.threshold)
    }
}

fn test_names(jn: usize, full: bool, kind: PriorKind) -> Vec<String> {
    let mut n = Vec::new();
    for j in 1..=jn {
        n.push(format!("alpha{j}"));
        n.push(format!("alpha{j}^2"));
        n.push(format!("phi{j}[1]"));
        n.push(format!("log mean phi{j}^2"));
        n.push(format!("theta{j}[1]"));
        n.push(format!("log mean theta{j}^2"));
    }
    for j in 1..=jn {
        for l in j + 1..=jn {
            n.push(format!("cor(theta{j}, theta{l})"));
        }
    }
    if full {
        for j in 1..=jn {
            n.push(format!("log sigma{j}{j}"));
        }
        for j in 1..=jn {
            for l in j + 1..=jn {
                n.push(format!("rho{j}{l}"));
            }
        }
        if kind != PriorKind::Icar {
            n.push("lambda1".into());
            n.push("lambda1^2".into());
        }
    }
    n
}

fn test_values(state: &ModelState, m: &DMatrix<f64>, full: bool, kind: PriorKind, out: &mut Vec<f64>) {
    let jn = state.alpha.len();
    let g = state.phi.ncols() as f64;
    let theta = state.theta(m);
    for j in 0..jn {
        let a = state.alpha[j];
        out.push(a);
        out.push(a * a);
        out.push(state.phi[(j, 0)]);
        out.push((state.phi.row(j).norm_squared() / g).ln());
        out.push(theta[(j, 0)]);
        out.push((theta.row(j).norm_squared() / g).ln());
    }
    for j in 0..jn {
        for l in j + 1..jn {
            let (a, b) = (theta.row(j), theta.row(l));
            out.push(a.dot(&b) / (a.norm() * b.norm()));
        }
    }
    if full {
        let s = m * m.transpose();
        for j in 0..jn {
            out.push(s[(j, j)].ln());
        }
        for j in 0..jn {
            for l in j + 1..jn {
                out.push(s[(j, l)] / (s[(j, j)] * s[(l, l)]).sqrt());
            }
        }
        if kind != PriorKind::Icar {
            out.push(state.lambda[0]);
            out.push(state.lambda[0] * state.lambda[0]);
        }
    }
}

fn draw_counts<R: Rng + ?Sized>(rates: &DMatrix<f64>, pop: &[u64], rng: &mut R) -> Result<DMatrix<u64>> {
    let mut counts = DMatrix::zeros(rates.nrows(), rates.ncols());
    for i in 0..rates.ncols() {
        for j in 0..rates.nrows() {
            let mean = pop[i] as f64 * rates[(j, i)];
            counts[(j, i)] = if mean > 0.0 {
                Poisson::new(mean)
                    .map_err(|e| Error::Numerical(e.to_string()))?
                    .sample(rng) as u64
            } else {
                0
            };
        }
    }
    Ok(counts)
}

struct PriorSampler {
    jn: usize,
    kind: PriorKind,
    mode: FitMode,
    fixed_lambda: Vec<f64>,
    alpha: Normal<f64>,
    dof: f64,
}

impl PriorSampler {
    fn draw<R: Rng + ?Sized>(&self, graph: &ArealGraph, rng: &mut R) -> Result<ModelState> {
        let alpha = (0..self.jn).map(|_| self.alpha.sample(rng)).collect();
        let lambda = match (&self.mode, self.kind) {
            (FitMode::Full, PriorKind::Lcar) => vec![rng.random::<f64>(); self.jn],
            (FitMode::Full, PriorKind::Ljcar) => (0..self.jn).map(|_| rng.random::<f64>()).collect(),
            _ => self.fixed_lambda.clone(),
        };
        let bartlett = match self.mode {
            FitMode::Full => Some(sample_bartlett(self.jn, self.dof, rng)?),
            FitMode::Fixed(_) => None,
        };
        let g = graph.num_areas();
        let mut phi = DMatrix::zeros(self.jn, g);
        for (j, &l) in lambda.iter().enumerate() {
            let row = UnitFieldSampler::new(graph, l)?.sample(rng);
            phi.set_row(j, &row.transpose());
        }
        Ok(ModelState {
            alpha,
            phi,
            bartlett,
            lambda,
        })
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Compares prior draws with the successive-conditional chain on a set of
/// test functions of α, φ, Θ and the hyperparameters.
pub fn geweke_joint_check(spec: &PriorSpec, graph: &ArealGraph, jn: usize, cfg: &GewekeConfig) -> Result<GewekeReport> {
    if cfg.iterations < 2 || cfg.prior_draws < 2 || cfg.thin == 0 {
        return Err(Error::Parameter(
            "geweke check needs at least two kept sweeps, two prior draws and thin >= 1".into(),
        ));
    }
    if !(cfg.alpha_sd > 0.0) || cfg.population == 0 {
        return Err(Error::Parameter("alpha_sd and population must be positive".into()));
    }
    spec.validate(jn)?;
    if spec.kind() == PriorKind::Icar {
        return Err(Error::Parameter(
            "the joint check needs a proper intercept prior, which intrinsic fields do not allow".into(),
        ));
    }
    let kernel_spec = cfg.kernel_spec.as_ref().unwrap_or(spec);
    let g = graph.num_areas();
    let full = cfg.mode.is_full();
    let kind = spec.kind();
    let names = test_names(jn, full, kind);
    let width = names.len();
    let alpha_prior = AlphaPrior::Normal {
        mean: cfg.alpha_mean,
        sd: cfg.alpha_sd,
    };
    let sampler = PriorSampler {
        jn,
        kind,
        mode: cfg.mode.clone(),
        fixed_lambda: spec.lambdas(jn),
        alpha: Normal::new(cfg.alpha_mean, cfg.alpha_sd).map_err(|e| Error::Parameter(e.to_string()))?,
        dof: jn as f64 + 2.0,
    };
    let pop = vec![cfg.population; g];

    let mut prior_rng = substream(cfg.seed, &[tag::GEWEKE, 0]);
    let mut prior_vals = Vec::with_capacity(cfg.prior_draws * width);
    for _ in 0..cfg.prior_draws {
        let s = sampler.draw(graph, &mut prior_rng)?;
        let m = s.mixing(&cfg.mode)?;
        test_values(&s, &m, full, kind, &mut prior_vals);
    }

    let mut rng = substream(cfg.seed, &[tag::GEWEKE, 1]);
    let start = sampler.draw(graph, &mut rng)?;
    let m0 = start.mixing(&cfg.mode)?;
    let counts = draw_counts(&start.rates(&m0), &pop, &mut rng)?;
    let data = CountDataset::new(counts, pop.clone(), None)?;
    let model = Model::new(&data, graph, kernel_spec, &cfg.mode, alpha_prior)?;
    let mut chain = Chain::new(model, start, &ProposalScales::default())?;
    let mut chain_vals = Vec::with_capacity(cfg.iterations / cfg.thin * width);
    for it in 0..cfg.burn_in + cfg.iterations {
        let adapt = (it < cfg.burn_in).then_some((0.44, 50));
        chain.sweep(&mut rng, adapt);
        let rates = chain.eta.map(inv_logit);
        let counts = draw_counts(&rates, &pop, &mut rng)?;
        chain.model.set_counts(&counts);
        if it >= cfg.burn_in && (it - cfg.burn_in).is_multiple_of(cfg.thin) {
            test_values(&chain.state, &chain.m, full, kind, &mut chain_vals);
        }
    }

    let column = |v: &[f64], k: usize| -> Vec<f64> { v.iter().skip(k).step_by(width).copied().collect() };
    let stats = names
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            let p = column(&prior_vals, k);
            let c = column(&chain_vals, k);
            let (pm, pv) = mean_var(&p);
            let (cm, cv) = mean_var(&c);
            let e = ess_single(&c);
            let se = (pv / p.len() as f64 + cv / e).sqrt();
            GewekeStat {
                name,
                prior_mean: pm,
                chain_mean: cm,
                chain_ess: e,
                z: if se > 0.0 { (pm - cm) / se } else { 0.0 },
            }
        })
        .collect();
    Ok(GewekeReport {
        stats,
        threshold: cfg.threshold,
    })
}
