//! Target density of the Poisson–logit-normal M-model and its single-site
//! Metropolis updates.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::CountDataset;
use crate::error::{Error, Result};
use crate::graph::ArealGraph;
use crate::prior::{mixing_matrix, BartlettFactor, BetweenCov, CarPrecision, PriorKind, PriorSpec};

/// Prior on the intercepts α_j.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AlphaPrior {
    #[default]
    Flat,
    Normal {
        mean: f64,
        sd: f64,
    },
}

impl AlphaPrior {
    fn log_density(&self, a: f64) -> f64 {
        match *self {
            AlphaPrior::Flat => 0.0,
            AlphaPrior::Normal { mean, sd } => -0.5 * ((a - mean) / sd).powi(2),
        }
    }
}

/// Fixed hyperparameters (Σ_b and the λ of the prior spec) or full Bayes.
#[derive(Debug, Clone, PartialEq)]
pub enum FitMode {
    Fixed(BetweenCov),
    Full,
}

impl FitMode {
    pub fn is_full(&self) -> bool {
        matches!(self, FitMode::Full)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub alpha: Vec<f64>,
    /// J×G unit-variance spatial fields.
    pub phi: DMatrix<f64>,
    /// Present in full mode only.
    pub bartlett: Option<BartlettFactor>,
    /// λ_j per disease (1 for the intrinsic prior).
    pub lambda: Vec<f64>,
}

impl ModelState {
    pub fn mixing(&self, mode: &FitMode) -> Result<DMatrix<f64>> {
        match (mode, &self.bartlett) {
            (FitMode::Fixed(s), _) => Ok(mixing_matrix(s)),
            (FitMode::Full, Some(b)) => Ok(mixing_matrix(&b.sigma_b()?)),
            (FitMode::Full, None) => Err(Error::Parameter("full mode state needs a Bartlett factor".into())),
        }
    }

    /// Θ = Mφ.
    pub fn theta(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m * &self.phi
    }

    pub fn linear_predictor(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut eta = self.theta(m);
        for (j, mut row) in eta.row_iter_mut().enumerate() {
            row.add_scalar_mut(self.alpha[j]);
        }
        eta
    }

    pub fn rates(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.linear_predictor(m).map(inv_logit)
    }
}

#[inline]
pub(crate) fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn log_inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn ln_factorial(o: f64) -> f64 {
    if o <= 1.0 {
        0.0
    } else {
        ln_gamma(o + 1.0)
    }
}

/// Components of the log posterior (additive constants dropped).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPosterior {
    pub log_likelihood: f64,
    /// Σ_j ½ log|Q_j| − ½ φ_j′Q_jφ_j (the log determinant is omitted for
    /// intrinsic rows, where it is a constant).
    pub field_prior: f64,
    /// Log density of the Bartlett elements `c_j` and `n_jl` (full mode).
    pub bartlett_prior: f64,
    pub alpha_prior: f64,
    pub total: f64,
}

fn log_det_leroux(eigen_r: &[f64], lambda: f64) -> f64 {
    eigen_r.iter().map(|&e| (lambda * e + 1.0 - lambda).ln()).sum()
}

fn structure_eigenvalues(graph: &ArealGraph) -> Vec<f64> {
    graph
        .structure_matrix()
        .symmetric_eigenvalues()
        .iter()
        .map(|&e| e.max(0.0))
        .collect()
}

fn bartlett_log_prior(b: &BartlettFactor) -> f64 {
    let mut lp = 0.0;
    for (j, &c) in b.diag.iter().enumerate() {
        if !(c > 0.0) {
            return f64::NEG_INFINITY;
        }
        lp += (b.chi2_dof(j) - 1.0) * c.ln() - 0.5 * c * c;
    }
    lp - 0.5 * b.lower.iter().map(|n| n * n).sum::<f64>()
}

/// Poisson log-likelihood at the given linear predictor.
pub fn log_likelihood(data: &CountDataset, eta: &DMatrix<f64>) -> f64 {
    let mut ll = 0.0;
    for i in 0..data.num_areas() {
        let n = data.population()[i] as f64;
        for j in 0..data.num_diseases() {
            let o = data.count(j, i) as f64;
            ll += cell_loglik(o, n.ln(), n, ln_factorial(o), eta[(j, i)]);
        }
    }
    ll
}

#[inline]
fn cell_loglik(o: f64, ln_n: f64, n: f64, ln_fact: f64, eta: f64) -> f64 {
    let first = if o > 0.0 { o * (ln_n + log_inv_logit(eta)) } else { 0.0 };
    first - n * inv_logit(eta) - ln_fact
}

/// Unnormalized log posterior of a state.
pub fn log_posterior(
    state: &ModelState,
    data: &CountDataset,
    graph: &ArealGraph,
    spec: &PriorSpec,
    mode: &FitMode,
    alpha_prior: &AlphaPrior,
) -> Result<LogPosterior> {
    let jn = data.num_diseases();
    let g = data.num_areas();
    if state.alpha.len() != jn || state.phi.shape() != (jn, g) || state.lambda.len() != jn || graph.num_areas() != g {
        return Err(Error::Dimension("state does not match data and graph".into()));
    }
    spec.validate(jn)?;
    if state.lambda.iter().any(|&l| !(0.0..=1.0).contains(&l)) {
        return Ok(LogPosterior {
            log_likelihood: f64::NAN,
            field_prior: f64::NEG_INFINITY,
            bartlett_prior: 0.0,
            alpha_prior: 0.0,
            total: f64::NEG_INFINITY,
        });
    }
    if state.alpha.iter().chain(state.phi.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite state".into()));
    }
    let m = state.mixing(mode)?;
    let eta = state.linear_predictor(&m);
    let ll = log_likelihood(data, &eta);
    let eigen_r = if state.lambda.iter().any(|&l| l < 1.0) {
        structure_eigenvalues(graph)
    } else {
        Vec::new()
    };
    let mut field = 0.0;
    for j in 0..jn {
        let row: Vec<f64> = state.phi.row(j).iter().copied().collect();
        let lam = state.lambda[j];
        field -= 0.5 * CarPrecision::new(graph, lam).quad_form(&row);
        if lam < 1.0 {
            field += 0.5 * log_det_leroux(&eigen_r, lam);
        }
    }
    let bp = match (mode, &state.bartlett) {
        (FitMode::Full, Some(b)) => bartlett_log_prior(b),
        _ => 0.0,
    };
    let ap: f64 = state.alpha.iter().map(|&a| alpha_prior.log_density(a)).sum();
    Ok(LogPosterior {
        log_likelihood: ll,
        field_prior: field,
        bartlett_prior: bp,
        alpha_prior: ap,
        total: ll + field + bp + ap,
    })
}

/// Data and fixed structure seen by one chain.
#[derive(Debug, Clone)]
pub(crate) struct Model<'g> {
    pub graph: &'g ArealGraph,
    pub kind: PriorKind,
    pub mode: FitMode,
    pub alpha_prior: AlphaPrior,
    pub dof: f64,
    pub fixed_lambda: Vec<f64>,
    counts: DMatrix<f64>,
    ln_fact: DMatrix<f64>,
    pop: Vec<f64>,
    ln_pop: Vec<f64>,
    eigen_r: Vec<f64>,
}

impl<'g> Model<'g> {
    pub fn new(
        data: &CountDataset,
        graph: &'g ArealGraph,
        spec: &PriorSpec,
        mode: &FitMode,
        alpha_prior: AlphaPrior,
    ) -> Result<Self> {
        let jn = data.num_diseases();
        if graph.num_areas() != data.num_areas() {
            return Err(Error::Dimension(format!(
                "graph has {} areas, data has {}",
                graph.num_areas(),
                data.num_areas()
            )));
        }
        spec.validate(jn)?;
        if let FitMode::Fixed(s) = mode {
            if s.dim() != jn {
                return Err(Error::Dimension(format!(
                    "Σ_b is {0}x{0} but data has {jn} diseases",
                    s.dim()
                )));
            }
        }
        if spec.kind() == PriorKind::Icar && !matches!(alpha_prior, AlphaPrior::Flat) {
            return Err(Error::Parameter(
                "intrinsic fields are centred into the intercepts, which requires a flat intercept prior".into(),
            ));
        }
        if let AlphaPrior::Normal { mean, sd } = alpha_prior {
            if !(sd > 0.0) || !mean.is_finite() {
                return Err(Error::Parameter(
                    "normal intercept prior needs finite mean and sd > 0".into(),
                ));
            }
        }
        let needs_eigen = mode.is_full() && spec.kind() != PriorKind::Icar;
        let mut model = Self {
            graph,
            kind: spec.kind(),
            mode: mode.clone(),
            alpha_prior,
            dof: jn as f64 + 2.0,
            fixed_lambda: spec.lambdas(jn),
            counts: DMatrix::zeros(0, 0),
            ln_fact: DMatrix::zeros(0, 0),
            pop: data.population().iter().map(|&n| n as f64).collect(),
            ln_pop: data.population().iter().map(|&n| (n as f64).ln()).collect(),
            eigen_r: if needs_eigen {
                structure_eigenvalues(graph)
            } else {
                Vec::new()
            },
        };
        model.set_counts(data.counts());
        Ok(model)
    }

    pub fn set_counts(&mut self, counts: &DMatrix<u64>) {
        self.counts = counts.map(|c| c as f64);
        self.ln_fact = self.counts.map(ln_factorial);
    }

    pub fn num_diseases(&self) -> usize {
        self.counts.nrows()
    }

    pub fn num_areas(&self) -> usize {
        self.counts.ncols()
    }

    pub fn population(&self) -> &[f64] {
        &self.pop
    }

    #[inline]
    fn cell(&self, j: usize, i: usize, eta: f64) -> f64 {
        cell_loglik(
            self.counts[(j, i)],
            self.ln_pop[i],
            self.pop[i],
            self.ln_fact[(j, i)],
            eta,
        )
    }

    fn loglik(&self, eta: &DMatrix<f64>) -> f64 {
        let mut ll = 0.0;
        for i in 0..self.num_areas() {
            for j in 0..self.num_diseases() {
                ll += self.cell(j, i, eta[(j, i)]);
            }
        }
        ll
    }

    /// Number of Bartlett scalars (diagonal then strict lower).
    pub fn num_bartlett(&self) -> usize {
        if self.mode.is_full() {
            let jn = self.num_diseases();
            jn + jn * (jn - 1) / 2
        } else {
            0
        }
    }

    /// Number of sampled λ scalars.
    pub fn num_lambda(&self) -> usize {
        match (self.mode.is_full(), self.kind) {
            (false, _) | (true, PriorKind::Icar) => 0,
            (true, PriorKind::Lcar) => 1,
            (true, PriorKind::Ljcar) => self.num_diseases(),
        }
    }

    fn lambda_rows(&self, k: usize) -> std::ops::Range<usize> {
        match self.kind {
            PriorKind::Ljcar => k..k + 1,
            _ => 0..self.num_diseases(),
        }
    }
}

/// Random-walk scales and acceptance bookkeeping for each scalar update.
#[derive(Debug, Clone)]
pub(crate) struct Tuning {
    pub log_scale: Vec<f64>,
    batch_acc: Vec<u32>,
    batch_try: Vec<u32>,
}

impl Tuning {
    fn new(n: usize, scale: f64) -> Self {
        Self {
            log_scale: vec![scale.ln(); n],
            batch_acc: vec![0; n],
            batch_try: vec![0; n],
        }
    }

    fn scale(&self, k: usize) -> f64 {
        self.log_scale[k].exp()
    }

    fn record(&mut self, k: usize, accepted: bool) {
        self.batch_try[k] += 1;
        self.batch_acc[k] += accepted as u32;
    }

    fn adapt(&mut self, target: f64, step: f64) {
        for k in 0..self.log_scale.len() {
            if self.batch_try[k] > 0 {
                let rate = self.batch_acc[k] as f64 / self.batch_try[k] as f64;
                self.log_scale[k] += if rate > target { step } else { -step };
            }
            self.batch_acc[k] = 0;
            self.batch_try[k] = 0;
        }
    }
}

/// Initial random-walk scales per update group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalScales {
    pub alpha: f64,
    pub phi: f64,
    pub bartlett: f64,
    pub lambda: f64,
}

impl Default for ProposalScales {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            phi: 0.5,
            bartlett: 0.2,
            lambda: 1.0,
        }
    }
}

pub(crate) const GROUPS: [&str; 4] = ["alpha", "phi", "bartlett", "lambda"];

pub(crate) struct Chain<'g> {
    pub model: Model<'g>,
    pub state: ModelState,
    pub m: DMatrix<f64>,
    pub eta: DMatrix<f64>,
    alpha_t: Tuning,
    phi_t: Tuning,
    bartlett_t: Tuning,
    lambda_t: Tuning,
    batches: u32,
    sweeps_in_batch: usize,
    /// Accepted and attempted moves per group since the last reset.
    pub accepted: [u64; 4],
    pub attempted: [u64; 4],
}

impl<'g> Chain<'g> {
    pub fn new(model: Model<'g>, mut state: ModelState, scales: &ProposalScales) -> Result<Self> {
        if model.num_lambda() == 0 {
            state.lambda.clone_from(&model.fixed_lambda);
        }
        let m = state.mixing(&model.mode)?;
        let eta = state.linear_predictor(&m);
        let jn = model.num_diseases();
        let g = model.num_areas();
        let chain = Self {
            alpha_t: Tuning::new(jn, scales.alpha),
            phi_t: Tuning::new(jn * g, scales.phi),
            bartlett_t: Tuning::new(model.num_bartlett(), scales.bartlett),
            lambda_t: Tuning::new(model.num_lambda(), scales.lambda),
            model,
            state,
            m,
            eta,
            batches: 0,
            sweeps_in_batch: 0,
            accepted: [0; 4],
            attempted: [0; 4],
        };
        if !chain.model.loglik(&chain.eta).is_finite() {
            return Err(Error::Numerical("initial state has non-finite likelihood".into()));
        }
        Ok(chain)
    }

    /// Initial state near the global rates with small per-chain jitter.
    pub fn initial_state<R: Rng + ?Sized>(model: &Model<'_>, rng: &mut R) -> ModelState {
        let jn = model.num_diseases();
        let g = model.num_areas();
        let total_pop: f64 = model.population().iter().sum();
        let alpha = (0..jn)
            .map(|j| {
                let rate = (model.counts.row(j).sum() + 0.5) / total_pop;
                let p = rate.clamp(1e-12, 0.5);
                (p / (1.0 - p)).ln() + 0.1 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let phi = DMatrix::from_fn(jn, g, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
        let bartlett = model.mode.is_full().then(|| BartlettFactor {
            diag: (0..jn)
                .map(|j| {
                    ((model.dof - j as f64 - 2.0).max(1.0)).sqrt() * (0.1 * rng.sample::<f64, _>(StandardNormal)).exp()
                })
                .collect(),
            lower: vec![0.0; jn * (jn - 1) / 2],
            dof: model.dof,
        });
        let lambda = if model.num_lambda() > 0 {
            let base: Vec<f64> = (0..model.num_lambda())
                .map(|_| 0.3 + 0.4 * rng.random::<f64>())
                .collect();
            match model.kind {
                PriorKind::Ljcar => base,
                _ => vec![base[0]; jn],
            }
        } else {
            model.fixed_lambda.clone()
        };
        let mut s = ModelState {
            alpha,
            phi,
            bartlett,
            lambda,
        };
        center_intrinsic(&mut s, None);
        s
    }

    fn refresh_eta(&mut self) {
        self.eta = self.state.linear_predictor(&self.m);
    }

    fn update_phi<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let jn = self.model.num_diseases();
        let g = self.model.num_areas();
        for j in 0..jn {
            let prec = CarPrecision::new(self.model.graph, self.state.lambda[j]);
            for i in 0..g {
                let k = j * g + i;
                let x = self.state.phi[(j, i)];
                let dx = self.phi_t.scale(k) * rng.sample::<f64, _>(StandardNormal);
                let xn = x + dx;
                let nb: f64 = self
                    .model
                    .graph
                    .neighbors(i)
                    .iter()
                    .map(|&q| self.state.phi[(j, q)])
                    .sum();
                let mut diff = -0.5 * prec.diag(i) * (xn * xn - x * x) - dx * prec.off_diag() * nb;
                for l in 0..jn {
                    let e = self.eta[(l, i)];
                    diff += self.model.cell(l, i, e + self.m[(l, j)] * dx) - self.model.cell(l, i, e);
                }
                let acc = rng.random::<f64>().ln() < diff;
                if acc {
                    self.state.phi[(j, i)] = xn;
                    for l in 0..jn {
                        self.eta[(l, i)] += self.m[(l, j)] * dx;
                    }
                }
                self.phi_t.record(k, acc);
                self.count(1, acc);
            }
        }
    }

    fn update_alpha<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let g = self.model.num_areas();
        for j in 0..self.model.num_diseases() {
            let d = self.alpha_t.scale(j) * rng.sample::<f64, _>(StandardNormal);
            let a = self.state.alpha[j];
            let mut diff = self.model.alpha_prior.log_density(a + d) - self.model.alpha_prior.log_density(a);
            for i in 0..g {
                let e = self.eta[(j, i)];
                diff += self.model.cell(j, i, e + d) - self.model.cell(j, i, e);
            }
            let acc = rng.random::<f64>().ln() < diff;
            if acc {
                self.state.alpha[j] = a + d;
                for i in 0..g {
                    self.eta[(j, i)] += d;
                }
            }
            self.alpha_t.record(j, acc);
            self.count(0, acc);
        }
    }

    /// Gibbs move along φ_j → φ_j + c·1, α → α − M[:, j]·c, which leaves
    /// the linear predictor unchanged. Only proper rows are moved.
    fn shift_levels<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let g = self.model.num_areas();
        for j in 0..self.model.num_diseases() {
            let lam = self.state.lambda[j];
            if lam >= 1.0 {
                continue;
            }
            let sum = self.state.phi.row(j).sum();
            let mut prec = (1.0 - lam) * g as f64;
            let mut lin = -(1.0 - lam) * sum;
            if let AlphaPrior::Normal { mean, sd } = self.model.alpha_prior {
                for l in 0..self.state.alpha.len() {
                    let m = self.m[(l, j)];
                    prec += m * m / (sd * sd);
                    lin += m * (self.state.alpha[l] - mean) / (sd * sd);
                }
            }
            let c = lin / prec + rng.sample::<f64, _>(StandardNormal) / prec.sqrt();
            self.state.phi.row_mut(j).add_scalar_mut(c);
            for l in 0..self.state.alpha.len() {
                self.state.alpha[l] -= self.m[(l, j)] * c;
            }
        }
    }

    fn update_bartlett<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let jn = self.model.num_diseases();
        for k in 0..self.model.num_bartlett() {
            let Some(current) = self.state.bartlett.clone() else {
                return;
            };
            let step = self.bartlett_t.scale(k) * rng.sample::<f64, _>(StandardNormal);
            let mut prop = current.clone();
            let prior_diff = if k < jn {
                // log-scale move on c_j: target in u = ln c is k_j u − e^{2u}/2
                let dof = current.chi2_dof(k);
                let u = current.diag[k].ln();
                let un = u + step;
                prop.diag[k] = un.exp();
                dof * (un - u) - 0.5 * (prop.diag[k].powi(2) - current.diag[k].powi(2))
            } else {
                let idx = k - jn;
                let n = current.lower[idx];
                prop.lower[idx] = n + step;
                -0.5 * ((n + step).powi(2) - n * n)
            };
            let accepted = match prop.sigma_b() {
                Ok(sigma) => {
                    let m_new = mixing_matrix(&sigma);
                    let eta_new = {
                        let mut e = &m_new * &self.state.phi;
                        for (j, mut row) in e.row_iter_mut().enumerate() {
                            row.add_scalar_mut(self.state.alpha[j]);
                        }
                        e
                    };
                    let diff = prior_diff + self.model.loglik(&eta_new) - self.model.loglik(&self.eta);
                    if rng.random::<f64>().ln() < diff {
                        self.state.bartlett = Some(prop);
                        self.m = m_new;
                        self.eta = eta_new;
                        true
                    } else {
                        false
                    }
                }
                Err(_) => false,
            };
            self.bartlett_t.record(k, accepted);
            self.count(2, accepted);
        }
    }

    /// Log target of a shared λ on the logit scale, given φ′Rφ and φ′φ of
    /// each affected row.
    fn lambda_target(&self, lam: f64, quad: &[(f64, f64)]) -> f64 {
        let ld = log_det_leroux(&self.model.eigen_r, lam);
        let mut t = lam.ln() + (1.0 - lam).ln();
        for &(a, b) in quad {
            t += 0.5 * ld - 0.5 * (lam * a + (1.0 - lam) * b);
        }
        t
    }

    fn update_lambda<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for k in 0..self.model.num_lambda() {
            let rows = self.model.lambda_rows(k);
            let quad: Vec<(f64, f64)> = rows
                .clone()
                .map(|j| {
                    let row: Vec<f64> = self.state.phi.row(j).iter().copied().collect();
                    let a = CarPrecision::new(self.model.graph, 1.0).quad_form(&row);
                    let b = row.iter().map(|v| v * v).sum::<f64>();
                    (a, b)
                })
                .collect();
            let lam = self.state.lambda[rows.start];
            let t = (lam / (1.0 - lam)).ln();
            let tn = t + self.lambda_t.scale(k) * rng.sample::<f64, _>(StandardNormal);
            let lam_new = inv_logit(tn);
            let acc = lam_new > 0.0 && lam_new < 1.0 && {
                let diff = self.lambda_target(lam_new, &quad) - self.lambda_target(lam, &quad);
                rng.random::<f64>().ln() < diff
            };
            if acc {
                for j in rows {
                    self.state.lambda[j] = lam_new;
                }
            }
            self.lambda_t.record(k, acc);
            self.count(3, acc);
        }
    }

    fn count(&mut self, group: usize, acc: bool) {
        self.attempted[group] += 1;
        self.accepted[group] += acc as u64;
    }

    pub fn reset_counts(&mut self) {
        self.accepted = [0; 4];
        self.attempted = [0; 4];
    }

    /// One full sweep; adapts proposal scales every `batch` sweeps when
    /// `adapt` is set.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R, adapt: Option<(f64, usize)>) {
        self.update_phi(rng);
        self.update_alpha(rng);
        self.shift_levels(rng);
        self.refresh_eta();
        self.update_bartlett(rng);
        self.update_lambda(rng);
        center_intrinsic(&mut self.state, Some(&self.m));
        self.refresh_eta();
        if let Some((target, batch)) = adapt {
            self.sweeps_in_batch += 1;
            if self.sweeps_in_batch >= batch {
                self.sweeps_in_batch = 0;
                self.batches += 1;
                let step = (1.0 / (self.batches as f64).sqrt()).min(1.0);
                for t in [
                    &mut self.alpha_t,
                    &mut self.phi_t,
                    &mut self.bartlett_t,
                    &mut self.lambda_t,
                ] {
                    t.adapt(target, step);
                }
            }
        }
    }

    pub fn rates(&self) -> DMatrix<f64> {
        self.eta.map(inv_logit)
    }
}

/// Re-centres every intrinsic φ row to sum to zero, moving the level into α
/// through M so that the linear predictor is unchanged.
fn center_intrinsic(state: &mut ModelState, m: Option<&DMatrix<f64>>) {
    let g = state.phi.ncols();
    for j in 0..state.phi.nrows() {
        if state.lambda[j] < 1.0 {
            continue;
        }
        let mean = state.phi.row(j).sum() / g as f64;
        state.phi.row_mut(j).add_scalar_mut(-mean);
        if let Some(m) = m {
            for l in 0..state.alpha.len() {
                state.alpha[l] += m[(l, j)] * mean;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::full_joint_precision_with_mixing;
    use crate::rng::substream;
    use approx::assert_relative_eq;

    fn toy(j: usize, g_rows: usize, g_cols: usize) -> (ArealGraph, CountDataset) {
        let graph = ArealGraph::lattice(g_rows, g_cols).unwrap();
        let g = graph.num_areas();
        let counts = DMatrix::from_fn(j, g, |a, b| ((a + 2 * b) % 5) as u64);
        let pop = (0..g).map(|i| 100 + 10 * i as u64).collect();
        (graph, CountDataset::new(counts, pop, None).unwrap())
    }

    #[test]
    fn zero_counts_at_half_rate() {
        let graph = ArealGraph::lattice(2, 3).unwrap();
        let pop: Vec<u64> = vec![10, 20, 30, 40, 50, 61];
        let data = CountDataset::new(DMatrix::zeros(2, 6), pop.clone(), None).unwrap();
        let state = ModelState {
            alpha: vec![0.0, 0.0],
            phi: DMatrix::zeros(2, 6),
            bartlett: None,
            lambda: vec![0.5, 0.5],
        };
        let mode = FitMode::Fixed(BetweenCov::diagonal(&[0.3, 0.2]).unwrap());
        let lp = log_posterior(
            &state,
            &data,
            &graph,
            &PriorSpec::lcar(0.5).unwrap(),
            &mode,
            &AlphaPrior::Flat,
        )
        .unwrap();
        let want: f64 = pop.iter().map(|&n| -(n as f64) * 0.5).sum::<f64>() * 2.0;
        assert_eq!(lp.log_likelihood, want);
    }

    #[test]
    fn field_prior_matches_dense_quadratic_form() {
        let (graph, data) = toy(2, 3, 3);
        let mut rng = substream(4, &[]);
        let sigma = BetweenCov::bivariate(0.3, 0.5, 0.6).unwrap();
        for spec in [PriorSpec::lcar(0.4).unwrap(), PriorSpec::ljcar(vec![0.2, 0.9]).unwrap()] {
            let state = ModelState {
                alpha: vec![-1.0, -2.0],
                phi: DMatrix::from_fn(2, 9, |_, _| rng.sample::<f64, _>(StandardNormal)),
                bartlett: None,
                lambda: spec.lambdas(2),
            };
            let mode = FitMode::Fixed(sigma.clone());
            let m = state.mixing(&mode).unwrap();
            let theta = state.theta(&m);
            // vec(Θ) in area-major order
            let v = nalgebra::DVector::from_iterator(18, theta.iter().copied());
            let p = full_joint_precision_with_mixing(&spec, &m, &graph, 100).unwrap();
            let dense = -0.5 * (v.transpose() * &p * &v)[(0, 0)];
            let lp = log_posterior(&state, &data, &graph, &spec, &mode, &AlphaPrior::Flat).unwrap();
            let eig = structure_eigenvalues(&graph);
            let logdet: f64 = spec.lambdas(2).iter().map(|&l| 0.5 * log_det_leroux(&eig, l)).sum();
            assert_relative_eq!(lp.field_prior - logdet, dense, max_relative = 1e-12);
        }
    }

    #[test]
    fn leroux_log_determinant_matches_dense() {
        let graph = ArealGraph::lattice(3, 4).unwrap();
        let eig = structure_eigenvalues(&graph);
        for lam in [0.0, 0.3, 0.95] {
            let q = CarPrecision::new(&graph, lam).to_dense();
            assert_relative_eq!(log_det_leroux(&eig, lam), q.determinant().ln(), max_relative = 1e-10);
        }
    }

    #[test]
    fn intrinsic_prior_ignores_constant_shift() {
        let (graph, data) = toy(2, 3, 3);
        let mut rng = substream(5, &[]);
        let mut state = ModelState {
            alpha: vec![-1.0, -2.0],
            phi: DMatrix::from_fn(2, 9, |_, _| rng.sample::<f64, _>(StandardNormal)),
            bartlett: None,
            lambda: vec![1.0, 1.0],
        };
        let mode = FitMode::Fixed(BetweenCov::bivariate(0.2, 0.4, 0.3).unwrap());
        let before = log_posterior(&state, &data, &graph, &PriorSpec::Icar, &mode, &AlphaPrior::Flat).unwrap();
        state.phi.row_mut(1).add_scalar_mut(2.5);
        let after = log_posterior(&state, &data, &graph, &PriorSpec::Icar, &mode, &AlphaPrior::Flat).unwrap();
        assert_relative_eq!(before.field_prior, after.field_prior, max_relative = 1e-12);
    }

    #[test]
    fn centering_preserves_linear_predictor() {
        let (graph, data) = toy(2, 2, 3);
        let mode = FitMode::Fixed(BetweenCov::bivariate(0.2, 0.4, 0.7).unwrap());
        let model = Model::new(&data, &graph, &PriorSpec::Icar, &mode, AlphaPrior::Flat).unwrap();
        let mut rng = substream(6, &[]);
        let mut state = Chain::initial_state(&model, &mut rng);
        state.phi.row_mut(0).add_scalar_mut(1.3);
        let m = state.mixing(&mode).unwrap();
        let before = state.linear_predictor(&m);
        center_intrinsic(&mut state, Some(&m));
        let after = state.linear_predictor(&m);
        assert!((before - after).abs().max() < 1e-12);
        assert!(state.phi.row(0).sum().abs() < 1e-12);
    }

    #[test]
    fn lambda_out_of_range_is_minus_infinity() {
        let (graph, data) = toy(1, 2, 2);
        let state = ModelState {
            alpha: vec![0.0],
            phi: DMatrix::zeros(1, 4),
            bartlett: None,
            lambda: vec![1.2],
        };
        let mode = FitMode::Fixed(BetweenCov::diagonal(&[1.0]).unwrap());
        let lp = log_posterior(
            &state,
            &data,
            &graph,
            &PriorSpec::lcar(0.5).unwrap(),
            &mode,
            &AlphaPrior::Flat,
        )
        .unwrap();
        assert_eq!(lp.total, f64::NEG_INFINITY);
    }

    #[test]
    fn incremental_updates_track_full_recomputation() {
        let (graph, data) = toy(2, 3, 3);
        for (spec, mode) in [
            (PriorSpec::ljcar(vec![0.3, 0.6]).unwrap(), FitMode::Full),
            (
                PriorSpec::Icar,
                FitMode::Fixed(BetweenCov::bivariate(0.1, 0.3, 0.5).unwrap()),
            ),
        ] {
            let model = Model::new(&data, &graph, &spec, &mode, AlphaPrior::Flat).unwrap();
            let mut rng = substream(7, &[]);
            let state = Chain::initial_state(&model, &mut rng);
            let mut chain = Chain::new(model, state, &ProposalScales::default()).unwrap();
            for _ in 0..50 {
                chain.update_phi(&mut rng);
                chain.update_alpha(&mut rng);
                chain.update_bartlett(&mut rng);
                chain.update_lambda(&mut rng);
                let full = chain.state.linear_predictor(&chain.m);
                assert!((&full - &chain.eta).abs().max() < 1e-9);
                chain.sweep(&mut rng, Some((0.44, 5)));
            }
            assert!(chain.attempted.iter().sum::<u64>() > 0);
        }
    }

    #[test]
    fn normal_alpha_rejected_for_intrinsic() {
        let (graph, data) = toy(1, 2, 2);
        let mode = FitMode::Fixed(BetweenCov::diagonal(&[1.0]).unwrap());
        let r = Model::new(
            &data,
            &graph,
            &PriorSpec::Icar,
            &mode,
            AlphaPrior::Normal { mean: 0.0, sd: 1.0 },
        );
        assert!(r.is_err());
    }
}
