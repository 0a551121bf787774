//! Matérn Gaussian surfaces with exposure-site mean functions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::bessel::bessel_k;
use super::grid::Grid;
use crate::error::{Error, Result};
use crate::prior::DEFAULT_DENSE_LIMIT;
use crate::rng::{substream, tag};

/// Matérn correlation at distance `d` with smoothness `nu` and decay `phi`.
pub fn matern(d: f64, nu: f64, phi: f64) -> Result<f64> {
    if !(nu > 0.0 && nu.is_finite()) || !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::Parameter(format!(
            "Matérn smoothness and decay must be positive (nu={nu}, phi={phi})"
        )));
    }
    if !(d >= 0.0) {
        return Err(Error::Parameter(format!("distance must be nonnegative, got {d}")));
    }
    let x = d * phi;
    if x == 0.0 {
        return Ok(1.0);
    }
    let k = bessel_k(nu, x);
    if k == 0.0 {
        return Ok(0.0);
    }
    let log_scale = nu * x.ln() - (nu - 1.0) * std::f64::consts::LN_2 - ln_gamma(nu);
    Ok((log_scale.exp() * k).min(1.0))
}

/// How surfaces are drawn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GpMethod {
    /// Circulant embedding on regular grids, dense Cholesky otherwise.
    #[default]
    Auto,
    Dense,
    Circulant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseSurface {
    pub exposure_sites: Vec<[f64; 2]>,
    pub mean_amplitude: f64,
    pub mean_decay: f64,
    /// Matérn decay φ_j.
    pub matern_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub diseases: Vec<DiseaseSurface>,
    pub matern_nu: f64,
    pub gp_variance: f64,
    #[serde(default)]
    pub method: GpMethod,
    #[serde(default = "default_dense_limit")]
    pub dense_limit: usize,
}

fn default_dense_limit() -> usize {
    DEFAULT_DENSE_LIMIT
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            diseases: vec![
                DiseaseSurface {
                    exposure_sites: vec![[0.25, 0.7], [0.7, 0.3]],
                    mean_amplitude: 1.2,
                    mean_decay: 4.0,
                    matern_decay: 6.0,
                },
                DiseaseSurface {
                    exposure_sites: vec![[0.6, 0.75], [0.3, 0.25]],
                    mean_amplitude: 1.2,
                    mean_decay: 4.0,
                    matern_decay: 4.0,
                },
            ],
            matern_nu: 1.5,
            gp_variance: 0.15,
            method: GpMethod::Auto,
            dense_limit: DEFAULT_DENSE_LIMIT,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.diseases.is_empty() {
            return Err(Error::Parameter("GP config needs at least one disease".into()));
        }
        if !(self.matern_nu > 0.0 && self.matern_nu.is_finite()) {
            return Err(Error::Parameter("matern_nu must be positive".into()));
        }
        if !(self.gp_variance > 0.0 && self.gp_variance.is_finite()) {
            return Err(Error::Parameter("gp_variance must be positive".into()));
        }
        for (j, d) in self.diseases.iter().enumerate() {
            if d.exposure_sites.is_empty() {
                return Err(Error::Parameter(format!("disease {} has no exposure sites", j + 1)));
            }
            if !(d.matern_decay > 0.0 && d.matern_decay.is_finite()) {
                return Err(Error::Parameter(format!(
                    "disease {}: matern_decay must be positive",
                    j + 1
                )));
            }
            if !d.mean_amplitude.is_finite() || !(d.mean_decay >= 0.0) {
                return Err(Error::Parameter(format!(
                    "disease {}: mean amplitude must be finite and decay nonnegative",
                    j + 1
                )));
            }
        }
        Ok(())
    }

    /// μ_j(s) = Σ_sites amplitude · exp(−decay · ‖s − site‖).
    pub fn mean_surface(&self, grid: &Grid, disease: usize) -> Vec<f64> {
        let d = &self.diseases[disease];
        grid.points()
            .iter()
            .map(|&(x, y)| {
                d.exposure_sites
                    .iter()
                    .map(|s| {
                        let dist = ((x - s[0]).powi(2) + (y - s[1]).powi(2)).sqrt();
                        d.mean_amplitude * (-d.mean_decay * dist).exp()
                    })
                    .sum()
            })
            .collect()
    }
}

const JITTERS: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];
const MAX_EMBEDDING: usize = 2048;

enum Factor {
    Dense(DMatrix<f64>),
    Circulant {
        m: usize,
        resolution: usize,
        sqrt_eig: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
}

/// Prepared sampler for one disease surface; reuse it for repeated draws.
pub struct FieldSampler {
    mean: Vec<f64>,
    factor: Factor,
}

impl std::fmt::Debug for FieldSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.factor {
            Factor::Dense(_) => "dense",
            Factor::Circulant { .. } => "circulant",
        };
        f.debug_struct("FieldSampler")
            .field("points", &self.mean.len())
            .field("factor", &kind)
            .finish()
    }
}

fn fft2(data: &mut [Complex<f64>], m: usize, fft: &Arc<dyn Fft<f64>>) {
    for row in data.chunks_mut(m) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); m];
    for c in 0..m {
        for r in 0..m {
            col[r] = data[r * m + c];
        }
        fft.process(&mut col);
        for r in 0..m {
            data[r * m + c] = col[r];
        }
    }
}

impl FieldSampler {
    pub fn new(grid: &Grid, gp: &GpConfig, disease: usize) -> Result<Self> {
        gp.validate()?;
        if disease >= gp.diseases.len() {
            return Err(Error::Dimension(format!(
                "disease {} requested but GP config has {}",
                disease + 1,
                gp.diseases.len()
            )));
        }
        let mean = gp.mean_surface(grid, disease);
        let phi = gp.diseases[disease].matern_decay;
        let use_circulant = match gp.method {
            GpMethod::Auto => grid.resolution().is_some(),
            GpMethod::Circulant => {
                if grid.resolution().is_none() {
                    return Err(Error::Parameter("circulant embedding needs a regular grid".into()));
                }
                true
            }
            GpMethod::Dense => false,
        };
        let factor = if use_circulant {
            Self::circulant(grid.resolution().unwrap_or(0), gp.matern_nu, phi, gp.gp_variance)?
        } else {
            Self::dense(grid, gp.matern_nu, phi, gp.gp_variance, gp.dense_limit)?
        };
        Ok(Self { mean, factor })
    }

    fn dense(grid: &Grid, nu: f64, phi: f64, var: f64, limit: usize) -> Result<Factor> {
        let n = grid.num_points();
        if n > limit {
            return Err(Error::DenseBudget {
                what: "GP covariance",
                requested: n,
                limit,
            });
        }
        let pts = grid.points();
        let mut cov = DMatrix::zeros(n, n);
        for a in 0..n {
            cov[(a, a)] = var;
            for b in 0..a {
                let d = ((pts[a].0 - pts[b].0).powi(2) + (pts[a].1 - pts[b].1).powi(2)).sqrt();
                let v = var * matern(d, nu, phi)?;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        for jitter in JITTERS {
            let mut c = cov.clone();
            for a in 0..n {
                c[(a, a)] += jitter * var;
            }
            if let Some(ch) = c.cholesky() {
                return Ok(Factor::Dense(ch.unpack()));
            }
        }
        Err(Error::NotPositiveDefinite(format!(
            "GP covariance on {n} points after jitter {:e}",
            JITTERS[JITTERS.len() - 1]
        )))
    }

    fn circulant(resolution: usize, nu: f64, phi: f64, var: f64) -> Result<Factor> {
        let h = 1.0 / resolution as f64;
        let mut m = (2 * resolution).next_power_of_two();
        let mut planner = FftPlanner::new();
        loop {
            let fft = planner.plan_fft_forward(m);
            let mut base = vec![Complex::new(0.0, 0.0); m * m];
            for a in 0..m {
                let dy = a.min(m - a) as f64 * h;
                for b in 0..m {
                    let dx = b.min(m - b) as f64 * h;
                    base[a * m + b].re = var * matern((dx * dx + dy * dy).sqrt(), nu, phi)?;
                }
            }
            fft2(&mut base, m, &fft);
            let max = base.iter().map(|z| z.re).fold(f64::MIN, f64::max);
            let min = base.iter().map(|z| z.re).fold(f64::MAX, f64::min);
            if min >= -1e-10 * max {
                let scale = 1.0 / (m * m) as f64;
                let sqrt_eig = base.iter().map(|z| (z.re.max(0.0) * scale).sqrt()).collect();
                return Ok(Factor::Circulant {
                    m,
                    resolution,
                    sqrt_eig,
                    fft,
                });
            }
            if m >= MAX_EMBEDDING {
                return Err(Error::Numerical(format!(
                    "circulant embedding not nonnegative definite up to size {m} \
                     (min eigenvalue {min:e}); use the dense method"
                )));
            }
            m *= 2;
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.factor {
            Factor::Dense(l) => {
                let n = self.mean.len();
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let x = l * z;
                self.mean.iter().zip(x.iter()).map(|(m, v)| m + v).collect()
            }
            Factor::Circulant {
                m,
                resolution,
                sqrt_eig,
                fft,
            } => {
                let m = *m;
                let mut w: Vec<Complex<f64>> = sqrt_eig
                    .iter()
                    .map(|&s| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex::new(s * re, s * im)
                    })
                    .collect();
                fft2(&mut w, m, fft);
                let mut out = self.mean.clone();
                for r in 0..*resolution {
                    for c in 0..*resolution {
                        out[r * resolution + c] += w[r * m + c].re;
                    }
                }
                out
            }
        }
    }
}

/// Draws one independent surface ω_j per disease, each from its own stream.
pub fn simulate_gp_fields(grid: &Grid, gp: &GpConfig, seed: u64) -> Result<Vec<Vec<f64>>> {
    (0..gp.diseases.len())
        .map(|j| {
            let sampler = FieldSampler::new(grid, gp, j)?;
            let mut rng = substream(seed, &[tag::GP_FIELD, j as u64]);
            Ok(sampler.sample(&mut rng))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn matern_zero_lag_is_one() {
        assert_eq!(matern(0.0, 1.5, 3.0).unwrap(), 1.0);
    }

    #[test]
    fn matern_half_is_exponential() {
        for x in [0.1, 1.0, 3.0] {
            assert_relative_eq!(matern(x / 2.0, 0.5, 2.0).unwrap(), (-x).exp(), max_relative = 1e-12);
        }
    }

    #[test]
    fn matern_three_halves_closed_form() {
        // (1 + x) e^{-x}
        for x in [0.2, 1.0, 4.0] {
            assert_relative_eq!(
                matern(x, 1.5, 1.0).unwrap(),
                (1.0 + x) * (-x).exp(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn matern_decreasing() {
        let mut prev = 1.0;
        for k in 1..200 {
            let r = matern(k as f64 * 0.01, 2.3, 4.0).unwrap();
            assert!(r < prev);
            prev = r;
        }
        assert!(matern(1.0, -1.0, 1.0).is_err());
        assert!(matern(1.0, 1.0, 0.0).is_err());
    }

    fn small_config(method: GpMethod) -> GpConfig {
        GpConfig {
            method,
            ..GpConfig::default()
        }
    }

    fn covariance_check(grid: &Grid, gp: &GpConfig, probe: &[usize]) {
        let sampler = FieldSampler::new(grid, gp, 0).unwrap();
        let mut rng = substream(99, &[1]);
        let n = 2000;
        let k = probe.len();
        let mut sums = vec![0.0; k];
        let mut cross = vec![0.0; k * k];
        for _ in 0..n {
            let f = sampler.sample(&mut rng);
            let v: Vec<f64> = probe.iter().map(|&p| f[p] - sampler.mean()[p]).collect();
            for a in 0..k {
                sums[a] += v[a];
                for b in 0..k {
                    cross[a * k + b] += v[a] * v[b];
                }
            }
        }
        let pts = grid.points();
        let phi = gp.diseases[0].matern_decay;
        let cov = |a: usize, b: usize| {
            let (p, q) = (pts[probe[a]], pts[probe[b]]);
            let d = ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
            gp.gp_variance * matern(d, gp.matern_nu, phi).unwrap()
        };
        for a in 0..k {
            assert!((sums[a] / n as f64).abs() < 3.0 * (gp.gp_variance / n as f64).sqrt());
            for b in 0..k {
                let est = cross[a * k + b] / n as f64;
                let truth = cov(a, b);
                let se = ((cov(a, a) * cov(b, b) + truth * truth) / n as f64).sqrt();
                assert!((est - truth).abs() < 3.0 * se, "({a},{b}) {est} vs {truth}");
            }
        }
    }

    #[test]
    fn dense_sampler_covariance() {
        let grid = Grid::lattice_partition(10, 2, 2).unwrap();
        covariance_check(&grid, &small_config(GpMethod::Dense), &[0, 1, 11, 45, 99]);
    }

    #[test]
    fn circulant_sampler_covariance() {
        let grid = Grid::lattice_partition(30, 3, 3).unwrap();
        covariance_check(&grid, &small_config(GpMethod::Circulant), &[0, 1, 31, 465, 899]);
    }

    #[test]
    fn vanishing_variance_returns_mean() {
        let grid = Grid::lattice_partition(8, 2, 2).unwrap();
        for method in [GpMethod::Dense, GpMethod::Circulant] {
            let gp = GpConfig {
                gp_variance: 1e-24,
                method,
                ..GpConfig::default()
            };
            let f = simulate_gp_fields(&grid, &gp, 3).unwrap();
            for (j, fj) in f.iter().enumerate() {
                let mu = gp.mean_surface(&grid, j);
                for (a, b) in fj.iter().zip(&mu) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_fields_and_diseases_uncorrelated() {
        let grid = Grid::lattice_partition(12, 3, 3).unwrap();
        let gp = GpConfig::default();
        assert_eq!(
            simulate_gp_fields(&grid, &gp, 5).unwrap(),
            simulate_gp_fields(&grid, &gp, 5).unwrap()
        );

        let s0 = FieldSampler::new(&grid, &gp, 0).unwrap();
        let s1 = FieldSampler::new(&grid, &gp, 1).unwrap();
        let n = 2000;
        let p = 70;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for rep in 0..n {
            let x = s0.sample(&mut substream(rep, &[tag::GP_FIELD, 0]))[p] - s0.mean()[p];
            let y = s1.sample(&mut substream(rep, &[tag::GP_FIELD, 1]))[p] - s1.mean()[p];
            sxy += x * y;
            sxx += x * x;
            syy += y * y;
        }
        let corr = sxy / (sxx * syy).sqrt();
        assert!(corr.abs() < 3.0 / (n as f64).sqrt(), "{corr}");
    }

    #[test]
    fn dense_budget_enforced() {
        let grid = Grid::lattice_partition(20, 2, 2).unwrap();
        let gp = GpConfig {
            method: GpMethod::Dense,
            dense_limit: 100,
            ..GpConfig::default()
        };
        assert!(matches!(
            FieldSampler::new(&grid, &gp, 0),
            Err(Error::DenseBudget { .. })
        ));
    }
}
