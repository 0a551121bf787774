#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]
//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use mvsmooth::data::CountDataset;
use mvsmooth::io::OutputPolicy;
use mvsmooth::mcmc::geweke::{geweke_joint_check, GewekeConfig};
use mvsmooth::mcmc::{fit, FitConfig, FitMode, PriorFieldSampler};
use mvsmooth::metrics::{average_rate, smoothing_report, MetricsOptions, RateAverage};
use mvsmooth::poisson_gamma::{
    eta_correlation, posterior_rate, posterior_relative_risk, smoothing_difference, PGParams,
};
use mvsmooth::prior::{BetweenCov, PriorKind, PriorSpec};
use mvsmooth::rng::substream;
use mvsmooth::scenario::sample_counts;
use mvsmooth::study::{run_across_study, run_within_study, CellSummary, RunContext, StudyConfig};
use mvsmooth::tcv::{multivariate_tcv, multivariate_tcv_generic, SigmaCell};
use mvsmooth::ArealGraph;

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !($cond) {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn within(t0: Instant, budget: Duration, what: &str) -> std::result::Result<(), String> {
    let el = t0.elapsed();
    if el > budget {
        Err(format!(
            "{what} took {:.1}s, budget {:.0}s",
            el.as_secs_f64(),
            budget.as_secs_f64()
        ))
    } else {
        Ok(())
    }
}

// Oracle adjacency built from coordinates, independent of the library's graph.
fn lattice_adjacency(rows: usize, cols: usize) -> DMatrix<f64> {
    let g = rows * cols;
    DMatrix::from_fn(g, g, |a, b| {
        let (ra, ca) = ((a / cols) as i64, (a % cols) as i64);
        let (rb, cb) = ((b / cols) as i64, (b % cols) as i64);
        ((ra - rb).abs() + (ca - cb).abs() == 1) as u8 as f64
    })
}

fn graph_adjacency(graph: &ArealGraph) -> DMatrix<f64> {
    let g = graph.num_areas();
    let mut w = DMatrix::zeros(g, g);
    for &(i, k) in graph.edges() {
        w[(i, k)] = 1.0;
        w[(k, i)] = 1.0;
    }
    w
}

fn leroux(w: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let g = w.nrows();
    let d = DMatrix::from_diagonal(&DVector::from_fn(g, |i, _| w.row(i).sum()));
    (d - w) * lambda + DMatrix::identity(g, g) * (1.0 - lambda)
}

/// Dense TCV: precision of vec(Θ) in disease-major order is
/// (L⁻ᵀ ⊗ I) blockdiag(Q_j) (L⁻¹ ⊗ I) with Σ_b = L Lᵀ.
fn dense_tcv(w: &DMatrix<f64>, lambdas: &[f64], sigma: &DMatrix<f64>) -> f64 {
    let g = w.nrows();
    let jn = sigma.nrows();
    let linv = sigma.clone().cholesky().unwrap().l().try_inverse().unwrap();
    let mut blockdiag = DMatrix::zeros(jn * g, jn * g);
    for (j, &l) in lambdas.iter().enumerate() {
        blockdiag.view_mut((j * g, j * g), (g, g)).copy_from(&leroux(w, l));
    }
    let left = linv.transpose().kronecker(&DMatrix::<f64>::identity(g, g));
    let q = &left * blockdiag * left.transpose();
    (0..g)
        .map(|i| {
            let block = DMatrix::from_fn(jn, jn, |a, b| q[(a * g + i, b * g + i)]);
            1.0 / block.determinant()
        })
        .sum()
}

fn random_spd(jn: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(jn, jn, |_, _| rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose() + DMatrix::identity(jn, jn) * 0.3
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn tcv_vs_dense() -> Check {
    let t0 = Instant::now();
    let mut rng = substream(101, &[]);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for (rows, cols) in [(3, 3), (1, 47), (10, 10)] {
        let graph = ok(ArealGraph::lattice(rows, cols))?;
        let w = lattice_adjacency(rows, cols);
        for jn in 1..=3 {
            for rep in 0..3 {
                let sigma = random_spd(jn, &mut rng);
                let sb = ok(BetweenCov::new(sigma.clone()))?;
                let lam: f64 = rng.random_range(0.05..0.95);
                let lams: Vec<f64> = (0..jn).map(|_| rng.random_range(0.0..1.0)).collect();
                let cases = [
                    (PriorSpec::Icar, vec![1.0; jn]),
                    (ok(PriorSpec::lcar(lam))?, vec![lam; jn]),
                    (ok(PriorSpec::ljcar(lams.clone()))?, lams.clone()),
                ];
                for (spec, l) in cases {
                    let want = dense_tcv(&w, &l, &sigma);
                    let closed = ok(multivariate_tcv(&spec, &sb, &graph))?.total;
                    let generic = ok(multivariate_tcv_generic(&spec, &sb, &graph))?.total;
                    let e = rel(closed, want).max(rel(generic, want));
                    ensure!(e <= 1e-10, "G={} J={jn} rep {rep} {spec:?}: rel err {e:e}", rows * cols);
                    worst = worst.max(e);
                    n += 1;
                }
            }
        }
    }
    within(t0, Duration::from_secs(30), "TCV oracle")?;
    Ok(format!(
        "{n} cases, max rel err {worst:.1e}, {:.1}s",
        t0.elapsed().as_secs_f64()
    ))
}

fn test_graphs() -> std::result::Result<Vec<(String, ArealGraph)>, String> {
    Ok(vec![
        ("spain47".into(), ArealGraph::spain47()),
        ("lattice 3x3".into(), ok(ArealGraph::lattice(3, 3))?),
        ("lattice 7x7".into(), ok(ArealGraph::lattice(7, 7))?),
        ("lattice 10x10".into(), ok(ArealGraph::lattice(10, 10))?),
    ])
}

fn separable_specs() -> std::result::Result<Vec<PriorSpec>, String> {
    let mut specs = vec![PriorSpec::Icar];
    for l in [0.0, 0.2, 0.5, 0.8, 1.0] {
        specs.push(ok(PriorSpec::lcar(l))?);
        specs.push(ok(PriorSpec::ljcar(vec![l, l]))?);
    }
    Ok(specs)
}

fn tcv(spec: &PriorSpec, s11: f64, s22: f64, rho: f64, graph: &ArealGraph) -> std::result::Result<f64, String> {
    let sb = ok(SigmaCell {
        sigma11: s11,
        sigma22: s22,
        rho,
    }
    .between_cov())?;
    Ok(ok(multivariate_tcv(spec, &sb, graph))?.total)
}

// Published totals, intrinsic prior
const REF_TCV_RHO0: f64 = 0.3106;
const REF_TCV_RHO07: f64 = 0.1584;
const REF_TCV_S004: f64 = 0.0080;
// Published totals, Leroux prior
const REF_LCAR_RHO0: f64 = 2.0027;
const REF_LCAR_RHO07: f64 = 1.0214;
const REF_LCAR_HI_LAMBDA: f64 = 0.4267;

/// Largest deviation of a ratio of two 4-decimal table entries from its exact value.
fn rounding_bound(num: f64, den: f64) -> f64 {
    (num / den) * (5e-5 / num + 5e-5 / den)
}

fn rho_anchor() -> Check {
    let mut worst: f64 = 0.0;
    for (name, graph) in test_graphs()? {
        for spec in separable_specs()? {
            for &(s11, s22) in &[(0.0025, 0.0025), (0.04, 0.25), (0.25, 0.04), (0.25, 0.25)] {
                let r = tcv(&spec, s11, s22, 0.7, &graph)? / tcv(&spec, s11, s22, 0.0, &graph)?;
                let e = (r - 0.51).abs();
                ensure!(e <= 1e-12, "{name} {spec:?} ({s11},{s22}): ratio {r}");
                worst = worst.max(e);
            }
        }
    }
    let published = REF_TCV_RHO07 / REF_TCV_RHO0;
    let bound = rounding_bound(REF_TCV_RHO07, REF_TCV_RHO0);
    ensure!(
        (published - 0.51).abs() <= bound,
        "reference ratio {published:.5} vs 0.51, rounding bound {bound:.5}"
    );
    Ok(format!(
        "max |ratio-0.51| {worst:.1e}; reference 0.1584/0.3106 = {published:.4}"
    ))
}

fn det_anchor() -> Check {
    let mut worst: f64 = 0.0;
    for (name, graph) in test_graphs()? {
        for spec in separable_specs()? {
            let r = tcv(&spec, 0.04, 0.04, 0.0, &graph)? / tcv(&spec, 0.25, 0.25, 0.0, &graph)?;
            let e = (r - 0.0256).abs();
            ensure!(e <= 1e-12, "{name} {spec:?}: ratio {r}");
            worst = worst.max(e);
        }
    }
    let published = REF_TCV_S004 / REF_TCV_RHO0;
    let bound = rounding_bound(REF_TCV_S004, REF_TCV_RHO0);
    ensure!(
        (published - 0.0256).abs() <= bound,
        "reference ratio {published:.5} vs 0.0256, bound {bound:.5}"
    );
    let lcar = REF_LCAR_RHO07 / REF_LCAR_RHO0;
    let bound = rounding_bound(REF_LCAR_RHO07, REF_LCAR_RHO0);
    ensure!((lcar - 0.51).abs() <= bound, "reference LCAR ratio {lcar:.5} vs 0.51");
    Ok(format!(
        "max |ratio-0.0256| {worst:.1e}; reference 0.0080/0.3106 = {published:.4}, 1.0214/2.0027 = {lcar:.4}"
    ))
}

fn lambda_monotone() -> Check {
    let grid: Vec<f64> = (0..=40).map(|k| k as f64 / 40.0).collect();
    let sigma = DMatrix::from_row_slice(2, 2, &[0.25, 0.07, 0.07, 0.04]);
    for (name, graph) in test_graphs()? {
        let min_deg = *graph.neighbor_counts().iter().min().unwrap();
        ensure!(min_deg >= 1, "{name} has an isolated area");
        let w = graph_adjacency(&graph);
        let mut prev = f64::INFINITY;
        for (k, &l) in grid.iter().enumerate() {
            let t = tcv(&ok(PriorSpec::lcar(l))?, 0.25, 0.04, 0.7, &graph)?;
            ensure!(t < prev, "{name}: TCV({l}) = {t} not below {prev}");
            if k % 10 == 0 {
                let want = dense_tcv(&w, &[l, l], &sigma);
                ensure!(rel(t, want) <= 1e-10, "{name}: dense oracle {want} vs {t}");
            }
            prev = t;
        }
    }
    let published_ok = REF_LCAR_HI_LAMBDA < REF_LCAR_RHO0;
    ensure!(published_ok, "reference LCAR totals not decreasing");
    Ok(format!(
        "{} lambdas strictly decreasing on 4 graphs; reference 2.0027 > 0.4267",
        grid.len()
    ))
}

fn probe_variance_ok(draws: &[DVector<f64>], truth: &DMatrix<f64>, jn: usize) -> std::result::Result<f64, String> {
    let n = draws.len() as f64;
    let d = truth.nrows();
    let unit = |k: usize| DVector::from_fn(d, |r, _| (r == k) as u8 as f64);
    let probes = [
        unit(0),
        unit(d - 1),
        unit(0) + unit(jn),
        DVector::from_element(d, 1.0),
        DVector::from_fn(d, |r, _| if (r / jn).is_multiple_of(2) { 1.0 } else { -1.0 }),
        DVector::from_fn(d, |r, _| if r % jn == 0 { 1.0 } else { -1.0 }),
    ];
    let mut worst: f64 = 0.0;
    for v in &probes {
        let want = (v.transpose() * truth * v)[(0, 0)];
        let got = draws.iter().map(|x| v.dot(x).powi(2)).sum::<f64>() / n;
        let z = (got - want) / (want * (2.0 / n).sqrt());
        ensure!(z.abs() < 3.0, "probe variance {got} vs {want} (z = {z:.2})");
        worst = worst.max(z.abs());
    }
    Ok(worst)
}

fn ljcar_reduction() -> Check {
    let mut worst: f64 = 0.0;
    let mut rng = substream(102, &[]);
    for (name, graph) in test_graphs()? {
        for jn in 1..=3 {
            let sb = ok(BetweenCov::new(random_spd(jn, &mut rng)))?;
            for l in [0.0, 0.3, 0.9, 1.0] {
                let a = ok(multivariate_tcv(&ok(PriorSpec::ljcar(vec![l; jn]))?, &sb, &graph))?.total;
                let b = ok(multivariate_tcv(&ok(PriorSpec::lcar(l))?, &sb, &graph))?.total;
                ensure!(rel(a, b) <= 1e-10, "{name} J={jn} λ={l}: {a} vs {b}");
                worst = worst.max(rel(a, b));
            }
        }
    }
    let graph = ok(ArealGraph::lattice(3, 3))?;
    let sigma = DMatrix::from_row_slice(2, 2, &[0.4, -0.3, -0.3, 0.9]);
    let sb = ok(BetweenCov::new(sigma.clone()))?;
    let lam = 0.7;
    // area-major vec(Θ) covariance of the separable prior: Q⁻¹ ⊗ Σ_b
    let qinv = leroux(&lattice_adjacency(3, 3), lam).try_inverse().unwrap();
    let cov = qinv.kronecker(&sigma);
    let sampler = ok(PriorFieldSampler::new(
        &ok(PriorSpec::ljcar(vec![lam, lam]))?,
        &sb,
        &graph,
    ))?;
    let mut rng = substream(103, &[]);
    let draws: Vec<DVector<f64>> = (0..20_000)
        .map(|_| {
            let t = sampler.sample(&mut rng);
            DVector::from_iterator(t.len(), t.iter().copied())
        })
        .collect();
    let z = probe_variance_ok(&draws, &cov, 2)?;
    Ok(format!(
        "max TCV rel diff {worst:.1e}; draw covariance max |z| {z:.2} < 3"
    ))
}

fn poisson_gamma() -> Check {
    let t0 = Instant::now();
    let mut rng = substream(104, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        let a = [rng.random_range(0.1..5.0), rng.random_range(0.1..5.0)];
        let b = rng.random_range(0.2..5.0);
        let n = rng.random_range(1e3..1e6f64).round();
        let rbar = rng.random_range(1e-4..1e-2);
        let obs = (rng.random_range(0.0..3.0) * rbar * n).round();
        let mut bits = None;
        let mut wbits = None;
        for c in [0.0, 0.5, 1.0, 7.3] {
            let p = ok(PGParams::new(a, c, b))?;
            for j in 0..2 {
                let mu = (a[j] + c) / b;
                let var = (a[j] + c) / (b * b);
                let crude = obs / n;
                let w = rbar * n / (rbar * n + b);
                let form1 = (1.0 - w) * rbar * mu + w * crude - crude;
                let form2 = mu / (rbar * var * n + mu) * (rbar * mu - crude);
                let scale = (rbar * mu).max(crude);
                let lib_rate = ok(posterior_rate(&p, j, obs, n, rbar))?;
                let lib_diff = ok(smoothing_difference(&p, j, obs, n, rbar))?;
                for e in [
                    (form1 - form2).abs(),
                    (lib_rate.mean_rate - crude - form2).abs(),
                    (lib_diff - form1).abs(),
                    (lib_rate.mean_rate - crude - lib_diff).abs(),
                ] {
                    ensure!(e <= 1e-12 * scale, "two-form mismatch {e:e} at scale {scale:e}");
                    worst = worst.max(e / scale);
                }
                let wb = lib_rate.one_minus_w.to_bits();
                ensure!(*bits.get_or_insert(wb) == wb, "shrinkage factor changed with c");
                let rw = ok(posterior_relative_risk(&p, j, obs, rbar * n))?.weight.to_bits();
                ensure!(*wbits.get_or_insert(rw) == rw, "risk weight changed with c");
            }
        }
    }
    let draws = 1_000_000;
    let mut max_z: f64 = 0.0;
    for (a, c, b) in [([1.0, 2.0], 1.5, 2.0), ([0.5, 0.5], 3.0, 1.0), ([4.0, 1.0], 0.2, 0.7)] {
        let p = ok(PGParams::new(a, c, b))?;
        let want = eta_correlation(&p);
        let g1 = ok(Gamma::new(a[0], 1.0 / b))?;
        let g2 = ok(Gamma::new(a[1], 1.0 / b))?;
        let gx = ok(Gamma::new(c, 1.0 / b))?;
        let (mut s1, mut s2, mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..draws {
            let xi = gx.sample(&mut rng);
            let e1 = g1.sample(&mut rng) + xi;
            let e2 = g2.sample(&mut rng) + xi;
            s1 += e1;
            s2 += e2;
            s11 += e1 * e1;
            s22 += e2 * e2;
            s12 += e1 * e2;
        }
        let nf = draws as f64;
        let (m1, m2) = (s1 / nf, s2 / nf);
        let r = (s12 / nf - m1 * m2) / ((s11 / nf - m1 * m1) * (s22 / nf - m2 * m2)).sqrt();
        let se = (1.0 - want * want) / nf.sqrt();
        let z = (r - want) / se;
        ensure!(z.abs() < 3.0, "MC correlation {r} vs {want}, z = {z:.2}");
        max_z = max_z.max(z.abs());
    }
    within(t0, Duration::from_secs(60), "Poisson-Gamma checks")?;
    Ok(format!(
        "two-form rel err {worst:.1e}, weights bitwise c-free, MC corr max |z| {max_z:.2}, {:.1}s",
        t0.elapsed().as_secs_f64()
    ))
}

fn synthetic(graph: &ArealGraph, seed: u64) -> std::result::Result<CountDataset, String> {
    let mut rng = substream(seed, &[]);
    let g = graph.num_areas();
    let pop: Vec<u64> = (0..g).map(|_| rng.random_range(5_000..40_000)).collect();
    let rates = DMatrix::from_fn(2, g, |j, i| {
        0.004 * (1.0 + j as f64) * (1.0 + 0.5 * ((i % 4) as f64 - 1.5) / 1.5)
    });
    ok(sample_counts(&rates, &pop, seed, 0))
}

fn sampler_validity() -> Check {
    let t0 = Instant::now();
    let graph = ok(ArealGraph::lattice(3, 3))?;
    let cfg = GewekeConfig {
        iterations: 1_000_000,
        prior_draws: 200_000,
        ..GewekeConfig::default()
    };
    let report = ok(geweke_joint_check(&ok(PriorSpec::lcar(0.5))?, &graph, 2, &cfg))?;
    if !report.passed() {
        let bad: Vec<String> = report
            .stats
            .iter()
            .filter(|s| !(s.z.abs() <= report.threshold))
            .map(|s| format!("{} z={:.2}", s.name, s.z))
            .collect();
        return Err(format!("Geweke failed: {}", bad.join(", ")));
    }

    let lattice = ok(ArealGraph::lattice(3, 4))?;
    let short = FitConfig {
        iterations: 2000,
        burn_in: 1000,
        thin: 1,
        chains: 2,
        ..FitConfig::default()
    };
    let data = synthetic(&lattice, 31)?;
    let tiny = FitMode::Fixed(ok(BetweenCov::diagonal(&[1e-6, 1e-6]))?);
    let s = ok(fit(&data, &lattice, &ok(PriorSpec::lcar(0.5))?, &tiny, &short))?;
    let mut global_dev: f64 = 0.0;
    for j in 0..2 {
        let total: u64 = data.counts().row(j).iter().sum();
        let rbar = total as f64 / data.population().iter().sum::<u64>() as f64;
        for i in 0..lattice.num_areas() {
            global_dev = global_dev.max((s.mean_rates[(j, i)] / rbar - 1.0).abs());
        }
    }
    ensure!(
        global_dev < 0.02,
        "tiny Σ_b: max deviation from global rate {global_dev:.4}"
    );

    let data = synthetic(&lattice, 32)?;
    let large = FitMode::Fixed(ok(BetweenCov::diagonal(&[100.0, 100.0]))?);
    let s = ok(fit(&data, &lattice, &ok(PriorSpec::lcar(0.0))?, &large, &short))?;
    let mut mle_dev: f64 = 0.0;
    let mut high = 0;
    for j in 0..2 {
        for i in 0..lattice.num_areas() {
            let o = data.count(j, i);
            if o >= 50 {
                high += 1;
                let crude = o as f64 / data.population()[i] as f64;
                mle_dev = mle_dev.max((s.mean_rates[(j, i)] / crude - 1.0).abs());
            }
        }
    }
    ensure!(high > 0, "no high-count areas in the oracle dataset");
    ensure!(mle_dev < 0.05, "large Σ_b: max deviation from MLE {mle_dev:.4}");
    within(t0, Duration::from_secs(15 * 60), "sampler validity")?;
    Ok(format!(
        "Geweke {} stats max |z| {:.2} <= 4; global-rate dev {global_dev:.4}; MLE dev {mle_dev:.4} ({high} areas); {:.0}s",
        report.stats.len(),
        report.max_abs_z(),
        t0.elapsed().as_secs_f64()
    ))
}

fn study(json: &str, command: &str, dir: &Path) -> std::result::Result<(StudyConfig, RunContext), String> {
    let cfg = ok(StudyConfig::from_json(json, Path::new(".")))?;
    ok(cfg.validate())?;
    let ctx = RunContext::new(&cfg, command, dir, OutputPolicy::Force);
    Ok((cfg, ctx))
}

const SHORT_FIT: &str = r#""fit":{"iterations":3000,"burn_in":1000,"thin":2,"chains":2}"#;

fn within_direction() -> Check {
    let dir = ok(tempfile::tempdir())?;
    let json = format!(
        r#"{{"scenarios":[1],"priors":["icar"],"replicates":10,{SHORT_FIT},
        "cells":[{{"sigma11":0.0025,"sigma22":0.0025,"rho":0.0}},
                 {{"sigma11":0.04,"sigma22":0.04,"rho":0.0}},
                 {{"sigma11":0.25,"sigma22":0.25,"rho":0.0}}]}}"#
    );
    let (cfg, ctx) = study(&json, "within-study", dir.path())?;
    let mut cells: Vec<CellSummary> = ok(run_within_study(&cfg, &ctx))?;
    ensure!(cells.len() == 3, "expected 3 cells, got {}", cells.len());
    cells.sort_by(|a, b| a.cell.unwrap().sigma11.total_cmp(&b.cell.unwrap().sigma11));
    let r: Vec<_> = cells.iter().map(|c| &c.report).collect();
    for k in 0..2 {
        ensure!(r[k].rmss_total > r[k + 1].rmss_total, "RMSS not strictly decreasing");
        ensure!(r[k].sp > r[k + 1].sp, "SP not strictly decreasing");
        for j in 0..2 {
            ensure!(
                r[k].diseases[j].rsp > r[k + 1].diseases[j].rsp,
                "RSP_{} not strictly decreasing",
                j + 1
            );
        }
    }
    for rep in &r {
        for d in &rep.diseases {
            ensure!(d.rsp > 0.0 && d.rsp < 1.7, "RSP {} outside (0, 1.7)", d.rsp);
        }
    }
    let fmt = |f: &dyn Fn(&mvsmooth::metrics::SmoothingReport) -> f64| {
        r.iter().map(|x| format!("{:.3}", f(x))).collect::<Vec<_>>().join(" > ")
    };
    Ok(format!(
        "RMSS {}; SP {}; RSP1 {}; RSP2 {}",
        fmt(&|x| x.rmss_total),
        fmt(&|x| x.sp),
        fmt(&|x| x.diseases[0].rsp),
        fmt(&|x| x.diseases[1].rsp)
    ))
}

fn across_ordering() -> Check {
    let t0 = Instant::now();
    let dir = ok(tempfile::tempdir())?;
    let json = format!(r#"{{"replicates":10,{SHORT_FIT}}}"#);
    let (cfg, ctx) = study(&json, "across-study", dir.path())?;
    let cells = ok(run_across_study(&cfg, &ctx))?;
    let get = |p: PriorKind, s: u8| {
        cells
            .iter()
            .find(|c| c.prior == p && c.scenario == s)
            .map(|c| &c.report)
    };
    let mut passed = 0;
    let mut total = 0;
    for s in 1..=4u8 {
        let (Some(i), Some(l), Some(lj)) = (
            get(PriorKind::Icar, s),
            get(PriorKind::Lcar, s),
            get(PriorKind::Ljcar, s),
        ) else {
            return Err(format!("scenario {s} missing a prior"));
        };
        let rows: Vec<(f64, f64, f64)> = (0..2)
            .map(|j| (i.diseases[j].rmss, l.diseases[j].rmss, lj.diseases[j].rmss))
            .chain(std::iter::once((i.rmss_total, l.rmss_total, lj.rmss_total)))
            .collect();
        for (a, b, c) in rows {
            total += 1;
            passed += (a >= b && a >= c) as usize;
        }
    }
    ensure!(total == 12, "expected 12 cells, got {total}");
    ensure!(passed >= 10, "iCAR RMSS largest in only {passed}/12 cells");
    let mut rarity = Vec::new();
    for p in [PriorKind::Icar, PriorKind::Lcar, PriorKind::Ljcar] {
        let s1 = get(p, 1).unwrap().diseases[1].rsp;
        let s2 = get(p, 2).unwrap().diseases[1].rsp;
        ensure!(s2 > s1, "{p:?}: scenario 2 RSP2 {s2} not above scenario 1 {s1}");
        rarity.push(format!("{s2:.3}>{s1:.3}"));
    }
    within(t0, Duration::from_secs(2 * 3600), "across-study")?;
    Ok(format!(
        "iCAR RMSS largest in {passed}/12 cells; S2 vs S1 RSP2 {}; {:.0}s",
        rarity.join(" "),
        t0.elapsed().as_secs_f64()
    ))
}

fn metric_anchors() -> Check {
    let graph = ok(ArealGraph::lattice(4, 5))?;
    let mut rng = substream(105, &[]);
    let g = graph.num_areas();
    let pop: Vec<u64> = (0..g).map(|_| rng.random_range(1_000..50_000)).collect();
    let rates = DMatrix::from_fn(3, g, |_, _| rng.random_range(1e-4..5e-3));
    let data = ok(sample_counts(&rates, &pop, 105, 0))?;
    let opts = MetricsOptions {
        rate_scale: 1e5,
        average: RateAverage::Weighted,
    };
    let crude = DMatrix::from_fn(3, g, |j, i| data.count(j, i) as f64 / pop[i] as f64);
    let perfect = ok(smoothing_report(&crude, &data, &opts))?;
    ensure!(
        perfect.rmss_total == 0.0 && perfect.sp == 0.0 && perfect.rsp_sum == 0.0,
        "perfect fit not zero"
    );
    for d in &perfect.diseases {
        ensure!(
            d.rmss == 0.0 && d.max_rmss == 0.0 && d.rsp == 0.0,
            "perfect fit disease metric not zero"
        );
    }
    let mut rbar = Vec::new();
    for j in 0..3 {
        let total: u64 = data.counts().row(j).iter().sum();
        let want = total as f64 / pop.iter().sum::<u64>() as f64;
        let got = ok(average_rate(&data, j, RateAverage::Weighted))?;
        ensure!(rel(got, want) < 1e-14, "r̄ mismatch");
        rbar.push(want);
    }
    let flat = DMatrix::from_fn(3, g, |j, _| rbar[j]);
    let rep = ok(smoothing_report(&flat, &data, &opts))?;
    for d in &rep.diseases {
        ensure!((d.rsp - 1.0).abs() < 1e-12, "RSP {} at constant r̄", d.rsp);
    }
    ensure!((rep.sp - 1.0).abs() < 1e-12, "SP {} at constant r̄", rep.sp);
    let noisy = DMatrix::from_fn(3, g, |j, i| {
        crude[(j, i)] * 0.5 + rbar[j] * 0.5 + rng.random_range(0.0..1e-5)
    });
    for r in [&rep, &ok(smoothing_report(&noisy, &data, &opts))?] {
        let sum: f64 = r.diseases.iter().map(|d| d.rmss).sum();
        ensure!(r.rmss_total == sum, "rmss_total {} != {}", r.rmss_total, sum);
    }
    Ok("perfect fit all 0; constant r̄ gives RSP = SP = 1; rmss_total = Σ rmss_j exactly".into())
}

fn cli(args: &[&str], cwd: &Path) -> std::result::Result<(), String> {
    let out = ok(Command::new(env!("CARGO_BIN_EXE_mvsmooth"))
        .args(args)
        .current_dir(cwd)
        .output())?;
    ensure!(
        out.status.success(),
        "{:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn csv_files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Check {
    let dir = ok(tempfile::tempdir())?;
    let root = dir.path();
    let json = r#"{"graph":{"lattice":{"rows":4,"cols":4}},"scenarios":[1,2],"priors":["icar","ljcar"],
        "sigma11":[0.04],"sigma22":[0.04,0.25],"rho":[0.7],"lambda":[0.5],"replicates":2,
        "fit":{"iterations":300,"burn_in":100,"chains":2}}"#;
    ok(std::fs::write(root.join("cfg.json"), json))?;
    let mut compared = 0;
    for cmd in ["tcv", "simulate", "within-study", "across-study"] {
        cli(&[cmd, "--config", "cfg.json", "--out", &format!("{cmd}_a")], root)?;
        cli(
            &[
                cmd,
                "--config",
                "cfg.json",
                "--out",
                &format!("{cmd}_b"),
                "--workers",
                "1",
            ],
            root,
        )?;
        let a = root.join(format!("{cmd}_a"));
        let b = root.join(format!("{cmd}_b"));
        let files = csv_files(&a);
        ensure!(!files.is_empty(), "{cmd} wrote no CSV");
        ensure!(files == csv_files(&b), "{cmd}: file sets differ");
        for f in files {
            ensure!(
                ok(std::fs::read(a.join(&f)))? == ok(std::fs::read(b.join(&f)))?,
                "{cmd}: {} differs",
                f.display()
            );
            compared += 1;
        }
    }
    Ok(format!("{compared} CSV files byte-identical across reruns"))
}

fn main() {
    let checks: [(&str, fn() -> Check); 11] = [
        ("tcv closed form vs dense oracle", tcv_vs_dense),
        ("rho scaling anchor", rho_anchor),
        ("|Sigma_b| scaling anchor", det_anchor),
        ("LCAR lambda monotonicity", lambda_monotone),
        ("LjCAR reduction", ljcar_reduction),
        ("Poisson-Gamma exactness", poisson_gamma),
        ("sampler validity", sampler_validity),
        ("within-study direction", within_direction),
        ("across-study ordering", across_ordering),
        ("metrics unit anchors", metric_anchors),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
