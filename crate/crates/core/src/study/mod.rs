//! Study orchestration: TCV tables, scenario simulation, fitting and the
//! within-prior, across-prior and real-data protocols.
//!
//! Each replicate fit is a job whose result is written to its own JSON file
//! under `jobs/`. Merged CSVs are always built from those files in job order,
//! so fresh, parallel and resumed runs produce identical bytes.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use config::{DataPaths, GraphSource, PgCell, PgConfig, StudyConfig};

use crate::data::CountDataset;
use crate::error::{Error, Result};
use crate::graph::ArealGraph;
use crate::io::{self, OutputPolicy, Provenance};
use crate::mcmc::{fit, FitConfig, FitMode, ParamSummary, PosteriorSummary};
use crate::metrics::{expected_over_replicates, smoothing_report, DiseaseMetrics, MetricsOptions, SmoothingReport};
use crate::poisson_gamma::{posterior_rate, posterior_relative_risk, PGParams};
use crate::prior::{PriorKind, PriorSpec};
use crate::rng::{substream, tag};
use crate::scenario::{generate_population, sample_counts, simulate_gp_fields, Grid};
use crate::tcv::{expand_family, multivariate_tcv, tcv_csv_line, tcv_grid, SigmaCell, TCV_CSV_HEADER};

pub const REPORT_COLUMNS: &str =
    "prior,scenario,lambda1,lambda2,sigma11,sigma22,rho,replicate,disease,rmss,max_rmss,rsp,sp,rbar,multitcv";
pub const SUMMARY_COLUMNS: &str =
    "prior,scenario,lambda1,lambda2,sigma11,sigma22,rho,replicates,disease,rmss,max_rmss,rsp,sp,rbar,multitcv";

/// Shared run settings from the command line.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub out: PathBuf,
    pub policy: OutputPolicy,
    pub provenance: Provenance,
}

impl RunContext {
    pub fn new(cfg: &StudyConfig, command: &str, out: &Path, policy: OutputPolicy) -> Self {
        Self {
            out: out.to_path_buf(),
            policy,
            provenance: Provenance::new(&format!("{command}:{}", cfg.canonical()), cfg.seed),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        io::write_atomic(&self.path(name), contents)
    }
}

/// A smoothing report in a serializable shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub diseases: Vec<DiseaseMetrics>,
    pub rmss_total: f64,
    #[serde(with = "crate::io::nonfinite")]
    pub rsp_sum: f64,
    #[serde(with = "crate::io::nonfinite")]
    pub sp: f64,
    /// Row-major J×G components.
    pub per_area: Vec<Vec<f64>>,
    pub replicate_id: Option<u64>,
    pub multitcv: Option<f64>,
}

impl From<&SmoothingReport> for ReportRecord {
    fn from(r: &SmoothingReport) -> Self {
        Self {
            diseases: r.diseases.clone(),
            rmss_total: r.rmss_total,
            rsp_sum: r.rsp_sum,
            sp: r.sp,
            per_area: r.per_area.row_iter().map(|row| row.iter().copied().collect()).collect(),
            replicate_id: r.replicate_id,
            multitcv: r.multitcv,
        }
    }
}

impl ReportRecord {
    pub fn to_report(&self) -> SmoothingReport {
        let jn = self.per_area.len();
        let g = self.per_area.first().map_or(0, Vec::len);
        SmoothingReport {
            diseases: self.diseases.clone(),
            rmss_total: self.rmss_total,
            rsp_sum: self.rsp_sum,
            sp: self.sp,
            per_area: DMatrix::from_fn(jn, g, |j, i| self.per_area[j][i]),
            replicate_id: self.replicate_id,
            multitcv: self.multitcv,
        }
    }
}

/// Outcome of one replicate fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub report: ReportRecord,
    pub hyper: Vec<ParamSummary>,
    pub acceptance: Vec<(String, f64)>,
    pub warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct JobFile<T> {
    config: String,
    seed: u64,
    key: String,
    result: T,
}

/// Runs keyed jobs in parallel, persisting each result and reusing valid
/// files when resuming. Results come back in job order.
fn run_jobs<T, F>(ctx: &RunContext, keys: &[String], work: F) -> Result<Vec<T>>
where
    T: Serialize + DeserializeOwned + Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let dir = ctx.path("jobs");
    fs::create_dir_all(&dir)?;
    let prov = &ctx.provenance;
    let computed = keys
        .par_iter()
        .enumerate()
        .map(|(k, key)| -> Result<()> {
            let path = dir.join(format!("{key}.json"));
            if ctx.policy == OutputPolicy::Resume {
                if let Some(f) = read_job::<T>(&path) {
                    if f.config != prov.config_hash || f.seed != prov.seed {
                        return Err(Error::OutputConflict(format!(
                            "{} was written by a different configuration or seed",
                            path.display()
                        )));
                    }
                    if f.key == *key {
                        return Ok(());
                    }
                }
            }
            let result = work(k)?;
            let file = JobFile {
                config: prov.config_hash.clone(),
                seed: prov.seed,
                key: key.clone(),
                result,
            };
            io::write_atomic(&path, &serde_json::to_string(&file)?)
        })
        .collect::<Vec<_>>();
    if let Some(e) = computed.into_iter().find_map(|r| r.err()) {
        return Err(e);
    }
    keys.iter()
        .map(|key| {
            let path = dir.join(format!("{key}.json"));
            load_job(&path, prov, key).ok_or_else(|| Error::Numerical(format!("job {key} produced no result")))
        })
        .collect()
}

fn read_job<T: DeserializeOwned>(path: &Path) -> Option<JobFile<T>> {
    serde_json::from_str(&fs::read_to_string(path).ok()?).ok()
}

fn load_job<T: DeserializeOwned>(path: &Path, prov: &Provenance, key: &str) -> Option<T> {
    let f = read_job::<T>(path)?;
    (f.config == prov.config_hash && f.seed == prov.seed && f.key == key).then_some(f.result)
}

/// True rates, populations and the replicate count generator of one scenario.
pub struct ScenarioData {
    pub scenario_id: u8,
    pub rates: DMatrix<f64>,
    pub population: Vec<u64>,
    seed: u64,
}

impl ScenarioData {
    pub fn replicate(&self, b: u64) -> Result<CountDataset> {
        sample_counts(&self.rates, &self.population, self.seed, b)
    }
}

/// Builds every configured scenario on one shared set of GP surfaces.
pub fn build_scenarios(cfg: &StudyConfig, graph: &ArealGraph) -> Result<Vec<ScenarioData>> {
    let grid: Grid = cfg.load_grid(graph)?;
    let omega = simulate_gp_fields(&grid, &cfg.scenario.gp, cfg.seed)?;
    let population = generate_population(graph.num_areas(), &cfg.scenario.population, cfg.seed);
    cfg.scenarios
        .iter()
        .map(|&s| {
            let sc = cfg.scenario.for_scenario(s)?;
            Ok(ScenarioData {
                scenario_id: s,
                rates: sc.areal_rates(&omega, &grid)?,
                population: population.clone(),
                seed: cfg.seed,
            })
        })
        .collect()
}

fn job_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut path = vec![tag::FIT];
    path.extend_from_slice(parts);
    substream(seed, &path).random()
}

fn fit_record(
    data: &CountDataset,
    graph: &ArealGraph,
    spec: &PriorSpec,
    mode: &FitMode,
    fit_cfg: &FitConfig,
    metrics: &MetricsOptions,
    multitcv: Option<f64>,
) -> Result<(FitRecord, PosteriorSummary)> {
    let post = fit(data, graph, spec, mode, fit_cfg)?;
    let mut report = smoothing_report(&post.mean_rates, data, metrics)?;
    report.multitcv = multitcv;
    Ok((
        FitRecord {
            report: ReportRecord::from(&report),
            hyper: post.hyper.clone(),
            acceptance: post.acceptance.clone(),
            warnings: post.warnings.clone(),
        },
        post,
    ))
}

/// Placeholder λ values for full mode, where λ is sampled.
fn full_mode_spec(kind: PriorKind, jn: usize) -> PriorSpec {
    match kind {
        PriorKind::Icar => PriorSpec::Icar,
        PriorKind::Lcar => PriorSpec::Lcar { lambda: 0.5 },
        PriorKind::Ljcar => PriorSpec::Ljcar { lambdas: vec![0.5; jn] },
    }
}

fn lambda_columns(spec: Option<&PriorSpec>) -> (String, String) {
    match spec {
        Some(PriorSpec::Lcar { lambda }) => (lambda.to_string(), String::new()),
        Some(PriorSpec::Ljcar { lambdas }) => (
            lambdas[0].to_string(),
            lambdas.get(1).map(|l| l.to_string()).unwrap_or_default(),
        ),
        _ => (String::new(), String::new()),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Identifies a report row set: prior, scenario and optional fixed cell.
struct RowLabel<'a> {
    prior: Option<PriorKind>,
    scenario: String,
    spec: Option<&'a PriorSpec>,
    cell: Option<SigmaCell>,
}

impl RowLabel<'_> {
    fn prefix(&self) -> String {
        let (l1, l2) = lambda_columns(self.spec);
        let (s11, s22, rho) = match self.cell {
            Some(c) => (c.sigma11.to_string(), c.sigma22.to_string(), c.rho.to_string()),
            None => Default::default(),
        };
        let prior = self.prior.map(PriorKind::name).unwrap_or_default();
        format!("{prior},{},{l1},{l2},{s11},{s22},{rho}", self.scenario)
    }
}

/// Per-disease rows plus a TOTAL row. `count` fills the replicate column.
fn report_rows(label: &RowLabel<'_>, count: &str, r: &SmoothingReport) -> String {
    let p = label.prefix();
    let mut s = String::new();
    for (j, d) in r.diseases.iter().enumerate() {
        s += &format!(
            "{p},{count},{},{},{},{},,{},\n",
            j + 1,
            d.rmss,
            d.max_rmss,
            d.rsp,
            d.rbar
        );
    }
    s += &format!(
        "{p},{count},TOTAL,{},,{},{},,{}\n",
        r.rmss_total,
        r.rsp_sum,
        r.sp,
        fmt_opt(r.multitcv)
    );
    s
}

pub fn run_tcv(cfg: &StudyConfig, ctx: &RunContext) -> Result<()> {
    let graph = cfg.load_graph()?;
    let cells = cfg.sigma_cells();
    let mut s = ctx.provenance.csv(TCV_CSV_HEADER);
    for &kind in &cfg.priors {
        for row in tcv_grid(kind, &cells, &cfg.lambda, &graph)? {
            s += &tcv_csv_line(&row);
            s.push('\n');
        }
    }
    ctx.write("tcv.csv", &s)
}

pub fn run_simulate(cfg: &StudyConfig, ctx: &RunContext) -> Result<()> {
    let graph = cfg.load_graph()?;
    for sc in build_scenarios(cfg, &graph)? {
        let mut s = ctx.provenance.csv(io::DATASET_COLUMNS);
        for b in 0..cfg.replicates as u64 {
            s += &io::dataset_rows(&sc.replicate(b)?);
        }
        ctx.write(&format!("dataset_s{}.csv", sc.scenario_id), &s)?;
    }
    Ok(())
}

/// Observed data from the config, or replicate 0 of the first scenario.
fn load_or_simulate(cfg: &StudyConfig, graph: &ArealGraph) -> Result<(CountDataset, Vec<String>)> {
    match &cfg.data {
        Some(d) => io::read_dataset(&cfg.resolve(&d.counts), &cfg.resolve(&d.population), graph),
        None => {
            let first = StudyConfig {
                scenarios: vec![cfg.scenarios[0]],
                ..cfg.clone()
            };
            let data = build_scenarios(&first, graph)?[0].replicate(0)?;
            let ids = (1..=data.num_diseases()).map(|j| j.to_string()).collect();
            Ok((data, ids))
        }
    }
}

/// Spec and mode for a fit outside the grid studies.
fn single_fit_setup(cfg: &StudyConfig, kind: PriorKind, jn: usize, full: bool) -> Result<(PriorSpec, FitMode)> {
    if full {
        return Ok((full_mode_spec(kind, jn), FitMode::Full));
    }
    if jn != 2 {
        return Err(Error::Parameter(format!(
            "fixed mode takes a bivariate covariance cell, but the data have {jn} diseases"
        )));
    }
    let sigma = cfg.fixed_cell()?.between_cov()?;
    let l = cfg.lambda[0];
    let spec = match kind {
        PriorKind::Icar => PriorSpec::Icar,
        PriorKind::Lcar => PriorSpec::lcar(l)?,
        PriorKind::Ljcar => PriorSpec::ljcar(vec![l; jn])?,
    };
    Ok((spec, FitMode::Fixed(sigma)))
}

pub fn run_fit(cfg: &StudyConfig, ctx: &RunContext, full: bool) -> Result<()> {
    let graph = cfg.load_graph()?;
    let (data, _) = load_or_simulate(cfg, &graph)?;
    for &kind in &cfg.priors {
        let (spec, mode) = single_fit_setup(cfg, kind, data.num_diseases(), full)?;
        let fit_cfg = FitConfig {
            seed: job_seed(cfg.seed, &[0, kind as u64]),
            ..cfg.fit.clone()
        };
        let post = fit(&data, &graph, &spec, &mode, &fit_cfg)?;
        for w in &post.warnings {
            eprintln!("warning: {kind}: {w}");
        }
        ctx.write(
            &format!("posterior_{kind}.csv"),
            &io::posterior_csv(&post, &ctx.provenance),
        )?;
        ctx.write(
            &format!("hyper_{kind}.csv"),
            &io::hyper_csv(&post.hyper, &ctx.provenance),
        )?;
    }
    Ok(())
}

pub fn run_metrics(cfg: &StudyConfig, ctx: &RunContext, posterior: &Path) -> Result<()> {
    let graph = cfg.load_graph()?;
    let (data, _) = load_or_simulate(cfg, &graph)?;
    let post = io::read_posterior_rates(posterior, data.num_diseases(), data.num_areas())?;
    let report = smoothing_report(&post, &data, &cfg.metrics)?;
    let label = RowLabel {
        prior: None,
        scenario: String::new(),
        spec: None,
        cell: None,
    };
    let rows = report_rows(&label, "", &report);
    ctx.write("metrics.csv", &(ctx.provenance.csv(REPORT_COLUMNS) + &rows))?;
    ctx.write("components.csv", &io::components_csv(&report, &ctx.provenance))
}

/// Poisson–Gamma table as CSV text.
pub fn run_pg(cfg: &StudyConfig, prov: &Provenance) -> Result<String> {
    let pg = cfg
        .pg
        .as_ref()
        .ok_or_else(|| Error::Parameter("config has no `pg` section".into()))?;
    let params = PGParams::new(pg.a, pg.c, pg.b)?;
    let mut s = prov.csv("disease,observed,expected,population,post_mean,w");
    for cell in &pg.cells {
        if !(1..=2).contains(&cell.disease) {
            return Err(Error::Parameter(format!("disease {} must be 1 or 2", cell.disease)));
        }
        let j = cell.disease - 1;
        match (cell.expected, cell.population) {
            (Some(e), None) => {
                let r = posterior_relative_risk(&params, j, cell.observed, e)?;
                s += &format!("{},{},{e},,{},{}\n", cell.disease, cell.observed, r.mean, r.weight);
            }
            (None, Some(n)) => {
                let rbar = pg
                    .rbar
                    .ok_or_else(|| Error::Parameter("population cells need `rbar`".into()))?[j];
                let r = posterior_rate(&params, j, cell.observed, n, rbar)?;
                s += &format!(
                    "{},{},,{n},{},{}\n",
                    cell.disease,
                    cell.observed,
                    r.mean_rate,
                    1.0 - r.one_minus_w
                );
            }
            _ => {
                return Err(Error::Parameter(
                    "each pg cell needs exactly one of `expected` or `population`".into(),
                ))
            }
        }
    }
    Ok(s)
}

fn cell_key(c: &SigmaCell) -> String {
    format!("s{}-{}-r{}", c.sigma11, c.sigma22, c.rho)
}

fn spec_key(spec: &PriorSpec) -> String {
    match spec {
        PriorSpec::Icar => "icar".into(),
        PriorSpec::Lcar { lambda } => format!("lcar{lambda}"),
        PriorSpec::Ljcar { lambdas } => {
            format!(
                "ljcar{}",
                lambdas.iter().map(f64::to_string).collect::<Vec<_>>().join("-")
            )
        }
    }
}

/// One averaged cell of a study.
#[derive(Debug, Clone)]
pub struct CellSummary {
    pub prior: PriorKind,
    pub scenario: u8,
    pub spec: Option<PriorSpec>,
    pub cell: Option<SigmaCell>,
    pub report: SmoothingReport,
    pub replicates: usize,
}

/// Fixed-hyperparameter study over the prior × λ × Σ grid. Returns the
/// replicate-averaged report of every cell in output order.
pub fn run_within_study(cfg: &StudyConfig, ctx: &RunContext) -> Result<Vec<CellSummary>> {
    let graph = cfg.load_graph()?;
    let scenarios = build_scenarios(cfg, &graph)?;
    let cells = cfg.sigma_cells();
    let b_count = cfg.replicates;

    struct Cell {
        scen: usize,
        prior: PriorKind,
        spec: PriorSpec,
        sigma: SigmaCell,
        tcv: f64,
    }
    let mut grid = Vec::new();
    for (si, _) in scenarios.iter().enumerate() {
        for &kind in &cfg.priors {
            for spec in expand_family(kind, &cfg.lambda)? {
                for &sigma in &cells {
                    let tcv = multivariate_tcv(&spec, &sigma.between_cov()?, &graph)?.total;
                    grid.push(Cell {
                        scen: si,
                        prior: kind,
                        spec: spec.clone(),
                        sigma,
                        tcv,
                    });
                }
            }
        }
    }
    let key = |c: &Cell| {
        format!(
            "s{}_{}_{}",
            scenarios[c.scen].scenario_id,
            spec_key(&c.spec),
            cell_key(&c.sigma)
        )
    };
    let mut keys = Vec::new();
    for c in &grid {
        for b in 0..b_count {
            keys.push(format!("within_{}_b{b}", key(c)));
        }
    }
    let records: Vec<FitRecord> = run_jobs(ctx, &keys, |k| {
        let (ci, b) = (k / b_count, (k % b_count) as u64);
        let c = &grid[ci];
        let data = scenarios[c.scen].replicate(b)?;
        let fit_cfg = FitConfig {
            seed: job_seed(cfg.seed, &[1, c.scen as u64, ci as u64, b]),
            ..cfg.fit.clone()
        };
        let mode = FitMode::Fixed(c.sigma.between_cov()?);
        Ok(fit_record(&data, &graph, &c.spec, &mode, &fit_cfg, &cfg.metrics, Some(c.tcv))?.0)
    })?;

    let mut reports = ctx.provenance.csv(REPORT_COLUMNS);
    let mut summary = ctx.provenance.csv(SUMMARY_COLUMNS);
    let mut out = Vec::new();
    for (ci, c) in grid.iter().enumerate() {
        let label = RowLabel {
            prior: Some(c.prior),
            scenario: scenarios[c.scen].scenario_id.to_string(),
            spec: Some(&c.spec),
            cell: Some(c.sigma),
        };
        let reps: Vec<SmoothingReport> = records[ci * b_count..(ci + 1) * b_count]
            .iter()
            .map(|r| r.report.to_report())
            .collect();
        for (b, r) in reps.iter().enumerate() {
            reports += &report_rows(&label, &b.to_string(), r);
        }
        let avg = expected_over_replicates(&reps)?;
        summary += &report_rows(&label, &b_count.to_string(), &avg);
        ctx.write(
            &format!("components/{}.csv", key(c)),
            &io::components_csv(&avg, &ctx.provenance),
        )?;
        out.push(CellSummary {
            prior: c.prior,
            scenario: scenarios[c.scen].scenario_id,
            spec: Some(c.spec.clone()),
            cell: Some(c.sigma),
            report: avg,
            replicates: b_count,
        });
    }
    ctx.write("reports.csv", &reports)?;
    ctx.write("summary.csv", &summary)?;
    Ok(out)
}

fn hyper_rows(prefix: &str, params: &[ParamSummary]) -> String {
    params
        .iter()
        .map(|p| format!("{prefix},{}\n", io::hyper_line(p)))
        .collect()
}

/// Mean over replicates of each hyperparameter summary, matched by name.
fn average_hyper(sets: &[&[ParamSummary]]) -> Vec<ParamSummary> {
    let Some(first) = sets.first() else {
        return Vec::new();
    };
    let n = sets.len() as f64;
    first
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let avg = |f: fn(&ParamSummary) -> f64| sets.iter().map(|s| f(&s[k])).sum::<f64>() / n;
            ParamSummary {
                name: p.name.clone(),
                mean: avg(|q| q.mean),
                lo95: avg(|q| q.lo95),
                hi95: avg(|q| q.hi95),
                ess: avg(|q| q.ess),
                psrf: avg(|q| q.psrf),
            }
        })
        .collect()
}

/// Full-Bayes study over scenarios × priors.
pub fn run_across_study(cfg: &StudyConfig, ctx: &RunContext) -> Result<Vec<CellSummary>> {
    let graph = cfg.load_graph()?;
    let scenarios = build_scenarios(cfg, &graph)?;
    let b_count = cfg.replicates;
    let mut grid = Vec::new();
    for (si, _) in scenarios.iter().enumerate() {
        for &kind in &cfg.priors {
            grid.push((si, kind));
        }
    }
    let key = |&(si, kind): &(usize, PriorKind)| format!("s{}_{kind}", scenarios[si].scenario_id);
    let keys: Vec<String> = grid
        .iter()
        .flat_map(|c| (0..b_count).map(move |b| (c, b)))
        .map(|(c, b)| format!("across_{}_b{b}", key(c)))
        .collect();
    let records: Vec<FitRecord> = run_jobs(ctx, &keys, |k| {
        let (ci, b) = (k / b_count, (k % b_count) as u64);
        let (si, kind) = grid[ci];
        let data = scenarios[si].replicate(b)?;
        let spec = full_mode_spec(kind, data.num_diseases());
        let fit_cfg = FitConfig {
            seed: job_seed(cfg.seed, &[2, si as u64, kind as u64, b]),
            ..cfg.fit.clone()
        };
        Ok(fit_record(&data, &graph, &spec, &FitMode::Full, &fit_cfg, &cfg.metrics, None)?.0)
    })?;

    let mut reports = ctx.provenance.csv(REPORT_COLUMNS);
    let mut summary = ctx.provenance.csv(SUMMARY_COLUMNS);
    let mut hyper = ctx
        .provenance
        .csv(&format!("prior,scenario,replicate,{}", io::HYPER_COLUMNS));
    let mut hyper_summary = ctx
        .provenance
        .csv(&format!("prior,scenario,replicates,{}", io::HYPER_COLUMNS));
    let mut out = Vec::new();
    for (ci, c) in grid.iter().enumerate() {
        let (si, kind) = *c;
        let sid = scenarios[si].scenario_id;
        let label = RowLabel {
            prior: Some(kind),
            scenario: sid.to_string(),
            spec: None,
            cell: None,
        };
        let recs = &records[ci * b_count..(ci + 1) * b_count];
        let reps: Vec<SmoothingReport> = recs.iter().map(|r| r.report.to_report()).collect();
        for (b, (r, rec)) in reps.iter().zip(recs).enumerate() {
            reports += &report_rows(&label, &b.to_string(), r);
            hyper += &hyper_rows(&format!("{kind},{sid},{b}"), &rec.hyper);
        }
        let sets: Vec<&[ParamSummary]> = recs.iter().map(|r| r.hyper.as_slice()).collect();
        hyper_summary += &hyper_rows(&format!("{kind},{sid},{b_count}"), &average_hyper(&sets));
        let avg = expected_over_replicates(&reps)?;
        summary += &report_rows(&label, &b_count.to_string(), &avg);
        ctx.write(
            &format!("components/{}.csv", key(c)),
            &io::components_csv(&avg, &ctx.provenance),
        )?;
        out.push(CellSummary {
            prior: kind,
            scenario: sid,
            spec: None,
            cell: None,
            report: avg,
            replicates: b_count,
        });
    }
    ctx.write("reports.csv", &reports)?;
    ctx.write("summary.csv", &summary)?;
    ctx.write("hyper.csv", &hyper)?;
    ctx.write("hyper_summary.csv", &hyper_summary)?;
    Ok(out)
}

/// Report of one real-data fit.
#[derive(Debug, Clone)]
pub struct RealDataResult {
    pub prior: PriorKind,
    /// Disease identifiers in the subset.
    pub subset: Vec<String>,
    pub report: SmoothingReport,
}

/// Fits observed data jointly, or every disease pair when `pairwise`.
pub fn run_real_data(cfg: &StudyConfig, ctx: &RunContext, full: bool, pairwise: bool) -> Result<Vec<RealDataResult>> {
    let paths = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Parameter("real-data needs a `data` section".into()))?;
    let graph = cfg.load_graph()?;
    let (data, ids) = io::read_dataset(&cfg.resolve(&paths.counts), &cfg.resolve(&paths.population), &graph)?;
    let geo = paths
        .geojson
        .as_ref()
        .map(|p| io::read_geojson(&cfg.resolve(p), graph.num_areas()))
        .transpose()?;
    let jn = data.num_diseases();
    let subsets: Vec<Vec<usize>> = if pairwise {
        if jn < 2 {
            return Err(Error::Parameter("pairwise mode needs at least two diseases".into()));
        }
        (0..jn).flat_map(|a| (a + 1..jn).map(move |b| vec![a, b])).collect()
    } else {
        vec![(0..jn).collect()]
    };
    let mut grid = Vec::new();
    for sub in &subsets {
        for &kind in &cfg.priors {
            grid.push((sub.clone(), kind));
        }
    }
    let name = |sub: &[usize]| sub.iter().map(|&j| ids[j].as_str()).collect::<Vec<_>>().join("+");
    let stems: Vec<String> = grid
        .iter()
        .map(|(sub, kind)| io::sanitize(&format!("{kind}_{}", name(sub))))
        .collect();
    let keys: Vec<String> = stems.iter().map(|s| format!("real_{s}")).collect();
    let records: Vec<(FitRecord, String)> = run_jobs(ctx, &keys, |k| {
        let (sub, kind) = &grid[k];
        let d = data.select_diseases(sub)?;
        let (spec, mode) = single_fit_setup(cfg, *kind, sub.len(), full)?;
        let fit_cfg = FitConfig {
            seed: job_seed(cfg.seed, &[3, k as u64]),
            ..cfg.fit.clone()
        };
        let (rec, post) = fit_record(&d, &graph, &spec, &mode, &fit_cfg, &cfg.metrics, None)?;
        Ok((rec, io::posterior_rows(&post)))
    })?;

    let mut reports = ctx.provenance.csv("prior,subset,disease,rmss,max_rmss,rsp,sp,rbar");
    let mut hyper = ctx.provenance.csv(&format!("prior,subset,{}", io::HYPER_COLUMNS));
    let mut out = Vec::new();
    for (k, (sub, kind)) in grid.iter().enumerate() {
        let (rec, posterior) = &records[k];
        let report = rec.report.to_report();
        let subset = name(sub);
        for (j, d) in report.diseases.iter().enumerate() {
            reports += &format!(
                "{kind},{subset},{},{},{},{},,{}\n",
                ids[sub[j]], d.rmss, d.max_rmss, d.rsp, d.rbar
            );
        }
        reports += &format!(
            "{kind},{subset},TOTAL,{},,{},{},\n",
            report.rmss_total, report.rsp_sum, report.sp
        );
        hyper += &hyper_rows(&format!("{kind},{subset}"), &rec.hyper);
        let stem = &stems[k];
        ctx.write(
            &format!("components/{stem}.csv"),
            &io::components_csv(&report, &ctx.provenance),
        )?;
        ctx.write(
            &format!("posterior/{stem}.csv"),
            &(ctx.provenance.csv(io::POSTERIOR_COLUMNS) + posterior),
        )?;
        if let Some(doc) = &geo {
            let sub_ids: Vec<String> = sub.iter().map(|&j| ids[j].clone()).collect();
            let joined = io::join_components(doc, &report, &sub_ids)?;
            ctx.write(&format!("maps/{stem}.geojson"), &serde_json::to_string_pretty(&joined)?)?;
        }
        out.push(RealDataResult {
            prior: *kind,
            subset: sub.iter().map(|&j| ids[j].clone()).collect(),
            report,
        });
    }
    let mapping: String = ids
        .iter()
        .enumerate()
        .map(|(j, id)| format!("{},{id}\n", j + 1))
        .collect();
    ctx.write("diseases.csv", &(ctx.provenance.csv("index,disease") + &mapping))?;
    ctx.write("reports.csv", &reports)?;
    ctx.write("hyper.csv", &hyper)?;
    Ok(out)
}
