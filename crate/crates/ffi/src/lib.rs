//! C ABI over the smoothing library.
//!
//! Every function returns an [`MvsStatus`]. On failure the message is kept in
//! thread-local storage and can be copied out with
//! [`mvs_last_error_message`]. Graphs are opaque handles released with
//! [`mvs_graph_free`]. Matrices are passed row-major with one row per disease.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mvsmooth::data::CountDataset;
use mvsmooth::metrics::{smoothing_report, MetricsOptions, RateAverage};
use mvsmooth::poisson_gamma::{eta_correlation, posterior_rate, posterior_relative_risk, PGParams};
use mvsmooth::prior::{BetweenCov, PriorSpec};
use mvsmooth::tcv::multivariate_tcv;
use mvsmooth::{ArealGraph, Error};
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidGraph = 3,
    NotPositiveDefinite = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvsPrior {
    Icar = 0,
    Lcar = 1,
    Ljcar = 2,
}

/// Opaque areal graph.
pub struct MvsGraph {
    inner: ArealGraph,
}

/// Totals of a smoothing report.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MvsTotals {
    pub rmss_total: f64,
    pub rsp_sum: f64,
    pub sp: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> MvsStatus {
    match e {
        Error::Graph(_) | Error::IsolatedArea { .. } => MvsStatus::InvalidGraph,
        Error::NotPositiveDefinite(_) => MvsStatus::NotPositiveDefinite,
        Error::Numerical(_) | Error::DenseBudget { .. } => MvsStatus::Numerical,
        Error::Input { .. } | Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::OutputConflict(_) => MvsStatus::Io,
        _ => MvsStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (MvsStatus, String)>) -> MvsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MvsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MvsStatus::Panic
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, (MvsStatus, String)>;
}

impl<T> OrStatus<T> for mvsmooth::Result<T> {
    fn or_status(self) -> Result<T, (MvsStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (MvsStatus, String) {
    (MvsStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (MvsStatus, String) {
    (MvsStatus::InvalidArgument, msg.into())
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], (MvsStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn graph_ref<'a>(g: *const MvsGraph) -> Result<&'a ArealGraph, (MvsStatus, String)> {
    g.as_ref().map(|g| &g.inner).ok_or_else(|| null("graph"))
}

unsafe fn emit_graph(g: ArealGraph, out: *mut *mut MvsGraph) {
    *out = Box::into_raw(Box::new(MvsGraph { inner: g }));
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn mvs_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Rook-adjacency lattice with `rows * cols` areas.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mvs_graph_lattice(rows: usize, cols: usize, out: *mut *mut MvsGraph) -> MvsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        emit_graph(ArealGraph::lattice(rows, cols).or_status()?, out);
        Ok(())
    })
}

/// The bundled 47-province adjacency.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mvs_graph_spain47(out: *mut *mut MvsGraph) -> MvsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        emit_graph(ArealGraph::spain47(), out);
        Ok(())
    })
}

/// Graph from 1-based edge endpoints `from[k] -- to[k]`.
///
/// # Safety
/// `from` and `to` must hold `num_edges` elements; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mvs_graph_from_edges(
    from: *const usize,
    to: *const usize,
    num_edges: usize,
    num_areas: usize,
    out: *mut *mut MvsGraph,
) -> MvsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let a = slice(from, num_edges, "from")?;
        let b = slice(to, num_edges, "to")?;
        let edges: Vec<(usize, usize)> = a.iter().copied().zip(b.iter().copied()).collect();
        emit_graph(ArealGraph::from_edge_list(&edges, num_areas).or_status()?, out);
        Ok(())
    })
}

/// Reads a whitespace- or comma-separated edge-list file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mvs_graph_read_edge_list(path: *const c_char, out: *mut *mut MvsGraph) -> MvsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if path.is_null() {
            return Err(null("path"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8"))?;
        emit_graph(ArealGraph::read_edge_list(Path::new(p), None).or_status()?, out);
        Ok(())
    })
}

/// Releases a graph. Null is ignored.
///
/// # Safety
/// `graph` must come from one of the constructors and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mvs_graph_free(graph: *mut MvsGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Number of areas, or 0 for a null graph.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mvs_graph_num_areas(graph: *const MvsGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.inner.num_areas())
}

fn prior_spec(prior: u32, lambdas: &[f64], dim: usize) -> Result<PriorSpec, (MvsStatus, String)> {
    match prior {
        p if p == MvsPrior::Icar as u32 => Ok(PriorSpec::Icar),
        p if p == MvsPrior::Lcar as u32 => {
            let l = *lambdas.first().ok_or_else(|| invalid("LCAR needs one lambda"))?;
            PriorSpec::lcar(l).or_status()
        }
        p if p == MvsPrior::Ljcar as u32 => {
            if lambdas.len() != dim {
                return Err(invalid(format!("LjCAR needs {dim} lambdas, got {}", lambdas.len())));
            }
            PriorSpec::ljcar(lambdas.to_vec()).or_status()
        }
        other => Err(invalid(format!("unknown prior {other}"))),
    }
}

/// MultiTCV of the prior `prior` (an `MvsPrior` value) with `num_diseases`×`num_diseases` covariance
/// `sigma_b` (row-major). `lambdas` holds 0 (iCAR), 1 (LCAR) or
/// `num_diseases` (LjCAR) values. `per_area`, when not null, receives one
/// value per area.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `total` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mvs_tcv(
    graph: *const MvsGraph,
    prior: u32,
    lambdas: *const f64,
    num_lambdas: usize,
    sigma_b: *const f64,
    num_diseases: usize,
    total: *mut f64,
    per_area: *mut f64,
) -> MvsStatus {
    guard(|| {
        let g = graph_ref(graph)?;
        if total.is_null() {
            return Err(null("total"));
        }
        let l = slice(lambdas, num_lambdas, "lambdas")?;
        let s = slice(sigma_b, num_diseases * num_diseases, "sigma_b")?;
        if num_diseases == 0 {
            return Err(invalid("num_diseases must be positive"));
        }
        let cov = BetweenCov::new(DMatrix::from_row_slice(num_diseases, num_diseases, s)).or_status()?;
        let spec = prior_spec(prior, l, num_diseases)?;
        let r = multivariate_tcv(&spec, &cov, g).or_status()?;
        *total = r.total;
        if !per_area.is_null() {
            std::ptr::copy_nonoverlapping(r.per_area.as_ptr(), per_area, r.per_area.len());
        }
        Ok(())
    })
}

/// corr(η⁽¹⁾, η⁽²⁾) of the shared-component Poisson-Gamma model.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mvs_pg_eta_correlation(a1: f64, a2: f64, c: f64, b: f64, out: *mut f64) -> MvsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = eta_correlation(&PGParams::new([a1, a2], c, b).or_status()?);
        Ok(())
    })
}

/// Posterior relative risk `(a + c + O)/(b + E)` and data weight `w` for
/// disease 0 or 1.
///
/// # Safety
/// `mean` and `weight` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mvs_pg_relative_risk(
    a1: f64,
    a2: f64,
    c: f64,
    b: f64,
    disease: usize,
    observed: f64,
    expected: f64,
    mean: *mut f64,
    weight: *mut f64,
) -> MvsStatus {
    guard(|| {
        if mean.is_null() || weight.is_null() {
            return Err(null("output"));
        }
        let p = PGParams::new([a1, a2], c, b).or_status()?;
        let r = posterior_relative_risk(&p, disease, observed, expected).or_status()?;
        *mean = r.mean;
        *weight = r.weight;
        Ok(())
    })
}

/// Rate-scale posterior mean and shrinkage factor `1 − w` for disease 0 or 1.
///
/// # Safety
/// `mean_rate` and `one_minus_w` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mvs_pg_posterior_rate(
    a1: f64,
    a2: f64,
    c: f64,
    b: f64,
    disease: usize,
    observed: f64,
    population: f64,
    rbar: f64,
    mean_rate: *mut f64,
    one_minus_w: *mut f64,
) -> MvsStatus {
    guard(|| {
        if mean_rate.is_null() || one_minus_w.is_null() {
            return Err(null("output"));
        }
        let p = PGParams::new([a1, a2], c, b).or_status()?;
        let r = posterior_rate(&p, disease, observed, population, rbar).or_status()?;
        *mean_rate = r.mean_rate;
        *one_minus_w = r.one_minus_w;
        Ok(())
    })
}

/// Smoothing metrics of posterior mean rates against crude rates.
///
/// `post` and `counts` are `num_diseases`×`num_areas` row-major; `population`
/// has `num_areas` entries. Per-disease outputs (`rmss`, `max_rmss`, `rsp`,
/// `rbar`) may each be null or hold `num_diseases` values. `weighted`
/// selects the population-weighted average rate.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `totals` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mvs_smoothing_report(
    post: *const f64,
    counts: *const u64,
    population: *const u64,
    num_diseases: usize,
    num_areas: usize,
    rate_scale: f64,
    weighted: bool,
    totals: *mut MvsTotals,
    rmss: *mut f64,
    max_rmss: *mut f64,
    rsp: *mut f64,
    rbar: *mut f64,
) -> MvsStatus {
    guard(|| {
        if totals.is_null() {
            return Err(null("totals"));
        }
        let n = num_diseases * num_areas;
        if n == 0 {
            return Err(invalid("empty dataset"));
        }
        let p = DMatrix::from_row_slice(num_diseases, num_areas, slice(post, n, "post")?);
        let o = DMatrix::from_row_slice(num_diseases, num_areas, slice(counts, n, "counts")?);
        let pop = slice(population, num_areas, "population")?.to_vec();
        let data = CountDataset::new(o, pop, None).or_status()?;
        let opts = MetricsOptions {
            rate_scale,
            average: if weighted {
                RateAverage::Weighted
            } else {
                RateAverage::Unweighted
            },
        };
        let r = smoothing_report(&p, &data, &opts).or_status()?;
        *totals = MvsTotals {
            rmss_total: r.rmss_total,
            rsp_sum: r.rsp_sum,
            sp: r.sp,
        };
        for (dst, f) in [
            (rmss, (|d| d.rmss) as fn(&mvsmooth::metrics::DiseaseMetrics) -> f64),
            (max_rmss, |d| d.max_rmss),
            (rsp, |d| d.rsp),
            (rbar, |d| d.rbar),
        ] {
            if !dst.is_null() {
                for (j, d) in r.diseases.iter().enumerate() {
                    *dst.add(j) = f(d);
                }
            }
        }
        Ok(())
    })
}
