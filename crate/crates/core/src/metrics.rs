//! Empirical smoothing criteria comparing posterior mean rates with crude rates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::CountDataset;
use crate::error::{Error, Result};

/// How the reference rate r̄_j is averaged over areas.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateAverage {
    /// Σ_i O_ji / Σ_i n_i.
    #[default]
    Weighted,
    /// Mean of the crude rates.
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsOptions {
    /// Multiplier applied to rates before RMSS (1e5 gives rates per 100,000).
    pub rate_scale: f64,
    pub average: RateAverage,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            rate_scale: 1.0,
            average: RateAverage::Weighted,
        }
    }
}

fn check_shapes(post: &DMatrix<f64>, data: &CountDataset) -> Result<()> {
    if post.shape() != (data.num_diseases(), data.num_areas()) {
        return Err(Error::Dimension(format!(
            "posterior rates are {}x{} but data is {}x{}",
            post.nrows(),
            post.ncols(),
            data.num_diseases(),
            data.num_areas()
        )));
    }
    Ok(())
}

pub fn average_rate(data: &CountDataset, disease: usize, method: RateAverage) -> Result<f64> {
    let g = data.num_areas();
    match method {
        RateAverage::Weighted => {
            let total_pop: f64 = data.population().iter().map(|&n| n as f64).sum();
            if !(total_pop > 0.0) {
                return Err(Error::Degenerate("total population is zero".into()));
            }
            let total: f64 = (0..g).map(|i| data.count(disease, i) as f64).sum();
            Ok(total / total_pop)
        }
        RateAverage::Unweighted => Ok((0..g).map(|i| data.crude_rate(disease, i)).sum::<f64>() / g as f64),
    }
}

/// Per-area components s·(E − r̂)²/E and their sum, with s the rate scale.
pub fn rmss(post: &DMatrix<f64>, data: &CountDataset, disease: usize, rate_scale: f64) -> Result<(f64, Vec<f64>)> {
    check_shapes(post, data)?;
    let mut comps = Vec::with_capacity(data.num_areas());
    for i in 0..data.num_areas() {
        let e = post[(disease, i)];
        if !(e > 0.0) {
            return Err(Error::Degenerate(format!(
                "posterior rate {e} for disease {} area {} is not positive",
                disease + 1,
                i + 1
            )));
        }
        let d = e - data.crude_rate(disease, i);
        comps.push(rate_scale * d * d / e);
    }
    Ok((comps.iter().sum(), comps))
}

pub fn max_rmss(post: &DMatrix<f64>, data: &CountDataset, disease: usize, rate_scale: f64) -> Result<f64> {
    let (_, comps) = rmss(post, data, disease, rate_scale)?;
    Ok(comps.into_iter().fold(0.0, f64::max))
}

fn rsp_parts(post: &DMatrix<f64>, data: &CountDataset, disease: usize, rbar: f64) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..data.num_areas() {
        let crude = data.crude_rate(disease, i);
        num += (post[(disease, i)] - crude).powi(2);
        den += (rbar - crude).powi(2);
    }
    (num, den)
}

/// Σ_i (E − r̂)² / Σ_i (r̄ − r̂)²; not clamped.
pub fn rsp(post: &DMatrix<f64>, data: &CountDataset, disease: usize, rbar: f64) -> Result<f64> {
    check_shapes(post, data)?;
    let (num, den) = rsp_parts(post, data, disease, rbar);
    if !(den > 0.0) {
        return Err(Error::Degenerate(format!(
            "RSP denominator is zero for disease {} (crude rates all equal r̄)",
            disease + 1
        )));
    }
    Ok(num / den)
}

/// Pooled smoothing proportion: numerators and denominators summed over diseases.
pub fn sp(post: &DMatrix<f64>, data: &CountDataset, rbar: &[f64]) -> Result<f64> {
    check_shapes(post, data)?;
    if rbar.len() != data.num_diseases() {
        return Err(Error::Dimension("one average rate per disease required".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (j, &r) in rbar.iter().enumerate() {
        let (n, d) = rsp_parts(post, data, j, r);
        num += n;
        den += d;
    }
    if !(den > 0.0) {
        return Err(Error::Degenerate("SP denominator is zero".into()));
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseMetrics {
    pub rmss: f64,
    pub max_rmss: f64,
    #[serde(with = "crate::io::nonfinite")]
    pub rsp: f64,
    pub rbar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingReport {
    pub diseases: Vec<DiseaseMetrics>,
    pub rmss_total: f64,
    /// Σ_j RSP_j.
    pub rsp_sum: f64,
    pub sp: f64,
    /// J×G RMSS addends.
    pub per_area: DMatrix<f64>,
    pub replicate_id: Option<u64>,
    pub multitcv: Option<f64>,
}

impl SmoothingReport {
    pub fn num_diseases(&self) -> usize {
        self.diseases.len()
    }
}

pub fn smoothing_report(post: &DMatrix<f64>, data: &CountDataset, opts: &MetricsOptions) -> Result<SmoothingReport> {
    check_shapes(post, data)?;
    if !(opts.rate_scale > 0.0 && opts.rate_scale.is_finite()) {
        return Err(Error::Parameter("rate_scale must be positive".into()));
    }
    let jn = data.num_diseases();
    let mut per_area = DMatrix::zeros(jn, data.num_areas());
    let mut diseases = Vec::with_capacity(jn);
    let mut rbars = Vec::with_capacity(jn);
    for j in 0..jn {
        let (total, comps) = rmss(post, data, j, opts.rate_scale)?;
        for (i, c) in comps.iter().enumerate() {
            per_area[(j, i)] = *c;
        }
        let rbar = average_rate(data, j, opts.average)?;
        rbars.push(rbar);
        diseases.push(DiseaseMetrics {
            rmss: total,
            max_rmss: comps.iter().copied().fold(0.0, f64::max),
            rsp: rsp(post, data, j, rbar)?,
            rbar,
        });
    }
    Ok(SmoothingReport {
        rmss_total: diseases.iter().map(|d| d.rmss).sum(),
        rsp_sum: diseases.iter().map(|d| d.rsp).sum(),
        sp: sp(post, data, &rbars)?,
        diseases,
        per_area,
        replicate_id: Some(data.replicate_id),
        multitcv: None,
    })
}

/// Replicate average of every field. Sums are recomputed from the averaged
/// addends so `rmss_j = Σ_i component` and `rmss_total = Σ_j rmss_j` stay exact.
pub fn expected_over_replicates(reports: &[SmoothingReport]) -> Result<SmoothingReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Degenerate("cannot average an empty list of reports".into()))?;
    let shape = first.per_area.shape();
    if reports
        .iter()
        .any(|r| r.per_area.shape() != shape || r.diseases.len() != first.diseases.len())
    {
        return Err(Error::Dimension("reports have mismatched shapes".into()));
    }
    let b = reports.len() as f64;
    let mean = |f: &dyn Fn(&SmoothingReport) -> f64| reports.iter().map(f).sum::<f64>() / b;

    let mut per_area = DMatrix::zeros(shape.0, shape.1);
    for r in reports {
        per_area += &r.per_area;
    }
    per_area /= b;

    let diseases: Vec<DiseaseMetrics> = (0..first.diseases.len())
        .map(|j| DiseaseMetrics {
            rmss: per_area.row(j).iter().sum(),
            max_rmss: mean(&|r| r.diseases[j].max_rmss),
            rsp: mean(&|r| r.diseases[j].rsp),
            rbar: mean(&|r| r.diseases[j].rbar),
        })
        .collect();
    let multitcv = if reports.iter().all(|r| r.multitcv.is_some()) {
        Some(mean(&|r| r.multitcv.unwrap_or(0.0)))
    } else {
        None
    };
    if reports.len() == 1 {
        return Ok(first.clone());
    }
    Ok(SmoothingReport {
        rmss_total: diseases.iter().map(|d| d.rmss).sum(),
        rsp_sum: diseases.iter().map(|d| d.rsp).sum(),
        sp: mean(&|r| r.sp),
        diseases,
        per_area,
        replicate_id: None,
        multitcv,
    })
}
