//! Convergence diagnostics over multiple chains.

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Effective sample size of one chain by Geyer's initial monotone sequence.
pub fn ess_single(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let m = mean(x);
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    let acov = |lag: usize| (0..n - lag).map(|t| c[t] * c[t + lag]).sum::<f64>() / n as f64;
    let c0 = acov(0);
    if c0 <= 0.0 {
        return n as f64;
    }
    let mut sum_pairs = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let mut pair = (acov(2 * k) + acov(2 * k + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        if pair > prev {
            pair = prev;
        }
        sum_pairs += pair;
        prev = pair;
        k += 1;
    }
    let tau = (2.0 * sum_pairs - 1.0).max(1.0 / n as f64);
    n as f64 / tau
}

/// ESS summed over chains.
pub fn ess(chains: &[&[f64]]) -> f64 {
    chains.iter().map(|c| ess_single(c)).sum()
}

/// Split-chain potential scale reduction factor. Returns 1 for constant draws.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[c.len() - h..]]
        })
        .filter(|h| h.len() >= 2)
        .collect();
    if halves.len() < 2 {
        return f64::NAN;
    }
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let grand = mean(&means);
    let m = halves.len() as f64;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, &mu)| h.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Quantile with linear interpolation between order statistics; `sorted`
/// must be ascending.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean and central 95% interval.
pub fn summarize(values: &[f64]) -> (f64, f64, f64) {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    (mean(values), quantile(&s, 0.025), quantile(&s, 0.975))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn iid_ess_near_n() {
        let mut rng = substream(1, &[]);
        let x: Vec<f64> = (0..4000).map(|_| rng.sample(StandardNormal)).collect();
        let e = ess_single(&x);
        assert!(e > 3000.0 && e < 5000.0, "{e}");
    }

    #[test]
    fn ar1_ess_matches_theory() {
        let mut rng = substream(2, &[]);
        let phi: f64 = 0.9;
        let mut x = vec![0.0; 20000];
        for t in 1..x.len() {
            x[t] = phi * x[t - 1] + rng.sample::<f64, _>(StandardNormal);
        }
        // n (1 − φ) / (1 + φ)
        let theory = 20000.0 * (1.0 - phi) / (1.0 + phi);
        let e = ess_single(&x);
        assert!((e / theory - 1.0).abs() < 0.3, "{e} vs {theory}");
    }

    #[test]
    fn rhat_detects_disagreement() {
        let mut rng = substream(3, &[]);
        let a: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
        let r = split_rhat(&[&a, &b]);
        assert!(r < 1.02, "{r}");
        let shifted: Vec<f64> = b.iter().map(|v| v + 3.0).collect();
        assert!(split_rhat(&[&a, &shifted]) > 1.5);
        assert_eq!(split_rhat(&[&[1.0, 1.0, 1.0, 1.0]]), 1.0);
    }

    #[test]
    fn quantiles() {
        let s: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(quantile(&s, 0.025), 2.5);
        assert_eq!(quantile(&s, 0.5), 50.0);
        let (m, lo, hi) = summarize(&[3.0, 1.0, 2.0]);
        assert_eq!((m, lo, hi), (2.0, 1.05, 2.95));
    }
}
