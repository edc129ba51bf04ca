//! Interval estimates and goodness-of-fit tests used by the validators.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Two-sided standard normal quantile for confidence `level`.
pub fn normal_quantile(level: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    n.inverse_cdf(0.5 + level / 2.0)
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_ci(successes: u64, trials: u64, level: f64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::ZeroTrials);
    }
    if successes > trials {
        return Err(Error::TooManySuccesses { successes, trials });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::param("level", "must lie in (0, 1)"));
    }
    let z = normal_quantile(level);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let mut lo = (centre - half).max(0.0);
    let mut hi = (centre + half).min(1.0);
    if successes == 0 {
        lo = 0.0;
    }
    if successes == trials {
        hi = 1.0;
    }
    Ok((lo.min(p), hi.max(p)))
}

/// Whether an observed frequency lies within `k` binomial standard deviations of `p`.
pub fn within_sigma(successes: u64, trials: u64, p: f64, k: f64) -> bool {
    let n = trials as f64;
    let sd = (p * (1.0 - p) / n).sqrt();
    (successes as f64 / n - p).abs() <= k * sd
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

impl KsResult {
    pub fn passes(&self, significance: f64) -> bool {
        self.p_value > significance
    }
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        // Small-x series for the distribution function.
        let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * x * x);
        let mut s = 0.0;
        for k in 1..=20 {
            let m = (2 * k - 1) as f64;
            s += (-m * m * c).exp();
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * s
    } else {
        let mut s = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * x * x).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < 1e-18 {
                break;
            }
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// One-sample Kolmogorov-Smirnov test against a continuous distribution function.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    let sq = nf.sqrt();
    let p = kolmogorov_sf(d * (sq + 0.12 + 0.11 / sq));
    Ok(KsResult {
        statistic: d,
        p_value: p,
        n,
    })
}

/// KS test for an integer-valued sample against a pmf on `0, 1, 2, ...`,
/// evaluated only at the atoms.
pub fn ks_test_discrete<F: Fn(u64) -> f64>(samples: &[u64], cdf: F) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(Error::EmptySequence);
    }
    let max = *samples.iter().max().unwrap();
    let mut counts = vec![0u64; max as usize + 1];
    for &s in samples {
        counts[s as usize] += 1;
    }
    let nf = samples.len() as f64;
    let mut acc = 0u64;
    let mut d: f64 = 0.0;
    for (k, c) in counts.iter().enumerate() {
        acc += c;
        d = d.max((acc as f64 / nf - cdf(k as u64)).abs());
    }
    let sq = nf.sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf(d * (sq + 0.12 + 0.11 / sq)),
        n: samples.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chi2Result {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub bins: usize,
}

impl Chi2Result {
    pub fn passes(&self, significance: f64) -> bool {
        self.p_value > significance
    }
}

/// Pearson chi-square goodness of fit.
///
/// `probs[k]` is the model probability of bin `k`; any missing mass goes to an
/// extra tail bin collecting all observations `>= probs.len()`. Bins are pooled
/// from the right until every expected count is at least 5.
pub fn chi2_test(observed: &[u64], probs: &[f64]) -> Result<Chi2Result> {
    let n: u64 = observed.iter().sum();
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    let nf = n as f64;
    let k = probs.len();
    let mut obs: Vec<f64> = (0..k)
        .map(|i| observed.get(i).copied().unwrap_or(0) as f64)
        .collect();
    let mut exp: Vec<f64> = probs.iter().map(|p| p * nf).collect();
    let tail_obs: u64 = observed.iter().skip(k).sum();
    let tail_p = (1.0 - probs.iter().sum::<f64>()).max(0.0);
    obs.push(tail_obs as f64);
    exp.push(tail_p * nf);

    let mut pooled_o = Vec::new();
    let mut pooled_e = Vec::new();
    let (mut co, mut ce) = (0.0, 0.0);
    for i in (0..obs.len()).rev() {
        co += obs[i];
        ce += exp[i];
        if ce >= 5.0 {
            pooled_o.push(co);
            pooled_e.push(ce);
            co = 0.0;
            ce = 0.0;
        }
    }
    if ce > 0.0 || co > 0.0 {
        if let (Some(o), Some(e)) = (pooled_o.last_mut(), pooled_e.last_mut()) {
            *o += co;
            *e += ce;
        } else {
            pooled_o.push(co);
            pooled_e.push(ce);
        }
    }
    let bins = pooled_o.len();
    if bins < 2 {
        return Err(Error::param("probs", "need at least two bins after pooling"));
    }
    let stat: f64 = pooled_o
        .iter()
        .zip(&pooled_e)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = bins - 1;
    let chi = ChiSquared::new(dof as f64).map_err(|e| Error::param("dof", e.to_string()))?;
    Ok(Chi2Result {
        statistic: stat,
        dof,
        p_value: 1.0 - chi.cdf(stat),
        bins,
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn wilson_reference_values() {
        let (lo, hi) = wilson_ci(50, 100, 0.95).unwrap();
        assert!((lo - 0.4038).abs() < 1e-3, "{lo}");
        assert!((hi - 0.5962).abs() < 1e-3, "{hi}");
        assert_eq!(wilson_ci(0, 40, 0.95).unwrap().0, 0.0);
        assert_eq!(wilson_ci(40, 40, 0.95).unwrap().1, 1.0);
        assert_eq!(wilson_ci(0, 0, 0.95), Err(Error::ZeroTrials));
    }

    #[test]
    fn kolmogorov_tail_is_continuous_across_branches() {
        let a = kolmogorov_sf(1.18 - 1e-9);
        let b = kolmogorov_sf(1.18 + 1e-9);
        assert!((a - b).abs() < 1e-8);
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 5e-4);
    }

    #[test]
    fn ks_accepts_uniform_sample() {
        let mut rng = crate::rng::Seed(5).rng();
        let xs: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let r = ks_test(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(r.passes(1e-3), "{r:?}");
        let r = ks_test(&xs, |x| (x * x).clamp(0.0, 1.0)).unwrap();
        assert!(!r.passes(1e-3));
    }

    #[test]
    fn chi2_detects_wrong_model() {
        let obs = [250u64, 250, 250, 250];
        let good = chi2_test(&obs, &[0.25, 0.25, 0.25, 0.25]).unwrap();
        assert!(good.statistic < 1e-12 && good.passes(1e-3));
        let bad = chi2_test(&obs, &[0.4, 0.2, 0.2, 0.2]).unwrap();
        assert!(!bad.passes(1e-3));
    }
}
