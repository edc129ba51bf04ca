//! Columnar stretch environments and the stationarised renewal embedding.

use rand::Rng;
use rand_distr::{Distribution as _, Exp, Exp1, Geometric, Pareto};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Seed, SimRng};

/// Law of a single stretch.
///
/// `Geometric { p }` is supported on `1, 2, ...` with `P(K >= l + 1) = (1 - p)^l`,
/// so `p = P(K = 1)` is the success probability and `1 - p` the tail ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    Constant { value: f64 },
    Exponential { rate: f64 },
    Geometric { p: f64 },
    SquaredGeometric { p: f64 },
    Pareto { shape: f64, scale: f64 },
    /// `P(X > s) = exp(-s^a)`.
    StretchedExp { a: f64 },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite and positive, got {v}")))
    }
}

fn prob_open(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must lie in (0, 1), got {v}")))
    }
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Distribution::Constant { value } => {
                if value.is_finite() && value >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::param("value", "must be finite and non-negative"))
                }
            }
            Distribution::Exponential { rate } => positive("rate", rate),
            Distribution::Geometric { p } | Distribution::SquaredGeometric { p } => {
                if p > 0.0 && p <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::param("p", format!("must lie in (0, 1], got {p}")))
                }
            }
            Distribution::Pareto { shape, scale } => {
                positive("shape", shape)?;
                positive("scale", scale)
            }
            Distribution::StretchedExp { a } => prob_open("a", a),
        }
    }

    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        match *self {
            Distribution::Constant { value } => value,
            Distribution::Exponential { rate } => Exp::new(rate).expect("validated").sample(rng),
            Distribution::Geometric { p } => 1.0 + geometric_failures(p, rng) as f64,
            Distribution::SquaredGeometric { p } => {
                let k = 1.0 + geometric_failures(p, rng) as f64;
                k * k
            }
            Distribution::Pareto { shape, scale } => {
                Pareto::new(scale, shape).expect("validated").sample(rng)
            }
            Distribution::StretchedExp { a } => {
                let e: f64 = Exp1.sample(rng);
                e.powf(1.0 / a)
            }
        }
    }

    /// `P(X > s)`.
    pub fn survival(&self, s: f64) -> f64 {
        if s < 0.0 {
            return 1.0;
        }
        match *self {
            Distribution::Constant { value } => f64::from(u8::from(value > s)),
            Distribution::Exponential { rate } => (-rate * s).exp(),
            Distribution::Geometric { p } => (1.0 - p).powf(s.floor()),
            Distribution::SquaredGeometric { p } => (1.0 - p).powf(s.sqrt().floor()),
            Distribution::Pareto { shape, scale } => {
                if s < scale {
                    1.0
                } else {
                    (scale / s).powf(shape)
                }
            }
            Distribution::StretchedExp { a } => (-s.powf(a)).exp(),
        }
    }

    /// `E[X^r]` where it has a closed form (or a rapidly converging series).
    pub fn moment(&self, r: f64) -> Option<f64> {
        match *self {
            Distribution::Constant { value } => Some(value.powf(r)),
            Distribution::Exponential { rate } => {
                Some(statrs::function::gamma::gamma(1.0 + r) / rate.powf(r))
            }
            Distribution::Geometric { p } => series_moment(p, |k| k.powf(r)),
            Distribution::SquaredGeometric { p } => series_moment(p, |k| k.powf(2.0 * r)),
            Distribution::Pareto { shape, scale } => {
                (r < shape).then(|| shape * scale.powf(r) / (shape - r))
            }
            Distribution::StretchedExp { a } => {
                Some(statrs::function::gamma::gamma(1.0 + r / a))
            }
        }
    }

    pub fn mean(&self) -> Option<f64> {
        self.moment(1.0)
    }
}

fn geometric_failures(p: f64, rng: &mut SimRng) -> u64 {
    if p >= 1.0 {
        return 0;
    }
    Geometric::new(p).expect("validated").sample(rng)
}

fn series_moment(p: f64, f: impl Fn(f64) -> f64) -> Option<f64> {
    let q = 1.0 - p;
    if q == 0.0 {
        return Some(f(1.0));
    }
    let mut sum = 0.0;
    let mut w = p;
    for k in 1..200_000u64 {
        let term = w * f(k as f64);
        sum += term;
        if term < 1e-18 * sum && k > 10 {
            return Some(sum);
        }
        w *= q;
    }
    None
}

/// Stretch laws for columns (`xi`) and bonds (`nu`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StretchSpec {
    pub xi: Distribution,
    pub nu: Distribution,
    /// The `1 + eps` moment the stretch laws are declared to have.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment_exponent: Option<f64>,
    /// Set for laws chosen on purpose to violate the moment condition.
    #[serde(default)]
    pub heavy: bool,
}

impl StretchSpec {
    pub fn new(xi: Distribution, nu: Distribution) -> Self {
        StretchSpec {
            xi,
            nu,
            moment_exponent: None,
            heavy: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.xi.validate()?;
        self.nu.validate()?;
        if let Some(e) = self.moment_exponent {
            if !(e > 1.0 && e.is_finite()) {
                return Err(Error::param("moment_exponent", "must exceed 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StretchEnvironment {
    pub xi: Vec<f64>,
    pub nu: Vec<f64>,
}

impl StretchEnvironment {
    pub fn new(xi: Vec<f64>, nu: Vec<f64>) -> Result<Self> {
        if xi.is_empty() {
            return Err(Error::EmptySequence);
        }
        if nu.len() + 1 != xi.len() {
            return Err(Error::param("nu", "needs exactly width - 1 entries"));
        }
        if let Some(&v) = xi.iter().chain(&nu).find(|v| !(**v >= 0.0)) {
            return Err(Error::NegativeArgument(v));
        }
        Ok(StretchEnvironment { xi, nu })
    }

    pub fn width(&self) -> usize {
        self.xi.len()
    }
}

pub fn sample_stretches(spec: &StretchSpec, width: usize, seed: Seed) -> Result<StretchEnvironment> {
    spec.validate()?;
    if width == 0 {
        return Err(Error::param("width", "must be at least 1"));
    }
    let mut rx = seed.child("env/xi").rng();
    let mut rn = seed.child("env/nu").rng();
    let xi = (0..width).map(|_| spec.xi.sample(&mut rx)).collect();
    let nu = (0..width - 1).map(|_| spec.nu.sample(&mut rn)).collect();
    Ok(StretchEnvironment { xi, nu })
}

#[inline]
pub fn ceil_stretch(v: f64) -> u64 {
    v.ceil() as u64
}

/// Spacing between consecutive renewal points for stretches `(xi, nu)`.
///
/// The bond part is at least one so that points stay strictly increasing even
/// when both stretches vanish.
#[inline]
pub fn renewal_gap(xi: f64, nu: f64) -> u64 {
    ceil_stretch(xi) + ceil_stretch(nu).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChiMode {
    #[default]
    Zero,
    BurnIn(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenewalEmbedding {
    pub points: Vec<i64>,
    pub parity: u8,
    pub xi_at: Vec<u64>,
    pub nu_gap: Vec<u64>,
    pub chi: i64,
    pub chi_mode: ChiMode,
}

impl RenewalEmbedding {
    /// Renewal points `0, 1, ..., n - 1` with vanishing stretches.
    pub fn identity(n: usize) -> Self {
        RenewalEmbedding {
            points: (0..n as i64).collect(),
            parity: 0,
            xi_at: vec![0; n],
            nu_gap: vec![0; n.saturating_sub(1)],
            chi: 0,
            chi_mode: ChiMode::Zero,
        }
    }

    /// Embedding with prescribed points; stretches are read off the gaps.
    pub fn from_points(points: Vec<i64>, parity: u8) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySequence);
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("points", "must be strictly increasing"));
        }
        let nu_gap = points.windows(2).map(|w| (w[1] - w[0]) as u64).collect();
        Ok(RenewalEmbedding {
            chi: points[0],
            xi_at: vec![0; points.len()],
            points,
            parity: parity & 1,
            nu_gap,
            chi_mode: ChiMode::Zero,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices `i` with `lo <= X_i <= hi`, as a half-open range.
    pub fn index_range(&self, lo: i64, hi: i64) -> std::ops::Range<usize> {
        let a = self.points.partition_point(|&x| x < lo);
        let b = self.points.partition_point(|&x| x <= hi);
        a..b.max(a)
    }
}

pub fn build_embedding(env: &StretchEnvironment, parity_seed: Seed, chi_mode: ChiMode) -> Result<RenewalEmbedding> {
    let n = env.width();
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    let mut rng = parity_seed.child("embedding").rng();
    let parity = u8::from(rng.random_bool(0.5));
    let (start, chi) = match chi_mode {
        ChiMode::Zero => (0usize, 0i64),
        ChiMode::BurnIn(burn) => {
            let burn = burn as usize;
            if burn + 1 >= n {
                return Err(Error::WindowExceedsEnvironment { need: burn + 2, have: n });
            }
            let total: u64 = (0..burn).map(|i| renewal_gap(env.xi[i], env.nu[i])).sum();
            let tau = rng.random_range(0..total.max(1)) as i64;
            let mut pos = 0i64;
            let mut j = 0usize;
            while pos < tau {
                pos += renewal_gap(env.xi[j], env.nu[j]) as i64;
                j += 1;
            }
            (j, pos - tau)
        }
    };
    let mut points = Vec::with_capacity(n - start);
    let mut xi_at = Vec::with_capacity(n - start);
    let mut nu_gap = Vec::with_capacity(n - start);
    let mut x = chi;
    for i in start..n {
        points.push(x);
        xi_at.push(ceil_stretch(env.xi[i]));
        if i + 1 < n {
            nu_gap.push(ceil_stretch(env.nu[i]).max(1));
            x += renewal_gap(env.xi[i], env.nu[i]) as i64;
        }
    }
    Ok(RenewalEmbedding {
        points,
        parity,
        xi_at,
        nu_gap,
        chi,
        chi_mode,
    })
}

/// Integerised `xi` at point `i` and `nu` of bond `(i, i + 1)` if that bond exists.
pub fn gap_lookup(emb: &RenewalEmbedding, i: usize) -> Result<(u64, Option<u64>)> {
    let xi = *emb.xi_at.get(i).ok_or(Error::IndexOutOfRange {
        index: i,
        len: emb.xi_at.len(),
    })?;
    Ok((xi, emb.nu_gap.get(i).copied()))
}

/// Law of the stationary delay of an integer renewal process:
/// `P(D = j) = P(G > j) / E[G]` for the interarrival law `G` given as a pmf on `0..`.
pub fn stationary_delay_pmf(gap_pmf: &[f64]) -> Vec<f64> {
    let mean: f64 = gap_pmf.iter().enumerate().map(|(g, p)| g as f64 * p).sum();
    let mut tail = 1.0 - gap_pmf.first().copied().unwrap_or(0.0);
    let mut out = Vec::with_capacity(gap_pmf.len());
    for j in 0..gap_pmf.len() {
        out.push(tail.max(0.0) / mean);
        if j + 1 < gap_pmf.len() {
            tail -= gap_pmf[j + 1];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    fn exp1() -> Distribution {
        Distribution::Exponential { rate: 1.0 }
    }

    #[test]
    fn constant_zero_environment() {
        let c = Distribution::Constant { value: 0.0 };
        let env = sample_stretches(&StretchSpec::new(c.clone(), c), 3, Seed(9)).unwrap();
        assert_eq!(env.xi, vec![0.0; 3]);
        assert_eq!(env.nu, vec![0.0; 2]);
    }

    #[test]
    fn exponential_mean() {
        let env = sample_stretches(&StretchSpec::new(exp1(), exp1()), 100_000, Seed(1)).unwrap();
        let m = stats::mean(&env.xi);
        assert!((0.99..=1.01).contains(&m), "{m}");
    }

    #[test]
    fn squared_geometric_atom_at_one() {
        let spec = StretchSpec::new(exp1(), Distribution::SquaredGeometric { p: 0.7 });
        let env = sample_stretches(&spec, 100_000, Seed(2)).unwrap();
        let ones = env.nu.iter().filter(|&&v| v == 1.0).count() as u64;
        assert!(stats::within_sigma(ones, env.nu.len() as u64, 0.7, 3.0));
        assert!(env.nu.iter().all(|v| v.sqrt().fract() == 0.0));
    }

    #[test]
    fn rejects_bad_parameters() {
        let spec = StretchSpec::new(Distribution::Exponential { rate: -1.0 }, exp1());
        assert!(matches!(
            sample_stretches(&spec, 4, Seed(0)),
            Err(Error::InvalidParameter { .. })
        ));
        let bad: std::result::Result<Distribution, _> =
            serde_json::from_str(r#"{"kind":"lognormal","mu":1}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = StretchSpec::new(exp1(), Distribution::Pareto { shape: 2.5, scale: 1.0 });
        let a = sample_stretches(&spec, 500, Seed(77)).unwrap();
        let b = sample_stretches(&spec, 500, Seed(77)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_stretches(&spec, 500, Seed(78)).unwrap());
    }

    #[test]
    fn embedding_gap_examples() {
        let env = StretchEnvironment::new(vec![1.0, 2.0], vec![3.0]).unwrap();
        let e = build_embedding(&env, Seed(3), ChiMode::Zero).unwrap();
        assert_eq!(e.points, vec![0, 4]);
        assert_eq!(gap_lookup(&e, 0).unwrap(), (1, Some(3)));
        assert_eq!(gap_lookup(&e, 1).unwrap(), (2, None));
        assert!(matches!(gap_lookup(&e, 2), Err(Error::IndexOutOfRange { .. })));

        let env = StretchEnvironment::new(vec![0.2, 0.2], vec![0.5]).unwrap();
        let e = build_embedding(&env, Seed(3), ChiMode::Zero).unwrap();
        assert_eq!(e.points, vec![0, 2]);
    }

    #[test]
    fn parity_is_a_fair_coin() {
        let env = StretchEnvironment::new(vec![0.0], vec![]).unwrap();
        let ones: u64 = (0..4000)
            .map(|s| build_embedding(&env, Seed(s), ChiMode::Zero).unwrap().parity as u64)
            .sum();
        assert!(stats::within_sigma(ones, 4000, 0.5, 4.0));
    }

    #[test]
    fn stationary_delay_of_exponential_pair() {
        // xi, nu ~ Exp(1): each ceiling is geometric on 1.. with ratio r = e^-1,
        // so the gap is negative binomial: P(G = g) = (g - 1)(1 - r)^2 r^(g - 2).
        let r = (-1.0f64).exp();
        let gap: Vec<f64> = (0..80)
            .map(|g| if g < 2 { 0.0 } else { (g - 1) as f64 * (1.0 - r).powi(2) * r.powi(g - 2) })
            .collect();
        let delay = stationary_delay_pmf(&gap);
        let cdf: Vec<f64> = delay
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        let spec = StretchSpec::new(exp1(), exp1());
        let burn = 10_000u64;
        let samples: Vec<u64> = (0..1500u64)
            .map(|rep| {
                let seed = Seed(5).derive(rep, "chi");
                let env = sample_stretches(&spec, burn as usize + 50, seed).unwrap();
                build_embedding(&env, seed, ChiMode::BurnIn(burn)).unwrap().chi as u64
            })
            .collect();
        let ks = stats::ks_test_discrete(&samples, |k| cdf.get(k as usize).copied().unwrap_or(1.0)).unwrap();
        assert!(ks.passes(1e-3), "{ks:?}");
    }

    #[test]
    fn moments_match_sample() {
        let d = Distribution::Geometric { p: 0.4 };
        let m = d.moment(1.0).unwrap();
        assert!((m - 2.5).abs() < 1e-9);
        let e = exp1().moment(1.5).unwrap();
        assert!((e - statrs::function::gamma::gamma(2.5)).abs() < 1e-12);
        assert!(Distribution::Pareto { shape: 1.2, scale: 1.0 }.moment(1.5).is_none());
    }
}
