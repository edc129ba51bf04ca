//! Connection functions, evaluated in linear and log space.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    Constant { p: f64 },
    /// `(1 - e^-lambda)^s`
    Power,
    /// `1 - exp(-lambda e^-s)`
    CpprUniform,
    /// `P(Poisson(lambda) >= floor(sqrt(s)))`
    CpprBernoulli,
    /// `1 - (1 - e^-s)^l`
    CpreEdge { l: u32 },
    /// `exp(-2 / l)`
    CpreVertex { l: u32 },
}

fn default_sigma() -> f64 {
    1.0
}

/// A connection function `s -> kappa_lambda(sigma s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectionFamily {
    #[serde(flatten)]
    pub kind: KernelKind,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

impl ConnectionFamily {
    pub fn new(kind: KernelKind, lambda: f64) -> Self {
        ConnectionFamily {
            kind,
            lambda,
            sigma: 1.0,
        }
    }

    pub fn constant(p: f64) -> Self {
        Self::new(KernelKind::Constant { p }, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param("lambda", format!("must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::param("sigma", format!("must be finite and > 0, got {}", self.sigma)));
        }
        match self.kind {
            KernelKind::Constant { p } if !(0.0..=1.0).contains(&p) => {
                Err(Error::param("p", format!("must lie in [0, 1], got {p}")))
            }
            KernelKind::CpreEdge { l } | KernelKind::CpreVertex { l } if l == 0 => {
                Err(Error::param("l", "must be at least 1"))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            KernelKind::Constant { p } => format!("constant({p})"),
            KernelKind::Power => format!("power(lambda={})", self.lambda),
            KernelKind::CpprUniform => format!("cppr_uniform(lambda={})", self.lambda),
            KernelKind::CpprBernoulli => format!("cppr_bernoulli(lambda={})", self.lambda),
            KernelKind::CpreEdge { l } => format!("cpre_edge(l={l})"),
            KernelKind::CpreVertex { l } => format!("cpre_vertex(l={l})"),
        }
    }
}

#[inline]
fn isqrt_floor(x: f64) -> u64 {
    if x >= u64::MAX as f64 {
        return u32::MAX as u64;
    }
    (x.floor() as u64).isqrt()
}

/// `log(1 - e^a)` for `a <= 0`.
#[inline]
fn log1m_exp(a: f64) -> f64 {
    if a > -std::f64::consts::LN_2 {
        (-a.exp_m1()).ln()
    } else {
        (-a.exp()).ln_1p()
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

#[inline]
fn log_poisson_term(lambda: f64, i: u64) -> f64 {
    -lambda + i as f64 * lambda.ln() - ln_factorial(i)
}

/// `(log P(N < k), log P(N >= k))` for `N ~ Poisson(lambda)`.
pub fn log_poisson_split(lambda: f64, k: u64) -> (f64, f64) {
    if k == 0 {
        return (f64::NEG_INFINITY, 0.0);
    }
    if lambda == 0.0 {
        return (0.0, f64::NEG_INFINITY);
    }
    let lower: Vec<f64> = (0..k).map(|i| log_poisson_term(lambda, i)).collect();
    let mut upper = Vec::new();
    let mut i = k;
    loop {
        let t = log_poisson_term(lambda, i);
        upper.push(t);
        let head = upper[0].max(t);
        if (i as f64) > lambda && t < head - 40.0 {
            break;
        }
        i += 1;
    }
    let lo = log_sum_exp(&lower);
    let hi = log_sum_exp(&upper);
    // Each side is accurate on its own; keep the smaller one and derive the other.
    if hi < lo {
        (log1m_exp(hi), hi)
    } else {
        (lo, log1m_exp(lo))
    }
}

/// `P(Poisson(lambda) >= k)`, the probability that `k` unit-rate-`lambda`
/// arrivals fall in a unit interval.
pub fn poisson_tail(lambda: f64, k: u64) -> f64 {
    log_poisson_tail(lambda, k).exp()
}

pub fn log_poisson_tail(lambda: f64, k: u64) -> f64 {
    log_poisson_split(lambda, k).1
}

fn check_s(s: f64) -> Result<f64> {
    if s >= 0.0 {
        Ok(s)
    } else {
        Err(Error::NegativeArgument(s))
    }
}

/// `kappa(s)`.
pub fn eval_kernel(fam: &ConnectionFamily, s: f64) -> Result<f64> {
    let x = check_s(s)? * fam.sigma;
    let lam = fam.lambda;
    Ok(match fam.kind {
        KernelKind::Constant { p } => p,
        KernelKind::Power => {
            if x == 0.0 {
                1.0
            } else if lam == 0.0 {
                0.0
            } else {
                (x * (-(-lam).exp()).ln_1p()).exp()
            }
        }
        KernelKind::CpprUniform => -(-lam * (-x).exp()).exp_m1(),
        KernelKind::CpprBernoulli => poisson_tail(lam, isqrt_floor(x)),
        KernelKind::CpreEdge { l } => -(l as f64 * (-(-x).exp()).ln_1p()).exp_m1(),
        KernelKind::CpreVertex { l } => (-2.0 / l as f64).exp(),
    })
}

/// `log(1 - kappa(s))`, `-inf` when the object is surely open.
pub fn log_closed(fam: &ConnectionFamily, s: f64) -> Result<f64> {
    let x = check_s(s)? * fam.sigma;
    let lam = fam.lambda;
    Ok(match fam.kind {
        KernelKind::Constant { p } => (-p).ln_1p(),
        KernelKind::Power => {
            if x == 0.0 {
                f64::NEG_INFINITY
            } else if lam == 0.0 {
                0.0
            } else {
                log1m_exp(x * (-(-lam).exp()).ln_1p())
            }
        }
        KernelKind::CpprUniform => -lam * (-x).exp(),
        KernelKind::CpprBernoulli => log_poisson_split(lam, isqrt_floor(x)).0,
        KernelKind::CpreEdge { l } => l as f64 * (-(-x).exp()).ln_1p(),
        KernelKind::CpreVertex { l } => log1m_exp(-2.0 / l as f64),
    })
}

/// `log kappa(s)`, accurate also where `kappa` underflows.
pub fn log_open(fam: &ConnectionFamily, s: f64) -> Result<f64> {
    let x = check_s(s)? * fam.sigma;
    let lam = fam.lambda;
    Ok(match fam.kind {
        KernelKind::Constant { p } => p.ln(),
        KernelKind::Power => {
            if x == 0.0 {
                0.0
            } else if lam == 0.0 {
                f64::NEG_INFINITY
            } else {
                x * (-(-lam).exp()).ln_1p()
            }
        }
        KernelKind::CpprUniform => {
            if lam == 0.0 {
                f64::NEG_INFINITY
            } else {
                // log(1 - e^-y) with log y = log lam - x
                let log_y = lam.ln() - x;
                if log_y < -30.0 {
                    log_y - 0.5 * log_y.exp()
                } else {
                    log1m_exp(-log_y.exp())
                }
            }
        }
        KernelKind::CpprBernoulli => log_poisson_tail(lam, isqrt_floor(x)),
        KernelKind::CpreEdge { l } => {
            let a = l as f64 * (-(-x).exp()).ln_1p();
            if a > -1e-300 && x > 30.0 {
                (l as f64).ln() - x
            } else {
                log1m_exp(a)
            }
        }
        KernelKind::CpreVertex { l } => -2.0 / l as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub family: String,
    pub s_lo: u64,
    pub s_hi: u64,
    /// Minimum of `log kappa(s) + sigma s` over the grid.
    pub min_margin: f64,
    pub argmin: u64,
    pub violations: u64,
    pub first_violation: Option<u64>,
}

impl KernelReport {
    pub fn ok(&self) -> bool {
        self.violations == 0
    }
}

/// Check `kappa(s) >= e^{-sigma s}` on the integers `s_lo..=s_hi`, in log space.
pub fn check_kernel_bounds(fam: &ConnectionFamily, s_lo: u64, s_hi: u64) -> Result<KernelReport> {
    fam.validate()?;
    if s_lo == 0 || s_hi < s_lo {
        return Err(Error::param("s_grid", "need 1 <= s_lo <= s_hi"));
    }
    let mut report = KernelReport {
        family: fam.label(),
        s_lo,
        s_hi,
        min_margin: f64::INFINITY,
        argmin: s_lo,
        violations: 0,
        first_violation: None,
    };
    let bern = matches!(fam.kind, KernelKind::CpprBernoulli);
    let mut cached: Option<(u64, f64)> = None;
    for s in s_lo..=s_hi {
        let sf = s as f64;
        let lo = if bern {
            let k = isqrt_floor(sf * fam.sigma);
            match cached {
                Some((ck, v)) if ck == k => v,
                _ => {
                    let v = log_poisson_tail(fam.lambda, k);
                    cached = Some((k, v));
                    v
                }
            }
        } else {
            log_open(fam, sf)?
        };
        let margin = lo + fam.sigma * sf;
        if margin < report.min_margin {
            report.min_margin = margin;
            report.argmin = s;
        }
        if margin < -1e-12 {
            report.violations += 1;
            report.first_violation.get_or_insert(s);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fam(kind: KernelKind, lambda: f64) -> ConnectionFamily {
        ConnectionFamily::new(kind, lambda)
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn reference_values() {
        let p = fam(KernelKind::Power, 2f64.ln());
        assert!((eval_kernel(&p, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((log_closed(&p, 1.0).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        let u = fam(KernelKind::CpprUniform, 1.0);
        assert!((eval_kernel(&u, 0.0).unwrap() - 0.632_120_6).abs() < 1e-7);
        let u2 = fam(KernelKind::CpprUniform, 2.0);
        assert!((eval_kernel(&u2, 1.0).unwrap() - 0.520_858_291_211_984_7).abs() < 1e-12);
        assert!(matches!(eval_kernel(&u, -1.0), Err(Error::NegativeArgument(_))));
    }

    #[test]
    fn log_closed_without_underflow() {
        let u = fam(KernelKind::CpprUniform, 1.0);
        // Series oracle: log(1 - kappa) = -lambda e^{-s} exactly for this kind.
        let want = -(-50f64).exp();
        assert!(close(log_closed(&u, 50.0).unwrap(), want, 1e-12));
        assert_eq!(log_closed(&ConnectionFamily::constant(1.0), 3.0).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn poisson_tail_reference() {
        assert_eq!(poisson_tail(1.0, 0), 1.0);
        assert!((poisson_tail(1.0, 1) - 0.632_120_6).abs() < 1e-7);
        assert!((poisson_tail(2.0, 5) - 0.052_653_0).abs() < 1e-7);
        assert!((poisson_tail(2.0, 5) - (1.0 - 7.0 * (-2f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn poisson_tail_dominates_its_first_term() {
        for &lam in &[0.3, 1.0, 7.0, 40.0] {
            for k in 0..120u64 {
                let lb = log_poisson_term(lam, k);
                assert!(log_poisson_tail(lam, k) >= lb - 1e-12);
            }
        }
    }

    #[test]
    fn kernel_bound_examples() {
        let u = fam(KernelKind::CpprUniform, 2.0);
        assert!(check_kernel_bounds(&u, 1, 10_000).unwrap().ok());
        let c = ConnectionFamily::constant((-2f64).exp());
        let r = check_kernel_bounds(&c, 1, 1).unwrap();
        assert_eq!(r.violations, 1);
        assert_eq!(r.first_violation, Some(1));
    }

    #[test]
    fn bernoulli_on_squares() {
        let b = fam(KernelKind::CpprBernoulli, 4.0);
        for k in 0..200u64 {
            assert_eq!(eval_kernel(&b, (k * k) as f64).unwrap(), poisson_tail(4.0, k));
        }
        assert_eq!(eval_kernel(&b, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn cpre_kernels() {
        let e = fam(KernelKind::CpreEdge { l: 5 }, 0.0);
        let want = 1.0 - (1.0 - (-1f64).exp()).powi(5);
        assert!((eval_kernel(&e, 1.0).unwrap() - want).abs() < 1e-14);
        let v = fam(KernelKind::CpreVertex { l: 4 }, 0.0);
        assert!((eval_kernel(&v, 123.0).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        assert!(close(log_open(&e, 200.0).unwrap(), 5f64.ln() - 200.0, 1e-12));
    }

    #[test]
    fn serde_shape() {
        let f: ConnectionFamily =
            serde_json::from_str(r#"{"kind":"cppr_uniform","lambda":2.0}"#).unwrap();
        assert_eq!(f, fam(KernelKind::CpprUniform, 2.0));
        let g: ConnectionFamily = serde_json::from_str(r#"{"kind":"cpre_edge","l":3}"#).unwrap();
        assert_eq!(g.kind, KernelKind::CpreEdge { l: 3 });
        let bad = ConnectionFamily { lambda: -1.0, ..f };
        assert!(matches!(bad.validate(), Err(Error::InvalidParameter { ref name, .. }) if name == "lambda"));
    }
}
