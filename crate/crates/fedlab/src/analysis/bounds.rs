//! Probability that a sampled round contains a malicious majority.
//!
//! With `C` of `N` clients sampled per round and a malicious fraction
//! `rho`, a round is lost to the attacker when at least `ceil(C/2)` of the
//! sampled clients are malicious. Three views of that probability live
//! here: a closed-form Chernoff-style expression, exact tail sums under
//! binomial or hypergeometric sampling, and a normal approximation.

use statrs::function::erf::erf;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// One majority-probability question: federation size, sample size, and
/// malicious fraction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MajorityQuery {
    /// Fraction of the federation that is malicious.
    pub rho: f64,
    /// Clients sampled per round (`C`).
    pub sampled: usize,
    /// Total federation size (`N`), used by the hypergeometric model.
    pub total: usize,
}

impl MajorityQuery {
    pub fn new(rho: f64, sampled: usize, total: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::invalid(format!("rho must be in [0, 1], got {rho}")));
        }
        if sampled == 0 {
            return Err(Error::invalid("sample size must be positive"));
        }
        if total < sampled {
            return Err(Error::invalid(format!(
                "cannot sample {sampled} clients from a federation of {total}"
            )));
        }
        Ok(MajorityQuery { rho, sampled, total })
    }

    /// Smallest malicious count that forms a majority: `ceil(C/2)`.
    pub fn majority_threshold(&self) -> usize {
        self.sampled.div_ceil(2)
    }
}

/// Which sampling model the exact tail sum assumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingModel {
    /// Each sampled client is malicious independently with probability rho.
    Binomial,
    /// Sampling without replacement from `round(rho * N)` malicious
    /// clients in a federation of `N`.
    Hypergeometric,
}

/// Closed-form expression `1 - (4 rho (1 - rho))^(C/2)` for the chance of
/// avoiding a malicious majority across the sampled committee.
///
/// The expression degenerates at the endpoints, where the product under
/// the root is zero; those cases are pinned to their limiting values
/// (certainty of avoidance at `rho = 0`, certain majority at `rho = 1`).
/// Around `rho = 0.5` the expression drops to zero, an artifact of the
/// derivation rather than the true probability; compare with
/// [`exact_majority_prob`] before reading much into mid-range values.
pub fn chernoff_majority_bound(query: &MajorityQuery) -> f64 {
    if query.rho == 0.0 {
        return 1.0;
    }
    if query.rho == 1.0 {
        return 0.0;
    }
    let base = 4.0 * query.rho * (1.0 - query.rho);
    1.0 - base.powf(query.sampled as f64 / 2.0)
}

fn ln_choose(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Exact probability of a malicious majority, `P(M >= ceil(C/2))`, under
/// the chosen sampling model. Tail terms are accumulated from log-space
/// pmf evaluations, so large committees stay accurate.
pub fn exact_majority_prob(query: &MajorityQuery, model: SamplingModel) -> Result<f64> {
    let c = query.sampled;
    let threshold = query.majority_threshold();
    let p: f64 = match model {
        SamplingModel::Binomial => {
            if query.rho == 0.0 {
                return Ok(0.0);
            }
            if query.rho == 1.0 {
                return Ok(1.0);
            }
            let ln_p = query.rho.ln();
            let ln_q = (1.0 - query.rho).ln();
            (threshold..=c)
                .map(|m| (ln_choose(c, m) + m as f64 * ln_p + (c - m) as f64 * ln_q).exp())
                .sum()
        }
        SamplingModel::Hypergeometric => {
            let malicious = (query.rho * query.total as f64 + 0.5).floor() as usize;
            let benign = query.total - malicious;
            let denom = ln_choose(query.total, c);
            (threshold..=c.min(malicious))
                .filter(|m| c - m <= benign)
                .map(|m| (ln_choose(malicious, m) + ln_choose(benign, c - m) - denom).exp())
                .sum()
        }
    };
    Ok(p.clamp(0.0, 1.0))
}

/// Central-limit view `Phi(sqrt(C) * (2 rho - 1))` of the majority
/// probability: one half at `rho = 0.5`, tending to 0 or 1 as the
/// committee grows depending on which side of one half rho falls.
pub fn normal_majority_approx(query: &MajorityQuery) -> f64 {
    let z = (query.sampled as f64).sqrt() * (2.0 * query.rho - 1.0);
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(rho: f64, c: usize, n: usize) -> MajorityQuery {
        MajorityQuery::new(rho, c, n).unwrap()
    }

    #[test]
    fn chernoff_reference_points() {
        let v = chernoff_majority_bound(&q(0.4, 20, 100));
        assert!((v - 0.33517).abs() < 1e-3, "got {v}");
        assert_eq!(chernoff_majority_bound(&q(0.5, 20, 100)), 0.0);
        assert!(chernoff_majority_bound(&q(0.1, 100, 1000)) > 0.9999);
        assert_eq!(chernoff_majority_bound(&q(0.0, 20, 100)), 1.0);
        assert_eq!(chernoff_majority_bound(&q(1.0, 20, 100)), 0.0);
    }

    #[test]
    fn binomial_reference_points() {
        assert_eq!(
            exact_majority_prob(&q(0.0, 20, 100), SamplingModel::Binomial).unwrap(),
            0.0
        );
        assert_eq!(
            exact_majority_prob(&q(1.0, 20, 100), SamplingModel::Binomial).unwrap(),
            1.0
        );
        let v = exact_majority_prob(&q(0.4, 20, 100), SamplingModel::Binomial).unwrap();
        assert!((v - 0.2447).abs() < 5e-4, "got {v}");
    }

    #[test]
    fn binomial_matches_direct_summation_small_c() {
        // Independent check without log-space tricks: direct f64 pmf.
        let query = q(0.3, 11, 50);
        let mut direct = 0.0;
        for m in 6..=11u32 {
            let mut choose = 1.0f64;
            for i in 0..m {
                choose *= (11 - i) as f64 / (i + 1) as f64;
            }
            direct += choose * 0.3f64.powi(m as i32) * 0.7f64.powi(11 - m as i32);
        }
        let v = exact_majority_prob(&query, SamplingModel::Binomial).unwrap();
        assert!((v - direct).abs() < 1e-12, "{v} vs {direct}");
    }

    #[test]
    fn hypergeometric_tightens_binomial() {
        let query = q(0.4, 20, 100);
        let hyper = exact_majority_prob(&query, SamplingModel::Hypergeometric).unwrap();
        let bin = exact_majority_prob(&query, SamplingModel::Binomial).unwrap();
        assert!((hyper - 0.2210).abs() < 5e-4, "got {hyper}");
        assert!(hyper < bin);
    }

    #[test]
    fn hypergeometric_degenerate_sampling_everyone() {
        // Sampling the whole federation: majority iff malicious are a majority.
        let all = exact_majority_prob(&q(0.6, 10, 10), SamplingModel::Hypergeometric).unwrap();
        assert!((all - 1.0).abs() < 1e-12);
        let none = exact_majority_prob(&q(0.4, 10, 10), SamplingModel::Hypergeometric).unwrap();
        assert!(none.abs() < 1e-12);
    }

    #[test]
    fn normal_reference_points() {
        assert!((normal_majority_approx(&q(0.5, 20, 100)) - 0.5).abs() < 1e-15);
        let v = normal_majority_approx(&q(0.4, 20, 100));
        assert!((v - 0.18555).abs() < 1e-4, "got {v}");
        assert!(normal_majority_approx(&q(0.6, 1000, 10000)) > 1.0 - 1e-6);
        assert!(normal_majority_approx(&q(0.4, 1000, 10000)) < 1e-6);
    }

    #[test]
    fn normal_is_monotone_in_rho() {
        let mut prev = -1.0;
        for i in 0..=100 {
            let rho = i as f64 / 100.0;
            let v = normal_majority_approx(&q(rho, 25, 100));
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn exact_is_monotone_in_rho() {
        for model in [SamplingModel::Binomial, SamplingModel::Hypergeometric] {
            let mut prev = -1.0;
            for i in 0..=50 {
                let rho = i as f64 / 50.0;
                let v = exact_majority_prob(&q(rho, 21, 200), model).unwrap();
                assert!(v >= prev - 1e-12, "model {model:?} rho {rho}: {v} < {prev}");
                prev = v;
            }
        }
    }

    #[test]
    fn query_validation() {
        assert!(MajorityQuery::new(-0.1, 10, 100).is_err());
        assert!(MajorityQuery::new(1.1, 10, 100).is_err());
        assert!(MajorityQuery::new(0.4, 0, 100).is_err());
        assert!(MajorityQuery::new(0.4, 101, 100).is_err());
    }
}
