//! Monte-Carlo estimate reports and the small amount of statistics they need.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, Normal};

use crate::numerics::pairwise_sum;

/// Outcome of comparing an estimate with a theoretical bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Consistent,
    Violated,
    Inconclusive,
}

/// Confidence level of every reported interval.
pub const CI_LEVEL: f64 = 0.99;
/// `max/mean` above which a moment estimate is treated as heavy-tailed.
pub const HEAVY_TAIL_RATIO: f64 = 50.0;
/// Largest excluded (time-capped) fraction that still allows a verdict.
pub const MAX_EXCLUDED_FRACTION: f64 = 1e-4;

/// Two-sided normal quantile for [`CI_LEVEL`].
pub fn ci_z() -> f64 {
    normal_quantile(0.5 + CI_LEVEL / 2.0)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Sample mean, standard deviation and maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: u64,
    pub mean: f64,
    pub sd: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Summary {
        let n = xs.len();
        if n == 0 {
            return Summary {
                n: 0,
                mean: f64::NAN,
                sd: f64::NAN,
                max: f64::NAN,
            };
        }
        let mean = pairwise_sum(xs) / n as f64;
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = if n > 1 {
            pairwise_sum(&dev) / (n - 1) as f64
        } else {
            0.0
        };
        Summary {
            n: n as u64,
            mean,
            sd: var.sqrt(),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn std_err(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sd / (self.n as f64).sqrt()
        }
    }
}

/// A point estimate with a 99% normal-approximation interval, optionally
/// compared against an upper bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub quantity: String,
    pub n: u64,
    pub point: f64,
    pub std_err: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub bound: Option<f64>,
    pub verdict: Verdict,
    pub seed: u64,
    pub excluded_count: u64,
    /// `max/mean` of the sample.
    pub max_over_mean: f64,
}

impl EstimateReport {
    /// Builds the report for an upper bound check.
    ///
    /// `violated` iff `ci_low > bound`; `consistent` iff `ci_high ≤ bound`;
    /// straddling intervals, heavy tails and too many excluded replications
    /// are `inconclusive`. Without a bound the verdict is `consistent` unless
    /// one of the data-quality gates trips.
    pub fn upper_bound_check(
        quantity: impl Into<String>,
        sample: &[f64],
        excluded_count: u64,
        bound: Option<f64>,
        seed: u64,
    ) -> Self {
        let mut r = Self::from_sample(quantity, sample, excluded_count, seed);
        r.bound = bound;
        let total = r.n + excluded_count;
        let gated = r.n == 0
            || (excluded_count > 0 && excluded_count as f64 >= MAX_EXCLUDED_FRACTION * total as f64)
            || r.max_over_mean > HEAVY_TAIL_RATIO;
        r.verdict = if gated {
            Verdict::Inconclusive
        } else {
            match bound {
                None => Verdict::Consistent,
                Some(b) if r.ci_low > b => Verdict::Violated,
                Some(b) if r.ci_high <= b => Verdict::Consistent,
                Some(_) => Verdict::Inconclusive,
            }
        };
        r
    }

    /// Builds the report for a quantity whose mean should be zero; consistent
    /// iff `|point| ≤ z_limit · std_err`.
    pub fn zero_mean_check(quantity: impl Into<String>, sample: &[f64], seed: u64, z_limit: f64) -> Self {
        let mut r = Self::from_sample(quantity, sample, 0, seed);
        r.bound = Some(0.0);
        r.verdict = if r.point.abs() <= z_limit * r.std_err {
            Verdict::Consistent
        } else {
            Verdict::Violated
        };
        r
    }

    fn from_sample(quantity: impl Into<String>, sample: &[f64], excluded_count: u64, seed: u64) -> Self {
        let s = Summary::of(sample);
        let se = s.std_err();
        let half = ci_z() * se;
        let max_over_mean = if s.mean > 0.0 { s.max / s.mean } else { 0.0 };
        EstimateReport {
            quantity: quantity.into(),
            n: s.n,
            point: s.mean,
            std_err: se,
            ci_low: s.mean - half,
            ci_high: s.mean + half,
            bound: None,
            verdict: Verdict::Inconclusive,
            seed,
            excluded_count,
            max_over_mean,
        }
    }

    pub const CSV_HEADER: &'static str = "quantity,n,point,std_err,ci_low,ci_high,bound,verdict,seed,excluded_count";

    pub fn csv_row(&self) -> String {
        let verdict = match self.verdict {
            Verdict::Consistent => "consistent",
            Verdict::Violated => "violated",
            Verdict::Inconclusive => "inconclusive",
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.quantity,
            self.n,
            self.point,
            self.std_err,
            self.ci_low,
            self.ci_high,
            self.bound.map(|b| b.to_string()).unwrap_or_default(),
            verdict,
            self.seed,
            self.excluded_count
        )
    }
}

/// One-sided Clopper–Pearson lower confidence bound for a binomial
/// proportion at level `level`.
pub fn binomial_lower_bound(hits: u64, n: u64, level: f64) -> f64 {
    if hits == 0 || n == 0 {
        return 0.0;
    }
    let alpha = 1.0 - level;
    let beta = Beta::new(hits as f64, (n - hits) as f64 + 1.0).expect("positive shape parameters");
    beta.inverse_cdf(alpha)
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsTest {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < n && j < m {
        let v = a[i].min(b[j]);
        while i < n && a[i] <= v {
            i += 1;
        }
        while j < m && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    KsTest {
        statistic: d,
        p_value: kolmogorov_tail(lambda),
    }
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
