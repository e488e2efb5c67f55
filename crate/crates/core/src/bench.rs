//! Named field-estimation scenarios with a closed-form truth, and the error
//! table comparing local-linear, Nadaraya-Watson and KDE estimates on them.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::baselines::kde_score;
use crate::datasets::{bench_mixture, gen_gaussian, gen_mixture};
use crate::divergence::Divergence;
use crate::error::{Error, Result};
use crate::kernel::{pooled_median_bandwidth, GaussianKernel};
use crate::local_linear::{velocity_field, FitOptions};
use crate::nw::nw_velocity;
use crate::sample::SampleSet;
use crate::score::{BuiltinScore, Component, GaussianScore, MixtureScore, ScoreOracle};
use crate::selection::{default_candidates, select_bandwidth, DEFAULT_MULTIPLIERS, MEDIAN_POINTS};

/// Queries per error evaluation.
pub const QUERIES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// `p = N(0, 1)`, `q = N(-1, 0.25²)`.
    Gauss,
    /// Three-component mixtures at `-5, 0, 5`, sd 0.5 for `p` and 1 for `q`.
    Mixture,
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss" => Ok(Scenario::Gauss),
            "mixture" => Ok(Scenario::Mixture),
            other => Err(Error::Parse(format!("unknown scenario '{other}' (expected gauss or mixture)"))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Gauss => "gauss",
            Scenario::Mixture => "mixture",
        })
    }
}

fn mixture_score(sd: f64) -> Result<MixtureScore> {
    MixtureScore::new(
        bench_mixture()
            .iter()
            .map(|c| Component {
                weight: c.weight,
                mean: vec![c.mean],
                sd,
            })
            .collect(),
    )
}

impl Scenario {
    /// Scores of `p` and `q`.
    pub fn scores(&self) -> Result<(BuiltinScore, BuiltinScore)> {
        Ok(match self {
            Scenario::Gauss => (
                BuiltinScore::Gauss(GaussianScore::new(vec![0.0], 1.0)?),
                BuiltinScore::Gauss(GaussianScore::new(vec![-1.0], 0.25)?),
            ),
            Scenario::Mixture => (BuiltinScore::Mixture(mixture_score(0.5)?), BuiltinScore::Mixture(mixture_score(1.0)?)),
        })
    }

    fn draw_q(&self, n: usize, seed: u64) -> Result<SampleSet> {
        match self {
            Scenario::Gauss => gen_gaussian(&[-1.0], 0.25, n, seed),
            Scenario::Mixture => {
                let mut comps = bench_mixture();
                comps.iter_mut().for_each(|c| c.sd = 1.0);
                gen_mixture(&comps, n, seed)
            }
        }
    }

    /// `n` draws from each of `p` and `q`, plus [`QUERIES`] fresh draws from
    /// `q` used as evaluation points.
    pub fn samples(&self, n: usize, seed: u64) -> Result<(SampleSet, SampleSet, SampleSet)> {
        let base = seed.wrapping_mul(3);
        let dp = match self {
            Scenario::Gauss => gen_gaussian(&[0.0], 1.0, n, base)?,
            Scenario::Mixture => gen_mixture(&bench_mixture(), n, base)?,
        };
        Ok((dp, self.draw_q(n, base + 1)?, self.draw_q(QUERIES, base + 2)?))
    }

    /// Exact `∇ log(p/q)` at every query.
    pub fn truth(&self, queries: &SampleSet) -> Result<Vec<f64>> {
        let (sp, sq) = self.scores()?;
        let (mut a, mut b) = ([0.0], [0.0]);
        Ok(queries
            .data()
            .rows()
            .into_iter()
            .map(|x| {
                let x = x.to_vec();
                sp.score(&x, &mut a);
                sq.score(&x, &mut b);
                a[0] - b[0]
            })
            .collect())
    }
}

/// Median absolute deviation of a one-column field from the truth.
pub fn median_abs_error(est: &[f64], truth: &[f64]) -> f64 {
    let mut e: Vec<f64> = est.iter().zip(truth).map(|(a, b)| (a - b).abs()).collect();
    crate::kernel::median_in_place(&mut e)
}

/// Leave-one-out KDE log-likelihood of `x` at bandwidth `sigma`.
fn kde_loo_loglik(x: &SampleSet, sigma: f64) -> Result<f64> {
    let kern = GaussianKernel::new(sigma)?;
    let data = x.data();
    let n = x.len();
    let d = x.dim() as f64;
    let log_norm = -d * (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let mut total = 0.0;
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            if i != j {
                s += kern.weight(data.row(i), data.row(j));
            }
        }
        total += (s / (n - 1) as f64).max(f64::MIN_POSITIVE).ln() + log_norm;
    }
    Ok(total / n as f64)
}

/// Bandwidth maximising the leave-one-out likelihood over the default
/// multiplier grid of the set's own median bandwidth.
pub fn kde_bandwidth(x: &SampleSet) -> Result<f64> {
    let m = pooled_median_bandwidth(x, x, MEDIAN_POINTS)?;
    let mut best = (f64::NEG_INFINITY, m);
    for k in DEFAULT_MULTIPLIERS {
        let ll = kde_loo_loglik(x, k * m)?;
        if ll > best.0 {
            best = (ll, k * m);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRow {
    pub scenario: Scenario,
    pub n: usize,
    pub seed: u64,
    pub method: String,
    /// Bandwidth used (`p`-set bandwidth for KDE).
    pub sigma: f64,
    pub median_abs_error: f64,
}

/// Local-linear estimate of `∇ log(p/q)` at the queries.
pub fn ll_field(dp: &SampleSet, dq: &SampleSet, queries: &SampleSet, sigma: f64, seed: u64) -> Result<Vec<f64>> {
    let opts = FitOptions {
        sigma,
        seed,
        ..FitOptions::default()
    };
    Ok(velocity_field(queries, dp, dq, Divergence::BackwardKl, &opts)?.column(0).to_vec())
}

/// Errors of LL (CV bandwidth), NW (same bandwidth, exact `p` score) and the
/// KDE score difference (likelihood-CV bandwidth per set).
pub fn field_errors(scenario: Scenario, n: usize, seed: u64, folds: usize) -> Result<Vec<ErrorRow>> {
    let (dp, dq, queries) = scenario.samples(n, seed)?;
    let truth = scenario.truth(&queries)?;
    let sigma = select_bandwidth(&dp, &dq, Divergence::BackwardKl, &default_candidates(&dp, &dq)?, folds, seed)?.chosen;
    let row = |method: &str, sigma: f64, est: Vec<f64>| ErrorRow {
        scenario,
        n,
        seed,
        method: method.into(),
        sigma,
        median_abs_error: median_abs_error(&est, &truth),
    };
    let ll = ll_field(&dp, &dq, &queries, sigma, seed)?;
    let (score_p, _) = scenario.scores()?;
    let nw = nw_velocity(&dq, &score_p, &queries, sigma)?.column(0).to_vec();
    let (sp, sq) = (kde_bandwidth(&dp)?, kde_bandwidth(&dq)?);
    let kde = (kde_score(&dp, &queries, sp)? - kde_score(&dq, &queries, sq)?).column(0).to_vec();
    Ok(vec![row("ll", sigma, ll), row("nw", sigma, nw), row("kde", sp, kde)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_truth_at_q_mean() {
        let q = SampleSet::new(ndarray::array![[-1.0], [0.0]]);
        let t = Scenario::Gauss.truth(&q).unwrap();
        assert!((t[0] - 1.0).abs() < 1e-12);
        assert!((t[1] - 16.0).abs() < 1e-12);
    }

    #[test]
    fn scenario_parsing() {
        assert_eq!("mixture".parse::<Scenario>().unwrap(), Scenario::Mixture);
        assert!("mnist".parse::<Scenario>().is_err());
        assert_eq!(Scenario::Gauss.to_string(), "gauss");
    }

    #[test]
    fn samples_are_deterministic() {
        let a = Scenario::Mixture.samples(50, 4).unwrap();
        let b = Scenario::Mixture.samples(50, 4).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.2.len(), QUERIES);
    }
}
