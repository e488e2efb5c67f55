//! Bandwidth selection by a held-out variational criterion, and divergence
//! estimates from the same machinery.

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::divergence::{Divergence, Generator};
use crate::error::{Error, Result};
use crate::kernel::pooled_median_bandwidth;
use crate::local_linear::{fits_each, FitOptions};
use crate::rng::{stream, STREAM_FOLDS};
use crate::sample::{check_same_dim, SampleSet};

/// Rows used by the pooled median heuristic.
pub const MEDIAN_POINTS: usize = 1000;

/// Multipliers of the median bandwidth forming the default candidate grid.
pub const DEFAULT_MULTIPLIERS: [f64; 5] = [0.125, 0.25, 0.5, 1.0, 2.0];

pub const DEFAULT_FOLDS: usize = 5;

/// Held-out rows scored per fold and side; the rest of a larger fold only
/// trains.
pub const HELD_OUT_POINTS: usize = 250;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    pub candidates: Vec<f64>,
    /// Held-out criterion per candidate; `-inf` when the candidate failed.
    pub criterion: Vec<f64>,
    pub chosen: f64,
    pub folds: usize,
}

impl SelectionReport {
    pub fn chosen_index(&self) -> usize {
        self.candidates.iter().position(|&c| c == self.chosen).unwrap_or(0)
    }
}

/// How a single bandwidth is picked for a one-shot estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    Median,
    /// Cross-validated over the default multiplier grid.
    Cv,
}

/// `{1/8, 1/4, 1/2, 1, 2} × median`, the median taken over the pooled sets.
pub fn default_candidates(dp: &SampleSet, dq: &SampleSet) -> Result<Vec<f64>> {
    let m = pooled_median_bandwidth(dp, dq, MEDIAN_POINTS)?;
    Ok(DEFAULT_MULTIPLIERS.iter().map(|k| k * m).collect())
}

fn fold_assignment(n: usize, folds: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut fold = vec![0; n];
    for (pos, &i) in idx.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

fn split(set: &SampleSet, fold: &[usize], k: usize) -> (SampleSet, SampleSet) {
    let train: Vec<usize> = (0..set.len()).filter(|&i| fold[i] != k).collect();
    let test: Vec<usize> = (0..set.len()).filter(|&i| fold[i] == k).take(HELD_OUT_POINTS).collect();
    (set.select(&train), set.select(&test))
}

/// Held-out bound `mean_p d̂ - mean_q ψ*(d̂)` averaged over folds, where `d̂`
/// at each held-out point comes from a local fit on the training split,
/// clipped to log-ratios within `±ln(training rows)` (ratios beyond the
/// sample size are not identifiable; any witness gives a valid bound).
/// Held-out points with no training neighbours are skipped; a fold with no
/// usable point on either side makes the value `-inf`.
fn cv_criterion(
    dp: &SampleSet,
    dq: &SampleSet,
    gen: Generator,
    sigma: f64,
    folds: usize,
    opts: &FitOptions,
) -> Result<f64> {
    let mut rng = stream(opts.seed, STREAM_FOLDS);
    let fp = fold_assignment(dp.len(), folds, &mut rng);
    let fq = fold_assignment(dq.len(), folds, &mut rng);
    let fit_opts = FitOptions { sigma, ..*opts };
    let mut total = 0.0;
    for k in 0..folds {
        let (p_train, p_test) = split(dp, &fp, k);
        let (q_train, q_test) = split(dq, &fq, k);
        let reach = ((p_train.len() + q_train.len()) as f64).ln().min(opts.clamp);
        let conj = gen.clamped(reach);
        let bounds = conj.bounds();
        let mut sums = [0.0; 2];
        for (side, test) in [&p_test, &q_test].into_iter().enumerate() {
            let mut acc = 0.0;
            let mut used = 0usize;
            for fit in fits_each(test, &p_train, &q_train, gen, &fit_opts)? {
                match fit {
                    Ok(f) => {
                        let d = f.value_at_query().clamp(bounds.lo, bounds.hi);
                        acc += if side == 0 { d } else { conj.value(d) };
                        used += 1;
                    }
                    Err(Error::DegenerateNeighborhood { .. }) | Err(Error::RankDeficient { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            if used == 0 {
                return Ok(f64::NEG_INFINITY);
            }
            sums[side] = acc / used as f64;
        }
        let v = sums[0] - sums[1];
        if !v.is_finite() {
            return Ok(f64::NEG_INFINITY);
        }
        total += v;
    }
    Ok(total / folds as f64)
}

fn check_sets(dp: &SampleSet, dq: &SampleSet, folds: usize) -> Result<()> {
    if dp.is_empty() {
        return Err(Error::Empty("Dp"));
    }
    if dq.is_empty() {
        return Err(Error::Empty("Dq"));
    }
    check_same_dim("Dp and Dq dimension", dp.dim(), dq.dim())?;
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    if dp.len() < folds || dq.len() < folds {
        return Err(Error::InvalidArgument(format!(
            "{folds} folds need at least {folds} rows per set (got {} and {})",
            dp.len(),
            dq.len()
        )));
    }
    Ok(())
}

pub(crate) fn select_with(
    dp: &SampleSet,
    dq: &SampleSet,
    gen: Generator,
    candidates: &[f64],
    folds: usize,
    opts: &FitOptions,
) -> Result<SelectionReport> {
    check_sets(dp, dq, folds)?;
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no bandwidth candidates".into()));
    }
    if let Some(bad) = candidates.iter().find(|c| !(**c > 0.0) || !c.is_finite()) {
        return Err(Error::InvalidArgument(format!("bandwidth candidate {bad} is not positive")));
    }
    let mut criterion = Vec::with_capacity(candidates.len());
    for &s in candidates {
        criterion.push(cv_criterion(dp, dq, gen, s, folds, opts)?);
    }
    let mut best = 0;
    for i in 1..candidates.len() {
        let (c, b) = (criterion[i], criterion[best]);
        if c > b || (c == b && candidates[i] < candidates[best]) {
            best = i;
        }
    }
    Ok(SelectionReport {
        candidates: candidates.to_vec(),
        criterion,
        chosen: candidates[best],
        folds,
    })
}

/// k-fold selection of the bandwidth for `field_div`'s local fits. Fold
/// splits are drawn from `seed`.
pub fn select_bandwidth(
    dp: &SampleSet,
    dq: &SampleSet,
    field_div: Divergence,
    candidates: &[f64],
    folds: usize,
    seed: u64,
) -> Result<SelectionReport> {
    let opts = FitOptions {
        seed,
        ..FitOptions::default()
    };
    select_with(dp, dq, field_div.generator(), candidates, folds, &opts)
}

/// Generator whose `ψ` is the divergence's own `f` up to a linear term, so
/// that the held-out bound estimates `D_which[p, q]`.
pub fn bound_generator(which: Divergence) -> Result<Generator> {
    match which {
        Divergence::ForwardKl => Ok(Generator::Entropy),
        Divergence::BackwardKl => Ok(Generator::NegLog),
        Divergence::PearsonChi2 => Ok(Generator::Quadratic),
        Divergence::NeymanChi2 => Err(Error::InvalidArgument(
            "no variational estimate is registered for the Neyman divergence".into(),
        )),
    }
}

/// Held-out lower-bound estimate of `D_which[p, q]` from samples.
///
/// `opts.seed` drives the fold split; `opts.sigma` is ignored in favour of
/// `bandwidth`. The value may be slightly negative when the sets match.
pub fn divergence_estimate(
    dp: &SampleSet,
    dq: &SampleSet,
    which: Divergence,
    bandwidth: &Bandwidth,
    folds: usize,
    opts: &FitOptions,
) -> Result<f64> {
    let gen = bound_generator(which)?;
    check_sets(dp, dq, folds)?;
    match bandwidth {
        Bandwidth::Fixed(s) => cv_criterion(dp, dq, gen, *s, folds, opts),
        Bandwidth::Median => {
            let s = pooled_median_bandwidth(dp, dq, MEDIAN_POINTS)?;
            cv_criterion(dp, dq, gen, s, folds, opts)
        }
        Bandwidth::Cv => {
            let report = select_with(dp, dq, gen, &default_candidates(dp, dq)?, folds, opts)?;
            Ok(report.criterion[report.chosen_index()])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn line(n: usize, shift: f64) -> SampleSet {
        SampleSet::new(Array2::from_shape_fn((n, 1), |(i, _)| shift + i as f64 / n as f64))
    }

    #[test]
    fn single_candidate_is_chosen() {
        let r = select_bandwidth(&line(20, 0.0), &line(20, 0.1), Divergence::BackwardKl, &[0.3], 2, 1).unwrap();
        assert_eq!(r.chosen, 0.3);
        assert_eq!(r.criterion.len(), 1);
    }

    #[test]
    fn argument_errors() {
        let a = line(10, 0.0);
        assert!(select_bandwidth(&a, &a, Divergence::BackwardKl, &[], 2, 0).is_err());
        assert!(select_bandwidth(&a, &a, Divergence::BackwardKl, &[0.1], 1, 0).is_err());
        assert!(select_bandwidth(&a, &a, Divergence::BackwardKl, &[-0.1], 2, 0).is_err());
        let empty = SampleSet::new(Array2::zeros((0, 1)));
        assert!(divergence_estimate(&a, &empty, Divergence::ForwardKl, &Bandwidth::Median, 2, &FitOptions::default()).is_err());
        assert!(divergence_estimate(&a, &a, Divergence::NeymanChi2, &Bandwidth::Median, 2, &FitOptions::default()).is_err());
    }

    #[test]
    fn isolated_candidate_scores_minus_infinity() {
        // Points 10 apart; a tiny bandwidth leaves every held-out point isolated.
        let a = SampleSet::new(Array2::from_shape_fn((6, 1), |(i, _)| 10.0 * i as f64));
        let r = select_bandwidth(&a, &a, Divergence::BackwardKl, &[0.01, 20.0], 2, 3).unwrap();
        assert_eq!(r.criterion[0], f64::NEG_INFINITY);
        assert_eq!(r.chosen, 20.0);
    }

    #[test]
    fn ties_prefer_smaller_bandwidth() {
        let a = SampleSet::new(Array2::from_shape_fn((6, 1), |(i, _)| 10.0 * i as f64));
        let r = select_bandwidth(&a, &a, Divergence::BackwardKl, &[0.02, 0.01], 2, 3).unwrap();
        assert_eq!(r.chosen, 0.01);
    }
}
