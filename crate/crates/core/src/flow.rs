//! Euler simulation of Wasserstein gradient flows with estimated velocity
//! fields, plus the imputation and domain-alignment flows built on it.

use std::collections::BTreeMap;

use ndarray::{s, Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::datasets::{destandardize, standardize};
use crate::divergence::{Divergence, Generator};
use crate::error::{Error, Result};
use crate::kernel::pooled_median_bandwidth;
use crate::local_linear::{fits, slopes, FitOptions};
use crate::nw::nw_velocity;
use crate::rng::{stream, STREAM_IMPUTE_INIT};
use crate::sample::{check_same_dim, SampleSet};
use crate::score::ScoreOracle;
use crate::selection::{default_candidates, divergence_estimate, select_with, Bandwidth, MEDIAN_POINTS};
use crate::subspace::{search_feature_map, FeatureMap, SubspaceOptions};

/// Consecutive monitor increases that trigger a warning record.
pub const INCREASE_WARNING_RUN: usize = 25;

/// Bandwidth policy during a flow.
#[derive(Debug, Clone, PartialEq)]
pub enum SigmaPolicy {
    Fixed(f64),
    /// Pooled median heuristic, recomputed every iteration.
    Median,
    /// Cross-validated over the default grid every `every` iterations.
    Cv { every: usize },
}

impl Default for SigmaPolicy {
    fn default() -> Self {
        SigmaPolicy::Cv { every: 10 }
    }
}

impl std::str::FromStr for SigmaPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(SigmaPolicy::Median),
            "cv" => Ok(SigmaPolicy::default()),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0 && v.is_finite())
                .map(SigmaPolicy::Fixed)
                .ok_or_else(|| Error::Parse(format!("sigma must be a positive number, 'median' or 'cv', got '{other}'"))),
        }
    }
}

/// Resolves a [`SigmaPolicy`] iteration by iteration.
#[derive(Debug, Clone)]
pub(crate) struct SigmaTracker {
    policy: SigmaPolicy,
    current: Option<f64>,
    folds: usize,
}

impl SigmaTracker {
    pub(crate) fn new(policy: SigmaPolicy, folds: usize) -> Result<Self> {
        if let SigmaPolicy::Cv { every: 0 } = policy {
            return Err(Error::InvalidArgument("cv cadence must be at least 1".into()));
        }
        Ok(Self {
            policy,
            current: None,
            folds,
        })
    }

    pub(crate) fn sigma(&mut self, t: usize, dp: &SampleSet, dq: &SampleSet, gen: Generator, opts: &FitOptions) -> Result<f64> {
        let s = match &self.policy {
            SigmaPolicy::Fixed(s) => *s,
            SigmaPolicy::Median => pooled_median_bandwidth(dp, dq, MEDIAN_POINTS)?,
            SigmaPolicy::Cv { every } => match self.current {
                Some(s) if !t.is_multiple_of(*every) => s,
                _ => {
                    let cands = default_candidates(dp, dq)?;
                    select_with(dp, dq, gen, &cands, self.folds, opts)?.chosen
                }
            },
        };
        self.current = Some(s);
        Ok(s)
    }
}

/// Particles at iteration `t` with the bookkeeping of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub particles: Array2<f64>,
    pub t: usize,
    pub eta: f64,
    /// `true` marks a frozen (observed) entry.
    pub mask: Option<Array2<bool>>,
    /// `(t, monitor)` pairs.
    pub history: Vec<(usize, f64)>,
    /// `(t, particles)` snapshots.
    pub trajectory: Vec<(usize, Array2<f64>)>,
    /// Bandwidth used at each iteration.
    pub sigmas: Vec<f64>,
    pub warnings: Vec<String>,
    /// Feature map used by a feature-space flow.
    pub feature_map: Option<FeatureMap>,
}

impl FlowState {
    pub fn new(particles: Array2<f64>, eta: f64) -> Result<Self> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::InvalidArgument(format!("step size must be non-negative, got {eta}")));
        }
        Ok(Self {
            particles,
            t: 0,
            eta,
            mask: None,
            history: Vec::new(),
            trajectory: Vec::new(),
            sigmas: Vec::new(),
            warnings: Vec::new(),
            feature_map: None,
        })
    }

    pub fn with_mask(mut self, mask: Array2<bool>) -> Result<Self> {
        if mask.dim() != self.particles.dim() {
            return Err(Error::DimensionMismatch(format!(
                "mask is {:?}, particles are {:?}",
                mask.dim(),
                self.particles.dim()
            )));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    /// `x ← x + η·field` on free entries; `t ← t + 1`.
    pub fn step(&mut self, field: ArrayView2<f64>) -> Result<()> {
        if field.dim() != self.particles.dim() {
            return Err(Error::DimensionMismatch(format!(
                "field is {:?}, particles are {:?}",
                field.dim(),
                self.particles.dim()
            )));
        }
        let frozen = |i: usize, j: usize| self.mask.as_ref().is_some_and(|m| m[[i, j]]);
        for ((i, j), v) in field.indexed_iter() {
            if !frozen(i, j) && !v.is_finite() {
                return Err(Error::NonFiniteField { row: i, col: j });
            }
        }
        let eta = self.eta;
        for ((i, j), x) in self.particles.indexed_iter_mut() {
            if !self.mask.as_ref().is_some_and(|m| m[[i, j]]) {
                *x += eta * field[[i, j]];
            }
        }
        self.t += 1;
        Ok(())
    }

    pub fn last_monitor(&self) -> Option<f64> {
        self.history.last().map(|h| h.1)
    }

    fn record_monitor(&mut self, value: f64) {
        self.history.push((self.t, value));
        let run = self
            .history
            .windows(2)
            .rev()
            .take_while(|w| w[1].1 > w[0].1)
            .count();
        if run > 0 && run % INCREASE_WARNING_RUN == 0 {
            self.warnings.push(format!(
                "divergence estimate increased for {run} consecutive iterations (t = {})",
                self.t
            ));
        }
    }
}

/// Where the velocity field comes from.
#[derive(Clone, Copy)]
pub enum FieldSource<'a> {
    /// Local-linear fits from the two samples.
    LocalLinear,
    /// Nadaraya-Watson with a closed-form target score (backward KL only).
    NadarayaWatson(&'a dyn ScoreOracle),
    /// Local-linear fits in an `m`-dimensional learned feature space,
    /// lifted back; the map is searched once from the initial particles.
    Subspace { m: usize, outer_iters: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub field: Divergence,
    pub iters: usize,
    pub eta: f64,
    pub sigma: SigmaPolicy,
    /// Record the held-out estimate of `KL[q_t, p]`.
    pub monitor: bool,
    /// Monitor cadence in iterations; `t = 0` and the last iteration are
    /// always recorded.
    pub monitor_every: usize,
    pub monitor_folds: usize,
    pub cv_folds: usize,
    pub snapshot_every: Option<usize>,
    pub fit: FitOptions,
    pub subspace: SubspaceOptions,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            field: Divergence::BackwardKl,
            iters: 20,
            eta: 0.1,
            sigma: SigmaPolicy::default(),
            monitor: true,
            monitor_every: 1,
            monitor_folds: 2,
            cv_folds: 5,
            snapshot_every: None,
            fit: FitOptions::default(),
            subspace: SubspaceOptions::default(),
            seed: 0,
        }
    }
}

/// Held-out estimate of `KL[particles, target]`.
pub fn monitor_kl(particles: &SampleSet, target: &SampleSet, folds: usize, seed: u64) -> Result<f64> {
    let opts = FitOptions {
        seed,
        ..FitOptions::default()
    };
    divergence_estimate(particles, target, Divergence::ForwardKl, &Bandwidth::Cv, folds, &opts)
}

/// Runs `iters` Euler steps of the flow of `D_field[p, q_t]` from `q0`
/// towards the sample `dp` of the target.
pub fn run_flow(dp: &SampleSet, q0: &SampleSet, config: &FlowConfig, source: FieldSource<'_>) -> Result<FlowState> {
    if config.iters < 1 {
        return Err(Error::InvalidArgument("iters must be at least 1".into()));
    }
    if config.monitor_every < 1 {
        return Err(Error::InvalidArgument("monitor cadence must be at least 1".into()));
    }
    if dp.is_empty() {
        return Err(Error::Empty("target sample"));
    }
    if q0.is_empty() {
        return Err(Error::Empty("initial particles"));
    }
    check_same_dim("target and particle dimension", dp.dim(), q0.dim())?;
    if let FieldSource::NadarayaWatson(score) = source {
        if config.field != Divergence::BackwardKl {
            return Err(Error::InvalidArgument("the Nadaraya-Watson field is only defined for bkl".into()));
        }
        check_same_dim("score and data dimension", score.dim(), dp.dim())?;
    }
    let fit = FitOptions {
        seed: config.seed,
        ..config.fit
    };
    let gen = config.field.generator();
    let mut sigma = SigmaTracker::new(config.sigma.clone(), config.cv_folds)?;
    let mut state = FlowState::new(q0.data().to_owned(), config.eta)?;

    if let FieldSource::Subspace { m, outer_iters } = source {
        let opts = SubspaceOptions {
            seed: config.seed,
            ..config.subspace.clone()
        };
        let found = search_feature_map(dp, q0, m, config.field, outer_iters, &opts)?;
        state.feature_map = Some(found.map);
    }
    let snapshot = |state: &mut FlowState| {
        if let Some(k) = config.snapshot_every {
            if k > 0 && state.t.is_multiple_of(k) {
                state.trajectory.push((state.t, state.particles.clone()));
            }
        }
    };
    snapshot(&mut state);
    if config.monitor {
        let v = monitor_kl(&SampleSet::new(state.particles.clone()), dp, config.monitor_folds, config.seed)?;
        state.record_monitor(v);
    }

    for _ in 0..config.iters {
        let q = SampleSet::new(state.particles.clone());
        let field = match source {
            FieldSource::LocalLinear => {
                let s = sigma.sigma(state.t, dp, &q, gen, &fit)?;
                state.sigmas.push(s);
                slopes(&fits(&q, dp, &q, gen, &FitOptions { sigma: s, ..fit })?, q.dim())
            }
            FieldSource::NadarayaWatson(score) => {
                let s = sigma.sigma(state.t, dp, &q, gen, &fit)?;
                state.sigmas.push(s);
                nw_velocity(&q, score, &q, s)?
            }
            FieldSource::Subspace { .. } => {
                let map = state.feature_map.as_ref().expect("map searched above");
                let zp = map.project(dp)?;
                let zq = map.project(&q)?;
                let s = sigma.sigma(state.t, &zp, &zq, gen, &fit)?;
                state.sigmas.push(s);
                let low = slopes(&fits(&zq, &zp, &zq, gen, &FitOptions { sigma: s, ..fit })?, zq.dim());
                map.lift_field(low.view())?
            }
        };
        state.step(field.view())?;
        snapshot(&mut state);
        if config.monitor && (state.t % config.monitor_every == 0 || state.t == config.iters) {
            let v = monitor_kl(&SampleSet::new(state.particles.clone()), dp, config.monitor_folds, config.seed)?;
            state.record_monitor(v);
        }
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputeConfig {
    pub field: Divergence,
    pub iters: usize,
    pub eta: f64,
    pub sigma: SigmaPolicy,
    pub cv_folds: usize,
    pub fit: FitOptions,
    pub seed: u64,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        Self {
            field: Divergence::ForwardKl,
            iters: 100,
            eta: 0.1,
            sigma: SigmaPolicy::Median,
            cv_folds: 5,
            fit: FitOptions::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImputeRecord {
    pub iter: usize,
    pub sigma: f64,
    /// Root-mean-square update of the missing entries (standardised units).
    pub step_rms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputeResult {
    pub imputed: SampleSet,
    pub records: Vec<ImputeRecord>,
}

/// Moves the missing entries of `x` (mask `true` = observed) along the
/// estimated field that removes the dependence between values and
/// missingness pattern. For rows sharing a pattern the field is the slope of
/// the ratio of all current rows to the rows with that pattern, fitted in
/// value space (an exact-match kernel on the discrete pattern). Observed
/// entries are returned bit-identical.
pub fn impute(x: &SampleSet, mask: &Array2<bool>, config: &ImputeConfig) -> Result<ImputeResult> {
    check_same_dim("mask rows", mask.nrows(), x.len())?;
    check_same_dim("mask columns", mask.ncols(), x.dim())?;
    if config.iters < 1 {
        return Err(Error::InvalidArgument("iters must be at least 1".into()));
    }
    let d = x.dim();
    let missing: Vec<(usize, usize)> = mask.indexed_iter().filter(|(_, m)| !**m).map(|(ij, _)| ij).collect();
    if missing.is_empty() {
        return Ok(ImputeResult {
            imputed: x.clone(),
            records: Vec::new(),
        });
    }
    let mut groups: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
    for (i, row) in mask.rows().into_iter().enumerate() {
        if row.iter().any(|m| !m) {
            groups.entry(row.to_vec()).or_default().push(i);
        }
    }
    let incomplete: Vec<usize> = groups.values().flatten().copied().collect();

    let (std_x, stats) = standardize(x, mask)?;
    let mut init_rng = stream(config.seed, STREAM_IMPUTE_INIT);
    let mut cur = std_x.into_data();
    for &(i, j) in &missing {
        cur[[i, j]] = StandardNormal.sample(&mut init_rng);
    }
    let gen = config.field.generator();
    let fit = FitOptions {
        seed: config.seed,
        ..config.fit
    };
    let mut sigma = SigmaTracker::new(config.sigma.clone(), config.cv_folds)?;
    let mut records = Vec::with_capacity(config.iters);
    for t in 0..config.iters {
        let all = SampleSet::new(cur.clone());
        let s = sigma.sigma(t, &all, &all.select(&incomplete), gen, &fit)?;
        let opts = FitOptions { sigma: s, ..fit };
        let mut moves = Vec::with_capacity(missing.len());
        for (pattern, rows) in &groups {
            let group = all.select(rows);
            let found = fits(&group, &all, &group, gen, &opts)?;
            for (&i, f) in rows.iter().zip(&found) {
                for j in (0..d).filter(|&j| !pattern[j]) {
                    let v = f.w[j];
                    if !v.is_finite() {
                        return Err(Error::NonFiniteField { row: i, col: j });
                    }
                    moves.push((i, j, config.eta * v));
                }
            }
        }
        let mut sq = 0.0;
        for (i, j, v) in moves {
            cur[[i, j]] += v;
            sq += v * v;
        }
        records.push(ImputeRecord {
            iter: t + 1,
            sigma: s,
            step_rms: (sq / missing.len() as f64).sqrt(),
        });
    }
    let restored = destandardize(&SampleSet::new(cur), &stats)?;
    let mut out = x.data().to_owned();
    for &(i, j) in &missing {
        out[[i, j]] = restored.data()[[i, j]];
    }
    Ok(ImputeResult {
        imputed: SampleSet::new(out),
        records,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptConfig {
    pub iters: usize,
    pub eta: f64,
    /// Scale of the one-hot label embedding; 0 aligns marginals only.
    pub label_scale: f64,
    pub sigma: SigmaPolicy,
    pub cv_folds: usize,
    pub fit: FitOptions,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            iters: 50,
            eta: 0.1,
            label_scale: 1.0,
            sigma: SigmaPolicy::Median,
            cv_folds: 5,
            fit: FitOptions::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptRecord {
    pub iter: usize,
    pub sigma: f64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptResult {
    /// Transported source features with their labels.
    pub transported: SampleSet,
    /// Target accuracy of 1-NN trained on the untransported source.
    pub accuracy_before: Option<f64>,
    /// Target accuracy of 1-NN trained on the transported source.
    pub accuracy_after: Option<f64>,
    pub records: Vec<AdaptRecord>,
}

/// 1-nearest-neighbour predictions for every row of `queries`.
pub fn nearest_neighbor_predict(train: ArrayView2<f64>, labels: &[usize], queries: ArrayView2<f64>) -> Vec<usize> {
    queries
        .rows()
        .into_iter()
        .map(|q| {
            let mut best = (f64::INFINITY, 0);
            for (i, x) in train.rows().into_iter().enumerate() {
                let d: f64 = x.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, labels[i]);
                }
            }
            best.1
        })
        .collect()
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len().max(1) as f64
}

fn embed(x: ArrayView2<f64>, labels: &[usize], k: usize, scale: f64) -> Array2<f64> {
    let (n, d) = x.dim();
    let mut out = Array2::zeros((n, d + k));
    out.slice_mut(s![.., ..d]).assign(&x);
    for (i, &l) in labels.iter().enumerate() {
        out[[i, d + l]] = scale;
    }
    out
}

/// Transports labelled source features towards an unlabelled target. Target
/// proxy labels are the 1-NN predictions of the current transported source,
/// refreshed every iteration; only feature columns move.
pub fn adapt(source: &SampleSet, target: &SampleSet, target_labels: Option<&[usize]>, config: &AdaptConfig) -> Result<AdaptResult> {
    let labels = source
        .labels()
        .ok_or_else(|| Error::InvalidArgument("source set needs labels".into()))?
        .to_vec();
    if source.is_empty() || target.is_empty() {
        return Err(Error::Empty("adaptation set"));
    }
    if config.iters < 1 {
        return Err(Error::InvalidArgument("iters must be at least 1".into()));
    }
    check_same_dim("source and target dimension", source.dim(), target.dim())?;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; k];
    labels.iter().for_each(|&l| seen[l] = true);
    if seen.iter().filter(|s| **s).count() < 2 {
        return Err(Error::InvalidArgument("source must contain at least two classes".into()));
    }
    if let Some(t) = target_labels {
        check_same_dim("target labels and rows", t.len(), target.len())?;
        if let Some(bad) = t.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!(
                "target label {bad} not present among the {k} source classes"
            )));
        }
    }
    let d = source.dim();
    let use_labels = config.label_scale != 0.0;
    let k_emb = if use_labels { k } else { 0 };
    let score = |x: ArrayView2<f64>| target_labels.map(|t| accuracy(&nearest_neighbor_predict(x, &labels, target.data()), t));
    let accuracy_before = score(source.data());

    let gen = Divergence::BackwardKl.generator();
    let fit = FitOptions {
        seed: config.seed,
        ..config.fit
    };
    let mut sigma = SigmaTracker::new(config.sigma.clone(), config.cv_folds)?;
    let mut x = source.data().to_owned();
    let mut records = Vec::with_capacity(config.iters);
    for t in 0..config.iters {
        let proxy = nearest_neighbor_predict(x.view(), &labels, target.data());
        let q = SampleSet::new(embed(x.view(), &labels, k_emb, config.label_scale));
        let p = SampleSet::new(embed(target.data(), &proxy, k_emb, config.label_scale));
        let s = sigma.sigma(t, &p, &q, gen, &fit)?;
        let field = slopes(&fits(&q, &p, &q, gen, &FitOptions { sigma: s, ..fit })?, d + k_emb);
        let moved = field.slice(s![.., ..d]);
        for ((i, j), v) in moved.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFiniteField { row: i, col: j });
            }
        }
        x.scaled_add(config.eta, &moved);
        records.push(AdaptRecord {
            iter: t + 1,
            sigma: s,
            accuracy: score(x.view()),
        });
    }
    let accuracy_after = score(x.view());
    Ok(AdaptResult {
        transported: SampleSet::with_labels(x, labels)?,
        accuracy_before,
        accuracy_after,
        records,
    })
}

/// Mean-squared error helper over selected entries.
pub fn rmse_on(a: ArrayView2<f64>, b: ArrayView2<f64>, select: &Array2<bool>) -> f64 {
    let mut sq = 0.0;
    let mut n = 0usize;
    for ((i, j), &sel) in select.indexed_iter() {
        if sel {
            let e = a[[i, j]] - b[[i, j]];
            sq += e * e;
            n += 1;
        }
    }
    (sq / n.max(1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn step_arithmetic_and_mask() {
        let mut st = FlowState::new(array![[0.0, 1.0], [2.0, 3.0]], 0.1).unwrap();
        st.step(Array2::zeros((2, 2)).view()).unwrap();
        assert_eq!(st.particles, array![[0.0, 1.0], [2.0, 3.0]]);
        assert_eq!(st.t, 1);
        st.step(Array2::ones((2, 2)).view()).unwrap();
        assert!((st.particles[[1, 1]] - 3.1).abs() < 1e-15);

        let mask = array![[true, false], [true, false]];
        let mut st = FlowState::new(array![[0.0, 1.0], [2.0, 3.0]], 0.5).unwrap().with_mask(mask).unwrap();
        st.step(Array2::ones((2, 2)).view()).unwrap();
        assert_eq!(st.particles.column(0).to_vec(), vec![0.0, 2.0]);
        assert_eq!(st.particles.column(1).to_vec(), vec![1.5, 3.5]);
    }

    #[test]
    fn step_errors() {
        let mut st = FlowState::new(array![[0.0]], 0.1).unwrap();
        assert!(matches!(st.step(array![[f64::NAN]].view()), Err(Error::NonFiniteField { row: 0, col: 0 })));
        assert!(st.step(Array2::zeros((2, 1)).view()).is_err());
        let mut frozen = FlowState::new(array![[0.0]], 0.1).unwrap().with_mask(array![[true]]).unwrap();
        frozen.step(array![[f64::NAN]].view()).unwrap();
        assert_eq!(frozen.particles[[0, 0]], 0.0);
    }

    #[test]
    fn increase_warning_every_run() {
        let mut st = FlowState::new(array![[0.0]], 0.1).unwrap();
        for i in 0..=INCREASE_WARNING_RUN {
            st.record_monitor(i as f64);
        }
        assert_eq!(st.warnings.len(), 1);
    }

    #[test]
    fn sigma_policy_parsing() {
        assert_eq!("median".parse::<SigmaPolicy>().unwrap(), SigmaPolicy::Median);
        assert_eq!("0.5".parse::<SigmaPolicy>().unwrap(), SigmaPolicy::Fixed(0.5));
        assert!(matches!("cv".parse::<SigmaPolicy>().unwrap(), SigmaPolicy::Cv { every: 10 }));
        assert!("-1".parse::<SigmaPolicy>().is_err());
        assert!("wide".parse::<SigmaPolicy>().is_err());
    }

    #[test]
    fn zero_iterations_rejected() {
        let x = SampleSet::new(array![[0.0], [1.0]]);
        let cfg = FlowConfig {
            iters: 0,
            ..FlowConfig::default()
        };
        assert!(run_flow(&x, &x, &cfg, FieldSource::LocalLinear).is_err());
    }
}
