//! Linear density-ratio-preserving maps `s(x) = Sᵀx` and lifting of
//! low-dimensional fits back to the full space.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};

use crate::divergence::Divergence;
use crate::error::{Error, Result};
use crate::kernel::pooled_median_bandwidth;
use crate::local_linear::{fits, FitOptions};
use crate::rng::{stream, STREAM_SUBSPACE};
use crate::sample::{check_same_dim, SampleSet};
use crate::selection::MEDIAN_POINTS;

/// Tolerance on `‖SᵀS - I‖_F`.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// A `d×m` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    s: Array2<f64>,
}

impl FeatureMap {
    pub fn new(s: Array2<f64>) -> Result<Self> {
        if s.ncols() == 0 || s.ncols() > s.nrows() {
            return Err(Error::InvalidArgument(format!(
                "feature map must be d×m with 1 <= m <= d, got {}×{}",
                s.nrows(),
                s.ncols()
            )));
        }
        let map = Self { s };
        let err = map.orthonormality_error();
        if !(err <= ORTHONORMAL_TOL) {
            return Err(Error::InvalidArgument(format!("columns are not orthonormal (‖SᵀS - I‖ = {err:e})")));
        }
        Ok(map)
    }

    /// The first `m` coordinate axes of `R^d`.
    pub fn coordinate(d: usize, m: usize) -> Result<Self> {
        Self::new(Array2::from_shape_fn((d, m), |(i, j)| if i == j { 1.0 } else { 0.0 }))
    }

    /// Orthonormalises the columns of `a` (QR, signs fixed so `diag(R) >= 0`).
    pub fn orthonormalize(a: ArrayView2<f64>) -> Result<Self> {
        let (d, m) = a.dim();
        if m == 0 || m > d {
            return Err(Error::InvalidArgument(format!("cannot orthonormalise a {d}×{m} matrix")));
        }
        let mat = DMatrix::from_fn(d, m, |i, j| a[[i, j]]);
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite entries in feature map".into()));
        }
        let qr = mat.qr();
        let (q, r) = (qr.q(), qr.r());
        let s = Array2::from_shape_fn((d, m), |(i, j)| {
            let sign = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
            sign * q[(i, j)]
        });
        Self::new(s)
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.s.view()
    }

    pub fn input_dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.s.ncols()
    }

    pub fn orthonormality_error(&self) -> f64 {
        let g = self.s.t().dot(&self.s);
        g.indexed_iter()
            .map(|((i, j), v)| {
                let e = v - if i == j { 1.0 } else { 0.0 };
                e * e
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Rows `Sᵀx` for every row `x`.
    pub fn project(&self, x: &SampleSet) -> Result<SampleSet> {
        check_same_dim("feature map input dimension", self.input_dim(), x.dim())?;
        Ok(SampleSet::new(x.data().dot(&self.s)))
    }

    /// Lifts a field given in feature coordinates (one row per point).
    pub fn lift_field(&self, low: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_same_dim("low-dimensional field width", low.ncols(), self.output_dim())?;
        Ok(low.dot(&self.s.t()))
    }
}

/// `S w`: the full-space gradient of a function of `Sᵀx` whose gradient in
/// feature coordinates is `w_low`.
pub fn lifted_velocity(map: &FeatureMap, w_low: &[f64]) -> Result<Vec<f64>> {
    check_same_dim("slope length and feature dimension", w_low.len(), map.output_dim())?;
    let s = map.matrix();
    Ok((0..map.input_dim())
        .map(|i| (0..map.output_dim()).map(|j| s[[i, j]] * w_low[j]).sum())
        .collect())
}

/// Principal angles (radians, ascending) between the column spaces of two
/// orthonormal bases.
pub fn principal_angles(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Vec<f64>> {
    check_same_dim("ambient dimension", a.nrows(), b.nrows())?;
    let c = a.t().dot(&b);
    let m = DMatrix::from_fn(c.nrows(), c.ncols(), |i, j| c[[i, j]]);
    let mut sv: Vec<f64> = m.singular_values().iter().map(|s| s.clamp(-1.0, 1.0).acos()).collect();
    sv.sort_by(f64::total_cmp);
    Ok(sv)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SubspaceInit {
    /// Leading eigenvectors (by magnitude) of `Ê_p[xxᵀ] - Ê_q[xxᵀ]`; falls
    /// back to random when that matrix vanishes.
    Moments,
    /// Leading eigenvectors of the mean outer product of full-space local
    /// slopes at the `q` points.
    FieldOuterProduct,
    Random,
    Given(FeatureMap),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceOptions {
    /// Options for the inner local fits; `sigma` is used only when
    /// `fixed_sigma` is set, otherwise the projected pooled median is used.
    pub fit: FitOptions,
    pub fixed_sigma: bool,
    /// Ascent step on `S`.
    pub step: f64,
    /// Rows per set used in the search.
    pub max_points: usize,
    /// Stop when the relative objective change falls below this.
    pub tol: f64,
    pub init: SubspaceInit,
    pub seed: u64,
}

impl Default for SubspaceOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            fixed_sigma: false,
            step: 0.5,
            max_points: 1500,
            tol: 1e-4,
            init: SubspaceInit::Moments,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchReport {
    pub map: FeatureMap,
    /// Plug-in objective evaluated at the start of every outer iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn top_eigenvectors(m: &DMatrix<f64>, k: usize) -> Array2<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].abs().total_cmp(&eig.eigenvalues[a].abs()));
    Array2::from_shape_fn((m.nrows(), k), |(i, j)| eig.eigenvectors[(i, order[j])])
}

fn second_moment(x: &SampleSet) -> DMatrix<f64> {
    let g = x.data().t().dot(&x.data()) / x.len() as f64;
    DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| g[[i, j]])
}

fn random_map(d: usize, m: usize, seed: u64) -> Result<FeatureMap> {
    let mut rng = stream(seed, STREAM_SUBSPACE);
    let a = Array2::from_shape_fn((d, m), |_| StandardNormal.sample(&mut rng));
    FeatureMap::orthonormalize(a.view())
}

fn initial_map(dp: &SampleSet, dq: &SampleSet, m: usize, field_div: Divergence, opts: &SubspaceOptions) -> Result<FeatureMap> {
    let d = dp.dim();
    match &opts.init {
        SubspaceInit::Given(map) => {
            check_same_dim("initial map input dimension", map.input_dim(), d)?;
            check_same_dim("initial map output dimension", map.output_dim(), m)?;
            Ok(map.clone())
        }
        SubspaceInit::Random => random_map(d, m, opts.seed),
        SubspaceInit::Moments => {
            let diff = second_moment(dp) - second_moment(dq);
            if diff.norm() <= 1e-12 * (second_moment(dp).norm() + 1e-300) {
                return random_map(d, m, opts.seed);
            }
            FeatureMap::orthonormalize(top_eigenvectors(&diff, m).view())
        }
        SubspaceInit::FieldOuterProduct => {
            let sigma = sigma_for(dp, dq, opts)?;
            let fit = FitOptions { sigma, ..opts.fit };
            let found = fits(dq, dp, dq, field_div.generator(), &fit)?;
            let mut g = DMatrix::zeros(d, d);
            for f in &found {
                let w = nalgebra::DVector::from_column_slice(&f.w);
                g += &w * w.transpose();
            }
            if g.norm() == 0.0 {
                return random_map(d, m, opts.seed);
            }
            FeatureMap::orthonormalize(top_eigenvectors(&g, m).view())
        }
    }
}

fn sigma_for(dp: &SampleSet, dq: &SampleSet, opts: &SubspaceOptions) -> Result<f64> {
    if opts.fixed_sigma {
        Ok(opts.fit.sigma)
    } else {
        pooled_median_bandwidth(dp, dq, MEDIAN_POINTS)
    }
}

/// Plug-in objective and its gradient in `S` with the local fits held fixed.
fn objective_and_gradient(dp: &SampleSet, dq: &SampleSet, map: &FeatureMap, field_div: Divergence, opts: &SubspaceOptions) -> Result<(f64, Array2<f64>)> {
    let zp = map.project(dp)?;
    let zq = map.project(dq)?;
    let sigma = sigma_for(&zp, &zq, opts)?;
    let fit = FitOptions { sigma, ..opts.fit };
    let gen = field_div.generator();
    let conj = gen.clamped(opts.fit.clamp);
    let (d, m) = (map.input_dim(), map.output_dim());
    let mut grad = Array2::<f64>::zeros((d, m));
    let mut value = 0.0;
    for (set, z, sign) in [(dp, &zp, 1.0), (dq, &zq, -1.0)] {
        let found = fits(z, &zp, &zq, gen, &fit)?;
        let n = set.len() as f64;
        for (i, f) in found.iter().enumerate() {
            let dv = f.value_at_query();
            let (val, slope) = if sign > 0.0 {
                (dv, 1.0)
            } else {
                let (c, c1, _) = conj.eval(dv);
                (c, c1)
            };
            value += sign * val / n;
            let x = set.row(i);
            for a in 0..d {
                let xa = sign * slope * x[a] / n;
                for b in 0..m {
                    grad[[a, b]] += xa * f.w[b];
                }
            }
        }
    }
    if !value.is_finite() {
        return Err(Error::OptimizerDiverged { query: 0 });
    }
    Ok((value, grad))
}

/// Alternates local fits in feature space with an ascent step on `S` and
/// re-orthonormalisation. `outer_iters = 0` returns the initial map.
pub fn search_feature_map(
    dp: &SampleSet,
    dq: &SampleSet,
    m: usize,
    field_div: Divergence,
    outer_iters: usize,
    opts: &SubspaceOptions,
) -> Result<SearchReport> {
    if dp.is_empty() {
        return Err(Error::Empty("Dp"));
    }
    if dq.is_empty() {
        return Err(Error::Empty("Dq"));
    }
    check_same_dim("Dp and Dq dimension", dp.dim(), dq.dim())?;
    let d = dp.dim();
    if m == 0 || m > d {
        return Err(Error::InvalidArgument(format!("feature dimension m={m} must satisfy 1 <= m <= d={d}")));
    }
    let dp = dp.strided(opts.max_points);
    let dq = dq.strided(opts.max_points);
    let mut map = initial_map(&dp, &dq, m, field_div, opts)?;
    let mut objective = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < outer_iters {
        let (value, grad) = objective_and_gradient(&dp, &dq, &map, field_div, opts)?;
        if let Some(&prev) = objective.last() {
            let prev: f64 = prev;
            if (value - prev).abs() <= opts.tol * prev.abs().max(1e-12) {
                objective.push(value);
                converged = true;
                break;
            }
        }
        objective.push(value);
        let next = &map.matrix() + &(grad * opts.step);
        map = FeatureMap::orthonormalize(next.view())?;
        iterations += 1;
    }
    Ok(SearchReport {
        map,
        objective,
        iterations,
        converged,
    })
}
