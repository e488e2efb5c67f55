//! Local-linear estimation of `∇(h∘r)`.
//!
//! At each query `x*` an affine witness `d(x) = ⟨w, x⟩ + b` maximises the
//! kernel-localised variational bound of the mirror divergence
//!
//! ```text
//! ℓ(w, b; x*) = Ê_p[k(x, x*) d(x)] - Ê_q[k(x, x*) ψ*(d(x))]
//! ```
//!
//! and the slope `w` is the velocity estimate. Fits run in query-centred,
//! bandwidth-scaled coordinates `u = (x - x*)/σ` and are mapped back on exit.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::divergence::{ClampedConjugate, Divergence, Generator};
use crate::error::{Error, Result};
use crate::kernel::{pairwise_sq_dists, GaussianKernel};
use crate::linalg::cholesky_solve;
use crate::sample::{check_same_dim, SampleSet};

/// Relative ridge (times the trace of the normal matrix) used by default in
/// [`solve_quadratic`].
pub const DEFAULT_RIDGE: f64 = 1e-9;

/// Kernel mass `Ê_q[k]` below which a query has no usable neighbourhood.
pub const MASS_FLOOR: f64 = 1e-12;

const PIVOT_FLOOR: f64 = 1e-12;

/// Iteration cap of the Newton solver.
pub const NEWTON_MAX_ITERS: usize = 100;

/// Relative objective gain below which a Newton step counts as stalled.
const STALL_GAIN: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    /// Damped Newton with Armijo backtracking, at most
    /// `min(max_iters, NEWTON_MAX_ITERS)` steps; stops early after three
    /// steps with negligible gain.
    Newton,
    /// Adam on the local parameters.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub sigma: f64,
    pub max_iters: usize,
    /// Adam step size (unused by Newton).
    pub learning_rate: f64,
    /// Stop when `‖∇ℓ‖ / (Ê_p[k] + Ê_q[k])` falls below this.
    pub tol: f64,
    /// Bound on the argument of exponential/logarithmic conjugates.
    pub clamp: f64,
    /// Seed for fold splits when the options drive bandwidth selection.
    pub seed: u64,
    pub solver: Solver,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            max_iters: 2000,
            learning_rate: 0.05,
            tol: 1e-6,
            clamp: 30.0,
            seed: 0,
            solver: Solver::Newton,
        }
    }
}

impl FitOptions {
    pub fn with_sigma(sigma: f64) -> Self {
        Self {
            sigma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.clamp > 0.0) {
            return Err(Error::InvalidArgument(format!("clamp must be positive, got {}", self.clamp)));
        }
        if !(self.learning_rate > 0.0) || !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("learning_rate and tol must be positive".into()));
        }
        Ok(())
    }
}

/// Affine fit at one query; `w` estimates `∇(h∘r)(query)` and
/// `⟨w, query⟩ + b` estimates `h(r(query))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    pub w: Vec<f64>,
    pub b: f64,
    pub query: Vec<f64>,
    pub converged: bool,
    pub objective_value: f64,
    pub iterations: usize,
}

impl LocalFit {
    /// Witness value at the query point.
    pub fn value_at_query(&self) -> f64 {
        self.b + self.w.iter().zip(&self.query).map(|(w, x)| w * x).sum::<f64>()
    }
}

/// Kernel-weighted neighbours of one query in local coordinates.
struct Neighbourhood {
    dim: usize,
    /// `Ê_p[k ũ]` with `ũ = [u, 1]`.
    p_moment: Vec<f64>,
    p_mass: f64,
    /// Flattened `ũ` rows of the p neighbours (length `dim + 1` each).
    p_rows: Vec<f64>,
    /// `k / n_p` per p neighbour.
    p_weights: Vec<f64>,
    q_rows: Vec<f64>,
    q_weights: Vec<f64>,
    q_mass: f64,
}

/// Rows `ũ` and weights `k/n` of the points of `x` inside the kernel cutoff.
fn local_rows(query: ArrayView1<f64>, x: ArrayView2<f64>, kern: &GaussianKernel) -> (Vec<f64>, Vec<f64>) {
    let d = query.len();
    let s = kern.sigma();
    let inv_n = 1.0 / x.nrows() as f64;
    let mut rows = Vec::new();
    let mut weights = Vec::new();
    let mut u = vec![0.0; d];
    for p in x.rows() {
        let mut dist = 0.0;
        for c in 0..d {
            u[c] = (p[c] - query[c]) / s;
            dist += u[c] * u[c];
        }
        if let Some(k) = kern.truncated_weight_sq(dist * s * s) {
            rows.extend_from_slice(&u);
            rows.push(1.0);
            weights.push(k * inv_n);
        }
    }
    (rows, weights)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Neighbourhood {
    fn gather(query: ArrayView1<f64>, dp: ArrayView2<f64>, dq: ArrayView2<f64>, kern: &GaussianKernel) -> Self {
        let d = query.len();
        let (p_rows, p_weights) = local_rows(query, dp, kern);
        let (q_rows, q_weights) = local_rows(query, dq, kern);
        let mut p_moment = vec![0.0; d + 1];
        for (row, k) in p_rows.chunks_exact(d + 1).zip(&p_weights) {
            for c in 0..=d {
                p_moment[c] += k * row[c];
            }
        }
        Self {
            dim: d,
            p_moment,
            p_mass: p_weights.iter().fold(0.0, |a, b| a + b),
            p_rows,
            p_weights,
            q_mass: q_weights.iter().fold(0.0, |a, b| a + b),
            q_rows,
            q_weights,
        }
    }

    fn objective(&self, theta: &[f64], conj: &ClampedConjugate) -> f64 {
        let m = self.dim + 1;
        let mut value = 0.0;
        for (row, k) in self.p_rows.chunks_exact(m).zip(&self.p_weights) {
            value += k * conj.cap(dot(row, theta)).0;
        }
        for (row, k) in self.q_rows.chunks_exact(m).zip(&self.q_weights) {
            value -= k * conj.value(dot(row, theta));
        }
        value
    }

    /// Objective, gradient and (optionally) the negated Hessian `Ê_q[k ψ*'' ũũᵀ]`.
    fn derivatives(&self, theta: &[f64], conj: &ClampedConjugate, neg_hess: Option<&mut [f64]>) -> (f64, Vec<f64>) {
        match self.dim + 1 {
            2 => self.derivatives_fixed::<2>(theta, conj, neg_hess),
            3 => self.derivatives_fixed::<3>(theta, conj, neg_hess),
            4 => self.derivatives_fixed::<4>(theta, conj, neg_hess),
            6 => self.derivatives_fixed::<6>(theta, conj, neg_hess),
            _ => self.derivatives_any(theta, conj, neg_hess),
        }
    }

    /// Same as `derivatives_any` with the row length known at compile time.
    fn derivatives_fixed<const M: usize>(&self, theta: &[f64], conj: &ClampedConjugate, neg_hess: Option<&mut [f64]>) -> (f64, Vec<f64>) {
        let th: [f64; M] = theta.try_into().expect("parameter length");
        let mut grad = [0.0; M];
        let mut value = 0.0;
        for (row, k) in self.p_rows.chunks_exact(M).zip(&self.p_weights) {
            let row: &[f64; M] = row.try_into().expect("row length");
            let (v, slope) = conj.cap((0..M).map(|c| row[c] * th[c]).sum());
            value += k * v;
            if slope != 0.0 {
                for c in 0..M {
                    grad[c] += k * row[c];
                }
            }
        }
        let want_hess = neg_hess.is_some();
        let mut h = [[0.0; M]; M];
        for (row, k) in self.q_rows.chunks_exact(M).zip(&self.q_weights) {
            let row: &[f64; M] = row.try_into().expect("row length");
            let (f, f1, f2) = conj.eval((0..M).map(|c| row[c] * th[c]).sum());
            value -= k * f;
            let g = k * f1;
            for c in 0..M {
                grad[c] -= g * row[c];
            }
            let w2 = k * f2;
            if want_hess && w2 != 0.0 {
                for a in 0..M {
                    let ra = w2 * row[a];
                    for b in 0..=a {
                        h[a][b] += ra * row[b];
                    }
                }
            }
        }
        if let Some(out) = neg_hess {
            for a in 0..M {
                for b in 0..=a {
                    out[a * M + b] = h[a][b];
                    out[b * M + a] = h[a][b];
                }
            }
        }
        (value, grad.to_vec())
    }

    fn derivatives_any(&self, theta: &[f64], conj: &ClampedConjugate, neg_hess: Option<&mut [f64]>) -> (f64, Vec<f64>) {
        let m = self.dim + 1;
        let mut grad = vec![0.0; m];
        let mut value = 0.0;
        for (row, k) in self.p_rows.chunks_exact(m).zip(&self.p_weights) {
            let (v, slope) = conj.cap(dot(row, theta));
            value += k * v;
            if slope != 0.0 {
                for (g, r) in grad.iter_mut().zip(row) {
                    *g += k * r;
                }
            }
        }
        let mut hess = neg_hess;
        if let Some(h) = hess.as_deref_mut() {
            h.fill(0.0);
        }
        for (row, k) in self.q_rows.chunks_exact(m).zip(&self.q_weights) {
            let (f, f1, f2) = conj.eval(dot(row, theta));
            value -= k * f;
            let g = k * f1;
            for (gc, r) in grad.iter_mut().zip(row) {
                *gc -= g * r;
            }
            if let Some(h) = hess.as_deref_mut() {
                let w2 = k * f2;
                if w2 != 0.0 {
                    for (a, hrow) in h.chunks_exact_mut(m).enumerate() {
                        let ra = w2 * row[a];
                        for (hb, rb) in hrow[..=a].iter_mut().zip(&row[..=a]) {
                            *hb += ra * rb;
                        }
                    }
                }
            }
        }
        if let Some(h) = hess {
            for a in 0..m {
                for b in 0..a {
                    h[b * m + a] = h[a * m + b];
                }
            }
        }
        (value, grad)
    }

    fn scale(&self) -> f64 {
        self.p_mass + self.q_mass
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Solution {
    theta: Vec<f64>,
    value: f64,
    converged: bool,
    iterations: usize,
}

fn newton(nb: &Neighbourhood, gen: Generator, opts: &FitOptions, query: usize, trace: &mut Option<Vec<f64>>) -> Result<Solution> {
    let m = nb.dim + 1;
    let conj = gen.clamped(opts.clamp);
    let mut theta = vec![0.0; m];
    theta[nb.dim] = gen.neutral();
    let mut hess = vec![0.0; m * m];
    let mut trial_hess = vec![0.0; m * m];
    let scale = nb.scale();
    let (mut value, mut grad) = nb.derivatives(&theta, &conj, Some(&mut hess));
    if !value.is_finite() {
        return Err(Error::OptimizerDiverged { query });
    }
    if let Some(t) = trace.as_mut() {
        t.push(value);
    }
    let mut converged = false;
    let mut iterations = 0;
    let mut stalled = 0;
    let max_iters = opts.max_iters.min(NEWTON_MAX_ITERS);
    let mut step = vec![0.0; m];
    let mut trial = vec![0.0; m];
    let mut a = vec![0.0; m * m];
    while iterations < max_iters {
        if norm(&grad) <= opts.tol * scale {
            converged = true;
            break;
        }
        iterations += 1;
        let trace_h: f64 = (0..m).map(|i| hess[i * m + i]).sum();
        let mut ridge = 1e-12 * trace_h.max(scale);
        let mut solved = false;
        for _ in 0..12 {
            a.copy_from_slice(&hess);
            for i in 0..m {
                a[i * m + i] += ridge;
            }
            step.copy_from_slice(&grad);
            if cholesky_solve(&mut a, m, &mut step, 1e-15).is_some() && step.iter().all(|s| s.is_finite()) {
                solved = true;
                break;
            }
            ridge *= 100.0;
        }
        if !solved {
            step.iter_mut().zip(&grad).for_each(|(s, g)| *s = g / scale);
        }
        let slope: f64 = step.iter().zip(&grad).map(|(s, g)| s * g).sum();
        // The full step is tried with derivatives; backtracking uses values only.
        for i in 0..m {
            trial[i] = theta[i] + step[i];
        }
        let (mut v, mut g) = nb.derivatives(&trial, &conj, Some(&mut trial_hess));
        if !(v.is_finite() && v >= value + 1e-4 * slope) {
            let mut t = 0.5;
            let mut accepted = false;
            for _ in 0..60 {
                for i in 0..m {
                    trial[i] = theta[i] + t * step[i];
                }
                let tv = nb.objective(&trial, &conj);
                if tv.is_finite() && tv >= value + 1e-4 * t * slope {
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // No ascent available at working precision.
                break;
            }
            (v, g) = nb.derivatives(&trial, &conj, Some(&mut trial_hess));
        }
        if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::OptimizerDiverged { query });
        }
        theta.copy_from_slice(&trial);
        std::mem::swap(&mut hess, &mut trial_hess);
        // Non-smooth optima (at a clamp kink) never reach the gradient test.
        stalled = if v - value <= STALL_GAIN * (value.abs() + scale) { stalled + 1 } else { 0 };
        value = v;
        grad = g;
        if let Some(t) = trace.as_mut() {
            t.push(value);
        }
        if stalled >= 3 {
            break;
        }
    }
    if !converged {
        converged = norm(&grad) <= opts.tol * scale;
    }
    Ok(Solution {
        theta,
        value,
        converged,
        iterations,
    })
}

fn adam(nb: &Neighbourhood, gen: Generator, opts: &FitOptions, query: usize, trace: &mut Option<Vec<f64>>) -> Result<Solution> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-12;
    let m = nb.dim + 1;
    let conj = gen.clamped(opts.clamp);
    let mut theta = vec![0.0; m];
    theta[nb.dim] = gen.neutral();
    let scale = nb.scale();
    let mut first = vec![0.0; m];
    let mut second = vec![0.0; m];
    let (mut value, mut grad) = nb.derivatives(&theta, &conj, None);
    if let Some(t) = trace.as_mut() {
        t.push(value);
    }
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        if norm(&grad) <= opts.tol * scale {
            converged = true;
            break;
        }
        iterations += 1;
        let c1 = 1.0 - BETA1.powi(iterations as i32);
        let c2 = 1.0 - BETA2.powi(iterations as i32);
        for i in 0..m {
            let g = grad[i] / scale;
            first[i] = BETA1 * first[i] + (1.0 - BETA1) * g;
            second[i] = BETA2 * second[i] + (1.0 - BETA2) * g * g;
            theta[i] += opts.learning_rate * (first[i] / c1) / ((second[i] / c2).sqrt() + EPS);
        }
        let (v, g) = nb.derivatives(&theta, &conj, None);
        if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::OptimizerDiverged { query });
        }
        value = v;
        grad = g;
        if let Some(t) = trace.as_mut() {
            t.push(value);
        }
    }
    if !converged {
        converged = norm(&grad) <= opts.tol * scale;
    }
    Ok(Solution {
        theta,
        value,
        converged,
        iterations,
    })
}

fn check_inputs(queries: &SampleSet, dp: &SampleSet, dq: &SampleSet) -> Result<()> {
    if dp.is_empty() {
        return Err(Error::Empty("Dp"));
    }
    if dq.is_empty() {
        return Err(Error::Empty("Dq"));
    }
    check_same_dim("Dp and Dq dimension", dp.dim(), dq.dim())?;
    check_same_dim("query and sample dimension", queries.dim(), dp.dim())
}

fn to_raw(query: ArrayView1<f64>, theta: &[f64], sigma: f64) -> (Vec<f64>, f64) {
    let d = query.len();
    let w: Vec<f64> = theta[..d].iter().map(|v| v / sigma).collect();
    let b = theta[d] - w.iter().zip(query.iter()).map(|(w, x)| w * x).sum::<f64>();
    (w, b)
}

#[allow(clippy::too_many_arguments)]
fn fit_at(
    idx: usize,
    query: ArrayView1<f64>,
    dp: ArrayView2<f64>,
    dq: ArrayView2<f64>,
    gen: Generator,
    kern: &GaussianKernel,
    opts: &FitOptions,
    trace: &mut Option<Vec<f64>>,
) -> Result<LocalFit> {
    let nb = Neighbourhood::gather(query, dp, dq, kern);
    if nb.q_mass < MASS_FLOOR {
        return Err(Error::DegenerateNeighborhood {
            query: idx,
            mass: nb.q_mass,
        });
    }
    let sol = match opts.solver {
        Solver::Newton => newton(&nb, gen, opts, idx, trace)?,
        Solver::Adam => adam(&nb, gen, opts, idx, trace)?,
    };
    let (w, b) = to_raw(query, &sol.theta, opts.sigma);
    Ok(LocalFit {
        w,
        b,
        query: query.to_vec(),
        converged: sol.converged,
        objective_value: sol.value,
        iterations: sol.iterations,
    })
}

/// Fits the witness of `field_div`'s mirror at every query.
pub fn fit_batch(queries: &SampleSet, dp: &SampleSet, dq: &SampleSet, field_div: Divergence, opts: &FitOptions) -> Result<Vec<LocalFit>> {
    fit_batch_with(queries, dp, dq, field_div.generator(), opts)
}

pub(crate) fn fit_batch_with(queries: &SampleSet, dp: &SampleSet, dq: &SampleSet, gen: Generator, opts: &FitOptions) -> Result<Vec<LocalFit>> {
    opts.validate()?;
    check_inputs(queries, dp, dq)?;
    let kern = GaussianKernel::new(opts.sigma)?;
    let (xp, xq) = (dp.data(), dq.data());
    (0..queries.len())
        .into_par_iter()
        .map(|j| fit_at(j, queries.row(j), xp, xq, gen, &kern, opts, &mut None))
        .collect()
}

/// Single fit that also returns the objective value after every iteration.
pub fn fit_one_traced(query: &[f64], dp: &SampleSet, dq: &SampleSet, field_div: Divergence, opts: &FitOptions) -> Result<(LocalFit, Vec<f64>)> {
    opts.validate()?;
    let q = SampleSet::new(Array2::from_shape_vec((1, query.len()), query.to_vec()).expect("row vector"));
    check_inputs(&q, dp, dq)?;
    let kern = GaussianKernel::new(opts.sigma)?;
    let mut trace = Some(Vec::new());
    let fit = fit_at(0, q.row(0), dp.data(), dq.data(), field_div.generator(), &kern, opts, &mut trace)?;
    Ok((fit, trace.unwrap_or_default()))
}

/// Closed-form maximiser of the forward-KL-field objective (quadratic
/// conjugate): solves `Ê_q[k ũũᵀ] θ = Ê_p[k ũ]` with `ũ = [x, 1]`.
///
/// `ridge` is relative: `ridge · trace` is added to the diagonal.
pub fn solve_quadratic(query: &[f64], dp: &SampleSet, dq: &SampleSet, sigma: f64, ridge: f64) -> Result<LocalFit> {
    let q = SampleSet::new(Array2::from_shape_vec((1, query.len()), query.to_vec()).expect("row vector"));
    check_inputs(&q, dp, dq)?;
    let kern = GaussianKernel::new(sigma)?;
    solve_quadratic_at(0, q.row(0), dp.data(), dq.data(), &kern, ridge)
}

fn solve_quadratic_at(idx: usize, query: ArrayView1<f64>, dp: ArrayView2<f64>, dq: ArrayView2<f64>, kern: &GaussianKernel, ridge: f64) -> Result<LocalFit> {
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be non-negative, got {ridge}")));
    }
    let nb = Neighbourhood::gather(query, dp, dq, kern);
    if nb.q_mass < MASS_FLOOR {
        return Err(Error::DegenerateNeighborhood {
            query: idx,
            mass: nb.q_mass,
        });
    }
    let m = nb.dim + 1;
    let conj = Generator::Quadratic.clamped(1.0);
    let mut a = vec![0.0; m * m];
    nb.derivatives(&vec![0.0; m], &conj, Some(&mut a));
    let tr: f64 = (0..m).map(|i| a[i * m + i]).sum();
    for i in 0..m {
        a[i * m + i] += ridge * tr;
    }
    let mut theta = nb.p_moment.clone();
    cholesky_solve(&mut a, m, &mut theta, PIVOT_FLOOR).ok_or(Error::RankDeficient { query: idx })?;
    let value = nb.objective(&theta, &conj);
    let (w, b) = to_raw(query, &theta, kern.sigma());
    Ok(LocalFit {
        w,
        b,
        query: query.to_vec(),
        converged: true,
        objective_value: value,
        iterations: 1,
    })
}

/// Per-query results, using the closed form for the quadratic conjugate
/// and the iterative solver otherwise. Failures stay per query.
pub(crate) fn fits_each(queries: &SampleSet, dp: &SampleSet, dq: &SampleSet, gen: Generator, opts: &FitOptions) -> Result<Vec<Result<LocalFit>>> {
    opts.validate()?;
    check_inputs(queries, dp, dq)?;
    let kern = GaussianKernel::new(opts.sigma)?;
    let (xp, xq) = (dp.data(), dq.data());
    Ok((0..queries.len())
        .into_par_iter()
        .map(|j| match gen {
            Generator::Quadratic => solve_quadratic_at(j, queries.row(j), xp, xq, &kern, DEFAULT_RIDGE),
            _ => fit_at(j, queries.row(j), xp, xq, gen, &kern, opts, &mut None),
        })
        .collect())
}

pub(crate) fn fits(queries: &SampleSet, dp: &SampleSet, dq: &SampleSet, gen: Generator, opts: &FitOptions) -> Result<Vec<LocalFit>> {
    fits_each(queries, dp, dq, gen, opts)?.into_iter().collect()
}

/// Slopes of the local fits, one row per query.
pub fn velocity_field(queries: &SampleSet, dp: &SampleSet, dq: &SampleSet, field_div: Divergence, opts: &FitOptions) -> Result<Array2<f64>> {
    let fits = fits(queries, dp, dq, field_div.generator(), opts)?;
    Ok(slopes(&fits, queries.dim()))
}

pub(crate) fn slopes(fits: &[LocalFit], d: usize) -> Array2<f64> {
    let mut out = Array2::zeros((fits.len(), d));
    for (j, f) in fits.iter().enumerate() {
        for c in 0..d {
            out[[j, c]] = f.w[c];
        }
    }
    out
}

/// Objective and its gradient for a batch of raw-coordinate parameters,
/// in matrix form:
///
/// ```text
/// ∇_W = K_p X_p / n_p - (K_q ⊙ ψ*'(W X_qᵀ + b)) X_q / n_q
/// ∇_b = K_p 1 / n_p   - (K_q ⊙ ψ*'(W X_qᵀ + b)) 1 / n_q
/// ```
///
/// Kernels are untruncated; the target-side witness is capped and the
/// conjugate clamped exactly as in the per-query fits, which adds the
/// indicator `[d <= hi]` to the `K_p` terms.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    pub values: Array1<f64>,
    pub grad_w: Array2<f64>,
    pub grad_b: Array1<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn batch_objective(
    w: ArrayView2<f64>,
    b: ArrayView1<f64>,
    queries: &SampleSet,
    dp: &SampleSet,
    dq: &SampleSet,
    field_div: Divergence,
    sigma: f64,
    clamp: f64,
) -> Result<BatchObjective> {
    check_inputs(queries, dp, dq)?;
    check_same_dim("slope rows and queries", w.nrows(), queries.len())?;
    check_same_dim("slope columns and dimension", w.ncols(), queries.dim())?;
    check_same_dim("intercepts and queries", b.len(), queries.len())?;
    let kern = GaussianKernel::new(sigma)?;
    let conj = field_div.generator().clamped(clamp);
    let (np, nq) = (dp.len() as f64, dq.len() as f64);
    let kp = pairwise_sq_dists(queries.data(), dp.data())?.mapv(|d2| kern.weight_sq(d2));
    let kq = pairwise_sq_dists(queries.data(), dq.data())?.mapv(|d2| kern.weight_sq(d2));

    let mut dpv = w.dot(&dp.data().t());
    let mut dqv = w.dot(&dq.data().t());
    for (j, bj) in b.iter().enumerate() {
        dpv.row_mut(j).mapv_inplace(|v| v + bj);
        dqv.row_mut(j).mapv_inplace(|v| v + bj);
    }
    let capped = dpv.mapv(|d| conj.cap(d).0);
    let kp1 = &kp * &dpv.mapv(|d| conj.cap(d).1);
    let psi = dqv.mapv(|d| conj.eval(d).0);
    let kq1 = &kq * &dqv.mapv(|d| conj.eval(d).1);

    let values = (&kp * &capped).sum_axis(Axis(1)) / np - (&kq * &psi).sum_axis(Axis(1)) / nq;
    let grad_w = kp1.dot(&dp.data()) / np - kq1.dot(&dq.data()) / nq;
    let grad_b = kp1.sum_axis(Axis(1)) / np - kq1.sum_axis(Axis(1)) / nq;
    Ok(BatchObjective { values, grad_w, grad_b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identical_points_are_rank_deficient() {
        let dq = SampleSet::new(array![[1.0], [1.0], [1.0]]);
        let dp = SampleSet::new(array![[0.0], [2.0]]);
        match solve_quadratic(&[0.5], &dp, &dq, 1.0, 0.0) {
            Err(Error::RankDeficient { query: 0 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(solve_quadratic(&[0.5], &dp, &dq, 1.0, DEFAULT_RIDGE).is_ok());
    }

    #[test]
    fn two_point_quadratic_fit() {
        // Dp = Dq: stationarity gives w = 0 and d ≡ 1 (r ≡ 1).
        let x = SampleSet::new(array![[-1.0], [1.0]]);
        let fit = solve_quadratic(&[0.0], &x, &x, 1.0, 0.0).unwrap();
        assert!(fit.w[0].abs() < 1e-12);
        assert!((fit.b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn newton_matches_closed_form_on_small_instance() {
        let dp = SampleSet::new(array![[0.1, 0.3], [0.5, -0.2], [-0.4, 0.9], [1.2, 0.1]]);
        let dq = SampleSet::new(array![[0.0, 0.0], [0.7, 0.4], [-0.3, -0.6], [0.2, 1.1], [1.0, -0.5]]);
        let opts = FitOptions::with_sigma(0.8);
        let it = fit_batch(&dp, &dp, &dq, Divergence::ForwardKl, &opts).unwrap();
        for (j, f) in it.iter().enumerate() {
            let row = dp.row(j).to_vec();
            let cf = solve_quadratic(&row, &dp, &dq, 0.8, 0.0).unwrap();
            for c in 0..2 {
                assert!((f.w[c] - cf.w[c]).abs() < 1e-8);
            }
            assert!((f.b - cf.b).abs() < 1e-8);
            assert!(f.converged);
        }
    }

    #[test]
    fn options_are_validated() {
        let x = SampleSet::new(array![[0.0], [1.0]]);
        let o = FitOptions {
            max_iters: 0,
            ..FitOptions::default()
        };
        assert!(fit_batch(&x, &x, &x, Divergence::BackwardKl, &o).is_err());
        let o = FitOptions::with_sigma(-1.0);
        assert!(fit_batch(&x, &x, &x, Divergence::BackwardKl, &o).is_err());
        let empty = SampleSet::new(Array2::zeros((0, 1)));
        assert!(matches!(
            fit_batch(&x, &empty, &x, Divergence::BackwardKl, &FitOptions::default()),
            Err(Error::Empty(_))
        ));
    }
}
