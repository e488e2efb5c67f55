//! Reference estimators: the SVGD particle update and KDE score differences.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::GaussianKernel;
use crate::nw::{stein_sums, DENOMINATOR_FLOOR};
use crate::sample::{check_same_dim, SampleSet};
use crate::score::ScoreOracle;

/// `(1/n) Σ_i [k(x_i, x*) score(x_i) + k(x_i, x*)(x* - x_i)/σ²]` at every particle.
pub fn svgd_update(particles: &SampleSet, score: &dyn ScoreOracle, sigma: f64) -> Result<Array2<f64>> {
    let sums = stein_sums(particles, score, particles, sigma)?;
    Ok(sums.num / particles.len() as f64)
}

/// KDE score `Σ_i ∇_y k(x_i, y) / Σ_i k(x_i, y)` at every query.
pub fn kde_score(x: &SampleSet, queries: &SampleSet, sigma: f64) -> Result<Array2<f64>> {
    if x.is_empty() {
        return Err(Error::Empty("kde sample"));
    }
    let d = x.dim();
    check_same_dim("sample and query dimension", d, queries.dim())?;
    let kern = GaussianKernel::new(sigma)?;
    let inv_s2 = 1.0 / (sigma * sigma);
    let n = x.len() as f64;
    let data = x.data();
    let rows: Vec<Result<Vec<f64>>> = (0..queries.len())
        .into_par_iter()
        .map(|j| {
            let y = queries.row(j);
            let mut num = vec![0.0; d];
            let mut den = 0.0;
            for xi in data.rows() {
                let k = kern.weight(xi, y);
                den += k;
                for c in 0..d {
                    num[c] += k * (xi[c] - y[c]) * inv_s2;
                }
            }
            if den / n < DENOMINATOR_FLOOR {
                return Err(Error::DegenerateNeighborhood { query: j, mass: den / n });
            }
            Ok(num.into_iter().map(|v| v / den).collect())
        })
        .collect();
    let mut out = Array2::zeros((queries.len(), d));
    for (j, row) in rows.into_iter().enumerate() {
        for (c, v) in row?.into_iter().enumerate() {
            out[[j, c]] = v;
        }
    }
    Ok(out)
}

/// KDE estimate of `∇ log(p/q)`: `kde_score(Dp) - kde_score(Dq)`.
pub fn kde_ratio_gradient(dp: &SampleSet, dq: &SampleSet, queries: &SampleSet, sigma: f64) -> Result<Array2<f64>> {
    Ok(kde_score(dp, queries, sigma)? - kde_score(dq, queries, sigma)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::GaussianScore;
    use ndarray::array;

    #[test]
    fn single_particle_update_is_score() {
        let p = GaussianScore::new(vec![1.0], 1.0).unwrap();
        let x = SampleSet::new(array![[3.0]]);
        let u = svgd_update(&x, &p, 0.5).unwrap();
        assert!((u[[0, 0]] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_pair_repels() {
        struct Zero;
        impl ScoreOracle for Zero {
            fn dim(&self) -> usize {
                1
            }
            fn score(&self, _: &[f64], out: &mut [f64]) {
                out.fill(0.0);
            }
        }
        let x = SampleSet::new(array![[-1.0], [1.0]]);
        let u = svgd_update(&x, &Zero, 1.0).unwrap();
        assert!(u[[0, 0]] < 0.0 && u[[1, 0]] > 0.0);
        assert!((u[[0, 0]] + u[[1, 0]]).abs() < 1e-15);
    }

    #[test]
    fn kde_score_symmetry_and_self() {
        let x = SampleSet::new(array![[0.7]]);
        assert_eq!(kde_score(&x, &x, 1.0).unwrap()[[0, 0]], 0.0);
        let x = SampleSet::new(array![[-2.0], [2.0]]);
        let q = SampleSet::new(array![[0.0]]);
        assert!(kde_score(&x, &q, 1.0).unwrap()[[0, 0]].abs() < 1e-15);
    }
}
