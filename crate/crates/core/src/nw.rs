//! Nadaraya-Watson estimate of the backward-KL velocity `∇ log(p/q)` when
//! the target score is known in closed form.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::GaussianKernel;
use crate::sample::{check_same_dim, SampleSet};
use crate::score::ScoreOracle;

/// Floor on the kernel mass `Ê_q[k]` below which a query is rejected.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Per-query sums `Σ_i k_i (score(x_i) + (x* - x_i)/σ²)` and `Σ_i k_i`,
/// shared by the NW estimator and the SVGD update.
pub(crate) struct SteinSums {
    pub num: Array2<f64>,
    pub den: Array1<f64>,
}

pub(crate) fn stein_sums(
    particles: &SampleSet,
    score: &dyn ScoreOracle,
    queries: &SampleSet,
    sigma: f64,
) -> Result<SteinSums> {
    if particles.is_empty() {
        return Err(Error::Empty("particles"));
    }
    let d = particles.dim();
    check_same_dim("particle and query dimension", d, queries.dim())?;
    check_same_dim("score and particle dimension", score.dim(), d)?;
    let kern = GaussianKernel::new(sigma)?;
    let inv_s2 = 1.0 / (sigma * sigma);

    let x = particles.data();
    let mut scores = Array2::<f64>::zeros((particles.len(), d));
    for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
        let xi = x.row(i).to_vec();
        score.score(&xi, row.as_slice_mut().expect("contiguous row"));
    }

    let rows: Vec<(Vec<f64>, f64)> = (0..queries.len())
        .into_par_iter()
        .map(|j| {
            let xs = queries.row(j);
            let mut num = vec![0.0; d];
            let mut den = 0.0;
            for i in 0..particles.len() {
                let xi = x.row(i);
                let k = kern.weight(xi, xs);
                den += k;
                for c in 0..d {
                    num[c] += k * (scores[[i, c]] + (xs[c] - xi[c]) * inv_s2);
                }
            }
            (num, den)
        })
        .collect();

    let mut num = Array2::zeros((queries.len(), d));
    let mut den = Array1::zeros(queries.len());
    for (j, (n, s)) in rows.into_iter().enumerate() {
        num.row_mut(j).assign(&Array1::from(n));
        den[j] = s;
    }
    Ok(SteinSums { num, den })
}

/// `Ê_q[k ∇log p + ∇_x k] / Ê_q[k]` at every query.
pub fn nw_velocity(
    particles: &SampleSet,
    score: &dyn ScoreOracle,
    queries: &SampleSet,
    sigma: f64,
) -> Result<Array2<f64>> {
    let SteinSums { mut num, den } = stein_sums(particles, score, queries, sigma)?;
    let n = particles.len() as f64;
    for (j, mut row) in num.rows_mut().into_iter().enumerate() {
        if den[j] / n < DENOMINATOR_FLOOR {
            return Err(Error::DegenerateNeighborhood {
                query: j,
                mass: den[j] / n,
            });
        }
        row /= den[j];
    }
    Ok(num)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::GaussianScore;
    use ndarray::array;

    #[test]
    fn single_particle_returns_score() {
        let p = GaussianScore::new(vec![0.0, 1.0], 2.0).unwrap();
        let x = SampleSet::new(array![[0.5, -1.0]]);
        let v = nw_velocity(&x, &p, &x, 0.3).unwrap();
        let mut s = [0.0; 2];
        p.score(&[0.5, -1.0], &mut s);
        assert!((v[[0, 0]] - s[0]).abs() < 1e-15);
        assert!((v[[0, 1]] - s[1]).abs() < 1e-15);
    }

    #[test]
    fn isolated_query_is_rejected() {
        let p = GaussianScore::standard(1);
        let x = SampleSet::new(array![[0.0]]);
        let q = SampleSet::new(array![[0.0], [100.0]]);
        match nw_velocity(&x, &p, &q, 0.1) {
            Err(Error::DegenerateNeighborhood { query, .. }) => assert_eq!(query, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_checks() {
        let p = GaussianScore::standard(2);
        let x = SampleSet::new(array![[0.0]]);
        assert!(nw_velocity(&x, &p, &x, 1.0).is_err());
    }
}
