//! Gaussian weighting kernel, pairwise distances and the median heuristic.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::sample::SampleSet;

/// Kernel weights below this are treated as zero by the local estimators.
pub const WEIGHT_FLOOR: f64 = 1e-12;

/// `k_σ(x, y) = exp(-‖x - y‖² / (2σ²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    inv_two_sigma_sq: f64,
    /// Squared distance beyond which the weight drops under [`WEIGHT_FLOOR`].
    cutoff_sq: f64,
}

impl GaussianKernel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "bandwidth must be positive and finite, got {sigma}"
            )));
        }
        Ok(Self {
            sigma,
            inv_two_sigma_sq: 0.5 / (sigma * sigma),
            cutoff_sq: -WEIGHT_FLOOR.ln() * 2.0 * sigma * sigma,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    pub fn weight_sq(&self, dist_sq: f64) -> f64 {
        (-dist_sq * self.inv_two_sigma_sq).exp()
    }

    /// Weight, or `None` when it would fall below [`WEIGHT_FLOOR`].
    #[inline]
    pub fn truncated_weight_sq(&self, dist_sq: f64) -> Option<f64> {
        if dist_sq > self.cutoff_sq {
            return None;
        }
        let k = self.weight_sq(dist_sq);
        (k >= WEIGHT_FLOOR).then_some(k)
    }

    pub fn weight(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
        self.weight_sq(sq_dist(x, y))
    }
}

#[inline]
pub(crate) fn sq_dist(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `exp(-‖x - x*‖² / (2σ²))`.
pub fn gauss_weight(x: &[f64], x_star: &[f64], sigma: f64) -> Result<f64> {
    if x.len() != x_star.len() {
        return Err(Error::DimensionMismatch(format!(
            "kernel arguments of length {} and {}",
            x.len(),
            x_star.len()
        )));
    }
    let k = GaussianKernel::new(sigma)?;
    Ok(k.weight(ArrayView1::from(x), ArrayView1::from(x_star)))
}

/// Squared Euclidean distances between the rows of `a` and `b`, via
/// `‖a‖² + ‖b‖² - 2 a·b` with small negative round-off clamped to zero.
pub fn pairwise_sq_dists(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "pairwise distances between {}-d and {}-d rows",
            a.ncols(),
            b.ncols()
        )));
    }
    let na = a.map_axis(Axis(1), |r| r.dot(&r));
    let nb = b.map_axis(Axis(1), |r| r.dot(&r));
    let mut out = a.dot(&b.t());
    for ((i, j), v) in out.indexed_iter_mut() {
        *v = (na[i] + nb[j] - 2.0 * *v).max(0.0);
    }
    Ok(out)
}

/// Median over unordered pairs `i < j` of `sqrt(‖x_i - x_j‖² / 2)`.
pub fn median_bandwidth(x: &SampleSet) -> Result<f64> {
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "median bandwidth needs at least 2 points, got {n}"
        )));
    }
    let d2 = pairwise_sq_dists(x.data(), x.data())?;
    let mut vals = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            vals.push((0.5 * d2[[i, j]]).sqrt());
        }
    }
    let m = median_in_place(&mut vals);
    let rms = (x.data().iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if m <= 0.0 || m <= 1e-8 * rms {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(m)
}

/// Median bandwidth of the pooled rows of `a` and `b`, computed on an evenly
/// strided subsample of at most `max_points` rows.
pub fn pooled_median_bandwidth(a: &SampleSet, b: &SampleSet, max_points: usize) -> Result<f64> {
    median_bandwidth(&a.concat(b)?.strided(max_points))
}

pub(crate) fn median_in_place(vals: &mut [f64]) -> f64 {
    let n = vals.len();
    let mid = n / 2;
    let (_, upper, _) = vals.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = vals[..mid].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn weight_values() {
        assert_eq!(gauss_weight(&[1.0, 2.0], &[1.0, 2.0], 0.3).unwrap(), 1.0);
        let s = 0.7;
        let w = gauss_weight(&[0.0], &[s * 2f64.sqrt()], s).unwrap();
        assert!((w - (-1f64).exp()).abs() < 1e-15);
        let w = gauss_weight(&[0.0, 0.0], &[3.0, 4.0], 5.0).unwrap();
        assert!((w - (-0.5f64).exp()).abs() < 1e-15);
        assert!((w - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn weight_errors() {
        assert!(matches!(
            gauss_weight(&[0.0], &[0.0, 1.0], 1.0),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(gauss_weight(&[0.0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn median_single_pair() {
        let x = SampleSet::new(array![[0.0], [2.0]]);
        assert!((median_bandwidth(&x).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn median_three_points() {
        // Pair distances² {1, 4, 9}; median 4.
        let x = SampleSet::new(array![[0.0], [1.0], [3.0]]);
        assert!((median_bandwidth(&x).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn median_degenerate() {
        let x = SampleSet::new(array![[1.5, -2.0], [1.5, -2.0], [1.5, -2.0]]);
        assert!(matches!(median_bandwidth(&x), Err(Error::DegenerateBandwidth)));
        let one = SampleSet::new(array![[1.0]]);
        assert!(median_bandwidth(&one).is_err());
    }

    #[test]
    fn pairwise_matches_direct() {
        let a = array![[0.0, 1.0], [2.0, -1.0], [1e8, 1e8]];
        let d = pairwise_sq_dists(a.view(), a.view()).unwrap();
        assert!(d.iter().all(|v| *v >= 0.0));
        assert!((d[[0, 1]] - 8.0).abs() < 1e-12);
        assert_eq!(d[[0, 0]], 0.0);
    }

    #[test]
    fn truncation_threshold() {
        let k = GaussianKernel::new(1.0).unwrap();
        assert!(k.truncated_weight_sq(0.0).is_some());
        assert!(k.truncated_weight_sq(60.0).is_none());
        assert!(k.truncated_weight_sq(50.0).is_some());
    }

    proptest! {
        #[test]
        fn weight_symmetric(x in prop::collection::vec(-5.0..5.0f64, 3),
                            y in prop::collection::vec(-5.0..5.0f64, 3),
                            s in 0.1..3.0f64) {
            let a = gauss_weight(&x, &y, s).unwrap();
            let b = gauss_weight(&y, &x, s).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn weight_decreases_with_distance(r1 in 0.0..4.0f64, dr in 1e-3..4.0f64, s in 0.2..3.0f64) {
            let a = gauss_weight(&[r1, 0.0], &[0.0, 0.0], s).unwrap();
            let b = gauss_weight(&[r1 + dr, 0.0], &[0.0, 0.0], s).unwrap();
            prop_assert!(b < a || (a == 0.0 && b == 0.0));
        }

        #[test]
        fn median_scale_covariant(pts in prop::collection::vec(-10.0..10.0f64, 6..20), c in -4.0..4.0f64) {
            prop_assume!(c.abs() > 0.05);
            let x = SampleSet::new(Array2::from_shape_vec((pts.len() / 2, 2), pts[..pts.len() / 2 * 2].to_vec()).unwrap());
            if let Ok(m) = median_bandwidth(&x) {
                let scaled = SampleSet::new(x.data().mapv(|v| v * c));
                let ms = median_bandwidth(&scaled).unwrap();
                prop_assert!((ms - c.abs() * m).abs() <= 1e-8 * (1.0 + ms));
            }
        }
    }
}
