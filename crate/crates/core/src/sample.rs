use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// An n×d matrix of observations with optional integer labels per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    data: Array2<f64>,
    labels: Option<Vec<usize>>,
}

impl SampleSet {
    pub fn new(data: Array2<f64>) -> Self {
        Self { data, labels: None }
    }

    pub fn with_labels(data: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != data.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                data.nrows()
            )));
        }
        Ok(Self {
            data,
            labels: Some(labels),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(format!(
                "row {bad} has {} columns, expected {d}",
                rows[bad].len()
            )));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let data = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(Self::new(data))
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn data_mut(&mut self) -> &mut Array2<f64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Rows at `idx`, labels carried along.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            data: self.data.select(Axis(0), idx),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Stack two sets vertically. Labels are dropped unless both carry them.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!(
                "cannot stack {}-d and {}-d sets",
                self.dim(),
                other.dim()
            )));
        }
        let data = ndarray::concatenate(Axis(0), &[self.data.view(), other.data.view()])
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Ok(Self { data, labels })
    }

    /// Evenly strided subset of at most `max` rows.
    pub fn strided(&self, max: usize) -> Self {
        let n = self.len();
        if n <= max || max == 0 {
            return self.clone();
        }
        let idx: Vec<usize> = (0..max).map(|i| i * n / max).collect();
        self.select(&idx)
    }

    pub fn first_columns(&self, k: usize) -> Self {
        Self {
            data: self.data.slice(s![.., ..k]).to_owned(),
            labels: self.labels.clone(),
        }
    }
}

impl From<Array2<f64>> for SampleSet {
    fn from(data: Array2<f64>) -> Self {
        Self::new(data)
    }
}

pub(crate) fn check_same_dim(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ragged_rows_rejected() {
        let err = SampleSet::from_rows(&[vec![1.0, 2.0], vec![3.0]]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn concat_and_select_keep_labels() {
        let a = SampleSet::with_labels(array![[0.0], [1.0]], vec![0, 1]).unwrap();
        let b = SampleSet::with_labels(array![[2.0]], vec![1]).unwrap();
        let c = a.concat(&b).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.labels(), Some(&[0, 1, 1][..]));
        let s = c.select(&[2, 0]);
        assert_eq!(s.data(), array![[2.0], [0.0]]);
        assert_eq!(s.labels(), Some(&[1, 0][..]));
    }

    #[test]
    fn strided_subset() {
        let x = SampleSet::new(Array2::from_shape_fn((10, 1), |(i, _)| i as f64));
        let s = x.strided(4);
        assert_eq!(s.len(), 4);
        assert_eq!(s.row(0)[0], 0.0);
    }
}
