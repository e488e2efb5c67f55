//! Synthetic generators, MCAR masks, standardisation and CSV IO.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::rng::{stream, STREAM_DATA, STREAM_MASK};
use crate::sample::{check_same_dim, SampleSet};

/// `n` draws from the isotropic Gaussian `N(mean, sd² I)`.
pub fn gen_gaussian(mean: &[f64], sd: f64, n: usize, seed: u64) -> Result<SampleSet> {
    if !(sd > 0.0) || mean.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "gaussian needs a non-empty mean and sd > 0 (got sd {sd})"
        )));
    }
    let mut rng = stream(seed, STREAM_DATA);
    let d = mean.len();
    let data = Array2::from_shape_fn((n, d), |(_, c)| {
        let z: f64 = StandardNormal.sample(&mut rng);
        mean[c] + sd * z
    });
    Ok(SampleSet::new(data))
}

/// One component of a one-dimensional Gaussian mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

/// Parses `w:mu:sd,w:mu:sd,...`.
pub fn parse_mixture(spec: &str) -> Result<Vec<MixtureComponent>> {
    spec.split(',')
        .map(|c| {
            let f: Vec<&str> = c.trim().split(':').collect();
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad number '{s}' in mixture component '{c}'")))
            };
            if f.len() != 3 {
                return Err(Error::Parse(format!("mixture component '{c}' is not w:mu:sd")));
            }
            Ok(MixtureComponent {
                weight: num(f[0])?,
                mean: num(f[1])?,
                sd: num(f[2])?,
            })
        })
        .collect()
}

/// Draws from a one-dimensional mixture; labels hold the component index.
pub fn gen_mixture(components: &[MixtureComponent], n: usize, seed: u64) -> Result<SampleSet> {
    if components.is_empty() {
        return Err(Error::InvalidArgument("mixture needs at least one component".into()));
    }
    if components.iter().any(|c| !(c.weight > 0.0) || !(c.sd > 0.0)) {
        return Err(Error::InvalidArgument("mixture weights and sds must be positive".into()));
    }
    let total: f64 = components.iter().map(|c| c.weight).sum();
    let mut cum = Vec::with_capacity(components.len());
    let mut acc = 0.0;
    for c in components {
        acc += c.weight / total;
        cum.push(acc);
    }
    let mut rng = stream(seed, STREAM_DATA);
    let mut data = Array2::zeros((n, 1));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let u: f64 = rng.random();
        let k = cum.iter().position(|&c| u < c).unwrap_or(components.len() - 1);
        let z: f64 = StandardNormal.sample(&mut rng);
        data[[i, 0]] = components[k].mean + components[k].sd * z;
        labels.push(k);
    }
    SampleSet::with_labels(data, labels)
}

/// The benchmark mixture `(N(-5, 0.5²) + N(0, 0.5²) + N(5, 0.5²)) / 3`.
pub fn bench_mixture() -> Vec<MixtureComponent> {
    [-5.0, 0.0, 5.0]
        .iter()
        .map(|&mean| MixtureComponent {
            weight: 1.0 / 3.0,
            mean,
            sd: 0.5,
        })
        .collect()
}

/// Two joined unit half-circles, the left half of the circle centred at
/// `(0, 1)` and the right half of the one centred at `(0, -1)`, meeting at
/// the origin, plus isotropic Gaussian noise.
pub fn gen_s_shape(n: usize, noise: f64, seed: u64) -> Result<SampleSet> {
    if !(noise >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise must be non-negative, got {noise}")));
    }
    let mut rng = stream(seed, STREAM_DATA);
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let pi = std::f64::consts::PI;
    let mut data = Array2::zeros((n, 2));
    for i in 0..n {
        let t: f64 = unit.sample(&mut rng);
        let (x, y) = if t < 0.5 {
            let a = 0.5 * pi + pi * (2.0 * t);
            (a.cos(), 1.0 + a.sin())
        } else {
            let a = 0.5 * pi - pi * (2.0 * t - 1.0);
            (a.cos(), -1.0 + a.sin())
        };
        let e1: f64 = StandardNormal.sample(&mut rng);
        let e2: f64 = StandardNormal.sample(&mut rng);
        data[[i, 0]] = x + noise * e1;
        data[[i, 1]] = y + noise * e2;
    }
    Ok(SampleSet::new(data))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Sin,
    Cos,
}

impl Link {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Link::Sin => x.sin(),
            Link::Cos => x.cos(),
        }
    }
}

impl FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sin" => Ok(Link::Sin),
            "cos" => Ok(Link::Cos),
            other => Err(Error::Parse(format!("unknown link '{other}' (expected sin or cos)"))),
        }
    }
}

/// Five-dimensional set with `X1 = g(X2) + ε`, `X2..X5, ε ~ N(0, 1)`. The
/// dependence lives entirely in the first two coordinates.
pub fn gen_subspace5d(g: Link, n: usize, seed: u64) -> SampleSet {
    let mut rng = stream(seed, STREAM_DATA);
    let mut data = Array2::zeros((n, 5));
    for i in 0..n {
        let z: [f64; 5] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        data[[i, 1]] = z[1];
        data[[i, 0]] = g.apply(z[1]) + z[0];
        for c in 2..5 {
            data[[i, c]] = z[c];
        }
    }
    SampleSet::new(data)
}

/// Observation mask (`true` = observed); each entry is missing
/// independently with probability `rate`.
pub fn mcar_mask(n: usize, d: usize, rate: f64, seed: u64) -> Result<Array2<bool>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("missing rate must be in [0, 1], got {rate}")));
    }
    let mut rng = stream(seed, STREAM_MASK);
    Ok(Array2::from_shape_fn((n, d), |_| rng.random::<f64>() >= rate))
}

/// Per-column mean and (population) standard deviation of observed entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub mean: Array1<f64>,
    pub sd: Array1<f64>,
}

pub const SD_FLOOR: f64 = 1e-12;

/// Standardises columns using observed entries only. Missing entries are
/// left as they are (typically NaN).
pub fn standardize(x: &SampleSet, mask: &Array2<bool>) -> Result<(SampleSet, ColumnStats)> {
    check_same_dim("mask rows", mask.nrows(), x.len())?;
    check_same_dim("mask columns", mask.ncols(), x.dim())?;
    let d = x.dim();
    let mut mean = Array1::zeros(d);
    let mut sd = Array1::zeros(d);
    for c in 0..d {
        let vals: Vec<f64> = (0..x.len()).filter(|&i| mask[[i, c]]).map(|i| x.data()[[i, c]]).collect();
        if vals.is_empty() {
            return Err(Error::InvalidArgument(format!("column {c} has no observed entries")));
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
        if v.sqrt() < SD_FLOOR {
            return Err(Error::InvalidArgument(format!("column {c} is constant on its observed entries")));
        }
        mean[c] = m;
        sd[c] = v.sqrt();
    }
    let mut data = x.data().to_owned();
    for ((i, c), v) in data.indexed_iter_mut() {
        if mask[[i, c]] {
            *v = (*v - mean[c]) / sd[c];
        }
    }
    Ok((SampleSet::new(data), ColumnStats { mean, sd }))
}

pub fn destandardize(x: &SampleSet, stats: &ColumnStats) -> Result<SampleSet> {
    check_same_dim("stats columns", stats.mean.len(), x.dim())?;
    let mut data = x.data().to_owned();
    for ((_, c), v) in data.indexed_iter_mut() {
        *v = *v * stats.sd[c] + stats.mean[c];
    }
    Ok(SampleSet::new(data))
}

/// Column-mean imputation over observed entries.
pub fn mean_impute(x: &SampleSet, mask: &Array2<bool>) -> Result<SampleSet> {
    let (_, stats) = standardize(x, mask)?;
    let mut data = x.data().to_owned();
    for ((i, c), v) in data.indexed_iter_mut() {
        if !mask[[i, c]] {
            *v = stats.mean[c];
        }
    }
    Ok(SampleSet::new(data))
}

/// A CSV table: header, values (NaN where a cell was empty) and the
/// observation mask.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub data: SampleSet,
    pub mask: Array2<bool>,
}

impl Table {
    pub fn has_missing(&self) -> bool {
        self.mask.iter().any(|m| !m)
    }
}

/// Reads a headed CSV of floats; empty cells are missing. Rows must all
/// have the header's width.
pub fn read_csv_from(reader: impl Read) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let d = header.len();
    let mut values = Vec::new();
    let mut observed = Vec::new();
    let mut n = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "line {}: {} fields, header has {d}",
                i + 2,
                rec.len()
            )));
        }
        for (c, cell) in rec.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                values.push(f64::NAN);
                observed.push(false);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Parse(format!("line {}, column '{}': '{cell}' is not a number", i + 2, header[c]))
                })?;
                values.push(v);
                observed.push(true);
            }
        }
        n += 1;
    }
    let data = Array2::from_shape_vec((n, d), values).map_err(|e| Error::Parse(e.to_string()))?;
    let mask = Array2::from_shape_vec((n, d), observed).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(Table {
        header,
        data: SampleSet::new(data),
        mask,
    })
}

pub fn read_csv(path: &Path) -> Result<Table> {
    let f = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    read_csv_from(f)
}

/// Reads a CSV that must not contain missing cells.
pub fn read_complete_csv(path: &Path) -> Result<SampleSet> {
    let t = read_csv(path)?;
    if t.has_missing() {
        return Err(Error::Parse(format!("{}: empty cells are not allowed here", path.display())));
    }
    Ok(t.data)
}

pub fn default_header(d: usize) -> Vec<String> {
    (0..d).map(|c| format!("x{c}")).collect()
}

/// Writes a headed CSV; NaN cells are written empty.
pub fn write_csv_to(writer: impl Write, header: &[String], data: ndarray::ArrayView2<f64>) -> Result<()> {
    check_same_dim("header width", header.len(), data.ncols())?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for row in data.rows() {
        w.write_record(row.iter().map(|v| if v.is_nan() { String::new() } else { format!("{v}") }))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(path: &Path, header: &[String], data: ndarray::ArrayView2<f64>) -> Result<()> {
    let mut buf = Vec::new();
    write_csv_to(&mut buf, header, data)?;
    std::fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_parsing() {
        let c = parse_mixture("1:-5:0.5, 2:0:1").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].weight, 2.0);
        assert!(parse_mixture("1:2").is_err());
        assert!(gen_mixture(&[MixtureComponent { weight: -1.0, mean: 0.0, sd: 1.0 }], 3, 0).is_err());
    }

    #[test]
    fn s_shape_is_bounded() {
        assert_eq!(gen_s_shape(0, 0.1, 1).unwrap().len(), 0);
        let s = gen_s_shape(2000, 0.05, 3).unwrap();
        assert!(s.data().iter().all(|v| v.is_finite() && v.abs() < 3.0));
        assert_eq!(s, gen_s_shape(2000, 0.05, 3).unwrap());
    }

    #[test]
    fn csv_roundtrip_with_missing() {
        let text = "a,b\n1.5,\n,2\n3,4\n";
        let t = read_csv_from(text.as_bytes()).unwrap();
        assert_eq!(t.header, vec!["a", "b"]);
        assert!(!t.mask[[0, 1]] && !t.mask[[1, 0]] && t.mask[[2, 1]]);
        let mut out = Vec::new();
        write_csv_to(&mut out, &t.header, t.data.data()).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn csv_rejects_ragged_and_garbage() {
        assert!(matches!(read_csv_from("a,b\n1\n".as_bytes()), Err(Error::DimensionMismatch(_))));
        assert!(matches!(read_csv_from("a\nfoo\n".as_bytes()), Err(Error::Parse(_))));
    }

    #[test]
    fn standardize_errors() {
        let x = SampleSet::new(ndarray::array![[1.0, 2.0], [1.0, 3.0]]);
        let all = Array2::from_elem((2, 2), true);
        assert!(standardize(&x, &all).is_err());
        let mut m = all.clone();
        m[[0, 1]] = false;
        m[[1, 1]] = false;
        let x = SampleSet::new(ndarray::array![[1.0, 2.0], [2.0, 3.0]]);
        assert!(standardize(&x, &m).is_err());
    }
}
