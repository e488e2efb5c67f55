//! Closed-form target scores `∇ log p` for the kernel estimators that need
//! them (Nadaraya-Watson field, SVGD).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// `∇ log p` evaluated pointwise.
pub trait ScoreOracle: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `∇ log p(x)` into `out`; `x.len() == out.len() == dim()`.
    fn score(&self, x: &[f64], out: &mut [f64]);
}

/// Isotropic Gaussian `N(mean, sd² I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScore {
    pub mean: Vec<f64>,
    pub sd: f64,
}

impl GaussianScore {
    pub fn new(mean: Vec<f64>, sd: f64) -> Result<Self> {
        if !(sd > 0.0) {
            return Err(Error::InvalidArgument(format!("sd must be positive, got {sd}")));
        }
        if mean.is_empty() {
            return Err(Error::InvalidArgument("empty mean".into()));
        }
        Ok(Self { mean, sd })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            sd: 1.0,
        }
    }
}

impl ScoreOracle for GaussianScore {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn score(&self, x: &[f64], out: &mut [f64]) {
        let inv = 1.0 / (self.sd * self.sd);
        for ((o, xi), m) in out.iter_mut().zip(x).zip(&self.mean) {
            *o = -(xi - m) * inv;
        }
    }
}

/// One isotropic component of a [`MixtureScore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub sd: f64,
}

/// Weighted mixture of isotropic Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureScore {
    components: Vec<Component>,
}

impl MixtureScore {
    /// Weights are normalised; they must be positive.
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidArgument("mixture needs a component".into()))?;
        let dim = first.mean.len();
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in &components {
            if !(c.weight > 0.0) || !(c.sd > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "invalid mixture component (weight {}, sd {})",
                    c.weight, c.sd
                )));
            }
            if c.mean.len() != dim || dim == 0 {
                return Err(Error::DimensionMismatch("mixture component means".into()));
            }
        }
        Ok(Self {
            components: components
                .into_iter()
                .map(|c| Component {
                    weight: c.weight / total,
                    ..c
                })
                .collect(),
        })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let logs: Vec<f64> = self.components.iter().map(|c| log_component(c, x)).collect();
        log_sum_exp(&logs)
    }
}

fn log_component(c: &Component, x: &[f64]) -> f64 {
    let d = c.mean.len() as f64;
    let sq: f64 = x.iter().zip(&c.mean).map(|(a, m)| (a - m) * (a - m)).sum();
    c.weight.ln()
        - 0.5 * sq / (c.sd * c.sd)
        - d * c.sd.ln()
        - 0.5 * d * (2.0 * std::f64::consts::PI).ln()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl ScoreOracle for MixtureScore {
    fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    fn score(&self, x: &[f64], out: &mut [f64]) {
        let logs: Vec<f64> = self.components.iter().map(|c| log_component(c, x)).collect();
        let lse = log_sum_exp(&logs);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (c, l) in self.components.iter().zip(&logs) {
            let resp = (l - lse).exp();
            let inv = 1.0 / (c.sd * c.sd);
            for ((o, xi), m) in out.iter_mut().zip(x).zip(&c.mean) {
                *o -= resp * (xi - m) * inv;
            }
        }
    }
}

/// Built-in score ids accepted on the command line:
/// `gauss <mu> <sd>` (isotropic, `mu` may be a comma list) and
/// `mixture w:mu:sd,w:mu:sd,...` (one-dimensional components).
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinScore {
    Gauss(GaussianScore),
    Mixture(MixtureScore),
}

impl BuiltinScore {
    /// Broadcast a scalar Gaussian mean to `dim` coordinates.
    pub fn with_dim(self, dim: usize) -> Result<Self> {
        match self {
            BuiltinScore::Gauss(g) if g.mean.len() == 1 && dim > 1 => {
                Ok(BuiltinScore::Gauss(GaussianScore::new(vec![g.mean[0]; dim], g.sd)?))
            }
            other if other.dim() == dim => Ok(other),
            other => Err(Error::DimensionMismatch(format!(
                "score is {}-d but data is {dim}-d",
                other.dim()
            ))),
        }
    }
}

impl ScoreOracle for BuiltinScore {
    fn dim(&self) -> usize {
        match self {
            BuiltinScore::Gauss(g) => g.dim(),
            BuiltinScore::Mixture(m) => m.dim(),
        }
    }

    fn score(&self, x: &[f64], out: &mut [f64]) {
        match self {
            BuiltinScore::Gauss(g) => g.score(x, out),
            BuiltinScore::Mixture(m) => m.score(x, out),
        }
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("expected a number, got '{s}'")))
}

impl FromStr for BuiltinScore {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        match parts.next() {
            Some("gauss") => {
                let mu = parts
                    .next()
                    .ok_or_else(|| Error::Parse("gauss needs <mu> <sd>".into()))?;
                let sd = parts
                    .next()
                    .ok_or_else(|| Error::Parse("gauss needs <mu> <sd>".into()))?;
                let mean = mu.split(',').map(parse_f64).collect::<Result<Vec<_>>>()?;
                Ok(BuiltinScore::Gauss(GaussianScore::new(mean, parse_f64(sd)?)?))
            }
            Some("mixture") => {
                let spec = parts
                    .next()
                    .ok_or_else(|| Error::Parse("mixture needs w:mu:sd,...".into()))?;
                let comps = spec
                    .split(',')
                    .map(|c| {
                        let f: Vec<&str> = c.split(':').collect();
                        if f.len() != 3 {
                            return Err(Error::Parse(format!("bad mixture component '{c}'")));
                        }
                        Ok(Component {
                            weight: parse_f64(f[0])?,
                            mean: vec![parse_f64(f[1])?],
                            sd: parse_f64(f[2])?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(BuiltinScore::Mixture(MixtureScore::new(comps)?))
            }
            _ => Err(Error::Parse(format!(
                "unknown score '{s}' (expected 'gauss <mu> <sd>' or 'mixture <spec>')"
            ))),
        }
    }
}

impl fmt::Display for BuiltinScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuiltinScore::Gauss(g) => {
                let mu: Vec<String> = g.mean.iter().map(|m| m.to_string()).collect();
                write!(f, "gauss {} {}", mu.join(","), g.sd)
            }
            BuiltinScore::Mixture(m) => {
                let c: Vec<String> = m
                    .components()
                    .iter()
                    .map(|c| format!("{}:{}:{}", c.weight, c.mean[0], c.sd))
                    .collect();
                write!(f, "mixture {}", c.join(","))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_score() {
        let g = GaussianScore::new(vec![-1.0], 0.25).unwrap();
        let mut out = [0.0];
        g.score(&[0.0], &mut out);
        assert!((out[0] + 16.0).abs() < 1e-12);
    }

    #[test]
    fn mixture_score_matches_finite_difference() {
        let m: BuiltinScore = "mixture 1:-5:0.5,1:0:0.5,1:5:0.5".parse().unwrap();
        let BuiltinScore::Mixture(mix) = &m else { panic!() };
        for x in [-6.0, -2.3, 0.1, 2.5, 4.0] {
            let mut out = [0.0];
            m.score(&[x], &mut out);
            let e = 1e-6;
            let fd = (mix.log_density(&[x + e]) - mix.log_density(&[x - e])) / (2.0 * e);
            assert!((fd - out[0]).abs() < 1e-6, "x={x}: {} vs {fd}", out[0]);
        }
    }

    #[test]
    fn parse_errors() {
        assert!("gauss 0".parse::<BuiltinScore>().is_err());
        assert!("mixture 1:0".parse::<BuiltinScore>().is_err());
        assert!("laplace 0 1".parse::<BuiltinScore>().is_err());
        assert!("gauss 0 -1".parse::<BuiltinScore>().is_err());
    }

    #[test]
    fn display_parses_back() {
        for s in ["gauss 0,1 2", "mixture 0.5:-1:1,0.5:1:2"] {
            let b: BuiltinScore = s.parse().unwrap();
            assert_eq!(b.to_string().parse::<BuiltinScore>().unwrap(), b);
        }
    }
}
