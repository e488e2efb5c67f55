//! Registered f-divergences, their velocity generators `h`, and mirror
//! divergences with convex conjugates.
//!
//! Two normalisations of each mirror are kept:
//!
//! * [`Mirror`] is the mirror divergence with its own textbook generator,
//!   e.g. Pearson χ² with `ψ(r) = (r-1)²/2` and `ψ*(d) = d²/2 + d`.
//! * [`Generator`] is the same divergence with the linear term chosen so
//!   that `ψ'(r) = h(r)` exactly. Its conjugate satisfies `ψ*'(h(r)) = r`,
//!   so the maximiser of the variational bound is `h∘r` itself. The
//!   estimators use this form.
//!
//! The two differ by `ψ_gen(r) = ψ_mirror(r) - c (r - 1)` for a constant
//! `c`, which leaves the divergence unchanged and shifts the conjugate:
//! `ψ*_gen(d) = ψ*_mirror(d + c) - c`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Field divergence `D_f[p, q]` whose Wasserstein flow is simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Divergence {
    /// `KL[p, q]`, `f(r) = r log r`.
    ForwardKl,
    /// `KL[q, p]`, `f(r) = -log r`.
    BackwardKl,
    /// Pearson χ², `f(r) = (r-1)²/2`.
    PearsonChi2,
    /// Neyman χ², `f(r) = 1/(2r) - 1/2`.
    NeymanChi2,
}

impl Divergence {
    pub const ALL: [Divergence; 4] = [
        Divergence::ForwardKl,
        Divergence::BackwardKl,
        Divergence::PearsonChi2,
        Divergence::NeymanChi2,
    ];

    /// Generator `f`, evaluated without a domain check (`NaN` for `r <= 0`
    /// where a logarithm is involved).
    pub fn f(self, r: f64) -> f64 {
        match self {
            Divergence::ForwardKl => r * r.ln(),
            Divergence::BackwardKl => -r.ln(),
            Divergence::PearsonChi2 => 0.5 * (r - 1.0) * (r - 1.0),
            Divergence::NeymanChi2 => 0.5 / r - 0.5,
        }
    }

    /// Velocity generator: particles move along `∇(h∘r)`.
    pub fn h(self, r: f64) -> Result<f64> {
        if r.is_nan() || r <= 0.0 {
            return Err(Error::Domain(format!("h({self}) needs r > 0, got {r}")));
        }
        Ok(self.h_unchecked(r))
    }

    pub(crate) fn h_unchecked(self, r: f64) -> f64 {
        match self {
            Divergence::ForwardKl => r,
            Divergence::BackwardKl => r.ln(),
            Divergence::PearsonChi2 => 0.5 * r * r - 0.5,
            Divergence::NeymanChi2 => -1.0 / r,
        }
    }

    pub fn mirror(self) -> Mirror {
        match self {
            Divergence::ForwardKl => Mirror::PearsonChi2,
            Divergence::BackwardKl => Mirror::ForwardKl,
            Divergence::NeymanChi2 => Mirror::BackwardKl,
            Divergence::PearsonChi2 => Mirror::Cubic,
        }
    }

    /// Mirror generator normalised so that `ψ' = h`.
    pub fn generator(self) -> Generator {
        match self {
            Divergence::ForwardKl => Generator::Quadratic,
            Divergence::BackwardKl => Generator::Entropy,
            Divergence::NeymanChi2 => Generator::NegLog,
            Divergence::PearsonChi2 => Generator::Cubic,
        }
    }

    pub fn spec(self) -> DivergenceSpec {
        DivergenceSpec::new(self)
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            Divergence::ForwardKl => "fkl",
            Divergence::BackwardKl => "bkl",
            Divergence::PearsonChi2 => "pearson",
            Divergence::NeymanChi2 => "neyman",
        }
    }
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for Divergence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fkl" | "forward-kl" => Ok(Divergence::ForwardKl),
            "bkl" | "backward-kl" => Ok(Divergence::BackwardKl),
            "pearson" => Ok(Divergence::PearsonChi2),
            "neyman" => Ok(Divergence::NeymanChi2),
            other => Err(Error::Parse(format!(
                "unknown divergence '{other}' (expected fkl, bkl, pearson or neyman)"
            ))),
        }
    }
}

/// `h_of(div, r)`; errors on `r <= 0`.
pub fn h_of(div: Divergence, r: f64) -> Result<f64> {
    div.h(r)
}

pub fn mirror_of(div: Divergence) -> Mirror {
    div.mirror()
}

/// Open interval `(lo, hi)`; infinite ends allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }
}

/// A mirror divergence in its textbook normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mirror {
    /// Pearson χ², `ψ(r) = (r-1)²/2`, extended to all real `r`.
    PearsonChi2,
    /// Forward KL, `ψ(r) = r log r`.
    ForwardKl,
    /// Backward KL, `ψ(r) = -log r`.
    BackwardKl,
    /// `ψ(r) = r³/6 - r/2 + 1/3` on `r >= 0`; mirror of Pearson χ².
    Cubic,
}

impl Mirror {
    pub fn psi(self, r: f64) -> f64 {
        match self {
            Mirror::PearsonChi2 => 0.5 * (r - 1.0) * (r - 1.0),
            Mirror::ForwardKl => r * r.ln(),
            Mirror::BackwardKl => -r.ln(),
            Mirror::Cubic => r * r * r / 6.0 - 0.5 * r + 1.0 / 3.0,
        }
    }

    /// Constant `c` with `ψ_mirror'(r) = h(r) + c` for the field divergence
    /// this mirror serves.
    pub fn offset(self) -> f64 {
        match self {
            Mirror::PearsonChi2 => -1.0,
            Mirror::ForwardKl => 1.0,
            Mirror::BackwardKl | Mirror::Cubic => 0.0,
        }
    }

    pub fn aligned(self) -> Generator {
        match self {
            Mirror::PearsonChi2 => Generator::Quadratic,
            Mirror::ForwardKl => Generator::Entropy,
            Mirror::BackwardKl => Generator::NegLog,
            Mirror::Cubic => Generator::Cubic,
        }
    }

    pub fn domain(self) -> Interval {
        let g = self.aligned().domain();
        let c = self.offset();
        Interval {
            lo: g.lo + c,
            hi: g.hi + c,
        }
    }

    fn check(self, d: f64) -> Result<f64> {
        if !self.domain().contains(d) {
            return Err(Error::Domain(format!(
                "conjugate of {self:?} undefined at d = {d}"
            )));
        }
        Ok(d - self.offset())
    }

    /// `ψ*(d) = sup_r { r d - ψ(r) }`.
    pub fn conjugate(self, d: f64) -> Result<f64> {
        let e = self.check(d)?;
        Ok(self.aligned().conjugate(e) + self.offset())
    }

    pub fn conjugate_prime(self, d: f64) -> Result<f64> {
        let e = self.check(d)?;
        Ok(self.aligned().conjugate_prime(e))
    }

    pub fn conjugate_second(self, d: f64) -> Result<f64> {
        let e = self.check(d)?;
        Ok(self.aligned().conjugate_second(e))
    }
}

/// Field-aligned mirror generator (`ψ' = h`, `ψ(1) = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Generator {
    /// `ψ(r) = (r² - 1)/2` on ℝ; `ψ*(d) = d²/2 + 1/2`.
    Quadratic,
    /// `ψ(r) = r log r - r + 1`; `ψ*(d) = e^d - 1`.
    Entropy,
    /// `ψ(r) = -log r`; `ψ*(d) = -1 - log(-d)` for `d < 0`.
    NegLog,
    /// `ψ(r) = r³/6 - r/2 + 1/3` on `r >= 0`;
    /// `ψ*(d) = ((2d+1)^{3/2} - 1)/3` for `d >= -1/2`, `-1/3` below.
    Cubic,
}

impl Generator {
    pub fn psi(self, r: f64) -> f64 {
        match self {
            Generator::Quadratic => 0.5 * (r * r - 1.0),
            Generator::Entropy => r * r.ln() - r + 1.0,
            Generator::NegLog => -r.ln(),
            Generator::Cubic => r * r * r / 6.0 - 0.5 * r + 1.0 / 3.0,
        }
    }

    /// Interval on which `ψ*` is finite.
    pub fn domain(self) -> Interval {
        match self {
            Generator::NegLog => Interval {
                lo: f64::NEG_INFINITY,
                hi: 0.0,
            },
            _ => Interval::REAL,
        }
    }

    /// Conjugate value, first and second derivative. Outside the domain
    /// the value is `+∞`.
    #[inline]
    pub fn eval(self, d: f64) -> (f64, f64, f64) {
        match self {
            Generator::Quadratic => (0.5 * d * d + 0.5, d, 1.0),
            Generator::Entropy => {
                let e = d.exp();
                (e - 1.0, e, e)
            }
            Generator::NegLog => {
                if d < 0.0 {
                    (-1.0 - (-d).ln(), -1.0 / d, 1.0 / (d * d))
                } else {
                    (f64::INFINITY, f64::INFINITY, f64::INFINITY)
                }
            }
            Generator::Cubic => {
                let s = 2.0 * d + 1.0;
                if s > 0.0 {
                    let r = s.sqrt();
                    ((s * r - 1.0) / 3.0, r, 1.0 / r)
                } else {
                    (-1.0 / 3.0, 0.0, 0.0)
                }
            }
        }
    }

    pub fn conjugate(self, d: f64) -> f64 {
        self.eval(d).0
    }

    pub fn conjugate_prime(self, d: f64) -> f64 {
        self.eval(d).1
    }

    pub fn conjugate_second(self, d: f64) -> f64 {
        self.eval(d).2
    }

    /// `d` at which the conjugate's maximiser is `r = 1`.
    pub fn neutral(self) -> f64 {
        match self {
            Generator::Quadratic => 1.0,
            Generator::Entropy | Generator::Cubic => 0.0,
            Generator::NegLog => -1.0,
        }
    }

    /// Clamp interval used by the estimators: the witness values `h(r)` for
    /// `|log r| <= clamp`. The quadratic conjugate is left unclamped.
    pub fn clamp_bounds(self, clamp: f64) -> Interval {
        match self {
            Generator::Entropy => Interval {
                lo: -clamp,
                hi: clamp,
            },
            Generator::NegLog => Interval {
                lo: -clamp.exp(),
                hi: -(-clamp).exp(),
            },
            Generator::Cubic => Interval {
                lo: 0.5 * ((-2.0 * clamp).exp() - 1.0),
                hi: 0.5 * ((2.0 * clamp).exp() - 1.0),
            },
            Generator::Quadratic => Interval::REAL,
        }
    }

    pub fn clamped(self, clamp: f64) -> ClampedConjugate {
        ClampedConjugate {
            gen: self,
            bounds: self.clamp_bounds(clamp),
        }
    }
}

/// Conjugate made bounded for the estimators: constant below the clamp
/// interval and continued linearly (value and slope matching) above it.
/// Both pieces keep it convex, so the localised objective stays concave.
#[derive(Debug, Clone, Copy)]
pub struct ClampedConjugate {
    gen: Generator,
    bounds: Interval,
}

impl ClampedConjugate {
    pub fn generator(&self) -> Generator {
        self.gen
    }

    pub fn bounds(&self) -> Interval {
        self.bounds
    }

    #[inline]
    pub fn eval(&self, d: f64) -> (f64, f64, f64) {
        if d < self.bounds.lo {
            (self.gen.eval(self.bounds.lo).0, 0.0, 0.0)
        } else if d > self.bounds.hi {
            let (f, g, _) = self.gen.eval(self.bounds.hi);
            (f + g * (d - self.bounds.hi), g, 0.0)
        } else {
            self.gen.eval(d)
        }
    }

    #[inline]
    pub fn value(&self, d: f64) -> f64 {
        self.eval(d).0
    }

    /// Witness value entering the target-side term, `min(d, hi)`, and its
    /// slope.
    #[inline]
    pub fn cap(&self, d: f64) -> (f64, f64) {
        if d > self.bounds.hi {
            (self.bounds.hi, 0.0)
        } else {
            (d, 1.0)
        }
    }
}

/// Registry entry tying a field divergence to its mirror.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceSpec {
    pub id: Divergence,
    pub mirror: Mirror,
    pub generator: Generator,
}

impl DivergenceSpec {
    pub fn new(id: Divergence) -> Self {
        Self {
            id,
            mirror: id.mirror(),
            generator: id.generator(),
        }
    }

    pub fn f(&self, r: f64) -> f64 {
        self.id.f(r)
    }

    pub fn h(&self, r: f64) -> Result<f64> {
        self.id.h(r)
    }

    pub fn psi(&self, r: f64) -> f64 {
        self.generator.psi(r)
    }

    pub fn psi_con(&self, d: f64) -> Result<f64> {
        self.checked(d).map(|d| self.generator.conjugate(d))
    }

    pub fn psi_con_prime(&self, d: f64) -> Result<f64> {
        self.checked(d).map(|d| self.generator.conjugate_prime(d))
    }

    pub fn psi_con_second(&self, d: f64) -> Result<f64> {
        self.checked(d).map(|d| self.generator.conjugate_second(d))
    }

    pub fn conj_domain(&self) -> Interval {
        self.generator.domain()
    }

    fn checked(&self, d: f64) -> Result<f64> {
        if self.conj_domain().contains(d) {
            Ok(d)
        } else {
            Err(Error::Domain(format!(
                "ψ* for the {} field undefined at d = {d}",
                self.id
            )))
        }
    }
}
