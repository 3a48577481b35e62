//! Integrability exponents of the drift and the derived subcriticality gaps.
//!
//! A drift lives in the mixed space `L^{r,q}`: spatial `L^r` composed with
//! temporal `L^q`. The two gaps
//!
//! ```text
//! delta1 = 1/2 - d/(2r) - 1/q     (standing assumption: delta1 > 0)
//! delta2 = 1/4 - d/(2r) - 1/q     (double-integral regime: delta2 > 0)
//! ```
//!
//! control every scaling law in the crate. Infinite exponents are a dedicated
//! variant so that `1/r` and `1/q` vanish exactly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An integrability exponent in `[1, ∞]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ExponentRepr", into = "ExponentRepr")]
pub enum Exponent {
    Finite(f64),
    Infinite,
}

impl Exponent {
    /// `1/r`, exactly zero at infinity.
    pub fn reciprocal(self) -> f64 {
        match self {
            Exponent::Finite(r) => 1.0 / r,
            Exponent::Infinite => 0.0,
        }
    }

    /// Hölder conjugate `r' = r/(r-1)`.
    pub fn conjugate(self) -> Exponent {
        match self {
            Exponent::Infinite => Exponent::Finite(1.0),
            Exponent::Finite(1.0) => Exponent::Infinite,
            Exponent::Finite(r) => Exponent::Finite(r / (r - 1.0)),
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Exponent::Infinite)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Exponent::Finite(r) => Some(r),
            Exponent::Infinite => None,
        }
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Finite(r) => write!(f, "{r}"),
            Exponent::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Exponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(Exponent::Infinite),
            _ => s.parse::<f64>().map_err(|_| Error::Domain(format!("cannot parse exponent `{s}`"))).and_then(Exponent::try_from),
        }
    }
}

impl TryFrom<f64> for Exponent {
    type Error = Error;

    fn try_from(r: f64) -> Result<Self> {
        if r.is_infinite() && r > 0.0 {
            Ok(Exponent::Infinite)
        } else if r.is_finite() && r >= 1.0 {
            Ok(Exponent::Finite(r))
        } else {
            Err(Error::Domain(format!("exponent {r} is not in [1, inf]")))
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ExponentRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<ExponentRepr> for Exponent {
    type Error = Error;

    fn try_from(repr: ExponentRepr) -> Result<Self> {
        match repr {
            ExponentRepr::Number(r) => Exponent::try_from(r),
            ExponentRepr::Text(s) => s.parse(),
        }
    }
}

impl From<Exponent> for ExponentRepr {
    fn from(e: Exponent) -> Self {
        match e {
            Exponent::Finite(r) => ExponentRepr::Number(r),
            Exponent::Infinite => ExponentRepr::Text("inf".into()),
        }
    }
}

/// Dimension, integrability exponents and noise amplitude of one experiment.
///
/// The viscosity is always derived as `nu = sigma^2 / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawExponents", into = "RawExponents")]
pub struct Exponents {
    d: usize,
    r: Exponent,
    q: Exponent,
    sigma: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExponents {
    d: usize,
    r: Exponent,
    q: Exponent,
    sigma: f64,
}

impl TryFrom<RawExponents> for Exponents {
    type Error = Error;

    fn try_from(raw: RawExponents) -> Result<Self> {
        Exponents::new(raw.d, raw.r, raw.q, raw.sigma)
    }
}

impl From<Exponents> for RawExponents {
    fn from(e: Exponents) -> Self {
        RawExponents { d: e.d, r: e.r, q: e.q, sigma: e.sigma }
    }
}

impl Exponents {
    /// Validates `r > d`, `q > 2` (finite cases) and `sigma > 0`.
    pub fn new(d: usize, r: Exponent, q: Exponent, sigma: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Domain("dimension must be positive".into()));
        }
        if let Exponent::Finite(rv) = r {
            if rv <= d as f64 {
                return Err(Error::Domain(format!("r = {rv} must exceed d = {d}")));
            }
        }
        if let Exponent::Finite(qv) = q {
            if qv <= 2.0 {
                return Err(Error::Domain(format!("q = {qv} must exceed 2")));
            }
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!("sigma = {sigma} must be positive")));
        }
        Ok(Exponents { d, r, q, sigma })
    }

    /// Same as [`Exponents::new`] with the noise given through the viscosity.
    pub fn with_viscosity(d: usize, r: Exponent, q: Exponent, nu: f64) -> Result<Self> {
        Self::new(d, r, q, (2.0 * nu).sqrt())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn r(&self) -> Exponent {
        self.r
    }

    pub fn q(&self) -> Exponent {
        self.q
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn nu(&self) -> f64 {
        0.5 * self.sigma * self.sigma
    }

    fn correction(&self) -> f64 {
        self.d as f64 * self.r.reciprocal() / 2.0 + self.q.reciprocal()
    }

    pub fn delta1(&self) -> f64 {
        0.5 - self.correction()
    }

    pub fn delta2(&self) -> f64 {
        0.25 - self.correction()
    }

    pub fn is_subcritical(&self) -> bool {
        self.delta1() > 0.0
    }

    pub fn is_davie_regime(&self) -> bool {
        self.delta2() > 0.0
    }
}

/// `1/2 - d/(2r) - 1/q`.
pub fn delta1(exp: &Exponents) -> f64 {
    exp.delta1()
}

/// `1/4 - d/(2r) - 1/q`.
pub fn delta2(exp: &Exponents) -> f64 {
    exp.delta2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exps(d: usize, r: Exponent, q: Exponent) -> Exponents {
        Exponents::new(d, r, q, 1.0).unwrap()
    }

    #[test]
    fn delta1_examples() {
        for d in 1..5 {
            assert_eq!(exps(d, Exponent::Infinite, Exponent::Infinite).delta1(), 0.5);
        }
        let e = exps(3, Exponent::Finite(12.0), Exponent::Finite(8.0));
        assert!((e.delta1() - 0.25).abs() < 1e-15);
        let e = exps(2, Exponent::Finite(4.0), Exponent::Finite(8.0));
        assert!((e.delta1() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn delta2_examples() {
        assert_eq!(exps(7, Exponent::Infinite, Exponent::Infinite).delta2(), 0.25);
        let e = exps(3, Exponent::Finite(12.0), Exponent::Finite(8.0));
        assert!(e.delta2().abs() < 1e-15);
        assert!(!e.is_davie_regime());
        assert!(e.is_subcritical());
        let e = exps(2, Exponent::Finite(8.0), Exponent::Finite(16.0));
        assert!((e.delta2() - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        assert!(Exponents::new(3, Exponent::Finite(3.0), Exponent::Infinite, 1.0).is_err());
        assert!(Exponents::new(1, Exponent::Infinite, Exponent::Finite(2.0), 1.0).is_err());
        assert!(Exponents::new(1, Exponent::Infinite, Exponent::Infinite, 0.0).is_err());
        assert!(Exponents::new(0, Exponent::Infinite, Exponent::Infinite, 1.0).is_err());
        assert!("0.5".parse::<Exponent>().is_err());
        assert!("nan".parse::<Exponent>().is_err());
    }

    #[test]
    fn viscosity_tracks_sigma() {
        let e = Exponents::with_viscosity(2, Exponent::Infinite, Exponent::Infinite, 0.1).unwrap();
        assert!((e.nu() - 0.1).abs() < 1e-15);
        assert!((e.sigma() - 0.2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn conjugates() {
        assert_eq!(Exponent::Infinite.conjugate(), Exponent::Finite(1.0));
        assert_eq!(Exponent::Finite(1.0).conjugate(), Exponent::Infinite);
        assert_eq!(Exponent::Finite(2.0).conjugate(), Exponent::Finite(2.0));
        assert_eq!(Exponent::Finite(4.0).conjugate(), Exponent::Finite(4.0 / 3.0));
    }

    #[test]
    fn serde_uses_inf_text() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct W {
            e: Exponents,
        }
        let w = W { e: exps(2, Exponent::Infinite, Exponent::Finite(8.0)) };
        let text = toml::to_string(&w).unwrap();
        assert!(text.contains("r = \"inf\""), "{text}");
        let back: W = toml::from_str(&text).unwrap();
        assert_eq!(back, w);
        assert!(toml::from_str::<W>("[e]\nd = 2\nr = 1.5\nq = 8\nsigma = 1\n").is_err());
    }

    proptest! {
        #[test]
        fn gap_difference_is_a_quarter(d in 1usize..6, rf in 0.0f64..50.0, qf in 0.0f64..50.0,
                                       rinf in any::<bool>(), qinf in any::<bool>()) {
            let r = if rinf { Exponent::Infinite } else { Exponent::Finite(d as f64 + 0.01 + rf) };
            let q = if qinf { Exponent::Infinite } else { Exponent::Finite(2.01 + qf) };
            let e = exps(d, r, q);
            prop_assert!((e.delta1() - e.delta2() - 0.25).abs() < 1e-14);
            prop_assert_eq!(e.is_subcritical(), e.delta1() > 0.0);
        }
    }
}
