//! Diffusivity models and the associated flux function.
//!
//! Both models map a squared gradient magnitude `s²` to a coefficient in
//! `(0, 1]`. The flux `Φ(s) = s·c(s²)` rises up to `|s| = λ` and falls
//! beyond it, so the diffusion runs forward below the contrast parameter and
//! backward above it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DiffusionError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffusivityKind {
    /// `1 / (1 + s²/λ²)`
    Rational,
    /// `exp(-s² / (2λ²))`
    Exponential,
}

impl fmt::Display for DiffusivityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiffusivityKind::Rational => "rational",
            DiffusivityKind::Exponential => "exponential",
        })
    }
}

impl FromStr for DiffusivityKind {
    type Err = DiffusionError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rational" => Ok(DiffusivityKind::Rational),
            "exponential" => Ok(DiffusivityKind::Exponential),
            other => Err(DiffusionError::Config(format!(
                "unknown diffusivity '{other}' (expected rational or exponential)"
            ))),
        }
    }
}

/// Whether diffusion at a given gradient smooths or sharpens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    Forward,
    Backward,
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusivityModel {
    kind: DiffusivityKind,
    lambda: f64,
}

impl DiffusivityModel {
    pub fn new(kind: DiffusivityKind, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(DiffusionError::Config(format!(
                "lambda must be positive and finite (got {lambda})"
            )));
        }
        Ok(DiffusivityModel { kind, lambda })
    }

    pub fn rational(lambda: f64) -> Result<Self> {
        Self::new(DiffusivityKind::Rational, lambda)
    }

    pub fn exponential(lambda: f64) -> Result<Self> {
        Self::new(DiffusivityKind::Exponential, lambda)
    }

    pub fn kind(&self) -> DiffusivityKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `c(s²)` for a squared gradient magnitude.
    pub fn evaluate(&self, s_sq: f64) -> Result<f64> {
        if !(s_sq.is_finite() && s_sq >= 0.0) {
            return Err(DiffusionError::Domain(format!(
                "squared gradient must be finite and nonnegative (got {s_sq})"
            )));
        }
        Ok(self.c(s_sq))
    }

    /// Unchecked `c(s²)` for the assembly loops; inputs there are sums of
    /// squares of finite values.
    #[inline]
    pub(crate) fn c(&self, s_sq: f64) -> f64 {
        let ratio = s_sq / (self.lambda * self.lambda);
        match self.kind {
            DiffusivityKind::Rational => 1.0 / (1.0 + ratio),
            DiffusivityKind::Exponential => (-0.5 * ratio).exp(),
        }
    }

    /// `Φ(s) = s·c(s²)`.
    pub fn flux(&self, s: f64) -> Result<f64> {
        check_finite(s)?;
        Ok(s * self.c(s * s))
    }

    /// `Φ'(s) = c(s²) + 2s²c'(s²)` in closed form.
    pub fn flux_derivative(&self, s: f64) -> Result<f64> {
        check_finite(s)?;
        let ratio = s * s / (self.lambda * self.lambda);
        Ok(match self.kind {
            DiffusivityKind::Rational => (1.0 - ratio) / ((1.0 + ratio) * (1.0 + ratio)),
            DiffusivityKind::Exponential => (1.0 - ratio) * (-0.5 * ratio).exp(),
        })
    }

    /// Classifies the sign of `Φ'(s)`; values within `1e-12·max(1, |Φ'(0)|)`
    /// of zero are `Critical`.
    pub fn regime(&self, s: f64) -> Result<Regime> {
        let d = self.flux_derivative(s)?;
        let band = 1e-12 * self.flux_derivative(0.0)?.abs().max(1.0);
        Ok(if d.abs() <= band {
            Regime::Critical
        } else if d > 0.0 {
            Regime::Forward
        } else {
            Regime::Backward
        })
    }
}

fn check_finite(s: f64) -> Result<()> {
    if !s.is_finite() {
        return Err(DiffusionError::Domain(format!(
            "gradient value must be finite (got {s})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn models(lambda: f64) -> [DiffusivityModel; 2] {
        [
            DiffusivityModel::rational(lambda).unwrap(),
            DiffusivityModel::exponential(lambda).unwrap(),
        ]
    }

    #[test]
    fn evaluate_examples() {
        let r = DiffusivityModel::rational(1.0).unwrap();
        let e = DiffusivityModel::exponential(1.0).unwrap();
        assert_eq!(DiffusivityModel::rational(3.7).unwrap().evaluate(0.0).unwrap(), 1.0);
        assert_eq!(r.evaluate(3.0).unwrap(), 0.25);
        assert!((e.evaluate(2.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!((e.evaluate(2.0).unwrap() - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn evaluate_rejects_bad_input() {
        let r = DiffusivityModel::rational(1.0).unwrap();
        assert!(matches!(r.evaluate(-1.0), Err(DiffusionError::Domain(_))));
        assert!(r.evaluate(f64::NAN).is_err());
        assert!(r.evaluate(f64::INFINITY).is_err());
        assert!(DiffusivityModel::rational(0.0).is_err());
        assert!(DiffusivityModel::exponential(-1.0).is_err());
        assert!(DiffusivityModel::exponential(f64::NAN).is_err());
    }

    #[test]
    fn flux_examples() {
        let r = DiffusivityModel::rational(1.0).unwrap();
        assert_eq!(r.flux(0.0).unwrap(), 0.0);
        assert_eq!(r.flux(1.0).unwrap(), 0.5);
        for m in models(0.7) {
            for k in 0..50 {
                let s = 0.13 * k as f64;
                assert_eq!(m.flux(-s).unwrap(), -m.flux(s).unwrap());
            }
        }
        assert!(r.flux(f64::INFINITY).is_err());
    }

    #[test]
    fn flux_derivative_examples() {
        let r = DiffusivityModel::rational(1.0).unwrap();
        for m in models(2.0) {
            assert_eq!(m.flux_derivative(0.0).unwrap(), 1.0);
        }
        assert_eq!(r.flux_derivative(1.0).unwrap(), 0.0);
        assert!((r.flux_derivative(2.0).unwrap() + 0.12).abs() < 1e-15);
        // central difference of the flux as an independent check
        let h = 1e-6;
        let fd = (r.flux(2.0 + h).unwrap() - r.flux(2.0 - h).unwrap()) / (2.0 * h);
        assert!((fd + 0.12).abs() < 1e-8);
        assert!(r.flux_derivative(f64::NAN).is_err());
    }

    #[test]
    fn regime_examples() {
        let r = DiffusivityModel::rational(1.0).unwrap();
        assert_eq!(r.regime(0.5).unwrap(), Regime::Forward);
        assert_eq!(r.regime(2.0).unwrap(), Regime::Backward);
        assert_eq!(r.regime(1.0).unwrap(), Regime::Critical);
        assert_eq!(r.regime(-2.0).unwrap(), Regime::Backward);
        let e = DiffusivityModel::exponential(3.0).unwrap();
        assert_eq!(e.regime(3.0).unwrap(), Regime::Critical);
        assert_eq!(e.regime(2.9).unwrap(), Regime::Forward);
        assert_eq!(e.regime(3.1).unwrap(), Regime::Backward);
    }

    #[test]
    fn flux_has_single_positive_maximum() {
        for lambda in [0.3, 1.0, 5.0] {
            for m in models(lambda) {
                let mut changes = Vec::new();
                let mut prev = m.flux_derivative(1e-4 * lambda).unwrap();
                for k in 1..=4000 {
                    let s = 1e-4 * lambda + k as f64 * 1e-3 * lambda;
                    let d = m.flux_derivative(s).unwrap();
                    if d.signum() != prev.signum() && d != 0.0 && prev != 0.0 {
                        changes.push(s);
                    }
                    if d != 0.0 {
                        prev = d;
                    }
                }
                assert_eq!(changes.len(), 1, "{m:?}");
                assert!((changes[0] - lambda).abs() <= 1e-3 * lambda);
            }
        }
    }

    #[test]
    fn parse_kind() {
        assert_eq!(
            "rational".parse::<DiffusivityKind>().unwrap(),
            DiffusivityKind::Rational
        );
        assert_eq!(
            "exponential".parse::<DiffusivityKind>().unwrap(),
            DiffusivityKind::Exponential
        );
        assert!("tv".parse::<DiffusivityKind>().is_err());
    }

    proptest! {
        #[test]
        fn evaluate_is_strictly_decreasing(
            lambda in 0.1f64..10.0,
            a in 0.0f64..50.0,
            b in 0.0f64..50.0,
        ) {
            prop_assume!((a - b).abs() > 1e-9);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            for m in models(lambda) {
                let (clo, chi) = (m.evaluate(lo).unwrap(), m.evaluate(hi).unwrap());
                prop_assert!(clo > chi || chi == 0.0);
                prop_assert!(clo <= 1.0 && chi >= 0.0);
            }
        }
    }
}
