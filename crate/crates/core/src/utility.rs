//! Utility functions with their marginals and inverse marginals.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};

/// User-supplied utility: value, marginal `U'`, and inverse marginal
/// `I = (U')^{-1}`.
pub trait CustomUtility: Send + Sync {
    fn value(&self, z: f64) -> f64;
    fn derivative(&self, z: f64) -> f64;
    fn inverse_derivative(&self, y: f64) -> f64;
}

#[derive(Clone)]
pub enum Utility {
    Log,
    /// `U(z) = z^η / η` with `η ∈ (0, 1)`.
    Power { exponent: f64 },
    Custom(Arc<dyn CustomUtility>),
}

impl fmt::Debug for Utility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl Utility {
    pub fn power(exponent: f64) -> Result<Self> {
        if !(exponent > 0.0 && exponent < 1.0) {
            return Err(invalid("reward.power_exponent", "exponent must lie in (0, 1)"));
        }
        Ok(Utility::Power { exponent })
    }

    pub fn name(&self) -> String {
        match self {
            Utility::Log => "log".into(),
            Utility::Power { exponent } => format!("power({exponent})"),
            Utility::Custom(_) => "custom".into(),
        }
    }

    pub fn value(&self, z: f64) -> f64 {
        match self {
            Utility::Log => z.ln(),
            Utility::Power { exponent } => z.powf(*exponent) / exponent,
            Utility::Custom(u) => u.value(z),
        }
    }

    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            Utility::Log => 1.0 / z,
            Utility::Power { exponent } => z.powf(exponent - 1.0),
            Utility::Custom(u) => u.derivative(z),
        }
    }

    pub fn inverse_derivative(&self, y: f64) -> f64 {
        match self {
            Utility::Log => 1.0 / y,
            Utility::Power { exponent } => y.powf(1.0 / (exponent - 1.0)),
            Utility::Custom(u) => u.inverse_derivative(y),
        }
    }

    /// Evaluates `U(z)`, failing on non-finite results (e.g. `log 0`).
    pub fn checked_value(&self, z: f64) -> Result<f64> {
        let v = self.value(z);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Utility(format!("{} is not finite at {z}", self.name())))
        }
    }

    /// Spot check of strict monotonicity and strict concavity on a log grid
    /// over `[1e-3, 1e3]`, plus a decay check of custom marginals.
    pub fn check_shape(&self) -> Result<()> {
        let grid: Vec<f64> = (0..=60).map(|k| 10f64.powf(-3.0 + 0.1 * k as f64)).collect();
        let vals: Vec<f64> = grid.iter().map(|z| self.value(*z)).collect();
        if vals.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Utility(format!("{} is not strictly increasing", self.name())));
        }
        for w in grid.windows(3).zip(vals.windows(3)) {
            let (z, v) = w;
            // Chord slopes must strictly decrease.
            let s1 = (v[1] - v[0]) / (z[1] - z[0]);
            let s2 = (v[2] - v[1]) / (z[2] - z[1]);
            if !(s2 < s1) {
                return Err(Error::Utility(format!("{} is not strictly concave near {}", self.name(), z[1])));
            }
        }
        // Built-in families meet the Inada limits analytically; custom
        // marginals must at least decrease across twenty-four decades.
        if let Utility::Custom(_) = self {
            let marg: Vec<f64> = (-12..=12).map(|k| self.derivative(10f64.powi(k))).collect();
            if marg.windows(2).any(|w| !(w[1] < w[0])) || !(marg[0] > marg[24] * 1e2) {
                return Err(Error::Utility(format!("{} violates the Inada limits", self.name())));
            }
        }
        Ok(())
    }
}
