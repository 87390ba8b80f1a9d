//! Reals extended by `+∞`, the codomain of a support function.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul};

use serde::{Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    PosInfinity,
}

impl ExtendedReal {
    pub const ZERO: Self = ExtendedReal::Finite(0.0);

    pub fn is_finite(self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(v),
            ExtendedReal::PosInfinity => None,
        }
    }

    /// Maps `+∞` onto `f64::INFINITY`.
    pub fn to_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }

    /// Scales by a nonnegative factor. `0 · ∞` is taken as 0, the convention
    /// used when integrating a support function over an empty interval.
    pub fn scale(self, factor: f64) -> Self {
        debug_assert!(factor >= 0.0);
        match self {
            ExtendedReal::Finite(v) => ExtendedReal::Finite(v * factor),
            ExtendedReal::PosInfinity if factor == 0.0 => ExtendedReal::ZERO,
            ExtendedReal::PosInfinity => ExtendedReal::PosInfinity,
        }
    }
}

impl From<f64> for ExtendedReal {
    fn from(v: f64) -> Self {
        if v == f64::INFINITY {
            ExtendedReal::PosInfinity
        } else {
            ExtendedReal::Finite(v)
        }
    }
}

impl Add for ExtendedReal {
    type Output = ExtendedReal;

    fn add(self, rhs: Self) -> Self {
        match (self, rhs) {
            (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => ExtendedReal::Finite(a + b),
            _ => ExtendedReal::PosInfinity,
        }
    }
}

impl Mul<f64> for ExtendedReal {
    type Output = ExtendedReal;

    fn mul(self, rhs: f64) -> Self {
        self.scale(rhs)
    }
}

impl PartialOrd for ExtendedReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => a.partial_cmp(b),
            (ExtendedReal::PosInfinity, ExtendedReal::PosInfinity) => Some(Ordering::Equal),
            (ExtendedReal::PosInfinity, _) => Some(Ordering::Greater),
            (_, ExtendedReal::PosInfinity) => Some(Ordering::Less),
        }
    }
}

impl fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedReal::Finite(v) => write!(f, "{v}"),
            ExtendedReal::PosInfinity => write!(f, "+inf"),
        }
    }
}

impl Serialize for ExtendedReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtendedReal::Finite(v) => s.serialize_f64(*v),
            ExtendedReal::PosInfinity => s.serialize_str("+inf"),
        }
    }
}
