//! Extended nonnegative reals `[0, +inf]` used for all cost arithmetic.
//!
//! Hard constraints are encoded as infinite cost entries, so cost values must
//! saturate (`inf + a = inf`) instead of overflowing or leaking rounding. The
//! tagged representation keeps infinities out of every floating-point sum.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign};

/// An extended real: either a finite `f64` or `+inf`.
///
/// `Finite` payloads are never NaN and never `f64::INFINITY`; constructors
/// enforce this.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cost {
    Finite(f64),
    Infinite,
}

impl Cost {
    pub const ZERO: Cost = Cost::Finite(0.0);

    /// Wraps a float, mapping `f64::INFINITY` to the tagged infinity.
    ///
    /// Panics on NaN and on `-inf`: neither is a meaningful cost.
    pub fn from_f64(v: f64) -> Cost {
        assert!(!v.is_nan(), "cost must not be NaN");
        if v == f64::INFINITY {
            Cost::Infinite
        } else {
            assert!(v.is_finite(), "cost must not be -inf");
            Cost::Finite(v)
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Cost::Finite(_))
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Cost::Infinite)
    }

    /// The finite payload, or `None` for infinity.
    pub fn finite(self) -> Option<f64> {
        match self {
            Cost::Finite(v) => Some(v),
            Cost::Infinite => None,
        }
    }

    /// Collapses to `f64`, using `f64::INFINITY` for the infinite tag.
    pub fn to_f64(self) -> f64 {
        match self {
            Cost::Finite(v) => v,
            Cost::Infinite => f64::INFINITY,
        }
    }

    /// Scales by a nonnegative weight with the convention `0 * inf = 0`.
    ///
    /// The convention matches integration against a measure: atoms of zero
    /// mass contribute nothing even where the integrand is infinite.
    pub fn scale(self, w: f64) -> Cost {
        debug_assert!(w >= 0.0);
        if w == 0.0 {
            return Cost::ZERO;
        }
        match self {
            Cost::Finite(v) => Cost::Finite(v * w),
            Cost::Infinite => Cost::Infinite,
        }
    }

    pub fn min(self, other: Cost) -> Cost {
        if self <= other {
            self
        } else {
            other
        }
    }

    /// `|a - b| <= tol` for finite pairs; infinities compare equal to each other.
    pub fn approx_eq(self, other: Cost, tol: f64) -> bool {
        match (self, other) {
            (Cost::Finite(a), Cost::Finite(b)) => (a - b).abs() <= tol,
            (Cost::Infinite, Cost::Infinite) => true,
            _ => false,
        }
    }
}

impl Add for Cost {
    type Output = Cost;

    fn add(self, rhs: Cost) -> Cost {
        match (self, rhs) {
            (Cost::Finite(a), Cost::Finite(b)) => Cost::Finite(a + b),
            _ => Cost::Infinite,
        }
    }
}

impl AddAssign for Cost {
    fn add_assign(&mut self, rhs: Cost) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::ZERO, Add::add)
    }
}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Cost) -> Option<Ordering> {
        Some(self.total_cmp(other))
    }
}

impl Cost {
    /// Total order: finite values by magnitude, infinity greater than all.
    pub fn total_cmp(&self, other: &Cost) -> Ordering {
        match (self, other) {
            (Cost::Finite(a), Cost::Finite(b)) => a.total_cmp(b),
            (Cost::Finite(_), Cost::Infinite) => Ordering::Less,
            (Cost::Infinite, Cost::Finite(_)) => Ordering::Greater,
            (Cost::Infinite, Cost::Infinite) => Ordering::Equal,
        }
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cost::Finite(v) => write!(f, "{v}"),
            Cost::Infinite => write!(f, "+inf"),
        }
    }
}

impl From<f64> for Cost {
    fn from(v: f64) -> Cost {
        Cost::from_f64(v)
    }
}
