//! Scalar abstraction shared by the plain and forward-tangent executions of
//! a tape.
//!
//! Every tape kernel is written once, generically over [`Scalar`]. Running it
//! with `f64` gives ordinary values and gradients; running it with [`Dual`]
//! carries a directional derivative alongside every value, which is how
//! Hessian-vector products are obtained (forward-over-reverse).

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Floor applied inside `ln` so the tape never produces `-inf`.
pub const LOG_FLOOR: f64 = 1e-300;

pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    /// The value part (for `Dual`, the primal component).
    fn primal(self) -> f64;
    fn zero() -> Self;
    fn one() -> Self;
    fn exp(self) -> Self;
    /// `ln(max(x, LOG_FLOOR))`; derivative is 0 where the floor is active.
    fn ln_floored(self) -> Self;
    /// Maximum by primal value; ties keep `self`.
    fn max(self, other: Self) -> Self;
    /// Primal-value comparison, used for branch decisions (relu, clamp).
    fn gt(self, threshold: f64) -> bool {
        self.primal() > threshold
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn primal(self) -> f64 {
        self
    }
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln_floored(self) -> Self {
        if self > LOG_FLOOR {
            self.ln()
        } else {
            LOG_FLOOR.ln()
        }
    }
    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

/// First-order dual number: value plus a tangent (directional derivative).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub tangent: f64,
}

impl Dual {
    pub fn new(value: f64, tangent: f64) -> Self {
        Dual { value, tangent }
    }

    pub fn constant(value: f64) -> Self {
        Dual { value, tangent: 0.0 }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.value + rhs.value, self.tangent + rhs.tangent)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.value - rhs.value, self.tangent - rhs.tangent)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(
            self.value * rhs.value,
            self.tangent * rhs.value + self.value * rhs.tangent,
        )
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        Dual::new(
            self.value / rhs.value,
            (self.tangent * rhs.value - self.value * rhs.tangent) / (rhs.value * rhs.value),
        )
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.value, -self.tangent)
    }
}

impl Scalar for Dual {
    fn from_f64(v: f64) -> Self {
        Dual::constant(v)
    }
    fn primal(self) -> f64 {
        self.value
    }
    fn zero() -> Self {
        Dual::constant(0.0)
    }
    fn one() -> Self {
        Dual::constant(1.0)
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        Dual::new(e, e * self.tangent)
    }
    fn ln_floored(self) -> Self {
        if self.value > LOG_FLOOR {
            Dual::new(self.value.ln(), self.tangent / self.value)
        } else {
            Dual::new(LOG_FLOOR.ln(), 0.0)
        }
    }
    fn max(self, other: Self) -> Self {
        if other.value > self.value {
            other
        } else {
            self
        }
    }
}
