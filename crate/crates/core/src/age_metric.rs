//! The compact metric on ages.
//!
//! `r(α, α′) = min{|α − α′|, ω(α) + ω(α′)}` with `ω(α) = min{α, 1/α}`.
//! Under `r`, ages diverging to infinity converge to zero, which makes the
//! half-line compact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A validated age: finite and nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AgeValue(f64);

impl AgeValue {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value >= 0.0 {
            Ok(AgeValue(value))
        } else {
            Err(Error::Domain(format!("age must be finite and >= 0, got {value}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for AgeValue {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        AgeValue::new(v)
    }
}

impl From<AgeValue> for f64 {
    fn from(a: AgeValue) -> f64 {
        a.0
    }
}

/// `ω(α) = min{α, 1/α}`, with `ω(0) = 0`.
pub fn omega(age: AgeValue) -> f64 {
    omega_raw(age.0)
}

#[inline]
pub(crate) fn omega_raw(a: f64) -> f64 {
    if a <= 1.0 {
        a
    } else {
        1.0 / a
    }
}

/// `r(α, α′)`.
pub fn age_distance(a: AgeValue, b: AgeValue) -> f64 {
    age_distance_raw(a.0, b.0)
}

#[inline]
pub(crate) fn age_distance_raw(a: f64, b: f64) -> f64 {
    (a - b).abs().min(omega_raw(a) + omega_raw(b))
}
