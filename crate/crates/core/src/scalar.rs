use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the whole pipeline is generic over.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Default
    + Send
    + Sync
    + 'static
{
    /// Significant decimal digits needed for an exact text round trip.
    const SIG_DIGITS: usize;

    /// Converts an `f64` constant; exact for f64, rounded for f32.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    /// Decimal text that parses back to the identical value.
    fn to_exact_string(self) -> String {
        format!("{:.*e}", Self::SIG_DIGITS - 1, self)
    }
}

impl Scalar for f64 {
    const SIG_DIGITS: usize = 17;
}

impl Scalar for f32 {
    const SIG_DIGITS: usize = 9;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_string_round_trips() {
        for &x in &[0.1f64, 1.0 / 3.0, -2.5e-300, 6.02214076e23, std::f64::consts::PI] {
            let s = x.to_exact_string();
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        for &x in &[0.1f32, 1.0 / 3.0, -7.25e-30] {
            let s = x.to_exact_string();
            assert_eq!(s.parse::<f32>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
    }
}
