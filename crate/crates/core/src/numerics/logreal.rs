//! Signed reals and complex numbers stored by the logarithm of their modulus.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::ops::{Div, Mul, Neg};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};

/// A real number `sign * exp(log_magnitude)`. Zero is `(-inf, 0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogReal {
    pub log_magnitude: f64,
    pub sign: i8,
}

impl LogReal {
    pub const ZERO: LogReal = LogReal {
        log_magnitude: f64::NEG_INFINITY,
        sign: 0,
    };
    pub const ONE: LogReal = LogReal {
        log_magnitude: 0.0,
        sign: 1,
    };

    /// Builds a value, normalising the zero encoding.
    pub fn new(log_magnitude: f64, sign: i8) -> LogReal {
        if sign == 0 || log_magnitude == f64::NEG_INFINITY {
            LogReal::ZERO
        } else {
            LogReal {
                log_magnitude,
                sign: sign.signum(),
            }
        }
    }

    /// The positive number `exp(x)`.
    pub fn exp(x: f64) -> LogReal {
        LogReal::new(x, 1)
    }

    pub fn from_f64(x: f64) -> LogReal {
        if x == 0.0 {
            LogReal::ZERO
        } else {
            LogReal::new(x.abs().ln(), if x > 0.0 { 1 } else { -1 })
        }
    }

    pub fn to_f64(self) -> f64 {
        if self.sign == 0 {
            0.0
        } else {
            f64::from(self.sign) * self.log_magnitude.exp()
        }
    }

    pub fn is_zero(self) -> bool {
        self.sign == 0
    }

    pub fn is_finite(self) -> bool {
        self.sign == 0 || self.log_magnitude.is_finite()
    }

    pub fn abs(self) -> LogReal {
        LogReal::new(self.log_magnitude, self.sign.abs())
    }

    /// Natural logarithm of a positive value.
    pub fn ln(self) -> Result<f64> {
        if self.sign > 0 {
            Ok(self.log_magnitude)
        } else {
            Err(usage(format!(
                "logarithm of non-positive value (sign {}, log-magnitude {})",
                self.sign, self.log_magnitude
            )))
        }
    }

    /// `|self|^p` for real `p`.
    pub fn abs_powf(self, p: f64) -> LogReal {
        if self.sign == 0 {
            if p > 0.0 {
                LogReal::ZERO
            } else {
                LogReal::exp(f64::INFINITY)
            }
        } else {
            LogReal::exp(p * self.log_magnitude)
        }
    }

    pub fn recip(self) -> LogReal {
        LogReal::new(-self.log_magnitude, self.sign)
    }

    pub fn add(self, other: LogReal) -> LogReal {
        let mut acc = LseAccumulator::new();
        acc.push(self);
        acc.push(other);
        acc.value()
    }

    pub fn sub(self, other: LogReal) -> LogReal {
        self.add(-other)
    }

    /// Total order by value.
    pub fn total_cmp(&self, other: &LogReal) -> Ordering {
        match self.sign.cmp(&other.sign) {
            Ordering::Equal => match self.sign {
                0 => Ordering::Equal,
                1 => self.log_magnitude.total_cmp(&other.log_magnitude),
                _ => other.log_magnitude.total_cmp(&self.log_magnitude),
            },
            ord => ord,
        }
    }
}

impl Mul for LogReal {
    type Output = LogReal;
    fn mul(self, rhs: LogReal) -> LogReal {
        LogReal::new(self.log_magnitude + rhs.log_magnitude, self.sign * rhs.sign)
    }
}

impl Div for LogReal {
    type Output = LogReal;
    fn div(self, rhs: LogReal) -> LogReal {
        self * rhs.recip()
    }
}

impl Neg for LogReal {
    type Output = LogReal;
    fn neg(self) -> LogReal {
        LogReal::new(self.log_magnitude, -self.sign)
    }
}

impl PartialOrd for LogReal {
    fn partial_cmp(&self, other: &LogReal) -> Option<Ordering> {
        Some(self.total_cmp(other))
    }
}

/// Streaming signed log-sum-exp. The running sum is kept scaled by the
/// largest log-magnitude seen so far; terms are folded in arrival order,
/// so a fixed order gives bit-identical results.
#[derive(Clone, Copy, Debug)]
pub struct LseAccumulator {
    max: f64,
    sum: f64,
    comp: f64,
}

impl Default for LseAccumulator {
    fn default() -> Self {
        LseAccumulator::new()
    }
}

impl LseAccumulator {
    pub fn new() -> LseAccumulator {
        LseAccumulator {
            max: f64::NEG_INFINITY,
            sum: 0.0,
            comp: 0.0,
        }
    }

    pub fn push(&mut self, term: LogReal) {
        if term.sign == 0 {
            return;
        }
        if term.log_magnitude > self.max {
            let scale = (self.max - term.log_magnitude).exp();
            self.sum *= scale;
            self.comp *= scale;
            self.max = term.log_magnitude;
        }
        let x = f64::from(term.sign) * (term.log_magnitude - self.max).exp();
        // Neumaier compensation keeps the result order-insensitive to ~1 ulp.
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &LseAccumulator) {
        self.push(LogReal::from_f64(other.comp).scale_log(other.max));
        self.push(LogReal::from_f64(other.sum).scale_log(other.max));
    }

    pub fn value(&self) -> LogReal {
        let total = self.sum + self.comp;
        if total == 0.0 || self.max == f64::NEG_INFINITY {
            LogReal::ZERO
        } else {
            LogReal::new(total.abs().ln() + self.max, if total > 0.0 { 1 } else { -1 })
        }
    }
}

impl LogReal {
    /// Multiplies by `exp(shift)`.
    pub fn scale_log(self, shift: f64) -> LogReal {
        if self.sign == 0 {
            self
        } else {
            LogReal::new(self.log_magnitude + shift, self.sign)
        }
    }
}

/// `log(sum_i sign_i exp(l_i))` with max-shift. Empty input is a usage error.
pub fn log_sum_exp(terms: &[LogReal]) -> Result<LogReal> {
    if terms.is_empty() {
        return Err(usage("log_sum_exp of an empty list"));
    }
    let mut acc = LseAccumulator::new();
    for &t in terms {
        acc.push(t);
    }
    Ok(acc.value())
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_phase(phase: f64) -> f64 {
    if phase > -PI && phase <= PI {
        return phase;
    }
    let mut p = phase.rem_euclid(2.0 * PI);
    if p > PI {
        p -= 2.0 * PI;
    }
    if p <= -PI {
        p += 2.0 * PI;
    }
    p
}

/// A complex number `exp(log_magnitude + i phase)`; zero has log-magnitude `-inf`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogComplex {
    pub log_magnitude: f64,
    pub phase: f64,
}

impl LogComplex {
    pub const ZERO: LogComplex = LogComplex {
        log_magnitude: f64::NEG_INFINITY,
        phase: 0.0,
    };
    pub const ONE: LogComplex = LogComplex {
        log_magnitude: 0.0,
        phase: 0.0,
    };

    pub fn new(log_magnitude: f64, phase: f64) -> LogComplex {
        if log_magnitude == f64::NEG_INFINITY {
            LogComplex::ZERO
        } else {
            LogComplex {
                log_magnitude,
                phase: wrap_phase(phase),
            }
        }
    }

    /// `exp(w)` for a complex exponent.
    pub fn exp(w: Complex64) -> LogComplex {
        LogComplex::new(w.re, w.im)
    }

    pub fn from_complex(z: Complex64) -> LogComplex {
        if z.re == 0.0 && z.im == 0.0 {
            LogComplex::ZERO
        } else {
            LogComplex::new(z.norm().ln(), z.im.atan2(z.re))
        }
    }

    pub fn to_complex(self) -> Complex64 {
        if self.log_magnitude == f64::NEG_INFINITY {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::from_polar(self.log_magnitude.exp(), self.phase)
        }
    }

    pub fn is_zero(self) -> bool {
        self.log_magnitude == f64::NEG_INFINITY
    }

    pub fn abs(self) -> LogReal {
        LogReal::exp(self.log_magnitude)
    }

    pub fn conj(self) -> LogComplex {
        LogComplex::new(self.log_magnitude, -self.phase)
    }

    pub fn recip(self) -> LogComplex {
        LogComplex::new(-self.log_magnitude, -self.phase)
    }

    /// Real power taken on the principal branch of the stored phase.
    pub fn powf(self, alpha: f64) -> LogComplex {
        if self.is_zero() {
            return if alpha > 0.0 {
                LogComplex::ZERO
            } else {
                LogComplex::new(f64::INFINITY, 0.0)
            };
        }
        LogComplex::new(alpha * self.log_magnitude, alpha * self.phase)
    }

    pub fn re(self) -> LogReal {
        let c = self.phase.cos();
        if self.is_zero() || c == 0.0 {
            LogReal::ZERO
        } else {
            LogReal::new(self.log_magnitude + c.abs().ln(), if c > 0.0 { 1 } else { -1 })
        }
    }

    pub fn im(self) -> LogReal {
        let s = self.phase.sin();
        if self.is_zero() || s == 0.0 {
            LogReal::ZERO
        } else {
            LogReal::new(self.log_magnitude + s.abs().ln(), if s > 0.0 { 1 } else { -1 })
        }
    }
}

impl Mul for LogComplex {
    type Output = LogComplex;
    fn mul(self, rhs: LogComplex) -> LogComplex {
        if self.is_zero() || rhs.is_zero() {
            return LogComplex::ZERO;
        }
        LogComplex::new(
            self.log_magnitude + rhs.log_magnitude,
            self.phase + rhs.phase,
        )
    }
}

impl Div for LogComplex {
    type Output = LogComplex;
    fn div(self, rhs: LogComplex) -> LogComplex {
        self * rhs.recip()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_ones_is_two() {
        let s = log_sum_exp(&[LogReal::ONE, LogReal::ONE]).unwrap();
        assert_eq!(s.sign, 1);
        assert!((s.log_magnitude - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn single_term_is_identity() {
        let x = LogReal::new(-3.25, -1);
        assert_eq!(log_sum_exp(&[x]).unwrap(), x);
    }

    #[test]
    fn dominated_term_vanishes() {
        let s = log_sum_exp(&[LogReal::exp(-1e9), LogReal::exp(0.0)]).unwrap();
        assert!(s.log_magnitude.abs() < 1e-15);
    }

    #[test]
    fn empty_is_usage_error() {
        assert!(log_sum_exp(&[]).is_err());
    }

    #[test]
    fn exact_cancellation_gives_zero() {
        let a = LogReal::exp(5.0);
        assert!(a.add(-a).is_zero());
    }

    #[test]
    fn round_trip_reals() {
        assert_eq!(LogReal::from_f64(0.0).to_f64(), 0.0);
        assert_eq!(LogReal::from_f64(1.0).to_f64(), 1.0);
        assert_eq!(LogReal::from_f64(-1.0).to_f64(), -1.0);
        // Elsewhere the round trip is exact up to rounding of the logarithm:
        // relative error about |ln x| ulp.
        for &x in &[-2.5, 1e-300, -1e300, 3.0e7] {
            let y = LogReal::from_f64(x).to_f64();
            assert!(((y - x) / x).abs() < 1e-13, "{x} -> {y}");
        }
    }

    #[test]
    fn complex_multiplication_adds_logs_and_phases() {
        let a = LogComplex::new(1.5, 3.0);
        let b = LogComplex::new(-0.5, 1.0);
        let c = a * b;
        assert_eq!(c.log_magnitude, 1.0);
        assert!((c.phase - wrap_phase(4.0)).abs() < 1e-15);
    }

    #[test]
    fn phase_wrapping_range() {
        assert_eq!(wrap_phase(PI), PI);
        assert!((wrap_phase(-PI) - PI).abs() < 1e-15);
        assert!((wrap_phase(3.0 * PI) - PI).abs() < 1e-12);
    }
}
