//! Bracketed root finding for monotone functions.

use crate::error::{Error, Result};

/// Default absolute tolerance for root finding.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Finds `x` in `[lo, hi]` with `f(x) = target` for monotone `f` (either
/// direction). Stops when `|f(x) - target| <= tol` or the bracket is no
/// wider than `tol`.
pub fn bisect_monotone<F>(f: F, lo: f64, hi: f64, target: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let (fa, fb) = (f(a), f(b));
    let no_bracket = || Error::NoBracket {
        lo,
        hi,
        f_lo: fa,
        f_hi: fb,
        target,
    };
    if fa.is_nan() || fb.is_nan() {
        return Err(no_bracket());
    }
    if (fa - target).abs() <= tol {
        return Ok(a);
    }
    if (fb - target).abs() <= tol {
        return Ok(b);
    }
    let increasing = fb > fa;
    let inside = if increasing {
        fa <= target && target <= fb
    } else {
        fb <= target && target <= fa
    };
    if !inside {
        return Err(no_bracket());
    }
    for _ in 0..2000 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            return Ok(mid);
        }
        let fm = f(mid);
        if (fm - target).abs() <= tol || (b - a) <= tol {
            return Ok(mid);
        }
        if (fm < target) == increasing {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_root() {
        let x = bisect_monotone(|x| x, 0.0, 1.0, 0.5, DEFAULT_TOL).unwrap();
        assert!((x - 0.5).abs() < 1e-10);
    }

    #[test]
    fn cube_root_of_eight() {
        let x = bisect_monotone(|x| x * x * x, 0.0, 3.0, 8.0, 1e-12).unwrap();
        assert!((x - 2.0).abs() < 1e-12);
    }

    #[test]
    fn decreasing_function() {
        let x = bisect_monotone(|x| -x, 0.0, 4.0, -3.0, 1e-12).unwrap();
        assert!((x - 3.0).abs() < 1e-12);
    }

    #[test]
    fn missing_bracket_names_endpoints() {
        let err = bisect_monotone(|x| x, 0.0, 1.0, 2.0, 1e-10).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("f(0) = 0") && msg.contains("f(1) = 1"), "{msg}");
    }
}
