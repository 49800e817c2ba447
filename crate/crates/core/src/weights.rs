//! Radial weights and their scalar data: `Theta(s) = log 1/omega(1 - s)`,
//! `Lambda(x) = log Theta(e^-x)`, moments, the bilateral moment extension,
//! the slightly heavier companion weight, and desk-scale growth checks.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, usage, Error, Result};
use crate::numerics::{radial_integral, DiskMesh, LogReal};

/// Closed-form and sampled weight families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum WeightFamily {
    /// `omega(t) = exp(-1/(1-t)^beta)`; decays like one exponential only.
    SingleExp { beta: f64 },
    /// `omega(t) = exp(-exp(c/(1-t)^beta))`.
    DoubleExp { c: f64, beta: f64 },
    /// `Theta` sampled on a grid in `s = 1 - t`, interpolated linearly in
    /// `(log s, log Theta)`.
    Sampled {
        one_minus_t: Vec<f64>,
        log_one_over_omega: Vec<f64>,
    },
    /// `omega = 1`, for quadrature calibration only.
    Unit,
}

/// A radial weight together with its growth exponent `epsilon0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialWeight {
    #[serde(flatten)]
    pub family: WeightFamily,
    pub epsilon0: f64,
}

/// `e^u - 1 - u` without cancellation for small `u`.
pub fn expm1_minus_id(u: f64) -> f64 {
    if u.abs() < 1e-3 {
        let u2 = u * u;
        u2 * (0.5 + u * (1.0 / 6.0 + u * (1.0 / 24.0 + u / 120.0)))
    } else {
        u.exp_m1() - u
    }
}

impl RadialWeight {
    pub fn new(family: WeightFamily, epsilon0: f64) -> Result<RadialWeight> {
        if !(epsilon0 > 0.0 && epsilon0 < 1.0) {
            return Err(usage(format!("epsilon0 must lie in (0, 1), got {epsilon0}")));
        }
        match &family {
            WeightFamily::SingleExp { beta } if !(*beta >= 1.0) => {
                return Err(usage(format!("single-exponential weight needs beta >= 1, got {beta}")))
            }
            WeightFamily::DoubleExp { c, beta } if !(*c > 0.0 && *beta > 0.0) => {
                return Err(usage(format!(
                    "double-exponential weight needs c > 0 and beta > 0, got c = {c}, beta = {beta}"
                )))
            }
            WeightFamily::Sampled {
                one_minus_t,
                log_one_over_omega,
            } => validate_samples(one_minus_t, log_one_over_omega)?,
            _ => {}
        }
        Ok(RadialWeight { family, epsilon0 })
    }

    /// `omega(t) = exp(-exp(c/(1-t)^beta))`.
    pub fn double_exp(c: f64, beta: f64, epsilon0: f64) -> Result<RadialWeight> {
        RadialWeight::new(WeightFamily::DoubleExp { c, beta }, epsilon0)
    }

    pub fn single_exp(beta: f64, epsilon0: f64) -> Result<RadialWeight> {
        RadialWeight::new(WeightFamily::SingleExp { beta }, epsilon0)
    }

    pub fn unit() -> RadialWeight {
        RadialWeight {
            family: WeightFamily::Unit,
            epsilon0: 0.5,
        }
    }

    /// Sampled weight from `Theta` values at `s = 1 - t`.
    pub fn sampled(points: &[(f64, f64)], epsilon0: f64) -> Result<RadialWeight> {
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        RadialWeight::new(
            WeightFamily::Sampled {
                one_minus_t: pts.iter().map(|p| p.0).collect(),
                log_one_over_omega: pts.iter().map(|p| p.1).collect(),
            },
            epsilon0,
        )
    }

    /// Reads a sampled weight from CSV with header
    /// `one_minus_t,log_one_over_omega`.
    pub fn from_csv_reader<R: Read>(reader: R, source: &str, epsilon0: f64) -> Result<RadialWeight> {
        let csv_err = |message: String| Error::Csv {
            path: source.to_string(),
            message,
        };
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| csv_err(e.to_string()))?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| csv_err(format!("missing column `{name}`")))
        };
        let (is, iv) = (col("one_minus_t")?, col("log_one_over_omega")?);
        let mut points = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| csv_err(e.to_string()))?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .unwrap_or("")
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| csv_err(format!("row {}: {e}", line + 2)))
            };
            points.push((parse(is)?, parse(iv)?));
        }
        RadialWeight::sampled(&points, epsilon0)
    }

    pub fn from_csv(path: &Path, epsilon0: f64) -> Result<RadialWeight> {
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        RadialWeight::from_csv_reader(file, &path.display().to_string(), epsilon0)
    }

    /// `log Theta(s)`, i.e. `Lambda(-log s)`. Accepts `s` in `(0, 1]`.
    pub fn log_theta(&self, s: f64) -> f64 {
        match &self.family {
            WeightFamily::SingleExp { beta } => -beta * s.ln(),
            WeightFamily::DoubleExp { c, beta } => c * s.powf(-beta),
            WeightFamily::Sampled {
                one_minus_t,
                log_one_over_omega,
            } => sampled_log_theta(one_minus_t, log_one_over_omega, s),
            WeightFamily::Unit => f64::NEG_INFINITY,
        }
    }

    /// `Theta(s) = log 1/omega(1 - s)` for `0 < s < 1`.
    pub fn theta_big(&self, s: f64) -> Result<LogReal> {
        if !(s > 0.0 && s < 1.0) {
            return Err(usage(format!("Theta needs 0 < s < 1, got {s}")));
        }
        Ok(LogReal::exp(self.log_theta(s)))
    }

    /// `Theta(s)` as a plain float (may be `+inf` deep inside the boundary layer).
    pub fn theta_f64(&self, s: f64) -> f64 {
        self.log_theta(s).exp()
    }

    /// `log omega(1 - s) = -Theta(s)`.
    pub fn log_omega(&self, s: f64) -> f64 {
        -self.theta_f64(s)
    }

    /// `Lambda(x) = log Theta(e^-x)` for `x >= 0`. Closed forms are evaluated
    /// in `x` directly, with the same expressions as [`Self::lambda_big_prime`]
    /// and [`Self::lambda_gap`], so that gaps at a touch point cancel exactly.
    pub fn lambda_big(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(usage(format!("Lambda needs x >= 0, got {x}")));
        }
        let v = self.lambda_unchecked(x);
        if !(v > 0.0) {
            return Err(domain(format!(
                "Theta(e^-{x}) = exp({v}) <= 1, so Lambda is undefined there"
            )));
        }
        Ok(v)
    }

    /// `Lambda(x)` without the positivity check.
    pub fn lambda_unchecked(&self, x: f64) -> f64 {
        match &self.family {
            WeightFamily::SingleExp { beta } => beta * x,
            WeightFamily::DoubleExp { c, beta } => c * (beta * x).exp(),
            _ => self.log_theta((-x).exp()),
        }
    }

    /// Derivative of `Lambda`: exact for closed forms, right slope for samples.
    pub fn lambda_big_prime(&self, x: f64) -> f64 {
        match &self.family {
            WeightFamily::SingleExp { beta } => *beta,
            WeightFamily::DoubleExp { c, beta } => beta * (c * (beta * x).exp()),
            WeightFamily::Sampled {
                one_minus_t,
                log_one_over_omega,
            } => {
                let h = 1e-6 * x.abs().max(1.0);
                let f = |x: f64| sampled_log_theta(one_minus_t, log_one_over_omega, (-x).exp());
                (f(x + h) - f(x)) / h
            }
            WeightFamily::Unit => 0.0,
        }
    }

    /// `Lambda(x0 + d) - lam - lam_prime d`: how far `Lambda` lies above the
    /// line through `(x0, lam)` with slope `lam_prime`. The offset `d` is
    /// passed separately so that it survives when far below the rounding of
    /// `x0`; for closed forms the curvature part is free of cancellation.
    pub fn lambda_gap(&self, x0: f64, lam: f64, lam_prime: f64, d: f64) -> f64 {
        match &self.family {
            WeightFamily::DoubleExp { c, beta } => {
                let l0 = c * (beta * x0).exp();
                l0 * expm1_minus_id(beta * d) + (l0 - lam) + (beta * l0 - lam_prime) * d
            }
            WeightFamily::SingleExp { beta } => (beta * x0 - lam) + (beta - lam_prime) * d,
            _ => self.lambda_unchecked(x0 + d) - lam - lam_prime * d,
        }
    }

    /// `Omega(n) = int_D |z|^{2n} omega(|z|) dm`.
    pub fn moment(&self, n: u32, mesh: &DiskMesh) -> Result<LogReal> {
        let two_n = 2.0 * f64::from(n);
        radial_integral(
            |s| {
                let log_r = (-s).ln_1p();
                LogReal::exp(if n == 0 { 0.0 } else { two_n * log_r } + self.log_omega(s).max(f64::MIN))
            },
            mesh,
        )
    }

    /// `log 1/omega~(r) = Theta - (log Theta)^2`, returned as `omega~(r)`.
    pub fn tilde_weight(&self, z_abs: f64) -> Result<LogReal> {
        let s = 1.0 - z_abs;
        if !(s > 0.0 && s <= 1.0) {
            return Err(usage(format!("companion weight needs 0 <= |z| < 1, got {z_abs}")));
        }
        let lt = self.log_theta(s);
        if !(lt > 0.0) {
            return Err(domain(format!(
                "log 1/omega = {} <= 1 at |z| = {z_abs}; log log 1/omega is not positive",
                lt.exp()
            )));
        }
        Ok(LogReal::exp(-(lt.exp() - lt * lt)))
    }

    /// `Theta(s) - (log Theta(s))^2`, the companion weight's exponent.
    pub fn tilde_log_inv(&self, s: f64) -> f64 {
        let lt = self.log_theta(s);
        lt.exp() - lt * lt
    }
}

fn validate_samples(s: &[f64], v: &[f64]) -> Result<()> {
    if s.len() != v.len() || s.len() < 2 {
        return Err(usage("sampled weight needs at least two (one_minus_t, log_one_over_omega) rows"));
    }
    if s.windows(2).any(|w| !(w[1] > w[0])) || s.iter().any(|&x| !(x > 0.0 && x <= 1.0)) {
        return Err(usage("one_minus_t samples must be distinct and lie in (0, 1]"));
    }
    if v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(usage("log_one_over_omega samples must be positive and finite"));
    }
    if v.windows(2).any(|w| w[1] > w[0]) {
        return Err(usage(
            "log_one_over_omega must not increase with one_minus_t (omega must be decreasing)",
        ));
    }
    Ok(())
}

/// Linear interpolation of `log Theta` against `log s`; the end cells extend
/// with their slopes, which keeps the interpolant monotone.
fn sampled_log_theta(s: &[f64], v: &[f64], x: f64) -> f64 {
    let lx = x.ln();
    let n = s.len();
    let i = match s.partition_point(|&k| k <= x) {
        0 => 0,
        i if i >= n => n - 2,
        i => i - 1,
    };
    let (l0, l1) = (s[i].ln(), s[i + 1].ln());
    let (y0, y1) = (v[i].ln(), v[i + 1].ln());
    let slope = (y1 - y0) / (l1 - l0);
    y0 + slope * (lx - l0)
}

/// Moments `Omega(0..=max_n)` in the log domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSequence {
    pub log_values: Vec<f64>,
}

impl MomentSequence {
    pub fn compute(w: &RadialWeight, max_n: u32, mesh: &DiskMesh) -> Result<MomentSequence> {
        let vals: Result<Vec<f64>> = (0..=max_n)
            .into_par_iter()
            .map(|n| w.moment(n, mesh)?.ln())
            .collect();
        Ok(MomentSequence { log_values: vals? })
    }

    pub fn from_log_values(log_values: Vec<f64>) -> MomentSequence {
        MomentSequence { log_values }
    }

    pub fn max_n(&self) -> usize {
        self.log_values.len().saturating_sub(1)
    }

    /// `Omega(n)` for any integer `n`, using the bilateral rule for `n < 0`.
    pub fn get(&self, n: i64) -> Result<LogReal> {
        if n >= 0 {
            self.log_values
                .get(n as usize)
                .map(|&l| LogReal::exp(l))
                .ok_or_else(|| usage(format!("moment {n} beyond computed range {}", self.max_n())))
        } else {
            extend_bilateral(self, n)
        }
    }

    /// Writes `n,log_omega_n` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let io = |e: csv::Error| Error::Csv {
            path: "<moments>".into(),
            message: e.to_string(),
        };
        w.write_record(["n", "log_omega_n"]).map_err(io)?;
        for (n, l) in self.log_values.iter().enumerate() {
            w.write_record([n.to_string(), format!("{l:.17e}")]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<moments>".into(),
            source: e,
        })
    }
}

/// `Omega(n) = 1/Omega(-n-1)` for `n < 0`, by negating the logarithm.
pub fn extend_bilateral(m: &MomentSequence, n: i64) -> Result<LogReal> {
    if n >= 0 {
        return Err(usage(format!("bilateral extension is for negative n, got {n}")));
    }
    let mirror = (-n - 1) as usize;
    m.log_values
        .get(mirror)
        .map(|&l| LogReal::exp(-l))
        .ok_or_else(|| usage(format!("Omega({}) is beyond computed range {}", mirror, m.max_n())))
}

/// Descending geometric grid of `s = 1 - t` values from `s_max` to `s_min`.
pub fn geometric_grid(s_max: f64, s_min: f64, count: usize) -> Vec<f64> {
    let (a, b) = (s_max.ln(), s_min.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Condition10Report {
    pub epsilon0: f64,
    /// `(1 - t, (1 - t)^eps0 log log 1/omega(t))`, ordered toward the boundary.
    pub samples: Vec<(f64, f64)>,
    /// Smallest `1 - t` from which the quantity keeps increasing to the end of
    /// the grid is `threshold_s`; `None` if it decreases at the last step.
    pub threshold_s: Option<f64>,
    pub tail_fraction: f64,
    pub pass: bool,
}

/// Checks that `(1-t)^eps0 log log 1/omega(t)` increases toward the boundary.
/// The verdict is the desk proxy for the limit: the quantity must increase
/// strictly over the final `tail_fraction` of the grid (ordered `s`
/// decreasing).
pub fn check_condition_10(w: &RadialWeight, grid: &[f64], tail_fraction: f64) -> Condition10Report {
    let eps = w.epsilon0;
    let samples: Vec<(f64, f64)> = grid.iter().map(|&s| (s, s.powf(eps) * w.log_theta(s))).collect();
    let n = samples.len();
    let mut start = n.saturating_sub(1);
    while start > 0 && samples[start].1 > samples[start - 1].1 {
        start -= 1;
    }
    let increasing_len = n - start;
    let threshold_s = if increasing_len >= 2 { Some(samples[start].0) } else { None };
    let needed = ((tail_fraction * n as f64).ceil() as usize).max(2);
    Condition10Report {
        epsilon0: eps,
        pass: increasing_len >= needed,
        samples,
        threshold_s,
        tail_fraction,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Condition10kReport {
    pub alpha: f64,
    /// `log bound - log Omega(n)` for each `n`; negative entries are violations.
    pub margins: Vec<f64>,
    pub worst_n: usize,
    pub worst_margin: f64,
    pub pass: bool,
}

/// `log exp[-n/(log(2+n))^alpha]`.
pub fn log_moment_bound(n: u64, alpha: f64) -> f64 {
    let nf = n as f64;
    -nf / (2.0 + nf).ln().powf(alpha)
}

/// Checks `Omega(n) <= exp[-n/(log(2+n))^alpha]` over the computed range.
pub fn check_condition_10k(m: &MomentSequence, alpha: f64) -> Condition10kReport {
    let margins: Vec<f64> = m
        .log_values
        .iter()
        .enumerate()
        .map(|(n, &l)| log_moment_bound(n as u64, alpha) - l)
        .collect();
    let (worst_n, worst_margin) = margins
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, f64::INFINITY));
    Condition10kReport {
        alpha,
        pass: worst_margin >= -1e-12,
        margins,
        worst_n,
        worst_margin,
    }
}

/// `log[(n+1) exp(-n/(log(n+2))^alpha) / x^{2n+2}]`, the pointwise weight
/// bound obtained from a single moment.
pub fn log_pointwise_term(n: u64, alpha: f64, x: f64) -> f64 {
    let nf = n as f64;
    (nf + 1.0).ln() + log_moment_bound(n, alpha) - (2.0 * nf + 2.0) * x.ln()
}

/// Minimises [`log_pointwise_term`] over `0 <= n <= n_max`. The term is a
/// concave logarithm plus a convex-then-linear part, so the minimiser is
/// located by a sign search on the forward difference and then confirmed
/// on a window around it. Returns `(n*, log bound)`.
pub fn omega_bound_10k(x: f64, alpha: f64, n_max: u64) -> Result<(u64, f64)> {
    if !(x > 0.0 && x < 1.0) {
        return Err(usage(format!("pointwise bound needs 0 < x < 1, got {x}")));
    }
    let g = |n: u64| log_pointwise_term(n, alpha, x);
    let diff = |n: u64| g(n + 1) - g(n);
    // First n with a nonnegative forward difference.
    let (mut lo, mut hi) = (0u64, n_max);
    if diff(0) >= 0.0 {
        hi = 0;
    } else {
        while lo + 1 < hi {
            let mid = lo + (hi - lo) / 2;
            if diff(mid) >= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    let window = 64u64;
    let a = hi.saturating_sub(window);
    let b = (hi + window).min(n_max);
    let (mut best_n, mut best) = (hi, g(hi));
    for n in a..=b {
        let v = g(n);
        if v < best {
            best = v;
            best_n = n;
        }
    }
    Ok((best_n, best))
}
