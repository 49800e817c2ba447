//! Harmonic building blocks `h = Re H` with
//! `H(z) = exp[lam - x lam'] (1 - z)^(-lam')`, the power function
//! `F_alpha(z) = (1 - z)^(-alpha)`, and verifiers for the majorant, auxiliary,
//! regularity, pair and ratio estimates.
//!
//! Near the peak at `r_n = 1 - delta` the block equals the weight exponent
//! to all printed digits, and the integrands `exp[(1+gamma) h - Theta]` are
//! driven by their difference. Points therefore carry `1 - |z|` split into a
//! reference value and an offset, and the difference is assembled from
//! separately small terms (curvature gap, modulus ratio, cosine defect).

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::convexreg::MinorantResult;
use crate::error::{usage, Error, Result};
use crate::numerics::{local_disk_integral, wrap_phase, DiskPoint, LocalFrame, LocalMesh, LogComplex, LogReal};
use crate::report::{Check, Report};
use crate::weights::RadialWeight;

/// Depth `x_n` below which asymptotic verifiers report `below-regime`.
pub const MIN_DEPTH: f64 = 8.0;

/// `1 - z` for `z = (1 - s) e^{i psi}`, formed without cancellation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OneMinus {
    pub re: f64,
    pub im: f64,
    /// `log|1 - z| - log s`.
    pub log_ratio: f64,
    pub s: f64,
}

pub fn one_minus(s: f64, psi: f64) -> OneMinus {
    let sh = (0.5 * psi).sin();
    let sh2 = sh * sh;
    OneMinus {
        re: 2.0 * sh2 + s * psi.cos(),
        im: -(1.0 - s) * psi.sin(),
        log_ratio: 0.5 * (4.0 * (1.0 - s) * sh2 / (s * s)).ln_1p(),
        s,
    }
}

impl OneMinus {
    pub fn ln_abs(&self) -> f64 {
        self.s.ln() + self.log_ratio
    }

    pub fn arg(&self) -> f64 {
        self.im.atan2(self.re)
    }

    pub fn to_complex(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

/// A point in a block's own frame: `z = (1 - s) e^{i psi}` with
/// `s = s_ref + ds`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockPoint {
    pub s_ref: f64,
    pub ds: f64,
    pub psi: f64,
}

impl BlockPoint {
    pub fn polar(s: f64, psi: f64) -> BlockPoint {
        BlockPoint { s_ref: s, ds: 0.0, psi }
    }

    /// `z` seen from a block whose axis points at angle `axis`.
    pub fn from_z(z: Complex64, axis: f64) -> BlockPoint {
        BlockPoint::polar(1.0 - z.norm(), wrap_phase(z.im.atan2(z.re) - axis))
    }

    pub fn from_disk_point(p: &DiskPoint, axis: f64) -> BlockPoint {
        BlockPoint {
            s_ref: p.s_ref,
            ds: p.ds,
            psi: wrap_phase(p.phi - axis),
        }
    }

    pub fn s(&self) -> f64 {
        self.s_ref + self.ds
    }

    pub fn z(&self, axis: f64) -> Complex64 {
        Complex64::from_polar(1.0 - self.s(), self.psi + axis)
    }

    /// The point `tau z` with `1 - tau = one_minus_tau`; the shift goes into
    /// the offset so that it survives next to `s_ref`.
    pub fn scaled(&self, one_minus_tau: f64) -> BlockPoint {
        BlockPoint {
            s_ref: self.s_ref,
            ds: self.ds * (1.0 - one_minus_tau) + one_minus_tau * (1.0 - self.s_ref),
            psi: self.psi,
        }
    }
}

/// A log-scale growth profile: `Lambda` of a weight or `lambda` of a minorant.
pub trait LogProfile {
    fn value(&self, t: f64) -> f64;
    /// `value(x0 + d) - lam - lam_prime d`, accurate for tiny `d`.
    fn gap(&self, x0: f64, lam: f64, lam_prime: f64, d: f64) -> f64;
}

impl LogProfile for RadialWeight {
    fn value(&self, t: f64) -> f64 {
        self.lambda_unchecked(t)
    }

    fn gap(&self, x0: f64, lam: f64, lam_prime: f64, d: f64) -> f64 {
        self.lambda_gap(x0, lam, lam_prime, d)
    }
}

impl LogProfile for MinorantResult {
    fn value(&self, t: f64) -> f64 {
        self.lambda(t)
    }

    fn gap(&self, x0: f64, lam: f64, lam_prime: f64, d: f64) -> f64 {
        let q0 = self.q_at(x0);
        // Within the neighbouring cell q is affine, so q(x0 + d) - q(x0) is a
        // slope times d even when d is below the rounding of x0.
        let dq = if d.abs() < 1e-6 {
            let m = if d >= 0.0 {
                self.q.right_derivative(x0)
            } else {
                self.q.left_derivative(x0)
            };
            m * d
        } else {
            self.q_at(x0 + d) - q0
        };
        (q0 * q0 - lam) + dq * (2.0 * q0 + dq) - lam_prime * d
    }
}

/// `F_alpha(z) = (1 - z)^(-alpha)` on the principal branch.
pub fn f_alpha(alpha: f64, z: Complex64) -> Result<LogComplex> {
    if !(alpha > 0.0) {
        return Err(usage(format!("F_alpha needs alpha > 0, got {alpha}")));
    }
    let om = Complex64::new(1.0, 0.0) - z;
    if om.norm() == 0.0 {
        return Err(Error::Singular("F_alpha is singular at z = 1".into()));
    }
    if z.norm() >= 1.0 {
        return Err(usage(format!("F_alpha needs |z| < 1, got |z| = {}", z.norm())));
    }
    Ok(LogComplex::new(-alpha * om.norm().ln(), -alpha * om.im.atan2(om.re)))
}

/// Checks the identities and bounds for `Re F_alpha` on the given points.
/// `(d)` is tested only at points of `R_phi`.
pub fn verify_lemma_tl2(alpha: f64, phi: f64, points: &[Complex64]) -> Result<Report> {
    let mut rep = Report::new("power-function-real-part")
        .param("alpha", alpha)
        .param("phi", phi)
        .param("points", points.len());
    let (mut wa, mut la) = (f64::INFINITY, String::new());
    let (mut wb, mut lb) = (f64::INFINITY, String::new());
    let (mut wc, mut lc) = (f64::INFINITY, String::new());
    let (mut wd, mut ld) = (f64::INFINITY, String::new());
    let (mut nc, mut nd) = (0usize, 0usize);
    for &z in points {
        let f = f_alpha(alpha, z)?;
        let om = Complex64::new(1.0, 0.0) - z;
        let arg = om.im.atan2(om.re);
        let log_abs_om = om.norm().ln();
        // (a) relative to |F_alpha|: pointwise relative error in Re F is
        // unbounded near the zeros of cos(alpha arg(1 - z)).
        let re = f.re();
        let c = (alpha * arg).cos();
        let lhs = re.sign as f64 * (re.log_magnitude - f.log_magnitude).exp();
        let ma = -(lhs - c).abs();
        if ma < wa {
            wa = ma;
            la = format!("z = {z}");
        }
        // (b) Re F <= |F| <= (1 - |z|)^(-alpha), compared by logarithms.
        let s = 1.0 - z.norm();
        let mb = (-alpha * s.ln() - f.log_magnitude).min(if re.sign > 0 {
            f.log_magnitude - re.log_magnitude
        } else {
            f64::INFINITY
        });
        if mb < wb {
            wb = mb;
            lb = format!("z = {z}");
        }
        // (c) on the lines |arg(1 - z)| = pi/alpha.
        if ((arg.abs() - PI / alpha) / (PI / alpha)).abs() < 1e-12 {
            nc += 1;
            let target = LogReal::new(-alpha * log_abs_om, -1);
            let mc = -rel_log_diff(re, target);
            if mc < wc {
                wc = mc;
                lc = format!("z = {z}");
            }
        }
        // (d) on R_phi.
        let zn = z.norm();
        if zn > 0.5 && zn < 1.0 && arg.abs() > phi {
            nd += 1;
            let md = (-alpha * phi * phi / 3.0 - alpha * s.ln()) - f.log_magnitude;
            if md < wd {
                wd = md;
                ld = format!("z = {z}");
            }
        }
    }
    rep.set("points_on_lines", nc);
    rep.set("points_in_region", nd);
    rep.push(Check::new("a", wa >= -1e-12, wa, la));
    rep.push(Check::new("b", wb >= -1e-12, wb, lb));
    rep.push(Check::new("c", nc > 0 && wc >= -1e-12, wc, lc));
    rep.push(Check::new("d", nd > 0 && wd >= -1e-12, wd, ld));
    Ok(rep)
}

/// Relative disagreement of two signed log-domain numbers: 0 when equal,
/// `|a - b| / max(|a|, |b|)` otherwise (2 for opposite signs).
fn rel_log_diff(a: LogReal, b: LogReal) -> f64 {
    if a.sign != b.sign {
        return 2.0;
    }
    if a.sign == 0 {
        return 0.0;
    }
    let d = (a.log_magnitude - b.log_magnitude).abs();
    -(-d).exp_m1()
}

/// Points on `|arg(1 - z)| = pi/alpha` at the given distances from 1.
pub fn lines_l_alpha(alpha: f64, distances: &[f64]) -> Vec<Complex64> {
    let mut out = Vec::new();
    for &rho in distances {
        for sign in [1.0, -1.0] {
            let z = Complex64::new(1.0, 0.0) - Complex64::from_polar(rho, sign * PI / alpha);
            if z.norm() < 1.0 {
                out.push(z);
            }
        }
    }
    out
}

/// One building block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildingBlock {
    pub x_n: f64,
    pub lam: f64,
    pub lam_prime: f64,
    pub delta_n: f64,
    pub r_n: f64,
    pub gamma_n: f64,
    pub gamma_used: f64,
}

/// Values of `H` and `h` at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockValue {
    pub big_h: LogComplex,
    pub h: LogReal,
    /// `-lam' arg(1 - z)` before wrapping.
    pub raw_phase: f64,
    pub one_minus: OneMinus,
}

impl BuildingBlock {
    pub fn new(x_n: f64, lam: f64, lam_prime: f64) -> Result<BuildingBlock> {
        if !(x_n > 0.0 && lam > 0.0 && lam_prime > 0.0) || !lam.is_finite() || !lam_prime.is_finite() {
            return Err(usage(format!(
                "building block needs x_n, lam, lam' > 0 (got {x_n}, {lam}, {lam_prime})"
            )));
        }
        let delta_n = (-x_n).exp();
        let gamma_n = (-lam / 10.0).exp();
        Ok(BuildingBlock {
            x_n,
            lam,
            lam_prime,
            delta_n,
            r_n: 1.0 - delta_n,
            gamma_n,
            gamma_used: gamma_n,
        })
    }

    /// Block at a touch point of the minorant. The block takes `Lambda` and
    /// `Lambda'` from the weight itself: at a touch point they agree with
    /// `lambda`, and the exact tangent keeps `h <= Theta` near `r_n`.
    pub fn from_minorant(w: &RadialWeight, m: &MinorantResult, x_n: f64) -> Result<BuildingBlock> {
        let lam = w.lambda_big(x_n)?;
        let lm = m.lambda(x_n);
        if (lm - lam).abs() > 1e-9 * lam.max(1.0) {
            return Err(usage(format!(
                "x_n = {x_n} is not a touch point: lambda = {lm}, Lambda = {lam}"
            )));
        }
        BuildingBlock::new(x_n, lam, w.lambda_big_prime(x_n))
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<BuildingBlock> {
        if !(gamma >= 0.0 && gamma <= self.gamma_n) {
            return Err(usage(format!("gamma must lie in [0, {}], got {gamma}", self.gamma_n)));
        }
        self.gamma_used = gamma;
        Ok(self)
    }

    pub fn below_regime(&self) -> bool {
        self.x_n < MIN_DEPTH
    }

    /// `lam - x_n lam'`, the log of `H(0)`.
    pub fn log_scale(&self) -> f64 {
        self.lam - self.x_n * self.lam_prime
    }

    /// `(lam' + 1) (1 - |z|)`-free structural invariants against `eps0`.
    pub fn invariant_margins(&self, epsilon0: f64) -> (f64, f64) {
        (self.lam_prime - epsilon0 * self.lam, self.lam.powf(1.5) - self.lam_prime)
    }

    pub fn eval_point(&self, p: &BlockPoint) -> BlockValue {
        let om = one_minus(p.s(), p.psi);
        let log_mag = self.log_scale() - self.lam_prime * om.ln_abs();
        let raw_phase = -self.lam_prime * om.arg();
        let c = raw_phase.cos();
        BlockValue {
            big_h: LogComplex::new(log_mag, raw_phase),
            h: LogReal::new(log_mag + half_ln_cos2(raw_phase), if c >= 0.0 { 1 } else { -1 }),
            raw_phase,
            one_minus: om,
        }
    }

    /// `H(z)` and `h(z)`.
    pub fn eval(&self, z: Complex64) -> Result<(LogComplex, LogReal)> {
        if z == Complex64::new(1.0, 0.0) {
            return Err(Error::Singular("building block is singular at z = 1".into()));
        }
        if z.norm() >= 1.0 {
            return Err(usage(format!("block evaluation needs |z| < 1, got {}", z.norm())));
        }
        let v = self.eval_point(&BlockPoint::from_z(z, 0.0));
        Ok((v.big_h, v.h))
    }

    /// `H'(z) = lam' H(z)/(1 - z)`.
    pub fn h_prime_point(&self, p: &BlockPoint) -> LogComplex {
        let v = self.eval_point(p);
        LogComplex::new(
            v.big_h.log_magnitude + self.lam_prime.ln() - v.one_minus.ln_abs(),
            v.raw_phase - v.one_minus.arg(),
        )
    }

    pub fn h_prime(&self, z: Complex64) -> Result<LogComplex> {
        self.eval(z)?;
        Ok(self.h_prime_point(&BlockPoint::from_z(z, 0.0)))
    }

    /// `t - x_n` for `t = log 1/s`, accurate when `s` is split around `delta_n`.
    pub fn depth_offset(&self, p: &BlockPoint) -> f64 {
        -(((p.s_ref - self.delta_n) + p.ds) / self.delta_n).ln_1p()
    }

    /// `log((1 + gamma)|h|) - P(t)` and the sign of `h`, where `P` is the
    /// profile and `t = log 1/(1 - |z|)`.
    pub fn log_excess<P: LogProfile + ?Sized>(&self, prof: &P, p: &BlockPoint, gamma: f64) -> (f64, i8) {
        let d = self.depth_offset(p);
        let om = one_minus(p.s(), p.psi);
        let phase = -self.lam_prime * om.arg();
        let u = gamma.ln_1p() - prof.gap(self.x_n, self.lam, self.lam_prime, d) - self.lam_prime * om.log_ratio
            + half_ln_cos2(phase);
        (u, if phase.cos() >= 0.0 { 1 } else { -1 })
    }

    /// `(1 + gamma) h(z) - Theta(1 - |z|)`, the exponent of the concentration
    /// integrand, without cancellation near the peak.
    pub fn weighted_excess(&self, w: &RadialWeight, p: &BlockPoint, gamma: f64) -> f64 {
        let (u, sign) = self.log_excess(w, p, gamma);
        let t = self.x_n + self.depth_offset(p);
        excess_value(u, sign, w.lambda_unchecked(t))
    }

    /// As [`Self::log_excess`] for the block evaluated at `tau z`, with the
    /// profile still taken at `z`.
    pub fn log_excess_shifted<P: LogProfile + ?Sized>(
        &self,
        prof: &P,
        p: &BlockPoint,
        one_minus_tau: f64,
        gamma: f64,
    ) -> (f64, i8) {
        if one_minus_tau == 0.0 {
            return self.log_excess(prof, p, gamma);
        }
        let (u, sign) = self.log_excess(prof, &p.scaled(one_minus_tau), gamma);
        let s = p.s();
        let d = self.depth_offset(p);
        // t(tau z) - t(z), with 1 - |tau z| - (1 - |z|) = (1 - tau)(1 - s).
        let dt = -(one_minus_tau * (1.0 - s) / s).ln_1p();
        let shift = self.lam_prime * dt + prof.gap(self.x_n, self.lam, self.lam_prime, d + dt)
            - prof.gap(self.x_n, self.lam, self.lam_prime, d);
        (u + shift, sign)
    }

    /// `(1 + gamma) h(tau z) - Theta(1 - |z|)`.
    pub fn weighted_excess_shifted(&self, w: &RadialWeight, p: &BlockPoint, one_minus_tau: f64, gamma: f64) -> f64 {
        let (u, sign) = self.log_excess_shifted(w, p, one_minus_tau, gamma);
        excess_value(u, sign, w.lambda_unchecked(self.x_n + self.depth_offset(p)))
    }

    /// `w = 1 - delta e^{i pi/lam'}`, where `h(w) = -theta(delta)`.
    pub fn witness(&self) -> Complex64 {
        Complex64::new(1.0, 0.0) - Complex64::from_polar(self.delta_n, PI / self.lam_prime)
    }

    /// `1 - |w|` for the witness, accurate.
    pub fn witness_depth(&self) -> f64 {
        let (d, a) = (self.delta_n, PI / self.lam_prime);
        let abs = self.witness().norm();
        (2.0 * d * a.cos() - d * d) / (1.0 + abs)
    }
}

/// `(1 + gamma) h - Theta` from `u = log((1 + gamma)|h|) - log Theta`, the
/// sign of `h` and `log Theta`.
pub fn excess_value(u: f64, sign: i8, log_theta: f64) -> f64 {
    if sign > 0 {
        let e = u.exp_m1();
        if e == 0.0 {
            0.0
        } else {
            e.signum() * (log_theta + e.abs().ln()).exp()
        }
    } else {
        -(log_theta + u.exp().ln_1p()).exp()
    }
}

/// `log|cos x|` via `0.5 log(1 - sin^2 x)`, accurate when `x` is small.
fn half_ln_cos2(x: f64) -> f64 {
    let s = x.sin();
    let c = x.cos();
    if s.abs() < 0.5 {
        0.5 * (-s * s).ln_1p()
    } else {
        c.abs().ln()
    }
}

/// `exp(-2 lambda^2 e^{-lambda})`-type defect `2 lambda^2 / theta`.
fn square_defect(lam_t: f64) -> f64 {
    2.0 * lam_t * lam_t * (-lam_t).exp()
}

/// Squared distance `|z - r_n|^2` for a point in the block frame.
pub fn distance2_to_peak(b: &BuildingBlock, p: &BlockPoint) -> f64 {
    let ds = (p.s_ref - b.delta_n) + p.ds;
    let sh = (0.5 * p.psi).sin();
    ds * ds + 4.0 * (1.0 - p.s()) * (1.0 - b.delta_n) * sh * sh
}

/// Scan points for the majorant check: a polar grid refined toward the
/// peak and the boundary, plus a ring just outside `|z - r_n| = delta^2`
/// and a ring just inside it (which must be skipped).
pub fn majorant_grid(b: &BuildingBlock) -> Vec<BlockPoint> {
    let d = b.delta_n;
    let mut s_vals: Vec<f64> = (0..=60).map(|i| 0.5 * (d * d / 0.5f64).powf(i as f64 / 60.0)).collect();
    s_vals.extend((-8..=8).map(|j| d * (1.0 + 0.05 * j as f64)));
    let mut psis = vec![0.0];
    for i in 0..=80 {
        let v = d * d * 0.1 * (10.0 * PI / (d * d)).powf(i as f64 / 80.0);
        if v < PI {
            psis.push(v);
            psis.push(-v);
        }
    }
    let mut out = Vec::new();
    for &s in &s_vals {
        for &psi in &psis {
            out.push(BlockPoint::polar(s, psi));
        }
    }
    // Radial offsets around r_n, split so they survive next to delta.
    for j in [-3.0, -2.0, -1.5, -1.01, 1.01, 1.5, 2.0, 3.0] {
        for &psi in &[0.0, 0.5 * d * d, -0.5 * d * d, 2.0 * d * d] {
            out.push(BlockPoint {
                s_ref: d,
                ds: j * d * d,
                psi,
            });
        }
    }
    let frame = LocalFrame {
        s_c: d,
        phi_c: 0.0,
        anchor: None,
    };
    for scale in [1.0 + 1e-6, 1.0 - 1e-3] {
        let rho = scale * d * d;
        for i in 0..128 {
            let a = 2.0 * PI * i as f64 / 128.0;
            if let Some(p) = frame.point(rho * a.cos(), rho * a.sin()) {
                out.push(BlockPoint::from_disk_point(&p, 0.0));
            }
        }
    }
    out
}

/// Majorant estimates: `(a)` `|h| <= theta`, `(b)` the upper bound off the
/// small disk at `r_n`, `(c)` the lower bound near the circle with an
/// empirical threshold `c(theta)`. Margins are relative to `theta(1 - |z|)`.
pub fn verify_majorants(b: &BuildingBlock, m: &MinorantResult, grid: &[BlockPoint]) -> Report {
    let gamma = b.gamma_used;
    let mut rep = Report::new("block-majorants")
        .param("x_n", b.x_n)
        .param("lam", b.lam)
        .param("lam_prime", b.lam_prime)
        .param("gamma", gamma);
    let mut wa = (f64::INFINITY, String::new());
    let mut wb = (f64::INFINITY, String::new());
    let mut c_theta: f64 = 0.0;
    let mut wc = (f64::INFINITY, String::new());
    let (mut skipped, mut tested, mut small_theta) = (0usize, 0usize, 0usize);
    let mut wb_all = f64::INFINITY;
    let mut s_min = f64::INFINITY;
    for p in grid {
        let s = p.s();
        if !(s > 0.0 && s <= 1.0) {
            continue;
        }
        let t = -s.ln();
        if !m.in_domain(t) {
            continue;
        }
        s_min = s_min.min(s);
        let lam_t = m.lambda(t);
        let loc = || format!("1-|z| = {s:e}, psi = {:e}", p.psi);
        let (u0, _) = b.log_excess(m, p, 0.0);
        let ma = -u0.exp_m1();
        if ma < wa.0 {
            wa = (ma, loc());
        }
        let (u, sign) = b.log_excess(m, p, gamma);
        let defect = square_defect(lam_t);
        if distance2_to_peak(b, p) <= b.delta_n.powi(4) {
            skipped += 1;
        } else {
            let mb = if sign > 0 {
                -u.exp_m1() - defect
            } else {
                1.0 - defect + u.exp()
            };
            wb_all = wb_all.min(mb);
            // Where theta < 2 (log theta)^2 the right side is negative while
            // h > 0 near the real axis, for every block.
            if defect < 1.0 {
                tested += 1;
                if mb < wb.0 {
                    wb = (mb, loc());
                }
            } else {
                small_theta += 1;
            }
        }
        let mc = if sign < 0 {
            -u.exp_m1() - defect
        } else {
            1.0 - defect + u.exp()
        };
        if mc < 0.0 {
            c_theta = c_theta.max(1.0 - s);
        }
        if mc < wc.0 {
            wc = (mc, loc());
        }
    }
    rep.set("points_tested_b", tested);
    rep.set("points_skipped_in_disk", skipped);
    rep.set("points_skipped_small_theta", small_theta);
    rep.set("b_unrestricted_margin", wb_all);
    rep.set("c_theta", c_theta);
    rep.push(Check::new("a", wa.0 >= -1e-12, wa.0, wa.1));
    rep.push(Check::new("b", wb.0 >= 0.0, wb.0, wb.1));
    // (c) holds on c(theta) < |z| < 1 when no failure sits at the innermost
    // boundary layer of the grid.
    let pass_c = c_theta < 1.0 - s_min;
    rep.push(Check::new(
        "c",
        pass_c,
        if pass_c { (1.0 - s_min) - c_theta } else { wc.0 },
        format!("empirical c(theta) = {c_theta}; worst at {}", wc.1),
    ));
    rep.set_below_regime(b.below_regime());
    rep
}

/// Radial and tangential widths of the peak of `exp[(1+gamma) h - Theta]`
/// at `r_n`, from the curvature of the exponent.
pub fn peak_widths(b: &BuildingBlock, w: &RadialWeight) -> (f64, f64) {
    let lam2 = b.lam_prime * b.lam_prime;
    let curv = (w.lambda_big_prime(b.x_n + 1e-3) - b.lam_prime) / 1e-3;
    let root_theta = (0.5 * b.lam).exp();
    let sigma_r = b.delta_n / (curv.max(1e-3) * root_theta * root_theta).sqrt().max(root_theta);
    let sigma_a = b.delta_n / ((b.lam_prime + lam2) * root_theta * root_theta).sqrt();
    (sigma_r, sigma_a)
}

/// Local quadrature mesh adapted to the peak of the concentration integrand
/// at `r_n`, over the disk of radius `rho_max` about it.
pub fn peak_mesh(b: &BuildingBlock, w: &RadialWeight, rho_max: f64, refine: usize) -> LocalMesh {
    let (sigma_r, sigma_a) = peak_widths(b, w);
    let sigma_min = sigma_r.min(sigma_a);
    let sigma_max = sigma_r.max(sigma_a);
    let aniso = (sigma_max / sigma_min).max(1.0);
    let angular = ((16.0 * PI * aniso).ceil() as usize).clamp(64, 8192) * refine;
    LocalMesh {
        rho_min: (0.01 * sigma_min).min(rho_max),
        rho_max,
        radial_subdiv: 2 * refine,
        gl_nodes: 4,
        angular,
        coarse_from: 80.0 * sigma_max,
        coarse_angular: 64 * refine,
    }
}

/// `int_{|z - r_n| < delta^2} exp[(1 + gamma) h - Theta(1 - |z|)] dm`.
pub fn peak_integral(b: &BuildingBlock, w: &RadialWeight, gamma: f64, mesh: &LocalMesh) -> Result<LogReal> {
    let frame = LocalFrame {
        s_c: b.delta_n,
        phi_c: 0.0,
        anchor: None,
    };
    local_disk_integral(
        &frame,
        |p| LogReal::exp(b.weighted_excess(w, &BlockPoint::from_disk_point(p, 0.0), gamma)),
        mesh,
    )
}

/// Auxiliary estimates: `(a)` smallness away from 1, `(b)` the explicit
/// witness, `(c)` the concentration integral over the small disk.
pub fn verify_block_aux(b: &BuildingBlock, w: &RadialWeight, m: &MinorantResult) -> Result<Report> {
    let eps0 = w.epsilon0;
    let d = b.delta_n;
    let mut rep = Report::new("block-auxiliary")
        .param("x_n", b.x_n)
        .param("lam", b.lam)
        .param("lam_prime", b.lam_prime)
        .param("epsilon0", eps0);

    let rho0 = d * (-1.0 + 2.0 / eps0).exp();
    let mut worst = (f64::NEG_INFINITY, String::new());
    let mut rho = rho0;
    while rho < 2.0 {
        let amax = (0.5 * rho).acos();
        for i in 0..=360 {
            let a = -amax + 2.0 * amax * i as f64 / 360.0;
            let om = Complex64::from_polar(rho, a);
            let z = Complex64::new(1.0, 0.0) - om;
            if z.norm() >= 1.0 {
                continue;
            }
            let phase = -b.lam_prime * a;
            let log_h = b.log_scale() - b.lam_prime * rho.ln() + half_ln_cos2(phase);
            if log_h > worst.0 {
                worst = (log_h, format!("|z - 1| = {rho:e}, arg(1 - z) = {a:e}"));
            }
        }
        rho *= 1.25;
    }
    let ma = -3.0 * b.x_n - worst.0;
    rep.set("rho_a", rho0);
    rep.push(Check::new("a", ma > 0.0, ma, worst.1));

    let wz = b.witness();
    let depth = b.witness_depth();
    let alpha = PI / b.lam_prime;
    let log_h = b.log_scale() - b.lam_prime * d.ln() + half_ln_cos2(-b.lam_prime * alpha);
    let sign_neg = (-b.lam_prime * alpha).cos() < 0.0;
    let target = m.lambda(b.x_n);
    let mb_eq = 1e-9 * target.max(1.0) - (log_h - target).abs();
    let in_band = depth > 0.5 * d && depth < d;
    rep.set("witness", [wz.re, wz.im]);
    rep.set("witness_depth", depth);
    rep.push(Check::new(
        "b",
        sign_neg && in_band && mb_eq >= 0.0,
        mb_eq.min(if in_band { (depth - 0.5 * d).min(d - depth) / d } else { -1.0 }),
        format!("w = {wz}"),
    ));

    let mesh = peak_mesh(b, w, d * d, 1);
    let integral = peak_integral(b, w, b.gamma_used, &mesh)?;
    let log_i = integral.ln().unwrap_or(f64::NEG_INFINITY);
    rep.set("log_integral", log_i);
    rep.push(Check::new("c", log_i >= 0.0, log_i, "disk |z - r_n| < delta^2"));
    rep.set_below_regime(b.below_regime());
    Ok(rep)
}

/// `theta(s - theta(s)^-2) < theta(s) + 1` on the grid.
pub fn verify_theta_regularity(m: &MinorantResult, s_grid: &[f64]) -> Report {
    verify_theta_regularity_with(|t| m.lambda(t), s_grid, Some(m.domain))
}

/// As [`verify_theta_regularity`] for any `log theta` given as a function of
/// `t = log 1/s`.
pub fn verify_theta_regularity_with<F: Fn(f64) -> f64>(
    log_theta: F,
    s_grid: &[f64],
    domain: Option<(f64, f64)>,
) -> Report {
    let mut rep = Report::new("theta-regularity").param("points", s_grid.len());
    let (mut skipped, mut trivial) = (0usize, 0usize);
    let mut worst = (f64::INFINITY, String::new());
    for &s in s_grid {
        let lt = log_theta(-s.ln());
        let step = (-2.0 * lt).exp();
        let s2 = s - step;
        if !(s2 > 0.0) {
            skipped += 1;
            continue;
        }
        if s2 == s {
            trivial += 1;
            continue;
        }
        let t2 = -s2.ln();
        if let Some((lo, hi)) = domain {
            if t2 < lo || t2 > hi {
                skipped += 1;
                continue;
            }
        }
        let margin = lt + (-lt).exp().ln_1p() - log_theta(t2);
        if margin < worst.0 {
            worst = (margin, format!("s = {s:e}"));
        }
    }
    rep.set("skipped_nonpositive", skipped);
    rep.set("trivial_zero_step", trivial);
    let m = if worst.0.is_finite() { worst.0 } else { 0.0 };
    rep.push(Check::new("regularity", m >= 0.0, m, worst.1));
    rep
}

/// Pair estimates for `|w - z| < theta(1 - |z|)^-2`.
pub fn pair_estimates(b: &BuildingBlock, m: &MinorantResult, z: Complex64, w: Complex64) -> Result<Report> {
    let sz = 1.0 - z.norm();
    let t = -sz.ln();
    let lam_t = m.lambda(t);
    let bound = (-2.0 * lam_t).exp();
    if !((w - z).norm() < bound || w == z) {
        return Err(usage(format!(
            "pair estimate needs |w - z| < theta^-2 = {bound:e}, got {:e}",
            (w - z).norm()
        )));
    }
    let mut rep = Report::new("pair-estimates")
        .param("x_n", b.x_n)
        .param("z", [z.re, z.im])
        .param("w", [w.re, w.im])
        .param("lambda_t", lam_t);
    let theta_z = lam_t.exp();
    let theta_w = m.lambda(-(1.0 - w.norm()).ln()).exp();
    let m41 = 1.0 - (theta_z - theta_w).abs();
    rep.push(Check::new("41", m41 > 0.0, m41, format!("z = {z}")));

    let (_, hw) = b.eval(w)?;
    let hw = hw.to_f64();
    let gamma = b.gamma_used;
    if lam_t <= 0.4 * b.lam {
        let ma = theta_z - (1.0 + gamma) * hw;
        rep.push(Check::new("a", ma > 0.0, ma / theta_z, "lambda(t) <= 2 lam / 5"));
    }
    if lam_t > b.lam / 3.0 {
        let lhp = b.h_prime(w)?.log_magnitude;
        let mb = 1.5 * theta_z - (2.0 * lhp.abs() + hw);
        rep.push(Check::new("b", mb >= 0.0, mb / theta_z, "lambda(t) > lam / 3"));
        let om = Complex64::new(1.0, 0.0) - z;
        if om.im.atan2(om.re).abs() > 0.5 * PI / b.lam_prime {
            let mc = theta_z / (1.0 + gamma) - (2.0 * lhp + hw);
            rep.push(Check::new("c", mc >= 0.0, mc / theta_z, "off the central sector"));
        }
    }
    rep.set_below_regime(b.below_regime());
    Ok(rep)
}

/// Ratio estimates for `g = exp(H/2)` with `|xi - z| < theta(1 - |z|)^-3`.
pub fn ratio_estimates(b: &BuildingBlock, m: &MinorantResult, z: Complex64, xi: Complex64) -> Result<Report> {
    let t = -(1.0 - z.norm()).ln();
    let lam_t = m.lambda(t);
    let radius = (-3.0 * lam_t).exp();
    if !((xi - z).norm() < radius || xi == z) {
        return Err(usage(format!(
            "ratio estimate needs |xi - z| < theta^-3 = {radius:e}, got {:e}",
            (xi - z).norm()
        )));
    }
    let bound = lam_t.exp() / (1.0 + b.gamma_used) - lam_t;
    let (_, hz) = b.eval(z)?;
    let (_, hx) = b.eval(xi)?;
    let half_diff = 0.5 * (hx.to_f64() - hz.to_f64());
    let log_gp = b.h_prime(xi)?.log_magnitude - 2f64.ln() + half_diff;
    let mut rep = Report::new("ratio-estimates")
        .param("x_n", b.x_n)
        .param("z", [z.re, z.im])
        .param("xi", [xi.re, xi.im])
        .param("log_bound", bound);
    rep.push(Check::new("derivative", log_gp <= bound, bound - log_gp, format!("z = {z}")));
    rep.push(Check::new("value", half_diff <= bound, bound - half_diff, format!("z = {z}")));
    rep.set_below_regime(b.below_regime());
    Ok(rep)
}

/// Five-point Laplacian of `h` at `z` relative to the size of `h` nearby.
pub fn laplacian_residual(b: &BuildingBlock, z: Complex64, step: f64) -> Result<f64> {
    let h = |z: Complex64| -> Result<f64> { Ok(b.eval(z)?.1.to_f64()) };
    let c = h(z)?;
    let e = h(z + step)?;
    let wv = h(z - step)?;
    let n = h(z + Complex64::new(0.0, step))?;
    let sv = h(z - Complex64::new(0.0, step))?;
    let lap = e + wv + n + sv - 4.0 * c;
    let scale = c.abs().max(e.abs()).max(wv.abs()).max(n.abs()).max(sv.abs());
    Ok(lap.abs() / scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_minus_matches_direct() {
        for &(s, psi) in &[(0.3, 0.2), (0.01, -1.0), (0.9, 3.0)] {
            let om = one_minus(s, psi);
            let z = Complex64::from_polar(1.0 - s, psi);
            let d = Complex64::new(1.0, 0.0) - z;
            assert!((om.to_complex() - d).norm() < 1e-15);
            assert!((om.ln_abs() - d.norm().ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn f_alpha_basics() {
        let f = f_alpha(3.5, Complex64::new(0.0, 0.0)).unwrap();
        assert_eq!(f.log_magnitude, 0.0);
        assert_eq!(f.phase, 0.0);
        let f = f_alpha(2.0, Complex64::new(0.5, 0.0)).unwrap();
        assert!((f.to_complex().re - 4.0).abs() < 1e-14);
        assert!(f_alpha(2.0, Complex64::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn block_values_at_special_points() {
        let b = BuildingBlock::new(9.0, 30.0, 12.0).unwrap();
        let (_, h0) = b.eval(Complex64::new(0.0, 0.0)).unwrap();
        assert!((h0.log_magnitude - b.log_scale()).abs() < 1e-12);
        let v = b.eval_point(&BlockPoint::polar(b.delta_n, 0.0));
        assert!((v.h.log_magnitude - b.lam).abs() < 1e-9 * b.lam);
        let (_, hw) = b.eval(b.witness()).unwrap();
        assert_eq!(hw.sign, -1);
        assert!((hw.log_magnitude - b.lam).abs() < 1e-6);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let b = BuildingBlock::new(3.0, 8.0, 4.0).unwrap();
        let z = Complex64::new(0.9, 0.05);
        let hstep = 1e-6 * (1.0 - z.norm());
        let f = |z: Complex64| b.eval(z).unwrap().0.to_complex();
        let fd = (f(z + hstep) - f(z - hstep)) / (2.0 * hstep);
        let hp = b.h_prime(z).unwrap().to_complex();
        assert!((fd - hp).norm() / hp.norm() < 1e-5);
    }

    #[test]
    fn block_is_harmonic() {
        let b = BuildingBlock::new(3.0, 8.0, 4.0).unwrap();
        for z in [Complex64::new(0.5, 0.3), Complex64::new(0.9, -0.1)] {
            let r = laplacian_residual(&b, z, 1e-4 * (1.0 - z.norm())).unwrap();
            assert!(r < 1e-4, "{r}");
        }
    }

    #[test]
    fn split_offsets_survive() {
        let b = BuildingBlock::new(15.0, 100.0, 50.0).unwrap();
        let p = BlockPoint {
            s_ref: b.delta_n,
            ds: -1e-40,
            psi: 0.0,
        };
        assert!((b.depth_offset(&p) - 1e-40 / b.delta_n).abs() < 1e-50 / b.delta_n);
        let q = p.scaled(1e-30);
        assert!(q.ds > 0.0);
    }

    #[test]
    fn regularity_detects_jump() {
        // Theta(s) = exp(1/s).
        let smooth = |t: f64| t.exp();
        let grid: Vec<f64> = (0..40).map(|i| 0.05 * 0.9f64.powi(i)).collect();
        assert!(verify_theta_regularity_with(smooth, &grid, None).all_pass());
        // log theta = 1 at s = 0.5; the perturbed argument crosses the jump.
        let jump = |t: f64| if t < 0.8 { 1.0 } else { 5.0 };
        assert!(!verify_theta_regularity_with(jump, &[0.5], None).all_pass());
    }
}
