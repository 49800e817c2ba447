//! The double integral
//! `int int |f(z)|^{-2} |f(z) - f(w)|^2 / |z - w|^2 omega(z) omega(w)`
//! for `f = F^{1/2}`, split along `E = {|w - z| <= theta(1 - |z|)^{-3}}`:
//! pointwise checks on sampled pairs of `E`, and the reduction bound off `E`
//! against direct quadrature.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::measure::BulkMesh;
use super::ConstructionState;
use crate::convexreg::theta_small;
use crate::cyclolab::{log_one_minus_exp, log_quotient, Generator, StatePower};
use crate::error::{usage, Error, Result};
use crate::numerics::{LogReal, LseAccumulator};
use crate::report::{Check, Report};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothConfig {
    pub pairs: usize,
    pub seed: u64,
    /// Pass threshold for `log M`.
    pub log_m_bound: f64,
    /// Coarse grid for the off-diagonal comparison; its floor also bounds
    /// the sampled depths.
    pub grid: BulkMesh,
    pub slack: f64,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        SmoothConfig {
            pairs: 10_000,
            seed: 17,
            log_m_bound: 0.0,
            grid: BulkMesh {
                radial_subdiv: 1,
                gl_nodes: 2,
                angular_min: 64,
                angular_max: 512,
                angular_scale: 2.0,
                ..BulkMesh::default()
            },
            slack: 10.0,
        }
    }
}

/// A pair of `E`: `w = z + e^{log_d + i alpha}`, kept in this form because
/// `theta^{-3}` falls below the spacing of `f64` near the circle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EPair {
    pub z: Complex64,
    pub log_d: f64,
    pub alpha: f64,
}

/// Both estimates at one pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EValue {
    /// `1 - |theta(1 - |z|) - theta(1 - |w|)|`.
    pub est000_margin: f64,
    /// `log(|f(z)|^{-2} |f(z) - f(w)|^2 / |z - w|^2) - 2 theta(1 - |z|)`.
    pub log_ratio: f64,
    /// `|W''/W'(z)| |w - z|`: size of the first neglected term when the
    /// quotient comes from the expansion of `W` about `z` (`0` otherwise).
    pub expansion_ratio: f64,
    /// The quotient was replaced by an upper bound from derivative bounds
    /// (single terms of `W` leave `f64` at `z`).
    pub bounded: bool,
}

fn theta(st: &ConstructionState, z: Complex64) -> Result<f64> {
    Ok(theta_small(&st.minorant, 1.0 - z.norm())?.to_f64())
}

/// Offsets at least this large are resolved directly in `f64`.
const DIRECT_LOG_D: f64 = -23.0;

/// Largest depth `s` with `log theta(s) >= (2/3) log(1/s)` from there on:
/// below it `theta` changes by less than one across `|w - z| <= theta^{-3}`
/// when `|theta'| < theta^{3/2}` in `log(1/s)`.
pub fn regime_depth(st: &ConstructionState) -> Result<f64> {
    let m = &st.minorant;
    let ok = |x: f64| m.lambda(x) >= 2.0 * x / 3.0;
    let (lo, hi) = m.domain;
    let lo = lo.max(0.0);
    if !ok(hi) {
        return Err(usage("the minorant never reaches log theta >= (2/3) log(1/s)"));
    }
    // Walk down to the last point where the condition holds throughout.
    let step = (hi - lo) / 4096.0;
    let mut x = hi;
    while x - step > lo && ok(x - step) {
        x -= step;
    }
    Ok((-x).exp())
}

/// Pairs of `E` with depths log-uniform in `[s_lo, s_hi]`; half of them are
/// placed near the nodes of a random level.
pub fn sample_e_pairs(st: &ConstructionState, count: usize, seed: u64, s_lo: f64, s_hi: f64) -> Result<Vec<EPair>> {
    if !(s_lo > 0.0 && s_lo < s_hi && s_hi < 1.0) {
        return Err(usage("sampled depths need 0 < s_lo < s_hi < 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (s_lo.ln(), s_hi.ln());
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let s = rng.gen_range(a..b).exp();
        let phi = if st.levels.is_empty() || rng.gen_bool(0.5) {
            rng.gen_range(0.0..2.0 * PI)
        } else {
            let l = &st.levels[rng.gen_range(0..st.levels.len())];
            l.node_angle(rng.gen_range(0..l.lattice.n_nodes)) + rng.gen_range(-1.0..1.0) * s
        };
        let z = Complex64::from_polar(1.0 - s, phi);
        let u: f64 = rng.gen_range(0.0..1.0);
        let alpha = rng.gen_range(0.0..2.0 * PI);
        if u == 0.0 {
            continue;
        }
        let log_d = -3.0 * st.minorant.lambda(-s.ln()) + 0.5 * u.ln();
        if log_d > DIRECT_LOG_D && (z + Complex64::from_polar(log_d.exp(), alpha)).norm() >= 1.0 {
            continue;
        }
        out.push(EPair { z, log_d, alpha });
    }
    Ok(out)
}

/// Evaluates both estimates. Resolvable offsets use `f(w)` directly; below
/// that, `W(w) - W(z) = W' d + W'' d^2/2` and `theta(w) - theta(z)` from the
/// slope of the minorant, with the size of the first neglected term kept.
pub fn e_pair_values(st: &ConstructionState, pairs: &[EPair]) -> Result<Vec<EValue>> {
    let f = StatePower::new(st, 2.0);
    let m = &st.minorant;
    pairs
        .par_iter()
        .map(|p| -> Result<EValue> {
            let z = p.z;
            let s = 1.0 - z.norm();
            let x = -s.ln();
            let lt = m.lambda(x);
            let tz = lt.exp();
            if p.log_d > DIRECT_LOG_D {
                let w = z + Complex64::from_polar(p.log_d.exp(), p.alpha);
                let tw = theta(st, w)?;
                let q = log_quotient(f.log_f(z)?, f.log_f(w)?, f.dlog_f(z)?, z, w);
                return Ok(EValue {
                    est000_margin: 1.0 - (tz - tw).abs(),
                    log_ratio: q - 2.0 * tz,
                    expansion_ratio: 0.0,
                    bounded: false,
                });
            }
            // 1 - |w| = s - |d| cos(alpha - arg z) to first order.
            let c = (p.alpha - z.im.atan2(z.re)).cos().abs();
            let log_dtheta = lt + m.lambda_prime(x).max(0.0).ln() + p.log_d + c.ln() - s.ln();
            let finite = |v: &super::WValue| {
                [v.dw, v.d2w].iter().all(|c| c.re.is_finite() && c.im.is_finite()) && v.dw.norm() > 0.0
            };
            let v = match st.w(z) {
                Ok(v) if finite(&v) => v,
                Ok(_) | Err(Error::NonFinite { .. }) => {
                    // |f(w) - f(z)| / |d| <= |f(z)| (B1 + B2 |d|) e^{(B1 + B2 |d|) |d|}
                    // with B1, B2 bounds on |L'|, |L''| near z.
                    let (b1, b2) = st.log_derivative_bounds(z);
                    let b1 = b1 - std::f64::consts::LN_2;
                    let b2 = b2 - std::f64::consts::LN_2;
                    let lb = LogReal::exp(b1).add(LogReal::exp(b2 + p.log_d)).ln()?;
                    return Ok(EValue {
                        est000_margin: 1.0 - log_dtheta.exp(),
                        log_ratio: 2.0 * (lb + (lb + p.log_d).exp()) - 2.0 * tz,
                        expansion_ratio: (b2 - b1 + p.log_d).exp(),
                        bounded: true,
                    });
                }
                Err(e) => return Err(e),
            };
            let (l1, l2) = (v.dw / 2.0, v.d2w / 2.0);
            // Scaled first: the plain complex quotient overflows here.
            let n1 = l1.norm();
            let q21 = (l2 / n1) / (l1 / n1);
            let ratio = q21.norm();
            let log_r = ratio.ln() + p.log_d - std::f64::consts::LN_2;
            let corr = if log_r < -700.0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(1.0, 0.0) + q21 / 2.0 * Complex64::from_polar(p.log_d.exp(), p.alpha)
            };
            let log_dl = n1.ln() + p.log_d + corr.norm().ln();
            let log_num = if log_dl < -18.0 {
                // log|1 - e^{dL}| = log|dL| + O(|dL|).
                log_dl
            } else {
                let dl = l1 * corr * Complex64::from_polar(p.log_d.exp(), p.alpha);
                log_one_minus_exp(dl).re
            };
            Ok(EValue {
                est000_margin: 1.0 - log_dtheta.exp(),
                log_ratio: 2.0 * (log_num - p.log_d) - 2.0 * tz,
                expansion_ratio: (ratio.ln() + p.log_d).exp(),
                bounded: false,
            })
        })
        .collect()
}

/// Grid node with everything the off-diagonal sums need.
struct Node {
    z: Complex64,
    /// `log(quadrature weight * omega)`.
    lw: f64,
    lf: Complex64,
    dlf: Complex64,
    log_theta: f64,
}

/// `(log direct, log reduction, log single integral)` over the grid: the
/// direct sum over grid pairs off `E`, the bound
/// `2 sum (|f(z)|^2 + |f(w)|^2) / |f(z)|^2 theta^6 omega omega` over all
/// pairs, and `sum (1 + |f|^2) / |f|^2 theta^6 omega`.
fn off_e(st: &ConstructionState, mesh: &BulkMesh) -> Result<(f64, f64, f64, usize)> {
    let f = StatePower::new(st, 2.0);
    let s_floor = mesh.floor(st);
    let rings = mesh.rings(s_floor)?;
    let nodes: Vec<Node> = rings
        .par_iter()
        .flat_map_iter(|r| (0..r.m).map(move |a| (r.point(a), r.log_w)))
        .map(|(z, lw)| -> Result<Node> {
            Ok(Node {
                z,
                lw: lw + st.weight.log_omega(1.0 - z.norm()),
                lf: f.log_f(z)?,
                dlf: f.dlog_f(z)?,
                log_theta: theta(st, z)?.ln(),
            })
        })
        .collect::<Result<_>>()?;
    let per: Vec<(LseAccumulator, LseAccumulator, LogReal, usize)> = nodes
        .par_iter()
        .map(|a| {
            let (mut direct, mut red) = (LseAccumulator::new(), LseAccumulator::new());
            let radius = (-3.0 * a.log_theta).exp();
            let mut off = 0usize;
            for b in &nodes {
                let base = a.lw + b.lw + 6.0 * a.log_theta;
                // log(1 + |f(b)|^2 / |f(a)|^2)
                let d = 2.0 * (b.lf.re - a.lf.re);
                red.push(LogReal::exp(base + d.max(0.0) + (-d.abs()).exp().ln_1p()));
                if (b.z - a.z).norm() > radius {
                    off += 1;
                    direct.push(LogReal::exp(a.lw + b.lw + log_quotient(a.lf, b.lf, a.dlf, a.z, b.z)));
                }
            }
            let e = -2.0 * a.lf.re;
            let single = LogReal::exp(a.lw + 6.0 * a.log_theta + e.max(0.0) + (-e.abs()).exp().ln_1p());
            (direct, red, single, off)
        })
        .collect();
    let (mut d, mut r, mut s) = (LseAccumulator::new(), LseAccumulator::new(), LseAccumulator::new());
    let mut off = 0;
    for (a, b, c, o) in &per {
        d.merge(a);
        r.merge(b);
        s.push(*c);
        off += o;
    }
    let ln = |x: LogReal| x.ln().unwrap_or(f64::NEG_INFINITY);
    Ok((ln(d.value()), std::f64::consts::LN_2 + ln(r.value()), ln(s.value()), off))
}

/// The smoothness report: `(est-000)` and `(est-001)` on sampled pairs of
/// `E` with `M` reported, the nearest pair, and the off-`E` reduction bound
/// against direct quadrature within `slack`. `theta` is the minorant profile.
pub fn verify_smoothness_functional(st: &ConstructionState, cfg: &SmoothConfig) -> Result<Report> {
    if cfg.pairs == 0 || !(cfg.slack >= 1.0) {
        return Err(usage("smoothness check needs pairs > 0 and slack >= 1"));
    }
    let deepest = st.levels.iter().map(|l| l.block.delta_n).fold(cfg.grid.floor(st), f64::min);
    let s_lo = 0.25 * deepest;
    let s_hi = regime_depth(st)?.min(0.5);
    if !(s_hi > s_lo) {
        return Err(usage(format!("no depths between {s_lo:e} and the regime bound {s_hi:e}")));
    }
    let pairs = sample_e_pairs(st, cfg.pairs, cfg.seed, s_lo, s_hi)?;
    let vals = e_pair_values(st, &pairs)?;
    let mut rep = Report::new("smoothness-functional")
        .param("pairs", cfg.pairs)
        .param("seed", cfg.seed)
        .param("s_lo", s_lo)
        .param("s_hi", s_hi)
        .param("majorant", "theta");
    // Largest log M per band of depth between consecutive levels, shallow
    // to deep.
    let mut bounds: Vec<f64> = st.levels.iter().map(|l| l.block.delta_n).collect();
    bounds.retain(|&b| b < s_hi);
    let mut per_band = vec![f64::NEG_INFINITY; bounds.len() + 1];
    for (p, v) in pairs.iter().zip(&vals) {
        let s = 1.0 - p.z.norm();
        per_band[bounds.iter().take_while(|&&b| s < b).count()] =
            per_band[bounds.iter().take_while(|&&b| s < b).count()].max(v.log_ratio);
    }
    rep.set("log_m_per_band", &per_band);
    rep.set(
        "expansion_ratio_max",
        vals.iter().map(|v| v.expansion_ratio).fold(0.0, f64::max),
    );
    rep.set("bounded_pairs", vals.iter().filter(|v| v.bounded).count());
    rep.set("direct_pairs", pairs.iter().filter(|p| p.log_d > DIRECT_LOG_D).count());

    let (i000, m000) = vals
        .iter()
        .enumerate()
        .map(|(i, v)| (i, v.est000_margin))
        .fold((0, f64::INFINITY), |a, b| if !(b.1 >= a.1) { b } else { a });
    rep.push(Check::from_margin(
        "est-000",
        m000,
        format!("z = {:.6e}, log|w - z| = {:.3}", pairs[i000].z, pairs[i000].log_d),
    ));
    let (imax, log_m) = vals
        .iter()
        .enumerate()
        .map(|(i, v)| (i, v.log_ratio))
        .fold((0, f64::NEG_INFINITY), |a, b| if !(b.1 <= a.1) { b } else { a });
    rep.set("log_m", log_m);
    rep.set("log_m_bound", cfg.log_m_bound);
    rep.push(Check::new(
        "est-001",
        log_m <= cfg.log_m_bound,
        cfg.log_m_bound - log_m,
        format!("worst z = {:.6e}", pairs[imax].z),
    ));
    let (inear, _) = pairs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.log_d.total_cmp(&b.1.log_d))
        .expect("at least one pair");
    let near = vals[inear];
    rep.set("nearest_log_distance", pairs[inear].log_d);
    rep.push(Check::new(
        "est-001-nearest",
        near.log_ratio <= cfg.log_m_bound,
        cfg.log_m_bound - near.log_ratio,
        format!("log|z - w| = {:.3}", pairs[inear].log_d),
    ));

    let (direct, reduction, single, off) = off_e(st, &cfg.grid)?;
    rep.set("log_off_e_direct", direct);
    rep.set("log_off_e_reduction", reduction);
    rep.set("log_single_integral", single);
    rep.set("off_e_pairs", off);
    rep.push(Check::from_margin(
        "off-e-reduction",
        reduction + cfg.slack.ln() - direct,
        "log reduction + log slack - log direct",
    ));
    rep.push(Check::new(
        "single-integral-finite",
        single.is_finite(),
        f64::MAX.ln() - single,
        "int (1 + |f|^2) |f|^{-2} theta^6 omega",
    ));
    Ok(rep)
}
