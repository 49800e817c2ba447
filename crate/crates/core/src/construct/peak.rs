//! The peak integral `I(g) = int_{|z - r_n| < delta^2} exp[(1+gamma) h - Theta] dm`
//! as a function of `g = log(1 + gamma)`, tabulated once per block.
//!
//! Every quadrature node contributes `exp(lw + E(u0 + g))` where `u0` is the
//! node's log excess at `gamma = 0`, so the nodes are evaluated once and the
//! table is a cubic Hermite interpolant in `g` whose error is measured at every
//! cell midpoint.

use serde::{Deserialize, Serialize};

use crate::blocks::{excess_value, peak_mesh, BlockPoint, BuildingBlock};
use crate::error::{domain, Result};
use crate::numerics::{bisect_monotone, local_points, LocalFrame, LocalMesh};
use crate::weights::RadialWeight;

/// Per-node data of the peak integral: the exponent at `gamma = 0` and
/// `log(Theta e^{u0})`, so that the exponent at `g` is
/// `e0 + sign e^{log_a} expm1(g)` without re-adding `g` to `u0`.
#[derive(Clone, Debug)]
pub struct PeakData {
    lw: Vec<f64>,
    e0: Vec<f64>,
    log_a: Vec<f64>,
    sign: Vec<f64>,
}

impl PeakData {
    /// Nodes of `mesh` about `r_n`; with `one_minus_tau` the block is
    /// evaluated at `tau z`.
    pub fn new(
        b: &BuildingBlock,
        w: &RadialWeight,
        mesh: &LocalMesh,
        one_minus_tau: Option<f64>,
    ) -> PeakData {
        let frame = LocalFrame {
            s_c: b.delta_n,
            phi_c: 0.0,
            anchor: None,
        };
        let pts = local_points(&frame, mesh);
        let mut out = PeakData {
            lw: Vec::with_capacity(pts.len()),
            e0: Vec::with_capacity(pts.len()),
            log_a: Vec::with_capacity(pts.len()),
            sign: Vec::with_capacity(pts.len()),
        };
        for (p, lw) in &pts {
            let bp = BlockPoint::from_disk_point(p, 0.0);
            let (u, sg) = b.log_excess_shifted(w, &bp, one_minus_tau.unwrap_or(0.0), 0.0);
            let lt = w.lambda_unchecked(b.x_n + b.depth_offset(&bp));
            out.lw.push(*lw);
            out.e0.push(excess_value(u, sg, lt));
            out.log_a.push(lt + u);
            out.sign.push(f64::from(sg));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.lw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lw.is_empty()
    }

    /// `log I(g)` and `d log I / dg`.
    pub fn log_integral(&self, g: f64) -> (f64, f64) {
        let lg = g.exp_m1().ln();
        let n = self.len();
        let mut ex = Vec::with_capacity(n);
        let mut m = f64::NEG_INFINITY;
        for i in 0..n {
            let e = self.lw[i] + self.e0[i] + self.sign[i] * (self.log_a[i] + lg).exp();
            m = m.max(e);
            ex.push(e);
        }
        if m == f64::NEG_INFINITY {
            return (m, 0.0);
        }
        let (mut s, mut d) = (0.0, 0.0);
        for i in 0..n {
            let p = (ex[i] - m).exp();
            if p == 0.0 {
                continue;
            }
            s += p;
            d += p * self.sign[i] * (self.log_a[i] + g).exp();
        }
        (m + s.ln(), d / s)
    }
}

/// Cubic Hermite table of `log I(g)` on `[0, g_top]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PeakTable {
    pub g_top: f64,
    /// `g_top = log(1 + gamma_n)`: targets above the table are out of bracket.
    pub top_is_gamma_n: bool,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
    /// Largest `|interpolant - log I|` at the cell midpoints.
    pub midpoint_error: f64,
}

impl PeakTable {
    /// Tabulates up to `log(1 + gamma_n)` or to where `log I` exceeds
    /// `log_cap`, whichever comes first, refining until the midpoint error is
    /// below `tol` nats.
    pub fn build(data: &PeakData, gamma_n: f64, log_cap: f64, tol: f64) -> Result<PeakTable> {
        let g_n = gamma_n.ln_1p();
        let (top_val, _) = data.log_integral(g_n);
        let (g_top, top_is_gamma_n) = if top_val <= log_cap {
            (g_n, true)
        } else {
            // log I grows roughly like Theta g, so search in log g.
            let lo = (g_n.ln() - 700.0).max(-740.0);
            let t = bisect_monotone(|t| data.log_integral(t.exp()).0, lo, g_n.ln(), log_cap, 1e-3)?;
            (t.exp().min(g_n), false)
        };
        let mut cells = 64usize;
        loop {
            let h = g_top / cells as f64;
            let (values, slopes): (Vec<f64>, Vec<f64>) =
                (0..=cells).map(|i| data.log_integral(i as f64 * h)).unzip();
            let mut table = PeakTable {
                g_top,
                top_is_gamma_n,
                values,
                slopes,
                midpoint_error: 0.0,
            };
            let mut err: f64 = 0.0;
            for i in 0..cells {
                let g = (i as f64 + 0.5) * h;
                err = err.max((table.interp(g) - data.log_integral(g).0).abs());
            }
            table.midpoint_error = err;
            if !err.is_finite() {
                return Err(domain("peak integral table is not finite"));
            }
            // Below this the table is limited by rounding in log I itself.
            let floor = 64.0 * f64::EPSILON * table.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            if err <= tol.max(floor) || cells >= 1 << 14 {
                return Ok(table);
            }
            cells *= 4;
        }
    }

    fn cells(&self) -> usize {
        self.values.len() - 1
    }

    pub fn interp(&self, g: f64) -> f64 {
        let n = self.cells();
        let h = self.g_top / n as f64;
        let x = (g / h).clamp(0.0, n as f64);
        let i = (x.floor() as usize).min(n - 1);
        let t = x - i as f64;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1
    }

    pub fn at_zero(&self) -> f64 {
        self.values[0]
    }

    pub fn at_top(&self) -> f64 {
        self.values[self.cells()]
    }

    /// Solves `log I(g) = log_target`.
    pub fn solve(&self, log_target: f64) -> Solve {
        if log_target <= self.at_zero() {
            return Solve {
                g: 0.0,
                status: if log_target < self.at_zero() - 1e-12 {
                    GammaStatus::ClampedLow
                } else {
                    GammaStatus::Solved
                },
                log_value: self.at_zero(),
            };
        }
        if log_target >= self.at_top() {
            return Solve {
                g: self.g_top,
                status: if self.top_is_gamma_n {
                    GammaStatus::ClampedHigh
                } else {
                    GammaStatus::OffTable
                },
                log_value: self.at_top(),
            };
        }
        let n = self.cells();
        let i = self.values.partition_point(|&v| v < log_target).clamp(1, n);
        let h = self.g_top / n as f64;
        let (a, b) = ((i - 1) as f64 * h, i as f64 * h);
        // Bisect on the cell coordinate: g itself can sit far below 1e-14.
        let t = bisect_monotone(|t| self.interp(a + t * (b - a)), 0.0, 1.0, log_target, 1e-13).unwrap_or(1.0);
        let g = a + t * (b - a);
        Solve {
            g,
            status: GammaStatus::Solved,
            log_value: self.interp(g),
        }
    }
}

/// Outcome of one peak solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaStatus {
    Solved,
    /// Target below the integral at `gamma = 0`.
    ClampedLow,
    /// Target above the integral at `gamma = gamma_n`.
    ClampedHigh,
    /// Target above the tabulated range (the table stops below `gamma_n`).
    OffTable,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Solve {
    pub g: f64,
    pub status: GammaStatus,
    pub log_value: f64,
}

/// The default peak mesh over the disk of radius `delta^2`.
pub fn target_mesh(b: &BuildingBlock, w: &RadialWeight, refine: usize) -> LocalMesh {
    peak_mesh(b, w, b.delta_n * b.delta_n, refine)
}
