//! Evaluation of `W = sum_n sum_k (1 + gamma_{n,k}) H_n(tau_n z conj(zeta_{n,k}))`
//! and its derivative, with a rigorous far-field cutoff per level.
//!
//! A term of level `n` is bounded by `2 e^{c_n} |1 - w|^{-lam'_n}`, so all
//! terms with `|1 - w| > R_n` together contribute less than `CUTOFF_ABS`;
//! only nodes within the matching angular window of `arg z` are summed.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::{ConstructionState, LevelState};
use crate::blocks::{one_minus, BlockPoint};
use crate::error::{usage, Error, Result};
use crate::numerics::{DiskPoint, LogComplex, LogReal, LseAccumulator};

/// Bound on the total of the omitted far-field terms (and of their
/// derivatives), per level.
pub const CUTOFF_ABS: f64 = 1e-15;

/// Largest log-magnitude of a single term accepted in plain `f64` sums.
const MAX_LOG_TERM: f64 = 700.0;

/// `W`, `W'` and `W''` at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WValue {
    pub w: Complex64,
    pub dw: Complex64,
    pub d2w: Complex64,
}

impl WValue {
    pub const ZERO: WValue = WValue {
        w: Complex64::new(0.0, 0.0),
        dw: Complex64::new(0.0, 0.0),
        d2w: Complex64::new(0.0, 0.0),
    };

    fn add(&mut self, o: &WValue) {
        self.w += o.w;
        self.dw += o.dw;
        self.d2w += o.d2w;
    }
}

/// Cutoff radius for a level with `log H(0) = c`, exponent `alpha` and
/// `count` nodes.
pub fn cutoff_radius(c: f64, alpha: f64, count: usize) -> f64 {
    let budget = c + (2.0 * count as f64).ln() - CUTOFF_ABS.ln();
    let r0 = (budget / alpha).exp();
    // The derivative carries an extra alpha / |1 - w|.
    let r1 = ((budget + (alpha / r0.min(1.0)).ln().max(0.0)) / alpha).exp();
    r0.max(r1)
}

impl LevelState {
    pub fn node_angle(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.lattice.n_nodes as f64
    }

    pub fn zeta(&self, k: usize) -> Complex64 {
        Complex64::from_polar(1.0, self.node_angle(k))
    }

    pub fn coefficient(&self, k: usize) -> f64 {
        if self.active[k] {
            1.0 + self.gammas[k]
        } else {
            0.0
        }
    }

    /// Node indices whose terms may exceed the cutoff at `z`.
    pub fn candidates(&self, z: Complex64) -> Vec<usize> {
        let n = self.lattice.n_nodes;
        let tau = 1.0 - self.one_minus_tau;
        let gap = 1.0 - tau * z.norm();
        let r = self.cutoff_radius;
        if r >= 2.0 || n <= 8 {
            return (0..n).collect();
        }
        if gap >= r {
            return Vec::new();
        }
        // |1 - tau z conj(zeta)| >= 2 |sin(d/2)| - (1 - tau |z|) for angular
        // distance d between arg z and the node.
        let half = ((r + gap) / 2.0).min(1.0).asin() * 2.0;
        let step = 2.0 * PI / n as f64;
        let phi = z.im.atan2(z.re);
        let lo = ((phi - half) / step).floor() as i64 - 1;
        let hi = ((phi + half) / step).ceil() as i64 + 1;
        if (hi - lo + 1) as usize >= n {
            return (0..n).collect();
        }
        (lo..=hi).map(|k| k.rem_euclid(n as i64) as usize).collect()
    }

    /// Sum of the level's terms at `z` (optionally without node `skip`).
    pub fn sum_at(&self, z: Complex64, skip: Option<usize>) -> Result<WValue> {
        let tau = 1.0 - self.one_minus_tau;
        let c = self.block.log_scale();
        let alpha = self.block.lam_prime;
        let mut acc = WValue::ZERO;
        for k in self.candidates(z) {
            if Some(k) == skip || !self.active[k] {
                continue;
            }
            let zeta_bar = self.zeta(k).conj();
            // 1 - tau z conj(zeta) from (s, psi), without cancellation.
            let p = BlockPoint::from_z(z, self.node_angle(k)).scaled(self.one_minus_tau);
            let om = one_minus(p.s(), p.psi).to_complex();
            let norm = om.norm();
            if norm == 0.0 {
                return Err(Error::Singular(format!("z = {z} hits the singularity of node {k}")));
            }
            let log_mag = c - alpha * norm.ln() + self.coefficient(k).ln();
            if log_mag > MAX_LOG_TERM {
                return Err(Error::NonFinite {
                    value: log_mag,
                    re: z.re,
                    im: z.im,
                });
            }
            let h = Complex64::from_polar(log_mag.exp(), -alpha * om.im.atan2(om.re));
            let q = tau * zeta_bar / om;
            acc.w += h;
            acc.dw += h * alpha * q;
            acc.d2w += h * alpha * (alpha + 1.0) * q * q;
        }
        Ok(acc)
    }

    /// `log` of `sum |term'|` and `sum |term''|` over the nodes near `z`,
    /// upper bounds for `|W_n'|` and `|W_n''|` (far field excluded, it adds
    /// at most `CUTOFF_ABS`) that stay finite where the terms leave `f64`.
    pub fn log_derivative_bounds(&self, z: Complex64) -> (LogReal, LogReal) {
        let tau = 1.0 - self.one_minus_tau;
        let c = self.block.log_scale();
        let alpha = self.block.lam_prime;
        let (mut d1, mut d2) = (LseAccumulator::new(), LseAccumulator::new());
        for k in self.candidates(z) {
            if !self.active[k] {
                continue;
            }
            let p = BlockPoint::from_z(z, self.node_angle(k)).scaled(self.one_minus_tau);
            let ln_om = one_minus(p.s(), p.psi).ln_abs();
            let log_h = c - alpha * ln_om + self.coefficient(k).ln();
            d1.push(LogReal::exp(log_h + (alpha * tau).ln() - ln_om));
            d2.push(LogReal::exp(log_h + (alpha * (alpha + 1.0) * tau * tau).ln() - 2.0 * ln_om));
        }
        (d1.value(), d2.value())
    }

    /// `(1 + gamma_k) h_n(tau z conj(zeta_k))` summed over every active
    /// node through the real block evaluator, with no cutoff.
    pub fn real_sum_full(&self, z: Complex64) -> f64 {
        let mut v = 0.0;
        for k in 0..self.lattice.n_nodes {
            if !self.active[k] {
                continue;
            }
            let p = BlockPoint::from_z(z, self.node_angle(k)).scaled(self.one_minus_tau);
            v += self.coefficient(k) * self.block.eval_point(&p).h.to_f64();
        }
        v
    }

    /// The level's terms at `z` summed in the log domain (far field omitted),
    /// for points where single terms leave `f64`.
    pub fn real_sum_log(&self, z: Complex64) -> LogReal {
        let mut acc = LseAccumulator::new();
        for k in self.candidates(z) {
            if !self.active[k] {
                continue;
            }
            let p = BlockPoint::from_z(z, self.node_angle(k)).scaled(self.one_minus_tau);
            acc.push(self.block.eval_point(&p).h.scale_log(self.coefficient(k).ln()));
        }
        acc.value()
    }

    /// `(1 + gamma_k) h_n(tau z conj(zeta_k)) - Theta(1 - |z|)` for a point
    /// anchored at node `k` of this level, without cancellation.
    pub fn own_excess(&self, w: &crate::weights::RadialWeight, p: &DiskPoint, k: usize) -> f64 {
        let psi = p
            .anchor
            .map(|a| a.psi)
            .unwrap_or_else(|| crate::numerics::wrap_phase(p.phi - self.node_angle(k)));
        let bp = BlockPoint {
            s_ref: p.s_ref,
            ds: p.ds,
            psi,
        };
        self.block
            .weighted_excess_shifted(w, &bp, self.one_minus_tau, self.gammas[k])
    }
}

impl ConstructionState {
    /// `W`, `W'` and `W''` over the first `upto` levels, optionally skipping one
    /// node `(level index, k)`.
    pub fn w_partial(&self, z: Complex64, upto: usize, skip: Option<(usize, usize)>) -> Result<WValue> {
        if !(z.norm() <= 1.0) {
            return Err(usage(format!("W needs |z| <= 1, got {}", z.norm())));
        }
        let mut acc = WValue::ZERO;
        for (i, level) in self.levels.iter().take(upto).enumerate() {
            acc.add(&level.sum_at(z, skip.filter(|sk| sk.0 == i).map(|sk| sk.1))?);
        }
        Ok(acc)
    }

    /// `W`, `W'` and `W''` over all levels.
    pub fn w(&self, z: Complex64) -> Result<WValue> {
        self.w_partial(z, self.levels.len(), None)
    }

    /// `Im W(0)`, subtracted so that the conjugate vanishes at the origin.
    pub fn im_w0(&self) -> f64 {
        self.w(Complex64::new(0.0, 0.0)).map(|v| v.w.im).unwrap_or(0.0)
    }

    /// `F(z) = exp(W(z) - i Im W(0))` for `|z| < 1`.
    pub fn eval_f(&self, z: Complex64) -> Result<LogComplex> {
        if !(z.norm() < 1.0) {
            return Err(usage(format!("F needs |z| < 1, got {}", z.norm())));
        }
        let v = self.w(z)?;
        Ok(LogComplex::new(v.w.re, v.w.im - self.im_w0()))
    }

    /// Upper bounds `(log |W'|, log |W''|)` at `z`, finite where `W` is not.
    pub fn log_derivative_bounds(&self, z: Complex64) -> (f64, f64) {
        let (mut d1, mut d2) = (LseAccumulator::new(), LseAccumulator::new());
        for l in &self.levels {
            let (a, b) = l.log_derivative_bounds(z);
            d1.push(a);
            d2.push(b);
        }
        let cut = LogReal::from_f64(self.levels.len() as f64 * CUTOFF_ABS);
        let ln = |x: LogReal| x.add(cut).ln().unwrap_or(f64::NEG_INFINITY);
        (ln(d1.value()), ln(d2.value()))
    }

    /// `V(z)` in the log domain, far fields omitted.
    pub fn v_log(&self, z: Complex64) -> LogReal {
        let mut acc = LseAccumulator::new();
        for l in &self.levels {
            acc.push(l.real_sum_log(z));
        }
        acc.value()
    }

    /// `V(z)` built level by level from the real block evaluator.
    pub fn v_incremental(&self, z: Complex64) -> f64 {
        self.levels.iter().map(|l| l.real_sum_full(z)).sum()
    }
}
