//! Level-by-level construction of an invertible non-cyclic function
//! `F = exp(W)`, `W = sum_n sum_k (1 + gamma_{n,k}) H_n(tau_n z conj(zeta_{n,k}))`.
//!
//! Each level picks a continuity scale `eta` for what is already built, a
//! depth `x_n` among the touch points of the minorant, one `gamma` per node
//! so that the peak integral hits `exp[-V_n(zeta_k)]/(n^2 N_n)`, and a shift
//! `tau_n < 1` that keeps the new level harmonic across the circle.

mod eval;
pub mod measure;
pub mod pair;
pub mod peak;
pub mod smooth;
pub mod verify;

use std::f64::consts::{LN_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::blocks::BuildingBlock;
use crate::convexreg::MinorantResult;
use crate::error::{domain, usage, Result};
use crate::lattice::{build_level_at, LatticeLevel, SampleRule};
use crate::report::{Check, Report};
use crate::weights::RadialWeight;

pub use eval::{cutoff_radius, WValue, CUTOFF_ABS};
pub use peak::{GammaStatus, PeakData, PeakTable};

/// How level depths are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthRule {
    /// Every level must satisfy `e^{-x_n} < eta kappa e^{-2n}`; the build
    /// fails when no admissible `eta` or touch point exists.
    Strict,
    /// The depth bound is recorded but not enforced past the first level;
    /// later depths follow `x_{n+1} >= max(2 x_n, x_n + spacing)`.
    Schedule,
}

/// What to do with nodes whose peak target cannot be met.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShadowPolicy {
    /// Omit the block and flag the node.
    Drop,
    /// Keep the block with `gamma` clamped to the bracket end and flag it.
    Clamp,
}

/// Construction parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstructConfig {
    /// Lattice density; `None` means `exp(-1 - 2/eps0)`.
    pub kappa: Option<f64>,
    pub levels: usize,
    pub depth_rule: DepthRule,
    pub schedule_spacing: f64,
    /// Lower bound for the first depth (used to offset a second family).
    pub first_depth_floor: f64,
    pub shadow_policy: ShadowPolicy,
    /// `tau = 1 - 2^-j` is searched over `j` in this range.
    pub tau_exponent_min: u32,
    pub tau_exponent_max: u32,
    /// Largest change (nats) of the peak integral allowed from the shift.
    pub tau_tolerance: f64,
    /// Interpolation tolerance (nats) of the peak table.
    pub peak_tolerance: f64,
    /// Largest `j` tried for `eta = 2^-j`.
    pub eta_exponent_max: u32,
    pub mesh_refine: usize,
    /// Nodes with `|V_n(w_k) - V_n(zeta_k)|` above this are shadowed.
    pub shadow_threshold: f64,
}

impl Default for ConstructConfig {
    fn default() -> Self {
        ConstructConfig {
            kappa: None,
            levels: 2,
            depth_rule: DepthRule::Schedule,
            schedule_spacing: 3.0,
            first_depth_floor: 0.0,
            shadow_policy: ShadowPolicy::Drop,
            tau_exponent_min: 20,
            tau_exponent_max: 1020,
            tau_tolerance: 0.01,
            peak_tolerance: 1e-9,
            eta_exponent_max: 64,
            mesh_refine: 1,
            shadow_threshold: 1.0,
        }
    }
}

/// The continuity scale chosen for the function built so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaChoice {
    /// `eta = 2^-exponent`, when some ladder value works.
    pub exponent: Option<u32>,
    pub eta: Option<f64>,
    /// Largest `|V_n|` on the net.
    pub sup_abs_v: f64,
    /// `log eta` needed by the sup bound alone: `-sup |V_n|`.
    pub log_eta_bound: f64,
}

impl EtaChoice {
    pub fn log_eta(&self) -> f64 {
        match self.eta {
            Some(e) => e.ln(),
            None => self.log_eta_bound,
        }
    }
}

/// The depth chosen for a level and what constrained it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthChoice {
    pub x: f64,
    /// Lower bound from `e^{-x} < eta kappa e^{-2n}`.
    pub required: f64,
    pub floor: f64,
    pub binding: String,
    pub bound_met: bool,
}

/// One built level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelState {
    pub n: usize,
    pub block: BuildingBlock,
    pub lattice: LatticeLevel,
    pub gammas: Vec<f64>,
    pub active: Vec<bool>,
    pub status: Vec<GammaStatus>,
    /// `|V_n(w_k) - V_n(zeta_k)|` exceeds the shadow threshold.
    pub shadowed: Vec<bool>,
    pub log_targets: Vec<f64>,
    /// `log` of the tabulated peak integral at the chosen `gamma`.
    pub log_peak: Vec<f64>,
    /// `V_n(w_k) - V_n(zeta_k)` for the levels below.
    pub node_variation: Vec<f64>,
    pub table_error: f64,
    pub eta: EtaChoice,
    pub depth: DepthChoice,
    pub tau_exponent: u32,
    pub one_minus_tau: f64,
    /// Largest change of the peak integral caused by the shift (nats).
    pub tau_shift: f64,
    pub cutoff_radius: f64,
    /// `sup |U(tau z)| / delta_n` on `|z| <= 1 - delta_n e^{2/eps0}`.
    pub increment_c: f64,
    /// `2 pi / N_n - 2 delta_n e^{2/eps0}`: positive when the boundary
    /// patches around the nodes are disjoint.
    pub patch_gap: f64,
}

impl LevelState {
    pub fn tau(&self) -> f64 {
        1.0 - self.one_minus_tau
    }

    pub fn dropped(&self) -> usize {
        self.active.iter().filter(|a| !**a).count()
    }

    pub fn flagged(&self) -> usize {
        self.status
            .iter()
            .zip(&self.shadowed)
            .filter(|(s, sh)| **s != GammaStatus::Solved || **sh)
            .count()
    }
}

/// The construction after some number of levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructionState {
    pub config: ConstructConfig,
    pub weight: RadialWeight,
    pub minorant: MinorantResult,
    pub kappa: f64,
    pub levels: Vec<LevelState>,
}

/// Largest `eta = 2^-j` with `|v(z) - v(w)| < 1` for `|z - w| < eta` (tested
/// from every net point in eight directions) and `exp|v| < 1/eta` on the net.
pub fn select_eta_with<V>(v: V, net: &[Complex64], exponent_max: u32) -> Result<EtaChoice>
where
    V: Fn(Complex64) -> Result<f64> + Sync,
{
    use rayon::prelude::*;
    let values: Vec<f64> = net.par_iter().map(|&z| v(z)).collect::<Result<_>>()?;
    let sup = values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut choice = EtaChoice {
        exponent: None,
        eta: None,
        sup_abs_v: sup,
        log_eta_bound: -sup,
    };
    for j in 1..=exponent_max {
        if sup >= j as f64 * LN_2 {
            continue;
        }
        let eta = 0.5f64.powi(j as i32);
        let ok = net
            .par_iter()
            .zip(values.par_iter())
            .map(|(&z, &vz)| -> Result<bool> {
                for d in 0..8 {
                    let w = z + Complex64::from_polar(0.999 * eta, PI * d as f64 / 4.0);
                    if w.norm() > 1.0 {
                        continue;
                    }
                    if (v(w)? - vz).abs() >= 1.0 {
                        return Ok(false);
                    }
                }
                Ok(true)
            })
            .collect::<Result<Vec<bool>>>()?
            .into_iter()
            .all(|b| b);
        if ok {
            choice.exponent = Some(j);
            choice.eta = Some(eta);
            return Ok(choice);
        }
    }
    Err(domain(format!(
        "state too wild: no eta = 2^-j with j <= {exponent_max} works (sup |V| = {sup:e})"
    )))
}

/// Smallest touch point `x >= floor` with `e^{-x} < eta kappa e^{-2n}`.
pub fn select_next_x(log_eta: f64, kappa: f64, n: usize, floor: f64, touch_points: &[f64]) -> Result<DepthChoice> {
    let required = -log_eta - kappa.ln() + 2.0 * n as f64;
    let x = touch_points
        .iter()
        .copied()
        .find(|&x| x > required && x >= floor)
        .ok_or_else(|| {
            domain(format!(
                "no touch point beyond {:.4} (depth bound {required:.4}, floor {floor:.4}); increase X_max",
                required.max(floor)
            ))
        })?;
    Ok(DepthChoice {
        x,
        required,
        floor,
        binding: if required >= floor { "depth-bound" } else { "schedule-floor" }.into(),
        bound_met: true,
    })
}

/// Net on the closed disk for the continuity scale: dyadic rings, the
/// circle, and the boundary points of every built node with neighbours.
fn eta_net(state: &ConstructionState) -> Vec<Complex64> {
    let mut net = vec![Complex64::new(0.0, 0.0)];
    for i in 0..=14 {
        let r = if i == 14 { 1.0 } else { 1.0 - 0.5f64.powi(i) };
        for a in 0..256 {
            net.push(Complex64::from_polar(r, 2.0 * PI * (a as f64 + 0.5) / 256.0));
        }
    }
    for l in &state.levels {
        for k in 0..l.lattice.n_nodes.min(4096) {
            let th = l.node_angle(k);
            for off in [-1e-3, 0.0, 1e-3] {
                net.push(Complex64::from_polar(1.0, th + off));
            }
        }
    }
    net
}

impl ConstructionState {
    pub fn new(weight: RadialWeight, minorant: MinorantResult, config: ConstructConfig) -> Result<ConstructionState> {
        if (minorant.epsilon0 - weight.epsilon0).abs() > 1e-12 {
            return Err(usage("minorant and weight were built with different eps0"));
        }
        let kappa = config.kappa.unwrap_or((-1.0 - 2.0 / weight.epsilon0).exp());
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(usage(format!("kappa must lie in (0, 1), got {kappa}")));
        }
        if config.levels == 0 || config.mesh_refine == 0 {
            return Err(usage("construction needs at least one level and mesh_refine >= 1"));
        }
        if config.tau_exponent_min == 0 || config.tau_exponent_min > config.tau_exponent_max {
            return Err(usage("tau exponent range must be 1 <= min <= max"));
        }
        Ok(ConstructionState {
            config,
            weight,
            minorant,
            kappa,
            levels: Vec::new(),
        })
    }

    /// Builds all configured levels.
    pub fn build(weight: RadialWeight, minorant: MinorantResult, config: ConstructConfig) -> Result<ConstructionState> {
        let mut st = ConstructionState::new(weight, minorant, config)?;
        while st.levels.len() < st.config.levels {
            st.extend()?;
        }
        Ok(st)
    }

    /// `V_n` (all built levels) at `z` in the closed disk.
    pub fn v(&self, z: Complex64) -> Result<f64> {
        Ok(self.w(z)?.w.re)
    }

    /// Continuity scale of the current function.
    pub fn select_eta(&self) -> Result<EtaChoice> {
        if self.levels.is_empty() {
            return select_eta_with(|_| Ok(0.0), &[Complex64::new(0.0, 0.0)], self.config.eta_exponent_max);
        }
        select_eta_with(|z| self.v(z), &eta_net(self), self.config.eta_exponent_max)
    }

    /// Appends the next level.
    pub fn extend(&mut self) -> Result<()> {
        let n = self.levels.len() + 1;
        let cfg = self.config.clone();
        let strict = cfg.depth_rule == DepthRule::Strict || n == 1;
        let eta = match self.select_eta() {
            Ok(e) => e,
            Err(e) if strict => return Err(e),
            Err(_) => {
                let net = eta_net(self);
                let sup = net
                    .iter()
                    .filter_map(|&z| self.v(z).ok())
                    .fold(0.0f64, |m, v| m.max(v.abs()));
                EtaChoice {
                    exponent: None,
                    eta: None,
                    sup_abs_v: sup,
                    log_eta_bound: -sup,
                }
            }
        };
        let floor = match self.levels.last() {
            None => cfg.first_depth_floor,
            Some(l) => (2.0 * l.block.x_n).max(l.block.x_n + cfg.schedule_spacing),
        };
        let depth = if strict {
            select_next_x(eta.log_eta(), self.kappa, n, floor, &self.minorant.touch_points)?
        } else {
            let required = -eta.log_eta() - self.kappa.ln() + 2.0 * n as f64;
            let x = self
                .minorant
                .touch_points
                .iter()
                .copied()
                .find(|&x| x >= floor)
                .ok_or_else(|| domain(format!("no touch point beyond the floor {floor}; increase X_max")))?;
            DepthChoice {
                x,
                required,
                floor,
                binding: "schedule-floor".into(),
                bound_met: x > required,
            }
        };
        let block = BuildingBlock::from_minorant(&self.weight, &self.minorant, depth.x)?;
        let lattice = build_level_at(n, self.kappa, depth.x, &SampleRule::Centers)?;
        let count = lattice.n_nodes;
        let log_norm = -((n * n) as f64 * count as f64).ln();

        // Targets and the variation of the previous levels across each disk.
        let prev: Vec<(f64, f64)> = {
            use rayon::prelude::*;
            (0..count)
                .into_par_iter()
                .map(|k| -> Result<(f64, f64)> {
                    let th = 2.0 * PI * k as f64 / count as f64;
                    let vz = self.v(Complex64::from_polar(1.0, th))?;
                    let vw = self.v(Complex64::from_polar(block.r_n, th))?;
                    Ok((vz, vw - vz))
                })
                .collect::<Result<_>>()?
        };
        let log_targets: Vec<f64> = prev.iter().map(|p| log_norm - p.0).collect();
        let node_variation: Vec<f64> = prev.iter().map(|p| p.1).collect();

        let mesh = peak::target_mesh(&block, &self.weight, cfg.mesh_refine);
        let data = PeakData::new(&block, &self.weight, &mesh, None);
        let shadowed: Vec<bool> = node_variation.iter().map(|v| !(v.abs() <= cfg.shadow_threshold)).collect();
        // Shadowed targets can sit far above the rest; they do not set the range.
        let cap = log_targets
            .iter()
            .zip(&shadowed)
            .filter(|(_, sh)| !**sh)
            .map(|(t, _)| *t)
            .fold(f64::NEG_INFINITY, f64::max);
        let cap = if cap.is_finite() { cap } else { log_targets.iter().copied().fold(f64::NEG_INFINITY, f64::max) } + 1.0;
        let table = PeakTable::build(&data, block.gamma_n, cap, cfg.peak_tolerance)?;

        let mut gammas = Vec::with_capacity(count);
        let mut active = Vec::with_capacity(count);
        let mut status = Vec::with_capacity(count);
        let mut log_peak = Vec::with_capacity(count);
        for k in 0..count {
            let sol = table.solve(log_targets[k]);
            let shadow = shadowed[k];
            let bad = sol.status != GammaStatus::Solved || shadow;
            gammas.push(sol.g.exp_m1().min(block.gamma_n));
            active.push(!(bad && cfg.shadow_policy == ShadowPolicy::Drop));
            status.push(sol.status);
            log_peak.push(sol.log_value);
        }

        let (tau_exponent, tau_shift) = choose_tau(&block, &self.weight, &mesh, &table, &gammas, &active, &cfg)?;
        let one_minus_tau = 0.5f64.powi(tau_exponent as i32);
        let eps0 = self.weight.epsilon0;
        let mut level = LevelState {
            n,
            cutoff_radius: cutoff_radius(block.log_scale(), block.lam_prime, count),
            patch_gap: 2.0 * PI / count as f64 - 2.0 * block.delta_n * (2.0 / eps0).exp(),
            block,
            lattice,
            gammas,
            active,
            status,
            shadowed,
            log_targets,
            log_peak,
            node_variation,
            table_error: 2.0 * table.midpoint_error,
            eta,
            depth,
            tau_exponent,
            one_minus_tau,
            tau_shift,
            increment_c: f64::NAN,
        };
        level.increment_c = increment_constant(&level, eps0)?;
        self.levels.push(level);
        Ok(())
    }

    /// Summary of the construction parameters per level.
    pub fn summary(&self) -> Report {
        let mut rep = Report::new("construction").param("kappa", self.kappa).param("levels", self.levels.len());
        for l in &self.levels {
            let key = format!("level_{}", l.n);
            rep.set(
                &key,
                serde_json::json!({
                    "x_n": l.block.x_n,
                    "lam": l.block.lam,
                    "lam_prime": l.block.lam_prime,
                    "n_nodes": l.lattice.n_nodes,
                    "gamma_n": l.block.gamma_n,
                    "eta": l.eta,
                    "depth": l.depth,
                    "tau_exponent": l.tau_exponent,
                    "tau_shift": l.tau_shift,
                    "increment_c": l.increment_c,
                    "patch_gap": l.patch_gap,
                    "dropped": l.dropped(),
                    "flagged": l.flagged(),
                    "table_error": l.table_error,
                    "cutoff_radius": l.cutoff_radius,
                }),
            );
            rep.push(Check::new(
                format!("depth-bound-{}", l.n),
                l.depth.bound_met,
                l.depth.x - l.depth.required,
                format!("x_n = {}", l.depth.x),
            ));
            rep.push(Check::from_margin(
                format!("patches-disjoint-{}", l.n),
                l.patch_gap,
                format!("N_n = {}", l.lattice.n_nodes),
            ));
            rep.push(Check::new(
                format!("peak-targets-{}", l.n),
                l.flagged() == 0,
                -(l.flagged() as f64),
                format!("{} dropped, {} flagged of {}", l.dropped(), l.flagged(), l.lattice.n_nodes),
            ));
        }
        self.mark_regime(&mut rep);
        rep
    }

    /// Flags `rep` as below-regime when every failing check ends in `-n` for
    /// a level `n` that is below its regime.
    pub fn mark_regime(&self, rep: &mut Report) {
        let shallow = |name: &str| -> bool {
            name.rsplit('-')
                .next()
                .and_then(|t| t.parse::<usize>().ok())
                .and_then(|n| self.levels.get(n.wrapping_sub(1)))
                .is_some_and(|l| l.block.below_regime())
        };
        let failing = rep.failing();
        let flag = !failing.is_empty() && failing.iter().all(|n| shallow(n));
        rep.set_below_regime(flag);
    }
}

/// Smallest `j` in the configured range for which the shift `tau = 1 - 2^-j`
/// moves the peak integral by at most the tolerance at the smallest, median
/// and largest chosen `gamma`. The change decreases with `j`, so the range is
/// bisected.
fn choose_tau(
    b: &BuildingBlock,
    w: &RadialWeight,
    mesh: &crate::numerics::LocalMesh,
    table: &PeakTable,
    gammas: &[f64],
    active: &[bool],
    cfg: &ConstructConfig,
) -> Result<(u32, f64)> {
    let mut gs: Vec<f64> = gammas
        .iter()
        .zip(active)
        .filter(|(_, a)| **a)
        .map(|(g, _)| g.ln_1p())
        .collect();
    if gs.is_empty() {
        return Ok((cfg.tau_exponent_max, 0.0));
    }
    gs.sort_by(f64::total_cmp);
    let probes = [gs[0], gs[gs.len() / 2], gs[gs.len() - 1]];
    let change = |j: u32| -> f64 {
        let data = PeakData::new(b, w, mesh, Some(0.5f64.powi(j as i32)));
        probes
            .iter()
            .map(|&g| (data.log_integral(g).0 - table.interp(g)).abs())
            .fold(0.0, f64::max)
    };
    let (mut lo, mut hi) = (cfg.tau_exponent_min, cfg.tau_exponent_max);
    let top = change(hi);
    if top > cfg.tau_tolerance {
        return Err(domain(format!(
            "no tau = 1 - 2^-j with j <= {hi} keeps the peak integral within {} nats (change {top:e})",
            cfg.tau_tolerance
        )));
    }
    let bottom = change(lo);
    if bottom <= cfg.tau_tolerance {
        return Ok((lo, bottom));
    }
    let mut best = top;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let c = change(mid);
        if c <= cfg.tau_tolerance {
            hi = mid;
            best = c;
        } else {
            lo = mid;
        }
    }
    Ok((hi, best))
}

/// `sup |U(tau z)| / delta_n` over `|z| <= 1 - delta_n e^{2/eps0}`, scanned
/// along every node direction and midway between nodes on dyadic rings; the
/// far-field cutoff bound is added.
fn increment_constant(level: &LevelState, eps0: f64) -> Result<f64> {
    use rayon::prelude::*;
    let d = level.block.delta_n;
    let s_in = d * (2.0 / eps0).exp();
    if s_in >= 1.0 {
        return Ok(0.0);
    }
    let count = level.lattice.n_nodes;
    let mut rings = Vec::new();
    let mut s = s_in;
    while s < 1.0 {
        rings.push(s);
        s *= 2.0;
    }
    rings.push(1.0);
    let sup = rings
        .par_iter()
        .map(|&s| -> Result<f64> {
            let mut m: f64 = 0.0;
            for k in 0..count {
                for half in [0.0, 0.5] {
                    let th = 2.0 * PI * (k as f64 + half) / count as f64;
                    let z = Complex64::from_polar(1.0 - s, th);
                    m = m.max(level.sum_at(z, None)?.w.re.abs());
                }
                if s == 1.0 {
                    break;
                }
            }
            Ok(m)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok((sup + CUTOFF_ABS) / d)
}

#[cfg(test)]
mod tests;
