//! Two constructions with interleaved depths `x_{1,n} < x_{2,n} < x_{1,n+1}`:
//! each concentrates on its own small disks and is negligible on the disks
//! of the other.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::measure::BulkMesh;
use super::verify::verify_concentration;
use super::{ConstructConfig, ConstructionState};
use crate::convexreg::{theta_small, MinorantResult};
use crate::cyclolab::GramSystem;
use crate::error::{usage, Result};
use crate::report::{Check, Report};
use crate::weights::RadialWeight;

/// Depth offset and level counts of the second family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairConfig {
    pub levels_first: usize,
    pub levels_second: usize,
    /// The second family starts at least this much deeper in `x`.
    pub offset: f64,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            levels_first: 2,
            levels_second: 1,
            offset: 4.0,
        }
    }
}

/// `Ok` iff `a[n] < b[n] < a[n + 1]` wherever both sides exist.
pub fn check_interleaved(a: &[f64], b: &[f64]) -> Result<()> {
    for (n, &y) in b.iter().enumerate() {
        let lo = a.get(n).copied();
        let hi = a.get(n + 1).copied();
        if lo.is_none_or(|x| !(x < y)) || hi.is_some_and(|x| !(y < x)) {
            return Err(usage(format!(
                "depths are not interleaved at n = {}: first {:?}, second {:?}",
                n + 1,
                a,
                b
            )));
        }
    }
    Ok(())
}

/// Builds the two families from one base configuration.
pub fn build_interleaved_pair(
    weight: RadialWeight,
    minorant: MinorantResult,
    base: &ConstructConfig,
    pair: &PairConfig,
) -> Result<(ConstructionState, ConstructionState)> {
    if pair.levels_second > pair.levels_first || !(pair.offset > 0.0) {
        return Err(usage("the second family needs a positive offset and at most as many levels as the first"));
    }
    let first = ConstructionState::build(
        weight.clone(),
        minorant.clone(),
        ConstructConfig {
            levels: pair.levels_first,
            ..base.clone()
        },
    )?;
    let x1 = first.levels[0].block.x_n;
    let second = ConstructionState::build(
        weight,
        minorant,
        ConstructConfig {
            levels: pair.levels_second,
            first_depth_floor: base.first_depth_floor.max(x1 + pair.offset),
            ..base.clone()
        },
    )?;
    check_interleaved(&depths(&first), &depths(&second))?;
    Ok((first, second))
}

fn depths(st: &ConstructionState) -> Vec<f64> {
    st.levels.iter().map(|l| l.block.x_n).collect()
}

/// Worst margin of `log|F_j| - theta(1 - |z|) <= -1/(1 - |z|)` over the
/// centres of every disk of `other`.
pub fn cross_smallness(f: &ConstructionState, other: &ConstructionState) -> Result<(f64, String)> {
    let mut worst = (f64::INFINITY, String::new());
    for l in &other.levels {
        let margins: Vec<f64> = l
            .lattice
            .nodes
            .par_iter()
            .map(|&w| -> Result<f64> {
                let s = 1.0 - w.norm();
                let th = theta_small(&f.minorant, s)?.to_f64();
                Ok(-1.0 / s - (f.v(w)? - th))
            })
            .collect::<Result<_>>()?;
        for (k, m) in margins.iter().enumerate() {
            if !(*m >= worst.0) {
                worst = (*m, format!("level {} node {k}", l.n));
            }
        }
    }
    Ok(worst)
}

/// Concentration of each family on its own disks (all nodes, `c` as given)
/// and cross-smallness at the other family's disk centres. `theta` is the
/// minorant profile.
pub fn verify_pair(a: &ConstructionState, b: &ConstructionState, c: f64) -> Result<Report> {
    let mut rep = Report::new("interleaved-pair")
        .param("c", c)
        .param("depths_first", depths(a))
        .param("depths_second", depths(b))
        .param("majorant", "theta");
    rep.push(Check::new(
        "interleaved",
        check_interleaved(&depths(a), &depths(b)).is_ok(),
        0.0,
        "x_{1,n} < x_{2,n} < x_{1,n+1}",
    ));
    // Failures only count as below-regime when every one of them comes from
    // a below-regime level.
    let mut regime_fail = false;
    let mut shallow_fail = false;
    for (j, st) in [(1, a), (2, b)] {
        for i in 0..st.levels.len() {
            let r = verify_concentration(st, i, c)?;
            let n = st.levels[i].n;
            for name in ["ratios", "ratios-active", "peak-residual"] {
                if let Some(ch) = r.check(name) {
                    if !ch.pass {
                        if r.below_regime {
                            shallow_fail = true;
                        } else {
                            regime_fail = true;
                        }
                    }
                    rep.push(Check::new(
                        format!("concentration-{j}-{n}-{name}"),
                        ch.pass,
                        ch.margin,
                        ch.location.clone(),
                    ));
                }
            }
            rep.set(&format!("level_mass_times_n2_{j}_{n}"), r.block.get("level_mass_times_n2"));
        }
    }
    let (m12, loc12) = cross_smallness(a, b)?;
    let (m21, loc21) = cross_smallness(b, a)?;
    rep.push(Check::from_margin("cross-small-1", m12, format!("F_1 on the second family's disks, {loc12}")));
    rep.push(Check::from_margin("cross-small-2", m21, format!("F_2 on the first family's disks, {loc21}")));
    regime_fail |= m12 < 0.0 || m21 < 0.0;
    rep.set_below_regime(shallow_fail && !regime_fail);
    Ok(rep)
}

/// `dist(F_2^{1/2}, span{z^j F_1^{1/2} : j <= N}) / ||F_2^{1/2}||` for
/// `N = 0..=degree`, both sampled on the same bulk rings. The part of the
/// target's norm carried by its own disks is reported alongside: the first
/// family is small there, so that share is a floor for the curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDistances {
    pub relative: Vec<f64>,
    pub log_norm_target: f64,
    /// Fraction of `||F_2^{1/2}||^2` on the second family's disks.
    pub target_atom_fraction: f64,
    pub residual: f64,
    pub condition: f64,
}

pub fn pair_distances(a: &ConstructionState, b: &ConstructionState, mesh: &BulkMesh, degree: usize) -> Result<PairDistances> {
    let floor = mesh.floor(a).max(mesh.floor(b));
    let mesh = BulkMesh {
        s_floor: Some(floor),
        ..mesh.clone()
    };
    let f = a.sample_half(&mesh, 2, a.config.mesh_refine)?;
    let g = b.sample_half(&mesh, 2, b.config.mesh_refine)?;
    let curve = GramSystem::new(&f, degree)?.distances(&f, &g)?;
    let ln2 = g.log_norm2();
    let atoms = g
        .atoms
        .iter()
        .map(|x| (x.log_mass - ln2).exp())
        .sum::<f64>();
    Ok(PairDistances {
        relative: curve.relative,
        log_norm_target: curve.log_norm,
        target_atom_fraction: atoms,
        residual: curve.residual,
        condition: curve.condition,
    })
}

/// Report for [`pair_distances`]: the curve stays above `floor` (relative)
/// and does not collapse, `d_N / d_0 >= 0.1` at the largest degree.
pub fn verify_pair_distances(d: &PairDistances, floor: f64) -> Report {
    let min = d.relative.iter().copied().fold(f64::INFINITY, f64::min);
    let last = *d.relative.last().unwrap_or(&0.0);
    let first = *d.relative.first().unwrap_or(&0.0);
    let mut rep = Report::new("pair-distance")
        .param("degree", d.relative.len().saturating_sub(1))
        .param("min_relative", min)
        .param("target_atom_fraction", d.target_atom_fraction)
        .param("residual", d.residual)
        .param("condition", d.condition)
        .param("floor", floor);
    rep.push(Check::from_margin("bounded-below", min - floor, "min over N of the relative distance"));
    rep.push(Check::from_margin("no-collapse", last - 0.1 * first, "d_N - d_0 / 10 at the largest N"));
    rep
}
