//! Composite quadrature for integrals against `|F|^a e^{-Theta}` on the disk:
//! polar rings down to a floor depth, plus one local mass per built node.
//!
//! Below the floor the weight `e^{-Theta}` is negligible except on the small
//! disks where a block balances `Theta`; those are integrated in each block's
//! own frame. The omitted remainder is measured by a scan, not assumed.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::ConstructionState;
use crate::blocks::peak_widths;
use crate::cyclolab::{Sampled, SampledRing};
use crate::error::{usage, Result};
use crate::numerics::{gauss_legendre, local_points, Anchor, LocalFrame, LocalMesh};

/// Rings from the centre to `1 - |z| = s_floor`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BulkMesh {
    /// `None`: where `Theta` first exceeds `e^{floor_log_theta}`, kept above
    /// twice the first level's depth.
    pub s_floor: Option<f64>,
    pub floor_log_theta: f64,
    pub radial_subdiv: usize,
    pub gl_nodes: usize,
    pub angular_min: usize,
    pub angular_max: usize,
    /// Angular count `~ angular_scale / s`, rounded up to a power of two.
    pub angular_scale: f64,
}

impl Default for BulkMesh {
    fn default() -> Self {
        BulkMesh {
            s_floor: None,
            floor_log_theta: 7.6,
            radial_subdiv: 2,
            gl_nodes: 4,
            angular_min: 512,
            angular_max: 8192,
            angular_scale: 8.0,
        }
    }
}

/// One ring of the bulk mesh: depth, `log(2 r w_s / m)` and angular count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ring {
    pub s: f64,
    pub log_w: f64,
    pub m: usize,
}

impl Ring {
    pub fn point(&self, a: usize) -> Complex64 {
        Complex64::from_polar(1.0 - self.s, 2.0 * PI * (a as f64 + 0.5) / self.m as f64)
    }
}

impl BulkMesh {
    pub fn refined(&self) -> BulkMesh {
        BulkMesh {
            radial_subdiv: 2 * self.radial_subdiv,
            angular_min: 2 * self.angular_min,
            angular_max: 2 * self.angular_max,
            angular_scale: 2.0 * self.angular_scale,
            ..self.clone()
        }
    }

    /// The floor depth used for a state.
    pub fn floor(&self, st: &ConstructionState) -> f64 {
        if let Some(s) = self.s_floor {
            return s;
        }
        let w = &st.weight;
        let (mut lo, mut hi) = (0.0f64, 60.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if w.lambda_unchecked(mid) < self.floor_log_theta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = (-hi).exp();
        match st.levels.first() {
            Some(l) => s.max(2.0 * l.block.delta_n),
            None => s,
        }
    }

    pub fn rings(&self, s_floor: f64) -> Result<Vec<Ring>> {
        if self.radial_subdiv == 0 || self.gl_nodes == 0 || self.angular_min == 0 || !(s_floor > 0.0 && s_floor < 1.0)
        {
            return Err(usage("bulk mesh needs positive counts and 0 < s_floor < 1"));
        }
        let (gx, gw) = gauss_legendre(self.gl_nodes);
        let mut out = Vec::new();
        let mut upper = 1.0f64;
        while upper > s_floor {
            let lower = (upper / 2.0).max(s_floor);
            let h = (upper - lower) / self.radial_subdiv as f64;
            for i in 0..self.radial_subdiv {
                let b = upper - i as f64 * h;
                let mid = b - 0.5 * h;
                for (x, w) in gx.iter().zip(&gw) {
                    let s = mid + 0.5 * h * x;
                    let m = ((self.angular_scale / s).ceil() as usize)
                        .next_power_of_two()
                        .clamp(self.angular_min, self.angular_max.max(self.angular_min));
                    out.push(Ring {
                        s,
                        log_w: (2.0 * (1.0 - s) * 0.5 * h * w / m as f64).ln(),
                        m,
                    });
                }
            }
            upper = lower;
        }
        Ok(out)
    }
}

/// Radius of the local disk integrated around each node of a level: forty
/// peak widths, at least `delta^2` and at most `delta/4`.
pub fn local_radius(st: &ConstructionState, level: usize) -> f64 {
    let l = &st.levels[level];
    let (sr, sa) = peak_widths(&l.block, &st.weight);
    let d = l.block.delta_n;
    (40.0 * sr.max(sa)).max(d * d).min(0.25 * d)
}

/// Frame centred at `w_k`, anchored at node `k` of a level.
pub fn node_frame(st: &ConstructionState, level: usize, k: usize) -> LocalFrame {
    let l = &st.levels[level];
    LocalFrame {
        s_c: l.block.delta_n,
        phi_c: l.node_angle(k),
        anchor: Some(Anchor {
            tag: level as u32,
            k,
            count: l.lattice.n_nodes,
            psi: 0.0,
        }),
    }
}

/// Nodes of a local disk with their `log dm` weights and the exponent
/// `V - Theta` (own block assembled without cancellation).
pub fn local_exponents(
    st: &ConstructionState,
    level: usize,
    k: usize,
    mesh: &LocalMesh,
) -> Result<Vec<(Complex64, f64, f64)>> {
    use rayon::prelude::*;
    let l = &st.levels[level];
    let frame = node_frame(st, level, k);
    local_points(&frame, mesh)
        .par_iter()
        .map(|(p, lw)| {
            let rest = st.w_partial(p.z, st.levels.len(), Some((level, k)))?.w.re;
            Ok((p.z, *lw, l.own_excess(&st.weight, p, k) + rest))
        })
        .collect()
}

impl ConstructionState {
    /// `f = F^{1/2}` sampled on the bulk rings, with every active node's local
    /// disk reduced to a moment atom of `|f|^2 e^{-Theta} = |F| e^{-Theta}`
    /// about `w_k`. `moments` is the largest order kept (0 gives point masses).
    pub fn sample_half(&self, mesh: &BulkMesh, moments: usize, refine: usize) -> Result<Sampled> {
        use rayon::prelude::*;
        let s_floor = mesh.floor(self);
        let rings = mesh.rings(s_floor)?;
        let im0 = self.im_w0();
        let rings: Vec<SampledRing> = rings
            .par_iter()
            .map(|ring| -> Result<SampledRing> {
                let values = (0..ring.m)
                    .map(|a| {
                        let w = self.w(ring.point(a))?.w;
                        Ok(Complex64::new(w.re, w.im - im0) / 2.0)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(SampledRing {
                    r: 1.0 - ring.s,
                    log_w: ring.log_w + self.weight.log_omega(ring.s),
                    values,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut atoms = Vec::new();
        for (i, l) in self.levels.iter().enumerate() {
            let rho = local_radius(self, i);
            let lmesh = crate::blocks::peak_mesh(&l.block, &self.weight, rho, refine);
            let masses = super::verify::local_masses(self, i, &lmesh, moments)?;
            for (k, m) in masses.into_iter().enumerate() {
                if let Some(mut atom) = m {
                    atom.center = l.lattice.nodes[k];
                    atoms.push(atom);
                }
            }
        }
        Ok(Sampled { rings, atoms, s_floor })
    }
}
