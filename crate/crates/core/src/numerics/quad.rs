//! Quadrature on the unit disk with the normalised area measure `dx dy / pi`.
//!
//! The global mesh is a polar product: radial cells are dyadic shells
//! `1 - r in [2^-(j+1), 2^-j]`, each split into equal sub-cells carrying
//! Gauss-Legendre nodes; the angle uses the midpoint rule with a per-shell
//! point count. Points carry `s = 1 - |z|` computed without cancellation,
//! which matters once `1 - |z|` drops below `1e-8`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logreal::{LogReal, LseAccumulator};
use crate::error::{usage, Error, Result};

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss_legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Identifies a point's angle relative to a lattice node `2 pi k / count`
/// of a tagged family of nodes, so block evaluators can recover the offset
/// `psi` without subtracting two nearly equal angles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub tag: u32,
    pub k: usize,
    pub count: usize,
    pub psi: f64,
}

/// A quadrature point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiskPoint {
    pub z: Complex64,
    /// `1 - |z|`, accurate to relative rounding.
    pub s: f64,
    /// `s = s_ref + ds`, kept split so offsets far below the rounding of `s`
    /// survive (points of a small disk store the centre's `s` as `s_ref`).
    pub s_ref: f64,
    pub ds: f64,
    /// Argument of `z`.
    pub phi: f64,
    pub anchor: Option<Anchor>,
}

impl DiskPoint {
    pub fn polar(s: f64, phi: f64) -> DiskPoint {
        DiskPoint {
            z: Complex64::from_polar(1.0 - s, phi),
            s,
            s_ref: s,
            ds: 0.0,
            phi,
            anchor: None,
        }
    }

    pub fn from_z(z: Complex64) -> DiskPoint {
        let r = z.norm();
        DiskPoint {
            z,
            s: 1.0 - r,
            s_ref: 1.0 - r,
            ds: 0.0,
            phi: z.im.atan2(z.re),
            anchor: None,
        }
    }
}

/// Polar product mesh on the whole disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiskMesh {
    /// Index `J` of the finest dyadic shell; the last cell is `s in [0, 2^-J]`.
    pub shells: u32,
    pub radial_subdiv: usize,
    pub gl_nodes: usize,
    /// Midpoint angular counts, one per shell `0..=J`.
    pub angular: Vec<usize>,
}

/// One radial node: shell index, `s`, and the weight of `ds`.
#[derive(Clone, Copy, Debug)]
pub struct RadialNode {
    pub shell: u32,
    pub s: f64,
    pub weight: f64,
}

impl DiskMesh {
    pub fn uniform(shells: u32, radial_subdiv: usize, angular: usize) -> DiskMesh {
        DiskMesh {
            shells,
            radial_subdiv,
            gl_nodes: 4,
            angular: vec![angular; shells as usize + 1],
        }
    }

    /// Same mesh with doubled radial and angular resolution.
    pub fn refined(&self) -> DiskMesh {
        DiskMesh {
            shells: self.shells,
            radial_subdiv: self.radial_subdiv * 2,
            gl_nodes: self.gl_nodes,
            angular: self.angular.iter().map(|m| m * 2).collect(),
        }
    }

    /// Raises the angular count to at least `count` on every shell that meets
    /// the band `s <= s_max`.
    pub fn ensure_angular(&mut self, s_max: f64, count: usize) {
        for j in 0..=self.shells {
            let upper = 0.5f64.powi(j as i32);
            let lower = if j == self.shells { 0.0 } else { upper / 2.0 };
            if lower < s_max {
                let m = &mut self.angular[j as usize];
                *m = (*m).max(count);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.radial_subdiv == 0 || self.gl_nodes == 0 {
            return Err(usage("mesh needs positive radial subdivision and node count"));
        }
        if self.angular.len() != self.shells as usize + 1 || self.angular.iter().any(|&m| m == 0) {
            return Err(usage(format!(
                "mesh angular counts must be positive, one per shell (expected {})",
                self.shells + 1
            )));
        }
        Ok(())
    }

    /// Radial nodes in `s`, ordered from the centre outward to the boundary.
    pub fn radial_nodes(&self) -> Vec<RadialNode> {
        let (gx, gw) = gauss_legendre(self.gl_nodes);
        let mut out = Vec::new();
        for j in 0..=self.shells {
            let upper = 0.5f64.powi(j as i32);
            let lower = if j == self.shells { 0.0 } else { upper / 2.0 };
            let h = (upper - lower) / self.radial_subdiv as f64;
            for i in 0..self.radial_subdiv {
                // Cells run from large s to small s so that the list is ordered
                // from the centre outward.
                let b = upper - i as f64 * h;
                let a = b - h;
                let mid = 0.5 * (a + b);
                for (x, w) in gx.iter().zip(&gw) {
                    out.push(RadialNode {
                        shell: j,
                        s: mid + 0.5 * h * x,
                        weight: 0.5 * h * w,
                    });
                }
            }
        }
        out
    }

    pub fn point_count(&self) -> usize {
        let per_shell = self.radial_subdiv * self.gl_nodes;
        self.angular.iter().map(|m| m * per_shell).sum()
    }
}

fn check_finite(value: LogReal, z: Complex64) -> Result<()> {
    if value.log_magnitude.is_nan() || value.log_magnitude == f64::INFINITY {
        return Err(Error::NonFinite {
            value: value.log_magnitude,
            re: z.re,
            im: z.im,
        });
    }
    Ok(())
}

/// `int_D f dm` over the mesh. Rings are evaluated in parallel and merged in
/// a fixed order, so results are reproducible bit for bit.
pub fn disk_integral<F>(integrand: F, mesh: &DiskMesh) -> Result<LogReal>
where
    F: Fn(&DiskPoint) -> LogReal + Sync,
{
    let accs = disk_integral_rings(&integrand, mesh)?;
    let mut total = LseAccumulator::new();
    for (_, acc) in &accs {
        total.merge(acc);
    }
    Ok(total.value())
}

/// Per-ring accumulators, keyed by the ring's `s`, centre outward.
pub fn disk_integral_rings<F>(integrand: &F, mesh: &DiskMesh) -> Result<Vec<(f64, LseAccumulator)>>
where
    F: Fn(&DiskPoint) -> LogReal + Sync,
{
    mesh.validate()?;
    let nodes = mesh.radial_nodes();
    nodes
        .par_iter()
        .map(|node| {
            let m = mesh.angular[node.shell as usize];
            let r = 1.0 - node.s;
            let log_w = (2.0 * r * node.weight / m as f64).ln();
            let mut acc = LseAccumulator::new();
            for a in 0..m {
                let phi = 2.0 * PI * (a as f64 + 0.5) / m as f64;
                let p = DiskPoint::polar(node.s, phi);
                let v = integrand(&p);
                check_finite(v, p.z)?;
                acc.push(v.scale_log(log_w));
            }
            Ok((node.s, acc))
        })
        .collect()
}

/// `int_0^1 2 r f(r) dr`, the disk integral of a radial integrand; `f`
/// receives `s = 1 - r`.
pub fn radial_integral<F>(f: F, mesh: &DiskMesh) -> Result<LogReal>
where
    F: Fn(f64) -> LogReal,
{
    mesh.validate()?;
    let mut acc = LseAccumulator::new();
    for node in mesh.radial_nodes() {
        let v = f(node.s);
        check_finite(v, Complex64::new(1.0 - node.s, 0.0))?;
        acc.push(v.scale_log((2.0 * (1.0 - node.s) * node.weight).ln()));
    }
    Ok(acc.value())
}

/// Centre of a small disk, given by `s_c = 1 - |c|` and `phi_c = arg c`,
/// optionally tied to a lattice anchor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalFrame {
    pub s_c: f64,
    pub phi_c: f64,
    /// Anchor of the centre; `psi` is the centre's own offset from the node.
    pub anchor: Option<Anchor>,
}

impl LocalFrame {
    /// The point `c + (a + i b) e^{i phi_c}`, or `None` outside the unit disk.
    pub fn point(&self, a: f64, b: f64) -> Option<DiskPoint> {
        let x = 1.0 - self.s_c + a;
        let one_minus_abs2 = self.s_c * (2.0 - self.s_c) - 2.0 * (1.0 - self.s_c) * a - a * a - b * b;
        if one_minus_abs2 <= 0.0 {
            return None;
        }
        let abs = (x * x + b * b).sqrt();
        let s = one_minus_abs2 / (1.0 + abs);
        let dpsi = b.atan2(x);
        let phi = self.phi_c + dpsi;
        Some(DiskPoint {
            z: Complex64::from_polar(abs, phi),
            s,
            s_ref: self.s_c,
            ds: -a - b * b / (abs + x),
            phi,
            anchor: self.anchor.map(|an| Anchor {
                psi: an.psi + dpsi,
                ..an
            }),
        })
    }
}

/// Polar mesh centred on a small disk: an inner disk of radius `rho_min`,
/// then geometric shells doubling out to `rho_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalMesh {
    pub rho_min: f64,
    pub rho_max: f64,
    pub radial_subdiv: usize,
    pub gl_nodes: usize,
    pub angular: usize,
    /// Beyond this radius the angular count drops to `coarse_angular`
    /// (used when the integrand is concentrated near the centre).
    pub coarse_from: f64,
    pub coarse_angular: usize,
}

impl LocalMesh {
    /// A mesh with one angular count throughout.
    pub fn uniform(rho_min: f64, rho_max: f64, radial_subdiv: usize, angular: usize) -> LocalMesh {
        LocalMesh {
            rho_min,
            rho_max,
            radial_subdiv,
            gl_nodes: 4,
            angular,
            coarse_from: f64::INFINITY,
            coarse_angular: angular,
        }
    }

    pub fn refined(&self) -> LocalMesh {
        LocalMesh {
            radial_subdiv: self.radial_subdiv * 2,
            angular: self.angular * 2,
            coarse_angular: self.coarse_angular * 2,
            ..self.clone()
        }
    }

    pub fn angular_at(&self, rho: f64) -> usize {
        if rho > self.coarse_from {
            self.coarse_angular
        } else {
            self.angular
        }
    }

    /// Radial nodes `(rho, weight)` from the centre outward.
    pub fn radial_nodes(&self) -> Vec<(f64, f64)> {
        let (gx, gw) = gauss_legendre(self.gl_nodes);
        let mut edges = vec![0.0];
        let mut r = self.rho_min.min(self.rho_max);
        edges.push(r);
        while r < self.rho_max {
            r = (2.0 * r).min(self.rho_max);
            edges.push(r);
        }
        let mut out = Vec::new();
        for win in edges.windows(2) {
            let h = (win[1] - win[0]) / self.radial_subdiv as f64;
            if h <= 0.0 {
                continue;
            }
            for i in 0..self.radial_subdiv {
                let mid = win[0] + (i as f64 + 0.5) * h;
                for (x, w) in gx.iter().zip(&gw) {
                    out.push((mid + 0.5 * h * x, 0.5 * h * w));
                }
            }
        }
        out
    }
}

/// `int_{|z - c| < rho_max} f dm` over the part inside the unit disk.
pub fn local_disk_integral<F>(frame: &LocalFrame, integrand: F, mesh: &LocalMesh) -> Result<LogReal>
where
    F: Fn(&DiskPoint) -> LogReal + Sync,
{
    if !(mesh.rho_min > 0.0 && mesh.rho_max > 0.0)
        || mesh.angular == 0
        || mesh.coarse_angular == 0
        || mesh.radial_subdiv == 0
    {
        return Err(usage("local mesh needs positive radii and counts"));
    }
    let nodes = mesh.radial_nodes();
    let accs: Result<Vec<LseAccumulator>> = nodes
        .par_iter()
        .map(|&(rho, w)| {
            let m = mesh.angular_at(rho);
            let log_w = (2.0 * rho * w / m as f64).ln();
            let mut acc = LseAccumulator::new();
            for a in 0..m {
                let alpha = 2.0 * PI * (a as f64 + 0.5) / m as f64;
                let Some(p) = frame.point(rho * alpha.cos(), rho * alpha.sin()) else {
                    continue;
                };
                let v = integrand(&p);
                check_finite(v, p.z)?;
                acc.push(v.scale_log(log_w));
            }
            Ok(acc)
        })
        .collect();
    let mut total = LseAccumulator::new();
    for acc in &accs? {
        total.merge(acc);
    }
    Ok(total.value())
}

/// Visits every local quadrature point with its log-weight, in a fixed order.
pub fn local_points(frame: &LocalFrame, mesh: &LocalMesh) -> Vec<(DiskPoint, f64)> {
    let mut out = Vec::new();
    for (rho, w) in mesh.radial_nodes() {
        let m = mesh.angular_at(rho);
        let log_w = (2.0 * rho * w / m as f64).ln();
        for a in 0..m {
            let alpha = 2.0 * PI * (a as f64 + 0.5) / m as f64;
            if let Some(p) = frame.point(rho * alpha.cos(), rho * alpha.sin()) {
                out.push((p, log_w));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_degree_seven_exactly() {
        let (x, w) = gauss_legendre(4);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(6)).sum();
        assert!((s - 2.0 / 7.0).abs() < 1e-15);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-15);
    }

    #[test]
    fn unit_integrand_has_unit_mass() {
        let mesh = DiskMesh::uniform(30, 4, 16);
        let v = disk_integral(|_| LogReal::ONE, &mesh).unwrap();
        assert!((v.to_f64() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn monomial_moment() {
        let mesh = DiskMesh::uniform(30, 4, 16);
        let v = disk_integral(|p| LogReal::exp(6.0 * (1.0 - p.s).ln()), &mesh).unwrap();
        assert!((v.to_f64() - 0.25).abs() < 1e-8);
    }

    #[test]
    fn local_disk_area() {
        let frame = LocalFrame {
            s_c: 0.1,
            phi_c: 1.0,
            anchor: None,
        };
        let mesh = LocalMesh::uniform(1e-3, 0.05, 2, 16);
        let v = local_disk_integral(&frame, |_| LogReal::ONE, &mesh).unwrap();
        assert!((v.to_f64() - 0.05f64.powi(2)).abs() < 1e-15);
    }

    #[test]
    fn local_points_report_accurate_boundary_distance() {
        let frame = LocalFrame {
            s_c: 1e-9,
            phi_c: 0.3,
            anchor: None,
        };
        let p = frame.point(2e-10, 0.0).unwrap();
        assert!((p.s - 8e-10).abs() < 1e-24);
        assert!(frame.point(2e-9, 0.0).is_none());
    }
}
