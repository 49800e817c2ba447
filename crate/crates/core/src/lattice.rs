//! Point lattices near the circle, finite Blaschke products over them, subset
//! products, and the interpolation machinery behind the growth bound for
//! functions controlled on the lattice.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocks::MIN_DEPTH;
use crate::error::{usage, Error, Result};
use crate::numerics::{LogComplex, LogReal, LseAccumulator};
use crate::report::{Check, Report};

/// Pseudo-hyperbolic distance `|z - w| / |1 - z conj(w)|`.
pub fn pseudo_hyperbolic(z: Complex64, w: Complex64) -> Result<f64> {
    if z.norm() >= 1.0 || w.norm() >= 1.0 {
        return Err(usage(format!(
            "pseudo-hyperbolic distance needs points in the open disk, got |z| = {}, |w| = {}",
            z.norm(),
            w.norm()
        )));
    }
    Ok(rho_unchecked(z, w))
}

fn rho_unchecked(z: Complex64, w: Complex64) -> f64 {
    let den = (Complex64::new(1.0, 0.0) - z * w.conj()).norm();
    (z - w).norm() / den
}

/// `log rho(z, a)`, accurate also when `rho` is close to 1.
fn log_rho(z: Complex64, a: Complex64) -> f64 {
    let den = Complex64::new(1.0, 0.0) - a.conj() * z;
    let den2 = den.norm_sqr();
    let q = (1.0 - z.norm_sqr()) * (1.0 - a.norm_sqr()) / den2;
    if q < 0.5 {
        0.5 * (-q).ln_1p()
    } else {
        ((z - a).norm() / den2.sqrt()).ln()
    }
}

/// One Blaschke factor `(z - a)/(1 - conj(a) z)` in the log domain.
fn log_factor(z: Complex64, a: Complex64) -> LogComplex {
    let num = z - a;
    if num.re == 0.0 && num.im == 0.0 {
        return LogComplex::ZERO;
    }
    let den = Complex64::new(1.0, 0.0) - a.conj() * z;
    LogComplex::new(log_rho(z, a), num.arg() - den.arg())
}

/// How sample points are placed in their small disks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum SampleRule {
    Centers,
    Perturbed { seed: u64 },
}

/// One ring of the lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeLevel {
    pub n: usize,
    pub x_n: f64,
    pub r_n: f64,
    pub delta_n: f64,
    pub n_nodes: usize,
    pub kappa: f64,
    pub nodes: Vec<Complex64>,
    pub sample_points: Vec<Complex64>,
}

/// Node count with `N <= kappa/delta < N + 1`.
pub fn node_count(kappa: f64, delta: f64) -> Result<usize> {
    let q = kappa / delta;
    if !(q >= 1.0) || !q.is_finite() {
        return Err(usage(format!(
            "level too shallow: kappa/(1 - r_n) = {q} < 1 leaves no nodes"
        )));
    }
    Ok(q.floor() as usize)
}

fn node(r: f64, k: usize, n: usize) -> Complex64 {
    Complex64::from_polar(r, 2.0 * PI * k as f64 / n as f64)
}

/// Level at radius `r_n` with level index 1.
pub fn build_level(kappa: f64, r_n: f64, rule: &SampleRule) -> Result<LatticeLevel> {
    if !(0.8..1.0).contains(&r_n) {
        return Err(usage(format!("level radius must lie in [4/5, 1), got {r_n}")));
    }
    build_level_at(1, kappa, -(1.0 - r_n).ln(), rule)
}

/// Level `n` at depth `x_n`, so that `1 - r_n = e^{-x_n}` exactly.
pub fn build_level_at(n: usize, kappa: f64, x_n: f64, rule: &SampleRule) -> Result<LatticeLevel> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(usage(format!("kappa must lie in (0, 1), got {kappa}")));
    }
    let delta = (-x_n).exp();
    if !(delta <= 0.2 && delta > 0.0) {
        return Err(usage(format!("level radius must lie in [4/5, 1), got depth {x_n}")));
    }
    let r = 1.0 - delta;
    let count = node_count(kappa, delta)?;
    let nodes: Vec<Complex64> = (0..count).map(|k| node(r, k, count)).collect();
    let sample_points = match rule {
        SampleRule::Centers => nodes.clone(),
        SampleRule::Perturbed { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed ^ ((n as u64) << 32));
            let rad = delta * delta;
            nodes
                .iter()
                .map(|&w| {
                    let u: f64 = rng.gen();
                    let a: f64 = rng.gen::<f64>() * 2.0 * PI;
                    // Strictly inside the disk of radius delta^2.
                    w + Complex64::from_polar(0.999 * rad * u.sqrt(), a)
                })
                .collect()
        }
    };
    Ok(LatticeLevel {
        n,
        x_n,
        r_n: r,
        delta_n: delta,
        n_nodes: count,
        kappa,
        nodes,
        sample_points,
    })
}

/// The fixed 32-point net in the disk of radius `rad` about `c`: the centre
/// and rings of 7, 11 and 13 points.
pub fn disk_net(c: Complex64, rad: f64) -> Vec<Complex64> {
    let mut out = vec![c];
    for (m, f) in [(7usize, 0.25), (11, 0.5), (13, 0.75)] {
        for i in 0..m {
            out.push(c + Complex64::from_polar(f * rad, 2.0 * PI * i as f64 / m as f64));
        }
    }
    out
}

/// Level whose sample points minimise `log|q|` over the net in each small disk.
pub fn build_level_minimizer<Q>(n: usize, kappa: f64, x_n: f64, log_abs_q: Q) -> Result<LatticeLevel>
where
    Q: Fn(Complex64) -> f64 + Sync,
{
    let mut level = build_level_at(n, kappa, x_n, &SampleRule::Centers)?;
    let rad = level.delta_n * level.delta_n;
    level.sample_points = level
        .nodes
        .par_iter()
        .map(|&w| {
            let mut best = (f64::INFINITY, w);
            for p in disk_net(w, rad) {
                let v = log_abs_q(p);
                if v < best.0 {
                    best = (v, p);
                }
            }
            best.1
        })
        .collect();
    Ok(level)
}

/// `x_{n+1} = max(2 x_n, x_n + spacing)`.
pub fn radii_schedule(x1: f64, count: usize, spacing: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    let mut x = x1;
    for _ in 0..count {
        out.push(x);
        x = (2.0 * x).max(x + spacing);
    }
    out
}

fn check_points(points: &[Complex64]) -> Result<()> {
    if let Some(p) = points.iter().find(|p| p.norm() >= 1.0) {
        return Err(usage(format!("Blaschke zeros must lie in the open disk, got {p}")));
    }
    Ok(())
}

/// `prod (z - a_k)/(1 - conj(a_k) z)` in the log domain.
pub fn blaschke_eval(points: &[Complex64], z: Complex64) -> Result<LogComplex> {
    check_points(points)?;
    if z.norm() > 1.0 {
        return Err(usage(format!("Blaschke evaluation needs |z| <= 1, got {}", z.norm())));
    }
    Ok(blaschke_unchecked(points.iter().copied(), z))
}

fn blaschke_unchecked<I: Iterator<Item = Complex64>>(points: I, z: Complex64) -> LogComplex {
    let (mut lm, mut ph) = (0.0, 0.0);
    for a in points {
        let f = log_factor(z, a);
        if f.is_zero() {
            return LogComplex::ZERO;
        }
        lm += f.log_magnitude;
        ph += f.phase;
    }
    LogComplex::new(lm, ph)
}

/// `B'(z_j)` from `(1 - |z_j|^2) B'(z_j) = prod_{k != j} factor_k(z_j)`.
pub fn node_derivative_complex(points: &[Complex64], j: usize) -> Result<LogComplex> {
    check_points(points)?;
    let zj = *points
        .get(j)
        .ok_or_else(|| usage(format!("node index {j} out of range")))?;
    let (mut lm, mut ph) = (0.0, 0.0);
    for (k, &a) in points.iter().enumerate() {
        if k == j {
            continue;
        }
        let f = log_factor(zj, a);
        if f.is_zero() {
            return Err(Error::Singular(format!("duplicate Blaschke zero at {a}")));
        }
        lm += f.log_magnitude;
        ph += f.phase;
    }
    Ok(LogComplex::new(lm - (1.0 - zj.norm_sqr()).ln(), ph))
}

/// `|B'(z_j)|` via the product of pseudo-hyperbolic distances.
pub fn node_derivative(points: &[Complex64], j: usize) -> Result<LogReal> {
    Ok(node_derivative_complex(points, j)?.abs())
}

/// `log|A_n(z)|` for the comparator `(z^N - r^N)/(1 - r^N z^N)`.
pub fn comparator_log_abs(level: &LatticeLevel, z: Complex64) -> f64 {
    let n = level.n_nodes as f64;
    let a = (n * (-level.delta_n).ln_1p()).exp();
    let zn = if z.norm() == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        let l = z.ln() * n;
        l.exp()
    };
    let num = zn - a;
    let den = Complex64::new(1.0, 0.0) - zn * a;
    num.norm().ln() - den.norm().ln()
}

/// `log|A_n(0)| = N log r_n`.
pub fn comparator_log_at_zero(level: &LatticeLevel) -> f64 {
    level.n_nodes as f64 * (-level.delta_n).ln_1p()
}

/// Indices `j` used for per-node scans: all of them up to `cap`, otherwise
/// an evenly strided subset of size `cap`.
fn scan_indices(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        (0..n).collect()
    } else {
        (0..cap).map(|i| i * n / cap).collect()
    }
}

/// Node-derivative lower bound with an empirical constant, and the
/// two-sided bound `|log|B_n| + kappa| <= eps` on the circle `|z| = r`,
/// alongside the closed-form comparator.
pub fn verify_lemma_tl8(level: &LatticeLevel, r: f64, eps: f64) -> Result<Report> {
    if !(r > 0.0 && r < 1.0) {
        return Err(usage(format!("circle radius must lie in (0, 1), got {r}")));
    }
    let pts = &level.sample_points;
    let n = level.n_nodes;
    let idx = scan_indices(n, 4096);
    let derivs: Result<Vec<f64>> = idx
        .par_iter()
        .map(|&j| Ok(node_derivative(pts, j)?.log_magnitude))
        .collect();
    let derivs = derivs?;
    let (jmin, lmin) = derivs
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (idx[i], v) } else { acc });
    let c_emp = (lmin - (n as f64).ln()).exp();
    let rn = level.r_n;
    let a = (n as f64 * (-level.delta_n).ln_1p()).exp();
    let log_comp_deriv = (n as f64).ln() + (n as f64 - 1.0) * (-level.delta_n).ln_1p() - (1.0 - a * a).ln();

    let m = (4 * n).max(64);
    let vals: Vec<(f64, f64)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let z = Complex64::from_polar(r, 2.0 * PI * i as f64 / m as f64);
            let lb = blaschke_unchecked(pts.iter().copied(), z).log_magnitude;
            (lb, comparator_log_abs(level, z))
        })
        .collect();
    let (mut worst_b, mut worst_loc, mut comp_gap) = (0.0f64, 0usize, 0.0f64);
    for (i, &(lb, la)) in vals.iter().enumerate() {
        let d = (lb + level.kappa).abs();
        if d > worst_b {
            worst_b = d;
            worst_loc = i;
        }
        comp_gap = comp_gap.max((lb - la).abs());
    }
    let mut rep = Report::new("lattice-blaschke")
        .param("n", level.n)
        .param("r_n", rn)
        .param("N_n", n)
        .param("kappa", level.kappa)
        .param("r", r)
        .param("eps", eps)
        .param("nodes_scanned", idx.len())
        .param("c_kappa", c_emp)
        .param("comparator_log_derivative_over_N", log_comp_deriv - (n as f64).ln())
        .param("comparator_log_at_zero", comparator_log_at_zero(level))
        .param("max_log_gap_to_comparator", comp_gap)
        .param("circle_points", m);
    rep.push(Check::new(
        "a",
        c_emp > 0.0 && c_emp.is_finite(),
        c_emp,
        format!("node {jmin}"),
    ));
    rep.push(Check::from_margin(
        "b",
        eps - worst_b,
        format!("z = {r} e^(2 pi i {worst_loc}/{m})"),
    ));
    rep.set_below_regime(level.x_n < MIN_DEPTH);
    Ok(rep)
}

/// A subset `N*` of a level's indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetMask {
    pub n_nodes: usize,
    pub selected: Vec<usize>,
    pub sigma: f64,
}

impl SubsetMask {
    pub fn new(level: &LatticeLevel, mut selected: Vec<usize>) -> Result<SubsetMask> {
        selected.sort_unstable();
        selected.dedup();
        if let Some(&k) = selected.iter().find(|&&k| k >= level.n_nodes) {
            return Err(usage(format!("subset index {k} out of range 0..{}", level.n_nodes)));
        }
        let sigma = (level.n_nodes - selected.len()) as f64 / level.n_nodes as f64;
        Ok(SubsetMask {
            n_nodes: level.n_nodes,
            selected,
            sigma,
        })
    }

    pub fn full(level: &LatticeLevel) -> SubsetMask {
        SubsetMask {
            n_nodes: level.n_nodes,
            selected: (0..level.n_nodes).collect(),
            sigma: 0.0,
        }
    }

    pub fn points<'a>(&'a self, level: &'a LatticeLevel) -> impl Iterator<Item = Complex64> + 'a {
        self.selected.iter().map(move |&k| level.sample_points[k])
    }
}

/// `B*_n` over the selected sample points.
pub fn subset_blaschke(level: &LatticeLevel, mask: &SubsetMask, z: Complex64) -> LogComplex {
    blaschke_unchecked(mask.points(level), z)
}

/// `-eps <= log|B*_n| + kappa <= 3 kappa sigma/(1 - |z|) + eps` on `|z| <= r`.
pub fn verify_lemma_tl9(level: &LatticeLevel, mask: &SubsetMask, r: f64, eps: f64) -> Result<Report> {
    if !(r > 0.0 && r < 1.0) {
        return Err(usage(format!("disk radius must lie in (0, 1), got {r}")));
    }
    if mask.n_nodes != level.n_nodes {
        return Err(usage("subset mask belongs to a different level"));
    }
    let m = (4 * level.n_nodes).max(64);
    let mut grid = vec![Complex64::new(0.0, 0.0)];
    for i in 1..=8 {
        let rho = r * i as f64 / 8.0;
        for a in 0..m {
            grid.push(Complex64::from_polar(rho, 2.0 * PI * a as f64 / m as f64));
        }
    }
    let vals: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&z| {
            let l = subset_blaschke(level, mask, z).log_magnitude + level.kappa;
            let upper = 3.0 * level.kappa * mask.sigma / (1.0 - z.norm()) + eps;
            (l + eps, upper - l)
        })
        .collect();
    let (mut lo, mut lo_at) = (f64::INFINITY, 0usize);
    let (mut up, mut up_at) = (f64::INFINITY, 0usize);
    for (i, &(a, b)) in vals.iter().enumerate() {
        if a < lo {
            lo = a;
            lo_at = i;
        }
        if b < up {
            up = b;
            up_at = i;
        }
    }
    let mut rep = Report::new("lattice-subset-blaschke")
        .param("n", level.n)
        .param("N_n", level.n_nodes)
        .param("sigma", mask.sigma)
        .param("r", r)
        .param("eps", eps)
        .param("grid_points", grid.len());
    rep.push(Check::from_margin("lower", lo, format!("z = {}", grid[lo_at])));
    rep.push(Check::from_margin("upper", up, format!("z = {}", grid[up_at])));
    rep.set_below_regime(level.x_n < MIN_DEPTH);
    Ok(rep)
}

/// The normalised product `B* = prod_n r_n^{-N_n} B*_n` over several levels.
pub struct ProductBlaschke<'a> {
    pub levels: Vec<(&'a LatticeLevel, &'a SubsetMask)>,
}

impl<'a> ProductBlaschke<'a> {
    pub fn new(levels: &'a [(LatticeLevel, SubsetMask)]) -> ProductBlaschke<'a> {
        ProductBlaschke {
            levels: levels.iter().map(|(l, m)| (l, m)).collect(),
        }
    }

    fn normalisation(&self) -> f64 {
        self.levels
            .iter()
            .map(|(l, _)| -(l.n_nodes as f64) * (-l.delta_n).ln_1p())
            .sum()
    }

    pub fn eval(&self, z: Complex64) -> LogComplex {
        let mut total = LogComplex::new(self.normalisation(), 0.0);
        for (l, m) in &self.levels {
            total = total * subset_blaschke(l, m, z);
        }
        total
    }

    /// Selected zeros with their `(level, index)` labels.
    pub fn zeros(&self) -> Vec<(usize, usize, Complex64)> {
        let mut out = Vec::new();
        for (li, (l, m)) in self.levels.iter().enumerate() {
            for &k in &m.selected {
                out.push((li, k, l.sample_points[k]));
            }
        }
        out
    }

    /// `(B*)'` at a selected zero.
    pub fn derivative_at(&self, zeros: &[(usize, usize, Complex64)], j: usize) -> Result<LogComplex> {
        let pts: Vec<Complex64> = zeros.iter().map(|t| t.2).collect();
        let d = node_derivative_complex(&pts, j)?;
        Ok(d * LogComplex::new(self.normalisation(), 0.0))
    }
}

/// Checks the residue identity
/// `-f(z)/B*(z) + sum f(z_k)/((B*)'(z_k)(z - z_k)) = (2 pi i)^-1 int_{|zeta|=r} f/(B*(zeta)(z - zeta)) dzeta`
/// with the trapezoid rule on `multiplier * (total nodes)` contour points
/// (at least 64).
pub fn interpolation_identity<F>(
    levels: &[(LatticeLevel, SubsetMask)],
    f: F,
    z: Complex64,
    r: f64,
    multiplier: usize,
) -> Result<Report>
where
    F: Fn(Complex64) -> Complex64 + Sync,
{
    if !(z.norm() < r && r < 1.0) {
        return Err(usage(format!("need |z| < r < 1, got |z| = {}, r = {r}", z.norm())));
    }
    let bp = ProductBlaschke::new(levels);
    let zeros = bp.zeros();
    if let Some(p) = zeros.iter().find(|p| (p.2.norm() - r).abs() < 1e-12) {
        return Err(usage(format!("sample point {} lies on the contour |zeta| = {r}", p.2)));
    }
    let total = zeros.len();
    let m = (multiplier * total).max(64);
    let fz = f(z);
    let bz = bp.eval(z);
    if bz.is_zero() {
        return Err(usage("z coincides with a sample point"));
    }
    let lhs_main = -fz * bz.recip().to_complex();
    let inside: Vec<usize> = (0..total).filter(|&j| zeros[j].2.norm() < r).collect();
    let node_terms: Result<Vec<Complex64>> = inside
        .par_iter()
        .map(|&j| {
            let zk = zeros[j].2;
            let d = bp.derivative_at(&zeros, j)?;
            Ok(f(zk) * d.recip().to_complex() / (z - zk))
        })
        .collect();
    let node_sum: Complex64 = node_terms?.iter().sum();
    let contour: Vec<Complex64> = (0..m)
        .into_par_iter()
        .map(|i| {
            let zeta = Complex64::from_polar(r, 2.0 * PI * i as f64 / m as f64);
            f(zeta) * bp.eval(zeta).recip().to_complex() * zeta / (z - zeta)
        })
        .collect();
    let rhs: Complex64 = contour.iter().sum::<Complex64>() / m as f64;
    let lhs = lhs_main + node_sum;
    let scale = lhs_main.norm().max(node_sum.norm()).max(1.0);
    let residual = (lhs - rhs).norm() / scale;
    let mut rep = Report::new("residue-identity")
        .param("z", [z.re, z.im])
        .param("r", r)
        .param("contour_points", m)
        .param("nodes_inside", inside.len())
        .param("lhs", [lhs.re, lhs.im])
        .param("rhs", [rhs.re, rhs.im])
        .param("residual", residual);
    rep.push(Check::from_margin("identity", 1e-8 - residual, "relative residual"));
    Ok(rep)
}

/// Growth bound for a function controlled on the lattice: checks the
/// sample-sum precondition, builds the good subsets, and measures the
/// constants in the intermediate and final bounds.
pub fn growth_bound_check<F>(levels: &[LatticeLevel], f_eval: F, p: f64) -> Result<Report>
where
    F: Fn(Complex64) -> LogComplex + Sync,
{
    if !(p > 0.0) {
        return Err(usage(format!("exponent p must be positive, got {p}")));
    }
    let mut masks = Vec::new();
    let mut rep = Report::new("lattice-growth-bound").param("p", p).param("levels", levels.len());
    let mut sigma_ok = (f64::INFINITY, String::new());
    for (i, l) in levels.iter().enumerate() {
        let n = (i + 1) as f64;
        let logs: Vec<f64> = l.sample_points.par_iter().map(|&z| f_eval(z).log_magnitude).collect();
        let mut acc = LseAccumulator::new();
        for &v in &logs {
            acc.push(LogReal::exp(p * v));
        }
        let lhs = acc.value().log_magnitude;
        let rhs = (n * n * l.n_nodes as f64).ln();
        if lhs > rhs {
            return Err(usage(format!(
                "sample-sum bound violated at level {}: log sum |f|^p = {lhs} > log(n^2 N_n) = {rhs}",
                i + 1
            )));
        }
        let cut = 4.0 / p * n.ln();
        let sel: Vec<usize> = (0..l.n_nodes).filter(|&k| logs[k] <= cut).collect();
        let mask = SubsetMask::new(l, sel)?;
        let m = 1.0 / (n * n) - mask.sigma;
        if m < sigma_ok.0 {
            sigma_ok = (m, format!("level {}", i + 1));
        }
        masks.push(mask);
    }
    rep.push(Check::from_margin("sigma", sigma_ok.0, sigma_ok.1));
    let pairs: Vec<(LatticeLevel, SubsetMask)> = levels.iter().cloned().zip(masks).collect();
    let bp = ProductBlaschke::new(&pairs);
    let kappa = levels.first().map(|l| l.kappa).unwrap_or(0.0);

    // Radial-angular grid out to a quarter of the deepest spacing.
    let s_end = levels.iter().map(|l| l.delta_n).fold(0.5, f64::min) / 4.0;
    let mut radii = Vec::new();
    let mut s: f64 = 1.0;
    while s > s_end {
        radii.push(1.0 - s);
        s *= 0.8;
    }
    let ang = 512usize;
    let grid: Vec<Complex64> = radii
        .iter()
        .flat_map(|&rr| (0..ang).map(move |a| Complex64::from_polar(rr, 2.0 * PI * (a as f64 + 0.5) / ang as f64)))
        .collect();
    let vals: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&z| {
            let s = 1.0 - z.norm();
            (f_eval(z).log_magnitude - 1.0 / s, bp.eval(z).log_magnitude - 1.0 / (5.0 * s))
        })
        .collect();
    let log_c = vals.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
    let log_c1 = vals.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    rep.set("log_c", log_c);
    rep.set("log_c1", log_c1);

    // Lower bounds on |z| = 1 - 2 delta_n and at the selected zeros.
    let mut log_c2 = f64::INFINITY;
    for (i, l) in levels.iter().enumerate() {
        let rr = 1.0 - 2.0 * l.delta_n;
        let m = (4 * l.n_nodes).max(256);
        let v = (0..m)
            .into_par_iter()
            .map(|a| bp.eval(Complex64::from_polar(rr, 2.0 * PI * (a as f64 + 0.5) / m as f64)).log_magnitude)
            .reduce(|| f64::INFINITY, f64::min);
        log_c2 = log_c2.min(v - kappa * (i + 1) as f64);
    }
    let zeros = bp.zeros();
    let log_c3: Result<Vec<f64>> = (0..zeros.len())
        .into_par_iter()
        .map(|j| {
            let l = &levels[zeros[j].0];
            let n = (zeros[j].0 + 1) as f64;
            Ok(bp.derivative_at(&zeros, j)?.log_magnitude - (l.n_nodes as f64).ln() - kappa * n)
        })
        .collect();
    let log_c3 = log_c3?.into_iter().fold(f64::INFINITY, f64::min);
    rep.set("log_c2", log_c2);
    rep.set("log_c3", log_c3);
    rep.push(Check::new("growth", log_c.is_finite(), -log_c, "sup |f| e^{-1/(1-|z|)} finite"));
    rep.push(Check::new("upper-product", log_c1.is_finite(), -log_c1, "sup |B*| e^{-1/(5(1-|z|))} finite"));
    rep.push(Check::new(
        "lower-product",
        log_c2 > f64::NEG_INFINITY,
        log_c2,
        "min |B*| e^{-kappa n} on |z| = 1 - 2 delta_n",
    ));
    rep.push(Check::new(
        "lower-derivative",
        log_c3 > f64::NEG_INFINITY,
        log_c3,
        "min |(B*)'| / (N_n e^{kappa n}) at selected zeros",
    ));
    rep.set_below_regime(levels.iter().any(|l| l.x_n < MIN_DEPTH));
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_basics() {
        let w = Complex64::new(0.3, -0.4);
        assert!((pseudo_hyperbolic(Complex64::new(0.0, 0.0), w).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(pseudo_hyperbolic(w, w).unwrap(), 0.0);
        assert!(pseudo_hyperbolic(Complex64::new(1.0, 0.0), w).is_err());
        let z = Complex64::new(0.999, 0.0);
        let a = Complex64::new(0.0, 0.999);
        assert!((log_rho(z, a) - rho_unchecked(z, a).ln()).abs() < 1e-12);
    }

    #[test]
    fn node_count_example() {
        let l = build_level_at(1, (-5.0f64).exp(), 10.0, &SampleRule::Centers).unwrap();
        assert_eq!(l.n_nodes, 148);
        assert!(l.sample_points == l.nodes);
        assert!(build_level(0.01, 0.9, &SampleRule::Centers).is_err());
    }

    #[test]
    fn perturbed_is_deterministic_and_inside() {
        let a = build_level_at(1, 0.5, 4.0, &SampleRule::Perturbed { seed: 7 }).unwrap();
        let b = build_level_at(1, 0.5, 4.0, &SampleRule::Perturbed { seed: 7 }).unwrap();
        assert_eq!(a, b);
        for (z, w) in a.sample_points.iter().zip(&a.nodes) {
            assert!((z - w).norm() < a.delta_n * a.delta_n);
        }
    }

    #[test]
    fn single_node_derivative() {
        let a = Complex64::new(0.6, 0.2);
        let d = node_derivative(&[a], 0).unwrap();
        assert!((d.to_f64() - 1.0 / (1.0 - a.norm_sqr())).abs() < 1e-12);
        assert!(node_derivative(&[a, a], 0).is_err());
        assert!(blaschke_eval(&[a], a).unwrap().is_zero());
    }

    #[test]
    fn two_node_derivative_matches_difference() {
        let pts = [Complex64::new(0.5, 0.0), Complex64::new(-0.5, 0.0)];
        let h = 1e-6;
        let b = |x: f64| blaschke_eval(&pts, Complex64::new(x, 0.0)).unwrap().to_complex();
        let fd = (b(0.5 + h) - b(0.5 - h)) / (2.0 * h);
        let d = node_derivative(&pts, 0).unwrap().to_f64();
        assert!((fd.norm() - d).abs() / d < 1e-6);
    }

    #[test]
    fn centers_match_comparator() {
        let l = build_level_at(1, (-5.0f64).exp(), 9.0, &SampleRule::Centers).unwrap();
        for z in [Complex64::new(0.0, 0.0), Complex64::new(0.3, 0.4), Complex64::new(-0.7, 0.1)] {
            let b = blaschke_eval(&l.sample_points, z).unwrap().log_magnitude;
            assert!((b - comparator_log_abs(&l, z)).abs() < 1e-10);
        }
    }

    #[test]
    fn residue_identity_for_blaschke_itself() {
        let l = build_level_at(1, 0.5, 3.0, &SampleRule::Centers).unwrap();
        let pairs = vec![(l.clone(), SubsetMask::full(&l))];
        let bp = ProductBlaschke::new(&pairs);
        let rep = interpolation_identity(&pairs, |z| bp.eval(z).to_complex(), Complex64::new(0.1, 0.0), 0.9, 8).unwrap();
        assert!(rep.all_pass(), "{:?}", rep);
    }

    #[test]
    fn schedule_doubles() {
        assert_eq!(radii_schedule(8.0, 3, 3.0), vec![8.0, 16.0, 32.0]);
    }
}
