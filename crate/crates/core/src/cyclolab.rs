//! Hilbert-space diagnostics in `B^2(omega)`: inner products, distances from
//! a target to `span{f, z f, ..., z^N f}`, the bilateral sequence norm, the
//! resolvent representatives and the double integral that bounds them.
//!
//! Generators are sampled once on rings of a quadrature mesh as complex
//! logarithms; a local disk whose mass is concentrated near one point is
//! carried as a moment atom. Gram entries are assembled in one common scale so
//! that nothing leaves `f64`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::construct::measure::Ring;
use crate::construct::ConstructionState;
use crate::error::{usage, Error, Result};
use crate::numerics::{DiskMesh, LogComplex, LogReal, LseAccumulator};
use crate::report::{Check, Report};
use crate::weights::{MomentSequence, RadialWeight};

/// A holomorphic function known through its complex logarithm.
pub trait Generator: Sync {
    /// `log f(z)`; the real part is `-inf` at a zero.
    fn log_f(&self, z: Complex64) -> Result<Complex64>;
    /// `f'(z) / f(z)`.
    fn dlog_f(&self, z: Complex64) -> Result<Complex64>;
}

/// A polynomial by its coefficients, constant term first.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial(pub Vec<Complex64>);

impl Polynomial {
    pub fn one() -> Polynomial {
        Polynomial(vec![Complex64::new(1.0, 0.0)])
    }

    pub fn monomial(n: usize) -> Polynomial {
        let mut c = vec![Complex64::new(0.0, 0.0); n + 1];
        c[n] = Complex64::new(1.0, 0.0);
        Polynomial(c)
    }

    pub fn eval(&self, z: Complex64) -> (Complex64, Complex64) {
        let mut p = Complex64::new(0.0, 0.0);
        let mut dp = Complex64::new(0.0, 0.0);
        for c in self.0.iter().rev() {
            dp = dp * z + p;
            p = p * z + c;
        }
        (p, dp)
    }
}

impl Generator for Polynomial {
    fn log_f(&self, z: Complex64) -> Result<Complex64> {
        let (p, _) = self.eval(z);
        Ok(Complex64::new(p.norm().ln(), p.im.atan2(p.re)))
    }

    fn dlog_f(&self, z: Complex64) -> Result<Complex64> {
        let (p, dp) = self.eval(z);
        if p == Complex64::new(0.0, 0.0) {
            return Err(Error::Singular(format!("f'/f at a zero z = {z}")));
        }
        Ok(dp / p)
    }
}

/// `F^{1/p} = exp((W - i Im W(0)) / p)` for a built state.
#[derive(Clone, Copy, Debug)]
pub struct StatePower<'a> {
    pub state: &'a ConstructionState,
    pub p: f64,
    im0: f64,
}

impl<'a> StatePower<'a> {
    pub fn new(state: &'a ConstructionState, p: f64) -> StatePower<'a> {
        StatePower {
            state,
            p,
            im0: state.im_w0(),
        }
    }
}

impl Generator for StatePower<'_> {
    fn log_f(&self, z: Complex64) -> Result<Complex64> {
        let w = self.state.w(z)?.w;
        Ok(Complex64::new(w.re, w.im - self.im0) / self.p)
    }

    fn dlog_f(&self, z: Complex64) -> Result<Complex64> {
        Ok(self.state.w(z)?.dw / self.p)
    }
}

/// A local disk reduced to the normalized moments
/// `M[p, q] = int d^p conj(d)^q |f|^2 omega dm / mass`, `d = z - center`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub center: Complex64,
    pub log_mass: f64,
    /// Bound on the error of `log_mass`.
    pub log_mass_error: f64,
    pub order: usize,
    /// Row-major `(order + 1) x (order + 1)`.
    pub moments: Vec<Complex64>,
    /// `log` of a bound on `int |f| omega dm` over the disk, the largest
    /// contribution of the disk to `<1, z^j f>` for `|z| <= 1`.
    pub log_cross_bound: f64,
}

/// One sampled ring: nodes at angles `2 pi (a + 1/2) / m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledRing {
    pub r: f64,
    /// `log` of quadrature weight times `omega`.
    pub log_w: f64,
    /// `log f` at each node.
    pub values: Vec<Complex64>,
}

/// A generator sampled for Gram computations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sampled {
    pub rings: Vec<SampledRing>,
    pub atoms: Vec<Atom>,
    /// Depth below which only atoms are resolved (`0` for a full mesh).
    pub s_floor: f64,
}

/// Rings of a whole-disk mesh, keeping `s >= s_min`.
pub fn disk_mesh_rings(mesh: &DiskMesh, s_min: f64) -> Result<Vec<Ring>> {
    mesh.validate()?;
    Ok(mesh
        .radial_nodes()
        .into_iter()
        .filter(|n| n.s >= s_min)
        .map(|n| {
            let m = mesh.angular[n.shell as usize];
            Ring {
                s: n.s,
                log_w: (2.0 * (1.0 - n.s) * n.weight / m as f64).ln(),
                m,
            }
        })
        .collect())
}

impl Sampled {
    /// Samples `g` on `rings`, with the weight folded into the ring weights.
    pub fn from_generator<G: Generator + ?Sized>(weight: &RadialWeight, rings: &[Ring], g: &G) -> Result<Sampled> {
        let rings = rings
            .par_iter()
            .map(|ring| -> Result<SampledRing> {
                let values = (0..ring.m).map(|a| g.log_f(ring.point(a))).collect::<Result<Vec<_>>>()?;
                Ok(SampledRing {
                    r: 1.0 - ring.s,
                    log_w: ring.log_w + weight.log_omega(ring.s),
                    values,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let s_floor = rings.iter().map(|r| 1.0 - r.r).fold(1.0, f64::min);
        Ok(Sampled {
            rings,
            atoms: Vec::new(),
            s_floor,
        })
    }

    /// `log ||f||^2`, rings and atoms.
    pub fn log_norm2(&self) -> f64 {
        let mut acc = LseAccumulator::new();
        for ring in &self.rings {
            for v in &ring.values {
                acc.push(LogReal::exp(ring.log_w + 2.0 * v.re));
            }
        }
        for a in &self.atoms {
            acc.push(LogReal::exp(a.log_mass));
        }
        acc.value().ln().unwrap_or(f64::NEG_INFINITY)
    }

    /// Largest `log(|f|^2 w)` over nodes and atoms.
    fn log_scale(&self) -> f64 {
        let rings = self
            .rings
            .iter()
            .flat_map(|r| r.values.iter().map(move |v| r.log_w + 2.0 * v.re))
            .fold(f64::NEG_INFINITY, f64::max);
        self.atoms.iter().map(|a| a.log_mass).fold(rings, f64::max)
    }

    fn same_mesh(&self, o: &Sampled) -> bool {
        self.rings.len() == o.rings.len()
            && self
                .rings
                .iter()
                .zip(&o.rings)
                .all(|(a, b)| a.r == b.r && a.values.len() == b.values.len())
    }
}

/// `<f, g> = int f conj(g) omega dm` over a whole-disk mesh, as a log-complex.
pub fn inner_product<F: Generator + ?Sized, G: Generator + ?Sized>(
    weight: &RadialWeight,
    f: &F,
    g: &G,
    mesh: &DiskMesh,
) -> Result<LogComplex> {
    let rings = disk_mesh_rings(mesh, 0.0)?;
    let terms: Vec<(f64, Complex64)> = rings
        .par_iter()
        .map(|ring| -> Result<Vec<(f64, Complex64)>> {
            let lo = ring.log_w + weight.log_omega(ring.s);
            (0..ring.m)
                .map(|a| {
                    let z = ring.point(a);
                    let l = f.log_f(z)? + g.log_f(z)?.conj();
                    Ok((lo + l.re, Complex64::from_polar(1.0, l.im)))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(scaled_sum(&terms))
}

/// `sum exp(l) u` for unit phases `u`, in one common scale.
fn scaled_sum(terms: &[(f64, Complex64)]) -> LogComplex {
    let m = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return LogComplex::from_complex(Complex64::new(0.0, 0.0));
    }
    let s: Complex64 = terms.iter().map(|(l, u)| (l - m).exp() * u).sum();
    let c = LogComplex::from_complex(s);
    LogComplex::new(c.log_magnitude + m, c.phase)
}

/// Normal equations for the projection onto `span{z^j f : j <= degree}`,
/// diagonally scaled and ridge-regularized.
#[derive(Clone, Debug)]
pub struct GramSystem {
    pub degree: usize,
    /// `G[j, l] = <z^l f, z^j f> e^{-scale}`, before scaling.
    pub gram: DMatrix<Complex64>,
    /// `log` of the common scale of the entries.
    pub log_scale: f64,
    pub ridge: f64,
    chol: Cholesky<Complex64, nalgebra::Dyn>,
    diag: DVector<f64>,
    /// Largest `|G - G*|` relative to the largest entry (before symmetrizing).
    pub hermitian_defect: f64,
    /// Condition estimate of the scaled matrix.
    pub condition: f64,
    /// Smallest eigenvalue of the scaled matrix over its trace.
    pub min_eigen_ratio: f64,
}

/// Distances from a target `g` to the nested spans, for every degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceCurve {
    /// `log ||g||`.
    pub log_norm: f64,
    /// `dist(g, span{z^j f : j <= N}) / ||g||` for `N = 0..=degree`.
    pub relative: Vec<f64>,
    /// `||G a - b|| / ||b||` of the full solve.
    pub residual: f64,
    /// Total of the atom cross-term bounds relative to `||g|| ||f||` (the
    /// atoms' contribution to `<g, z^j f>` is omitted; the target has no
    /// atoms of its own there).
    pub log_cross_bound: f64,
    pub ridge: f64,
    pub condition: f64,
}

impl DistanceCurve {
    /// `dist(g, span{z^j f : j <= n})`.
    pub fn distance(&self, n: usize) -> f64 {
        self.relative[n] * self.log_norm.exp()
    }

    /// Writes `N,d_N,d_N_relative` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let io = |e: csv::Error| Error::Csv {
            path: "<distances>".into(),
            message: e.to_string(),
        };
        w.write_record(["n", "log_d_n", "d_n_relative"]).map_err(io)?;
        for (n, r) in self.relative.iter().enumerate() {
            w.write_record([
                n.to_string(),
                format!("{:.17e}", r.ln() + self.log_norm),
                format!("{r:.17e}"),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<distances>".into(),
            source: e,
        })
    }
}

/// Unit phases `e^{i k phi_a}` of a ring, `k = 0..=kmax`.
fn ring_phases(m: usize, a: usize, kmax: usize) -> Vec<Complex64> {
    let phi = 2.0 * PI * (a as f64 + 0.5) / m as f64;
    let step = Complex64::from_polar(1.0, phi);
    let mut out = Vec::with_capacity(kmax + 1);
    let mut p = Complex64::new(1.0, 0.0);
    for k in 0..=kmax {
        // Re-anchor periodically so rounding does not accumulate.
        if k % 32 == 0 {
            p = Complex64::from_polar(1.0, k as f64 * phi);
        }
        out.push(p);
        p *= step;
    }
    out
}

fn binomials(n: usize) -> Vec<Vec<f64>> {
    let mut b = vec![vec![1.0]];
    for i in 1..=n {
        let mut row = vec![1.0; i + 1];
        for j in 1..i {
            row[j] = b[i - 1][j - 1] + b[i - 1][j];
        }
        b.push(row);
    }
    b
}

/// `sum_{p <= order} binom(j, p) c^{j-p} d^p` as coefficients of `d^p`.
fn power_expansion(j: usize, order: usize, binom: &[Vec<f64>], c_pow: &[Complex64]) -> Vec<Complex64> {
    (0..=order)
        .map(|p| {
            if p > j {
                Complex64::new(0.0, 0.0)
            } else {
                binom[j][p] * c_pow[j - p]
            }
        })
        .collect()
}

impl GramSystem {
    pub fn new(f: &Sampled, degree: usize) -> Result<GramSystem> {
        let dim = degree + 1;
        let scale = f.log_scale();
        if !scale.is_finite() {
            return Err(usage("generator vanishes on the whole mesh"));
        }
        // Ring contributions through the angular Fourier sums
        // C(k) = sum_a |f_a|^2 w e^{i k phi_a}.
        let partial: Vec<DMatrix<Complex64>> = f
            .rings
            .par_iter()
            .map(|ring| {
                let m = ring.values.len();
                let mut c = vec![Complex64::new(0.0, 0.0); dim];
                for (a, v) in ring.values.iter().enumerate() {
                    let q = (ring.log_w + 2.0 * v.re - scale).exp();
                    if q == 0.0 {
                        continue;
                    }
                    for (k, ph) in ring_phases(m, a, degree).into_iter().enumerate() {
                        c[k] += q * ph;
                    }
                }
                let mut rp = vec![1.0; 2 * dim];
                for i in 1..2 * dim {
                    rp[i] = rp[i - 1] * ring.r;
                }
                DMatrix::from_fn(dim, dim, |j, l| {
                    let ck = if l >= j { c[l - j] } else { c[j - l].conj() };
                    rp[j + l] * ck
                })
            })
            .collect();
        let mut gram = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
        for p in &partial {
            gram += p;
        }
        // Atoms: <z^l f, z^j f> = E[z^l conj(z)^j] with z = c + d expanded.
        let max_order = f.atoms.iter().map(|a| a.order).max().unwrap_or(0);
        let binom = binomials(degree.max(max_order));
        for atom in &f.atoms {
            let w = (atom.log_mass - scale).exp();
            if w == 0.0 {
                continue;
            }
            let p1 = atom.order + 1;
            let mut c_pow = vec![Complex64::new(1.0, 0.0); dim];
            for i in 1..dim {
                c_pow[i] = c_pow[i - 1] * atom.center;
            }
            let exps: Vec<Vec<Complex64>> = (0..dim)
                .map(|j| power_expansion(j, atom.order, &binom, &c_pow))
                .collect();
            for j in 0..dim {
                for l in j..dim {
                    let mut s = Complex64::new(0.0, 0.0);
                    for p in 0..p1 {
                        for q in 0..p1 {
                            s += exps[l][p] * exps[j][q].conj() * atom.moments[p * p1 + q];
                        }
                    }
                    gram[(j, l)] += w * s;
                    if l != j {
                        gram[(l, j)] += w * s.conj();
                    }
                }
            }
        }
        let max_entry = gram.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let hermitian_defect = (&gram - gram.adjoint()).iter().map(|x| x.norm()).fold(0.0, f64::max) / max_entry;
        let diag = DVector::from_fn(dim, |i, _| gram[(i, i)].re.sqrt());
        if diag.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::IllConditioned {
                condition: f64::INFINITY,
                message: "Gram matrix has a vanishing diagonal entry".into(),
            });
        }
        let scaled = DMatrix::from_fn(dim, dim, |j, l| gram[(j, l)] / (diag[j] * diag[l]));
        let eig = nalgebra::SymmetricEigen::new(scaled.clone()).eigenvalues;
        let trace = dim as f64;
        let (emin, emax) = eig.iter().fold((f64::INFINITY, 0.0f64), |m, &e| (m.0.min(e), m.1.max(e)));
        let mut ridge = 1e-12 * trace / dim as f64;
        let mut tries = 0;
        let chol = loop {
            let mut a = scaled.clone();
            for i in 0..dim {
                a[(i, i)] += ridge;
            }
            if let Some(c) = Cholesky::new(a) {
                break c;
            }
            tries += 1;
            if tries > 6 {
                return Err(Error::IllConditioned {
                    condition: emax / emin.abs().max(f64::MIN_POSITIVE),
                    message: format!("Cholesky failed with ridge up to {ridge:e}"),
                });
            }
            ridge *= 10.0;
        };
        Ok(GramSystem {
            degree,
            gram,
            log_scale: scale,
            ridge,
            chol,
            diag,
            hermitian_defect,
            condition: emax / emin.max(ridge),
            min_eigen_ratio: emin / trace,
        })
    }

    /// Distances from `g` to every leading span. The leading block of the
    /// Cholesky factor factors the leading block of the matrix, so one
    /// forward solve gives all degrees at once.
    pub fn distances(&self, f: &Sampled, g: &Sampled) -> Result<DistanceCurve> {
        if !f.same_mesh(g) {
            return Err(usage("target and generator must be sampled on the same rings"));
        }
        let dim = self.degree + 1;
        let half = 0.5 * self.log_scale;
        let g_norm2 = g.log_norm2();
        let gs = 0.5 * g_norm2;
        // b[j] = <g, z^j f> in units of e^{half + gs}.
        let partial: Vec<DVector<Complex64>> = f
            .rings
            .par_iter()
            .zip(g.rings.par_iter())
            .map(|(rf, rg)| {
                let m = rf.values.len();
                let mut b = DVector::from_element(dim, Complex64::new(0.0, 0.0));
                let mut rp = 1.0;
                let mut rpow = vec![0.0; dim];
                for r in rpow.iter_mut() {
                    *r = rp;
                    rp *= rf.r;
                }
                for (a, (vf, vg)) in rf.values.iter().zip(&rg.values).enumerate() {
                    let l = *vg + vf.conj();
                    let mag = (rf.log_w + l.re - half - gs).exp();
                    if mag == 0.0 {
                        continue;
                    }
                    let u = Complex64::from_polar(mag, l.im);
                    for (j, ph) in ring_phases(m, a, self.degree).into_iter().enumerate() {
                        b[j] += u * ph.conj() * rpow[j];
                    }
                }
                b
            })
            .collect();
        let mut b = DVector::from_element(dim, Complex64::new(0.0, 0.0));
        for p in &partial {
            b += p;
        }
        let bs = DVector::from_fn(dim, |j, _| b[j] / self.diag[j]);
        let l = self.chol.l();
        let y = l
            .solve_lower_triangular(&bs)
            .ok_or_else(|| usage("triangular solve failed"))?;
        let mut acc = 0.0;
        let mut relative = Vec::with_capacity(dim);
        for j in 0..dim {
            acc += y[j].norm_sqr();
            relative.push((1.0 - acc).max(0.0).sqrt());
        }
        let x = self.chol.solve(&bs);
        let mut a = self.chol.l() * self.chol.l().adjoint();
        for i in 0..dim {
            a[(i, i)] -= Complex64::new(self.ridge, 0.0);
        }
        let residual = (&a * &x - &bs).norm() / bs.norm().max(f64::MIN_POSITIVE);
        let mut cross = LseAccumulator::new();
        for at in &f.atoms {
            cross.push(LogReal::exp(at.log_cross_bound));
        }
        let log_cross = cross.value().ln().unwrap_or(f64::NEG_INFINITY) - half - gs;
        Ok(DistanceCurve {
            log_norm: gs,
            relative,
            residual,
            log_cross_bound: log_cross,
            ridge: self.ridge,
            condition: self.condition,
        })
    }
}

/// `d_N = dist(1, span{z^j f : j <= N})` for `N = 0..=degree`; `one` is the
/// constant sampled on the same rings.
pub fn cyclicity_distance(f: &Sampled, one: &Sampled, degree: usize) -> Result<DistanceCurve> {
    GramSystem::new(f, degree)?.distances(f, one)
}

/// `dist(g, span{z^j f : j <= degree})`.
pub fn subspace_distance(g: &Sampled, f: &Sampled, degree: usize) -> Result<f64> {
    let c = GramSystem::new(f, degree)?.distances(f, g)?;
    Ok(c.distance(degree))
}

/// Coefficients `c_n`, `n = -m..=m`, of a two-sided sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct BilateralSequence {
    pub m: i64,
    pub coeffs: Vec<Complex64>,
}

impl BilateralSequence {
    pub fn unit(m: i64, n: i64) -> BilateralSequence {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); (2 * m + 1) as usize];
        coeffs[(n + m) as usize] = Complex64::new(1.0, 0.0);
        BilateralSequence { m, coeffs }
    }
}

/// `(sum |c_n|^2 Omega(n))^{1/2}`, with `Omega(n) = 1/Omega(-n-1)` for `n < 0`.
pub fn bilateral_norm(seq: &BilateralSequence, moments: &MomentSequence) -> Result<LogReal> {
    if seq.coeffs.len() as i64 != 2 * seq.m + 1 {
        return Err(usage("bilateral sequence needs 2m + 1 coefficients"));
    }
    let mut acc = LseAccumulator::new();
    for (i, c) in seq.coeffs.iter().enumerate() {
        if *c == Complex64::new(0.0, 0.0) {
            continue;
        }
        if !(c.re.is_finite() && c.im.is_finite()) {
            return Err(usage("bilateral coefficients must be finite"));
        }
        let n = i as i64 - seq.m;
        acc.push(LogReal::exp(2.0 * c.norm().ln()) * moments.get(n)?);
    }
    Ok(acc.value().abs_powf(0.5))
}

/// `z -> (1 - f(z)/f(lambda)) / (lambda - z)`, with the value `f'/f(lambda)`
/// at `z = lambda`.
pub struct Resolvent<'a, G: Generator + ?Sized> {
    pub f: &'a G,
    pub lambda: Complex64,
    log_f_lambda: Complex64,
    dlog_lambda: Complex64,
}

/// The resolvent representative of `1 + [f]` at `lambda`.
pub fn resolvent_vector<G: Generator + ?Sized>(f: &G, lambda: Complex64) -> Result<Resolvent<'_, G>> {
    let l = f.log_f(lambda)?;
    if !l.re.is_finite() {
        return Err(Error::NonFinite {
            value: l.re,
            re: lambda.re,
            im: lambda.im,
        });
    }
    Ok(Resolvent {
        f,
        lambda,
        log_f_lambda: l,
        dlog_lambda: f.dlog_f(lambda)?,
    })
}

/// `log(1 - e^d)` on the principal branch, accurate for small `d`.
pub fn log_one_minus_exp(d: Complex64) -> Complex64 {
    let v = if d.norm() < 1e-4 {
        -(d + d * d / 2.0 + d * d * d / 6.0 + d * d * d * d / 24.0)
    } else if d.re > 1.0 {
        return d + (d.exp().inv() - 1.0).ln();
    } else {
        Complex64::new(1.0, 0.0) - d.exp()
    };
    v.ln()
}

impl<G: Generator + ?Sized> Resolvent<'_, G> {
    /// The value at `z` as a complex logarithm.
    pub fn log_eval(&self, z: Complex64) -> Result<Complex64> {
        let dz = self.lambda - z;
        if dz == Complex64::new(0.0, 0.0) {
            return Ok(self.dlog_lambda.ln());
        }
        let d = self.f.log_f(z)? - self.log_f_lambda;
        Ok(log_one_minus_exp(d) - dz.ln())
    }

    pub fn eval(&self, z: Complex64) -> Result<Complex64> {
        Ok(self.log_eval(z)?.exp())
    }
}

/// Pre-evaluated nodes of one mesh for the double integral.
struct Nodes {
    z: Vec<Complex64>,
    /// `log(quadrature weight * omega)`.
    lw: Vec<f64>,
    lf: Vec<Complex64>,
    dlf: Vec<Complex64>,
}

fn nodes_of<G: Generator + ?Sized>(weight: &RadialWeight, rings: &[Ring], f: &G) -> Result<Nodes> {
    let pts: Vec<(Complex64, f64)> = rings
        .iter()
        .flat_map(|r| (0..r.m).map(move |a| (r.point(a), r.log_w)))
        .map(|(z, lw)| (z, lw + weight.log_omega(1.0 - z.norm())))
        .collect();
    let vals = pts
        .par_iter()
        .map(|&(z, _)| -> Result<(Complex64, Complex64)> { Ok((f.log_f(z)?, f.dlog_f(z)?)) })
        .collect::<Result<Vec<_>>>()?;
    Ok(Nodes {
        z: pts.iter().map(|p| p.0).collect(),
        lw: pts.iter().map(|p| p.1).collect(),
        lf: vals.iter().map(|v| v.0).collect(),
        dlf: vals.iter().map(|v| v.1).collect(),
    })
}

/// `log |f(a)|^{-2} |f(a) - f(b)|^2 / |a - b|^2`.
pub fn log_quotient(la: Complex64, lb: Complex64, dla: Complex64, a: Complex64, b: Complex64) -> f64 {
    let d = b - a;
    if d.norm() < 1e-14 {
        return 2.0 * dla.norm().ln();
    }
    2.0 * (log_one_minus_exp(lb - la).re - d.norm().ln())
}

/// `log int_outer omega(a) int_inner |f(a)|^{-2} |f(a) - f(b)|^2 / |a-b|^2 omega(b)`.
fn double_integral(outer: &Nodes, inner: &Nodes) -> f64 {
    let per: Vec<LseAccumulator> = (0..outer.z.len())
        .into_par_iter()
        .map(|i| {
            let mut acc = LseAccumulator::new();
            if outer.lw[i] == f64::NEG_INFINITY {
                return acc;
            }
            for j in 0..inner.z.len() {
                let q = log_quotient(outer.lf[i], inner.lf[j], outer.dlf[i], outer.z[i], inner.z[j]);
                acc.push(LogReal::exp(outer.lw[i] + inner.lw[j] + q));
            }
            acc
        })
        .collect();
    let mut total = LseAccumulator::new();
    for a in &per {
        total.merge(a);
    }
    total.value().ln().unwrap_or(f64::NEG_INFINITY)
}

/// The double integral
/// `A = int omega(lambda) ||(1 - f/f(lambda))/(lambda - z)||^2 dm(lambda)`
/// in two orderings: resolvent norms over `lambda` on `mesh_a` with the inner
/// integral on `mesh_b`, and the same integrand with the roles of the meshes
/// exchanged. Agreement within `tolerance` (relative) is the check.
pub fn theorem3_a_check<G: Generator + ?Sized>(
    weight: &RadialWeight,
    f: &G,
    mesh_a: &[Ring],
    mesh_b: &[Ring],
    tolerance: f64,
) -> Result<Report> {
    let na = nodes_of(weight, mesh_a, f)?;
    let nb = nodes_of(weight, mesh_b, f)?;
    // Resolvent norms per lambda, then the outer integral.
    let log_a1 = double_integral(&na, &nb);
    // Same integrand, lambda on the inner mesh.
    let swapped: Vec<LseAccumulator> = (0..na.z.len())
        .into_par_iter()
        .map(|j| {
            let mut acc = LseAccumulator::new();
            for i in 0..nb.z.len() {
                let q = log_quotient(nb.lf[i], na.lf[j], nb.dlf[i], nb.z[i], na.z[j]);
                acc.push(LogReal::exp(nb.lw[i] + na.lw[j] + q));
            }
            acc
        })
        .collect();
    let mut t = LseAccumulator::new();
    for a in &swapped {
        t.merge(a);
    }
    let log_a2 = t.value().ln().unwrap_or(f64::NEG_INFINITY);
    let rel = if log_a1 == f64::NEG_INFINITY && log_a2 == f64::NEG_INFINITY {
        0.0
    } else {
        ((log_a1 - log_a2).abs()).exp_m1()
    };
    let mut rep = Report::new("resolvent-integral")
        .param("log_a_lambda_outer", log_a1)
        .param("log_a_z_outer", log_a2)
        .param("nodes_a", na.z.len())
        .param("nodes_b", nb.z.len())
        .param("tolerance", tolerance);
    rep.push(Check::new(
        "finite",
        log_a1 < f64::INFINITY && log_a2 < f64::INFINITY && !log_a1.is_nan() && !log_a2.is_nan(),
        -log_a1.max(log_a2),
        "log A",
    ));
    rep.push(Check::new(
        "orderings",
        rel <= tolerance,
        tolerance - rel,
        format!("relative difference {rel:.3e}"),
    ));
    Ok(rep)
}
