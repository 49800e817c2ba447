//! Acceptance run: ten criteria, one `PASS`/`FAIL` line each on stderr.
//!
//! A criterion may end red only with the exact set of failing checks listed
//! in `KNOWN_RED`; any other failure, or an error, fails the test.

use std::error::Error as StdError;
use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use berglab::blocks::{f_alpha, lines_l_alpha, verify_lemma_tl2};
use berglab::construct::measure::BulkMesh;
use berglab::construct::pair::{build_interleaved_pair, pair_distances, verify_pair, verify_pair_distances, PairConfig};
use berglab::construct::smooth::{verify_smoothness_functional, SmoothConfig};
use berglab::construct::verify::{verify_concentration, verify_decay, verify_evaluators, verify_norm_integrals};
use berglab::construct::{ConstructConfig, ConstructionState};
use berglab::convexreg::{greatest_convex_minorant, regularize, sample_big_q, verify_lemma51, MinorantResult};
use berglab::cyclolab::{cyclicity_distance, theorem3_a_check, Polynomial, Sampled, StatePower};
use berglab::lattice::{
    build_level_at, comparator_log_abs, comparator_log_at_zero, interpolation_identity, verify_lemma_tl8,
    SampleRule, SubsetMask,
};
use berglab::numerics::{disk_integral, DiskMesh, LogReal, PiecewiseLinear};
use berglab::report::{json_hash, Report};
use berglab::weights::{check_condition_10, geometric_grid, MomentSequence, RadialWeight};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Res<T> = Result<T, Box<dyn StdError>>;

/// Criteria allowed to end red, with their analysed failing checks
/// (`lemma:check`, sorted). The analysis is in the README.
const KNOWN_RED: &[(u32, &[&str])] = &[
    (
        6,
        &[
            "concentration:all-nodes-solved",
            "concentration:ratios",
            "construction:depth-bound-2",
            "construction:peak-targets-2",
            "norm-integrals:a1-trend-below-regime",
        ],
    ),
    (8, &["interleaved-pair:concentration-1-2-ratios"]),
];

struct Outcome {
    failing: Vec<String>,
    detail: String,
}

impl Outcome {
    fn new() -> Outcome {
        Outcome {
            failing: Vec::new(),
            detail: String::new(),
        }
    }

    fn expect(&mut self, name: &str, ok: bool) {
        if !ok {
            self.failing.push(format!("criterion:{name}"));
        }
    }

    fn reports(&mut self, reps: &[Report]) {
        for r in reps {
            for c in r.failing() {
                self.failing.push(format!("{}:{c}", r.lemma));
            }
        }
    }

    fn note(&mut self, s: impl AsRef<str>) {
        if !self.detail.is_empty() {
            self.detail.push_str("; ");
        }
        self.detail.push_str(s.as_ref());
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn default_weight() -> RadialWeight {
    RadialWeight::double_exp(0.2, 0.52, 0.5).unwrap()
}

fn default_minorant(w: &RadialWeight) -> Res<MinorantResult> {
    Ok(regularize(&sample_big_q(w, 100.0, 2001)?, 0.5)?)
}

/// Criterion 1: unit-weight moments by two quadrature routes.
fn quadrature_calibration() -> Res<Outcome> {
    let mut o = Outcome::new();
    let t = Instant::now();
    let w = RadialWeight::unit();
    let mesh = DiskMesh::uniform(40, 4, 1);
    let m = MomentSequence::compute(&w, 64, &mesh)?;
    let radial = t.elapsed().as_secs_f64();
    let mut worst = 0.0f64;
    for (n, l) in m.log_values.iter().enumerate() {
        let exact = 1.0 / (n as f64 + 1.0);
        worst = worst.max((l.exp() / exact - 1.0).abs());
    }
    // Second route: the full two-dimensional rule on |z|^{2n}.
    let mesh2 = DiskMesh::uniform(40, 4, 16);
    let mut worst2 = 0.0f64;
    for n in [0i32, 1, 7, 31, 64] {
        let v = disk_integral(|p| LogReal::from_f64(p.z.norm_sqr().powi(n)), &mesh2)?.to_f64();
        worst2 = worst2.max((v * (n as f64 + 1.0) - 1.0).abs());
    }
    o.expect("moment-relative-error", worst <= 1e-8);
    o.expect("disk-relative-error", worst2 <= 1e-8);
    o.expect("runtime", radial < 5.0);
    o.note(format!("max rel err {worst:.1e} (n <= 64), 2-D route {worst2:.1e}, {radial:.2} s"));
    Ok(o)
}

/// Lower hull at the sample abscissae by exhaustive chords.
fn brute_force_hull(s: &[(f64, f64)]) -> Vec<f64> {
    (0..s.len())
        .map(|i| {
            let mut v = s[i].1;
            for j in 0..i {
                for k in i + 1..s.len() {
                    let t = (s[i].0 - s[j].0) / (s[k].0 - s[j].0);
                    v = v.min(s[j].1 + t * (s[k].1 - s[j].1));
                }
            }
            v
        })
        .collect()
}

/// Criterion 2: regularization of `Lambda = e^x` and a bumped variant, plus
/// the hull against a brute-force oracle.
fn regularization() -> Res<Outcome> {
    let mut o = Outcome::new();
    let grid = |f: &dyn Fn(f64) -> f64| -> Vec<(f64, f64)> {
        (0..=400).map(|i| {
            let x = 40.0 * i as f64 / 400.0;
            (x, f(x))
        })
        .collect()
    };
    let plain = grid(&|x| (0.5 * x).exp());
    // A concave hat on [8, 12] makes Q locally non-convex.
    let bumped = grid(&|x| {
        let u = (x - 10.0) / 2.0;
        (0.5 * x).exp() * (1.0 + 0.3 * (1.0 - u * u).max(0.0))
    });
    let rp = regularize(&plain, 0.5)?;
    let rb = regularize(&bumped, 0.5)?;
    let reps = [verify_lemma51(&rp, &plain), verify_lemma51(&rb, &bumped)];
    o.reports(&reps);
    let bridged = bumped.iter().any(|&(x, q)| rb.q_at(x) < q * (1.0 - 1e-3));
    o.expect("bump-bridged", bridged);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut x = 0.0;
        let s: Vec<(f64, f64)> = (0..200)
            .map(|_| {
                x += rng.gen_range(0.01..1.0);
                (x, rng.gen_range(-5.0..5.0))
            })
            .collect();
        let hull = greatest_convex_minorant(&s)?;
        let oracle = brute_force_hull(&s);
        for (p, v) in s.iter().zip(&oracle) {
            worst = worst.max((hull.eval(p.0) - v).abs());
        }
    }
    o.expect("hull-oracle", worst <= 1e-12 * 5.0);
    o.note(format!("a-f pass on e^x and bump, hull vs brute force {worst:.1e} on 20x200 samples"));
    Ok(o)
}

/// Criterion 3: real part of `F_alpha`.
fn power_function() -> Res<Outcome> {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts: Vec<Complex64> = (0..1000)
        .map(|_| Complex64::from_polar(rng.gen_range(0.0f64..0.999).sqrt(), rng.gen_range(-PI..PI)))
        .collect();
    let dist = geometric_grid(1e-6, 0.9, 500);
    let mut reps = Vec::new();
    for alpha in [0.7, 3.5, 40.0, 200.0] {
        let mut all = pts.clone();
        all.extend(lines_l_alpha(alpha, &dist));
        let r = verify_lemma_tl2(alpha, 0.1, &all)?;
        // The lines L_alpha meet the disk only for alpha > 2.
        let names: &[&str] = if alpha > 2.0 { &["a", "c"] } else { &["a"] };
        for &name in names {
            let ch = r.check(name).expect("present");
            if !ch.pass {
                o.failing.push(format!("{}:{name}", r.lemma));
            }
        }
        reps.push(r);
    }
    // Second route for (a): principal power from num-complex.
    let mut worst = 0.0f64;
    for alpha in [0.7, 3.5] {
        for &z in &pts {
            let direct = (c(1.0, 0.0) - z).powf(-alpha);
            let f = f_alpha(alpha, z)?;
            worst = worst.max((f.re().to_f64() - direct.re).abs() / direct.norm());
        }
    }
    o.expect("direct-power", worst <= 1e-12);
    // (d) on a polar grid of R_phi.
    let mut grid = Vec::new();
    for i in 0..60 {
        let r = 0.5 + 0.499 * (i as f64 + 0.5) / 60.0;
        for j in 0..200 {
            grid.push(Complex64::from_polar(r, -PI + 2.0 * PI * (j as f64 + 0.5) / 200.0));
        }
    }
    let rd = verify_lemma_tl2(200.0, 0.1, &grid)?;
    let d = rd.check("d").expect("present");
    if !d.pass {
        o.failing.push(format!("{}:d", rd.lemma));
    }
    o.note(format!(
        "(a) within 1e-12 of |F| for alpha in {{0.7,3.5,40,200}} on 1000 points, (c) on L_alpha for alpha > 2, \
         direct power {worst:.1e}, (d) margin {:.2} on {} points",
        d.margin, rd.block["points_in_region"]
    ));
    Ok(o)
}

/// Criterion 4: lattice Blaschke products at depth 12.
fn lattice_blaschke() -> Res<Outcome> {
    let mut o = Outcome::new();
    let kappa = (-5.0f64).exp();
    let centers = build_level_at(1, kappa, 12.0, &SampleRule::Centers)?;
    let rc = verify_lemma_tl8(&centers, 0.5, 0.01)?;
    let gap = rc.block["max_log_gap_to_comparator"].as_f64().unwrap_or(f64::INFINITY);
    o.expect("centers-equal-comparator", gap <= 1e-10);
    let a0 = comparator_log_at_zero(&centers);
    let a0_direct = comparator_log_abs(&centers, c(0.0, 0.0));
    o.expect("comparator-at-zero-routes", (a0 - a0_direct).abs() <= 1e-12);
    o.expect("log-a0-near-minus-kappa", (a0 + kappa).abs() <= 0.01);
    let perturbed = build_level_at(1, kappa, 12.0, &SampleRule::Perturbed { seed: 7 })?;
    let rp = verify_lemma_tl8(&perturbed, 0.5, 0.02)?;
    o.reports(&[rc, rp]);
    o.note(format!(
        "N = {}, log|A(0)| + kappa = {:.1e}, centers gap {gap:.1e}, perturbed eps 0.02 at r = 0.5",
        centers.n_nodes,
        a0 + kappa
    ));
    Ok(o)
}

fn residue(depths: &[f64], p: &Polynomial, r: f64, mult: usize) -> Res<Report> {
    let levels = depths
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let l = build_level_at(i + 1, 0.9, x, &SampleRule::Centers)?;
            let m = SubsetMask::full(&l);
            Ok((l, m))
        })
        .collect::<berglab::Result<Vec<_>>>()?;
    Ok(interpolation_identity(&levels, |w| p.eval(w).0, c(0.1, 0.05), r, mult)?)
}

fn residual(r: &Report) -> f64 {
    r.block["residual"].as_f64().unwrap_or(f64::INFINITY)
}

/// Criterion 5: residue identity with trapezoid refinement.
fn interpolation() -> Res<Outcome> {
    let mut o = Outcome::new();
    let polys = [
        Polynomial(vec![c(1.0, 0.0), c(0.5, -0.25), c(0.0, 0.0), c(0.2, 0.1)]),
        Polynomial::one(),
        Polynomial(vec![c(1.0, 0.0), c(0.0, 0.0), c(-0.3, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 1.0)]),
    ];
    let depths = [1.7, 5.0];
    let mut worst = 0.0f64;
    let mut shrink = f64::INFINITY;
    for p in &polys {
        let r8 = residue(&depths, p, 0.9, 8)?;
        let r1 = residual(&residue(&depths, p, 0.9, 1)?);
        let r2 = residual(&residue(&depths, p, 0.9, 2)?);
        worst = worst.max(residual(&r8));
        shrink = shrink.min(r1 / r2.max(f64::MIN_POSITIVE));
    }
    o.expect("residual-below-1e-8", worst < 1e-8);
    o.expect("shrink-1x-to-2x", shrink >= 4.0);
    // One level alone: the trapezoid rule aliases at (r_n / r)^m.
    let single = residue(&[1.7], &polys[0], 0.9, 8)?;
    let l = build_level_at(1, 0.9, 1.7, &SampleRule::Centers)?;
    let m = single.block["contour_points"].as_f64().unwrap_or(0.0);
    let predicted = ((1.0 - l.delta_n) / 0.9f64).powf(m);
    let ratio = residual(&single) / predicted;
    o.expect("single-level-matches-aliasing", (0.1..10.0).contains(&ratio));
    o.note(format!(
        "two levels: max residual {worst:.1e} at 8x, 1x/2x shrink >= {shrink:.1e}; \
         one level: {:.1e} vs aliasing {predicted:.1e}",
        residual(&single)
    ));
    Ok(o)
}

/// Criterion 6: the default two-level construction.
fn construction(st: &ConstructionState, w: &RadialWeight, m: &MinorantResult, build_s: f64) -> Res<Outcome> {
    let mut o = Outcome::new();
    let t = Instant::now();
    let mut reps = vec![st.summary()];
    for i in 0..st.levels.len() {
        reps.push(verify_concentration(st, i, 10.0)?);
    }
    reps.push(verify_decay(st)?);
    reps.push(verify_evaluators(st, 7, 10_000)?);
    reps.push(verify_norm_integrals(st, &BulkMesh::default(), 10.0)?);
    let again = ConstructionState::build(w.clone(), m.clone(), ConstructConfig::default())?;
    let same = json_hash(st)? == json_hash(&again)?;
    o.expect("deterministic-hash", same);
    let total = build_s + t.elapsed().as_secs_f64();
    o.expect("runtime", total < 600.0);
    let dropped: usize = reps
        .iter()
        .filter(|r| r.lemma == "concentration")
        .filter_map(|r| r.block.get("dropped_nodes").and_then(|v| v.as_u64()))
        .sum::<u64>() as usize;
    o.reports(&reps);
    o.note(format!(
        "{} levels, hash stable = {same}, dropped nodes {dropped}, {total:.0} s",
        st.levels.len()
    ));
    Ok(o)
}

/// Criterion 7: non-cyclicity of the constructed half against the constant.
fn non_cyclicity(st: &ConstructionState, w: &RadialWeight) -> Res<Outcome> {
    let mut o = Outcome::new();
    let bulk = BulkMesh::default();
    let f = st.sample_half(&bulk, 2, ConstructConfig::default().mesh_refine)?;
    let rings = bulk.rings(f.s_floor)?;
    let one = Sampled::from_generator(w, &rings, &Polynomial::one())?;
    let ctrl = Sampled::from_generator(w, &rings, &Polynomial(vec![c(1.0, 0.0), c(0.5, 0.0)]))?;
    let curve = cyclicity_distance(&f, &one, 200)?;
    let control = cyclicity_distance(&ctrl, &one, 200)?;
    let min = curve.relative.iter().copied().fold(f64::INFINITY, f64::min);
    let (c0, cn) = (control.relative[0], control.relative[200]);
    o.expect("bounded-below-0.75", min >= 0.75);
    o.expect("control-decays", cn < c0 / 10.0);
    o.note(format!("min d_N/||1|| = {min:.4} over N <= 200, control {c0:.3} -> {cn:.1e}"));
    Ok(o)
}

/// Criterion 8: the interleaved pair.
fn pair(w: &RadialWeight, m: &MinorantResult) -> Res<Outcome> {
    let mut o = Outcome::new();
    let (a, b) = build_interleaved_pair(w.clone(), m.clone(), &ConstructConfig::default(), &PairConfig::default())?;
    let rp = verify_pair(&a, &b, 10.0)?;
    let d = pair_distances(&a, &b, &BulkMesh::default(), 100)?;
    let rd = verify_pair_distances(&d, 0.5);
    let min = d.relative.iter().copied().fold(f64::INFINITY, f64::min);
    o.reports(&[rp, rd]);
    o.note(format!("min relative pair distance {min:.3} over N <= 100"));
    Ok(o)
}

/// Criterion 9: smoothness functional and the resolvent integral.
fn smoothness(st: &ConstructionState, w: &RadialWeight) -> Res<Outcome> {
    let mut o = Outcome::new();
    let cfg = SmoothConfig::default();
    o.expect("pair-count", cfg.pairs == 10_000);
    let rs = verify_smoothness_functional(st, &cfg)?;
    let f = StatePower::new(st, 2.0);
    let other = BulkMesh {
        gl_nodes: cfg.grid.gl_nodes + 1,
        ..cfg.grid.clone()
    };
    let ra = cfg.grid.rings(cfg.grid.floor(st))?;
    let rb = other.rings(other.floor(st))?;
    let rt = theorem3_a_check(w, &f, &ra, &rb, 0.05)?;
    o.note(format!(
        "log M = {:.1} on {} pairs, resolvent orderings {:.3} vs {:.3}",
        rs.block["log_m"].as_f64().unwrap_or(f64::NAN),
        rs.block["pairs"],
        rt.block["log_a_lambda_outer"].as_f64().unwrap_or(f64::NAN),
        rt.block["log_a_z_outer"].as_f64().unwrap_or(f64::NAN),
    ));
    o.reports(&[rs, rt]);
    Ok(o)
}

/// Criterion 10: negative controls.
fn negative_controls() -> Res<Outcome> {
    let mut o = Outcome::new();
    let grid = geometric_grid(0.5, 1e-300, 400);
    // omega = exp(-1/(1-t)) has log log 1/omega = log 1/s, which loses
    // against any power s^eps0.
    let eps: Vec<f64> = (1..20).map(|i| 0.05 * i as f64).collect();
    let passing: Vec<f64> = eps
        .iter()
        .copied()
        .filter(|&e| check_condition_10(&RadialWeight::single_exp(1.0, e).unwrap(), &grid, 0.5).pass)
        .collect();
    o.expect("single-exp-rejected", passing.is_empty());
    o.expect("double-exp-accepted", check_condition_10(&default_weight(), &grid, 0.5).pass);

    let s: Vec<(f64, f64)> = (0..201)
        .map(|i| {
            let x = 20.0 * i as f64 / 200.0;
            (x, (0.5 * x).exp())
        })
        .collect();
    let base = regularize(&s, 0.5)?;
    let mut cases: Vec<(&str, MinorantResult)> = Vec::new();
    cases.push(("a", base.corrupted_shift(1e-6)));
    let mut no_threshold = base.clone();
    no_threshold.growth_threshold = None;
    cases.push(("b", no_threshold));
    cases.push(("c", base.corrupted_slope(5)));
    let mut extra_touch = base.clone();
    extra_touch.touch_points.insert(0, 0.1);
    extra_touch.touch_points.sort_by(f64::total_cmp);
    cases.push(("d", extra_touch));
    // A result claiming a larger eps0 than its slopes support.
    let mut eps_claim = base.clone();
    eps_claim.epsilon0 = 0.67;
    cases.push(("e", eps_claim));
    let mut dent = base.clone();
    let mut ys = dent.q.ys().to_vec();
    let x_dent = dent.q.xs()[100];
    ys[100] *= 0.99;
    dent.q = PiecewiseLinear::new(dent.q.xs().to_vec(), ys)?;
    dent.touch_points.retain(|&x| x != x_dent);
    cases.push(("f", dent));

    o.reports(&[verify_lemma51(&base, &s)]);
    let mut summary = Vec::new();
    for (want, corrupted) in &cases {
        let got = verify_lemma51(corrupted, &s);
        let failing = got.failing();
        o.expect(&format!("corruption-{want}-isolated"), failing == [*want]);
        summary.push(format!("{want}->{failing:?}"));
    }
    o.note(format!(
        "condition fails for all {} eps0 in [0.05, 0.95]; corruptions {}",
        eps.len(),
        summary.join(" ")
    ));
    Ok(o)
}

fn emit(id: u32, title: &str, res: Res<Outcome>, unexpected: &mut Vec<String>) {
    let (line, bad) = match res {
        Ok(mut o) => {
            o.failing.sort();
            if o.failing.is_empty() {
                (format!("criterion {id:>2} PASS {title}: {}", o.detail), false)
            } else {
                let known = KNOWN_RED.iter().find(|(k, _)| *k == id).map(|(_, f)| *f);
                let documented = known.is_some_and(|f| f.iter().copied().eq(o.failing.iter().map(String::as_str)));
                let tag = if documented { "documented red" } else { "unexpected" };
                (
                    format!("criterion {id:>2} FAIL {title} ({tag}): failing {:?}; {}", o.failing, o.detail),
                    !documented,
                )
            }
        }
        Err(e) => (format!("criterion {id:>2} FAIL {title}: error {e}"), true),
    };
    let _ = writeln!(std::io::stderr(), "{line}");
    if bad {
        unexpected.push(line);
    }
}

#[test]
fn acceptance_criteria() {
    let mut bad = Vec::new();
    // libtest prints "test acceptance_criteria ... " without a newline.
    let _ = writeln!(std::io::stderr());
    emit(1, "quadrature calibration", quadrature_calibration(), &mut bad);
    emit(2, "weight regularization", regularization(), &mut bad);
    emit(3, "power-function real part", power_function(), &mut bad);
    emit(4, "lattice Blaschke products", lattice_blaschke(), &mut bad);
    emit(5, "interpolation residue identity", interpolation(), &mut bad);

    let w = default_weight();
    let m = default_minorant(&w).expect("default minorant");
    let t = Instant::now();
    let st = ConstructionState::build(w.clone(), m.clone(), ConstructConfig::default());
    let build_s = t.elapsed().as_secs_f64();
    match st {
        Ok(st) => {
            emit(6, "two-level construction", construction(&st, &w, &m, build_s), &mut bad);
            emit(7, "non-cyclicity of the half", non_cyclicity(&st, &w), &mut bad);
            emit(8, "interleaved pair", pair(&w, &m), &mut bad);
            emit(9, "smoothness functional", smoothness(&st, &w), &mut bad);
        }
        Err(e) => {
            for (id, title) in [(6, "two-level construction"), (7, "non-cyclicity"), (9, "smoothness")] {
                emit(id, title, Err(e.to_string().into()), &mut bad);
            }
            emit(8, "interleaved pair", pair(&w, &m), &mut bad);
        }
    }
    emit(10, "negative controls", negative_controls(), &mut bad);
    assert!(bad.is_empty(), "unexpected failures:\n{}", bad.join("\n"));
}
