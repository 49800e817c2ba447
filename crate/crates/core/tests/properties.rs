use std::f64::consts::PI;

use berglab::blocks::f_alpha;
use berglab::convexreg::{regularize, sample_big_q};
use berglab::cyclolab::{cyclicity_distance, disk_mesh_rings, inner_product, Polynomial, Sampled};
use berglab::lattice::{
    blaschke_eval, build_level_at, pseudo_hyperbolic, subset_blaschke, SampleRule, SubsetMask,
};
use berglab::numerics::{disk_integral, log_sum_exp, wrap_phase, DiskMesh, LogComplex, LogReal};
use berglab::weights::{MomentSequence, RadialWeight};
use num_complex::Complex64;
use proptest::prelude::*;

fn disk_point() -> impl Strategy<Value = Complex64> {
    (0.0f64..0.999, -PI..PI).prop_map(|(r, t)| Complex64::from_polar(r, t))
}

fn coeffs(len: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b)| Complex64::new(a, b)), 1..=len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_sum_exp_is_permutation_invariant(
        logs in prop::collection::vec(-800.0f64..800.0, 2..40),
        seed in any::<u64>(),
    ) {
        let terms: Vec<LogReal> = logs.iter().map(|&l| LogReal::exp(l)).collect();
        let mut shuffled = terms.clone();
        // Fisher-Yates with a simple LCG keyed by the seed.
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = log_sum_exp(&terms).unwrap().log_magnitude;
        let b = log_sum_exp(&shuffled).unwrap().log_magnitude;
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        let (l, r) = terms.split_at(terms.len() / 2);
        let nested = log_sum_exp(&[log_sum_exp(l).unwrap(), log_sum_exp(r).unwrap()]).unwrap().log_magnitude;
        prop_assert!((a - nested).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn log_real_round_trip(x in prop::num::f64::NORMAL | prop::num::f64::ZERO) {
        let v = LogReal::from_f64(x);
        prop_assert_eq!(v.sign == 0, v.log_magnitude == f64::NEG_INFINITY);
        let back = v.to_f64();
        // Rounding of the logarithm is amplified by |ln x| on the way back.
        let tol = 2.0 * f64::EPSILON * (1.0 + x.abs().ln().abs());
        prop_assert!(back == x || (back - x).abs() <= tol * x.abs(), "{} {}", x, back);
    }

    #[test]
    fn log_complex_product_adds(a in -500.0f64..500.0, b in -500.0f64..500.0, p in -10.0f64..10.0, q in -10.0f64..10.0) {
        let m = LogComplex::new(a, p) * LogComplex::new(b, q);
        prop_assert_eq!(m.log_magnitude, a + b);
        prop_assert!((wrap_phase(m.phase - (p + q))).abs() < 1e-12);
        prop_assert!(m.phase > -PI && m.phase <= PI);
    }

    #[test]
    fn disk_integral_is_monotone(n in 0i32..30, c1 in 0.1f64..2.0, dc in 0.0f64..2.0) {
        let mesh = DiskMesh::uniform(10, 2, 8);
        let f = |c: f64| move |p: &berglab::numerics::DiskPoint| LogReal::from_f64(c * p.z.norm_sqr().powi(n));
        let a = disk_integral(f(c1), &mesh).unwrap();
        let b = disk_integral(f(c1 + dc), &mesh).unwrap();
        prop_assert!(a <= b);
    }

    #[test]
    fn theta_grows_towards_the_boundary(c in 0.05f64..1.0, beta in 0.2f64..1.5, s in 1e-4f64..0.9) {
        let w = RadialWeight::double_exp(c, beta, 0.5).unwrap();
        prop_assert!(w.theta_f64(s / 2.0) >= w.theta_f64(s));
        prop_assert!(w.theta_f64(s) > 0.0);
    }

    #[test]
    fn blaschke_modulus_at_most_one(
        pts in prop::collection::vec(disk_point(), 1..12),
        z in (0.0f64..1.0, -PI..PI).prop_map(|(r, t)| Complex64::from_polar(r, t)),
    ) {
        let b = blaschke_eval(&pts, z).unwrap();
        prop_assert!(b.log_magnitude <= 1e-12);
    }

    #[test]
    fn pseudo_hyperbolic_is_symmetric(z in disk_point(), w in disk_point()) {
        let a = pseudo_hyperbolic(z, w).unwrap();
        let b = pseudo_hyperbolic(w, z).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((0.0..1.0).contains(&a));
    }

    #[test]
    fn lattice_count_and_sample_disks(kappa in 0.01f64..0.99, x in 2.0f64..9.0, seed in any::<u64>()) {
        prop_assume!(kappa * x.exp() >= 1.0);
        let l = build_level_at(1, kappa, x, &SampleRule::Perturbed { seed }).unwrap();
        let q = kappa / l.delta_n;
        prop_assert!(l.n_nodes as f64 <= q && q < l.n_nodes as f64 + 1.0);
        for (z, w) in l.sample_points.iter().zip(&l.nodes) {
            prop_assert!((z - w).norm() < l.delta_n * l.delta_n);
        }
        let full = SubsetMask::full(&l);
        let zz = Complex64::new(0.3, -0.2);
        prop_assert_eq!(subset_blaschke(&l, &full, zz), blaschke_eval(&l.sample_points, zz).unwrap());
        prop_assert!(full.sigma == 0.0);
    }

    #[test]
    fn power_function_bounded_by_distance(alpha in 0.1f64..300.0, z in disk_point()) {
        let f = f_alpha(alpha, z).unwrap();
        let bound = -alpha * (1.0 - z.norm()).ln();
        prop_assert!(f.log_magnitude <= bound + 1e-12 * bound.abs().max(1.0));
        let re = f.re();
        prop_assert!(re <= f.abs());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn moments_decrease_and_are_log_convex(c in 0.1f64..1.0, beta in 0.3f64..1.0) {
        let w = RadialWeight::double_exp(c, beta, 0.5).unwrap();
        let m = MomentSequence::compute(&w, 12, &DiskMesh::uniform(40, 4, 1)).unwrap();
        let l = &m.log_values;
        for n in 1..l.len() {
            prop_assert!(l[n] < l[n - 1]);
        }
        for n in 1..l.len() - 1 {
            prop_assert!(2.0 * l[n] <= l[n - 1] + l[n + 1] + 1e-8);
        }
        for n in 0..l.len() as i64 {
            let back = m.get(-n - 1).unwrap().log_magnitude;
            prop_assert_eq!(back, -l[n as usize]);
        }
    }

    #[test]
    fn regularized_minorant_properties(c in 0.1f64..1.0, beta in 0.3f64..1.0, eps0 in 0.2f64..0.9) {
        let w = RadialWeight::double_exp(c, beta, eps0).unwrap();
        let samples = sample_big_q(&w, 40.0, 401).unwrap();
        let r = regularize(&samples, eps0);
        prop_assume!(r.is_ok());
        let r = r.unwrap();
        prop_assert!(r.q.is_convex(1e-9));
        prop_assert!(r.q.is_nondecreasing());
        for &(x, q) in &samples {
            prop_assert!(r.q_at(x) <= q * (1.0 + 1e-9));
        }
        for &x in r.q.xs() {
            let q = r.q_at(x);
            prop_assert!(r.q_prime(x) <= q * q / 2.0 * (1.0 + 1e-9));
        }
        for &x in &r.touch_points {
            let big = samples.iter().find(|p| p.0 == x).unwrap().1;
            prop_assert!((r.q_at(x) - big).abs() <= 1e-9 * big);
            prop_assert!(r.q_prime(x) >= eps0 * r.q_at(x) / 2.0 * (1.0 - 1e-9));
        }
        // Idempotence: the output's own samples are left unchanged.
        let own: Vec<(f64, f64)> = samples.iter().map(|&(x, _)| (x, r.q_at(x))).collect();
        let again = regularize(&own, eps0).unwrap();
        for &(x, q) in &own {
            prop_assert!((again.q_at(x) - q).abs() <= 1e-9 * q.max(1.0));
        }
    }

    #[test]
    fn inner_product_symmetry_and_distance_bounds(f in coeffs(4), g in coeffs(4)) {
        prop_assume!(f[0].norm() > 0.05);
        let w = RadialWeight::single_exp(1.5, 0.5).unwrap();
        let mesh = DiskMesh::uniform(10, 2, 32);
        let (pf, pg) = (Polynomial(f), Polynomial(g));
        let a = inner_product(&w, &pf, &pg, &mesh).unwrap().to_complex();
        let b = inner_product(&w, &pg, &pf, &mesh).unwrap().to_complex();
        prop_assert!((a - b.conj()).norm() <= 1e-12 * a.norm().max(1e-300));
        let rings = disk_mesh_rings(&mesh, 0.0).unwrap();
        let sf = Sampled::from_generator(&w, &rings, &pf).unwrap();
        let sg = Sampled::from_generator(&w, &rings, &pg).unwrap();
        let curve = cyclicity_distance(&sf, &sg, 6).unwrap();
        prop_assert!(curve.relative.iter().all(|&d| (-1e-12..=1.0 + 1e-9).contains(&d)));
        prop_assert!(curve.relative.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-9) + 1e-12));
    }
}
