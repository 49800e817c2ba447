use berglab::cyclolab::{
    bilateral_norm, cyclicity_distance, disk_mesh_rings, inner_product, resolvent_vector, subspace_distance,
    theorem3_a_check, BilateralSequence, Polynomial, Sampled,
};
use berglab::numerics::DiskMesh;
use berglab::weights::{MomentSequence, RadialWeight};
use num_complex::Complex64;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn mesh() -> DiskMesh {
    DiskMesh {
        gl_nodes: 8,
        ..DiskMesh::uniform(12, 4, 64)
    }
}

fn sampled(w: &RadialWeight, p: &Polynomial) -> Sampled {
    Sampled::from_generator(w, &disk_mesh_rings(&mesh(), 0.0).unwrap(), p).unwrap()
}

fn ip(w: &RadialWeight, f: &Polynomial, g: &Polynomial) -> Complex64 {
    inner_product(w, f, g, &mesh()).unwrap().to_complex()
}

#[test]
fn monomials_are_orthogonal_with_unit_weight_moments() {
    let w = RadialWeight::unit();
    for j in 0..6 {
        for l in 0..6 {
            let v = ip(&w, &Polynomial::monomial(j), &Polynomial::monomial(l));
            if j == l {
                // Area measure normalized to mass one: Omega(n) = 1 / (n + 1).
                let exact = 1.0 / (j as f64 + 1.0);
                assert!((v.re - exact).abs() < 1e-10 * exact && v.im.abs() < 1e-12, "{j}: {v}");
            } else {
                assert!(v.norm() < 1e-12, "{j} {l}: {v}");
            }
        }
    }
}

#[test]
fn diagonal_matches_moment_sequence_on_a_finer_mesh() {
    let w = RadialWeight::double_exp(0.2, 0.52, 0.5).unwrap();
    let fine = mesh().refined();
    let moments = MomentSequence::compute(&w, 5, &fine).unwrap();
    for n in 0..=5usize {
        let p = Polynomial::monomial(n);
        let v = ip(&w, &p, &p);
        let m = moments.get(n as i64).unwrap().to_f64();
        assert!((v.re / m - 1.0).abs() < 1e-6, "{n}: {} vs {m}", v.re);
    }
}

#[test]
fn inner_product_is_conjugate_symmetric() {
    let w = RadialWeight::single_exp(1.5, 0.5).unwrap();
    let f = Polynomial(vec![c(1.0, 0.5), c(-0.3, 0.2), c(0.0, 0.7)]);
    let g = Polynomial(vec![c(0.2, -1.0), c(0.9, 0.0), c(0.1, 0.1), c(-0.4, 0.0)]);
    let a = ip(&w, &f, &g);
    let b = ip(&w, &g, &f);
    assert!((a - b.conj()).norm() < 1e-12 * a.norm().max(1e-300), "{a} {b}");
}

#[test]
fn constant_generator_reaches_one_immediately() {
    let w = RadialWeight::single_exp(1.5, 0.5).unwrap();
    let one = sampled(&w, &Polynomial::one());
    let curve = cyclicity_distance(&one, &one, 4).unwrap();
    // The relative ridge of 1e-12 leaves a floor near its square root.
    assert!(curve.relative.iter().all(|d| d.abs() < 1e-5), "{:?}", curve.relative);
}

#[test]
fn z_generator_keeps_the_full_distance() {
    // Every z^{j+1} is orthogonal to 1, so d_N^2 = Omega(0) for all N.
    let w = RadialWeight::single_exp(1.5, 0.5).unwrap();
    let one = sampled(&w, &Polynomial::one());
    let z = sampled(&w, &Polynomial::monomial(1));
    let curve = cyclicity_distance(&z, &one, 6).unwrap();
    let omega0 = ip(&w, &Polynomial::one(), &Polynomial::one()).re;
    for (n, d) in curve.relative.iter().enumerate() {
        assert!((d - 1.0).abs() < 1e-8, "{n}: {d}");
        assert!((curve.distance(n).powi(2) / omega0 - 1.0).abs() < 1e-8);
    }
}

#[test]
fn multiples_of_the_generator_lie_in_the_span() {
    let w = RadialWeight::unit();
    let f = Polynomial(vec![c(1.0, 0.0), c(0.5, 0.0)]);
    let g = Polynomial(vec![c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.5, 0.0)]);
    let (fs, gs) = (sampled(&w, &f), sampled(&w, &g));
    let norm = gs.log_norm2().exp().sqrt();
    assert!(subspace_distance(&gs, &fs, 2).unwrap() < 1e-5 * norm);
    assert!(subspace_distance(&gs, &fs, 1).unwrap() > 1e-3 * norm);
}

#[test]
fn distance_curve_is_monotone_and_below_the_norm() {
    let w = RadialWeight::double_exp(0.2, 0.52, 0.5).unwrap();
    let f = sampled(&w, &Polynomial(vec![c(1.0, 0.0), c(0.5, 0.0)]));
    let one = sampled(&w, &Polynomial::one());
    let curve = cyclicity_distance(&f, &one, 20).unwrap();
    assert!(curve.relative[0] <= 1.0 + 1e-12);
    assert!(curve.relative.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-9)), "{:?}", curve.relative);
    assert!(curve.relative[20] < 0.1 * curve.relative[0]);
    let d = subspace_distance(&one, &f, 20).unwrap();
    assert!(d <= one.log_norm2().exp().sqrt() * (1.0 + 1e-12));
}

#[test]
fn bilateral_units_and_parseval() {
    let w = RadialWeight::single_exp(1.5, 0.5).unwrap();
    let moments = MomentSequence::compute(&w, 8, &mesh()).unwrap();
    let omega = |n: i64| moments.get(n).unwrap().to_f64();
    let e0 = bilateral_norm(&BilateralSequence::unit(3, 0), &moments).unwrap().to_f64();
    assert!((e0 - omega(0).sqrt()).abs() < 1e-14 * e0);
    let em1 = bilateral_norm(&BilateralSequence::unit(3, -1), &moments).unwrap().to_f64();
    assert!((em1 * omega(0).sqrt() - 1.0).abs() < 1e-12);
    let em3 = bilateral_norm(&BilateralSequence::unit(3, -3), &moments).unwrap().to_f64();
    assert!((em3 * omega(2).sqrt() - 1.0).abs() < 1e-12);

    let coeffs = [c(1.0, 0.0), c(-0.5, 0.3), c(0.0, 0.0), c(0.25, -0.75)];
    let mut seq = BilateralSequence {
        m: 3,
        coeffs: vec![c(0.0, 0.0); 7],
    };
    seq.coeffs[3..].copy_from_slice(&coeffs);
    let b = bilateral_norm(&seq, &moments).unwrap().to_f64();
    let p = Polynomial(coeffs.to_vec());
    let direct = ip(&w, &p, &p).re.sqrt();
    assert!((b / direct - 1.0).abs() < 1e-9, "{b} vs {direct}");
}

#[test]
fn resolvent_of_a_constant_vanishes() {
    let one = Polynomial::one();
    let r = resolvent_vector(&one, c(0.3, 0.1)).unwrap();
    for z in [c(0.0, 0.0), c(0.5, -0.2), c(-0.9, 0.1)] {
        assert_eq!(r.eval(z).unwrap(), c(0.0, 0.0));
    }
}

#[test]
fn resolvent_matches_direct_formula_and_is_continuous_at_lambda() {
    let f = Polynomial(vec![c(1.0, 0.0), c(0.5, 0.2), c(0.0, 0.0), c(0.3, 0.0)]);
    let lambda = c(0.4, -0.3);
    let r = resolvent_vector(&f, lambda).unwrap();
    let fl = f.eval(lambda).0;
    for z in [c(0.0, 0.0), c(-0.6, 0.5), c(0.1, 0.8)] {
        let direct = (c(1.0, 0.0) - f.eval(z).0 / fl) / (lambda - z);
        assert!((r.eval(z).unwrap() - direct).norm() < 1e-12 * direct.norm());
    }
    let (p, dp) = f.eval(lambda);
    let at = r.eval(lambda).unwrap();
    assert!((at - dp / p).norm() < 1e-12 * at.norm());
    let h = c(1e-6, 1e-6);
    assert!((r.eval(lambda + h).unwrap() - at).norm() < 1e-5 * at.norm());
}

#[test]
fn resolvent_integral_of_a_constant_is_zero() {
    let w = RadialWeight::unit();
    let rings = disk_mesh_rings(&DiskMesh::uniform(4, 2, 16), 0.0).unwrap();
    let rep = theorem3_a_check(&w, &Polynomial::one(), &rings, &rings, 0.05).unwrap();
    assert!(rep.all_pass());
    assert_eq!(rep.block["log_a_lambda_outer"], serde_json::Value::Null);
}

#[test]
fn resolvent_integral_orderings_and_refinement() {
    let w = RadialWeight::single_exp(1.5, 0.5).unwrap();
    let f = Polynomial(vec![c(1.0, 0.0), c(0.5, 0.0)]);
    let coarse = DiskMesh {
        gl_nodes: 3,
        ..DiskMesh::uniform(5, 2, 24)
    };
    let fine = coarse.refined();
    let rc = disk_mesh_rings(&coarse, 0.0).unwrap();
    let rf = disk_mesh_rings(&fine, 0.0).unwrap();
    let a = theorem3_a_check(&w, &f, &rc, &rf, 0.05).unwrap();
    assert!(a.all_pass(), "{:?}", a.failing());
    let b = theorem3_a_check(&w, &f, &rf, &rf, 0.05).unwrap();
    let la = a.block["log_a_lambda_outer"].as_f64().unwrap();
    let lb = b.block["log_a_lambda_outer"].as_f64().unwrap();
    assert!((la - lb).abs() < 0.05, "{la} vs {lb}");
}
