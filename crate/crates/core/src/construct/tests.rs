use std::sync::OnceLock;

use super::*;
use crate::convexreg::{regularize, sample_big_q};
use crate::error::Error;
use crate::report::json_hash;

fn default_parts() -> (RadialWeight, MinorantResult) {
    let w = RadialWeight::double_exp(0.2, 0.52, 0.5).unwrap();
    let m = regularize(&sample_big_q(&w, 100.0, 2001).unwrap(), 0.5).unwrap();
    (w, m)
}

fn one_level() -> &'static ConstructionState {
    static ST: OnceLock<ConstructionState> = OnceLock::new();
    ST.get_or_init(|| {
        let (w, m) = default_parts();
        ConstructionState::build(
            w,
            m,
            ConstructConfig {
                levels: 1,
                ..Default::default()
            },
        )
        .unwrap()
    })
}

#[test]
fn eta_for_zero_function_is_one_half() {
    let net = [Complex64::new(0.0, 0.0), Complex64::new(0.5, 0.5)];
    let e = select_eta_with(|_| Ok(0.0), &net, 64).unwrap();
    assert_eq!(e.exponent, Some(1));
    assert_eq!(e.eta, Some(0.5));
}

#[test]
fn eta_rejects_a_jump() {
    let net: Vec<Complex64> = (0..64).map(|a| Complex64::from_polar(0.5, a as f64 * 0.1)).collect();
    let r = select_eta_with(|z| Ok(if z.re > 0.0 { 1e4 } else { 0.0 }), &net, 40);
    assert!(r.is_err());
}

#[test]
fn eta_shrinks_after_one_level() {
    let st = one_level();
    assert_eq!(st.levels[0].eta.eta, Some(0.5));
    // With the default weight sup |V_1| exceeds what the dyadic ladder can
    // absorb, which is the documented error.
    match st.select_eta() {
        Ok(e) => assert!(e.log_eta() < 0.5f64.ln()),
        Err(Error::Domain(msg)) => assert!(msg.contains("too wild"), "{msg}"),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn next_x_arithmetic() {
    let kappa = (-5.0f64).exp();
    let tps = [7.0, 7.6, 7.7, 8.0, 9.8, 10.0];
    let d1 = select_next_x(0.5f64.ln(), kappa, 1, 0.0, &tps).unwrap();
    assert!((d1.required - (5.0 + 2.0 + 2f64.ln())).abs() < 1e-12);
    assert_eq!(d1.x, 7.7);
    let d2 = select_next_x(0.5f64.ln(), kappa, 2, 0.0, &tps).unwrap();
    assert!((d2.required - d1.required - 2.0).abs() < 1e-12);
    assert_eq!(d2.x, 9.8);
    assert!(select_next_x(0.5f64.ln(), kappa, 3, 0.0, &tps).is_err());
}

#[test]
fn next_x_is_a_touch_point() {
    let (_, m) = default_parts();
    let d = select_next_x(0.5f64.ln(), (-5.0f64).exp(), 1, 0.0, &m.touch_points).unwrap();
    assert!(m.touch_points.contains(&d.x));
    assert!((-d.x).exp() < 0.5 * (-5.0f64).exp() * (-2.0f64).exp());
}

fn level1_table() -> (PeakData, PeakTable, f64) {
    let st = one_level();
    let l = &st.levels[0];
    let mesh = peak::target_mesh(&l.block, &st.weight, 1);
    let data = PeakData::new(&l.block, &st.weight, &mesh, None);
    let top = data.log_integral(l.block.gamma_n.ln_1p()).0;
    let table = PeakTable::build(&data, l.block.gamma_n, top + 1.0, 1e-9).unwrap();
    (data, table, l.block.gamma_n)
}

#[test]
fn gamma_boundary_root_is_zero() {
    let (_, table, _) = level1_table();
    let s = table.solve(table.at_zero());
    assert_eq!(s.g, 0.0);
    assert_eq!(s.status, GammaStatus::Solved);
    assert_eq!(table.solve(table.at_zero() - 1.0).status, GammaStatus::ClampedLow);
}

#[test]
fn peak_integral_increases_in_gamma() {
    let (data, _, gamma_n) = level1_table();
    let g_n = gamma_n.ln_1p();
    let vals: Vec<f64> = (0..10).map(|i| data.log_integral(g_n * i as f64 / 9.0).0).collect();
    assert!(vals.windows(2).all(|w| w[1] > w[0]), "{vals:?}");
}

#[test]
fn gamma_solve_matches_grid_scan() {
    let (data, table, _) = level1_table();
    let target = 0.3 * table.at_zero() + 0.7 * table.at_top();
    let s = table.solve(target);
    assert_eq!(s.status, GammaStatus::Solved);
    // Root of the direct integral by a 10^4-point scan.
    let n = 10_000;
    let h = table.g_top / n as f64;
    let i = (0..n)
        .find(|&i| data.log_integral((i + 1) as f64 * h).0 >= target)
        .unwrap();
    let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
    let (fa, fb) = (data.log_integral(a).0, data.log_integral(b).0);
    let g_scan = a + (target - fa) / (fb - fa) * h;
    // The scan's linear interpolation error is second order in h.
    assert!((s.g - g_scan).abs() <= 2.0 * 1e-9 + h * 1e-3, "{} vs {g_scan}", s.g);
    assert!((data.log_integral(s.g).0 - target).abs() < 1e-6);
}

#[test]
fn level_invariants() {
    let st = one_level();
    let l = &st.levels[0];
    assert!(l.tau() > 0.0 && l.tau() < 1.0);
    assert!(l.patch_gap > 0.0);
    assert!(l.increment_c.is_finite() && l.increment_c >= 0.0);
    assert!((-l.block.x_n).exp() < l.eta.eta.unwrap() * st.kappa * (-2.0f64).exp());
    assert!(l.gammas.iter().all(|g| *g >= 0.0 && *g <= l.block.gamma_n));
    let f0 = st.eval_f(Complex64::new(0.0, 0.0)).unwrap();
    assert!(f0.phase.abs() < 1e-12);
}

#[test]
fn build_is_deterministic() {
    let (w, m) = default_parts();
    let cfg = ConstructConfig {
        levels: 1,
        ..Default::default()
    };
    let a = ConstructionState::build(w.clone(), m.clone(), cfg.clone()).unwrap();
    let b = ConstructionState::build(w, m, cfg).unwrap();
    assert_eq!(json_hash(&a).unwrap(), json_hash(&b).unwrap());
}

#[test]
fn interleaving_rule() {
    assert!(pair::check_interleaved(&[7.7, 15.4], &[11.7]).is_ok());
    assert!(pair::check_interleaved(&[7.7, 15.4], &[11.7, 20.0]).is_ok());
    assert!(pair::check_interleaved(&[7.7, 15.4], &[16.0]).is_err());
    assert!(pair::check_interleaved(&[7.7], &[7.0]).is_err());
}

#[test]
fn regime_flag_ignores_level_suffixes_of_deep_levels() {
    let st = one_level();
    let mut rep = Report::new("t");
    rep.push(Check::from_margin("x-1", -1.0, ""));
    st.mark_regime(&mut rep);
    assert!(rep.below_regime);
    rep.push(Check::from_margin("y", -1.0, ""));
    st.mark_regime(&mut rep);
    assert!(!rep.below_regime);
}
