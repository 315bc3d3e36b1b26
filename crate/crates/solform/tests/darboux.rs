mod common;

use common::{cubic_chart, potential_chart};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use solform::darboux::{
    defining_residual, integrate_flow, integrate_flow_span, integrate_frozen, omega0, verify_darboux, AuditOptions, DarbouxState,
    LocalForms, Tangent,
};
use solform::model::random_smooth_field;
use solform::modulation::{reconstruct, reduced_p, Chart};
use solform::ode::OdeOptions;

fn chart() -> &'static Chart {
    static C: std::sync::OnceLock<Chart> = std::sync::OnceLock::new();
    C.get_or_init(|| potential_chart(10.0, 64, -4.5))
}

/// State with `|R| = eps |Phi|` in a random smooth direction of `X_0`.
fn state(chart: &Chart, eps: f64, seed: u64) -> DarbouxState {
    let m = &chart.model;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = chart.proj0.apply(&random_smooth_field(m, &mut rng).to_dvector());
    let phi = chart.base.phi.to_dvector();
    let r = &r * (eps * m.dot(&phi, &phi).sqrt() / m.dot(&r, &r).sqrt());
    let pi = chart.p0().iter().map(|p| p + 0.02).collect();
    DarbouxState { tau: vec![0.3; chart.n_sym()], pi, r }
}

fn probes(chart: &Chart, count: usize, seed: u64) -> Vec<Tangent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| Tangent::random(chart, &mut rng)).collect()
}

#[test]
fn zero_remainder_gives_standard_form() {
    let c = chart();
    let mut x = state(c, 0.0, 1);
    x.pi = c.p0().to_vec();
    let forms = LocalForms::at_state(c, &x).unwrap();
    assert!(forms.beta.iter().all(|b| b.abs() < 1e-14));
    for pair in probes(c, 10, 2).chunks(2) {
        let (v, w) = (&pair[0], &pair[1]);
        assert!(forms.alpha(c, v).abs() < 1e-14);
        assert!((forms.omega(c, v, w) - omega0(c, v, w)).abs() < 1e-10);
    }
    // off the base point alpha still vanishes with R, so the field does too
    let f = LocalForms::at_state(c, &state(c, 0.0, 1)).unwrap().field(c, 0.7).unwrap();
    assert!(f.r.amax() < 1e-14 && f.tau[0].abs() < 1e-14 && f.a[0].abs() < 1e-14);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let report = verify_darboux(c, &[x], 2, &mut rng, AuditOptions::default()).unwrap();
    assert!(report.max_deviation <= 1e-9, "{report:?}");
}

#[test]
fn beta_is_quadratic_in_remainder() {
    let c = chart();
    let b1 = LocalForms::at_state(c, &state(c, 0.01, 3)).unwrap().beta[0];
    let b2 = LocalForms::at_state(c, &state(c, 0.02, 3)).unwrap().beta[0];
    assert!(b1.abs() > 0.0);
    assert!((b2 / b1 - 4.0).abs() < 0.05, "ratio {}", b2 / b1);
}

#[test]
fn symplectic_form_matches_differences_of_the_state_map() {
    let c = chart();
    let m = &c.model;
    let mut x = state(c, 0.02, 4);
    x.tau = vec![0.0];
    let forms = LocalForms::at_state(c, &x).unwrap();
    let u = |y: &DarbouxState| {
        let p = reduced_p(c, &y.pi, &y.rho(c), &y.r).unwrap();
        reconstruct(c, &y.tau, &p, &y.r).unwrap().to_dvector()
    };
    let h = 1e-5;
    let ps = probes(c, 6, 5);
    let du: Vec<_> = ps.iter().map(|v| (u(&x.displaced(v, h)) - u(&x.displaced(v, -h))) / (2.0 * h)).collect();
    for i in 0..ps.len() {
        let exact = forms.state_differential(c, &ps[i]);
        assert!((&du[i] - &exact).amax() < 1e-6 * exact.amax(), "dU mismatch {}", (&du[i] - &exact).amax());
        for j in 0..ps.len() {
            let fd = m.dot(&m.jinv_vec(&du[i]), &du[j]);
            assert!((fd - forms.omega(c, &ps[i], &ps[j])).abs() < 1e-6);
        }
    }
}

#[test]
fn alpha_is_a_primitive_of_the_form_difference() {
    let c = chart();
    let x = state(c, 0.03, 6);
    let forms = LocalForms::at_state(c, &x).unwrap();
    let h = 1e-4;
    let alpha_at = |y: &DarbouxState, v: &Tangent| LocalForms::at_state(c, y).unwrap().alpha(c, v);
    let ps = probes(c, 6, 7);
    for pair in ps.chunks(2) {
        let (v, w) = (&pair[0], &pair[1]);
        let vw = (alpha_at(&x.displaced(v, h), w) - alpha_at(&x.displaced(v, -h), w)) / (2.0 * h);
        let wv = (alpha_at(&x.displaced(w, h), v) - alpha_at(&x.displaced(w, -h), v)) / (2.0 * h);
        let diff = forms.omega(c, v, w) - omega0(c, v, w);
        assert!(diff.abs() > 1e-6);
        assert!((vw - wv - diff).abs() < 1e-7, "d alpha {} vs {}", vw - wv, diff);
        assert!((forms.omega_difference(c, v, w) - diff).abs() < 1e-10);
    }
}

#[test]
fn field_solves_the_defining_equation() {
    let c = chart();
    let ps = probes(c, 20, 8);
    for seed in [9, 10] {
        let x = state(c, 0.03, seed);
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let res = defining_residual(c, &x, t, &ps).unwrap();
            assert!(res < 1e-7, "t = {t}: residual {res:.2e}");
            let f = LocalForms::at_state(c, &x).unwrap().field(c, t).unwrap();
            assert!(f.pi.iter().all(|v| v.abs() < 1e-12), "X_Pi = {:?}", f.pi);
            assert_eq!(f.rank, 9);
        }
    }
}

#[test]
fn field_is_independent_of_the_phase() {
    let c = chart();
    let x = state(c, 0.03, 11);
    let mut y = x.clone();
    y.tau[0] += 1.7;
    let a = LocalForms::at_state(c, &x).unwrap().field(c, 0.5).unwrap();
    let b = LocalForms::at_state(c, &y).unwrap().field(c, 0.5).unwrap();
    assert!((&a.r - &b.r).amax() < 1e-9);
    assert!((a.tau[0] - b.tau[0]).abs() < 1e-9);
    let fa = integrate_flow(c, &x, 1.0, OdeOptions::default()).unwrap();
    let fb = integrate_flow(c, &y, 1.0, OdeOptions::default()).unwrap();
    assert!((fb.tau[0] - fa.tau[0] - 1.7).abs() < 1e-9);
    assert!((&fa.r - &fb.r).amax() < 1e-9);
}

#[test]
fn flow_keeps_rho_consistent_and_is_inverted_by_the_reverse_integration() {
    let c = chart();
    let x = state(c, 0.03, 12);
    let fw = integrate_flow(c, &x, 1.0, OdeOptions::default()).unwrap();
    let direct = c.invariants_vec(&fw.r);
    assert!((fw.rho[0] - direct[0]).abs() < 1e-9, "{} vs {}", fw.rho[0], direct[0]);
    let shift = (c.model.dot(&(&fw.r - &x.r), &(&fw.r - &x.r))).sqrt();
    assert!(shift > 0.0);
    let back = integrate_flow_span(c, &fw.state(), 1.0, 0.0, OdeOptions::default()).unwrap();
    assert!((&back.r - &x.r).amax() < 1e-9);
    assert!((back.tau[0] - x.tau[0]).abs() < 1e-9);
}

#[test]
fn time_one_map_pulls_back_to_the_standard_form() {
    let c = chart();
    let states = [state(c, 0.01, 13), state(c, 0.01, 14)];
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let report = verify_darboux(c, &states, 2, &mut rng, AuditOptions::default()).unwrap();
    assert!(report.max_deviation <= 1e-5, "{report:?}");
    assert!(report.max_deviation < report.control_deviation, "{report:?}");
    assert_eq!(report.rank, 9);
}

#[test]
fn frozen_rho_system_differs_at_third_order() {
    let c = chart();
    let eps = [0.04, 0.02, 0.01];
    let gaps: Vec<f64> = eps
        .iter()
        .map(|&e| {
            let x = state(c, e, 16);
            let full = integrate_flow(c, &x, 1.0, OdeOptions::default()).unwrap();
            let frozen = integrate_frozen(c, &x, 1.0, OdeOptions::default()).unwrap();
            let d = &full.r - &frozen;
            c.model.dot(&d, &d).sqrt()
        })
        .collect();
    let slope = (gaps[0] / gaps[2]).ln() / (eps[0] / eps[2]).ln();
    assert!((slope - 3.0).abs() <= 0.3, "slope {slope}, gaps {gaps:?}");
}

#[test]
fn alpha_is_a_primitive_with_two_symmetries() {
    let c = cubic_chart(20.0, 256, 0.2);
    let x = state(&c, 0.03, 6);
    let forms = LocalForms::at_state(&c, &x).unwrap();
    let n0 = c.n_sym();
    let d = c.dim();
    let h = 1e-4;
    let alpha_at = |y: &DarbouxState, v: &Tangent| LocalForms::at_state(&c, y).unwrap().alpha(&c, v);
    let mut dirs = Vec::new();
    for k in 0..n0 {
        let mut t = Tangent::zeros(n0, d);
        t.pi[k] = 1.0;
        dirs.push(t);
    }
    for p in probes(&c, 2, 7) {
        let mut t = Tangent::zeros(n0, d);
        t.r = p.r;
        dirs.push(t);
    }
    for (i, v) in dirs.iter().enumerate() {
        for w in &dirs[i + 1..] {
            let vw = (alpha_at(&x.displaced(v, h), w) - alpha_at(&x.displaced(v, -h), w)) / (2.0 * h);
            let wv = (alpha_at(&x.displaced(w, h), v) - alpha_at(&x.displaced(w, -h), v)) / (2.0 * h);
            let diff = forms.omega(&c, v, w) - omega0(&c, v, w);
            assert!((vw - wv - diff).abs() < 1e-7 + 1e-4 * diff.abs(), "d alpha {} vs {}", vw - wv, diff);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let report = verify_darboux(&c, &[x], 2, &mut rng, AuditOptions::default()).unwrap();
    assert!(report.passed && report.max_deviation < report.control_deviation, "{report:?}");
}
