mod common;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use solform::grid::GridFunction;
use solform::model::random_smooth_field;
use solform::modulation::{
    coordinate_derivative, k_hamiltonian, modulate, poisson_brackets, reconstruct, reduced_p, Chart,
};

use common::{cubic_chart, potential_chart};

fn l2(chart: &Chart, v: &DVector<f64>) -> f64 {
    chart.model.dot(v, v).sqrt()
}

/// A state `e^{J tau diamond}(Phi_p) + eps |Phi| X` with a random smooth `X`.
fn perturbed_state(chart: &Chart, tau: &[f64], dp: &[f64], eps: f64, seed: u64) -> GridFunction {
    let m = &chart.model;
    let p: Vec<f64> = chart.p0().iter().zip(dp).map(|(a, b)| a + b).collect();
    let (fp, _) = chart.at(&p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_smooth_field(m, &mut rng).to_dvector();
    let scale = eps * l2(chart, &fp.phi.to_dvector()) / l2(chart, &x);
    let v = fp.phi.to_dvector() + x * scale;
    m.field(&m.group_vec(tau, &v))
}

fn potential() -> &'static Chart {
    static C: std::sync::OnceLock<Chart> = std::sync::OnceLock::new();
    C.get_or_init(|| potential_chart(10.0, 64, -4.5))
}

fn cubic() -> &'static Chart {
    static C: std::sync::OnceLock<Chart> = std::sync::OnceLock::new();
    C.get_or_init(|| cubic_chart(10.0, 128, 0.2))
}

#[test]
fn manifold_point_has_vanishing_remainder() {
    let chart = cubic();
    let p = [chart.p0()[0] + 0.02, chart.p0()[1] - 0.01];
    let (fp, _) = chart.at(&p).unwrap();
    let u = chart.model.group_action(&[0.4, 0.3], &fp.phi);
    let c = modulate(chart, &u, None, None).unwrap();
    assert!((c.tau[0] - 0.4).abs() < 1e-10 && (c.tau[1] - 0.3).abs() < 1e-10, "{:?}", c.tau);
    assert!((c.p[0] - p[0]).abs() < 1e-10 && (c.p[1] - p[1]).abs() < 1e-10);
    assert!(l2(chart, &c.r) < 1e-10);
    assert!(c.z.is_empty());
}

#[test]
fn round_trip_reconstructs_state() {
    for chart in [potential(), cubic()] {
        let n0 = chart.n_sym();
        let tau = vec![0.3; n0];
        let dp = vec![0.01; n0];
        let u = perturbed_state(chart, &tau, &dp, 1e-2, 4);
        let c = modulate(chart, &u, None, None).unwrap();
        let back = reconstruct(chart, &c.tau, &c.p, &c.r).unwrap();
        let err = back.sub(&u).norm();
        assert!(err <= 1e-10, "round trip error {err}");
        // R lies in the reference complement; P(p) R is orthogonal to the kernel tests at p
        assert!(l2(chart, &(chart.proj0.apply(&c.r) - &c.r)) < 1e-10);
        let (_, proj) = chart.at(&c.p).unwrap();
        for t in proj.tests() {
            assert!(chart.model.dot(t, &c.r_tilde).abs() < 1e-10);
        }
        for j in 0..n0 {
            let rho = 0.5 * chart.model.dot(&chart.model.diamond_vec(j, &c.r), &c.r);
            assert!((rho - c.rho[j]).abs() < 1e-14);
            // Pi(U) = p + Pi(P(p) R)
            let pr = chart.invariants_vec(&proj.apply(&c.r));
            assert!((c.pi[j] - c.p[j] - pr[j]).abs() < 1e-10, "{}", c.pi[j] - c.p[j] - pr[j]);
        }
    }
}

#[test]
fn coordinates_are_gauge_covariant() {
    let chart = cubic();
    let u = perturbed_state(chart, &[0.1, -0.2], &[0.0, 0.01], 1e-2, 8);
    let c = modulate(chart, &u, None, None).unwrap();
    let sigma = [0.7, 0.25];
    let moved = chart.model.group_action(&sigma, &u);
    let d = modulate(chart, &moved, None, None).unwrap();
    for k in 0..2 {
        assert!((d.tau[k] - c.tau[k] - sigma[k]).abs() < 1e-9, "{:?} {:?}", d.tau, c.tau);
        assert!((d.p[k] - c.p[k]).abs() < 1e-9);
    }
    assert!(l2(chart, &(&d.r - &c.r)) < 1e-9);
    assert!(l2(chart, &(&d.f - &c.f)) < 1e-9);
}

#[test]
fn poisson_identities_of_modulation_coordinates() {
    for chart in [potential(), cubic()] {
        let n0 = chart.n_sym();
        let u = perturbed_state(chart, &vec![0.2; n0], &vec![0.005; n0], 1e-2, 13);
        let (bt, bp) = poisson_brackets(chart, &u, 1e-6).unwrap();
        for j in 0..n0 {
            for k in 0..n0 {
                let want = if j == k { -1.0 } else { 0.0 };
                assert!((bt[(j, k)] - want).abs() < 1e-7, "{{Pi, tau}} = {bt}");
                assert!(bp[(j, k)].abs() < 1e-7, "{{Pi, p}} = {bp}");
            }
        }
    }
}

#[test]
fn coordinate_derivative_matches_differences() {
    let chart = potential();
    let m = &chart.model;
    let u = perturbed_state(chart, &[0.4], &[0.01], 1e-2, 17);
    let c = modulate(chart, &u, None, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let x = random_smooth_field(m, &mut rng).to_dvector();
    let (dtau, dp, dr) = coordinate_derivative(chart, &c, &x).unwrap();
    let s = 1e-5;
    let uv = u.to_dvector();
    let a = modulate(chart, &m.field(&(&uv + &x * s)), Some(&c.tau), Some(&c.p)).unwrap();
    let b = modulate(chart, &m.field(&(&uv - &x * s)), Some(&c.tau), Some(&c.p)).unwrap();
    let fd = (&a.r - &b.r) / (2.0 * s);
    assert!(l2(chart, &(&fd - &dr)) < 1e-6 * l2(chart, &dr).max(1.0), "{}", l2(chart, &(&fd - &dr)));
    assert!(((a.tau[0] - b.tau[0]) / (2.0 * s) - dtau[0]).abs() < 1e-6);
    assert!(((a.p[0] - b.p[0]) / (2.0 * s) - dp[0]).abs() < 1e-6);

    // a tangent to the group orbit moves tau only
    let orbit = m.j_vec(&m.diamond_vec(0, &uv));
    let (dtau, dp, dr) = coordinate_derivative(chart, &c, &orbit).unwrap();
    assert!((dtau[0] - 1.0).abs() < 1e-8);
    assert!(dp[0].abs() < 1e-8);
    assert!(l2(chart, &dr) < 1e-8);

    // at the reference soliton the derivative is P(p0)
    let base = modulate(chart, &chart.base.phi, None, None).unwrap();
    let (_, _, dr) = coordinate_derivative(chart, &base, &x).unwrap();
    assert!(l2(chart, &(dr - chart.proj0.apply(&x))) < 1e-10 * l2(chart, &x));
}

#[test]
fn reduced_p_agrees_with_modulation() {
    for chart in [potential(), cubic()] {
        let n0 = chart.n_sym();
        let u = perturbed_state(chart, &vec![0.1; n0], &vec![-0.01; n0], 1e-2, 23);
        let c = modulate(chart, &u, None, None).unwrap();
        let p = reduced_p(chart, &c.pi, &c.rho, &c.r).unwrap();
        for k in 0..n0 {
            assert!((p[k] - c.p[k]).abs() < 1e-9, "{p:?} vs {:?}", c.p);
        }
    }
}

#[test]
fn k_hamiltonian_is_gauge_invariant_and_quadratic() {
    let chart = potential();
    let m = &chart.model;
    assert!(k_hamiltonian(chart, &chart.base.phi).abs() < 1e-13, "{}", k_hamiltonian(chart, &chart.base.phi));
    let u = perturbed_state(chart, &[0.0], &[0.0], 1e-2, 29);
    let k0 = k_hamiltonian(chart, &u);
    let k1 = k_hamiltonian(chart, &m.group_action(&[1.3], &u));
    assert!((k0 - k1).abs() < 1e-12);

    // K - 1/2 Omega(H R, R) scales with the cube of the amplitude
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = random_smooth_field(m, &mut rng).to_dvector();
    let f = &chart.pc * &x;
    let f = &f / l2(chart, &f);
    let phi = chart.base.phi.to_dvector();
    let err = |eps: f64| {
        let r = &f * eps;
        let u = m.field(&(&phi + &r));
        let quad = 0.5 * m.dot(&(&chart.op.symmetric * &r), &r);
        (k_hamiltonian(chart, &u) - quad).abs()
    };
    let (a, b) = (err(1e-2), err(5e-3));
    let slope = (a / b).ln() / 2f64.ln();
    assert!((slope - 3.0).abs() < 0.3, "slope {slope}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn round_trip_on_random_states(tau in -3.0f64..3.0, dp in -0.02f64..0.02, seed in 0u64..500) {
        let chart = potential();
        let u = perturbed_state(chart, &[tau], &[dp], 1e-2, seed);
        let c = modulate(chart, &u, Some(&[tau]), None).unwrap();
        let back = reconstruct(chart, &c.tau, &c.p, &c.r).unwrap();
        prop_assert!(back.sub(&u).norm() <= 1e-10);
        let again = modulate(chart, &back, Some(&c.tau), Some(&c.p)).unwrap();
        prop_assert!(l2(chart, &(&again.r - &c.r)) <= 1e-10);
    }
}
