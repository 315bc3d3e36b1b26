mod common;

use nalgebra::DVector;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use solform::grid::GridFunction;
use solform::linearize::{build_h, min_combination, omega_c, LinearizeError, NgProjection, Resolvent};
use solform::model::random_smooth_field;
use solform::soliton::{branch_derivative, continue_branch, solve_soliton, SolverOptions, Target};

use common::{cubic_chart, cubic_point, potential_chart};

fn l2(h: f64, v: &DVector<f64>) -> f64 {
    (h * v.norm_squared()).sqrt()
}

#[test]
fn cubic_kernel_and_generalized_kernel() {
    let (m, _) = cubic_point(20.0, 256);
    let h = m.grid().spacing();
    let d = 1e-3;
    let guess = solform::soliton::cubic_exact(m.grid(), &[-1.0 - d, 0.0]);
    let seed = solve_soliton(&m, &Target::Lambda(vec![-1.0 - d, 0.0]), &guess, SolverOptions::default()).unwrap();
    let branch = continue_branch(&m, &seed, 0, -1.0 + d, 2, SolverOptions::default()).unwrap();
    let mid = &branch.points[1];
    assert!((mid.lambda[0] + 1.0).abs() < 1e-12);
    let op = build_h(&m, &mid.phi, &mid.lambda, 1e-8).unwrap();
    assert!(op.kernel_residual <= 1e-8, "{}", op.kernel_residual);
    let phi = mid.phi.to_dvector();

    // charge direction from branch differences
    let (dphi, dp) = branch_derivative(&branch, 1).unwrap();
    let dphi = dphi.to_dvector();
    let target = m.j_vec(&m.diamond_vec(0, &phi));
    let res = l2(h, &(&op.matrix * &dphi - &target));
    assert!(res <= 1e-5, "generalized kernel residual {res}");
    // d p / d omega = 1 / (2 sqrt omega) with omega = -lambda
    assert!((dp[0] + 0.5).abs() < 1e-4, "{}", dp[0]);
    for k in 0..2 {
        let pairing = m.dot(&dphi, &m.diamond_vec(k, &phi));
        assert!((pairing - dp[k]).abs() < 1e-6, "pairing {k}: {pairing} vs {}", dp[k]);
    }

    // momentum direction: d/d lambda_1 of e^{-i lambda_1 x / 2} Phi at lambda_1 = 0
    let dphi1 = GridFunction::from_fn(m.grid(), 2, |c, x| if c == 1 { -0.5 * x / x.cosh() } else { 0.0 }).to_dvector();
    let target = m.j_vec(&m.diamond_vec(1, &phi));
    let res = l2(h, &(&op.matrix * &dphi1 - &target));
    assert!(res <= 1e-5, "momentum generalized kernel residual {res}");

    // J^{-1} H is symmetric
    let asym = (&op.symmetric - op.symmetric.transpose()).amax();
    assert!(asym < 1e-10 * op.symmetric.amax());
}

#[test]
fn stale_soliton_is_rejected() {
    let (m, pt) = cubic_point(20.0, 128);
    let wrong = pt.phi.scaled(1.01);
    assert!(matches!(build_h(&m, &wrong, &pt.lambda, 1e-8), Err(LinearizeError::KernelResidual(_))));
}

#[test]
fn internal_mode_of_small_potential_soliton() {
    // amplitude 1e-2 in front of sech^2
    let a: f64 = 1e-2;
    let lambda = -4.0 - 48.0 / 35.0 * a * a;
    let chart = potential_chart(12.0, 128, lambda);
    let f = &chart.frame;
    assert_eq!(f.n_modes(), 1);
    let e = f.modes[0].e;
    assert!((e - 3.0).abs() < 0.05 * 3.0, "e = {e}");
    assert_eq!(f.modes[0].sign, 1);
    assert_eq!(f.n_j, vec![1]);
    assert!((f.edge + chart.base.lambda[0]).abs() < 1e-12);
    assert!((chart.base.lambda[0] - lambda).abs() < 1e-8);
}

#[test]
fn frame_normalization_and_splitting() {
    let chart = potential_chart(10.0, 64, -4.5);
    let m = &chart.model;
    let f = &chart.frame;
    let h = m.grid().spacing();
    let xi = &f.modes[0].xi;
    let xib = xi.map(|v| v.conj());
    let n = omega_c(m, xi, &xib);
    assert!((n - Complex64::new(0.0, -1.0)).norm() < 1e-8, "{n}");
    assert!(omega_c(m, xi, xi).norm() < 1e-8);
    // H xi = i e xi
    let hx = chart.op.matrix.map(|v| Complex64::new(v, 0.0)) * xi;
    let r = hx - xi * Complex64::new(0.0, f.modes[0].e);
    assert!(r.norm() * h.sqrt() < 1e-8);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let x = random_smooth_field(m, &mut rng).to_dvector();
        let x0 = chart.proj0.apply(&x);
        let fc = &chart.pc * &x;
        let fcc = fc.map(|v| Complex64::new(v, 0.0));
        assert!(omega_c(m, xi, &fcc).norm() < 1e-8);
        // z f splitting reproduces the field
        let (z, ff) = chart.split(&x0);
        assert!(l2(h, &(&ff - &chart.pc * &x0)) < 1e-10);
        let back = f.synthesize(&z) + &ff;
        assert!(l2(h, &(back - &x0)) < 1e-10);
        // completeness of the decomposition
        let total = chart.proj0.apply_ng(&x) + f.synthesize(&f.z_coordinates(&x0)) + &fc;
        assert!(l2(h, &(total - &x)) < 1e-8 * l2(h, &x));
        // quadratic form on the split
        let direct = 0.5 * m.dot(&(&chart.op.symmetric * &x0), &x0);
        let split = f.modes[0].e * z[0].norm_sqr() + 0.5 * m.dot(&(&chart.op.symmetric * &ff), &ff);
        assert!((direct - split).abs() < 1e-8 * direct.abs().max(1.0), "{direct} vs {split}");
    }
    // pure frame field
    let x = f.synthesize(&[Complex64::new(1.0, 0.0)]);
    let (z, ff) = chart.split(&x);
    assert!((z[0] - 1.0).norm() < 1e-10);
    assert!(l2(h, &ff) < 1e-10);
}

#[test]
fn ng_projection_properties() {
    let chart = potential_chart(10.0, 64, -4.5);
    let m = &chart.model;
    let h = m.grid().spacing();
    let pr = &chart.proj0;
    assert!(pr.condition() < 1e6);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let x = random_smooth_field(m, &mut rng).to_dvector();
        let px = pr.apply(&x);
        assert!(l2(h, &(pr.apply(&px) - &px)) <= 1e-9 * l2(h, &x));
        for t in pr.tests() {
            assert!(m.dot(t, &px).abs() <= 1e-9 * l2(h, &x));
        }
        // adjoint
        let y = random_smooth_field(m, &mut rng).to_dvector();
        let lhs = m.dot(&pr.apply(&x), &y);
        let rhs = m.dot(&x, &pr.apply_adjoint(&y));
        assert!((lhs - rhs).abs() < 1e-10 * l2(h, &x) * l2(h, &y));
    }
    for v in pr.basis() {
        assert!(l2(h, &(pr.apply_ng(v) - v)) < 1e-10 * l2(h, v));
    }
}

#[test]
fn projection_derivative_matches_family_differences() {
    let chart = potential_chart(10.0, 64, -4.5);
    let m = &chart.model;
    let h = m.grid().spacing();
    let p0 = chart.p0()[0];
    let d = 1e-4 * p0;
    let (_, a) = chart.at(&[p0 + d]).unwrap();
    let (_, b) = chart.at(&[p0 - d]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_smooth_field(m, &mut rng).to_dvector();
    let fd = (a.apply(&x) - b.apply(&x)) / (2.0 * d);
    let an = chart.proj0.apply_dp(0, &x);
    assert!(l2(h, &(&fd - &an)) < 1e-6 * l2(h, &an).max(1.0), "{}", l2(h, &(&fd - &an)));
    let y = random_smooth_field(m, &mut rng).to_dvector();
    let lhs = m.dot(&an, &y);
    let rhs = m.dot(&x, &chart.proj0.apply_dp_adjoint(0, &y));
    assert!((lhs - rhs).abs() < 1e-10 * l2(h, &x) * l2(h, &y));
}

#[test]
fn projection_transfer_round_trip() {
    let chart = cubic_chart(10.0, 128, 0.2);
    let m = &chart.model;
    let h = m.grid().spacing();
    let p = [chart.p0()[0] + 0.03, chart.p0()[1] + 0.04];
    let (_, proj) = chart.at(&p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let x = random_smooth_field(m, &mut rng).to_dvector();
        let y = proj.apply(&x);
        let t = proj.transfer_from(&chart.proj0, &y).unwrap();
        assert!(l2(h, &(proj.apply(&t) - &y)) <= 1e-9 * l2(h, &y));
        assert!(l2(h, &(chart.proj0.apply(&t) - &t)) <= 1e-9 * l2(h, &y));
    }
    // p = p0 gives the identity
    let x = chart.proj0.apply(&random_smooth_field(m, &mut rng).to_dvector());
    let t = chart.proj0.transfer_from(&chart.proj0, &x).unwrap();
    assert!(l2(h, &(t - &x)) < 1e-12 * l2(h, &x));
    assert!(chart.at(&[chart.p0()[0] + 0.5, chart.p0()[1]]).is_err());
}

#[test]
fn resolvent_solves_on_continuous_subspace() {
    let chart = potential_chart(10.0, 64, -4.5);
    let m = &chart.model;
    let d = m.dim();
    let z = Complex64::new(0.3, 2.0);
    let res = Resolvent::new(&chart.op, &chart.pc, &chart.frame, z, 1e-6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let g = random_smooth_field(m, &mut rng).to_dvector().map(|v| Complex64::new(v, 0.0));
    let u = res.apply(&g, 1).unwrap();
    let pc = chart.pc.map(|v| Complex64::new(v, 0.0));
    let hm = chart.op.matrix.map(|v| Complex64::new(v, 0.0));
    let mut lhs = &hm * &pc * &u;
    lhs -= &u * z;
    let rhs = &pc * &g;
    assert!((lhs - &rhs).norm() <= 1e-9 * g.norm());
    assert!((&pc * &u - &u).norm() <= 1e-9 * u.norm());
    // second power composes
    let u2 = res.apply(&g, 2).unwrap();
    let again = res.apply(&u, 1).unwrap();
    assert!((u2 - again).norm() < 1e-10 * u.norm());
    assert_eq!(u.len(), d);

    let near = chart.frame.continuum[0];
    let err = Resolvent::new(&chart.op, &chart.pc, &chart.frame, near + Complex64::new(1e-8, 0.0), 1e-6);
    assert!(matches!(err, Err(LinearizeError::NearSpectrum { .. })));
}

#[test]
fn resonance_margins() {
    assert!((min_combination(&[3.0], 5) - 3.0).abs() < 1e-15);
    assert!(min_combination(&[1.0, 2.0], 5) < 1e-15);
    let chart = potential_chart(10.0, 64, -4.5);
    assert!(chart.frame.check_resonances(1e-6));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn continuous_projection_is_idempotent(seed in 0u64..1000) {
        let chart = shared_chart();
        let m = &chart.model;
        let h = m.grid().spacing();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_smooth_field(m, &mut rng).to_dvector();
        let px = &chart.pc * &x;
        prop_assert!(l2(h, &(&chart.pc * &px - &px)) <= 1e-9 * l2(h, &x));
        let z = chart.frame.z_coordinates(&px);
        prop_assert!(z[0].norm() <= 1e-9 * l2(h, &x));
        let ng = NgProjection::apply_ng(&chart.proj0, &px);
        prop_assert!(l2(h, &ng) <= 1e-9 * l2(h, &x));
    }
}

fn shared_chart() -> &'static solform::modulation::Chart {
    static CHART: std::sync::OnceLock<solform::modulation::Chart> = std::sync::OnceLock::new();
    CHART.get_or_init(|| potential_chart(10.0, 64, -4.5))
}
