mod common;

use std::sync::OnceLock;

use common::potential_chart;
use nalgebra::DVector;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use solform::model::random_smooth_field;
use solform::modulation::Chart;
use solform::normalform::birkhoff::{diagonal, step_targets};
use solform::normalform::build::{build_h1, cubic_covectors, BuildOptions, BuildReport, ExactHamiltonian};
use solform::normalform::export::{coefficient_rows, write_bundle, write_coefficient_csv};
use solform::normalform::homological::{field_norm, h2};
use solform::normalform::oracle::{compose_flows, finite_dim_oracle, generator_flow, loglog_slope, OracleOptions};
use solform::normalform::{
    birkhoff_normalize, classify_with, homological_residual, solve_homological, BirkhoffOptions, BirkhoffResult, Monomial,
    PhaseSpace, Poly, TermClass,
};

struct Pipeline {
    chart: Chart,
    space: PhaseSpace,
    h1: Poly,
    report: BuildReport,
    result: BirkhoffResult,
}

fn run(l: f64, n: usize) -> Pipeline {
    let chart = potential_chart(l, n, -4.5);
    let space = PhaseSpace::from_chart(&chart);
    let opts = BirkhoffOptions::for_space(&space);
    let (h1, report) = build_h1(&chart, &space, &BuildOptions::with_cap(opts.cap)).unwrap();
    let result = birkhoff_normalize(&space, &h1, &opts).unwrap();
    Pipeline { chart, space, h1, report, result }
}

fn pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| run(10.0, 64))
}

fn tiny() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| run(8.0, 32))
}

fn mono(mu: u32, nu: u32, rho: u32) -> Monomial {
    Monomial::new(vec![mu], vec![nu], vec![rho])
}

#[test]
fn expansion_reproduces_the_frame_frequency() {
    let p = pipeline();
    assert_eq!(p.space.big_n(), 1);
    for (a, e) in p.report.fitted_diagonal.iter().zip(&p.report.frequencies) {
        assert!((a - e).abs() < 1e-6, "{a} vs {e}");
    }
    assert!(p.report.off_diagonal < 1e-6, "{}", p.report.off_diagonal);
    assert!(p.report.low_scalar < 1e-8, "{}", p.report.low_scalar);
}

#[test]
fn expansion_has_no_field_at_degree_zero_and_one() {
    let r = &pipeline().report;
    assert!(r.field_degree0 < 1e-7, "{}", r.field_degree0);
    assert!(r.field_degree1 < 1e-7, "{}", r.field_degree1);
    assert!(r.fd_consistency < 1e-6);
}

#[test]
fn fitted_quadratic_fields_match_the_third_derivative_of_the_energy() {
    let p = pipeline();
    for (m, a) in cubic_covectors(&p.chart, &p.space) {
        let fitted = &p.h1.linear[&m];
        let err = field_norm(&p.space, &(fitted - &a));
        let size = field_norm(&p.space, &a);
        assert!(size > 1e-2, "analytic field at {m:?} is degenerate");
        assert!(err < 1e-6 * size, "{m:?}: {err:e} of {size:e}");
    }
}

#[test]
fn quadratic_kernel_agrees_with_a_second_difference_probe() {
    let p = pipeline();
    let exact = ExactHamiltonian::new(&p.chart, &p.space, BuildOptions::with_cap(5).ode);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let raw = random_smooth_field(&p.chart.model, &mut rng).to_dvector();
    let f = &p.chart.pc * raw;
    let f = &f / p.chart.model.dot(&f, &f).sqrt();
    let s = 1e-2;
    let curvature = |z: Complex64| {
        let at = |t: f64| exact.value(&[z], &(&f * t)).unwrap();
        (at(s) - 2.0 * at(0.0) + at(-s)) / (s * s)
    };
    let fc = f.map(|v| Complex64::new(v, 0.0));
    let h = p.space.spacing();
    let form = |m: &Monomial| (fc.transpose() * &p.h1.quadratic[m] * &fc)[(0, 0)] * h;
    let z = Complex64::from_polar(0.02, 0.7);
    let odd = 0.5 * (curvature(z) - curvature(-z));
    let predicted = (z * form(&mono(1, 0, 0)) + z.conj() * form(&mono(0, 1, 0))).re;
    assert!((odd - predicted).abs() < 2e-3 * predicted.abs(), "{odd} vs {predicted}");
    let even = curvature(Complex64::new(0.0, 0.0));
    let base = form(&mono(0, 0, 0)).re;
    assert!((even - base).abs() < 1e-3 * base.abs(), "{even} vs {base}");
}

fn removable_size(space: &PhaseSpace, h: &Poly, scalar_degree: u32, linear_degree: u32) -> f64 {
    let e = space.frequencies();
    let mut worst = 0.0f64;
    for (m, c) in &h.scalar {
        if m.z_degree() <= scalar_degree && classify_with(e, space.edge(), 1e-9, m, 0) == TermClass::Removable {
            worst = worst.max(c.norm());
        }
    }
    for (m, a) in &h.linear {
        if m.z_degree() <= linear_degree && classify_with(e, space.edge(), 1e-9, m, 1) == TermClass::Removable {
            worst = worst.max(field_norm(space, a));
        }
    }
    worst
}

#[test]
fn every_step_removes_its_removable_terms() {
    let p = pipeline();
    assert_eq!(p.result.hamiltonians.len(), 3);
    assert!(removable_size(&p.space, &p.h1, 2, 1) < 1e-7);
    assert!(removable_size(&p.space, &p.h1, 3, 2) > 1e-3, "input is already normal");
    for (l, h) in (1..).zip(&p.result.hamiltonians) {
        let r = removable_size(&p.space, h, l + 1, l);
        assert!(r <= 1e-8, "step {l}: {r:e}");
        assert!(h.reality_defect() < 1e-12);
    }
    let last = p.result.final_hamiltonian().unwrap();
    assert!(removable_size(&p.space, last, 4, 3) <= 1e-8);
}

#[test]
fn diagonal_frequency_is_stable_across_steps() {
    let p = pipeline();
    let e = p.space.frequencies()[0];
    for h in &p.result.hamiltonians {
        assert!((diagonal(&p.space, h)[0] - e).abs() <= 1e-8);
    }
}

#[test]
fn first_step_iteration_converges_quickly() {
    let p = pipeline();
    let first = &p.result.reports[0];
    assert!(first.iterations <= 5, "{:?}", first.updates);
    assert!(p.result.reports.iter().all(|r| r.iterations <= 5));
}

#[test]
fn plain_homological_solve_has_small_residual_and_stays_in_the_continuum() {
    let p = pipeline();
    for (step, h) in [(1, &p.h1), (2, &p.result.hamiltonians[0]), (3, &p.result.hamiltonians[1])] {
        let k = step_targets(&p.space, h, step);
        let chi = solve_homological(&p.space, &k).unwrap();
        assert!(homological_residual(&p.space, &chi, &k) <= 1e-8);
    }
    for chi in &p.result.generators {
        for a in chi.linear.values() {
            let g = p.space.j_apply(a);
            assert!(p.space.frame_defect(&g) <= 1e-9);
        }
    }
}

#[test]
fn already_normal_input_is_left_unchanged() {
    let s = &pipeline().space;
    let mut h = h2(s);
    h.add_scalar(mono(2, 2, 0), Complex64::new(0.7, 0.0));
    h.add_scalar(mono(1, 1, 1), Complex64::new(-0.2, 0.0));
    let r = birkhoff_normalize(s, &h, &BirkhoffOptions::for_space(s)).unwrap();
    assert!(r.generators.iter().all(|g| g.is_empty()));
    let last = r.final_hamiltonian().unwrap();
    assert_eq!(last.scalar, h.scalar);
    assert_eq!(last.linear.len(), 0);
}

#[test]
fn flow_of_the_action_rotates_the_mode() {
    let s = &tiny().space;
    let mut chi = Poly::zero(s);
    let c = 0.37;
    chi.add_scalar(mono(1, 1, 0), Complex64::new(c, 0.0));
    let z = [Complex64::new(0.3, -0.1)];
    let f = DVector::zeros(s.dim());
    let ode = OracleOptions::default().ode;
    let (zz, ff) = generator_flow(s, &chi, &z, &f, ode).unwrap();
    let expected = z[0] * Complex64::from_polar(1.0, c);
    assert!((zz[0] - expected).norm() < 1e-11, "{} vs {expected}", zz[0]);
    assert_eq!(ff.norm(), 0.0);
    let (z0, f0) = compose_flows(s, &[], &z, &f, ode).unwrap();
    assert_eq!(z0, z.to_vec());
    assert_eq!(f0, f);
}

#[test]
fn oracle_is_exact_at_the_origin() {
    let p = tiny();
    let exact = ExactHamiltonian::new(&p.chart, &p.space, BuildOptions::with_cap(5).ode);
    let z = [Complex64::new(0.0, 0.0)];
    let f = DVector::zeros(p.space.dim());
    let (zy, fy) = compose_flows(&p.space, &p.result.generators, &z, &f, OracleOptions::default().ode).unwrap();
    let v = exact.value(&zy, &fy).unwrap();
    assert!(v.abs() < 1e-12, "{v:e}");
    assert_eq!(p.result.final_hamiltonian().unwrap().evaluate(&p.space, &z, &f), 0.0);
}

#[test]
fn loglog_slope_of_a_power_law() {
    let x = [1e-2f64, 5e-3, 2.5e-3];
    let y: Vec<f64> = x.iter().map(|v| 3.0 * v.powi(6)).collect();
    assert!((loglog_slope(&x, &y) - 6.0).abs() < 1e-12);
}

#[test]
fn truncation_error_has_the_order_of_the_cap() {
    let p = tiny();
    let cap = BirkhoffOptions::for_space(&p.space).cap;
    let exact = ExactHamiltonian::new(&p.chart, &p.space, BuildOptions::with_cap(cap).ode);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let report = finite_dim_oracle(
        &p.space,
        |z, f| exact.value(z, f),
        &p.result.generators,
        p.result.final_hamiltonian().unwrap(),
        cap,
        &OracleOptions::default(),
        &mut rng,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
    assert!(report.slope >= cap as f64 + 1.0 - 0.3);
}

#[test]
fn coefficient_table_lists_every_term_with_its_class() {
    let p = pipeline();
    let grid = p.chart.model.grid();
    let last = p.result.final_hamiltonian().unwrap();
    let rows = coefficient_rows(&p.space, grid, last);
    assert_eq!(rows.len(), last.scalar.len() + last.linear.len());
    let quartic = rows.iter().find(|r| r.mu == "2" && r.nu == "2" && r.rho_order == 0).unwrap();
    assert_eq!(quartic.class, "Z0");
    assert!(rows.iter().filter(|r| r.g_norm.is_some()).all(|r| r.class != "Z0"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.csv");
    write_coefficient_csv(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("degree,mu,nu,rho_order,re_a,im_a,g_sigma_norm,class\n"));
    assert_eq!(text.lines().count(), rows.len() + 1);
}

#[test]
fn seeded_runs_produce_identical_bundles() {
    let write = || {
        let p = run(8.0, 32);
        let dir = tempfile::tempdir().unwrap();
        let grid = p.chart.model.grid();
        let last = p.result.final_hamiltonian().unwrap();
        write_bundle(dir.path(), &p.space, grid, last, 5).unwrap();
        write_coefficient_csv(&dir.path().join("table.csv"), &coefficient_rows(&p.space, grid, last)).unwrap();
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    let a = write();
    let b = write();
    assert!(a.iter().any(|(n, _)| n == "bundle.json"));
    assert_eq!(a, b);
}
