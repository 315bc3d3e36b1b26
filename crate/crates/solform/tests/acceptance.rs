//! Acceptance criteria, one line each. Run with `--nocapture` to see the
//! table; the test fails if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::{cubic_chart, cubic_point, potential_chart};
use nalgebra::DVector;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use solform::darboux::{defining_residual, integrate_flow, integrate_frozen, verify_darboux, AuditOptions, DarbouxState, Tangent};
use solform::grid::{Grid, GridFunction};
use solform::linearize::{build_h, omega_c};
use solform::model::{random_smooth_field, Model};
use solform::modulation::{modulate, poisson_brackets, reconstruct, Chart};
use solform::normalform::birkhoff::{diagonal, step_targets};
use solform::normalform::build::{build_h1, BuildOptions, ExactHamiltonian};
use solform::normalform::export::{coefficient_rows, write_bundle, write_coefficient_csv};
use solform::normalform::homological::field_norm;
use solform::normalform::oracle::{finite_dim_oracle, OracleOptions};
use solform::normalform::{
    birkhoff_normalize, classify_with, homological_residual, solve_homological, BirkhoffOptions, BirkhoffResult, PhaseSpace,
    Poly, TermClass,
};
use solform::ode::OdeOptions;
use solform::soliton::{branch_derivative, continue_branch, cubic_exact, solve_soliton, SolverOptions, Target};

type Outcome = (bool, String);

fn l2(h: f64, v: &DVector<f64>) -> f64 {
    (h * v.norm_squared()).sqrt()
}

fn soliton() -> Outcome {
    let g = Grid::new(20.0, 256).unwrap();
    let m = Model::cubic_nls(&g);
    let guess = GridFunction::from_fn(&g, 2, |c, x| if c == 0 { 1.1 / (0.9 * x).cosh() } else { 0.0 });
    let start = Instant::now();
    let pt = solve_soliton(&m, &Target::Lambda(vec![-1.0, 0.0]), &guess, SolverOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let err = pt.phi.sub(&cubic_exact(&g, &[-1.0, 0.0])).norm();
    let ok = pt.residual <= 1e-10 && err <= 1e-6 && secs < 5.0;
    (ok, format!("residual {:.1e}, closed-form error {err:.1e}, {secs:.2} s", pt.residual))
}

fn kernel() -> Outcome {
    let (m, _) = cubic_point(20.0, 256);
    let h = m.grid().spacing();
    let d = 1e-3;
    let guess = cubic_exact(m.grid(), &[-1.0 - d, 0.0]);
    let seed = solve_soliton(&m, &Target::Lambda(vec![-1.0 - d, 0.0]), &guess, SolverOptions::default()).unwrap();
    let branch = continue_branch(&m, &seed, 0, -1.0 + d, 2, SolverOptions::default()).unwrap();
    let mid = &branch.points[1];
    let op = build_h(&m, &mid.phi, &mid.lambda, 1e-8).unwrap();
    let phi = mid.phi.to_dvector();
    let mut kernel = 0.0f64;
    for k in 0..2 {
        kernel = kernel.max(l2(h, &(&op.matrix * m.j_vec(&m.diamond_vec(k, &phi)))));
    }
    let (dphi, dp) = branch_derivative(&branch, 1).unwrap();
    let dphi = dphi.to_dvector();
    let gen = l2(h, &(&op.matrix * &dphi - m.j_vec(&m.diamond_vec(0, &phi))));
    let pairing = (0..2).map(|k| (m.dot(&dphi, &m.diamond_vec(k, &phi)) - dp[k]).abs()).fold(0.0, f64::max);
    let ok = kernel <= 1e-8 && gen <= 1e-5 && pairing <= 1e-6;
    (ok, format!("|H J Phi| {kernel:.1e}, generalized {gen:.1e}, pairing {pairing:.1e}"))
}

fn frame() -> Outcome {
    let chart = potential_chart(10.0, 64, -4.5);
    let m = &chart.model;
    let xi = &chart.frame.modes[0].xi;
    let xib = xi.map(|v| v.conj());
    let norm = (omega_c(m, xi, &xib) - Complex64::new(0.0, -1.0)).norm();
    let iso = omega_c(m, xi, xi).norm();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut cont = 0.0f64;
    for _ in 0..50 {
        let f = &chart.pc * random_smooth_field(m, &mut rng).to_dvector();
        cont = cont.max(omega_c(m, xi, &f.map(|v| Complex64::new(v, 0.0))).norm());
    }
    let a: f64 = 1e-2;
    let small = potential_chart(12.0, 128, -4.0 - 48.0 / 35.0 * a * a);
    let e = small.frame.modes[0].e;
    let ok = norm <= 1e-8 && iso <= 1e-8 && cont <= 1e-8 && (e - 3.0).abs() <= 0.05 * 3.0;
    (ok, format!("normalization {norm:.1e}, isotropy {iso:.1e}, continuum {cont:.1e}, mode {e:.4}"))
}

/// `e^{J tau diamond}(Phi_p) + eps |Phi| X` with a random smooth `X`.
fn perturbed(chart: &Chart, tau: &[f64], dp: &[f64], eps: f64, seed: u64) -> GridFunction {
    let m = &chart.model;
    let p: Vec<f64> = chart.p0().iter().zip(dp).map(|(a, b)| a + b).collect();
    let (fp, _) = chart.at(&p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_smooth_field(m, &mut rng).to_dvector();
    let phi = fp.phi.to_dvector();
    let v = &phi + &x * (eps * m.dot(&phi, &phi).sqrt() / m.dot(&x, &x).sqrt());
    m.field(&m.group_vec(tau, &v))
}

fn modulation() -> Outcome {
    let potential = potential_chart(10.0, 64, -4.5);
    let cubic = cubic_chart(10.0, 128, 0.2);
    let mut trip = 0.0f64;
    let mut bracket = 0.0f64;
    for chart in [&potential, &cubic] {
        let n0 = chart.n_sym();
        let u = perturbed(chart, &vec![0.3; n0], &vec![0.01; n0], 1e-2, 4);
        let c = modulate(chart, &u, None, None).unwrap();
        trip = trip.max(reconstruct(chart, &c.tau, &c.p, &c.r).unwrap().sub(&u).norm());
        let (bt, bp) = poisson_brackets(chart, &u, 1e-6).unwrap();
        for j in 0..n0 {
            for k in 0..n0 {
                let want = if j == k { -1.0 } else { 0.0 };
                bracket = bracket.max((bt[(j, k)] - want).abs()).max(bp[(j, k)].abs());
            }
        }
    }
    let u = perturbed(&cubic, &[0.1, -0.2], &[0.0, 0.01], 1e-2, 8);
    let c = modulate(&cubic, &u, None, None).unwrap();
    let sigma = [0.7, 0.25];
    let d = modulate(&cubic, &cubic.model.group_action(&sigma, &u), None, None).unwrap();
    let dr = &d.r - &c.r;
    let df = &d.f - &c.f;
    let mut gauge = cubic.model.dot(&dr, &dr).sqrt().max(cubic.model.dot(&df, &df).sqrt());
    for k in 0..2 {
        gauge = gauge.max((d.tau[k] - c.tau[k] - sigma[k]).abs()).max((d.p[k] - c.p[k]).abs());
    }
    let ok = trip <= 1e-10 && bracket <= 1e-7 && gauge <= 1e-9;
    (ok, format!("round trip {trip:.1e}, brackets {bracket:.1e}, gauge {gauge:.1e}"))
}

fn darboux_state(chart: &Chart, eps: f64, seed: u64) -> DarbouxState {
    let m = &chart.model;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = chart.proj0.apply(&random_smooth_field(m, &mut rng).to_dvector());
    let phi = chart.base.phi.to_dvector();
    let r = &r * (eps * m.dot(&phi, &phi).sqrt() / m.dot(&r, &r).sqrt());
    let pi = chart.p0().iter().map(|p| p + 0.02).collect();
    DarbouxState { tau: vec![0.3; chart.n_sym()], pi, r }
}

fn darboux() -> Outcome {
    let c = potential_chart(10.0, 64, -4.5);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let probes: Vec<Tangent> = (0..20).map(|_| Tangent::random(&c, &mut rng)).collect();
    let x = darboux_state(&c, 0.03, 9);
    let mut defining = 0.0f64;
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        defining = defining.max(defining_residual(&c, &x, t, &probes).unwrap());
    }
    // remainders of relative size 1e-2
    let states = [darboux_state(&c, 1e-2, 13), darboux_state(&c, 1e-2, 14)];
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let audit = verify_darboux(&c, &states, 2, &mut rng, AuditOptions::default()).unwrap();
    let eps = [0.04, 0.02, 0.01];
    let gaps: Vec<f64> = eps
        .iter()
        .map(|&e| {
            let x = darboux_state(&c, e, 16);
            let full = integrate_flow(&c, &x, 1.0, OdeOptions::default()).unwrap();
            let frozen = integrate_frozen(&c, &x, 1.0, OdeOptions::default()).unwrap();
            let d = &full.r - &frozen;
            c.model.dot(&d, &d).sqrt()
        })
        .collect();
    let slope = (gaps[0] / gaps[2]).ln() / (eps[0] / eps[2]).ln();
    let ok = defining <= 1e-7
        && audit.max_deviation <= 1e-5
        && audit.max_deviation < audit.control_deviation
        && (slope - 3.0).abs() <= 0.3;
    (
        ok,
        format!(
            "defining {defining:.1e}, audit {:.1e} (control {:.1e}), frozen slope {slope:.3}",
            audit.max_deviation, audit.control_deviation
        ),
    )
}

struct Pipeline {
    chart: Chart,
    space: PhaseSpace,
    h1: Poly,
    result: BirkhoffResult,
    cap: u32,
}

fn pipeline(l: f64, n: usize) -> Pipeline {
    let chart = potential_chart(l, n, -4.5);
    let space = PhaseSpace::from_chart(&chart);
    let opts = BirkhoffOptions::for_space(&space);
    let (h1, _) = build_h1(&chart, &space, &BuildOptions::with_cap(opts.cap)).unwrap();
    let result = birkhoff_normalize(&space, &h1, &opts).unwrap();
    Pipeline { chart, space, h1, result, cap: opts.cap }
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

fn homological(p: &Pipeline) -> Outcome {
    let mut residual = 0.0f64;
    let mut inputs = vec![&p.h1];
    inputs.extend(p.result.hamiltonians.iter().take(p.result.hamiltonians.len().saturating_sub(1)));
    for (step, h) in (1..).zip(inputs) {
        let k = step_targets(&p.space, h, step);
        let chi = solve_homological(&p.space, &k).unwrap();
        residual = residual.max(homological_residual(&p.space, &chi, &k));
    }
    let mut frame = 0.0f64;
    for chi in &p.result.generators {
        for a in chi.linear.values() {
            frame = frame.max(p.space.frame_defect(&p.space.j_apply(a)));
        }
    }
    let iterations = p.result.reports[0].iterations;
    let ok = residual <= 1e-8 && frame <= 1e-9 && iterations <= 5;
    (ok, format!("residual {residual:.1e}, frame {frame:.1e}, first-step iterations {iterations}"))
}

fn birkhoff(p: &Pipeline) -> Outcome {
    let mut removable = 0.0f64;
    for (l, h) in (1..).zip(&p.result.hamiltonians) {
        removable = removable.max(removable_size(&p.space, h, l + 1, l));
    }
    let e = p.space.frequencies()[0];
    let drift = p.result.hamiltonians.iter().map(|h| (diagonal(&p.space, h)[0] - e).abs()).fold(0.0, f64::max);
    let ok = removable <= 1e-8 && drift <= 1e-8;
    (ok, format!("{} steps, removable {removable:.1e}, diagonal drift {drift:.1e}", p.result.hamiltonians.len()))
}

fn oracle() -> Outcome {
    let start = Instant::now();
    let p = pipeline(8.0, 32);
    let exact = ExactHamiltonian::new(&p.chart, &p.space, BuildOptions::with_cap(p.cap).ode);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let report = finite_dim_oracle(
        &p.space,
        |z, f| exact.value(z, f),
        &p.result.generators,
        p.result.final_hamiltonian().unwrap(),
        p.cap,
        &OracleOptions::default(),
        &mut rng,
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ok = report.slope >= p.cap as f64 + 1.0 - 0.3 && secs <= 600.0;
    (ok, format!("slope {:.3} (cap {}), {secs:.1} s", report.slope, p.cap))
}

fn bundle_bytes() -> Vec<(String, Vec<u8>)> {
    let p = pipeline(8.0, 32);
    let dir = tempfile::tempdir().unwrap();
    let grid = p.chart.model.grid();
    let last = p.result.final_hamiltonian().unwrap();
    write_bundle(dir.path(), &p.space, grid, last, p.cap).unwrap();
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
}

fn determinism() -> Outcome {
    let a = bundle_bytes();
    let b = bundle_bytes();
    let bytes: usize = a.iter().map(|(_, v)| v.len()).sum();
    (a == b && !a.is_empty(), format!("{} files, {bytes} bytes", a.len()))
}

fn check(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let (ok, detail) = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        (false, format!("panicked: {}", msg.unwrap_or_default()))
    });
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

#[test]
fn acceptance_criteria() {
    let normal = pipeline(10.0, 64);
    let results = [
        check("1 soliton", soliton),
        check("2 kernel", kernel),
        check("3 frame", frame),
        check("4 modulation", modulation),
        check("5 darboux", darboux),
        check("6 homological", || homological(&normal)),
        check("7 birkhoff", || birkhoff(&normal)),
        check("8 oracle", oracle),
        check("9 determinism", determinism),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
