//! The pipeline stages behind each subcommand.

use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use solform::darboux::{verify_darboux, AuditOptions, DarbouxState};
use solform::grid::{Grid, GridFunction};
use solform::linearize::{build_h, spectral_frame, SpectralOptions, SpectrumSummary};
use solform::model::{random_smooth_field, validate_assumptions, Model, ModelKind};
use solform::modulation::{modulate as modulation_coords, poisson_brackets, reconstruct, Chart, ChartOptions};
use solform::normalform::birkhoff::StepReport;
use solform::normalform::build::{build_h1, BuildOptions, ExactHamiltonian};
use solform::normalform::export::{coefficient_rows, write_bundle, write_coefficient_csv};
use solform::normalform::oracle::{finite_dim_oracle, OracleOptions};
use solform::normalform::{birkhoff_normalize, BirkhoffOptions, PhaseSpace};
use solform::soliton::{
    check_nondegeneracy, continue_branch, cubic_exact, invariant_jacobian, peak_modulus, potential_guess, solve_soliton,
    SolitonPoint, SolverOptions, Target,
};

use crate::config::RunConfig;
use crate::manifest::Run;
use crate::{CheckFailed, UsageError};

const COMMANDS: [&str; 5] = ["soliton", "spectrum", "modulate", "darboux-audit", "normalform"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `None` for checks that carry their own pass criterion.
    pub limit: Option<f64>,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit: Some(limit), passed: value <= limit }
    }

    fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit: Some(limit), passed: value >= limit }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Status {
    pub command: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    std::fs::write(dir.join(name), serde_json::to_string_pretty(value)?).with_context(|| format!("writing {name}"))
}

/// Writes `status.json` and turns failed checks into an error.
fn conclude(dir: &Path, command: &str, checks: Vec<Check>) -> Result<()> {
    let passed = checks.iter().all(|c| c.passed);
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| format!("{} = {:.3e}", c.name, c.value)).collect();
    write_json(dir, "status.json", &Status { command: command.into(), passed, checks })?;
    if !passed {
        return Err(CheckFailed(format!("failed checks: {}", failed.join(", "))).into());
    }
    Ok(())
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn model(cfg: &RunConfig) -> Result<Model> {
    let grid = Grid::new(cfg.grid.half_width, cfg.grid.points).map_err(|e| UsageError(format!("grid: {e}")))?;
    Ok(match cfg.model.kind {
        ModelKind::CubicNls => Model::cubic_nls(&grid),
        ModelKind::PotentialWell => Model::potential_well(&grid),
    })
}

fn solver(cfg: &RunConfig) -> SolverOptions {
    SolverOptions { tol: cfg.soliton.tol, ..SolverOptions::default() }
}

/// Soliton at the configured multipliers.
fn center(cfg: &RunConfig, m: &Model) -> Result<SolitonPoint> {
    let lambda = &cfg.soliton.lambda;
    let guess = match m.kind() {
        ModelKind::CubicNls => cubic_exact(m.grid(), lambda),
        ModelKind::PotentialWell => {
            // small-amplitude branch bifurcating from the well's ground state at lambda = -4
            let amp = ((-4.0 - lambda[0]) * 35.0 / 48.0).max(1e-4).sqrt();
            potential_guess(m.grid(), amp)
        }
    };
    solve_soliton(m, &Target::Lambda(lambda.clone()), &guess, solver(cfg)).context("center soliton")
}

fn chart(cfg: &RunConfig, m: &Model, pt: &SolitonPoint) -> Result<Chart> {
    let opts = ChartOptions { radius_fraction: cfg.chart.radius_fraction, solver: solver(cfg), ..ChartOptions::default() };
    Chart::build(m, pt, opts).context("chart")
}

fn write_field(dir: &Path, name: &str, f: &GridFunction) -> Result<()> {
    f.write_raw(&dir.join(format!("{name}.bin"))).with_context(|| format!("writing {name}"))?;
    Ok(())
}

pub fn soliton(cfg: &RunConfig, dir: &Path, run: &mut Run) -> Result<()> {
    let m = model(cfg)?;
    let pt = center(cfg, &m)?;
    run.lap("solve");
    write_field(dir, "center", &pt.phi)?;
    pt.phi.write_csv(&dir.join("center.csv"))?;
    write_json(
        dir,
        "soliton.json",
        &json!({
            "lambda": pt.lambda, "p": pt.p, "residual": pt.residual,
            "iterations": pt.iterations, "peak": peak_modulus(&pt.phi),
        }),
    )?;
    let mut checks = vec![Check::at_most("residual", pt.residual, cfg.soliton.tol)];
    let mut tables = vec![invariant_jacobian(&m, &pt)?];
    if let Some(end) = cfg.soliton.branch_end {
        let branch = continue_branch(&m, &pt, 0, end, cfg.soliton.branch_steps, solver(cfg))?;
        run.lap("branch");
        let n0 = m.n_sym();
        let mut w = csv::Writer::from_path(dir.join("branch.csv"))?;
        let mut header: Vec<String> = (0..n0).map(|j| format!("lambda_{j}")).collect();
        header.extend((0..n0).map(|j| format!("p_{j}")));
        header.extend(["residual".to_string(), "peak".to_string()]);
        w.write_record(&header)?;
        for (i, row) in branch.rows().iter().enumerate() {
            let mut rec: Vec<String> = row.lambda.iter().chain(&row.p).map(|v| fmt(*v)).collect();
            rec.push(fmt(row.residual));
            rec.push(fmt(row.peak));
            w.write_record(&rec)?;
            write_field(dir, &format!("branch_{i:03}"), &branch.points[i].phi)?;
        }
        w.flush()?;
        for p in branch.points.iter().skip(1) {
            tables.push(invariant_jacobian(&m, p)?);
        }
        let worst = branch.points.iter().map(|p| p.residual).fold(0.0, f64::max);
        checks.push(Check::at_most("branch_residual", worst, cfg.soliton.tol));
        let done = (branch.points.len() - 1) as f64;
        checks.push(Check::at_least("branch_steps", done, cfg.soliton.branch_steps as f64));
        if let Some(d) = &branch.diagnostic {
            write_json(dir, "branch_diagnostic.json", &json!({ "diagnostic": d }))?;
        }
    }
    let rank = check_nondegeneracy(&tables, cfg.soliton.rank_threshold);
    write_json(dir, "nondegeneracy.json", &rank)?;
    checks.push(Check::at_least("min_singular_value", rank.min_singular_value, rank.threshold));
    run.lap("nondegeneracy");
    conclude(dir, "soliton", checks)
}

#[derive(Serialize)]
struct SpectrumFile {
    #[serde(flatten)]
    summary: SpectrumSummary,
    frequencies: Vec<f64>,
    kernel_residual: f64,
    resonance_tol: f64,
    resonance_passed: bool,
    mode_files: Vec<[String; 2]>,
}

pub fn spectrum(cfg: &RunConfig, dir: &Path, run: &mut Run) -> Result<()> {
    let m = model(cfg)?;
    let pt = center(cfg, &m)?;
    run.lap("solve");
    let op = build_h(&m, &pt.phi, &pt.lambda, ChartOptions::default().kernel_tol).context("linearization")?;
    let frame = spectral_frame(&m, &op, SpectralOptions::default()).context("spectral frame")?;
    run.lap("eigensolve");
    let mut mode_files = Vec::new();
    for (j, mode) in frame.modes.iter().enumerate() {
        let re = m.field(&mode.xi.map(|c| c.re));
        let im = m.field(&mode.xi.map(|c| c.im));
        let names = [format!("mode_{j}.re.bin"), format!("mode_{j}.im.bin")];
        re.write_raw(&dir.join(&names[0]))?;
        im.write_raw(&dir.join(&names[1]))?;
        mode_files.push(names);
    }
    let resonance_passed = frame.check_resonances(cfg.spectrum.resonance_tol);
    let file = SpectrumFile {
        summary: SpectrumSummary::from(&frame),
        frequencies: frame.frequencies(),
        kernel_residual: op.kernel_residual,
        resonance_tol: cfg.spectrum.resonance_tol,
        resonance_passed,
        mode_files,
    };
    write_json(dir, "spectrum.json", &file)?;
    let mut checks = vec![Check::at_most("kernel_residual", op.kernel_residual, ChartOptions::default().kernel_tol)];
    // without discrete modes there is no combination to check
    if let Some(margin) = frame.resonance_margins.iter().cloned().reduce(f64::min) {
        checks.push(Check::at_least("resonance_margin", margin, cfg.spectrum.resonance_tol));
    }
    conclude(dir, "spectrum", checks)
}

/// Random smooth remainder in `X_0` with `|R| = size |Phi|`.
fn remainder(chart: &Chart, size: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let m = &chart.model;
    let r = chart.proj0.apply(&random_smooth_field(m, rng).to_dvector());
    let phi = chart.base.phi.to_dvector();
    let scale = size * m.dot(&phi, &phi).sqrt() / m.dot(&r, &r).sqrt();
    r * scale
}

/// Deviations of `{Pi, tau}` from `-1` and of `{Pi, p}` from `0`.
fn bracket_errors(bt: &DMatrix<f64>, bp: &DMatrix<f64>) -> (f64, f64) {
    let mut tau = 0.0f64;
    let mut p = 0.0f64;
    for j in 0..bt.nrows() {
        for k in 0..bt.ncols() {
            let want = if j == k { -1.0 } else { 0.0 };
            tau = tau.max((bt[(j, k)] - want).abs());
            p = p.max(bp[(j, k)].abs());
        }
    }
    (tau, p)
}

pub fn modulate(cfg: &RunConfig, dir: &Path, run: &mut Run) -> Result<()> {
    let m = model(cfg)?;
    let pt = center(cfg, &m)?;
    let c = chart(cfg, &m, &pt)?;
    run.lap("chart");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let r = remainder(&c, cfg.modulate.amplitude, &mut rng);
    let tau = &cfg.modulate.tau;
    let u = reconstruct(&c, tau, c.p0(), &r)?;
    let coords = modulation_coords(&c, &u, None, None)?;
    let back = reconstruct(&c, &coords.tau, &coords.p, &coords.r)?;
    let round_trip = back.sub(&u).norm();
    let tau_err = coords.tau.iter().zip(tau).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let p_err = coords.p.iter().zip(c.p0()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let (bt, bp) = poisson_brackets(&c, &u, 1e-6)?;
    run.lap("coordinates");
    let (bracket_tau, bracket_p) = bracket_errors(&bt, &bp);
    write_json(
        dir,
        "coords.json",
        &json!({
            "coordinates": coords.summary(&c),
            "round_trip_error": round_trip,
            "bracket_pi_tau": bt.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            "bracket_pi_p": bp.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
        }),
    )?;
    let checks = vec![
        Check::at_most("round_trip", round_trip, 1e-10),
        Check::at_most("tau_recovery", tau_err, 1e-8),
        Check::at_most("p_recovery", p_err, 1e-8),
        Check::at_most("bracket_pi_tau", bracket_tau, 1e-7),
        Check::at_most("bracket_pi_p", bracket_p, 1e-7),
    ];
    conclude(dir, "modulate", checks)
}

pub fn darboux_audit(cfg: &RunConfig, dir: &Path, run: &mut Run) -> Result<()> {
    let m = model(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let assumptions = validate_assumptions(&m, &mut rng, 8);
    let pt = center(cfg, &m)?;
    let c = chart(cfg, &m, &pt)?;
    run.lap("chart");
    let states: Vec<DarbouxState> = (0..cfg.chart.states)
        .map(|_| DarbouxState {
            tau: vec![0.0; c.n_sym()],
            pi: c.p0().iter().map(|p| p + cfg.chart.pi_offset).collect(),
            r: remainder(&c, cfg.chart.epsilon, &mut rng),
        })
        .collect();
    let opts = AuditOptions { step: cfg.chart.fd_step, tolerance: cfg.chart.tolerance, ..AuditOptions::default() };
    let audit = match verify_darboux(&c, &states, cfg.chart.samples, &mut rng, opts.clone()) {
        Ok(a) => a,
        Err(e) => {
            // the chart is too large for the flow: record the failure as a check
            write_json(dir, "audit.json", &json!({ "epsilon": cfg.chart.epsilon, "error": e.to_string(), "assumptions": assumptions }))?;
            let checks = vec![Check { name: "audit_completed".into(), value: cfg.chart.epsilon, limit: None, passed: false }];
            return conclude(dir, "darboux-audit", checks);
        }
    };
    run.lap("audit");
    // chart sizes epsilon * 2^k, one state each, until the audit fails
    let mut ladder = Vec::new();
    let mut largest_passing = None;
    for k in 0..cfg.chart.ladder {
        let eps = cfg.chart.epsilon * 2f64.powi(k as i32 + 1);
        let state = DarbouxState {
            tau: vec![0.0; c.n_sym()],
            pi: c.p0().iter().map(|p| p + cfg.chart.pi_offset).collect(),
            r: remainder(&c, eps, &mut rng),
        };
        let passed = match verify_darboux(&c, &[state], cfg.chart.samples.min(2), &mut rng, opts.clone()) {
            Ok(r) => {
                let passed = r.max_deviation <= cfg.chart.tolerance && r.max_deviation < r.control_deviation;
                ladder.push(json!({ "epsilon": eps, "deviation": r.max_deviation, "control": r.control_deviation, "passed": passed }));
                passed
            }
            Err(e) => {
                ladder.push(json!({ "epsilon": eps, "error": e.to_string(), "passed": false }));
                false
            }
        };
        if !passed {
            break;
        }
        largest_passing = Some(eps);
    }
    if audit.passed && largest_passing.is_none() {
        largest_passing = Some(cfg.chart.epsilon);
    }
    run.lap("ladder");
    let u = reconstruct(&c, &states[0].tau, c.p0(), &states[0].r)?;
    let (bt, bp) = poisson_brackets(&c, &u, 1e-6)?;
    let (bracket_tau, bracket_p) = bracket_errors(&bt, &bp);
    run.lap("brackets");
    write_json(
        dir,
        "audit.json",
        &json!({
            "darboux": audit,
            "epsilon": cfg.chart.epsilon,
            "ladder": ladder,
            "largest_passing_epsilon": largest_passing,
            "brackets": { "pi_tau": bt.as_slice(), "pi_p": bp.as_slice() },
            "assumptions": assumptions,
        }),
    )?;
    let mut checks = vec![
        Check::at_most("symplecticity_deviation", audit.max_deviation, cfg.chart.tolerance),
        Check::at_most("below_no_flow_control", audit.max_deviation, audit.control_deviation),
        Check::at_most("bracket_pi_tau", bracket_tau, 1e-7),
        Check::at_most("bracket_pi_p", bracket_p, 1e-7),
    ];
    for a in &assumptions.checks {
        checks.push(Check { name: a.name.clone(), value: a.max_error, limit: None, passed: a.passed });
    }
    conclude(dir, "darboux-audit", checks)
}

pub fn normalform(cfg: &RunConfig, dir: &Path, run: &mut Run) -> Result<()> {
    let m = model(cfg)?;
    let pt = center(cfg, &m)?;
    let c = chart(cfg, &m, &pt)?;
    let space = PhaseSpace::from_chart(&c);
    run.lap("chart");
    let nf = &cfg.normalform;
    let mut opts = BirkhoffOptions::for_space(&space);
    if let Some(cap) = nf.cap {
        opts.cap = cap;
    }
    opts.tolerance = nf.tolerance;
    opts.update_tol = nf.update_tol;
    opts.max_iter = nf.max_iter;
    let all = opts.step_count(&space);
    // step l normalizes scalar degree l + 1
    opts.steps = Some(nf.max_degree.map_or(all, |d| all.min(d - 1)));
    let (h1, build) = build_h1(&c, &space, &BuildOptions::with_cap(opts.cap))?;
    run.lap("expansion");
    write_json(dir, "build.json", &build)?;
    let grid = c.model.grid();
    write_coefficient_csv(&dir.join("h1.csv"), &coefficient_rows(&space, grid, &h1))?;
    let result = birkhoff_normalize(&space, &h1, &opts)?;
    run.lap("birkhoff");
    for (l, h) in (1..).zip(&result.hamiltonians) {
        write_coefficient_csv(&dir.join(format!("step_{l}.csv")), &coefficient_rows(&space, grid, h))?;
    }
    let reports: &[StepReport] = &result.reports;
    write_json(dir, "steps.json", &json!({ "options": opts, "steps": reports }))?;
    let last = result.final_hamiltonian().unwrap_or(&h1);
    let bundle_dir = dir.join("bundle");
    std::fs::create_dir_all(&bundle_dir)?;
    write_bundle(&bundle_dir, &space, grid, last, opts.cap)?;
    run.lap("export");
    let e = space.frequencies();
    let fitted = build.fitted_diagonal.iter().zip(e).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut checks = vec![
        Check::at_most("fitted_frequency", fitted, 1e-6),
        Check::at_most("field_degree1", build.field_degree1, 1e-7),
    ];
    for r in reports {
        checks.push(Check::at_most(&format!("step_{}_removable", r.step), r.max_removable, nf.tolerance));
        checks.push(Check::at_most(&format!("step_{}_drift", r.step), r.diagonal_drift, 1e-8));
    }
    if let Some(first) = reports.first() {
        checks.push(Check::at_most("step_1_iterations", first.iterations as f64, 5.0));
    }
    if nf.oracle && !result.generators.is_empty() {
        let exact = ExactHamiltonian::new(&c, &space, BuildOptions::with_cap(opts.cap).ode);
        let oopts = OracleOptions { amplitude: nf.oracle_amplitude, samples: nf.oracle_samples, ..OracleOptions::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let oracle =
            finite_dim_oracle(&space, |z, f| exact.value(z, f), &result.generators, last, opts.cap, &oopts, &mut rng)?;
        run.lap("oracle");
        write_json(dir, "oracle.json", &oracle)?;
        checks.push(Check::at_least("oracle_slope", oracle.slope, oracle.required));
    }
    conclude(dir, "normalform", checks)
}

pub fn report(cfg: &RunConfig, dir: &Path, run: &mut Run) -> Result<()> {
    let mut found = Vec::new();
    for name in COMMANDS {
        let path = cfg.output.join(name).join("status.json");
        if !path.exists() {
            continue;
        }
        let status: Status = serde_json::from_str(&std::fs::read_to_string(&path)?).with_context(|| format!("{}", path.display()))?;
        println!("{:<14} {}", name, if status.passed { "PASS" } else { "FAIL" });
        for c in &status.checks {
            let limit = c.limit.map(|l| format!("{l:.3e}")).unwrap_or_else(|| "-".into());
            println!("  {:<28} {:>12.3e}  limit {:>10}  {}", c.name, c.value, limit, if c.passed { "ok" } else { "FAIL" });
        }
        found.push(status);
    }
    run.lap("collect");
    if found.is_empty() {
        bail!(UsageError(format!("no command artifacts under {}", cfg.output.display())));
    }
    let passed = found.iter().all(|s| s.passed);
    write_json(dir, "report.json", &json!({ "passed": passed, "commands": found }))?;
    if !passed {
        return Err(CheckFailed("at least one command failed".into()).into());
    }
    Ok(())
}
