//! Command-line front end: scenario loading, run orchestration and artifact
//! emission.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::analysis::{
    equilibrium, hessian_eigenvalues, linearize_averaged, lyapunov_v, practical_stability_scan, EnergyParams,
    SamplingRegion, ScanConfig, ScanFlow,
};
use crate::averaging::{compare_runs, AveragedSystem, LadderPoint};
use crate::controller::{ClosedLoop, SystemState};
use crate::error::{invalid, EscError, Result};
use crate::output::{Columns, TrajectoryTable};
use crate::plant::OpenLoop;
use crate::scenario::{builtin, builtin_scenarios, Scenario, Setup};
use crate::signals::{gram_matrix, lambda_matrix, make_harmonic_bank, BankVariant, DEFAULT_QUADRATURE_POINTS};
use crate::sim::{integrate_with, step_size_for, IntegrateOptions, State, Trajectory};

/// Tolerance of the `signals-check` orthonormality report.
pub const SIGNALS_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "esc", version, about = "Extremum seeking control on Lie groups")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the closed loop (or the open-loop plant) and write trajectory.csv and summary.json.
    Simulate(RunArgs),
    /// Integrate the averaged system from the transformed initial state.
    Average(RunArgs),
    /// Compare closed-loop and averaged runs over an ω ladder; writes compare.json.
    Compare(RunArgs),
    /// Sample initial states around the minimizer and test practical stability; writes stability.json.
    StabilityScan(ScanArgs),
    /// Linearize the averaged system at the minimizer; writes eigenvalues.json.
    Linearize(RunArgs),
    /// Check zero mean and orthonormality of a built-in dither bank; writes signals.json.
    SignalsCheck(SignalsArgs),
    /// Write every built-in scenario as a JSON file.
    Scenarios(OutArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario file (JSON).
    #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
    pub config: Option<PathBuf>,
    /// Name of a built-in scenario.
    #[arg(long)]
    pub builtin: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides ω.
    #[arg(long)]
    pub omega: Option<f64>,
    /// Keep every k-th step in trajectory output.
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FlowArg {
    ClosedLoop,
    Averaged,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Seed for initial-state sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flow to integrate in every cell.
    #[arg(long, value_enum)]
    pub flow: Option<FlowArg>,
}

#[derive(Debug, Args)]
pub struct SignalsArgs {
    /// canonical, fig1 or fig2.
    pub variant: String,
    /// Channel count, as `6` or `m=6`.
    pub size: Option<String>,
    /// Channel count.
    #[arg(long)]
    pub m: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// Result of a successful command.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    /// Set when an integration faulted; artifacts hold the partial run.
    pub fault: Option<String>,
    /// Set when a check ran but did not pass.
    pub failed_check: Option<String>,
}

impl Outcome {
    fn ok(artifacts: Vec<PathBuf>) -> Self {
        Self {
            artifacts,
            fault: None,
            failed_check: None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.fault.is_some() {
            3
        } else if self.failed_check.is_some() {
            4
        } else {
            0
        }
    }
}

/// Exit code for an error.
pub fn error_exit_code(err: &EscError) -> i32 {
    match err {
        EscError::Validation(_) | EscError::InvalidInput(_) | EscError::Json(_) | EscError::NotEquilibrium { .. } => 2,
        EscError::Fault { .. } => 3,
        _ => 1,
    }
}

/// Machine-readable error record.
pub fn error_record(err: &EscError) -> serde_json::Value {
    let kind = match err {
        EscError::InvalidInput(_) => "invalid-input",
        EscError::Domain(_) => "domain",
        EscError::NotEquilibrium { .. } => "not-equilibrium",
        EscError::Validation(_) => "validation",
        EscError::Fault { .. } => "fault",
        EscError::Io(_) => "io",
        EscError::Json(_) => "json",
        EscError::Csv(_) => "csv",
    };
    let issues = match err {
        EscError::Validation(list) => serde_json::to_value(list).unwrap_or_default(),
        _ => json!([]),
    };
    json!({ "status": "error", "kind": kind, "message": err.to_string(), "issues": issues })
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Simulate(args) => simulate(&args),
        Command::Average(args) => average(&args),
        Command::Compare(args) => compare(&args),
        Command::StabilityScan(args) => stability_scan(&args),
        Command::Linearize(args) => linearize(&args),
        Command::SignalsCheck(args) => signals_check(&args),
        Command::Scenarios(args) => write_scenarios(&args.out),
    }
}

fn load(args: &RunArgs) -> Result<Scenario> {
    let mut scenario = match (&args.config, &args.builtin) {
        (Some(path), _) => Scenario::load(path)?,
        (None, Some(name)) => builtin(name)?,
        (None, None) => return Err(invalid("either --config or --builtin is required")),
    };
    if let Some(omega) = args.omega {
        scenario.gains.omega = omega;
    }
    Ok(scenario)
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn energy_params(setup: &Setup) -> Result<Option<EnergyParams>> {
    setup
        .g_star
        .clone()
        .map(|g| EnergyParams::new(&setup.plant, setup.controller.gains, setup.controller.shaping.clone(), g))
        .transpose()
}

#[derive(Debug, Serialize)]
struct StateRecord {
    g: Vec<f64>,
    v: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    w: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
}

#[derive(Debug, Serialize)]
struct FaultRecord {
    time: f64,
    reason: String,
}

#[derive(Debug, Serialize)]
struct Summary {
    scenario: String,
    command: &'static str,
    omega: f64,
    step: f64,
    samples: usize,
    t_final: f64,
    initial_output: f64,
    final_output: f64,
    final_state: Option<StateRecord>,
    /// Sup and final distance of the (transformed) state from `x*`.
    sup_deviation: Option<f64>,
    final_deviation: Option<f64>,
    final_energy: Option<f64>,
    max_defect: f64,
    fault: Option<FaultRecord>,
}

fn state_record(state: &State, closed_loop: bool) -> Result<StateRecord> {
    if closed_loop {
        let s = SystemState::from_state(state)?;
        Ok(StateRecord {
            g: s.g.coords().iter().copied().collect(),
            v: s.v.iter().copied().collect(),
            w: Some(s.w.iter().copied().collect()),
            eta: Some(s.eta),
        })
    } else {
        Ok(StateRecord {
            g: state.g.coords().iter().copied().collect(),
            v: state.x.iter().copied().collect(),
            w: None,
            eta: None,
        })
    }
}

/// Distance of a recorded state from `x*`.
type DeviationFn<'a> = dyn Fn(f64, &State) -> Result<f64> + 'a;

/// Writes `trajectory.csv` and `summary.json`; `deviation` maps `(t, state)`
/// to the distance from `x*`.
#[allow(clippy::too_many_arguments)]
fn emit_run(
    out: &Path,
    scenario: &Scenario,
    setup: &Setup,
    command: &'static str,
    step: f64,
    traj: &Trajectory,
    closed_loop: bool,
    deviation: Option<&DeviationFn<'_>>,
) -> Result<Outcome> {
    prepare_out(out)?;
    let mut artifacts = Vec::new();
    if scenario.outputs.trajectory {
        let columns = Columns {
            energy: scenario.outputs.energy,
            defect: scenario.outputs.defect,
        };
        let table = TrajectoryTable::from_trajectory(traj, setup.plant.dim(), closed_loop, columns)?;
        let path = out.join("trajectory.csv");
        table.write_csv(&path)?;
        artifacts.push(path);
    }
    let deviations = match deviation {
        Some(f) => Some(
            traj.times
                .iter()
                .zip(&traj.states)
                .map(|(&t, s)| f(t, s))
                .collect::<Result<Vec<f64>>>()?,
        ),
        None => None,
    };
    let summary = Summary {
        scenario: scenario.name.clone(),
        command,
        omega: setup.controller.gains.omega(),
        step,
        samples: traj.len(),
        t_final: traj.times.last().copied().unwrap_or(scenario.t0),
        initial_output: traj.outputs.first().copied().unwrap_or(f64::NAN),
        final_output: traj.outputs.last().copied().unwrap_or(f64::NAN),
        final_state: traj.last().map(|s| state_record(s, closed_loop)).transpose()?,
        sup_deviation: deviations.as_ref().map(|d| d.iter().copied().fold(0.0, f64::max)),
        final_deviation: deviations.as_ref().and_then(|d| d.last().copied()),
        final_energy: traj.energy.as_ref().and_then(|e| e.last().copied()),
        max_defect: traj.max_defect(),
        fault: traj.fault.as_ref().map(|f| FaultRecord {
            time: f.time,
            reason: f.reason.clone(),
        }),
    };
    let path = out.join("summary.json");
    write_json(&path, &summary)?;
    artifacts.push(path);
    Ok(Outcome {
        artifacts,
        fault: traj.fault.as_ref().map(|f| format!("t = {}: {}", f.time, f.reason)),
        failed_check: None,
    })
}

fn run_step(scenario: &Scenario, setup: &Setup) -> Result<f64> {
    match scenario.step {
        Some(step) => Ok(step),
        None => step_size_for(setup.controller.gains.omega(), scenario.steps_per_period),
    }
}

fn simulate(args: &RunArgs) -> Result<Outcome> {
    let scenario = load(args)?;
    let setup = scenario.build()?;
    let step = run_step(&scenario, &setup)?;
    let plant = &setup.plant;

    if scenario.open_loop {
        let field = OpenLoop { plant };
        let kinetic = |_t: f64, s: &State| plant.kinetic_energy(&s.x);
        let options = IntegrateOptions {
            thin: args.thin,
            energy: Some(&kinetic),
        };
        let start = State::new(setup.initial.g.clone(), setup.initial.v.clone());
        let traj = integrate_with(&field, start, scenario.t0, scenario.t_end, step, &options)?;
        return emit_run(&args.out, &scenario, &setup, "simulate", step, &traj, false, None);
    }

    let field = ClosedLoop::new(plant, &setup.controller)?;
    let params = energy_params(&setup)?;
    let energy = |t: f64, s: &State| match (&params, SystemState::from_state(s)) {
        (Some(p), Ok(x)) => lyapunov_v(p, plant, &field.to_tilde(t, &x)),
        _ => f64::NAN,
    };
    let options = IntegrateOptions {
        thin: args.thin,
        energy: params.as_ref().map(|_| &energy as &dyn Fn(f64, &State) -> f64),
    };
    let traj = integrate_with(&field, setup.initial.to_state(), scenario.t0, scenario.t_end, step, &options)?;
    let x_star = setup.g_star.clone().map(|g| equilibrium(plant, g));
    let deviation = |t: f64, s: &State| -> Result<f64> {
        let x = SystemState::from_state(s)?;
        Ok(field.to_tilde(t, &x).distance(x_star.as_ref().expect("minimizer")))
    };
    emit_run(
        &args.out,
        &scenario,
        &setup,
        "simulate",
        step,
        &traj,
        true,
        x_star.as_ref().map(|_| &deviation as &DeviationFn),
    )
}

fn average(args: &RunArgs) -> Result<Outcome> {
    let scenario = load(args)?;
    let setup = scenario.build()?;
    let step = run_step(&scenario, &setup)?;
    let plant = &setup.plant;
    let gains = setup.controller.gains;
    let field = AveragedSystem::new(plant, &gains, &setup.controller.shaping);
    let closed = ClosedLoop::new(plant, &setup.controller)?;
    let start = closed.to_tilde(scenario.t0, &setup.initial);
    let params = energy_params(&setup)?;
    let energy = |_t: f64, s: &State| match (&params, SystemState::from_state(s)) {
        (Some(p), Ok(x)) => lyapunov_v(p, plant, &x),
        _ => f64::NAN,
    };
    let options = IntegrateOptions {
        thin: args.thin,
        energy: params.as_ref().map(|_| &energy as &dyn Fn(f64, &State) -> f64),
    };
    let traj = integrate_with(&field, start.to_state(), scenario.t0, scenario.t_end, step, &options)?;
    let x_star = setup.g_star.clone().map(|g| equilibrium(plant, g));
    let deviation = |_t: f64, s: &State| -> Result<f64> {
        Ok(SystemState::from_state(s)?.distance(x_star.as_ref().expect("minimizer")))
    };
    emit_run(
        &args.out,
        &scenario,
        &setup,
        "average",
        step,
        &traj,
        true,
        x_star.as_ref().map(|_| &deviation as &DeviationFn),
    )
}

fn compare(args: &RunArgs) -> Result<Outcome> {
    let scenario = load(args)?;
    let setup = scenario.build()?;
    let omegas = match (&scenario.ladder, args.omega) {
        (_, Some(omega)) => vec![omega],
        (Some(ladder), None) => ladder.clone(),
        (None, None) => vec![scenario.gains.omega],
    };
    let points = omegas
        .iter()
        .map(|&omega| {
            let controller = setup.controller.with_omega(omega)?;
            let cmp = compare_runs(
                &setup.plant,
                &controller,
                &setup.initial,
                scenario.t0,
                scenario.t_end,
                scenario.steps_per_period,
                1,
            )?;
            let fault = cmp
                .closed
                .fault
                .as_ref()
                .or(cmp.averaged.fault.as_ref())
                .map(|f| format!("t = {}: {}", f.time, f.reason));
            Ok(LadderPoint {
                omega,
                sup_error: cmp.sup_error,
                fault,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    prepare_out(&args.out)?;
    let path = args.out.join("compare.json");
    write_json(&path, &points)?;
    let fault = points.iter().find_map(|p| p.fault.clone());
    Ok(Outcome {
        artifacts: vec![path],
        fault,
        failed_check: None,
    })
}

fn default_scan(scenario: &Scenario) -> ScanConfig {
    ScanConfig {
        epsilons: vec![0.05, 0.1, 0.25, 0.5],
        omegas: scenario.ladder.clone().unwrap_or_else(|| vec![scenario.gains.omega]),
        samples: 8,
        phases: 4,
        horizon: scenario.t_end - scenario.t0,
        region: SamplingRegion::Ball { radius: 0.1 },
        seed: 0,
        flow: ScanFlow::ClosedLoop,
        steps_per_period: scenario.steps_per_period,
    }
}

fn stability_scan(args: &ScanArgs) -> Result<Outcome> {
    let scenario = load(&args.run)?;
    let setup = scenario.build()?;
    let g_star = setup
        .g_star
        .clone()
        .ok_or_else(|| invalid("stability-scan needs a minimizer in the scenario"))?;
    let mut config = scenario.scan.clone().unwrap_or_else(|| default_scan(&scenario));
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(omega) = args.run.omega {
        config.omegas = vec![omega];
    }
    if let Some(flow) = args.flow {
        config.flow = match flow {
            FlowArg::ClosedLoop => ScanFlow::ClosedLoop,
            FlowArg::Averaged => ScanFlow::Averaged,
        };
    }
    let params = energy_params(&setup)?;
    let x_star = equilibrium(&setup.plant, g_star);
    let report = practical_stability_scan(&setup.plant, &setup.controller, &x_star, &config, params.as_ref())?;
    prepare_out(&args.run.out)?;
    let path = args.run.out.join("stability.json");
    write_json(
        &path,
        &json!({
            "scenario": scenario.name,
            "config": config,
            "all_pass": report.all_pass(),
            "epsilon_nonincreasing": report.epsilon_nonincreasing(),
            "report": report,
        }),
    )?;
    Ok(Outcome::ok(vec![path]))
}

fn linearize(args: &RunArgs) -> Result<Outcome> {
    let scenario = load(args)?;
    let setup = scenario.build()?;
    let g_star = setup
        .g_star
        .clone()
        .ok_or_else(|| invalid("linearize needs a minimizer in the scenario"))?;
    let hessian = hessian_eigenvalues(&setup.plant, &g_star);
    let x_star = equilibrium(&setup.plant, g_star);
    let lin = linearize_averaged(&setup.plant, &setup.controller.gains, &setup.controller.shaping, &x_star)?;
    let jacobian: Vec<Vec<f64>> = lin.jacobian.row_iter().map(|r| r.iter().copied().collect()).collect();
    prepare_out(&args.out)?;
    let path = args.out.join("eigenvalues.json");
    let stable = lin.max_real_part() < 0.0;
    write_json(
        &path,
        &json!({
            "scenario": scenario.name,
            "eigenvalues": lin.pairs(),
            "max_real_part": lin.max_real_part(),
            "max_oscillation_ratio": lin.max_oscillation_ratio(),
            "stable": stable,
            "hessian_eigenvalues": hessian,
            "jacobian": jacobian,
        }),
    )?;
    Ok(Outcome::ok(vec![path]))
}

fn signals_check(args: &SignalsArgs) -> Result<Outcome> {
    let variant = BankVariant::from_str(&args.variant)?;
    let positional = match &args.size {
        Some(s) => Some(
            s.trim_start_matches("m=")
                .parse::<usize>()
                .map_err(|_| invalid(format!("channel count '{s}' is not a number")))?,
        ),
        None => None,
    };
    let m = args.m.or(positional).unwrap_or(match variant {
        BankVariant::Canonical | BankVariant::DescendingHarmonics => 6,
        BankVariant::PlanarQuadrature => 2,
    });
    let bank = make_harmonic_bank(m, variant)?;
    let gram = gram_matrix(&bank, DEFAULT_QUADRATURE_POINTS)?;
    let lambda = lambda_matrix(&bank);
    let identity = nalgebra::DMatrix::identity(m, m);
    let gram_dev = (&gram - &identity).amax();
    let lambda_dev = (&lambda - &identity * 0.5).amax();
    let means = bank.signal_means(DEFAULT_QUADRATURE_POINTS);
    let mean_dev = means.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    let pass = gram_dev <= SIGNALS_TOLERANCE && lambda_dev <= SIGNALS_TOLERANCE && mean_dev <= SIGNALS_TOLERANCE;
    let rows = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> { m.row_iter().map(|r| r.iter().copied().collect()).collect() };
    prepare_out(&args.out)?;
    let path = args.out.join("signals.json");
    write_json(
        &path,
        &json!({
            "variant": variant.key(),
            "m": m,
            "gram": rows(&gram),
            "lambda": rows(&lambda),
            "max_gram_deviation": gram_dev,
            "max_lambda_deviation": lambda_dev,
            "max_signal_mean": mean_dev,
            "tolerance": SIGNALS_TOLERANCE,
            "pass": pass,
        }),
    )?;
    Ok(Outcome {
        artifacts: vec![path],
        fault: None,
        failed_check: (!pass).then(|| format!("max |Gram − I| = {gram_dev:.3e}")),
    })
}

fn write_scenarios(out: &Path) -> Result<Outcome> {
    prepare_out(out)?;
    let mut artifacts = Vec::new();
    for s in builtin_scenarios() {
        let path = out.join(format!("{}.json", s.name));
        fs::write(&path, s.to_json()? + "\n")?;
        artifacts.push(path);
    }
    Ok(Outcome::ok(artifacts))
}
