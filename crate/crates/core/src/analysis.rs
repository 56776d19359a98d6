//! Energy functions of the averaged system, numeric linearization, assumption
//! pre-flight checks and an empirical practical-stability harness.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::{averaged_rhs, AveragedState, AveragedSystem};
use crate::controller::{ClosedLoop, Controller, ControllerGains, SystemState};
use crate::error::{invalid, EscError, Result};
use crate::geometry::GroupElement;
use crate::plant::PlantModel;
use crate::signals::ShapingFunction;
use crate::sim::{integrate, step_size_for, Trajectory};

/// Largest averaged-vector-field norm accepted as an equilibrium.
pub const EQUILIBRIUM_TOLERANCE: f64 = 1e-8;

/// Default central-difference step of [`linearize_averaged`].
pub const LINEARIZATION_STEP: f64 = 1e-5;

/// Data of the energy function `V`.
#[derive(Debug, Clone)]
pub struct EnergyParams {
    /// `Ξ = bκ((aλ − bκ) I + λ R)⁻¹` in frame coordinates.
    pub xi: DMatrix<f64>,
    pub gains: ControllerGains,
    pub shaping: ShapingFunction,
    pub g_star: GroupElement,
    pub psi_star: f64,
}

impl EnergyParams {
    pub fn new(
        plant: &PlantModel,
        gains: ControllerGains,
        shaping: ShapingFunction,
        g_star: GroupElement,
    ) -> Result<Self> {
        let xi = xi_matrix(&gains, plant.damping())?;
        let psi_star = plant.output(&g_star);
        Ok(Self {
            xi,
            gains,
            shaping,
            g_star,
            psi_star,
        })
    }
}

/// `Ξ = bκ((aλ − bκ) I + λ R)⁻¹`; errors if the result is not positive definite.
pub fn xi_matrix(gains: &ControllerGains, damping: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = damping.nrows();
    let base = DMatrix::identity(n, n) * gains.margin() + damping * gains.lambda();
    let inv = base
        .try_inverse()
        .ok_or_else(|| invalid("(aλ − bκ) I + λ R is singular"))?;
    let xi = (&inv + inv.transpose()) * (0.5 * gains.b() * gains.kappa());
    let min = SymmetricEigen::new(xi.clone()).eigenvalues.min();
    if min <= 0.0 {
        return Err(invalid(format!("Ξ is not positive definite (min eigenvalue {min:e})")));
    }
    Ok(xi)
}

fn xi_norm2(xi: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(xi * x))
}

/// `V = ½‖v‖² + ½‖v − (λ/κ)w‖²_Ξ + λ²(αα′)(0)(ψ(g) − ψ(g*)) + λ²β(ψ(g) − η)`.
pub fn lyapunov_v(params: &EnergyParams, plant: &PlantModel, x: &SystemState) -> f64 {
    let gains = &params.gains;
    let l2 = gains.lambda().powi(2);
    let psi = plant.output(&x.g);
    let p = &x.v - &x.w * (gains.lambda() / gains.kappa());
    0.5 * x.v.norm_squared()
        + 0.5 * xi_norm2(&params.xi, &p)
        + l2 * params.shaping.alpha_alpha_prime(0.0) * (psi - params.psi_star)
        + l2 * params.shaping.beta(psi - x.eta)
}

/// Derivative of [`lyapunov_v`] along the averaged flow:
///
/// ```text
/// V̇ = −hλ²β′(Δ)Δ − ‖v‖²_R − ‖v‖²_{RΞ} − (λ/κ²)(aλ − bκ)‖w‖²_Ξ − 𝕀(Ξ∇_v v, v − (λ/κ)w)
/// ```
///
/// This assumes `𝕀(∇_v v, v) = 0`, which holds for the connection of any
/// kinetic-energy metric.
pub fn lyapunov_vdot(params: &EnergyParams, plant: &PlantModel, x: &SystemState) -> f64 {
    let gains = &params.gains;
    let (a, lambda, b, kappa, h) = (gains.a(), gains.lambda(), gains.b(), gains.kappa(), gains.h());
    let delta = plant.output(&x.g) - x.eta;
    let r = plant.damping();
    let rv = r * &x.v;
    let p = &x.v - &x.w * (lambda / kappa);
    let nabla = plant.connection().self_covariant(&x.v);
    -h * lambda * lambda * params.shaping.beta_prime(delta) * delta
        - x.v.dot(&rv)
        - x.v.dot(&(&params.xi * &rv))
        - lambda / (kappa * kappa) * (a * lambda - b * kappa) * xi_norm2(&params.xi, &x.w)
        - (&params.xi * nabla).dot(&p)
}

/// `V_ε = V − ε(bκ/λ) 𝕀(grad ψ, v) + ε(aλ/κ) 𝕀(grad ψ, w)`.
pub fn chetaev_v_eps(params: &EnergyParams, plant: &PlantModel, x: &SystemState, eps: f64) -> f64 {
    let gains = &params.gains;
    let grad = plant.gradient(&x.g);
    lyapunov_v(params, plant, x) - eps * (gains.b() * gains.kappa() / gains.lambda()) * grad.dot(&x.v)
        + eps * (gains.a() * gains.lambda() / gains.kappa()) * grad.dot(&x.w)
}

/// Point of `G × ℝⁿ × ℝⁿ × ℝ` at chart coordinates `z = (ξ, δv, δw, δη)`
/// around `x*`, with `g = g* exp(Σ ξ_i e_i)`.
pub fn chart_point(plant: &PlantModel, x_star: &SystemState, z: &DVector<f64>) -> SystemState {
    let n = plant.dim();
    let xi = plant.frame().embed(&z.rows(0, n).into_owned());
    SystemState::new(
        plant.group().compose(&x_star.g, &plant.group().exp(&xi)),
        &x_star.v + z.rows(n, n),
        &x_star.w + z.rows(2 * n, n),
        x_star.eta + z[3 * n],
    )
}

fn chart_rhs(
    plant: &PlantModel,
    gains: &ControllerGains,
    shaping: &ShapingFunction,
    x_star: &SystemState,
    z: &DVector<f64>,
) -> DVector<f64> {
    let n = plant.dim();
    let state = chart_point(plant, x_star, z);
    let d = averaged_rhs(plant, gains, shaping, &state);
    let theta = plant.frame().embed(&z.rows(0, n).into_owned());
    let xi_dot = plant
        .frame()
        .coords(&plant.group().dexp_inv(&theta, &plant.algebra_velocity(&d.velocity)));
    let mut out = DVector::zeros(3 * n + 1);
    out.rows_mut(0, n).copy_from(&xi_dot);
    out.rows_mut(n, n).copy_from(&d.v_dot);
    out.rows_mut(2 * n, n).copy_from(&d.w_dot);
    out[3 * n] = d.eta_dot;
    out
}

/// Jacobian and spectrum of the averaged system at an equilibrium.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub jacobian: DMatrix<f64>,
    pub eigenvalues: Vec<Complex<f64>>,
}

impl Linearization {
    pub fn max_real_part(&self) -> f64 {
        self.eigenvalues.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max |Im/Re|` over the spectrum.
    pub fn max_oscillation_ratio(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|e| (e.im / e.re).abs())
            .fold(0.0, f64::max)
    }

    /// Eigenvalues as `(re, im)` pairs.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.eigenvalues.iter().map(|e| (e.re, e.im)).collect()
    }
}

/// Central-difference Jacobian of the averaged system in chart coordinates.
pub fn averaged_jacobian(
    plant: &PlantModel,
    gains: &ControllerGains,
    shaping: &ShapingFunction,
    x_star: &SystemState,
    step: f64,
) -> DMatrix<f64> {
    let dim = 3 * plant.dim() + 1;
    let mut jac = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let mut plus = DVector::zeros(dim);
        plus[j] = step;
        let minus = -&plus;
        let col = (chart_rhs(plant, gains, shaping, x_star, &plus)
            - chart_rhs(plant, gains, shaping, x_star, &minus))
            / (2.0 * step);
        jac.set_column(j, &col);
    }
    jac
}

/// Linearizes the averaged system at `x_star`; rejects non-equilibria.
pub fn linearize_averaged(
    plant: &PlantModel,
    gains: &ControllerGains,
    shaping: &ShapingFunction,
    x_star: &SystemState,
) -> Result<Linearization> {
    let residual = averaged_rhs(plant, gains, shaping, x_star).norm();
    if residual.is_nan() || residual > EQUILIBRIUM_TOLERANCE {
        return Err(EscError::NotEquilibrium {
            residual,
            tolerance: EQUILIBRIUM_TOLERANCE,
        });
    }
    let jacobian = averaged_jacobian(plant, gains, shaping, x_star, LINEARIZATION_STEP);
    let mut eigenvalues: Vec<Complex<f64>> = jacobian.complex_eigenvalues().iter().copied().collect();
    eigenvalues.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(Linearization {
        jacobian,
        eigenvalues,
    })
}

/// `x* = (g*, 0, 0, ψ(g*))`.
pub fn equilibrium(plant: &PlantModel, g_star: GroupElement) -> SystemState {
    let eta = plant.output(&g_star);
    SystemState::at_rest(g_star, plant.dim(), eta)
}

/// Eigenvalues of the exponential-chart Hessian of `ψ` at `g_star`,
/// ascending. All positive is the nondegenerate-minimum pre-flight check.
pub fn hessian_eigenvalues(plant: &PlantModel, g_star: &GroupElement) -> Vec<f64> {
    let n = plant.dim();
    let h = 1e-4 * g_star.coords().amax().max(1.0);
    let value = |xi: &DVector<f64>| {
        let g = plant.group().compose(g_star, &plant.group().exp(&plant.frame().embed(xi)));
        plant.output(&g)
    };
    let unit = |i: usize| DVector::from_fn(n, |k, _| if k == i { h } else { 0.0 });
    let f0 = value(&DVector::zeros(n));
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let (ei, ej) = (unit(i), unit(j));
            let entry = if i == j {
                (value(&ei) - 2.0 * f0 + value(&-&ei)) / (h * h)
            } else {
                (value(&(&ei + &ej)) - value(&(&ei - &ej)) - value(&(&ej - &ei)) + value(&-(&ei + &ej)))
                    / (4.0 * h * h)
            };
            hess[(i, j)] = entry;
            hess[(j, i)] = entry;
        }
    }
    let mut eig: Vec<f64> = SymmetricEigen::new(hess).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Smallest gradient norm over `points`. A positive value on samples of a
/// punctured sublevel set is the nonvanishing-gradient pre-flight check.
pub fn min_gradient_norm(plant: &PlantModel, points: &[GroupElement]) -> f64 {
    points
        .iter()
        .map(|g| plant.gradient(g).norm())
        .fold(f64::INFINITY, f64::min)
}

/// Which flow a stability scan integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanFlow {
    ClosedLoop,
    Averaged,
}

/// Where initial transformed states are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SamplingRegion {
    /// Uniform in the chart ball of this radius around `x*`.
    Ball { radius: f64 },
    /// Uniform in the chart ball, kept only where `V ≤ level`.
    Sublevel { radius: f64, level: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub epsilons: Vec<f64>,
    pub omegas: Vec<f64>,
    pub samples: usize,
    pub phases: usize,
    pub horizon: f64,
    pub region: SamplingRegion,
    pub seed: u64,
    pub flow: ScanFlow,
    pub steps_per_period: usize,
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[f64]| !v.is_empty() && v.iter().all(|x| x.is_finite() && *x > 0.0);
        if !positive(&self.epsilons) {
            return Err(invalid("scan epsilons must be a nonempty list of positive numbers"));
        }
        if !positive(&self.omegas) {
            return Err(invalid("scan omegas must be a nonempty list of positive numbers"));
        }
        if self.samples == 0 || self.phases == 0 {
            return Err(invalid("scan needs at least one sample and one phase"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(invalid("scan horizon must be positive"));
        }
        let radius = match self.region {
            SamplingRegion::Ball { radius } | SamplingRegion::Sublevel { radius, .. } => radius,
        };
        if !(radius.is_finite() && radius > 0.0) {
            return Err(invalid("sampling radius must be positive"));
        }
        Ok(())
    }
}

/// Outcome of one `(ω, initial state, phase)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRecord {
    pub omega: f64,
    pub sample: usize,
    pub t0: f64,
    /// Deviation of the initial transformed state from `x*`.
    pub initial_deviation: f64,
    /// Largest deviation along the run (the boundedness radius).
    pub sup_deviation: f64,
    pub final_deviation: f64,
    /// Per ε: time after which the deviation stays within ε, if it does.
    pub entry_times: Vec<Option<f64>>,
    pub passes: Vec<bool>,
    pub fault: Option<String>,
}

impl CellRecord {
    pub fn passes_all(&self) -> bool {
        self.passes.iter().all(|&p| p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OmegaSummary {
    pub omega: f64,
    pub cells: usize,
    /// Per ε: number of cells that entered and stayed in the ε-ball.
    pub passing: Vec<usize>,
    /// Smallest ε for which every cell at this ω passes.
    pub smallest_passing_epsilon: Option<f64>,
    pub max_excursion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub flow: ScanFlow,
    pub epsilons: Vec<f64>,
    pub cells: Vec<CellRecord>,
    pub summaries: Vec<OmegaSummary>,
}

impl StabilityReport {
    pub fn all_pass(&self) -> bool {
        self.cells.iter().all(CellRecord::passes_all)
    }

    /// Whether the smallest passing ε never grows along the ω ladder.
    pub fn epsilon_nonincreasing(&self) -> bool {
        let eps: Vec<Option<f64>> = self.summaries.iter().map(|s| s.smallest_passing_epsilon).collect();
        eps.windows(2).all(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => b <= a,
            (None, _) => true,
            (Some(_), None) => false,
        })
    }
}

fn sample_chart_offsets(
    plant: &PlantModel,
    x_star: &SystemState,
    config: &ScanConfig,
    energy: Option<&EnergyParams>,
) -> Result<Vec<DVector<f64>>> {
    let dim = 3 * plant.dim() + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut draw = |radius: f64| {
        let dir = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
        dir.normalize() * r
    };
    let mut out = Vec::with_capacity(config.samples);
    match config.region {
        SamplingRegion::Ball { radius } => {
            for _ in 0..config.samples {
                out.push(draw(radius));
            }
        }
        SamplingRegion::Sublevel { radius, level } => {
            let params = energy.ok_or_else(|| invalid("sublevel sampling needs energy parameters"))?;
            let mut tries = 0usize;
            while out.len() < config.samples {
                tries += 1;
                if tries > 10_000 * config.samples {
                    return Err(invalid(format!(
                        "could not draw {} samples with V ≤ {level} inside radius {radius}",
                        config.samples
                    )));
                }
                let z = draw(radius);
                if lyapunov_v(params, plant, &chart_point(plant, x_star, &z)) <= level {
                    out.push(z);
                }
            }
        }
    }
    Ok(out)
}

fn entry_time(times: &[f64], deviations: &[f64], eps: f64) -> Option<f64> {
    match deviations.iter().rposition(|&d| d > eps) {
        None => times.first().copied(),
        Some(k) if k + 1 < times.len() => Some(times[k + 1]),
        Some(_) => None,
    }
}

fn run_cell(
    plant: &PlantModel,
    controller: &Controller,
    x_star: &SystemState,
    config: &ScanConfig,
    start: &AveragedState,
    t0: f64,
) -> Result<(Trajectory, Vec<f64>)> {
    let step = step_size_for(controller.gains.omega(), config.steps_per_period)?;
    let t_end = t0 + config.horizon;
    let (traj, deviations) = match config.flow {
        ScanFlow::Averaged => {
            let field = AveragedSystem::new(plant, &controller.gains, &controller.shaping);
            let traj = integrate(&field, start.to_state(), t0, t_end, step)?;
            let dev = traj
                .states
                .iter()
                .map(|s| SystemState::from_state(s).map(|x| x.distance(x_star)))
                .collect::<Result<Vec<_>>>()?;
            (traj, dev)
        }
        ScanFlow::ClosedLoop => {
            let field = ClosedLoop::new(plant, controller)?;
            let traj = integrate(&field, field.from_tilde(t0, start).to_state(), t0, t_end, step)?;
            let dev = traj
                .times
                .iter()
                .zip(&traj.states)
                .map(|(&t, s)| SystemState::from_state(s).map(|x| field.to_tilde(t, &x).distance(x_star)))
                .collect::<Result<Vec<_>>>()?;
            (traj, dev)
        }
    };
    Ok((traj, deviations))
}

/// Samples initial transformed states around `x_star`, integrates every
/// `(ω, sample, phase)` cell over the horizon and records how the deviation
/// from `x_star` evolves. Cells run in parallel; results are deterministic
/// for a given seed.
///
/// Phases are `t0 = p (2π/ω) / phases`. A faulted run fails its cell.
pub fn practical_stability_scan(
    plant: &PlantModel,
    controller: &Controller,
    x_star: &SystemState,
    config: &ScanConfig,
    energy: Option<&EnergyParams>,
) -> Result<StabilityReport> {
    config.validate()?;
    controller.check_channels(plant)?;
    let offsets = sample_chart_offsets(plant, x_star, config, energy)?;
    let starts: Vec<AveragedState> = offsets.iter().map(|z| chart_point(plant, x_star, z)).collect();

    let jobs: Vec<(usize, usize, usize)> = (0..config.omegas.len())
        .flat_map(|o| (0..config.samples).flat_map(move |s| (0..config.phases).map(move |p| (o, s, p))))
        .collect();

    let cells = jobs
        .par_iter()
        .map(|&(o, s, p)| -> Result<CellRecord> {
            let omega = config.omegas[o];
            let c = controller.with_omega(omega)?;
            let t0 = p as f64 * 2.0 * std::f64::consts::PI / omega / config.phases as f64;
            let (traj, dev) = run_cell(plant, &c, x_star, config, &starts[s], t0)?;
            let fault = traj.fault.as_ref().map(|f| format!("t = {}: {}", f.time, f.reason));
            let entry_times: Vec<Option<f64>> = config
                .epsilons
                .iter()
                .map(|&eps| if fault.is_some() { None } else { entry_time(&traj.times, &dev, eps) })
                .collect();
            Ok(CellRecord {
                omega,
                sample: s,
                t0,
                initial_deviation: starts[s].distance(x_star),
                sup_deviation: dev.iter().copied().fold(0.0, f64::max),
                final_deviation: dev.last().copied().unwrap_or(f64::NAN),
                passes: entry_times.iter().map(Option::is_some).collect(),
                entry_times,
                fault,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let summaries = config
        .omegas
        .iter()
        .map(|&omega| {
            let at: Vec<&CellRecord> = cells.iter().filter(|c| c.omega == omega).collect();
            let passing: Vec<usize> = (0..config.epsilons.len())
                .map(|e| at.iter().filter(|c| c.passes[e]).count())
                .collect();
            let smallest_passing_epsilon = config
                .epsilons
                .iter()
                .zip(&passing)
                .filter(|(_, &count)| count == at.len())
                .map(|(&eps, _)| eps)
                .fold(None, |acc: Option<f64>, e| Some(acc.map_or(e, |a| a.min(e))));
            OmegaSummary {
                omega,
                cells: at.len(),
                passing,
                smallest_passing_epsilon,
                max_excursion: at.iter().map(|c| c.sup_deviation).fold(0.0, f64::max),
            }
        })
        .collect();

    Ok(StabilityReport {
        flow: config.flow,
        epsilons: config.epsilons.clone(),
        cells,
        summaries,
    })
}
