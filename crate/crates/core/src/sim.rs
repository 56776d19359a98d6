//! Fixed-step geometric integration and trajectory recording.
//!
//! States live on `G × ℝ^k`. Vector fields report the group velocity as a
//! body velocity in raw algebra coordinates; the integrator advances the
//! group factor with a fourth-order Runge–Kutta–Munthe-Kaas step (stages
//! taken along `g·exp(θ)`, `dexp⁻¹` truncated at the double bracket) and the
//! vector factor with classical RK4.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::geometry::{GroupElement, LieGroup};

/// Manifold defect above which a run is declared faulted.
pub const DEFECT_LIMIT: f64 = 1e-6;

/// Default integration steps per dither period.
pub const DEFAULT_STEPS_PER_PERIOD: usize = 200;

/// Minimum steps per dither period accepted for closed-loop runs.
pub const MIN_STEPS_PER_PERIOD: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub g: GroupElement,
    pub x: DVector<f64>,
}

impl State {
    pub fn new(g: GroupElement, x: DVector<f64>) -> Self {
        Self { g, x }
    }

    pub fn is_finite(&self) -> bool {
        self.g.is_finite() && self.x.iter().all(|v| v.is_finite())
    }
}

/// Time derivative of a [`State`].
#[derive(Debug, Clone, PartialEq)]
pub struct Derivative {
    /// `(T_eL_g)⁻¹ ġ` in raw algebra coordinates.
    pub body_velocity: DVector<f64>,
    pub rate: DVector<f64>,
}

pub trait VectorField: Sync {
    fn group(&self) -> &dyn LieGroup;

    fn eval(&self, t: f64, state: &State) -> Derivative;

    /// The scalar output recorded alongside each state.
    fn output(&self, _state: &State) -> f64 {
        f64::NAN
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fault {
    pub time: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub outputs: Vec<f64>,
    pub energy: Option<Vec<f64>>,
    pub defect: Vec<f64>,
    pub fault: Option<Fault>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn is_faulted(&self) -> bool {
        self.fault.is_some()
    }

    pub fn last(&self) -> Option<&State> {
        self.states.last()
    }

    pub fn max_defect(&self) -> f64 {
        self.defect.iter().copied().fold(0.0, f64::max)
    }
}

type EnergyFn<'a> = dyn Fn(f64, &State) -> f64 + 'a;

/// Recording options for [`integrate_with`].
#[derive(Default)]
pub struct IntegrateOptions<'a> {
    /// Keep every `thin`-th step (the final step is always kept). `0` means 1.
    pub thin: usize,
    /// Optional energy function recorded at each kept step.
    pub energy: Option<&'a EnergyFn<'a>>,
}

/// `(2π/ω)/periods_per_cycle`.
pub fn step_size_for(omega: f64, periods_per_cycle: usize) -> Result<f64> {
    if periods_per_cycle < MIN_STEPS_PER_PERIOD {
        return Err(invalid(format!(
            "need at least {MIN_STEPS_PER_PERIOD} steps per dither period, got {periods_per_cycle}"
        )));
    }
    if !(omega.is_finite() && omega > 0.0) {
        return Err(invalid(format!("ω must be positive, got {omega}")));
    }
    Ok(2.0 * PI / omega / periods_per_cycle as f64)
}

/// Time grid `t0, t0 + h, …, t_end`; the last interval may be shorter.
pub fn time_grid(t0: f64, t_end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step.is_finite() && step > 0.0) {
        return Err(invalid(format!("step must be positive, got {step}")));
    }
    if !(t0.is_finite() && t_end.is_finite() && t_end >= t0) {
        return Err(invalid(format!("invalid interval [{t0}, {t_end}]")));
    }
    let ratio = (t_end - t0) / step;
    let steps = if (ratio - ratio.round()).abs() < 1e-9 {
        ratio.round() as usize
    } else {
        ratio.ceil() as usize
    };
    let mut grid: Vec<f64> = (0..steps).map(|k| t0 + k as f64 * step).collect();
    grid.push(t_end);
    Ok(grid)
}

fn axpy(base: &DVector<f64>, scale: f64, dir: &DVector<f64>) -> DVector<f64> {
    base + dir * scale
}

/// One RKMK4 step of size `h` from `(t, state)`.
pub fn rkmk4_step(field: &dyn VectorField, t: f64, state: &State, h: f64) -> State {
    let group = field.group();
    let at = |theta: &DVector<f64>, x: DVector<f64>| State::new(group.retract(&state.g, theta, 1.0), x);

    let d1 = field.eval(t, state);
    let k1 = d1.body_velocity;

    let theta2 = &k1 * (0.5 * h);
    let s2 = at(&theta2, axpy(&state.x, 0.5 * h, &d1.rate));
    let d2 = field.eval(t + 0.5 * h, &s2);
    let k2 = group.dexp_inv(&theta2, &d2.body_velocity);

    let theta3 = &k2 * (0.5 * h);
    let s3 = at(&theta3, axpy(&state.x, 0.5 * h, &d2.rate));
    let d3 = field.eval(t + 0.5 * h, &s3);
    let k3 = group.dexp_inv(&theta3, &d3.body_velocity);

    let theta4 = &k3 * h;
    let s4 = at(&theta4, axpy(&state.x, h, &d3.rate));
    let d4 = field.eval(t + h, &s4);
    let k4 = group.dexp_inv(&theta4, &d4.body_velocity);

    let theta = (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
    let x = &state.x + (d1.rate + (d2.rate + d3.rate) * 2.0 + d4.rate) * (h / 6.0);
    State::new(group.retract(&state.g, &theta, 1.0), x)
}

/// Integrates `field` from `initial` at `t0` to `t_end` with fixed `step`.
pub fn integrate(
    field: &dyn VectorField,
    initial: State,
    t0: f64,
    t_end: f64,
    step: f64,
) -> Result<Trajectory> {
    integrate_with(field, initial, t0, t_end, step, &IntegrateOptions::default())
}

/// [`integrate`] with thinning and energy recording.
///
/// A non-finite state or a manifold defect above [`DEFECT_LIMIT`] stops the
/// run; the trajectory up to that point is returned with `fault` set.
pub fn integrate_with(
    field: &dyn VectorField,
    initial: State,
    t0: f64,
    t_end: f64,
    step: f64,
    options: &IntegrateOptions<'_>,
) -> Result<Trajectory> {
    let grid = time_grid(t0, t_end, step)?;
    let thin = options.thin.max(1);
    let group = field.group();
    let mut traj = Trajectory {
        energy: options.energy.map(|_| Vec::new()),
        ..Trajectory::default()
    };
    let record = |traj: &mut Trajectory, t: f64, s: &State, defect: f64| {
        traj.times.push(t);
        traj.outputs.push(field.output(s));
        traj.defect.push(defect);
        if let (Some(e), Some(f)) = (traj.energy.as_mut(), options.energy) {
            e.push(f(t, s));
        }
        traj.states.push(s.clone());
    };

    if !initial.is_finite() {
        return Err(invalid("initial state is not finite"));
    }
    let defect0 = group.defect(&initial.g);
    if defect0 > DEFECT_LIMIT {
        return Err(invalid(format!("initial state is off the manifold (defect {defect0:.3e})")));
    }
    record(&mut traj, grid[0], &initial, defect0);

    let mut state = initial;
    let last = grid.len() - 1;
    for k in 0..last {
        let (t, t_next) = (grid[k], grid[k + 1]);
        let next = rkmk4_step(field, t, &state, t_next - t);
        let defect = group.defect(&next.g);
        let fault = if !next.is_finite() {
            Some("non-finite state".to_string())
        } else if defect > DEFECT_LIMIT {
            Some(format!("manifold defect {defect:.3e} exceeds {DEFECT_LIMIT:.0e}"))
        } else {
            None
        };
        if let Some(reason) = fault {
            if traj.times.last() != Some(&t) {
                let d = group.defect(&state.g);
                record(&mut traj, t, &state, d);
            }
            traj.fault = Some(Fault { time: t_next, reason });
            return Ok(traj);
        }
        state = next;
        if (k + 1) % thin == 0 || k + 1 == last {
            record(&mut traj, t_next, &state, defect);
        }
    }
    Ok(traj)
}
