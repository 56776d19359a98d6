//! The averaged system, the symmetric-product identity behind it, and the
//! distance between closed-loop and averaged solutions.
//!
//! With `Δ = ψ(ḡ) − η̄` and `grad = 𝔤rad ψ(ḡ)` the averaged vector field is
//!
//! ```text
//! ḡ̇ = T_eL_ḡ(v̄)
//! v̄̇ = −∇_v̄ v̄ − R v̄ − b w̄ − λ² (αα′)(Δ) grad
//! w̄̇ = −a w̄ − κ λ (αα′)(Δ) grad
//! η̄̇ = −h η̄ + h ψ(ḡ)
//! ```

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::controller::{
    to_tilde, ClosedLoop, Controller, ControllerGains, SystemDerivative, SystemState,
};
use crate::error::{invalid, Result};
use crate::geometry::{GroupElement, LieGroup};
use crate::plant::PlantModel;
use crate::signals::{DitherBank, ShapingFunction};
use crate::sim::{integrate_with, step_size_for, Derivative, IntegrateOptions, State, Trajectory, VectorField};

/// States of the averaged system share the closed-loop layout.
pub type AveragedState = SystemState;

/// Relative finite-difference step for the symmetric-product check.
pub const SYMMETRIC_PRODUCT_STEP: f64 = 1e-5;

/// The averaged vector field at `state`.
pub fn averaged_rhs(
    plant: &PlantModel,
    gains: &ControllerGains,
    shaping: &ShapingFunction,
    state: &AveragedState,
) -> SystemDerivative {
    let y = plant.output(&state.g);
    let grad = plant.gradient(&state.g);
    let aap = shaping.alpha_alpha_prime(y - state.eta);
    let lambda = gains.lambda();
    let v_dot = -plant.connection().self_covariant(&state.v)
        - plant.damping() * &state.v
        - &state.w * gains.b()
        - &grad * (lambda * lambda * aap);
    let w_dot = -&state.w * gains.a() - &grad * (gains.kappa() * lambda * aap);
    SystemDerivative {
        velocity: state.v.clone(),
        v_dot,
        w_dot,
        eta_dot: -gains.h() * state.eta + gains.h() * y,
    }
}

/// Residual of `−½ Σ ⟨Y_i : Y_i⟩ = −λ²(αα′)(ψ−η) grad ψ − λ² α²(ψ−η) μ` with
/// `Y_i = λ α(ψ − η) e_iᴸ`, in frame coordinates.
///
/// The left side is evaluated from its definition: the directional derivative
/// of the coefficient `f = λ α(ψ − η)` along `e_iᴸ` by central differences on
/// the group, plus the connection terms `f² ∇_{e_i} e_i`.
pub fn symmetric_product_check(
    plant: &PlantModel,
    gains: &ControllerGains,
    shaping: &ShapingFunction,
    g: &GroupElement,
    eta: f64,
) -> f64 {
    let lambda = gains.lambda();
    let coefficient = |p: &GroupElement| lambda * shaping.alpha(plant.output(p) - eta);
    let n = plant.dim();
    let group = plant.group();
    let h = SYMMETRIC_PRODUCT_STEP * g.coords().amax().max(1.0);
    let f = coefficient(g);
    let mut lhs = DVector::zeros(n);
    for i in 0..n {
        let e = plant.frame().basis().column(i).into_owned();
        let df = (coefficient(&group.retract(g, &e, h)) - coefficient(&group.retract(g, &e, -h)))
            / (2.0 * h);
        // ⟨Y:Y⟩ = 2∇_Y Y and ∇_{fX}(fX) = f (X f) X + f² ∇_X X
        lhs[i] -= f * df;
        for k in 0..n {
            lhs[k] -= f * f * plant.connection().coefficient(k, i, i);
        }
    }
    let z = plant.output(g) - eta;
    let rhs = -plant.gradient(g) * (lambda * lambda * shaping.alpha_alpha_prime(z))
        - plant.mu() * (lambda * lambda * shaping.alpha(z).powi(2));
    (lhs - rhs).norm()
}

/// The averaged system as an integrable vector field, `x = (v̄, w̄, η̄)`.
#[derive(Debug, Clone, Copy)]
pub struct AveragedSystem<'a> {
    pub plant: &'a PlantModel,
    pub gains: &'a ControllerGains,
    pub shaping: &'a ShapingFunction,
}

impl<'a> AveragedSystem<'a> {
    pub fn new(plant: &'a PlantModel, gains: &'a ControllerGains, shaping: &'a ShapingFunction) -> Self {
        Self {
            plant,
            gains,
            shaping,
        }
    }

    pub fn rhs(&self, state: &AveragedState) -> SystemDerivative {
        averaged_rhs(self.plant, self.gains, self.shaping, state)
    }
}

impl VectorField for AveragedSystem<'_> {
    fn group(&self) -> &dyn LieGroup {
        self.plant.group()
    }

    fn eval(&self, _t: f64, state: &State) -> Derivative {
        let s = SystemState::from_state(state).expect("averaged state layout");
        self.rhs(&s).to_derivative(self.plant)
    }

    fn output(&self, state: &State) -> f64 {
        self.plant.output(&state.g)
    }
}

/// Sup over the shared grid of the distance between the transformed
/// closed-loop state and the averaged state.
pub fn approximation_error(
    closed: &Trajectory,
    averaged: &Trajectory,
    plant: &PlantModel,
    gains: &ControllerGains,
    shaping: &ShapingFunction,
    bank: &DitherBank,
) -> Result<f64> {
    if closed.len() != averaged.len() {
        return Err(invalid(format!(
            "trajectories have {} and {} samples",
            closed.len(),
            averaged.len()
        )));
    }
    let mut sup = 0.0_f64;
    for (k, (&tc, &ta)) in closed.times.iter().zip(&averaged.times).enumerate() {
        if (tc - ta).abs() > 1e-12 * tc.abs().max(1.0) {
            return Err(invalid(format!("time grids differ at sample {k}: {tc} vs {ta}")));
        }
        let c = SystemState::from_state(&closed.states[k])?;
        let a = SystemState::from_state(&averaged.states[k])?;
        sup = sup.max(to_tilde(plant, gains, shaping, bank, tc, &c).distance(&a));
    }
    Ok(sup)
}

/// One rung of an ω ladder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderPoint {
    pub omega: f64,
    pub sup_error: f64,
    /// Set when either run faulted; `sup_error` then covers the shared prefix.
    pub fault: Option<String>,
}

/// Closed-loop and averaged runs from the same transformed initial state.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub closed: Trajectory,
    pub averaged: Trajectory,
    pub sup_error: f64,
}

/// Integrates both systems on the grid `(2π/ω)/steps_per_period`, the closed
/// loop from `initial` and the averaged system from its transform at `t0`,
/// and measures their distance.
pub fn compare_runs(
    plant: &PlantModel,
    controller: &Controller,
    initial: &SystemState,
    t0: f64,
    t_end: f64,
    steps_per_period: usize,
    thin: usize,
) -> Result<Comparison> {
    let closed_field = ClosedLoop::new(plant, controller)?;
    let averaged_field = AveragedSystem::new(plant, &controller.gains, &controller.shaping);
    let step = step_size_for(controller.gains.omega(), steps_per_period)?;
    let options = IntegrateOptions {
        thin,
        energy: None,
    };
    let averaged_start = closed_field.to_tilde(t0, initial);
    let closed = integrate_with(&closed_field, initial.to_state(), t0, t_end, step, &options)?;
    let averaged = integrate_with(&averaged_field, averaged_start.to_state(), t0, t_end, step, &options)?;
    let shared = closed.len().min(averaged.len());
    let sup_error = approximation_error(
        &truncate(&closed, shared),
        &truncate(&averaged, shared),
        plant,
        &controller.gains,
        &controller.shaping,
        &controller.bank,
    )?;
    Ok(Comparison {
        closed,
        averaged,
        sup_error,
    })
}

fn truncate(traj: &Trajectory, len: usize) -> Trajectory {
    Trajectory {
        times: traj.times[..len].to_vec(),
        states: traj.states[..len].to_vec(),
        outputs: traj.outputs[..len].to_vec(),
        energy: traj.energy.as_ref().map(|e| e[..len].to_vec()),
        defect: traj.defect[..len].to_vec(),
        fault: traj.fault.clone(),
    }
}

/// [`compare_runs`] for each ω, in parallel; results follow the input order.
pub fn omega_ladder(
    plant: &PlantModel,
    controller: &Controller,
    initial: &SystemState,
    t0: f64,
    t_end: f64,
    omegas: &[f64],
    steps_per_period: usize,
) -> Result<Vec<LadderPoint>> {
    omegas
        .par_iter()
        .map(|&omega| {
            let c = controller.with_omega(omega)?;
            let cmp = compare_runs(plant, &c, initial, t0, t_end, steps_per_period, 1)?;
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
        .collect()
}
