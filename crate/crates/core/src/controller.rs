//! The extremum seeking output-feedback law, its compensator and filter, the
//! assembled closed loop and the velocity change of variables.
//!
//! With `z = y − η` the law reads
//!
//! ```text
//! u  = −b (w − κ α(z) U(ωt)) + λ α(z) ω u(ωt) + λ² α(z)² μ
//! ẇ  = −a (w − κ α(z) U(ωt)) + κ α(z) ω u(ωt)
//! η̇  = −h η + h y
//! ```
//!
//! Everything is expressed in frame coordinates.

use nalgebra::DVector;

use crate::error::{invalid, EscError, FieldIssue, Result};
use crate::geometry::{GroupElement, LieGroup};
use crate::plant::{euler_poincare_rhs, PlantModel};
use crate::signals::{DitherBank, ShapingFunction};
use crate::sim::{Derivative, State, VectorField};

/// `(a, λ, b, κ, h, ω)`, all positive with `aλ − bκ > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerGains {
    a: f64,
    lambda: f64,
    b: f64,
    kappa: f64,
    h: f64,
    omega: f64,
}

impl ControllerGains {
    pub fn new(a: f64, lambda: f64, b: f64, kappa: f64, h: f64, omega: f64) -> Result<Self> {
        let mut issues = Vec::new();
        for (name, value) in [
            ("a", a),
            ("lambda", lambda),
            ("b", b),
            ("kappa", kappa),
            ("h", h),
            ("omega", omega),
        ] {
            if !(value.is_finite() && value > 0.0) {
                issues.push(FieldIssue::new(
                    format!("gains.{name}"),
                    format!("must be a positive finite number, got {value}"),
                ));
            }
        }
        let margin = a * lambda - b * kappa;
        if issues.is_empty() && margin.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            issues.push(FieldIssue::new(
                "gains",
                format!("compensator condition a·λ − b·κ > 0 violated (got {margin})"),
            ));
        }
        if issues.is_empty() {
            Ok(Self {
                a,
                lambda,
                b,
                kappa,
                h,
                omega,
            })
        } else {
            Err(EscError::Validation(issues))
        }
    }

    pub fn with_omega(self, omega: f64) -> Result<Self> {
        Self::new(self.a, self.lambda, self.b, self.kappa, self.h, omega)
    }

    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// `aλ − bκ`.
    pub fn margin(&self) -> f64 {
        self.a * self.lambda - self.b * self.kappa
    }
}

/// Compensator state `w` and high-pass filter state `η`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub w: DVector<f64>,
    pub eta: f64,
}

/// A point `(g, v, w, η)` of `G × 𝔤 × ℝⁿ × ℝ`; `v` and `w` in frame coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub g: GroupElement,
    pub v: DVector<f64>,
    pub w: DVector<f64>,
    pub eta: f64,
}

/// States of the closed loop.
pub type ClosedLoopState = SystemState;

impl SystemState {
    pub fn new(g: GroupElement, v: DVector<f64>, w: DVector<f64>, eta: f64) -> Self {
        Self { g, v, w, eta }
    }

    /// `(g, 0, 0, η)`.
    pub fn at_rest(g: GroupElement, n: usize, eta: f64) -> Self {
        Self::new(g, DVector::zeros(n), DVector::zeros(n), eta)
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// Packs into an integrator state with `x = (v, w, η)`.
    pub fn to_state(&self) -> State {
        let n = self.v.len();
        let mut x = DVector::zeros(2 * n + 1);
        x.rows_mut(0, n).copy_from(&self.v);
        x.rows_mut(n, n).copy_from(&self.w);
        x[2 * n] = self.eta;
        State::new(self.g.clone(), x)
    }

    pub fn from_state(state: &State) -> Result<Self> {
        let len = state.x.len();
        if len.is_multiple_of(2) {
            return Err(invalid(format!("state vector of length {len} is not (v, w, η)")));
        }
        let n = (len - 1) / 2;
        Ok(Self::new(
            state.g.clone(),
            state.x.rows(0, n).into_owned(),
            state.x.rows(n, n).into_owned(),
            state.x[2 * n],
        ))
    }

    pub fn controller(&self) -> ControllerState {
        ControllerState {
            w: self.w.clone(),
            eta: self.eta,
        }
    }

    /// Euclidean distance between ambient embeddings.
    pub fn distance(&self, other: &SystemState) -> f64 {
        ((self.g.coords() - other.g.coords()).norm_squared()
            + (&self.v - &other.v).norm_squared()
            + (&self.w - &other.w).norm_squared()
            + (self.eta - other.eta).powi(2))
        .sqrt()
    }
}

/// Time derivative of a [`SystemState`].
#[derive(Debug, Clone, PartialEq)]
pub struct SystemDerivative {
    /// Body velocity in frame coordinates.
    pub velocity: DVector<f64>,
    pub v_dot: DVector<f64>,
    pub w_dot: DVector<f64>,
    pub eta_dot: f64,
}

impl SystemDerivative {
    pub fn norm(&self) -> f64 {
        (self.velocity.norm_squared()
            + self.v_dot.norm_squared()
            + self.w_dot.norm_squared()
            + self.eta_dot.powi(2))
        .sqrt()
    }

    pub fn to_derivative(&self, plant: &PlantModel) -> Derivative {
        let n = self.v_dot.len();
        let mut rate = DVector::zeros(2 * n + 1);
        rate.rows_mut(0, n).copy_from(&self.v_dot);
        rate.rows_mut(n, n).copy_from(&self.w_dot);
        rate[2 * n] = self.eta_dot;
        Derivative {
            body_velocity: plant.algebra_velocity(&self.velocity),
            rate,
        }
    }
}

/// Gains, shaping function and dither bank of one controller.
#[derive(Debug, Clone)]
pub struct Controller {
    pub gains: ControllerGains,
    pub shaping: ShapingFunction,
    pub bank: DitherBank,
}

impl Controller {
    pub fn new(gains: ControllerGains, shaping: ShapingFunction, bank: DitherBank) -> Self {
        Self {
            gains,
            shaping,
            bank,
        }
    }

    pub fn with_omega(&self, omega: f64) -> Result<Self> {
        Ok(Self {
            gains: self.gains.with_omega(omega)?,
            ..self.clone()
        })
    }

    pub(crate) fn check_channels(&self, plant: &PlantModel) -> Result<()> {
        if self.bank.len() != plant.dim() {
            return Err(invalid(format!(
                "dither bank has {} channels but the plant has dimension {}",
                self.bank.len(),
                plant.dim()
            )));
        }
        Ok(())
    }
}

/// The control input `u` in frame coordinates.
pub fn control_input(
    gains: &ControllerGains,
    shaping: &ShapingFunction,
    bank: &DitherBank,
    mu: &DVector<f64>,
    t: f64,
    y: f64,
    state: &ControllerState,
) -> DVector<f64> {
    let tau = gains.omega * t;
    let alpha = shaping.alpha(y - state.eta);
    let big_u = bank.antiderivative(tau);
    let small_u = bank.signal(tau);
    let (b, kappa, lambda, omega) = (gains.b, gains.kappa, gains.lambda, gains.omega);
    (&state.w - big_u * (kappa * alpha)) * (-b)
        + small_u * (lambda * alpha * omega)
        + mu * (lambda * lambda * alpha * alpha)
}

/// `(ẇ, η̇)`.
pub fn controller_rhs(
    gains: &ControllerGains,
    shaping: &ShapingFunction,
    bank: &DitherBank,
    t: f64,
    y: f64,
    state: &ControllerState,
) -> (DVector<f64>, f64) {
    let tau = gains.omega * t;
    let alpha = shaping.alpha(y - state.eta);
    let w_dot = (&state.w - bank.antiderivative(tau) * (gains.kappa * alpha)) * (-gains.a)
        + bank.signal(tau) * (gains.kappa * alpha * gains.omega);
    let eta_dot = -gains.h * state.eta + gains.h * y;
    (w_dot, eta_dot)
}

/// The closed-loop vector field at `(t, state)`.
pub fn closed_loop_rhs(
    plant: &PlantModel,
    gains: &ControllerGains,
    shaping: &ShapingFunction,
    bank: &DitherBank,
    t: f64,
    state: &SystemState,
) -> SystemDerivative {
    let y = plant.output(&state.g);
    let ctrl = state.controller();
    let u = control_input(gains, shaping, bank, plant.mu(), t, y, &ctrl);
    let (velocity, v_dot) = euler_poincare_rhs(plant, &state.g, &state.v, &u);
    let (w_dot, eta_dot) = controller_rhs(gains, shaping, bank, t, y, &ctrl);
    SystemDerivative {
        velocity,
        v_dot,
        w_dot,
        eta_dot,
    }
}

/// `ṽ = v − λ α(ψ(g) − η) U(ωt)`, `w̃ = w − κ α(ψ(g) − η) U(ωt)`.
pub fn to_tilde(
    plant: &PlantModel,
    gains: &ControllerGains,
    shaping: &ShapingFunction,
    bank: &DitherBank,
    t: f64,
    state: &SystemState,
) -> SystemState {
    shift(plant, gains, shaping, bank, t, state, -1.0)
}

/// Inverse of [`to_tilde`].
pub fn from_tilde(
    plant: &PlantModel,
    gains: &ControllerGains,
    shaping: &ShapingFunction,
    bank: &DitherBank,
    t: f64,
    state: &SystemState,
) -> SystemState {
    shift(plant, gains, shaping, bank, t, state, 1.0)
}

fn shift(
    plant: &PlantModel,
    gains: &ControllerGains,
    shaping: &ShapingFunction,
    bank: &DitherBank,
    t: f64,
    state: &SystemState,
    sign: f64,
) -> SystemState {
    // g and η are untouched, so ψ(g) − η is the same on both sides.
    let alpha = shaping.alpha(plant.output(&state.g) - state.eta);
    let big_u = bank.antiderivative(gains.omega * t);
    SystemState {
        g: state.g.clone(),
        v: &state.v + &big_u * (sign * gains.lambda * alpha),
        w: &state.w + &big_u * (sign * gains.kappa * alpha),
        eta: state.eta,
    }
}

/// The closed loop as an integrable vector field, `x = (v, w, η)`.
#[derive(Debug, Clone, Copy)]
pub struct ClosedLoop<'a> {
    pub plant: &'a PlantModel,
    pub controller: &'a Controller,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(plant: &'a PlantModel, controller: &'a Controller) -> Result<Self> {
        controller.check_channels(plant)?;
        Ok(Self { plant, controller })
    }

    pub fn rhs(&self, t: f64, state: &SystemState) -> SystemDerivative {
        let c = self.controller;
        closed_loop_rhs(self.plant, &c.gains, &c.shaping, &c.bank, t, state)
    }

    pub fn to_tilde(&self, t: f64, state: &SystemState) -> SystemState {
        let c = self.controller;
        to_tilde(self.plant, &c.gains, &c.shaping, &c.bank, t, state)
    }

    pub fn from_tilde(&self, t: f64, state: &SystemState) -> SystemState {
        let c = self.controller;
        from_tilde(self.plant, &c.gains, &c.shaping, &c.bank, t, state)
    }
}

impl VectorField for ClosedLoop<'_> {
    fn group(&self) -> &dyn LieGroup {
        self.plant.group()
    }

    fn eval(&self, t: f64, state: &State) -> Derivative {
        let s = SystemState::from_state(state).expect("closed-loop state layout");
        self.rhs(t, &s).to_derivative(self.plant)
    }

    fn output(&self, state: &State) -> f64 {
        self.plant.output(&state.g)
    }
}
