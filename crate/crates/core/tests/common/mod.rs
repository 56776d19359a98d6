//! Hand-written component equations for the planar double integrator and the
//! rigid body in an ideal fluid, compared against the generic closed loop.

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use esc_core::controller::{closed_loop_rhs, to_tilde, ControllerGains, SystemState};
use esc_core::geometry::{se3_element, so3_exp, GroupElement};
use esc_core::objective::{Paraboloid, Se3Distance};
use esc_core::plant::{double_integrator, example_inertia, example_mass, kirchhoff_plant};
use esc_core::signals::{default_shaping, make_harmonic_bank, BankVariant};
use nalgebra::{DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STATES: usize = 20;

fn alpha(z: f64) -> f64 {
    (z + (2.0 * z.cosh()).ln()).sqrt()
}

fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let diff: f64 = got.iter().zip(want).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = want.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / scale.max(f64::MIN_POSITIVE)
}

/// Planar double integrator written out component by component.
fn planar_oracle(g: ControllerGains, t: f64, s: &[f64; 7]) -> [f64; 7] {
    let [g1, g2, v1, v2, w1, w2, eta] = *s;
    let (a, l, b, k, h, om) = (g.a(), g.lambda(), g.b(), g.kappa(), g.h(), g.omega());
    let psi = -1.0 + g1 * g1 + g2 * g2 / 2.0;
    let al = alpha(psi - eta);
    let (c, sn) = ((om * t).cos(), (om * t).sin());
    [
        v1,
        v2,
        -b * (w1 - k * al * SQRT_2 * c) - l * al * om * SQRT_2 * sn,
        -b * (w2 - k * al * SQRT_2 * sn) + l * al * om * SQRT_2 * c,
        -a * (w1 - k * al * SQRT_2 * c) - k * al * om * SQRT_2 * sn,
        -a * (w2 - k * al * SQRT_2 * sn) + k * al * om * SQRT_2 * c,
        -h * eta + h * psi,
    ]
}

/// Worst relative error of the generic right-hand side against the planar
/// component form over `STATES` seeded random states.
pub fn planar_oracle_error(seed: u64) -> f64 {
    let plant = double_integrator(2, 0.0, Arc::new(Paraboloid::planar_source())).unwrap();
    let bank = make_harmonic_bank(2, BankVariant::PlanarQuadrature).unwrap();
    let shaping = default_shaping();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for k in 0..STATES {
        let gains = if k % 2 == 0 {
            ControllerGains::new(1.0, 1.0, 1.0, 0.5, 1.0, 30.0).unwrap()
        } else {
            ControllerGains::new(1.3, 0.7, 1.2, 0.7, 1.0, 30.0).unwrap()
        };
        let raw: [f64; 7] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let t = rng.random_range(0.0..10.0);
        let state = SystemState::new(
            GroupElement::from_slice(&raw[0..2]),
            DVector::from_column_slice(&raw[2..4]),
            DVector::from_column_slice(&raw[4..6]),
            raw[6],
        );
        let d = closed_loop_rhs(&plant, &gains, &shaping, &bank, t, &state);
        let got: Vec<f64> = d
            .velocity
            .iter()
            .chain(d.v_dot.iter())
            .chain(d.w_dot.iter())
            .copied()
            .chain(std::iter::once(d.eta_dot))
            .collect();
        worst = worst.max(rel_err(&got, &planar_oracle(gains, t, &raw)));

        // the transformed velocity written out
        let tilde = to_tilde(&plant, &gains, &shaping, &bank, t, &state);
        let al = alpha(plant.output(&state.g) - state.eta);
        let (c, sn) = ((gains.omega() * t).cos(), (gains.omega() * t).sin());
        let want = [
            raw[2] - gains.lambda() * al * SQRT_2 * c,
            raw[3] - gains.lambda() * al * SQRT_2 * sn,
            raw[4] - gains.kappa() * al * SQRT_2 * c,
            raw[5] - gains.kappa() * al * SQRT_2 * sn,
        ];
        let got: Vec<f64> = tilde.v.iter().chain(tilde.w.iter()).copied().collect();
        worst = worst.max(rel_err(&got, &want));
    }
    worst
}

/// Principal square root and its inverse by the Denman–Beavers iteration.
fn sqrt_pair(m: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let mut y = *m;
    let mut z = Matrix3::identity();
    for _ in 0..60 {
        let yi = y.try_inverse().unwrap();
        let zi = z.try_inverse().unwrap();
        y = (y + zi) * 0.5;
        z = (z + yi) * 0.5;
    }
    (y, z)
}

struct RigidBodyOracle {
    j: Matrix3<f64>,
    m: Matrix3<f64>,
    j_isqrt: Matrix3<f64>,
    m_isqrt: Matrix3<f64>,
}

/// Raw state `(R, r, Ω, V, w_Ω, w_V, η)`.
struct RawState {
    rot: Matrix3<f64>,
    pos: Vector3<f64>,
    omega: Vector3<f64>,
    vel: Vector3<f64>,
    w_omega: Vector3<f64>,
    w_vel: Vector3<f64>,
    eta: f64,
}

impl RigidBodyOracle {
    fn new() -> Self {
        let (j, m) = (example_inertia(), example_mass());
        Self {
            j,
            m,
            j_isqrt: sqrt_pair(&j).1,
            m_isqrt: sqrt_pair(&m).1,
        }
    }

    fn psi(rot: &Matrix3<f64>, pos: &Vector3<f64>) -> f64 {
        (rot - Matrix3::identity()).norm_squared() / 4.0 + pos.norm_squared() / 2.0
    }

    /// Returns `(Ω, V, Ω̇, V̇, ẇ_Ω, ẇ_V, η̇)` flattened.
    fn rhs(&self, g: ControllerGains, t: f64, s: &RawState) -> Vec<f64> {
        let (a, l, b, k, h, om) = (g.a(), g.lambda(), g.b(), g.kappa(), g.h(), g.omega());
        let psi = Self::psi(&s.rot, &s.pos);
        let al = alpha(psi - s.eta);
        let tau = om * t;
        // u^i = √2 (7−i) cos((7−i)τ), U^i = √2 sin((7−i)τ), i = 1..6
        let u = |i: usize| SQRT_2 * (7 - i) as f64 * ((7 - i) as f64 * tau).cos();
        let big_u = |i: usize| SQRT_2 * ((7 - i) as f64 * tau).sin();
        let u_om = Vector3::new(u(1), u(2), u(3));
        let u_v = Vector3::new(u(4), u(5), u(6));
        let cu_om = Vector3::new(big_u(1), big_u(2), big_u(3));
        let cu_v = Vector3::new(big_u(4), big_u(5), big_u(6));

        let j_inv = self.j.try_inverse().unwrap();
        let m_inv = self.m.try_inverse().unwrap();
        let omega_dot = -j_inv * (s.omega.cross(&(self.j * s.omega)) + s.vel.cross(&(self.m * s.vel)))
            + self.j_isqrt * u_om * (l * al * om)
            - self.j_isqrt * (s.w_omega - cu_om * (k * al)) * b;
        let vel_dot = -m_inv * s.omega.cross(&(self.m * s.vel)) + self.m_isqrt * u_v * (l * al * om)
            - self.m_isqrt * (s.w_vel - cu_v * (k * al)) * b;
        let w_omega_dot = -(s.w_omega - cu_om * (k * al)) * a + u_om * (k * al * om);
        let w_vel_dot = -(s.w_vel - cu_v * (k * al)) * a + u_v * (k * al * om);
        let eta_dot = -h * s.eta + h * psi;
        s.omega
            .iter()
            .chain(s.vel.iter())
            .chain(omega_dot.iter())
            .chain(vel_dot.iter())
            .chain(w_omega_dot.iter())
            .chain(w_vel_dot.iter())
            .copied()
            .chain(std::iter::once(eta_dot))
            .collect()
    }
}

/// As [`planar_oracle_error`] for the rigid body in an ideal fluid.
pub fn rigid_body_oracle_error(seed: u64) -> f64 {
    let plant = kirchhoff_plant(example_inertia(), example_mass(), Arc::new(Se3Distance::default())).unwrap();
    let bank = make_harmonic_bank(6, BankVariant::DescendingHarmonics).unwrap();
    let shaping = default_shaping();
    let oracle = RigidBodyOracle::new();
    let (j_sqrt, m_sqrt) = (sqrt_pair(&example_inertia()).0, sqrt_pair(&example_mass()).0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vec3 = |rng: &mut ChaCha8Rng, r: f64| Vector3::from_fn(|_, _| rng.random_range(-r..r));
    let mut worst = 0.0_f64;
    for k in 0..STATES {
        let gains = if k % 2 == 0 {
            ControllerGains::new(0.1, 0.2, 0.1, 0.1, 1.0, 5.0).unwrap()
        } else {
            ControllerGains::new(0.15, 0.13, 0.13, 0.13, 1.0, 5.0).unwrap()
        };
        let raw = RawState {
            rot: so3_exp(&vec3(&mut rng, 2.0)),
            pos: vec3(&mut rng, 2.0),
            omega: vec3(&mut rng, 1.5),
            vel: vec3(&mut rng, 1.5),
            w_omega: vec3(&mut rng, 1.0),
            w_vel: vec3(&mut rng, 1.0),
            eta: rng.random_range(-1.0..3.0),
        };
        let t = rng.random_range(0.0..20.0);

        // frame coordinates: v_Ω = J^{1/2} Ω, v_V = M^{1/2} V
        let v_om = j_sqrt * raw.omega;
        let v_v = m_sqrt * raw.vel;
        let v = DVector::from_iterator(6, v_om.iter().chain(v_v.iter()).copied());
        let w = DVector::from_iterator(6, raw.w_omega.iter().chain(raw.w_vel.iter()).copied());
        let state = SystemState::new(se3_element(&raw.rot, &raw.pos), v, w, raw.eta);
        let d = closed_loop_rhs(&plant, &gains, &shaping, &bank, t, &state);

        let body = plant.algebra_velocity(&d.velocity);
        let accel = plant.algebra_velocity(&d.v_dot);
        let got: Vec<f64> = body
            .iter()
            .chain(accel.iter())
            .chain(d.w_dot.iter())
            .copied()
            .chain(std::iter::once(d.eta_dot))
            .collect();
        let want = oracle.rhs(gains, t, &raw);
        worst = worst.max(rel_err(&got, &want));
    }
    worst
}
