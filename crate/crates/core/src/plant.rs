//! Open-loop mechanical plants in Euler–Poincaré form
//! `ġ = T_eL_g(v)`, `v̇ + ∇^𝔤_v v = −R v + u`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};

use crate::error::{invalid, Result};
use crate::geometry::{
    body_gradient, AlgebraFrame, ConnectionTable, Euclidean, GroupElement, LieGroup,
    SpecialEuclidean3,
};
use crate::objective::Objective;
use crate::sim::{Derivative, State, VectorField};

/// A fully actuated mechanical system on a Lie group with objective `ψ`.
///
/// Velocities, inputs and the damping matrix are in frame coordinates.
#[derive(Debug, Clone)]
pub struct PlantModel {
    group: Arc<dyn LieGroup>,
    frame: AlgebraFrame,
    connection: ConnectionTable,
    damping: DMatrix<f64>,
    objective: Arc<dyn Objective>,
    mu: DVector<f64>,
}

impl PlantModel {
    pub fn new(
        group: Arc<dyn LieGroup>,
        frame: AlgebraFrame,
        connection: ConnectionTable,
        damping: DMatrix<f64>,
        objective: Arc<dyn Objective>,
    ) -> Result<Self> {
        let n = group.dim();
        if frame.dim() != n || connection.dim() != n {
            return Err(invalid(format!(
                "frame ({}) and connection ({}) must match group dimension {n}",
                frame.dim(),
                connection.dim()
            )));
        }
        check_damping(&damping, n)?;
        let mu = connection.trace();
        Ok(Self {
            group,
            frame,
            connection,
            damping,
            objective,
            mu,
        })
    }

    /// Replaces the damping matrix `R`.
    pub fn with_damping(mut self, damping: DMatrix<f64>) -> Result<Self> {
        check_damping(&damping, self.dim())?;
        self.damping = damping;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.group.dim()
    }

    pub fn group(&self) -> &dyn LieGroup {
        self.group.as_ref()
    }

    pub fn frame(&self) -> &AlgebraFrame {
        &self.frame
    }

    pub fn connection(&self) -> &ConnectionTable {
        &self.connection
    }

    pub fn damping(&self) -> &DMatrix<f64> {
        &self.damping
    }

    pub fn objective(&self) -> &dyn Objective {
        self.objective.as_ref()
    }

    /// `μ` in frame coordinates.
    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    /// Frame coordinates of `𝔤rad ψ(g)`.
    pub fn gradient(&self, g: &GroupElement) -> DVector<f64> {
        body_gradient(self.group(), &self.frame, self.objective(), g)
    }

    /// `ψ(g)`.
    pub fn output(&self, g: &GroupElement) -> f64 {
        self.objective.value(g)
    }

    /// `½ 𝕀(v, v)` for a frame-coordinate velocity.
    pub fn kinetic_energy(&self, v: &DVector<f64>) -> f64 {
        0.5 * v.norm_squared()
    }

    /// Body velocity to raw algebra coordinates for the group update.
    pub fn algebra_velocity(&self, v: &DVector<f64>) -> DVector<f64> {
        self.frame.embed(v)
    }
}

fn check_damping(damping: &DMatrix<f64>, n: usize) -> Result<()> {
    if damping.shape() != (n, n) {
        return Err(invalid(format!("damping matrix must be {n}×{n}")));
    }
    if (damping - damping.transpose()).amax() > 1e-12 {
        return Err(invalid("damping matrix must be symmetric"));
    }
    let min = SymmetricEigen::new(damping.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min < -1e-10 {
        return Err(invalid(format!("damping matrix must be positive semidefinite (min eigenvalue {min:.3e})")));
    }
    Ok(())
}

/// `(v, −∇^𝔤_v v − R v + u)` in frame coordinates.
pub fn euler_poincare_rhs(
    plant: &PlantModel,
    _g: &GroupElement,
    v: &DVector<f64>,
    u: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let accel = u - plant.connection.self_covariant(v) - &plant.damping * v;
    (v.clone(), accel)
}

/// `y = ψ(g)`.
pub fn measure_output(plant: &PlantModel, g: &GroupElement) -> f64 {
    plant.output(g)
}

/// Point mass in `ℝⁿ` with scalar damping `r`.
pub fn double_integrator(n: usize, r: f64, objective: Arc<dyn Objective>) -> Result<PlantModel> {
    if !(r.is_finite() && r >= 0.0) {
        return Err(invalid(format!("damping r must be nonnegative, got {r}")));
    }
    PlantModel::new(
        Arc::new(Euclidean::new(n)?),
        AlgebraFrame::standard(n),
        ConnectionTable::zero(n),
        DMatrix::identity(n, n) * r,
        objective,
    )
}

/// `(M^{1/2}, M^{-1/2})` of a symmetric positive-definite matrix.
pub fn spd_sqrt(m: &Matrix3<f64>) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(invalid("matrix is not symmetric"));
    }
    let eig = SymmetricEigen::new(*m);
    if eig.eigenvalues.iter().any(|&l| l.is_nan() || l <= 0.0) {
        return Err(invalid(format!(
            "matrix is not positive definite (eigenvalues {:?})",
            eig.eigenvalues.as_slice()
        )));
    }
    let q = eig.eigenvectors;
    let root = q * Matrix3::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * q.transpose();
    let inv_root =
        q * Matrix3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt())) * q.transpose();
    Ok((root, inv_root))
}

/// The Kirchhoff drift `(J⁻¹(Ω×JΩ + V×MV), M⁻¹(Ω×MV))` in raw coordinates.
pub fn kirchhoff_drift(
    j: &Matrix3<f64>,
    m: &Matrix3<f64>,
    omega: &Vector3<f64>,
    vel: &Vector3<f64>,
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let j_inv = j.try_inverse().ok_or_else(|| invalid("J is singular"))?;
    let m_inv = m.try_inverse().ok_or_else(|| invalid("M is singular"))?;
    let mv = m * vel;
    Ok((
        j_inv * (omega.cross(&(j * omega)) + vel.cross(&mv)),
        m_inv * omega.cross(&mv),
    ))
}

/// Rigid body in an ideal fluid on SE(3) with inertia `J` and mass `M`.
///
/// The frame is `e_i = (Ĵ^{-1/2}ε_i, 0)`, `e_{i+3} = (0, M^{-1/2}ε_i)`,
/// orthonormal for the kinetic-energy inner product `diag(J, M)`. Taking the
/// input through `f_Ω = J ǔ_Ω`, `f_V = M u_V` turns the Kirchhoff equations
/// into Euler–Poincaré form with `R = 0`.
pub fn kirchhoff_plant(
    j: Matrix3<f64>,
    m: Matrix3<f64>,
    objective: Arc<dyn Objective>,
) -> Result<PlantModel> {
    let (_, j_isqrt) = spd_sqrt(&j).map_err(|e| invalid(format!("J: {e}")))?;
    let (_, m_isqrt) = spd_sqrt(&m).map_err(|e| invalid(format!("M: {e}")))?;
    let mut basis = DMatrix::zeros(6, 6);
    basis.view_mut((0, 0), (3, 3)).copy_from(&j_isqrt);
    basis.view_mut((3, 3), (3, 3)).copy_from(&m_isqrt);
    let mut metric = DMatrix::zeros(6, 6);
    metric.view_mut((0, 0), (3, 3)).copy_from(&j);
    metric.view_mut((3, 3), (3, 3)).copy_from(&m);
    let frame = AlgebraFrame::new(basis, metric)?;

    let j_inv = j.try_inverse().ok_or_else(|| invalid("J is singular"))?;
    let m_inv = m.try_inverse().ok_or_else(|| invalid("M is singular"))?;
    let raw_drift = |xi: &DVector<f64>| {
        let omega = Vector3::new(xi[0], xi[1], xi[2]);
        let vel = Vector3::new(xi[3], xi[4], xi[5]);
        let mv = m * vel;
        let d_omega = j_inv * (omega.cross(&(j * omega)) + vel.cross(&mv));
        let d_vel = m_inv * omega.cross(&mv);
        DVector::from_column_slice(&[
            d_omega.x, d_omega.y, d_omega.z, d_vel.x, d_vel.y, d_vel.z,
        ])
    };
    let connection =
        ConnectionTable::from_quadratic(6, |c| frame.coords(&raw_drift(&frame.embed(c))));

    PlantModel::new(
        Arc::new(SpecialEuclidean3),
        frame,
        connection,
        DMatrix::zeros(6, 6),
        objective,
    )
}

/// `J` of the ideal-fluid example: `(1/3)[[5,0,−2],[0,7,2],[−2,2,6]]`.
pub fn example_inertia() -> Matrix3<f64> {
    Matrix3::new(5.0, 0.0, -2.0, 0.0, 7.0, 2.0, -2.0, 2.0, 6.0) / 3.0
}

/// `M` of the ideal-fluid example: `(1/3)[[7,0,2],[0,5,−2],[2,−2,6]]`.
pub fn example_mass() -> Matrix3<f64> {
    Matrix3::new(7.0, 0.0, 2.0, 0.0, 5.0, -2.0, 2.0, -2.0, 6.0) / 3.0
}

/// `R₀ = (1/3)[[−1,2,−2],[−2,1,2],[2,2,1]]`.
pub fn example_initial_rotation() -> Matrix3<f64> {
    Matrix3::new(-1.0, 2.0, -2.0, -2.0, 1.0, 2.0, 2.0, 2.0, 1.0) / 3.0
}

/// The uncontrolled plant (`u = 0`) as a vector field on `G × 𝔤`.
/// State layout: `x = v`.
#[derive(Debug, Clone, Copy)]
pub struct OpenLoop<'a> {
    pub plant: &'a PlantModel,
}

impl VectorField for OpenLoop<'_> {
    fn group(&self) -> &dyn LieGroup {
        self.plant.group()
    }

    fn eval(&self, _t: f64, state: &State) -> Derivative {
        let u = DVector::zeros(self.plant.dim());
        let (v, accel) = euler_poincare_rhs(self.plant, &state.g, &state.x, &u);
        Derivative {
            body_velocity: self.plant.algebra_velocity(&v),
            rate: accel,
        }
    }

    fn output(&self, state: &State) -> f64 {
        self.plant.output(&state.g)
    }
}
