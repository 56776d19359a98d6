//! Lie groups embedded in Euclidean space, algebra frames and the restricted
//! connection.
//!
//! Group elements are stored by their ambient (embedded) coordinates. Algebra
//! elements come in two flavours: *raw* coordinates native to each group
//! (`ℝⁿ` for the flat group, `(Ω, V)` for SE(3)) and *frame* coordinates with
//! respect to an [`AlgebraFrame`] that is orthonormal for the inner product
//! `𝕀`. Velocities, inputs and gradients handled by the controller are always
//! in frame coordinates; the group only ever sees raw ones.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{invalid, Result};
use crate::objective::Objective;

/// A point of the group in ambient coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement(DVector<f64>);

impl GroupElement {
    pub fn new(coords: DVector<f64>) -> Self {
        Self(coords)
    }

    pub fn from_slice(coords: &[f64]) -> Self {
        Self(DVector::from_column_slice(coords))
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_coords(self) -> DVector<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// A matrix Lie group embedded in Euclidean space.
///
/// Algebra arguments are in the group's raw coordinates.
pub trait LieGroup: Send + Sync + Debug {
    fn name(&self) -> &str;

    /// Intrinsic dimension `n`.
    fn dim(&self) -> usize;

    fn embed_dim(&self) -> usize;

    fn identity(&self) -> GroupElement;

    fn compose(&self, g: &GroupElement, h: &GroupElement) -> GroupElement;

    /// Group exponential.
    fn exp(&self, xi: &DVector<f64>) -> GroupElement;

    /// `T_eL_g(ξ)` as an ambient vector.
    fn tangent_lift(&self, g: &GroupElement, xi: &DVector<f64>) -> DVector<f64>;

    /// Lie bracket `[x, y]` on the algebra.
    fn bracket(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;

    /// Distance from the manifold; zero on it.
    fn defect(&self, g: &GroupElement) -> f64;

    /// `g · exp(dt ξ)`: the left-invariant flow along `ξ` for time `dt`.
    fn retract(&self, g: &GroupElement, xi: &DVector<f64>, dt: f64) -> GroupElement {
        self.compose(g, &self.exp(&(xi * dt)))
    }

    /// Third-order truncation of the inverse of the differential of `exp`,
    /// `ξ − ½[θ, ξ] + (1/12)[θ, [θ, ξ]]`.
    fn dexp_inv(&self, theta: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
        let b1 = self.bracket(theta, xi);
        let b2 = self.bracket(theta, &b1);
        xi - b1 * 0.5 + b2 / 12.0
    }
}

/// The additive group `ℝⁿ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Euclidean {
    n: usize,
}

impl Euclidean {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("ℝⁿ needs n >= 1"));
        }
        Ok(Self { n })
    }
}

impl LieGroup for Euclidean {
    fn name(&self) -> &str {
        "rn"
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn embed_dim(&self) -> usize {
        self.n
    }

    fn identity(&self) -> GroupElement {
        GroupElement(DVector::zeros(self.n))
    }

    fn compose(&self, g: &GroupElement, h: &GroupElement) -> GroupElement {
        GroupElement(&g.0 + &h.0)
    }

    fn exp(&self, xi: &DVector<f64>) -> GroupElement {
        GroupElement(xi.clone())
    }

    fn tangent_lift(&self, _g: &GroupElement, xi: &DVector<f64>) -> DVector<f64> {
        xi.clone()
    }

    fn bracket(&self, x: &DVector<f64>, _y: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(x.len())
    }

    fn defect(&self, _g: &GroupElement) -> f64 {
        0.0
    }

    fn retract(&self, g: &GroupElement, xi: &DVector<f64>, dt: f64) -> GroupElement {
        GroupElement(&g.0 + xi * dt)
    }
}

/// SE(3) = SO(3) ⋉ ℝ³ embedded in `ℝ^{3×3} × ℝ³`.
///
/// Ambient layout: the rotation row-major in slots 0..9, the position in
/// 9..12. Raw algebra coordinates are `(Ω, V)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpecialEuclidean3;

/// Packs `(R, r)` into ambient coordinates.
pub fn se3_element(rot: &Matrix3<f64>, pos: &Vector3<f64>) -> GroupElement {
    let mut c = DVector::zeros(12);
    for i in 0..3 {
        for j in 0..3 {
            c[3 * i + j] = rot[(i, j)];
        }
        c[9 + i] = pos[i];
    }
    GroupElement(c)
}

/// Unpacks ambient SE(3) coordinates into `(R, r)`.
pub fn se3_parts(g: &GroupElement) -> (Matrix3<f64>, Vector3<f64>) {
    let c = &g.0;
    let rot = Matrix3::from_fn(|i, j| c[3 * i + j]);
    let pos = Vector3::new(c[9], c[10], c[11]);
    (rot, pos)
}

/// The hat map `ℝ³ → so(3)`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat`]; rejects matrices whose asymmetry exceeds `1e-10`.
pub fn unhat(m: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let sym = (m + m.transpose()).amax();
    if sym > 1e-10 {
        return Err(invalid(format!("matrix is not skew-symmetric (|M + Mᵀ| = {sym:.3e})")));
    }
    Ok(Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)]))
}

/// Rodrigues' formula for `exp(ŵ)`.
pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let (a, b) = if theta2 < 1e-8 {
        (1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0, 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = hat(w);
    Matrix3::identity() + k * a + k * k * b
}

/// Left Jacobian of SO(3), mapping `V` to the translation part of `exp(Ω, V)`.
pub fn so3_left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let (b, c) = if theta2 < 1e-8 {
        (0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0, 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0)
    } else {
        let theta = theta2.sqrt();
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    let k = hat(w);
    Matrix3::identity() + k * b + k * k * c
}

fn split6(xi: &DVector<f64>) -> (Vector3<f64>, Vector3<f64>) {
    (
        Vector3::new(xi[0], xi[1], xi[2]),
        Vector3::new(xi[3], xi[4], xi[5]),
    )
}

fn join6(a: &Vector3<f64>, b: &Vector3<f64>) -> DVector<f64> {
    DVector::from_column_slice(&[a.x, a.y, a.z, b.x, b.y, b.z])
}

impl LieGroup for SpecialEuclidean3 {
    fn name(&self) -> &str {
        "se3"
    }

    fn dim(&self) -> usize {
        6
    }

    fn embed_dim(&self) -> usize {
        12
    }

    fn identity(&self) -> GroupElement {
        se3_element(&Matrix3::identity(), &Vector3::zeros())
    }

    fn compose(&self, g: &GroupElement, h: &GroupElement) -> GroupElement {
        let (r1, p1) = se3_parts(g);
        let (r2, p2) = se3_parts(h);
        se3_element(&(r1 * r2), &(p1 + r1 * p2))
    }

    fn exp(&self, xi: &DVector<f64>) -> GroupElement {
        let (w, v) = split6(xi);
        se3_element(&so3_exp(&w), &(so3_left_jacobian(&w) * v))
    }

    fn tangent_lift(&self, g: &GroupElement, xi: &DVector<f64>) -> DVector<f64> {
        let (rot, _) = se3_parts(g);
        let (w, v) = split6(xi);
        let dr = rot * hat(&w);
        let dp = rot * v;
        let mut out = DVector::zeros(12);
        for i in 0..3 {
            for j in 0..3 {
                out[3 * i + j] = dr[(i, j)];
            }
            out[9 + i] = dp[i];
        }
        out
    }

    fn bracket(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let (w1, v1) = split6(x);
        let (w2, v2) = split6(y);
        join6(&w1.cross(&w2), &(w1.cross(&v2) - w2.cross(&v1)))
    }

    fn defect(&self, g: &GroupElement) -> f64 {
        let (rot, _) = se3_parts(g);
        (rot.transpose() * rot - Matrix3::identity()).norm()
    }
}

/// An `𝕀`-orthonormal basis of the algebra and the isomorphism `E`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraFrame {
    basis: DMatrix<f64>,
    basis_inv: DMatrix<f64>,
    metric: DMatrix<f64>,
}

impl AlgebraFrame {
    /// `basis` holds `e_1..e_n` as columns in raw coordinates; `metric` is the
    /// matrix of `𝕀` in raw coordinates.
    pub fn new(basis: DMatrix<f64>, metric: DMatrix<f64>) -> Result<Self> {
        let n = basis.nrows();
        if basis.ncols() != n || metric.shape() != (n, n) {
            return Err(invalid("frame basis and metric must be square and of equal size"));
        }
        if (&metric - metric.transpose()).amax() > 1e-12 * metric.amax().max(1.0) {
            return Err(invalid("inner product matrix is not symmetric"));
        }
        let gram = basis.transpose() * &metric * &basis;
        let dev = (gram - DMatrix::identity(n, n)).amax();
        if dev > 1e-10 {
            return Err(invalid(format!("frame is not orthonormal (max deviation {dev:.3e})")));
        }
        let basis_inv = basis
            .clone()
            .try_inverse()
            .ok_or_else(|| invalid("frame basis is singular"))?;
        Ok(Self {
            basis,
            basis_inv,
            metric,
        })
    }

    /// The standard basis with the Euclidean inner product.
    pub fn standard(n: usize) -> Self {
        Self {
            basis: DMatrix::identity(n, n),
            basis_inv: DMatrix::identity(n, n),
            metric: DMatrix::identity(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn metric(&self) -> &DMatrix<f64> {
        &self.metric
    }

    /// `E`: frame coordinates to raw algebra coordinates.
    pub fn embed(&self, coords: &DVector<f64>) -> DVector<f64> {
        &self.basis * coords
    }

    /// `E⁻¹`: raw algebra coordinates to frame coordinates.
    pub fn coords(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.basis_inv * xi
    }

    /// `𝕀(x, y)` for raw algebra vectors.
    pub fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (x.transpose() * &self.metric * y)[(0, 0)]
    }

    /// `𝕀(e_i, e_j)`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.basis.transpose() * &self.metric * &self.basis
    }
}

/// Coefficients `Γ^k_{ij}` of `∇^𝔤_{e_i} e_j = Σ_k Γ^k_{ij} e_k` in frame coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionTable {
    n: usize,
    // index: k * n * n + i * n + j
    gamma: Vec<f64>,
    symmetric_only: bool,
}

impl ConnectionTable {
    /// The vanishing connection.
    pub fn zero(n: usize) -> Self {
        Self {
            n,
            gamma: vec![0.0; n * n * n],
            symmetric_only: false,
        }
    }

    /// Full coefficients, `gamma[k][i][j] = Γ^k_{ij}`.
    pub fn from_coefficients(gamma: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n = gamma.len();
        let mut flat = Vec::with_capacity(n * n * n);
        for (k, plane) in gamma.iter().enumerate() {
            if plane.len() != n || plane.iter().any(|row| row.len() != n) {
                return Err(invalid(format!("connection slice {k} is not {n}×{n}")));
            }
            flat.extend(plane.iter().flatten().copied());
        }
        Ok(Self {
            n,
            gamma: flat,
            symmetric_only: false,
        })
    }

    /// Recovers the symmetric part of a connection from its quadratic map
    /// `Q(v) = ∇_v v` by polarization, `B(v, w) = ½(Q(v + w) − Q(v) − Q(w))`.
    pub fn from_quadratic(n: usize, quadratic: impl Fn(&DVector<f64>) -> DVector<f64>) -> Self {
        let unit = |i: usize| DVector::from_fn(n, |r, _| if r == i { 1.0 } else { 0.0 });
        let diag: Vec<DVector<f64>> = (0..n).map(|i| quadratic(&unit(i))).collect();
        let mut gamma = vec![0.0; n * n * n];
        for i in 0..n {
            for j in i..n {
                let b = if i == j {
                    diag[i].clone()
                } else {
                    (quadratic(&(unit(i) + unit(j))) - &diag[i] - &diag[j]) * 0.5
                };
                for k in 0..n {
                    gamma[k * n * n + i * n + j] = b[k];
                    gamma[k * n * n + j * n + i] = b[k];
                }
            }
        }
        Self {
            n,
            gamma,
            symmetric_only: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Whether only the symmetric part `½(∇_v w + ∇_w v)` is represented.
    pub fn symmetric_only(&self) -> bool {
        self.symmetric_only
    }

    pub fn coefficient(&self, k: usize, i: usize, j: usize) -> f64 {
        self.gamma[k * self.n * self.n + i * self.n + j]
    }

    /// `∇^𝔤_v w` in frame coordinates.
    pub fn covariant(&self, v: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        DVector::from_fn(n, |k, _| {
            let plane = &self.gamma[k * n * n..(k + 1) * n * n];
            let mut acc = 0.0;
            for i in 0..n {
                if v[i] == 0.0 {
                    continue;
                }
                let row = &plane[i * n..(i + 1) * n];
                acc += v[i] * row.iter().zip(w.iter()).map(|(g, x)| g * x).sum::<f64>();
            }
            acc
        })
    }

    /// `∇^𝔤_v v` in frame coordinates.
    pub fn self_covariant(&self, v: &DVector<f64>) -> DVector<f64> {
        self.covariant(v, v)
    }

    /// `Σ_i ∇^𝔤_{e_i} e_i` in frame coordinates.
    pub fn trace(&self) -> DVector<f64> {
        let n = self.n;
        DVector::from_fn(n, |k, _| (0..n).map(|i| self.coefficient(k, i, i)).sum())
    }
}

/// `μ = ∇_{e_1}e_1 + ⋯ + ∇_{e_n}e_n` as a raw algebra vector.
pub fn mu(frame: &AlgebraFrame, conn: &ConnectionTable) -> DVector<f64> {
    frame.embed(&conn.trace())
}

/// Finite-difference step used for gradients at `g`.
pub fn gradient_step(g: &GroupElement) -> f64 {
    1e-6 * g.coords().amax().max(1.0)
}

/// Frame coordinates of `𝔤rad ψ(g)`: `c_i = d/ds ψ(g exp(s e_i))|₀`.
///
/// Uses the objective's analytic ambient gradient when it has one, central
/// differences along the group otherwise.
pub fn body_gradient(
    group: &dyn LieGroup,
    frame: &AlgebraFrame,
    objective: &dyn Objective,
    g: &GroupElement,
) -> DVector<f64> {
    match objective.ambient_gradient(g) {
        Some(grad) => DVector::from_fn(frame.dim(), |i, _| {
            let lifted = group.tangent_lift(g, &frame.basis.column(i).into_owned());
            grad.dot(&lifted)
        }),
        None => body_gradient_fd(group, frame, objective, g),
    }
}

/// [`body_gradient`] by central differences only.
pub fn body_gradient_fd(
    group: &dyn LieGroup,
    frame: &AlgebraFrame,
    objective: &dyn Objective,
    g: &GroupElement,
) -> DVector<f64> {
    let h = gradient_step(g);
    DVector::from_fn(frame.dim(), |i, _| {
        let e = frame.basis.column(i).into_owned();
        let plus = objective.value(&group.retract(g, &e, h));
        let minus = objective.value(&group.retract(g, &e, -h));
        (plus - minus) / (2.0 * h)
    })
}
