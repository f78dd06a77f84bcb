//! Correlation-aware fusion of group-valued estimates.
//!
//! Given n stochastic members `X_i = Xbar_i exp(zeta_i)` with a full joint
//! covariance (diagonal blocks `P_ii`, cross blocks `P_ij`), the fused member
//! minimizes the stacked Mahalanobis cost weighted by the inverse joint
//! covariance. The closed form works in the tangent space of an arbitrary
//! reference member `Xbar_s`:
//!
//! ```text
//! zeta_i = log(Xbar_i^-1 Xbar_s)
//! A = sum_ij Jr^-T(zeta_j) G_ij' Jr^-1(zeta_i) + Jr^-T(zeta_i) G_ij Jr^-1(zeta_j)
//! b = sum_ij Jr^-T(zeta_j) G_ij' zeta_i     + Jr^-T(zeta_i) G_ij zeta_j
//! zeta* = -A^-1 b,   Xbar_fus = Xbar_s exp(zeta*),
//! P_fus = Jr(zeta*) (c A^-1) Jr'(zeta*)
//! ```
//!
//! The double sum counts each symmetric term twice, so `A = 2 P^-1` for a
//! single member; the default normalization `c = 2` makes single-member
//! fusion the identity and reproduces `(P1^-1 + P2^-1)^-1` in the Euclidean
//! two-member case. `c = 1` is selectable for literal reproduction of the
//! transcribed covariance formula. The mean is unaffected by `c`.
//!
//! A brute-force Gauss-Newton minimizer of the same cost is provided as an
//! independent cross-check.

use nalgebra::{DMatrix, DVector};

use crate::error::FusionError;
use crate::lie::{se3_exp, se3_log, se3_right_jacobian, Pose, Twist6};
use crate::state::{state_exp, state_log, state_right_jacobian, StateTangent, TargetState};

/// Eigenvalue floor used by [`repair_psd`].
pub const PSD_FLOOR: f64 = 1e-12;
/// Joint covariances above this condition number are refused.
pub const MAX_JOINT_CONDITION: f64 = 1e12;
/// Convergence threshold on the correction norm for iterated re-centering
/// and the Gauss-Newton oracle.
pub const CONVERGENCE_TOL: f64 = 1e-10;
/// Iteration caps.
pub const MAX_RECENTER_ITERS: usize = 20;
pub const MAX_ORACLE_ITERS: usize = 200;

/// Group operations needed by the fusion machinery, over dynamically sized
/// tangent vectors so SE(3) members and full target states share one path.
pub trait FusionGroup: Clone {
    /// Tangent dimension m.
    fn dof() -> usize;
    fn compose(&self, other: &Self) -> Self;
    fn inverse(&self) -> Self;
    fn log(&self) -> DVector<f64>;
    fn exp(tangent: &DVector<f64>) -> Self;
    fn right_jacobian(tangent: &DVector<f64>) -> DMatrix<f64>;
}

impl FusionGroup for Pose {
    fn dof() -> usize {
        6
    }

    fn compose(&self, other: &Self) -> Self {
        *self * *other
    }

    fn inverse(&self) -> Self {
        Pose::inverse(self)
    }

    fn log(&self) -> DVector<f64> {
        DVector::from_column_slice(se3_log(self).as_vector().as_slice())
    }

    fn exp(tangent: &DVector<f64>) -> Self {
        let t = Twist6::from_vector(&nalgebra::Vector6::from_column_slice(tangent.as_slice()));
        se3_exp(&t)
    }

    fn right_jacobian(tangent: &DVector<f64>) -> DMatrix<f64> {
        let t = Twist6::from_vector(&nalgebra::Vector6::from_column_slice(tangent.as_slice()));
        let jr = se3_right_jacobian(&t);
        DMatrix::from_fn(6, 6, |i, j| jr[(i, j)])
    }
}

impl FusionGroup for TargetState {
    fn dof() -> usize {
        12
    }

    fn compose(&self, other: &Self) -> Self {
        TargetState::compose(self, other)
    }

    fn inverse(&self) -> Self {
        TargetState::inverse(self)
    }

    fn log(&self) -> DVector<f64> {
        DVector::from_column_slice(state_log(self).as_vector().as_slice())
    }

    fn exp(tangent: &DVector<f64>) -> Self {
        let xi = StateTangent::from_vector(&nalgebra::SVector::<f64, 12>::from_column_slice(
            tangent.as_slice(),
        ));
        state_exp(&xi)
    }

    fn right_jacobian(tangent: &DVector<f64>) -> DMatrix<f64> {
        let xi = StateTangent::from_vector(&nalgebra::SVector::<f64, 12>::from_column_slice(
            tangent.as_slice(),
        ));
        let jr = state_right_jacobian(&xi);
        DMatrix::from_fn(12, 12, |i, j| jr[(i, j)])
    }
}

/// Ordered members plus their full joint covariance (n*m square, cross blocks
/// included).
#[derive(Clone, Debug)]
pub struct FusionInput<G: FusionGroup> {
    pub members: Vec<G>,
    pub joint_cov: DMatrix<f64>,
}

impl<G: FusionGroup> FusionInput<G> {
    pub fn new(members: Vec<G>, joint_cov: DMatrix<f64>) -> Result<Self, FusionError> {
        if members.is_empty() {
            return Err(FusionError::EmptyInput);
        }
        let expected = members.len() * G::dof();
        if joint_cov.nrows() != expected || joint_cov.ncols() != expected {
            return Err(FusionError::DimensionMismatch { got: joint_cov.nrows(), expected });
        }
        Ok(FusionInput { members, joint_cov })
    }
}

/// How the reference member `Xbar_s` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferencePolicy {
    /// Member with the smallest covariance trace (default).
    MinTraceCov,
    /// A caller-fixed member index.
    Fixed(usize),
    /// Re-run the closed form with `Xbar_s <- Xbar_fus` until the correction
    /// vanishes; converges to the cost minimizer.
    IteratedRecenter,
}

/// Normalization of the fused covariance (`c` in `P = c A^-1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    /// `c = 2`: single-member fusion returns its input covariance.
    Consistent,
    /// `c = 1`: the transcribed form, which halves single-member covariance.
    PaperExact,
}

impl Normalization {
    pub fn factor(&self) -> f64 {
        match self {
            Normalization::Consistent => 2.0,
            Normalization::PaperExact => 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FusedEstimate<G: FusionGroup> {
    pub mean: G,
    pub cov: DMatrix<f64>,
    /// Member that served as the (initial) reference.
    pub reference_index: usize,
    /// Tangent correction applied to the reference, `zeta*`.
    pub correction: DVector<f64>,
}

/// Eigenvalue clamp at [`PSD_FLOOR`]; symmetric input assumed, idempotent.
pub fn repair_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut eig = sym.clone().symmetric_eigen();
    let mut touched = false;
    for v in eig.eigenvalues.iter_mut() {
        if *v < PSD_FLOOR {
            *v = PSD_FLOOR;
            touched = true;
        }
    }
    if !touched {
        return sym;
    }
    let rebuilt = eig.recompose();
    (&rebuilt + rebuilt.transpose()) * 0.5
}

/// Inverse of the repaired joint covariance through its eigendecomposition,
/// refusing condition numbers past [`MAX_JOINT_CONDITION`].
fn inverse_joint(m: &DMatrix<f64>) -> Result<DMatrix<f64>, FusionError> {
    let repaired = repair_psd(m);
    let eig = repaired.symmetric_eigen();
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    let cond = max / min;
    if !cond.is_finite() || cond > MAX_JOINT_CONDITION {
        return Err(FusionError::IllConditioned { cond });
    }
    let mut inv_eig = eig;
    for v in inv_eig.eigenvalues.iter_mut() {
        *v = 1.0 / *v;
    }
    let inv = inv_eig.recompose();
    Ok((&inv + inv.transpose()) * 0.5)
}

fn block<'a>(g: &'a DMatrix<f64>, i: usize, j: usize, m: usize) -> nalgebra::DMatrixView<'a, f64> {
    g.view((i * m, j * m), (m, m))
}

/// One closed-form step about the reference `s`; returns `(zeta*, A^-1)`.
fn closed_form_step<G: FusionGroup>(
    members: &[G],
    reference: &G,
    g_inv: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>), FusionError> {
    let n = members.len();
    let m = G::dof();
    let mut zetas = Vec::with_capacity(n);
    let mut e_inv_t = Vec::with_capacity(n); // Jr^-T(zeta_i)
    for (idx, member) in members.iter().enumerate() {
        let zeta = member.inverse().compose(reference).log();
        let jr = G::right_jacobian(&zeta);
        let e = jr
            .clone()
            .try_inverse()
            .ok_or(FusionError::JacobianSingular { index: idx })?;
        e_inv_t.push(e.transpose());
        zetas.push((zeta, e));
    }

    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut b = DVector::<f64>::zeros(m);
    for i in 0..n {
        for j in 0..n {
            let g_ij = block(g_inv, i, j, m);
            let (zeta_i, e_i) = &zetas[i];
            let (zeta_j, e_j) = &zetas[j];
            // Jr^-T(zeta_j) G_ij' Jr^-1(zeta_i) + Jr^-T(zeta_i) G_ij Jr^-1(zeta_j)
            a += &e_inv_t[j] * g_ij.transpose() * e_i;
            a += &e_inv_t[i] * g_ij * e_j;
            b += &e_inv_t[j] * g_ij.transpose() * zeta_i;
            b += &e_inv_t[i] * g_ij * zeta_j;
        }
    }

    let a_inv = a.try_inverse().ok_or(FusionError::DegenerateInput)?;
    let zeta_star = -(&a_inv * b);
    Ok((zeta_star, a_inv))
}

/// Correlation-aware fusion (closed form).
pub fn fuse<G: FusionGroup>(
    input: &FusionInput<G>,
    policy: ReferencePolicy,
    normalization: Normalization,
) -> Result<FusedEstimate<G>, FusionError> {
    let n = input.members.len();
    if n == 0 {
        return Err(FusionError::EmptyInput);
    }
    let m = G::dof();
    let g_inv = inverse_joint(&input.joint_cov)?;

    let initial_index = match policy {
        ReferencePolicy::Fixed(i) => {
            if i >= n {
                return Err(FusionError::ReferenceOutOfRange { index: i, len: n });
            }
            i
        }
        ReferencePolicy::MinTraceCov | ReferencePolicy::IteratedRecenter => (0..n)
            .min_by(|&a, &b| {
                let ta = block(&input.joint_cov, a, a, m).trace();
                let tb = block(&input.joint_cov, b, b, m).trace();
                ta.total_cmp(&tb)
            })
            .expect("non-empty members"),
    };

    let mut reference = input.members[initial_index].clone();
    let rounds = match policy {
        ReferencePolicy::IteratedRecenter => MAX_RECENTER_ITERS,
        _ => 1,
    };

    let mut result = None;
    for _ in 0..rounds {
        let (zeta_star, a_inv) = closed_form_step(&input.members, &reference, &g_inv)?;
        let mean = reference.compose(&G::exp(&zeta_star));
        let done = zeta_star.norm() < CONVERGENCE_TOL;
        reference = mean.clone();
        result = Some((mean, zeta_star, a_inv));
        if done {
            break;
        }
    }
    let (mean, correction, a_inv) = result.expect("at least one round");

    let p_zz = &a_inv * normalization.factor();
    let jr = G::right_jacobian(&correction);
    let cov = &jr * p_zz * jr.transpose();
    let cov = (&cov + cov.transpose()) * 0.5;

    Ok(FusedEstimate { mean, cov, reference_index: initial_index, correction })
}

/// Stacked Mahalanobis cost of a candidate against the members,
/// `eps' (joint_cov)^-1 eps` with `eps_i = log(Xbar_i^-1 candidate)`.
pub fn fusion_cost<G: FusionGroup>(
    candidate: &G,
    input: &FusionInput<G>,
) -> Result<f64, FusionError> {
    let g_inv = inverse_joint(&input.joint_cov)?;
    let m = G::dof();
    let n = input.members.len();
    let mut eps = DVector::<f64>::zeros(n * m);
    for (i, member) in input.members.iter().enumerate() {
        let e = member.inverse().compose(candidate).log();
        eps.rows_mut(i * m, m).copy_from(&e);
    }
    Ok((eps.transpose() * g_inv * eps)[(0, 0)])
}

/// Brute-force minimizer of [`fusion_cost`]: multi-start Gauss-Newton on the
/// manifold, re-linearized every iteration. Intended as a verification oracle
/// for small member counts.
pub fn minimize_cost_oracle<G: FusionGroup>(input: &FusionInput<G>) -> Result<G, FusionError> {
    let n = input.members.len();
    if n == 0 {
        return Err(FusionError::EmptyInput);
    }
    let m = G::dof();
    let g_inv = inverse_joint(&input.joint_cov)?;

    let mut best: Option<(f64, G)> = None;
    for start in 0..n {
        let mut candidate = input.members[start].clone();
        let mut converged = false;
        for _ in 0..MAX_ORACLE_ITERS {
            // eps_i(c exp(d)) ~ eps_i + Jr^-1(eps_i) d
            let mut eps = Vec::with_capacity(n);
            let mut jac = Vec::with_capacity(n);
            for (idx, member) in input.members.iter().enumerate() {
                let e = member.inverse().compose(&candidate).log();
                let jr = G::right_jacobian(&e);
                let j = jr
                    .clone()
                    .try_inverse()
                    .ok_or(FusionError::JacobianSingular { index: idx })?;
                eps.push(e);
                jac.push(j);
            }
            let mut normal = DMatrix::<f64>::zeros(m, m);
            let mut rhs = DVector::<f64>::zeros(m);
            for i in 0..n {
                for j in 0..n {
                    let g_ij = block(&g_inv, i, j, m);
                    normal += jac[i].transpose() * g_ij * &jac[j];
                    rhs += jac[i].transpose() * g_ij * &eps[j];
                }
            }
            let delta = normal
                .try_inverse()
                .ok_or(FusionError::DegenerateInput)?
                * (-rhs);
            candidate = candidate.compose(&G::exp(&delta));
            if delta.norm() < CONVERGENCE_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            continue;
        }
        let cost = fusion_cost(&candidate, input)?;
        match &best {
            Some((c, _)) if *c <= cost => {}
            _ => best = Some((cost, candidate)),
        }
    }
    best.map(|(_, g)| g)
        .ok_or(FusionError::OracleInconclusive { max_iter: MAX_ORACLE_ITERS })
}
