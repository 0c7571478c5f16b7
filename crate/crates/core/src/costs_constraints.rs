//! Tracking costs, control effort, and stage-wise constraints.
//!
//! Costs are written on the post-transform state of each stage together
//! with the control that produced it:
//!
//! ```text
//! cost_k(y, u) = e_k(y)^T Q_k e_k(y) + R u^2
//! e_k(y) = [p - p_ref; quat_error(r, r_ref)]
//! ```
//!
//! with no 1/2 factors anywhere. A stage without a reference contributes no
//! tracking term at all, so motion there is shaped purely by constraints,
//! control effort, and the terminal cost. The terminal cost is the same
//! quadratic on the end-effector pose, reached from the last stage through
//! the fixed end-effector offset.
//!
//! Derivatives are Gauss-Newton: with `E = d e / d [v; w]` the gradient is
//! `2 E^T Q e` and the Hessian `2 E^T Q E`, which is positive semidefinite
//! by construction and exact at zero residual.
//!
//! Inequality constraints use the convention `c(y, u) <= 0`.

use crate::chain::{self, ChainSpec, ChainTrajectory};
use crate::containment::{min_scaling, smoothed_scaling, LinkGeometry};
use crate::free_region::FreeRegion;
use crate::geometry::{quat_error, quat_error_jacobian, LinkPose};
use crate::{Error, Real, Result};
use nalgebra::{Matrix6, Vector6};

/// Diagonal tracking weights per stage, end-effector weights, and the
/// scalar control-effort weight.
#[derive(Debug, Clone)]
pub struct CostWeights<S> {
    /// One diagonal per stage, ordered `[translation; rotation]`.
    pub stage: Vec<Vector6<S>>,
    /// Diagonal on the end-effector pose error.
    pub terminal: Vector6<S>,
    /// Control effort weight `R`.
    pub control: S,
}

impl<S: Real> CostWeights<S> {
    /// Library defaults: end-effector diag `(10, 10, 10, 5, 5, 5)`, control
    /// `0.1`, no stage tracking except the yaw stage (the full base pose)
    /// with diag `(1, 1, 0, 0, 0, 1)`.
    pub fn defaults(num_stages: usize) -> Self {
        let mut stage = vec![Vector6::zeros(); num_stages];
        if num_stages > 2 {
            stage[2] = Vector6::new(
                S::one(),
                S::one(),
                S::zero(),
                S::zero(),
                S::zero(),
                S::one(),
            );
        }
        CostWeights {
            stage,
            terminal: Vector6::new(
                crate::cast(10.0),
                crate::cast(10.0),
                crate::cast(10.0),
                crate::cast(5.0),
                crate::cast(5.0),
                crate::cast(5.0),
            ),
            control: crate::cast(0.1),
        }
    }

    pub fn validate(&self, num_stages: usize) -> Result<()> {
        if self.stage.len() != num_stages {
            return Err(Error::LengthMismatch {
                what: "stage weights",
                got: self.stage.len(),
                want: num_stages,
            });
        }
        for w in self.stage.iter().chain(std::iter::once(&self.terminal)) {
            if w.iter().any(|q| *q < S::zero()) {
                return Err(Error::InvalidInput("negative tracking weight".into()));
            }
        }
        if self.control < S::zero() {
            return Err(Error::InvalidInput("negative control weight".into()));
        }
        Ok(())
    }
}

/// Optional pose references: per stage and for the end effector.
#[derive(Debug, Clone)]
pub struct ReferenceSet<S> {
    pub stage_refs: Vec<Option<LinkPose<S>>>,
    pub ee_ref: Option<LinkPose<S>>,
}

impl<S: Real> ReferenceSet<S> {
    pub fn empty(num_stages: usize) -> Self {
        ReferenceSet {
            stage_refs: vec![None; num_stages],
            ee_ref: None,
        }
    }

    pub fn validate(&self, num_stages: usize) -> Result<()> {
        if self.stage_refs.len() != num_stages {
            return Err(Error::LengthMismatch {
                what: "stage references",
                got: self.stage_refs.len(),
                want: num_stages,
            });
        }
        Ok(())
    }
}

/// Control-rate and joint-angle bounds.
#[derive(Debug, Clone)]
pub struct Limits<S> {
    /// Per-stage control bounds, `lower < upper`.
    pub control_lower: Vec<S>,
    pub control_upper: Vec<S>,
    /// Per arm joint angle bounds (virtual base stages are unbounded).
    pub angle_lower: Vec<S>,
    pub angle_upper: Vec<S>,
}

impl<S: Real> Limits<S> {
    pub fn validate(&self, num_stages: usize, num_arm_joints: usize) -> Result<()> {
        if self.control_lower.len() != num_stages || self.control_upper.len() != num_stages {
            return Err(Error::LengthMismatch {
                what: "control limits",
                got: self.control_lower.len().min(self.control_upper.len()),
                want: num_stages,
            });
        }
        if self.angle_lower.len() != num_arm_joints || self.angle_upper.len() != num_arm_joints {
            return Err(Error::LengthMismatch {
                what: "angle limits",
                got: self.angle_lower.len().min(self.angle_upper.len()),
                want: num_arm_joints,
            });
        }
        for (lo, hi) in self
            .control_lower
            .iter()
            .zip(&self.control_upper)
            .chain(self.angle_lower.iter().zip(&self.angle_upper))
        {
            if !(*lo < *hi) {
                return Err(Error::InvalidInput(format!(
                    "limit interval [{lo:?}, {hi:?}] is empty"
                )));
            }
        }
        Ok(())
    }
}

/// Pose tracking error `[p - p_ref; quat_error(r, r_ref)]`.
pub fn pose_error<S: Real>(pose: &LinkPose<S>, reference: &LinkPose<S>) -> Vector6<S> {
    let et = pose.p - reference.p;
    let er = quat_error(&pose.r, &reference.r);
    Vector6::new(et.x, et.y, et.z, er.x, er.y, er.z)
}

/// Jacobian of [`pose_error`] with respect to the pose tangent `[v; w]`:
/// identity on the translation block, the quaternion error Jacobian on the
/// rotation block.
pub fn pose_error_jacobian<S: Real>(pose: &LinkPose<S>, reference: &LinkPose<S>) -> Matrix6<S> {
    let mut e = Matrix6::identity();
    e.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&quat_error_jacobian(&pose.r, &reference.r));
    e
}

/// Value, gradient, and Gauss-Newton Hessian of a quadratic pose cost.
#[derive(Debug, Clone)]
pub struct QuadraticEval<S> {
    pub value: S,
    pub grad: Vector6<S>,
    pub hess: Matrix6<S>,
}

impl<S: Real> QuadraticEval<S> {
    pub fn zero() -> Self {
        QuadraticEval {
            value: S::zero(),
            grad: Vector6::zeros(),
            hess: Matrix6::zeros(),
        }
    }
}

/// `e^T Q e` against an optional reference with diagonal weights `q`.
pub fn tracking_eval<S: Real>(
    pose: &LinkPose<S>,
    reference: Option<&LinkPose<S>>,
    q: &Vector6<S>,
) -> QuadraticEval<S> {
    let Some(reference) = reference else {
        return QuadraticEval::zero();
    };
    let e = pose_error(pose, reference);
    let jac = pose_error_jacobian(pose, reference);
    let qe = e.component_mul(q);
    let two = crate::cast::<S>(2.0);
    let mut hess = jac.transpose() * Matrix6::from_diagonal(q) * jac;
    hess *= two;
    QuadraticEval {
        value: e.dot(&qe),
        grad: jac.transpose() * qe * two,
        hess,
    }
}

/// Control effort term `R u^2` as `(value, d/du, d^2/du^2)`.
pub fn control_cost<S: Real>(u: S, r: S) -> (S, S, S) {
    let two = crate::cast::<S>(2.0);
    (r * u * u, two * r * u, two * r)
}

/// Tracking part of stage `k`'s cost (no control term).
pub fn stage_tracking_eval<S: Real>(
    k: usize,
    pose: &LinkPose<S>,
    weights: &CostWeights<S>,
    refs: &ReferenceSet<S>,
) -> QuadraticEval<S> {
    tracking_eval(pose, refs.stage_refs[k].as_ref(), &weights.stage[k])
}

/// Full stage cost value: tracking on the post state plus control effort.
pub fn stage_cost_value<S: Real>(
    k: usize,
    pose: &LinkPose<S>,
    u: S,
    weights: &CostWeights<S>,
    refs: &ReferenceSet<S>,
) -> S {
    stage_tracking_eval(k, pose, weights, refs).value + control_cost(u, weights.control).0
}

/// Terminal cost value on the end-effector pose reached from the last
/// stage pose.
pub fn terminal_cost_value<S: Real>(
    last: &LinkPose<S>,
    spec: &ChainSpec<S>,
    weights: &CostWeights<S>,
    refs: &ReferenceSet<S>,
) -> S {
    let ee = chain::ee_pose(last, spec);
    tracking_eval(&ee, refs.ee_ref.as_ref(), &weights.terminal).value
}

/// Terminal cost with derivatives pulled back to the last stage pose
/// through the end-effector offset Jacobian.
pub fn terminal_cost_eval<S: Real>(
    last: &LinkPose<S>,
    spec: &ChainSpec<S>,
    weights: &CostWeights<S>,
    refs: &ReferenceSet<S>,
) -> QuadraticEval<S> {
    let ee = chain::ee_pose(last, spec);
    let at_ee = tracking_eval(&ee, refs.ee_ref.as_ref(), &weights.terminal);
    if refs.ee_ref.is_none() {
        return at_ee;
    }
    let j = chain::ee_jacobian(last, spec);
    QuadraticEval {
        value: at_ee.value,
        grad: j.transpose() * at_ee.grad,
        hess: j.transpose() * at_ee.hess * j,
    }
}

/// Total true cost of a trajectory: stage tracking, control effort, and
/// the terminal end-effector term.
pub fn trajectory_cost<S: Real>(
    traj: &ChainTrajectory<S>,
    controls: &[S],
    spec: &ChainSpec<S>,
    weights: &CostWeights<S>,
    refs: &ReferenceSet<S>,
) -> S {
    let n = spec.num_stages();
    debug_assert_eq!(controls.len(), n);
    let mut total = S::zero();
    for k in 0..n {
        total += stage_cost_value(k, traj.stage_pose(k), controls[k], weights, refs);
    }
    total + terminal_cost_value(traj.stage_pose(n - 1), spec, weights, refs)
}

/// One inequality constraint `c(y, u) <= 0` on a stage's post state and
/// control.
#[derive(Debug, Clone)]
pub enum InequalityConstraint<S> {
    /// `u - limit <= 0`
    ControlUpper { limit: S },
    /// `limit - u <= 0`
    ControlLower { limit: S },
    /// `theta_t + u dt - limit <= 0` for a revolute stage.
    AngleUpper { theta_t: S, limit: S },
    /// `limit - theta_t - u dt <= 0`
    AngleLower { theta_t: S, limit: S },
    /// `alpha(y) - 1 <= 0`: the posed link hull stays inside the region.
    Containment {
        region: FreeRegion<S>,
        geometry: LinkGeometry<S>,
    },
}

/// Equality constraint `c(y, u) = 0`.
#[derive(Debug, Clone)]
pub enum EqualityConstraint<S> {
    /// `u - value = 0`: pins a stage's control.
    ControlEquals { value: S },
}

/// Constraint value with gradients with respect to the post-state tangent
/// and the control. `hess_x` carries the constraint's own convex curvature
/// when it has one (the smoothed containment measure); linear constraints
/// leave it `None`.
#[derive(Debug, Clone)]
pub struct ConstraintEval<S> {
    pub value: S,
    pub grad_x: Vector6<S>,
    pub grad_u: S,
    pub hess_x: Option<Matrix6<S>>,
}

impl<S: Real> InequalityConstraint<S> {
    /// Evaluates at the stage's post state `pose` and control `u`.
    /// `smooth_tau` switches containment to its log-sum-exp relaxation.
    pub fn eval(
        &self,
        pose: &LinkPose<S>,
        u: S,
        dt: S,
        smooth_tau: Option<S>,
    ) -> ConstraintEval<S> {
        match self {
            InequalityConstraint::ControlUpper { limit } => ConstraintEval {
                value: u - *limit,
                grad_x: Vector6::zeros(),
                grad_u: S::one(),
                hess_x: None,
            },
            InequalityConstraint::ControlLower { limit } => ConstraintEval {
                value: *limit - u,
                grad_x: Vector6::zeros(),
                grad_u: -S::one(),
                hess_x: None,
            },
            InequalityConstraint::AngleUpper { theta_t, limit } => ConstraintEval {
                value: *theta_t + u * dt - *limit,
                grad_x: Vector6::zeros(),
                grad_u: dt,
                hess_x: None,
            },
            InequalityConstraint::AngleLower { theta_t, limit } => ConstraintEval {
                value: *limit - *theta_t - u * dt,
                grad_x: Vector6::zeros(),
                grad_u: -dt,
                hess_x: None,
            },
            InequalityConstraint::Containment { region, geometry } => {
                let (alpha, grad, hess) = match smooth_tau {
                    Some(tau) => {
                        let (a, g, h) = smoothed_scaling(region, geometry, pose, tau);
                        (a, g, Some(h))
                    }
                    None => {
                        let m = min_scaling(region, geometry, pose);
                        (m.alpha, m.grad, None)
                    }
                };
                ConstraintEval {
                    value: alpha - S::one(),
                    grad_x: grad,
                    grad_u: S::zero(),
                    hess_x: hess,
                }
            }
        }
    }
}

impl<S: Real> EqualityConstraint<S> {
    pub fn eval(&self, _pose: &LinkPose<S>, u: S, _dt: S) -> ConstraintEval<S> {
        match self {
            EqualityConstraint::ControlEquals { value } => ConstraintEval {
                value: u - *value,
                grad_x: Vector6::zeros(),
                grad_u: S::one(),
                hess_x: None,
            },
        }
    }
}

/// Constraints attached to one stage.
#[derive(Debug, Clone)]
pub struct StageConstraints<S> {
    pub inequalities: Vec<InequalityConstraint<S>>,
    pub equalities: Vec<EqualityConstraint<S>>,
}

impl<S> Default for StageConstraints<S> {
    fn default() -> Self {
        StageConstraints {
            inequalities: Vec::new(),
            equalities: Vec::new(),
        }
    }
}

/// All stage constraint lists for a problem; equalities are empty unless
/// explicitly added.
#[derive(Debug, Clone)]
pub struct ConstraintSet<S> {
    stages: Vec<StageConstraints<S>>,
}

impl<S: Real> ConstraintSet<S> {
    pub fn empty(num_stages: usize) -> Self {
        ConstraintSet {
            stages: (0..num_stages).map(|_| StageConstraints::default()).collect(),
        }
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stage(&self, k: usize) -> &StageConstraints<S> {
        &self.stages[k]
    }

    pub fn stage_mut(&mut self, k: usize) -> &mut StageConstraints<S> {
        &mut self.stages[k]
    }

    pub fn total_inequalities(&self) -> usize {
        self.stages.iter().map(|s| s.inequalities.len()).sum()
    }

    pub fn total_equalities(&self) -> usize {
        self.stages.iter().map(|s| s.equalities.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::ChainSpec;
    use crate::free_region::{seed_box, SkeletonSegment};
    use crate::geometry::{apply_tangent, PoseTangent, Quat, Transform};
    use approx::assert_relative_eq;
    use nalgebra::{Unit, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> LinkPose<f64> {
        LinkPose::new(
            v(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ),
            Quat::from_rotvec(&v(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )),
        )
    }

    fn two_joint_spec() -> ChainSpec<f64> {
        ChainSpec::new(
            &[
                Unit::new_normalize(v(0.0, 0.0, 1.0)),
                Unit::new_normalize(v(0.0, 1.0, 0.0)),
            ],
            Transform::from_translation(v(0.0, 0.0, 0.1)),
            vec![None; 5],
        )
        .unwrap()
    }

    #[test]
    fn control_cost_worked_value() {
        let (value, grad, hess) = control_cost(0.5, 0.1);
        assert_relative_eq!(value, 0.025, epsilon = 1e-15);
        assert_relative_eq!(grad, 0.1, epsilon = 1e-15);
        assert_relative_eq!(hess, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn rotation_only_tracking_worked_value() {
        // Yaw 90 degrees against identity with unit rotation weights:
        // quat_error = (0, 0, -sin 45) so the cost is 0.5.
        let pose = LinkPose::new(
            v(0.0, 0.0, 0.0),
            Quat::from_rotvec(&v(0.0, 0.0, std::f64::consts::FRAC_PI_2)),
        );
        let q = Vector6::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0);
        let eval = tracking_eval(&pose, Some(&LinkPose::identity()), &q);
        assert_relative_eq!(eval.value, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn translation_tracking_worked_value() {
        let pose = LinkPose::from_translation(v(0.1, 0.0, 0.0));
        let q = Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let eval = tracking_eval(&pose, Some(&LinkPose::identity()), &q);
        assert_relative_eq!(eval.value, 0.01, epsilon = 1e-15);
    }

    #[test]
    fn missing_reference_contributes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pose = random_pose(&mut rng);
        let q = Vector6::repeat(3.0);
        let eval = tracking_eval(&pose, None, &q);
        assert_eq!(eval.value, 0.0);
        assert_eq!(eval.grad, Vector6::zeros());
        assert_eq!(eval.hess, Matrix6::zeros());
    }

    #[test]
    fn tracking_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-6;
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let rref = random_pose(&mut rng);
            let q = Vector6::new(
                rng.gen_range(0.0..5.0),
                rng.gen_range(0.0..5.0),
                rng.gen_range(0.0..5.0),
                rng.gen_range(0.0..5.0),
                rng.gen_range(0.0..5.0),
                rng.gen_range(0.0..5.0),
            );
            let eval = tracking_eval(&pose, Some(&rref), &q);
            for dof in 0..6 {
                let mut tv = PoseTangent::zero().to_vector();
                tv[dof] = h;
                let plus = tracking_eval(
                    &apply_tangent(&pose, &PoseTangent::from_vector(&tv)),
                    Some(&rref),
                    &q,
                )
                .value;
                tv[dof] = -h;
                let minus = tracking_eval(
                    &apply_tangent(&pose, &PoseTangent::from_vector(&tv)),
                    Some(&rref),
                    &q,
                )
                .value;
                let fd = (plus - minus) / (2.0 * h);
                assert_relative_eq!(eval.grad[dof], fd, epsilon = 1e-6, max_relative = 1e-4);
            }
        }
    }

    #[test]
    fn hessian_matches_fd_gradient_at_zero_residual() {
        // At zero residual the Gauss-Newton Hessian equals the true
        // Hessian, which is the derivative of the exact gradient.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..20 {
            let pose = random_pose(&mut rng);
            let q = Vector6::repeat(rng.gen_range(0.5..3.0));
            let eval = tracking_eval(&pose, Some(&pose), &q);
            assert!(eval.value.abs() < 1e-18);
            for dof in 0..6 {
                let mut tv = PoseTangent::zero().to_vector();
                tv[dof] = h;
                let gp = tracking_eval(
                    &apply_tangent(&pose, &PoseTangent::from_vector(&tv)),
                    Some(&pose),
                    &q,
                )
                .grad;
                tv[dof] = -h;
                let gm = tracking_eval(
                    &apply_tangent(&pose, &PoseTangent::from_vector(&tv)),
                    Some(&pose),
                    &q,
                )
                .grad;
                let fd_col = (gp - gm) / (2.0 * h);
                for row in 0..6 {
                    assert_relative_eq!(
                        eval.hess[(row, dof)],
                        fd_col[row],
                        epsilon = 1e-5,
                        max_relative = 1e-4
                    );
                }
            }
        }
    }

    #[test]
    fn gauss_newton_hessian_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let rref = random_pose(&mut rng);
            let q = Vector6::new(
                rng.gen_range(0.0..5.0),
                rng.gen_range(0.0..5.0),
                rng.gen_range(0.0..5.0),
                rng.gen_range(0.0..5.0),
                rng.gen_range(0.0..5.0),
                rng.gen_range(0.0..5.0),
            );
            let eval = tracking_eval(&pose, Some(&rref), &q);
            let eig = eval.hess.symmetric_eigenvalues();
            for lam in eig.iter() {
                assert!(*lam >= -1e-10, "eigenvalue {lam} negative");
            }
        }
    }

    #[test]
    fn isotropic_cost_is_rigid_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = Vector6::new(2.0, 2.0, 2.0, 3.0, 3.0, 3.0);
        for _ in 0..20 {
            let pose = random_pose(&mut rng);
            let rref = random_pose(&mut rng);
            let world = random_pose(&mut rng).to_transform();
            let a = tracking_eval(&pose, Some(&rref), &q).value;
            let b = tracking_eval(
                &world.compose(&pose.to_transform()).to_pose(),
                Some(&world.compose(&rref.to_transform()).to_pose()),
                &q,
            )
            .value;
            assert_relative_eq!(a, b, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn terminal_cost_zero_at_exact_reach() {
        let spec = two_joint_spec();
        let mut refs = ReferenceSet::empty(spec.num_stages());
        refs.ee_ref = Some(LinkPose::from_translation(v(0.0, 0.0, 0.1)));
        let weights = CostWeights::defaults(spec.num_stages());
        let value = terminal_cost_value(&LinkPose::identity(), &spec, &weights, &refs);
        assert_relative_eq!(value, 0.0, epsilon = 1e-18);
    }

    #[test]
    fn terminal_gradient_matches_finite_differences() {
        let spec = two_joint_spec();
        let weights = CostWeights::defaults(spec.num_stages());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..30 {
            let last = random_pose(&mut rng);
            let mut refs = ReferenceSet::empty(spec.num_stages());
            refs.ee_ref = Some(random_pose(&mut rng));
            let eval = terminal_cost_eval(&last, &spec, &weights, &refs);
            assert_relative_eq!(
                eval.value,
                terminal_cost_value(&last, &spec, &weights, &refs),
                epsilon = 1e-12
            );
            for dof in 0..6 {
                let mut tv = PoseTangent::zero().to_vector();
                tv[dof] = h;
                let plus = terminal_cost_value(
                    &apply_tangent(&last, &PoseTangent::from_vector(&tv)),
                    &spec,
                    &weights,
                    &refs,
                );
                tv[dof] = -h;
                let minus = terminal_cost_value(
                    &apply_tangent(&last, &PoseTangent::from_vector(&tv)),
                    &spec,
                    &weights,
                    &refs,
                );
                let fd = (plus - minus) / (2.0 * h);
                assert_relative_eq!(eval.grad[dof], fd, epsilon = 1e-5, max_relative = 1e-4);
            }
        }
    }

    #[test]
    fn box_constraint_worked_values() {
        let id = LinkPose::identity();
        let up = InequalityConstraint::ControlUpper { limit: 0.5 }.eval(&id, 0.7, 0.1, None);
        assert_relative_eq!(up.value, 0.2, epsilon = 1e-15);
        assert_relative_eq!(up.grad_u, 1.0);
        let lo = InequalityConstraint::ControlLower { limit: -0.5 }.eval(&id, 0.7, 0.1, None);
        assert_relative_eq!(lo.value, -1.2, epsilon = 1e-15);
        assert_relative_eq!(lo.grad_u, -1.0);

        let au = InequalityConstraint::AngleUpper {
            theta_t: 2.75,
            limit: 2.8,
        }
        .eval(&id, 1.0, 0.1, None);
        assert_relative_eq!(au.value, 0.05, epsilon = 1e-12);
        assert_relative_eq!(au.grad_u, 0.1, epsilon = 1e-15);
        let al = InequalityConstraint::AngleLower {
            theta_t: -2.75,
            limit: -2.8,
        }
        .eval(&id, -1.0, 0.1, None);
        assert_relative_eq!(al.value, -0.05 + 0.1, epsilon = 1e-12);
        assert_relative_eq!(al.grad_u, -0.1, epsilon = 1e-15);
    }

    #[test]
    fn containment_constraint_matches_min_scaling() {
        let region = seed_box(
            &SkeletonSegment::point(v(0.0, 0.0, 0.0)),
            &v(2.0, 2.0, 2.0),
        )
        .unwrap();
        let geometry = LinkGeometry::cuboid(&v(-0.5, -0.5, -0.5), &v(0.5, 0.5, 0.5)).unwrap();
        let pose = LinkPose::from_translation(v(0.3, 0.0, 0.0));
        let expect = min_scaling(&region, &geometry, &pose);
        let con = InequalityConstraint::Containment {
            region: region.clone(),
            geometry: geometry.clone(),
        };
        let eval = con.eval(&pose, 0.3, 0.1, None);
        assert_relative_eq!(eval.value, expect.alpha - 1.0, epsilon = 1e-15);
        assert_relative_eq!(eval.grad_x, expect.grad, epsilon = 1e-15);
        assert_eq!(eval.grad_u, 0.0);

        let (soft, soft_grad, soft_hess) = smoothed_scaling(&region, &geometry, &pose, 1e-3);
        let eval_s = con.eval(&pose, 0.3, 0.1, Some(1e-3));
        assert_relative_eq!(eval_s.value, soft - 1.0, epsilon = 1e-15);
        assert_relative_eq!(eval_s.grad_x, soft_grad, epsilon = 1e-15);
        assert_relative_eq!(eval_s.hess_x.unwrap(), soft_hess, epsilon = 1e-15);
        assert!(eval.hess_x.is_none());
    }

    #[test]
    fn constraint_set_defaults_and_equality() {
        let mut set: ConstraintSet<f64> = ConstraintSet::empty(5);
        assert_eq!(set.num_stages(), 5);
        assert_eq!(set.total_inequalities(), 0);
        assert_eq!(set.total_equalities(), 0);
        set.stage_mut(1)
            .inequalities
            .push(InequalityConstraint::ControlUpper { limit: 1.0 });
        set.stage_mut(3)
            .equalities
            .push(EqualityConstraint::ControlEquals { value: 0.25 });
        assert_eq!(set.total_inequalities(), 1);
        assert_eq!(set.total_equalities(), 1);
        let eq = set.stage(3).equalities[0].eval(&LinkPose::identity(), 0.4, 0.1);
        assert_relative_eq!(eq.value, 0.15, epsilon = 1e-15);
        assert_relative_eq!(eq.grad_u, 1.0);
    }

    #[test]
    fn trajectory_cost_sums_stage_and_terminal_terms() {
        let spec = two_joint_spec();
        let n = spec.num_stages();
        let weights = CostWeights::defaults(n);
        let mut refs = ReferenceSet::empty(n);
        refs.stage_refs[2] = Some(LinkPose::from_translation(v(1.0, 0.0, 0.0)));
        refs.ee_ref = Some(LinkPose::from_translation(v(1.0, 0.0, 0.7)));

        let base = LinkPose::from_translation(v(0.0, 0.0, 0.15));
        let arm = vec![
            LinkPose::from_translation(v(0.0, 0.0, 0.3)),
            LinkPose::from_translation(v(0.0, 0.0, 0.6)),
        ];
        let obs =
            crate::chain::ChainObservation::new(&spec, base, &arm, &[0.0, 0.0], 0.0).unwrap();
        let controls = vec![0.1, -0.2, 0.05, 0.3, -0.1];
        let traj = crate::chain::propagate_chain(&obs, &controls, 0.1, &spec).unwrap();

        let mut manual = 0.0;
        for k in 0..n {
            manual += stage_cost_value(k, traj.stage_pose(k), controls[k], &weights, &refs);
        }
        manual += terminal_cost_value(traj.stage_pose(n - 1), &spec, &weights, &refs);
        assert_relative_eq!(
            trajectory_cost(&traj, &controls, &spec, &weights, &refs),
            manual,
            epsilon = 1e-12
        );
    }

    #[test]
    fn weight_and_limit_validation() {
        let mut w = CostWeights::<f64>::defaults(5);
        assert!(w.validate(5).is_ok());
        assert!(w.validate(4).is_err());
        w.control = -0.1;
        assert!(w.validate(5).is_err());

        let lim = Limits {
            control_lower: vec![-1.0; 5],
            control_upper: vec![1.0; 5],
            angle_lower: vec![-2.8; 2],
            angle_upper: vec![2.8; 2],
        };
        assert!(lim.validate(5, 2).is_ok());
        assert!(lim.validate(5, 3).is_err());
        let bad = Limits {
            control_lower: vec![1.0; 5],
            control_upper: vec![1.0; 5],
            angle_lower: vec![],
            angle_upper: vec![],
        };
        assert!(bad.validate(5, 0).is_err());
    }
}
