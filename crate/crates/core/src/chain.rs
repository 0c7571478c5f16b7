//! Kinematic chain as a sequence of stages.
//!
//! Stages index the chain, not time: stages 1..3 (indices 0..2 here) are the
//! virtual decomposition of the omnidirectional base (x translation, y
//! translation, yaw about z), every later stage is one revolute arm joint.
//! The pose of stage `k` follows from the pose of stage `k-1`, the observed
//! relative transform between the two links, and that stage's scalar
//! control applied for one step `dt`:
//!
//! - stage 0: `q_0 = M(T(base_t) * Trans_x(u dt))`
//! - stage 1: `q_1 = M(T(q_0) * Trans_y(u dt))`
//! - stage 2: `q_2 = M(T(q_1) * Rot_z(u dt))`
//! - stage k >= 3: `q_k = M(T(q_{k-1}) * T(q_{k-1}^t, q_k^t) * Rot(axis_k, u dt))`
//!
//! with one extra end-effector pose `M(T(q_last) * ee_offset)` appended to
//! each propagated trajectory. Controls are plain per-stage scalars, m/s for
//! the two translation stages and rad/s everywhere else.

use crate::geometry::{pose_difference, skew, LinkPose, PoseTangent, Transform};
use crate::{cast, Error, Real, Result};
use nalgebra::{Matrix6, Unit, Vector3, Vector6};

/// What one stage does to the chain.
#[derive(Debug, Clone, Copy)]
pub enum StageKind<S> {
    /// Base translation along the current base x axis (virtual stage).
    TranslateX,
    /// Base translation along the current base y axis (virtual stage).
    TranslateY,
    /// Base yaw about the current base z axis.
    RotateZ,
    /// Arm joint rotating about this axis in the link's local frame.
    Revolute(Unit<Vector3<S>>),
}

impl<S: Real> StageKind<S> {
    pub fn is_rotation(&self) -> bool {
        !matches!(self, StageKind::TranslateX | StageKind::TranslateY)
    }
}

/// Static description of the chain: stage kinds, end-effector offset, and
/// which link-geometry entry each stage carries.
#[derive(Debug, Clone)]
pub struct ChainSpec<S> {
    stages: Vec<StageKind<S>>,
    ee_offset: Transform<S>,
    link_geometry: Vec<Option<usize>>,
}

impl<S: Real> ChainSpec<S> {
    /// Builds the fixed three virtual base stages plus one revolute stage
    /// per joint axis. `link_geometry[k]` names the hull constrained at
    /// stage `k` (`None` for the two unconstrained virtual stages).
    pub fn new(
        joint_axes: &[Unit<Vector3<S>>],
        ee_offset: Transform<S>,
        link_geometry: Vec<Option<usize>>,
    ) -> Result<Self> {
        if joint_axes.is_empty() {
            return Err(Error::InvalidInput(
                "chain needs at least one arm joint".into(),
            ));
        }
        let mut stages = vec![StageKind::TranslateX, StageKind::TranslateY, StageKind::RotateZ];
        stages.extend(joint_axes.iter().map(|a| StageKind::Revolute(*a)));
        if link_geometry.len() != stages.len() {
            return Err(Error::LengthMismatch {
                what: "link_geometry",
                got: link_geometry.len(),
                want: stages.len(),
            });
        }
        Ok(ChainSpec {
            stages,
            ee_offset,
            link_geometry,
        })
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn num_arm_joints(&self) -> usize {
        self.stages.len() - 3
    }

    pub fn stage_kind(&self, k: usize) -> &StageKind<S> {
        &self.stages[k]
    }

    /// Stages 0 and 1 are virtual intermediate base poses with no physical
    /// link of their own; stage 2 carries the base body.
    pub fn is_virtual(&self, k: usize) -> bool {
        k < 2
    }

    pub fn ee_offset(&self) -> &Transform<S> {
        &self.ee_offset
    }

    pub fn link_geometry(&self, k: usize) -> Option<usize> {
        self.link_geometry.get(k).copied().flatten()
    }

    fn check_stage(&self, k: usize) -> Result<()> {
        if k >= self.stages.len() {
            return Err(Error::StageOutOfRange {
                index: k,
                num_stages: self.stages.len(),
            });
        }
        Ok(())
    }

    fn check_controls(&self, u: &[S]) -> Result<()> {
        if u.len() != self.stages.len() {
            return Err(Error::LengthMismatch {
                what: "controls",
                got: u.len(),
                want: self.stages.len(),
            });
        }
        Ok(())
    }
}

/// One measurement of the whole chain: every stage pose (the three virtual
/// stages all sit at the base pose), the arm joint angles, and the cached
/// relative transforms between consecutive stages.
#[derive(Debug, Clone)]
pub struct ChainObservation<S> {
    base_pose: LinkPose<S>,
    link_poses: Vec<LinkPose<S>>,
    joint_angles: Vec<S>,
    rel_transforms: Vec<Transform<S>>,
    pub timestamp: f64,
}

impl<S: Real> ChainObservation<S> {
    /// Builds from the base pose and the arm link poses (stage order). The
    /// relative transforms are computed here, so they are consistent with
    /// the poses by construction.
    pub fn new(
        spec: &ChainSpec<S>,
        base_pose: LinkPose<S>,
        arm_poses: &[LinkPose<S>],
        joint_angles: &[S],
        timestamp: f64,
    ) -> Result<Self> {
        let n_arm = spec.num_arm_joints();
        if arm_poses.len() != n_arm {
            return Err(Error::LengthMismatch {
                what: "arm_poses",
                got: arm_poses.len(),
                want: n_arm,
            });
        }
        if joint_angles.len() != n_arm {
            return Err(Error::LengthMismatch {
                what: "joint_angles",
                got: joint_angles.len(),
                want: n_arm,
            });
        }
        let mut link_poses = vec![base_pose; 3];
        link_poses.extend_from_slice(arm_poses);
        let rel_transforms = (0..link_poses.len() - 1)
            .map(|k| crate::geometry::relative_transform(&link_poses[k], &link_poses[k + 1]))
            .collect();
        Ok(ChainObservation {
            base_pose,
            link_poses,
            joint_angles: joint_angles.to_vec(),
            rel_transforms,
            timestamp,
        })
    }

    pub fn base_pose(&self) -> &LinkPose<S> {
        &self.base_pose
    }

    pub fn link_poses(&self) -> &[LinkPose<S>] {
        &self.link_poses
    }

    pub fn joint_angles(&self) -> &[S] {
        &self.joint_angles
    }

    pub fn rel_transform(&self, k: usize) -> &Transform<S> {
        &self.rel_transforms[k]
    }

    /// Checks the cached relative transforms against the stored poses.
    pub fn validate(&self) -> Result<()> {
        for k in 0..self.rel_transforms.len() {
            let rebuilt = self.link_poses[k]
                .to_transform()
                .compose(&self.rel_transforms[k]);
            let target = self.link_poses[k + 1].to_transform();
            let dev = (rebuilt.trans() - target.trans()).norm()
                + (rebuilt.rot() - target.rot()).norm();
            if dev > cast(1e-9) {
                return Err(Error::InvalidInput(format!(
                    "cached relative transform {k} deviates from poses by {dev:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Propagated next-step poses: one per stage, end-effector pose appended
/// (`poses.len() == num_stages + 1`).
#[derive(Debug, Clone)]
pub struct ChainTrajectory<S> {
    pub poses: Vec<LinkPose<S>>,
}

impl<S: Real> ChainTrajectory<S> {
    pub fn stage_pose(&self, k: usize) -> &LinkPose<S> {
        &self.poses[k]
    }

    pub fn ee_pose(&self) -> &LinkPose<S> {
        self.poses.last().expect("trajectory is never empty")
    }
}

/// The post-transform `C(u)` a stage applies on the right of its input pose.
fn stage_post_transform<S: Real>(
    kind: &StageKind<S>,
    rel: Option<&Transform<S>>,
    u: S,
    dt: S,
) -> Transform<S> {
    match kind {
        StageKind::TranslateX => Transform::from_translation(Vector3::new(u * dt, S::zero(), S::zero())),
        StageKind::TranslateY => Transform::from_translation(Vector3::new(S::zero(), u * dt, S::zero())),
        StageKind::RotateZ => Transform::from_rotation(&Vector3::z_axis(), u * dt),
        StageKind::Revolute(axis) => rel
            .expect("revolute stages carry a relative transform")
            .compose(&Transform::from_rotation(axis, u * dt)),
    }
}

fn stage_rel<'a, S: Real>(
    obs: &'a ChainObservation<S>,
    spec: &ChainSpec<S>,
    k: usize,
) -> Option<&'a Transform<S>> {
    match spec.stage_kind(k) {
        StageKind::Revolute(_) => Some(obs.rel_transform(k - 1)),
        _ => None,
    }
}

/// Next pose of stage `k` from its predecessor pose `x` (stage `k-1`; the
/// observed base pose when `k = 0`) under control `u` held for `dt`.
pub fn stage_dynamics<S: Real>(
    x: &LinkPose<S>,
    u: S,
    k: usize,
    obs: &ChainObservation<S>,
    dt: S,
    spec: &ChainSpec<S>,
) -> Result<LinkPose<S>> {
    spec.check_stage(k)?;
    if dt <= S::zero() {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    let post = stage_post_transform(spec.stage_kind(k), stage_rel(obs, spec, k), u, dt);
    Ok(x.to_transform().compose(&post).to_pose())
}

/// Folds [`stage_dynamics`] over all stages and appends the end-effector
/// pose. Zero controls reproduce the observed poses.
pub fn propagate_chain<S: Real>(
    obs: &ChainObservation<S>,
    u: &[S],
    dt: S,
    spec: &ChainSpec<S>,
) -> Result<ChainTrajectory<S>> {
    spec.check_controls(u)?;
    if dt <= S::zero() {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    let n = spec.num_stages();
    let mut poses = Vec::with_capacity(n + 1);
    let mut prev = *obs.base_pose();
    for k in 0..n {
        let post = stage_post_transform(spec.stage_kind(k), stage_rel(obs, spec, k), u[k], dt);
        prev = prev.to_transform().compose(&post).to_pose();
        poses.push(prev);
    }
    poses.push(ee_pose(&prev, spec));
    Ok(ChainTrajectory { poses })
}

/// End-effector pose hanging off the last stage.
pub fn ee_pose<S: Real>(last: &LinkPose<S>, spec: &ChainSpec<S>) -> LinkPose<S> {
    last.to_transform().compose(spec.ee_offset()).to_pose()
}

/// Tangent map of a fixed right-composition `x -> M(T(x) * C)`: the world
/// rotation perturbation passes through unchanged and sweeps the lever arm
/// `R_x * t_C` into translation.
fn right_compose_jacobian<S: Real>(x: &LinkPose<S>, post_trans: &Vector3<S>) -> Matrix6<S> {
    let lever = x.r.to_rotation_matrix() * post_trans;
    let mut a = Matrix6::identity();
    a.view_mut((0, 3), (3, 3)).copy_from(&(-skew(&lever)));
    a
}

/// First-order model of [`stage_dynamics`] at `(x, u)`: 6x6 pose-tangent
/// Jacobian `A` and 6-vector control Jacobian `B`, both in world-frame left
/// tangent coordinates.
pub fn dynamics_jacobians<S: Real>(
    x: &LinkPose<S>,
    u: S,
    k: usize,
    obs: &ChainObservation<S>,
    dt: S,
    spec: &ChainSpec<S>,
) -> Result<(Matrix6<S>, Vector6<S>)> {
    spec.check_stage(k)?;
    let kind = spec.stage_kind(k);
    let post = stage_post_transform(kind, stage_rel(obs, spec, k), u, dt);
    let a = right_compose_jacobian(x, post.trans());
    let mut b = Vector6::zeros();
    match kind {
        StageKind::TranslateX | StageKind::TranslateY => {
            let axis = if matches!(kind, StageKind::TranslateX) {
                Vector3::x()
            } else {
                Vector3::y()
            };
            let dir = x.r.to_rotation_matrix() * axis * dt;
            b.view_mut((0, 0), (3, 1)).copy_from(&dir);
        }
        StageKind::RotateZ => {
            let r_out = x.r.to_rotation_matrix() * post.rot();
            let dir: Vector3<S> = r_out * Vector3::z() * dt;
            b.view_mut((3, 0), (3, 1)).copy_from(&dir);
        }
        StageKind::Revolute(axis) => {
            let r_out = x.r.to_rotation_matrix() * post.rot();
            let dir: Vector3<S> = r_out * axis.into_inner() * dt;
            b.view_mut((3, 0), (3, 1)).copy_from(&dir);
        }
    }
    Ok((a, b))
}

/// Tangent map of the end-effector attachment `x -> M(T(x) * ee_offset)`.
pub fn ee_jacobian<S: Real>(last: &LinkPose<S>, spec: &ChainSpec<S>) -> Matrix6<S> {
    right_compose_jacobian(last, spec.ee_offset().trans())
}

/// Central finite-difference check helper used by tests and the acceptance
/// suite: tangent-space Jacobians of `stage_dynamics` at `(x, u)`.
pub fn dynamics_jacobians_fd<S: Real>(
    x: &LinkPose<S>,
    u: S,
    k: usize,
    obs: &ChainObservation<S>,
    dt: S,
    spec: &ChainSpec<S>,
    h: S,
) -> Result<(Matrix6<S>, Vector6<S>)> {
    let mut a = Matrix6::zeros();
    for i in 0..6 {
        let mut step = Vector6::zeros();
        step[i] = h;
        let xp = crate::geometry::apply_tangent(x, &PoseTangent::from_vector(&step));
        let xm = crate::geometry::apply_tangent(x, &PoseTangent::from_vector(&(-step)));
        let fp = stage_dynamics(&xp, u, k, obs, dt, spec)?;
        let fm = stage_dynamics(&xm, u, k, obs, dt, spec)?;
        let col = pose_difference(&fp, &fm).to_vector() / (h + h);
        a.set_column(i, &col);
    }
    let fp = stage_dynamics(x, u + h, k, obs, dt, spec)?;
    let fm = stage_dynamics(x, u - h, k, obs, dt, spec)?;
    let b = pose_difference(&fp, &fm).to_vector() / (h + h);
    Ok((a, b))
}
