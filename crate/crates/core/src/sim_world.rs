//! Obstacle worlds, perception, ground-truth collision, and the episode
//! harness (all `f64`).
//!
//! Worlds are collections of axis-aligned boxes inside a fixed arena.
//! Perception samples box faces on a regular grid and returns the points
//! inside the sensing radius, which is what a depth sensor pipeline would
//! hand the controller. Ground truth instead works on exact geometry: two
//! convex bodies collide when the halfspace system of both has an interior
//! point, decided by the Chebyshev-center subproblem.

use crate::chain::{ChainObservation, ChainSpec};
use crate::containment::LinkGeometry;
use crate::controller::{Controller, ControllerConfig, PathReference};
use crate::costs_constraints::{CostWeights, Limits};
use crate::free_region::{FreeRegion, ObstacleCloud};
use crate::geometry::{LinkPose, Transform};
use crate::polytope::{chebyshev_center, hull_planes, Halfspace};
use crate::{Error, Result};
use nalgebra::{Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Face-sampling pitch of the simulated depth sensor [m].
pub const PERCEIVE_GRID: f64 = 0.05;
/// Interior margin above which two bodies count as colliding [m].
pub const COLLISION_TOL: f64 = 1e-9;
/// Base position tolerance for goal arrival [m].
pub const GOAL_BASE_TOL: f64 = 0.1;
/// End-effector position tolerance for goal arrival [m].
pub const GOAL_EE_POS_TOL: f64 = 0.02;
/// End-effector orientation tolerance for goal arrival [rad] (5 degrees).
pub const GOAL_EE_ANG_TOL: f64 = 5.0 * std::f64::consts::PI / 180.0;

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn from_center_half(center: Vector3<f64>, half: Vector3<f64>) -> Self {
        Aabb {
            min: center - half,
            max: center + half,
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && self.max[i] >= other.min[i])
    }

    /// Squared distance from a point to the box (zero inside).
    pub fn distance_squared(&self, p: &Vector3<f64>) -> f64 {
        let mut d2 = 0.0;
        for i in 0..3 {
            let c = p[i].clamp(self.min[i], self.max[i]);
            d2 += (p[i] - c) * (p[i] - c);
        }
        d2
    }

    /// The six outward halfspaces of the box.
    pub fn halfspaces(&self) -> Vec<Halfspace<f64>> {
        let mut out = Vec::with_capacity(6);
        for i in 0..3 {
            let mut n = Vector3::zeros();
            n[i] = 1.0;
            out.push(Halfspace {
                normal: n,
                offset: self.max[i],
            });
            out.push(Halfspace {
                normal: -n,
                offset: -self.min[i],
            });
        }
        out
    }
}

/// A static obstacle world inside a rectangular arena.
#[derive(Debug, Clone)]
pub struct World {
    pub obstacles: Vec<Aabb>,
    pub arena: Aabb,
}

/// Default arena: 20 m x 10 m footprint, 3 m tall, centered on the origin.
pub fn default_arena() -> Aabb {
    Aabb {
        min: Vector3::new(-10.0, -5.0, 0.0),
        max: Vector3::new(10.0, 5.0, 3.0),
    }
}

/// Edge length of one forest obstacle cube [m].
pub const FOREST_CUBE: f64 = 0.2;

impl World {
    pub fn custom(obstacles: Vec<Aabb>, arena: Aabb) -> World {
        World { obstacles, arena }
    }

    /// [`World::build_forest_in`] on the default arena.
    pub fn build_forest(
        seed: u64,
        density: f64,
        keep_clear: &[(Vector3<f64>, f64)],
    ) -> Result<World> {
        World::build_forest_in(default_arena(), seed, density, keep_clear)
    }

    /// Random forest of `ceil(density * floor area)` ground cubes (edge
    /// 0.2 m) scattered uniformly over the arena floor. Cube centers are
    /// rejected inside any keep-clear disc `(xy center, radius)`;
    /// placement gives up after 10^4 total attempts.
    pub fn build_forest_in(
        arena: Aabb,
        seed: u64,
        density: f64,
        keep_clear: &[(Vector3<f64>, f64)],
    ) -> Result<World> {
        if !(density > 0.0) || !density.is_finite() {
            return Err(Error::WorldGeneration(format!(
                "density must be positive, got {density}"
            )));
        }
        let area = (arena.max.x - arena.min.x) * (arena.max.y - arena.min.y);
        let count = (density * area).ceil() as usize;
        let half = FOREST_CUBE / 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut obstacles = Vec::with_capacity(count);
        let mut attempts = 0usize;
        while obstacles.len() < count {
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::WorldGeneration(format!(
                    "placed only {} of {count} obstacles in 10000 attempts",
                    obstacles.len()
                )));
            }
            let x = rng.gen_range(arena.min.x + half..arena.max.x - half);
            let y = rng.gen_range(arena.min.y + half..arena.max.y - half);
            let blocked = keep_clear.iter().any(|(c, r)| {
                let dx = x - c.x;
                let dy = y - c.y;
                dx * dx + dy * dy < r * r
            });
            if blocked {
                continue;
            }
            obstacles.push(Aabb::from_center_half(
                Vector3::new(x, y, half),
                Vector3::repeat(half),
            ));
        }
        Ok(World { obstacles, arena })
    }

    /// Doorway with a crossbar: two posts at `y = +-1.5` and a horizontal
    /// bar between them at height `bar_height`, all in the `x = 0` plane.
    pub fn build_shelf_bar(bar_height: f64) -> World {
        let arena = default_arena();
        let post_half = Vector3::new(0.05, 0.05, bar_height / 2.0);
        let obstacles = vec![
            Aabb::from_center_half(Vector3::new(0.0, -1.5, bar_height / 2.0), post_half),
            Aabb::from_center_half(Vector3::new(0.0, 1.5, bar_height / 2.0), post_half),
            Aabb::from_center_half(
                Vector3::new(0.0, 0.0, bar_height),
                Vector3::new(0.05, 1.5, 0.05),
            ),
        ];
        World { obstacles, arena }
    }

    /// Simulated depth sensing: every obstacle face is sampled on a
    /// [`PERCEIVE_GRID`] lattice (edges included, so a 0.2 m cube yields
    /// 150 points), keeping samples within `radius` of `center`.
    pub fn perceive(&self, center: &Vector3<f64>, radius: f64) -> ObstacleCloud<f64> {
        let mut points = Vec::new();
        let r2 = radius * radius;
        for ob in &self.obstacles {
            if ob.distance_squared(center) > r2 {
                continue;
            }
            sample_box_faces(ob, &mut points);
        }
        points.retain(|p| (p - center).norm_squared() <= r2);
        ObstacleCloud::new(points)
    }

    /// Exact collision test of a convex hull (world-frame vertices)
    /// against the obstacles: true when any open interior overlaps.
    pub fn collides_hull(&self, vertices: &[Vector3<f64>]) -> Result<bool> {
        let mut hmin = Vector3::repeat(f64::INFINITY);
        let mut hmax = Vector3::repeat(f64::NEG_INFINITY);
        for v in vertices {
            for i in 0..3 {
                hmin[i] = hmin[i].min(v[i]);
                hmax[i] = hmax[i].max(v[i]);
            }
        }
        let hull_box = Aabb {
            min: hmin,
            max: hmax,
        };
        let mut planes: Option<Vec<Halfspace<f64>>> = None;
        for ob in &self.obstacles {
            if !ob.overlaps(&hull_box) {
                continue;
            }
            if planes.is_none() {
                planes = Some(hull_planes(vertices)?);
            }
            let mut system = planes.clone().unwrap();
            system.extend(ob.halfspaces());
            if let Some((_, margin)) = chebyshev_center(&system) {
                if margin > COLLISION_TOL {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }
}

fn sample_box_faces(ob: &Aabb, out: &mut Vec<Vector3<f64>>) {
    let steps = |lo: f64, hi: f64| -> Vec<f64> {
        let n = ((hi - lo) / PERCEIVE_GRID).round().max(1.0) as usize;
        (0..=n)
            .map(|i| lo + (hi - lo) * (i as f64) / (n as f64))
            .collect()
    };
    let xs = steps(ob.min.x, ob.max.x);
    let ys = steps(ob.min.y, ob.max.y);
    let zs = steps(ob.min.z, ob.max.z);
    for &x in &[ob.min.x, ob.max.x] {
        for &y in &ys {
            for &z in &zs {
                out.push(Vector3::new(x, y, z));
            }
        }
    }
    for &y in &[ob.min.y, ob.max.y] {
        for &x in &xs {
            for &z in &zs {
                out.push(Vector3::new(x, y, z));
            }
        }
    }
    for &z in &[ob.min.z, ob.max.z] {
        for &x in &xs {
            for &y in &ys {
                out.push(Vector3::new(x, y, z));
            }
        }
    }
}

/// The built-in mobile manipulator: omnidirectional base box and a 6-DOF
/// arm mounted on top, link frames at the proximal joints, links extending
/// along their local `+z`.
#[derive(Debug, Clone)]
pub struct RobotModel {
    pub spec: ChainSpec<f64>,
    /// Hulls indexed by `spec.link_geometry`: base box first, then one
    /// per arm link.
    pub geometries: Vec<LinkGeometry<f64>>,
    pub limits: Limits<f64>,
    pub link_lengths: Vec<f64>,
    /// Arm mount in the base frame.
    pub mount: Transform<f64>,
    /// A tucked configuration clear of the base box.
    pub home_angles: Vec<f64>,
}

impl RobotModel {
    /// 6-DOF arm with axes z-y-y-x-y-x and lengths
    /// 0.3, 0.3, 0.25, 0.2, 0.15, 0.1 m; base box 0.5 x 0.4 x 0.3 m whose
    /// frame sits at the box center (0.15 m above ground when driving).
    /// Hull cross-sections are 0.08 m wide and inset 0.02 m from each
    /// link end.
    pub fn builtin() -> RobotModel {
        let ez = Unit::new_normalize(Vector3::new(0.0, 0.0, 1.0));
        let ey = Unit::new_normalize(Vector3::new(0.0, 1.0, 0.0));
        let ex = Unit::new_normalize(Vector3::new(1.0, 0.0, 0.0));
        let axes = [ez, ey, ey, ex, ey, ex];
        let link_lengths = vec![0.3, 0.3, 0.25, 0.2, 0.15, 0.1];

        let mut geometries = vec![LinkGeometry::cuboid(
            &Vector3::new(-0.25, -0.2, -0.15),
            &Vector3::new(0.25, 0.2, 0.15),
        )
        .expect("base box")];
        for len in &link_lengths {
            geometries.push(
                LinkGeometry::cuboid(
                    &Vector3::new(-0.04, -0.04, 0.02),
                    &Vector3::new(0.04, 0.04, len - 0.02),
                )
                .expect("link hull"),
            );
        }

        let mut link_geometry = vec![None, None, Some(0)];
        for j in 0..axes.len() {
            link_geometry.push(Some(j + 1));
        }
        let spec = ChainSpec::new(
            &axes,
            Transform::from_translation(Vector3::new(0.0, 0.0, 0.1)),
            link_geometry,
        )
        .expect("builtin chain");

        let n = spec.num_stages();
        let limits = Limits {
            control_lower: {
                let mut v = vec![-1.0, -1.0];
                v.extend(std::iter::repeat(-1.5).take(n - 2));
                v
            },
            control_upper: {
                let mut v = vec![1.0, 1.0];
                v.extend(std::iter::repeat(1.5).take(n - 2));
                v
            },
            angle_lower: vec![-2.8; axes.len()],
            angle_upper: vec![2.8; axes.len()],
        };

        RobotModel {
            spec,
            geometries,
            limits,
            link_lengths,
            mount: Transform::from_translation(Vector3::new(0.0, 0.0, 0.15)),
            home_angles: vec![0.0, 0.4, -0.9, 0.0, 0.6, 0.0],
        }
    }

    /// Forward kinematics into a chain observation at time `t`.
    pub fn observation(
        &self,
        base_pose: &LinkPose<f64>,
        angles: &[f64],
        t: f64,
    ) -> Result<ChainObservation<f64>> {
        let joints = self.spec.num_arm_joints();
        if angles.len() != joints {
            return Err(Error::LengthMismatch {
                what: "joint angles",
                got: angles.len(),
                want: joints,
            });
        }
        let mut arm_poses = Vec::with_capacity(joints);
        let mut t_link = base_pose.to_transform().compose(&self.mount);
        for j in 0..joints {
            if j > 0 {
                t_link = t_link.compose(&Transform::from_translation(Vector3::new(
                    0.0,
                    0.0,
                    self.link_lengths[j - 1],
                )));
            }
            let axis = match self.spec.stage_kind(3 + j) {
                crate::chain::StageKind::Revolute(a) => *a,
                _ => unreachable!("arm stages are revolute"),
            };
            t_link = t_link.compose(&Transform::from_rotation(&axis, angles[j]));
            arm_poses.push(t_link.to_pose());
        }
        ChainObservation::new(&self.spec, *base_pose, &arm_poses, angles, t)
    }

    /// World-frame hull vertices for every stage that carries geometry.
    pub fn hull_world_vertices(&self, obs: &ChainObservation<f64>) -> Vec<(usize, Vec<Vector3<f64>>)> {
        let mut out = Vec::new();
        for k in 0..self.spec.num_stages() {
            let Some(gi) = self.spec.link_geometry(k) else {
                continue;
            };
            let pose = &obs.link_poses()[k];
            let verts = self.geometries[gi]
                .vertices()
                .iter()
                .map(|v| pose.r.rotate_vector(v) + pose.p)
                .collect();
            out.push((k, verts));
        }
        out
    }

    /// True when any link hull (or the base box) intersects an obstacle.
    pub fn in_collision(&self, world: &World, obs: &ChainObservation<f64>) -> Result<bool> {
        for (_, verts) in self.hull_world_vertices(obs) {
            if world.collides_hull(&verts)? {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

/// One episode definition.
#[derive(Debug, Clone)]
pub struct Task {
    pub start_base: LinkPose<f64>,
    pub start_angles: Vec<f64>,
    pub base_path: Vec<LinkPose<f64>>,
    pub ee_path: Vec<LinkPose<f64>>,
    /// Base arrival: position within [`GOAL_BASE_TOL`].
    pub goal_base: Option<Vector3<f64>>,
    /// End-effector arrival: position within [`GOAL_EE_POS_TOL`] and
    /// orientation within [`GOAL_EE_ANG_TOL`].
    pub goal_ee: Option<LinkPose<f64>>,
    pub max_steps: usize,
    /// Sensing radius around the base [m].
    pub sense_radius: f64,
}

impl Task {
    /// Straight base drive through the forest arena from `start` to
    /// `goal` (both at driving height), arm held at the robot's home
    /// configuration.
    pub fn base_drive(start: Vector3<f64>, goal: Vector3<f64>, max_steps: usize) -> Task {
        let start_pose = LinkPose::from_translation(start);
        Task {
            start_base: start_pose,
            start_angles: Vec::new(),
            base_path: vec![start_pose, LinkPose::from_translation(goal)],
            ee_path: Vec::new(),
            goal_base: Some(goal),
            goal_ee: None,
            max_steps,
            sense_radius: 3.0,
        }
    }
}

/// One simulation tick, in a form that serializes directly to JSON lines.
/// Poses are `[px, py, pz, qx, qy, qz, qw]`; index 2 is the base pose, the
/// last entry the end effector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TickRecord {
    pub step: usize,
    pub time: f64,
    pub controls: Vec<f64>,
    pub poses: Vec<[f64; 7]>,
    pub joint_angles: Vec<f64>,
    /// Exact containment measure per stage (`null` without a region).
    pub alphas: Vec<Option<f64>>,
    pub solve_status: String,
    /// Wall-clock time of this tick's control solve [ms].
    pub solve_ms: f64,
    pub solver_inner_iterations: usize,
    pub max_violation: f64,
    pub cost: f64,
    pub collision: bool,
    /// Stages that fell back to the previous tick's region.
    pub region_fallbacks: Vec<usize>,
    /// Stages whose containment constraint was skipped entirely.
    pub containment_skipped: Vec<usize>,
    pub goal_reached: bool,
}

/// Aggregates of one episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Goal reached with zero collisions.
    pub success: bool,
    pub goal_reached: bool,
    pub collision_count: usize,
    pub steps: usize,
    /// Total base travel [m].
    pub base_path_length: f64,
    pub mean_solve_ms: f64,
    pub max_solve_ms: f64,
    /// Fraction of ticks whose solve converged.
    pub converged_fraction: f64,
    pub final_base: [f64; 7],
    pub final_ee: [f64; 7],
}

/// Full episode output.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub metrics: EpisodeMetrics,
    pub ticks: Vec<TickRecord>,
    /// Regions in use at the final tick, per stage.
    pub final_regions: Vec<Option<FreeRegion<f64>>>,
}

pub fn pose_to_array(pose: &LinkPose<f64>) -> [f64; 7] {
    let c = pose.r.coeffs();
    [pose.p.x, pose.p.y, pose.p.z, c[0], c[1], c[2], c[3]]
}

fn goal_reached(task: &Task, obs: &ChainObservation<f64>, spec: &ChainSpec<f64>) -> bool {
    if let Some(g) = task.goal_base {
        if (obs.base_pose().p - g).norm() <= GOAL_BASE_TOL {
            return true;
        }
    }
    if let Some(g) = &task.goal_ee {
        let last = &obs.link_poses()[spec.num_stages() - 1];
        let ee = crate::chain::ee_pose(last, spec);
        let ang = g.r.conjugate().mul(&ee.r).to_rotvec().norm();
        if (ee.p - g.p).norm() <= GOAL_EE_POS_TOL && ang <= GOAL_EE_ANG_TOL {
            return true;
        }
    }
    false
}

/// Runs a closed-loop episode: perceive, solve one control step, commit
/// the clamped controls, count collisions (the run continues after a hit),
/// stop on goal arrival or after `max_steps`.
pub fn run_episode(
    world: &World,
    robot: &RobotModel,
    task: &Task,
    controller_config: ControllerConfig,
    weights: Option<CostWeights<f64>>,
) -> Result<EpisodeResult> {
    let n = robot.spec.num_stages();
    let joints = robot.spec.num_arm_joints();
    let start_angles = if task.start_angles.is_empty() {
        robot.home_angles.clone()
    } else {
        task.start_angles.clone()
    };
    if start_angles.len() != joints {
        return Err(Error::LengthMismatch {
            what: "start angles",
            got: start_angles.len(),
            want: joints,
        });
    }
    let weights = weights.unwrap_or_else(|| CostWeights::defaults(n));
    let dt = controller_config.dt;
    let mut controller = Controller::new(
        robot.spec.clone(),
        robot.geometries.clone(),
        robot.limits.clone(),
        weights,
        controller_config,
    )?;
    let paths = PathReference {
        base: task.base_path.clone(),
        ee: task.ee_path.clone(),
    };

    let mut base_pose = task.start_base;
    let mut angles = start_angles;
    let mut obs = robot.observation(&base_pose, &angles, 0.0)?;

    let mut ticks: Vec<TickRecord> = Vec::new();
    let mut final_regions: Vec<Option<FreeRegion<f64>>> = vec![None; n];
    let mut collision_count = 0usize;
    let mut reached = false;
    let mut path_length = 0.0;
    let mut solve_ms: Vec<f64> = Vec::new();
    let mut converged = 0usize;

    for step in 1..=task.max_steps {
        let cloud = world.perceive(&obs.base_pose().p, task.sense_radius);
        let t0 = std::time::Instant::now();
        let out = controller.control_step(&obs, &cloud, &paths)?;
        solve_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        if out.report.status == crate::al_ddp::SolveStatus::Converged {
            converged += 1;
        }

        // Commit: the base adopts the pose after the three virtual stages,
        // the joints integrate their committed rates, and the observation
        // is rebuilt by forward kinematics.
        let new_base = *out.predicted.stage_pose(2);
        path_length += (new_base.p - base_pose.p).norm();
        base_pose = new_base;
        for j in 0..joints {
            angles[j] += out.controls[3 + j] * dt;
        }
        let t = step as f64 * dt;
        obs = robot.observation(&base_pose, &angles, t)?;

        let collision = robot.in_collision(world, &obs)?;
        if collision {
            collision_count += 1;
        }
        reached = goal_reached(task, &obs, &robot.spec);

        final_regions = out.regions.clone();
        ticks.push(TickRecord {
            step,
            time: t,
            controls: out.controls.clone(),
            poses: obs
                .link_poses()
                .iter()
                .map(pose_to_array)
                .chain(std::iter::once(pose_to_array(&crate::chain::ee_pose(
                    &obs.link_poses()[n - 1],
                    &robot.spec,
                ))))
                .collect(),
            joint_angles: angles.clone(),
            alphas: out.stage_diagnostics.iter().map(|d| d.alpha).collect(),
            solve_status: out.report.status.as_str().to_string(),
            solve_ms: *solve_ms.last().expect("pushed this step"),
            solver_inner_iterations: out.report.inner_iterations,
            max_violation: out.report.max_violation,
            cost: out.report.cost,
            collision,
            region_fallbacks: out
                .stage_diagnostics
                .iter()
                .filter(|d| d.region_fallback)
                .map(|d| d.stage)
                .collect(),
            containment_skipped: out
                .stage_diagnostics
                .iter()
                .filter(|d| d.containment_skipped)
                .map(|d| d.stage)
                .collect(),
            goal_reached: reached,
        });
        if reached {
            break;
        }
    }

    let steps = ticks.len();
    let mean_solve_ms = if solve_ms.is_empty() {
        0.0
    } else {
        solve_ms.iter().sum::<f64>() / solve_ms.len() as f64
    };
    let max_solve_ms = solve_ms.iter().cloned().fold(0.0, f64::max);
    let final_ee = crate::chain::ee_pose(&obs.link_poses()[n - 1], &robot.spec);
    let metrics = EpisodeMetrics {
        success: reached && collision_count == 0,
        goal_reached: reached,
        collision_count,
        steps,
        base_path_length: path_length,
        mean_solve_ms,
        max_solve_ms,
        converged_fraction: if steps == 0 {
            0.0
        } else {
            converged as f64 / steps as f64
        },
        final_base: pose_to_array(&base_pose),
        final_ee: pose_to_array(&final_ee),
    };
    Ok(EpisodeResult {
        metrics,
        ticks,
        final_regions,
    })
}

/// Standard forest episode: keep-clear discs of radius 1 m at start and
/// goal, straight two-waypoint base path. The step budget covers the
/// straight-line distance roughly three times over, which detoured runs
/// regularly need; a caged base stops moving long before exhausting it.
pub fn forest_task(start: Vector3<f64>, goal: Vector3<f64>) -> Task {
    Task::base_drive(start, goal, 900)
}

/// Convenience: the keep-clear discs for [`forest_task`].
pub fn forest_keep_clear(start: &Vector3<f64>, goal: &Vector3<f64>) -> Vec<(Vector3<f64>, f64)> {
    vec![(*start, 1.0), (*goal, 1.0)]
}
