//! Scenario configuration: TOML schema, strict validation, and conversion
//! into the library's world/robot/task/controller types.
//!
//! Unknown keys are rejected everywhere so a typo cannot silently fall
//! back to a default. Cross-field requirements (e.g. `world.density` for
//! forest worlds) are checked by [`ScenarioConfig::validate`] with the
//! offending key named in the error.

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{Unit, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use spatialchain::chain::ChainSpec;
use spatialchain::containment::LinkGeometry;
use spatialchain::controller::ControllerConfig;
use spatialchain::costs_constraints::{CostWeights, Limits};
use spatialchain::geometry::{LinkPose, Quat, Transform};
use spatialchain::sim_world::{default_arena, Aabb, RobotModel, Task, World};
use std::path::Path;

/// One whole scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub world: WorldConfig,
    #[serde(default)]
    pub robot: RobotConfig,
    pub task: TaskConfig,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub weights: Option<WeightsSection>,
    #[serde(default)]
    pub limits: Option<LimitsSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldKind {
    Forest,
    ShelfBar,
    Custom,
}

/// World section. The schema is flat (every field optional except `kind`)
/// so strict unknown-key rejection still works; which fields are required
/// depends on `kind` and is validated after parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub kind: WorldKind,
    /// Forest generation seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Forest obstacle density [cubes/m^2].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    /// Arena extents `[length, width, height]`, centered on the origin in
    /// x/y and grounded at z = 0. Defaults to 20 x 10 x 3 m.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extents: Option<[f64; 3]>,
    /// Keep-clear disc radius around the task start and goal [m]
    /// (forest only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_clear_radius: Option<f64>,
    /// Crossbar height for shelf-bar worlds [m].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bar_height: Option<f64>,
    /// Explicit obstacle boxes for custom worlds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacles: Option<Vec<BoxSpec>>,
}

/// Axis-aligned box given by its corner points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

/// Robot section: the builtin model or a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<bool>,
    /// Path to a robot model TOML, resolved relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

impl Default for RobotConfig {
    fn default() -> Self {
        RobotConfig {
            builtin: Some(true),
            model: None,
        }
    }
}

/// Stand-alone robot description mirroring the builtin model's shape:
/// a mobile base box and a serial arm of cuboid links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotModelFile {
    /// One unit axis per arm joint, in the link's parent frame.
    pub axes: Vec<[f64; 3]>,
    /// Link lengths [m], one per joint.
    pub lengths: Vec<f64>,
    /// End-effector offset from the last link frame [m].
    pub ee_offset: [f64; 3],
    /// Base collision box half extents [m].
    pub base_half_extents: [f64; 3],
    /// Arm link hull half width [m].
    #[serde(default = "default_link_halfwidth")]
    pub link_halfwidth: f64,
    /// Arm link hull inset from each link end [m].
    #[serde(default = "default_link_inset")]
    pub link_inset: f64,
    /// Arm mount translation in the base frame [m].
    pub mount: [f64; 3],
    pub home_angles: Vec<f64>,
    pub control_lower: Vec<f64>,
    pub control_upper: Vec<f64>,
    pub angle_lower: Vec<f64>,
    pub angle_upper: Vec<f64>,
}

fn default_link_halfwidth() -> f64 {
    0.04
}

fn default_link_inset() -> f64 {
    0.02
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalKind {
    /// The base must arrive at the last base waypoint.
    BaseEnd,
    /// The end effector must arrive at the last end-effector waypoint.
    EeEnd,
}

/// Task section: start state, reference waypoints, goal kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    /// Base start position [m] (z is the driving height).
    pub start: [f64; 3],
    /// Base start yaw [rad].
    #[serde(default)]
    pub start_yaw: f64,
    /// Start joint angles [rad]; empty uses the robot's home configuration.
    #[serde(default)]
    pub start_angles: Vec<f64>,
    /// Base reference path waypoints [m].
    pub waypoints: Vec<[f64; 3]>,
    /// End-effector reference poses `[x, y, z, qx, qy, qz, qw]`.
    #[serde(default)]
    pub ee_waypoints: Vec<[f64; 7]>,
    pub goal: GoalKind,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// Sensing radius around the base [m].
    #[serde(default = "default_sense_radius")]
    pub sense_radius: f64,
}

fn default_max_steps() -> usize {
    900
}

fn default_sense_radius() -> f64 {
    3.0
}

/// Controller section; every field defaults to the library value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub dt: f64,
    pub lookahead: f64,
    pub base_seed_dims: [f64; 3],
    pub arm_seed_dims: [f64; 3],
    pub margin: f64,
    pub violation_gate: f64,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let c = ControllerConfig::default();
        ControllerSection {
            dt: c.dt,
            lookahead: c.lookahead,
            base_seed_dims: [c.base_seed_dims.x, c.base_seed_dims.y, c.base_seed_dims.z],
            arm_seed_dims: [c.arm_seed_dims.x, c.arm_seed_dims.y, c.arm_seed_dims.z],
            margin: c.margin,
            violation_gate: c.violation_gate,
        }
    }
}

/// Solver section; defaults are the controller-tuned solver settings.
/// `smooth_alpha_tau = 0` selects the exact (nonsmooth) containment
/// maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub tol_con: f64,
    pub tol_grad: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    pub mu0: f64,
    pub beta: f64,
    pub reg0: f64,
    pub smooth_alpha_tau: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = ControllerConfig::default().solver;
        SolverSection {
            tol_con: s.tol_con,
            tol_grad: s.tol_grad,
            max_inner: s.max_inner,
            max_outer: s.max_outer,
            mu0: s.mu0,
            beta: s.beta,
            reg0: s.reg0,
            smooth_alpha_tau: s.smooth_alpha_tau.unwrap_or(0.0),
        }
    }
}

/// Cost weight overrides; absent fields keep the library defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    /// End-effector terminal diagonal `[translation; rotation]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<[f64; 6]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<f64>,
    /// Base pose tracking diagonal (stage 2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<[f64; 6]>,
    /// Full per-stage override; length must equal the stage count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Vec<[f64; 6]>>,
}

/// Limit overrides; absent fields keep the robot model's limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_upper: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_upper: Option<Vec<f64>>,
}

/// Everything a run needs, built from a validated config.
pub struct Scenario {
    pub world: World,
    pub robot: RobotModel,
    pub task: Task,
    pub controller: ControllerConfig,
    pub weights: Option<CostWeights<f64>>,
}

impl ScenarioConfig {
    /// Parses and validates a scenario file.
    pub fn load(path: &Path) -> Result<ScenarioConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading scenario config {}", path.display()))?;
        let config: ScenarioConfig = toml::from_str(&text)
            .with_context(|| format!("parsing scenario config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    /// Cross-field checks that the flat schema cannot express.
    pub fn validate(&self) -> Result<()> {
        match self.world.kind {
            WorldKind::Forest => {
                if self.world.seed.is_none() {
                    bail!("world.seed is required for world.kind = \"forest\"");
                }
                if self.world.density.is_none() {
                    bail!("world.density is required for world.kind = \"forest\"");
                }
                if self.world.bar_height.is_some() || self.world.obstacles.is_some() {
                    bail!("world.bar_height and world.obstacles do not apply to forest worlds");
                }
            }
            WorldKind::ShelfBar => {
                if self.world.bar_height.is_none() {
                    bail!("world.bar_height is required for world.kind = \"shelf_bar\"");
                }
                for (key, set) in [
                    ("world.seed", self.world.seed.is_some()),
                    ("world.density", self.world.density.is_some()),
                    ("world.obstacles", self.world.obstacles.is_some()),
                    ("world.keep_clear_radius", self.world.keep_clear_radius.is_some()),
                ] {
                    if set {
                        bail!("{key} does not apply to shelf_bar worlds");
                    }
                }
            }
            WorldKind::Custom => {
                if self.world.obstacles.is_none() {
                    bail!("world.obstacles is required for world.kind = \"custom\"");
                }
                for (key, set) in [
                    ("world.seed", self.world.seed.is_some()),
                    ("world.density", self.world.density.is_some()),
                    ("world.bar_height", self.world.bar_height.is_some()),
                    ("world.keep_clear_radius", self.world.keep_clear_radius.is_some()),
                ] {
                    if set {
                        bail!("{key} does not apply to custom worlds");
                    }
                }
            }
        }
        match (&self.robot.builtin, &self.robot.model) {
            (Some(true), Some(_)) => {
                bail!("robot.builtin and robot.model are mutually exclusive")
            }
            (Some(false) | None, None) => {
                bail!("robot section needs builtin = true or a model path")
            }
            _ => {}
        }
        if self.task.waypoints.is_empty() {
            bail!("task.waypoints must contain at least one waypoint");
        }
        if self.task.goal == GoalKind::EeEnd && self.task.ee_waypoints.is_empty() {
            bail!("task.goal = \"ee_end\" requires task.ee_waypoints");
        }
        if self.task.max_steps == 0 {
            bail!("task.max_steps must be positive");
        }
        if !(self.task.sense_radius > 0.0) {
            bail!("task.sense_radius must be positive");
        }
        if let Some(w) = &self.weights {
            if let Some(c) = w.control {
                if !(c > 0.0) {
                    bail!("weights.control must be positive");
                }
            }
        }
        Ok(())
    }

    /// Builds the runnable scenario. `base_dir` resolves relative robot
    /// model paths; `seed_override` substitutes the forest seed (batch
    /// runs).
    pub fn build(&self, base_dir: &Path, seed_override: Option<u64>) -> Result<Scenario> {
        let robot = self.build_robot(base_dir)?;
        let task = self.build_task()?;
        let world = self.build_world(&task, seed_override)?;
        let controller = self.build_controller();
        let weights = self.build_weights(robot.spec.num_stages())?;
        if let Some(limits) = &self.limits {
            // Applied onto the robot model in place.
            let mut model = robot;
            if let Some(v) = &limits.control_lower {
                model.limits.control_lower = v.clone();
            }
            if let Some(v) = &limits.control_upper {
                model.limits.control_upper = v.clone();
            }
            if let Some(v) = &limits.angle_lower {
                model.limits.angle_lower = v.clone();
            }
            if let Some(v) = &limits.angle_upper {
                model.limits.angle_upper = v.clone();
            }
            model
                .limits
                .validate(model.spec.num_stages(), model.spec.num_arm_joints())
                .map_err(|e| anyhow!("limits section: {e}"))?;
            return Ok(Scenario {
                world,
                robot: model,
                task,
                controller,
                weights,
            });
        }
        Ok(Scenario {
            world,
            robot,
            task,
            controller,
            weights,
        })
    }

    fn arena(&self) -> Aabb {
        match self.world.extents {
            Some([lx, ly, lz]) => Aabb {
                min: Vector3::new(-lx / 2.0, -ly / 2.0, 0.0),
                max: Vector3::new(lx / 2.0, ly / 2.0, lz),
            },
            None => default_arena(),
        }
    }

    fn build_world(&self, task: &Task, seed_override: Option<u64>) -> Result<World> {
        match self.world.kind {
            WorldKind::Forest => {
                let seed = seed_override.or(self.world.seed).expect("validated");
                let density = self.world.density.expect("validated");
                let radius = self.world.keep_clear_radius.unwrap_or(1.0);
                let mut keep_clear = vec![(task.start_base.p, radius)];
                if let Some(g) = task.goal_base {
                    keep_clear.push((g, radius));
                }
                Ok(World::build_forest_in(
                    self.arena(),
                    seed,
                    density,
                    &keep_clear,
                )?)
            }
            WorldKind::ShelfBar => Ok(World::build_shelf_bar(
                self.world.bar_height.expect("validated"),
            )),
            WorldKind::Custom => {
                let obstacles = self
                    .world
                    .obstacles
                    .as_ref()
                    .expect("validated")
                    .iter()
                    .map(|b| Aabb {
                        min: Vector3::from(b.min),
                        max: Vector3::from(b.max),
                    })
                    .collect();
                Ok(World::custom(obstacles, self.arena()))
            }
        }
    }

    fn build_robot(&self, base_dir: &Path) -> Result<RobotModel> {
        match &self.robot.model {
            None => Ok(RobotModel::builtin()),
            Some(rel) => {
                let path = base_dir.join(rel);
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading robot model {}", path.display()))?;
                let file: RobotModelFile = toml::from_str(&text)
                    .with_context(|| format!("parsing robot model {}", path.display()))?;
                build_robot_model(&file)
            }
        }
    }

    fn build_task(&self) -> Result<Task> {
        let yaw_axis = Unit::new_normalize(Vector3::z());
        let start_rot = Quat::from_rotvec(&(yaw_axis.into_inner() * self.task.start_yaw));
        let start_base = LinkPose::new(Vector3::from(self.task.start), start_rot);
        let base_path: Vec<LinkPose<f64>> = self
            .task
            .waypoints
            .iter()
            .map(|w| LinkPose::from_translation(Vector3::from(*w)))
            .collect();
        let mut ee_path = Vec::with_capacity(self.task.ee_waypoints.len());
        for w in &self.task.ee_waypoints {
            let rot = Quat::from_coeffs(w[3], w[4], w[5], w[6])
                .map_err(|e| anyhow!("task.ee_waypoints rotation: {e}"))?;
            ee_path.push(LinkPose::new(Vector3::new(w[0], w[1], w[2]), rot));
        }
        let goal_base = match self.task.goal {
            GoalKind::BaseEnd => Some(base_path.last().expect("validated").p),
            GoalKind::EeEnd => None,
        };
        let goal_ee = match self.task.goal {
            GoalKind::BaseEnd => None,
            GoalKind::EeEnd => Some(*ee_path.last().expect("validated")),
        };
        Ok(Task {
            start_base,
            start_angles: self.task.start_angles.clone(),
            base_path,
            ee_path,
            goal_base,
            goal_ee,
            max_steps: self.task.max_steps,
            sense_radius: self.task.sense_radius,
        })
    }

    fn build_controller(&self) -> ControllerConfig {
        let mut config = ControllerConfig::default();
        config.dt = self.controller.dt;
        config.lookahead = self.controller.lookahead;
        config.base_seed_dims = Vector3::from(self.controller.base_seed_dims);
        config.arm_seed_dims = Vector3::from(self.controller.arm_seed_dims);
        config.margin = self.controller.margin;
        config.violation_gate = self.controller.violation_gate;
        config.solver.tol_con = self.solver.tol_con;
        config.solver.tol_grad = self.solver.tol_grad;
        config.solver.max_inner = self.solver.max_inner;
        config.solver.max_outer = self.solver.max_outer;
        config.solver.mu0 = self.solver.mu0;
        config.solver.beta = self.solver.beta;
        config.solver.reg0 = self.solver.reg0;
        config.solver.smooth_alpha_tau = if self.solver.smooth_alpha_tau > 0.0 {
            Some(self.solver.smooth_alpha_tau)
        } else {
            None
        };
        config
    }

    fn build_weights(&self, num_stages: usize) -> Result<Option<CostWeights<f64>>> {
        let Some(section) = &self.weights else {
            return Ok(None);
        };
        let mut weights = CostWeights::defaults(num_stages);
        if let Some(stage) = &section.stage {
            if stage.len() != num_stages {
                bail!(
                    "weights.stage has {} rows, the chain has {num_stages} stages",
                    stage.len()
                );
            }
            weights.stage = stage.iter().map(|r| Vector6::from(*r)).collect();
        }
        if let Some(base) = section.base {
            if num_stages <= 2 {
                bail!("weights.base needs a chain with a yaw stage");
            }
            weights.stage[2] = Vector6::from(base);
        }
        if let Some(terminal) = section.terminal {
            weights.terminal = Vector6::from(terminal);
        }
        if let Some(control) = section.control {
            weights.control = control;
        }
        Ok(Some(weights))
    }
}

/// Builds a [`RobotModel`] from its file description, mirroring the
/// builtin model's construction (cuboid base, cuboid arm links inset from
/// the joint span).
fn build_robot_model(file: &RobotModelFile) -> Result<RobotModel> {
    if file.axes.is_empty() {
        bail!("robot model needs at least one arm joint axis");
    }
    if file.lengths.len() != file.axes.len() {
        bail!(
            "robot model has {} lengths for {} axes",
            file.lengths.len(),
            file.axes.len()
        );
    }
    if file.home_angles.len() != file.axes.len() {
        bail!(
            "robot model has {} home angles for {} axes",
            file.home_angles.len(),
            file.axes.len()
        );
    }
    let mut axes = Vec::with_capacity(file.axes.len());
    for a in &file.axes {
        let v = Vector3::from(*a);
        if v.norm() < 1e-9 {
            bail!("robot model axis {a:?} is numerically zero");
        }
        axes.push(Unit::new_normalize(v));
    }
    let half = Vector3::from(file.base_half_extents);
    let mut geometries = vec![LinkGeometry::cuboid(&(-half), &half)
        .map_err(|e| anyhow!("robot model base box: {e}"))?];
    for len in &file.lengths {
        let hw = file.link_halfwidth;
        let inset = file.link_inset;
        if *len <= 2.0 * inset {
            bail!("robot model link length {len} does not clear the {inset} end inset");
        }
        geometries.push(
            LinkGeometry::cuboid(
                &Vector3::new(-hw, -hw, inset),
                &Vector3::new(hw, hw, len - inset),
            )
            .map_err(|e| anyhow!("robot model link hull: {e}"))?,
        );
    }
    let mut link_geometry = vec![None, None, Some(0)];
    for j in 0..axes.len() {
        link_geometry.push(Some(j + 1));
    }
    let spec = ChainSpec::new(
        &axes,
        Transform::from_translation(Vector3::from(file.ee_offset)),
        link_geometry,
    )
    .map_err(|e| anyhow!("robot model chain: {e}"))?;
    let limits = Limits {
        control_lower: file.control_lower.clone(),
        control_upper: file.control_upper.clone(),
        angle_lower: file.angle_lower.clone(),
        angle_upper: file.angle_upper.clone(),
    };
    limits
        .validate(spec.num_stages(), spec.num_arm_joints())
        .map_err(|e| anyhow!("robot model limits: {e}"))?;
    Ok(RobotModel {
        spec,
        geometries,
        limits,
        link_lengths: file.lengths.clone(),
        mount: Transform::from_translation(Vector3::from(file.mount)),
        home_angles: file.home_angles.clone(),
    })
}
