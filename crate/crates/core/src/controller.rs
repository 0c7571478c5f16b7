//! One-step reactive whole-body controller.
//!
//! Each call to [`Controller::control_step`] turns the current observation
//! into one spatial optimization problem and solves it:
//!
//! 1. filter the obstacle cloud around every link that carries geometry,
//! 2. extract (or reuse) a convex free region per such link,
//! 3. look references up along the task paths (fixed arc-length advance),
//! 4. assemble control, joint-angle, and containment constraints,
//! 5. solve with the augmented-Lagrangian DDP, warm started from the
//!    previous tick,
//! 6. clamp the result to the hard limits and report diagnostics evaluated
//!    on the committed (clamped) prediction.
//!
//! The controller holds only two pieces of state between ticks: the last
//! solution (warm start) and the last usable region per link (fallback when
//! extraction fails in clutter).

use crate::al_ddp::{solve, SolveReport, SolveStatus, SolverConfig, SpatialProblem};
use crate::chain::{propagate_chain, ChainObservation, ChainSpec, ChainTrajectory};
use crate::containment::{min_scaling, LinkGeometry};
use crate::costs_constraints::{
    ConstraintSet, CostWeights, InequalityConstraint, Limits, ReferenceSet,
};
use crate::free_region::{
    extract_region_containing, FreeRegion, ObstacleCloud, SkeletonSegment, SEED_FACES,
};
use crate::geometry::{relative_transform, LinkPose, Quat};
use crate::polytope::Halfspace;
use std::collections::VecDeque;
use crate::{Error, Result};
use nalgebra::Vector3;

/// Task paths: piecewise-linear pose waypoints in the world frame. An empty
/// vector means "no reference of that kind".
#[derive(Debug, Clone, Default)]
pub struct PathReference {
    pub base: Vec<LinkPose<f64>>,
    pub ee: Vec<LinkPose<f64>>,
}

/// Controller tuning. Seed dimensions are world-axis-aligned box edge
/// lengths [m]; `margin` is the clearance kept between clip planes and
/// obstacle points [m].
#[derive(Debug, Clone)]
pub struct ControllerConfig {
    /// Control interval [s].
    pub dt: f64,
    /// Arc-length advance of the reference along the path [m].
    pub lookahead: f64,
    /// Seed box for the base region [m].
    pub base_seed_dims: Vector3<f64>,
    /// Seed box for each arm link region [m].
    pub arm_seed_dims: Vector3<f64>,
    /// Clip-plane clearance [m].
    pub margin: f64,
    /// Largest solver constraint violation that may still be committed. A
    /// solve ending above this level (or in numerical failure) commits zero
    /// controls instead, so a bad solve stops the robot rather than moving
    /// it.
    pub violation_gate: f64,
    pub solver: SolverConfig<f64>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        let mut solver = SolverConfig::default();
        // The exact containment measure is a max over face and vertex
        // pairs; its kinks can stall the line search when a link rides a
        // region boundary. The log-sum-exp surrogate is smooth and upper
        // bounds the exact measure, so feasibility is preserved.
        solver.smooth_alpha_tau = Some(1e-3);
        // Real-time budget: a warm-started tick converges in a handful of
        // sweeps, and a tick that cannot is cut short instead of stalling
        // the control loop.
        solver.max_inner = 40;
        solver.max_outer = 8;
        ControllerConfig {
            dt: 0.1,
            lookahead: 0.5,
            base_seed_dims: Vector3::new(0.8, 0.8, 0.8),
            arm_seed_dims: Vector3::new(0.4, 0.3, 0.3),
            // Must exceed the sensing pitch: a clip plane passes through
            // one sampled surface point, and the true surface between
            // samples can stand proud of it by a pitch-dependent sliver.
            margin: 0.04,
            violation_gate: 5e-3,
            solver,
        }
    }
}

/// Per-stage safety diagnostics of one tick.
#[derive(Debug, Clone)]
pub struct StageDiagnostics {
    pub stage: usize,
    /// Exact containment measure of the committed post pose, when the stage
    /// carries geometry and a region was available.
    pub alpha: Option<f64>,
    /// Extraction failed and the previous tick's region was reused.
    pub region_fallback: bool,
    /// No region was available at all; containment was skipped.
    pub containment_skipped: bool,
}

/// Everything one control step produces.
#[derive(Debug, Clone)]
pub struct ControlOutcome {
    /// Committed controls, clamped to the hard limits.
    pub controls: Vec<f64>,
    /// Chain poses predicted from the committed controls.
    pub predicted: ChainTrajectory<f64>,
    pub report: SolveReport<f64>,
    pub stage_diagnostics: Vec<StageDiagnostics>,
    pub base_reference: Option<LinkPose<f64>>,
    pub ee_reference: Option<LinkPose<f64>>,
    /// Regions used this tick, per stage (for logging and export).
    pub regions: Vec<Option<FreeRegion<f64>>>,
    /// The solver failed numerically and zero controls were committed.
    pub fallback_to_zero: bool,
}

/// Reactive controller with warm-start and region-fallback state.
#[derive(Debug, Clone)]
pub struct Controller {
    spec: ChainSpec<f64>,
    /// Hulls referenced by `spec.link_geometry`.
    geometries: Vec<LinkGeometry<f64>>,
    limits: Limits<f64>,
    weights: CostWeights<f64>,
    config: ControllerConfig,
    prev_controls: Option<Vec<f64>>,
    prev_regions: Vec<Option<FreeRegion<f64>>>,
    /// Base positions of the last [`DETOUR_WINDOW`] ticks, oldest first.
    base_history: VecDeque<Vector3<f64>>,
    /// Consecutive stalled ticks while far from the reference; reaching
    /// [`DETOUR_ENGAGE_TICKS`] arms a detour.
    slow_ticks: u32,
    detour: Option<DetourState>,
}

/// Latched detour around a blocking obstacle face.
///
/// A purely per-tick deflection dithers: the flank with more room can
/// alternate between ticks as the region is re-extracted, and the robot
/// orbits the blocker instead of passing it. The latch commits to one side
/// until the line of sight to the raw reference stays clear, and only
/// flips after a sustained stall on the chosen flank.
#[derive(Debug, Clone)]
struct DetourState {
    /// Contour sense: +1 keeps the blocker on the left (tangents rotate
    /// counterclockwise around it), -1 on the right. The sense is held
    /// until release; re-picking it mid-contour restarts the
    /// circumnavigation and cycles forever in concave pockets.
    hand: f64,
    /// Slide direction of the previous engaged tick. Regions are
    /// re-extracted every tick, so the blocking face has no stable
    /// identity; carrying the direction and orienting each tick's face
    /// tangent to continue it keeps the contour walk committed where
    /// per-tick re-derivation chatters between opposite slides.
    dir: Vector3<f64>,
    /// Slide-length multiplier, widened on sustained stalls. A slide that
    /// dead-ends only proves the blocker is wider than the slide.
    reach: u32,
    /// Hand flips since the last productive slide. Two flips mean both
    /// contour senses dead-ended at full reach: the base sits in a pocket
    /// tighter than its own hull, and only reversing can leave it.
    flips: u32,
    /// Base position where the current retreat began, when retreating.
    /// The reference points straight back along the pull until the base
    /// has backed out by [`DETOUR_RETREAT_EXIT`], then sliding resumes.
    retreat: Option<Vector3<f64>>,
    /// Consecutive engaged ticks with negligible base motion.
    stalled: u32,
    /// Consecutive ticks with an unobstructed segment to the raw reference.
    clear: u32,
    /// Distance from the base to the path end when the detour engaged.
    /// Release additionally requires beating this mark, so a clear ray at
    /// the mouth of the same pocket does not restart the approach.
    hit_dist: f64,
}

/// Stalled ticks before a detour engages (the tracking optimum has parked
/// against a clip face or entered a limit cycle in front of it).
const DETOUR_ENGAGE_TICKS: u32 = 8;
/// Clear-sight ticks before a detour may release back to raw tracking.
const DETOUR_RELEASE_TICKS: u32 = 5;
/// Margin by which the path-end distance must beat the engagement mark
/// before a detour releases [m].
const DETOUR_RELEASE_GAIN: f64 = 0.1;
/// Clear-sight ticks after which a detour releases even without progress.
/// A detour that has followed a boundary away from the path can never beat
/// its engagement mark again; once sight stays clear this long, holding
/// the latch only drags the base further around the obstacle.
const DETOUR_FORCE_RELEASE_TICKS: u32 = 25;
/// Stalled ticks before the slide widens (or, at the cap, the sense flips).
const DETOUR_WIDEN_TICKS: u32 = 25;
/// Cap on the slide-widening factor. Flipping the contour sense is the
/// last resort once the widest slide has stalled too: the committed side
/// may genuinely dead-end, e.g. against the arena boundary.
const DETOUR_MAX_REACH: u32 = 4;
/// Free travel below which a followed face counts as walled off and the
/// walk turns onto the blocking face [m]. Room is measured for the base
/// center, but containment acts on the hull, so the threshold carries the
/// hull's horizontal support (about 0.3 m for the stock base) plus slack.
const DETOUR_CORNER_ROOM: f64 = 0.35;
/// How far behind the base the retreat reference sits [m].
const DETOUR_RETREAT_LEN: f64 = 1.0;
/// Backed-out distance from the retreat entry point at which sliding
/// resumes [m].
const DETOUR_RETREAT_EXIT: f64 = 0.5;
/// Ticks over which net base displacement defines a stall. Instantaneous
/// speed cannot: a limit cycle bouncing millimeters in front of a blocker
/// moves fast every tick while going nowhere.
const DETOUR_WINDOW: usize = 20;
/// Net displacement across [`DETOUR_WINDOW`] below which the base counts
/// as stalled [m].
const DETOUR_STALL_DIST: f64 = 0.1;

impl Controller {
    pub fn new(
        spec: ChainSpec<f64>,
        geometries: Vec<LinkGeometry<f64>>,
        limits: Limits<f64>,
        weights: CostWeights<f64>,
        config: ControllerConfig,
    ) -> Result<Self> {
        let n = spec.num_stages();
        limits.validate(n, spec.num_arm_joints())?;
        weights.validate(n)?;
        if !(config.dt > 0.0) {
            return Err(Error::InvalidInput("controller dt must be positive".into()));
        }
        if !(config.lookahead > 0.0) {
            return Err(Error::InvalidInput("lookahead must be positive".into()));
        }
        for k in 0..n {
            if let Some(g) = spec.link_geometry(k) {
                if g >= geometries.len() {
                    return Err(Error::InvalidInput(format!(
                        "stage {k} references geometry {g}, only {} provided",
                        geometries.len()
                    )));
                }
            }
        }
        Ok(Controller {
            prev_regions: vec![None; n],
            base_history: VecDeque::new(),
            slow_ticks: 0,
            detour: None,
            spec,
            geometries,
            limits,
            weights,
            config,
            prev_controls: None,
        })
    }

    pub fn spec(&self) -> &ChainSpec<f64> {
        &self.spec
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    /// Forgets warm start and cached regions (e.g. after teleporting the
    /// robot between episodes).
    pub fn reset(&mut self) {
        self.prev_controls = None;
        for r in &mut self.prev_regions {
            *r = None;
        }
    }

    /// Runs one control tick. `paths` must provide at least one of the two
    /// path kinds.
    pub fn control_step(
        &mut self,
        obs: &ChainObservation<f64>,
        cloud: &ObstacleCloud<f64>,
        paths: &PathReference,
    ) -> Result<ControlOutcome> {
        let n = self.spec.num_stages();
        obs.validate()?;
        if paths.base.is_empty() && paths.ee.is_empty() {
            return Err(Error::EmptyPath);
        }

        // Free regions for every stage that carries link geometry.
        let base_obs = obs.base_pose();
        let ee_obs = observed_ee_pose(obs, &self.spec);
        let mut regions: Vec<Option<FreeRegion<f64>>> = vec![None; n];
        let mut diagnostics: Vec<StageDiagnostics> = (0..n)
            .map(|stage| StageDiagnostics {
                stage,
                alpha: None,
                region_fallback: false,
                containment_skipped: false,
            })
            .collect();
        for k in 0..n {
            let Some(gi) = self.spec.link_geometry(k) else {
                continue;
            };
            let geom = &self.geometries[gi];
            let seed_dims = if self.spec.is_virtual(k) || k == 2 {
                self.config.base_seed_dims
            } else {
                self.config.arm_seed_dims
            };
            let pose = &obs.link_poses()[k];
            let seg = skeleton_for(geom, pose, k <= 2);
            // Only points that can reach the seed box matter.
            let radius = seed_dims.norm() * 0.5 + self.config.margin;
            let local = cloud.filter_radius(&seg.midpoint(), radius);
            // Clip planes must not cut the hull as it stands, or the solve
            // would start infeasible at the observed pose.
            let keep: Vec<Vector3<f64>> = geom
                .vertices()
                .iter()
                .map(|v| pose.r.rotate_vector(v) + pose.p)
                .collect();
            match extract_region_containing(&seg, &local, &seed_dims, self.config.margin, &keep) {
                Ok(region) => {
                    self.prev_regions[k] = Some(region.clone());
                    regions[k] = Some(region);
                }
                Err(Error::SeedInfeasible(_)) => {
                    if let Some(prev) = &self.prev_regions[k] {
                        regions[k] = Some(prev.clone());
                        diagnostics[k].region_fallback = true;
                    } else {
                        diagnostics[k].containment_skipped = true;
                    }
                }
                Err(e) => return Err(e),
            }
        }


        // References: base from the base path, end effector from the ee
        // path, or rigidly transported from the base reference so the arm
        // holds its posture relative to the moving base. When tracking has
        // stalled against an obstacle clip face, the base reference detours
        // along that face instead of parking behind the blocker.
        let base_reference = if paths.base.is_empty() {
            self.base_history.clear();
            self.slow_ticks = 0;
            self.detour = None;
            None
        } else {
            let raw = reference_lookahead(&paths.base, &base_obs.p, self.config.lookahead)?;
            let end = paths.base[paths.base.len() - 1].p;
            Some(self.steer_base(&regions[2.min(n - 1)], &base_obs.p, &raw, &end))
        };
        let ee_reference = if !paths.ee.is_empty() {
            Some(reference_lookahead(&paths.ee, &ee_obs.p, self.config.lookahead)?)
        } else {
            // Rigid transport inherits the base detour.
            base_reference.as_ref().map(|base_ref| {
                base_ref
                    .to_transform()
                    .compose(&relative_transform(base_obs, &ee_obs))
                    .to_pose()
            })
        };

        let mut references = ReferenceSet::empty(n);
        if n > 2 {
            references.stage_refs[2] = base_reference;
        }
        references.ee_ref = ee_reference;

        // Constraints: control boxes everywhere, angle boxes on revolute
        // stages, containment where a region exists.
        let mut constraints = ConstraintSet::empty(n);
        for k in 0..n {
            let stage = constraints.stage_mut(k);
            stage.inequalities.push(InequalityConstraint::ControlUpper {
                limit: self.limits.control_upper[k],
            });
            stage.inequalities.push(InequalityConstraint::ControlLower {
                limit: self.limits.control_lower[k],
            });
            if k >= 3 {
                let j = k - 3;
                stage.inequalities.push(InequalityConstraint::AngleUpper {
                    theta_t: obs.joint_angles()[j],
                    limit: self.limits.angle_upper[j],
                });
                stage.inequalities.push(InequalityConstraint::AngleLower {
                    theta_t: obs.joint_angles()[j],
                    limit: self.limits.angle_lower[j],
                });
            }
            if let (Some(region), Some(gi)) = (&regions[k], self.spec.link_geometry(k)) {
                stage.inequalities.push(InequalityConstraint::Containment {
                    region: region.clone(),
                    geometry: self.geometries[gi].clone(),
                });
            }
        }

        let initial_controls = match &self.prev_controls {
            Some(u) if u.len() == n => u.clone(),
            _ => vec![0.0; n],
        };
        let problem = SpatialProblem {
            spec: self.spec.clone(),
            observation: obs.clone(),
            dt: self.config.dt,
            weights: self.weights.clone(),
            references,
            constraints,
            initial_controls,
        };
        let report = solve(&problem, &self.config.solver)?;

        // Commit: clamp to the hard limits; a numerical failure or a solve
        // that still violates its constraints beyond the gate commits a
        // safe stop instead.
        let fallback_to_zero = report.status == SolveStatus::NumericalFailure
            || report.max_violation > self.config.violation_gate;
        let mut controls = if fallback_to_zero {
            vec![0.0; n]
        } else {
            report.controls.clone()
        };
        for k in 0..n {
            controls[k] = controls[k].clamp(self.limits.control_lower[k], self.limits.control_upper[k]);
        }
        let predicted = propagate_chain(obs, &controls, self.config.dt, &self.spec)?;

        // Safety diagnostics on the committed prediction, with the exact
        // (unsmoothed) containment measure.
        for k in 0..n {
            if let (Some(region), Some(gi)) = (&regions[k], self.spec.link_geometry(k)) {
                let m = min_scaling(region, &self.geometries[gi], predicted.stage_pose(k));
                diagnostics[k].alpha = Some(m.alpha);
            }
        }

        self.prev_controls = Some(controls.clone());
        Ok(ControlOutcome {
            controls,
            predicted,
            report,
            stage_diagnostics: diagnostics,
            base_reference,
            ee_reference,
            regions,
            fallback_to_zero,
        })
    }

    /// Base tracking reference, detoured around blocking clip faces when
    /// raw tracking has stalled (see [`DetourState`]).
    ///
    /// Engaged, the reference becomes `exit + side * remaining`: the pull
    /// up to the blocking face plus a slide along it, which drags the
    /// tracking optimum sideways out of the pocket. Every counter is
    /// integer and every branch deterministic, so episodes replay bitwise.
    fn steer_base(
        &mut self,
        region: &Option<FreeRegion<f64>>,
        p: &Vector3<f64>,
        raw: &LinkPose<f64>,
        path_end: &Vector3<f64>,
    ) -> LinkPose<f64> {
        let end_dist = (path_end - p).norm();
        let net = self
            .base_history
            .front()
            .map(|q| (p - q).norm())
            .unwrap_or(f64::INFINITY);
        let window_full = self.base_history.len() == DETOUR_WINDOW;
        self.base_history.push_back(*p);
        if self.base_history.len() > DETOUR_WINDOW {
            self.base_history.pop_front();
        }
        let pull = raw.p - p;
        let len = pull.norm();
        // Near the path end a small pull is the converged state, not a stall.
        let slow = window_full && net < DETOUR_STALL_DIST && len > 0.5 * self.config.lookahead;
        if slow {
            self.slow_ticks = self.slow_ticks.saturating_add(1);
        } else {
            self.slow_ticks = 0;
        }

        let Some(region) = region else {
            self.detour = None;
            return *raw;
        };
        let faces = region.world_halfspaces();
        let crossing = clip_exit(&faces, p, &raw.p);

        if self.detour.is_none() && self.slow_ticks >= DETOUR_ENGAGE_TICKS {
            if let Some((t, i)) = crossing {
                let exit = p + pull * t;
                let hand = detour_hand(&faces, i, &exit);
                self.detour = Some(DetourState {
                    hand,
                    dir: face_tangent(&faces[i].normal) * hand,
                    reach: 1,
                    flips: 0,
                    retreat: None,
                    stalled: 0,
                    clear: 0,
                    hit_dist: end_dist,
                });
                self.slow_ticks = 0;
            }
        }
        let Some(d) = &mut self.detour else {
            return *raw;
        };
        // Retreat overrides sliding and release: a clear ray out of a
        // pocket the hull cannot fit through must not re-arm raw tracking.
        if let Some(entry) = d.retreat {
            if (p - entry).norm() < DETOUR_RETREAT_EXIT {
                let back = if len > 1e-9 {
                    -pull / len
                } else {
                    -Vector3::x()
                };
                return LinkPose::new(p + back * DETOUR_RETREAT_LEN, raw.r);
            }
            d.retreat = None;
            d.flips = 0;
            d.reach = 1;
            d.stalled = 0;
            d.clear = 0;
        }
        match crossing {
            None => {
                d.clear += 1;
                let progressed = end_dist + DETOUR_RELEASE_GAIN < d.hit_dist;
                if (d.clear >= DETOUR_RELEASE_TICKS && progressed)
                    || d.clear >= DETOUR_FORCE_RELEASE_TICKS
                {
                    self.detour = None;
                }
                *raw
            }
            Some((t, i)) => {
                d.clear = 0;
                if slow {
                    // A hull pinned by containment on every side moves
                    // millimeters per tick; burn through the widening
                    // ladder faster so the retreat comes while the episode
                    // still has time to use it.
                    let pinned = window_full && net < 0.3 * DETOUR_STALL_DIST;
                    d.stalled += if pinned { 3 } else { 1 };
                    if d.stalled >= DETOUR_WIDEN_TICKS {
                        if d.reach < DETOUR_MAX_REACH {
                            d.reach += 1;
                        } else if d.flips < 1 {
                            d.flips += 1;
                            d.hand = -d.hand;
                            d.dir = -d.dir;
                            d.reach = 1;
                        } else {
                            d.retreat = Some(*p);
                        }
                        d.stalled = 0;
                    }
                } else {
                    d.stalled = 0;
                }
                // Follow the boundary, continuing the previous slide. When
                // the followed face's tangent is walled off by another face
                // (a wedge corner between two blockers), follow that wall
                // instead; the region is convex, so turning corners this
                // way walks its whole boundary rather than pushing the
                // reference into the corner.
                let mut follow = i;
                let mut side = oriented_tangent(&faces[follow].normal, &d.dir, d.hand);
                for _ in 0..faces.len() {
                    let (room, limit) = region_room_limit(&faces, follow, p, &side);
                    if room >= DETOUR_CORNER_ROOM {
                        break;
                    }
                    let Some(j) = limit else { break };
                    follow = j;
                    side = oriented_tangent(&faces[follow].normal, &side, d.hand);
                }
                d.dir = side;
                let exit = p + pull * t;
                // Keep at least half the pull so grazing exits still detour.
                let remaining = (len * (1.0 - t)).max(0.5 * len) * d.reach as f64;
                LinkPose::new(exit + side * remaining, raw.r)
            }
        }
    }
}

/// Observed end-effector pose: the last link pose through the end-effector
/// offset.
fn observed_ee_pose(obs: &ChainObservation<f64>, spec: &ChainSpec<f64>) -> LinkPose<f64> {
    crate::chain::ee_pose(&obs.link_poses()[spec.num_stages() - 1], spec)
}

/// First crossing of the segment `p -> target` with an obstacle clip face
/// (faces past [`SEED_FACES`]). Seed faces never count: crossing them only
/// means the reference outruns the local box, which the tracking cost
/// handles fine. Returns the entry parameter in `[0, 1)` and the face index.
fn clip_exit(faces: &[Halfspace<f64>], p: &Vector3<f64>, target: &Vector3<f64>) -> Option<(f64, usize)> {
    let d = target - p;
    let mut hit: Option<(f64, usize)> = None;
    for (i, f) in faces.iter().enumerate().skip(SEED_FACES) {
        let along = f.normal.dot(&d);
        if along <= 1e-12 {
            continue;
        }
        let t = ((f.offset - f.normal.dot(p)) / along).max(0.0);
        if t < 1.0 {
            match hit {
                Some((best, _)) if best <= t => {}
                _ => hit = Some((t, i)),
            }
        }
    }
    hit
}

/// Horizontal unit tangent of a face, `normal x z` up to normalization.
fn face_tangent(normal: &Vector3<f64>) -> Vector3<f64> {
    let mut tangent = normal.cross(&Vector3::z());
    if tangent.norm_squared() < 1e-12 {
        // Face is a ceiling or floor; any horizontal direction works.
        tangent = normal.cross(&Vector3::x());
        tangent.z = 0.0;
    }
    tangent.normalize()
}

/// Face tangent signed to continue the travel direction `prev`: the sign
/// with the larger heading agreement wins, and near-ties (square corners,
/// where the tangent is orthogonal to `prev`) break toward `hand`'s
/// rotation sense so corner turns keep circulating the same way.
fn oriented_tangent(normal: &Vector3<f64>, prev: &Vector3<f64>, hand: f64) -> Vector3<f64> {
    let t = face_tangent(normal);
    let score = prev.dot(&t) + 0.2 * hand * (prev.x * t.y - prev.y * t.x);
    if score >= 0.0 {
        t
    } else {
        -t
    }
}

/// Contour sense (+-1) for a fresh detour around blocking face `i`: the
/// flank with more free travel inside the region. The blocking plane spans
/// the whole convex region, so escaping it is only possible sideways;
/// comparing room from the exit point along both senses picks the flank
/// that is not itself walled off by neighboring clips.
fn detour_hand(faces: &[Halfspace<f64>], i: usize, exit: &Vector3<f64>) -> f64 {
    let tangent = face_tangent(&faces[i].normal);
    let room_pos = region_room(faces, i, exit, &tangent);
    let room_neg = region_room(faces, i, exit, &(-tangent));
    if room_neg > room_pos {
        -1.0
    } else {
        1.0
    }
}

/// Free travel from `from` along unit `dir` before any face other than
/// `skip` is crossed, and the face that limits it. The skipped face is the
/// one being followed; the direction is tangent to it, so it could only
/// contribute noise-level numerators.
fn region_room_limit(
    faces: &[Halfspace<f64>],
    skip: usize,
    from: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> (f64, Option<usize>) {
    let mut room = f64::INFINITY;
    let mut limit = None;
    for (i, f) in faces.iter().enumerate() {
        if i == skip {
            continue;
        }
        let along = f.normal.dot(dir);
        if along > 1e-9 {
            let r = (f.offset - f.normal.dot(from)) / along;
            if r < room {
                room = r;
                limit = Some(i);
            }
        }
    }
    (room, limit)
}

fn region_room(
    faces: &[Halfspace<f64>],
    skip: usize,
    from: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> f64 {
    region_room_limit(faces, skip, from, dir).0
}

/// Skeleton of a link hull in the world frame. The base uses a point at the
/// hull's bounding-box center; arm links use the midline along the local
/// axis of largest extent, other coordinates at midrange.
fn skeleton_for(
    geom: &LinkGeometry<f64>,
    pose: &LinkPose<f64>,
    is_base: bool,
) -> SkeletonSegment<f64> {
    let mut mins = Vector3::repeat(f64::INFINITY);
    let mut maxs = Vector3::repeat(f64::NEG_INFINITY);
    for v in geom.vertices() {
        for i in 0..3 {
            mins[i] = mins[i].min(v[i]);
            maxs[i] = maxs[i].max(v[i]);
        }
    }
    let mid = (mins + maxs) * 0.5;
    let place = |p: &Vector3<f64>| pose.r.rotate_vector(p) + pose.p;
    if is_base {
        return SkeletonSegment::point(place(&mid));
    }
    let ext = maxs - mins;
    let mut axis = 0;
    for i in 1..3 {
        if ext[i] > ext[axis] {
            axis = i;
        }
    }
    let mut a = mid;
    let mut b = mid;
    a[axis] = mins[axis];
    b[axis] = maxs[axis];
    SkeletonSegment {
        a: place(&a),
        b: place(&b),
    }
}

/// Pose on the path a fixed arc length ahead of the projection of
/// `position` onto the polyline.
///
/// The projection takes the earliest arc length among equally close
/// points; the target arc length clamps to the path end; orientation
/// interpolates geodesically between the surrounding waypoints.
pub fn reference_lookahead(
    path: &[LinkPose<f64>],
    position: &Vector3<f64>,
    advance: f64,
) -> Result<LinkPose<f64>> {
    if path.is_empty() {
        return Err(Error::EmptyPath);
    }
    if path.len() == 1 {
        return Ok(path[0]);
    }

    // Project onto each segment; strict improvement keeps the earliest
    // arc length on ties.
    let mut best_d2 = f64::INFINITY;
    let mut best_s = 0.0;
    let mut cum = 0.0;
    for w in path.windows(2) {
        let a = w[0].p;
        let b = w[1].p;
        let d = b - a;
        let len2 = d.norm_squared();
        let (t, closest) = if len2 < 1e-18 {
            (0.0, a)
        } else {
            let t = ((position - a).dot(&d) / len2).clamp(0.0, 1.0);
            (t, a + d * t)
        };
        let d2 = (position - closest).norm_squared();
        if d2 < best_d2 {
            best_d2 = d2;
            best_s = cum + t * len2.sqrt();
        }
        cum += len2.sqrt();
    }
    let total = cum;
    let target = (best_s + advance).min(total);

    // Walk to the target arc length.
    let mut cum = 0.0;
    for w in path.windows(2) {
        let a = &w[0];
        let b = &w[1];
        let len = (b.p - a.p).norm();
        if cum + len >= target || len == 0.0 {
            if len < 1e-12 {
                cum += len;
                continue;
            }
            let t = ((target - cum) / len).clamp(0.0, 1.0);
            return Ok(LinkPose {
                p: a.p + (b.p - a.p) * t,
                r: slerp(&a.r, &b.r, t),
            });
        }
        cum += len;
    }
    Ok(path[path.len() - 1])
}

/// Geodesic interpolation `a (x) exp(t log(a^-1 b))`.
fn slerp(a: &Quat<f64>, b: &Quat<f64>, t: f64) -> Quat<f64> {
    let rel = a.conjugate().mul(b).to_rotvec();
    a.mul(&Quat::from_rotvec(&(rel * t)))
}
