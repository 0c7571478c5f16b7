//! Augmented-Lagrangian DDP over the spatial stages of the chain.
//!
//! The single control step is posed as a trajectory optimization whose
//! "time" axis runs along the kinematic chain: state `s_0` is the observed
//! base pose, stage `k` maps `s_k` to `s_{k+1}` through its one scalar
//! control, and every stage carries a cost on its post state plus optional
//! constraints. Inequalities enter through the PHR augmented-Lagrangian
//! penalty
//!
//! ```text
//! phi(c) = (max(0, lambda + mu c)^2 - lambda^2) / (2 mu)
//! ```
//!
//! and equalities through `lambda c + mu c^2 / 2`. The inner loop is a
//! Gauss-Newton DDP with scalar controls, backtracking line search, and a
//! Levenberg-Marquardt regularization schedule; the outer loop updates the
//! multipliers and grows `mu` when the maximum violation stalls.
//!
//! The solver is deterministic and single threaded: identical inputs give
//! bitwise identical outputs.

use crate::chain::{self, ChainObservation, ChainSpec, ChainTrajectory};
use crate::costs_constraints::{
    control_cost, stage_tracking_eval, terminal_cost_eval, trajectory_cost, ConstraintSet,
    CostWeights, ReferenceSet,
};
use crate::geometry::{pose_difference, LinkPose};
use crate::{cast, Error, Real, Result};
use nalgebra::{Matrix6, RowVector6, Vector6};

/// Hard cap on the penalty parameter.
pub const MU_MAX: f64 = 1e8;
/// Hard cap on the Levenberg-Marquardt regularization.
pub const REG_MAX: f64 = 1e6;

/// One spatial optimization problem: the observed chain, costs,
/// references, and stage constraints.
#[derive(Debug, Clone)]
pub struct SpatialProblem<S> {
    pub spec: ChainSpec<S>,
    pub observation: ChainObservation<S>,
    pub dt: S,
    pub weights: CostWeights<S>,
    pub references: ReferenceSet<S>,
    pub constraints: ConstraintSet<S>,
    /// Warm-start controls, one per stage.
    pub initial_controls: Vec<S>,
}

impl<S: Real> SpatialProblem<S> {
    pub fn validate(&self) -> Result<()> {
        let n = self.spec.num_stages();
        if !(self.dt > S::zero()) {
            return Err(Error::InvalidInput("dt must be positive".into()));
        }
        self.weights.validate(n)?;
        self.references.validate(n)?;
        if self.constraints.num_stages() != n {
            return Err(Error::LengthMismatch {
                what: "constraint stages",
                got: self.constraints.num_stages(),
                want: n,
            });
        }
        if self.initial_controls.len() != n {
            return Err(Error::LengthMismatch {
                what: "initial controls",
                got: self.initial_controls.len(),
                want: n,
            });
        }
        self.observation.validate()?;
        Ok(())
    }
}

/// Solver tolerances and iteration budget.
#[derive(Debug, Clone)]
pub struct SolverConfig<S> {
    /// Constraint satisfaction tolerance on the maximum violation.
    pub tol_con: S,
    /// Stationarity tolerance on `max_k |Q_u|` of the inner objective.
    pub tol_grad: S,
    /// Inner DDP iterations per outer iteration.
    pub max_inner: usize,
    /// Outer multiplier updates.
    pub max_outer: usize,
    /// Initial penalty parameter.
    pub mu0: S,
    /// Penalty growth factor when violation stalls.
    pub beta: S,
    /// First nonzero regularization tried after a failure.
    pub reg0: S,
    /// Log-sum-exp temperature for containment terms; `None` uses the
    /// exact (nonsmooth) maximum.
    pub smooth_alpha_tau: Option<S>,
    /// Record one trace entry per accepted inner step.
    pub record_trace: bool,
}

impl<S: Real> Default for SolverConfig<S> {
    fn default() -> Self {
        SolverConfig {
            tol_con: cast(1e-4),
            tol_grad: cast(1e-6),
            max_inner: 100,
            max_outer: 30,
            mu0: S::one(),
            beta: cast(10.0),
            reg0: cast(1e-6),
            smooth_alpha_tau: None,
            record_trace: false,
        }
    }
}

/// Terminal state of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Stationary on the final augmented objective and feasible to
    /// `tol_con`.
    Converged,
    /// Iteration budget exhausted before convergence.
    MaxIterations,
    /// No step with sufficient decrease even at maximum regularization.
    LineSearchFailed,
    /// A non-finite value appeared during the solve.
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max_iterations",
            SolveStatus::LineSearchFailed => "line_search_failed",
            SolveStatus::NumericalFailure => "numerical_failure",
        }
    }
}

/// One accepted inner step (recorded when `record_trace` is set).
#[derive(Debug, Clone)]
pub struct TraceEntry<S> {
    pub outer: usize,
    pub inner: usize,
    /// Augmented merit after the step.
    pub merit: S,
    /// True (unaugmented) cost after the step.
    pub cost: S,
    pub max_violation: S,
    pub grad_inf: S,
    pub step: S,
    pub reg: S,
}

/// Solve outcome: final controls, the propagated poses, and diagnostics.
#[derive(Debug, Clone)]
pub struct SolveReport<S> {
    pub controls: Vec<S>,
    pub trajectory: ChainTrajectory<S>,
    pub status: SolveStatus,
    pub outer_iterations: usize,
    /// Total accepted forward passes across all outer iterations.
    pub inner_iterations: usize,
    pub max_violation: S,
    /// Final true cost (no penalty terms).
    pub cost: S,
    pub trace: Vec<TraceEntry<S>>,
}

/// PHR inequality penalty: value, first, and second derivative in `c`.
fn al_ineq<S: Real>(c: S, lambda: S, mu: S) -> (S, S, S) {
    let t = lambda + mu * c;
    if t > S::zero() {
        ((t * t - lambda * lambda) / (mu * cast::<S>(2.0)), t, mu)
    } else {
        (-lambda * lambda / (mu * cast::<S>(2.0)), S::zero(), S::zero())
    }
}

/// Quadratic-penalty equality term: value, first, second derivative.
fn al_eq<S: Real>(c: S, lambda: S, mu: S) -> (S, S, S) {
    (
        lambda * c + mu * c * c * cast::<S>(0.5),
        lambda + mu * c,
        mu,
    )
}

/// Sufficient-decrease rule: the quadratic model must predict a strictly
/// positive decrease and the actual decrease must realize a fraction of it.
fn accept_step<S: Real>(actual_decrease: S, expected_decrease: S) -> bool {
    expected_decrease > S::zero() && actual_decrease >= cast::<S>(1e-4) * expected_decrease
}

/// Per-stage multipliers, shaped like the constraint set.
#[derive(Debug, Clone)]
struct Multipliers<S> {
    ineq: Vec<Vec<S>>,
    eq: Vec<Vec<S>>,
}

impl<S: Real> Multipliers<S> {
    fn zeros(constraints: &ConstraintSet<S>) -> Self {
        Multipliers {
            ineq: (0..constraints.num_stages())
                .map(|k| vec![S::zero(); constraints.stage(k).inequalities.len()])
                .collect(),
            eq: (0..constraints.num_stages())
                .map(|k| vec![S::zero(); constraints.stage(k).equalities.len()])
                .collect(),
        }
    }
}

/// Augmented stage cost `W_k(y, u)` with Gauss-Newton derivatives.
struct StageEval<S> {
    value: S,
    w_y: Vector6<S>,
    w_u: S,
    w_yy: Matrix6<S>,
    w_uu: S,
    w_uy: RowVector6<S>,
}

struct Workspace<'a, S> {
    problem: &'a SpatialProblem<S>,
    config: &'a SolverConfig<S>,
    mu: S,
    lambda: Multipliers<S>,
}

impl<'a, S: Real> Workspace<'a, S> {
    fn stage_eval(&self, k: usize, pose: &LinkPose<S>, u: S) -> StageEval<S> {
        let p = self.problem;
        let track = stage_tracking_eval(k, pose, &p.weights, &p.references);
        let (cv, cg, ch) = control_cost(u, p.weights.control);
        let mut ev = StageEval {
            value: track.value + cv,
            w_y: track.grad,
            w_u: cg,
            w_yy: track.hess,
            w_uu: ch,
            w_uy: RowVector6::zeros(),
        };
        let stage = p.constraints.stage(k);
        for (i, con) in stage.inequalities.iter().enumerate() {
            let c = con.eval(pose, u, p.dt, self.config.smooth_alpha_tau);
            let (val, d1, d2) = al_ineq(c.value, self.lambda.ineq[k][i], self.mu);
            ev.value += val;
            ev.w_y += c.grad_x * d1;
            ev.w_u += c.grad_u * d1;
            if d2 > S::zero() {
                ev.w_yy += c.grad_x * c.grad_x.transpose() * d2;
                ev.w_uu += c.grad_u * c.grad_u * d2;
                ev.w_uy += c.grad_x.transpose() * (c.grad_u * d2);
                // Constraints with their own convex curvature (smoothed
                // containment) contribute penalty-slope times curvature;
                // the slope is nonnegative on the active branch, so the
                // term keeps the stage Hessian positive semidefinite.
                if let Some(h) = &c.hess_x {
                    ev.w_yy += *h * d1;
                }
            }
        }
        for (i, con) in stage.equalities.iter().enumerate() {
            let c = con.eval(pose, u, p.dt);
            let (val, d1, d2) = al_eq(c.value, self.lambda.eq[k][i], self.mu);
            ev.value += val;
            ev.w_y += c.grad_x * d1;
            ev.w_u += c.grad_u * d1;
            ev.w_yy += c.grad_x * c.grad_x.transpose() * d2;
            ev.w_uu += c.grad_u * c.grad_u * d2;
            ev.w_uy += c.grad_x.transpose() * (c.grad_u * d2);
        }
        ev
    }

    /// Augmented merit of a full trajectory.
    fn merit(&self, traj: &ChainTrajectory<S>, controls: &[S]) -> S {
        let p = self.problem;
        let n = p.spec.num_stages();
        let mut total = S::zero();
        for k in 0..n {
            total += self.stage_eval(k, traj.stage_pose(k), controls[k]).value;
        }
        total + terminal_cost_eval(traj.stage_pose(n - 1), &p.spec, &p.weights, &p.references).value
    }

    /// Maximum constraint violation of a trajectory: `max(0, c)` for
    /// inequalities, `|c|` for equalities. Uses the same containment
    /// evaluation (exact or smoothed) as the penalty terms.
    fn max_violation(&self, traj: &ChainTrajectory<S>, controls: &[S]) -> S {
        let p = self.problem;
        let mut v = S::zero();
        for k in 0..p.spec.num_stages() {
            let pose = traj.stage_pose(k);
            let stage = p.constraints.stage(k);
            for con in &stage.inequalities {
                v = v.max(con.eval(pose, controls[k], p.dt, self.config.smooth_alpha_tau).value);
            }
            for con in &stage.equalities {
                v = v.max(con.eval(pose, controls[k], p.dt).value.abs());
            }
        }
        v
    }

    /// Constraint values for the multiplier update.
    fn update_multipliers(&mut self, traj: &ChainTrajectory<S>, controls: &[S]) {
        let p = self.problem;
        for k in 0..p.spec.num_stages() {
            let pose = traj.stage_pose(k);
            let stage = p.constraints.stage(k);
            for (i, con) in stage.inequalities.iter().enumerate() {
                let c = con.eval(pose, controls[k], p.dt, self.config.smooth_alpha_tau).value;
                self.lambda.ineq[k][i] = (self.lambda.ineq[k][i] + self.mu * c).max(S::zero());
            }
            for (i, con) in stage.equalities.iter().enumerate() {
                let c = con.eval(pose, controls[k], p.dt).value;
                self.lambda.eq[k][i] += self.mu * c;
            }
        }
    }
}

struct BackwardPass<S> {
    k_ff: Vec<S>,
    k_fb: Vec<RowVector6<S>>,
    d1: S,
    d2: S,
    grad_inf: S,
}

enum BackwardOutcome<S> {
    Ok(BackwardPass<S>),
    /// `Q_uu` lost positivity; retry with more regularization.
    NotPositive,
    NonFinite,
}

fn backward_pass<S: Real>(
    ws: &Workspace<S>,
    traj: &ChainTrajectory<S>,
    controls: &[S],
    reg: S,
) -> BackwardOutcome<S> {
    let p = ws.problem;
    let n = p.spec.num_stages();
    let term = terminal_cost_eval(traj.stage_pose(n - 1), &p.spec, &p.weights, &p.references);
    let mut v_x = term.grad;
    let mut v_xx = term.hess;
    let mut out = BackwardPass {
        k_ff: vec![S::zero(); n],
        k_fb: vec![RowVector6::zeros(); n],
        d1: S::zero(),
        d2: S::zero(),
        grad_inf: S::zero(),
    };
    for k in (0..n).rev() {
        let pre = if k == 0 {
            ws.problem.observation.base_pose()
        } else {
            traj.stage_pose(k - 1)
        };
        let Ok((a, b)) = chain::dynamics_jacobians(pre, controls[k], k, &p.observation, p.dt, &p.spec)
        else {
            return BackwardOutcome::NonFinite;
        };
        let ev = ws.stage_eval(k, traj.stage_pose(k), controls[k]);
        let g_y = ev.w_y + v_x;
        let g_yy = ev.w_yy + v_xx;

        let q_x = a.transpose() * g_y;
        let q_u = b.dot(&g_y) + ev.w_u;
        let q_xx = a.transpose() * g_yy * a;
        let q_uu = (g_yy * b).dot(&b) + ev.w_uu;
        let q_ux = b.transpose() * g_yy * a + ev.w_uy * a;

        let q_uu_reg = q_uu + reg;
        if !q_uu_reg.is_finite() || !q_u.is_finite() {
            return BackwardOutcome::NonFinite;
        }
        if q_uu_reg <= cast(1e-12) {
            return BackwardOutcome::NotPositive;
        }
        let k_ff = -q_u / q_uu_reg;
        let k_fb = -q_ux / q_uu_reg;

        out.d1 += k_ff * q_u;
        out.d2 += k_ff * q_uu * k_ff;
        out.grad_inf = out.grad_inf.max(q_u.abs());
        out.k_ff[k] = k_ff;
        out.k_fb[k] = k_fb;

        v_x = q_x + k_fb.transpose() * (q_uu * k_ff + q_u) + q_ux.transpose() * k_ff;
        v_xx = q_xx
            + k_fb.transpose() * q_uu * k_fb
            + k_fb.transpose() * q_ux
            + q_ux.transpose() * k_fb;
        v_xx = (v_xx + v_xx.transpose()) * cast::<S>(0.5);
    }
    BackwardOutcome::Ok(out)
}

/// Forward rollout with feedback at step size `alpha`; `None` when the
/// dynamics reject or produce non-finite poses.
fn forward_pass<S: Real>(
    ws: &Workspace<S>,
    traj: &ChainTrajectory<S>,
    controls: &[S],
    bp: &BackwardPass<S>,
    alpha: S,
) -> Option<(Vec<S>, ChainTrajectory<S>)> {
    let p = ws.problem;
    let n = p.spec.num_stages();
    let mut new_controls = Vec::with_capacity(n);
    let mut poses = Vec::with_capacity(n + 1);
    let mut state = *p.observation.base_pose();
    for k in 0..n {
        let old_pre = if k == 0 {
            *p.observation.base_pose()
        } else {
            *traj.stage_pose(k - 1)
        };
        let dx = pose_difference(&state, &old_pre).to_vector();
        let u = controls[k] + alpha * bp.k_ff[k] + bp.k_fb[k].dot(&dx.transpose());
        if !u.is_finite() {
            return None;
        }
        state = chain::stage_dynamics(&state, u, k, &p.observation, p.dt, &p.spec).ok()?;
        new_controls.push(u);
        poses.push(state);
    }
    poses.push(chain::ee_pose(&state, &p.spec));
    Some((new_controls, ChainTrajectory { poses }))
}

enum InnerOutcome {
    Stationary,
    OutOfIterations,
    LineSearchFailed,
    NonFinite,
}

/// Runs a solve to completion. Structural errors (wrong lengths, bad dt)
/// come back as `Err`; numerical trouble is reported in the status.
pub fn solve<S: Real>(problem: &SpatialProblem<S>, config: &SolverConfig<S>) -> Result<SolveReport<S>> {
    problem.validate()?;
    let mut ws = Workspace {
        problem,
        config,
        mu: config.mu0,
        lambda: Multipliers::zeros(&problem.constraints),
    };

    let mut controls = problem.initial_controls.clone();
    let mut traj = chain::propagate_chain(&problem.observation, &controls, problem.dt, &problem.spec)?;
    let mut trace = Vec::new();
    let mut inner_total = 0usize;
    let mut outer_done = 0usize;
    let mut status = SolveStatus::MaxIterations;
    let mut prev_violation = S::max_value().unwrap_or_else(|| cast(f64::MAX));
    let step_sizes: Vec<S> = (0..=10).map(|i| cast::<S>(0.5f64.powi(i))).collect();

    'outer: for outer in 1..=config.max_outer {
        outer_done = outer;
        let mut merit = ws.merit(&traj, &controls);
        if !merit.is_finite() {
            status = SolveStatus::NumericalFailure;
            break 'outer;
        }
        let mut reg = S::zero();
        let mut inner_outcome = InnerOutcome::OutOfIterations;
        let mut inner_count = 0usize;
        while inner_count < config.max_inner {
            let bp = match backward_pass(&ws, &traj, &controls, reg) {
                BackwardOutcome::Ok(bp) => bp,
                BackwardOutcome::NotPositive => {
                    let bumped = if reg == S::zero() { config.reg0 } else { reg * cast(10.0) };
                    if bumped > cast(REG_MAX) {
                        inner_outcome = InnerOutcome::LineSearchFailed;
                        break;
                    }
                    reg = bumped;
                    continue;
                }
                BackwardOutcome::NonFinite => {
                    inner_outcome = InnerOutcome::NonFinite;
                    break;
                }
            };
            if bp.grad_inf <= config.tol_grad {
                inner_outcome = InnerOutcome::Stationary;
                break;
            }
            let mut accepted = None;
            for &alpha in &step_sizes {
                let Some((cand_u, cand_traj)) = forward_pass(&ws, &traj, &controls, &bp, alpha)
                else {
                    continue;
                };
                let cand_merit = ws.merit(&cand_traj, &cand_u);
                if !cand_merit.is_finite() {
                    continue;
                }
                let expected = -(alpha * bp.d1 + alpha * alpha * cast::<S>(0.5) * bp.d2);
                if accept_step(merit - cand_merit, expected) {
                    accepted = Some((cand_u, cand_traj, cand_merit, alpha));
                    break;
                }
            }
            match accepted {
                Some((cand_u, cand_traj, cand_merit, alpha)) => {
                    controls = cand_u;
                    traj = cand_traj;
                    merit = cand_merit;
                    inner_count += 1;
                    inner_total += 1;
                    if config.record_trace {
                        trace.push(TraceEntry {
                            outer,
                            inner: inner_total,
                            merit,
                            cost: trajectory_cost(
                                &traj,
                                &controls,
                                &problem.spec,
                                &problem.weights,
                                &problem.references,
                            ),
                            max_violation: ws.max_violation(&traj, &controls),
                            grad_inf: bp.grad_inf,
                            step: alpha,
                            reg,
                        });
                    }
                    reg = if reg <= config.reg0 { S::zero() } else { reg / cast(10.0) };
                }
                None => {
                    let bumped = if reg == S::zero() { config.reg0 } else { reg * cast(10.0) };
                    if bumped > cast(REG_MAX) {
                        inner_outcome = InnerOutcome::LineSearchFailed;
                        break;
                    }
                    reg = bumped;
                }
            }
        }

        let violation = ws.max_violation(&traj, &controls);
        if !violation.is_finite() {
            status = SolveStatus::NumericalFailure;
            break 'outer;
        }
        match inner_outcome {
            InnerOutcome::NonFinite => {
                status = SolveStatus::NumericalFailure;
                break 'outer;
            }
            InnerOutcome::Stationary if violation <= config.tol_con => {
                status = SolveStatus::Converged;
                break 'outer;
            }
            InnerOutcome::LineSearchFailed => {
                status = SolveStatus::LineSearchFailed;
                break 'outer;
            }
            _ => {}
        }
        ws.update_multipliers(&traj, &controls);
        if violation > prev_violation / cast(4.0) {
            ws.mu = (ws.mu * config.beta).min(cast(MU_MAX));
        }
        prev_violation = violation;
    }

    let max_violation = ws.max_violation(&traj, &controls);
    let cost = trajectory_cost(&traj, &controls, &problem.spec, &problem.weights, &problem.references);
    if controls.iter().any(|u| !u.is_finite()) || !cost.is_finite() {
        status = SolveStatus::NumericalFailure;
    }
    Ok(SolveReport {
        controls,
        trajectory: traj,
        status,
        outer_iterations: outer_done,
        inner_iterations: inner_total,
        max_violation,
        cost,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::ChainObservation;
    use crate::costs_constraints::{EqualityConstraint, InequalityConstraint};
    use crate::geometry::Transform;
    use approx::assert_relative_eq;
    use nalgebra::{Unit, Vector3};

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    /// Chain with one arm joint; base at identity, link frame 0.3 above.
    fn simple_problem(dt: f64) -> SpatialProblem<f64> {
        let spec = ChainSpec::new(
            &[Unit::new_normalize(v(0.0, 0.0, 1.0))],
            Transform::from_translation(v(0.0, 0.0, 0.1)),
            vec![None; 4],
        )
        .unwrap();
        let base = LinkPose::identity();
        let arm = vec![LinkPose::from_translation(v(0.0, 0.0, 0.3))];
        let observation = ChainObservation::new(&spec, base, &arm, &[0.0], 0.0).unwrap();
        let n = spec.num_stages();
        let mut weights = CostWeights::defaults(n);
        weights.stage = vec![Vector6::zeros(); n];
        weights.control = 0.1;
        SpatialProblem {
            spec,
            observation,
            dt,
            weights,
            references: ReferenceSet::empty(n),
            constraints: ConstraintSet::empty(n),
            initial_controls: vec![0.0; n],
        }
    }

    /// Tracking 1 m ahead in x on the first translation stage with
    /// `Q = 1`, `R = 0.1`, `dt = 1`: a scalar quadratic whose optimum
    /// is `1/1.1`.
    fn lqr_problem() -> SpatialProblem<f64> {
        let mut p = simple_problem(1.0);
        p.weights.stage[0] = Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        p.references.stage_refs[0] = Some(LinkPose::from_translation(v(1.0, 0.0, 0.0)));
        p
    }

    #[test]
    fn al_penalty_worked_values() {
        // Inactive: lambda = 0, c < 0 leaves no penalty or slope.
        let (val, d1, d2) = al_ineq(-0.3, 0.0, 2.0);
        assert_relative_eq!(val, 0.0);
        assert_relative_eq!(d1, 0.0);
        assert_relative_eq!(d2, 0.0);
        // Active: lambda = 0, mu = 2, c = 0.3.
        let (val, d1, d2) = al_ineq(0.3, 0.0, 2.0);
        assert_relative_eq!(val, 0.09, epsilon = 1e-15);
        assert_relative_eq!(d1, 0.6, epsilon = 1e-15);
        assert_relative_eq!(d2, 2.0);
        // Multiplier keeps the term active slightly into the feasible side.
        let (val, d1, d2) = al_ineq(-0.4, 1.0, 2.0);
        assert_relative_eq!(val, (0.04 - 1.0) / 4.0, epsilon = 1e-15);
        assert_relative_eq!(d1, 0.2, epsilon = 1e-15);
        assert_relative_eq!(d2, 2.0);

        let (val, d1, d2) = al_eq(0.3, 1.0, 2.0);
        assert_relative_eq!(val, 0.39, epsilon = 1e-15);
        assert_relative_eq!(d1, 1.6, epsilon = 1e-15);
        assert_relative_eq!(d2, 2.0);
    }

    #[test]
    fn al_penalty_gradient_is_continuous_at_activation() {
        // At lambda + mu c = 0 both branches agree in value and slope.
        let lambda = 0.8;
        let mu = 2.0;
        let c0 = -lambda / mu;
        let (v_minus, d_minus, _) = al_ineq(c0 - 1e-12, lambda, mu);
        let (v_plus, d_plus, _) = al_ineq(c0 + 1e-12, lambda, mu);
        assert_relative_eq!(v_minus, v_plus, epsilon = 1e-9);
        assert_relative_eq!(d_minus, d_plus, epsilon = 1e-9);
    }

    #[test]
    fn accept_rule_requires_strict_model_decrease() {
        assert!(accept_step(1.0, 1.0));
        assert!(accept_step(1e-4, 1.0));
        assert!(!accept_step(0.9e-4, 1.0));
        assert!(!accept_step(1.0, 0.0));
        assert!(!accept_step(1.0, -1.0));
    }

    #[test]
    fn multiplier_update_examples() {
        // max(0, lambda + mu c)
        assert_relative_eq!((0.0f64 + 1.0 * 0.3).max(0.0), 0.3);
        assert_relative_eq!((1.0f64 + 2.0 * -0.4).max(0.0), 0.2);
        assert_relative_eq!((0.5f64 + 10.0 * -1.0).max(0.0), 0.0);
    }

    #[test]
    fn unconstrained_scalar_quadratic_matches_closed_form() {
        let p = lqr_problem();
        let report = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(report.status, SolveStatus::Converged);
        // min (u - 1)^2 + 0.1 u^2 has optimum u = 1/1.1.
        assert_relative_eq!(report.controls[0], 1.0 / 1.1, epsilon = 1e-8);
        for k in 1..p.spec.num_stages() {
            assert_relative_eq!(report.controls[k], 0.0, epsilon = 1e-10);
        }
        // The problem is exactly quadratic, so one accepted Newton step
        // reaches the optimum.
        assert_eq!(report.inner_iterations, 1);
        assert_eq!(report.outer_iterations, 1);
    }

    #[test]
    fn normal_equation_oracle_two_controls() {
        // Track (0.6, 0.4) in x and y with dt = 1: stage posts are
        // y1 = u0, y2 = (u0, u1). Cost = (u0-0.6)^2 + (u0-0.6)^2
        // + (u1-0.4)^2 + R(u0^2+u1^2) with unit x/y weights on both
        // stages. Solve the 2x2 normal equations independently.
        let mut p = simple_problem(1.0);
        p.weights.stage[0] = Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        p.weights.stage[1] = Vector6::new(1.0, 1.0, 0.0, 0.0, 0.0, 0.0);
        p.references.stage_refs[0] = Some(LinkPose::from_translation(v(0.6, 0.0, 0.0)));
        p.references.stage_refs[1] = Some(LinkPose::from_translation(v(0.6, 0.4, 0.0)));
        let r = 0.1;
        p.weights.control = r;
        let report = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(report.status, SolveStatus::Converged);
        // d/du0: 2(u0-0.6) + 2(u0-0.6) + 2 r u0 = 0 -> u0 = 1.2/(2+r)
        // d/du1: 2(u1-0.4) + 2 r u1 = 0 -> u1 = 0.4/(1+r)
        assert_relative_eq!(report.controls[0], 1.2 / 2.1, epsilon = 1e-7);
        assert_relative_eq!(report.controls[1], 0.4 / 1.1, epsilon = 1e-7);
    }

    #[test]
    fn saturated_control_settles_on_bound() {
        let mut p = lqr_problem();
        p.constraints.stage_mut(0).inequalities.push(InequalityConstraint::ControlUpper {
            limit: 0.5,
        });
        p.constraints.stage_mut(0).inequalities.push(InequalityConstraint::ControlLower {
            limit: -0.5,
        });
        let cfg = SolverConfig::default();
        let report = solve(&p, &cfg).unwrap();
        assert_eq!(report.status, SolveStatus::Converged);
        assert!(report.max_violation <= cfg.tol_con);
        assert!((report.controls[0] - 0.5).abs() <= 2.0 * cfg.tol_con);
    }

    #[test]
    fn equality_constraint_pins_control() {
        let mut p = lqr_problem();
        p.constraints.stage_mut(0).equalities.push(EqualityConstraint::ControlEquals {
            value: 0.25,
        });
        let cfg = SolverConfig::default();
        let report = solve(&p, &cfg).unwrap();
        assert_eq!(report.status, SolveStatus::Converged);
        assert!((report.controls[0] - 0.25).abs() <= 2.0 * cfg.tol_con);
    }

    #[test]
    fn no_references_returns_zero_controls_immediately() {
        let p = simple_problem(0.1);
        let report = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(report.status, SolveStatus::Converged);
        assert_eq!(report.inner_iterations, 0);
        for u in &report.controls {
            assert_eq!(*u, 0.0);
        }
        assert_relative_eq!(report.cost, 0.0);
    }

    #[test]
    fn merit_descends_within_each_outer_iteration() {
        let mut p = lqr_problem();
        p.references.ee_ref = Some(LinkPose::from_translation(v(0.8, 0.3, 0.4)));
        p.constraints.stage_mut(0).inequalities.push(InequalityConstraint::ControlUpper {
            limit: 0.5,
        });
        let cfg = SolverConfig {
            record_trace: true,
            ..SolverConfig::default()
        };
        let report = solve(&p, &cfg).unwrap();
        assert!(!report.trace.is_empty());
        for pair in report.trace.windows(2) {
            if pair[0].outer == pair[1].outer {
                assert!(
                    pair[1].merit < pair[0].merit + 1e-12,
                    "merit rose within outer iteration {}",
                    pair[0].outer
                );
            }
        }
    }

    #[test]
    fn solve_is_bitwise_deterministic() {
        let mut p = lqr_problem();
        p.references.ee_ref = Some(LinkPose::from_translation(v(0.8, 0.3, 0.4)));
        p.constraints.stage_mut(0).inequalities.push(InequalityConstraint::ControlUpper {
            limit: 0.5,
        });
        let a = solve(&p, &SolverConfig::default()).unwrap();
        let b = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(a.controls.len(), b.controls.len());
        for (x, y) in a.controls.iter().zip(&b.controls) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(a.cost.to_bits(), b.cost.to_bits());
    }

    #[test]
    fn nan_controls_report_numerical_failure() {
        let mut p = lqr_problem();
        p.initial_controls[0] = f64::NAN;
        let report = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(report.status, SolveStatus::NumericalFailure);
    }

    #[test]
    fn structural_errors_are_hard_errors() {
        let mut p = lqr_problem();
        p.initial_controls.pop();
        assert!(solve(&p, &SolverConfig::default()).is_err());
        let mut p = lqr_problem();
        p.dt = 0.0;
        assert!(solve(&p, &SolverConfig::default()).is_err());
    }

    #[test]
    fn penalty_grows_only_when_violation_stalls() {
        // Directly exercise the update rule used by the outer loop.
        let beta = 10.0f64;
        let mut mu = 1.0f64;
        let prev = 1.0f64;
        let v_slow = 0.5f64;
        if v_slow > prev / 4.0 {
            mu = (mu * beta).min(MU_MAX);
        }
        assert_relative_eq!(mu, 10.0);
        let mut mu2 = 1.0f64;
        let v_fast = 0.2f64;
        if v_fast > prev / 4.0 {
            mu2 = (mu2 * beta).min(MU_MAX);
        }
        assert_relative_eq!(mu2, 1.0);
    }
}
