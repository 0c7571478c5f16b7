//! Minimal scaling of a free region that contains a posed link hull.
//!
//! For a region `{x : F (x - c) <= g}` and a link hull with local vertices
//! `v_i` placed at pose `(p, R)`, the containment measure is
//!
//! ```text
//! alpha(p, R) = max_{j, i} F_j . (R v_i + p - c) / g_j
//! ```
//!
//! The link is inside the region exactly when `alpha <= 1`. Because the
//! offsets `g_j` are strictly positive and the region is bounded, `alpha`
//! is positively homogeneous in the hull and finite everywhere. The active
//! (face, vertex) pair is an exact certificate, and away from ties the
//! measure is differentiable with
//!
//! ```text
//! d alpha / d p = F_j / g_j
//! d alpha / d w = ((R v_i) x F_j) / g_j    (left rotation perturbation)
//! ```

use crate::free_region::FreeRegion;
use crate::geometry::LinkPose;
use crate::{Error, Real, Result};
use nalgebra::{Matrix6, Vector3, Vector6};

/// Convex collision hull of one link: vertex set in the link-local frame.
///
/// Validated to be full-dimensional (at least 4 non-coplanar vertices) so
/// that containment constrains all six pose degrees of freedom.
#[derive(Debug, Clone)]
pub struct LinkGeometry<S> {
    vertices: Vec<Vector3<S>>,
}

impl<S: Real> LinkGeometry<S> {
    pub fn new(vertices: Vec<Vector3<S>>) -> Result<Self> {
        if vertices.len() < 4 {
            return Err(Error::InvalidInput(format!(
                "link hull needs at least 4 vertices, got {}",
                vertices.len()
            )));
        }
        if !full_dimensional(&vertices) {
            return Err(Error::InvalidInput(
                "link hull vertices are coplanar".into(),
            ));
        }
        Ok(LinkGeometry { vertices })
    }

    /// Axis-aligned cuboid hull spanning `min` to `max` in the link frame.
    pub fn cuboid(min: &Vector3<S>, max: &Vector3<S>) -> Result<Self> {
        if !(max.x > min.x && max.y > min.y && max.z > min.z) {
            return Err(Error::InvalidInput(format!(
                "cuboid hull must have positive extent, got {min:?}..{max:?}"
            )));
        }
        let mut vertices = Vec::with_capacity(8);
        for &x in &[min.x, max.x] {
            for &y in &[min.y, max.y] {
                for &z in &[min.z, max.z] {
                    vertices.push(Vector3::new(x, y, z));
                }
            }
        }
        Ok(LinkGeometry { vertices })
    }

    pub fn vertices(&self) -> &[Vector3<S>] {
        &self.vertices
    }
}

fn full_dimensional<S: Real>(pts: &[Vector3<S>]) -> bool {
    let base = pts[0];
    let tol = crate::cast::<S>(1e-12);
    for i in 1..pts.len() {
        let e1 = pts[i] - base;
        if e1.norm_squared() <= tol {
            continue;
        }
        for j in (i + 1)..pts.len() {
            let e2 = pts[j] - base;
            let n = e1.cross(&e2);
            if n.norm_squared() <= tol {
                continue;
            }
            for k in (j + 1)..pts.len() {
                if n.dot(&(pts[k] - base)).abs() > crate::cast::<S>(1e-9) {
                    return true;
                }
            }
        }
    }
    false
}

/// Result of the exact containment measure: value, active certificate, and
/// the gradient with respect to the link pose tangent `[v; w]`.
#[derive(Debug, Clone)]
pub struct MinScaling<S> {
    pub alpha: S,
    /// Active region face index.
    pub face: usize,
    /// Active hull vertex index.
    pub vertex: usize,
    /// `d alpha / d [v; w]` at the active pair (valid away from ties).
    pub grad: Vector6<S>,
}

/// Exact minimal scaling `alpha` and its certificate.
///
/// Ties resolve to the lowest `(face, vertex)` pair in lexicographic order
/// (faces iterate outermost, updates require a strict increase), which keeps
/// the reported gradient deterministic.
pub fn min_scaling<S: Real>(
    region: &FreeRegion<S>,
    geom: &LinkGeometry<S>,
    pose: &LinkPose<S>,
) -> MinScaling<S> {
    let rot = pose.r.to_rotation_matrix();
    let rel = pose.p - region.center();
    let world: Vec<Vector3<S>> = geom.vertices().iter().map(|v| rot * v + rel).collect();

    let mut best = MinScaling {
        alpha: S::min_value().unwrap_or_else(|| -S::one()),
        face: 0,
        vertex: 0,
        grad: Vector6::zeros(),
    };
    for (j, (n, g)) in region.normals().iter().zip(region.offsets()).enumerate() {
        for (i, x) in world.iter().enumerate() {
            let a = n.dot(x) / *g;
            if a > best.alpha {
                best.alpha = a;
                best.face = j;
                best.vertex = i;
            }
        }
    }

    let n = region.normals()[best.face];
    let g = region.offsets()[best.face];
    let rv = rot * geom.vertices()[best.vertex];
    let grad_p = n / g;
    let grad_w = rv.cross(&n) / g;
    best.grad = Vector6::new(grad_p.x, grad_p.y, grad_p.z, grad_w.x, grad_w.y, grad_w.z);
    best
}

/// Log-sum-exp relaxation of [`min_scaling`] with temperature `tau`:
/// smooth everywhere, upper-bounds the exact value by at most
/// `tau * ln(num_faces * num_vertices)`, and its gradient is the softmax
/// blend of the per-pair gradients. The returned curvature is the
/// Gauss-Newton Hessian, the softmax covariance of the per-pair gradients
/// over `tau`; it is positive semidefinite and captures how sharply the
/// active pair switches, which a rank-one penalty model misses.
pub fn smoothed_scaling<S: Real>(
    region: &FreeRegion<S>,
    geom: &LinkGeometry<S>,
    pose: &LinkPose<S>,
    tau: S,
) -> (S, Vector6<S>, Matrix6<S>) {
    assert!(tau > S::zero(), "temperature must be positive");
    let rot = pose.r.to_rotation_matrix();
    let rel = pose.p - region.center();
    let world: Vec<Vector3<S>> = geom.vertices().iter().map(|v| rot * v + rel).collect();
    let rotated: Vec<Vector3<S>> = geom.vertices().iter().map(|v| rot * v).collect();

    // Max-subtracted log-sum-exp for overflow safety.
    let mut hard = S::min_value().unwrap_or_else(|| -S::one());
    for (n, g) in region.normals().iter().zip(region.offsets()) {
        for x in &world {
            hard = hard.max(n.dot(x) / *g);
        }
    }
    let mut sum = S::zero();
    let mut grad = Vector6::zeros();
    let mut second = Matrix6::zeros();
    for (n, g) in region.normals().iter().zip(region.offsets()) {
        for (x, rv) in world.iter().zip(&rotated) {
            let a = n.dot(x) / *g;
            let w = ((a - hard) / tau).exp();
            sum += w;
            let gp = n / *g;
            let gw = rv.cross(n) / *g;
            let gi = Vector6::new(gp.x, gp.y, gp.z, gw.x, gw.y, gw.z);
            grad += gi * w;
            second += gi * gi.transpose() * w;
        }
    }
    let mean = grad / sum;
    let hess = (second / sum - mean * mean.transpose()) / tau;
    (hard + tau * sum.ln(), mean, hess)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::free_region::{seed_box, SkeletonSegment};
    use crate::geometry::{apply_tangent, PoseTangent, Quat, Transform};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    /// Region with half-extent 1 about the origin; hull cube half 0.5.
    fn unit_setup() -> (FreeRegion<f64>, LinkGeometry<f64>) {
        let region = seed_box(
            &SkeletonSegment::point(v(0.0, 0.0, 0.0)),
            &v(2.0, 2.0, 2.0),
        )
        .unwrap();
        let geom = LinkGeometry::cuboid(&v(-0.5, -0.5, -0.5), &v(0.5, 0.5, 0.5)).unwrap();
        (region, geom)
    }

    fn random_pose(rng: &mut ChaCha8Rng, span: f64) -> LinkPose<f64> {
        let p = v(
            rng.gen_range(-span..span),
            rng.gen_range(-span..span),
            rng.gen_range(-span..span),
        );
        let axis = v(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let r = Quat::from_rotvec(&(axis * rng.gen_range(0.1..1.0)));
        LinkPose::new(p, r)
    }

    /// Independent oracle: bisection on the containment predicate.
    fn alpha_by_bisection(
        region: &FreeRegion<f64>,
        geom: &LinkGeometry<f64>,
        pose: &LinkPose<f64>,
    ) -> f64 {
        let rot = pose.r.to_rotation_matrix();
        let world: Vec<_> = geom
            .vertices()
            .iter()
            .map(|vv| rot * vv + pose.p - region.center())
            .collect();
        let feasible = |alpha: f64| {
            region
                .normals()
                .iter()
                .zip(region.offsets())
                .all(|(n, g)| world.iter().all(|x| n.dot(x) <= alpha * g))
        };
        let mut hi = 1.0;
        while !feasible(hi) {
            hi *= 2.0;
            assert!(hi < 1e9);
        }
        let mut lo = 0.0;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    #[test]
    fn centered_cube_worked_values() {
        let (region, geom) = unit_setup();
        let a0 = min_scaling(&region, &geom, &LinkPose::identity());
        assert_relative_eq!(a0.alpha, 0.5, epsilon = 1e-12);

        let a1 = min_scaling(
            &region,
            &geom,
            &LinkPose::from_translation(v(0.3, 0.0, 0.0)),
        );
        assert_relative_eq!(a1.alpha, 0.8, epsilon = 1e-12);

        let a2 = min_scaling(
            &region,
            &geom,
            &LinkPose::from_translation(v(1.0, 0.0, 0.0)),
        );
        assert_relative_eq!(a2.alpha, 1.5, epsilon = 1e-12);
        // Active face is +x, so the translation gradient is F_j / g_j.
        assert_relative_eq!(
            Vector3::new(a2.grad[0], a2.grad[1], a2.grad[2]),
            v(1.0, 0.0, 0.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn containment_threshold_matches_membership() {
        let (region, geom) = unit_setup();
        let pose = LinkPose::from_translation(v(0.4, 0.2, -0.1));
        let res = min_scaling(&region, &geom, &pose);
        let rot = pose.r.to_rotation_matrix();
        for vv in geom.vertices() {
            let x = rot * vv + pose.p;
            assert!(region.contains_point(&x, res.alpha + 1e-12));
        }
        assert!(!region.contains_point(
            &(rot * geom.vertices()[res.vertex] + pose.p),
            res.alpha - 1e-9
        ));
    }

    #[test]
    fn certificate_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (region, geom) = unit_setup();
        for _ in 0..50 {
            let pose = random_pose(&mut rng, 0.6);
            let res = min_scaling(&region, &geom, &pose);
            let rot = pose.r.to_rotation_matrix();
            let x = rot * geom.vertices()[res.vertex] + pose.p - region.center();
            let lhs = region.normals()[res.face].dot(&x);
            assert_relative_eq!(lhs, res.alpha * region.offsets()[res.face], epsilon = 1e-12);
            // No pair exceeds the certificate value.
            for (n, g) in region.normals().iter().zip(region.offsets()) {
                for vv in geom.vertices() {
                    let y = rot * vv + pose.p - region.center();
                    assert!(n.dot(&y) <= res.alpha * g + 1e-12);
                }
            }
        }
    }

    #[test]
    fn matches_bisection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (region, geom) = unit_setup();
        for _ in 0..100 {
            let pose = random_pose(&mut rng, 0.8);
            let res = min_scaling(&region, &geom, &pose);
            let oracle = alpha_by_bisection(&region, &geom, &pose);
            assert_relative_eq!(res.alpha, oracle, epsilon = 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (region, geom) = unit_setup();
        let h = 1e-6;
        let mut checked = 0;
        'outer: for _ in 0..200 {
            // Random rotations break face/vertex ties almost surely; skip
            // poses where the runner-up pair is within an FD step of active.
            let pose = random_pose(&mut rng, 0.6);
            let res = min_scaling(&region, &geom, &pose);
            let rot = pose.r.to_rotation_matrix();
            for (j, (n, g)) in region.normals().iter().zip(region.offsets()).enumerate() {
                for (i, vv) in geom.vertices().iter().enumerate() {
                    if (j, i) == (res.face, res.vertex) {
                        continue;
                    }
                    let a = n.dot(&(rot * vv + pose.p - region.center())) / g;
                    if res.alpha - a < 1e-4 {
                        continue 'outer;
                    }
                }
            }
            checked += 1;
            for dof in 0..6 {
                let mut t = PoseTangent::zero();
                let mut tv = t.to_vector();
                tv[dof] = h;
                t = PoseTangent::from_vector(&tv);
                let plus = min_scaling(&region, &geom, &apply_tangent(&pose, &t)).alpha;
                tv[dof] = -h;
                t = PoseTangent::from_vector(&tv);
                let minus = min_scaling(&region, &geom, &apply_tangent(&pose, &t)).alpha;
                let fd = (plus - minus) / (2.0 * h);
                assert_relative_eq!(res.grad[dof], fd, epsilon = 1e-6, max_relative = 1e-5);
            }
        }
        assert!(checked > 100, "only {checked} tie-free poses checked");
    }

    #[test]
    fn alpha_is_homogeneous_in_region_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (region, geom) = unit_setup();
        for _ in 0..20 {
            let pose = random_pose(&mut rng, 0.5);
            let scale = rng.gen_range(0.5..3.0);
            let scaled = FreeRegion::new(
                region.normals().to_vec(),
                region.offsets().iter().map(|g| g * scale).collect(),
                *region.center(),
            )
            .unwrap();
            let a = min_scaling(&region, &geom, &pose).alpha;
            let b = min_scaling(&scaled, &geom, &pose).alpha;
            assert_relative_eq!(a, b * scale, epsilon = 1e-12);
        }
    }

    #[test]
    fn alpha_is_rigid_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let (region, geom) = unit_setup();
        for _ in 0..20 {
            let pose = random_pose(&mut rng, 0.5);
            let world = Transform::from_parts(
                random_pose(&mut rng, 0.1).r.to_rotation_matrix(),
                v(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                ),
            )
            .unwrap();
            let rot = world.rot();
            let moved_region = FreeRegion::new(
                region.normals().iter().map(|n| rot * n).collect(),
                region.offsets().to_vec(),
                world.apply(region.center()),
            )
            .unwrap();
            let moved_pose = world.compose(&pose.to_transform()).to_pose();
            let a = min_scaling(&region, &geom, &pose).alpha;
            let b = min_scaling(&moved_region, &geom, &moved_pose).alpha;
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn smoothed_upper_bounds_and_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (region, geom) = unit_setup();
        let pairs = (region.num_faces() * geom.vertices().len()) as f64;
        for _ in 0..20 {
            let pose = random_pose(&mut rng, 0.5);
            let hard = min_scaling(&region, &geom, &pose).alpha;
            for tau in [1e-2, 1e-3, 1e-4] {
                let (soft, _, _) = smoothed_scaling(&region, &geom, &pose, tau);
                assert!(soft >= hard - 1e-12);
                assert!(soft <= hard + tau * pairs.ln() + 1e-12);
            }
        }
    }

    #[test]
    fn smoothed_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let (region, geom) = unit_setup();
        let tau = 1e-2;
        let h = 1e-6;
        for _ in 0..30 {
            let pose = random_pose(&mut rng, 0.5);
            let (_, grad, _) = smoothed_scaling(&region, &geom, &pose, tau);
            for dof in 0..6 {
                let mut tv = PoseTangent::zero().to_vector();
                tv[dof] = h;
                let plus =
                    smoothed_scaling(&region, &geom, &apply_tangent(&pose, &PoseTangent::from_vector(&tv)), tau).0;
                tv[dof] = -h;
                let minus =
                    smoothed_scaling(&region, &geom, &apply_tangent(&pose, &PoseTangent::from_vector(&tv)), tau).0;
                let fd = (plus - minus) / (2.0 * h);
                assert_relative_eq!(grad[dof], fd, epsilon = 1e-6, max_relative = 1e-4);
            }
        }
    }

    #[test]
    fn smoothed_curvature_matches_gradient_differences() {
        // The returned Hessian is the Jacobian of the smoothed gradient in
        // the translation block (rotation rows mix in frame transport, so
        // the check stays on the three translation dofs where the pair
        // gradients are constant).
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (region, geom) = unit_setup();
        let tau = 1e-2;
        let h = 1e-6;
        for _ in 0..20 {
            let pose = random_pose(&mut rng, 0.5);
            let (_, _, hess) = smoothed_scaling(&region, &geom, &pose, tau);
            // Positive semidefinite: no negative Rayleigh quotient along
            // random directions.
            for _ in 0..10 {
                let d = Vector6::from_fn(|_, _| rng.gen_range(-1.0..1.0));
                assert!(d.dot(&(hess * d)) >= -1e-9);
            }
            for dof in 0..3 {
                let mut tv = PoseTangent::zero().to_vector();
                tv[dof] = h;
                let gp = smoothed_scaling(
                    &region,
                    &geom,
                    &apply_tangent(&pose, &PoseTangent::from_vector(&tv)),
                    tau,
                )
                .1;
                tv[dof] = -h;
                let gm = smoothed_scaling(
                    &region,
                    &geom,
                    &apply_tangent(&pose, &PoseTangent::from_vector(&tv)),
                    tau,
                )
                .1;
                let fd = (gp - gm) / (2.0 * h);
                for row in 0..3 {
                    assert_relative_eq!(hess[(row, dof)], fd[row], epsilon = 1e-4, max_relative = 1e-3);
                }
            }
        }
    }

    #[test]
    fn degenerate_hulls_are_rejected() {
        assert!(LinkGeometry::new(vec![v(0.0, 0.0, 0.0); 3]).is_err());
        // Four coplanar points.
        assert!(LinkGeometry::new(vec![
            v(0.0, 0.0, 0.0),
            v(1.0, 0.0, 0.0),
            v(0.0, 1.0, 0.0),
            v(1.0, 1.0, 0.0),
        ])
        .is_err());
        assert!(LinkGeometry::cuboid(&v(0.0, 0.0, 0.0), &v(1.0, 0.0, 1.0)).is_err());
    }
}
