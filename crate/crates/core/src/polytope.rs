//! Small halfspace-polytope utilities shared by free-region extraction and
//! ground-truth collision checking.
//!
//! Everything here targets *tiny* systems (a few dozen halfspaces, 3-D
//! points), so deterministic basis enumeration beats a general LP solver:
//! no pivoting rules, no degeneracy heuristics, bitwise-reproducible output.

use crate::{cast, Error, Real, Result};
use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

/// One halfspace `normal . x <= offset` with unit normal, world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Halfspace<S> {
    pub normal: Vector3<S>,
    pub offset: S,
}

impl<S: Real> Halfspace<S> {
    /// Signed violation at `x`: positive outside, negative inside.
    pub fn violation(&self, x: &Vector3<S>) -> S {
        self.normal.dot(x) - self.offset
    }
}

/// Largest inscribed-sphere center (Chebyshev center) of the polyhedron
/// `{x : n_i . x <= b_i}`, found by enumerating 4-constraint bases of the
/// LP `max r s.t. n_i . x + r <= b_i`.
///
/// Returns `(center, radius)`. The radius is negative when the system is
/// infeasible (the returned point is then the least-violating one) and the
/// result is `None` only when no nonsingular basis exists (degenerate or
/// unbounded input). Ties between optimal bases are resolved by averaging
/// the distinct optimal vertices, so symmetric inputs get their symmetric
/// center back.
pub fn chebyshev_center<S: Real>(planes: &[Halfspace<S>]) -> Option<(Vector3<S>, S)> {
    if planes.len() < 4 {
        return None;
    }
    let feas_tol = cast::<S>(1e-9);
    let mut best_r: Option<S> = None;
    let mut optima: Vec<Vector4<S>> = Vec::new();
    let n = planes.len();
    for a in 0..n {
        for b in (a + 1)..n {
            for c in (b + 1)..n {
                for d in (c + 1)..n {
                    let idx = [a, b, c, d];
                    let mut m = Matrix4::<S>::zeros();
                    let mut rhs = Vector4::<S>::zeros();
                    for (row, &i) in idx.iter().enumerate() {
                        m[(row, 0)] = planes[i].normal.x;
                        m[(row, 1)] = planes[i].normal.y;
                        m[(row, 2)] = planes[i].normal.z;
                        m[(row, 3)] = S::one();
                        rhs[row] = planes[i].offset;
                    }
                    if m.determinant().abs() < cast(1e-10) {
                        continue;
                    }
                    let Some(sol) = m.lu().solve(&rhs) else {
                        continue;
                    };
                    let x = Vector3::new(sol[0], sol[1], sol[2]);
                    let r = sol[3];
                    let feasible = planes
                        .iter()
                        .all(|p| p.normal.dot(&x) + r <= p.offset + feas_tol);
                    if !feasible {
                        continue;
                    }
                    match best_r {
                        Some(br) if r < br - feas_tol => {}
                        Some(br) if r > br + feas_tol => {
                            best_r = Some(r);
                            optima.clear();
                            optima.push(sol);
                        }
                        Some(_) => optima.push(sol),
                        None => {
                            best_r = Some(r);
                            optima.push(sol);
                        }
                    }
                }
            }
        }
    }
    let best_r = best_r?;
    // Average distinct optimal vertices; for a unique optimum this is a
    // no-op, for an optimal face it returns the face's vertex barycenter.
    let mut distinct: Vec<Vector4<S>> = Vec::new();
    for v in &optima {
        if !distinct
            .iter()
            .any(|u| (u - v).norm() < cast::<S>(1e-7) * (S::one() + v.norm()))
        {
            distinct.push(*v);
        }
    }
    let mut acc = Vector4::<S>::zeros();
    for v in &distinct {
        acc += *v;
    }
    acc /= cast::<S>(distinct.len() as f64);
    Some((Vector3::new(acc[0], acc[1], acc[2]), best_r))
}

/// All vertices of the bounded polyhedron `{x : n_i . x <= b_i}` by
/// 3-constraint basis enumeration, deduplicated.
pub fn vertices<S: Real>(planes: &[Halfspace<S>]) -> Vec<Vector3<S>> {
    let feas_tol = cast::<S>(1e-9);
    let mut out: Vec<Vector3<S>> = Vec::new();
    let n = planes.len();
    for a in 0..n {
        for b in (a + 1)..n {
            for c in (b + 1)..n {
                let m = Matrix3::from_rows(&[
                    planes[a].normal.transpose(),
                    planes[b].normal.transpose(),
                    planes[c].normal.transpose(),
                ]);
                if m.determinant().abs() < cast(1e-10) {
                    continue;
                }
                let rhs = Vector3::new(planes[a].offset, planes[b].offset, planes[c].offset);
                let Some(x) = m.lu().solve(&rhs) else {
                    continue;
                };
                let scale = S::one() + x.norm();
                if planes
                    .iter()
                    .all(|p| p.violation(&x) <= feas_tol * scale)
                    && !out
                        .iter()
                        .any(|u| (u - x).norm() < cast::<S>(1e-7) * scale)
                {
                    out.push(x);
                }
            }
        }
    }
    out
}

/// Supporting planes (H-representation) of the convex hull of `points`,
/// found by brute-force triple enumeration. Requires at least 4 points in
/// general position (a full-dimensional hull).
pub fn hull_planes<S: Real>(points: &[Vector3<S>]) -> Result<Vec<Halfspace<S>>> {
    if points.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "convex hull needs at least 4 points, got {}",
            points.len()
        )));
    }
    let scale = points
        .iter()
        .fold(S::one(), |acc, p| acc.max(p.norm()));
    let side_tol = cast::<S>(1e-9) * scale;
    let mut out: Vec<Halfspace<S>> = Vec::new();
    let n = points.len();
    for a in 0..n {
        for b in (a + 1)..n {
            for c in (b + 1)..n {
                let cross = (points[b] - points[a]).cross(&(points[c] - points[a]));
                let cn = cross.norm();
                if cn < cast::<S>(1e-12) * scale * scale {
                    continue;
                }
                let normal = cross / cn;
                for dir in [S::one(), -S::one()] {
                    let nrm = normal * dir;
                    let b0 = nrm.dot(&points[a]);
                    if points.iter().all(|p| nrm.dot(p) <= b0 + side_tol) {
                        // Supporting plane: use the tight offset.
                        let offset = points
                            .iter()
                            .fold(nrm.dot(&points[a]), |acc, p| acc.max(nrm.dot(p)));
                        let dup = out.iter().any(|h| {
                            h.normal.dot(&nrm) > S::one() - cast(1e-9)
                                && (h.offset - offset).abs() < cast::<S>(1e-9) * (S::one() + scale)
                        });
                        if !dup {
                            out.push(Halfspace {
                                normal: nrm,
                                offset,
                            });
                        }
                    }
                }
            }
        }
    }
    if out.len() < 4 {
        return Err(Error::InvalidInput(
            "points are degenerate: convex hull is not full-dimensional".into(),
        ));
    }
    Ok(out)
}
