//! Convex free regions carved out of obstacle point clouds.
//!
//! A region is a bounded polytope `{x : F (x - center) <= g}` with unit face
//! normals and strictly positive offsets, so the stored center is always
//! interior and the scaled region `{x : F (x - center) <= alpha g}` grows
//! monotonically in `alpha`. Extraction seeds a world-axis-aligned box
//! around a link's skeleton segment and clips it by one halfspace per
//! offending cloud point (nearest-violation clipping) until no point is
//! strictly inside, then recenters on the interior Chebyshev center.

use crate::polytope::{chebyshev_center, vertices, Halfspace};
use crate::{cast, Error, Real, Result};
use nalgebra::Vector3;
use std::fmt::Write as _;

/// Obstacle surface samples in world coordinates.
#[derive(Debug, Clone, Default)]
pub struct ObstacleCloud<S> {
    pub points: Vec<Vector3<S>>,
}

impl<S: Real> ObstacleCloud<S> {
    pub fn new(points: Vec<Vector3<S>>) -> Self {
        ObstacleCloud { points }
    }

    /// Points within `radius` of `center` (inclusive), original order kept.
    pub fn filter_radius(&self, center: &Vector3<S>, radius: S) -> ObstacleCloud<S> {
        ObstacleCloud {
            points: self
                .points
                .iter()
                .filter(|p| (*p - center).norm() <= radius)
                .copied()
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// World-frame endpoints of a link midline; `a == b` degenerates to a point
/// seed (used for the base).
#[derive(Debug, Clone, Copy)]
pub struct SkeletonSegment<S> {
    pub a: Vector3<S>,
    pub b: Vector3<S>,
}

impl<S: Real> SkeletonSegment<S> {
    pub fn point(p: Vector3<S>) -> Self {
        SkeletonSegment { a: p, b: p }
    }

    pub fn midpoint(&self) -> Vector3<S> {
        (self.a + self.b) * cast::<S>(0.5)
    }

    fn closest_point(&self, x: &Vector3<S>) -> Vector3<S> {
        let d = self.b - self.a;
        let nn = d.norm_squared();
        if nn < cast(1e-18) {
            return self.a;
        }
        let t = ((x - self.a).dot(&d) / nn).clamp(S::zero(), S::one());
        self.a + d * t
    }
}

/// Bounded convex polytope `{x : F (x - center) <= g}`, unit row normals,
/// offsets strictly positive.
#[derive(Debug, Clone)]
pub struct FreeRegion<S> {
    normals: Vec<Vector3<S>>,
    offsets: Vec<S>,
    center: Vector3<S>,
}

impl<S: Real> FreeRegion<S> {
    /// Validates unit normals (1e-6 gate, then renormalized), strictly
    /// positive offsets, and at least 4 faces. Boundedness is the caller's
    /// responsibility; regions built by [`seed_box`] and [`extract_region`]
    /// are bounded by construction.
    pub fn new(normals: Vec<Vector3<S>>, offsets: Vec<S>, center: Vector3<S>) -> Result<Self> {
        if normals.len() < 4 {
            return Err(Error::InvalidRegion(format!(
                "{} faces cannot bound a 3-D region",
                normals.len()
            )));
        }
        if normals.len() != offsets.len() {
            return Err(Error::LengthMismatch {
                what: "region offsets",
                got: offsets.len(),
                want: normals.len(),
            });
        }
        let mut unit_normals = Vec::with_capacity(normals.len());
        for n in &normals {
            let len = n.norm();
            if (len - S::one()).abs() > cast(1e-6) {
                return Err(Error::InvalidRegion(format!(
                    "face normal has norm {len:?}, expected unit"
                )));
            }
            unit_normals.push(n / len);
        }
        for g in &offsets {
            if !(*g > S::zero()) {
                return Err(Error::InvalidRegion(format!(
                    "face offset {g:?} is not strictly positive"
                )));
            }
        }
        Ok(FreeRegion {
            normals: unit_normals,
            offsets,
            center,
        })
    }

    pub fn num_faces(&self) -> usize {
        self.normals.len()
    }

    pub fn center(&self) -> &Vector3<S> {
        &self.center
    }

    pub fn normals(&self) -> &[Vector3<S>] {
        &self.normals
    }

    pub fn offsets(&self) -> &[S] {
        &self.offsets
    }

    /// Faces as world-frame halfspaces `n . x <= g + n . center`.
    pub fn world_halfspaces(&self) -> Vec<Halfspace<S>> {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(n, g)| Halfspace {
                normal: *n,
                offset: *g + n.dot(&self.center),
            })
            .collect()
    }

    /// Membership in the region scaled by `alpha` about its center;
    /// boundary counts as contained.
    pub fn contains_point(&self, x: &Vector3<S>, alpha: S) -> bool {
        let rel = x - self.center;
        self.normals
            .iter()
            .zip(&self.offsets)
            .all(|(n, g)| *g * alpha - n.dot(&rel) >= S::zero())
    }

    /// Smallest face slack at `alpha = 1`: positive strictly inside,
    /// negative outside.
    pub fn interior_margin(&self, x: &Vector3<S>) -> S {
        let rel = x - self.center;
        let mut m = S::max_value().unwrap_or_else(S::one);
        for (n, g) in self.normals.iter().zip(&self.offsets) {
            m = m.min(*g - n.dot(&rel));
        }
        m
    }

    /// Region vertices (enumerated; intended for tests and export).
    pub fn vertices(&self) -> Vec<Vector3<S>> {
        vertices(&self.world_halfspaces())
    }

    /// Plain-text record: one center line `cx cy cz`, then one
    /// `nx ny nz g` line per face.
    pub fn to_plain_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:.9} {:.9} {:.9}",
            to_f64(self.center.x),
            to_f64(self.center.y),
            to_f64(self.center.z)
        );
        for (n, g) in self.normals.iter().zip(&self.offsets) {
            let _ = writeln!(
                out,
                "{:.9} {:.9} {:.9} {:.9}",
                to_f64(n.x),
                to_f64(n.y),
                to_f64(n.z),
                to_f64(*g)
            );
        }
        out
    }
}

fn to_f64<S: Real>(v: S) -> f64 {
    num_traits::ToPrimitive::to_f64(&v).unwrap_or(f64::NAN)
}

/// World-axis-aligned box of edge lengths `dims` centered on the segment
/// midpoint. Errors on nonpositive dimensions.
pub fn seed_box<S: Real>(seg: &SkeletonSegment<S>, dims: &Vector3<S>) -> Result<FreeRegion<S>> {
    if !(dims.x > S::zero() && dims.y > S::zero() && dims.z > S::zero()) {
        return Err(Error::InvalidInput(format!(
            "seed box dims must be positive, got {dims:?}"
        )));
    }
    let axes = segment_axes(seg);
    let mut normals = Vec::with_capacity(6);
    let mut offsets = Vec::with_capacity(6);
    for (axis, n) in axes.iter().enumerate() {
        for sign in [S::one(), -S::one()] {
            normals.push(n * sign);
            offsets.push(dims[axis] * cast(0.5));
        }
    }
    FreeRegion::new(normals, offsets, seg.midpoint())
}

/// Orthonormal frame adapted to the segment: the first axis runs along it
/// (`dims.x` spans the segment direction), the other two complete the
/// frame deterministically. Degenerate point segments use the world axes.
fn segment_axes<S: Real>(seg: &SkeletonSegment<S>) -> [Vector3<S>; 3] {
    let d = seg.b - seg.a;
    if d.norm_squared() < cast(1e-18) {
        return [
            Vector3::new(S::one(), S::zero(), S::zero()),
            Vector3::new(S::zero(), S::one(), S::zero()),
            Vector3::new(S::zero(), S::zero(), S::one()),
        ];
    }
    let a0 = d.normalize();
    // Cross with whichever world axis is most orthogonal to the segment.
    let helper = if a0.z.abs() < cast(0.9) {
        Vector3::new(S::zero(), S::zero(), S::one())
    } else {
        Vector3::new(S::one(), S::zero(), S::zero())
    };
    let a1 = a0.cross(&helper).normalize();
    let a2 = a0.cross(&a1);
    [a0, a1, a2]
}

/// Maximum number of clip planes added on top of the seed box before the
/// seed is declared infeasible.
pub const MAX_CLIP_PLANES: usize = 20;

/// Number of faces contributed by the seed box. Regions produced by
/// [`extract_region`] keep the seed faces first, so faces at index
/// `SEED_FACES` and beyond are obstacle-derived clip planes.
pub const SEED_FACES: usize = 6;

/// Carves a convex obstacle-free region around `seg` out of `cloud`.
///
/// Starting from [`seed_box`], the deepest interior cloud point is clipped
/// away by a halfspace whose outward normal points from the segment's
/// closest point toward the offender, placed `margin` inside the offender,
/// until no cloud point is strictly interior. The result keeps both segment
/// endpoints strictly interior, stays inside the seed box, and is recentered
/// on its interior Chebyshev center (all offsets strictly positive).
pub fn extract_region<S: Real>(
    seg: &SkeletonSegment<S>,
    cloud: &ObstacleCloud<S>,
    dims: &Vector3<S>,
    margin: S,
) -> Result<FreeRegion<S>> {
    extract_region_containing(seg, cloud, dims, margin, &[])
}

/// [`extract_region`] with a soft containment set.
///
/// Each clip plane additionally tries to keep every point of `keep` inside:
/// the plane retreats from its margin position, as far as the offending
/// cloud point itself, before it would cut the keep set. Cloud exclusion
/// always wins; a keep point past the offender along the clip normal stays
/// cut. Passing the current link hull vertices keeps a freshly extracted
/// region feasible at the observed pose whenever that pose is genuinely
/// collision-free, which a fixed margin cannot guarantee once the link has
/// legally settled closer to an obstacle than the margin.
pub fn extract_region_containing<S: Real>(
    seg: &SkeletonSegment<S>,
    cloud: &ObstacleCloud<S>,
    dims: &Vector3<S>,
    margin: S,
    keep: &[Vector3<S>],
) -> Result<FreeRegion<S>> {
    if !(margin > S::zero()) {
        return Err(Error::InvalidInput(format!(
            "margin must be positive, got {margin:?}"
        )));
    }
    let seed = seed_box(seg, dims)?;
    let mut faces = seed.world_halfspaces();
    let strict = cast::<S>(1e-12);

    let inside_margin = |faces: &[Halfspace<S>], x: &Vector3<S>| -> S {
        let mut m = S::max_value().unwrap_or_else(S::one);
        for f in faces {
            m = m.min(-f.violation(x));
        }
        m
    };

    let mut added = 0usize;
    loop {
        // Deepest strictly-interior cloud point; first index wins ties.
        let mut deepest: Option<(usize, S)> = None;
        for (i, p) in cloud.points.iter().enumerate() {
            let m = inside_margin(&faces, p);
            if m > strict {
                match deepest {
                    Some((_, best)) if m <= best => {}
                    _ => deepest = Some((i, m)),
                }
            }
        }
        let Some((idx, _)) = deepest else { break };
        if added == MAX_CLIP_PLANES {
            return Err(Error::SeedInfeasible(format!(
                "cloud point still interior after {MAX_CLIP_PLANES} clip planes"
            )));
        }
        let p = cloud.points[idx];
        let cp = seg.closest_point(&p);
        let dir = p - cp;
        let dist = dir.norm();
        if dist <= margin {
            return Err(Error::SeedInfeasible(format!(
                "obstacle point within margin of the skeleton segment (distance {dist:?})"
            )));
        }
        let normal = dir / dist;
        let mut offset = normal.dot(&p) - margin;
        // Retreat toward the offender until the keep set fits, but never
        // past the offender: the region must stay free of cloud points.
        if let Some(support) = keep
            .iter()
            .map(|k| normal.dot(k))
            .fold(None, |acc: Option<S>, v| Some(acc.map_or(v, |a| a.max(v))))
        {
            offset = offset.max(support + cast(1e-9)).min(normal.dot(&p));
        }
        // The shifted plane must keep both endpoints strictly interior.
        if normal.dot(&seg.a) >= offset || normal.dot(&seg.b) >= offset {
            return Err(Error::SeedInfeasible(
                "clip plane would cut the skeleton segment".into(),
            ));
        }
        faces.push(Halfspace { normal, offset });
        added += 1;
    }

    // Recenter on the interior Chebyshev center.
    let (center, radius) = chebyshev_center(&faces).ok_or_else(|| {
        Error::InvalidRegion("degenerate face set after clipping".into())
    })?;
    if !(radius > S::zero()) {
        return Err(Error::SeedInfeasible(
            "clipped region has empty interior".into(),
        ));
    }
    let normals: Vec<_> = faces.iter().map(|f| f.normal).collect();
    let offsets: Vec<_> = faces.iter().map(|f| f.offset - f.normal.dot(&center)).collect();
    FreeRegion::new(normals, offsets, center)
}
