//! Ray casting, box–mesh overlap, convex hull facets and GJK.

use crate::geometry::{GraspPose, LocalBox, Vec3};
use crate::mesh::{Aabb, TriangleMesh};

/// Möller–Trumbore; returns the ray parameter of the hit (both faces).
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, tri: &[Vec3; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-18 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

/// First triangle hit with parameter in `(t_min, t_max)`: `(t, triangle)`.
pub fn ray_mesh(
    mesh: &TriangleMesh,
    bounds: &Aabb,
    origin: &Vec3,
    dir: &Vec3,
    t_min: f64,
    t_max: f64,
) -> Option<(f64, usize)> {
    bounds.ray_entry(origin, dir, t_max)?;
    let mut best: Option<(f64, usize)> = None;
    for t in 0..mesh.triangles.len() {
        if let Some(s) = ray_triangle(origin, dir, &mesh.triangle(t)) {
            if s > t_min && s < t_max && best.is_none_or(|(b, _)| s < b) {
                best = Some((s, t));
            }
        }
    }
    best
}

/// Parity test along a fixed skew direction.
pub fn point_in_mesh(mesh: &TriangleMesh, p: &Vec3) -> bool {
    let dir = Vec3::new(0.577_215_664_9, 0.618_033_988_7, 0.534_522_483_8);
    let crossings = (0..mesh.triangles.len())
        .filter(|&t| ray_triangle(p, &dir, &mesh.triangle(t)).is_some_and(|s| s > 0.0))
        .count();
    crossings % 2 == 1
}

/// Oriented box in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Obb {
    pub center: Vec3,
    /// Unit axes (columns of the box rotation).
    pub axes: [Vec3; 3],
    pub half: Vec3,
}

impl Obb {
    pub fn from_local(grasp: &GraspPose, local: &LocalBox) -> Obb {
        let r = grasp.rotation.matrix();
        Obb {
            center: grasp.transform_point(&local.center()),
            axes: [
                r.column(0).into_owned(),
                r.column(1).into_owned(),
                r.column(2).into_owned(),
            ],
            half: local.half_extents(),
        }
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let mut out = [Vec3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let s = |bit: usize, k: usize| if i & bit == 0 { -self.half[k] } else { self.half[k] };
            *c = self.center + self.axes[0] * s(1, 0) + self.axes[1] * s(2, 1) + self.axes[2] * s(4, 2);
        }
        out
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(&self.corners())
    }

    fn to_local(&self, p: &Vec3) -> Vec3 {
        let d = p - self.center;
        Vec3::new(d.dot(&self.axes[0]), d.dot(&self.axes[1]), d.dot(&self.axes[2]))
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let l = self.to_local(p);
        (0..3).all(|i| l[i].abs() <= self.half[i])
    }

    /// Separating-axis test against one triangle. Touching counts as overlap.
    pub fn overlaps_triangle(&self, tri: &[Vec3; 3]) -> bool {
        let v = tri.map(|p| self.to_local(&p));
        let h = self.half;
        let e = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];
        let separated = |axis: &Vec3| {
            let r = h.x * axis.x.abs() + h.y * axis.y.abs() + h.z * axis.z.abs();
            let p = v.map(|p| p.dot(axis));
            let lo = p[0].min(p[1]).min(p[2]);
            let hi = p[0].max(p[1]).max(p[2]);
            lo > r || hi < -r
        };
        for k in 0..3 {
            let mut axis = Vec3::zeros();
            axis[k] = 1.0;
            if separated(&axis) {
                return false;
            }
        }
        let n = e[0].cross(&e[1]);
        if n.norm_squared() > 0.0 && separated(&n) {
            return false;
        }
        for k in 0..3 {
            for edge in &e {
                let mut unit = Vec3::zeros();
                unit[k] = 1.0;
                let axis = unit.cross(edge);
                if axis.norm_squared() > 1e-30 && separated(&axis) {
                    return false;
                }
            }
        }
        true
    }

    /// Overlap with the solid bounded by `mesh`: surface contact or the box
    /// sitting entirely inside.
    pub fn collides_with_mesh(&self, mesh: &TriangleMesh, bounds: &Aabb) -> bool {
        let bb = self.aabb();
        if !bb.intersects(bounds) {
            return false;
        }
        for t in 0..mesh.triangles.len() {
            let tri = mesh.triangle(t);
            if !Aabb::from_points(&tri).intersects(&bb) {
                continue;
            }
            if self.overlaps_triangle(&tri) {
                return true;
            }
        }
        bounds.contains(&self.center) && point_in_mesh(mesh, &self.center)
    }

    /// Any part of the box strictly below the plane `z = 0`.
    pub fn below_table(&self) -> bool {
        self.corners().iter().any(|c| c.z < 0.0)
    }
}

/// A supporting plane of a convex hull with the hull points lying on it.
#[derive(Clone, Debug, PartialEq)]
pub struct HullFacet {
    /// Outward unit normal.
    pub normal: Vec3,
    /// `normal · p` for points on the facet.
    pub offset: f64,
    pub points: Vec<Vec3>,
}

/// Facets of the convex hull of `points` by exhaustive plane enumeration.
/// Meant for the few hundred vertices of catalog primitives.
pub fn convex_hull_facets(points: &[Vec3]) -> Vec<HullFacet> {
    let scale = Aabb::from_points(points).extents().amax().max(1e-12);
    let tol = 1e-9 * scale;
    let n = points.len();
    let mut facets: Vec<HullFacet> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let raw = (points[j] - points[i]).cross(&(points[k] - points[i]));
                let len = raw.norm();
                if len < 1e-12 * scale * scale {
                    continue;
                }
                let normal = raw / len;
                let offset = normal.dot(&points[i]);
                let (mut above, mut below) = (false, false);
                for p in points {
                    let s = normal.dot(p) - offset;
                    above |= s > tol;
                    below |= s < -tol;
                    if above && below {
                        break;
                    }
                }
                if above && below {
                    continue;
                }
                let (normal, offset) = if above { (-normal, -offset) } else { (normal, offset) };
                if facets
                    .iter()
                    .any(|f| (f.normal - normal).amax() < 1e-7 && (f.offset - offset).abs() < 1e3 * tol)
                {
                    continue;
                }
                let on_plane = points
                    .iter()
                    .filter(|p| (normal.dot(p) - offset).abs() <= tol)
                    .copied()
                    .collect();
                facets.push(HullFacet {
                    normal,
                    offset,
                    points: on_plane,
                });
            }
        }
    }
    facets
}

/// 2-D convex hull (monotone chain), counter-clockwise, collinear points dropped.
pub fn convex_hull_2d(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Signed distance from `p` to the boundary of a CCW convex polygon;
/// positive inside.
pub fn polygon_inset(polygon: &[(f64, f64)], p: (f64, f64)) -> f64 {
    if polygon.len() < 3 {
        return f64::NEG_INFINITY;
    }
    let mut inset = f64::INFINITY;
    for i in 0..polygon.len() {
        let a = polygon[i];
        let b = polygon[(i + 1) % polygon.len()];
        let (ex, ey) = (b.0 - a.0, b.1 - a.1);
        let len = (ex * ex + ey * ey).sqrt();
        let d = (ex * (p.1 - a.1) - ey * (p.0 - a.0)) / len;
        inset = inset.min(d);
    }
    inset
}

fn support(points: &[Vec3], dir: &Vec3) -> Vec3 {
    let mut best = points[0];
    let mut best_dot = best.dot(dir);
    for p in &points[1..] {
        let d = p.dot(dir);
        if d > best_dot {
            best_dot = d;
            best = *p;
        }
    }
    best
}

/// Boolean GJK on the convex hulls of two point sets. Touching counts as
/// intersecting; non-convergence is reported as intersecting.
pub fn convex_hulls_intersect(a: &[Vec3], b: &[Vec3]) -> bool {
    if a.is_empty() || b.is_empty() {
        return false;
    }
    let minkowski = |d: &Vec3| support(a, d) - support(b, &(-d));
    let mut dir = a.iter().sum::<Vec3>() / a.len() as f64 - b.iter().sum::<Vec3>() / b.len() as f64;
    if dir.norm_squared() < 1e-30 {
        dir = Vec3::x();
    }
    let mut simplex: Vec<Vec3> = vec![minkowski(&dir)];
    dir = -simplex[0];
    for _ in 0..64 {
        if dir.norm_squared() < 1e-30 {
            return true;
        }
        let p = minkowski(&dir);
        if p.dot(&dir) < 0.0 {
            return false;
        }
        simplex.push(p);
        if evolve_simplex(&mut simplex, &mut dir) {
            return true;
        }
    }
    true
}

fn triple(a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    a.cross(b).cross(c)
}

fn gjk_line(s: &mut Vec<Vec3>, dir: &mut Vec3) -> bool {
    let (b, a) = (s[0], s[1]);
    let ab = b - a;
    let ao = -a;
    if ab.dot(&ao) > 0.0 {
        *dir = triple(&ab, &ao, &ab);
        if dir.norm_squared() < 1e-30 {
            return true;
        }
    } else {
        *s = vec![a];
        *dir = ao;
    }
    false
}

fn gjk_triangle(s: &mut Vec<Vec3>, dir: &mut Vec3) -> bool {
    let (c, b, a) = (s[0], s[1], s[2]);
    let ab = b - a;
    let ac = c - a;
    let ao = -a;
    let abc = ab.cross(&ac);
    if abc.cross(&ac).dot(&ao) > 0.0 {
        if ac.dot(&ao) > 0.0 {
            *s = vec![c, a];
            *dir = triple(&ac, &ao, &ac);
            return dir.norm_squared() < 1e-30;
        }
        *s = vec![b, a];
        return gjk_line(s, dir);
    }
    if ab.cross(&abc).dot(&ao) > 0.0 {
        *s = vec![b, a];
        return gjk_line(s, dir);
    }
    let side = abc.dot(&ao);
    if side > 0.0 {
        *dir = abc;
    } else if side < 0.0 {
        *s = vec![b, c, a];
        *dir = -abc;
    } else {
        return true;
    }
    false
}

fn gjk_tetrahedron(s: &mut Vec<Vec3>, dir: &mut Vec3) -> bool {
    let (d, c, b, a) = (s[0], s[1], s[2], s[3]);
    let ao = -a;
    let faces = [(c, b, d), (d, c, b), (b, d, c)];
    for (p, q, opposite) in faces {
        let mut n = (q - a).cross(&(p - a));
        if n.dot(&(opposite - a)) > 0.0 {
            n = -n;
        }
        if n.dot(&ao) > 0.0 {
            *s = vec![p, q, a];
            return gjk_triangle(s, dir);
        }
    }
    true
}

fn evolve_simplex(s: &mut Vec<Vec3>, dir: &mut Vec3) -> bool {
    match s.len() {
        2 => gjk_line(s, dir),
        3 => gjk_triangle(s, dir),
        4 => gjk_tetrahedron(s, dir),
        _ => unreachable!("simplex size {}", s.len()),
    }
}
