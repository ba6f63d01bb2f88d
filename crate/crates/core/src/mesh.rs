//! Triangle meshes and the procedural primitive catalog.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use nalgebra::{Isometry3, Point3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::{Error, Result};

/// Smallest admissible triangle area, m².
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| self.min[i] <= p[i] && p[i] <= self.max[i])
    }

    pub fn inflated(&self, margin: f64) -> Aabb {
        Aabb {
            min: self.min.add_scalar(-margin),
            max: self.max.add_scalar(margin),
        }
    }

    /// Slab test; returns the entry parameter if the ray hits within `t_max`.
    pub fn ray_entry(&self, origin: &Vec3, dir: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for i in 0..3 {
            let inv = 1.0 / dir[i];
            let mut a = (self.min[i] - origin[i]) * inv;
            let mut b = (self.max[i] - origin[i]) * inv;
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            // NaN from 0 * inf leaves the bounds untouched
            if a > t0 {
                t0 = a;
            }
            if b < t1 {
                t1 = b;
            }
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    /// Outward unit normal per triangle.
    pub normals: Option<Vec<Vec3>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrimitiveKind {
    Box,
    Cylinder,
    CappedMug,
    LBracket,
}

/// Builds a watertight, outward-oriented primitive whose bounding box is
/// centered at the origin with extents `dims` (x, y, z).
///
/// Cylinders and mugs stand along z; the mug handle sticks out along +x.
/// The L-bracket is an L profile in the x–z plane extruded along y; its two
/// plates are a fifth of the z and x extents thick.
pub fn make_primitive(kind: PrimitiveKind, dims: [f64; 3], resolution: usize) -> Result<TriangleMesh> {
    if dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::InvalidDims(format!("{dims:?} must be positive and finite")));
    }
    if resolution < 8 {
        return Err(Error::InvalidDims(format!("resolution {resolution} < 8")));
    }
    let mut mesh = match kind {
        PrimitiveKind::Box => unit_box(),
        PrimitiveKind::Cylinder => cylinder(resolution),
        PrimitiveKind::CappedMug => {
            if dims[0] <= dims[1] {
                return Err(Error::InvalidDims(format!(
                    "mug x extent {} must exceed its body diameter {}",
                    dims[0], dims[1]
                )));
            }
            capped_mug(resolution)
        }
        PrimitiveKind::LBracket => l_bracket(),
    };
    mesh.fit_to_extents(&Vec3::from(dims));
    mesh.orient_outward();
    mesh.compute_normals();
    Ok(mesh)
}

fn unit_box() -> TriangleMesh {
    let mut vertices = Vec::with_capacity(8);
    for i in 0..8 {
        vertices.push(Vec3::new(
            if i & 1 == 0 { -0.5 } else { 0.5 },
            if i & 2 == 0 { -0.5 } else { 0.5 },
            if i & 4 == 0 { -0.5 } else { 0.5 },
        ));
    }
    let quads = [
        [0, 2, 3, 1],
        [4, 5, 7, 6],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 4, 6, 2],
        [1, 3, 7, 5],
    ];
    let mut triangles = Vec::with_capacity(12);
    for q in quads {
        triangles.push([q[0], q[1], q[2]]);
        triangles.push([q[0], q[2], q[3]]);
    }
    TriangleMesh {
        vertices,
        triangles,
        normals: None,
    }
}

/// Closed side wall plus fan caps; rows `0..=rows` stacked along z.
struct Prism {
    mesh: TriangleMesh,
    segments: usize,
}

impl Prism {
    fn new(segments: usize, rows: usize) -> Self {
        let mut vertices = Vec::new();
        let offset = -std::f64::consts::PI / segments as f64;
        for k in 0..=rows {
            let z = -0.5 + k as f64 / rows as f64;
            for j in 0..segments {
                let th = offset + 2.0 * std::f64::consts::PI * j as f64 / segments as f64;
                vertices.push(Vec3::new(0.5 * th.cos(), 0.5 * th.sin(), z));
            }
        }
        let bottom = vertices.len();
        vertices.push(Vec3::new(0.0, 0.0, -0.5));
        vertices.push(Vec3::new(0.0, 0.0, 0.5));
        let mut triangles = Vec::new();
        for j in 0..segments {
            let jn = (j + 1) % segments;
            triangles.push([bottom, jn, j]);
            triangles.push([bottom + 1, rows * segments + j, rows * segments + jn]);
        }
        Prism {
            mesh: TriangleMesh {
                vertices,
                triangles,
                normals: None,
            },
            segments,
        }
    }

    fn ring(&self, k: usize, j: usize) -> usize {
        k * self.segments + j % self.segments
    }

    fn side_quad(&mut self, k: usize, j: usize) {
        let q = [
            self.ring(k, j),
            self.ring(k, j + 1),
            self.ring(k + 1, j + 1),
            self.ring(k + 1, j),
        ];
        self.mesh.triangles.push([q[0], q[1], q[2]]);
        self.mesh.triangles.push([q[0], q[2], q[3]]);
    }
}

fn cylinder(segments: usize) -> TriangleMesh {
    let mut p = Prism::new(segments, 1);
    for j in 0..segments {
        p.side_quad(0, j);
    }
    p.mesh
}

/// Solid capped cylinder with a handle bridging two wall quads of segment 0.
/// The handle is a square-section tube swept along a semicircle in the x–z
/// plane, which makes the surface genus 1.
fn capped_mug(segments: usize) -> TriangleMesh {
    const ROWS: usize = 8;
    const TOP: usize = 5;
    const BOTTOM: usize = 2;
    const SWEEP: usize = 8;

    let mut p = Prism::new(segments, ROWS);
    for k in 0..ROWS {
        for j in 0..segments {
            if j == 0 && (k == TOP || k == BOTTOM) {
                continue;
            }
            p.side_quad(k, j);
        }
    }

    let half_angle = std::f64::consts::PI / segments as f64;
    let wall = 0.5 * half_angle.cos();
    let row_h = 1.0 / ROWS as f64;
    let z_of = |k: usize| -0.5 + k as f64 * row_h;
    let z_top = z_of(TOP) + 0.5 * row_h;
    let z_bot = z_of(BOTTOM) + 0.5 * row_h;
    let z_c = 0.5 * (z_top + z_bot);
    let rho = 0.5 * (z_top - z_bot);
    let half_h = 0.5 * row_h;
    let half_w = 0.5 * half_angle.sin();

    // corner order: (-y,-n), (+y,-n), (+y,+n), (-y,+n)
    let signs = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let mut sections: Vec<[usize; 4]> = Vec::with_capacity(SWEEP + 1);
    sections.push([
        p.ring(TOP, 0),
        p.ring(TOP, 1),
        p.ring(TOP + 1, 1),
        p.ring(TOP + 1, 0),
    ]);
    for s in 1..SWEEP {
        let phi = std::f64::consts::FRAC_PI_2 - std::f64::consts::PI * s as f64 / SWEEP as f64;
        let mut sec = [0usize; 4];
        for (c, (sy, sn)) in signs.iter().enumerate() {
            let r = rho + sn * half_h;
            sec[c] = p.mesh.vertices.len();
            p.mesh
                .vertices
                .push(Vec3::new(wall + r * phi.cos(), sy * half_w, z_c + r * phi.sin()));
        }
        sections.push(sec);
    }
    sections.push([
        p.ring(BOTTOM + 1, 0),
        p.ring(BOTTOM + 1, 1),
        p.ring(BOTTOM, 1),
        p.ring(BOTTOM, 0),
    ]);
    for w in sections.windows(2) {
        for c in 0..4 {
            let cn = (c + 1) % 4;
            p.mesh.triangles.push([w[0][c], w[0][cn], w[1][cn]]);
            p.mesh.triangles.push([w[0][c], w[1][cn], w[1][c]]);
        }
    }
    p.mesh
}

fn l_bracket() -> TriangleMesh {
    // profile in x-z, unit bounding square; thickness 0.2
    let t = 0.2;
    let profile = [
        (0.0, 0.0),
        (1.0, 0.0),
        (1.0, t),
        (t, t),
        (t, 1.0),
        (0.0, 1.0),
    ];
    let mut vertices = Vec::with_capacity(12);
    for y in [0.0, 1.0] {
        for (x, z) in profile {
            vertices.push(Vec3::new(x, y, z));
        }
    }
    let mut triangles = Vec::new();
    // fan from the reflex corner (index 3)
    for (a, b) in [(4, 5), (5, 0), (0, 1), (1, 2)] {
        triangles.push([3, a, b]);
        triangles.push([9, 6 + b, 6 + a]);
    }
    for i in 0..6 {
        let j = (i + 1) % 6;
        triangles.push([i, j, 6 + j]);
        triangles.push([i, 6 + j, 6 + i]);
    }
    TriangleMesh {
        vertices,
        triangles,
        normals: None,
    }
}

impl TriangleMesh {
    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[i];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized `(v1 - v0) × (v2 - v0)`.
    pub fn triangle_cross(&self, i: usize) -> Vec3 {
        let [a, b, c] = self.triangle(i);
        (b - a).cross(&(c - a))
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        0.5 * self.triangle_cross(i).norm()
    }

    pub fn normal(&self, i: usize) -> Vec3 {
        match &self.normals {
            Some(n) => n[i],
            None => self.triangle_cross(i).normalize(),
        }
    }

    pub fn compute_normals(&mut self) {
        let normals = (0..self.triangles.len())
            .map(|i| self.triangle_cross(i).normalize())
            .collect();
        self.normals = Some(normals);
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    /// Divergence-theorem volume; positive for outward orientation.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|&[a, b, c]| {
                self.vertices[a].dot(&self.vertices[b].cross(&self.vertices[c])) / 6.0
            })
            .sum()
    }

    /// Center of mass of the enclosed solid (uniform density).
    pub fn volume_centroid(&self) -> Vec3 {
        let mut acc = Vec3::zeros();
        let mut vol = 0.0;
        for &[a, b, c] in &self.triangles {
            let (p, q, r) = (self.vertices[a], self.vertices[b], self.vertices[c]);
            let v = p.dot(&q.cross(&r)) / 6.0;
            vol += v;
            acc += v * (p + q + r) / 4.0;
        }
        acc / vol
    }

    fn undirected_edges(&self) -> HashMap<(usize, usize), Vec<usize>> {
        let mut edges: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                edges.entry((a.min(b), a.max(b))).or_default().push(t);
            }
        }
        edges
    }

    pub fn euler_characteristic(&self) -> i64 {
        let used: std::collections::HashSet<usize> = self.triangles.iter().flatten().copied().collect();
        used.len() as i64 - self.undirected_edges().len() as i64 + self.triangles.len() as i64
    }

    /// Every directed edge is matched by exactly one reversed edge.
    pub fn is_watertight(&self) -> bool {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                *directed.entry((tri[k], tri[(k + 1) % 3])).or_default() += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    pub fn indices_valid(&self) -> bool {
        self.triangles
            .iter()
            .flatten()
            .all(|&i| i < self.vertices.len())
    }

    pub fn min_triangle_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|i| self.triangle_area(i))
            .fold(f64::INFINITY, f64::min)
    }

    /// Makes winding consistent across shared edges, then flips everything
    /// if the enclosed volume comes out negative.
    fn orient_outward(&mut self) {
        let edges = self.undirected_edges();
        let n = self.triangles.len();
        let mut seen = vec![false; n];
        let has_directed = |tri: &[usize; 3], a: usize, b: usize| {
            (0..3).any(|k| tri[k] == a && tri[(k + 1) % 3] == b)
        };
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(t) = queue.pop_front() {
                let tri = self.triangles[t];
                for k in 0..3 {
                    let (a, b) = (tri[k], tri[(k + 1) % 3]);
                    for &u in &edges[&(a.min(b), a.max(b))] {
                        if seen[u] {
                            continue;
                        }
                        if has_directed(&self.triangles[u], a, b) {
                            self.triangles[u].swap(1, 2);
                        }
                        seen[u] = true;
                        queue.push_back(u);
                    }
                }
            }
        }
        if self.signed_volume() < 0.0 {
            for tri in &mut self.triangles {
                tri.swap(1, 2);
            }
        }
    }

    /// Scales and translates so the bounding box is centered at the origin
    /// with the given extents.
    fn fit_to_extents(&mut self, extents: &Vec3) {
        let bb = self.aabb();
        let c = bb.center();
        let e = bb.extents();
        for v in &mut self.vertices {
            *v = (*v - c).component_mul(extents).component_div(&e);
        }
    }

    /// `p ↦ iso · (scale · p)`.
    pub fn transformed(&self, iso: &Isometry3<f64>, scale: f64) -> TriangleMesh {
        let vertices = self
            .vertices
            .iter()
            .map(|v| iso.transform_point(&Point3::from(v * scale)).coords)
            .collect();
        let normals = self
            .normals
            .as_ref()
            .map(|ns| ns.iter().map(|n| iso.rotation * n).collect());
        TriangleMesh {
            vertices,
            triangles: self.triangles.clone(),
            normals,
        }
    }

    /// Area-weighted uniform surface samples: `(point, outward normal)`.
    pub fn sample_surface<R: Rng>(&self, rng: &mut R, count: usize) -> Vec<(Vec3, Vec3)> {
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for i in 0..self.triangles.len() {
            total += self.triangle_area(i);
            cumulative.push(total);
        }
        (0..count)
            .map(|_| {
                let pick = rng.random::<f64>() * total;
                let t = cumulative
                    .partition_point(|&c| c <= pick)
                    .min(self.triangles.len() - 1);
                let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                let [a, b, c] = self.triangle(t);
                (a + u * (b - a) + v * (c - a), self.normal(t))
            })
            .collect()
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for [a, b, c] in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", a + 1, b + 1, c + 1);
        }
        s
    }

    pub fn from_obj(text: &str) -> Result<TriangleMesh> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            let bad = |what: &str| Error::format("OBJ", format!("line {}: {what}", line_no + 1));
            match it.next() {
                Some("v") => {
                    let xyz: Vec<f64> = it
                        .take(3)
                        .map(|t| t.parse::<f64>().map_err(|_| bad("bad vertex")))
                        .collect::<Result<_>>()?;
                    if xyz.len() != 3 {
                        return Err(bad("vertex needs 3 coordinates"));
                    }
                    vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = it
                        .map(|t| {
                            t.split('/')
                                .next()
                                .and_then(|s| s.parse::<usize>().ok())
                                .filter(|&i| i >= 1)
                                .map(|i| i - 1)
                                .ok_or_else(|| bad("bad face index"))
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() < 3 {
                        return Err(bad("face needs 3 indices"));
                    }
                    for k in 1..idx.len() - 1 {
                        triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        let mut mesh = TriangleMesh {
            vertices,
            triangles,
            normals: None,
        };
        if !mesh.indices_valid() {
            return Err(Error::format("OBJ", "face index out of range"));
        }
        mesh.compute_normals();
        Ok(mesh)
    }
}
