#![allow(dead_code)]

use cgk_core::annotation::GraspSet;
use cgk_core::dataset::{generate_scene, AnnotatedScene, DataConfig};
use cgk_core::geometry::{GraspPose, GripperModel, Vec3};
use cgk_core::mesh::TriangleMesh;
use cgk_core::render::PointCloud;
use cgk_core::scene::{default_catalog, Catalog, SceneGeometry};
use nalgebra::Matrix3;

pub fn catalog() -> Catalog {
    Catalog::build(default_catalog()).unwrap()
}

pub fn scenes(seed: u64, count: u64) -> (DataConfig, Vec<AnnotatedScene>) {
    let config = DataConfig::default();
    let catalog = catalog();
    let scenes = (0..count)
        .map(|i| generate_scene(&catalog, &config, seed, i).unwrap())
        .collect();
    (config, scenes)
}

/// Ray parameter of the hit by solving the 3×3 barycentric system directly.
pub fn ray_hit(origin: &Vec3, dir: &Vec3, tri: &[Vec3; 3]) -> Option<f64> {
    let m = Matrix3::from_columns(&[-dir, tri[1] - tri[0], tri[2] - tri[0]]);
    let x = m.try_inverse()? * (origin - tri[0]);
    let (t, u, v) = (x[0], x[1], x[2]);
    (u >= 0.0 && v >= 0.0 && u + v <= 1.0).then_some(t)
}

pub fn face_normal(tri: &[Vec3; 3]) -> Vec3 {
    (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).normalize()
}

pub fn inside(mesh: &TriangleMesh, p: &Vec3) -> bool {
    let dir = Vec3::new(-0.31, 0.77, -0.56).normalize();
    let hits = (0..mesh.triangles.len())
        .filter(|&t| ray_hit(p, &dir, &mesh.triangle(t)).is_some_and(|s| s > 0.0))
        .count();
    hits % 2 == 1
}

/// Clips the triangle (box coordinates) against the six slabs of the box.
pub fn triangle_meets_box(tri: &[Vec3; 3], half: &Vec3) -> bool {
    let mut poly: Vec<Vec3> = tri.to_vec();
    for axis in 0..3 {
        for sign in [1.0, -1.0] {
            let keep = |p: &Vec3| sign * p[axis] <= half[axis];
            let mut next = Vec::new();
            for i in 0..poly.len() {
                let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
                if keep(&p) {
                    next.push(p);
                }
                if keep(&p) != keep(&q) {
                    let s = (sign * half[axis] - p[axis]) / (q[axis] - p[axis]);
                    next.push(p + s * (q - p));
                }
            }
            poly = next;
            if poly.is_empty() {
                return false;
            }
        }
    }
    true
}

/// Finger boxes of `pose` as `(center, axes, half extents)`.
pub fn finger_boxes(pose: &GraspPose, gripper: &GripperModel) -> Vec<(Vec3, Matrix3<f64>, Vec3)> {
    let r = *pose.rotation.matrix();
    let h = gripper.max_width_m / 2.0;
    let t = gripper.finger_thickness_m;
    let z_lo = -(gripper.base_offset_m + gripper.finger_extension_m);
    let z_hi = -gripper.base_offset_m + gripper.finger_back_m;
    let half = Vec3::new(t / 2.0, gripper.finger_depth_m / 2.0, (z_hi - z_lo) / 2.0);
    [-(h + t / 2.0), h + t / 2.0]
        .iter()
        .map(|&x| {
            let local = Vec3::new(x, 0.0, (z_lo + z_hi) / 2.0);
            (r * local + pose.translation, r, half)
        })
        .collect()
}

pub fn collides(scene: &SceneGeometry, gripper: &GripperModel, pose: &GraspPose) -> bool {
    finger_boxes(pose, gripper).iter().any(|(c, r, half)| {
        for i in 0..8 {
            let s = |bit: usize, k: usize| if i & bit == 0 { -half[k] } else { half[k] };
            let corner = c + r * Vec3::new(s(1, 0), s(2, 1), s(4, 2));
            if corner.z < 0.0 {
                return true;
            }
        }
        scene.objects.iter().any(|o| {
            let hit = (0..o.mesh.triangles.len()).any(|t| {
                let tri = o.mesh.triangle(t).map(|p| r.transpose() * (p - c));
                triangle_meets_box(&tri, half)
            });
            hit || inside(&o.mesh, c)
        })
    })
}

fn cast(scene: &SceneGeometry, origin: &Vec3, dir: &Vec3, reach: f64) -> Option<(i32, Vec3, Vec3)> {
    let mut best: Option<(f64, i32, Vec3)> = None;
    for o in &scene.objects {
        for t in 0..o.mesh.triangles.len() {
            let tri = o.mesh.triangle(t);
            if let Some(s) = ray_hit(origin, dir, &tri) {
                if s > 0.0 && s < reach && best.is_none_or(|b| s < b.0) {
                    best = Some((s, o.segment, face_normal(&tri)));
                }
            }
        }
    }
    let s = -origin.z / dir.z;
    let p = origin + s * dir;
    let e = scene.table_half_extent;
    if s.is_finite() && s >= 0.0 && s <= reach && p.x.abs() <= e && p.y.abs() <= e && best.is_none_or(|b| s < b.0) {
        best = Some((s, 0, Vec3::z()));
    }
    best.map(|(s, seg, n)| (seg, origin + s * dir, n))
}

/// Collision-free open gripper whose closing fingers pinch one object
/// inside both friction cones.
pub fn succeeds(scene: &SceneGeometry, gripper: &GripperModel, pose: &GraspPose, mu: f64) -> bool {
    if collides(scene, gripper, pose) {
        return false;
    }
    let b = pose.baseline();
    let center = pose.translation - gripper.base_offset_m * pose.approach();
    let half = gripper.max_width_m / 2.0;
    let Some((s1, p1, n1)) = cast(scene, &(center - half * b), &b, gripper.max_width_m) else {
        return false;
    };
    let Some((s2, p2, n2)) = cast(scene, &(center + half * b), &-b, gripper.max_width_m) else {
        return false;
    };
    if s1 != s2 || s1 <= 0 || (p2 - p1).norm() > gripper.max_width_m {
        return false;
    }
    let d = p2 - p1;
    if d.norm() < 1e-12 {
        return false;
    }
    let cone = |u: Vec3, n: Vec3| (u.normalize().dot(&n.normalize())).clamp(-1.0, 1.0).acos();
    let limit = mu.atan() + 1e-12;
    cone(d, -n1) <= limit && cone(-d, -n2) <= limit
}

pub struct Label {
    pub grasp: i32,
    pub flipped: bool,
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub width: f64,
}

/// Nearest contact by exhaustive search over every point and every contact.
pub fn label_oracle(cloud: &PointCloud, grasps: &GraspSet, radius: f64, gripper: &GripperModel) -> Vec<Option<Label>> {
    cloud
        .points
        .iter()
        .map(|p| {
            let mut best: Option<(f64, usize, bool)> = None;
            for (j, g) in grasps.grasps.iter().enumerate() {
                for (flipped, c) in [(false, g.contact_left), (true, g.contact_right)] {
                    let d = (p - c).norm();
                    if d < radius && best.is_none_or(|b| d < b.0) {
                        best = Some((d, j, flipped));
                    }
                }
            }
            best.map(|(_, j, flipped)| {
                let pose = &grasps.grasps[j].pose;
                let mut r = *pose.rotation.matrix();
                if flipped {
                    r.column_mut(0).neg_mut();
                    r.column_mut(1).neg_mut();
                }
                let b: Vec3 = r.column(0).into();
                let a: Vec3 = r.column(2).into();
                Label {
                    grasp: j as i32,
                    flipped,
                    rotation: r,
                    translation: p + pose.width / 2.0 * b + gripper.base_offset_m * a,
                    width: pose.width,
                }
            })
        })
        .collect()
}
