//! Depth rendering from virtual cameras and per-point contact labels.
//!
//! Cameras follow the computer-vision convention: `x` right, `y` down, `z`
//! forward. Rendered points are expressed in the camera frame and `z` equals
//! the depth along the optical axis.

use std::collections::HashMap;

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::GraspSet;
use crate::collide::ray_mesh;
use crate::geometry::{symmetric_grasp, GraspPose, GripperModel, Vec3};
use crate::mesh::{Aabb, TriangleMesh};
use crate::scene::SceneGeometry;
use crate::{Error, Result};

pub const DEFAULT_RADIUS: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            fx: 200.0,
            fy: 200.0,
            cx: 80.0,
            cy: 60.0,
            width: 160,
            height: 120,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VirtualCamera {
    /// Camera-to-world transform.
    pub pose: Isometry3<f64>,
    pub intrinsics: Intrinsics,
}

impl VirtualCamera {
    pub fn new(pose: Isometry3<f64>, intrinsics: Intrinsics) -> Result<Self> {
        let k = &intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) || k.width == 0 || k.height == 0 {
            return Err(Error::InvalidDims(format!(
                "camera fx={} fy={} resolution {}x{}",
                k.fx, k.fy, k.width, k.height
            )));
        }
        Ok(Self { pose, intrinsics })
    }

    /// Camera at `eye` looking at `target` with image "up" towards world `+z`.
    pub fn look_at(eye: Vec3, target: Vec3, intrinsics: Intrinsics) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-9 {
            return Err(Error::DegenerateInput("camera eye equals target".into()));
        }
        let forward = forward.normalize();
        let mut right = forward.cross(&Vec3::z());
        if right.norm() < 1e-9 {
            right = forward.cross(&Vec3::x());
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[right, down, forward]));
        Self::new(
            Isometry3::from_parts(Translation3::from(eye), UnitQuaternion::from_rotation_matrix(&rotation)),
            intrinsics,
        )
    }

    /// Un-normalized camera-frame ray through the center of pixel `(u, v)`, with unit `z`.
    pub fn pixel_ray(&self, u: usize, v: usize) -> Vec3 {
        let k = &self.intrinsics;
        Vec3::new(
            (u as f64 + 0.5 - k.cx) / k.fx,
            (v as f64 + 0.5 - k.cy) / k.fy,
            1.0,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSampling {
    pub elevation_min_rad: f64,
    pub elevation_max_rad: f64,
    pub radius_min_m: f64,
    pub radius_max_m: f64,
}

impl Default for CameraSampling {
    fn default() -> Self {
        Self {
            elevation_min_rad: 20f64.to_radians(),
            elevation_max_rad: 70f64.to_radians(),
            radius_min_m: 0.7,
            radius_max_m: 1.2,
        }
    }
}

/// Random camera on a spherical cap above `target`.
pub fn sample_camera<R: Rng>(
    target: Vec3,
    sampling: &CameraSampling,
    intrinsics: Intrinsics,
    rng: &mut R,
) -> Result<VirtualCamera> {
    let elevation = rng.random_range(sampling.elevation_min_rad..=sampling.elevation_max_rad);
    let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
    let radius = rng.random_range(sampling.radius_min_m..=sampling.radius_max_m);
    let dir = Vec3::new(
        elevation.cos() * azimuth.cos(),
        elevation.cos() * azimuth.sin(),
        elevation.sin(),
    );
    VirtualCamera::look_at(target + radius * dir, target, intrinsics)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    /// Object segment per point; `0` is the table.
    pub segments: Vec<i32>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            segments: indices.iter().map(|&i| self.segments[i]).collect(),
        }
    }
}

fn table_mesh(half: f64) -> TriangleMesh {
    let vertices = vec![
        Vec3::new(-half, -half, 0.0),
        Vec3::new(half, -half, 0.0),
        Vec3::new(half, half, 0.0),
        Vec3::new(-half, half, 0.0),
    ];
    TriangleMesh {
        vertices,
        triangles: vec![[0, 1, 2], [0, 2, 3]],
        normals: None,
    }
}

/// Casts one ray per pixel and keeps the nearest hit. Pixels are emitted in
/// row-major order.
pub fn render_depth(scene: &SceneGeometry, camera: &VirtualCamera) -> Result<PointCloud> {
    let table = table_mesh(scene.table_half_extent);
    let table_bounds = table.aabb().inflated(1e-9);
    let mut targets: Vec<(i32, &TriangleMesh, Aabb)> = vec![(0, &table, table_bounds)];
    targets.extend(scene.objects.iter().map(|o| (o.segment, &o.mesh, o.bounds.inflated(1e-9))));
    let k = camera.intrinsics;
    let origin = camera.pose.translation.vector;
    let rows: Vec<Vec<(Vec3, i32)>> = (0..k.height)
        .into_par_iter()
        .map(|v| {
            let mut row = Vec::new();
            for u in 0..k.width {
                let ray = camera.pixel_ray(u, v);
                let dir = camera.pose.rotation * ray;
                let mut best: Option<(f64, i32)> = None;
                for (segment, mesh, bounds) in &targets {
                    let t_max = best.map_or(f64::INFINITY, |b| b.0);
                    if let Some((t, _)) = ray_mesh(mesh, bounds, &origin, &dir, 0.0, t_max) {
                        best = Some((t, *segment));
                    }
                }
                if let Some((t, segment)) = best {
                    row.push((ray * t, segment));
                }
            }
            row
        })
        .collect();
    let (points, segments): (Vec<_>, Vec<_>) = rows.into_iter().flatten().unzip();
    if points.is_empty() {
        return Err(Error::EmptyView);
    }
    Ok(PointCloud { points, segments })
}

/// Rendered points with the ground-truth grasp assigned to each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledPointCloud {
    pub points: Vec<Vec3>,
    pub segments: Vec<i32>,
    pub success: Vec<u8>,
    /// Index into the scene grasp set, `-1` for negatives.
    pub grasp_index: Vec<i32>,
    /// `true` when the point matched the grasp's right contact; the stored
    /// rotation is then the flipped one.
    pub flipped: Vec<bool>,
    pub widths: Vec<f64>,
    pub rotations: Vec<Matrix3<f64>>,
    pub translations: Vec<Vec3>,
}

impl LabeledPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.success[i] == 1)
    }

    pub fn assigned_pose(&self, i: usize) -> Option<GraspPose> {
        (self.success[i] == 1).then(|| GraspPose {
            rotation: crate::geometry::RotationMatrix::new(self.rotations[i])
                .expect("labels store orthonormal rotations"),
            translation: self.translations[i],
            width: self.widths[i],
        })
    }

    pub fn cloud(&self) -> PointCloud {
        PointCloud {
            points: self.points.clone(),
            segments: self.segments.clone(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> LabeledPointCloud {
        fn pick<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
            idx.iter().map(|&i| v[i].clone()).collect()
        }
        LabeledPointCloud {
            points: pick(&self.points, indices),
            segments: pick(&self.segments, indices),
            success: pick(&self.success, indices),
            grasp_index: pick(&self.grasp_index, indices),
            flipped: pick(&self.flipped, indices),
            widths: pick(&self.widths, indices),
            rotations: pick(&self.rotations, indices),
            translations: pick(&self.translations, indices),
        }
    }
}

/// Uniform hash grid over points with cell size equal to the query radius,
/// so every neighbor within the radius lies in the 27 surrounding cells.
pub struct VoxelGrid {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl VoxelGrid {
    pub fn new(points: &[Vec3], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, cells }
    }

    fn key(p: &Vec3, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    /// Nearest stored point strictly closer than the cell size; ties go to the
    /// lowest index.
    pub fn nearest(&self, points: &[Vec3], q: &Vec3) -> Option<(usize, f64)> {
        let (kx, ky, kz) = Self::key(q, self.cell);
        let mut best: Option<(usize, f64)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = self.cells.get(&(kx + dx, ky + dy, kz + dz)) else {
                        continue;
                    };
                    for &j in bucket {
                        let d = (points[j] - q).norm();
                        if d < self.cell && best.is_none_or(|(bj, bd)| d < bd || (d == bd && j < bj)) {
                            best = Some((j, d));
                        }
                    }
                }
            }
        }
        best
    }
}

/// Contacts in the order used for nearest-contact ties: grasp by grasp,
/// left before right.
pub fn contact_list(grasps: &GraspSet) -> Vec<Vec3> {
    grasps
        .grasps
        .iter()
        .flat_map(|g| [g.contact_left, g.contact_right])
        .collect()
}

/// The grasp `g` re-rooted at `p`: same rotation and width, translation
/// moved so the left contact sits on `p`.
pub fn reroot(g: &GraspPose, p: &Vec3, gripper: &GripperModel) -> Vec3 {
    p + g.width / 2.0 * g.baseline() + gripper.base_offset_m * g.approach()
}

/// Labels each point with the nearest ground-truth contact within `radius`.
/// `grasps` must be in the cloud's frame.
pub fn label_contacts(
    cloud: &PointCloud,
    grasps: &GraspSet,
    radius: f64,
    gripper: &GripperModel,
) -> LabeledPointCloud {
    let contacts = contact_list(grasps);
    let grid = VoxelGrid::new(&contacts, radius);
    let labels: Vec<_> = cloud
        .points
        .par_iter()
        .map(|p| {
            grid.nearest(&contacts, p).map(|(c, _)| {
                let j = c / 2;
                let flipped = c % 2 == 1;
                let g = &grasps.grasps[j].pose;
                let g = if flipped { symmetric_grasp(g) } else { g.clone() };
                (j as i32, flipped, *g.rotation.matrix(), reroot(&g, p, gripper), g.width)
            })
        })
        .collect();
    let n = cloud.len();
    let mut out = LabeledPointCloud {
        points: cloud.points.clone(),
        segments: cloud.segments.clone(),
        success: Vec::with_capacity(n),
        grasp_index: Vec::with_capacity(n),
        flipped: Vec::with_capacity(n),
        widths: Vec::with_capacity(n),
        rotations: Vec::with_capacity(n),
        translations: Vec::with_capacity(n),
    };
    for (p, label) in cloud.points.iter().zip(labels) {
        match label {
            Some((j, flipped, r, t, w)) => {
                out.success.push(1);
                out.grasp_index.push(j);
                out.flipped.push(flipped);
                out.rotations.push(r);
                out.translations.push(t);
                out.widths.push(w);
            }
            None => {
                out.success.push(0);
                out.grasp_index.push(-1);
                out.flipped.push(false);
                out.rotations.push(Matrix3::identity());
                out.translations.push(*p);
                out.widths.push(0.0);
            }
        }
    }
    out
}

/// I.i.d. Gaussian jitter on every coordinate.
pub fn augment_noise<R: Rng>(points: &[Vec3], sigma: f64, rng: &mut R) -> Vec<Vec3> {
    if sigma <= 0.0 {
        return points.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    points
        .iter()
        .map(|p| p + Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng)))
        .collect()
}

/// Subtracts the centroid; adding the returned mean back restores the input.
pub fn center_cloud(points: &[Vec3]) -> (Vec<Vec3>, Vec3) {
    if points.is_empty() {
        return (Vec::new(), Vec3::zeros());
    }
    let mean = points.iter().sum::<Vec3>() / points.len() as f64;
    (points.iter().map(|p| p - mean).collect(), mean)
}

/// `n` uniformly chosen indices; without replacement when the cloud is large
/// enough, otherwise every index followed by random repeats.
pub fn subsample_indices<R: Rng>(len: usize, n: usize, rng: &mut R) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    if len >= n {
        let mut idx = rand::seq::index::sample(rng, len, n).into_vec();
        idx.sort_unstable();
        idx
    } else {
        let mut idx: Vec<usize> = (0..len).collect();
        idx.extend((len..n).map(|_| rng.random_range(0..len)));
        idx
    }
}

/// World-to-camera transform of a camera.
pub fn world_to_camera(camera: &VirtualCamera) -> Isometry3<f64> {
    camera.pose.inverse()
}

pub fn to_world(camera: &VirtualCamera, p: &Vec3) -> Vec3 {
    camera.pose.transform_point(&Point3::from(*p)).coords
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::AnnotatedGrasp;
    use crate::geometry::{contact_from_grasp, RotationMatrix};
    use crate::rng::stream;
    use crate::scene::WorldObject;

    fn empty_scene(half: f64) -> SceneGeometry {
        SceneGeometry {
            objects: Vec::new(),
            table_half_extent: half,
        }
    }

    #[test]
    fn head_on_plane_has_constant_depth() {
        let cam = VirtualCamera::look_at(Vec3::new(0.0, 0.0, 0.8), Vec3::zeros(), Intrinsics::default()).unwrap();
        let cloud = render_depth(&empty_scene(5.0), &cam).unwrap();
        assert_eq!(cloud.len(), 160 * 120);
        for p in &cloud.points {
            assert!((p.z - 0.8).abs() < 1e-9);
        }
    }

    #[test]
    fn occluded_object_is_invisible() {
        let cube = |c: Vec3, s: f64, seg: i32| {
            let m = crate::mesh::make_primitive(crate::mesh::PrimitiveKind::Box, [s; 3], 8)
                .unwrap()
                .transformed(&Isometry3::translation(c.x, c.y, c.z), 1.0);
            WorldObject {
                segment: seg,
                bounds: m.aabb(),
                mesh: m,
            }
        };
        let scene = SceneGeometry {
            objects: vec![
                cube(Vec3::new(0.0, 0.0, 0.1), 0.2, 1),
                cube(Vec3::new(0.0, 0.0, -0.3), 0.02, 2),
            ],
            table_half_extent: 0.05,
        };
        let cam = VirtualCamera::look_at(Vec3::new(0.0, 0.0, 1.0), Vec3::zeros(), Intrinsics::default()).unwrap();
        let cloud = render_depth(&scene, &cam).unwrap();
        assert!(cloud.segments.iter().all(|&s| s != 2));
        assert!(cloud.segments.contains(&1));
        assert!(cloud.len() <= 160 * 120);
    }

    #[test]
    fn camera_facing_away_sees_nothing() {
        let cam = VirtualCamera::look_at(Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, 2.0), Intrinsics::default())
            .unwrap();
        assert!(matches!(render_depth(&empty_scene(0.3), &cam), Err(Error::EmptyView)));
    }

    #[test]
    fn look_at_frame_is_right_handed() {
        let mut rng = stream(3, "cam", 0);
        for _ in 0..20 {
            let cam = sample_camera(Vec3::zeros(), &CameraSampling::default(), Intrinsics::default(), &mut rng).unwrap();
            let r = cam.pose.rotation.to_rotation_matrix();
            assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
            let fwd = cam.pose.rotation * Vec3::z();
            let to_target = (-cam.pose.translation.vector).normalize();
            assert!((fwd - to_target).norm() < 1e-12);
            assert!(cam.pose.translation.vector.z > 0.0);
        }
    }

    fn one_grasp_set() -> (GraspSet, GripperModel) {
        let g = GripperModel::default();
        let pose = GraspPose {
            rotation: RotationMatrix::identity(),
            translation: Vec3::new(0.0, 0.0, 0.2),
            width: 0.04,
        };
        let set = GraspSet {
            scene_id: 0,
            friction_mu: 0.8,
            grasps: vec![AnnotatedGrasp::new(pose, 1.0, 1, &g)],
        };
        (set, g)
    }

    #[test]
    fn strict_radius() {
        let (set, g) = one_grasp_set();
        let c = set.grasps[0].contact_left;
        let cloud = PointCloud {
            points: vec![
                c + Vec3::new(0.004, 0.0, 0.0),
                c + Vec3::new(0.0, -0.006, 0.0),
                set.grasps[0].contact_right + Vec3::new(0.0, 0.0, 0.001),
            ],
            segments: vec![1, 1, 1],
        };
        let l = label_contacts(&cloud, &set, DEFAULT_RADIUS, &g);
        assert_eq!(l.success, vec![1, 0, 1]);
        assert_eq!(l.grasp_index, vec![0, -1, 0]);
        assert_eq!(l.flipped, vec![false, false, true]);
        for i in l.positives().collect::<Vec<_>>() {
            let pose = l.assigned_pose(i).unwrap();
            assert!((contact_from_grasp(&pose, &g).contact - l.points[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn noise_statistics() {
        let pts = vec![Vec3::zeros(); 100_000];
        assert_eq!(augment_noise(&pts, 0.0, &mut stream(1, "n", 0)), pts);
        let a = augment_noise(&pts, 0.01, &mut stream(1, "n", 0));
        let b = augment_noise(&pts, 0.01, &mut stream(1, "n", 0));
        assert_eq!(a, b);
        for axis in 0..3 {
            let var = a.iter().map(|p| p[axis] * p[axis]).sum::<f64>() / a.len() as f64;
            assert!((var.sqrt() / 0.01 - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn centering_round_trip() {
        let pts = vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 2.0), Vec3::new(0.3, 0.1, 0.0)];
        let (c, mean) = center_cloud(&pts);
        assert!(c.iter().sum::<Vec3>().norm() < 1e-12);
        for (a, b) in c.iter().zip(&pts) {
            assert!((a + mean - b).norm() < 1e-15);
        }
        let (single, _) = center_cloud(&pts[..1]);
        assert_eq!(single[0], Vec3::zeros());
    }

    #[test]
    fn subsample_shapes() {
        let mut rng = stream(0, "s", 0);
        let a = subsample_indices(100, 30, &mut rng);
        assert_eq!(a.len(), 30);
        let mut d = a.clone();
        d.dedup();
        assert_eq!(d.len(), 30);
        let b = subsample_indices(10, 30, &mut rng);
        assert_eq!(b.len(), 30);
        assert!(b.iter().all(|&i| i < 10));
    }
}
