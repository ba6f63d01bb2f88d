//! Ground-truth grasps from an antipodal sampling oracle.
//!
//! For each object, surface points are sampled and a ray is cast straight
//! into the object along the inward normal to find the opposing contact.
//! Pairs that fit in the gripper and lie inside both friction cones are
//! expanded into equispaced approach directions around the baseline and
//! kept when the open fingers touch neither any object nor the table and
//! closing them pinches the same object.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collide::{ray_mesh, Obb};
use crate::geometry::{
    any_orthogonal, contact_from_grasp, grasp_from_contact, symmetric_grasp, ContactGraspParams, GraspPose,
    GripperModel, Vec3,
};
use crate::rng::stream;
use crate::scene::SceneGeometry;
use crate::{Error, Result};

pub const DEFAULT_FRICTION: f64 = 0.8;
/// Contacts closer than this do not define a baseline.
const MIN_WIDTH: f64 = 1e-4;

/// Angles between the contact line and each inward normal, radians.
pub fn cone_angles(p1: &Vec3, p2: &Vec3, n1: &Vec3, n2: &Vec3) -> Option<(f64, f64)> {
    let d = p2 - p1;
    if d.norm() < 1e-12 || n1.norm() < 1e-12 || n2.norm() < 1e-12 {
        return None;
    }
    let angle = |u: &Vec3, v: &Vec3| u.cross(v).norm().atan2(u.dot(v));
    Some((angle(&d, &-n1), angle(&-d, &-n2)))
}

/// Whether the segment `p1 → p2` lies inside both friction cones of
/// half-angle `atan(mu)` around the inward normals.
pub fn is_antipodal(p1: &Vec3, p2: &Vec3, n1: &Vec3, n2: &Vec3, mu: f64) -> bool {
    let limit = mu.atan();
    cone_angles(p1, p2, n1, n2).is_some_and(|(a1, a2)| a1 <= limit && a2 <= limit)
}

/// Open-gripper collision test against every object mesh and the table.
pub fn gripper_collides(scene: &SceneGeometry, gripper: &GripperModel, pose: &GraspPose, open_width: f64) -> bool {
    gripper.finger_boxes(open_width).iter().any(|local| {
        let obb = Obb::from_local(pose, local);
        if obb.below_table() {
            return true;
        }
        let bb = obb.aabb();
        scene
            .objects
            .iter()
            .any(|o| o.bounds.intersects(&bb) && obb.collides_with_mesh(&o.mesh, &o.bounds))
    })
}

/// Contacts found by closing both fingers from full opening along the
/// baseline: `(segment, point, outward normal)` per finger. `None` when a
/// finger reaches the other one without touching anything.
pub fn closing_contacts(
    scene: &SceneGeometry,
    gripper: &GripperModel,
    pose: &GraspPose,
) -> Option<[(i32, Vec3, Vec3); 2]> {
    let b = pose.baseline();
    let center = pose.translation - gripper.base_offset_m * pose.approach();
    let half = gripper.max_width_m / 2.0;
    let cast = |origin: Vec3, dir: Vec3| -> Option<(i32, Vec3, Vec3)> {
        let mut best: Option<(f64, i32, Vec3)> = None;
        for o in &scene.objects {
            let limit = best.map_or(gripper.max_width_m, |h| h.0);
            if let Some((t, tri)) = ray_mesh(&o.mesh, &o.bounds, &origin, &dir, 0.0, limit) {
                best = Some((t, o.segment, o.mesh.normal(tri)));
            }
        }
        if dir.z.abs() > 1e-12 {
            let t = -origin.z / dir.z;
            let p = origin + t * dir;
            let e = scene.table_half_extent;
            if t >= 0.0 && best.is_none_or(|h| t < h.0) && t <= gripper.max_width_m && p.x.abs() <= e && p.y.abs() <= e {
                best = Some((t, 0, Vec3::z()));
            }
        }
        best.map(|(t, s, n)| (s, origin + t * dir, n))
    };
    let left = cast(center - half * b, b)?;
    let right = cast(center + half * b, -b)?;
    Some([left, right])
}

/// The success oracle: the open gripper is collision-free and closing it
/// pinches one object between two contacts inside both friction cones.
pub fn grasp_succeeds(scene: &SceneGeometry, gripper: &GripperModel, pose: &GraspPose, mu: f64) -> bool {
    if gripper_collides(scene, gripper, pose, gripper.max_width_m) {
        return false;
    }
    let Some([(s1, p1, n1), (s2, p2, n2)]) = closing_contacts(scene, gripper, pose) else {
        return false;
    };
    s1 == s2 && s1 > 0 && (p2 - p1).norm() <= gripper.max_width_m && is_antipodal(&p1, &p2, &n1, &n2, mu)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedGrasp {
    pub pose: GraspPose,
    pub contact_left: Vec3,
    pub contact_right: Vec3,
    pub quality: f64,
    /// Segment id of the grasped object.
    pub object: i32,
}

impl AnnotatedGrasp {
    pub fn new(pose: GraspPose, quality: f64, object: i32, gripper: &GripperModel) -> Self {
        let left = contact_from_grasp(&pose, gripper).contact;
        let right = contact_from_grasp(&symmetric_grasp(&pose), gripper).contact;
        Self {
            pose,
            contact_left: left,
            contact_right: right,
            quality,
            object,
        }
    }

    pub fn transformed(&self, iso: &nalgebra::Isometry3<f64>) -> Self {
        let p = |v: &Vec3| iso.transform_point(&nalgebra::Point3::from(*v)).coords;
        Self {
            pose: self.pose.transformed(iso),
            contact_left: p(&self.contact_left),
            contact_right: p(&self.contact_right),
            quality: self.quality,
            object: self.object,
        }
    }
}

/// `(left, right)` contacts of a ground-truth grasp.
pub fn grasp_contacts(g: &AnnotatedGrasp) -> (Vec3, Vec3) {
    (g.contact_left, g.contact_right)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraspSet {
    pub scene_id: u64,
    pub friction_mu: f64,
    pub grasps: Vec<AnnotatedGrasp>,
}

impl GraspSet {
    pub fn transformed(&self, iso: &nalgebra::Isometry3<f64>) -> GraspSet {
        GraspSet {
            scene_id: self.scene_id,
            friction_mu: self.friction_mu,
            grasps: self.grasps.iter().map(|g| g.transformed(iso)).collect(),
        }
    }

    pub fn to_file(&self) -> GraspSetFile {
        GraspSetFile {
            scene: self.scene_id,
            mu: self.friction_mu,
            grasps: self
                .grasps
                .iter()
                .map(|g| GraspRecord {
                    pose: g.pose.to_row_major(),
                    width: g.pose.width,
                    contacts: [g.contact_left.into(), g.contact_right.into()],
                    quality: g.quality,
                    object: g.object,
                })
                .collect(),
        }
    }

    pub fn from_file(file: &GraspSetFile) -> Result<GraspSet> {
        let grasps = file
            .grasps
            .iter()
            .map(|r| {
                if !r.width.is_finite() || r.width < 0.0 {
                    return Err(Error::format("grasp set", format!("bad width {}", r.width)));
                }
                Ok(AnnotatedGrasp {
                    pose: GraspPose::from_row_major(&r.pose, r.width)?,
                    contact_left: r.contacts[0].into(),
                    contact_right: r.contacts[1].into(),
                    quality: r.quality,
                    object: r.object,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GraspSet {
            scene_id: file.scene,
            friction_mu: file.mu,
            grasps,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspRecord {
    pub pose: [f64; 16],
    pub width: f64,
    pub contacts: [[f64; 3]; 2],
    pub quality: f64,
    pub object: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspSetFile {
    pub scene: u64,
    pub mu: f64,
    pub grasps: Vec<GraspRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationParams {
    /// Surface samples per object.
    pub samples_per_object: usize,
    pub approaches_per_pair: usize,
    pub friction_mu: f64,
}

impl Default for AnnotationParams {
    fn default() -> Self {
        Self {
            samples_per_object: 500,
            approaches_per_pair: 8,
            friction_mu: DEFAULT_FRICTION,
        }
    }
}

/// Samples ground-truth grasps for every object of a scene. Objects are
/// processed in parallel, each with its own random stream.
pub fn sample_grasps(
    scene: &SceneGeometry,
    gripper: &GripperModel,
    params: &AnnotationParams,
    scene_id: u64,
    seed: u64,
) -> GraspSet {
    let per_object: Vec<Vec<AnnotatedGrasp>> = scene
        .objects
        .par_iter()
        .enumerate()
        .map(|(i, _)| sample_object(scene, i, gripper, params, seed))
        .collect();
    GraspSet {
        scene_id,
        friction_mu: params.friction_mu,
        grasps: per_object.into_iter().flatten().collect(),
    }
}

fn sample_object(
    scene: &SceneGeometry,
    index: usize,
    gripper: &GripperModel,
    params: &AnnotationParams,
    seed: u64,
) -> Vec<AnnotatedGrasp> {
    let object = &scene.objects[index];
    let mut rng = stream(seed, "annotate", index as u64);
    let limit = params.friction_mu.atan();
    let samples = object.mesh.sample_surface(&mut rng, params.samples_per_object);
    let mut out = Vec::new();
    for (p1, n1) in samples {
        // drawn unconditionally so the accepted set only grows with mu
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let b = -n1;
        let Some((t, tri)) = ray_mesh(&object.mesh, &object.bounds, &p1, &b, 1e-9, gripper.max_width_m + 1e-9)
        else {
            continue;
        };
        if t < MIN_WIDTH {
            continue;
        }
        let width = t.min(gripper.max_width_m);
        let p2 = p1 + t * b;
        let n2 = object.mesh.normal(tri);
        let Some((a1, a2)) = cone_angles(&p1, &p2, &n1, &n2) else {
            continue;
        };
        if a1 > limit || a2 > limit {
            continue;
        }
        let quality = (1.0 - a1.max(a2) / limit).clamp(0.0, 1.0);
        let u = any_orthogonal(&b);
        let v = b.cross(&u);
        for k in 0..params.approaches_per_pair {
            let theta = phase + std::f64::consts::TAU * k as f64 / params.approaches_per_pair as f64;
            let a = theta.cos() * u + theta.sin() * v;
            let a = (a - a.dot(&b) * b).normalize();
            let Ok(c) = ContactGraspParams::new(p1, nalgebra::Unit::new_unchecked(b), nalgebra::Unit::new_unchecked(a), width)
            else {
                continue;
            };
            let Ok(pose) = grasp_from_contact(&c, gripper) else {
                continue;
            };
            if !grasp_succeeds(scene, gripper, &pose, params.friction_mu) {
                continue;
            }
            out.push(AnnotatedGrasp::new(pose, quality, object.segment, gripper));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_primitive, PrimitiveKind};
    use crate::scene::WorldObject;
    use nalgebra::{Isometry3, Translation3};

    fn lone(kind: PrimitiveKind, dims: [f64; 3], at: Vec3) -> SceneGeometry {
        let mesh = make_primitive(kind, dims, 16)
            .unwrap()
            .transformed(&Isometry3::from_parts(Translation3::from(at), Default::default()), 1.0);
        SceneGeometry {
            objects: vec![WorldObject {
                segment: 1,
                bounds: mesh.aabb(),
                mesh,
            }],
            table_half_extent: 0.3,
        }
    }

    #[test]
    fn box_faces() {
        let n = Vec3::z();
        assert!(is_antipodal(&Vec3::zeros(), &Vec3::new(0.0, 0.0, -1.0), &n, &-n, 0.5));
        let p1 = Vec3::new(0.0, 0.0, 1.0);
        let p2 = Vec3::new(1.0, 0.0, 0.0);
        assert!(!is_antipodal(&p1, &p2, &Vec3::z(), &Vec3::x(), 0.5));
    }

    #[test]
    fn sphere_diameters() {
        let mut rng = stream(4, "t", 0);
        for _ in 0..100 {
            let n = Vec3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                .normalize();
            assert!(is_antipodal(&n, &-n, &n, &-n, 1e-3));
        }
    }

    #[test]
    fn five_cm_cube() {
        let g = GripperModel::default();
        let scene = lone(PrimitiveKind::Box, [0.05; 3], Vec3::new(0.0, 0.0, 0.025));
        let set = sample_grasps(&scene, &g, &AnnotationParams::default(), 0, 1);
        assert!(!set.grasps.is_empty());
        for gr in &set.grasps {
            assert!((gr.pose.width - 0.05).abs() < 1e-6);
            assert!(((gr.contact_left - gr.contact_right).norm() - gr.pose.width).abs() < 1e-6);
            assert!(grasp_succeeds(&scene, &g, &gr.pose, 0.8));
        }
    }

    #[test]
    fn thick_box_has_no_face_pairs() {
        let scene = lone(PrimitiveKind::Box, [0.1, 0.1, 0.1], Vec3::new(0.0, 0.0, 0.05));
        let set = sample_grasps(&scene, &GripperModel::default(), &AnnotationParams::default(), 0, 1);
        assert!(set.grasps.is_empty());
    }

    #[test]
    fn contacts_swap_under_flip() {
        let g = GripperModel::default();
        let scene = lone(PrimitiveKind::Cylinder, [0.04, 0.04, 0.08], Vec3::new(0.0, 0.0, 0.04));
        let set = sample_grasps(&scene, &g, &AnnotationParams::default(), 0, 2);
        for gr in set.grasps.iter().take(50) {
            let flipped = AnnotatedGrasp::new(symmetric_grasp(&gr.pose), gr.quality, 1, &g);
            assert!((flipped.contact_left - gr.contact_right).norm() < 1e-12);
            assert!((flipped.contact_right - gr.contact_left).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_width_contacts_coincide() {
        let g = GripperModel::default();
        let pose = GraspPose {
            rotation: crate::geometry::RotationMatrix::identity(),
            translation: Vec3::new(0.1, 0.2, 0.3),
            width: 0.0,
        };
        let a = AnnotatedGrasp::new(pose, 1.0, 1, &g);
        let (l, r) = grasp_contacts(&a);
        assert_eq!(l, r);
    }

    #[test]
    fn monotone_in_friction() {
        let g = GripperModel::default();
        let scene = lone(PrimitiveKind::CappedMug, [0.09, 0.06, 0.08], Vec3::new(0.0, 0.0, 0.04));
        let mut last = 0;
        for mu in [0.05, 0.2, 0.5, 0.8, 1.5] {
            let p = AnnotationParams {
                friction_mu: mu,
                samples_per_object: 60,
                ..AnnotationParams::default()
            };
            let n = sample_grasps(&scene, &g, &p, 0, 3).grasps.len();
            assert!(n >= last, "mu {mu}: {n} < {last}");
            last = n;
        }
    }

    #[test]
    fn file_round_trip() {
        let g = GripperModel::default();
        let scene = lone(PrimitiveKind::Box, [0.04, 0.05, 0.06], Vec3::new(0.0, 0.0, 0.03));
        let set = sample_grasps(&scene, &g, &AnnotationParams::default(), 5, 1);
        let json = serde_json::to_string(&set.to_file()).unwrap();
        let back = GraspSet::from_file(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.grasps.len(), set.grasps.len());
        assert_eq!(back.scene_id, 5);
    }
}
