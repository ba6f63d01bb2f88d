//! The contact grasp representation.
//!
//! A grasp is rooted at a contact point `c` on the object surface. The
//! baseline `b` points from that contact towards the opposing finger, and the
//! approach vector `a` (orthogonal to `b`) points from the contact towards
//! the gripper base, which sits at distance `d` from the baseline:
//!
//! ```text
//! t = c + (w / 2) b + d a        R = [ b | a × b | a ]
//! ```
//!
//! In the gripper frame the fingers therefore lie on the plane `z = -d` and
//! the base frame origin is the gripper base.

use nalgebra::{Isometry3, Matrix3, Matrix4, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type UnitVec3 = Unit<Vector3<f64>>;

/// Tolerance for orthonormality and reconstruction checks.
pub const GEOMETRY_TOL: f64 = 1e-9;
/// Minimum norm accepted by [`orthonormalize`].
pub const DEGENERACY_EPS: f64 = 1e-6;

/// A proper rotation matrix (`RᵀR = I`, `det R = +1`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGrasp("non-finite rotation".into()));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).amax();
        let det = m.determinant();
        if ortho > GEOMETRY_TOL || (det - 1.0).abs() > GEOMETRY_TOL {
            return Err(Error::InvalidGrasp(format!(
                "not a rotation (orthogonality error {ortho:e}, det {det})"
            )));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn from_unit_quaternion(q: &UnitQuaternion<f64>) -> Self {
        Self(q.to_rotation_matrix().into_inner())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn column(&self, i: usize) -> Vec3 {
        self.0.column(i).into_owned()
    }

    /// Largest deviation of `RᵀR` from the identity.
    pub fn orthogonality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).amax()
    }
}

/// A 6-DoF parallel-jaw grasp with its opening width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraspPose {
    pub rotation: RotationMatrix,
    pub translation: Vec3,
    pub width: f64,
}

impl GraspPose {
    pub fn baseline(&self) -> Vec3 {
        self.rotation.column(0)
    }

    pub fn approach(&self) -> Vec3 {
        self.rotation.column(2)
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*self.rotation.matrix());
        Isometry3::from_parts(
            Translation3::from(self.translation),
            UnitQuaternion::from_rotation_matrix(&rot),
        )
    }

    /// Maps a point from the gripper frame into the grasp's parent frame.
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.matrix() * p + self.translation
    }

    /// Re-expresses the grasp in another frame: `frame_to_target * self`.
    pub fn transformed(&self, frame_to_target: &Isometry3<f64>) -> GraspPose {
        let r = frame_to_target.rotation.to_rotation_matrix().into_inner();
        GraspPose {
            rotation: RotationMatrix(r * self.rotation.matrix()),
            translation: frame_to_target.transform_point(&self.translation.into()).coords,
            width: self.width,
        }
    }

    /// Homogeneous 4×4 transform, row-major.
    pub fn to_row_major(&self) -> [f64; 16] {
        let mut h = Matrix4::identity();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        h.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        row_major(&h)
    }

    pub fn from_row_major(m: &[f64; 16], width: f64) -> Result<Self> {
        let h = Matrix4::from_row_slice(m);
        Ok(GraspPose {
            rotation: RotationMatrix::new(h.fixed_view::<3, 3>(0, 0).into_owned())?,
            translation: h.fixed_view::<3, 1>(0, 3).into_owned(),
            width,
        })
    }
}

pub fn row_major(h: &Matrix4<f64>) -> [f64; 16] {
    let mut out = [0.0; 16];
    for r in 0..4 {
        for c in 0..4 {
            out[4 * r + c] = h[(r, c)];
        }
    }
    out
}

pub fn isometry_to_row_major(iso: &Isometry3<f64>) -> [f64; 16] {
    row_major(&iso.to_homogeneous())
}

/// Parses a row-major homogeneous transform. The rotation block must be a
/// proper rotation within [`GEOMETRY_TOL`].
pub fn isometry_from_row_major(m: &[f64; 16]) -> Result<Isometry3<f64>> {
    let h = Matrix4::from_row_slice(m);
    let r = RotationMatrix::new(h.fixed_view::<3, 3>(0, 0).into_owned())?;
    let rot = nalgebra::Rotation3::from_matrix_unchecked(r.0);
    Ok(Isometry3::from_parts(
        Translation3::from(h.fixed_view::<3, 1>(0, 3).into_owned()),
        UnitQuaternion::from_rotation_matrix(&rot),
    ))
}

/// The 4-DoF contact encoding `(c, b, a, w)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactGraspParams {
    pub contact: Vec3,
    pub baseline: UnitVec3,
    pub approach: UnitVec3,
    pub width: f64,
}

impl ContactGraspParams {
    pub fn new(contact: Vec3, baseline: UnitVec3, approach: UnitVec3, width: f64) -> Result<Self> {
        let dot = baseline.dot(&approach);
        if dot.abs() > GEOMETRY_TOL {
            return Err(Error::InvalidGrasp(format!(
                "baseline and approach not orthogonal (dot {dot:e})"
            )));
        }
        Ok(Self {
            contact,
            baseline,
            approach,
            width,
        })
    }
}

/// Axis-aligned box in the gripper frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl LocalBox {
    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn half_extents(&self) -> Vec3 {
        (self.max - self.min) * 0.5
    }
}

/// Parallel-jaw gripper geometry, defaults matching a Franka Panda hand.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GripperModel {
    /// Distance `d` from the baseline to the gripper base, meters.
    pub base_offset_m: f64,
    /// Largest opening width, meters.
    pub max_width_m: f64,
    /// How far the fingertips reach past the baseline, meters.
    pub finger_extension_m: f64,
    /// Finger extent behind the baseline (towards the base), meters.
    pub finger_back_m: f64,
    /// Finger pad thickness along the baseline, meters.
    pub finger_thickness_m: f64,
    /// Finger extent along `a × b`, meters.
    pub finger_depth_m: f64,
}

impl Default for GripperModel {
    fn default() -> Self {
        Self {
            base_offset_m: 0.1034,
            max_width_m: 0.08,
            finger_extension_m: 0.0464,
            finger_back_m: 0.01,
            finger_thickness_m: 0.01,
            finger_depth_m: 0.02,
        }
    }
}

impl GripperModel {
    pub fn base_offset(&self) -> f64 {
        self.base_offset_m
    }

    pub fn max_width(&self) -> f64 {
        self.max_width_m
    }

    /// The five control points in the gripper frame: base, the two baseline
    /// endpoints at full opening, and the two fingertips. The order is
    /// `[base, left, right, left tip, right tip]`, so the 180° flip about the
    /// approach axis swaps entries 1↔2 and 3↔4.
    pub fn control_points(&self) -> [Vec3; 5] {
        let h = self.max_width_m / 2.0;
        let d = self.base_offset_m;
        let tip = d + self.finger_extension_m;
        [
            Vec3::zeros(),
            Vec3::new(-h, 0.0, -d),
            Vec3::new(h, 0.0, -d),
            Vec3::new(-h, 0.0, -tip),
            Vec3::new(h, 0.0, -tip),
        ]
    }

    /// Finger collision boxes (left, right) for the given opening width.
    pub fn finger_boxes(&self, open_width: f64) -> [LocalBox; 2] {
        let h = open_width / 2.0;
        let t = self.finger_thickness_m;
        let y = self.finger_depth_m / 2.0;
        let z_lo = -(self.base_offset_m + self.finger_extension_m);
        let z_hi = -self.base_offset_m + self.finger_back_m;
        [
            LocalBox {
                min: Vec3::new(-h - t, -y, z_lo),
                max: Vec3::new(-h, y, z_hi),
            },
            LocalBox {
                min: Vec3::new(h, -y, z_lo),
                max: Vec3::new(h + t, y, z_hi),
            },
        ]
    }
}

/// Builds the 6-DoF grasp from its contact encoding.
pub fn grasp_from_contact(params: &ContactGraspParams, gripper: &GripperModel) -> Result<GraspPose> {
    let b = params.baseline.into_inner();
    let a = params.approach.into_inner();
    let dot = a.dot(&b);
    if dot.abs() > GEOMETRY_TOL {
        return Err(Error::InvalidGrasp(format!(
            "baseline and approach not orthogonal (dot {dot:e})"
        )));
    }
    if !(0.0..=gripper.max_width_m).contains(&params.width) {
        return Err(Error::WidthOutOfRange {
            width: params.width,
            max_width: gripper.max_width_m,
        });
    }
    let rotation = RotationMatrix::new(Matrix3::from_columns(&[b, a.cross(&b), a]))?;
    let translation = params.contact + params.width / 2.0 * b + gripper.base_offset_m * a;
    Ok(GraspPose {
        rotation,
        translation,
        width: params.width,
    })
}

/// Inverse of [`grasp_from_contact`].
pub fn contact_from_grasp(grasp: &GraspPose, gripper: &GripperModel) -> ContactGraspParams {
    let b = grasp.baseline();
    let a = grasp.approach();
    ContactGraspParams {
        contact: grasp.translation - grasp.width / 2.0 * b - gripper.base_offset_m * a,
        baseline: Unit::new_unchecked(b),
        approach: Unit::new_unchecked(a),
        width: grasp.width,
    }
}

/// How the approach residual is normalized in [`gram_schmidt`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproachNormalizer {
    /// Divide by the residual norm; `a` is exactly unit.
    #[default]
    Residual,
    /// Divide by `‖z2‖`; `a` shrinks when `z2` has a baseline component.
    InputNorm,
}

/// Gram-Schmidt step turning two raw head outputs into `(b, a)`.
pub fn gram_schmidt(z1: &Vec3, z2: &Vec3, normalizer: ApproachNormalizer) -> Result<(Vec3, Vec3)> {
    let n1 = z1.norm();
    if !(n1 > DEGENERACY_EPS) {
        return Err(Error::DegenerateInput(format!("‖z1‖ = {n1:e}")));
    }
    let b = z1 / n1;
    let residual = z2 - b.dot(z2) * b;
    let rn = residual.norm();
    if !(rn > DEGENERACY_EPS) {
        return Err(Error::DegenerateInput(format!(
            "z2 (nearly) parallel to z1, residual norm {rn:e}"
        )));
    }
    let a = match normalizer {
        ApproachNormalizer::Residual => residual / rn,
        ApproachNormalizer::InputNorm => residual / z2.norm(),
    };
    Ok((b, a))
}

/// Returns the unit baseline and approach directions encoded by `(z1, z2)`.
pub fn orthonormalize(z1: &Vec3, z2: &Vec3) -> Result<(UnitVec3, UnitVec3)> {
    let (b, a) = gram_schmidt(z1, z2, ApproachNormalizer::Residual)?;
    Ok((Unit::new_unchecked(b), Unit::new_unchecked(a)))
}

/// Control points of `grasp` in its parent frame.
pub fn gripper_points(grasp: &GraspPose, gripper: &GripperModel) -> [Vec3; 5] {
    gripper.control_points().map(|v| grasp.transform_point(&v))
}

/// The same physical grasp with the fingers swapped: a 180° turn about the
/// approach axis through the base.
pub fn symmetric_grasp(grasp: &GraspPose) -> GraspPose {
    let flip = Matrix3::from_diagonal(&Vec3::new(-1.0, -1.0, 1.0));
    GraspPose {
        rotation: RotationMatrix(grasp.rotation.matrix() * flip),
        translation: grasp.translation,
        width: grasp.width,
    }
}

/// Any unit vector orthogonal to `v`.
pub fn any_orthogonal(v: &Vec3) -> Vec3 {
    let helper = if v.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    v.cross(&helper).normalize()
}
