use cgk_core::annotation::grasp_succeeds;
use cgk_core::geometry::{GraspPose, RotationMatrix};
use cgk_core::inference::{
    confidence_calibration_curve, coverage, filter_by_segment, select_grasps, GraspProposal, ProposalFile,
    SelectionParams,
};
use cgk_core::mesh::{make_primitive, PrimitiveKind};
use cgk_core::scene::{SceneGeometry, WorldObject};
use cgk_core::{GripperModel, Vec3};
use nalgebra::{Isometry3, Translation3, UnitQuaternion};
use proptest::prelude::*;
use rand::Rng;

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn proposal() -> impl Strategy<Value = GraspProposal> {
    (vec3(3.0), vec3(0.3), 0.0f64..1.0).prop_map(|(axis, c, confidence)| GraspProposal {
        pose: GraspPose {
            rotation: RotationMatrix::from_unit_quaternion(&UnitQuaternion::from_scaled_axis(axis)),
            translation: c + Vec3::new(0.0, 0.0, 0.1),
            width: 0.04,
        },
        contact: c,
        confidence,
        segment: 1,
    })
}

proptest! {
    #[test]
    fn selection_is_a_thresholded_subset(
        proposals in prop::collection::vec(proposal(), 0..60),
        min_count in 1usize..10,
        diversity_count in 1usize..30,
    ) {
        let params = SelectionParams { min_count, diversity_count, ..SelectionParams::default() };
        let chosen = select_grasps(&proposals, &params);
        let passing = proposals.iter().filter(|p| p.confidence >= params.threshold).count();
        let active = if passing >= min_count { params.threshold } else { params.fallback_threshold };
        prop_assert!(chosen.len() <= diversity_count);
        for c in &chosen {
            prop_assert!(proposals.contains(c));
            prop_assert!(c.confidence >= active);
        }
        prop_assert!(chosen.windows(2).all(|w| w[0].confidence >= w[1].confidence));
        let eligible = proposals.iter().filter(|p| p.confidence >= active).count();
        prop_assert_eq!(chosen.len(), eligible.min(diversity_count));
        prop_assert_eq!(&chosen, &select_grasps(&proposals, &params));
    }

    #[test]
    fn coverage_matches_double_loop_and_grows(
        generated in prop::collection::vec(vec3(0.2), 0..40),
        gt in prop::collection::vec(vec3(0.2), 1..40),
    ) {
        let brute = |g: &[Vec3]| {
            gt.iter().filter(|t| g.iter().any(|p| (p - *t).norm() < 0.02)).count() as f64 / gt.len() as f64
        };
        let mut last = 0.0;
        for k in 0..=generated.len() {
            let c = coverage(&generated[..k], &gt, 0.02);
            prop_assert_eq!(c, brute(&generated[..k]));
            prop_assert!(c >= last);
            last = c;
        }
    }

    #[test]
    fn world_round_trip_is_identity(p in proposal(), axis in vec3(3.0), shift in vec3(2.0)) {
        let iso = Isometry3::from_parts(Translation3::from(shift), UnitQuaternion::from_scaled_axis(axis));
        let back = p.transformed(&iso).transformed(&iso.inverse());
        prop_assert!((back.pose.rotation.matrix() - p.pose.rotation.matrix()).amax() <= 1e-9);
        prop_assert!((back.pose.translation - p.pose.translation).amax() <= 1e-9);
        prop_assert!((back.contact - p.contact).amax() <= 1e-9);
        prop_assert_eq!(back.confidence, p.confidence);
    }
}

#[test]
fn proposal_files_round_trip() {
    let mut rng = cgk_core::rng::stream(4, "file", 0);
    let proposals: Vec<GraspProposal> = (0..20)
        .map(|i| GraspProposal {
            pose: GraspPose {
                rotation: RotationMatrix::from_unit_quaternion(&UnitQuaternion::from_scaled_axis(
                    nalgebra::Vector3::new(rng.random(), rng.random(), rng.random()),
                )),
                translation: Vec3::new(rng.random(), rng.random(), rng.random()),
                width: rng.random_range(0.0..0.08),
            },
            contact: Vec3::new(rng.random(), rng.random(), rng.random()),
            confidence: rng.random(),
            segment: i % 3,
        })
        .collect();
    let text = serde_json::to_string(&ProposalFile::new("camera", &proposals)).unwrap();
    let back: ProposalFile = serde_json::from_str(&text).unwrap();
    for (a, b) in back.proposals().unwrap().iter().zip(&proposals) {
        assert!((a.pose.rotation.matrix() - b.pose.rotation.matrix()).amax() <= 1e-9);
        assert_eq!(a.pose.translation, b.pose.translation);
        assert_eq!((a.contact, a.confidence, a.segment, a.pose.width), (b.contact, b.confidence, b.segment, b.pose.width));
    }
}

#[test]
fn calibration_of_random_outcomes_is_flat() {
    let mut rng = cgk_core::rng::stream(5, "calibration", 0);
    let n = 10_000;
    let confidences: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let outcomes: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    let curve = confidence_calibration_curve(&confidences, &outcomes, 10).unwrap();
    let sigma = (0.4f64 * 0.6 / 1000.0).sqrt();
    for r in &curve {
        assert!((r - 0.4).abs() <= 4.0 * sigma, "{curve:?}");
    }
    let ordered: Vec<bool> = confidences.iter().map(|&c| c > 0.5).collect();
    let curve = confidence_calibration_curve(&confidences, &ordered, 10).unwrap();
    assert!(curve.windows(2).all(|w| w[0] >= w[1]), "{curve:?}");
    let all = confidence_calibration_curve(&confidences, &vec![true; n], 10).unwrap();
    assert!(all.iter().all(|&r| r == 1.0));
}

fn box_at(segment: i32, dims: [f64; 3], at: Vec3) -> WorldObject {
    let mesh = make_primitive(PrimitiveKind::Box, dims, 8)
        .unwrap()
        .transformed(&Isometry3::from_parts(Translation3::from(at), Default::default()), 1.0);
    WorldObject {
        segment,
        bounds: mesh.aabb(),
        mesh,
    }
}

/// Horizontal pinch along x at height `z`, approaching from above.
fn pinch(center: Vec3, width: f64, gripper: &GripperModel) -> GraspPose {
    let rotation = RotationMatrix::identity();
    GraspPose {
        rotation,
        translation: center + gripper.base_offset_m * Vec3::z(),
        width,
    }
}

#[test]
fn straddling_two_touching_boxes_fails() {
    let g = GripperModel::default();
    let single = SceneGeometry {
        objects: vec![box_at(1, [0.05, 0.05, 0.1], Vec3::new(0.0, 0.0, 0.05))],
        table_half_extent: 0.3,
    };
    assert!(grasp_succeeds(&single, &g, &pinch(Vec3::new(0.0, 0.0, 0.07), 0.05, &g), 0.5));
    let pair = SceneGeometry {
        objects: vec![
            box_at(1, [0.03, 0.05, 0.1], Vec3::new(-0.015, 0.0, 0.05)),
            box_at(2, [0.03, 0.05, 0.1], Vec3::new(0.015, 0.0, 0.05)),
        ],
        table_half_extent: 0.3,
    };
    assert!(!grasp_succeeds(&pair, &g, &pinch(Vec3::new(0.0, 0.0, 0.07), 0.06, &g), 0.5));
    let low = pinch(Vec3::new(0.0, 0.0, -0.01), 0.05, &g);
    assert!(!grasp_succeeds(&single, &g, &low, 0.5));
}

#[test]
fn half_mask_keeps_grasps_rooted_on_the_masked_half() {
    let object = box_at(1, [0.06, 0.04, 0.08], Vec3::new(0.0, 0.0, 0.04));
    let mut rng = cgk_core::rng::stream(6, "mask", 0);
    let samples = object.mesh.sample_surface(&mut rng, 800);
    let points: Vec<Vec3> = samples.iter().map(|s| s.0).collect();
    let mask: Vec<i32> = points.iter().map(|p| if p.x < 0.0 { 1 } else { 7 }).collect();
    let g = GripperModel::default();
    let proposals: Vec<GraspProposal> = points
        .iter()
        .step_by(5)
        .map(|&p| GraspProposal {
            pose: pinch(p, 0.04, &g),
            contact: p,
            confidence: 0.5,
            segment: 0,
        })
        .collect();
    let kept = filter_by_segment(&proposals, &points, &mask, 1);
    let expected: Vec<GraspProposal> = proposals.iter().filter(|p| p.contact.x < 0.0).cloned().collect();
    assert!(!expected.is_empty());
    assert_eq!(kept, expected);
    assert_eq!(filter_by_segment(&proposals, &points, &vec![1; points.len()], 1), proposals);
    assert!(filter_by_segment(&proposals, &points, &mask, 3).is_empty());
}
