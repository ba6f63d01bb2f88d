use cgk_core::geometry::{
    grasp_from_contact, gripper_points, orthonormalize, symmetric_grasp, ContactGraspParams, GraspPose, RotationMatrix,
};
use cgk_core::losses::{
    adds_loss, decode_width, topk_bce, width_loss, AddsInputs, AddsScope, GroundTruthPoints, NetworkOutput, WidthBins,
    WIDTH_BINS,
};
use cgk_core::{GripperModel, Vec3};
use nalgebra::UnitQuaternion;
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn pose() -> impl Strategy<Value = GraspPose> {
    (vec3(3.0), vec3(0.3), 0.0f64..0.08).prop_map(|(axis, t, width)| GraspPose {
        rotation: RotationMatrix::from_unit_quaternion(&UnitQuaternion::from_scaled_axis(axis)),
        translation: t,
        width,
    })
}

fn output(n: usize) -> impl Strategy<Value = NetworkOutput> {
    (
        prop::collection::vec(-6.0f64..6.0, n),
        prop::collection::vec(vec3(2.0), n),
        prop::collection::vec(vec3(2.0), n),
        prop::collection::vec(prop::array::uniform10(-4.0f64..4.0), n),
    )
        .prop_map(|(conf_logits, z1, z2, width_logits)| NetworkOutput {
            conf_logits,
            z1,
            z2,
            width_logits,
        })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Exhaustive minimum over every grasp and its flip, through full poses.
fn adds_oracle(out: &NetworkOutput, anchors: &[Vec3], gt: &[GraspPose], gripper: &GripperModel, bins: &WidthBins) -> f64 {
    let mut total = 0.0;
    for i in 0..anchors.len() {
        let (b, a) = orthonormalize(&out.z1[i], &out.z2[i]).unwrap();
        let w = decode_width(&out.width_logits[i], bins);
        let pred = grasp_from_contact(&ContactGraspParams::new(anchors[i], b, a, w).unwrap(), gripper).unwrap();
        let p = gripper_points(&pred, gripper);
        let best = gt
            .iter()
            .flat_map(|g| [g.clone(), symmetric_grasp(g)])
            .map(|g| {
                let q = gripper_points(&g, gripper);
                (0..5).map(|k| (p[k] - q[k]).norm()).sum::<f64>() / 5.0
            })
            .fold(f64::INFINITY, f64::min);
        total += sigmoid(out.conf_logits[i]) * best;
    }
    total / anchors.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adds_matches_exhaustive_enumeration(
        out in output(2),
        anchors in prop::collection::vec(vec3(0.3), 2),
        gt in prop::collection::vec(pose(), 2),
    ) {
        let g = GripperModel::default();
        let bins = WidthBins::uniform(g.max_width_m);
        prop_assume!((0..2).all(|i| orthonormalize(&out.z1[i], &out.z2[i]).is_ok()));
        let points = GroundTruthPoints::new(gt.iter().map(|p| (p, 1)), &g);
        let inputs = AddsInputs {
            anchors: &anchors,
            segments: &[1, 1],
            positives: &[0, 1],
            ground_truth: &points,
            scope: AddsScope::Scene,
        };
        let ours = adds_loss(&out, &inputs, &g, &bins).unwrap();
        prop_assert!(ours >= 0.0);
        prop_assert!((ours - adds_oracle(&out, &anchors, &gt, &g, &bins)).abs() <= 1e-9);
    }

    #[test]
    fn adds_ignores_which_finger_a_grasp_is_stored_with(
        out in output(3),
        anchors in prop::collection::vec(vec3(0.3), 3),
        gt in prop::collection::vec(pose(), 3),
        flip in prop::collection::vec(any::<bool>(), 3),
    ) {
        let g = GripperModel::default();
        let bins = WidthBins::uniform(g.max_width_m);
        let flipped: Vec<GraspPose> = gt
            .iter()
            .zip(&flip)
            .map(|(p, &f)| if f { symmetric_grasp(p) } else { p.clone() })
            .collect();
        let loss = |set: &[GraspPose]| {
            let points = GroundTruthPoints::new(set.iter().map(|p| (p, 1)), &g);
            let inputs = AddsInputs {
                anchors: &anchors,
                segments: &[1, 1, 1],
                positives: &[0, 1, 2],
                ground_truth: &points,
                scope: AddsScope::Scene,
            };
            adds_loss(&out, &inputs, &g, &bins).unwrap()
        };
        prop_assert!((loss(&gt) - loss(&flipped)).abs() <= 1e-12);
    }

    #[test]
    fn adds_vanishes_on_any_ground_truth_or_flip(gt in pose(), flip: bool, conf in -6.0f64..6.0, bin in 0usize..WIDTH_BINS) {
        let g = GripperModel::default();
        let bins = WidthBins::uniform(g.max_width_m);
        let gt = GraspPose { width: bins.center(bin), ..gt };
        let target = if flip { symmetric_grasp(&gt) } else { gt.clone() };
        let c = cgk_core::geometry::contact_from_grasp(&target, &g);
        let mut logits = [0.0; WIDTH_BINS];
        logits[bin] = 1.0;
        let out = NetworkOutput {
            conf_logits: vec![conf],
            z1: vec![c.baseline.into_inner()],
            z2: vec![c.approach.into_inner()],
            width_logits: vec![logits],
        };
        let points = GroundTruthPoints::new([(&gt, 1)], &g);
        let inputs = AddsInputs {
            anchors: &[c.contact],
            segments: &[1],
            positives: &[0],
            ground_truth: &points,
            scope: AddsScope::Scene,
        };
        prop_assert!(adds_loss(&out, &inputs, &g, &bins).unwrap() <= 1e-12);
    }

    #[test]
    fn topk_bce_ignores_point_order(
        pairs in prop::collection::vec((-8.0f64..8.0, 0u8..2), 1..120),
        k in 1usize..80,
        seed: u64,
    ) {
        let logits: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut rng = cgk_core::rng::stream(seed, "perm", 0);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let a = topk_bce(&logits, &labels, k);
        let b = topk_bce(
            &order.iter().map(|&i| logits[i]).collect::<Vec<_>>(),
            &order.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
            k,
        );
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn width_loss_is_nonnegative(
        logits in prop::collection::vec(prop::array::uniform10(-6.0f64..6.0), 1..20),
        widths in prop::collection::vec(0.0f64..=0.08, 20),
    ) {
        let bins = WidthBins::from_widths(widths.iter().copied(), 0.08).unwrap();
        let w = &widths[..logits.len()];
        prop_assert!(width_loss(&logits, w, &bins).unwrap() >= 0.0);
    }
}
