mod common;

use cgk_core::geometry::contact_from_grasp;
use cgk_core::render::{label_contacts, render_depth, world_to_camera};

#[test]
fn labels_match_exhaustive_search_and_reconstruct_their_points() {
    let (config, scenes) = common::scenes(31, 2);
    let g = &config.gripper;
    for (k, s) in scenes.iter().enumerate() {
        let camera = cgk_core::dataset::view_camera(s, &config, 31, 0).unwrap();
        let cloud = render_depth(&s.geometry, &camera).unwrap();
        let grasps = s.grasps.transformed(&world_to_camera(&camera));
        let ours = label_contacts(&cloud, &grasps, config.contact_radius_m, g);
        let oracle = common::label_oracle(&cloud, &grasps, config.contact_radius_m, g);
        let mut positives = 0;
        for (i, expected) in oracle.iter().enumerate() {
            match expected {
                None => {
                    assert_eq!(ours.success[i], 0);
                    assert_eq!(ours.grasp_index[i], -1);
                }
                Some(l) => {
                    positives += 1;
                    assert_eq!(ours.success[i], 1);
                    assert_eq!(ours.grasp_index[i], l.grasp);
                    assert_eq!(ours.flipped[i], l.flipped);
                    assert_eq!(ours.widths[i], l.width);
                    assert!((ours.rotations[i] - l.rotation).amax() <= 1e-9);
                    assert!((ours.translations[i] - l.translation).amax() <= 1e-9);
                    let pose = ours.assigned_pose(i).unwrap();
                    let c = contact_from_grasp(&pose, g).contact;
                    assert!((c - cloud.points[i]).amax() <= 1e-9);
                }
            }
        }
        assert!(positives > 0, "scene {k} has no positive points");
    }
}
