//! Scenes, their ground-truth grasps and labeled rendered views.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{sample_grasps, AnnotationParams, GraspSet};
use crate::geometry::GripperModel;
use crate::losses::GroundTruthPoints;
use crate::render::{
    label_contacts, render_depth, sample_camera, world_to_camera, CameraSampling, Intrinsics, LabeledPointCloud,
    VirtualCamera,
};
use crate::rng::stream;
use crate::scene::{build_scene, Catalog, Scene, SceneGeometry, SceneParams};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub scene: SceneParams,
    pub annotation: AnnotationParams,
    pub camera: CameraSampling,
    pub intrinsics: Intrinsics,
    pub views_per_scene: usize,
    /// Contact propagation radius, meters.
    pub contact_radius_m: f64,
    pub gripper: GripperModel,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            scene: SceneParams::default(),
            annotation: AnnotationParams::default(),
            camera: CameraSampling::default(),
            intrinsics: Intrinsics::default(),
            views_per_scene: 4,
            contact_radius_m: crate::render::DEFAULT_RADIUS,
            gripper: GripperModel::default(),
        }
    }
}

/// A scene with its world-frame geometry and ground-truth grasps.
#[derive(Clone, Debug)]
pub struct AnnotatedScene {
    pub scene: Scene,
    pub geometry: SceneGeometry,
    pub grasps: GraspSet,
}

/// Builds and annotates scene `index` from its own random streams.
pub fn generate_scene(catalog: &Catalog, config: &DataConfig, seed: u64, index: u64) -> Result<AnnotatedScene> {
    let mut rng = stream(seed, "scene", index);
    let scene = build_scene(catalog, &config.scene, index, &mut rng)?;
    let geometry = scene.geometry(catalog);
    let grasps = sample_grasps(
        &geometry,
        &config.gripper,
        &config.annotation,
        index,
        crate::rng::derive_seed(seed, "grasps", index),
    );
    Ok(AnnotatedScene {
        scene,
        geometry,
        grasps,
    })
}

pub fn generate_scenes(
    catalog: &Catalog,
    config: &DataConfig,
    seed: u64,
    indices: std::ops::Range<u64>,
) -> Result<Vec<AnnotatedScene>> {
    indices
        .into_par_iter()
        .map(|i| generate_scene(catalog, config, seed, i))
        .collect()
}

/// One labeled view; everything is in the camera frame.
#[derive(Clone, Debug)]
pub struct View {
    pub scene_index: usize,
    pub camera: VirtualCamera,
    pub cloud: LabeledPointCloud,
    pub grasps: GraspSet,
}

impl View {
    pub fn ground_truth_points(&self, gripper: &GripperModel) -> GroundTruthPoints {
        GroundTruthPoints::new(self.grasps.grasps.iter().map(|g| (&g.pose, g.object)), gripper)
    }
}

/// Camera for view `view` of a scene, drawn from the scene's camera stream.
pub fn view_camera(scene: &AnnotatedScene, config: &DataConfig, seed: u64, view: usize) -> Result<VirtualCamera> {
    let mut rng = stream(
        seed,
        "camera",
        scene.scene.seed.wrapping_mul(1024).wrapping_add(view as u64),
    );
    sample_camera(scene.scene.centroid(), &config.camera, config.intrinsics, &mut rng)
}

pub fn render_view(
    scene: &AnnotatedScene,
    scene_index: usize,
    camera: VirtualCamera,
    config: &DataConfig,
) -> Result<View> {
    let cloud = render_depth(&scene.geometry, &camera)?;
    let grasps = scene.grasps.transformed(&world_to_camera(&camera));
    let cloud = label_contacts(&cloud, &grasps, config.contact_radius_m, &config.gripper);
    Ok(View {
        scene_index,
        camera,
        cloud,
        grasps,
    })
}

/// `views_per_scene` labeled views of every scene.
pub fn render_views(scenes: &[AnnotatedScene], config: &DataConfig, seed: u64) -> Result<Vec<View>> {
    let jobs: Vec<(usize, usize)> = (0..scenes.len())
        .flat_map(|s| (0..config.views_per_scene).map(move |v| (s, v)))
        .collect();
    jobs.into_par_iter()
        .map(|(s, v)| {
            let camera = view_camera(&scenes[s], config, seed, v)?;
            render_view(&scenes[s], s, camera, config)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::default_catalog;

    #[test]
    fn views_are_reproducible() {
        let catalog = Catalog::build(default_catalog()).unwrap();
        let config = DataConfig {
            views_per_scene: 1,
            ..DataConfig::default()
        };
        let a = generate_scenes(&catalog, &config, 5, 0..1).unwrap();
        let b = generate_scenes(&catalog, &config, 5, 0..1).unwrap();
        assert_eq!(a[0].grasps, b[0].grasps);
        assert!(!a[0].grasps.grasps.is_empty());
        let va = render_views(&a, &config, 5).unwrap();
        let vb = render_views(&b, &config, 5).unwrap();
        assert_eq!(va[0].cloud, vb[0].cloud);
        assert!(va[0].cloud.success.iter().any(|&s| s == 1));
    }
}
