//! The fixed desk-scale benchmark: train a variant on generated scenes and
//! score it on noised views of held-out scenes.

use serde::{Deserialize, Serialize};

use crate::dataset::{generate_scenes, render_views, AnnotatedScene, DataConfig, View};
use crate::geometry::Vec3;
use crate::inference::{
    confidence_calibration_curve, coverage, evaluate_success, extract_local_region, filter_by_segment, propose,
    select_grasps, GraspProposal, SelectionParams,
};
use crate::losses::WidthBins;
use crate::network::{NetworkConfig, PointSetNetwork};
use crate::render::augment_noise;
use crate::rng::stream;
use crate::scene::Catalog;
use crate::train::{train, LossRecord, TrainConfig};
use crate::{Error, Result};

/// Held-out scenes are drawn from indices at and above this offset.
pub const HELD_OUT_OFFSET: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    NoNoise,
    NoLocalRegion,
    NoAdds,
    NoWidthWeighting,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::NoNoise,
        Variant::NoLocalRegion,
        Variant::NoAdds,
        Variant::NoWidthWeighting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::NoNoise => "no_noise",
            Variant::NoLocalRegion => "no_local_region",
            Variant::NoAdds => "no_adds",
            Variant::NoWidthWeighting => "no_width_weighting",
        }
    }

    pub fn parse(name: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == name)
    }

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Variant::Baseline => {}
            Variant::NoNoise => c.noise_sigma_m = 0.0,
            Variant::NoLocalRegion => c.local_crop_probability = 0.0,
            Variant::NoAdds => c.loss.weights.beta = 0.0,
            Variant::NoWidthWeighting => c.width_weighting = false,
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub train_scenes: u64,
    pub test_scenes: u64,
    /// Noise added to every held-out cloud, meters.
    pub test_noise_sigma_m: f64,
    /// Proposals scored per object after selection.
    pub top_per_object: usize,
    pub coverage_radius_m: f64,
    pub selection: SelectionParams,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            train_scenes: 50,
            test_scenes: 10,
            test_noise_sigma_m: 0.002,
            top_per_object: 5,
            coverage_radius_m: 0.02,
            selection: SelectionParams::default(),
        }
    }
}

/// Training views and noised held-out views, shared by every variant.
pub struct BenchmarkData {
    pub train_views: Vec<View>,
    pub test_scenes: Vec<AnnotatedScene>,
    pub test_views: Vec<View>,
}

pub fn prepare(catalog: &Catalog, data: &DataConfig, bench: &BenchmarkConfig, seed: u64) -> Result<BenchmarkData> {
    let train_scenes = generate_scenes(catalog, data, seed, 0..bench.train_scenes)?;
    let train_views = render_views(&train_scenes, data, seed)?;
    drop(train_scenes);
    let test_scenes = generate_scenes(catalog, data, seed, HELD_OUT_OFFSET..HELD_OUT_OFFSET + bench.test_scenes)?;
    let single = DataConfig {
        views_per_scene: 1,
        ..data.clone()
    };
    let mut test_views = render_views(&test_scenes, &single, seed)?;
    for (i, v) in test_views.iter_mut().enumerate() {
        let mut rng = stream(seed, "test-noise", i as u64);
        v.cloud.points = augment_noise(&v.cloud.points, bench.test_noise_sigma_m, &mut rng);
    }
    Ok(BenchmarkData {
        train_views,
        test_scenes,
        test_views,
    })
}

/// Proposals for one view, in the camera frame.
pub struct ViewProposals {
    /// Every prediction of the full-scene pass.
    pub scene_wide: Vec<GraspProposal>,
    /// Selected proposals per visible object, best first.
    pub per_object: Vec<(i32, Vec<GraspProposal>)>,
}

pub fn propose_view(
    net: &PointSetNetwork,
    bins: &WidthBins,
    view: &View,
    data: &DataConfig,
    bench: &BenchmarkConfig,
    seed: u64,
) -> Result<ViewProposals> {
    let cloud = &view.cloud;
    let scene_wide = propose(net, &cloud.points, Some(&cloud.segments), bins, &data.gripper, seed)?;
    let mut objects: Vec<i32> = cloud.segments.iter().copied().filter(|&s| s > 0).collect();
    objects.sort_unstable();
    objects.dedup();
    let mut per_object = Vec::with_capacity(objects.len());
    for s in objects {
        let region = extract_local_region(&cloud.points, &cloud.segments, s)?;
        let raw = propose(net, &region.points, Some(&region.segments), bins, &data.gripper, seed ^ s as u64)?;
        let on_object = filter_by_segment(&raw, &region.points, &region.segments, s);
        let mut chosen = select_grasps(&on_object, &bench.selection);
        chosen.truncate(bench.top_per_object);
        per_object.push((s, chosen));
    }
    Ok(ViewProposals {
        scene_wide,
        per_object,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    /// Success rate of the selected per-object proposals.
    pub object_success_rate: f64,
    pub object_proposals: usize,
    /// Coverage of all ground-truth grasps by the full-scene proposals.
    pub coverage: f64,
    /// Success rate of the full-scene proposals.
    pub scene_success_rate: f64,
    /// Full-scene success per confidence decile, most confident first.
    pub decile_success: Vec<f64>,
}

impl BenchmarkReport {
    pub fn top_decile(&self) -> f64 {
        self.decile_success.first().copied().unwrap_or(0.0)
    }

    pub fn bottom_decile(&self) -> f64 {
        self.decile_success.last().copied().unwrap_or(0.0)
    }
}

pub fn score(
    net: &PointSetNetwork,
    bins: &WidthBins,
    data: &DataConfig,
    bench: &BenchmarkConfig,
    benchmark: &BenchmarkData,
    seed: u64,
) -> Result<BenchmarkReport> {
    let mu = data.annotation.friction_mu;
    let g = &data.gripper;
    let mut object_outcomes = Vec::new();
    let mut confidences = Vec::new();
    let mut scene_outcomes = Vec::new();
    let (mut covered, mut gt_total) = (0.0, 0usize);
    for (i, view) in benchmark.test_views.iter().enumerate() {
        let scene = &benchmark.test_scenes[view.scene_index];
        let to_world_iso = view.camera.pose;
        let props = propose_view(net, bins, view, data, bench, crate::rng::derive_seed(seed, "bench", i as u64))?;
        for (_, chosen) in &props.per_object {
            for p in chosen {
                object_outcomes.push(evaluate_success(&scene.geometry, g, &p.pose.transformed(&to_world_iso), mu));
            }
        }
        let mut origins = Vec::with_capacity(props.scene_wide.len());
        for p in &props.scene_wide {
            let world = p.pose.transformed(&to_world_iso);
            origins.push(world.translation);
            confidences.push(p.confidence);
            scene_outcomes.push(evaluate_success(&scene.geometry, g, &world, mu));
        }
        let gt: Vec<Vec3> = scene.grasps.grasps.iter().map(|g| g.pose.translation).collect();
        covered += coverage(&origins, &gt, bench.coverage_radius_m) * gt.len() as f64;
        gt_total += gt.len();
    }
    let rate = |o: &[bool]| {
        if o.is_empty() {
            0.0
        } else {
            o.iter().filter(|&&s| s).count() as f64 / o.len() as f64
        }
    };
    Ok(BenchmarkReport {
        object_success_rate: rate(&object_outcomes),
        object_proposals: object_outcomes.len(),
        coverage: if gt_total == 0 { 0.0 } else { covered / gt_total as f64 },
        scene_success_rate: rate(&scene_outcomes),
        decile_success: confidence_calibration_curve(&confidences, &scene_outcomes, 10)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: Variant,
    pub report: BenchmarkReport,
    pub trace: Vec<LossRecord>,
}

/// Trains `variant` from a fresh network and scores it.
pub fn run_variant(
    variant: Variant,
    network: &NetworkConfig,
    train_config: &TrainConfig,
    data: &DataConfig,
    bench: &BenchmarkConfig,
    benchmark: &BenchmarkData,
) -> Result<(PointSetNetwork, WidthBins, VariantReport)> {
    if benchmark.train_views.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut net = PointSetNetwork::new(network.clone())?;
    let config = variant.apply(train_config);
    let outcome = train(&mut net, &benchmark.train_views, &config, &data.gripper)?;
    let report = score(&net, &outcome.bins, data, bench, benchmark, train_config.seed)?;
    Ok((
        net,
        outcome.bins,
        VariantReport {
            variant,
            report,
            trace: outcome.trace,
        },
    ))
}
