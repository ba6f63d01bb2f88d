use std::path::Path;

use cgk_core::benchmark::BenchmarkConfig;
use cgk_core::dataset::DataConfig;
use cgk_core::inference::SelectionParams;
use cgk_core::network::NetworkConfig;
use cgk_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a pipeline run depends on besides its input files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every random stream derives from it.
    pub seed: u64,
    /// Scenes written by `generate`.
    pub scenes: u64,
    pub data: DataConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub selection: SelectionParams,
    pub benchmark: BenchmarkConfig,
}

impl PipelineConfig {
    pub fn desk_scale() -> Self {
        Self {
            scenes: 50,
            ..Self::default()
        }
    }

    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self, CliError> {
        let mut config = match path {
            None => Self::desk_scale(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::missing(p, e))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
        };
        if let Some(s) = seed {
            config.seed = s;
        }
        config.train.seed = config.seed;
        config.network.seed = config.seed;
        config.validate().map_err(CliError::Config)?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), String> {
        let check = |ok: bool, what: &str| if ok { Ok(()) } else { Err(format!("invalid {what}")) };
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        let d = &self.data;
        check(self.scenes >= 1, "scenes (need at least 1)")?;
        check(
            d.scene.min_objects >= 1 && d.scene.min_objects <= d.scene.max_objects,
            "data.scene object count range",
        )?;
        check(finite_pos(d.scene.table_half_extent_m), "data.scene.table_half_extent_m")?;
        check(
            finite_pos(d.scene.scale_range.0) && d.scene.scale_range.0 <= d.scene.scale_range.1,
            "data.scene.scale_range",
        )?;
        check(finite_pos(d.annotation.friction_mu), "data.annotation.friction_mu")?;
        check(d.annotation.samples_per_object >= 1, "data.annotation.samples_per_object")?;
        check(d.annotation.approaches_per_pair >= 1, "data.annotation.approaches_per_pair")?;
        let c = &d.camera;
        check(
            c.elevation_min_rad <= c.elevation_max_rad
                && c.elevation_min_rad > 0.0
                && c.elevation_max_rad < std::f64::consts::FRAC_PI_2 + 1e-12,
            "data.camera elevation range",
        )?;
        check(
            finite_pos(c.radius_min_m) && c.radius_min_m <= c.radius_max_m,
            "data.camera radius range",
        )?;
        let k = &d.intrinsics;
        check(
            finite_pos(k.fx) && finite_pos(k.fy) && k.width > 0 && k.height > 0,
            "data.intrinsics",
        )?;
        check(d.views_per_scene >= 1, "data.views_per_scene")?;
        check(finite_pos(d.contact_radius_m), "data.contact_radius_m")?;
        let g = &d.gripper;
        check(
            finite_pos(g.base_offset_m) && finite_pos(g.max_width_m) && finite_pos(g.finger_thickness_m),
            "data.gripper",
        )?;
        self.network.validate().map_err(|e| format!("network: {e}"))?;
        let t = &self.train;
        check(t.steps >= 1 && t.batch_size >= 1, "train.steps / train.batch_size")?;
        check(
            finite_pos(t.learning_rate) || t.learning_rate == 0.0,
            "train.learning_rate",
        )?;
        check(
            t.learning_rate_floor >= 0.0 && prob(t.decay_factor) && t.decay_interval_fraction > 0.0,
            "train schedule",
        )?;
        check(prob(t.adam_beta1) && prob(t.adam_beta2) && finite_pos(t.adam_epsilon), "train adam parameters")?;
        check(t.noise_sigma_m >= 0.0 && t.noise_sigma_m.is_finite(), "train.noise_sigma_m")?;
        check(prob(t.local_crop_probability), "train.local_crop_probability")?;
        let w = &t.loss.weights;
        check(
            [w.alpha, w.beta, w.gamma].iter().all(|x| x.is_finite() && *x >= 0.0),
            "train.loss.weights",
        )?;
        check(
            t.loss.top_k >= 1 && t.loss.top_k <= self.network.predict_points,
            "train.loss.top_k",
        )?;
        let s = &self.selection;
        check(
            prob(s.threshold) && prob(s.fallback_threshold) && s.fallback_threshold <= s.threshold,
            "selection thresholds",
        )?;
        check(s.diversity_count >= 1, "selection.diversity_count")?;
        let b = &self.benchmark;
        check(b.train_scenes >= 1 && b.test_scenes >= 1, "benchmark scene counts")?;
        check(finite_pos(b.coverage_radius_m), "benchmark.coverage_radius_m")?;
        check(b.test_noise_sigma_m >= 0.0, "benchmark.test_noise_sigma_m")?;
        Ok(())
    }
}
