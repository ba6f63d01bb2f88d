//! Adam training on labeled views.
//!
//! Each step draws one view (or a batch of views), optionally crops it to the
//! neighborhood of a random object, subsamples the network's input size,
//! adds Gaussian jitter, centers it and takes an Adam step on the total loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::View;
use crate::geometry::{GripperModel, Vec3};
use crate::inference::local_region_indices;
use crate::losses::{compute_losses, GroundTruthPoints, LossBreakdown, LossConfig, LossTargets, WidthBins};
use crate::network::{ForwardPass, PointSetNetwork};
use crate::render::{augment_noise, center_cloud, subsample_indices};
use crate::rng::{stream, StreamRng};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub learning_rate_floor: f64,
    pub decay_factor: f64,
    /// The rate decays every this fraction of `steps`.
    pub decay_interval_fraction: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub noise_sigma_m: f64,
    /// Chance of training on a single object's neighborhood instead of the whole view.
    pub local_crop_probability: f64,
    /// Inverse-frequency width-bin weights; uniform weights when off.
    pub width_weighting: bool,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            batch_size: 1,
            learning_rate: 1e-3,
            learning_rate_floor: 1e-4,
            decay_factor: 0.5,
            decay_interval_fraction: 0.25,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            noise_sigma_m: 0.002,
            local_crop_probability: 0.5,
            width_weighting: true,
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Step-wise decayed learning rate at `step`, never below the floor
    /// (unless the initial rate itself is lower).
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let interval = ((self.steps as f64 * self.decay_interval_fraction).round() as usize).max(1);
        let decays = (step / interval) as i32;
        let lr = self.learning_rate * self.decay_factor.powi(decays);
        lr.max(self.learning_rate_floor.min(self.learning_rate))
    }
}

pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    pub fn new(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let update = lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.epsilon);
            params[i] -= update;
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub bce: f64,
    pub adds: f64,
    pub width: f64,
    pub total: f64,
}

pub fn trace_csv(trace: &[LossRecord]) -> String {
    let mut s = String::from("step,l_bce,l_adds,l_width,total\n");
    for r in trace {
        s.push_str(&format!("{},{},{},{},{}\n", r.step, r.bce, r.adds, r.width, r.total));
    }
    s
}

/// Mean total loss over `window` records ending at `end` (inclusive).
pub fn moving_average(trace: &[LossRecord], end: usize, window: usize) -> f64 {
    let lo = (end + 1).saturating_sub(window);
    let slice = &trace[lo..=end];
    slice.iter().map(|r| r.total).sum::<f64>() / slice.len() as f64
}

/// Width bins for a training set: inverse-frequency weights over the
/// assigned widths of all positive points, or uniform.
pub fn width_bins_for(views: &[View], gripper: &GripperModel, weighted: bool) -> Result<WidthBins> {
    if !weighted {
        return Ok(WidthBins::uniform(gripper.max_width_m));
    }
    let widths = views
        .iter()
        .flat_map(|v| v.cloud.positives().map(move |i| v.cloud.widths[i]));
    WidthBins::from_widths(widths, gripper.max_width_m)
}

/// A network input drawn from a view, with labels aligned to the points.
pub struct Sample {
    /// Centered, possibly noisy points.
    pub points: Vec<Vec3>,
    /// Centroid subtracted from the camera-frame points.
    pub mean: Vec3,
    pub segments: Vec<i32>,
    pub success: Vec<u8>,
    pub widths: Vec<f64>,
}

/// Draws the input for one step. `crop` restricts it to the neighborhood of
/// a random visible object first.
pub fn draw_sample(view: &View, n: usize, sigma: f64, crop: bool, rng: &mut StreamRng) -> Sample {
    let cloud = &view.cloud;
    let mut pool: Vec<usize> = (0..cloud.len()).collect();
    if crop {
        let mut objects: Vec<i32> = cloud.segments.iter().copied().filter(|&s| s > 0).collect();
        objects.sort_unstable();
        objects.dedup();
        if !objects.is_empty() {
            let target = objects[rng.random_range(0..objects.len())];
            if let Ok((idx, _)) = local_region_indices(&cloud.points, &cloud.segments, target) {
                pool = idx;
            }
        }
    }
    let picks: Vec<usize> = subsample_indices(pool.len(), n, rng)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    let raw: Vec<Vec3> = picks.iter().map(|&i| cloud.points[i]).collect();
    let noisy = augment_noise(&raw, sigma, rng);
    let (points, mean) = center_cloud(&noisy);
    Sample {
        points,
        mean,
        segments: picks.iter().map(|&i| cloud.segments[i]).collect(),
        success: picks.iter().map(|&i| cloud.success[i]).collect(),
        widths: picks.iter().map(|&i| cloud.widths[i]).collect(),
    }
}

pub struct TrainOutcome {
    pub trace: Vec<LossRecord>,
    pub bins: WidthBins,
}

/// Losses and head gradients of one sample.
pub fn sample_losses(
    net: &PointSetNetwork,
    sample: &Sample,
    ground_truth: &GroundTruthPoints,
    config: &LossConfig,
    gripper: &GripperModel,
    bins: &WidthBins,
) -> Result<(ForwardPass, LossBreakdown, crate::losses::NetworkOutput)> {
    let pass = net.forward(&sample.points)?;
    let pick = |v: &dyn Fn(usize) -> f64| pass.indices.iter().map(|&i| v(i)).collect::<Vec<f64>>();
    let anchors: Vec<Vec3> = pass.indices.iter().map(|&i| sample.points[i]).collect();
    let segments: Vec<i32> = pass.indices.iter().map(|&i| sample.segments[i]).collect();
    let success: Vec<u8> = pass.indices.iter().map(|&i| sample.success[i]).collect();
    let widths = pick(&|i| sample.widths[i]);
    let centered = ground_truth.translated(&-sample.mean);
    let targets = LossTargets {
        anchors: &anchors,
        segments: &segments,
        success: &success,
        widths: &widths,
        ground_truth: &centered,
    };
    let (losses, head_grad) = compute_losses(&pass.output, &targets, config, gripper, bins)?;
    Ok((pass, losses, head_grad))
}

/// Trains in place. Every step draws from its own random stream, so the
/// trace depends only on the seed, the data and the configuration.
pub fn train(
    net: &mut PointSetNetwork,
    views: &[View],
    config: &TrainConfig,
    gripper: &GripperModel,
) -> Result<TrainOutcome> {
    if views.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let bins = width_bins_for(views, gripper, config.width_weighting)?;
    let ground_truth: Vec<GroundTruthPoints> = views.iter().map(|v| v.ground_truth_points(gripper)).collect();
    let mut adam = Adam::new(
        net.parameter_count(),
        config.adam_beta1,
        config.adam_beta2,
        config.adam_epsilon,
    );
    let n = net.config.input_points;
    let batch = config.batch_size.max(1);
    let mut trace = Vec::with_capacity(config.steps);
    let mut grad = vec![0.0; net.parameter_count()];
    for step in 0..config.steps {
        let mut rng = stream(config.seed, "train", step as u64);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut record = LossRecord {
            step,
            ..LossRecord::default()
        };
        for _ in 0..batch {
            let v = rng.random_range(0..views.len());
            let crop = rng.random_bool(config.local_crop_probability.clamp(0.0, 1.0));
            let sample = draw_sample(&views[v], n, config.noise_sigma_m, crop, &mut rng);
            let (pass, losses, mut head_grad) =
                sample_losses(net, &sample, &ground_truth[v], &config.loss, gripper, &bins)?;
            if !losses.total.is_finite() {
                return Err(Error::DivergenceDetected { step });
            }
            scale_output(&mut head_grad, 1.0 / batch as f64);
            net.backward(&pass, &net.params, &head_grad, &mut grad);
            record.bce += losses.bce / batch as f64;
            record.adds += losses.adds / batch as f64;
            record.width += losses.width / batch as f64;
            record.total += losses.total / batch as f64;
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::DivergenceDetected { step });
        }
        adam.step(&mut net.params, &grad, config.learning_rate_at(step));
        trace.push(record);
    }
    Ok(TrainOutcome { trace, bins })
}

fn scale_output(o: &mut crate::losses::NetworkOutput, s: f64) {
    for i in 0..o.len() {
        o.conf_logits[i] *= s;
        o.z1[i] *= s;
        o.z2[i] *= s;
        for w in &mut o.width_logits[i] {
            *w *= s;
        }
    }
}
