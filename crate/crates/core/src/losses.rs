//! Training losses with hand-derived gradients with respect to the
//! network heads.

use serde::{Deserialize, Serialize};

use crate::geometry::{contact_from_grasp, symmetric_grasp, GraspPose, GripperModel, Vec3};
use crate::tape::sigmoid;
use crate::{Error, Result};

pub const WIDTH_BINS: usize = 10;
const NORM_FLOOR: f64 = 1e-12;

/// Per-point head outputs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetworkOutput {
    pub conf_logits: Vec<f64>,
    pub z1: Vec<Vec3>,
    pub z2: Vec<Vec3>,
    pub width_logits: Vec<[f64; WIDTH_BINS]>,
}

impl NetworkOutput {
    pub fn len(&self) -> usize {
        self.conf_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conf_logits.is_empty()
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            conf_logits: vec![0.0; n],
            z1: vec![Vec3::zeros(); n],
            z2: vec![Vec3::zeros(); n],
            width_logits: vec![[0.0; WIDTH_BINS]; n],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.conf_logits.iter().all(|v| v.is_finite())
            && self.z1.iter().chain(&self.z2).all(|v| v.iter().all(|c| c.is_finite()))
            && self.width_logits.iter().all(|r| r.iter().all(|c| c.is_finite()))
    }

    fn add_scaled(&mut self, other: &NetworkOutput, s: f64) {
        for i in 0..self.len() {
            self.conf_logits[i] += s * other.conf_logits[i];
            self.z1[i] += s * other.z1[i];
            self.z2[i] += s * other.z2[i];
            for b in 0..WIDTH_BINS {
                self.width_logits[i][b] += s * other.width_logits[i][b];
            }
        }
    }
}

/// Equal-width bins over `[0, max_width]` with per-bin loss weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthBins {
    pub max_width: f64,
    pub weights: [f64; WIDTH_BINS],
}

impl WidthBins {
    pub const WEIGHT_CAP: f64 = 50.0;

    pub fn uniform(max_width: f64) -> Self {
        Self {
            max_width,
            weights: [1.0; WIDTH_BINS],
        }
    }

    /// Weights inversely proportional to how often each bin occurs, scaled
    /// so a uniform histogram gives 1, then clamped to `[1, 50]`.
    pub fn from_widths(widths: impl IntoIterator<Item = f64>, max_width: f64) -> Result<Self> {
        let mut bins = Self::uniform(max_width);
        let mut counts = [0usize; WIDTH_BINS];
        for w in widths {
            counts[bins.bin_of(w)?] += 1;
        }
        let total: usize = counts.iter().sum();
        for b in 0..WIDTH_BINS {
            bins.weights[b] = if counts[b] == 0 {
                Self::WEIGHT_CAP
            } else {
                (total as f64 / (WIDTH_BINS as f64 * counts[b] as f64)).clamp(1.0, Self::WEIGHT_CAP)
            };
        }
        Ok(bins)
    }

    pub fn bin_width(&self) -> f64 {
        self.max_width / WIDTH_BINS as f64
    }

    pub fn bin_of(&self, w: f64) -> Result<usize> {
        if !(0.0..=self.max_width).contains(&w) {
            return Err(Error::WidthOutOfRange {
                width: w,
                max_width: self.max_width,
            });
        }
        Ok(((w / self.bin_width()) as usize).min(WIDTH_BINS - 1))
    }

    pub fn center(&self, bin: usize) -> f64 {
        (bin as f64 + 0.5) * self.bin_width()
    }
}

/// Center of the highest-scoring bin; exact ties average their centers.
pub fn decode_width(logits: &[f64; WIDTH_BINS], bins: &WidthBins) -> f64 {
    let best = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (sum, count) = (0..WIDTH_BINS)
        .filter(|&b| logits[b] == best)
        .fold((0.0, 0usize), |(s, c), b| (s + bins.center(b), c + 1));
    if count == 0 {
        return bins.center(WIDTH_BINS / 2);
    }
    sum / count as f64
}

/// Binary cross entropy on a logit, stable for large magnitudes.
pub fn bce_with_logit(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

/// Mean of the `k` largest per-point BCE terms with its gradient.
pub fn topk_bce_grad(logits: &[f64], labels: &[u8], k: usize) -> (f64, Vec<f64>) {
    let n = logits.len();
    let mut grad = vec![0.0; n];
    if n == 0 || k == 0 {
        return (0.0, grad);
    }
    let terms: Vec<f64> = (0..n).map(|i| bce_with_logit(logits[i], labels[i] as f64)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| terms[b].total_cmp(&terms[a]).then(a.cmp(&b)));
    let k = k.min(n);
    let mut loss = 0.0;
    for &i in &order[..k] {
        loss += terms[i];
        grad[i] = (sigmoid(logits[i]) - labels[i] as f64) / k as f64;
    }
    (loss / k as f64, grad)
}

pub fn topk_bce(logits: &[f64], labels: &[u8], k: usize) -> f64 {
    topk_bce_grad(logits, labels, k).0
}

/// Weighted multi-label BCE against one-hot width bins, averaged over
/// points and bins, with its gradient.
pub fn width_loss_grad(
    logits: &[[f64; WIDTH_BINS]],
    widths: &[f64],
    bins: &WidthBins,
) -> Result<(f64, Vec<[f64; WIDTH_BINS]>)> {
    let n = logits.len();
    let mut grad = vec![[0.0; WIDTH_BINS]; n];
    if n == 0 {
        return Ok((0.0, grad));
    }
    let norm = (n * WIDTH_BINS) as f64;
    let mut loss = 0.0;
    for i in 0..n {
        let target = bins.bin_of(widths[i])?;
        for b in 0..WIDTH_BINS {
            let y = if b == target { 1.0 } else { 0.0 };
            let w = bins.weights[b];
            loss += w * bce_with_logit(logits[i][b], y);
            grad[i][b] = w * (sigmoid(logits[i][b]) - y) / norm;
        }
    }
    Ok((loss / norm, grad))
}

pub fn width_loss(logits: &[[f64; WIDTH_BINS]], widths: &[f64], bins: &WidthBins) -> Result<f64> {
    width_loss_grad(logits, widths, bins).map(|r| r.0)
}

/// Baseline and approach from raw head outputs, with norms floored so
/// training never divides by zero.
pub fn gram_schmidt_smooth(z1: &Vec3, z2: &Vec3) -> (Vec3, Vec3) {
    let b = z1 / z1.norm().max(NORM_FLOOR);
    let r = z2 - b.dot(z2) * b;
    (b, r / r.norm().max(NORM_FLOOR))
}

/// Pulls adjoints of `(b, a)` back to `(z1, z2)`.
pub fn gram_schmidt_backward(z1: &Vec3, z2: &Vec3, gb: &Vec3, ga: &Vec3) -> (Vec3, Vec3) {
    let n1 = z1.norm().max(NORM_FLOOR);
    let b = z1 / n1;
    let r = z2 - b.dot(z2) * b;
    let rn = r.norm().max(NORM_FLOOR);
    let a = r / rn;
    let gr = (ga - a * a.dot(ga)) / rn;
    let gz2 = gr - b * b.dot(&gr);
    let gb_total = gb - z2 * b.dot(&gr) - gr * b.dot(z2);
    let gz1 = (gb_total - b * b.dot(&gb_total)) / n1;
    (gz1, gz2)
}

/// Control points of every ground-truth grasp and its flip, with the
/// grasped object's segment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruthPoints {
    pub points: Vec<[Vec3; 5]>,
    pub objects: Vec<i32>,
}

impl GroundTruthPoints {
    pub fn new<'a>(grasps: impl IntoIterator<Item = (&'a GraspPose, i32)>, gripper: &GripperModel) -> Self {
        let mut out = Self::default();
        for (g, object) in grasps {
            for pose in [g.clone(), symmetric_grasp(g)] {
                let c = contact_from_grasp(&pose, gripper);
                out.push_contact(&c.contact, &c.baseline, &c.approach, c.width, object, gripper);
            }
        }
        out
    }

    /// Adds one grasp given by its contact encoding (no flip added).
    pub fn push_contact(&mut self, contact: &Vec3, b: &Vec3, a: &Vec3, width: f64, object: i32, gripper: &GripperModel) {
        self.points.push(predicted_points(contact, b, a, width, gripper));
        self.objects.push(object);
    }

    pub fn translated(&self, shift: &Vec3) -> Self {
        Self {
            points: self.points.iter().map(|ps| ps.map(|p| p + shift)).collect(),
            objects: self.objects.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Which ground-truth grasps a prediction is compared with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddsScope {
    #[default]
    Scene,
    /// Only grasps on the object the anchor point belongs to, falling back
    /// to the whole scene when that object has none.
    Object,
}

fn mean_distance(a: &[Vec3; 5], b: &[Vec3; 5]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / 5.0
}

/// Index of the closest ground-truth point set and its mean distance; ties
/// go to the lowest index.
pub fn closest_ground_truth(pred: &[Vec3; 5], gt: &GroundTruthPoints, object: Option<i32>) -> Option<(usize, f64)> {
    let centroid = |ps: &[Vec3; 5]| ps.iter().sum::<Vec3>() / 5.0;
    let pc = centroid(pred);
    let mut best: Option<(usize, f64)> = None;
    for (u, ps) in gt.points.iter().enumerate() {
        if object.is_some_and(|o| gt.objects[u] != o) {
            continue;
        }
        // centroid distance never exceeds the mean point distance
        if best.is_some_and(|(_, d)| (centroid(ps) - pc).norm() > d) {
            continue;
        }
        let d = mean_distance(pred, ps);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((u, d));
        }
    }
    best
}

/// Predicted control points for an anchor point, head outputs and width.
pub fn predicted_points(p: &Vec3, b: &Vec3, a: &Vec3, width: f64, gripper: &GripperModel) -> [Vec3; 5] {
    gripper
        .control_points()
        .map(|c| p + (width / 2.0 + c.x) * b + (gripper.base_offset_m + c.z) * a)
}

/// Inputs of the pose loss for one view.
pub struct AddsInputs<'a> {
    /// Anchor point of every prediction.
    pub anchors: &'a [Vec3],
    /// Segment of every anchor, used by [`AddsScope::Object`].
    pub segments: &'a [i32],
    pub positives: &'a [usize],
    pub ground_truth: &'a GroundTruthPoints,
    pub scope: AddsScope,
}

/// Confidence-weighted minimum mean control-point distance over the
/// positives, with its gradient.
pub fn adds_loss_grad(
    out: &NetworkOutput,
    inputs: &AddsInputs,
    gripper: &GripperModel,
    bins: &WidthBins,
) -> Result<(f64, NetworkOutput)> {
    let mut grad = NetworkOutput::zeros(out.len());
    if inputs.positives.is_empty() {
        return Err(Error::EmptyPositives);
    }
    if inputs.ground_truth.is_empty() {
        return Err(Error::EmptyPositives);
    }
    let np = inputs.positives.len() as f64;
    let cps = gripper.control_points();
    let mut loss = 0.0;
    for &i in inputs.positives {
        let (b, a) = gram_schmidt_smooth(&out.z1[i], &out.z2[i]);
        let w = decode_width(&out.width_logits[i], bins);
        let pred = predicted_points(&inputs.anchors[i], &b, &a, w, gripper);
        let scoped = match inputs.scope {
            AddsScope::Scene => None,
            AddsScope::Object => {
                let s = inputs.segments[i];
                inputs.ground_truth.objects.contains(&s).then_some(s)
            }
        };
        let (u, d) = closest_ground_truth(&pred, inputs.ground_truth, scoped).expect("ground truth is nonempty");
        let s = sigmoid(out.conf_logits[i]);
        loss += s * d;
        grad.conf_logits[i] = s * (1.0 - s) * d / np;
        let mut gb = Vec3::zeros();
        let mut ga = Vec3::zeros();
        for (k, c) in cps.iter().enumerate() {
            let diff = pred[k] - inputs.ground_truth.points[u][k];
            let len = diff.norm();
            if len > 0.0 {
                let gv = diff * (s / (5.0 * len * np));
                gb += gv * (w / 2.0 + c.x);
                ga += gv * (gripper.base_offset_m + c.z);
            }
        }
        let (gz1, gz2) = gram_schmidt_backward(&out.z1[i], &out.z2[i], &gb, &ga);
        grad.z1[i] = gz1;
        grad.z2[i] = gz2;
    }
    Ok((loss / np, grad))
}

pub fn adds_loss(out: &NetworkOutput, inputs: &AddsInputs, gripper: &GripperModel, bins: &WidthBins) -> Result<f64> {
    adds_loss_grad(out, inputs, gripper, bins).map(|r| r.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 10.0,
            gamma: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bce: f64,
    pub adds: f64,
    pub width: f64,
    pub total: f64,
}

pub fn total_loss(bce: f64, adds: f64, width: f64, weights: &LossWeights) -> f64 {
    weights.alpha * bce + weights.beta * adds + weights.gamma * width
}

/// Everything the losses need for one view besides the network output.
pub struct LossTargets<'a> {
    pub anchors: &'a [Vec3],
    pub segments: &'a [i32],
    pub success: &'a [u8],
    /// Assigned widths; only read at positives.
    pub widths: &'a [f64],
    pub ground_truth: &'a GroundTruthPoints,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub top_k: usize,
    pub scope: AddsScope,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            top_k: 64,
            scope: AddsScope::Scene,
        }
    }
}

/// All three losses, their weighted sum and its gradient. With no positive
/// points the pose and width terms are zero.
pub fn compute_losses(
    out: &NetworkOutput,
    targets: &LossTargets,
    config: &LossConfig,
    gripper: &GripperModel,
    bins: &WidthBins,
) -> Result<(LossBreakdown, NetworkOutput)> {
    let w = &config.weights;
    let (bce, gconf) = topk_bce_grad(&out.conf_logits, targets.success, config.top_k);
    let mut grad = NetworkOutput::zeros(out.len());
    for (g, v) in grad.conf_logits.iter_mut().zip(&gconf) {
        *g = w.alpha * v;
    }
    let positives: Vec<usize> = (0..out.len()).filter(|&i| targets.success[i] == 1).collect();
    let mut adds = 0.0;
    let mut width = 0.0;
    if !positives.is_empty() && !targets.ground_truth.is_empty() {
        if w.beta != 0.0 {
            let inputs = AddsInputs {
                anchors: targets.anchors,
                segments: targets.segments,
                positives: &positives,
                ground_truth: targets.ground_truth,
                scope: config.scope,
            };
            let (l, g) = adds_loss_grad(out, &inputs, gripper, bins)?;
            adds = l;
            grad.add_scaled(&g, w.beta);
        }
        let logits: Vec<_> = positives.iter().map(|&i| out.width_logits[i]).collect();
        let widths: Vec<f64> = positives.iter().map(|&i| targets.widths[i]).collect();
        let (l, g) = width_loss_grad(&logits, &widths, bins)?;
        width = l;
        for (k, &i) in positives.iter().enumerate() {
            for b in 0..WIDTH_BINS {
                grad.width_logits[i][b] += w.gamma * g[k][b];
            }
        }
    }
    let total = total_loss(bce, adds, width, w);
    Ok((
        LossBreakdown {
            bce,
            adds,
            width,
            total,
        },
        grad,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{grasp_from_contact, ContactGraspParams};
    use nalgebra::Unit;

    #[test]
    fn width_binning() {
        let bins = WidthBins::uniform(0.08);
        assert_eq!(bins.bin_of(0.03).unwrap(), 3);
        assert_eq!(bins.bin_of(0.08).unwrap(), 9);
        assert_eq!(bins.bin_of(0.0).unwrap(), 0);
        assert!(matches!(bins.bin_of(0.081), Err(Error::WidthOutOfRange { .. })));
        assert!(bins.bin_of(-1e-9).is_err());
    }

    #[test]
    fn decode_examples() {
        let bins = WidthBins::uniform(0.08);
        let mut l = [0.0; WIDTH_BINS];
        l[3] = 2.0;
        assert!((decode_width(&l, &bins) - 0.028).abs() < 1e-15);
        assert!((decode_width(&[0.5; WIDTH_BINS], &bins) - 0.04).abs() < 1e-15);
        for i in 0..=800 {
            let w = 0.08 * i as f64 / 800.0;
            let mut l = [-5.0; WIDTH_BINS];
            l[bins.bin_of(w).unwrap()] = 5.0;
            assert!((decode_width(&l, &bins) - w).abs() <= 0.004 + 1e-15);
        }
    }

    #[test]
    fn uniform_histogram_gives_unit_weights() {
        let widths = (0..1000).map(|i| 0.08 * (i as f64 + 0.5) / 1000.0);
        let bins = WidthBins::from_widths(widths, 0.08).unwrap();
        assert_eq!(bins.weights, [1.0; WIDTH_BINS]);
        let skewed = WidthBins::from_widths([0.01, 0.011, 0.012, 0.05], 0.08).unwrap();
        assert_eq!(skewed.weights[1], 1.0);
        assert_eq!(skewed.weights[0], WidthBins::WEIGHT_CAP);
        assert!((skewed.weights[6] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn topk_examples() {
        let logits = [0.3, -1.2, 2.0, 0.1];
        let labels = [1, 0, 0, 1];
        let terms: Vec<f64> = (0..4).map(|i| bce_with_logit(logits[i], labels[i] as f64)).collect();
        let mean = terms.iter().sum::<f64>() / 4.0;
        assert!((topk_bce(&logits, &labels, 4) - mean).abs() < 1e-15);
        assert!((topk_bce(&logits, &labels, 100) - mean).abs() < 1e-15);
        assert!(topk_bce(&[40.0, -40.0], &[1, 0], 1) < 1e-15);
    }

    #[test]
    fn total_is_weighted_sum() {
        let w = LossWeights::default();
        assert!((total_loss(0.2, 0.05, 0.1, &w) - 0.8).abs() < 1e-15);
        assert_eq!(total_loss(0.0, 0.0, 0.0, &w), 0.0);
    }

    #[test]
    fn adds_zero_at_ground_truth() {
        let g = GripperModel::default();
        let bins = WidthBins::uniform(g.max_width_m);
        let p = Vec3::new(0.1, -0.2, 0.5);
        let b = Vec3::new(1.0, 2.0, 2.0).normalize();
        let a = crate::geometry::any_orthogonal(&b);
        let mut l = [0.0; WIDTH_BINS];
        l[4] = 1.0;
        let w = decode_width(&l, &bins);
        let gt = grasp_from_contact(
            &ContactGraspParams::new(p, Unit::new_normalize(b), Unit::new_normalize(a), w).unwrap(),
            &g,
        )
        .unwrap();
        let points = GroundTruthPoints::new([(&gt, 1)], &g);
        let out = NetworkOutput {
            conf_logits: vec![0.7],
            z1: vec![b * 3.0],
            z2: vec![a * 0.5 + b * 0.2],
            width_logits: vec![l],
        };
        let inputs = AddsInputs {
            anchors: &[p],
            segments: &[1],
            positives: &[0],
            ground_truth: &points,
            scope: AddsScope::Scene,
        };
        assert_eq!(adds_loss(&out, &inputs, &g, &bins).unwrap(), 0.0);
        let empty = AddsInputs { positives: &[], ..inputs };
        assert!(matches!(adds_loss(&out, &empty, &g, &bins), Err(Error::EmptyPositives)));
    }
}
