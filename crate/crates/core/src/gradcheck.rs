//! Central finite-difference checks of every analytic gradient.

use rand::Rng;
use serde::Serialize;

use crate::geometry::{any_orthogonal, grasp_from_contact, ContactGraspParams, GripperModel, Vec3};
use crate::losses::{
    adds_loss_grad, compute_losses, topk_bce_grad, width_loss_grad, AddsInputs, AddsScope, GroundTruthPoints,
    LossConfig, LossTargets, NetworkOutput, WidthBins, WIDTH_BINS,
};
use crate::network::{NetworkConfig, PointSetNetwork};
use crate::render::center_cloud;
use crate::rng::{stream, StreamRng};
use crate::Result;

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor so near-zero gradients are compared absolutely.
pub const ERROR_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

fn central_difference(x: &mut [f64], i: usize, f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let keep = x[i];
    x[i] = keep + STEP;
    let up = f(x);
    x[i] = keep - STEP;
    let down = f(x);
    x[i] = keep;
    (up - down) / (2.0 * STEP)
}

/// Largest relative error between `grad` and finite differences of `f` at `x`.
pub fn max_error(x: &mut [f64], grad: &[f64], f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    (0..x.len())
        .map(|i| relative_error(grad[i], central_difference(x, i, f)))
        .fold(0.0, f64::max)
}

const STRIDE: usize = 1 + 3 + 3 + WIDTH_BINS;

fn flatten(o: &NetworkOutput) -> Vec<f64> {
    let mut v = Vec::with_capacity(o.len() * STRIDE);
    for i in 0..o.len() {
        v.push(o.conf_logits[i]);
        v.extend(o.z1[i].iter());
        v.extend(o.z2[i].iter());
        v.extend(o.width_logits[i]);
    }
    v
}

fn unflatten(v: &[f64]) -> NetworkOutput {
    let n = v.len() / STRIDE;
    let mut o = NetworkOutput::zeros(n);
    for i in 0..n {
        let r = &v[i * STRIDE..(i + 1) * STRIDE];
        o.conf_logits[i] = r[0];
        o.z1[i] = Vec3::new(r[1], r[2], r[3]);
        o.z2[i] = Vec3::new(r[4], r[5], r[6]);
        o.width_logits[i].copy_from_slice(&r[7..]);
    }
    o
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckRow {
    pub name: &'static str,
    pub instances: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

impl GradcheckRow {
    fn new(name: &'static str, errors: &[f64]) -> Self {
        let max = errors.iter().copied().fold(0.0, f64::max);
        Self {
            name,
            instances: errors.len(),
            max_relative_error: max,
            passed: max < TOLERANCE,
        }
    }
}

fn random_vec(rng: &mut StreamRng, scale: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

fn random_output(rng: &mut StreamRng, n: usize) -> NetworkOutput {
    let mut o = NetworkOutput::zeros(n);
    for i in 0..n {
        o.conf_logits[i] = rng.random_range(-3.0..3.0);
        o.z1[i] = random_vec(rng, 1.0);
        o.z2[i] = random_vec(rng, 1.0);
        for b in 0..WIDTH_BINS {
            o.width_logits[i][b] = rng.random_range(-2.0..2.0);
        }
    }
    o
}

fn random_ground_truth(rng: &mut StreamRng, count: usize, gripper: &GripperModel) -> GroundTruthPoints {
    let poses: Vec<_> = (0..count)
        .map(|_| {
            let b = random_vec(rng, 1.0).normalize();
            let a = any_orthogonal(&b);
            let params = ContactGraspParams::new(
                random_vec(rng, 0.2),
                nalgebra::Unit::new_normalize(b),
                nalgebra::Unit::new_normalize(a),
                rng.random_range(0.0..gripper.max_width_m),
            )
            .expect("orthogonal by construction");
            grasp_from_contact(&params, gripper).expect("valid width")
        })
        .collect();
    GroundTruthPoints::new(poses.iter().map(|p| (p, 1)), gripper)
}

struct Instance {
    output: NetworkOutput,
    anchors: Vec<Vec3>,
    segments: Vec<i32>,
    labels: Vec<u8>,
    widths: Vec<f64>,
    ground_truth: GroundTruthPoints,
}

fn instance(seed: u64, index: u64, n: usize, gripper: &GripperModel) -> Instance {
    let mut rng = stream(seed, "gradcheck", index);
    let output = random_output(&mut rng, n);
    let anchors = (0..n).map(|_| random_vec(&mut rng, 0.2)).collect();
    let mut labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.5) as u8).collect();
    labels[0] = 1;
    let widths = (0..n).map(|_| rng.random_range(0.0..gripper.max_width_m)).collect();
    let ground_truth = random_ground_truth(&mut rng, 6, gripper);
    Instance {
        output,
        anchors,
        segments: vec![1; n],
        labels,
        widths,
        ground_truth,
    }
}

pub fn check_topk_bce(seed: u64, instances: usize) -> GradcheckRow {
    let g = GripperModel::default();
    let errors: Vec<f64> = (0..instances as u64)
        .map(|i| {
            let inst = instance(seed, i, 24, &g);
            let k = 8 + i as usize;
            let mut x = inst.output.conf_logits.clone();
            let (_, grad) = topk_bce_grad(&x, &inst.labels, k);
            max_error(&mut x, &grad, &mut |v| topk_bce_grad(v, &inst.labels, k).0)
        })
        .collect();
    GradcheckRow::new("topk_bce", &errors)
}

pub fn check_width(seed: u64, instances: usize) -> GradcheckRow {
    let g = GripperModel::default();
    let errors: Vec<f64> = (0..instances as u64)
        .map(|i| {
            let inst = instance(seed, i, 24, &g);
            let bins = WidthBins::from_widths(inst.widths.iter().copied(), g.max_width_m).expect("widths in range");
            let mut x: Vec<f64> = inst.output.width_logits.iter().flatten().copied().collect();
            let rows = |v: &[f64]| -> Vec<[f64; WIDTH_BINS]> {
                v.chunks_exact(WIDTH_BINS).map(|c| c.try_into().expect("ten")).collect()
            };
            let (_, grad) = width_loss_grad(&rows(&x), &inst.widths, &bins).expect("widths in range");
            let grad: Vec<f64> = grad.into_iter().flatten().collect();
            max_error(&mut x, &grad, &mut |v| {
                width_loss_grad(&rows(v), &inst.widths, &bins).expect("widths in range").0
            })
        })
        .collect();
    GradcheckRow::new("width", &errors)
}

pub fn check_adds(seed: u64, instances: usize) -> GradcheckRow {
    let g = GripperModel::default();
    let bins = WidthBins::uniform(g.max_width_m);
    let errors: Vec<f64> = (0..instances as u64)
        .map(|i| {
            let inst = instance(seed, i, 24, &g);
            let positives: Vec<usize> = (0..24).filter(|&k| inst.labels[k] == 1).collect();
            let inputs = AddsInputs {
                anchors: &inst.anchors,
                segments: &inst.segments,
                positives: &positives,
                ground_truth: &inst.ground_truth,
                scope: AddsScope::Scene,
            };
            let (_, grad) = adds_loss_grad(&inst.output, &inputs, &g, &bins).expect("has positives");
            let mut x = flatten(&inst.output);
            max_error(&mut x, &flatten(&grad), &mut |v| {
                adds_loss_grad(&unflatten(v), &inputs, &g, &bins).expect("has positives").0
            })
        })
        .collect();
    GradcheckRow::new("adds", &errors)
}

/// Gradient of the total loss with respect to every network parameter.
pub fn check_network(seed: u64, instances: usize) -> Result<GradcheckRow> {
    let g = GripperModel::default();
    let mut errors = Vec::new();
    for i in 0..instances as u64 {
        let mut net = PointSetNetwork::new(NetworkConfig::tiny(seed.wrapping_add(i)))?;
        let mut rng = stream(seed, "gradcheck-cloud", i);
        // zero biases put every group center exactly on a ReLU kink
        for p in &mut net.params {
            *p += rng.random_range(-0.1..0.1);
        }
        let cfg = &net.config;
        let inst = instance(seed, 1000 + i, cfg.predict_points, &g);
        let raw: Vec<Vec3> = (0..cfg.input_points).map(|_| random_vec(&mut rng, 0.3)).collect();
        let (cloud, _) = center_cloud(&raw);
        let bins = WidthBins::from_widths(inst.widths.iter().copied(), g.max_width_m)?;
        let config = LossConfig {
            top_k: cfg.predict_points / 2,
            ..LossConfig::default()
        };
        let pass = net.forward(&cloud)?;
        let anchors: Vec<Vec3> = pass.indices.iter().map(|&k| cloud[k]).collect();
        let targets = LossTargets {
            anchors: &anchors,
            segments: &inst.segments,
            success: &inst.labels,
            widths: &inst.widths,
            ground_truth: &inst.ground_truth,
        };
        let (_, head_grad) = compute_losses(&pass.output, &targets, &config, &g, &bins)?;
        let mut grad = vec![0.0; net.parameter_count()];
        net.backward(&pass, &net.params, &head_grad, &mut grad);
        let mut params = net.params.clone();
        errors.push(max_error(&mut params, &grad, &mut |p| {
            let out = net.forward_with(p, &cloud).expect("same cloud").output;
            compute_losses(&out, &targets, &config, &g, &bins).expect("valid targets").0.total
        }));
    }
    Ok(GradcheckRow::new("network", &errors))
}

/// The three losses on ten instances of 24 points and the end-to-end
/// network on three 48-point clouds.
pub fn run_all(seed: u64) -> Result<Vec<GradcheckRow>> {
    Ok(vec![
        check_topk_bce(seed, 10),
        check_adds(seed, 10),
        check_width(seed, 10),
        check_network(seed, 3)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_round_trip() {
        let mut rng = stream(0, "t", 0);
        let o = random_output(&mut rng, 5);
        assert_eq!(unflatten(&flatten(&o)), o);
    }

    #[test]
    fn error_measure() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 1e-5).abs() < 1e-18);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
