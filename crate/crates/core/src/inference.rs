//! Grasp proposals from a trained network, selection, and evaluation against
//! the success oracle and the ground-truth grasp set.

use serde::{Deserialize, Serialize};

use crate::annotation::grasp_succeeds;
use crate::geometry::{grasp_from_contact, orthonormalize, ContactGraspParams, GraspPose, GripperModel, Vec3};
use crate::losses::{decode_width, WidthBins};
use crate::network::{farthest_point_sample, PointSetNetwork};
use crate::render::{center_cloud, subsample_indices, VoxelGrid};
use crate::rng::stream;
use crate::scene::SceneGeometry;
use crate::tape::sigmoid;
use crate::{Error, Result};

/// Smallest and largest edge of the cube cropped around a segment, meters.
pub const CROP_EDGE_RANGE: (f64, f64) = (0.3, 0.6);

/// Indices of the points inside the axis-aligned cube centered on the
/// segment's centroid, with edge twice the segment's largest extent clamped
/// to [`CROP_EDGE_RANGE`]. Returns the indices and the edge length.
pub fn local_region_indices(points: &[Vec3], segments: &[i32], segment: i32) -> Result<(Vec<usize>, f64)> {
    let members: Vec<&Vec3> = points
        .iter()
        .zip(segments)
        .filter(|(_, &s)| s == segment)
        .map(|(p, _)| p)
        .collect();
    if members.is_empty() {
        return Err(Error::EmptySegment(segment));
    }
    let bounds = crate::mesh::Aabb::from_points(members.iter().copied());
    let center = members.iter().fold(Vec3::zeros(), |acc, p| acc + **p) / members.len() as f64;
    let span = bounds.extents().max();
    let edge = (2.0 * span).clamp(CROP_EDGE_RANGE.0, CROP_EDGE_RANGE.1);
    let half = edge / 2.0;
    let inside = points
        .iter()
        .enumerate()
        .filter(|(_, p)| (*p - center).abs().max() <= half)
        .map(|(i, _)| i)
        .collect();
    Ok((inside, edge))
}

/// A cropped neighborhood of one segment. Points stay in the input frame;
/// `indices` maps them back to the full cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalRegion {
    pub points: Vec<Vec3>,
    pub segments: Vec<i32>,
    pub indices: Vec<usize>,
    pub edge_m: f64,
}

pub fn extract_local_region(points: &[Vec3], segments: &[i32], segment: i32) -> Result<LocalRegion> {
    let (indices, edge_m) = local_region_indices(points, segments, segment)?;
    Ok(LocalRegion {
        points: indices.iter().map(|&i| points[i]).collect(),
        segments: indices.iter().map(|&i| segments[i]).collect(),
        indices,
        edge_m,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraspProposal {
    pub pose: GraspPose,
    /// Point the grasp is rooted at.
    pub contact: Vec3,
    pub confidence: f64,
    /// Segment of the root point, or 0 when unknown.
    pub segment: i32,
}

/// Runs the network on `points` (any frame) and returns one proposal per
/// predicted point, in that frame. Clouds larger than the network input are
/// subsampled with a stream derived from `seed`; smaller ones are padded by
/// repetition. Predictions whose directions cannot be orthonormalized are
/// dropped.
pub fn propose(
    net: &PointSetNetwork,
    points: &[Vec3],
    segments: Option<&[i32]>,
    bins: &WidthBins,
    gripper: &GripperModel,
    seed: u64,
) -> Result<Vec<GraspProposal>> {
    if points.is_empty() {
        return Err(Error::TooFewPoints {
            got: 0,
            need: net.config.input_points,
        });
    }
    let mut rng = stream(seed, "infer", 0);
    let picks = subsample_indices(points.len(), net.config.input_points, &mut rng);
    let raw: Vec<Vec3> = picks.iter().map(|&i| points[i]).collect();
    let (centered, _) = center_cloud(&raw);
    let pass = net.forward(&centered)?;
    let out = &pass.output;
    let mut proposals = Vec::with_capacity(out.len());
    for (k, &i) in pass.indices.iter().enumerate() {
        let Ok((b, a)) = orthonormalize(&out.z1[k], &out.z2[k]) else {
            continue;
        };
        let width = decode_width(&out.width_logits[k], bins).clamp(0.0, gripper.max_width_m);
        let contact = raw[i];
        let params = ContactGraspParams::new(contact, b, a, width)?;
        proposals.push(GraspProposal {
            pose: grasp_from_contact(&params, gripper)?,
            contact,
            confidence: sigmoid(out.conf_logits[k]),
            segment: segments.map_or(0, |s| s[picks[i]]),
        });
    }
    Ok(proposals)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionParams {
    pub threshold: f64,
    /// Used instead of `threshold` when fewer than `min_count` proposals pass it.
    pub fallback_threshold: f64,
    pub min_count: usize,
    /// At most this many grasps are kept, spread out by farthest-point
    /// sampling of their contacts.
    pub diversity_count: usize,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            threshold: 0.23,
            fallback_threshold: 0.19,
            min_count: 5,
            diversity_count: 20,
        }
    }
}

/// Thresholds by confidence, thins out by contact position and returns the
/// survivors by descending confidence.
pub fn select_grasps(proposals: &[GraspProposal], params: &SelectionParams) -> Vec<GraspProposal> {
    let above = |t: f64| -> Vec<usize> { (0..proposals.len()).filter(|&i| proposals[i].confidence >= t).collect() };
    let mut kept = above(params.threshold);
    if kept.len() < params.min_count {
        kept = above(params.fallback_threshold.min(params.threshold));
    }
    // stable: equal confidences keep input order
    kept.sort_by(|&i, &j| proposals[j].confidence.total_cmp(&proposals[i].confidence));
    if kept.len() > params.diversity_count {
        let contacts: Vec<Vec3> = kept.iter().map(|&i| proposals[i].contact).collect();
        let mut chosen: Vec<usize> = farthest_point_sample(&contacts, params.diversity_count, 0)
            .into_iter()
            .map(|k| kept[k])
            .collect();
        chosen.sort_by(|&i, &j| proposals[j].confidence.total_cmp(&proposals[i].confidence).then(i.cmp(&j)));
        kept = chosen;
    }
    kept.into_iter().map(|i| proposals[i].clone()).collect()
}

/// Keeps the proposals whose contact's nearest cloud point carries `target`
/// in `mask`.
pub fn filter_by_segment(
    proposals: &[GraspProposal],
    points: &[Vec3],
    mask: &[i32],
    target: i32,
) -> Vec<GraspProposal> {
    if points.is_empty() || !mask.contains(&target) {
        return Vec::new();
    }
    let grid = VoxelGrid::new(points, 0.01);
    proposals
        .iter()
        .filter(|p| {
            let nearest = grid.nearest(points, &p.contact).map(|(i, _)| i).unwrap_or_else(|| {
                (0..points.len())
                    .min_by(|&i, &j| (points[i] - p.contact).norm().total_cmp(&(points[j] - p.contact).norm()))
                    .expect("non-empty")
            });
            mask[nearest] == target
        })
        .cloned()
        .collect()
}

/// Grasp-success oracle for a world-frame pose.
pub fn evaluate_success(scene: &SceneGeometry, gripper: &GripperModel, pose: &GraspPose, mu: f64) -> bool {
    grasp_succeeds(scene, gripper, pose, mu)
}

/// Fraction of ground-truth grasps with a proposal whose gripper origin lies
/// closer than `radius` to theirs. 0 when there is no ground truth.
pub fn coverage(proposals: &[Vec3], ground_truth: &[Vec3], radius: f64) -> f64 {
    if ground_truth.is_empty() || proposals.is_empty() {
        return 0.0;
    }
    let grid = VoxelGrid::new(proposals, radius);
    let covered = ground_truth
        .iter()
        .filter(|g| grid.nearest(proposals, g).is_some())
        .count();
    covered as f64 / ground_truth.len() as f64
}

/// Success rate in each of `buckets` contiguous chunks of the proposals
/// sorted by descending confidence (first chunk = most confident).
pub fn confidence_calibration_curve(confidences: &[f64], successes: &[bool], buckets: usize) -> Result<Vec<f64>> {
    let n = confidences.len();
    if n != successes.len() {
        return Err(Error::DegenerateInput(format!(
            "{n} confidences but {} outcomes",
            successes.len()
        )));
    }
    if buckets == 0 || n < buckets {
        return Err(Error::DegenerateInput(format!("{n} proposals for {buckets} buckets")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| confidences[j].total_cmp(&confidences[i]));
    Ok((0..buckets)
        .map(|d| {
            let chunk = &order[d * n / buckets..(d + 1) * n / buckets];
            chunk.iter().filter(|&&i| successes[i]).count() as f64 / chunk.len() as f64
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub proposals: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub ground_truth: usize,
    pub coverage: f64,
    /// Success rate per confidence decile, most confident first; empty with
    /// fewer than ten proposals.
    pub decile_success: Vec<f64>,
}

/// Scores world-frame proposals on one or more scenes. Each entry pairs a
/// scene with its proposals and the ground-truth gripper origins.
pub fn evaluate(
    scenes: &[(&SceneGeometry, &[GraspProposal], &[Vec3])],
    gripper: &GripperModel,
    mu: f64,
    coverage_radius: f64,
) -> EvalReport {
    let mut confidences = Vec::new();
    let mut outcomes = Vec::new();
    let mut covered = 0.0;
    let mut gt_total = 0;
    for (scene, proposals, gt) in scenes {
        for p in proposals.iter() {
            confidences.push(p.confidence);
            outcomes.push(evaluate_success(scene, gripper, &p.pose, mu));
        }
        let origins: Vec<Vec3> = proposals.iter().map(|p| p.pose.translation).collect();
        covered += coverage(&origins, gt, coverage_radius) * gt.len() as f64;
        gt_total += gt.len();
    }
    let successes = outcomes.iter().filter(|&&s| s).count();
    EvalReport {
        proposals: outcomes.len(),
        successes,
        success_rate: if outcomes.is_empty() { 0.0 } else { successes as f64 / outcomes.len() as f64 },
        ground_truth: gt_total,
        coverage: if gt_total == 0 { 0.0 } else { covered / gt_total as f64 },
        decile_success: confidence_calibration_curve(&confidences, &outcomes, 10).unwrap_or_default(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub pose: [f64; 16],
    pub width: f64,
    pub contact: [f64; 3],
    pub confidence: f64,
    pub segment: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalFile {
    /// Frame the poses are expressed in, `camera` or `world`.
    pub frame: String,
    pub grasps: Vec<ProposalRecord>,
}

impl ProposalFile {
    pub fn new(frame: &str, proposals: &[GraspProposal]) -> Self {
        Self {
            frame: frame.to_string(),
            grasps: proposals
                .iter()
                .map(|p| ProposalRecord {
                    pose: p.pose.to_row_major(),
                    width: p.pose.width,
                    contact: p.contact.into(),
                    confidence: p.confidence,
                    segment: p.segment,
                })
                .collect(),
        }
    }

    pub fn proposals(&self) -> Result<Vec<GraspProposal>> {
        self.grasps
            .iter()
            .map(|r| {
                if !(r.confidence.is_finite() && (0.0..=1.0).contains(&r.confidence)) {
                    return Err(Error::format("proposals", format!("confidence {}", r.confidence)));
                }
                Ok(GraspProposal {
                    pose: GraspPose::from_row_major(&r.pose, r.width)?,
                    contact: r.contact.into(),
                    confidence: r.confidence,
                    segment: r.segment,
                })
            })
            .collect()
    }
}

impl GraspProposal {
    pub fn transformed(&self, iso: &nalgebra::Isometry3<f64>) -> Self {
        Self {
            pose: self.pose.transformed(iso),
            contact: iso.transform_point(&nalgebra::Point3::from(self.contact)).coords,
            confidence: self.confidence,
            segment: self.segment,
        }
    }
}
