//! A small multi-scale point-set encoder-decoder with four per-point heads.
//!
//! Set-abstraction levels pick centers by farthest point sampling, group
//! neighbors with several ball radii, run a shared MLP on each neighbor and
//! max-pool per group. Feature propagation interpolates coarse features back
//! to finer points (three nearest neighbors, inverse distance). Predictions
//! are made at the first `m` centers of the first level, which are exactly
//! the `m` farthest points of the input.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::losses::{NetworkOutput, WIDTH_BINS};
use crate::rng::stream;
use crate::tape::{NodeId, Tape, Tensor};
use crate::{Error, Result};

/// Greedy farthest point sampling from `start`; ties go to the lowest index.
pub fn farthest_point_sample(points: &[Vec3], m: usize, start: usize) -> Vec<usize> {
    let n = points.len();
    let m = m.min(n);
    if m == 0 {
        return Vec::new();
    }
    let mut chosen = Vec::with_capacity(m);
    let mut dist = vec![f64::INFINITY; n];
    let mut current = start;
    for _ in 0..m {
        chosen.push(current);
        let c = points[current];
        let mut best = usize::MAX;
        let mut best_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best_d {
                best_d = dist[i];
                best = i;
            }
        }
        current = best;
    }
    chosen
}

/// Index of the point farthest from the origin; ties go to the lowest index.
pub fn farthest_from_origin(points: &[Vec3]) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.norm_squared() > points[best].norm_squared() {
            best = i;
        }
    }
    best
}

/// Up to `max_neighbors` points strictly within `radius` of each center,
/// nearest first with ties by index. A center with no neighbor gets itself.
pub fn query_ball(points: &[Vec3], centers: &[usize], radius: f64, max_neighbors: usize) -> Vec<Vec<usize>> {
    centers
        .iter()
        .map(|&c| {
            let mut near = sorted_neighbors(points, &points[c], radius);
            near.truncate(max_neighbors);
            let mut group: Vec<usize> = near.into_iter().map(|(_, j)| j).collect();
            if group.is_empty() {
                group.push(c);
            }
            group
        })
        .collect()
}

fn sorted_neighbors(points: &[Vec3], center: &Vec3, radius: f64) -> Vec<(f64, usize)> {
    let r2 = radius * radius;
    let mut near: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter_map(|(j, p)| {
            let d = (p - center).norm_squared();
            (d < r2).then_some((d, j))
        })
        .collect();
    near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    near
}

/// Three nearest sources per target with normalized inverse-distance weights.
pub fn three_nn(sources: &[Vec3], targets: &[Vec3]) -> (Vec<[usize; 3]>, Vec<[f64; 3]>) {
    let mut index = Vec::with_capacity(targets.len());
    let mut weight = Vec::with_capacity(targets.len());
    for t in targets {
        let mut best = [(f64::INFINITY, 0usize); 3];
        for (j, s) in sources.iter().enumerate() {
            let d = (s - t).norm_squared();
            if d < best[2].0 {
                best[2] = (d, j);
                if best[2].0 < best[1].0 {
                    best.swap(1, 2);
                    if best[1].0 < best[0].0 {
                        best.swap(0, 1);
                    }
                }
            }
        }
        let inv = best.map(|(d, _)| 1.0 / (d.sqrt() + 1e-8));
        let total: f64 = inv.iter().sum();
        index.push(best.map(|(_, j)| j));
        weight.push(inv.map(|w| w / total));
    }
    (index, weight)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetAbstraction {
    pub centers: usize,
    pub radii_m: Vec<f64>,
    pub max_neighbors: Vec<usize>,
    pub mlps: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Points fed to the network per view.
    pub input_points: usize,
    /// Points at which grasps are predicted.
    pub predict_points: usize,
    pub set_abstraction: Vec<SetAbstraction>,
    /// One MLP per propagation step, coarsest first.
    pub propagation: Vec<Vec<usize>>,
    pub head_hidden: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let sa = |centers, radii: [f64; 3], caps: [usize; 3], w: [usize; 3]| SetAbstraction {
            centers,
            radii_m: radii.to_vec(),
            max_neighbors: caps.to_vec(),
            mlps: vec![w.to_vec(); 3],
        };
        Self {
            input_points: 2048,
            predict_points: 256,
            set_abstraction: vec![
                sa(512, [0.02, 0.04, 0.08], [8, 16, 32], [32, 32, 64]),
                sa(128, [0.04, 0.08, 0.16], [8, 16, 16], [64, 64, 128]),
                sa(32, [0.08, 0.16, 0.32], [8, 8, 16], [128, 128, 256]),
            ],
            propagation: vec![vec![128, 128], vec![128, 128]],
            head_hidden: 64,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// A few-hundred-parameter network for gradient checks on tiny clouds.
    pub fn tiny(seed: u64) -> Self {
        let sa = |centers, radii: [f64; 2], caps: [usize; 2], w: [usize; 2]| SetAbstraction {
            centers,
            radii_m: radii.to_vec(),
            max_neighbors: caps.to_vec(),
            mlps: vec![w.to_vec(); 2],
        };
        Self {
            input_points: 48,
            predict_points: 12,
            set_abstraction: vec![
                sa(16, [0.2, 0.4], [4, 6], [4, 5]),
                sa(8, [0.4, 0.8], [3, 5], [5, 6]),
                sa(4, [0.8, 1.6], [3, 4], [6, 6]),
            ],
            propagation: vec![vec![6], vec![5, 6]],
            head_hidden: 4,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDims(msg));
        let levels = &self.set_abstraction;
        if levels.len() < 2 {
            return bad("need at least two set-abstraction levels".into());
        }
        if self.propagation.len() != levels.len() - 1 {
            return bad(format!(
                "{} set-abstraction levels need {} propagation MLPs",
                levels.len(),
                levels.len() - 1
            ));
        }
        for (i, l) in levels.iter().enumerate() {
            if l.radii_m.is_empty() || l.radii_m.len() != l.max_neighbors.len() || l.radii_m.len() != l.mlps.len() {
                return bad(format!("level {i}: radii, neighbor caps and MLPs differ in count"));
            }
            if l.radii_m.iter().any(|r| !(*r > 0.0)) || l.max_neighbors.contains(&0) {
                return bad(format!("level {i}: radii and neighbor caps must be positive"));
            }
            if l.mlps.iter().any(|m| m.is_empty() || m.contains(&0)) {
                return bad(format!("level {i}: empty MLP"));
            }
            if l.centers < 3 {
                return bad(format!("level {i}: at least 3 centers needed for interpolation"));
            }
            let parent = if i == 0 { self.input_points } else { levels[i - 1].centers };
            if l.centers > parent {
                return bad(format!("level {i}: more centers than points"));
            }
        }
        if self.propagation.iter().any(|m| m.is_empty() || m.contains(&0)) || self.head_hidden == 0 {
            return bad("empty propagation MLP or head".into());
        }
        if self.predict_points == 0 || self.predict_points > levels[0].centers {
            return bad("predict_points must be in 1..=first level centers".into());
        }
        Ok(())
    }

    fn level_width(&self, level: usize) -> usize {
        self.set_abstraction[level]
            .mlps
            .iter()
            .map(|m| *m.last().expect("validated"))
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Layer {
    offset: usize,
    input: usize,
    output: usize,
}

/// Parameter layout, in construction order.
#[derive(Clone, Debug, PartialEq)]
struct Layout {
    /// `[level][branch][layer]`
    sa: Vec<Vec<Vec<Layer>>>,
    fp: Vec<Vec<Layer>>,
    /// conf, z1, z2, width; two layers each
    heads: [[Layer; 2]; 4],
    count: usize,
}

impl Layout {
    fn new(cfg: &NetworkConfig) -> Layout {
        let mut count = 0;
        let mut layer = |input: usize, output: usize| {
            let l = Layer {
                offset: count,
                input,
                output,
            };
            count += input * output + output;
            l
        };
        let chain = |input: usize, widths: &[usize], layer: &mut dyn FnMut(usize, usize) -> Layer| {
            let mut prev = input;
            widths
                .iter()
                .map(|&w| {
                    let l = layer(prev, w);
                    prev = w;
                    l
                })
                .collect::<Vec<_>>()
        };
        let mut sa = Vec::new();
        for (i, level) in cfg.set_abstraction.iter().enumerate() {
            let input = 3 + if i == 0 { 0 } else { cfg.level_width(i - 1) };
            sa.push(level.mlps.iter().map(|m| chain(input, m, &mut layer)).collect());
        }
        let levels = cfg.set_abstraction.len();
        let mut fp = Vec::new();
        let mut coarse = cfg.level_width(levels - 1);
        for (k, mlp) in cfg.propagation.iter().enumerate() {
            let fine_level = levels - 2 - k;
            let input = coarse + cfg.level_width(fine_level);
            fp.push(chain(input, mlp, &mut layer));
            coarse = *mlp.last().expect("validated");
        }
        let h = cfg.head_hidden;
        let heads = [1, 3, 3, WIDTH_BINS].map(|out| [layer(coarse, h), layer(h, out)]);
        Layout { sa, fp, heads, count }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointSetNetwork {
    pub config: NetworkConfig,
    pub params: Vec<f64>,
    layout: Layout,
}

/// Head outputs plus what is needed to backpropagate into the parameters.
pub struct ForwardPass {
    pub output: NetworkOutput,
    /// Input index of every prediction point.
    pub indices: Vec<usize>,
    pub tape: Tape,
    heads: [NodeId; 4],
}

impl PointSetNetwork {
    /// Fresh network with uniform Glorot initialization and zero biases.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.count];
        let mut rng = stream(config.seed, "init", 0);
        let mut init = |l: &Layer| {
            let bound = (6.0 / (l.input + l.output) as f64).sqrt();
            for p in &mut params[l.offset..l.offset + l.input * l.output] {
                *p = rng.random_range(-bound..bound);
            }
        };
        layout.sa.iter().flatten().flatten().for_each(&mut init);
        layout.fp.iter().flatten().for_each(&mut init);
        layout.heads.iter().flatten().for_each(&mut init);
        Ok(Self { config, params, layout })
    }

    pub fn with_params(config: NetworkConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.count {
            return Err(Error::format(
                "checkpoint",
                format!("{} parameters, architecture needs {}", params.len(), layout.count),
            ));
        }
        Ok(Self { config, params, layout })
    }

    pub fn parameter_count(&self) -> usize {
        self.layout.count
    }

    fn mlp(&self, tape: &mut Tape, params: &[f64], mut x: NodeId, layers: &[Layer]) -> NodeId {
        for l in layers {
            x = tape.linear(params, x, l.offset, l.output);
            x = tape.relu(x);
        }
        x
    }

    /// Runs the network on a centered cloud.
    pub fn forward(&self, cloud: &[Vec3]) -> Result<ForwardPass> {
        self.forward_with(&self.params, cloud)
    }

    pub fn forward_with(&self, params: &[f64], cloud: &[Vec3]) -> Result<ForwardPass> {
        let cfg = &self.config;
        let need = cfg.set_abstraction[0].centers.max(cfg.predict_points);
        if cloud.len() < need {
            return Err(Error::TooFewPoints {
                got: cloud.len(),
                need,
            });
        }
        let mut tape = Tape::new();
        let mut xyz: Vec<Vec3> = cloud.to_vec();
        let mut feats: Option<NodeId> = None;
        let mut level_xyz = Vec::new();
        let mut level_feats = Vec::new();
        let mut first_centers = Vec::new();
        for (li, level) in cfg.set_abstraction.iter().enumerate() {
            let start = if li == 0 { farthest_from_origin(&xyz) } else { 0 };
            let centers = farthest_point_sample(&xyz, level.centers, start);
            if li == 0 {
                first_centers = centers.clone();
            }
            let r_max = level.radii_m.iter().copied().fold(0.0, f64::max);
            let k_max = level.max_neighbors.iter().copied().max().unwrap_or(1);
            let near: Vec<Vec<(f64, usize)>> = centers
                .iter()
                .map(|&c| {
                    let mut n = sorted_neighbors(&xyz, &xyz[c], r_max);
                    n.truncate(k_max);
                    n
                })
                .collect();
            let mut branches = Vec::new();
            for (b, (&radius, &cap)) in level.radii_m.iter().zip(&level.max_neighbors).enumerate() {
                let r2 = radius * radius;
                let mut index = Vec::with_capacity(centers.len() * cap);
                let mut rel = Vec::with_capacity(centers.len() * cap * 3);
                for (ci, &c) in centers.iter().enumerate() {
                    let mut group: Vec<usize> =
                        near[ci].iter().take_while(|(d, _)| *d < r2).take(cap).map(|&(_, j)| j).collect();
                    if group.is_empty() {
                        group.push(c);
                    }
                    let first = group[0];
                    group.resize(cap, first);
                    for j in group {
                        let d = (xyz[j] - xyz[c]) / radius;
                        rel.extend_from_slice(&[d.x, d.y, d.z]);
                        index.push(j);
                    }
                }
                let rel = tape.input(Tensor::from_rows(index.len(), 3, rel));
                let input = match feats {
                    Some(f) => {
                        let g = tape.gather(f, index);
                        tape.concat_cols(vec![rel, g])
                    }
                    None => rel,
                };
                let h = self.mlp(&mut tape, params, input, &self.layout.sa[li][b]);
                branches.push(tape.group_max(h, cap));
            }
            let f = if branches.len() == 1 {
                branches[0]
            } else {
                tape.concat_cols(branches)
            };
            xyz = centers.iter().map(|&c| xyz[c]).collect();
            level_xyz.push(xyz.clone());
            level_feats.push(f);
            feats = Some(f);
        }
        let levels = cfg.set_abstraction.len();
        let mut coarse = level_feats[levels - 1];
        for (k, layers) in self.layout.fp.iter().enumerate() {
            let fine = levels - 2 - k;
            let (targets, skip) = if fine == 0 {
                let m = cfg.predict_points;
                let rows: Vec<usize> = (0..m).collect();
                (level_xyz[0][..m].to_vec(), tape.gather(level_feats[0], rows))
            } else {
                (level_xyz[fine].clone(), level_feats[fine])
            };
            let (index, weight) = three_nn(&level_xyz[fine + 1], &targets);
            let up = tape.interpolate(coarse, index, weight);
            let x = tape.concat_cols(vec![up, skip]);
            coarse = self.mlp(&mut tape, params, x, layers);
        }
        let heads = self.layout.heads.map(|[hidden, out]| {
            let h = tape.linear(params, coarse, hidden.offset, hidden.output);
            let h = tape.relu(h);
            tape.linear(params, h, out.offset, out.output)
        });
        let m = cfg.predict_points;
        let v = |i: usize| tape.value(heads[i]);
        let output = NetworkOutput {
            conf_logits: v(0).data.clone(),
            z1: (0..m).map(|r| Vec3::from_row_slice(v(1).row(r))).collect(),
            z2: (0..m).map(|r| Vec3::from_row_slice(v(2).row(r))).collect(),
            width_logits: (0..m)
                .map(|r| v(3).row(r).try_into().expect("width head has ten outputs"))
                .collect(),
        };
        Ok(ForwardPass {
            output,
            indices: first_centers[..m].to_vec(),
            tape,
            heads,
        })
    }

    /// Adds the parameter gradient for the given head adjoints into `grad`.
    pub fn backward(&self, pass: &ForwardPass, params: &[f64], head_grad: &NetworkOutput, grad: &mut [f64]) {
        let conf = head_grad.conf_logits.clone();
        let flat3 = |v: &[Vec3]| v.iter().flat_map(|p| [p.x, p.y, p.z]).collect::<Vec<f64>>();
        let z1 = flat3(&head_grad.z1);
        let z2 = flat3(&head_grad.z2);
        let width: Vec<f64> = head_grad.width_logits.iter().flatten().copied().collect();
        pass.tape.backward(
            params,
            &[
                (pass.heads[0], &conf),
                (pass.heads[1], &z1),
                (pass.heads[2], &z2),
                (pass.heads[3], &width),
            ],
            grad,
        );
    }
}

const MAGIC: &[u8; 8] = b"CGKCKPT1";

/// Writes `magic, u64 header length, JSON config, u64 count, f64 params`, all little-endian.
pub fn write_checkpoint<W: Write>(net: &PointSetNetwork, mut out: W) -> Result<()> {
    let header = serde_json::to_vec(&net.config)?;
    let mut buf = Vec::with_capacity(24 + header.len() + net.params.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(net.params.len() as u64).to_le_bytes());
    for p in &net.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<PointSetNetwork> {
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    let bad = |reason: &str| Error::format("checkpoint", reason.to_string());
    if data.len() < 16 || &data[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let u64_at = |o: usize| -> Result<u64> {
        data.get(o..o + 8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .ok_or_else(|| bad("truncated"))
    };
    let header_len = u64_at(8)? as usize;
    let header = data.get(16..16 + header_len).ok_or_else(|| bad("truncated header"))?;
    let config: NetworkConfig = serde_json::from_slice(header)?;
    let count = u64_at(16 + header_len)? as usize;
    let body = &data[24 + header_len..];
    if body.len() != count * 8 {
        return Err(bad("parameter block length mismatch"));
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    PointSetNetwork::with_params(config, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::center_cloud;

    fn random_cloud(seed: u64, n: usize, scale: f64) -> Vec<Vec3> {
        let mut rng = stream(seed, "cloud", 0);
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                )
            })
            .collect()
    }

    #[test]
    fn fps_collinear() {
        let pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(farthest_point_sample(&pts, 2, 0), vec![0, 9]);
        let mut all = farthest_point_sample(&pts, 10, 3);
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn ball_query_limits() {
        let pts = random_cloud(1, 50, 1.0);
        let g = query_ball(&pts, &[0, 5], 100.0, 64);
        assert_eq!(g[0].len(), 50);
        let g = query_ball(&pts, &[0, 5], 100.0, 10);
        assert_eq!(g[1].len(), 10);
        assert_eq!(g[1][0], 5);
        let g = query_ball(&pts, &[7], 1e-12, 10);
        assert_eq!(g, vec![vec![7]]);
    }

    #[test]
    fn output_shapes_and_finiteness() {
        let net = PointSetNetwork::new(NetworkConfig::tiny(3)).unwrap();
        let (cloud, _) = center_cloud(&random_cloud(2, 48, 0.3));
        let pass = net.forward(&cloud).unwrap();
        assert_eq!(pass.output.len(), 12);
        assert_eq!(pass.output.width_logits.len(), 12);
        assert_eq!(pass.indices.len(), 12);
        assert!(pass.output.is_finite());
    }

    #[test]
    fn too_few_points() {
        let net = PointSetNetwork::new(NetworkConfig::tiny(3)).unwrap();
        assert!(matches!(
            net.forward(&random_cloud(2, 10, 0.3)),
            Err(Error::TooFewPoints { got: 10, need: 16 })
        ));
    }

    #[test]
    fn permutation_equivariance() {
        let net = PointSetNetwork::new(NetworkConfig::tiny(4)).unwrap();
        let (cloud, _) = center_cloud(&random_cloud(5, 48, 0.3));
        let perm: Vec<usize> = (0..48).rev().collect();
        let shuffled: Vec<Vec3> = perm.iter().map(|&i| cloud[i]).collect();
        let a = net.forward(&cloud).unwrap();
        let b = net.forward(&shuffled).unwrap();
        for k in 0..12 {
            assert_eq!(perm[b.indices[k]], a.indices[k]);
            assert!((a.output.conf_logits[k] - b.output.conf_logits[k]).abs() < 1e-12);
            assert!((a.output.z1[k] - b.output.z1[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = PointSetNetwork::new(NetworkConfig::tiny(8)).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&net, &mut bytes).unwrap();
        assert_eq!(read_checkpoint(bytes.as_slice()).unwrap(), net);
        bytes.truncate(bytes.len() - 3);
        assert!(read_checkpoint(bytes.as_slice()).is_err());
    }

    #[test]
    fn default_config_is_valid() {
        let net = PointSetNetwork::new(NetworkConfig::default()).unwrap();
        assert!(net.parameter_count() > 100_000);
    }
}
