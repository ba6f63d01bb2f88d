use std::path::{Path, PathBuf};

use cgk_core::annotation::{GraspSet, GraspSetFile};
use cgk_core::benchmark::{prepare, run_variant, Variant, VariantReport};
use cgk_core::dataset::{generate_scenes, render_views, AnnotatedScene};
use cgk_core::geometry::Vec3;
use cgk_core::gradcheck::run_all;
use cgk_core::inference::{
    evaluate as evaluate_proposals, extract_local_region, filter_by_segment, propose, select_grasps, ProposalFile,
};
use cgk_core::losses::WidthBins;
use cgk_core::network::{read_checkpoint, write_checkpoint, PointSetNetwork};
use cgk_core::ply::{read_ply, write_ply, PlyCloud};
use cgk_core::scene::{default_catalog, Catalog, Scene, SceneFile};
use cgk_core::train::{trace_csv, train as train_network};

use crate::config::PipelineConfig;
use crate::files::{
    grasps_path, read_bytes, read_json, scene_path, view_stem, write_atomic, write_json, MaskFile, ViewFile,
};
use crate::CliError;

fn catalog() -> Result<Catalog, CliError> {
    Ok(Catalog::build(default_catalog())?)
}

pub fn generate(config: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let catalog = catalog()?;
    let scenes = generate_scenes(&catalog, &config.data, config.seed, 0..config.scenes)?;
    for s in &scenes {
        let index = s.scene.seed;
        write_json(&scene_path(out, index), &s.scene.to_file(&catalog))?;
        write_json(&grasps_path(out, index), &s.grasps.to_file())?;
    }
    write_json(&out.join("config.json"), config)?;
    let total: usize = scenes.iter().map(|s| s.grasps.grasps.len()).sum();
    println!("generated {} scenes with {total} grasps in {}", scenes.len(), out.display());
    Ok(())
}

/// Scenes written by `generate`, in index order.
fn load_scenes(catalog: &Catalog, data: &Path) -> Result<Vec<AnnotatedScene>, CliError> {
    let dir = data.join("scenes");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| CliError::missing(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::missing(
            &dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no scene files"),
        ));
    }
    paths.iter().map(|p| load_scene(catalog, data, p)).collect()
}

fn load_scene(catalog: &Catalog, data: &Path, path: &Path) -> Result<AnnotatedScene, CliError> {
    let file: SceneFile = read_json(path)?;
    let scene = Scene::from_file(&file, catalog)?;
    let grasps: GraspSetFile = read_json(&grasps_path(data, scene.seed))?;
    Ok(AnnotatedScene {
        geometry: scene.geometry(catalog),
        grasps: GraspSet::from_file(&grasps)?,
        scene,
    })
}

pub fn render(config: &PipelineConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    let catalog = catalog()?;
    let scenes = load_scenes(&catalog, data)?;
    let views = render_views(&scenes, &config.data, config.seed)?;
    let per_scene = config.data.views_per_scene;
    for (k, v) in views.iter().enumerate() {
        let index = scenes[v.scene_index].scene.seed;
        let stem = view_stem(out, index, k % per_scene);
        let cloud = PlyCloud {
            points: v.cloud.points.clone(),
            segments: v.cloud.segments.clone(),
            success: v.cloud.success.clone(),
            grasp_index: v.cloud.grasp_index.clone(),
        };
        let mut bytes = Vec::new();
        write_ply(&cloud, &mut bytes)?;
        write_atomic(&stem.with_extension("ply"), &bytes)?;
        write_json(&stem.with_extension("json"), &ViewFile::new(index, k % per_scene, &v.camera))?;
    }
    println!("rendered {} views into {}", views.len(), out.join("views").display());
    Ok(())
}

pub fn train(config: &PipelineConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    let catalog = catalog()?;
    let scenes = load_scenes(&catalog, data)?;
    let views = render_views(&scenes, &config.data, config.seed)?;
    drop(scenes);
    let mut net = PointSetNetwork::new(config.network.clone())?;
    let outcome = train_network(&mut net, &views, &config.train, &config.data.gripper)?;
    let mut bytes = Vec::new();
    write_checkpoint(&net, &mut bytes)?;
    write_atomic(&out.join("checkpoint.bin"), &bytes)?;
    write_atomic(&out.join("loss.csv"), trace_csv(&outcome.trace).as_bytes())?;
    if let (Some(first), Some(last)) = (outcome.trace.first(), outcome.trace.last()) {
        println!(
            "trained {} steps on {} views: loss {:.4} -> {:.4}",
            outcome.trace.len(),
            views.len(),
            first.total,
            last.total
        );
    }
    Ok(())
}

pub fn infer(
    config: &PipelineConfig,
    checkpoint: &Path,
    cloud: &Path,
    mask: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let net = read_checkpoint(read_bytes(checkpoint)?.as_slice())?;
    let cloud = read_ply(read_bytes(cloud)?.as_slice())?;
    let gripper = &config.data.gripper;
    // decoding only needs the bin centers, which the weights do not affect
    let bins = WidthBins::uniform(gripper.max_width_m);
    let proposals = match mask {
        None => {
            let mut all = propose(&net, &cloud.points, Some(&cloud.segments), &bins, gripper, config.seed)?;
            all.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
            all
        }
        Some(path) => {
            let mask: MaskFile = read_json(path)?;
            let segments = mask.segments.unwrap_or(cloud.segments);
            if segments.len() != cloud.points.len() {
                return Err(CliError::Input(format!(
                    "mask has {} entries for {} points",
                    segments.len(),
                    cloud.points.len()
                )));
            }
            let region = extract_local_region(&cloud.points, &segments, mask.target)?;
            let raw = propose(&net, &region.points, Some(&region.segments), &bins, gripper, config.seed)?;
            let on_object = filter_by_segment(&raw, &region.points, &region.segments, mask.target);
            select_grasps(&on_object, &config.selection)
        }
    };
    write_json(&out.join("proposals.json"), &ProposalFile::new("camera", &proposals))?;
    println!("{} proposals", proposals.len());
    Ok(())
}

pub fn evaluate(
    config: &PipelineConfig,
    proposals: &Path,
    view: &Path,
    data: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let catalog = catalog()?;
    let file: ProposalFile = read_json(proposals)?;
    let view: ViewFile = read_json(view)?;
    let scene = load_scene(&catalog, data, &scene_path(data, view.scene))?;
    let to_world = match file.frame.as_str() {
        "camera" => view.camera()?.pose,
        "world" => nalgebra::Isometry3::identity(),
        other => return Err(CliError::Input(format!("unknown proposal frame {other:?}"))),
    };
    let world: Vec<_> = file.proposals()?.iter().map(|p| p.transformed(&to_world)).collect();
    let gt: Vec<Vec3> = scene.grasps.grasps.iter().map(|g| g.pose.translation).collect();
    let report = evaluate_proposals(
        &[(&scene.geometry, world.as_slice(), gt.as_slice())],
        &config.data.gripper,
        config.data.annotation.friction_mu,
        config.benchmark.coverage_radius_m,
    );
    write_json(&out.join("eval.json"), &report)?;
    let mut csv = String::from("decile,success_rate\n");
    for (d, r) in report.decile_success.iter().enumerate() {
        csv.push_str(&format!("{},{r}\n", d + 1));
    }
    write_atomic(&out.join("calibration.csv"), csv.as_bytes())?;
    println!(
        "success {:.3} ({}/{}), coverage {:.3}",
        report.success_rate, report.successes, report.proposals, report.coverage
    );
    Ok(())
}

pub fn gradcheck(seed: u64, out: &Path) -> Result<(), CliError> {
    let rows = run_all(seed)?;
    println!("{:<10} {:>9} {:>12} result", "gradient", "instances", "max rel err");
    for r in &rows {
        println!(
            "{:<10} {:>9} {:>12.3e} {}",
            r.name,
            r.instances,
            r.max_relative_error,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    write_json(&out.join("gradcheck.json"), &rows)?;
    match rows.iter().find(|r| !r.passed) {
        Some(r) => Err(CliError::Numerical(format!(
            "{} gradient off by {:.3e}",
            r.name, r.max_relative_error
        ))),
        None => Ok(()),
    }
}

pub fn ablate(config: &PipelineConfig, names: &[String], out: &Path) -> Result<(), CliError> {
    let variants: Vec<Variant> = if names.is_empty() {
        Variant::ALL.to_vec()
    } else {
        names
            .iter()
            .map(|n| Variant::parse(n).ok_or_else(|| CliError::Config(format!("unknown variant {n:?}"))))
            .collect::<Result<_, _>>()?
    };
    let catalog = catalog()?;
    let benchmark = prepare(&catalog, &config.data, &config.benchmark, config.seed)?;
    let mut reports: Vec<VariantReport> = Vec::new();
    let mut csv = String::from(
        "variant,object_success_rate,object_proposals,coverage,scene_success_rate,top_decile,bottom_decile\n",
    );
    for v in variants {
        let (net, _, report) = run_variant(
            v,
            &config.network,
            &config.train,
            &config.data,
            &config.benchmark,
            &benchmark,
        )?;
        let mut bytes = Vec::new();
        write_checkpoint(&net, &mut bytes)?;
        write_atomic(&out.join(format!("checkpoint_{}.bin", v.name())), &bytes)?;
        write_atomic(&out.join(format!("loss_{}.csv", v.name())), trace_csv(&report.trace).as_bytes())?;
        let r = &report.report;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            v.name(),
            r.object_success_rate,
            r.object_proposals,
            r.coverage,
            r.scene_success_rate,
            r.top_decile(),
            r.bottom_decile()
        ));
        println!(
            "{:<20} success {:.3} coverage {:.3} top decile {:.3} bottom decile {:.3}",
            v.name(),
            r.object_success_rate,
            r.coverage,
            r.top_decile(),
            r.bottom_decile()
        );
        reports.push(report);
    }
    let summary: Vec<_> = reports
        .iter()
        .map(|r| serde_json::json!({"variant": r.variant, "report": r.report}))
        .collect();
    write_json(&out.join("ablation.json"), &summary)?;
    write_atomic(&out.join("ablation.csv"), csv.as_bytes())?;
    Ok(())
}
