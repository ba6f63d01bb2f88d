mod common;

use cgk_core::dataset::{generate_scenes, render_views, DataConfig};
use cgk_core::geometry::Vec3;
use cgk_core::mesh::TriangleMesh;

fn edge_crosses(p: &Vec3, q: &Vec3, tri: &[Vec3; 3]) -> bool {
    common::ray_hit(p, &(q - p), tri).is_some_and(|t| (0.0..=1.0).contains(&t))
}

fn triangles_meet(a: &[Vec3; 3], b: &[Vec3; 3]) -> bool {
    (0..3).any(|i| edge_crosses(&a[i], &a[(i + 1) % 3], b) || edge_crosses(&b[i], &b[(i + 1) % 3], a))
}

fn meshes_overlap(a: &TriangleMesh, b: &TriangleMesh) -> bool {
    let boxed = |m: &TriangleMesh| -> Vec<([Vec3; 3], Vec3, Vec3)> {
        (0..m.triangles.len())
            .map(|t| {
                let tri = m.triangle(t);
                let lo = tri[0].inf(&tri[1]).inf(&tri[2]);
                let hi = tri[0].sup(&tri[1]).sup(&tri[2]);
                (tri, lo, hi)
            })
            .collect()
    };
    let (ta, tb) = (boxed(a), boxed(b));
    let surfaces = ta.iter().any(|(x, xl, xh)| {
        tb.iter().any(|(y, yl, yh)| {
            (0..3).all(|k| xl[k] <= yh[k] && yl[k] <= xh[k]) && triangles_meet(x, y)
        })
    });
    surfaces || common::inside(b, &a.vertices[0]) || common::inside(a, &b.vertices[0])
}

#[test]
fn placed_objects_never_interpenetrate() {
    let (_, scenes) = common::scenes(21, 6);
    let mut pairs = 0;
    for s in &scenes {
        let objects = &s.geometry.objects;
        for i in 0..objects.len() {
            for j in i + 1..objects.len() {
                assert!(
                    !meshes_overlap(&objects[i].mesh, &objects[j].mesh),
                    "scene {} objects {i} and {j}",
                    s.scene.seed
                );
                pairs += 1;
            }
        }
    }
    assert!(pairs > 10, "{pairs}");
}

fn run_with_threads(threads: usize) -> (Vec<String>, Vec<Vec<Vec3>>, Vec<Vec<u8>>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let catalog = common::catalog();
        let config = DataConfig {
            views_per_scene: 2,
            ..DataConfig::default()
        };
        let scenes = generate_scenes(&catalog, &config, 5, 0..3).unwrap();
        let views = render_views(&scenes, &config, 5).unwrap();
        (
            scenes
                .iter()
                .map(|s| serde_json::to_string(&(s.scene.to_file(&catalog), s.grasps.to_file())).unwrap())
                .collect(),
            views.iter().map(|v| v.cloud.points.clone()).collect(),
            views.iter().map(|v| v.cloud.success.clone()).collect(),
        )
    })
}

#[test]
fn generation_ignores_thread_count() {
    let one = run_with_threads(1);
    assert_eq!(one, run_with_threads(3));
    assert_eq!(one, run_with_threads(1));
}
