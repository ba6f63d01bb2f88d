//! Procedural table-top scenes.
//!
//! Catalog primitives are dropped onto the table plane `z = 0` in one of
//! their stable resting poses (a convex-hull facet whose support polygon
//! contains the projected center of mass), with random yaw and position.
//! Placements whose convex hull touches an already placed object are
//! rejected and resampled.

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::collide::{convex_hull_2d, convex_hull_facets, convex_hulls_intersect, polygon_inset};
use crate::geometry::{any_orthogonal, isometry_from_row_major, isometry_to_row_major, Vec3};
use crate::mesh::{make_primitive, Aabb, PrimitiveKind, TriangleMesh};
use crate::{Error, Result};

pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub kind: PrimitiveKind,
    pub dims_m: [f64; 3],
    pub resolution: usize,
}

impl CatalogEntry {
    fn new(name: &str, kind: PrimitiveKind, dims_m: [f64; 3], resolution: usize) -> Self {
        Self {
            name: name.to_string(),
            kind,
            dims_m,
            resolution,
        }
    }
}

pub fn default_catalog() -> Vec<CatalogEntry> {
    use PrimitiveKind::*;
    vec![
        CatalogEntry::new("box_small", Box, [0.04, 0.04, 0.06], 8),
        CatalogEntry::new("box_tall", Box, [0.05, 0.035, 0.12], 8),
        CatalogEntry::new("box_flat", Box, [0.09, 0.06, 0.03], 8),
        CatalogEntry::new("block", Box, [0.065, 0.065, 0.065], 8),
        CatalogEntry::new("cylinder_thin", Cylinder, [0.03, 0.03, 0.1], 16),
        CatalogEntry::new("cylinder_wide", Cylinder, [0.06, 0.06, 0.08], 16),
        CatalogEntry::new("mug", CappedMug, [0.105, 0.075, 0.09], 16),
        CatalogEntry::new("bracket", LBracket, [0.08, 0.04, 0.06], 8),
        CatalogEntry::new("bracket_long", LBracket, [0.1, 0.03, 0.05], 8),
    ]
}

/// One way a mesh can rest on the table.
#[derive(Clone, Debug)]
pub struct StableFace {
    /// Rotates the facet's outward normal onto `-z`.
    pub rotation: UnitQuaternion<f64>,
    /// How far the projected center of mass sits inside the support polygon.
    pub margin: f64,
}

/// Stable resting orientations of a watertight mesh (unscaled).
#[derive(Clone, Debug)]
pub struct StablePoses {
    pub faces: Vec<StableFace>,
    pub center_of_mass: Vec3,
    /// Vertices of the convex hull.
    pub hull_points: Vec<Vec3>,
}

impl StablePoses {
    pub fn new(mesh: &TriangleMesh) -> Self {
        let com = mesh.volume_centroid();
        let facets = convex_hull_facets(&mesh.vertices);
        let scale = mesh.aabb().extents().amax();
        let mut hull_points: Vec<Vec3> = Vec::new();
        let mut faces = Vec::new();
        for f in &facets {
            for p in &f.points {
                if !hull_points.contains(p) {
                    hull_points.push(*p);
                }
            }
            let u = any_orthogonal(&f.normal);
            let v = f.normal.cross(&u);
            let poly = convex_hull_2d(
                &f.points
                    .iter()
                    .map(|p| (p.dot(&u), p.dot(&v)))
                    .collect::<Vec<_>>(),
            );
            let margin = polygon_inset(&poly, (com.dot(&u), com.dot(&v)));
            if margin > 1e-6 * scale {
                let rotation = UnitQuaternion::rotation_between(&f.normal, &-Vec3::z()).unwrap_or_else(|| {
                    UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(u), std::f64::consts::PI)
                });
                faces.push(StableFace { rotation, margin });
            }
        }
        Self {
            faces,
            center_of_mass: com,
            hull_points,
        }
    }

    /// Random stable face and yaw; the returned pose puts the lowest vertex
    /// on `z = 0` and the center of mass above the origin.
    pub fn sample<R: Rng>(&self, mesh: &TriangleMesh, scale: f64, rng: &mut R) -> Isometry3<f64> {
        let face = &self.faces[rng.random_range(0..self.faces.len())];
        let yaw = rng.random_range(0.0..std::f64::consts::TAU);
        let rotation = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), yaw) * face.rotation;
        let lowest = mesh
            .vertices
            .iter()
            .map(|v| (rotation * (v * scale)).z)
            .fold(f64::INFINITY, f64::min);
        let com = rotation * (self.center_of_mass * scale);
        Isometry3::from_parts(Translation3::new(-com.x, -com.y, -lowest), rotation)
    }
}

/// Stable pose of a single mesh; see [`StablePoses::sample`].
pub fn sample_stable_pose<R: Rng>(mesh: &TriangleMesh, rng: &mut R) -> Isometry3<f64> {
    StablePoses::new(mesh).sample(mesh, 1.0, rng)
}

/// Catalog meshes with their precomputed resting poses.
#[derive(Clone, Debug)]
pub struct Catalog {
    pub entries: Vec<CatalogEntry>,
    pub meshes: Vec<TriangleMesh>,
    pub stable: Vec<StablePoses>,
}

impl Catalog {
    pub fn build(entries: Vec<CatalogEntry>) -> Result<Catalog> {
        if entries.is_empty() {
            return Err(Error::InvalidDims("empty catalog".into()));
        }
        let meshes = entries
            .iter()
            .map(|e| make_primitive(e.kind, e.dims_m, e.resolution))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_meshes(entries, meshes))
    }

    pub fn from_meshes(entries: Vec<CatalogEntry>, meshes: Vec<TriangleMesh>) -> Catalog {
        let stable = meshes.iter().map(StablePoses::new).collect();
        Catalog {
            entries,
            meshes,
            stable,
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlacedObject {
    pub catalog_index: usize,
    pub pose: Isometry3<f64>,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub objects: Vec<PlacedObject>,
    /// The table is the square `|x|, |y| ≤ table_half_extent` on `z = 0`.
    pub table_half_extent: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub min_objects: usize,
    pub max_objects: usize,
    pub table_half_extent_m: f64,
    pub scale_range: (f64, f64),
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            min_objects: 8,
            max_objects: 12,
            table_half_extent_m: 0.3,
            scale_range: (0.8, 1.2),
        }
    }
}

/// Places `min..=max` catalog objects by rejection sampling.
pub fn build_scene<R: Rng>(catalog: &Catalog, params: &SceneParams, seed: u64, rng: &mut R) -> Result<Scene> {
    let count = rng.random_range(params.min_objects..=params.max_objects);
    let e = params.table_half_extent_m;
    let mut objects = Vec::with_capacity(count);
    let mut placed_hulls: Vec<Vec<Vec3>> = Vec::with_capacity(count);
    for _ in 0..count {
        let idx = rng.random_range(0..catalog.entries.len());
        let scale = rng.random_range(params.scale_range.0..=params.scale_range.1);
        let mesh = &catalog.meshes[idx];
        let stable = &catalog.stable[idx];
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let rest = stable.sample(mesh, scale, rng);
            let (ux, uy): (f64, f64) = (rng.random(), rng.random());
            let hull: Vec<Vec3> = stable
                .hull_points
                .iter()
                .map(|p| rest.transform_point(&Point3::from(p * scale)).coords)
                .collect();
            let fp = Aabb::from_points(&hull);
            let (x_lo, x_hi) = (-e - fp.min.x, e - fp.max.x);
            let (y_lo, y_hi) = (-e - fp.min.y, e - fp.max.y);
            if x_lo > x_hi || y_lo > y_hi {
                continue;
            }
            let shift = Vec3::new(x_lo + ux * (x_hi - x_lo), y_lo + uy * (y_hi - y_lo), 0.0);
            let hull: Vec<Vec3> = hull.iter().map(|p| p + shift).collect();
            if placed_hulls.iter().any(|h| convex_hulls_intersect(h, &hull)) {
                continue;
            }
            let pose = Isometry3::from_parts(
                Translation3::from(rest.translation.vector + shift),
                rest.rotation,
            );
            objects.push(PlacedObject {
                catalog_index: idx,
                pose,
                scale,
            });
            placed_hulls.push(hull);
            break;
        }
    }
    if objects.len() < params.min_objects {
        return Err(Error::PlacementExhausted {
            placed: objects.len(),
            required: params.min_objects,
        });
    }
    Ok(Scene {
        objects,
        table_half_extent: e,
        seed,
    })
}

/// A placed object in world coordinates. Segment ids start at 1; 0 is the table.
#[derive(Clone, Debug)]
pub struct WorldObject {
    pub segment: i32,
    pub mesh: TriangleMesh,
    pub bounds: Aabb,
}

#[derive(Clone, Debug)]
pub struct SceneGeometry {
    pub objects: Vec<WorldObject>,
    pub table_half_extent: f64,
}

impl Scene {
    pub fn geometry(&self, catalog: &Catalog) -> SceneGeometry {
        let objects = self
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let mesh = catalog.meshes[o.catalog_index].transformed(&o.pose, o.scale);
                let bounds = mesh.aabb();
                WorldObject {
                    segment: i as i32 + 1,
                    mesh,
                    bounds,
                }
            })
            .collect();
        SceneGeometry {
            objects,
            table_half_extent: self.table_half_extent,
        }
    }

    /// Mean of the object positions; cameras look at this point.
    pub fn centroid(&self) -> Vec3 {
        if self.objects.is_empty() {
            return Vec3::zeros();
        }
        self.objects.iter().map(|o| o.pose.translation.vector).sum::<Vec3>() / self.objects.len() as f64
    }

    pub fn to_file(&self, catalog: &Catalog) -> SceneFile {
        SceneFile {
            objects: self
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    mesh: catalog.entries[o.catalog_index].name.clone(),
                    pose: isometry_to_row_major(&o.pose),
                    scale: o.scale,
                })
                .collect(),
            seed: self.seed,
            table_half_extent_m: self.table_half_extent,
        }
    }

    pub fn from_file(file: &SceneFile, catalog: &Catalog) -> Result<Scene> {
        let objects = file
            .objects
            .iter()
            .map(|r| {
                let catalog_index = catalog
                    .index_of(&r.mesh)
                    .ok_or_else(|| Error::format("scene", format!("unknown mesh {:?}", r.mesh)))?;
                Ok(PlacedObject {
                    catalog_index,
                    pose: isometry_from_row_major(&r.pose)?,
                    scale: r.scale,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Scene {
            objects,
            table_half_extent: file.table_half_extent_m,
            seed: file.seed,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub mesh: String,
    /// Row-major 4×4 object-to-world transform (applied after `scale`).
    pub pose: [f64; 16],
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub objects: Vec<ObjectRecord>,
    pub seed: u64,
    pub table_half_extent_m: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn cube_rests_on_a_face() {
        let cube = make_primitive(PrimitiveKind::Box, [1.0, 1.0, 1.0], 8).unwrap();
        let mut rng = stream(1, "test", 0);
        for _ in 0..20 {
            let pose = sample_stable_pose(&cube, &mut rng);
            let m = cube.transformed(&pose, 1.0);
            let bb = m.aabb();
            assert!(bb.min.z.abs() < 1e-12);
            // axis-aligned in z: four vertices on the table
            assert_eq!(m.vertices.iter().filter(|v| v.z.abs() < 1e-9).count(), 4);
            assert!((bb.max.z - 1.0).abs() < 1e-9);
        }
        assert_eq!(StablePoses::new(&cube).faces.len(), 6);
    }

    #[test]
    fn cylinder_upright_or_on_side() {
        let cyl = make_primitive(PrimitiveKind::Cylinder, [0.06, 0.06, 0.1], 16).unwrap();
        let poses = StablePoses::new(&cyl);
        assert_eq!(poses.faces.len(), 18);
        let mut rng = stream(2, "test", 0);
        for _ in 0..30 {
            let pose = sample_stable_pose(&cyl, &mut rng);
            let axis = pose.rotation * Vec3::z();
            let upright = axis.z.abs() > 1.0 - 1e-9;
            let lying = axis.z.abs() < 1e-9;
            assert!(upright || lying, "axis {axis:?}");
        }
    }

    #[test]
    fn stable_pose_is_deterministic() {
        let cube = make_primitive(PrimitiveKind::Box, [1.0, 2.0, 3.0], 8).unwrap();
        let a = sample_stable_pose(&cube, &mut stream(9, "x", 0));
        let b = sample_stable_pose(&cube, &mut stream(9, "x", 0));
        assert_eq!(a, b);
    }

    #[test]
    fn single_object_always_fits() {
        let catalog = Catalog::build(default_catalog()).unwrap();
        let params = SceneParams {
            min_objects: 1,
            max_objects: 1,
            ..SceneParams::default()
        };
        for i in 0..10 {
            let s = build_scene(&catalog, &params, i, &mut stream(i, "scene", 0)).unwrap();
            assert_eq!(s.objects.len(), 1);
        }
    }

    #[test]
    fn zero_table_exhausts() {
        let catalog = Catalog::build(default_catalog()).unwrap();
        let params = SceneParams {
            min_objects: 1,
            max_objects: 1,
            table_half_extent_m: 0.0,
            ..SceneParams::default()
        };
        assert!(matches!(
            build_scene(&catalog, &params, 0, &mut stream(0, "scene", 0)),
            Err(Error::PlacementExhausted { placed: 0, required: 1 })
        ));
    }

    #[test]
    fn scene_file_round_trip() {
        let catalog = Catalog::build(default_catalog()).unwrap();
        let s = build_scene(&catalog, &SceneParams::default(), 3, &mut stream(3, "scene", 0)).unwrap();
        let json = serde_json::to_string(&s.to_file(&catalog)).unwrap();
        let back = Scene::from_file(&serde_json::from_str(&json).unwrap(), &catalog).unwrap();
        for (a, b) in s.objects.iter().zip(&back.objects) {
            assert_eq!(a.catalog_index, b.catalog_index);
            assert!((a.pose.to_homogeneous() - b.pose.to_homogeneous()).amax() < 1e-12);
        }
    }

    #[test]
    fn objects_rest_on_table() {
        let catalog = Catalog::build(default_catalog()).unwrap();
        for i in 0..5 {
            let s = build_scene(&catalog, &SceneParams::default(), i, &mut stream(i, "scene", 0)).unwrap();
            assert!((8..=12).contains(&s.objects.len()));
            for o in s.geometry(&catalog).objects {
                assert!(o.bounds.min.z.abs() < 1e-4);
                assert!(o.bounds.min.x >= -0.3 - 1e-9 && o.bounds.max.x <= 0.3 + 1e-9);
            }
        }
    }
}
