use std::io::Write;
use std::path::{Path, PathBuf};

use cgk_core::geometry::{isometry_from_row_major, isometry_to_row_major};
use cgk_core::render::{Intrinsics, VirtualCamera};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|e| CliError::Core(e.into()))?;
    text.push(b'\n');
    write_atomic(path, &text)
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::missing(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn scene_path(dir: &Path, index: u64) -> PathBuf {
    dir.join("scenes").join(format!("scene_{index:05}.json"))
}

pub fn grasps_path(dir: &Path, index: u64) -> PathBuf {
    dir.join("grasps").join(format!("grasps_{index:05}.json"))
}

pub fn view_stem(dir: &Path, scene: u64, view: usize) -> PathBuf {
    dir.join("views").join(format!("view_{scene:05}_{view:02}"))
}

/// Camera metadata stored next to each rendered cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewFile {
    pub scene: u64,
    pub view: usize,
    /// Camera-to-world transform, row-major 4×4.
    pub camera_pose: [f64; 16],
    pub intrinsics: Intrinsics,
}

impl ViewFile {
    pub fn new(scene: u64, view: usize, camera: &VirtualCamera) -> Self {
        Self {
            scene,
            view,
            camera_pose: isometry_to_row_major(&camera.pose),
            intrinsics: camera.intrinsics,
        }
    }

    pub fn camera(&self) -> Result<VirtualCamera, CliError> {
        let pose = isometry_from_row_major(&self.camera_pose).map_err(|e| CliError::Input(e.to_string()))?;
        VirtualCamera::new(pose, self.intrinsics).map_err(|e| CliError::Input(e.to_string()))
    }
}

/// Optional segmentation passed to `infer`: the target segment and,
/// optionally, per-point ids overriding those stored in the cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskFile {
    pub target: i32,
    #[serde(default)]
    pub segments: Option<Vec<i32>>,
}
