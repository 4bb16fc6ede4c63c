//! Camera list files.
//!
//! A JSON document with a version tag and one record per camera:
//!
//! ```json
//! {
//!   "version": 1,
//!   "cameras": [
//!     {
//!       "image": "images/cam_000.png",
//!       "width": 128, "height": 96,
//!       "fx": 110.0, "fy": 110.0, "cx": 64.0, "cy": 48.0,
//!       "rotation": [1.0, 0.0, 0.0, 0.0],
//!       "translation": [0.0, 0.0, 4.0]
//!     }
//!   ]
//! }
//! ```
//!
//! `rotation` is the world-to-camera quaternion in (w, x, y, z) order and is
//! normalized on load; `translation` completes the world-to-camera transform
//! (`x_cam = R x_world + t`), the same convention COLMAP's `images.txt` uses,
//! so a COLMAP export converts field by field. Image paths are relative to
//! the camera file's directory unless absolute.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::model::Camera;

pub const CAMERA_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraEntry {
    pub camera: Camera,
    pub image: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraListFile {
    pub entries: Vec<CameraEntry>,
}

impl CameraListFile {
    pub fn cameras(&self) -> Vec<Camera> {
        self.entries.iter().map(|e| e.camera.clone()).collect()
    }

    /// Image paths resolved against `base` (normally the camera file's directory).
    pub fn image_paths(&self, base: &Path) -> Vec<PathBuf> {
        self.entries
            .iter()
            .map(|e| if e.image.is_absolute() { e.image.clone() } else { base.join(&e.image) })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    image: String,
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: [f64; 4],
    translation: [f64; 3],
}

#[derive(Deserialize)]
struct RawFile<'a> {
    version: u32,
    #[serde(borrow)]
    cameras: Vec<&'a RawValue>,
}

#[derive(Serialize)]
struct OutFile {
    version: u32,
    cameras: Vec<CameraRecord>,
}

fn line_of(text: &str, fragment: &str) -> usize {
    let offset = fragment.as_ptr() as usize - text.as_ptr() as usize;
    text[..offset].bytes().filter(|&b| b == b'\n').count() + 1
}

pub fn parse_cameras(text: &str) -> Result<CameraListFile> {
    let raw: RawFile = serde_json::from_str(text)
        .map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })?;
    if raw.version != CAMERA_FILE_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported camera file version {}", raw.version),
        });
    }
    if raw.cameras.is_empty() {
        return Err(Error::Parse { line: 1, message: "camera list is empty".into() });
    }
    let mut entries = Vec::with_capacity(raw.cameras.len());
    for fragment in raw.cameras {
        let line = line_of(text, fragment.get());
        let rec: CameraRecord = serde_json::from_str(fragment.get()).map_err(|e| Error::Parse {
            line: line + e.line() - 1,
            message: e.to_string(),
        })?;
        if rec.image.is_empty() {
            return Err(Error::Parse { line, message: "empty image path".into() });
        }
        let camera = Camera::from_quaternion(
            rec.fx,
            rec.fy,
            rec.cx,
            rec.cy,
            rec.rotation,
            rec.translation,
            rec.width,
            rec.height,
        )
        .map_err(|e| Error::Parse { line, message: e.to_string() })?;
        entries.push(CameraEntry { camera, image: PathBuf::from(rec.image) });
    }
    Ok(CameraListFile { entries })
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<CameraListFile> {
    parse_cameras(&fs::read_to_string(path)?)
}

pub fn cameras_to_string(list: &CameraListFile) -> String {
    let out = OutFile {
        version: CAMERA_FILE_VERSION,
        cameras: list
            .entries
            .iter()
            .map(|e| CameraRecord {
                image: e.image.to_string_lossy().into_owned(),
                width: e.camera.width,
                height: e.camera.height,
                fx: e.camera.fx,
                fy: e.camera.fy,
                cx: e.camera.cx,
                cy: e.camera.cy,
                rotation: e.camera.quaternion(),
                translation: e.camera.translation,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&out).expect("camera records always serialize")
}

pub fn save_cameras(list: &CameraListFile, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, cameras_to_string(list))?;
    Ok(())
}
