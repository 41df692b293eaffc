//! Multi-view dataset files.
//!
//! A dataset directory holds `manifest.json` plus, per view, a raw cube
//! payload (IEEE-754 binary32 little-endian, row/col/wavelength/element
//! order) and a small JSON sidecar describing its shape.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use super::StokesCube;
use crate::error::{Error, Result};
use crate::renderer::{Aabb, Camera, FrameConvention, Intrinsics};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const CUBE_LAYOUT: &str = "row,col,wavelength,element";
const CUBE_DTYPE: &str = "float32le";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub id: String,
    pub camera: Camera,
    pub split: Split,
    pub cube: StokesCube,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    pub wavelengths: Vec<f64>,
    pub bounds: Aabb,
    /// Frame the cubes are expressed in.
    pub frame_convention: FrameConvention,
    pub views: Vec<View>,
}

impl MultiViewDataset {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if self.wavelengths.is_empty() {
            return Err(Error::InvalidInput("dataset has no wavelengths".into()));
        }
        let mut ids = std::collections::HashSet::new();
        for v in &self.views {
            if !ids.insert(v.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate view id `{}`", v.id)));
            }
            v.camera.validate()?;
            if v.cube.wavelengths != self.wavelengths {
                return Err(Error::Dimension(format!(
                    "view `{}` has {} wavelengths, dataset grid has {}",
                    v.id,
                    v.cube.num_wavelengths(),
                    self.wavelengths.len()
                )));
            }
            if v.cube.height != v.camera.height || v.cube.width != v.camera.width {
                return Err(Error::Dimension(format!(
                    "view `{}`: cube {}x{} vs camera {}x{}",
                    v.id, v.cube.height, v.cube.width, v.camera.height, v.camera.width
                )));
            }
            if v.camera.frame_convention != self.frame_convention {
                return Err(Error::FrameMismatch(format!(
                    "view `{}` declares {:?}, dataset declares {:?}",
                    v.id, v.camera.frame_convention, self.frame_convention
                )));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &View> {
        self.views.iter().filter(move |v| v.split == split)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestView {
    id: String,
    image_file: String,
    pose_4x4_row_major: Vec<f64>,
    intrinsics: ManifestIntrinsics,
    split: Split,
    near: f64,
    far: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    wavelengths_nm: Vec<f64>,
    views: Vec<ManifestView>,
    frame_convention: FrameConvention,
    scene_bounds: Aabb,
}

/// Shape description stored next to each cube payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeHeader {
    pub height: usize,
    pub width: usize,
    pub wavelengths_nm: Vec<f64>,
    pub layout: String,
    pub dtype: String,
    pub frame_convention: FrameConvention,
}

impl CubeHeader {
    fn payload_len(&self) -> usize {
        self.height * self.width * self.wavelengths_nm.len() * 4 * 4
    }
}

/// Writes `bytes` to `path` through a temporary sibling and a rename, so a
/// failed write never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn sidecar_path(payload: &Path) -> PathBuf {
    payload.with_extension("json")
}

pub fn encode_cube(cube: &StokesCube) -> Vec<u8> {
    let mut out = Vec::with_capacity(cube.data.len() * 4);
    for v in &cube.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Rounds every entry to binary32, the precision of the file format.
pub fn quantize_cube(cube: &StokesCube) -> StokesCube {
    StokesCube {
        data: cube.data.iter().map(|v| *v as f32 as f64).collect(),
        ..cube.clone()
    }
}

/// Writes a cube payload to `path` and its header to the `.json` sibling.
pub fn save_cube(path: &Path, cube: &StokesCube, convention: FrameConvention) -> Result<()> {
    let header = CubeHeader {
        height: cube.height,
        width: cube.width,
        wavelengths_nm: cube.wavelengths.clone(),
        layout: CUBE_LAYOUT.into(),
        dtype: CUBE_DTYPE.into(),
        frame_convention: convention,
    };
    write_atomic(path, &encode_cube(cube))?;
    let side = sidecar_path(path);
    write_atomic(&side, &serde_json::to_vec_pretty(&header).map_err(|e| Error::json(&side, e))?)
}

fn read_header(path: &Path) -> Result<CubeHeader> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let h: CubeHeader = serde_json::from_str(&text).map_err(|e| Error::json(&side, e))?;
    if h.layout != CUBE_LAYOUT || h.dtype != CUBE_DTYPE {
        return Err(Error::format(
            &side,
            format!("unsupported cube layout `{}` / dtype `{}`", h.layout, h.dtype),
        ));
    }
    Ok(h)
}

fn read_payload(path: &Path, header: &CubeHeader, view: &str) -> Result<StokesCube> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = header.payload_len();
    if bytes.len() < expected {
        return Err(Error::Truncated {
            view: view.into(),
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after the cube payload", bytes.len() - expected),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    StokesCube::from_data(header.height, header.width, header.wavelengths_nm.clone(), data)
}

/// Reads a cube written by [`save_cube`] and the frame it is expressed in.
pub fn load_cube(path: &Path) -> Result<(StokesCube, FrameConvention)> {
    let header = read_header(path)?;
    let view = path.file_stem().map_or(String::new(), |s| s.to_string_lossy().into_owned());
    Ok((read_payload(path, &header, &view)?, header.frame_convention))
}

pub fn save_dataset(ds: &MultiViewDataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir.join("views")).map_err(|e| Error::io(dir, e))?;
    let mut views = Vec::with_capacity(ds.views.len());
    for v in &ds.views {
        let file = format!("views/{}.bin", v.id);
        save_cube(&dir.join(&file), &v.cube, ds.frame_convention)?;
        let k = &v.camera.intrinsics;
        views.push(ManifestView {
            id: v.id.clone(),
            image_file: file,
            pose_4x4_row_major: v.camera.pose.transpose().iter().copied().collect(),
            intrinsics: ManifestIntrinsics {
                fx: k.fx,
                fy: k.fy,
                cx: k.cx,
                cy: k.cy,
                width: v.camera.width,
                height: v.camera.height,
            },
            split: v.split,
            near: v.camera.near,
            far: v.camera.far,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        wavelengths_nm: ds.wavelengths.clone(),
        views,
        frame_convention: ds.frame_convention,
        scene_bounds: ds.bounds,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    write_atomic(&path, &text)
}

pub fn load_dataset(dir: &Path) -> Result<MultiViewDataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    let version = value.get("version").and_then(|v| v.as_u64());
    if version != Some(MANIFEST_VERSION as u64) {
        return Err(Error::Version {
            found: version.unwrap_or(0) as u32,
            expected: MANIFEST_VERSION,
        });
    }
    let m: Manifest = serde_json::from_value(value).map_err(|e| Error::json(&path, e))?;
    let mut views = Vec::with_capacity(m.views.len());
    for v in m.views {
        if v.pose_4x4_row_major.len() != 16 {
            return Err(Error::format(
                &path,
                format!("view `{}` pose has {} entries", v.id, v.pose_4x4_row_major.len()),
            ));
        }
        let k = &v.intrinsics;
        let mut camera = Camera::new(
            Intrinsics {
                fx: k.fx,
                fy: k.fy,
                cx: k.cx,
                cy: k.cy,
            },
            k.width,
            k.height,
            Matrix4::from_row_slice(&v.pose_4x4_row_major),
            v.near,
            v.far,
        )?;
        camera.frame_convention = m.frame_convention;
        let payload = dir.join(&v.image_file);
        let header = read_header(&payload)?;
        if header.wavelengths_nm.len() != m.wavelengths_nm.len() {
            return Err(Error::Dimension(format!(
                "view `{}` cube has {} wavelengths, manifest grid has {}",
                v.id,
                header.wavelengths_nm.len(),
                m.wavelengths_nm.len()
            )));
        }
        if header.height != k.height || header.width != k.width {
            return Err(Error::Dimension(format!(
                "view `{}` cube is {}x{}, manifest says {}x{}",
                v.id, header.height, header.width, k.height, k.width
            )));
        }
        if header.frame_convention != m.frame_convention {
            return Err(Error::FrameMismatch(format!(
                "view `{}` cube is in {:?}, manifest declares {:?}",
                v.id, header.frame_convention, m.frame_convention
            )));
        }
        let mut cube = read_payload(&payload, &header, &v.id)?;
        cube.wavelengths = m.wavelengths_nm.clone();
        views.push(View {
            id: v.id,
            camera,
            split: v.split,
            cube,
        });
    }
    let ds = MultiViewDataset {
        wavelengths: m.wavelengths_nm,
        bounds: m.scene_bounds,
        frame_convention: m.frame_convention,
        views,
    };
    ds.validate()?;
    Ok(ds)
}
