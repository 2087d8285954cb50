//! Dense spatiotemporal movies and their on-disk format.
//!
//! Movies are stored as flat little-endian `f32` binaries with a JSON
//! sidecar describing the shape, e.g. `out.f32` + `out.json` with
//! `{"n": 64, "T": 180, "dtype": "f32", "order": "t,y,x", "kind": "intensity"}`.
//! Signed-distance movies add `"kind": "sdf"`, a class count `k`, and use
//! order `t,k,y,x`.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{NctError, Result};
use crate::grid::GridSpec;

/// Dense attenuation movie `I(x, t)`, values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct IntensityMovie {
    pub grid: GridSpec,
    /// One `n×n` frame per time step, indexed `[row][col]` = `[y][x]`.
    pub frames: Vec<Array2<f64>>,
    /// Per-class attenuation `a(k)`; the scene generators emit 1.0.
    pub class_intensity: Vec<f64>,
}

/// Explicit per-frame, per-class signed distance images `f(x, t, k)`,
/// positive inside the object, in normalized spatial units.
#[derive(Debug, Clone)]
pub struct SdfMovie {
    pub grid: GridSpec,
    /// `values[t][k]` is an `n×n` signed distance image.
    pub values: Vec<Vec<Array2<f64>>>,
}

/// Per-frame, per-class binary occupancy masks.
#[derive(Debug, Clone)]
pub struct BinaryMovie {
    pub grid: GridSpec,
    /// `masks[t][k]` is an `n×n` boolean image.
    pub masks: Vec<Vec<Array2<bool>>>,
}

impl IntensityMovie {
    pub fn zeros(grid: GridSpec) -> Self {
        IntensityMovie {
            grid,
            frames: vec![Array2::zeros((grid.n, grid.n)); grid.frames],
            class_intensity: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.grid.frames {
            return Err(NctError::config(format!(
                "movie has {} frames, grid expects {}",
                self.frames.len(),
                self.grid.frames
            )));
        }
        for (t, f) in self.frames.iter().enumerate() {
            if f.dim() != (self.grid.n, self.grid.n) {
                return Err(NctError::config(format!("frame {t} has wrong shape")));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(NctError::numeric("movie", format!("frame {t} not finite")));
            }
        }
        Ok(())
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        let sidecar = MovieSidecar {
            n: self.grid.n,
            t: self.frames.len(),
            k: None,
            dtype: "f32".into(),
            order: "t,y,x".into(),
            kind: "intensity".into(),
            class_intensity: Some(self.class_intensity.clone()),
        };
        let flat = self.frames.iter().flat_map(|f| f.iter().copied());
        write_pair(base, sidecar, flat)
    }

    pub fn load(base: &Path) -> Result<Self> {
        let (sidecar, data) = read_pair(base)?;
        if sidecar.kind != "intensity" {
            return Err(NctError::config(format!(
                "{}: expected kind=intensity, got {}",
                base.display(),
                sidecar.kind
            )));
        }
        let n = sidecar.n;
        if data.len() != n * n * sidecar.t {
            return Err(NctError::config(format!(
                "{}: payload length {} does not match sidecar {}x{}x{}",
                base.display(),
                data.len(),
                sidecar.t,
                n,
                n
            )));
        }
        let grid = GridSpec::new(n, sidecar.t)?;
        let frames = data
            .chunks_exact(n * n)
            .map(|c| Array2::from_shape_vec((n, n), c.to_vec()).expect("chunked shape"))
            .collect();
        Ok(IntensityMovie {
            grid,
            frames,
            class_intensity: sidecar.class_intensity.unwrap_or_else(|| vec![1.0]),
        })
    }
}

impl SdfMovie {
    pub fn classes(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        let sidecar = MovieSidecar {
            n: self.grid.n,
            t: self.values.len(),
            k: Some(self.classes()),
            dtype: "f32".into(),
            order: "t,k,y,x".into(),
            kind: "sdf".into(),
            class_intensity: None,
        };
        let flat = self
            .values
            .iter()
            .flat_map(|per_t| per_t.iter().flat_map(|f| f.iter().copied()));
        write_pair(base, sidecar, flat)
    }

    pub fn load(base: &Path) -> Result<Self> {
        let (sidecar, data) = read_pair(base)?;
        if sidecar.kind != "sdf" {
            return Err(NctError::config(format!(
                "{}: expected kind=sdf, got {}",
                base.display(),
                sidecar.kind
            )));
        }
        let n = sidecar.n;
        let k = sidecar
            .k
            .ok_or_else(|| NctError::config("sdf sidecar missing class count k"))?;
        if data.len() != n * n * k * sidecar.t {
            return Err(NctError::config(format!(
                "{}: payload length mismatch",
                base.display()
            )));
        }
        let grid = GridSpec::new(n, sidecar.t)?;
        let mut values = Vec::with_capacity(sidecar.t);
        for chunk_t in data.chunks_exact(n * n * k) {
            let per_t = chunk_t
                .chunks_exact(n * n)
                .map(|c| Array2::from_shape_vec((n, n), c.to_vec()).expect("chunked shape"))
                .collect();
            values.push(per_t);
        }
        Ok(SdfMovie { grid, values })
    }
}

impl BinaryMovie {
    pub fn classes(&self) -> usize {
        self.masks.first().map_or(0, |m| m.len())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MovieSidecar {
    n: usize,
    #[serde(rename = "T")]
    t: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    dtype: String,
    order: String,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    class_intensity: Option<Vec<f64>>,
}

fn sidecar_paths(base: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    (base.with_extension("f32"), base.with_extension("json"))
}

fn write_pair(
    base: &Path,
    sidecar: MovieSidecar,
    values: impl Iterator<Item = f64>,
) -> Result<()> {
    let (bin_path, json_path) = sidecar_paths(base);
    if let Some(dir) = bin_path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| NctError::io(dir, e))?;
        }
    }
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(&bin_path, bytes).map_err(|e| NctError::io(&bin_path, e))?;
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| NctError::config(format!("sidecar encode: {e}")))?;
    fs::write(&json_path, json).map_err(|e| NctError::io(&json_path, e))?;
    Ok(())
}

fn read_pair(base: &Path) -> Result<(MovieSidecar, Vec<f64>)> {
    let (bin_path, json_path) = sidecar_paths(base);
    let json = fs::read_to_string(&json_path).map_err(|e| NctError::io(&json_path, e))?;
    let sidecar: MovieSidecar = serde_json::from_str(&json)
        .map_err(|e| NctError::config(format!("{}: {e}", json_path.display())))?;
    if sidecar.dtype != "f32" {
        return Err(NctError::config(format!(
            "{}: unsupported dtype {}",
            json_path.display(),
            sidecar.dtype
        )));
    }
    let bytes = fs::read(&bin_path).map_err(|e| NctError::io(&bin_path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(NctError::config(format!(
            "{}: length not a multiple of 4",
            bin_path.display()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok((sidecar, data))
}
