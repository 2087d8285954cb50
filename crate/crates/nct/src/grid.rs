use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{NctError, Result};

/// Square reconstruction grid and time axis.
///
/// Physical coordinates are normalized: the field of view spans `[-1, 1]`
/// on both axes and the acquisition spans `t ∈ [0, 1]`. Pixel centers sit
/// at `-1 + (i + 0.5) * 2/n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Pixels per side.
    pub n: usize,
    /// Physical field-of-view width (normalized to 2.0).
    pub fov: f64,
    /// Number of time frames.
    pub frames: usize,
    /// Normalized acquisition duration (1.0 spans the full scan).
    pub duration: f64,
}

impl GridSpec {
    pub fn new(n: usize, frames: usize) -> Result<Self> {
        let spec = GridSpec {
            n,
            fov: 2.0,
            frames,
            duration: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 8 {
            return Err(NctError::config(format!("grid n={} must be >= 8", self.n)));
        }
        if self.frames < 2 {
            return Err(NctError::config(format!(
                "grid frames={} must be >= 2",
                self.frames
            )));
        }
        if self.fov <= 0.0 || self.duration <= 0.0 {
            return Err(NctError::config("grid fov and duration must be positive"));
        }
        Ok(())
    }

    /// Pixel spacing in normalized units.
    pub fn pixel(&self) -> f64 {
        self.fov / self.n as f64
    }

    /// Center coordinate of pixel index `i` along either axis.
    pub fn coord(&self, i: usize) -> f64 {
        -self.fov / 2.0 + (i as f64 + 0.5) * self.pixel()
    }

    /// Time of frame `i`; frames span `[0, duration]` inclusive.
    pub fn frame_time(&self, i: usize) -> f64 {
        self.duration * i as f64 / (self.frames - 1) as f64
    }

    /// Frame index nearest to time `t`.
    pub fn nearest_frame(&self, t: f64) -> usize {
        let f = (t / self.duration * (self.frames - 1) as f64).round();
        (f.max(0.0) as usize).min(self.frames - 1)
    }

    /// All pixel-center coordinates as an `(n*n, 2)` array of `(x, y)`,
    /// row-major in `(row, col)` = `(y, x)` order.
    pub fn pixel_centers(&self) -> Array2<f64> {
        let n = self.n;
        let mut pts = Array2::zeros((n * n, 2));
        for i in 0..n {
            let y = self.coord(i);
            for j in 0..n {
                pts[[i * n + j, 0]] = self.coord(j);
                pts[[i * n + j, 1]] = y;
            }
        }
        pts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_centers_span_fov() {
        let g = GridSpec::new(8, 4).unwrap();
        assert!((g.coord(0) - (-1.0 + 0.125)).abs() < 1e-12);
        assert!((g.coord(7) - (1.0 - 0.125)).abs() < 1e-12);
        let pts = g.pixel_centers();
        assert_eq!(pts.dim(), (64, 2));
        // first point is the bottom-left pixel center
        assert!((pts[[0, 0]] - g.coord(0)).abs() < 1e-12);
        assert!((pts[[0, 1]] - g.coord(0)).abs() < 1e-12);
    }

    #[test]
    fn frame_times_cover_unit_interval() {
        let g = GridSpec::new(16, 5).unwrap();
        assert_eq!(g.frame_time(0), 0.0);
        assert_eq!(g.frame_time(4), 1.0);
        assert_eq!(g.nearest_frame(0.49), 2);
        assert_eq!(g.nearest_frame(2.0), 4);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(GridSpec::new(4, 10).is_err());
        assert!(GridSpec::new(64, 1).is_err());
    }
}
