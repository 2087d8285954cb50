//! Analytic dynamic phantoms: ground-truth intensity movies for the three
//! built-in experiments, rendered with 4x4 area sampling per pixel.

use std::path::PathBuf;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NctError, Result};
use crate::glyphs::{self, Letter};
use crate::grid::GridSpec;
use crate::initseg::edt;
use crate::movie::IntensityMovie;

/// Subsamples per axis for anti-aliased rasterization.
pub const AA: usize = 4;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CircleScene {
    /// Circle radius, normalized units.
    pub radius: f64,
    /// Distance of the circle center from the image origin.
    pub orbit_radius: f64,
    /// Angular displacement of the center over the full acquisition, degrees.
    pub displacement_deg: f64,
}

impl Default for CircleScene {
    fn default() -> Self {
        CircleScene {
            radius: 0.1,
            orbit_radius: 0.5,
            displacement_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EllipseScene {
    /// Base semi-axes.
    pub axis_x: f64,
    pub axis_y: f64,
    /// Beat amplitude `beta` in `a(t) = a0 (1 + beta sin(2 pi nu t))`.
    pub beat_amplitude: f64,
    /// Beat cycles per acquisition, `nu`.
    pub beat_rate: f64,
}

impl Default for EllipseScene {
    fn default() -> Self {
        EllipseScene {
            axis_x: 0.4,
            axis_y: 0.25,
            beat_amplitude: 0.25,
            beat_rate: 3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LetterScene {
    /// Fraction of the acquisition spent holding each of the five
    /// keyframes A, B, C, B, A.
    pub hold_fraction: f64,
    /// Side length of the glyph box in normalized units.
    pub extent: f64,
    /// Directory with A.png/B.png/C.png masks; `None` uses the built-ins.
    pub glyph_dir: Option<PathBuf>,
}

impl Default for LetterScene {
    fn default() -> Self {
        LetterScene {
            hold_fraction: 0.15,
            extent: 1.6,
            glyph_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneConfig {
    TranslatingCircle(CircleScene),
    BeatingEllipse(EllipseScene),
    LetterWarp(LetterScene),
}

impl SceneConfig {
    pub fn generate(&self, grid: &GridSpec) -> Result<IntensityMovie> {
        match self {
            SceneConfig::TranslatingCircle(c) => make_translating_circle(c, grid),
            SceneConfig::BeatingEllipse(e) => make_beating_ellipse(e, grid),
            SceneConfig::LetterWarp(l) => make_letter_warp(l, grid),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SceneConfig::TranslatingCircle(_) => "translating_circle",
            SceneConfig::BeatingEllipse(_) => "beating_ellipse",
            SceneConfig::LetterWarp(_) => "letter_warp",
        }
    }
}

/// Rasterize an indicator function with 4x4 area sampling per pixel.
fn rasterize(grid: &GridSpec, inside: impl Fn(f64, f64) -> bool + Sync) -> Array2<f64> {
    let n = grid.n;
    let px = grid.pixel();
    let sub = px / AA as f64;
    let mut frame = Array2::zeros((n, n));
    frame
        .axis_iter_mut(ndarray::Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            let y0 = grid.coord(i) - px / 2.0;
            for (j, v) in row.iter_mut().enumerate() {
                let x0 = grid.coord(j) - px / 2.0;
                let mut hits = 0u32;
                for si in 0..AA {
                    let y = y0 + (si as f64 + 0.5) * sub;
                    for sj in 0..AA {
                        let x = x0 + (sj as f64 + 0.5) * sub;
                        if inside(x, y) {
                            hits += 1;
                        }
                    }
                }
                *v = hits as f64 / (AA * AA) as f64;
            }
        });
    frame
}

fn movie_from_indicator(
    grid: &GridSpec,
    inside_at: impl Fn(f64, f64, f64) -> bool + Sync,
) -> IntensityMovie {
    let frames: Vec<Array2<f64>> = (0..grid.frames)
        .into_par_iter()
        .map(|ti| {
            let t = grid.frame_time(ti);
            rasterize(grid, |x, y| inside_at(x, y, t))
        })
        .collect();
    IntensityMovie {
        grid: *grid,
        frames,
        class_intensity: vec![1.0],
    }
}

/// Bright circle translating along a circular arc about the image origin.
pub fn make_translating_circle(cfg: &CircleScene, grid: &GridSpec) -> Result<IntensityMovie> {
    if cfg.radius <= 0.0 || cfg.orbit_radius < 0.0 {
        return Err(NctError::config("circle radius must be positive"));
    }
    if !(0.0..=360.0).contains(&cfg.displacement_deg) {
        return Err(NctError::config(
            "displacement_deg must lie in [0, 360]",
        ));
    }
    if cfg.orbit_radius + cfg.radius > 1.0 {
        return Err(NctError::config(format!(
            "circle exits the field of view: orbit {} + radius {} > 1",
            cfg.orbit_radius, cfg.radius
        )));
    }
    let disp = cfg.displacement_deg.to_radians();
    let (orbit, r2) = (cfg.orbit_radius, cfg.radius * cfg.radius);
    Ok(movie_from_indicator(grid, move |x, y, t| {
        let phi = disp * t;
        let cx = orbit * phi.cos();
        let cy = orbit * phi.sin();
        (x - cx).powi(2) + (y - cy).powi(2) <= r2
    }))
}

/// Centered ellipse with both semi-axes beating in phase:
/// `a_x(t) = a0 (1 + beta sin(2 pi nu t))`, same factor on `a_y`.
pub fn make_beating_ellipse(cfg: &EllipseScene, grid: &GridSpec) -> Result<IntensityMovie> {
    if cfg.axis_x <= 0.0 || cfg.axis_y <= 0.0 {
        return Err(NctError::config("ellipse axes must be positive"));
    }
    if cfg.beat_amplitude >= 1.0 {
        return Err(NctError::config(
            "beat amplitude >= 1 would collapse or invert an axis",
        ));
    }
    let peak = 1.0 + cfg.beat_amplitude.abs();
    if cfg.axis_x * peak > 1.0 || cfg.axis_y * peak > 1.0 {
        return Err(NctError::config("ellipse exceeds the field of view"));
    }
    let (a0, b0, beta, nu) = (cfg.axis_x, cfg.axis_y, cfg.beat_amplitude, cfg.beat_rate);
    Ok(movie_from_indicator(grid, move |x, y, t| {
        let s = 1.0 + beta * (2.0 * std::f64::consts::PI * nu * t).sin();
        let (ax, ay) = (a0 * s, b0 * s);
        (x / ax).powi(2) + (y / ay).powi(2) <= 1.0
    }))
}

/// Keyframe interpolation state for the A-B-C-B-A sequence.
/// Returns `(glyph_from, glyph_to, weight)`; weight 0 at a hold.
pub(crate) fn letter_timeline(hold: f64, t: f64) -> (usize, usize, f64) {
    const SEQ: [usize; 5] = [0, 1, 2, 1, 0]; // A B C B A
    let trans = (1.0 - 5.0 * hold) / 4.0;
    let seg_len = hold + trans;
    let t = t.clamp(0.0, 1.0);
    for k in 0..5 {
        let start = k as f64 * seg_len;
        if t <= start + hold || k == 4 {
            return (SEQ[k], SEQ[k], 0.0);
        }
        if t < start + seg_len {
            let w = (t - start - hold) / trans;
            return (SEQ[k], SEQ[k + 1], w);
        }
    }
    unreachable!()
}

/// Sample a glyph-space SDF image bilinearly at glyph coordinates `(u, v)`.
fn sample_sdf(sdf: &Array2<f64>, u: f64, v: f64) -> f64 {
    let s = sdf.dim().0 as f64;
    let fu = (u * s - 0.5).clamp(0.0, s - 1.0);
    let fv = (v * s - 0.5).clamp(0.0, s - 1.0);
    let j0 = fu.floor() as usize;
    let i0 = fv.floor() as usize;
    let j1 = (j0 + 1).min(sdf.dim().1 - 1);
    let i1 = (i0 + 1).min(sdf.dim().0 - 1);
    let (du, dv) = (fu - j0 as f64, fv - i0 as f64);
    sdf[[i0, j0]] * (1.0 - du) * (1.0 - dv)
        + sdf[[i0, j1]] * du * (1.0 - dv)
        + sdf[[i1, j0]] * (1.0 - du) * dv
        + sdf[[i1, j1]] * du * dv
}

/// Letter A morphing to B to C and back, by linear interpolation of the
/// keyframe signed-distance images thresholded at zero.
pub fn make_letter_warp(cfg: &LetterScene, grid: &GridSpec) -> Result<IntensityMovie> {
    if !(0.0..0.2).contains(&cfg.hold_fraction) {
        return Err(NctError::config(
            "hold_fraction must lie in [0, 0.2) so five holds fit",
        ));
    }
    let masks = match &cfg.glyph_dir {
        Some(dir) => [
            glyphs::load_glyph(dir, Letter::A)?,
            glyphs::load_glyph(dir, Letter::B)?,
            glyphs::load_glyph(dir, Letter::C)?,
        ],
        None => [
            glyphs::builtin_glyph(Letter::A),
            glyphs::builtin_glyph(Letter::B),
            glyphs::builtin_glyph(Letter::C),
        ],
    };
    let res = masks[0].dim().0;
    if masks.iter().any(|m| m.dim().0 != res || m.dim().1 != res) {
        return Err(NctError::config("glyph masks must share one resolution"));
    }
    if res < grid.n {
        return Err(NctError::config(format!(
            "glyph resolution {res} is below the grid resolution {}",
            grid.n
        )));
    }
    let sdfs: Vec<Array2<f64>> = masks
        .iter()
        .map(edt::signed_distance_px)
        .collect::<Result<_>>()?;

    let (hold, extent) = (cfg.hold_fraction, cfg.extent);
    Ok(movie_from_indicator(grid, move |x, y, t| {
        let u = x / extent + 0.5;
        let v = y / extent + 0.5;
        if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
            return false;
        }
        let (k0, k1, w) = letter_timeline(hold, t);
        let f = if k0 == k1 {
            sample_sdf(&sdfs[k0], u, v)
        } else {
            (1.0 - w) * sample_sdf(&sdfs[k0], u, v) + w * sample_sdf(&sdfs[k1], u, v)
        };
        f > 0.0
    }))
}

/// Per-pixel signed distance to a circle: `f(x) = radius - |x - center|`,
/// positive inside. Test oracle for the distance-transform and Eikonal
/// checks.
pub fn analytic_sdf_circle(
    center: (f64, f64),
    radius: f64,
    grid: &GridSpec,
) -> Result<Array2<f64>> {
    if radius <= 0.0 {
        return Err(NctError::config("circle radius must be positive"));
    }
    let n = grid.n;
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        let x = grid.coord(j);
        let y = grid.coord(i);
        radius - ((x - center.0).powi(2) + (y - center.1).powi(2)).sqrt()
    }))
}
