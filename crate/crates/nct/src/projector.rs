//! Time-resolved 2D parallel-beam forward projector and its exact adjoint.
//!
//! Geometry: detector bins and image columns share one coordinate system;
//! at gantry angle `theta` the rays are vertical lines in the rotated frame.
//! A view is computed by resampling the image on a `k_samp`-upsampled
//! rotated grid (bilinear, zero outside the field of view), summing along
//! the ray direction with path length `2/(n*k_samp)` per sample, and
//! average-pooling back to `n` detector bins. The adjoint runs the same
//! weights in reverse, so `<Rx, y> = <x, R^T y>` holds to rounding error.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NctError, Result};
use crate::movie::IntensityMovie;

/// Mapping from view index to acquisition time and gantry angle for one or
/// more full rotations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GantrySchedule {
    pub n_views: usize,
    pub rotations: usize,
}

impl GantrySchedule {
    pub fn new(n_views: usize, rotations: usize) -> Result<Self> {
        if n_views < 2 {
            return Err(NctError::config("schedule needs at least 2 views"));
        }
        if rotations < 1 {
            return Err(NctError::config("schedule needs at least 1 rotation"));
        }
        Ok(GantrySchedule { n_views, rotations })
    }

    /// Acquisition time of view `j`, spanning `[0, 1]`.
    pub fn view_time(&self, j: usize) -> f64 {
        j as f64 / (self.n_views - 1) as f64
    }

    /// Gantry angle of view `j` in radians; strictly increasing.
    pub fn view_angle(&self, j: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.rotations as f64 * self.view_time(j)
    }

    /// Number of consecutive views spanning one full rotation.
    pub fn views_per_rotation(&self) -> usize {
        ((self.n_views - 1) as f64 / self.rotations as f64).round() as usize + 1
    }
}

/// Time-ordered projection rows with their acquisition schedule.
#[derive(Debug, Clone)]
pub struct Sinogram {
    /// `(n_views, n_det)` line integrals.
    pub rows: Array2<f64>,
    pub schedule: GantrySchedule,
}

impl Sinogram {
    pub fn n_det(&self) -> usize {
        self.rows.dim().1
    }

    /// Detector bin center coordinate, spanning `[-1, 1]`.
    pub fn det_coord(&self, l: usize) -> f64 {
        let n = self.n_det() as f64;
        -1.0 + (l as f64 + 0.5) * 2.0 / n
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        let sidecar = SinogramSidecar {
            n_views: self.schedule.n_views,
            n_det: self.n_det(),
            rotations: self.schedule.rotations,
            dtype: "f32".into(),
            order: "view,det".into(),
        };
        let bin_path = base.with_extension("f32");
        let json_path = base.with_extension("json");
        if let Some(dir) = bin_path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir).map_err(|e| NctError::io(dir, e))?;
            }
        }
        let mut bytes = Vec::with_capacity(self.rows.len() * 4);
        for v in self.rows.iter() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        fs::write(&bin_path, bytes).map_err(|e| NctError::io(&bin_path, e))?;
        let json = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| NctError::config(format!("sidecar encode: {e}")))?;
        fs::write(&json_path, json).map_err(|e| NctError::io(&json_path, e))?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<Self> {
        let json_path = base.with_extension("json");
        let bin_path = base.with_extension("f32");
        let json = fs::read_to_string(&json_path).map_err(|e| NctError::io(&json_path, e))?;
        let sidecar: SinogramSidecar = serde_json::from_str(&json)
            .map_err(|e| NctError::config(format!("{}: {e}", json_path.display())))?;
        let bytes = fs::read(&bin_path).map_err(|e| NctError::io(&bin_path, e))?;
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        if data.len() != sidecar.n_views * sidecar.n_det {
            return Err(NctError::config(format!(
                "{}: payload length mismatch",
                bin_path.display()
            )));
        }
        Ok(Sinogram {
            rows: Array2::from_shape_vec((sidecar.n_views, sidecar.n_det), data)
                .expect("sidecar shape"),
            schedule: GantrySchedule::new(sidecar.n_views, sidecar.rotations)?,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SinogramSidecar {
    n_views: usize,
    n_det: usize,
    rotations: usize,
    dtype: String,
    order: String,
}

/// Line integrals of a square image along vertical rays in the frame
/// rotated by `angle`. Output has one bin per image column.
pub fn project_view(image: &Array2<f64>, angle: f64, k_samp: usize) -> Result<Array1<f64>> {
    let (h, w) = image.dim();
    if h != w {
        return Err(NctError::config(format!(
            "project_view needs a square image, got {h}x{w}"
        )));
    }
    if k_samp < 1 {
        return Err(NctError::config("k_samp must be at least 1"));
    }
    let n = h;
    let big = n * k_samp;
    let step = 2.0 / big as f64;
    let (c, s) = (angle.cos(), angle.sin());
    let data = image.as_slice().expect("contiguous image");
    let inv_px = n as f64 / 2.0; // 1 / pixel spacing

    let mut pooled = Array1::zeros(n);
    let mut upsampled = vec![0.0f64; big];
    for (a, out) in upsampled.iter_mut().enumerate() {
        let u = -1.0 + (a as f64 + 0.5) * step;
        let mut acc = 0.0;
        for b in 0..big {
            let v = -1.0 + (b as f64 + 0.5) * step;
            // sample point in the image frame
            let x = u * c - v * s;
            let y = u * s + v * c;
            let fx = (x + 1.0) * inv_px - 0.5;
            let fy = (y + 1.0) * inv_px - 0.5;
            let j0 = fx.floor();
            let i0 = fy.floor();
            let dx = fx - j0;
            let dy = fy - i0;
            let j0 = j0 as isize;
            let i0 = i0 as isize;
            let mut gather = |ii: isize, jj: isize, wt: f64| {
                if ii >= 0 && jj >= 0 && (ii as usize) < n && (jj as usize) < n {
                    acc += wt * data[ii as usize * n + jj as usize];
                }
            };
            gather(i0, j0, (1.0 - dx) * (1.0 - dy));
            gather(i0, j0 + 1, dx * (1.0 - dy));
            gather(i0 + 1, j0, (1.0 - dx) * dy);
            gather(i0 + 1, j0 + 1, dx * dy);
        }
        *out = acc * step; // path length per sample
    }
    // average-pool k_samp upsampled detector bins into each output bin
    for d in 0..n {
        let mut acc = 0.0;
        for a in 0..k_samp {
            acc += upsampled[d * k_samp + a];
        }
        pooled[d] = acc / k_samp as f64;
    }
    Ok(pooled)
}

/// Exact linear adjoint of [`project_view`] with the same `k_samp` and
/// interpolation weights.
pub fn backproject_view(row: ArrayView1<f64>, angle: f64, k_samp: usize, n: usize) -> Array2<f64> {
    let big = n * k_samp;
    let step = 2.0 / big as f64;
    let (c, s) = (angle.cos(), angle.sin());
    let inv_px = n as f64 / 2.0;
    let mut image = Array2::zeros((n, n));
    let data = image.as_slice_mut().expect("contiguous image");
    for a in 0..big {
        let u = -1.0 + (a as f64 + 0.5) * step;
        // adjoint of pooling and of the path-length scale
        let val = row[a / k_samp] / k_samp as f64 * step;
        if val == 0.0 {
            continue;
        }
        for b in 0..big {
            let v = -1.0 + (b as f64 + 0.5) * step;
            let x = u * c - v * s;
            let y = u * s + v * c;
            let fx = (x + 1.0) * inv_px - 0.5;
            let fy = (y + 1.0) * inv_px - 0.5;
            let j0 = fx.floor();
            let i0 = fy.floor();
            let dx = fx - j0;
            let dy = fy - i0;
            let j0 = j0 as isize;
            let i0 = i0 as isize;
            let mut scatter = |ii: isize, jj: isize, wt: f64| {
                if ii >= 0 && jj >= 0 && (ii as usize) < n && (jj as usize) < n {
                    data[ii as usize * n + jj as usize] += wt * val;
                }
            };
            scatter(i0, j0, (1.0 - dx) * (1.0 - dy));
            scatter(i0, j0 + 1, dx * (1.0 - dy));
            scatter(i0 + 1, j0, (1.0 - dx) * dy);
            scatter(i0 + 1, j0 + 1, dx * dy);
        }
    }
    image
}

/// Render the acquired sinogram of a moving object: view `j` projects the
/// movie frame nearest to `view_time(j)` at `view_angle(j)`.
pub fn render_sinogram(
    movie: &IntensityMovie,
    schedule: &GantrySchedule,
    k_samp: usize,
) -> Result<Sinogram> {
    let n = movie.grid.n;
    if schedule.n_views < n {
        return Err(NctError::config(format!(
            "schedule has {} views for an n={} grid; need n_views >= n",
            schedule.n_views, n
        )));
    }
    let rows: Result<Vec<Array1<f64>>> = (0..schedule.n_views)
        .into_par_iter()
        .map(|j| {
            let t = schedule.view_time(j);
            let frame = &movie.frames[movie.grid.nearest_frame(t)];
            project_view(frame, schedule.view_angle(j), k_samp)
        })
        .collect();
    let rows = rows?;
    let mut out = Array2::zeros((schedule.n_views, n));
    for (j, r) in rows.into_iter().enumerate() {
        out.index_axis_mut(Axis(0), j).assign(&r);
    }
    Ok(Sinogram {
        rows: out,
        schedule: *schedule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::scene::{make_translating_circle, CircleScene};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_disk_image(n: usize, rng: &mut ChaCha12Rng) -> Array2<f64> {
        // mass confined to the inscribed disk so no rays clip it
        let c = (n as f64 - 1.0) / 2.0;
        let r_max = 0.85 * c;
        Array2::from_shape_fn((n, n), |(i, j)| {
            let d = ((i as f64 - c).powi(2) + (j as f64 - c).powi(2)).sqrt();
            if d <= r_max {
                rng.gen::<f64>()
            } else {
                0.0
            }
        })
    }

    #[test]
    fn zero_image_projects_to_zero() {
        let img = Array2::zeros((32, 32));
        for angle in [0.0, 0.7, 2.0] {
            let row = project_view(&img, angle, 2).unwrap();
            assert!(row.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn projection_conserves_mass() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let n = 48;
        let img = random_disk_image(n, &mut rng);
        let total: f64 = img.sum();
        for angle in [0.0, 0.3, 1.1, 2.5, 4.0] {
            let row = project_view(&img, angle, 2).unwrap();
            let mass: f64 = row.sum();
            let expect = 2.0 / n as f64 * total;
            assert!(
                (mass - expect).abs() / expect < 0.005,
                "angle {angle}: {mass} vs {expect}"
            );
        }
    }

    #[test]
    fn disk_projection_matches_chord_length() {
        // centered uniform unit disk, radius 0.4
        let grid = GridSpec::new(128, 2).unwrap();
        let cfg = CircleScene {
            radius: 0.4,
            orbit_radius: 0.0,
            displacement_deg: 0.0,
        };
        let movie = make_translating_circle(&cfg, &grid).unwrap();
        let row = project_view(&movie.frames[0], 0.9, 2).unwrap();
        let r = 0.4;
        let px = grid.pixel();
        for d in 0..128 {
            let l = -1.0 + (d as f64 + 0.5) * px;
            if l.abs() < r - 2.0 * px {
                let expect = 2.0 * (r * r - l * l).sqrt();
                let err = (row[d] - expect).abs() / expect;
                assert!(err < 0.03, "bin {d}: {} vs {expect}", row[d]);
            }
        }
    }

    #[test]
    fn adjoint_identity_on_random_pairs() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n = 64;
        for trial in 0..10 {
            let x = Array2::from_shape_fn((n, n), |_| rng.gen::<f64>() - 0.5);
            let y = Array1::from_shape_fn(n, |_| rng.gen::<f64>() - 0.5);
            let angle = rng.gen::<f64>() * std::f64::consts::TAU;
            let rx = project_view(&x, angle, 2).unwrap();
            let rty = backproject_view(y.view(), angle, 2, n);
            let lhs: f64 = rx.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(rty.iter()).map(|(a, b)| a * b).sum();
            let norm_x = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let norm_y = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rel = (lhs - rhs).abs() / (norm_x * norm_y);
            assert!(rel < 1e-6, "trial {trial}: rel {rel}");
        }
    }

    #[test]
    fn backprojected_one_hot_bin_is_a_column_band() {
        let n = 32;
        let mut row = Array1::zeros(n);
        row[10] = 1.0;
        let img = backproject_view(row.view(), 0.0, 1, n);
        // at angle 0 and k=1, samples align with pixel centers exactly:
        // column 10 receives 2/n in every row, everything else is zero
        let expect = 2.0 / n as f64;
        for ((i, j), &v) in img.indexed_iter() {
            if j == 10 {
                assert!((v - expect).abs() < 1e-12, "({i},{j})");
            } else {
                assert_eq!(v, 0.0, "({i},{j})");
            }
        }
    }

    #[test]
    fn zero_row_backprojects_to_zero() {
        let row = Array1::zeros(16);
        let img = backproject_view(row.view(), 1.3, 2, 16);
        assert!(img.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn static_movie_renders_the_classical_radon_transform() {
        let grid = GridSpec::new(32, 4).unwrap();
        let cfg = CircleScene {
            radius: 0.3,
            orbit_radius: 0.2,
            displacement_deg: 0.0,
        };
        let movie = make_translating_circle(&cfg, &grid).unwrap();
        let schedule = GantrySchedule::new(40, 1).unwrap();
        let sino = render_sinogram(&movie, &schedule, 2).unwrap();
        for j in 0..schedule.n_views {
            let direct = project_view(&movie.frames[0], schedule.view_angle(j), 2).unwrap();
            for d in 0..32 {
                assert_eq!(sino.rows[[j, d]], direct[d]);
            }
        }
    }

    #[test]
    fn repeated_rotations_of_a_static_scene_repeat_rows() {
        let grid = GridSpec::new(24, 3).unwrap();
        let cfg = CircleScene {
            radius: 0.25,
            orbit_radius: 0.3,
            displacement_deg: 0.0,
        };
        let movie = make_translating_circle(&cfg, &grid).unwrap();
        // 2 rotations, 241 views: view j and j+120 share an angle mod 2 pi
        let schedule = GantrySchedule::new(241, 2).unwrap();
        let sino = render_sinogram(&movie, &schedule, 2).unwrap();
        for j in 0..120 {
            for d in 0..24 {
                let a = sino.rows[[j, d]];
                let b = sino.rows[[j + 120, d]];
                assert!(
                    (a - b).abs() < 1e-9,
                    "view {j} bin {d}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn moving_circle_peak_traces_the_projected_center() {
        let grid = GridSpec::new(64, 128).unwrap();
        let cfg = CircleScene {
            radius: 0.12,
            orbit_radius: 0.5,
            displacement_deg: 100.0,
        };
        let movie = make_translating_circle(&cfg, &grid).unwrap();
        let schedule = GantrySchedule::new(128, 1).unwrap();
        let sino = render_sinogram(&movie, &schedule, 2).unwrap();
        let bin = 2.0 / 64.0;
        for j in 0..schedule.n_views {
            let t = schedule.view_time(j);
            let theta = schedule.view_angle(j);
            let phi = 100f64.to_radians() * t;
            let (cx, cy) = (0.5 * phi.cos(), 0.5 * phi.sin());
            // detector coordinate of an image point p is p . (cos, sin)
            let l_pred = cx * theta.cos() + cy * theta.sin();
            let d_max = (0..64)
                .max_by(|&a, &b| sino.rows[[j, a]].partial_cmp(&sino.rows[[j, b]]).unwrap())
                .unwrap();
            let l_meas = -1.0 + (d_max as f64 + 0.5) * bin;
            assert!(
                (l_meas - l_pred).abs() <= 2.0 * bin,
                "view {j}: measured {l_meas} predicted {l_pred}"
            );
        }
    }

    #[test]
    fn rotating_the_image_shifts_the_angle_by_half_pi() {
        let n = 64;
        let grid = GridSpec::new(n, 2).unwrap();
        // smooth off-center Gaussian blob
        let img = Array2::from_shape_fn((n, n), |(i, j)| {
            let x = grid.coord(j) - 0.2;
            let y = grid.coord(i) + 0.1;
            (-(x * x + y * y) / 0.05).exp()
        });
        // clockwise quarter turn: value at (x, y) comes from (-y, x)
        let rot = Array2::from_shape_fn((n, n), |(i, j)| img[[j, n - 1 - i]]);
        for angle in [0.0, 0.4, 1.9] {
            let a = project_view(&rot, angle, 2).unwrap();
            let b = project_view(&img, angle + std::f64::consts::FRAC_PI_2, 2).unwrap();
            let max_diff = a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max);
            assert!(max_diff < 1e-3, "angle {angle}: {max_diff}");
        }
    }

    #[test]
    fn schedule_with_too_few_views_is_rejected() {
        let grid = GridSpec::new(64, 4).unwrap();
        let movie = IntensityMovie::zeros(grid);
        let schedule = GantrySchedule::new(32, 1).unwrap();
        assert!(render_sinogram(&movie, &schedule, 2).is_err());
    }

    #[test]
    fn sinogram_roundtrips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let schedule = GantrySchedule::new(40, 2).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let rows = Array2::from_shape_fn((40, 16), |_| rng.gen::<f32>() as f64);
        let sino = Sinogram { rows, schedule };
        let base = dir.path().join("sino");
        sino.save(&base).unwrap();
        let back = Sinogram::load(&base).unwrap();
        assert_eq!(back.schedule, schedule);
        assert_eq!(back.rows, sino.rows);
    }
}
