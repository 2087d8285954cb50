//! Initialization stage: segment FBP frames into binary class movies and
//! convert them to explicit signed-distance movies.

pub mod edt;
pub mod gmm;
pub mod tv;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::Result;
use crate::grid::GridSpec;
use crate::movie::{BinaryMovie, SdfMovie};

pub use edt::signed_distance_px;
pub use gmm::{fit_gmm, gmm_segment, GmmModel, Segmentation};
pub use tv::{total_variation, tv_minimize};

/// TV smoothing strengths for the mask and SDF passes of [`binary_to_sdf`].
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SdfChainParams {
    pub tv_mask_weight: f64,
    pub tv_mask_iters: usize,
    pub tv_sdf_weight: f64,
    pub tv_sdf_iters: usize,
}

impl Default for SdfChainParams {
    fn default() -> Self {
        SdfChainParams {
            tv_mask_weight: 0.1,
            tv_mask_iters: 50,
            tv_sdf_weight: 0.05,
            tv_sdf_iters: 20,
        }
    }
}

/// Signed Euclidean distance in normalized spatial units (pixels scaled by
/// `2/n`), positive inside the mask.
pub fn signed_distance_transform(mask: &Array2<bool>, grid: &GridSpec) -> Result<Array2<f64>> {
    let px = signed_distance_px(mask)?;
    Ok(px.mapv(|v| v * grid.pixel()))
}

/// Convert a binary class movie to an explicit SDF movie:
/// TV-smooth the mask, re-binarize at 0.5, take the exact signed distance
/// transform, then TV-smooth the SDF image.
pub fn binary_to_sdf(
    classes: &BinaryMovie,
    params: &SdfChainParams,
) -> Result<SdfMovie> {
    let grid = classes.grid;
    let values: Result<Vec<Vec<Array2<f64>>>> = classes
        .masks
        .par_iter()
        .map(|per_t| {
            per_t
                .iter()
                .map(|mask| {
                    let smoothed = tv_minimize(
                        &mask.mapv(|m| if m { 1.0 } else { 0.0 }),
                        params.tv_mask_weight,
                        params.tv_mask_iters,
                    );
                    let rebinarized = smoothed.mapv(|v| v > 0.5);
                    let sdf = signed_distance_transform(&rebinarized, &grid)?;
                    Ok(tv_minimize(&sdf, params.tv_sdf_weight, params.tv_sdf_iters))
                })
                .collect()
        })
        .collect();
    Ok(SdfMovie {
        grid,
        values: values?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::analytic_sdf_circle;

    fn disk_movie(n: usize, frames: usize, r: f64) -> BinaryMovie {
        let grid = GridSpec::new(n, frames).unwrap();
        let mask = Array2::from_shape_fn((n, n), |(i, j)| {
            let x = grid.coord(j);
            let y = grid.coord(i);
            (x * x + y * y).sqrt() <= r
        });
        BinaryMovie {
            grid,
            masks: vec![vec![mask]; frames],
        }
    }

    #[test]
    fn clean_disk_sdf_stays_within_1p5_px_of_analytic() {
        let n = 64;
        let movie = disk_movie(n, 3, 0.5);
        let grid = movie.grid;
        let sdf = binary_to_sdf(&movie, &SdfChainParams::default()).unwrap();
        let analytic = analytic_sdf_circle((0.0, 0.0), 0.5, &grid).unwrap();
        let px = grid.pixel();
        let mut max_err = 0.0f64;
        for (a, b) in sdf.values[0][0].iter().zip(analytic.iter()) {
            max_err = max_err.max((a - b).abs());
        }
        assert!(
            max_err <= 1.5 * px,
            "max |sdf - analytic| = {} px",
            max_err / px
        );
    }

    #[test]
    fn identical_frames_give_identical_sdfs() {
        let movie = disk_movie(32, 4, 0.4);
        let sdf = binary_to_sdf(&movie, &SdfChainParams::default()).unwrap();
        for t in 1..4 {
            assert_eq!(sdf.values[0][0], sdf.values[t][0]);
        }
    }

    #[test]
    fn circle_mask_edt_matches_analytic_oracle() {
        let n = 64;
        let grid = GridSpec::new(n, 2).unwrap();
        let r = 20.0 * grid.pixel(); // radius 20 px
        let mask = Array2::from_shape_fn((n, n), |(i, j)| {
            let x = grid.coord(j);
            let y = grid.coord(i);
            (x * x + y * y).sqrt() <= r
        });
        let sdf = signed_distance_transform(&mask, &grid).unwrap();
        let analytic = analytic_sdf_circle((0.0, 0.0), r, &grid).unwrap();
        let px = grid.pixel();
        for (a, b) in sdf.iter().zip(analytic.iter()) {
            assert!((a - b).abs() <= 1.5 * px, "edt {} vs analytic {}", a, b);
        }
    }

    #[test]
    fn sdf_is_discretely_lipschitz() {
        let movie = disk_movie(48, 2, 0.45);
        let grid = movie.grid;
        let sdf = binary_to_sdf(&movie, &SdfChainParams::default()).unwrap();
        let f = &sdf.values[0][0];
        let px = grid.pixel();
        let n = grid.n;
        for i in 0..n {
            for j in 1..n {
                assert!((f[[i, j]] - f[[i, j - 1]]).abs() <= px + 2.0 * px);
            }
        }
        for i in 1..n {
            for j in 0..n {
                assert!((f[[i, j]] - f[[i - 1, j]]).abs() <= px + 2.0 * px);
            }
        }
    }

    #[test]
    fn chain_is_idempotent_within_one_pixel() {
        let movie = disk_movie(48, 2, 0.4);
        let grid = movie.grid;
        let params = SdfChainParams::default();
        let sdf1 = binary_to_sdf(&movie, &params).unwrap();
        // re-binarize the output and run the chain again
        let mask2 = sdf1.values[0][0].mapv(|v| v > 0.0);
        let movie2 = BinaryMovie {
            grid,
            masks: vec![vec![mask2]; 2],
        };
        let sdf2 = binary_to_sdf(&movie2, &params).unwrap();
        // zero level sets agree within one pixel: signs may only differ
        // where the first SDF is within 1 px of zero
        let px = grid.pixel();
        for (a, b) in sdf1.values[0][0].iter().zip(sdf2.values[0][0].iter()) {
            if (a > &0.0) != (b > &0.0) {
                assert!(a.abs() < px, "zero level set moved {} px", a.abs() / px);
            }
        }
    }

    /// Marching-squares estimate of the total boundary length of the 0.5
    /// level set, in pixel units.
    fn boundary_length(img: &Array2<f64>, level: f64) -> f64 {
        let (h, w) = img.dim();
        let mut len = 0.0;
        for i in 0..h - 1 {
            for j in 0..w - 1 {
                let corners = [
                    img[[i, j]] > level,
                    img[[i, j + 1]] > level,
                    img[[i + 1, j + 1]] > level,
                    img[[i + 1, j]] > level,
                ];
                let inside = corners.iter().filter(|&&c| c).count();
                len += match inside {
                    1 | 3 => std::f64::consts::SQRT_2 / 2.0,
                    2 => {
                        if corners[0] == corners[2] {
                            // diagonal case: two crossings
                            std::f64::consts::SQRT_2
                        } else {
                            1.0
                        }
                    }
                    _ => 0.0,
                };
            }
        }
        len
    }

    #[test]
    fn tv_smoothing_never_roughens_the_boundary() {
        use rand::prelude::*;
        let n = 48;
        let grid = GridSpec::new(n, 2).unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(23);
        let mask = Array2::from_shape_fn((n, n), |(i, j)| {
            let x = grid.coord(j);
            let y = grid.coord(i);
            let inside = (x * x + y * y).sqrt() <= 0.5;
            if rng.gen::<f64>() < 0.05 {
                !inside
            } else {
                inside
            }
        });
        let movie = BinaryMovie {
            grid,
            masks: vec![vec![mask.clone()]; 2],
        };
        let sdf = binary_to_sdf(&movie, &SdfChainParams::default()).unwrap();
        let in_len = boundary_length(&mask.mapv(|m| if m { 1.0 } else { 0.0 }), 0.5);
        let out_len = boundary_length(&sdf.values[0][0], 0.0);
        assert!(
            out_len <= in_len,
            "boundary length grew: {out_len} > {in_len}"
        );
    }
}
