//! Exact 2D Euclidean distance transform (two-pass lower-envelope method).
//!
//! The 1D transform computes `d(p) = min_q ((p-q)^2 + f(q))` by scanning the
//! lower envelope of the parabolas rooted at each `q`; applying it along rows
//! and then columns gives the exact squared Euclidean distance on the grid.

use ndarray::Array2;

use crate::error::{NctError, Result};

const INF: f64 = 1e20;

/// 1D squared distance transform of sampled function `f`.
fn dt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n]; // parabola roots in the envelope
    let mut z = vec![0.0f64; n + 1]; // envelope breakpoints
    let mut k = 0usize;
    z[0] = -INF;
    z[1] = INF;
    for q in 1..n {
        let mut s;
        loop {
            let r = v[k];
            s = ((f[q] + (q * q) as f64) - (f[r] + (r * r) as f64)) / (2 * q - 2 * r) as f64;
            if s <= z[k] {
                if k == 0 {
                    break;
                }
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = INF;
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        out[q] = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance (in pixel units) from every pixel to the
/// nearest `true` pixel of `sites`. Pixels with no site anywhere keep `INF`.
pub fn squared_distance_to(sites: &Array2<bool>) -> Array2<f64> {
    let (h, w) = sites.dim();
    let mut d = Array2::from_elem((h, w), INF);
    for ((i, j), &s) in sites.indexed_iter() {
        if s {
            d[[i, j]] = 0.0;
        }
    }
    // rows, then columns
    let mut buf = vec![0.0f64; w.max(h)];
    for i in 0..h {
        let row: Vec<f64> = (0..w).map(|j| d[[i, j]]).collect();
        dt_1d(&row, &mut buf[..w]);
        for j in 0..w {
            d[[i, j]] = buf[j];
        }
    }
    for j in 0..w {
        let col: Vec<f64> = (0..h).map(|i| d[[i, j]]).collect();
        dt_1d(&col, &mut buf[..h]);
        for i in 0..h {
            d[[i, j]] = buf[i];
        }
    }
    d
}

/// Signed distance in pixel units: positive inside the mask, negative
/// outside. Errors when the mask is all-foreground or all-background.
pub fn signed_distance_px(mask: &Array2<bool>) -> Result<Array2<f64>> {
    let fg = mask.iter().filter(|&&m| m).count();
    if fg == 0 || fg == mask.len() {
        return Err(NctError::numeric(
            "distance_transform",
            "mask must contain both foreground and background pixels",
        ));
    }
    let background = mask.mapv(|m| !m);
    let d_to_bg = squared_distance_to(&background);
    let d_to_fg = squared_distance_to(mask);
    let mut out = Array2::zeros(mask.dim());
    for ((i, j), v) in out.indexed_iter_mut() {
        *v = d_to_bg[[i, j]].sqrt() - d_to_fg[[i, j]].sqrt();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    /// O(n^4) oracle: nearest-site search by direct enumeration.
    fn brute_force_signed(mask: &Array2<bool>) -> Array2<f64> {
        let (h, w) = mask.dim();
        let mut out = Array2::zeros((h, w));
        for i in 0..h {
            for j in 0..w {
                let mut best = f64::INFINITY;
                for p in 0..h {
                    for q in 0..w {
                        if mask[[p, q]] != mask[[i, j]] {
                            let d = ((p as f64 - i as f64).powi(2)
                                + (q as f64 - j as f64).powi(2))
                            .sqrt();
                            best = best.min(d);
                        }
                    }
                }
                out[[i, j]] = if mask[[i, j]] { best } else { -best };
            }
        }
        out
    }

    #[test]
    fn half_plane_is_linear_with_unit_gradient() {
        // left half foreground
        let mask = Array2::from_shape_fn((16, 16), |(_, j)| j < 8);
        let f = signed_distance_px(&mask).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let expect = if j < 8 { (8 - j) as f64 } else { -((j - 7) as f64) };
                assert_eq!(f[[i, j]], expect, "at ({i},{j})");
            }
        }
        // |∇f| = 1 along the row direction away from the interface; the
        // zero crossing sits between pixel centers, so the two pixels
        // straddling the boundary differ by exactly 2
        for i in 0..16 {
            for j in 1..16 {
                let d = (f[[i, j]] - f[[i, j - 1]]).abs();
                if j == 8 {
                    assert_eq!(d, 2.0);
                } else {
                    assert_eq!(d, 1.0);
                }
            }
        }
    }

    #[test]
    fn single_pixel_matches_brute_force_exactly() {
        let mut mask = Array2::from_elem((9, 9), false);
        mask[[4, 4]] = true;
        let f = signed_distance_px(&mask).unwrap();
        assert_eq!(f[[4, 4]], 1.0); // nearest background is a 4-neighbor
        assert_eq!(f[[4, 5]], -1.0);
        let oracle = brute_force_signed(&mask);
        assert_eq!(f, oracle);
    }

    #[test]
    fn random_masks_match_brute_force_exactly() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for density in [0.1, 0.5, 0.9] {
            for _ in 0..4 {
                let mask = Array2::from_shape_fn((32, 32), |_| rng.gen::<f64>() < density);
                if mask.iter().all(|&m| m) || mask.iter().all(|&m| !m) {
                    continue;
                }
                let f = signed_distance_px(&mask).unwrap();
                let oracle = brute_force_signed(&mask);
                assert_eq!(f, oracle);
            }
        }
    }

    #[test]
    fn degenerate_masks_are_rejected() {
        assert!(signed_distance_px(&Array2::from_elem((8, 8), true)).is_err());
        assert!(signed_distance_px(&Array2::from_elem((8, 8), false)).is_err());
    }

    #[test]
    fn sign_changes_exactly_with_the_mask() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mask = Array2::from_shape_fn((24, 24), |_| rng.gen::<f64>() < 0.4);
        let f = signed_distance_px(&mask).unwrap();
        for ((i, j), &m) in mask.indexed_iter() {
            assert_eq!(f[[i, j]] > 0.0, m, "sign must match mask at ({i},{j})");
            assert!(f[[i, j]].abs() >= 1.0); // nearest opposite pixel is >= 1 away
        }
    }
}
