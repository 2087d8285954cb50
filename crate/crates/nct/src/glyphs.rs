//! Stencil letter masks for the letter-warp phantom.
//!
//! The repo ships 512x512 binary masks of the letters A, B and C under
//! `assets/glyphs/`; they are generated from the geometric stencil shapes
//! below, and [`builtin_glyph`] reproduces them bit-identically so the
//! library works without touching the filesystem. A directory of custom
//! `A.png`/`B.png`/`C.png` masks can be supplied instead.

use std::path::Path;

use ndarray::Array2;

use crate::error::{NctError, Result};

pub const GLYPH_SIZE: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Letter {
    A,
    B,
    C,
}

impl Letter {
    pub fn file_name(&self) -> &'static str {
        match self {
            Letter::A => "A.png",
            Letter::B => "B.png",
            Letter::C => "C.png",
        }
    }
}

fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let ab = (b.0 - a.0, b.1 - a.1);
    let ap = (p.0 - a.0, p.1 - a.1);
    let len2 = ab.0 * ab.0 + ab.1 * ab.1;
    let t = if len2 > 0.0 {
        ((ap.0 * ab.0 + ap.1 * ab.1) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = (ap.0 - t * ab.0, ap.1 - t * ab.1);
    (d.0 * d.0 + d.1 * d.1).sqrt()
}

fn in_capsule(p: (f64, f64), a: (f64, f64), b: (f64, f64), half_width: f64) -> bool {
    dist_to_segment(p, a, b) <= half_width
}

fn in_rect(p: (f64, f64), u0: f64, u1: f64, v0: f64, v1: f64) -> bool {
    p.0 >= u0 && p.0 <= u1 && p.1 >= v0 && p.1 <= v1
}

fn in_half_annulus(p: (f64, f64), c: (f64, f64), r_in: f64, r_out: f64) -> bool {
    if p.0 < c.0 {
        return false;
    }
    let d = ((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2)).sqrt();
    d >= r_in && d <= r_out
}

/// Membership test in glyph coordinates `(u, v) ∈ [0,1]^2`, `v` up.
fn glyph_contains(letter: Letter, p: (f64, f64)) -> bool {
    match letter {
        Letter::A => {
            let apex = (0.5, 0.90);
            in_capsule(p, apex, (0.17, 0.08), 0.065)
                || in_capsule(p, apex, (0.83, 0.08), 0.065)
                || (in_rect(p, 0.30, 0.70, 0.30, 0.43))
        }
        Letter::B => {
            in_rect(p, 0.20, 0.36, 0.06, 0.94)
                || in_half_annulus(p, (0.36, 0.715), 0.105, 0.225)
                || in_half_annulus(p, (0.36, 0.285), 0.115, 0.245)
        }
        Letter::C => {
            let d = ((p.0 - 0.5).powi(2) + (p.1 - 0.5).powi(2)).sqrt();
            if d < 0.26 || d > 0.42 {
                return false;
            }
            // gap on the right
            let ang = (p.1 - 0.5).atan2(p.0 - 0.5);
            ang.abs() > 38f64.to_radians()
        }
    }
}

/// Built-in stencil mask; row 0 is the bottom of the glyph.
pub fn builtin_glyph(letter: Letter) -> Array2<bool> {
    let s = GLYPH_SIZE;
    Array2::from_shape_fn((s, s), |(i, j)| {
        let u = (j as f64 + 0.5) / s as f64;
        let v = (i as f64 + 0.5) / s as f64;
        glyph_contains(letter, (u, v))
    })
}

/// Load one glyph mask from `dir`. Luma above 127 counts as foreground;
/// PNG rows are flipped so row 0 of the result is the glyph bottom.
pub fn load_glyph(dir: &Path, letter: Letter) -> Result<Array2<bool>> {
    let path = dir.join(letter.file_name());
    let img = image::open(&path)
        .map_err(|e| NctError::config(format!("missing glyph asset {}: {e}", path.display())))?
        .into_luma8();
    let (w, h) = img.dimensions();
    if w != h {
        return Err(NctError::config(format!(
            "glyph {} must be square, got {w}x{h}",
            path.display()
        )));
    }
    let h = h as usize;
    Ok(Array2::from_shape_fn((h, w as usize), |(i, j)| {
        img.get_pixel(j as u32, (h - 1 - i) as u32).0[0] > 127
    }))
}

/// Write a glyph mask as an 8-bit PNG (used to materialize the repo assets).
pub fn save_glyph(mask: &Array2<bool>, path: &Path) -> Result<()> {
    let (h, w) = mask.dim();
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for ((i, j), &m) in mask.indexed_iter() {
        img.put_pixel(
            j as u32,
            (h - 1 - i) as u32,
            image::Luma([if m { 255 } else { 0 }]),
        );
    }
    img.save(path)
        .map_err(|e| NctError::config(format!("write {}: {e}", path.display())))
}
