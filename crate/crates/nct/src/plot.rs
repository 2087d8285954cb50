//! Small PNG plot renderer: line plots, heatmaps, and movie frame strips.
//! Enough for the emitted diagnostics without pulling in a charting stack.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::error::{NctError, Result};
use crate::movie::IntensityMovie;

pub const COLORS: [[u8; 3]; 6] = [
    [214, 69, 65],   // red
    [31, 119, 180],  // blue
    [44, 160, 44],   // green
    [255, 127, 14],  // orange
    [148, 103, 189], // purple
    [23, 190, 207],  // cyan
];

/// 5x7 bitmap glyphs, one byte per column, LSB at the top row.
fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_uppercase() {
        '0' => [0x3e, 0x51, 0x49, 0x45, 0x3e],
        '1' => [0x00, 0x42, 0x7f, 0x40, 0x00],
        '2' => [0x42, 0x61, 0x51, 0x49, 0x46],
        '3' => [0x21, 0x41, 0x45, 0x4b, 0x31],
        '4' => [0x18, 0x14, 0x12, 0x7f, 0x10],
        '5' => [0x27, 0x45, 0x45, 0x45, 0x39],
        '6' => [0x3c, 0x4a, 0x49, 0x49, 0x30],
        '7' => [0x01, 0x71, 0x09, 0x05, 0x03],
        '8' => [0x36, 0x49, 0x49, 0x49, 0x36],
        '9' => [0x06, 0x49, 0x49, 0x29, 0x1e],
        '.' => [0x00, 0x60, 0x60, 0x00, 0x00],
        ',' => [0x00, 0x50, 0x30, 0x00, 0x00],
        '-' => [0x08, 0x08, 0x08, 0x08, 0x08],
        '+' => [0x08, 0x08, 0x3e, 0x08, 0x08],
        '_' => [0x40, 0x40, 0x40, 0x40, 0x40],
        '=' => [0x14, 0x14, 0x14, 0x14, 0x14],
        '/' => [0x20, 0x10, 0x08, 0x04, 0x02],
        '%' => [0x23, 0x13, 0x08, 0x64, 0x62],
        ':' => [0x00, 0x36, 0x36, 0x00, 0x00],
        '(' => [0x00, 0x1c, 0x22, 0x41, 0x00],
        ')' => [0x00, 0x41, 0x22, 0x1c, 0x00],
        'A' => [0x7e, 0x11, 0x11, 0x11, 0x7e],
        'B' => [0x7f, 0x49, 0x49, 0x49, 0x36],
        'C' => [0x3e, 0x41, 0x41, 0x41, 0x22],
        'D' => [0x7f, 0x41, 0x41, 0x22, 0x1c],
        'E' => [0x7f, 0x49, 0x49, 0x49, 0x41],
        'F' => [0x7f, 0x09, 0x09, 0x09, 0x01],
        'G' => [0x3e, 0x41, 0x49, 0x49, 0x7a],
        'H' => [0x7f, 0x08, 0x08, 0x08, 0x7f],
        'I' => [0x00, 0x41, 0x7f, 0x41, 0x00],
        'J' => [0x20, 0x40, 0x41, 0x3f, 0x01],
        'K' => [0x7f, 0x08, 0x14, 0x22, 0x41],
        'L' => [0x7f, 0x40, 0x40, 0x40, 0x40],
        'M' => [0x7f, 0x02, 0x0c, 0x02, 0x7f],
        'N' => [0x7f, 0x04, 0x08, 0x10, 0x7f],
        'O' => [0x3e, 0x41, 0x41, 0x41, 0x3e],
        'P' => [0x7f, 0x09, 0x09, 0x09, 0x06],
        'Q' => [0x3e, 0x41, 0x51, 0x21, 0x5e],
        'R' => [0x7f, 0x09, 0x19, 0x29, 0x46],
        'S' => [0x46, 0x49, 0x49, 0x49, 0x31],
        'T' => [0x01, 0x01, 0x7f, 0x01, 0x01],
        'U' => [0x3f, 0x40, 0x40, 0x40, 0x3f],
        'V' => [0x1f, 0x20, 0x40, 0x20, 0x1f],
        'W' => [0x3f, 0x40, 0x38, 0x40, 0x3f],
        'X' => [0x63, 0x14, 0x08, 0x14, 0x63],
        'Y' => [0x07, 0x08, 0x70, 0x08, 0x07],
        'Z' => [0x61, 0x51, 0x49, 0x45, 0x43],
        _ => [0x00; 5],
    }
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: [u8; 3]) {
    let mut cx = x;
    for c in text.chars() {
        let g = glyph(c);
        for (col, bits) in g.iter().enumerate() {
            for row in 0..7 {
                if bits >> row & 1 == 1 {
                    let (px, py) = (cx + col as i64, y + row);
                    if px >= 0 && py >= 0 && px < img.width() as i64 && py < img.height() as i64 {
                        img.put_pixel(px as u32, py as u32, Rgb(color));
                    }
                }
            }
        }
        cx += 6;
    }
}

fn draw_line(img: &mut RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, color: [u8; 3]) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = x0 + (x1 - x0) * t;
        let y = y0 + (y1 - y0) * t;
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, Rgb(color));
        }
    }
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub color: [u8; 3],
}

fn nice_number(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.2}")
    } else if a >= 0.01 {
        format!("{v:.3}")
    } else {
        format!("{v:.1e}")
    }
}

/// Line plot with axes, tick labels and a legend.
pub fn line_plot(
    path: &Path,
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[Series],
) -> Result<()> {
    let (w, h) = (720u32, 480u32);
    let (ml, mr, mt, mb) = (70i64, 20i64, 30i64, 50i64);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.xs.iter().cloned().zip(s.ys.iter().cloned()))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    if pts.is_empty() {
        return Err(NctError::config("line_plot: no finite points"));
    }
    let (mut x0, mut x1) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.0), b.max(p.0))
        });
    let (mut y0, mut y1) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.1), b.max(p.1))
        });
    if x1 <= x0 {
        x1 = x0 + 1.0;
        x0 -= 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
        y0 -= 1.0;
    }
    let pad_y = 0.05 * (y1 - y0);
    y0 -= pad_y;
    y1 += pad_y;
    let plot_w = (w as i64 - ml - mr) as f64;
    let plot_h = (h as i64 - mt - mb) as f64;
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        (
            ml as f64 + (x - x0) / (x1 - x0) * plot_w,
            mt as f64 + (1.0 - (y - y0) / (y1 - y0)) * plot_h,
        )
    };
    // frame and ticks
    let black = [0u8, 0, 0];
    let grey = [210u8, 210, 210];
    for i in 0..=4 {
        let xv = x0 + (x1 - x0) * i as f64 / 4.0;
        let yv = y0 + (y1 - y0) * i as f64 / 4.0;
        let (px, _) = to_px(xv, y0);
        let (_, py) = to_px(x0, yv);
        draw_line(&mut img, px, mt as f64, px, mt as f64 + plot_h, grey);
        draw_line(&mut img, ml as f64, py, ml as f64 + plot_w, py, grey);
        draw_text(&mut img, px as i64 - 12, h as i64 - mb + 8, &nice_number(xv), black);
        draw_text(&mut img, 6, py as i64 - 3, &nice_number(yv), black);
    }
    draw_line(&mut img, ml as f64, mt as f64, ml as f64, mt as f64 + plot_h, black);
    draw_line(
        &mut img,
        ml as f64,
        mt as f64 + plot_h,
        ml as f64 + plot_w,
        mt as f64 + plot_h,
        black,
    );
    draw_text(&mut img, ml, 10, title, black);
    draw_text(
        &mut img,
        ml + plot_w as i64 / 2 - 3 * xlabel.len() as i64,
        h as i64 - 18,
        xlabel,
        black,
    );
    draw_text(&mut img, 6, mt - 12, ylabel, black);
    // series and legend
    for (si, s) in series.iter().enumerate() {
        let mut prev: Option<(f64, f64)> = None;
        for (x, y) in s.xs.iter().zip(s.ys.iter()) {
            if !x.is_finite() || !y.is_finite() {
                prev = None;
                continue;
            }
            let p = to_px(*x, *y);
            if let Some(q) = prev {
                draw_line(&mut img, q.0, q.1, p.0, p.1, s.color);
            }
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    let (px, py) = (p.0 as i64 + dx, p.1 as i64 + dy);
                    if px >= 0 && py >= 0 && (px as u32) < w && (py as u32) < h {
                        img.put_pixel(px as u32, py as u32, Rgb(s.color));
                    }
                }
            }
            prev = Some(p);
        }
        let ly = mt + 10 + 12 * si as i64;
        draw_line(
            &mut img,
            (ml + plot_w as i64 - 150) as f64,
            ly as f64 + 3.0,
            (ml + plot_w as i64 - 130) as f64,
            ly as f64 + 3.0,
            s.color,
        );
        draw_text(&mut img, ml + plot_w as i64 - 125, ly, &s.label, black);
    }
    save_png(&img, path)
}

/// Heatmap with per-cell value labels.
pub fn heatmap(
    path: &Path,
    title: &str,
    x_ticks: &[String],
    y_ticks: &[String],
    values: &Array2<f64>,
) -> Result<()> {
    let (rows, cols) = values.dim();
    if rows != y_ticks.len() || cols != x_ticks.len() {
        return Err(NctError::config("heatmap: tick/value shape mismatch"));
    }
    let cell = 80u32;
    let (ml, mt) = (80u32, 40u32);
    let w = ml + cell * cols as u32 + 20;
    let h = mt + cell * rows as u32 + 40;
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let finite: Vec<f64> = values.iter().cloned().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(NctError::config("heatmap: no finite values"));
    }
    let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ramp = |t: f64| -> [u8; 3] {
        // dark blue -> teal -> yellow
        let t = t.clamp(0.0, 1.0);
        let r = (255.0 * (t * t * 0.9 + t * 0.1)) as u8;
        let g = (255.0 * (0.1 + 0.8 * t)) as u8;
        let b = (255.0 * (0.45 + 0.3 * (1.0 - t) - 0.25 * t)) as u8;
        [r, g, b]
    };
    for i in 0..rows {
        for j in 0..cols {
            let v = values[[i, j]];
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            let color = if v.is_finite() { ramp(t) } else { [230, 230, 230] };
            for py in 0..cell {
                for px in 0..cell {
                    img.put_pixel(
                        ml + j as u32 * cell + px,
                        mt + i as u32 * cell + py,
                        Rgb(color),
                    );
                }
            }
            let label = nice_number(v);
            draw_text(
                &mut img,
                (ml + j as u32 * cell) as i64 + 8,
                (mt + i as u32 * cell) as i64 + cell as i64 / 2 - 3,
                &label,
                [0, 0, 0],
            );
        }
    }
    for (j, tick) in x_ticks.iter().enumerate() {
        draw_text(
            &mut img,
            (ml + j as u32 * cell) as i64 + 10,
            (mt + rows as u32 * cell) as i64 + 8,
            tick,
            [0, 0, 0],
        );
    }
    for (i, tick) in y_ticks.iter().enumerate() {
        draw_text(&mut img, 6, (mt + i as u32 * cell) as i64 + cell as i64 / 2, tick, [0, 0, 0]);
    }
    draw_text(&mut img, ml as i64, 12, title, [0, 0, 0]);
    save_png(&img, path)
}

/// Horizontal strip of evenly spaced frames, one row per labeled movie.
/// Intensities in `[0, 1]` map linearly to 8-bit grey.
pub fn frame_strip(path: &Path, rows: &[(&str, &IntensityMovie)], count: usize) -> Result<()> {
    if rows.is_empty() || count == 0 {
        return Err(NctError::config("frame_strip: nothing to draw"));
    }
    let n = rows[0].1.grid.n as u32;
    let label_h = 12u32;
    let w = n * count as u32 + (count as u32 - 1);
    let h = (n + label_h) * rows.len() as u32;
    let mut img = RgbImage::from_pixel(w, h, Rgb([40, 40, 40]));
    for (ri, (label, movie)) in rows.iter().enumerate() {
        if movie.grid.n as u32 != n {
            return Err(NctError::config("frame_strip: mixed resolutions"));
        }
        let y_base = ri as u32 * (n + label_h);
        draw_text(&mut img, 2, y_base as i64 + 2, label, [255, 255, 255]);
        for s in 0..count {
            let t_idx = if count == 1 {
                0
            } else {
                s * (movie.frames.len() - 1) / (count - 1)
            };
            let frame = &movie.frames[t_idx];
            let x_base = s as u32 * (n + 1);
            for i in 0..n {
                for j in 0..n {
                    let v = frame[[(n - 1 - i) as usize, j as usize]].clamp(0.0, 1.0);
                    let g = (v * 255.0) as u8;
                    img.put_pixel(x_base + j, y_base + label_h + i, Rgb([g, g, g]));
                }
            }
        }
    }
    save_png(&img, path)
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| NctError::io(dir, e))?;
        }
    }
    img.save(path)
        .map_err(|e| NctError::config(format!("write {}: {e}", path.display())))
}
