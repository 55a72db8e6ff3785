//! Minimal raster line plots for loss curves and transient overlays.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::write_png_rgb8;

pub const RED: [u8; 3] = [214, 39, 40];
pub const BLUE: [u8; 3] = [31, 119, 180];
pub const GREEN: [u8; 3] = [44, 160, 44];
const AXIS: [u8; 3] = [60, 60, 60];
const GRID: [u8; 3] = [225, 225, 225];

pub struct Series<'a> {
    pub values: &'a [f64],
    pub color: [u8; 3],
}

#[derive(Clone, Copy, Debug)]
pub struct PlotStyle {
    pub width: usize,
    pub height: usize,
    /// Plot `log10` of positive values; nonpositive values are skipped.
    pub log_y: bool,
}

impl Default for PlotStyle {
    fn default() -> Self {
        Self {
            width: 640,
            height: 360,
            log_y: false,
        }
    }
}

struct Canvas {
    w: usize,
    h: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Self {
        Self {
            w,
            h,
            rgb: vec![255; w * h * 3],
        }
    }

    fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            let i = (y as usize * self.w + x as usize) * 3;
            self.rgb[i..i + 3].copy_from_slice(&c);
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }
}

/// Rasterizes the series against their index on shared axes and writes a PNG.
pub fn line_plot(path: &Path, series: &[Series], style: PlotStyle) -> Result<()> {
    if style.width < 32 || style.height < 32 {
        return Err(Error::invalid("plot must be at least 32x32 pixels"));
    }
    let tf = |v: f64| if style.log_y { (v > 0.0).then(|| v.log10()) } else { Some(v) };
    let ys = series
        .iter()
        .flat_map(|s| s.values.iter().filter_map(|v| tf(*v)))
        .filter(|v| v.is_finite());
    let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo > hi {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    };
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0).max(2);
    let m = 12i64;
    let (w, h) = (style.width as i64, style.height as i64);
    let mut c = Canvas::new(style.width, style.height);
    for k in 1..4 {
        let y = m + (h - 2 * m) * k / 4;
        c.line((m, y), (w - m, y), GRID);
    }
    c.line((m, m), (m, h - m), AXIS);
    c.line((m, h - m), (w - m, h - m), AXIS);
    let px = |i: usize| m + ((w - 2 * m) as f64 * i as f64 / (n - 1) as f64).round() as i64;
    let py = |v: f64| h - m - ((h - 2 * m) as f64 * (v - lo) / (hi - lo)).round() as i64;
    for s in series {
        let mut prev: Option<(i64, i64)> = None;
        for (i, v) in s.values.iter().enumerate() {
            match tf(*v).filter(|v| v.is_finite()) {
                Some(v) => {
                    let p = (px(i), py(v));
                    match prev {
                        Some(q) => c.line(q, p, s.color),
                        None => c.set(p.0, p.1, s.color),
                    }
                    prev = Some(p);
                }
                None => prev = None,
            }
        }
    }
    write_png_rgb8(path, style.width, style.height, &c.rgb)
}
