//! Anti-aliased glyph rasterization.
//!
//! Each "on" cell of the 5x7 bitmap becomes a rounded rectangle in glyph
//! space; the union's signed distance is sampled with 2x2 supersampling.
//! Rendering is a pure function of its arguments.

use crate::data::font::SynthFont;
use crate::data::glyphs::{self, GLYPH_COLS, GLYPH_ROWS};
use crate::data::ppm::Image;
use crate::error::{Error, Result};

/// Canonical ink level: glyph pixels approach this, background stays 1.
pub const CANONICAL_INK: f64 = 0.08;

struct Rect {
    cx: f64,
    cy: f64,
    hx: f64,
    hy: f64,
    round: f64,
}

impl Rect {
    fn distance(&self, x: f64, y: f64) -> f64 {
        let dx = (x - self.cx).abs() - (self.hx - self.round);
        let dy = (y - self.cy).abs() - (self.hy - self.round);
        let ox = dx.max(0.0);
        let oy = dy.max(0.0);
        (ox * ox + oy * oy).sqrt() + dx.max(dy).min(0.0) - self.round
    }
}

fn glyph_rects(class: usize, font: &SynthFont) -> Option<Vec<Rect>> {
    let bm = glyphs::bitmap(class)?;
    let h = 0.5 * font.stroke;
    let round = font.rounding * font.stroke;
    let mut rects = Vec::new();
    for (r, row) in bm.iter().enumerate() {
        for (c, &on) in row.iter().enumerate() {
            if !on {
                continue;
            }
            let (cx, cy) = (c as f64 + 0.5, r as f64 + 0.5);
            // stretch toward on-neighbors so strokes stay connected at
            // sub-unit stroke widths
            let right = c + 1 < GLYPH_COLS && row[c + 1];
            let left = c > 0 && row[c - 1];
            let down = r + 1 < GLYPH_ROWS && bm[r + 1][c];
            let up = r > 0 && bm[r - 1][c];
            let hx = h + if left || right { 0.5 - h } else { 0.0 } * 0.5;
            let hy = h + if up || down { 0.5 - h } else { 0.0 } * 0.5;
            rects.push(Rect { cx, cy, hx: hx.max(h), hy: hy.max(h), round });
            // serifs cap the free stroke ends
            if font.serif {
                if !up {
                    rects.push(Rect { cx, cy: cy - h + 0.06, hx: h * 1.55, hy: 0.09, round: 0.0 });
                }
                if !down {
                    rects.push(Rect { cx, cy: cy + h - 0.06, hx: h * 1.55, hy: 0.09, round: 0.0 });
                }
            }
        }
    }
    Some(rects)
}

/// Per-pixel ink coverage in [0, 1] on a `size`x`size` canvas, with the
/// glyph rotated by `rot_deg` and shifted by (`tx`, `ty`) pixels.
pub fn render_coverage(
    class: usize,
    font: &SynthFont,
    size: usize,
    rot_deg: f64,
    tx: f64,
    ty: f64,
) -> Result<Vec<f64>> {
    let rects = glyph_rects(class, font)
        .ok_or_else(|| Error::Data(format!("unknown glyph class {class}")))?;
    // glyph box: GLYPH_ROWS tall, mapped into scale * size pixels
    let cell_px = font.scale * size as f64 / GLYPH_ROWS as f64;
    let (gw, gh) = (GLYPH_COLS as f64, GLYPH_ROWS as f64);
    let center = size as f64 / 2.0;
    let (sinr, cosr) = (rot_deg.to_radians().sin(), rot_deg.to_radians().cos());
    let aa = 0.75 / cell_px; // anti-alias band in cell units
    let mut cov = vec![0.0; size * size];
    const SUB: [f64; 2] = [0.25, 0.75];
    for py in 0..size {
        for px in 0..size {
            let mut acc = 0.0;
            for sy in SUB {
                for sx in SUB {
                    // canvas -> centered -> un-translate -> un-rotate
                    let x0 = px as f64 + sx - center - tx;
                    let y0 = py as f64 + sy - center - ty;
                    let xr = cosr * x0 + sinr * y0;
                    let yr = -sinr * x0 + cosr * y0;
                    // -> glyph grid coordinates, then un-shear
                    let mut gx = xr / cell_px + gw / 2.0;
                    let gy = yr / cell_px + gh / 2.0;
                    gx += font.shear * (gy - gh / 2.0);
                    let mut d = f64::INFINITY;
                    for rect in &rects {
                        d = d.min(rect.distance(gx, gy));
                        if d < -aa {
                            break;
                        }
                    }
                    acc += (0.5 - d / (2.0 * aa)).clamp(0.0, 1.0);
                }
            }
            cov[py * size + px] = acc / 4.0;
        }
    }
    Ok(cov)
}

/// Compose a gray value from coverage: background where cov=0, ink where
/// cov=1. Shared by canonical and scene rendering so an identity scene
/// reproduces the canonical image bit-for-bit.
pub fn compose(bg: f64, ink: f64, cov: f64) -> f64 {
    bg * (1.0 - cov) + ink * cov
}

/// Canonical target: dark glyph on a white background, centered, upright.
pub fn render_canonical(class: usize, font: &SynthFont, size: usize) -> Result<Image> {
    let cov = render_coverage(class, font, size, 0.0, 0.0, 0.0)?;
    let mut planes = vec![0.0; 3 * size * size];
    for (i, &c) in cov.iter().enumerate() {
        let v = compose(1.0, CANONICAL_INK, c);
        planes[i] = v;
        planes[size * size + i] = v;
        planes[2 * size * size + i] = v;
    }
    Image::from_planes(size, size, &planes)
}
