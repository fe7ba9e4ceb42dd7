//! Overlay of color-coded dots at retained patch centers on a downscaled
//! slide, with a legend strip underneath.

use std::collections::BTreeMap;

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{HistologicPattern, PatchPrediction};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VisualizerError {
    #[error("prediction at ({x}, {y}) side {side} lies outside the {width}x{height} slide")]
    OutOfBounds {
        x: u32,
        y: u32,
        side: u32,
        width: u32,
        height: u32,
    },
    #[error("scale must lie in (0, 1], got {0}")]
    BadScale(f64),
    #[error("invalid palette: {0}")]
    InvalidPalette(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Palette {
    /// RGBA per class; alpha scales the dot opacity.
    pub colors: BTreeMap<HistologicPattern, [u8; 4]>,
    /// Dot radius as a fraction of the patch side at render scale.
    pub dot_radius_fraction: f64,
    pub draw_benign: bool,
}

impl Default for Palette {
    fn default() -> Self {
        use HistologicPattern::*;
        // Okabe-Ito hues
        let colors = [
            (Lepidic, [0, 158, 115, 255]),
            (Acinar, [0, 114, 178, 255]),
            (Papillary, [230, 159, 0, 255]),
            (Micropapillary, [213, 94, 0, 255]),
            (Solid, [204, 121, 167, 255]),
            (Benign, [153, 153, 153, 255]),
        ];
        Palette {
            colors: colors.into_iter().collect(),
            dot_radius_fraction: 0.3,
            draw_benign: false,
        }
    }
}

impl Palette {
    pub fn color(&self, pattern: HistologicPattern) -> [u8; 4] {
        self.colors[&pattern]
    }

    pub fn validate(&self) -> Result<(), VisualizerError> {
        if let Some(missing) = HistologicPattern::ALL.iter().find(|p| !self.colors.contains_key(p)) {
            return Err(VisualizerError::InvalidPalette(format!("no color for {missing}")));
        }
        let cancerous: Vec<[u8; 4]> = HistologicPattern::CANCEROUS.iter().map(|&p| self.color(p)).collect();
        for (i, a) in cancerous.iter().enumerate() {
            if cancerous[i + 1..].iter().any(|b| b[..3] == a[..3]) {
                return Err(VisualizerError::InvalidPalette(
                    "cancerous class colors must be distinct".into(),
                ));
            }
        }
        if !(self.dot_radius_fraction.is_finite() && self.dot_radius_fraction > 0.0 && self.dot_radius_fraction <= 0.5)
        {
            return Err(VisualizerError::InvalidPalette(
                "dot_radius_fraction must lie in (0, 0.5]".into(),
            ));
        }
        Ok(())
    }
}

/// One drawn dot, in output-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dot {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub class: HistologicPattern,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub image: RgbImage,
    /// Height of the slide area; the legend starts below it.
    pub slide_height: u32,
    pub dots: Vec<Dot>,
}

const LEGEND_ROW: u32 = 12;
const LEGEND_PAD: u32 = 4;
const SWATCH: u32 = 9;
const GLYPH_W: u32 = 5;

/// Renders the overlay. Pure: equal inputs give byte-identical images.
pub fn render_overlay(
    slide: &RgbImage,
    retained: &[PatchPrediction],
    palette: &Palette,
    scale: f64,
) -> Result<Overlay, VisualizerError> {
    if !(scale.is_finite() && scale > 0.0 && scale <= 1.0) {
        return Err(VisualizerError::BadScale(scale));
    }
    palette.validate()?;
    let (width, height) = slide.dimensions();
    for p in retained {
        let g = p.geometry();
        if !g.fits_within(width, height) {
            return Err(VisualizerError::OutOfBounds {
                x: g.x,
                y: g.y,
                side: g.side,
                width,
                height,
            });
        }
    }

    let sw = ((f64::from(width) * scale).round() as u32).max(1);
    let sh = ((f64::from(height) * scale).round() as u32).max(1);
    let scaled = if (sw, sh) == (width, height) {
        slide.clone()
    } else {
        imageops::resize(slide, sw, sh, FilterType::Triangle)
    };

    let legend: Vec<HistologicPattern> = HistologicPattern::ALL
        .into_iter()
        .filter(|p| p.is_cancerous() || palette.draw_benign)
        .collect();
    let legend_w = legend
        .iter()
        .map(|p| LEGEND_PAD + SWATCH + LEGEND_PAD + (GLYPH_W + 1) * p.name().len() as u32 + LEGEND_PAD)
        .max()
        .unwrap_or(0);
    let legend_h = LEGEND_PAD + LEGEND_ROW * legend.len() as u32;
    let mut canvas = RgbImage::from_pixel(sw.max(legend_w), sh + legend_h, Rgb([255, 255, 255]));
    imageops::replace(&mut canvas, &scaled, 0, 0);

    let mut dots = Vec::new();
    for p in retained {
        let class = p.top_class();
        if !class.is_cancerous() && !palette.draw_benign {
            continue;
        }
        let (cx, cy) = p.geometry().center();
        let dot = Dot {
            x: cx * scale,
            y: cy * scale,
            radius: palette.dot_radius_fraction * f64::from(p.geometry().side) * scale,
            class,
        };
        fill_disc(&mut canvas, sh, &dot, palette.color(class));
        dots.push(dot);
    }

    for (row, &class) in legend.iter().enumerate() {
        let top = sh + LEGEND_PAD + LEGEND_ROW * row as u32;
        let [r, g, b, _] = palette.color(class);
        for y in top..top + SWATCH {
            for x in LEGEND_PAD..LEGEND_PAD + SWATCH {
                canvas.put_pixel(x, y, Rgb([r, g, b]));
            }
        }
        draw_text(&mut canvas, LEGEND_PAD * 2 + SWATCH, top + 1, class.name());
    }

    Ok(Overlay {
        image: canvas,
        slide_height: sh,
        dots,
    })
}

/// Filled disc with one-pixel edge antialiasing, clipped to the slide area.
fn fill_disc(canvas: &mut RgbImage, limit_y: u32, dot: &Dot, rgba: [u8; 4]) {
    let r = dot.radius.max(0.5);
    let x0 = (dot.x - r - 1.0).floor().max(0.0) as u32;
    let y0 = (dot.y - r - 1.0).floor().max(0.0) as u32;
    let x1 = ((dot.x + r + 1.0).ceil() as u32).min(canvas.width());
    let y1 = ((dot.y + r + 1.0).ceil() as u32).min(limit_y);
    let alpha = f64::from(rgba[3]) / 255.0;
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = f64::from(x) + 0.5 - dot.x;
            let dy = f64::from(y) + 0.5 - dot.y;
            let coverage = (r + 0.5 - (dx * dx + dy * dy).sqrt()).clamp(0.0, 1.0) * alpha;
            if coverage <= 0.0 {
                continue;
            }
            let px = canvas.get_pixel_mut(x, y);
            for k in 0..3 {
                let blended = f64::from(px.0[k]) * (1.0 - coverage) + f64::from(rgba[k]) * coverage;
                px.0[k] = blended.round() as u8;
            }
        }
    }
}

fn draw_text(canvas: &mut RgbImage, left: u32, top: u32, text: &str) {
    for (i, ch) in text.chars().enumerate() {
        let Some(rows) = glyph(ch) else { continue };
        let gx = left + i as u32 * (GLYPH_W + 1);
        for (dy, row) in rows.iter().enumerate() {
            for (dx, cell) in row.bytes().enumerate() {
                let (x, y) = (gx + dx as u32, top + dy as u32);
                if cell == b'#' && x < canvas.width() && y < canvas.height() {
                    canvas.put_pixel(x, y, Rgb([0, 0, 0]));
                }
            }
        }
    }
}

/// 5x7 glyphs for the letters in the class names.
fn glyph(ch: char) -> Option<[&'static str; 7]> {
    Some(match ch {
        'a' => [".....", ".....", ".###.", "....#", ".####", "#...#", ".####"],
        'b' => ["#....", "#....", "####.", "#...#", "#...#", "#...#", "####."],
        'c' => [".....", ".....", ".###.", "#....", "#....", "#...#", ".###."],
        'd' => ["....#", "....#", ".####", "#...#", "#...#", "#...#", ".####"],
        'e' => [".....", ".....", ".###.", "#...#", "#####", "#....", ".###."],
        'g' => [".....", ".####", "#...#", "#...#", ".####", "....#", ".###."],
        'i' => ["..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."],
        'l' => [".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."],
        'm' => [".....", ".....", "##.#.", "#.#.#", "#.#.#", "#.#.#", "#.#.#"],
        'n' => [".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#"],
        'o' => [".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."],
        'p' => [".....", "####.", "#...#", "#...#", "####.", "#....", "#...."],
        'r' => [".....", ".....", "#.##.", "##..#", "#....", "#....", "#...."],
        's' => [".....", ".....", ".####", "#....", ".###.", "....#", "####."],
        'y' => [".....", "#...#", "#...#", "#...#", ".####", "....#", ".###."],
        _ => return None,
    })
}
