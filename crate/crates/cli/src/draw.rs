//! Overlay rendering: detection boxes with scores, ground-truth centroids and
//! their scoring circles. Pure pixel operations, so output is deterministic.

use image::{Rgb, RgbImage};
use mitosis_core::detector::Detection;

pub const BOX_COLOR: Rgb<u8> = Rgb([255, 215, 0]);
pub const GT_COLOR: Rgb<u8> = Rgb([0, 200, 80]);
pub const TEXT_COLOR: Rgb<u8> = Rgb([255, 255, 255]);
const TEXT_BG: Rgb<u8> = Rgb([0, 0, 0]);

/// 3x5 glyphs, one row per `u8` (low 3 bits, MSB = left column).
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        _ => return None,
    })
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Rectangle outline with edges on the rounded box corners.
pub fn draw_rect(img: &mut RgbImage, x1: f64, y1: f64, x2: f64, y2: f64, thickness: i64, c: Rgb<u8>) {
    let (x1, y1, x2, y2) = (x1.round() as i64, y1.round() as i64, x2.round() as i64, y2.round() as i64);
    for t in 0..thickness {
        for x in x1..=x2 {
            put(img, x, y1 + t, c);
            put(img, x, y2 - t, c);
        }
        for y in y1..=y2 {
            put(img, x1 + t, y, c);
            put(img, x2 - t, y, c);
        }
    }
}

/// Circle outline: pixels whose center lies within half a pixel of radius `r`.
pub fn draw_circle(img: &mut RgbImage, cx: f64, cy: f64, r: f64, c: Rgb<u8>) {
    let (x0, x1) = ((cx - r - 1.0).floor() as i64, (cx + r + 1.0).ceil() as i64);
    let (y0, y1) = ((cy - r - 1.0).floor() as i64, (cy + r + 1.0).ceil() as i64);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            if (d - r).abs() <= 0.5 {
                put(img, x, y, c);
            }
        }
    }
}

pub fn draw_cross(img: &mut RgbImage, cx: f64, cy: f64, half: i64, c: Rgb<u8>) {
    let (cx, cy) = (cx.round() as i64, cy.round() as i64);
    for d in -half..=half {
        put(img, cx + d, cy, c);
        put(img, cx, cy + d, c);
    }
}

/// Digits and `.` at `scale` pixels per glyph cell, on a dark backing box.
pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, scale: i64, c: Rgb<u8>) {
    let glyphs: Vec<[u8; 5]> = text.chars().filter_map(glyph).collect();
    let w = glyphs.len() as i64 * 4 * scale + scale;
    for yy in y - scale..y + 6 * scale {
        for xx in x - scale..x - scale + w {
            put(img, xx, yy, TEXT_BG);
        }
    }
    for (i, g) in glyphs.iter().enumerate() {
        let gx = x + i as i64 * 4 * scale;
        for (row, bits) in g.iter().enumerate() {
            for col in 0..3 {
                if bits & (0b100 >> col) != 0 {
                    for sy in 0..scale {
                        for sx in 0..scale {
                            put(img, gx + col * scale + sx, y + row as i64 * scale + sy, c);
                        }
                    }
                }
            }
        }
    }
}

/// Counts of drawn primitives, reported alongside the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OverlayStats {
    pub rectangles: usize,
    pub circles: usize,
}

/// Draws detections (boxes and scores) and, when given, ground-truth
/// centroids with circles of `radius` onto a copy of `frame`.
pub fn render_overlay(
    frame: &RgbImage,
    detections: &[Detection],
    ground_truth: Option<&[(f64, f64)]>,
    radius: f64,
) -> (RgbImage, OverlayStats) {
    let mut img = frame.clone();
    let mut stats = OverlayStats::default();
    let scale = (frame.width().max(frame.height()) as i64 / 700).max(1);
    if let Some(gts) = ground_truth {
        for &(x, y) in gts {
            draw_circle(&mut img, x, y, radius, GT_COLOR);
            draw_cross(&mut img, x, y, 2 * scale, GT_COLOR);
            stats.circles += 1;
        }
    }
    for d in detections {
        let b = d.bbox;
        draw_rect(&mut img, b.x1, b.y1, b.x2, b.y2, scale, BOX_COLOR);
        stats.rectangles += 1;
        let ty = (b.y1.round() as i64 - 7 * scale).max(scale);
        draw_text(&mut img, b.x1.round() as i64 + scale, ty, &format!("{:.2}", d.score), scale, TEXT_COLOR);
    }
    (img, stats)
}
