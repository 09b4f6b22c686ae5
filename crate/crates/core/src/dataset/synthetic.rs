use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HpfFrame, MitosisAnnotation, Scanner};
use crate::error::{Error, Result};

/// Parameters of the synthetic H&E-like frame generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub frames: usize,
    pub blobs_per_frame: usize,
    pub width: u32,
    pub height: u32,
    /// Blobs are kept away from the borders of this tiling grid's windows.
    pub grid: u32,
    pub blob_radius_min: f64,
    pub blob_radius_max: f64,
    /// Lighter, larger "interphase nuclei" that are not mitoses.
    pub distractors_per_frame: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            frames: 8,
            blobs_per_frame: 3,
            width: 256,
            height: 256,
            grid: 4,
            blob_radius_min: 5.0,
            blob_radius_max: 7.0,
            distractors_per_frame: 12,
            seed: 0,
        }
    }
}

const BACKGROUND: [f64; 3] = [232.0, 188.0, 212.0];
const NUCLEUS: [f64; 3] = [176.0, 128.0, 196.0];
const MITOSIS: [f64; 3] = [64.0, 30.0, 92.0];

/// Frame ids alternate Aperio/Hamamatsu (`A01_00`, `H01_01`, ...), four frames per group number.
pub fn synthetic_frame_id(index: usize) -> String {
    let letter = if index % 2 == 0 { 'A' } else { 'H' };
    format!("{letter}{:02}_{index:02}", 1 + index / 4)
}

/// Deterministic frames with a textured background, light distractor nuclei
/// and dark irregular "mitosis" blobs whose centers are the annotations.
pub fn generate_synthetic_dataset(config: &SyntheticConfig) -> Result<Vec<HpfFrame>> {
    if config.grid == 0 || config.width < config.grid || config.height < config.grid {
        return Err(Error::InvalidConfig("synthetic frame smaller than its grid".into()));
    }
    if !(0.0 < config.blob_radius_min && config.blob_radius_min <= config.blob_radius_max) {
        return Err(Error::InvalidConfig("synthetic blob radii must satisfy 0 < min <= max".into()));
    }
    (0..config.frames).map(|i| generate_frame(config, i)).collect()
}

fn generate_frame(config: &SyntheticConfig, index: usize) -> Result<HpfFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64 + 1);
    let (w, h) = (config.width, config.height);
    let (tw, th) = (w / config.grid, h / config.grid);
    let margin = config.blob_radius_max.ceil() as u32 + 3;
    if tw <= 2 * margin || th <= 2 * margin {
        return Err(Error::InvalidConfig(format!(
            "tile windows {tw}x{th} too small for blobs of radius {}",
            config.blob_radius_max
        )));
    }

    // smooth stain variation
    let (fx, fy, phase): (f64, f64, f64) = (
        rng.random_range(0.01..0.04),
        rng.random_range(0.01..0.04),
        rng.random_range(0.0..std::f64::consts::TAU),
    );
    let mut canvas: Vec<[f64; 3]> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            let shade = 8.0 * ((x as f64 * fx + phase).sin() + (y as f64 * fy).cos());
            let mut px = BACKGROUND;
            for (c, v) in px.iter_mut().enumerate() {
                *v += shade * if c == 1 { 1.2 } else { 0.8 };
            }
            px
        })
        .collect();

    let mut centers: Vec<(u32, u32)> = Vec::new();
    let min_sep = 4.0 * config.blob_radius_max;
    let mut tries = 0;
    while centers.len() < config.blobs_per_frame {
        tries += 1;
        if tries > 10_000 {
            return Err(Error::InvalidConfig("cannot place synthetic blobs; frame too crowded".into()));
        }
        let col = rng.random_range(0..config.grid);
        let row = rng.random_range(0..config.grid);
        let x = col * tw + rng.random_range(margin..tw - margin);
        let y = row * th + rng.random_range(margin..th - margin);
        if centers.iter().all(|&(cx, cy)| dist((x, y), (cx, cy)) >= min_sep) {
            centers.push((x, y));
        }
    }

    let mut placed = 0;
    let mut tries = 0;
    while placed < config.distractors_per_frame && tries < 10_000 {
        tries += 1;
        let x = rng.random_range(0..w);
        let y = rng.random_range(0..h);
        if centers.iter().any(|&c| dist((x, y), c) < 3.0 * config.blob_radius_max + 6.0) {
            continue;
        }
        let r = rng.random_range(1.2 * config.blob_radius_min..1.6 * config.blob_radius_max);
        paint_blob(&mut canvas, w, h, (x as f64, y as f64), r, NUCLEUS, 0.05, &mut rng);
        placed += 1;
    }
    for &(x, y) in &centers {
        let r = rng.random_range(config.blob_radius_min..=config.blob_radius_max);
        paint_blob(&mut canvas, w, h, (x as f64, y as f64), r, MITOSIS, 0.25, &mut rng);
    }

    let image = RgbImage::from_fn(w, h, |x, y| {
        let p = canvas[(y * w + x) as usize];
        let mut out = [0u8; 3];
        for c in 0..3 {
            let noise: f64 = rng.random_range(-9.0..9.0);
            out[c] = (p[c] + noise).round().clamp(0.0, 255.0) as u8;
        }
        Rgb(out)
    });
    let frame_id = synthetic_frame_id(index);
    let scanner = Scanner::from_frame_id(&frame_id).expect("A/H prefix");
    let annotations = centers.iter().map(|&(x, y)| MitosisAnnotation::new(x, y)).collect();
    HpfFrame::new(frame_id, scanner, image, annotations)
}

fn dist(a: (u32, u32), b: (u32, u32)) -> f64 {
    let dx = a.0 as f64 - b.0 as f64;
    let dy = a.1 as f64 - b.1 as f64;
    (dx * dx + dy * dy).sqrt()
}

/// Paints an irregular ellipse with a soft rim; `jag` sets boundary roughness.
#[allow(clippy::too_many_arguments)]
fn paint_blob(
    canvas: &mut [[f64; 3]],
    w: u32,
    h: u32,
    (cx, cy): (f64, f64),
    radius: f64,
    color: [f64; 3],
    jag: f64,
    rng: &mut ChaCha8Rng,
) {
    let aspect: f64 = rng.random_range(0.7..1.0);
    let tilt: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let lobes = rng.random_range(2..6) as f64;
    let lobe_phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let reach = radius * (1.0 + jag) + 2.0;
    let x0 = (cx - reach).floor().max(0.0) as u32;
    let x1 = ((cx + reach).ceil() as u32).min(w - 1);
    let y0 = (cy - reach).floor().max(0.0) as u32;
    let y1 = ((cy + reach).ceil() as u32).min(h - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let u = dx * tilt.cos() + dy * tilt.sin();
            let v = (-dx * tilt.sin() + dy * tilt.cos()) / aspect;
            let theta = v.atan2(u);
            let edge = radius * (1.0 + jag * (lobes * theta + lobe_phase).sin());
            let d = (u * u + v * v).sqrt();
            let alpha = (edge + 1.0 - d).clamp(0.0, 1.0);
            if alpha > 0.0 {
                let px = &mut canvas[(y * w + x) as usize];
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - alpha) + color[c] * alpha;
                }
            }
        }
    }
}
