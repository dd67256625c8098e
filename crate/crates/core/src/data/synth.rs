//! Seeded two-class blob textures for end-to-end runs without real scans.
//!
//! Class 0 images hold a few broad bright blobs; class 1 images hold many
//! small ones. Both share the same noise floor and similar mean brightness,
//! so the classes differ in texture scale rather than intensity alone.

use std::path::{Path, PathBuf};

use super::pgm::{encode_pgm, GrayImage};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            count: 600,
            size: 64,
            seed: 0,
        }
    }
}

/// Label of sample `i`: classes alternate so any prefix is balanced.
pub fn label_of(i: usize) -> u8 {
    (i % 2) as u8
}

/// Image `i` of the seeded family; independent of how many are generated.
pub fn render(i: usize, size: usize, seed: u64) -> (GrayImage, u8) {
    let label = label_of(i);
    let mut rng = Rng::stream(seed, i as u64);
    let s = size as f64;
    let (count, radius) = if label == 0 {
        (2 + rng.below(3) as usize, (0.12, 0.2))
    } else {
        (10 + rng.below(7) as usize, (0.03, 0.06))
    };
    let blobs: Vec<(f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            let sigma = s * rng.uniform(radius.0, radius.1);
            let amp = rng.uniform(0.35, 0.65);
            (rng.uniform(0.0, s), rng.uniform(0.0, s), sigma, amp)
        })
        .collect();
    let mut pixels = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut v = 0.15 + 0.04 * rng.normal();
            for &(cx, cy, sigma, amp) in &blobs {
                let d2 = (fx - cx).powi(2) + (fy - cy).powi(2);
                v += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
            pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    (GrayImage::new(size, size, pixels).expect("square image"), label)
}

/// Writes `count` PGM files plus `manifest.csv` into `dir`; returns the manifest path.
pub fn write_dataset(dir: &Path, opts: SynthOptions) -> Result<PathBuf> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut manifest = String::from("path,label\n");
    for i in 0..opts.count {
        let (img, label) = render(i, opts.size, opts.seed);
        let name = format!("img{i:05}.pgm");
        let path = images.join(&name);
        std::fs::write(&path, encode_pgm(&img)).map_err(|e| Error::io(&path, e))?;
        manifest.push_str(&format!("images/{name},{label}\n"));
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
