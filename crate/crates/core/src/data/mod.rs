//! Image manifests, datasets and splits.

mod pgm;
mod split;
pub mod synth;

use std::path::Path;

pub use pgm::{decode_pgm, encode_pgm, GrayImage};
pub use split::{split_indices, split_stratified, SplitPlan};

use crate::error::{bail, Error, Result};
use crate::tensor::{Element, Tensor};

/// Scales to `[0, 1]` by dividing by 255. With `standardize`, each image is
/// then shifted and scaled to zero mean and unit standard deviation (constant
/// images become all zeros).
pub fn normalize(img: &GrayImage, standardize: bool) -> Tensor<f64> {
    let mut v: Vec<f64> = img.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    if standardize {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for x in &mut v {
            *x -= mean;
            if sd > 0.0 {
                *x /= sd;
            }
        }
    }
    Tensor::new([1, img.height, img.width], v).expect("image dims")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `1 × H × W`.
    pub image: Tensor<f64>,
    /// 1 is the positive class.
    pub label: u8,
    pub source_path: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    /// Rejects mixed image sizes and non-binary labels.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if let Some(first) = samples.first() {
            for (i, s) in samples.iter().enumerate() {
                if s.image.shape() != first.image.shape() {
                    bail!(
                        Data,
                        "sample {i} ({}) is {:?}, expected {:?}",
                        s.source_path,
                        s.image.shape(),
                        first.image.shape()
                    );
                }
                if s.label > 1 {
                    bail!(Data, "sample {i} ({}) has label {}", s.source_path, s.label);
                }
            }
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// `(negatives, positives)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.samples.iter().filter(|s| s.label == 1).count();
        (self.len() - pos, pos)
    }

    /// `[H, W]` shared by every image.
    pub fn image_size(&self) -> Option<[usize; 2]> {
        self.samples.first().map(|s| [s.image.shape()[1], s.image.shape()[2]])
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            match self.samples.get(i) {
                Some(s) => out.push(s.clone()),
                None => bail!(Data, "index {i} outside a dataset of {}", self.len()),
            }
        }
        Ok(Self { samples: out })
    }

    /// Stacks the chosen samples into `B × 1 × H × W` plus their labels.
    pub fn batch<T: Element>(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let Some([h, w]) = self.image_size() else {
            bail!(Data, "cannot batch an empty dataset");
        };
        let mut data = Vec::with_capacity(indices.len() * h * w);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let Some(s) = self.samples.get(i) else {
                bail!(Data, "index {i} outside a dataset of {}", self.len());
            };
            data.extend(s.image.data().iter().map(|&v| T::from_f64(v)));
            labels.push(usize::from(s.label));
        }
        Ok((Tensor::new([indices.len(), 1, h, w], data)?, labels))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LoadOptions {
    pub standardize: bool,
}

/// Reads a `path,label` CSV; image paths are relative to the manifest's directory.
/// Errors name the 1-based data row they occurred on.
pub fn load_manifest(path: &Path, opts: LoadOptions) -> Result<Dataset> {
    let base = path.parent().unwrap_or(Path::new("."));
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => bail!(Data, "{}: unreadable header: {e}", path.display()),
    };
    if headers.iter().collect::<Vec<_>>() != ["path", "label"] {
        bail!(
            Data,
            "{}: header must be `path,label`, found `{}`",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        );
    }
    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => bail!(Data, "manifest row {row}: {e}"),
        };
        let rel = &record[0];
        let label = match &record[1] {
            "0" => 0,
            "1" => 1,
            other => bail!(Data, "manifest row {row}: label {other:?} is not 0 or 1"),
        };
        let file = base.join(rel);
        let bytes = match std::fs::read(&file) {
            Ok(b) => b,
            Err(e) => bail!(Data, "manifest row {row}: cannot read {}: {e}", file.display()),
        };
        let img = match decode_pgm(&bytes) {
            Ok(img) => img,
            Err(e) => bail!(Data, "manifest row {row}: {}: {e}", file.display()),
        };
        let image = normalize(&img, opts.standardize);
        if let Some(first) = samples.first().map(|s: &Sample| s.image.shape().to_vec()) {
            if image.shape() != first.as_slice() {
                bail!(
                    Data,
                    "manifest row {row}: {} is {}x{}, earlier rows are {}x{}",
                    rel,
                    img.width,
                    img.height,
                    first[2],
                    first[1]
                );
            }
        }
        samples.push(Sample {
            image,
            label,
            source_path: rel.to_string(),
        });
    }
    Dataset::new(samples)
}
