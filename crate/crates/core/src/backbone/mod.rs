//! Miniature convolutional feature extractors.
//!
//! Each backbone maps a `B×1×H×W` batch to `B×F` features: a strided 3x3 stem
//! conv with max pooling, a sequence of stages built from one block kind,
//! global average pooling and a fully connected projection to `F`.

mod inception;
mod layers;
mod residual;
mod shuffle;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use inception::{BranchWidths, InceptionModule};
pub use layers::{materialize_all, ConvUnit, Init, LinearUnit, ParamDecl};
pub use residual::ResidualBlock;
pub use shuffle::ShuffleUnit;

use crate::error::{bail, Result};
use crate::params::ParamStore;
use crate::tensor::conv::output_extent;
use crate::tensor::{Conv2dOptions, Element, Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Residual,
    Inception,
    Shuffle,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 3] = [BackboneKind::Residual, BackboneKind::Inception, BackboneKind::Shuffle];

    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::Residual => "residual",
            BackboneKind::Inception => "inception",
            BackboneKind::Shuffle => "shuffle",
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BackboneKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "residual" | "resnet" => Ok(BackboneKind::Residual),
            "inception" | "googlenet" => Ok(BackboneKind::Inception),
            "shuffle" | "shufflenet" => Ok(BackboneKind::Shuffle),
            other => bail!(Usage, "unknown backbone kind {other:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub blocks: usize,
    pub channels: usize,
}

impl Stage {
    pub fn new(blocks: usize, channels: usize) -> Self {
        Self { blocks, channels }
    }
}

fn default_feature_dim() -> usize {
    1000
}

fn default_groups() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    pub stem_channels: usize,
    pub stages: Vec<Stage>,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    /// Only consulted by the shuffle kind.
    #[serde(default = "default_groups")]
    pub groups: usize,
    /// `[H, W]`.
    pub input_size: [usize; 2],
}

impl BackboneSpec {
    /// Three stages of two blocks, 16-channel stem, 64×64 input, `F = 1000`.
    pub fn miniature(kind: BackboneKind) -> Self {
        Self {
            kind,
            stem_channels: 16,
            stages: vec![Stage::new(2, 16), Stage::new(2, 32), Stage::new(2, 64)],
            feature_dim: 1000,
            groups: 2,
            input_size: [64, 64],
        }
    }

    pub fn with_feature_dim(mut self, f: usize) -> Self {
        self.feature_dim = f;
        self
    }

    pub fn with_input_size(mut self, h: usize, w: usize) -> Self {
        self.input_size = [h, w];
        self
    }

    /// Multiplies every channel count by `k`.
    pub fn widened(mut self, k: usize) -> Self {
        self.stem_channels *= k;
        for s in &mut self.stages {
            s.channels *= k;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind;
        if self.feature_dim < 2 {
            bail!(Config, "{kind}: feature_dim must be at least 2, got {}", self.feature_dim);
        }
        if self.stem_channels == 0 {
            bail!(Config, "{kind}: stem_channels must be positive");
        }
        if self.stages.is_empty() {
            bail!(Config, "{kind}: at least one stage is required");
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.blocks == 0 || s.channels == 0 {
                bail!(Config, "{kind}: stage {i} needs positive block count and channels");
            }
        }
        if kind == BackboneKind::Shuffle {
            if self.groups == 0 {
                bail!(Config, "shuffle: groups must be positive");
            }
            for (i, s) in self.stages.iter().enumerate() {
                if s.channels % self.groups != 0 {
                    bail!(
                        Config,
                        "shuffle: stage {i} channels {} not divisible by {} groups",
                        s.channels,
                        self.groups
                    );
                }
            }
            if self.stem_channels != self.stages[0].channels {
                bail!(
                    Config,
                    "shuffle: stem channels {} must equal first stage channels {}",
                    self.stem_channels,
                    self.stages[0].channels
                );
            }
        }
        self.feature_map_size()?;
        Ok(())
    }

    /// Spatial size entering global pooling.
    pub fn feature_map_size(&self) -> Result<[usize; 2]> {
        let [h, w] = self.input_size;
        let mut dims = [h, w];
        let shrink = |what: &str, k: usize, s: usize, p: usize, dims: &mut [usize; 2]| -> Result<()> {
            for d in dims.iter_mut() {
                match output_extent(*d, k, s, p) {
                    Some(n) if n > 0 => *d = n,
                    _ => bail!(
                        Config,
                        "{}: input {}x{} collapses to nothing at the {what}",
                        self.kind,
                        h,
                        w
                    ),
                }
            }
            Ok(())
        };
        shrink("stem", 3, 2, 1, &mut dims)?;
        shrink("stem pool", 3, 2, 1, &mut dims)?;
        for _ in 1..self.stages.len() {
            shrink("stage downsampling", 3, 2, 1, &mut dims)?;
        }
        Ok(dims)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    Residual(ResidualBlock),
    Inception(InceptionModule),
    Shuffle(ShuffleUnit),
    /// Stride-2 3x3 max pool between inception stages.
    Downsample,
}

/// A validated backbone layout. Parameters live in a [`ParamStore`] under
/// paths prefixed by the kind name.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    spec: BackboneSpec,
    stem: ConvUnit,
    layers: Vec<Layer>,
    fc: LinearUnit,
}

impl Backbone {
    pub fn new(spec: BackboneSpec) -> Result<Self> {
        spec.validate()?;
        let p = spec.kind.name();
        let stem = ConvUnit::new(
            format!("{p}.stem.conv"),
            1,
            spec.stem_channels,
            3,
            Conv2dOptions::new(2, 1, 1),
        );
        let mut layers = Vec::new();
        let mut channels = spec.stem_channels;
        for (si, stage) in spec.stages.iter().enumerate() {
            if si > 0 && spec.kind == BackboneKind::Inception {
                layers.push(Layer::Downsample);
            }
            for bi in 0..stage.blocks {
                let name = format!("{p}.stage{si}.block{bi}");
                let stride = if si > 0 && bi == 0 { 2 } else { 1 };
                let layer = match spec.kind {
                    BackboneKind::Residual => {
                        Layer::Residual(ResidualBlock::new(&name, channels, stage.channels, stride)?)
                    }
                    BackboneKind::Inception => Layer::Inception(InceptionModule::new(
                        &name,
                        channels,
                        BranchWidths::for_channels(channels, stage.channels),
                    )?),
                    BackboneKind::Shuffle => {
                        Layer::Shuffle(ShuffleUnit::new(&name, channels, stage.channels, spec.groups, stride)?)
                    }
                };
                layers.push(layer);
                channels = stage.channels;
            }
        }
        let fc = LinearUnit::new(format!("{p}.fc"), channels, spec.feature_dim);
        Ok(Self { spec, stem, layers, fc })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn kind(&self) -> BackboneKind {
        self.spec.kind
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    /// Every parameter this backbone owns, in a fixed order.
    pub fn declare(&self) -> Vec<ParamDecl> {
        let mut out = Vec::new();
        self.stem.declare(&mut out);
        for layer in &self.layers {
            match layer {
                Layer::Residual(b) => b.declare(&mut out),
                Layer::Inception(m) => m.declare(&mut out),
                Layer::Shuffle(u) => u.declare(&mut out),
                Layer::Downsample => {}
            }
        }
        self.fc.declare(&mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.declare().iter().map(ParamDecl::numel).sum()
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, images: Var) -> Result<Var> {
        let shape = g.shape(images);
        let [h, w] = self.spec.input_size;
        if shape.len() != 4 || shape[1] != 1 || shape[2] != h || shape[3] != w {
            bail!(
                Shape,
                "{} backbone expects B×1×{}×{} images, got {:?}",
                self.spec.kind,
                h,
                w,
                shape
            );
        }
        let x = self.stem.forward(g, store, images)?;
        let x = g.relu(x);
        let mut x = g.max_pool2d(x, 3, 2, 1)?;
        for layer in &self.layers {
            x = match layer {
                Layer::Residual(b) => b.forward(g, store, x)?,
                Layer::Inception(m) => m.forward(g, store, x)?,
                Layer::Shuffle(u) => u.forward(g, store, x)?,
                Layer::Downsample => g.max_pool2d(x, 3, 2, 1)?,
            };
        }
        let pooled = g.global_avg_pool(x)?;
        let flat = g.flatten(pooled)?;
        self.fc.forward(g, store, flat)
    }
}

#[cfg(test)]
mod tests;
