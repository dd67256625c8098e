use super::layers::{ConvUnit, ParamDecl};
use crate::error::{bail, Result};
use crate::params::ParamStore;
use crate::tensor::{Conv2dOptions, Element, Graph, Var};

/// `relu(conv3x3(relu(conv3x3(x))) + shortcut(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    conv1: ConvUnit,
    conv2: ConvUnit,
    /// 1x1 strided projection; absent when the shortcut is the identity.
    projection: Option<ConvUnit>,
}

impl ResidualBlock {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, stride: usize) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || stride == 0 {
            bail!(Config, "{name}: channels and stride must be positive");
        }
        let conv1 = ConvUnit::new(
            format!("{name}.conv1"),
            in_channels,
            out_channels,
            3,
            Conv2dOptions::new(stride, 1, 1),
        );
        let conv2 = ConvUnit::new(
            format!("{name}.conv2"),
            out_channels,
            out_channels,
            3,
            Conv2dOptions::new(1, 1, 1),
        );
        let projection = (in_channels != out_channels || stride != 1).then(|| {
            ConvUnit::new(
                format!("{name}.shortcut"),
                in_channels,
                out_channels,
                1,
                Conv2dOptions::new(stride, 0, 1),
            )
        });
        Ok(Self {
            in_channels,
            out_channels,
            stride,
            conv1,
            conv2,
            projection,
        })
    }

    pub fn has_projection(&self) -> bool {
        self.projection.is_some()
    }

    pub fn declare(&self, out: &mut Vec<ParamDecl>) {
        self.conv1.declare(out);
        self.conv2.declare(out);
        if let Some(p) = &self.projection {
            p.declare(out);
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let c = g.shape(x).get(1).copied().unwrap_or(0);
        if c != self.in_channels {
            bail!(
                Config,
                "{}: expects {} input channels, got {}",
                self.conv1.name,
                self.in_channels,
                c
            );
        }
        let h = self.conv1.forward(g, store, x)?;
        let h = g.relu(h);
        let branch = self.conv2.forward(g, store, h)?;
        let shortcut = match &self.projection {
            Some(p) => p.forward(g, store, x)?,
            None => x,
        };
        if g.shape(branch) != g.shape(shortcut) {
            bail!(
                Config,
                "{}: branch {:?} and shortcut {:?} disagree",
                self.conv1.name,
                g.shape(branch),
                g.shape(shortcut)
            );
        }
        let sum = g.add(branch, shortcut)?;
        Ok(g.relu(sum))
    }
}
