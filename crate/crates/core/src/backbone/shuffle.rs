use super::layers::{ConvUnit, ParamDecl};
use crate::error::{bail, Result};
use crate::params::ParamStore;
use crate::tensor::{Conv2dOptions, Element, Graph, Var};

/// Grouped 1x1, channel shuffle, depthwise 3x3, grouped 1x1.
///
/// Stride 1 adds the input back; stride 2 concatenates an average-pooled
/// copy of the input, so the branch only produces `out - in` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ShuffleUnit {
    pub in_channels: usize,
    pub out_channels: usize,
    pub groups: usize,
    pub stride: usize,
    squeeze: ConvUnit,
    depthwise: ConvUnit,
    expand: ConvUnit,
}

fn round_up(x: usize, m: usize) -> usize {
    x.div_ceil(m) * m
}

impl ShuffleUnit {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, groups: usize, stride: usize) -> Result<Self> {
        if groups == 0 || in_channels == 0 || out_channels == 0 {
            bail!(Config, "{name}: groups and channels must be positive");
        }
        let branch_out = match stride {
            1 if in_channels == out_channels => out_channels,
            1 => bail!(
                Config,
                "{name}: stride-1 unit needs equal widths, got {in_channels} -> {out_channels}"
            ),
            2 if out_channels > in_channels => out_channels - in_channels,
            2 => bail!(
                Config,
                "{name}: stride-2 unit must widen, got {in_channels} -> {out_channels}"
            ),
            s => bail!(Config, "{name}: unsupported stride {s}"),
        };
        if !in_channels.is_multiple_of(groups) || !branch_out.is_multiple_of(groups) {
            bail!(
                Config,
                "{name}: channels {in_channels} and branch width {branch_out} must both divide by {groups} groups"
            );
        }
        let mid = round_up((branch_out / 4).max(1), groups);
        Ok(Self {
            in_channels,
            out_channels,
            groups,
            stride,
            squeeze: ConvUnit::new(
                format!("{name}.gconv1"),
                in_channels,
                mid,
                1,
                Conv2dOptions::new(1, 0, groups),
            ),
            depthwise: ConvUnit::new(format!("{name}.dwconv"), mid, mid, 3, Conv2dOptions::new(stride, 1, mid)),
            expand: ConvUnit::new(
                format!("{name}.gconv2"),
                mid,
                branch_out,
                1,
                Conv2dOptions::new(1, 0, groups),
            ),
        })
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.squeeze.out_channels
    }

    pub fn declare(&self, out: &mut Vec<ParamDecl>) {
        self.squeeze.declare(out);
        self.depthwise.declare(out);
        self.expand.declare(out);
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let c = g.shape(x).get(1).copied().unwrap_or(0);
        if c != self.in_channels {
            bail!(Config, "shuffle unit expects {} channels, got {}", self.in_channels, c);
        }
        let h = self.squeeze.forward(g, store, x)?;
        let h = g.relu(h);
        let h = g.channel_shuffle(h, self.groups)?;
        let h = self.depthwise.forward(g, store, h)?;
        let branch = self.expand.forward(g, store, h)?;
        let joined = if self.stride == 1 {
            g.add(x, branch)?
        } else {
            let shortcut = g.avg_pool2d(x, 3, 2, 1)?;
            g.concat(&[shortcut, branch], 1)?
        };
        Ok(g.relu(joined))
    }
}
