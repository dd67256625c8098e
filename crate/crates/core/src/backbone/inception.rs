use serde::{Deserialize, Serialize};

use super::layers::{ConvUnit, ParamDecl};
use crate::error::{bail, Result};
use crate::params::ParamStore;
use crate::tensor::{Conv2dOptions, Element, Graph, Var};

/// Output widths of the four parallel branches. A zero width drops the branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchWidths {
    /// 1x1.
    pub single: usize,
    /// (reduce, out) for 1x1 then 3x3.
    pub double: (usize, usize),
    /// (reduce, out) for 1x1 then two stacked 3x3.
    pub triple: (usize, usize),
    /// 1x1 after a stride-1 3x3 max pool.
    pub pool: usize,
}

impl BranchWidths {
    /// Splits `out` into quarters, with the pool branch taking the remainder.
    /// Reduction width is a quarter of the input width.
    pub fn for_channels(in_channels: usize, out: usize) -> Self {
        let q = out / 4;
        let r = (in_channels / 4).max(1);
        Self {
            single: q,
            double: (r, q),
            triple: (r, q),
            pool: out - 3 * q,
        }
    }

    pub fn total(&self) -> usize {
        self.single + self.double.1 + self.triple.1 + self.pool
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InceptionModule {
    pub in_channels: usize,
    pub widths: BranchWidths,
    single: Option<ConvUnit>,
    double: Option<[ConvUnit; 2]>,
    triple: Option<[ConvUnit; 3]>,
    pool: Option<ConvUnit>,
}

fn pointwise(name: String, cin: usize, cout: usize) -> ConvUnit {
    ConvUnit::new(name, cin, cout, 1, Conv2dOptions::default())
}

fn same3x3(name: String, cin: usize, cout: usize) -> ConvUnit {
    ConvUnit::new(name, cin, cout, 3, Conv2dOptions::new(1, 1, 1))
}

impl InceptionModule {
    pub fn new(name: &str, in_channels: usize, widths: BranchWidths) -> Result<Self> {
        if in_channels == 0 {
            bail!(Config, "{name}: input channels must be positive");
        }
        if widths.total() == 0 {
            bail!(Config, "{name}: every branch has zero width");
        }
        for (label, (reduce, out)) in [("double", widths.double), ("triple", widths.triple)] {
            if out == 0 {
                continue;
            }
            if reduce == 0 || reduce >= in_channels {
                bail!(
                    Config,
                    "{name}: {label} branch reduction {reduce} must lie in [1, {in_channels})"
                );
            }
        }
        let single = (widths.single > 0).then(|| pointwise(format!("{name}.b1"), in_channels, widths.single));
        let double = (widths.double.1 > 0).then(|| {
            let (r, o) = widths.double;
            [
                pointwise(format!("{name}.b2.reduce"), in_channels, r),
                same3x3(format!("{name}.b2.conv"), r, o),
            ]
        });
        let triple = (widths.triple.1 > 0).then(|| {
            let (r, o) = widths.triple;
            [
                pointwise(format!("{name}.b3.reduce"), in_channels, r),
                same3x3(format!("{name}.b3.conv1"), r, o),
                same3x3(format!("{name}.b3.conv2"), o, o),
            ]
        });
        let pool = (widths.pool > 0).then(|| pointwise(format!("{name}.b4.proj"), in_channels, widths.pool));
        Ok(Self {
            in_channels,
            widths,
            single,
            double,
            triple,
            pool,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.widths.total()
    }

    fn units(&self) -> impl Iterator<Item = &ConvUnit> {
        self.single
            .iter()
            .chain(self.double.iter().flatten())
            .chain(self.triple.iter().flatten())
            .chain(self.pool.iter())
    }

    pub fn declare(&self, out: &mut Vec<ParamDecl>) {
        for u in self.units() {
            u.declare(out);
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let c = g.shape(x).get(1).copied().unwrap_or(0);
        if c != self.in_channels {
            bail!(Config, "inception module expects {} channels, got {}", self.in_channels, c);
        }
        let chain = |g: &mut Graph<T>, units: &[ConvUnit], mut h: Var| -> Result<Var> {
            for u in units {
                h = u.forward(g, store, h)?;
                h = g.relu(h);
            }
            Ok(h)
        };
        let mut outputs = Vec::with_capacity(4);
        if let Some(u) = &self.single {
            outputs.push(chain(g, std::slice::from_ref(u), x)?);
        }
        if let Some(us) = &self.double {
            outputs.push(chain(g, us, x)?);
        }
        if let Some(us) = &self.triple {
            outputs.push(chain(g, us, x)?);
        }
        if let Some(u) = &self.pool {
            let p = g.max_pool2d(x, 3, 1, 1)?;
            outputs.push(chain(g, std::slice::from_ref(u), p)?);
        }
        if outputs.len() == 1 {
            return Ok(outputs[0]);
        }
        g.concat(&outputs, 1)
    }
}
