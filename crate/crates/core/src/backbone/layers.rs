use crate::error::Result;
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::{Conv2dOptions, Element, Graph, Tensor, Var};

/// How a declared parameter is filled at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`; keeps activation variance through relu.
    HeUniform { fan_in: usize },
    /// Uniform in `±1/sqrt(fan_in)`.
    FanInUniform { fan_in: usize },
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamDecl {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn materialize<T: Element>(&self, rng: &mut Rng) -> Tensor<T> {
        let n = self.numel();
        let bound = match self.init {
            Init::HeUniform { fan_in } => (6.0 / fan_in as f64).sqrt(),
            Init::FanInUniform { fan_in } => 1.0 / (fan_in as f64).sqrt(),
            Init::Zeros => return Tensor::zeros(self.shape.clone()),
        };
        let data = (0..n).map(|_| T::from_f64(rng.uniform(-bound, bound))).collect();
        Tensor::new(self.shape.clone(), data).expect("declared shape")
    }
}

/// Builds every declared parameter, in declaration order, from one stream.
pub fn materialize_all<T: Element>(decls: &[ParamDecl], rng: &mut Rng) -> Result<ParamStore<T>> {
    let mut store = ParamStore::new();
    for d in decls {
        store.insert(d.name.clone(), d.materialize(rng))?;
    }
    Ok(store)
}

/// Convolution with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvUnit {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub opts: Conv2dOptions,
}

impl ConvUnit {
    pub fn new(name: String, in_channels: usize, out_channels: usize, kernel: usize, opts: Conv2dOptions) -> Self {
        Self {
            name,
            in_channels,
            out_channels,
            kernel,
            opts,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn declare(&self, out: &mut Vec<ParamDecl>) {
        let per_group = self.in_channels / self.opts.groups;
        out.push(ParamDecl {
            name: self.weight_name(),
            shape: vec![self.out_channels, per_group, self.kernel, self.kernel],
            init: Init::HeUniform {
                fan_in: per_group * self.kernel * self.kernel,
            },
        });
        out.push(ParamDecl {
            name: self.bias_name(),
            shape: vec![self.out_channels],
            init: Init::Zeros,
        });
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = store.bind(g, &self.weight_name())?;
        let b = store.bind(g, &self.bias_name())?;
        g.conv2d(x, w, Some(b), self.opts)
    }
}

/// Fully connected layer `x·W + b` with `W: in×out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearUnit {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
}

impl LinearUnit {
    pub fn new(name: String, in_features: usize, out_features: usize) -> Self {
        Self {
            name,
            in_features,
            out_features,
        }
    }

    pub fn declare(&self, out: &mut Vec<ParamDecl>) {
        let init = Init::FanInUniform {
            fan_in: self.in_features,
        };
        out.push(ParamDecl {
            name: format!("{}.weight", self.name),
            shape: vec![self.in_features, self.out_features],
            init,
        });
        out.push(ParamDecl {
            name: format!("{}.bias", self.name),
            shape: vec![self.out_features],
            init,
        });
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = store.bind(g, &format!("{}.weight", self.name))?;
        let b = store.bind(g, &format!("{}.bias", self.name))?;
        g.linear(x, w, b)
    }
}
