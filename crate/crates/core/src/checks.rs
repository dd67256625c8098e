//! Finite-difference checks over functions that also read named parameters.

use serde::Serialize;

use crate::backbone::{BackboneKind, BackboneSpec, Stage};
use crate::error::Result;
use crate::model::{FusionModel, ModelConfig};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::gradcheck::{compare_with_differences, grad_check, GradCheckReport, COMPOSITE_STEP, DEFAULT_STEP};
use crate::tensor::{Conv2dOptions, Graph, Tensor, Var};

/// Bound on the relative error of a single differentiable op.
pub const OP_TOLERANCE: f64 = 1e-5;
/// Bound on the relative error through the whole fusion model.
pub const MODEL_TOLERANCE: f64 = 1e-4;

/// Like [`crate::tensor::gradcheck::grad_check`], but differentiates with
/// respect to every entry of `store` as well as `inputs`.
///
/// Inputs come first in the coordinate numbering, then parameters in slot order.
pub fn grad_check_with_params<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    f: F,
    h: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| graph.leaf(t.clone(), true)).collect();
    let out = f(&mut graph, store, &leaves)?;
    graph.backward(out)?;

    let mut analytic: Vec<Vec<f64>> = leaves
        .iter()
        .zip(inputs)
        .map(|(&v, t)| graph.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();
    let mut grads = store.clone();
    grads.zero_grad();
    grads.accumulate_grads(&graph);
    for (_, p) in grads.iter() {
        analytic.push(p.grad.clone().unwrap_or_else(|| vec![0.0; p.value.len()]));
    }

    let mut point_inputs = inputs.to_vec();
    let mut point_store = store.clone();
    let n_inputs = inputs.len();
    compare_with_differences(&analytic, h, |which, coord, offset| {
        let cell: &mut f64 = if which < n_inputs {
            &mut point_inputs[which].data_mut()[coord]
        } else {
            &mut point_store.at_mut(which - n_inputs).value.data_mut()[coord]
        };
        let original = *cell;
        *cell = original + offset;
        let mut g = Graph::new();
        let vars: Vec<Var> = point_inputs.iter().map(|t| g.constant(t.clone())).collect();
        let value = f(&mut g, &point_store, &vars).map(|v| g.value(v).data()[0]);
        let cell: &mut f64 = if which < n_inputs {
            &mut point_inputs[which].data_mut()[coord]
        } else {
            &mut point_store.at_mut(which - n_inputs).value.data_mut()[coord]
        };
        *cell = original;
        value
    })
}

/// Overwrites every parameter with draws from `±scale`.
///
/// Freshly initialized biases are exactly zero, which parks relu inputs on
/// their kink and makes central differences meaningless there.
pub fn randomize_params(store: &mut ParamStore<f64>, scale: f64, rng: &mut Rng) {
    for (_, p) in store.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = rng.uniform(-scale, scale));
    }
}

/// Result of one named gradient check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub coordinates: usize,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_pair: (f64, f64),
    pub passed: bool,
}

impl CheckOutcome {
    fn from_report(name: &str, report: &GradCheckReport, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            max_relative_error: report.max_relative_error,
            tolerance,
            coordinates: report.coordinates,
            worst_pair: report.worst_pair,
            passed: report.max_relative_error < tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    pub include_model: bool,
    /// Adds a check whose backward pass is deliberately wrong; it must fail.
    pub inject_fault: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            include_model: true,
            inject_fault: false,
        }
    }
}

fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

fn scaled(mut t: Tensor<f64>, k: f64) -> Tensor<f64> {
    t.data_mut().iter_mut().for_each(|v| *v *= k);
    t
}

/// Random values at least 0.05 away from zero, so relu never sits on its kink.
fn off_kink_tensor(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let mut t = random_tensor(shape, rng);
    for v in t.data_mut() {
        *v = v.signum() * (0.05 + v.abs());
    }
    t
}

/// Distinct values spaced 0.1 apart in random order, so every pooling window
/// has a unique maximum far wider than the difference step.
fn separated_tensor(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let data = order.iter().map(|&k| 0.1 * k as f64 + 0.01 * rng.uniform(-1.0, 1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Reduces `y` to a scalar with fixed pseudo-random weights, so every output
/// coordinate contributes a distinct amount to the gradient. The weights are
/// positive so sums over windows cannot cancel to a near-zero gradient, where
/// relative error measures only round-off.
fn probe(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let mut rng = Rng::stream(seed, 0x9e37);
    let data = (0..shape.iter().product()).map(|_| rng.uniform(0.5, 1.5)).collect();
    let w = Tensor::new(shape, data)?;
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

type OpFn = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

fn op_cases(seed: u64) -> Vec<(&'static str, Vec<Tensor<f64>>, OpFn)> {
    let mut rng = Rng::stream(seed, 0x0c4e);
    let r = &mut rng;
    let mut cases: Vec<(&'static str, Vec<Tensor<f64>>, OpFn)> = Vec::new();
    let mut add = |name, inputs, f: OpFn| cases.push((name, inputs, f));

    add(
        "matmul",
        vec![random_tensor(&[3, 4], r), random_tensor(&[4, 2], r)],
        Box::new(move |g, v| {
            let y = g.matmul(v[0], v[1])?;
            probe(g, y, seed)
        }),
    );
    add(
        "add",
        vec![random_tensor(&[2, 3], r), random_tensor(&[2, 3], r)],
        Box::new(move |g, v| {
            let y = g.add(v[0], v[1])?;
            probe(g, y, seed)
        }),
    );
    add(
        "sub",
        vec![random_tensor(&[2, 3], r), random_tensor(&[2, 3], r)],
        Box::new(move |g, v| {
            let y = g.sub(v[0], v[1])?;
            probe(g, y, seed)
        }),
    );
    add(
        "mul",
        vec![random_tensor(&[2, 3], r), random_tensor(&[2, 3], r)],
        Box::new(move |g, v| {
            let y = g.mul(v[0], v[1])?;
            probe(g, y, seed)
        }),
    );
    add(
        "scale",
        vec![random_tensor(&[5], r)],
        Box::new(move |g, v| {
            let y = g.scale(v[0], -1.7);
            probe(g, y, seed)
        }),
    );
    add(
        "add_bias",
        vec![random_tensor(&[3, 4], r), random_tensor(&[4], r)],
        Box::new(move |g, v| {
            let y = g.add_bias(v[0], v[1])?;
            probe(g, y, seed)
        }),
    );
    add(
        "linear",
        vec![random_tensor(&[2, 5], r), random_tensor(&[5, 3], r), random_tensor(&[3], r)],
        Box::new(move |g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            probe(g, y, seed)
        }),
    );
    add(
        "relu",
        vec![off_kink_tensor(&[2, 6], r)],
        Box::new(move |g, v| {
            let y = g.relu(v[0]);
            probe(g, y, seed)
        }),
    );
    add(
        "sigmoid",
        vec![scaled(random_tensor(&[2, 4], r), 4.0)],
        Box::new(move |g, v| {
            let y = g.sigmoid(v[0]);
            probe(g, y, seed)
        }),
    );
    add(
        "log_softmax",
        vec![scaled(random_tensor(&[3, 4], r), 1.5)],
        Box::new(move |g, v| {
            let y = g.log_softmax(v[0])?;
            probe(g, y, seed)
        }),
    );
    add(
        "reshape",
        vec![random_tensor(&[2, 3, 2], r)],
        Box::new(move |g, v| {
            let y = g.reshape(v[0], [3, 4])?;
            probe(g, y, seed)
        }),
    );
    add(
        "concat",
        vec![random_tensor(&[2, 3, 2, 2], r), random_tensor(&[2, 1, 2, 2], r)],
        Box::new(move |g, v| {
            let y = g.concat(&[v[0], v[1]], 1)?;
            probe(g, y, seed)
        }),
    );
    add(
        "channel_shuffle",
        vec![random_tensor(&[2, 6, 2, 2], r)],
        Box::new(move |g, v| {
            let y = g.channel_shuffle(v[0], 3)?;
            probe(g, y, seed)
        }),
    );
    add(
        "conv2d",
        vec![random_tensor(&[2, 3, 5, 5], r), random_tensor(&[4, 3, 3, 3], r), random_tensor(&[4], r)],
        Box::new(move |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), Conv2dOptions::new(1, 1, 1))?;
            probe(g, y, seed)
        }),
    );
    add(
        "conv2d_strided",
        vec![random_tensor(&[1, 2, 6, 6], r), random_tensor(&[3, 2, 3, 3], r)],
        Box::new(move |g, v| {
            let y = g.conv2d(v[0], v[1], None, Conv2dOptions::new(2, 1, 1))?;
            probe(g, y, seed)
        }),
    );
    add(
        "conv2d_grouped",
        vec![random_tensor(&[2, 4, 4, 4], r), random_tensor(&[6, 2, 1, 1], r), random_tensor(&[6], r)],
        Box::new(move |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), Conv2dOptions::new(1, 0, 2))?;
            probe(g, y, seed)
        }),
    );
    add(
        "conv2d_depthwise",
        vec![random_tensor(&[1, 4, 5, 5], r), random_tensor(&[4, 1, 3, 3], r)],
        Box::new(move |g, v| {
            let y = g.conv2d(v[0], v[1], None, Conv2dOptions::new(2, 1, 4))?;
            probe(g, y, seed)
        }),
    );
    add(
        "max_pool",
        vec![separated_tensor(&[2, 2, 5, 5], r)],
        Box::new(move |g, v| {
            let y = g.max_pool2d(v[0], 3, 2, 1)?;
            probe(g, y, seed)
        }),
    );
    add(
        "avg_pool",
        vec![random_tensor(&[2, 2, 5, 5], r)],
        Box::new(move |g, v| {
            let y = g.avg_pool2d(v[0], 3, 2, 1)?;
            probe(g, y, seed)
        }),
    );
    add(
        "global_avg_pool",
        vec![random_tensor(&[2, 3, 3, 4], r)],
        Box::new(move |g, v| {
            let y = g.global_avg_pool(v[0])?;
            probe(g, y, seed)
        }),
    );
    add(
        "dropout",
        vec![random_tensor(&[4, 5], r)],
        Box::new(move |g, v| {
            let y = g.dropout(v[0], 0.3, true, &mut Rng::new(seed))?;
            probe(g, y, seed)
        }),
    );
    add(
        "sum",
        vec![random_tensor(&[3, 3], r)],
        Box::new(|g, v| Ok(g.sum(v[0]))),
    );
    add(
        "mean",
        vec![random_tensor(&[3, 3], r)],
        Box::new(|g, v| Ok(g.mean(v[0]))),
    );
    let labels: Vec<usize> = (0..4).map(|_| r.below(3) as usize).collect();
    add(
        "nll_loss",
        vec![scaled(random_tensor(&[4, 3], r), 1.5)],
        Box::new(move |g, v| {
            let lp = g.log_softmax(v[0])?;
            g.nll_loss(lp, &labels)
        }),
    );
    let bits: Vec<u8> = (0..5).map(|_| r.below(2) as u8).collect();
    add(
        "binary_sigmoid_nll",
        vec![scaled(random_tensor(&[5], r), 5.0)],
        Box::new(move |g, v| g.binary_sigmoid_nll(v[0], &bits)),
    );
    cases
}

/// Checks every differentiable op in double precision at the default step.
pub fn op_checks(seed: u64) -> Result<Vec<CheckOutcome>> {
    op_checks_with_step(seed, DEFAULT_STEP)
}

pub fn op_checks_with_step(seed: u64, h: f64) -> Result<Vec<CheckOutcome>> {
    op_cases(seed)
        .into_iter()
        .map(|(name, inputs, f)| {
            let report = grad_check(|g: &mut Graph<f64>, v: &[Var]| f(g, v), &inputs, h)?;
            Ok(CheckOutcome::from_report(name, &report, OP_TOLERANCE))
        })
        .collect()
}

/// A small three-backbone model that keeps every layer type but runs in seconds.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        backbones: BackboneKind::ALL
            .iter()
            .map(|&kind| BackboneSpec {
                kind,
                stem_channels: 4,
                stages: vec![Stage::new(1, 4), Stage::new(1, 8)],
                feature_dim: 4,
                groups: 2,
                input_size: [8, 8],
            })
            .collect(),
        hidden: 6,
        class_count: 2,
        dropout_p: 0.2,
    }
}

/// Mean log loss of the whole fusion model on two images, differentiated with
/// respect to the images and every parameter, dropout active with a fixed mask.
pub fn model_check(seed: u64) -> Result<CheckOutcome> {
    let config = tiny_model_config();
    let mut model = FusionModel::<f64>::new(config.clone(), seed)?;
    let mut rng = Rng::stream(seed, 0x6d0d);
    randomize_params(model.params_mut(), 0.5, &mut rng);
    let [h, w] = config.input_size().expect("tiny config has backbones");
    let images = Tensor::new([2, 1, h, w], (0..2 * h * w).map(|_| rng.uniform(0.0, 1.0)).collect())?;
    let labels = [0usize, 1];
    let report = grad_check_with_params(
        model.params(),
        &[images],
        |g, store, v| {
            let (_, lp) = model.forward_with_params(g, store, v[0], true, &mut Rng::new(seed))?;
            g.nll_loss(lp, &labels)
        },
        COMPOSITE_STEP,
    )?;
    Ok(CheckOutcome::from_report("fusion_model", &report, MODEL_TOLERANCE))
}

/// Uses a detached operand, so the analytic gradient is half the true one.
pub fn fault_check(seed: u64) -> Result<CheckOutcome> {
    let x = random_tensor(&[6], &mut Rng::stream(seed, 0xfa17));
    let report = grad_check(
        |g: &mut Graph<f64>, v: &[Var]| {
            let d = g.detach(v[0]);
            let p = g.mul(v[0], d)?;
            Ok(g.sum(p))
        },
        &[x],
        DEFAULT_STEP,
    )?;
    Ok(CheckOutcome::from_report("injected_fault", &report, OP_TOLERANCE))
}

pub fn standard_suite(opts: SuiteOptions) -> Result<Vec<CheckOutcome>> {
    let mut out = op_checks(opts.seed)?;
    if opts.include_model {
        out.push(model_check(opts.seed)?);
    }
    if opts.inject_fault {
        out.push(fault_check(opts.seed)?);
    }
    Ok(out)
}
