//! Parallel backbones, feature concatenation and the classification head.

use serde::{Deserialize, Serialize};

use crate::backbone::{materialize_all, Backbone, BackboneKind, BackboneSpec, LinearUnit, ParamDecl};
use crate::error::{bail, Result};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::{Element, Graph, Tensor, Var};

/// Stream id used to draw initial weights from the model seed.
const INIT_STREAM: u64 = 0x1417;

fn default_backbones() -> Vec<BackboneSpec> {
    BackboneKind::ALL.iter().map(|&k| BackboneSpec::miniature(k)).collect()
}

fn default_hidden() -> usize {
    512
}

fn default_class_count() -> usize {
    2
}

fn default_dropout() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Concatenation order of the feature vectors.
    #[serde(default = "default_backbones")]
    pub backbones: Vec<BackboneSpec>,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_class_count")]
    pub class_count: usize,
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbones: default_backbones(),
            hidden: default_hidden(),
            class_count: default_class_count(),
            dropout_p: default_dropout(),
        }
    }
}

impl ModelConfig {
    /// The three default backbones, each emitting `f` features.
    pub fn with_feature_dim(f: usize) -> Self {
        let mut c = Self::default();
        c.backbones.iter_mut().for_each(|b| b.feature_dim = f);
        c
    }

    /// Keeps only the backbone of `kind`; the single-network baselines.
    pub fn only(mut self, kind: BackboneKind) -> Self {
        self.backbones.retain(|b| b.kind == kind);
        self
    }

    pub fn set_feature_dim(&mut self, f: usize) {
        self.backbones.iter_mut().for_each(|b| b.feature_dim = f);
    }

    pub fn set_input_size(&mut self, h: usize, w: usize) {
        self.backbones.iter_mut().for_each(|b| b.input_size = [h, w]);
    }

    pub fn input_size(&self) -> Option<[usize; 2]> {
        self.backbones.first().map(|b| b.input_size)
    }

    /// Width of the concatenated feature vector.
    pub fn concat_width(&self) -> usize {
        self.backbones.iter().map(|b| b.feature_dim).sum()
    }

    pub fn concat_order(&self) -> Vec<BackboneKind> {
        self.backbones.iter().map(|b| b.kind).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbones.is_empty() || self.backbones.len() > 3 {
            bail!(Config, "a model needs one to three backbones, got {}", self.backbones.len());
        }
        for (i, b) in self.backbones.iter().enumerate() {
            if self.backbones[..i].iter().any(|o| o.kind == b.kind) {
                bail!(Config, "backbone kind {} listed twice", b.kind);
            }
            if b.input_size != self.backbones[0].input_size {
                bail!(
                    Config,
                    "backbone input sizes disagree: {} expects {:?}, {} expects {:?}",
                    self.backbones[0].kind,
                    self.backbones[0].input_size,
                    b.kind,
                    b.input_size
                );
            }
            b.validate()?;
        }
        if self.hidden == 0 {
            bail!(Config, "hidden width must be positive");
        }
        if self.class_count < 2 {
            bail!(Config, "class_count must be at least 2, got {}", self.class_count);
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            bail!(Config, "dropout_p must lie in [0, 1), got {}", self.dropout_p);
        }
        Ok(())
    }
}

/// Scalar count of the head `FC(in → hidden) → FC(hidden → classes)`.
pub fn head_param_count(concat_width: usize, hidden: usize, classes: usize) -> usize {
    concat_width * hidden + hidden + hidden * classes + classes
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    backbones: Vec<Backbone>,
    fc1: LinearUnit,
    fc2: LinearUnit,
}

impl Layout {
    fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let backbones = config
            .backbones
            .iter()
            .cloned()
            .map(Backbone::new)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            backbones,
            fc1: LinearUnit::new("head.fc1".into(), config.concat_width(), config.hidden),
            fc2: LinearUnit::new("head.fc2".into(), config.hidden, config.class_count),
        })
    }

    fn declare(&self) -> Vec<ParamDecl> {
        let mut out: Vec<ParamDecl> = self.backbones.iter().flat_map(Backbone::declare).collect();
        self.fc1.declare(&mut out);
        self.fc2.declare(&mut out);
        out
    }
}

/// Parameter layout of `config` without allocating any values.
pub fn declare(config: &ModelConfig) -> Result<Vec<ParamDecl>> {
    Ok(Layout::new(config)?.declare())
}

/// Total scalar parameters of the model `config` describes.
pub fn param_count(config: &ModelConfig) -> Result<usize> {
    Ok(declare(config)?.iter().map(ParamDecl::numel).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub logits: Tensor<T>,
    pub log_probs: Tensor<T>,
    /// Row-wise argmax of `log_probs`; the first maximum wins.
    pub predicted_class: Vec<usize>,
    /// `exp(log_probs[:, 1])`.
    pub positive_prob: Vec<f64>,
}

impl<T: Element> Prediction<T> {
    fn from_logits(logits: Tensor<T>, log_probs: Tensor<T>) -> Self {
        let c = log_probs.shape()[1];
        let mut predicted_class = Vec::new();
        let mut positive_prob = Vec::new();
        for row in log_probs.data().chunks(c) {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            predicted_class.push(best);
            positive_prob.push(row[1].as_f64().exp());
        }
        Self {
            logits,
            log_probs,
            predicted_class,
            positive_prob,
        }
    }

    /// Hard binary decisions: positive exactly when class 1 wins.
    pub fn hard_labels(&self) -> Vec<u8> {
        self.predicted_class.iter().map(|&c| u8::from(c == 1)).collect()
    }
}

/// Backbones run on the same batch, their features are concatenated and fed
/// through `FC → relu → dropout → FC → log_softmax`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel<T> {
    config: ModelConfig,
    layout: Layout,
    params: ParamStore<T>,
}

impl<T: Element> FusionModel<T> {
    /// Builds the model with weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let layout = Layout::new(&config)?;
        let params = materialize_all(&layout.declare(), &mut Rng::stream(seed, INIT_STREAM))?;
        Ok(Self { config, layout, params })
    }

    /// Wraps existing parameters, checking that paths and shapes match `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let layout = Layout::new(&config)?;
        let decls = layout.declare();
        for d in &decls {
            match params.get(&d.name) {
                None => bail!(Checkpoint, "missing parameter {}", d.name),
                Some(p) if p.value.shape() != d.shape.as_slice() => bail!(
                    Checkpoint,
                    "parameter {} has shape {:?}, the configuration needs {:?}",
                    d.name,
                    p.value.shape(),
                    d.shape
                ),
                Some(_) => {}
            }
        }
        if params.len() != decls.len() {
            let extra = params
                .names()
                .find(|n| !decls.iter().any(|d| d.name == *n))
                .unwrap_or("?");
            bail!(Checkpoint, "unknown parameter path {}", extra);
        }
        // Re-key in declaration order so iteration is layout-stable.
        let mut ordered = ParamStore::new();
        for d in &decls {
            ordered.insert(d.name.clone(), params.get(&d.name).expect("checked").value.clone())?;
        }
        Ok(Self {
            config,
            layout,
            params: ordered,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    pub fn head_param_count(&self) -> usize {
        self.params.numel_with_prefix("head.")
    }

    /// Concatenated backbone features, `B × ΣF`.
    pub fn features(&self, g: &mut Graph<T>, images: Var) -> Result<Var> {
        self.features_with(g, &self.params, images)
    }

    fn features_with(&self, g: &mut Graph<T>, params: &ParamStore<T>, images: Var) -> Result<Var> {
        let feats = self
            .layout
            .backbones
            .iter()
            .map(|b| b.forward(g, params, images))
            .collect::<Result<Vec<_>>>()?;
        if feats.len() == 1 {
            return Ok(feats[0]);
        }
        g.concat(&feats, 1)
    }

    /// Records the forward pass into `g`, returning `(logits, log_probs)`.
    pub fn forward(&self, g: &mut Graph<T>, images: Var, training: bool, rng: &mut Rng) -> Result<(Var, Var)> {
        self.forward_with_params(g, &self.params, images, training, rng)
    }

    /// Same as [`Self::forward`], reading weights from `params` instead.
    pub fn forward_with_params(
        &self,
        g: &mut Graph<T>,
        params: &ParamStore<T>,
        images: Var,
        training: bool,
        rng: &mut Rng,
    ) -> Result<(Var, Var)> {
        let fused = self.features_with(g, params, images)?;
        let h = self.layout.fc1.forward(g, params, fused)?;
        let h = g.relu(h);
        let h = g.dropout(h, self.config.dropout_p, training, rng)?;
        let logits = self.layout.fc2.forward(g, params, h)?;
        let log_probs = g.log_softmax(logits)?;
        Ok((logits, log_probs))
    }

    pub fn fuse_forward(&self, images: &Tensor<T>, training: bool, rng: &mut Rng) -> Result<Prediction<T>> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let (logits, log_probs) = self.forward(&mut g, x, training, rng)?;
        Ok(Prediction::from_logits(g.value(logits).clone(), g.value(log_probs).clone()))
    }

    /// Inference with dropout disabled.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Prediction<T>> {
        self.fuse_forward(images, false, &mut Rng::new(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::Stage;
    use crate::tensor::stable_sigmoid;

    pub(crate) fn tiny_config(f: usize, classes: usize) -> ModelConfig {
        let backbones = BackboneKind::ALL
            .iter()
            .map(|&kind| BackboneSpec {
                kind,
                stem_channels: 4,
                stages: vec![Stage::new(1, 4), Stage::new(1, 8)],
                feature_dim: f,
                groups: 2,
                input_size: [16, 16],
            })
            .collect();
        ModelConfig {
            backbones,
            hidden: 16,
            class_count: classes,
            dropout_p: 0.2,
        }
    }

    fn images(b: usize, seed: u64) -> Tensor<f64> {
        let mut r = Rng::new(seed);
        Tensor::new([b, 1, 16, 16], (0..b * 256).map(|_| r.next_f64()).collect()).unwrap()
    }

    #[test]
    fn default_concat_width_is_three_thousand() {
        assert_eq!(ModelConfig::default().concat_width(), 3000);
        assert_eq!(ModelConfig::default().concat_order(), BackboneKind::ALL.to_vec());
    }

    #[test]
    fn head_counts_follow_closed_form() {
        assert_eq!(head_param_count(3000, 512, 10), 1_541_642);
        assert_eq!(head_param_count(12, 512, 2), 7_682);
        let mut cfg = ModelConfig::with_feature_dim(4);
        cfg.set_input_size(16, 16);
        let m = FusionModel::<f32>::new(cfg, 0).unwrap();
        assert_eq!(m.head_param_count(), 7_682);
        assert_eq!(m.param_count(), param_count(m.config()).unwrap());
    }

    #[test]
    fn zero_head_gives_uniform_log_probs() {
        for classes in [2, 10] {
            let mut m = FusionModel::<f64>::new(tiny_config(4, classes), 1).unwrap();
            for (name, p) in m.params_mut().iter_mut() {
                if name.starts_with("head.fc2") {
                    p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
                }
            }
            let pred = m.predict(&images(3, 2)).unwrap();
            let expect = -(classes as f64).ln();
            for &v in pred.log_probs.data() {
                assert!((v - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn positive_prob_is_sigmoid_of_logit_gap() {
        let m = FusionModel::<f64>::new(tiny_config(4, 2), 3).unwrap();
        let pred = m.predict(&images(5, 4)).unwrap();
        for (i, row) in pred.logits.data().chunks(2).enumerate() {
            let s = stable_sigmoid(row[1] - row[0]);
            assert!((pred.positive_prob[i] - s).abs() < 1e-9);
            let lp = &pred.log_probs.data()[2 * i..2 * i + 2];
            let argmax = usize::from(lp[1] > lp[0]);
            assert_eq!(pred.predicted_class[i], argmax);
        }
    }

    #[test]
    fn mismatched_input_sizes_fail_at_construction() {
        let mut cfg = tiny_config(4, 2);
        cfg.backbones[2].input_size = [32, 32];
        assert!(matches!(FusionModel::<f32>::new(cfg, 0), Err(crate::Error::Config(_))));
    }

    #[test]
    fn duplicate_kind_rejected() {
        let mut cfg = tiny_config(4, 2);
        cfg.backbones[1] = cfg.backbones[0].clone();
        assert!(FusionModel::<f32>::new(cfg, 0).is_err());
    }

    #[test]
    fn single_backbone_model_has_narrow_head() {
        let cfg = tiny_config(4, 2).only(BackboneKind::Inception);
        let m = FusionModel::<f64>::new(cfg, 0).unwrap();
        assert_eq!(m.head_param_count(), head_param_count(4, 16, 2));
        assert!(m.params().names().all(|n| !n.starts_with("residual")));
        let pred = m.predict(&images(2, 0)).unwrap();
        assert_eq!(pred.log_probs.shape(), &[2, 2]);
    }

    #[test]
    fn training_forward_is_reproducible_and_differs_from_eval() {
        let m = FusionModel::<f32>::new(tiny_config(4, 2), 5).unwrap();
        let x = images(4, 6).cast::<f32>();
        let a = m.fuse_forward(&x, true, &mut Rng::new(9)).unwrap();
        let b = m.fuse_forward(&x, true, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        let e1 = m.predict(&x).unwrap();
        let e2 = m.predict(&x).unwrap();
        assert_eq!(e1, e2);
        assert_ne!(a.logits, e1.logits);
    }

    #[test]
    fn from_params_names_the_offending_parameter() {
        let small = FusionModel::<f32>::new(tiny_config(4, 2), 0).unwrap();
        let err = FusionModel::<f32>::from_params(tiny_config(4, 10), small.params().clone()).unwrap_err();
        assert!(err.to_string().contains("head.fc2.weight"), "{err}");
        let ok = FusionModel::<f32>::from_params(tiny_config(4, 2), small.params().clone()).unwrap();
        assert_eq!(ok, small);
    }
}
