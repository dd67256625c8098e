use super::*;
use crate::backbone::{BackboneKind, BackboneSpec, Stage};
use crate::data::Sample;
use crate::model::ModelConfig;
use crate::tensor::Tensor;

fn tiny_config() -> ModelConfig {
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
        hidden: 16,
        class_count: 2,
        dropout_p: 0.2,
    }
}

/// Class 1 images are bright, class 0 dark, with mild noise.
fn toy_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed);
    let samples = (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let base = if label == 1 { 0.7 } else { 0.2 };
            let data = (0..64).map(|_| base + 0.1 * rng.uniform(-1.0, 1.0)).collect();
            Sample {
                image: Tensor::new([1, 8, 8], data).unwrap(),
                label,
                source_path: format!("toy{i}"),
            }
        })
        .collect();
    Dataset::new(samples).unwrap()
}

fn single_param(value: f64, grad: Option<f64>) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.insert("theta", Tensor::full([1], value)).unwrap();
    s.get_mut("theta").unwrap().grad = grad.map(|g| vec![g]);
    s
}

#[test]
fn first_adam_step_moves_by_learning_rate() {
    for g in [0.37, -5.0, 1e-3] {
        let mut p = single_param(1.0, Some(g));
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &mut st, &AdamConfig::default()).unwrap();
        let moved = p.get("theta").unwrap().value.data()[0] - 1.0;
        assert!((moved.abs() - 0.003).abs() < 1e-6, "{moved}");
        assert_eq!(moved.signum(), -g.signum());
        assert_eq!(st.t, 1);
    }
}

#[test]
fn zero_gradient_and_zero_rate_leave_parameters_unchanged() {
    let mut p = single_param(-0.0, Some(0.0));
    let mut st = AdamState::new(&p);
    for _ in 0..5 {
        adam_step(&mut p, &mut st, &AdamConfig::default()).unwrap();
    }
    assert_eq!(p.get("theta").unwrap().value.data()[0].to_bits(), (-0.0f64).to_bits());

    let mut p = single_param(0.123, Some(4.0));
    let mut st = AdamState::new(&p);
    let cfg = AdamConfig {
        learning_rate: 0.0,
        ..AdamConfig::default()
    };
    adam_step(&mut p, &mut st, &cfg).unwrap();
    assert_eq!(p.get("theta").unwrap().value.data()[0].to_bits(), 0.123f64.to_bits());
}

#[test]
fn quadratic_bowl_descends_monotonically() {
    let mut p = single_param(1.0, None);
    let mut st = AdamState::new(&p);
    let mut prev = f64::INFINITY;
    for _ in 0..100 {
        let theta = p.get("theta").unwrap().value.data()[0];
        let loss = theta * theta;
        assert!(loss < prev);
        prev = loss;
        p.get_mut("theta").unwrap().grad = Some(vec![2.0 * theta]);
        adam_step(&mut p, &mut st, &AdamConfig::default()).unwrap();
    }
}

#[test]
fn missing_gradient_names_the_parameter() {
    let mut p = single_param(1.0, None);
    let mut st = AdamState::new(&p);
    let err = adam_step(&mut p, &mut st, &AdamConfig::default()).unwrap_err();
    assert!(matches!(err, crate::Error::Training(_)));
    assert!(err.to_string().contains("theta"));
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig {
            batch_size: 0,
            ..Default::default()
        },
        TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        },
        TrainConfig {
            beta2: 1.0,
            ..Default::default()
        },
        TrainConfig {
            epochs: 0,
            ..Default::default()
        },
    ] {
        assert!(bad.validate().is_err());
    }
    let parsed: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
    assert_eq!(parsed.batch_size, 16);
    assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
}

#[test]
fn separable_pair_is_learned() {
    let data = toy_dataset(2, 1);
    let mut model = FusionModel::<f32>::new(tiny_config(), 3).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        seed: 3,
        ..Default::default()
    };
    let out = train(&mut model, &data, &data, &cfg, &mut ()).unwrap();
    assert_eq!(out.record.best().val_accuracy, Some(1.0));
}

struct Counter {
    seen: Vec<usize>,
    epochs: usize,
}

impl TrainObserver for Counter {
    fn on_batch(&mut self, _epoch: usize, _batch: usize, indices: &[usize], loss: f64) {
        assert!(loss.is_finite());
        for &i in indices {
            self.seen[i] += 1;
        }
    }

    fn on_epoch(&mut self, _record: &EpochRecord) {
        self.epochs += 1;
    }
}

#[test]
fn every_sample_once_per_epoch_including_partial_batch() {
    let data = toy_dataset(19, 2);
    let val = toy_dataset(4, 3);
    let mut model = FusionModel::<f32>::new(tiny_config(), 0).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        ..Default::default()
    };
    let mut c = Counter {
        seen: vec![0; 19],
        epochs: 0,
    };
    train(&mut model, &data, &val, &cfg, &mut c).unwrap();
    assert!(c.seen.iter().all(|&n| n == 3), "{:?}", c.seen);
    assert_eq!(c.epochs, 3);
}

#[test]
fn single_epoch_and_reruns_are_identical() {
    let data = toy_dataset(12, 4);
    let val = toy_dataset(6, 5);
    let run = |epochs| {
        let mut model = FusionModel::<f32>::new(tiny_config(), 9).unwrap();
        let cfg = TrainConfig {
            epochs,
            seed: 9,
            batch_size: 5,
            ..Default::default()
        };
        train(&mut model, &data, &val, &cfg, &mut ()).unwrap()
    };
    let one = run(1);
    assert_eq!(one.record.best_epoch, 1);
    assert_eq!(one.best.meta.epoch, 1);
    assert_eq!(one.record.to_jsonl().unwrap().lines().count(), 1);
    let (a, b) = (run(4), run(4));
    assert_eq!(a.record.to_jsonl().unwrap(), b.record.to_jsonl().unwrap());
    assert_eq!(a.best.to_bytes().unwrap(), b.best.to_bytes().unwrap());
}

#[test]
fn ties_resolve_to_earliest_epoch() {
    let data = toy_dataset(6, 6);
    let val = toy_dataset(4, 7);
    let mut model = FusionModel::<f32>::new(tiny_config(), 1).unwrap();
    // A vanishing step cannot flip any prediction, so every epoch ties.
    let cfg = TrainConfig {
        epochs: 4,
        learning_rate: 1e-30,
        ..Default::default()
    };
    let out = train(&mut model, &data, &val, &cfg, &mut ()).unwrap();
    let accs: Vec<_> = out.record.epochs.iter().map(|e| e.val_accuracy).collect();
    assert!(accs.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(out.record.best_epoch, 1);
}

#[test]
fn empty_validation_requires_selection_off() {
    let data = toy_dataset(4, 8);
    let empty = Dataset::default();
    let mut model = FusionModel::<f32>::new(tiny_config(), 1).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        ..Default::default()
    };
    assert!(matches!(
        train(&mut model, &data, &empty, &cfg, &mut ()),
        Err(crate::Error::Data(_))
    ));
    let cfg = TrainConfig {
        select_best: false,
        ..cfg
    };
    let out = train(&mut model, &data, &empty, &cfg, &mut ()).unwrap();
    assert_eq!(out.record.best_epoch, 2);
    assert_eq!(out.best.meta.val_accuracy, None);
    assert!(matches!(
        train(&mut model, &empty, &data, &cfg, &mut ()),
        Err(crate::Error::Data(_))
    ));
}

#[test]
fn non_finite_loss_aborts_with_position() {
    let data = toy_dataset(4, 9);
    let mut model = FusionModel::<f32>::new(tiny_config(), 1).unwrap();
    let p = model.params_mut().get_mut("head.fc2.bias").unwrap();
    p.value.data_mut()[0] = f32::NAN;
    let cfg = TrainConfig {
        epochs: 1,
        ..Default::default()
    };
    let err = train(&mut model, &data, &data, &cfg, &mut ()).unwrap_err();
    assert!(matches!(err, crate::Error::NonFinite { epoch: 1, batch: 1 }), "{err:?}");
}

/// Forces the head to a constant decision.
fn constant_model(class: usize) -> FusionModel<f64> {
    let mut model = FusionModel::<f64>::new(tiny_config(), 2).unwrap();
    for (name, p) in model.params_mut().iter_mut() {
        if name == "head.fc2.weight" {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        if name == "head.fc2.bias" {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            p.value.data_mut()[class] = 5.0;
        }
    }
    model
}

#[test]
fn constant_positive_model_evaluation() {
    let mut data = toy_dataset(5, 10).samples().to_vec();
    for (s, l) in data.iter_mut().zip([1, 1, 1, 0, 0]) {
        s.label = l;
    }
    let data = Dataset::new(data).unwrap();
    let ev = evaluate(&constant_model(1), &data).unwrap();
    assert_eq!(ev.confusion, ConfusionMatrix::new(3, 2, 0, 0));
    assert_eq!(ev.report.recall, 1.0);
    assert_eq!(ev.report.specificity, 0.0);
    assert_eq!(ev.report.auc, Some(0.5));
}

#[test]
fn trained_toy_model_evaluates_perfectly() {
    let data = toy_dataset(8, 11);
    let mut model = FusionModel::<f64>::new(tiny_config(), 4).unwrap();
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 4,
        ..Default::default()
    };
    let out = train(&mut model, &data, &data, &cfg, &mut ()).unwrap();
    let best = out.best.into_model().unwrap();
    let ev = evaluate(&best, &data).unwrap();
    assert_eq!(Some(ev.accuracy()), out.record.best().val_accuracy);
    assert_eq!(ev.accuracy(), 1.0);
    assert!(ev.report.values().iter().all(|v| v.unwrap() == 1.0), "{:?}", ev.report);
}
