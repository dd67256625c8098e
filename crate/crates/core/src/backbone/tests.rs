use super::*;
use crate::checks::{grad_check_with_params, randomize_params};
use crate::rng::Rng;
use crate::tensor::gradcheck::COMPOSITE_STEP;
use crate::tensor::Tensor;

fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

fn store_for(decls: &[ParamDecl], seed: u64) -> ParamStore<f64> {
    materialize_all(decls, &mut Rng::new(seed)).unwrap()
}

fn random_store(decls: &[ParamDecl], seed: u64) -> ParamStore<f64> {
    let mut store = store_for(decls, seed);
    randomize_params(&mut store, 0.5, &mut Rng::new(seed + 1000));
    store
}

/// Weighted sum with fixed random weights so no gradient is structurally tiny.
fn probe(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let r = random(&shape, &mut Rng::new(seed));
    let r = g.constant(r);
    let m = g.mul(y, r)?;
    Ok(g.sum(m))
}

#[test]
fn zero_residual_branch_passes_relu_of_input() {
    let block = ResidualBlock::new("b", 4, 4, 1).unwrap();
    assert!(!block.has_projection());
    let mut decls = Vec::new();
    block.declare(&mut decls);
    let mut store = store_for(&decls, 1);
    for (_, p) in store.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let x = random(&[2, 4, 5, 5], &mut Rng::new(2));
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = block.forward(&mut g, &store, xv).unwrap();
    let expect: Vec<f64> = x.data().iter().map(|v| v.max(0.0)).collect();
    assert_eq!(g.value(y).data(), &expect[..]);
}

#[test]
fn strided_residual_projects_and_halves() {
    let block = ResidualBlock::new("b", 8, 16, 2).unwrap();
    assert!(block.has_projection());
    let mut decls = Vec::new();
    block.declare(&mut decls);
    let store = store_for(&decls, 3);
    let mut g = Graph::new();
    let x = g.constant(random(&[2, 8, 16, 16], &mut Rng::new(4)));
    let y = block.forward(&mut g, &store, x).unwrap();
    assert_eq!(g.shape(y), &[2, 16, 8, 8]);
}

#[test]
fn residual_rejects_wrong_input_width() {
    let block = ResidualBlock::new("b", 8, 8, 1).unwrap();
    let mut decls = Vec::new();
    block.declare(&mut decls);
    let store = store_for(&decls, 3);
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros([1, 4, 6, 6]));
    assert!(matches!(block.forward(&mut g, &store, x), Err(crate::Error::Config(_))));
}

#[test]
fn residual_block_gradients_match_differences() {
    for (cin, cout, stride) in [(3, 3, 1), (2, 4, 2)] {
        let block = ResidualBlock::new("b", cin, cout, stride).unwrap();
        let mut decls = Vec::new();
        block.declare(&mut decls);
        let store = random_store(&decls, 5);
        let x = random(&[2, cin, 5, 5], &mut Rng::new(6));
        let report = grad_check_with_params(
            &store,
            &[x],
            |g, s, v| {
                let y = block.forward(g, s, v[0])?;
                probe(g, y, 7)
            },
            COMPOSITE_STEP,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-5, "{cin}->{cout}/{stride}: {report:?}");
    }
}

#[test]
fn inception_width_is_branch_sum() {
    let widths = BranchWidths {
        single: 8,
        double: (4, 8),
        triple: (4, 8),
        pool: 8,
    };
    let m = InceptionModule::new("m", 16, widths).unwrap();
    let mut decls = Vec::new();
    m.declare(&mut decls);
    let store = store_for(&decls, 1);
    let mut g = Graph::new();
    let x = g.constant(random(&[2, 16, 7, 9], &mut Rng::new(1)));
    let y = m.forward(&mut g, &store, x).unwrap();
    assert_eq!(g.shape(y), &[2, 32, 7, 9]);
}

#[test]
fn inception_parameter_count_matches_closed_form() {
    let widths = BranchWidths {
        single: 8,
        double: (4, 8),
        triple: (4, 8),
        pool: 8,
    };
    let m = InceptionModule::new("m", 16, widths).unwrap();
    let mut decls = Vec::new();
    m.declare(&mut decls);
    let engine: usize = decls.iter().map(ParamDecl::numel).sum();
    // (cin, cout, k) for every conv in the module.
    let convs = [
        (16, 8, 1),
        (16, 4, 1),
        (4, 8, 3),
        (16, 4, 1),
        (4, 8, 3),
        (8, 8, 3),
        (16, 8, 1),
    ];
    let oracle: usize = convs.iter().map(|&(i, o, k)| i * o * k * k + o).sum();
    assert_eq!(oracle, 1584);
    assert_eq!(engine, oracle);
}

#[test]
fn inception_single_identity_branch_selects_channels() {
    let widths = BranchWidths {
        single: 2,
        double: (0, 0),
        triple: (0, 0),
        pool: 0,
    };
    let m = InceptionModule::new("m", 3, widths).unwrap();
    let mut decls = Vec::new();
    m.declare(&mut decls);
    assert_eq!(decls.len(), 2);
    let mut store = store_for(&decls, 1);
    // Select input channels 2 and 0.
    let w = Tensor::from_f64([2, 3, 1, 1], &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
    store.get_mut("m.b1.weight").unwrap().value = w;
    let x = random(&[1, 3, 4, 4], &mut Rng::new(9)).to_f64();
    let x: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    let mut g = Graph::new();
    let xv = g.constant(Tensor::new([1, 3, 4, 4], x.clone()).unwrap());
    let y = m.forward(&mut g, &store, xv).unwrap();
    let y = g.value(y).data();
    assert_eq!(&y[..16], &x[32..48]);
    assert_eq!(&y[16..], &x[..16]);
}

#[test]
fn inception_reduction_must_shrink() {
    let widths = BranchWidths {
        single: 4,
        double: (8, 4),
        triple: (2, 4),
        pool: 4,
    };
    assert!(matches!(
        InceptionModule::new("m", 8, widths),
        Err(crate::Error::Config(_))
    ));
}

#[test]
fn inception_gradients_match_differences() {
    let m = InceptionModule::new("m", 4, BranchWidths::for_channels(4, 6)).unwrap();
    let mut decls = Vec::new();
    m.declare(&mut decls);
    let store = random_store(&decls, 11);
    let x = random(&[2, 4, 4, 4], &mut Rng::new(12));
    let report = grad_check_with_params(
        &store,
        &[x],
        |g, s, v| {
            let y = m.forward(g, s, v[0])?;
            probe(g, y, 13)
        },
        COMPOSITE_STEP,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-5, "{report:?}");
}

#[test]
fn strided_shuffle_unit_doubles_channels() {
    let u = ShuffleUnit::new("u", 24, 48, 2, 2).unwrap();
    let mut decls = Vec::new();
    u.declare(&mut decls);
    let store = store_for(&decls, 1);
    let mut g = Graph::new();
    let x = g.constant(random(&[2, 24, 8, 8], &mut Rng::new(2)));
    let y = u.forward(&mut g, &store, x).unwrap();
    assert_eq!(g.shape(y), &[2, 48, 4, 4]);
}

#[test]
fn shuffle_rejects_indivisible_groups() {
    assert!(matches!(ShuffleUnit::new("u", 6, 6, 4, 1), Err(crate::Error::Config(_))));
    assert!(matches!(ShuffleUnit::new("u", 8, 8, 3, 1), Err(crate::Error::Config(_))));
}

#[test]
fn ungrouped_shuffle_unit_is_plain_bottleneck_chain() {
    // With one group the shuffle is the identity, so the unit must equal the
    // hand-assembled 1x1 -> relu -> depthwise 3x3 -> 1x1 residual chain.
    let u = ShuffleUnit::new("u", 4, 4, 1, 1).unwrap();
    let mut decls = Vec::new();
    u.declare(&mut decls);
    let store = store_for(&decls, 21);
    let x = random(&[1, 4, 5, 5], &mut Rng::new(22));
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = u.forward(&mut g, &store, xv).unwrap();
    let y = g.value(y).clone();

    let mut h = Graph::new();
    let xv = h.constant(x);
    let p = |h: &mut Graph<f64>, n: &str| store.bind(h, n).unwrap();
    let (w1, b1) = (p(&mut h, "u.gconv1.weight"), p(&mut h, "u.gconv1.bias"));
    let (wd, bd) = (p(&mut h, "u.dwconv.weight"), p(&mut h, "u.dwconv.bias"));
    let (w2, b2) = (p(&mut h, "u.gconv2.weight"), p(&mut h, "u.gconv2.bias"));
    let a = h.conv2d(xv, w1, Some(b1), Conv2dOptions::default()).unwrap();
    let a = h.relu(a);
    let a = h.conv2d(a, wd, Some(bd), Conv2dOptions::new(1, 1, u.bottleneck_channels())).unwrap();
    let a = h.conv2d(a, w2, Some(b2), Conv2dOptions::default()).unwrap();
    let a = h.add(xv, a).unwrap();
    let a = h.relu(a);
    assert_eq!(h.value(a), &y);
}

#[test]
fn shuffle_unit_gradients_match_differences() {
    for (cin, cout, stride) in [(4, 4, 1), (4, 8, 2)] {
        let u = ShuffleUnit::new("u", cin, cout, 2, stride).unwrap();
        let mut decls = Vec::new();
        u.declare(&mut decls);
        let store = random_store(&decls, 31);
        let x = random(&[2, cin, 5, 5], &mut Rng::new(32));
        let report = grad_check_with_params(
            &store,
            &[x],
            |g, s, v| {
                let y = u.forward(g, s, v[0])?;
                probe(g, y, 33)
            },
            COMPOSITE_STEP,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-5, "{cin}->{cout}/{stride}: {report:?}");
    }
}

fn run<T: Element>(bb: &Backbone, store: &ParamStore<T>, images: Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.constant(images);
    let y = bb.forward(&mut g, store, x)?;
    Ok(g.value(y).clone())
}

#[test]
fn default_backbones_emit_thousand_features() {
    for kind in BackboneKind::ALL {
        let bb = Backbone::new(BackboneSpec::miniature(kind)).unwrap();
        let store: ParamStore<f32> = materialize_all(&bb.declare(), &mut Rng::new(0)).unwrap();
        let y = run(&bb, &store, Tensor::full([4, 1, 64, 64], 0.5)).unwrap();
        assert_eq!(y.shape(), &[4, 1000], "{kind}");
    }
}

#[test]
fn small_spec_on_small_input() {
    for kind in BackboneKind::ALL {
        let spec = BackboneSpec {
            kind,
            stem_channels: 4,
            stages: vec![Stage::new(1, 4), Stage::new(1, 8)],
            feature_dim: 8,
            groups: 2,
            input_size: [16, 16],
        };
        let bb = Backbone::new(spec).unwrap();
        let store: ParamStore<f64> = materialize_all(&bb.declare(), &mut Rng::new(0)).unwrap();
        let y = run(&bb, &store, random(&[3, 1, 16, 16], &mut Rng::new(1))).unwrap();
        assert_eq!(y.shape(), &[3, 8]);
    }
}

#[test]
fn zero_final_projection_gives_zero_features() {
    let bb = Backbone::new(BackboneSpec::miniature(BackboneKind::Shuffle).with_feature_dim(8)).unwrap();
    let mut store: ParamStore<f64> = materialize_all(&bb.declare(), &mut Rng::new(0)).unwrap();
    for name in ["shuffle.fc.weight", "shuffle.fc.bias"] {
        let p = store.get_mut(name).unwrap();
        p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let y = run(&bb, &store, random(&[2, 1, 64, 64], &mut Rng::new(3))).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn wrong_input_size_names_both_sizes() {
    let bb = Backbone::new(BackboneSpec::miniature(BackboneKind::Residual).with_feature_dim(4)).unwrap();
    let store: ParamStore<f32> = materialize_all(&bb.declare(), &mut Rng::new(0)).unwrap();
    let err = run(&bb, &store, Tensor::zeros([1, 1, 32, 32])).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, crate::Error::Shape(_)));
    assert!(msg.contains("64×64") && msg.contains("32"), "{msg}");
}

#[test]
fn spec_validation() {
    let mut s = BackboneSpec::miniature(BackboneKind::Shuffle);
    s.stages[1].channels = 33;
    assert!(Backbone::new(s).is_err());
    let s = BackboneSpec::miniature(BackboneKind::Residual).with_feature_dim(1);
    assert!(Backbone::new(s).is_err());
    let s = BackboneSpec::miniature(BackboneKind::Inception).with_input_size(0, 64);
    assert!(Backbone::new(s).is_err());
    let mut s = BackboneSpec::miniature(BackboneKind::Residual);
    s.stem_channels = 0;
    assert!(Backbone::new(s).is_err());
}

#[test]
fn spec_json_rejects_unknown_fields_and_fills_defaults() {
    let s: BackboneSpec = serde_json::from_str(
        r#"{"kind":"inception","stem_channels":8,"stages":[{"blocks":1,"channels":8}],"input_size":[32,32]}"#,
    )
    .unwrap();
    assert_eq!(s.feature_dim, 1000);
    assert_eq!(s.groups, 2);
    let bad = r#"{"kind":"inception","stem_channels":8,"stages":[],"input_size":[32,32],"widht":3}"#;
    assert!(serde_json::from_str::<BackboneSpec>(bad).is_err());
}

#[test]
fn key_set_is_pure_function_of_spec() {
    for kind in BackboneKind::ALL {
        let a = Backbone::new(BackboneSpec::miniature(kind)).unwrap().declare();
        let b = Backbone::new(BackboneSpec::miniature(kind)).unwrap().declare();
        assert_eq!(a, b);
        assert!(a.iter().all(|d| d.name.starts_with(kind.name())));
        let mut names: Vec<_> = a.iter().map(|d| &d.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), a.len());
    }
}

#[test]
fn widening_more_than_doubles_parameters() {
    for kind in BackboneKind::ALL {
        let base = BackboneSpec::miniature(kind).with_feature_dim(16);
        let narrow = Backbone::new(base.clone()).unwrap().param_count();
        let wide = Backbone::new(base.widened(2)).unwrap().param_count();
        assert!(wide > 2 * narrow, "{kind}: {narrow} -> {wide}");
    }
}
