use super::*;
use crate::autodiff::gradcheck::max_relative_error;
use crate::autodiff::{BoundParams, Var};
use ndarray::array;
use proptest::prelude::*;

fn tiny_config(ablation: Ablation) -> ModelConfig {
    ModelConfig {
        input_len: 8,
        horizon: 2,
        patch_len: 2,
        d_model: 8,
        heads: 2,
        temporal_depth: 1,
        spatial_depth: 1,
        ffn_mult: 2,
        dropout: 0.0,
        activation: Activation::Relu,
        ablation,
    }
}

fn window(b: usize, l: usize, n: usize, phase: f64) -> Tensor {
    Tensor::from_fn(&[b, l, n], |k| ((k as f64) * 0.37 + phase).sin())
}

fn with_net<T>(model: &Model, f: impl FnOnce(&mut Graph, &Net<'_>) -> T) -> T {
    let mut g = Graph::new();
    let p = model.params.attach(&mut g);
    let net = Net {
        cfg: &model.config,
        p: &p,
    };
    f(&mut g, &net)
}

#[test]
fn patch_tokenize_shapes() {
    let cfg = ModelConfig {
        input_len: 24,
        patch_len: 6,
        d_model: 8,
        heads: 2,
        ..ModelConfig::default()
    };
    let m = Model::init(cfg.clone(), 3, 1).unwrap();
    let shape = with_net(&m, |g, net| {
        let x = g.constant(window(2, 24, 3, 0.0));
        let t = net.patch_tokenize(g, x).unwrap();
        g.shape(t).to_vec()
    });
    assert_eq!(shape, vec![2, 3, 4, 8]);

    let np = Model::init(
        ModelConfig {
            ablation: Ablation::NoPatch,
            ..cfg
        },
        3,
        1,
    )
    .unwrap();
    let shape = with_net(&np, |g, net| {
        let x = g.constant(window(1, 24, 3, 0.0));
        let t = net.patch_tokenize(g, x).unwrap();
        g.shape(t).to_vec()
    });
    assert_eq!(shape, vec![1, 3, 24, 8]);
}

#[test]
fn positional_encoding_origin() {
    let pe = positional_encoding(3, 6);
    for i in 0..6 {
        assert_eq!(pe.at(&[0, i]), if i % 2 == 0 { 0.0 } else { 1.0 });
    }
    assert!((pe.at(&[1, 0]) - 1f64.sin()).abs() < 1e-15);
}

#[test]
fn single_key_attention_is_value_projection() {
    let m = Model::init(tiny_config(Ablation::Full), 2, 3).unwrap();
    let (att, manual) = with_net(&m, |g, net| {
        let x = g.constant(Tensor::from_fn(&[2, 1, 8], |k| k as f64 * 0.1 - 0.3));
        let a = net.attention(g, x, x, "temporal.0.attn").unwrap();
        let v = g.matmul(x, net.p.get("temporal.0.attn.wv")).unwrap();
        let o = g.matmul(v, net.p.get("temporal.0.attn.wo.w")).unwrap();
        let o = g.add(o, net.p.get("temporal.0.attn.wo.b")).unwrap();
        (g.value(a).clone(), g.value(o).clone())
    });
    for (a, b) in att.data().iter().zip(manual.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn encoder_block_is_permutation_equivariant() {
    let m = Model::init(tiny_config(Ablation::Full), 2, 5).unwrap();
    let z = Tensor::from_fn(&[4, 8], |k| ((k * 7 % 11) as f64).cos());
    let mut swapped = z.clone();
    for c in 0..8 {
        swapped.data_mut().swap(8 + c, 3 * 8 + c);
    }
    let run = |t: &Tensor| {
        with_net(&m, |g, net| {
            let x = g.constant(t.clone());
            let y = net.encoder_block(g, x, "temporal.0").unwrap();
            g.value(y).clone()
        })
    };
    let (a, b) = (run(&z), run(&swapped));
    for row in 0..4 {
        let src = match row {
            1 => 3,
            3 => 1,
            r => r,
        };
        for c in 0..8 {
            assert!((a.at(&[src, c]) - b.at(&[row, c])).abs() < 1e-12);
        }
    }
}

fn mix(a: Array2<f64>, h: Tensor) -> Tensor {
    let mut g = Graph::new();
    let n = a.nrows();
    let av = g.constant(Tensor::new(vec![n, n], a.iter().copied().collect()).unwrap());
    let hv = g.constant(h);
    let y = spatial_mix(&mut g, av, hv).unwrap();
    g.value(y).clone()
}

#[test]
fn spatial_mix_cases() {
    let h = Tensor::from_fn(&[3, 4], |k| k as f64 - 2.5);
    assert_eq!(mix(Array2::eye(3), h.clone()), h);

    let same = Tensor::from_fn(&[2, 4], |k| (k % 4) as f64 * 1.5);
    let avg = mix(array![[0.5, 0.5], [0.0, 1.0]], same.clone());
    assert_eq!(avg, same);

    // Node 1's row is one-hot on node 0: it copies node 0 exactly.
    let two = Tensor::new(vec![2, 4], h.data()[..8].to_vec()).unwrap();
    let onehot = mix(array![[0.5, 0.5], [1.0, 0.0]], two);
    assert_eq!(&onehot.data()[4..], &h.data()[..4]);

    let mut g = Graph::new();
    let a = g.constant(Tensor::eye(4));
    let hv = g.constant(h);
    assert!(matches!(
        spatial_mix(&mut g, a, hv),
        Err(Error::Shape { op: "matmul", .. })
    ));
}

#[test]
fn spatial_encode_depth_zero_is_identity() {
    let cfg = ModelConfig {
        spatial_depth: 0,
        ..tiny_config(Ablation::Full)
    };
    let m = Model::init(cfg, 3, 2).unwrap();
    let h = Tensor::from_fn(&[1, 3, 8], |k| k as f64 * 0.01);
    let out = with_net(&m, |g, net| {
        let x = g.constant(h.clone());
        let s = net.spatial_encode(g, x).unwrap();
        g.value(s).clone()
    });
    assert_eq!(out, h);
}

#[test]
fn identical_nodes_get_identical_spatial_tokens() {
    let m = Model::init(tiny_config(Ablation::Full), 3, 2).unwrap();
    // Nodes 0 and 2 share inputs and adjacency rows.
    let h = Tensor::from_fn(&[1, 3, 8], |k| {
        let (node, c) = (k / 8, k % 8);
        if node == 1 {
            (c as f64).cos()
        } else {
            (c as f64 * 0.3).sin()
        }
    });
    let a = Tensor::new(
        vec![1, 3, 3],
        vec![0.5, 0.25, 0.25, 0.1, 0.8, 0.1, 0.5, 0.25, 0.25],
    )
    .unwrap();
    let out = with_net(&m, |g, net| {
        let x = g.constant(h.clone());
        let av = g.constant(a.clone());
        let mixed = spatial_mix(g, av, x).unwrap();
        let s = net.spatial_encode(g, mixed).unwrap();
        g.value(s).clone()
    });
    for c in 0..8 {
        assert!((out.at(&[0, 0, c]) - out.at(&[0, 2, c])).abs() < 1e-12);
    }
    assert_eq!(out.shape(), &[1, 3, 8]);
}

#[test]
fn forecast_shape_and_finiteness_for_every_ablation() {
    for ab in Ablation::ALL {
        for horizon in [1, 3] {
            let cfg = ModelConfig {
                horizon,
                ..tiny_config(ab)
            };
            let m = Model::init(cfg, 4, 9).unwrap();
            let x = window(3, 8, 4, 0.2);
            let a = HourlyAdjacency::identity(4).batch(&[0, 5, 23]).unwrap();
            let y = m.predict_batch(&x, &a).unwrap();
            assert_eq!(y.shape(), &[3, horizon, 4], "{ab}");
            assert!(y.is_finite());
        }
    }
}

#[test]
fn no_cross_attention_ignores_the_window() {
    let m = Model::init(tiny_config(Ablation::NoCrossAttn), 3, 4).unwrap();
    let bank = HourlyAdjacency::identity(3);
    let a = m.forward(&Array2::from_elem((8, 3), 0.0), 3, &bank).unwrap();
    let b = m.forward(&Array2::from_shape_fn((8, 3), |(t, i)| (t * 3 + i) as f64), 17, &bank).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_weights_give_bias() {
    let mut m = Model::init(tiny_config(Ablation::Full), 3, 4).unwrap();
    let names = m.params.names().to_vec();
    for name in names {
        if name == "head.b" {
            continue;
        }
        let t = m.params.get_mut(&name).unwrap();
        let keep_gain = name.ends_with(".g");
        t.data_mut().iter_mut().for_each(|v| *v = if keep_gain { 1.0 } else { 0.0 });
    }
    m.params.get_mut("head.b").unwrap().data_mut()[0] = 0.75;
    let y = m
        .forward(&Array2::zeros((8, 3)), 0, &HourlyAdjacency::identity(3))
        .unwrap();
    assert!(y.iter().all(|v| *v == 0.75));
}

#[test]
fn hour_tag_selects_adjacency() {
    let m = Model::init(tiny_config(Ablation::Full), 3, 8).unwrap();
    let mut hours = vec![Array2::eye(3); HOURS];
    hours[9] = array![[0.2, 0.4, 0.4], [0.4, 0.2, 0.4], [0.4, 0.4, 0.2]];
    let bank = HourlyAdjacency::from_normalized(hours).unwrap();
    let w = Array2::from_shape_fn((8, 3), |(t, i)| ((t + 2 * i) as f64 * 0.4).sin());
    let a = m.forward(&w, 8, &bank).unwrap();
    let b = m.forward(&w, 9, &bank).unwrap();
    assert!(a.iter().zip(b.iter()).any(|(x, y)| (x - y).abs() > 1e-9));
    assert_eq!(a, m.forward(&w, 8, &bank).unwrap());
    assert!(matches!(m.forward(&w, 24, &bank), Err(Error::Domain(_))));
}

#[test]
fn missing_hours_rejected() {
    assert!(matches!(
        HourlyAdjacency::from_normalized(vec![Array2::eye(2); 23]),
        Err(Error::Domain(_))
    ));
}

#[test]
fn parameter_counts_follow_ablation() {
    let count = |ab| Model::init(tiny_config(ab), 3, 0).unwrap();
    let full = count(Ablation::Full);
    let ncx = count(Ablation::NoCrossAttn);
    let enc = count(Ablation::EncoderOnly);
    let dec = count(Ablation::DecoderOnly);
    assert!(ncx.param_count() < full.param_count());
    assert!(!enc.params.names().iter().any(|n| n.starts_with("decoder.")));
    assert!(!dec.params.names().iter().any(|n| n.starts_with("temporal.") || n.starts_with("spatial.")));
    assert!(!ncx.params.names().iter().any(|n| n.contains(".cross.")));
    assert_eq!(full.params.get("node_emb").unwrap().shape(), &[3, 8]);
    assert_eq!(full.params.get("decoder.query").unwrap().shape(), &[2, 8]);
}

fn loss_fn<'a>(model: &'a Model, x: &'a Tensor, a: &'a Tensor, target: &'a Tensor) -> impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'a {
    move |g: &mut Graph, vars: &[Var]| {
        let p: BoundParams = model.params.bind(vars.to_vec())?;
        let net = Net {
            cfg: &model.config,
            p: &p,
        };
        let xv = g.constant(x.clone());
        let av = g.constant(a.clone());
        let y = net.forward(g, xv, av)?;
        g.mse_loss(y, target)
    }
}

#[test]
fn end_to_end_gradient_check() {
    for ab in [Ablation::Full, Ablation::EncoderOnly, Ablation::DecoderOnly] {
        let cfg = ModelConfig {
            dropout: 0.1,
            ..tiny_config(ab)
        };
        let model = Model::init(cfg, 3, 11).unwrap();
        let x = window(2, 8, 3, 0.5);
        let hours = vec![
            Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 0.6 } else { 0.2 });
            HOURS
        ];
        let a = HourlyAdjacency::from_normalized(hours).unwrap().batch(&[4, 4]).unwrap();
        let target = Tensor::from_fn(&[2, 2, 3], |k| (k as f64 * 0.9).cos());
        let f = loss_fn(&model, &x, &a, &target);
        let err = max_relative_error(&f, model.params.tensors(), 1e-5).unwrap();
        assert!(err < 1e-3, "{ab}: relative error {err:e}");
    }
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = Model::init(tiny_config(Ablation::Full), 3, 21).unwrap();
    m.save(dir.path(), "abc123").unwrap();
    let (back, sc) = Model::load(dir.path()).unwrap();
    assert_eq!(back, m);
    assert_eq!(sc.bank_fingerprint, "abc123");
    assert_eq!(sc.param_count, m.param_count());

    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(
        Model::load(empty.path()),
        Err(Error::MissingArtifact { producer: "train", .. })
    ));
}

proptest! {
    #[test]
    fn convex_mixing_bounded(raw in proptest::collection::vec(0.0f64..1.0, 9), h in proptest::collection::vec(-5.0f64..5.0, 12)) {
        let a = crate::adjacency::row_normalize(&Array2::from_shape_vec((3, 3), raw).unwrap(), crate::adjacency::ROW_NORM_EPS);
        let ht = Tensor::new(vec![3, 4], h).unwrap();
        let out = mix(a, ht.clone());
        for c in 0..4 {
            let col_max = (0..3).map(|r| ht.at(&[r, c]).abs()).fold(0.0, f64::max);
            for r in 0..3 {
                prop_assert!(out.at(&[r, c]).abs() <= col_max + 1e-12);
            }
        }
    }
}
