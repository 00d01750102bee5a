use mscvit::blocks::{AttentionKind, BlockSpec, Cff, Lmssa, MscBlock};
use mscvit::model::{
    build_model, complexity_lmssa, complexity_mhsa, count_params_for, estimate_flops, KernelSchedule, ModelConfig,
    Variant,
};
use mscvit::nn::{Init, Mode, Module};
use mscvit::tensor::{Graph, Tensor};
use mscvit::wavelet::WtConv;
use proptest::prelude::*;

fn seq(shape: &[usize], k: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|i| ((i as f64 + 1.0) * k).sin()).collect()).unwrap()
}

fn variants() -> impl Strategy<Value = Variant> {
    prop_oneof![Just(Variant::T), Just(Variant::Xs), Just(Variant::S)]
}

fn configs() -> impl Strategy<Value = ModelConfig> {
    (
        variants(),
        prop_oneof![Just(224usize), Just(32)],
        prop_oneof![
            Just(KernelSchedule::All3),
            Just(KernelSchedule::All5),
            Just(KernelSchedule::Small3Large5),
            Just(KernelSchedule::Small5Large3)
        ],
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
        2usize..200,
    )
        .prop_map(|(v, res, ks, normal, use_pe, cff, classes)| {
            let mut cfg = ModelConfig::variant(v).with_resolution(res).unwrap().with_kernels(ks);
            if normal {
                cfg.attention = AttentionKind::Normal;
            }
            cfg.use_pe = use_pe;
            cfg.cff = cff;
            cfg.num_classes = classes;
            cfg
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn counts_are_pure_functions_of_the_config(cfg in configs()) {
        let a = estimate_flops(&cfg).unwrap();
        let b = estimate_flops(&cfg.clone()).unwrap();
        prop_assert_eq!(a.by_scope, b.by_scope);
        prop_assert_eq!(count_params_for(&cfg).unwrap(), count_params_for(&cfg).unwrap());
    }

    #[test]
    fn config_text_roundtrips(cfg in configs()) {
        prop_assert_eq!(ModelConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn lightweight_has_fewer_params_than_normal(v in variants(), res in prop_oneof![Just(224usize), Just(32)]) {
        let light = ModelConfig::variant(v).with_resolution(res).unwrap();
        let mut normal = light.clone();
        normal.attention = AttentionKind::Normal;
        prop_assert!(count_params_for(&light).unwrap() < count_params_for(&normal).unwrap());
    }
}

#[test]
fn reduced_stages_cost_less_than_full_attention() {
    for v in [Variant::T, Variant::Xs, Variant::S] {
        let cfg = ModelConfig::variant(v);
        for (st, side) in cfg.stages.iter().zip(cfg.stage_resolutions().unwrap()) {
            let n = side * side;
            let d = st.dim - st.conv_channels(cfg.cff);
            let lm = complexity_lmssa(n, d, &st.rs).unwrap();
            let mh = complexity_mhsa(n, d);
            if st.rs.iter().any(|&r| r > 1) {
                assert!(lm < mh, "{v} stage dim {}: {lm} vs {mh}", st.dim);
            } else {
                assert_eq!(lm, mh);
            }
        }
    }
}

fn stage_spec(cfg: &ModelConfig, i: usize) -> BlockSpec {
    let st = &cfg.stages[i];
    BlockSpec {
        channels: st.dim,
        rs: st.rs.clone(),
        conv_channels: st.conv_channels(cfg.cff),
        kernel: st.kernel,
        padding: st.padding,
        ffn_ratio: cfg.ffn_ratio,
        head_dim: cfg.head_dim,
        attention: cfg.attention,
        lfe: cfg.lfe,
    }
}

#[test]
fn blocks_preserve_shape_at_every_published_stage() {
    for v in [Variant::T, Variant::Xs, Variant::S] {
        let cfg = ModelConfig::variant(v);
        for (i, side) in cfg.stage_resolutions().unwrap().into_iter().enumerate() {
            let spec = stage_spec(&cfg, i);
            let block = MscBlock::<f32>::new(&mut Init::new(0), "b", &spec).unwrap();
            let g = Graph::no_grad();
            let y = block.forward(&g, g.constant(Tensor::zeros(&[1, spec.channels, side, side])), Mode::Eval).unwrap();
            assert_eq!(y.shape(), vec![1, spec.channels, side, side], "{v} stage {}", i + 1);
            let groups = &block.cff.attn.groups;
            assert_eq!(groups.len(), spec.rs.len());
            let covered: usize = groups.iter().map(|h| h.heads * h.head_dim()).sum();
            assert_eq!(covered, spec.channels - spec.conv_channels);
        }
    }
}

#[test]
fn fusion_puts_the_conv_path_first() {
    let attn = Lmssa::<f64>::new(&mut Init::new(0), "a", 6, &[2, 1], 32, AttentionKind::Lightweight).unwrap();
    let mut cff = Cff::new(&mut Init::new(1), "cff", 8, 2, 3, 1, attn).unwrap();
    cff.attn.proj.visit_mut(&mut |p| p.value.data_mut().fill(0.0));
    let g = Graph::no_grad();
    let y = cff.forward(&g, g.constant(seq(&[1, 8, 4, 4], 0.3))).unwrap().to_tensor();
    assert_eq!(y.shape(), &[1, 8, 4, 4]);
    let plane = 16;
    assert!(y.data()[..2 * plane].iter().any(|&v| v != 0.0));
    assert!(y.data()[2 * plane..].iter().all(|&v| v == 0.0));
}

#[test]
fn wtconv_commutes_with_two_pixel_shifts_in_the_interior() {
    let mut m = WtConv::<f64>::new(&mut Init::new(0), "wt", 2);
    let mut init = Init::new(3);
    m.visit_mut(&mut |p| p.value = init.trunc_normal(p.value.shape(), 0.5));
    let (side, pad) = (16, 4);
    let inner = seq(&[1, 2, side - 2 * pad, side - 2 * pad], 0.61);
    let place = |dy: usize, dx: usize| {
        let mut x = Tensor::<f64>::zeros(&[1, 2, side, side]);
        let w = side - 2 * pad;
        for c in 0..2 {
            for i in 0..w {
                for j in 0..w {
                    x.data_mut()[c * side * side + (pad + dy + i) * side + pad + dx + j] = inner.data()[c * w * w + i * w + j];
                }
            }
        }
        x
    };
    let g = Graph::no_grad();
    let y0 = m.forward(&g, g.constant(place(0, 0))).unwrap().to_tensor();
    let y2 = m.forward(&g, g.constant(place(2, 2))).unwrap().to_tensor();
    let mut err = 0.0f64;
    for c in 0..2 {
        for i in 0..side - 2 {
            for j in 0..side - 2 {
                let a = y0.data()[c * side * side + i * side + j];
                let b = y2.data()[c * side * side + (i + 2) * side + j + 2];
                err = err.max((a - b).abs());
            }
        }
    }
    assert!(err < 1e-12, "{err}");
}

#[test]
fn forward_is_bit_deterministic() {
    let cfg = ModelConfig::variant(Variant::T).with_resolution(32).unwrap();
    let model = build_model::<f32>(&cfg, 4).unwrap();
    let x = Tensor::<f32>::from_f64(&[2, 3, 32, 32], seq(&[2, 3, 32, 32], 0.13).data()).unwrap();
    let a = model.predict(&x).unwrap();
    let b = model.predict(&x).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
}
