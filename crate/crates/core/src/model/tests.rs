use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::embedding::{split_condition, unify_condition, unify_spatial, FeatureGrid, FeatureLineSet};
use crate::error::Error;
use crate::numerics::{grad_check_components, Parameters};
use crate::refiner::{refine_structure, Branch, RefinerStack};

fn refiner(depth: usize, mult: f64) -> RefinerConfig {
    RefinerConfig::with_multiplier(depth, mult)
}

pub(crate) fn small(dim: usize, dc: usize, depth: usize) -> ModelConfig {
    ModelConfig {
        spatial: SpatialConfig {
            dim,
            levels: vec![Extent::Cubic(3), Extent::Cubic(5)],
            channels: 2,
            ssr_resolution: Some(Extent::Cubic(7)),
            pe_frequencies: Some(2),
            refiner: refiner(depth, 1.5),
        },
        condition: (dc > 0).then(|| ConditionConfig {
            params: dc,
            levels: vec![2, 4],
            channels: 2,
            global_resolution: Some(6),
            pe_frequencies: None,
            refiner: refiner(depth, 2.0),
        }),
        decoder: DecoderConfig {
            hidden: 16,
            layers: 3,
            out_dim: 1,
        },
        fusion: Fusion::Concat,
        flags: Flags::default(),
        init: InitConfig {
            embedding_range: 0.5,
            rmsnorm_eps: 1e-6,
        },
    }
}

/// Gives every refiner a nonzero output path.
fn perturb<T: crate::numerics::Real>(m: &mut DrrNet<T>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    m.visit_mut("", &mut |name, t| {
        if name.contains(".out.") {
            t.data_mut().iter_mut().for_each(|v| *v = T::lit(rng.random_range(-0.3..0.3)));
        }
    });
}

fn points(rng: &mut ChaCha8Rng, n: usize, dx: usize, dc: usize) -> (Vec<f32>, Vec<f32>) {
    let x = (0..n * dx).map(|_| rng.random_range(-1.0f32..=1.0)).collect();
    let c = (0..n * dc).map(|_| rng.random_range(0.0f32..=1.0)).collect();
    (x, c)
}

#[test]
fn unconditioned_model_is_spatial_encoder_plus_decoder() {
    let m = DrrNet::<f32>::init(&small(2, 0, 1), 1).unwrap();
    assert!(m.condition.is_none());
    let x = [0.2f32, -0.4];
    let feat = m.spatial.forward(&x, 1).unwrap();
    assert_eq!(m.forward(&x, &[], 1).unwrap(), m.decoder.forward(&feat, 1));
}

#[test]
fn zero_decoder_outputs_zero() {
    let mut m = DrrNet::<f32>::init(&small(3, 2, 1), 2).unwrap();
    m.decoder.visit_mut("", &mut |_, t| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (x, c) = points(&mut rng, 50, 3, 2);
    assert!(m.forward(&x, &c, 50).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn forward_matches_hand_assembled_pipeline() {
    let cfg = small(3, 2, 2);
    let mut m = DrrNet::<f64>::init(&cfg, 3).unwrap();
    perturb(&mut m, 4);
    let s = &m.spatial;
    let unified = unify_spatial(&s.sources, Some(&[7, 7, 7]), Some(2)).unwrap();
    let spatial = refine_structure(&unified, s.refiner.as_ref().unwrap()).unwrap();
    let cb = m.condition.as_ref().unwrap();
    let lines = FeatureLineSet::new(cb.sources.chunks(2).map(|c| c.to_vec()).collect()).unwrap();
    let cu = unify_condition(&lines, Some(6)).unwrap();
    let cond = split_condition(&refine_structure(&cu, cb.refiner.as_ref().unwrap()).unwrap(), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let c: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..=1.0)).collect();
        let mut feat = spatial.grid.query(&x).unwrap();
        for (line, &ck) in cond.iter().zip(&c) {
            feat.extend(line.query(&[2.0 * ck - 1.0]).unwrap());
        }
        let oracle = m.decoder.forward(&feat, 1)[0];
        let got = m.forward(&x, &c, 1).unwrap()[0];
        assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
    }
}

#[test]
fn bake_matches_training_path() {
    let configs = [small(3, 2, 2), small(3, 0, 1), small(2, 3, 3), small(1, 1, 2), {
        let mut c = small(3, 2, 0);
        c.flags.pi = false;
        c
    }];
    for (i, cfg) in configs.iter().enumerate() {
        let mut m = DrrNet::<f32>::init(cfg, 10 + i as u64).unwrap();
        perturb(&mut m, i as u64);
        let baked = bake(&m, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let n = 2000;
        let (x, c) = points(&mut rng, n, cfg.dim_x(), cfg.dim_c());
        let a = m.forward(&x, &c, n).unwrap();
        let b = baked_forward(&baked, &x, &c, n).unwrap();
        let worst = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0f32, f32::max);
        assert!(worst <= 1e-5, "config {i}: max diff {worst}");
        let pq = m.forward_per_query(&x[..100 * cfg.dim_x()], &c[..100 * cfg.dim_c()], 100).unwrap();
        assert!(pq.iter().zip(&a).all(|(p, q)| (p - q).abs() <= 1e-5));
    }
}

#[test]
fn baked_batching_and_repeat_are_exact() {
    let cfg = small(3, 2, 2);
    let mut m = DrrNet::<f32>::init(&cfg, 7).unwrap();
    perturb(&mut m, 7);
    let baked = bake(&m, false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (x, c) = points(&mut rng, 64, 3, 2);
    let batch = baked.forward(&x, &c, 64).unwrap();
    assert_eq!(batch, baked.forward(&x, &c, 64).unwrap());
    for i in 0..64 {
        let one = baked.forward(&x[i * 3..i * 3 + 3], &c[i * 2..i * 2 + 2], 1).unwrap();
        assert_eq!(one[0].to_bits(), batch[i].to_bits(), "row {i}");
    }
}

#[test]
fn bake_is_deterministic_and_drops_refiners() {
    let cfg = small(3, 2, 2);
    let m = DrrNet::<f32>::init(&cfg, 9).unwrap();
    let a = bake(&m, false).unwrap();
    let b = bake(&m, false).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert!(a.stored_values() < m.count_params() + a.spatial.data().len());
    let kept = bake(&m, true).unwrap();
    assert!(kept.retained.is_some());
    assert_ne!(kept.fingerprint(), a.fingerprint());
}

#[test]
fn embedding_only_single_level_bakes_to_base_grid() {
    let mut cfg = small(2, 0, 2);
    cfg.spatial.levels = vec![Extent::Cubic(6)];
    cfg.flags = Flags {
        spatial_refiner: false,
        condition_refiner: false,
        pi: false,
    };
    let m = DrrNet::<f32>::init(&cfg, 1).unwrap();
    let baked = bake(&m, false).unwrap();
    assert_eq!(baked.spatial.data(), m.spatial.sources[0].data());
}

#[test]
fn bake_rejects_non_finite_parameters() {
    let mut m = DrrNet::<f32>::init(&small(2, 1, 1), 1).unwrap();
    m.decoder.layers[1].bias.data_mut()[0] = f32::NAN;
    match bake(&m, false) {
        Err(crate::Error::Numeric(msg)) => assert!(msg.contains("decoder.1.bias"), "{msg}"),
        other => panic!("expected numeric error, got {other:?}"),
    }
}

#[test]
fn parameter_counts() {
    let plan = crate::embedding::UnifyPlan::spatial(&[(vec![4], 2)], None).unwrap();
    let grid = FeatureGrid::<f32>::zeros(vec![4], 2).unwrap();
    let b = Branch::new(vec![grid.clone()], plan.clone(), None, None).unwrap();
    assert_eq!(b.param_count(), 8);
    let with = Branch::new(vec![grid], plan, None, Some(RefinerStack::zeros(2, 5, 1, 1e-6))).unwrap();
    assert_eq!(with.param_count(), 8 + 2 + 2 * (2 * 5 + 5) + (5 * 2 + 2));
}

/// Spatial grids [16, 24, 32, 48]³ with 2 channels, SSR 128, 6 frequencies,
/// 4 refiner blocks of hidden width 384; six condition parameters on
/// [2, 4, 8, 16] lines with 2 channels, 2 refiner blocks of width 128; three-layer decoder of width 128.
pub(crate) fn cloverleaf() -> ModelConfig {
    ModelConfig {
        spatial: SpatialConfig {
            dim: 3,
            levels: [16, 24, 32, 48].iter().map(|&r| Extent::Cubic(r)).collect(),
            channels: 2,
            ssr_resolution: Some(Extent::Cubic(128)),
            pe_frequencies: Some(6),
            refiner: RefinerConfig::with_hidden(4, 384),
        },
        condition: Some(ConditionConfig {
            params: 6,
            levels: vec![2, 4, 8, 16],
            channels: 2,
            global_resolution: None,
            pe_frequencies: None,
            refiner: RefinerConfig::with_hidden(2, 128),
        }),
        decoder: DecoderConfig {
            hidden: 128,
            layers: 3,
            out_dim: 1,
        },
        fusion: Fusion::Concat,
        flags: Flags::default(),
        init: InitConfig::default(),
    }
}

#[test]
fn cloverleaf_scale_parameter_count() {
    let cfg = cloverleaf();
    assert_eq!((cfg.spatial_width(), cfg.condition_width()), (96, 48));
    let m = DrrNet::<f32>::init(&cfg, 0).unwrap();
    let embed = 2 * (16usize.pow(3) + 24usize.pow(3) + 32usize.pow(3) + 48usize.pow(3)) + 6 * 2 * (2 + 4 + 8 + 16);
    let block = |w: usize, h: usize| w + 2 * (w * h + h) + h * w + w;
    let decoder = 144 * 128 + 128 + 128 * 128 + 128 + 128 + 1;
    assert_eq!(m.count_params(), embed + 4 * block(96, 384) + 2 * block(48, 128) + decoder);
    let total = m.count_params() as f64;
    assert!((total / 0.9e6 - 1.0).abs() <= 0.15, "{total}");

    let mut plain = cfg.clone();
    plain.flags = Flags {
        spatial_refiner: false,
        condition_refiner: false,
        pi: false,
    };
    let base = DrrNet::<f32>::init(&plain, 0).unwrap().count_params() as f64;
    assert!((base / 0.37e6 - 1.0).abs() <= 0.15, "{base}");
    assert!(base < total);
}

#[test]
fn flops_accounting() {
    let per = |depth: usize, mode| estimate_flops(&small(3, 2, depth), mode).per_point;
    let baked: Vec<u64> = [2, 4, 8].iter().map(|&d| per(d, QueryMode::Baked).to_bits()).collect();
    assert!(baked.iter().all(|&b| b == baked[0]));
    for d in [1, 2, 4, 8] {
        assert!(per(d, QueryMode::PerQuery) > per(d, QueryMode::Baked));
    }
    let mut one = small(2, 0, 0);
    one.decoder.layers = 1;
    let r = estimate_flops(&one, QueryMode::Baked);
    let w = one.spatial_width();
    let interp = 4.0 * (2 + w) as f64 * 2.0;
    assert_eq!(r.per_point - interp, 2.0 * w as f64 * 1.0);
    assert_eq!(r.tflops_per_1e9_points, r.per_point * 1e9 / 1e12);
}

#[test]
fn fresh_refiners_leave_the_pi_model_unchanged() {
    let cfg = small(3, 2, 3);
    let full = DrrNet::<f32>::init(&cfg, 11).unwrap();
    let mut pi_only = full.clone();
    pi_only.spatial.refiner = None;
    pi_only.condition.as_mut().unwrap().refiner = None;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (x, c) = points(&mut rng, 200, 3, 2);
    assert_eq!(full.forward(&x, &c, 200).unwrap(), pi_only.forward(&x, &c, 200).unwrap());
}

#[test]
fn full_network_gradients() {
    let cfg = small(3, 2, 2);
    let mut m = DrrNet::<f64>::init(&cfg, 12).unwrap();
    perturb(&mut m, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let n = 100;
    let x: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let c: Vec<f64> = (0..n * 2).map(|_| rng.random_range(0.0..=1.0)).collect();
    let t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
    let mut flat = Vec::new();
    m.visit("", &mut |_, p| flat.extend_from_slice(p.data()));
    let comps: Vec<usize> = (0..300).map(|_| rng.random_range(0..flat.len())).collect();
    let err = grad_check_components(
        |p| {
            let mut net = m.clone();
            let mut off = 0;
            net.visit_mut("", &mut |_, t| {
                let len = t.numel();
                t.data_mut().copy_from_slice(&p[off..off + len]);
                off += len;
            });
            let (y, cache) = net.forward_cached(&x, &c, n)?;
            let (loss, dy) = crate::numerics::l2_loss(&y, &t, n)?;
            net.zero_grad();
            net.backward(&cache, &dy);
            let mut g = Vec::new();
            net.visit("", &mut |_, p| g.extend_from_slice(p.grad().unwrap()));
            Ok((loss, g))
        },
        &flat,
        1e-6,
        &comps,
    )
    .unwrap();
    assert!(err < 1e-5, "relative gradient error {err}");
}

#[test]
fn baked_features_are_affine_inside_a_cell() {
    let cfg = small(3, 1, 2);
    let mut m = DrrNet::<f32>::init(&cfg, 15).unwrap();
    perturb(&mut m, 15);
    let baked = bake(&m, false).unwrap();
    // unified lattice has 7 vertices per axis; cell [−1/3, 0] on axis 0
    let at = |t: f32| baked.features(&[t, 0.1, -0.55], &[0.4], 1).unwrap();
    let (a, b, mid) = (at(-0.3), at(-0.05), at(-0.175));
    for ((p, q), r) in a.iter().zip(&b).zip(&mid) {
        assert!(((p + q) / 2.0 - r).abs() < 1e-5);
    }
}

#[test]
fn nan_inputs_are_rejected() {
    let m = DrrNet::<f32>::init(&small(2, 1, 1), 1).unwrap();
    assert!(matches!(m.forward(&[0.0, f32::NAN], &[0.5], 1), Err(crate::Error::Input(_))));
    assert!(matches!(m.forward(&[0.0, 0.0], &[f32::NAN], 1), Err(crate::Error::Input(_))));
    assert!(matches!(m.forward(&[0.0], &[0.5], 1), Err(crate::Error::Dimension(_))));
}

#[test]
fn refiner_width_is_set_directly_or_by_multiplier() {
    assert_eq!(RefinerConfig::with_hidden(2, 40).hidden(96), 40);
    assert_eq!(RefinerConfig::with_multiplier(2, 2.67).hidden(48), 128);
    let mut cfg = small(2, 1, 2);
    cfg.spatial.refiner.hidden = Some(8);
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    cfg.spatial.refiner = RefinerConfig { depth: 2, hidden: None, hidden_multiplier: None };
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    cfg.flags.spatial_refiner = false;
    cfg.validate().unwrap();
    let text = "depth = 3\nhidden = 24\n";
    let parsed: RefinerConfig = toml::from_str(text).unwrap();
    assert_eq!(parsed, RefinerConfig::with_hidden(3, 24));
}
