use hdrtv_core::datagen::{build_pairs, SynthConfig};
use hdrtv_core::metrics::psnr_values;
use hdrtv_core::models::*;
use hdrtv_core::{EncodedImage, Error};
use hdrtv_tensor::{Graph, ParamSet, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: [usize; 4], lo: f32, hi: f32, seed: u64) -> Tensor<f32> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| r.gen_range(lo..hi))
}

fn perturb(params: &mut ParamSet, amp: f32, seed: u64) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += r.gen_range(-amp..amp);
        }
    }
}

fn tiny_synth(count: usize, seed: u64) -> SynthConfig {
    SynthConfig { count, width: 64, height: 64, seed, ..SynthConfig::default() }
}

/// Scalar evaluation of the modulated 1×1 stack at one pixel.
fn mlp_oracle(model: &Agcm, rgb: [f64; 3], v: Option<&[f32]>) -> [f64; 3] {
    let p = &model.params;
    let get = |n: &str| p.get(p.require(n).unwrap()).clone();
    let layers = model.config.base_widths.len() - 1;
    let mut h: Vec<f64> = rgb.to_vec();
    for l in 0..layers {
        let w = get(&format!("agcm.base.{l}.weight"));
        let b = get(&format!("agcm.base.{l}.bias"));
        let [o, i, ..] = w.shape();
        let mut out: Vec<f64> = (0..o)
            .map(|r| b.at([r, 0, 0, 0]) as f64 + (0..i).map(|c| w.at([r, c, 0, 0]) as f64 * h[c]).sum::<f64>())
            .collect();
        if let Some(v) = v {
            let dense = |name: &str| {
                let w = get(&format!("agcm.gfm.{l}.{name}.weight"));
                let b = get(&format!("agcm.gfm.{l}.{name}.bias"));
                (0..o)
                    .map(|r| b.at([r, 0, 0, 0]) as f64 + (0..v.len()).map(|c| w.at([r, c, 0, 0]) as f64 * v[c] as f64).sum::<f64>())
                    .collect::<Vec<f64>>()
            };
            let (s, t) = (dense("scale"), dense("shift"));
            for r in 0..o {
                out[r] = out[r] * s[r] + t[r];
            }
        }
        if l + 1 < layers {
            out.iter_mut().for_each(|x| *x = x.max(0.0));
        }
        h = out;
    }
    [h[0], h[1], h[2]]
}

#[test]
fn agcm_parameter_counts() {
    let base = Agcm::new(AgcmConfig::base_only(), 0, AgcmInit::Kaiming).unwrap();
    assert_eq!(base.count_params(), 4611);
    let full = Agcm::new(AgcmConfig::default(), 0, AgcmInit::Kaiming).unwrap();
    assert_eq!(full.count_base_params(), 4611);
    assert_eq!(full.count_params(), 28_073);
    assert!(!base.has_condition() && full.has_condition());
}

#[test]
fn agcm_identity_and_neutral_modulation() {
    let x = rand_tensor([2, 3, 5, 7], 0.0, 1.0, 1);
    let mut m = Agcm::new(AgcmConfig::default(), 3, AgcmInit::Kaiming).unwrap();
    m.set_identity();
    let v = rand_tensor([2, 32, 1, 1], -1.0, 1.0, 2);
    assert_eq!(m.map_pixels(&x, Some(&v)).unwrap(), x);

    let mut m = Agcm::new(AgcmConfig::default(), 4, AgcmInit::Kaiming).unwrap();
    m.set_neutral_modulation();
    assert_eq!(m.map_pixels(&x, Some(&v)).unwrap(), m.base_forward(&x).unwrap());

    // identity-adjacent starts exactly at the identity
    let m = Agcm::new(AgcmConfig::default(), 5, AgcmInit::IdentityAdjacent).unwrap();
    assert_eq!(m.map_pixels(&x, Some(&v)).unwrap(), x);
}

#[test]
fn agcm_matches_scalar_oracle() {
    let mut m = Agcm::new(AgcmConfig::default(), 11, AgcmInit::Kaiming).unwrap();
    perturb(&mut m.params, 0.2, 12);
    let x = rand_tensor([1, 3, 4, 6], 0.0, 1.0, 13);
    let cond = rand_tensor([1, 3, 32, 32], 0.0, 1.0, 14);
    let v = m.condition_vectors(&cond, false, 0).unwrap();
    let y = m.map_pixels(&x, Some(&v)).unwrap();
    let yb = m.base_forward(&x).unwrap();
    for py in 0..4 {
        for px in 0..6 {
            let rgb = [0, 1, 2].map(|c| x.at([0, c, py, px]) as f64);
            let want = mlp_oracle(&m, rgb, Some(v.data()));
            let want_b = mlp_oracle(&m, rgb, None);
            for c in 0..3 {
                assert!((y.at([0, c, py, px]) as f64 - want[c]).abs() < 1e-5);
                assert!((yb.at([0, c, py, px]) as f64 - want_b[c]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn chunked_inference_equals_single_graph() {
    let mut m = Agcm::new(AgcmConfig::default(), 21, AgcmInit::Kaiming).unwrap();
    perturb(&mut m.params, 0.1, 22);
    // more pixels than one inference chunk
    let x = rand_tensor([1, 3, 190, 190], 0.0, 1.0, 23);
    let v = rand_tensor([1, 32, 1, 1], -1.0, 1.0, 24);
    let mut g = Graph::new();
    let leaves = m.params.register(&mut g, false);
    let xi = g.input(x.clone());
    let vi = g.input(v.clone());
    let y = m.mapping_graph(&mut g, &leaves, xi, Some(vi)).unwrap();
    assert_eq!(&m.map_pixels(&x, Some(&v)).unwrap(), g.value(y));
}

#[test]
fn condition_vector_shape_and_determinism() {
    let m = Agcm::new(AgcmConfig::default(), 31, AgcmInit::Kaiming).unwrap();
    for side in [32, 48, 64] {
        let c = rand_tensor([1, 3, side, side], 0.0, 1.0, side as u64);
        let a = m.condition_vectors(&c, false, 1).unwrap();
        let b = m.condition_vectors(&c, false, 2).unwrap();
        assert_eq!(a.shape(), [1, 32, 1, 1]);
        assert_eq!(a, b);
        assert!(a.is_finite());
    }
    let c = rand_tensor([1, 3, 64, 64], 0.0, 1.0, 5);
    let t1 = m.condition_vectors(&c, true, 1).unwrap();
    let t2 = m.condition_vectors(&c, true, 2).unwrap();
    assert_ne!(t1, t2);
    assert!(m.condition_vectors(&rand_tensor([1, 3, 16, 16], 0.0, 1.0, 6), false, 0).is_err());
    assert!(m.condition_vectors(&rand_tensor([1, 3, 40, 40], 0.0, 1.0, 6), false, 0).is_err());
}

#[test]
fn condition_equals_manual_composition() {
    let mut m = Agcm::new(AgcmConfig::default(), 41, AgcmInit::Kaiming).unwrap();
    perturb(&mut m.params, 0.1, 42);
    let c = rand_tensor([1, 3, 32, 32], 0.0, 1.0, 43);
    let v = m.condition_vectors(&c, false, 0).unwrap();

    let p = &m.params;
    let mut g = Graph::<f32>::new();
    let leaf = |g: &mut Graph<f32>, n: &str| g.input(p.get(p.require(n).unwrap()).clone());
    let mut h = g.input(c);
    for i in 0..4 {
        let w = leaf(&mut g, &format!("agcm.cond.ccb.{i}.weight"));
        let b = leaf(&mut g, &format!("agcm.cond.ccb.{i}.bias"));
        h = g.conv2d(h, w, b, 1, 0).unwrap();
        h = g.avg_pool(h, 2, 2).unwrap();
        h = g.leaky_relu(h, 0.1).unwrap();
        if i < 3 {
            h = g.instance_norm(h, 1e-5).unwrap();
        }
    }
    h = g.feature_dropout(h, 0.5, false, 0).unwrap();
    let w = leaf(&mut g, "agcm.cond.out.weight");
    let b = leaf(&mut g, "agcm.cond.out.bias");
    h = g.conv2d(h, w, b, 1, 0).unwrap();
    h = g.global_avg_pool(h).unwrap();
    assert_eq!(g.value(h), &v);
}

#[test]
fn condition_vector_tracks_exposure() {
    let m = Agcm::new(AgcmConfig::default(), 44, AgcmInit::Kaiming).unwrap();
    let c = rand_tensor([1, 3, 32, 32], 0.05, 0.5, 45);
    let bright = Tensor::from_vec(c.shape(), c.data().iter().map(|v| v * 1.8).collect()).unwrap();
    let a = m.condition_vectors(&c, false, 0).unwrap();
    let b = m.condition_vectors(&bright, false, 0).unwrap();
    let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
    assert!(diff > 1e-3, "condition vector ignores a global exposure change ({diff})");
}

#[test]
fn agcm_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = Agcm::new(AgcmConfig { cond_size: 64, ..AgcmConfig::default() }, 51, AgcmInit::Kaiming).unwrap();
    perturb(&mut m.params, 0.1, 52);
    let path = dir.path().join("a.htvw");
    m.save(&path).unwrap();
    let back = Agcm::load(&path).unwrap();
    assert_eq!(back, m);
    let base = Agcm::new(AgcmConfig::base_only(), 1, AgcmInit::Kaiming).unwrap();
    base.save(&path).unwrap();
    assert_eq!(Agcm::load(&path).unwrap(), base);
    // an LE checkpoint is not an AGCM
    Le::new(LeConfig::default(), 0).unwrap().save(&path).unwrap();
    assert!(matches!(Agcm::load(&path), Err(Error::Param(_))));
    assert!(matches!(Agcm::load(&dir.path().join("missing")), Err(Error::Io { .. })));
}

#[test]
fn agcm_training_contract() {
    let ds = build_pairs(&tiny_synth(4, 0)).unwrap();
    let cfg = TrainConfig { steps: 6, batch_size: 4, lr: 1e-3, seed: 3, log_every: 2, val_every: 3 };
    let run = || train_agcm(Agcm::new(AgcmConfig::default(), 1, AgcmInit::Kaiming).unwrap(), &ds, Some(&ds), &cfg).unwrap();
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert_eq!(la.rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![2, 3, 4, 6]);
    assert!(la.rows[1].val_psnr.is_some() && la.rows[0].val_psnr.is_none());
    assert!(la.to_csv().starts_with("step,loss,val_psnr\n"));

    let empty = ds.truncated(0);
    let err = train_agcm(Agcm::new(AgcmConfig::default(), 1, AgcmInit::Kaiming).unwrap(), &empty, None, &cfg);
    assert!(matches!(err, Err(Error::Param(_))));

    let wild = TrainConfig { lr: 1e30, steps: 20, ..cfg };
    let err = train_agcm(Agcm::new(AgcmConfig::base_only(), 1, AgcmInit::Kaiming).unwrap(), &ds, None, &wild);
    assert!(matches!(err, Err(Error::Divergence { step, .. }) if step > 1), "{err:?}");
}

#[test]
fn infer_tags_and_condition_size() {
    let m = Agcm::new(AgcmConfig::default(), 2, AgcmInit::IdentityAdjacent).unwrap();
    let sdr = EncodedImage::sdr(40, 36, 8, vec![[0.5, 0.25, 1.0]; 40 * 36]).unwrap();
    let out = m.infer(&sdr).unwrap();
    assert_eq!(out.bit_depth(), 16);
    assert_eq!(out.transfer(), hdrtv_core::Transfer::Pq);
    assert_eq!(out.code(3, 3), [0.5, 0.25, 1.0].map(|v: f64| (v * 65535.0).round() / 65535.0));
    let small = EncodedImage::sdr(20, 40, 8, vec![[0.5; 3]; 800]).unwrap();
    assert!(matches!(m.infer(&small), Err(Error::Param(_))));
}

#[test]
fn le_counts_shapes_and_identity() {
    assert_eq!(Le::new(LeConfig::full_scale(), 0).unwrap().count_params(), 1_369_859);
    let le = Le::new(LeConfig::default(), 1).unwrap();
    for (h, w) in [(8, 10), (7, 9), (2, 3)] {
        let x = rand_tensor([1, 3, h, w], 0.0, 1.0, h as u64);
        let y = le.forward_tensor(&x).unwrap();
        assert_eq!(y, x, "{h}x{w}");
    }
    let mut zero = le.clone();
    for t in zero.params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let y = zero.forward_tensor(&rand_tensor([1, 3, 6, 6], 0.0, 1.0, 3)).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
    assert!(le.forward_tensor(&rand_tensor([1, 3, 1, 4], 0.0, 1.0, 3)).is_err());
    assert!(Le::new(LeConfig { channels: 32, blocks: 0 }, 0).is_err());
}

#[test]
fn le_translation_equivariance_on_stride_lattice() {
    let mut le = Le::new(LeConfig::default(), 2).unwrap();
    perturb(&mut le.params, 0.05, 3);
    let big = rand_tensor([1, 3, 64, 66], 0.0, 1.0, 4);
    let a = Tensor::from_fn([1, 3, 64, 64], |[b, c, y, x]| big.at([b, c, y, x]));
    let s = Tensor::from_fn([1, 3, 64, 64], |[b, c, y, x]| big.at([b, c, y, x + 2]));
    let (ya, ys) = (le.forward_tensor(&a).unwrap(), le.forward_tensor(&s).unwrap());
    for c in 0..3 {
        for y in 26..38 {
            for x in 26..36 {
                let d = (ya.at([0, c, y, x + 2]) - ys.at([0, c, y, x])).abs();
                assert!(d < 1e-5, "({c},{y},{x}) {d}");
            }
        }
    }
}

#[test]
fn le_checkpoint_and_training_contract() {
    let dir = tempfile::tempdir().unwrap();
    let mut le = Le::new(LeConfig { channels: 16, blocks: 2 }, 7).unwrap();
    perturb(&mut le.params, 0.01, 8);
    let path = dir.path().join("le.htvw");
    le.save(&path).unwrap();
    assert_eq!(Le::load(&path).unwrap(), le);

    let ds = build_pairs(&tiny_synth(2, 1)).unwrap();
    let agcm = Agcm::new(AgcmConfig::base_only(), 0, AgcmInit::IdentityAdjacent).unwrap();
    let before = agcm.clone();
    let cfg = TrainConfig { steps: 3, batch_size: 2, lr: 1e-4, seed: 1, log_every: 1, val_every: 0 };
    let run = || train_le(Le::new(LeConfig { channels: 16, blocks: 1 }, 0).unwrap(), &agcm, &ds, None, &cfg).unwrap();
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!((a, la.rows.len()), (b, lb.rows.len()));
    assert_eq!(la, lb);
    assert_eq!(agcm, before);
}

#[test]
fn le_overfits_one_pair_beyond_frozen_agcm() {
    let ds = build_pairs(&SynthConfig { patch_size: 32, ..tiny_synth(1, 5) }).unwrap().truncated(1);
    let acfg = TrainConfig { steps: 150, batch_size: 1, lr: 1e-3, seed: 0, log_every: 50, val_every: 0 };
    let (agcm, _) = train_agcm(Agcm::new(AgcmConfig::base_only(), 0, AgcmInit::IdentityAdjacent).unwrap(), &ds, None, &acfg).unwrap();
    let x = agcm.predict_dataset(&ds).unwrap();
    let target = ds.hdr_tensor(&[0]);
    let score = |t: &Tensor<f32>| {
        let p: Vec<f64> = t.data().iter().map(|&v| v as f64).collect();
        let q: Vec<f64> = target.data().iter().map(|&v| v as f64).collect();
        psnr_values(&p, &q)
    };
    let lcfg = TrainConfig { steps: 150, lr: 3e-4, ..acfg };
    let (le, _) = train_le(Le::new(LeConfig::default(), 0).unwrap(), &agcm, &ds, None, &lcfg).unwrap();
    let before = score(&x);
    let after = score(&le.predict(&x).unwrap());
    assert!(after >= before + 1.0, "{before} -> {after}");
}

#[test]
fn highlight_mask_values() {
    assert_eq!(mask_value(0.95, 0.95), 0.0);
    assert_eq!(mask_value(1.0, 0.95), 1.0);
    assert_eq!(mask_value(0.3, 0.95), 0.0);
    assert!((mask_value(0.975, 0.95) - 0.5).abs() < 1e-12);
    let img = EncodedImage::hdr(2, 1, 16, vec![[0.0, 0.5, 1.0], [0.8, 0.9, 0.95]]).unwrap();
    let m = highlight_mask(&img, 0.8).unwrap();
    assert_eq!(m.at([0, 2, 0, 0]), 1.0);
    assert_eq!(m.at([0, 0, 0, 1]), 0.0);
    assert!(highlight_mask(&img, 1.0).is_err() && highlight_mask(&img, 0.0).is_err());
}

proptest! {
    #[test]
    fn mask_is_monotone_and_affine(a in 0.0f64..1.0, b in 0.0f64..1.0, g in 0.05f64..0.9) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(mask_value(lo, g) <= mask_value(hi, g));
        // doubling (1 − γ) halves p above both thresholds
        let g2 = 1.0 - 2.0 * (1.0 - g);
        if g2 > 0.0 && hi > g {
            prop_assert!((mask_value(hi, g2) - (hi - g2) / (2.0 * (1.0 - g))).abs() < 1e-12);
            prop_assert!((mask_value(hi, g) - (hi - g) / (1.0 - g)).abs() < 1e-12);
        }
    }

    #[test]
    fn compose_is_local(seed in 0u64..1000) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let base = Tensor::from_fn([1, 3, 4, 4], |_| r.gen_range(0.0f32..1.0));
        let gen = Tensor::from_fn([1, 3, 4, 4], |_| r.gen_range(-2.0f32..2.0));
        let mask = mask_tensor(&base, 0.7).unwrap();
        let out = hg_compose(&base, &gen, &mask).unwrap();
        let max_m = mask.data().iter().cloned().fold(0.0f32, f32::max);
        let max_g = gen.data().iter().map(|v| v.abs()).fold(0.0f32, f32::max);
        let dev = out.data().iter().zip(base.data()).map(|(o, b)| (o - b).abs()).fold(0.0, f32::max);
        prop_assert!(dev <= max_m * max_g * (1.0 + 1e-6));
    }
}

#[test]
fn compose_matches_loop_and_edge_cases() {
    let base = rand_tensor([1, 3, 5, 4], 0.0, 1.0, 1);
    let gen = rand_tensor([1, 3, 5, 4], -1.0, 1.0, 2);
    let mask = rand_tensor([1, 3, 5, 4], 0.0, 1.0, 3);
    let out = hg_compose(&base, &gen, &mask).unwrap();
    for i in 0..base.len() {
        let want = mask.data()[i] as f64 * gen.data()[i] as f64 + base.data()[i] as f64;
        assert!((out.data()[i] as f64 - want).abs() < 1e-7);
    }
    let zeros = Tensor::zeros([1, 3, 5, 4]);
    assert_eq!(hg_compose(&base, &gen, &zeros).unwrap(), base);
    assert_eq!(hg_compose(&base, &zeros, &Tensor::full([1, 3, 5, 4], 1.0)).unwrap(), base);
    assert!(hg_compose(&base, &Tensor::zeros([1, 3, 4, 5]), &mask).is_err());
}

#[test]
fn hg_untrained_is_identity_and_mask_zero_is_exact() {
    let hg = Hg::new(HgConfig { gamma_mask: 0.6, ..HgConfig::default() }, 3).unwrap();
    let codes: Vec<[f64; 3]> = {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        (0..30 * 22).map(|_| [0, 0, 0].map(|_: i32| (r.gen_range(0u32..65536) as f64) / 65535.0)).collect()
    };
    let img = EncodedImage::hdr(30, 22, 16, codes).unwrap();
    assert_eq!(hg.hg_forward(&img).unwrap().codes(), img.codes());
    let mut live = hg.clone();
    perturb(&mut live.params, 0.1, 5);
    let out = live.hg_forward(&img).unwrap();
    let mut changed = 0;
    for (o, i) in out.codes().iter().zip(img.codes()) {
        for c in 0..3 {
            if mask_value(i[c], 0.6) == 0.0 {
                assert_eq!(o[c], i[c]);
            } else if o[c] != i[c] {
                changed += 1;
            }
        }
    }
    assert!(changed > 0);
}

#[test]
fn hg_checkpoint_and_training_contract() {
    let dir = tempfile::tempdir().unwrap();
    let mut hg = Hg::new(HgConfig { depth: 3, width: 4, gamma_mask: 0.7 }, 1).unwrap();
    perturb(&mut hg.params, 0.01, 2);
    let path = dir.path().join("hg.htvw");
    hg.save(&path).unwrap();
    assert_eq!(Hg::load(&path).unwrap(), hg);

    let ds = build_pairs(&tiny_synth(2, 2)).unwrap();
    let agcm = Agcm::new(AgcmConfig::base_only(), 0, AgcmInit::IdentityAdjacent).unwrap();
    let cfg = TrainConfig { steps: 3, batch_size: 2, lr: 1e-4, seed: 1, log_every: 1, val_every: 0 };
    let h = || Hg::new(HgConfig { gamma_mask: 0.6, ..HgConfig::default() }, 0).unwrap();
    let (a, _) = train_hg(h(), (&agcm, None), &ds, None, &cfg, 1.0).unwrap();
    let (b, _) = train_hg(h(), (&agcm, None), &ds, None, &cfg, 1.0).unwrap();
    assert_eq!(a, b);
    assert!(train_hg(h(), (&agcm, None), &ds, None, &cfg, 0.0).is_err());
}
