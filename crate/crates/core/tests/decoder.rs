use prseg_core::decoder::{
    decoders, dpr_block, init_backbone, prseg_m_forward, prseg_s_forward, reg_loss, toy_backbone, DprBlockParams,
};
use prseg_core::select::selectors;
use prseg_core::{
    BackboneOutput, DcsmParams, DecoderConfig, Error, Forward, LabelMap, Mode, ParamStore, PlanCache, Segmenter,
    Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let n = dims.iter().product();
    Tensor::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), dims.to_vec()).unwrap()
}

fn eye(d: usize) -> Tensor {
    Tensor::new((0..d * d).map(|i| if i / d == i % d { 1.0 } else { 0.0 }).collect(), vec![d, d]).unwrap()
}

fn cfg(dim: usize, classes: usize, group_size: usize, rho: f64) -> DecoderConfig {
    DecoderConfig {
        dim,
        num_classes: classes,
        group_size,
        rho,
        ..DecoderConfig::default()
    }
}

fn run_s(f: &Tensor, store: &ParamStore, cfg: &DecoderConfig, selection: &str, seed: u64) -> prseg_core::DecoderOutput {
    let plans = PlanCache::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = Forward {
        selector: selectors().get(selection).unwrap(),
        plans: &plans,
        rng: &mut rng,
    };
    prseg_s_forward(f, store, cfg, &mut ctx).unwrap()
}

#[test]
fn identity_block_with_no_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d = 6;
    let f = rand_tensor(&mut rng, &[d, 4, 4]);
    let params = DprBlockParams {
        dcsm: DcsmParams::new(rand_tensor(&mut rng, &[d, d]), Tensor::zeros(vec![d]).unwrap(), 0.0, 1.0).unwrap(),
        fc_weight: eye(d),
        fc_bias: Tensor::zeros(vec![d]).unwrap(),
    };
    let c = cfg(d, 3, 2, 0.0);
    let plans = PlanCache::new();
    for mode in [Mode::Inference, Mode::Training] {
        let mut ctx = Forward {
            selector: selectors().get("fixed").unwrap(),
            plans: &plans,
            rng: &mut rng,
        };
        let (out, sel) = dpr_block(&f, &params, &c.with_mode(mode), &mut ctx).unwrap();
        assert!(sel.selected().is_empty());
        assert_eq!(out.data(), f.data());
    }
}

#[test]
fn rotation_changes_block_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let plans = PlanCache::new();
    // the first rotated channel is in group 0 and stays put, so at least
    // two rotated channels are needed for a guaranteed change
    for trial in 0..20 {
        let d = rng.random_range(4..12);
        let g = rng.random_range(2..=4);
        let f = rand_tensor(&mut rng, &[d, 2 * g, 2 * g]);
        let params = DprBlockParams {
            dcsm: DcsmParams::new(rand_tensor(&mut rng, &[d, d]), rand_tensor(&mut rng, &[d]), 0.5, 1.0).unwrap(),
            fc_weight: rand_tensor(&mut rng, &[d, d]),
            fc_bias: rand_tensor(&mut rng, &[d]),
        };
        let mut ctx = Forward {
            selector: selectors().get("dcsm").unwrap(),
            plans: &plans,
            rng: &mut rng,
        };
        let (out, sel) = dpr_block(&f, &params, &cfg(d, 3, g, 0.5), &mut ctx).unwrap();
        assert!(sel.selected().len() >= 2, "trial {trial}");
        let plain = f.linear(&params.fc_weight, &params.fc_bias).unwrap();
        assert_eq!(out.dims(), f.dims());
        assert_ne!(out.data(), plain.data(), "trial {trial}");
    }
}

#[test]
fn single_scale_shapes_and_final_concat_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let decoder = decoders().get("prseg-s").unwrap();
    for final_concat in [true, false] {
        let c = DecoderConfig {
            final_concat,
            ..cfg(8, 5, 4, 0.5)
        };
        let store = decoder.init(&c, &[6], &mut rng).unwrap();
        let width = if final_concat { 8 + 6 } else { 8 };
        assert_eq!(store.get("classifier.weight").unwrap().dims(), &[5, width]);
        let f = rand_tensor(&mut rng, &[6, 8, 12]);
        let out = run_s(&f, &store, &c, "dcsm", 0);
        assert_eq!(out.logits.dims(), &[5, 8, 12]);
        assert_eq!(out.selections.len(), 2);
    }
}

#[test]
fn backbone_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let image = rand_tensor(&mut rng, &[3, 64, 64]);
    let multi = toy_backbone(&image, &init_backbone(4, &mut rng).unwrap(), 4).unwrap();
    let dims: Vec<Vec<usize>> = multi.features.iter().map(|f| f.dims().to_vec()).collect();
    assert_eq!(dims, [[16, 16, 16], [32, 8, 8], [64, 4, 4], [128, 2, 2]]);
    let single = toy_backbone(&image, &init_backbone(1, &mut rng).unwrap(), 1).unwrap();
    assert_eq!(single.features.len(), 1);
    assert_eq!(single.features[0].dims(), &[64, 8, 8]);

    let odd = rand_tensor(&mut rng, &[3, 48, 64]);
    assert!(toy_backbone(&odd, &init_backbone(4, &mut rng).unwrap(), 4).is_err());
    let odd = rand_tensor(&mut rng, &[3, 12, 16]);
    assert!(toy_backbone(&odd, &init_backbone(1, &mut rng).unwrap(), 1).is_err());
}

#[test]
fn multi_scale_shape_and_identity_reduction() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = 4;
    let c = DecoderConfig {
        scales: 4,
        group_size: 2,
        ..cfg(d, 3, 2, 0.5)
    };
    let model = Segmenter::new(c.clone()).unwrap();
    let mut store = model.init_params(&mut rng).unwrap();
    let image = rand_tensor(&mut rng, &[3, 64, 64]);
    let out = model.forward(&image, &store, Mode::Inference, &mut rng).unwrap();
    assert_eq!(out.logits.dims(), &[3, 16, 16]);
    assert_eq!(out.selections.len(), 8);

    // identity FC, no rotation: classifier(concat(up(φ_s f_s)..., φ_0 f_0))
    for s in 0..4 {
        for l in 0..2 {
            store.insert(format!("branches.{s}.blocks.{l}.fc.weight"), &eye(d));
            store.insert(format!("branches.{s}.blocks.{l}.fc.bias"), &Tensor::zeros(vec![d]).unwrap());
        }
    }
    let none = Segmenter::new(DecoderConfig {
        selection: "none".into(),
        ..c.clone()
    })
    .unwrap();
    let enc = none.encode(&image, &store).unwrap();
    let got = none.decode(&enc, &store, Mode::Inference, &mut rng).unwrap();
    let lin = |x: &Tensor, p: &str| {
        x.linear(store.get(&format!("{p}.weight")).unwrap(), store.get(&format!("{p}.bias")).unwrap())
            .unwrap()
    };
    let mut parts: Vec<Tensor> = enc
        .features
        .iter()
        .enumerate()
        .map(|(s, f)| lin(f, &format!("branches.{s}.phi")).upsample_bilinear(16, 16).unwrap())
        .collect();
    parts.push(lin(&enc.features[0], "branches.0.phi"));
    let want = lin(&Tensor::concat(&parts, 0).unwrap(), "classifier");
    for (a, b) in got.logits.data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn multi_scale_rejects_resolution_mismatch() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = DecoderConfig {
        scales: 4,
        ..cfg(4, 3, 2, 0.5)
    };
    let store = decoders().get("prseg-m").unwrap().init(&c, &[2, 2, 2, 2], &mut rng).unwrap();
    let enc = BackboneOutput {
        features: [16, 8, 8, 2].iter().map(|&s| rand_tensor(&mut rng, &[2, s, s])).collect(),
    };
    let plans = PlanCache::new();
    let mut ctx = Forward {
        selector: selectors().get("dcsm").unwrap(),
        plans: &plans,
        rng: &mut rng,
    };
    assert!(matches!(prseg_m_forward(&enc, &store, &c, &mut ctx), Err(Error::InvalidShape { .. })));
}

#[test]
fn modes_agree_for_a_fixed_indicator() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (g, rho) in [(2, 0.5), (4, 0.25), (4, 1.0)] {
        let c = cfg(8, 4, g, rho);
        let store = decoders().get("prseg-s").unwrap().init(&c, &[5], &mut rng).unwrap();
        let f = rand_tensor(&mut rng, &[5, 8, 8]);
        let a = run_s(&f, &store, &c.with_mode(Mode::Training), "fixed", 0);
        let b = run_s(&f, &store, &c.with_mode(Mode::Inference), "fixed", 0);
        assert_eq!(a.logits.data(), b.logits.data());
    }
}

/// Gradient of `sum_k logits[k, p]` w.r.t. the encoder feature, summed over
/// channels in absolute value.
fn influence(store: &ParamStore, c: &DecoderConfig, f: &Tensor, p: (usize, usize)) -> Vec<f64> {
    let f = f.to_param();
    let out = run_s(&f, store, c, "dcsm", 0);
    let (k, h, w) = (c.num_classes, f.dims()[1], f.dims()[2]);
    let mut mask = vec![0.0; k * h * w];
    for ch in 0..k {
        mask[ch * h * w + p.0 * w + p.1] = 1.0;
    }
    out.logits.mul(&Tensor::new(mask, vec![k, h, w]).unwrap()).unwrap().sum().backward().unwrap();
    let g = f.grad().unwrap();
    (0..h * w).map(|q| (0..f.dims()[0]).map(|ch| g[ch * h * w + q].abs()).sum()).collect()
}

#[test]
fn receptive_field_separation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (h, w) = (8, 8);
    let f = rand_tensor(&mut rng, &[6, h, w]);
    let center = (5, 2);
    let c0 = cfg(8, 3, 4, 0.0);
    let store = decoders().get("prseg-s").unwrap().init(&c0, &[6], &mut rng).unwrap();
    let heat = influence(&store, &c0, &f, center);
    for (q, v) in heat.iter().enumerate() {
        if q == center.0 * w + center.1 {
            assert!(*v > 0.0);
        } else {
            assert_eq!(*v, 0.0, "pixel {q}");
        }
    }

    let c5 = cfg(8, 3, 4, 0.5);
    let heat = influence(&store, &c5, &f, center);
    let off_patch: Vec<usize> = (0..h * w)
        .filter(|q| (q / w) / 4 != center.0 / 4 || (q % w) / 4 != center.1 / 4)
        .collect();
    assert!(off_patch.iter().all(|&q| heat[q] == 0.0));
    let in_patch_off_center = (0..h * w)
        .filter(|q| !off_patch.contains(q) && *q != center.0 * w + center.1 && heat[*q] > 0.0)
        .count();
    assert!(in_patch_off_center >= 2, "{in_patch_off_center}");
}

#[test]
fn parameter_count_ignores_group_size_and_rho() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let count = |g: usize, rho: f64, scales: usize, rng: &mut ChaCha8Rng| {
        let c = DecoderConfig {
            scales,
            ..cfg(16, 4, g, rho)
        };
        Segmenter::new(c).unwrap().init_params(rng).unwrap().num_values()
    };
    for scales in [1, 4] {
        let base = count(4, 0.5, scales, &mut rng);
        for (g, rho) in [(1, 0.0), (2, 0.25), (3, 1.0), (8, 0.75)] {
            assert_eq!(count(g, rho, scales, &mut rng), base);
        }
    }
}

#[test]
fn reg_loss_range_and_total_loss_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let rho = rng.random_range(0.0..=1.0);
        let qs: Vec<Tensor> = (0..3)
            .map(|_| {
                let c = rng.random_range(1..12);
                Tensor::new((0..c).map(|_| f64::from(rng.random_bool(0.5) as u8)).collect(), vec![c]).unwrap()
            })
            .collect();
        let v = reg_loss(&qs, rho).unwrap().item().unwrap();
        assert!((0.0..=rho.max(1.0 - rho).powi(2) + 1e-15).contains(&v), "{v} at rho {rho}");
    }

    let c = cfg(8, 4, 4, 0.5).with_mode(Mode::Training);
    let model = Segmenter::new(c).unwrap();
    let store = model.init_params(&mut rng).unwrap();
    let image = rand_tensor(&mut rng, &[3, 32, 32]);
    let labels = LabelMap::new(32, 32, (0..1024).map(|i| (i % 4) as u8).collect()).unwrap();
    let out = model.forward(&image, &store, Mode::Training, &mut rng).unwrap();
    let loss = model.loss(&out, &labels).unwrap();
    assert!(loss.total.item().unwrap().is_finite());
    let total = loss.ce.item().unwrap() + 0.4 * loss.reg.item().unwrap();
    assert!((loss.total.item().unwrap() - total).abs() < 1e-12);
}

#[test]
fn unknown_strategies_are_reported_with_alternatives() {
    let err = Segmenter::new(DecoderConfig {
        selection: "learned".into(),
        ..DecoderConfig::default()
    })
    .err()
    .unwrap();
    let msg = err.to_string();
    assert!(msg.contains("learned") && msg.contains("dcsm") && msg.contains("fixed"), "{msg}");
}
