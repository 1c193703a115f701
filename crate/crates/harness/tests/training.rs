use prseg_harness::{erf_probe, run_ablation, Axis, Experiment, ExperimentConfig, HarnessError};

fn quick(steps: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.train.steps = steps;
    cfg
}

#[test]
fn rotation_ratio_half_beats_zero() {
    let rows = run_ablation(&quick(300), Axis::Rho, &["0".into(), "0.5".into()], 1).unwrap();
    let (zero, half) = (&rows[0], &rows[1]);
    assert!(half.mean_miou > zero.mean_miou, "{} vs {}", half.mean_miou, zero.mean_miou);
    assert_eq!(zero.mean_eval_fraction, 0.0);
    assert_eq!(half.mean_eval_fraction, 0.5);
}

#[test]
fn identical_runs_produce_identical_records() {
    let run = || {
        let exp = Experiment::new(quick(30)).unwrap();
        let mut state = exp.init_state().unwrap();
        let mut lines = Vec::new();
        exp.train(&mut state, |r| {
            lines.push(serde_json::to_string(r)?);
            Ok(())
        })
        .unwrap();
        lines
    };
    assert_eq!(run(), run());
}

#[test]
fn erf_of_trained_decoder() {
    let mut cfg = quick(20);
    cfg.data.eval_images = 4;
    for (rho, spike) in [(0.0, true), (0.5, false)] {
        cfg.model.rho = rho;
        let exp = Experiment::new(cfg.clone()).unwrap();
        let mut state = exp.init_state().unwrap();
        exp.train(&mut state, |_| Ok(())).unwrap();
        let inputs: Vec<_> = exp
            .eval_set
            .images
            .iter()
            .map(|i| exp.model.encode(&i.detach(), &state.params).unwrap())
            .collect();
        let heat = erf_probe(&exp.model, &state.params, &inputs, (2, 6)).unwrap();
        assert!(heat.data.iter().all(|&v| v >= 0.0));
        assert!(heat.at(2, 6) > 0.0);
        let off = heat.off_center_support();
        if spike {
            assert!(off.is_empty(), "{off:?}");
        } else {
            assert!(off.len() >= 2);
            // mass never leaves the centre's 4x4 patch
            assert!(off.iter().all(|&(r, c)| r / 4 == 0 && c / 4 == 1), "{off:?}");
        }
        assert!(matches!(
            erf_probe(&exp.model, &state.params, &inputs, (8, 0)),
            Err(HarnessError::OutOfBounds { .. })
        ));
    }
}

#[test]
fn multi_scale_head_trains() {
    let mut cfg = quick(10);
    cfg.model.scales = 4;
    cfg.model.group_size = 2;
    cfg.model.dim = 8;
    cfg.data.train_images = 4;
    cfg.data.eval_images = 2;
    let exp = Experiment::new(cfg).unwrap();
    let mut state = exp.init_state().unwrap();
    let before = state.params.get("classifier.weight").unwrap().to_vec();
    let summary = exp.train(&mut state, |_| Ok(())).unwrap();
    assert_eq!(summary.train_fractions.len(), 8);
    assert_ne!(state.params.get("classifier.weight").unwrap().to_vec(), before);
    assert!(summary.final_loss.is_finite());
}
