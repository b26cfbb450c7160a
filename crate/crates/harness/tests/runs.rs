use boostkit_core::{Ensemble, FeatureView, RoundKind};
use boostkit_harness::config::{DataSource, ExperimentConfig, Variant};
use boostkit_harness::experiment::{load_data, run_experiment, run_on_data, METRICS_FILE, CHECKPOINT_DIR};
use boostkit_harness::metrics::{read_metrics_csv, write_metrics_csv};
use boostkit_harness::synth::{generate_synthetic, ImageSynthParams, SequenceSynthParams, SynthParams, SyntheticKind};
use boostkit_harness::HarnessError;

fn small_images() -> SynthParams {
    SynthParams::Image(ImageSynthParams { n_train: 90, n_test: 45, ..Default::default() })
}

fn small_sequences() -> SynthParams {
    SynthParams::Sequence(SequenceSynthParams { n_train: 60, n_test: 30, max_len: 20, ..Default::default() })
}

fn config(variant: Variant, data: SynthParams, seed: u64) -> ExperimentConfig {
    let kind = match data {
        SynthParams::Image(_) => SyntheticKind::ImagePlantedRows,
        SynthParams::Sequence(_) => SyntheticKind::SequencePlantedTokens,
    };
    let mut cfg = ExperimentConfig::synthetic(variant, kind, seed).unwrap();
    cfg.data = DataSource::Synthetic(data);
    cfg.n_b = 3;
    cfg.epochs = 2;
    cfg.record_wall_time = false;
    cfg
}

fn csv(cfg: &ExperimentConfig) -> Vec<u8> {
    let out = run_experiment(cfg).unwrap();
    let mut buf = Vec::new();
    write_metrics_csv(&out.metrics, &mut buf).unwrap();
    buf
}

#[test]
fn same_seed_same_data_and_metrics() {
    let a = generate_synthetic(&small_sequences(), 5).unwrap();
    let b = generate_synthetic(&small_sequences(), 5).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.metadata, b.metadata);
    assert_ne!(generate_synthetic(&small_sequences(), 6).unwrap().train, a.train);
    for cfg in [config(Variant::SubgridBoost, small_images(), 3), config(Variant::SubsequenceImportanceSamplingBoost, small_sequences(), 3)] {
        assert_eq!(csv(&cfg), csv(&cfg));
    }
}

#[test]
fn planted_rows_carry_the_signal() {
    let d = generate_synthetic(&SynthParams::Image(ImageSynthParams { n_train: 400, n_test: 10, amplitude: 3.0, ..Default::default() }), 8).unwrap();
    let rows = d.metadata.planted_rows().unwrap().to_vec();
    assert_eq!(rows.len(), 3);
    assert!(rows.windows(2).all(|w| w[0] < w[1]));
    // Mean square per row: unit noise everywhere, plus blob energy on planted rows.
    let mut energy = [0.0; 8];
    for s in d.train.samples() {
        for (j, e) in energy.iter_mut().enumerate() {
            *e += s.as_image().unwrap().data()[j * 8..j * 8 + 8].iter().map(|v| v * v).sum::<f64>();
        }
    }
    let mut order: Vec<usize> = (0..8).collect();
    order.sort_by(|&a, &b| energy[b].total_cmp(&energy[a]));
    let mut top = order[..3].to_vec();
    top.sort_unstable();
    assert_eq!(top, rows);
}

#[test]
fn planted_tokens_are_recorded() {
    let d = generate_synthetic(&small_sequences(), 2).unwrap();
    let planted = d.metadata.planted_tokens().unwrap();
    assert_eq!(planted.len(), 10);
    let vocab = d.train.vocabulary();
    assert!(planted.iter().all(|t| (1..=200).contains(t)));
    assert!(vocab.iter().all(|&t| t <= 200));
    assert!(d.train.samples().iter().all(|s| s.as_tokens().unwrap()[0] == 0 && s.as_tokens().unwrap().len() <= 20));
}

#[test]
fn zero_amplitude_gives_chance_accuracy() {
    let params = SynthParams::Image(ImageSynthParams { n_train: 300, n_test: 300, amplitude: 0.0, ..Default::default() });
    let mut cfg = config(Variant::Boost, params, 11);
    cfg.epochs = 4;
    let out = run_experiment(&cfg).unwrap();
    // Three-sigma binomial band around 1/3 on 300 test samples.
    let band = 3.0 * (1.0f64 / 3.0 * 2.0 / 3.0 / 300.0).sqrt();
    for r in &out.metrics {
        assert!((r.test_accuracy - 1.0 / 3.0).abs() <= band, "round {}: {}", r.round, r.test_accuracy);
    }
}

#[test]
fn single_round_is_the_basic_learner() {
    let mut cfg = config(Variant::Boost, small_images(), 4);
    cfg.n_b = 1;
    let (train, test, _) = load_data(&cfg).unwrap();
    let out = run_on_data(&cfg, &train, &test).unwrap();
    assert_eq!(out.metrics.len(), 1);
    assert_eq!(out.ensemble.len(), 1);
    let r = &out.ensemble.rounds()[0];
    assert_eq!((r.kind, r.alpha), (RoundKind::Basic, 1.0));
    assert_eq!(out.ensemble.predict_batch(test.samples()).unwrap(), r.learner.predict(test.samples()).unwrap());
}

#[test]
fn sampling_with_sigma_one_matches_plain_boosting() {
    let mut cfg = config(Variant::ImportanceSamplingBoost, small_images(), 9);
    cfg.sigma = 1.0;
    let mut plain = cfg.clone();
    plain.variant = Variant::Boost;
    assert_eq!(csv(&cfg), csv(&plain));
}

#[test]
fn every_variant_completes() {
    let image = [Variant::SingleModel, Variant::EEnsemble, Variant::SubgridEEnsemble, Variant::ImportanceSamplingBoost];
    let sequence = [
        Variant::SingleModel,
        Variant::EEnsemble,
        Variant::SubsequenceImportanceSamplingBoost,
        Variant::SubsequenceBaseline,
    ];
    let cases = image.iter().map(|&v| (v, small_images())).chain(sequence.iter().map(|&v| (v, small_sequences())));
    for (variant, data) in cases {
        let mut cfg = config(variant, data, 1);
        cfg.sampling_diagnostics = true;
        cfg.diagnostic_resamples = 50;
        let out = run_experiment(&cfg).unwrap();
        let rows = if matches!(variant, Variant::SingleModel | Variant::SubsequenceBaseline) { cfg.n_b * cfg.epochs } else { cfg.n_b };
        assert_eq!(out.metrics.len(), rows, "{}", variant.name());
        assert!(out.metrics.iter().enumerate().all(|(i, r)| r.round == i));
        assert!(out.metrics.iter().all(|r| r.train_risk.is_finite() && (0.0..=1.0).contains(&r.test_accuracy)));
        let boosted_diagnostics = out.metrics[1..].iter().all(|r| r.variance_pstar.is_some() && r.jensen_gap_uniform.unwrap() >= -1e-9);
        assert_eq!(boosted_diagnostics, variant.is_boosted(), "{}", variant.name());
        match variant {
            Variant::SubsequenceBaseline => {
                let FeatureView::Vocabulary { vocab } = &out.ensemble.rounds()[0].view else { panic!() };
                let (train, _, _) = load_data(&cfg).unwrap();
                let full = train.vocabulary().iter().filter(|&&t| t != 0).count();
                assert_eq!(vocab.content_len(), boostkit_core::subgrid::keep_count(cfg.sigma, full));
                assert_eq!(out.metrics[0].feature_fraction, vocab.content_len() as f64 / full as f64);
            }
            Variant::SubgridEEnsemble => {
                assert!(out.metrics[1..].iter().all(|r| r.feature_fraction == 49.0 / 64.0));
                assert_eq!(out.ensemble.rounds().len(), 3);
            }
            Variant::SubsequenceImportanceSamplingBoost => {
                // Ceiling accounting can overshoot sigma by less than one token.
                let (train, _, _) = load_data(&cfg).unwrap();
                let full = train.vocabulary().iter().filter(|&&t| t != 0).count() as f64;
                let frac = out.metrics[1].feature_fraction;
                assert!(frac >= cfg.sigma - 1e-12 && frac < cfg.sigma + 1.0 / full, "{frac}");
            }
            _ => {}
        }
    }
}

#[test]
fn outputs_and_checkpoint_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Variant::SubgridBoost, small_images(), 2);
    cfg.out_dir = Some(dir.path().to_path_buf());
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(read_metrics_csv(dir.path().join(METRICS_FILE)).unwrap().len(), 3);
    let loaded = Ensemble::load(dir.path().join(CHECKPOINT_DIR)).unwrap();
    assert_eq!(loaded, out.ensemble);
    let (_, test, _) = load_data(&cfg).unwrap();
    assert_eq!(loaded.predict_batch(test.samples()).unwrap(), out.ensemble.predict_batch(test.samples()).unwrap());
}

#[test]
fn divergence_aborts_and_flushes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Variant::Boost, small_images(), 2);
    cfg.lr = 1e300;
    cfg.out_dir = Some(dir.path().to_path_buf());
    match run_experiment(&cfg) {
        Err(e @ HarnessError::Aborted { .. }) => {
            let HarnessError::Aborted { round, ref partial, .. } = e else { unreachable!() };
            assert_eq!(round, partial.len());
            assert_eq!(e.exit_code(), 3);
            assert_eq!(read_metrics_csv(dir.path().join(METRICS_FILE)).unwrap().len(), round);
        }
        other => panic!("{:?}", other.map(|o| o.metrics)),
    }
}
