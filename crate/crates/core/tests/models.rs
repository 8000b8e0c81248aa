use std::collections::BTreeMap;

use gomkit::exchange::CoefficientModel;
use gomkit::generation::generate;
use gomkit::gom::build_system;
use gomkit::hmm::{classify, train_hmm, train_hmm_on, Obs};
use gomkit::motion::MovementDataset;
use gomkit::recognition::evaluate_f1;
use gomkit::synth::{synth_generate, ChannelDynamics, ClassSpec, SynthSpec};
use gomkit::trainer::{fit_sequence, KfConfig, OptimizerConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn class(label: &str, freq_hz: f64, amplitude: f64, reps: usize) -> ClassSpec {
    let mut channels = BTreeMap::new();
    for (i, axis) in ["x", "y", "z"].iter().enumerate() {
        channels.insert(
            format!("J.{axis}"),
            ChannelDynamics::Oscillator {
                freq_hz: freq_hz * (1.0 + 0.3 * i as f64),
                amplitude,
                damping: 1.0,
                phase: 0.0,
            },
        );
    }
    ClassSpec {
        label: label.into(),
        reps,
        default: None,
        channels,
        couplings: vec![],
        amplitude_jitter: 0.1,
        phase_jitter: 0.3,
    }
}

fn three_classes(reps: usize, seed: u64) -> MovementDataset {
    let spec = SynthSpec {
        topology: Some(serde_json::from_str(r#"{"joints":["J"],"limbs":{"body":["J"]}}"#).unwrap()),
        frame_rate_hz: 90.0,
        length: 120,
        noise_sigma: 0.01,
        classes: vec![
            class("a", 1.0, 5.0, reps),
            class("b", 1.5, 25.0, reps),
            class("c", 3.0, 80.0, reps),
        ],
    };
    synth_generate(&spec, seed).unwrap().dataset
}

#[test]
fn synth_is_reproducible_from_its_seed() {
    let a = three_classes(2, 7);
    let b = three_classes(2, 7);
    let c = three_classes(2, 8);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn exchange_file_round_trips_through_generation() {
    let dataset = three_classes(1, 3);
    let seq = &dataset.sequences[0];
    let system = build_system(&dataset.topology).unwrap();
    let config = KfConfig {
        optimizer: OptimizerConfig {
            restarts: 0,
            ..OptimizerConfig::default()
        },
        ..KfConfig::default()
    };
    let trained = fit_sequence(&system, seq, &config).unwrap();
    let model = CoefficientModel::from_trained(&dataset.topology, &trained, 90.0, Some("a".into())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let loaded = CoefficientModel::load(&path).unwrap();
    assert_eq!(loaded.to_json_string(), model.to_json_string());

    let seeds = [seq.frame(0), seq.frame(1)];
    let direct = generate(&model, seeds, seq.len()).unwrap();
    let reloaded = generate(&loaded, seeds, seq.len()).unwrap();
    assert_eq!(direct, reloaded);
}

#[test]
fn sample_from_a_model_is_classified_as_that_model() {
    let dataset = three_classes(6, 11);
    let channels = [0, 1, 2];
    let models: Vec<_> = dataset
        .classes()
        .iter()
        .map(|l| train_hmm(&dataset, l, &channels, 4).unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (k, m) in models.iter().enumerate() {
        let sample = m.sample(&mut rng, 120);
        let names = dataset.topology.channel_names().to_vec();
        let seq = gomkit::motion::PostureSequence::new(names, sample, 90.0).unwrap();
        assert_eq!(classify(&seq, &models, &channels).unwrap(), models[k].class_label);
    }
}

#[test]
fn hmm_scores_ignore_a_consistent_channel_permutation() {
    let dataset = three_classes(3, 2);
    let permute = |d: &[f64]| -> Vec<f64> { d.chunks(3).flat_map(|f| [f[2], f[0], f[1]]).collect() };
    let train: Vec<Vec<f64>> = dataset.of_class("b").map(|s| s.as_slice().to_vec()).collect();
    let train_p: Vec<Vec<f64>> = train.iter().map(|d| permute(d)).collect();
    let obs: Vec<Obs> = train.iter().map(|d| Obs::new(d, 3).unwrap()).collect();
    let obs_p: Vec<Obs> = train_p.iter().map(|d| Obs::new(d, 3).unwrap()).collect();
    let names = vec!["x".to_string(), "y".to_string(), "z".to_string()];
    let m = train_hmm_on(&obs, "b", names.clone(), 3).unwrap();
    let mp = train_hmm_on(&obs_p, "b", names, 3).unwrap();
    for seq in &dataset.sequences {
        let x = seq.as_slice();
        let l = m.log_likelihood(Obs::new(x, 3).unwrap()).unwrap();
        let lp = mp.log_likelihood(Obs::new(&permute(x), 3).unwrap()).unwrap();
        assert!((l - lp).abs() <= 1e-6 * l.abs().max(1.0), "{l} vs {lp}");
    }
}

#[test]
fn separable_classes_score_perfectly() {
    let dataset = three_classes(6, 4);
    let report = evaluate_f1(&dataset, &[0, 1, 2], 4, 3, 9).unwrap();
    assert_eq!(report.macro_f1, 1.0, "{:?}", report.confusion);
    assert_eq!(report.folds, 3);
    assert!(!report.leave_one_out);
    let again = evaluate_f1(&dataset, &[0, 1, 2], 4, 3, 9).unwrap();
    assert_eq!(report, again);
}

#[test]
fn shuffled_labels_score_near_chance() {
    let mut dataset = three_classes(10, 6);
    let mut labels: Vec<String> = dataset.sequences.iter().map(|s| s.class_label.clone()).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(21));
    for (s, l) in dataset.sequences.iter_mut().zip(labels) {
        s.class_label = l;
    }
    let f1 = evaluate_f1(&dataset, &[0, 1, 2], 4, 5, 1).unwrap().macro_f1;
    assert!((f1 - 1.0 / 3.0).abs() <= 0.15, "F1 = {f1}");
}

#[test]
fn single_class_dataset_is_rejected() {
    let dataset = three_classes(4, 1);
    let only_a: Vec<_> = dataset.of_class("a").cloned().collect();
    let single = MovementDataset::new(dataset.topology.clone(), only_a).unwrap();
    assert!(evaluate_f1(&single, &[0, 1, 2], 2, 2, 0).is_err());
}
