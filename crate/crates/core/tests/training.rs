use lyapinit_core::dataset::{Dataset, LabeledSample};
use lyapinit_core::policy::train::{network_input, split_indices};
use lyapinit_core::policy::{
    evaluate, train, InputScaler, MlpParams, Optimizer, TrainConfig, DEFAULT_LAYER_SIZES,
};
use lyapinit_core::{Axis, Error, InterceptState, Roi};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synthetic(n: usize, seed: u64, label: impl Fn(&InterceptState) -> f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let state = InterceptState {
                px: rng.random_range(-1.0..=1.0),
                py: rng.random_range(-1.0..=1.0),
                vz: rng.random_range(0.1..=15.0),
                cz: rng.random_range(0.5..=50.0),
                wy: 0.0,
            };
            LabeledSample {
                axis: Axis::X,
                state,
                input: label(&state),
                achieved_d: -1.0,
            }
        })
        .collect();
    Dataset {
        axis: Axis::X,
        samples,
        roi: Roi::default(),
        eta: None,
        seed: Some(seed),
    }
}

fn p0(output_scale: f64) -> MlpParams {
    MlpParams::init(&DEFAULT_LAYER_SIZES, 5)
        .unwrap()
        .with_input_scaler(InputScaler::from_roi(&Roi::default(), Axis::X))
        .with_output_scale(output_scale)
}

fn std_dev(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    (v.map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[test]
fn constant_labels_are_fit() {
    let ds = synthetic(2000, 1, |_| 2.5);
    let cfg = TrainConfig {
        epochs: 50,
        learning_rate: 1e-2,
        ..Default::default()
    };
    let (_, report) = train(&p0(5.0), &ds, &cfg).unwrap();
    assert_eq!(report.epochs.len(), 51);
    assert!(
        report.final_loss() < 1e-4,
        "final loss {}",
        report.final_loss()
    );
}

#[test]
fn linear_labels_reach_five_percent_of_std() {
    let ds = synthetic(5000, 2, |s| 3.0 * s.px);
    let label_std = std_dev(ds.samples.iter().map(|s| s.input));
    let cfg = TrainConfig {
        epochs: 200,
        holdout_fraction: 0.2,
        ..Default::default()
    };
    let (p, report) = train(&p0(5.0), &ds, &cfg).unwrap();
    let rmse = report.holdout_rmse().unwrap();
    assert!(rmse < 0.05 * label_std, "rmse {rmse} vs std {label_std}");
    assert!(report.last().holdout_mse.unwrap() < report.initial().holdout_mse.unwrap());
    assert!((p.forward([0.5, 7.0, 20.0]) - 1.5).abs() < 0.1);
}

#[test]
fn training_is_deterministic() {
    let ds = synthetic(1500, 3, |s| 2.0 * s.px + 0.1 * s.cz);
    let cfg = TrainConfig {
        epochs: 3,
        seed: 17,
        ..Default::default()
    };
    let (a, ra) = train(&p0(10.0), &ds, &cfg).unwrap();
    let (b, rb) = train(&p0(10.0), &ds, &cfg).unwrap();
    let bits = |p: &MlpParams| p.params().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(ra.epochs, rb.epochs);
}

#[test]
fn epoch_zero_loss_is_direct_mean_over_first_pass() {
    let ds = synthetic(777, 4, |s| 4.0 * s.px - 1.0);
    let cfg = TrainConfig {
        epochs: 1,
        seed: 9,
        ..Default::default()
    };
    let p = p0(10.0);
    let (_, report) = train(&p, &ds, &cfg).unwrap();
    let (train_idx, _) = split_indices(ds.len(), cfg.holdout_fraction, cfg.seed);
    let direct: f64 = train_idx
        .iter()
        .map(|&i| {
            let s = &ds.samples[i];
            (p.forward(network_input(s)) - s.input).powi(2)
        })
        .sum::<f64>()
        / train_idx.len() as f64;
    assert!((report.initial().train_mse - direct).abs() <= 1e-10);
    assert_eq!(report.train_size, train_idx.len());
    assert_eq!(report.train_size + report.holdout_size, ds.len());
}

#[test]
fn axis_mismatch_and_empty_dataset_are_rejected() {
    let ds = synthetic(10, 5, |_| 0.0);
    let wrong = p0(1.0).with_axis(Axis::Y);
    assert!(matches!(
        train(&wrong, &ds, &TrainConfig::default()),
        Err(Error::Config(_))
    ));
    let empty = Dataset {
        samples: vec![],
        ..ds.clone()
    };
    assert!(train(&p0(1.0), &empty, &TrainConfig::default()).is_err());
    let zero_epochs = TrainConfig {
        epochs: 0,
        ..Default::default()
    };
    assert!(matches!(
        train(&p0(1.0), &ds, &zero_epochs),
        Err(Error::Config(_))
    ));
}

#[test]
fn exploding_sgd_reports_divergence() {
    let ds = synthetic(200, 6, |s| 1e3 * s.cz);
    let cfg = TrainConfig {
        epochs: 20,
        learning_rate: 1e6,
        optimizer: Optimizer::Sgd,
        ..Default::default()
    };
    match train(&p0(1e3), &ds, &cfg) {
        Err(Error::Diverged { epoch, .. }) => assert!(epoch >= 1),
        other => panic!(
            "expected divergence, got {:?}",
            other.map(|r| r.1.final_loss())
        ),
    }
}

#[test]
fn sgd_also_learns() {
    let ds = synthetic(2000, 7, |s| 2.0 * s.px);
    let cfg = TrainConfig {
        epochs: 20,
        learning_rate: 1e-3,
        optimizer: Optimizer::Sgd,
        ..Default::default()
    };
    let p = p0(5.0);
    let (before, _) = evaluate(&p, &ds.samples);
    let (q, _) = train(&p, &ds, &cfg).unwrap();
    let (after, _) = evaluate(&q, &ds.samples);
    assert!(after < 0.5 * before, "{before} -> {after}");
}
