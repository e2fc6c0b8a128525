use adaptms::calib::{
    apply_calibration, fit_supervised_fewshot, fit_unsupervised, moments, parse_table, write_table,
    CalibrationParams, FewShotConfig, TargetRatingStats,
};
use adaptms::model::{encode, head, random_step_batch, Architecture, ModelDims, ModelParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rmse(p: &[f64], y: &[f64]) -> f64 {
    (p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64).sqrt()
}

/// Two-point latent set with population mean `m` and population sd `sd`.
fn two_point(m: f64, sd: f64) -> Vec<f64> {
    vec![m - sd, m + sd]
}

#[test]
fn hand_computed_moment_match() {
    let stats = TargetRatingStats::new(4.70, 0.55).unwrap();
    let (a, b) = fit_unsupervised(&two_point(4.10, 0.85), &stats).unwrap();
    // a = 0.55 / 0.85, b = 4.70 - a * 4.10
    assert!((a - 0.647059).abs() < 1e-6, "a = {a}");
    assert!((b - 2.047059).abs() < 1e-6, "b = {b}");
}

#[test]
fn recovers_exact_affine_map() {
    let (a_true, b_true) = (1.7, 1.9);
    let s: Vec<f64> = (0..500).map(|i| 0.1 + 0.8 * ((i * 37 % 500) as f64 / 500.0)).collect();
    let y: Vec<f64> = s.iter().map(|v| a_true * v + b_true).collect();
    assert!(y.iter().all(|&v| v > 1.0 && v < 5.0));
    let stats = TargetRatingStats::from_labels(&y).unwrap();
    let (a, b) = fit_unsupervised(&s, &stats).unwrap();
    assert!((a - a_true).abs() < 1e-9 && (b - b_true).abs() < 1e-9, "({a}, {b})");
    let mut calib = CalibrationParams::identity(3);
    calib.set_pair(2, a, b).unwrap();
    assert!(rmse(&apply_calibration(&calib, &s, 2).unwrap(), &y) < 1e-9);
}

#[test]
fn degenerate_inputs_are_errors() {
    let stats = TargetRatingStats::new(4.0, 0.5).unwrap();
    assert!(fit_unsupervised(&[3.0], &stats).is_err());
    assert!(fit_unsupervised(&[3.0, 3.0, 3.0], &stats).is_err());
    assert!(TargetRatingStats::new(4.0, 0.0).is_err());
    assert!(TargetRatingStats::new(f64::NAN, 1.0).is_err());
    assert!(CalibrationParams::identity(2).pair(2).is_err());
}

#[test]
fn identity_calibration_is_a_no_op() {
    let s = [1.5, 2.25, -3.0];
    assert_eq!(apply_calibration(&CalibrationParams::identity(1), &s, 0).unwrap(), s.to_vec());
}

#[test]
fn table_round_trip_is_bit_exact() {
    let calib = CalibrationParams {
        scale: vec![1.0, 0.1 + 0.2, 1.0 / 3.0],
        bias: vec![0.0, -2.5e-17, 4.7],
    };
    let text = write_table(&calib, "abc123");
    let (back, fp) = parse_table(&text).unwrap();
    assert_eq!(fp, "abc123");
    assert_eq!(back, calib);
    assert_eq!(write_table(&back, &fp), text);
}

#[test]
fn malformed_tables_are_rejected() {
    for bad in [
        "",
        "# nope\nplatform\ta\tb\n",
        "# adaptms-calibration v1 config=x\n",
        "# adaptms-calibration v1 config=x\nplatform\ta\tb\n0\t1.0\n",
        "# adaptms-calibration v1 config=x\nplatform\ta\tb\n1\t1.0\t0.0\n",
        "# adaptms-calibration v1 config=x\nplatform\ta\tb\n0\tNaN\t0.0\n",
        "# adaptms-calibration v1 config=x\nplatform\ta\tb\n0\tone\t0.0\n",
    ] {
        assert!(parse_table(bad).is_err(), "{bad:?}");
    }
}

fn small_model() -> (ModelParams, adaptms::model::Batch, Vec<f64>) {
    let dims = ModelDims {
        embed: 12,
        latent: 6,
        behavior_hidden: 5,
        fusion_hidden: 8,
        disc_hidden: 4,
        platforms: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = ModelParams::init(dims, &mut rng).unwrap();
    let step = random_step_batch(12, 3, 0, 16, &mut rng);
    let labels = (0..16).map(|i| 2.0 + ((i * 7) % 16) as f64 / 8.0).collect();
    (params, step.rows, labels)
}

/// With the gate frozen, few-shot fitting is least squares in `(a, b)`;
/// compare against the closed-form regression of labels on scores.
#[test]
fn frozen_gate_fewshot_converges_to_least_squares() {
    let (params, batch, labels) = small_model();
    let arch = Architecture::default();
    let s = head(&params, &encode(&params, &batch, arch).unwrap().z).unwrap();
    let (ms, ss) = moments(&s).unwrap();
    let my = labels.iter().sum::<f64>() / labels.len() as f64;
    let cov = s.iter().zip(&labels).map(|(x, y)| (x - ms) * (y - my)).sum::<f64>() / s.len() as f64;
    let a_ls = cov / (ss * ss);
    let b_ls = my - a_ls * ms;

    let config = FewShotConfig {
        lr: 0.05,
        max_steps: 20_000,
        train_gate: false,
        ..Default::default()
    };
    let (fitted, log) = fit_supervised_fewshot(&params, &batch, &labels, 2, arch, &config).unwrap();
    assert_eq!(log.holdout_rows, 0);
    let (a, b) = fitted.calib.pair(2).unwrap();
    assert!((a - a_ls).abs() < 1e-3 && (b - b_ls).abs() < 1e-3, "({a}, {b}) vs ({a_ls}, {b_ls})");
}

#[test]
fn fewshot_holds_out_a_quarter_from_twenty_rows() {
    let (params, batch, labels) = small_model();
    let batch = batch.vcat(&batch).unwrap();
    let labels: Vec<f64> = labels.iter().chain(&labels).copied().collect();
    let (_, log) =
        fit_supervised_fewshot(&params, &batch, &labels, 2, Architecture::default(), &FewShotConfig::default())
            .unwrap();
    assert_eq!(log.holdout_rows, 8);
    assert_eq!(log.fit_rows, 24);
}

#[test]
fn fewshot_requires_rows() {
    let (params, batch, labels) = small_model();
    let empty = batch.slice(0, 0);
    assert!(fit_supervised_fewshot(&params, &empty, &[], 2, Architecture::default(), &FewShotConfig::default())
        .is_err());
    assert!(
        fit_supervised_fewshot(&params, &batch, &labels[1..], 2, Architecture::default(), &FewShotConfig::default())
            .is_err()
    );
}

proptest! {
    #[test]
    fn calibrated_moments_match_supplied_stats(
        s in prop::collection::vec(-10.0f64..10.0, 2..200),
        mean in 1.0f64..5.0,
        sd in 0.05f64..2.0,
    ) {
        let (_, s_sd) = moments(&s).unwrap();
        prop_assume!(s_sd > 0.1);
        let stats = TargetRatingStats::new(mean, sd).unwrap();
        let (a, b) = fit_unsupervised(&s, &stats).unwrap();
        let y: Vec<f64> = s.iter().map(|v| a * v + b).collect();
        let (m, d) = moments(&y).unwrap();
        prop_assert!((m - mean).abs() < 1e-12, "mean {} vs {}", m, mean);
        prop_assert!((d - sd).abs() < 1e-12, "sd {} vs {}", d, sd);
        prop_assert!(a > 0.0);
    }
}
