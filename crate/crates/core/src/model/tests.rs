use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{generate_corpus, impute_missing, time_split, PlatformSpec};
use crate::embed::{embed_corpus, EmbedderConfig};
use crate::nn::{cross_entropy_loss, AdamConfig, AdamState, Matrix};

const H: f64 = 1e-5;

fn small_dims() -> ModelDims {
    ModelDims {
        embed: 5,
        latent: 3,
        behavior_hidden: 4,
        fusion_hidden: 6,
        disc_hidden: 4,
        platforms: 3,
    }
}

fn small_model(seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::init(small_dims(), &mut rng).unwrap();
    p.calib.scale = vec![0.8, 1.3, 1.0];
    p.calib.bias = vec![0.5, -0.2, 0.0];
    p.standardizer.mean = [1.5; 6];
    p
}

fn fixture(seed: u64) -> (ModelParams, StepBatch, Matrix) {
    let p = small_model(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let batch = random_step_batch(5, 3, 4, 4, &mut rng);
    let mask = dropout_mask(4, 6, 0.25, &mut rng).unwrap();
    (p, batch, mask)
}

#[test]
fn zero_behavior_weights_give_zero_embedding() {
    let mut p = small_model(1);
    p.behavior_out.weight = Matrix::zeros(4, 3);
    p.behavior_out.bias = vec![0.0; 3];
    let (_, batch, _) = fixture(1);
    for mode in [crate::nn::Mode::Train, crate::nn::Mode::Eval] {
        let g = behavior_embed(&p, &batch.rows.behavior, Architecture::default(), mode).unwrap();
        assert_eq!(g.shape(), (8, 3));
        assert!(g.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn behavior_embed_rejects_missing_values() {
    let p = small_model(1);
    let mut b = Matrix::zeros(3, 6);
    b.set(1, 2, f64::NAN);
    assert!(behavior_embed(&p, &b, Architecture::default(), crate::nn::Mode::Eval).is_err());
}

#[test]
fn gate_examples() {
    let mut p = small_model(2);
    let h = Matrix::from_rows(&[[0.3, -0.2, 0.9], [1.0, 0.0, -1.0]]).unwrap();
    p.gate_w = vec![0.0; 4];
    p.gate_b = 0.0;
    assert_eq!(gate(&p, &h, &[1.0, 0.0]).unwrap(), vec![0.5, 0.5]);
    p.gate_b = -50.0;
    assert!(gate(&p, &h, &[1.0, 1.0]).unwrap().iter().all(|&a| a < 1e-20));

    let mut p = small_model(2);
    p.gate_w[3] = 0.7;
    let on = gate(&p, &h, &[1.0, 1.0]).unwrap();
    let off = gate(&p, &h, &[0.0, 0.0]).unwrap();
    for i in 0..2 {
        let u_off = (off[i] / (1.0 - off[i])).ln();
        let expected = 1.0 / (1.0 + (-(u_off + 0.7)).exp());
        assert!((on[i] - expected).abs() < 1e-12);
    }
}

#[test]
fn fuse_examples() {
    let h = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
    let g = Matrix::from_rows(&[[5.0, 6.0], [7.0, 8.0]]).unwrap();
    let z = fuse(&h, &g, &[0.0, 0.0]).unwrap();
    assert_eq!(z.row(0), &[1.0, 2.0, 0.0, 0.0]);
    let z = fuse(&h, &g, &[1.0, 1.0]).unwrap();
    assert_eq!(z, h.hcat(&g).unwrap());
    let z = fuse(&h, &g, &[0.3, 0.9]).unwrap();
    assert_eq!(&z.row(1)[..2], h.row(1));
    assert!(fuse(&h, &g, &[1.0]).is_err());
}

#[test]
fn modality_dropout_examples() {
    let (_, batch, _) = fixture(3);
    let fill = [[9.0; 6], [8.0; 6], [7.0; 6]];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (same, dropped) = modality_dropout(&batch.rows, &fill, 0.0, &mut rng).unwrap();
    assert_eq!(same, batch.rows);
    assert!(dropped.iter().all(|d| !d));
    let (all, dropped) = modality_dropout(&batch.rows, &fill, 1.0, &mut rng).unwrap();
    assert!(dropped.iter().all(|&d| d));
    for i in 0..all.len() {
        assert_eq!(all.modality[i], 0.0);
        assert_eq!(all.behavior.row(i), &fill[all.platform[i]]);
    }

    let big = Batch {
        text: Matrix::zeros(10_000, 1),
        behavior: Matrix::zeros(10_000, 6),
        modality: vec![1.0; 10_000],
        platform: vec![0; 10_000],
    };
    let (_, dropped) = modality_dropout(&big, &fill, 0.3, &mut rng).unwrap();
    let rate = dropped.iter().filter(|&&d| d).count() as f64 / 10_000.0;
    assert!((0.28..=0.32).contains(&rate), "{rate}");
}

#[test]
fn predict_latent_examples() {
    let (mut p, batch, _) = fixture(4);
    let arch = Architecture::default();
    let a = predict_latent(&p, &batch.rows, arch).unwrap();
    let b = predict_latent(&p, &batch.rows, arch).unwrap();
    assert_eq!(a, b);
    p.head_out.weight = Matrix::zeros(6, 1);
    p.head_out.bias = vec![0.0];
    assert!(predict_latent(&p, &batch.rows, arch).unwrap().iter().all(|&s| s == 0.0));
}

#[test]
fn zero_discriminator_is_uniform() {
    let (mut p, batch, _) = fixture(5);
    p.disc_out.weight = Matrix::zeros(4, 3);
    p.disc_out.bias = vec![0.0; 3];
    let z = encode(&p, &batch.rows, Architecture::default()).unwrap().z;
    let logits = discriminate(&p, &z).unwrap();
    assert_eq!(logits.shape(), (8, 3));
    let (ce, _) = cross_entropy_loss(&logits, &batch.rows.platform).unwrap();
    assert!((ce - 3f64.ln()).abs() < 1e-12);
}

const CANCELLED_WITHOUT_BEHAVIOR: [Block; 7] = [
    Block::BehaviorL1W,
    Block::BehaviorL1B,
    Block::BehaviorBn1Gamma,
    Block::BehaviorBn1Beta,
    Block::BehaviorL2W,
    Block::BehaviorL2B,
    Block::BehaviorBn2Gamma,
];

#[test]
fn composite_gradients_match_finite_differences() {
    for (seed, lambda) in [(10, 0.0), (11, 0.5), (12, 1.0)] {
        let (p, batch, mask) = fixture(seed);
        for arch in [
            Architecture::default(),
            Architecture {
                use_behavior: true,
                use_gate: false,
            },
            Architecture {
                use_behavior: false,
                use_gate: true,
            },
        ] {
            let objective = Objective { lambda, arch };
            let report = check_gradients(&p, &batch, Some(&mask), objective, H).unwrap();
            let grads = loss_and_grads(&p, &batch, Some(&mask), objective).unwrap().grads;
            for b in &report.blocks {
                // Without behavior input the behavior MLP sees a constant
                // batch, which its second normalization cancels. Those
                // gradients are zero and differencing them only measures
                // round-off amplified by the zero-variance normalization.
                if !arch.use_behavior && CANCELLED_WITHOUT_BEHAVIOR.contains(&b.block) {
                    let worst = grads.blocks[b.block.index()].iter().fold(0.0f64, |m, g| m.max(g.abs()));
                    assert!(worst < 1e-9, "{:?} λ={lambda}: {worst}", b.block);
                    continue;
                }
                assert!(b.max_rel_error < 1e-5, "{:?} λ={lambda} {arch:?}: {}", b.block, b.max_rel_error);
            }
        }
    }
}

#[test]
fn reversal_scales_domain_gradient() {
    let (p, batch, mask) = fixture(20);
    for lambda in [0.1, 0.5, 1.0] {
        let arch = Architecture::default();
        let err = check_reversal(&p, &batch, Some(&mask), Objective { lambda, arch }, H).unwrap();
        assert!(err < 1e-5, "λ={lambda}: {err}");
    }
}

#[test]
fn zero_lambda_isolates_encoder_from_discriminator() {
    let (p, batch, mask) = fixture(21);
    let obj = Objective {
        lambda: 0.0,
        arch: Architecture::default(),
    };
    let a = loss_and_grads(&p, &batch, Some(&mask), obj).unwrap().grads;
    let mut q = p.clone();
    for v in q.block_mut(Block::DiscL1W) {
        *v *= -3.0;
    }
    let b = loss_and_grads(&q, &batch, Some(&mask), obj).unwrap().grads;
    for blk in Block::ALL.iter().filter(|b| b.is_encoder()) {
        assert_eq!(a.get(*blk), b.get(*blk), "{}", blk.name());
    }
}

#[test]
fn target_calibration_gets_no_gradient() {
    let (p, batch, mask) = fixture(22);
    let obj = Objective {
        lambda: 0.5,
        arch: Architecture::default(),
    };
    let g = loss_and_grads(&p, &batch, Some(&mask), obj).unwrap().grads;
    assert_eq!(g.get(Block::CalibScale)[2], 0.0);
    assert_eq!(g.get(Block::CalibBias)[2], 0.0);
}

#[test]
fn zero_learning_rate_step_keeps_parameters() {
    let (mut p, batch, _) = fixture(23);
    let before = p.to_blocks();
    let mut adam = AdamState::new(AdamConfig::with_lr(0.0));
    let config = TrainConfig {
        lr: 0.0,
        ..TrainConfig::default()
    };
    let source = batch.rows.slice(0, 4);
    let target = batch.rows.slice(4, 8);
    let fill = [[1.0; 6]; 3];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let losses = train_step(&mut p, &mut adam, &source, &batch.labels, &target, &fill, &config, &mut rng).unwrap();
    assert!(losses.task > 0.0 && losses.domain > 0.0);
    assert_eq!(p.to_blocks(), before);
    assert_eq!(adam.step_count(), 1);
}

#[test]
fn empty_source_batch_is_rejected() {
    let (p, batch, _) = fixture(24);
    let step = StepBatch {
        rows: batch.rows.slice(4, 8),
        n_source: 0,
        labels: vec![],
    };
    let obj = Objective {
        lambda: 0.5,
        arch: Architecture::default(),
    };
    assert!(loss_and_grads(&p, &step, None, obj).is_err());
}

#[test]
fn snapshot_round_trip() {
    let (mut p, _, _) = fixture(25);
    p.behavior_bn1.running_mean = vec![0.1, 0.2, 0.3, -0.4];
    p.standardizer.sd = [2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
    let snap = Snapshot {
        config_fingerprint: "abc".into(),
        params: p,
    };
    let bytes = encode_snapshot(&snap);
    let back = decode_snapshot(&bytes).unwrap();
    assert_eq!(back, snap);
    assert_eq!(encode_snapshot(&back), bytes);
    for cut in [0, 5, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(decode_snapshot(&bytes[..cut]).is_err());
    }
    let mut bad = bytes.clone();
    bad[0] ^= 1;
    assert!(decode_snapshot(&bad).is_err());
}

fn tiny_training() -> (crate::data::Corpus, crate::embed::EmbeddingTable, crate::data::ImputationStats) {
    let corpus = generate_corpus(&PlatformSpec::benchmark(), 120, 7).unwrap();
    let splits = time_split(&corpus).unwrap();
    let (imputed, stats) = impute_missing(&corpus, &splits).unwrap();
    let emb = embed_corpus(
        &corpus,
        &EmbedderConfig {
            dim: 32,
            ..Default::default()
        },
    )
    .unwrap();
    (imputed, emb, stats)
}

fn sets(corpus: &crate::data::Corpus) -> TrainSets {
    let splits = time_split(corpus).unwrap();
    TrainSets {
        source_train: splits[0].train.clone().chain(splits[1].train.clone()).collect(),
        source_val: splits[0].val.clone().chain(splits[1].val.clone()).collect(),
        target_train: splits[2].train.clone().collect(),
    }
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        max_epochs: 4,
        patience: 4,
        fusion_hidden: 16,
        seed: 3,
        lr: 1e-3,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic_and_selects_best() {
    let (imputed, emb, stats) = tiny_training();
    let data = Dataset::new(&imputed, &emb, &stats).unwrap();
    let s = sets(&imputed);
    let (a, log_a) = train(&data, &s, &tiny_config()).unwrap();
    let (b, log_b) = train(&data, &s, &tiny_config()).unwrap();
    assert_eq!(encode_snapshot(&Snapshot { config_fingerprint: String::new(), params: a.clone() }),
               encode_snapshot(&Snapshot { config_fingerprint: String::new(), params: b }));
    assert_eq!(log_a, log_b);
    assert_eq!(log_a.epochs.len(), 5);
    assert!(log_a.best_val_rmse() <= log_a.epochs[0].val_rmse);
    let min = log_a.epochs.iter().map(|e| e.val_rmse).fold(f64::INFINITY, f64::min);
    assert_eq!(log_a.best_val_rmse(), min);
    // Target calibration pair never moves during source training.
    assert_eq!(a.calib.pair(2).unwrap(), (1.0, 0.0));
}

#[test]
fn zero_patience_runs_one_epoch() {
    let (imputed, emb, stats) = tiny_training();
    let data = Dataset::new(&imputed, &emb, &stats).unwrap();
    let config = TrainConfig {
        patience: 0,
        ..tiny_config()
    };
    let (_, log) = train(&data, &sets(&imputed), &config).unwrap();
    assert_eq!(log.epochs.len(), 2);
}

#[test]
fn invalid_config_names_field() {
    let config = TrainConfig {
        lambda: -0.1,
        ..TrainConfig::default()
    };
    assert!(config.validate().unwrap_err().to_string().contains("train.lambda"));
}
