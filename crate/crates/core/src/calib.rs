//! Platform-specific affine rating calibration `ŷ = a_p·s + b_p`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fingerprint::derive_seed;
use crate::model::{encode, fuse, gate, Architecture, Batch, ModelParams};
use crate::nn::{AdamConfig, AdamState, Matrix};
use crate::{Error, Result};

/// One `(a_p, b_p)` pair per platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub scale: Vec<f64>,
    pub bias: Vec<f64>,
}

impl CalibrationParams {
    /// Identity calibration (`a = 1`, `b = 0`) for `platforms` platforms.
    pub fn identity(platforms: usize) -> Self {
        Self {
            scale: vec![1.0; platforms],
            bias: vec![0.0; platforms],
        }
    }

    pub fn platforms(&self) -> usize {
        self.scale.len()
    }

    pub fn pair(&self, platform: usize) -> Result<(f64, f64)> {
        match (self.scale.get(platform), self.bias.get(platform)) {
            (Some(&a), Some(&b)) => Ok((a, b)),
            _ => Err(Error::UnknownPlatform(platform)),
        }
    }

    pub fn set_pair(&mut self, platform: usize, a: f64, b: f64) -> Result<()> {
        if platform >= self.platforms() {
            return Err(Error::UnknownPlatform(platform));
        }
        self.scale[platform] = a;
        self.bias[platform] = b;
        Ok(())
    }
}

/// Applies platform `platform`'s pair elementwise. No clipping.
pub fn apply_calibration(calib: &CalibrationParams, s: &[f64], platform: usize) -> Result<Vec<f64>> {
    let (a, b) = calib.pair(platform)?;
    Ok(s.iter().map(|&v| a * v + b).collect())
}

/// Historical target rating moments `(ȳ_T, σ_y^T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetRatingStats {
    pub mean: f64,
    pub sd: f64,
}

impl TargetRatingStats {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::NonFinite("target rating mean".into()));
        }
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(Error::Degenerate(format!("target rating sd must be > 0, got {sd}")));
        }
        Ok(Self { mean, sd })
    }

    /// Population moments of observed ratings.
    pub fn from_labels(labels: &[f64]) -> Result<Self> {
        let (mean, sd) = moments(labels)?;
        Self::new(mean, sd)
    }
}

/// Mean and population standard deviation.
pub fn moments(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("moments"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Moment matching: `a = σ_y / σ_s`, `b = ȳ − a·s̄`, with population
/// standard deviations, so the calibrated scores reproduce the supplied
/// moments exactly.
pub fn fit_unsupervised(s: &[f64], stats: &TargetRatingStats) -> Result<(f64, f64)> {
    if s.len() < 2 {
        return Err(Error::Degenerate(format!("need at least 2 predictions, got {}", s.len())));
    }
    if !(stats.sd > 0.0) {
        return Err(Error::Degenerate(format!("target rating sd must be > 0, got {}", stats.sd)));
    }
    let (mean, sd) = moments(s)?;
    if !mean.is_finite() || !sd.is_finite() {
        return Err(Error::NonFinite("latent predictions".into()));
    }
    if sd == 0.0 {
        return Err(Error::Degenerate("predictions have zero spread".into()));
    }
    let a = stats.sd / sd;
    Ok((a, stats.mean - a * mean))
}

/// Pearson correlation, used to flag predictors that are anti-correlated
/// with an audit sample (moment matching always returns `a > 0`).
pub fn correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("correlation", x.len(), y.len()));
    }
    let (mx, sx) = moments(x)?;
    let (my, sy) = moments(y)?;
    if sx == 0.0 || sy == 0.0 {
        return Ok(0.0);
    }
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / x.len() as f64;
    Ok(cov / (sx * sy))
}

const TABLE_HEADER: &str = "# adaptms-calibration v1";

/// Audit table: header with the config fingerprint, then one
/// `platform<TAB>a<TAB>b` line per platform.
pub fn write_table(calib: &CalibrationParams, config_fingerprint: &str) -> String {
    let mut out = format!("{TABLE_HEADER} config={config_fingerprint}\nplatform\ta\tb\n");
    for p in 0..calib.platforms() {
        out.push_str(&format!("{p}\t{:?}\t{:?}\n", calib.scale[p], calib.bias[p]));
    }
    out
}

/// Parses [`write_table`] output; returns the table and fingerprint.
pub fn parse_table(text: &str) -> Result<(CalibrationParams, String)> {
    let err = |line: usize, msg: String| Error::Parse {
        what: "calibration table",
        line,
        msg,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "empty input".into()))?;
    let fp = header
        .strip_prefix(TABLE_HEADER)
        .and_then(|r| r.trim().strip_prefix("config="))
        .ok_or_else(|| err(1, "missing calibration header".into()))?
        .to_string();
    if lines.next() != Some("platform\ta\tb") {
        return Err(err(2, "missing column header".into()));
    }
    let mut calib = CalibrationParams {
        scale: vec![],
        bias: vec![],
    };
    for (i, line) in lines.enumerate() {
        let no = i + 3;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(err(no, format!("expected 3 fields, found {}", f.len())));
        }
        let p: usize = f[0].parse().map_err(|e| err(no, format!("platform: {e}")))?;
        if p != calib.platforms() {
            return Err(err(no, format!("expected platform {}, found {p}", calib.platforms())));
        }
        let a: f64 = f[1].parse().map_err(|e| err(no, format!("a: {e}")))?;
        let b: f64 = f[2].parse().map_err(|e| err(no, format!("b: {e}")))?;
        if !a.is_finite() || !b.is_finite() {
            return Err(err(no, "non-finite calibration value".into()));
        }
        calib.scale.push(a);
        calib.bias.push(b);
    }
    Ok((calib, fp))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FewShotConfig {
    pub lr: f64,
    pub max_steps: usize,
    /// Steps without held-out improvement before stopping (k ≥ 20 only).
    pub patience: usize,
    pub seed: u64,
    /// Also adapt the gate parameters.
    pub train_gate: bool,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            max_steps: 200,
            patience: 20,
            seed: 0,
            train_gate: true,
        }
    }
}

/// Sample size from which a quarter is held out for early stopping.
pub const FEWSHOT_HOLDOUT_MIN_K: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotLog {
    pub steps: usize,
    pub fit_rows: usize,
    pub holdout_rows: usize,
    /// MSE on the fitting rows before and after.
    pub initial_fit_mse: f64,
    pub final_fit_mse: f64,
}

struct FewShotState<'a> {
    h: &'a Matrix,
    g: &'a Matrix,
    m: &'a [f64],
    arch: Architecture,
    target: usize,
}

impl FewShotState<'_> {
    /// Predictions, latent scores, gate values and head hidden activations.
    fn forward(&self, p: &ModelParams) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Matrix)> {
        let alpha = if self.arch.use_gate {
            gate(p, self.h, self.m)?
        } else {
            vec![1.0; self.h.rows()]
        };
        let z = fuse(self.h, self.g, &alpha)?;
        let (q, _) = p.head_l1.forward(&z)?;
        let s = p.head_out.forward(&q)?.0.into_vec();
        let (a, b) = p.calib.pair(self.target)?;
        let pred = s.iter().map(|v| a * v + b).collect();
        Ok((pred, s, alpha, q))
    }

    /// Gradients of the fitting-row MSE with respect to `(a_T, b_T)` and,
    /// when `train_gate`, the gate weights and bias.
    fn gradients(
        &self,
        p: &ModelParams,
        fit: &[usize],
        labels: &[f64],
        train_gate: bool,
    ) -> Result<(f64, f64, Vec<f64>, f64)> {
        let k = self.h.rows();
        let d = self.h.cols();
        let (pred, s, alpha, q) = self.forward(p)?;
        let (a, _) = p.calib.pair(self.target)?;
        let n = fit.len() as f64;
        let mut ga = 0.0;
        let mut gb = 0.0;
        let mut ds = vec![0.0; k];
        for &i in fit {
            let dp = 2.0 * (pred[i] - labels[i]) / n;
            ga += dp * s[i];
            gb += dp;
            ds[i] = dp * a;
        }
        let mut gw = vec![0.0; d + 1];
        let mut gbias = 0.0;
        if train_gate {
            // Back through the frozen head to the gated half of z.
            let hidden = q.cols();
            let mut dq = Matrix::zeros(k, hidden);
            for &i in fit {
                let row = dq.row_mut(i);
                for (j, v) in row.iter_mut().enumerate() {
                    if q.get(i, j) > 0.0 {
                        *v = ds[i] * p.head_out.weight.get(j, 0);
                    }
                }
            }
            let dz = dq.matmul_t(&p.head_l1.weight)?;
            for &i in fit {
                let dalpha: f64 = dz.row(i)[d..].iter().zip(self.g.row(i)).map(|(x, y)| x * y).sum();
                let du = dalpha * alpha[i] * (1.0 - alpha[i]);
                for (w, hv) in gw[..d].iter_mut().zip(self.h.row(i)) {
                    *w += du * hv;
                }
                gw[d] += du * self.m[i];
                gbias += du;
            }
        }
        Ok((ga, gb, gw, gbias))
    }
}

fn mse_on(pred: &[f64], labels: &[f64], rows: &[usize]) -> f64 {
    rows.iter().map(|&i| (pred[i] - labels[i]).powi(2)).sum::<f64>() / rows.len() as f64
}

/// Supervised few-shot adaptation on `k` labeled target rows. Only the
/// target calibration pair and the gate move; the encoder, head and
/// discriminator stay bit-identical. For `k ≥ 20` a quarter of the rows is
/// held out and the best held-out state is returned; otherwise a fixed step
/// budget runs on all rows.
pub fn fit_supervised_fewshot(
    params: &ModelParams,
    batch: &Batch,
    labels: &[f64],
    target: usize,
    arch: Architecture,
    config: &FewShotConfig,
) -> Result<(ModelParams, FewShotLog)> {
    let k = batch.len();
    if k == 0 {
        return Err(Error::InvalidArgument(
            "few-shot fitting needs k >= 1 labeled rows; use fit_unsupervised for k = 0".into(),
        ));
    }
    if labels.len() != k {
        return Err(Error::shape("few-shot labels", k, labels.len()));
    }
    params.check_platform(target)?;
    if !(config.lr >= 0.0) || !config.lr.is_finite() {
        return Err(Error::Config {
            field: "fewshot.lr".into(),
            msg: format!("{} must be finite and >= 0", config.lr),
        });
    }

    let rep = encode(params, batch, arch)?;
    let m: Vec<f64> = if arch.use_behavior { batch.modality.clone() } else { vec![0.0; k] };
    let state = FewShotState {
        h: &rep.h,
        g: &rep.g,
        m: &m,
        arch,
        target,
    };

    let mut order: Vec<usize> = (0..k).collect();
    let (fit, holdout): (Vec<usize>, Vec<usize>) = if k >= FEWSHOT_HOLDOUT_MIN_K {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "fewshot-holdout")));
        let n_hold = k / 4;
        (order[n_hold..].to_vec(), order[..n_hold].to_vec())
    } else {
        (order, Vec::new())
    };

    let train_gate = config.train_gate && arch.use_gate;
    let mut p = params.clone();
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr));
    let (pred0, ..) = state.forward(&p)?;
    let initial_fit_mse = mse_on(&pred0, labels, &fit);
    let mut best = p.clone();
    let mut best_hold = if holdout.is_empty() { f64::INFINITY } else { mse_on(&pred0, labels, &holdout) };
    let mut since_best = 0;
    let mut steps = 0;

    for _ in 0..config.max_steps {
        let (ga, gb, gw, gbias) = state.gradients(&p, &fit, labels, train_gate)?;
        {
            let ModelParams {
                calib, gate_w, gate_b, ..
            } = &mut p;
            let (sa, sb) = (&mut calib.scale[target], &mut calib.bias[target]);
            let (ga, gb, gbias) = ([ga], [gb], [gbias]);
            if train_gate {
                adam.step(
                    &mut [
                        std::slice::from_mut(sa),
                        std::slice::from_mut(sb),
                        gate_w.as_mut_slice(),
                        std::slice::from_mut(gate_b),
                    ],
                    &[&ga, &gb, &gw, &gbias],
                )?;
            } else {
                adam.step(&mut [std::slice::from_mut(sa), std::slice::from_mut(sb)], &[&ga, &gb])?;
            }
        }
        steps += 1;
        if !holdout.is_empty() {
            let (pred, ..) = state.forward(&p)?;
            let hold = mse_on(&pred, labels, &holdout);
            if hold < best_hold {
                best_hold = hold;
                best = p.clone();
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
        }
    }
    if holdout.is_empty() {
        best = p;
    }
    let (pred, ..) = state.forward(&best)?;
    let log = FewShotLog {
        steps,
        fit_rows: fit.len(),
        holdout_rows: holdout.len(),
        initial_fit_mse,
        final_fit_mse: mse_on(&pred, labels, &fit),
    };
    Ok((best, log))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::{random_step_batch, ModelDims};
    use crate::nn::finite_diff_check;

    fn small_model(seed: u64) -> (ModelParams, Batch, Vec<f64>) {
        let dims = ModelDims {
            embed: 10,
            latent: 5,
            behavior_hidden: 6,
            fusion_hidden: 7,
            disc_hidden: 4,
            platforms: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::init(dims, &mut rng).unwrap();
        params.calib.set_pair(2, 0.8, 0.3).unwrap();
        let step = random_step_batch(10, 3, 0, 12, &mut rng);
        let labels = (0..12).map(|i| 1.0 + (i as f64 * 0.37) % 4.0).collect();
        (params, step.rows, labels)
    }

    #[test]
    fn fewshot_gradients_match_finite_differences() {
        let (params, batch, labels) = small_model(3);
        let arch = Architecture::default();
        let rep = encode(&params, &batch, arch).unwrap();
        let state = FewShotState {
            h: &rep.h,
            g: &rep.g,
            m: &batch.modality,
            arch,
            target: 2,
        };
        let fit: Vec<usize> = (0..12).filter(|i| i % 4 != 0).collect();
        let unpack = |blocks: &[Vec<f64>]| {
            let mut p = params.clone();
            p.calib.set_pair(2, blocks[0][0], blocks[1][0]).unwrap();
            p.gate_w = blocks[2].clone();
            p.gate_b = blocks[3][0];
            p
        };
        let start = vec![vec![0.8], vec![0.3], params.gate_w.clone(), vec![params.gate_b]];
        let report = finite_diff_check(
            |blocks| {
                let p = unpack(blocks);
                let (pred, ..) = state.forward(&p).unwrap();
                let (ga, gb, gw, gbias) = state.gradients(&p, &fit, &labels, true).unwrap();
                (mse_on(&pred, &labels, &fit), vec![vec![ga], vec![gb], gw, vec![gbias]])
            },
            &start,
            1e-6,
        );
        assert!(report.max_rel_error() < 1e-5, "{report:?}");
    }

    #[test]
    fn fewshot_moves_only_calibration_and_gate() {
        let (params, batch, labels) = small_model(5);
        let config = FewShotConfig::default();
        let (fitted, log) =
            fit_supervised_fewshot(&params, &batch, &labels, 2, Architecture::default(), &config).unwrap();
        assert_eq!(log.holdout_rows, 0);
        assert_eq!(log.steps, config.max_steps);
        assert!(log.final_fit_mse < log.initial_fit_mse);
        assert_ne!(fitted.gate_w, params.gate_w);
        assert_ne!(fitted.calib.pair(2).unwrap(), params.calib.pair(2).unwrap());
        assert_eq!(fitted.calib.pair(0).unwrap(), params.calib.pair(0).unwrap());
        assert_eq!(fitted.calib.pair(1).unwrap(), params.calib.pair(1).unwrap());
        for block in crate::model::Block::ALL {
            if !matches!(
                block,
                crate::model::Block::GateW
                    | crate::model::Block::GateB
                    | crate::model::Block::CalibScale
                    | crate::model::Block::CalibBias
            ) {
                assert_eq!(
                    fitted.block_fingerprint(block),
                    params.block_fingerprint(block),
                    "{}",
                    block.name()
                );
            }
        }
    }

    #[test]
    fn fewshot_without_gate_keeps_gate() {
        let (params, batch, labels) = small_model(6);
        let config = FewShotConfig {
            train_gate: false,
            ..Default::default()
        };
        let (fitted, _) =
            fit_supervised_fewshot(&params, &batch, &labels, 2, Architecture::default(), &config).unwrap();
        assert_eq!(fitted.gate_w, params.gate_w);
        assert_eq!(fitted.gate_b, params.gate_b);
    }
}
