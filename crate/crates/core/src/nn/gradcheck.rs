//! Central-difference gradient oracle.

/// Gradients smaller than this are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

/// Relative error `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub block: usize,
    pub max_rel_error: f64,
    /// Index inside the block where the worst error occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }
}

/// Compares analytic gradients against central differences.
///
/// `f` maps parameter blocks to `(loss, gradients)` and must be
/// deterministic; it is evaluated once at `params` for the analytic
/// gradient and twice per scalar for the numeric one.
pub fn finite_diff_check<F>(mut f: F, params: &[Vec<f64>], perturbation: f64) -> GradCheckReport
where
    F: FnMut(&[Vec<f64>]) -> (f64, Vec<Vec<f64>>),
{
    let (_, analytic) = f(params);
    assert_eq!(analytic.len(), params.len(), "one gradient block per parameter block");
    let mut work = params.to_vec();
    let mut blocks = Vec::with_capacity(params.len());
    for (b, grad) in analytic.iter().enumerate() {
        assert_eq!(grad.len(), params[b].len(), "gradient block {b} size");
        let mut report = BlockReport {
            block: b,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..grad.len() {
            let orig = work[b][i];
            work[b][i] = orig + perturbation;
            let plus = f(&work).0;
            work[b][i] = orig - perturbation;
            let minus = f(&work).0;
            work[b][i] = orig;
            let numeric = (plus - minus) / (2.0 * perturbation);
            let err = relative_error(grad[i], numeric);
            if err > report.max_rel_error || i == 0 {
                report = BlockReport {
                    block: b,
                    max_rel_error: err.max(report.max_rel_error),
                    worst_index: i,
                    analytic: grad[i],
                    numeric,
                };
            }
        }
        blocks.push(report);
    }
    GradCheckReport { blocks }
}

/// Central-difference gradient of a scalar function, without an analytic
/// counterpart.
pub fn numeric_gradient<F>(mut f: F, params: &[Vec<f64>], perturbation: f64) -> Vec<Vec<f64>>
where
    F: FnMut(&[Vec<f64>]) -> f64,
{
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for b in 0..params.len() {
        let mut g = vec![0.0; params[b].len()];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = work[b][i];
            work[b][i] = orig + perturbation;
            let plus = f(&work);
            work[b][i] = orig - perturbation;
            let minus = f(&work);
            work[b][i] = orig;
            *gi = (plus - minus) / (2.0 * perturbation);
        }
        out.push(g);
    }
    out
}
