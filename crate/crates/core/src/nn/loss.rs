use super::Matrix;
use crate::{Error, Result};

/// Mean squared error and its gradient `2(pred − label)/n`.
pub fn mse_loss(pred: &[f64], label: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.is_empty() {
        return Err(Error::Empty("mse_loss"));
    }
    if pred.len() != label.len() {
        return Err(Error::shape("mse_loss", pred.len(), label.len()));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(label)
        .map(|(p, y)| {
            let r = p - y;
            loss += r * r;
            2.0 * r / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Mean softmax cross-entropy over rows, with the max logit subtracted
/// before exponentiation.
pub fn cross_entropy_loss(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (n, k) = logits.shape();
    if n == 0 {
        return Err(Error::Empty("cross_entropy_loss"));
    }
    if labels.len() != n {
        return Err(Error::shape("cross_entropy_loss", format!("{n} labels"), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= k) {
        return Err(Error::InvalidArgument(format!(
            "class index {bad} out of range for {k} logit columns"
        )));
    }
    let mut grad = Matrix::zeros(n, k);
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let g = grad.row_mut(i);
        let mut z = 0.0;
        for (gj, &l) in g.iter_mut().zip(row) {
            *gj = (l - max).exp();
            z += *gj;
        }
        loss += z.ln() - (row[label] - max);
        for gj in g.iter_mut() {
            *gj *= inv_n / z;
        }
        g[label] -= inv_n;
    }
    Ok((loss * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_diff_check;

    #[test]
    fn mse_examples() {
        let (l, g) = mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
        let (l, _) = mse_loss(&[4.0, 4.0], &[5.0, 3.0]).unwrap();
        assert_eq!(l, 1.0);
        assert!(matches!(mse_loss(&[], &[]), Err(Error::Empty(_))));
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mse_grad_matches_finite_differences() {
        let label = [0.3, -1.2, 4.0, 2.2];
        let f = |p: &[Vec<f64>]| {
            let (l, g) = mse_loss(&p[0], &label).unwrap();
            (l, vec![g])
        };
        let report = finite_diff_check(f, &[vec![1.0, 0.5, 3.3, -0.7]], 1e-5);
        assert!(report.max_rel_error() < 1e-6, "{report:?}");
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let (l, _) = cross_entropy_loss(&Matrix::zeros(5, 3), &[0, 1, 2, 2, 0]).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-12);
        assert!((l - 1.0986).abs() < 1e-4);
    }

    #[test]
    fn saturated_logits_give_near_zero_loss() {
        let logits = Matrix::from_rows(&[[50.0, 0.0, 0.0], [0.0, 0.0, 50.0]]).unwrap();
        let (l, g) = cross_entropy_loss(&logits, &[0, 2]).unwrap();
        assert!(l < 1e-20);
        assert!(g.is_finite());
        let huge = Matrix::from_rows(&[[1e4, -1e4]]).unwrap();
        let (l, g) = cross_entropy_loss(&huge, &[1]).unwrap();
        assert!(l.is_finite() && g.is_finite());
    }

    #[test]
    fn out_of_range_class_is_rejected() {
        assert!(cross_entropy_loss(&Matrix::zeros(1, 3), &[3]).is_err());
    }

    #[test]
    fn ce_grad_matches_finite_differences() {
        let labels = [2, 0, 1];
        let f = |p: &[Vec<f64>]| {
            let logits = Matrix::from_vec(3, 4, p[0].clone()).unwrap();
            let (l, g) = cross_entropy_loss(&logits, &labels).unwrap();
            (l, vec![g.into_vec()])
        };
        let init: Vec<f64> = (0..12).map(|i| ((i * 5) % 7) as f64 * 0.4 - 1.0).collect();
        let report = finite_diff_check(f, &[init], 1e-5);
        assert!(report.max_rel_error() < 1e-5, "{report:?}");
    }
}
