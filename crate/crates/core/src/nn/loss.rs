use super::{NnError, Real, Result, Tensor};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z = z + *v;
        }
        row.iter_mut().for_each(|v| *v = *v / z);
    }
    out
}

fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(NnError::Shape(format!("{n} logit rows but {} labels", labels.len())));
    }
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(NnError::Label { label, classes }),
        None => Ok(()),
    }
}

/// Mean negative log-likelihood and its gradient `(softmax − onehot) / n`.
pub fn cross_entropy_loss<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    if logits.shape().len() != 2 {
        return Err(NnError::Shape(format!("logits must be [n, c], got {:?}", logits.shape())));
    }
    let (n, c) = (logits.rows(), logits.row_len());
    check_labels(labels, n, c)?;
    let inv_n = T::one() / T::of(n as f64);
    let mut grad = softmax_rows(logits);
    let mut loss = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        loss = loss + (lse - row[label]);
        let g = grad.row_mut(i);
        g[label] = g[label] - T::one();
        g.iter_mut().for_each(|v| *v = *v * inv_n);
    }
    Ok((loss * inv_n, grad))
}

/// Number of rows whose label is among the `k` largest logits. Ties are
/// broken towards the lower class index.
pub fn top_k_hits<T: Real>(logits: &Tensor<T>, labels: &[usize], k: usize) -> Result<usize> {
    let (n, c) = (logits.rows(), logits.row_len());
    check_labels(labels, n, c)?;
    Ok(labels
        .iter()
        .enumerate()
        .filter(|&(i, &label)| {
            let row = logits.row(i);
            let target = row[label];
            let better = row
                .iter()
                .enumerate()
                .filter(|&(j, &v)| v > target || (v == target && j < label))
                .count();
            better < k
        })
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Tensor::<f32>::zeros(&[3, 4]);
        let (loss, grad) = cross_entropy_loss(&logits, &[0, 1, 3]).unwrap();
        assert!((loss - 4f32.ln()).abs() < 1e-6);
        assert!((loss - 1.38629).abs() < 1e-5);
        assert!((grad.row(0)[0] - (0.25 - 1.0) / 3.0).abs() < 1e-7);
    }

    #[test]
    fn saturated_correct_logit_gives_zero_loss() {
        let logits = Tensor::<f32>::new(vec![1, 3], vec![0.0, 1000.0, 0.0]).unwrap();
        let (loss, grad) = cross_entropy_loss(&logits, &[1]).unwrap();
        assert!(loss.abs() < 1e-6);
        assert!(grad.all_finite());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = Tensor::<f32>::new(vec![2, 3], vec![1.0, -2.0, 50.0, 0.3, 0.3, -7.0]).unwrap();
        let p = softmax_rows(&logits);
        for i in 0..2 {
            assert!((p.row(i).iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = vec![0.3f32, -1.2, 0.8, 2.1, 0.05, -0.7];
        let labels = [2, 0];
        let logits = Tensor::new(vec![2, 3], data.clone()).unwrap();
        let (_, grad) = cross_entropy_loss(&logits, &labels).unwrap();
        let eps = 1e-2f32;
        for i in 0..6 {
            let mut plus = data.clone();
            plus[i] += eps;
            let mut minus = data.clone();
            minus[i] -= eps;
            let lp = cross_entropy_loss(&Tensor::new(vec![2, 3], plus).unwrap(), &labels).unwrap().0;
            let lm = cross_entropy_loss(&Tensor::new(vec![2, 3], minus).unwrap(), &labels).unwrap().0;
            let numeric = (lp - lm) / (2.0 * eps);
            let rel = (numeric - grad.data()[i]).abs() / numeric.abs().max(grad.data()[i].abs());
            assert!(rel < 1e-3, "entry {i}: {numeric} vs {}", grad.data()[i]);
        }
    }

    #[test]
    fn labels_are_validated() {
        let logits = Tensor::<f32>::zeros(&[1, 3]);
        assert_eq!(cross_entropy_loss(&logits, &[3]).unwrap_err(), NnError::Label { label: 3, classes: 3 });
        assert!(cross_entropy_loss(&logits, &[0, 1]).is_err());
    }

    #[test]
    fn top_k_counts() {
        let logits = Tensor::<f32>::new(vec![3, 3], vec![0.1, 0.5, 0.2, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(top_k_hits(&logits, &[1, 1, 2], 1).unwrap(), 1);
        assert_eq!(top_k_hits(&logits, &[1, 1, 2], 2).unwrap(), 2);
        assert_eq!(top_k_hits(&logits, &[2, 1, 0], 1).unwrap(), 1);
        assert_eq!(top_k_hits(&logits, &[2, 1, 0], 3).unwrap(), 3);
    }
}
