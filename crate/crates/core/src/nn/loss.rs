use super::element::Element;
use super::error::{NnError, Result};
use super::tensor::Tensor;

/// Mean softmax cross-entropy over the batch.
///
/// Returns the loss (accumulated in `f64`) and `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] == 0 || shape[0] != labels.len() {
        return Err(NnError::ShapeMismatch {
            context: "softmax_cross_entropy logits".into(),
            expected: vec![labels.len().max(1), shape.get(1).copied().unwrap_or(1)],
            actual: shape.to_vec(),
        });
    }
    let (batch, classes) = (shape[0], shape[1]);
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(NnError::LabelOutOfRange { row, label, classes });
    }
    let mut grad = vec![T::ZERO; batch * classes];
    let mut total = 0.0f64;
    let inv_batch = 1.0 / batch as f64;
    for (n, &label) in labels.iter().enumerate() {
        let row = &logits.data()[n * classes..(n + 1) * classes];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.to_f64()));
        let sum: f64 = row.iter().map(|&v| (v.to_f64() - max).exp()).sum();
        let log_sum = sum.ln() + max;
        total += log_sum - row[label].to_f64();
        for (c, &v) in row.iter().enumerate() {
            let p = (v.to_f64() - log_sum).exp();
            let onehot = if c == label { 1.0 } else { 0.0 };
            grad[n * classes + c] = T::from_f64((p - onehot) * inv_batch);
        }
    }
    let loss = total * inv_batch;
    if !loss.is_finite() {
        return Err(NnError::NonFinite("softmax_cross_entropy loss".into()));
    }
    Ok((loss, Tensor::new(shape.to_vec(), grad)?))
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn argmax_rows<T: Element>(logits: &Tensor<T>) -> Vec<usize> {
    let classes = logits.row_len();
    (0..logits.rows())
        .map(|n| {
            let row = logits.row(n);
            let mut best = 0;
            for c in 1..classes {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        for c in [2usize, 3, 10] {
            let logits = Tensor::full(&[4, c], 0.7f32);
            let (loss, _) = softmax_cross_entropy(&logits, &[0, 1, 0, 1]).unwrap();
            assert!((loss - (c as f64).ln()).abs() < 1e-6, "C={c}: {loss}");
        }
        let (l3, _) = softmax_cross_entropy(&Tensor::<f32>::zeros(&[1, 3]), &[2]).unwrap();
        assert!((l3 - 1.0986).abs() < 1e-4);
    }

    #[test]
    fn saturated_logits_give_tiny_loss() {
        let logits = Tensor::new(vec![2, 3], vec![25.0f32, 0.0, 0.0, 0.0, 0.0, 30.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 2]).unwrap();
        assert!(loss < 1e-6);
    }

    #[test]
    fn out_of_range_label_names_row() {
        let err = softmax_cross_entropy(&Tensor::<f32>::zeros(&[3, 3]), &[0, 1, 3]).unwrap_err();
        assert_eq!(err, NnError::LabelOutOfRange { row: 2, label: 3, classes: 3 });
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = Tensor::new(vec![2, 3], vec![0.3f32, -1.2, 2.0, 0.0, 0.5, 0.1]).unwrap();
        let (_, g) = softmax_cross_entropy(&logits, &[1, 0]).unwrap();
        for n in 0..2 {
            assert!(g.row(n).iter().sum::<f32>().abs() < 1e-6);
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        let t = Tensor::new(vec![2, 3], vec![0.1f32, 0.9, 0.0, 0.5, 0.5, 0.1]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 0]);
    }
}
