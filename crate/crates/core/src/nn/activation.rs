use super::{NnError, Result, Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    relu_inplace(&mut y);
    y
}

pub fn relu_inplace<T: Scalar>(x: &mut Tensor<T>) {
    x.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
}

/// Masks the upstream gradient by `x > 0`; the gradient at exactly 0 is 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dout: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape != dout.shape {
        return Err(NnError::Shape { op: "relu_backward", expected: format!("{:?}", x.shape), got: dout.shape.clone() });
    }
    let data = x.data.iter().zip(&dout.data).map(|(&v, &g)| if v > T::zero() { g } else { T::zero() }).collect();
    Ok(Tensor::new(x.shape.clone(), data))
}

/// Row-wise softmax, stabilized by subtracting the row maximum.
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, k] = x.dims2("softmax")?;
    if k < 2 {
        return Err(NnError::Invalid { op: "softmax", detail: format!("need at least 2 classes, got {k}") });
    }
    let mut out = x.data.clone();
    for row in out.chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v = *v / sum);
    }
    Ok(Tensor::new(x.shape.clone(), out))
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
/// Returns the loss and `dL/dlogits = (softmax - onehot) / N`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let [n, k] = logits.dims2("cross_entropy")?;
    if labels.len() != n {
        return Err(NnError::Shape { op: "cross_entropy", expected: format!("{} labels", n), got: vec![labels.len()] });
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(NnError::LabelOutOfRange { index, label, classes: k });
    }
    let probs = softmax(logits)?;
    let mut loss = 0.0;
    let mut grad = probs.data.clone();
    let inv_n = T::of(1.0 / n as f64);
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data[i * k..(i + 1) * k];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max).f64();
        let lse = max + row.iter().map(|v| (v.f64() - max).exp()).sum::<f64>().ln();
        loss += lse - row[label].f64();
        grad[i * k + label] -= T::one();
    }
    grad.iter_mut().for_each(|g| *g *= inv_n);
    Ok((T::of(loss / n as f64), Tensor::new(logits.shape.clone(), grad)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_cases() {
        let neg = Tensor::new(vec![3], vec![-1.0f64, -0.5, -3.0]);
        assert_eq!(relu(&neg).data, vec![0.0; 3]);
        let pos = Tensor::new(vec![2], vec![0.1f64, 5.0]);
        assert_eq!(relu(&pos), pos);
        assert_eq!(relu(&relu(&neg)), relu(&neg));
        let x = Tensor::new(vec![3], vec![-1.0f64, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::filled(vec![3], 1.0)).unwrap();
        assert_eq!(g.data, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_cases() {
        let p = softmax(&Tensor::new(vec![1, 2], vec![0.3f64, 0.3])).unwrap();
        assert_eq!(p.data, vec![0.5, 0.5]);
        let p = softmax(&Tensor::new(vec![1, 2], vec![1000.0f64, 0.0])).unwrap();
        assert_eq!(p.data, vec![1.0, 0.0]);
        assert!(softmax(&Tensor::new(vec![1, 1], vec![0.0f64])).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let (loss, _) = cross_entropy(&Tensor::new(vec![1, 2], vec![0.0f64, 0.0]), &[0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        let (loss, _) = cross_entropy(&Tensor::new(vec![1, 2], vec![50.0f64, -50.0]), &[0]).unwrap();
        assert!(loss < 1e-40);
        let (loss, _) = cross_entropy(&Tensor::new(vec![1, 2], vec![1000.0f32, 0.0]), &[1]).unwrap();
        assert!((loss - 1000.0).abs() < 1e-3);
        assert_eq!(
            cross_entropy(&Tensor::new(vec![1, 2], vec![0.0f64, 0.0]), &[2]).unwrap_err(),
            NnError::LabelOutOfRange { index: 0, label: 2, classes: 2 }
        );
    }
}
