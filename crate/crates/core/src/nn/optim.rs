use super::{Scalar, Tensor};

/// Plain SGD: `p <- p - lr * g`, then zeroes every gradient.
pub fn sgd_step<'a, T: Scalar + 'a>(params: impl IntoIterator<Item = &'a mut Tensor<T>>, lr: T) {
    for p in params {
        if let Some(g) = &mut p.grad {
            for (w, gv) in p.data.iter_mut().zip(g.iter_mut()) {
                *w -= lr * *gv;
                *gv = T::zero();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_keeps_parameters() {
        let mut p = Tensor::param(vec![2], vec![1.0f64, -3.0]);
        p.grad = Some(vec![5.0, 7.0]);
        sgd_step([&mut p], 0.0);
        assert_eq!(p.data, vec![1.0, -3.0]);
        assert_eq!(p.grad, Some(vec![0.0, 0.0]));
    }

    #[test]
    fn single_step_arithmetic() {
        let mut p = Tensor::param(vec![1], vec![1.0f64]);
        p.grad = Some(vec![2.0]);
        sgd_step([&mut p], 1e-4);
        assert!((p.data[0] - 0.9998).abs() < 1e-15);
    }

    #[test]
    fn two_steps_equal_one_summed_step_on_linear_gradient() {
        // f(p) = a . p has gradient a everywhere, so steps compose additively.
        let a = [0.5f64, -1.25, 3.0];
        let lr = 0.01;
        let mut twice = Tensor::param(vec![3], vec![1.0, 2.0, -1.0]);
        for _ in 0..2 {
            twice.grad = Some(a.to_vec());
            sgd_step([&mut twice], lr);
        }
        let mut once = Tensor::param(vec![3], vec![1.0, 2.0, -1.0]);
        once.grad = Some(a.iter().map(|v| 2.0 * v).collect());
        sgd_step([&mut once], lr);
        for (x, y) in twice.data.iter().zip(&once.data) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}
