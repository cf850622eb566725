use super::{check_same_shape, NnError, Result, Scalar, Tensor};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// 2-D batch normalization. Empty running statistics mean "not initialized".
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    pub momentum: f64,
    pub mode: Mode,
}

impl<T: Scalar> BatchNormState<T> {
    /// `gamma = 1`, `beta = 0`, running statistics `(0, 1)`, `eps = 1e-5`,
    /// `momentum = 0.1`, train mode.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::param(vec![channels], vec![T::one(); channels]),
            beta: Tensor::param(vec![channels], vec![T::zero(); channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: 1e-5,
            momentum: 0.1,
            mode: Mode::Train,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn stats_initialized(&self) -> bool {
        self.running_mean.len() == self.channels() && self.running_var.len() == self.channels()
    }
}

/// What the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<f64>,
    mode: Mode,
}

fn check<T: Scalar>(x: &Tensor<T>, st: &BatchNormState<T>) -> Result<[usize; 4]> {
    let dims = x.dims4("batchnorm2d")?;
    if dims[1] != st.channels() {
        return Err(NnError::Shape {
            op: "batchnorm2d",
            expected: format!("{} channels", st.channels()),
            got: x.shape.clone(),
        });
    }
    Ok(dims)
}

/// Per-channel mean and biased variance, accumulated in f64.
fn channel_stats<T: Scalar>(x: &[T], n: usize, c: usize, hw: usize) -> Vec<(f64, f64)> {
    let channels: Vec<usize> = (0..c).collect();
    par::map_collect(&channels, |&ch| {
        let m = (n * hw) as f64;
        let planes = || (0..n).map(move |s| &x[(s * c + ch) * hw..(s * c + ch + 1) * hw]);
        let mean = planes().flat_map(|p| p.iter()).map(|v| v.f64()).sum::<f64>() / m;
        let var = planes().flat_map(|p| p.iter()).map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / m;
        (mean, var)
    })
}

/// Normalizes per channel. Train mode uses batch statistics (biased
/// variance) and updates the running statistics, with the unbiased
/// variance feeding `running_var`; eval mode uses the running statistics.
pub fn batchnorm2d<T: Scalar>(x: &Tensor<T>, st: &mut BatchNormState<T>) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let [n, c, h, w] = check(x, st)?;
    let hw = h * w;
    let (mean, inv_std): (Vec<f64>, Vec<f64>) = match st.mode {
        Mode::Train => {
            let m = n * hw;
            if m < 2 {
                return Err(NnError::InsufficientBatch(m));
            }
            let stats = channel_stats(&x.data, n, c, hw);
            let mo = st.momentum;
            if !st.stats_initialized() {
                st.running_mean = vec![T::zero(); c];
                st.running_var = vec![T::one(); c];
            }
            for (ch, &(mean, var)) in stats.iter().enumerate() {
                let unbiased = var * m as f64 / (m - 1) as f64;
                st.running_mean[ch] = T::of((1.0 - mo) * st.running_mean[ch].f64() + mo * mean);
                st.running_var[ch] = T::of((1.0 - mo) * st.running_var[ch].f64() + mo * unbiased);
            }
            stats.iter().map(|&(m, v)| (m, 1.0 / (v + st.eps).sqrt())).unzip()
        }
        Mode::Eval => {
            if !st.stats_initialized() {
                return Err(NnError::UninitializedRunningStats);
            }
            st.running_mean
                .iter()
                .zip(&st.running_var)
                .map(|(m, v)| (m.f64(), 1.0 / (v.f64() + st.eps).sqrt()))
                .unzip()
        }
    };
    let mut xhat = vec![T::zero(); x.len()];
    par::for_each_chunk_mut(&mut xhat, hw, |p, dst| {
        let ch = p % c;
        let (mu, is) = (T::of(mean[ch]), T::of(inv_std[ch]));
        for (d, &v) in dst.iter_mut().zip(&x.data[p * hw..(p + 1) * hw]) {
            *d = (v - mu) * is;
        }
    });
    let mut out = vec![T::zero(); x.len()];
    let (gamma, beta) = (&st.gamma.data, &st.beta.data);
    par::for_each_chunk_mut(&mut out, hw, |p, dst| {
        let ch = p % c;
        for (d, &v) in dst.iter_mut().zip(&xhat[p * hw..(p + 1) * hw]) {
            *d = gamma[ch] * v + beta[ch];
        }
    });
    Ok((Tensor::new(x.shape.clone(), out), BatchNormCache { xhat, inv_std, mode: st.mode }))
}

/// Eval-mode normalization applied in place (no cache).
pub fn batchnorm2d_eval_inplace<T: Scalar>(x: &mut Tensor<T>, st: &BatchNormState<T>) -> Result<()> {
    let [_, c, h, w] = check(x, st)?;
    if !st.stats_initialized() {
        return Err(NnError::UninitializedRunningStats);
    }
    let coeffs: Vec<(T, T)> = (0..c)
        .map(|ch| {
            let is = 1.0 / (st.running_var[ch].f64() + st.eps).sqrt();
            let scale = st.gamma.data[ch].f64() * is;
            (T::of(scale), T::of(st.beta.data[ch].f64() - st.running_mean[ch].f64() * scale))
        })
        .collect();
    par::for_each_chunk_mut(&mut x.data, h * w, |p, plane| {
        let (a, b) = coeffs[p % c];
        plane.iter_mut().for_each(|v| *v = a * *v + b);
    });
    Ok(())
}

/// Returns `dL/dx`; accumulates `dL/dgamma` and `dL/dbeta`.
pub fn batchnorm2d_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    st: &mut BatchNormState<T>,
    dout: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = dout.dims4("batchnorm2d_backward")?;
    check_same_shape("batchnorm2d_backward", &[n, c, h, w], dout)?;
    if cache.xhat.len() != dout.len() || c != st.channels() {
        return Err(NnError::Shape {
            op: "batchnorm2d_backward",
            expected: "shape of the cached forward input".into(),
            got: dout.shape.clone(),
        });
    }
    let hw = h * w;
    let m = (n * hw) as f64;
    let channels: Vec<usize> = (0..c).collect();
    let sums: Vec<(f64, f64)> = par::map_collect(&channels, |&ch| {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for s in 0..n {
            let r = (s * c + ch) * hw..(s * c + ch + 1) * hw;
            for (&dy, &xh) in dout.data[r.clone()].iter().zip(&cache.xhat[r]) {
                sum_dy += dy.f64();
                sum_dy_xhat += dy.f64() * xh.f64();
            }
        }
        (sum_dy, sum_dy_xhat)
    });
    let gamma: Vec<f64> = st.gamma.data.iter().map(|g| g.f64()).collect();
    let mut dx = vec![T::zero(); dout.len()];
    par::for_each_chunk_mut(&mut dx, hw, |p, dst| {
        let ch = p % c;
        let scale = gamma[ch] * cache.inv_std[ch];
        let dy = &dout.data[p * hw..(p + 1) * hw];
        let xh = &cache.xhat[p * hw..(p + 1) * hw];
        match cache.mode {
            Mode::Train => {
                let (sdy, sdyx) = sums[ch];
                for ((d, &g), &x) in dst.iter_mut().zip(dy).zip(xh) {
                    *d = T::of(scale / m * (m * g.f64() - sdy - x.f64() * sdyx));
                }
            }
            Mode::Eval => {
                for (d, &g) in dst.iter_mut().zip(dy) {
                    *d = T::of(scale * g.f64());
                }
            }
        }
    });
    for (ch, &(sdy, sdyx)) in sums.iter().enumerate() {
        st.gamma.grad_mut()[ch] += T::of(sdyx);
        st.beta.grad_mut()[ch] += T::of(sdy);
    }
    Ok(Tensor::new(dout.shape.clone(), dx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn train_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::new(vec![3, 2, 4, 5], (0..120).map(|_| rng.random_range(-3.0..7.0)).collect::<Vec<f64>>());
        let mut st = BatchNormState::new(2);
        let (y, _) = batchnorm2d(&x, &mut st).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|s| y.data[(s * 2 + ch) * 20..(s * 2 + ch + 1) * 20].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 60.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 60.0;
            assert!(mean.abs() < 1e-6);
            // eps shrinks the variance slightly below 1
            assert!((var - 1.0).abs() < 1e-4, "{var}");
        }
    }

    #[test]
    fn constant_channel_gives_beta() {
        let x = Tensor::filled(vec![2, 1, 3, 3], 4.0f64);
        let mut st = BatchNormState::new(1);
        st.beta.data[0] = 5.0;
        let (y, _) = batchnorm2d(&x, &mut st).unwrap();
        assert!(y.data.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn running_stats_update() {
        let x = Tensor::new(vec![1, 1, 1, 4], vec![1.0f64, 2.0, 3.0, 4.0]);
        let mut st = BatchNormState::new(1);
        batchnorm2d(&x, &mut st).unwrap();
        assert!((st.running_mean[0] - 0.25).abs() < 1e-12);
        // unbiased variance of 1..4 is 5/3
        assert!((st.running_var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn eval_matches_inplace_and_requires_stats() {
        let x = Tensor::new(vec![1, 2, 1, 2], vec![1.0f64, -2.0, 0.5, 3.0]);
        let mut st = BatchNormState::new(2);
        st.mode = Mode::Eval;
        st.running_mean = vec![0.5, -1.0];
        st.running_var = vec![2.0, 0.25];
        st.gamma.data = vec![1.5, -0.5];
        let (y, _) = batchnorm2d(&x, &mut st).unwrap();
        let mut z = x.clone();
        batchnorm2d_eval_inplace(&mut z, &st).unwrap();
        for (a, b) in y.data.iter().zip(&z.data) {
            assert!((a - b).abs() < 1e-12);
        }
        st.running_mean.clear();
        assert_eq!(batchnorm2d(&x, &mut st).unwrap_err(), NnError::UninitializedRunningStats);
    }

    #[test]
    fn single_value_batch_rejected() {
        let x = Tensor::filled(vec![1, 1, 1, 1], 1.0f32);
        assert_eq!(batchnorm2d(&x, &mut BatchNormState::new(1)).unwrap_err(), NnError::InsufficientBatch(1));
    }
}
