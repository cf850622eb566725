//! Finite-difference gradient checks shared by the gradient tests and the
//! acceptance runner.
#![allow(dead_code)]

use celestine::nn::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SHAPES_PER_OP: usize = 100;

/// `|a - n| / max(|a|, |n|, 1e-3)`: relative, with an absolute floor so
/// gradients that are zero up to rounding do not divide by ~0.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Values spaced at least 0.01 apart and at least 0.005 from zero, so no
/// max-pool tie or ReLU kink lies within a finite-difference step.
pub fn distinct(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.02 + 0.005 + rng.random_range(0.0..0.005)).collect();
    v.shuffle(rng);
    v
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Max relative error between `analytic` and central differences of `loss`
/// with respect to each entry of `at`.
pub fn compare(at: &[f64], analytic: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(at.len(), analytic.len());
    let mut x = at.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + H;
        let up = loss(&x);
        x[i] = orig - H;
        let down = loss(&x);
        x[i] = orig;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * H)));
    }
    worst
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
pub struct OpReport {
    pub op: &'static str,
    pub shapes: usize,
    pub max_rel_err: f64,
}

impl OpReport {
    pub fn ok(&self) -> bool {
        self.shapes >= SHAPES_PER_OP && self.max_rel_err < TOL
    }
}

fn run(op: &'static str, seed: u64, mut one: impl FnMut(&mut ChaCha8Rng) -> f64) -> OpReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_rel_err = (0..SHAPES_PER_OP).map(|_| one(&mut rng)).fold(0.0, f64::max);
    OpReport { op, shapes: SHAPES_PER_OP, max_rel_err }
}

pub fn check_conv() -> OpReport {
    run("conv2d", 11, |rng| {
        let (n, c, o) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let k = rng.random_range(1..4);
        let s = rng.random_range(1..3);
        let (h, w) = (rng.random_range(k..k + 5), rng.random_range(k..k + 5));
        let x = Tensor::new(vec![n, c, h, w], uniform(rng, n * c * h * w));
        let mut st = ConvLayerState::<f64>::zeros(c, o, k, s);
        st.weight.data = uniform(rng, st.weight.len());
        st.bias.data = uniform(rng, o);
        let y = conv2d_valid(&x, &st).unwrap();
        let r = uniform(rng, y.len());
        let dx = conv2d_backward(&x, &mut st, &Tensor::new(y.shape.clone(), r.clone())).unwrap();
        let (gw, gb) = (st.weight.grad.clone().unwrap(), st.bias.grad.clone().unwrap());
        let base = st.clone();
        let e1 = compare(&x.data, &dx.data, |v| dot(&conv2d_valid(&Tensor::new(x.shape.clone(), v.to_vec()), &base).unwrap().data, &r));
        let e2 = compare(&base.weight.data, &gw, |v| {
            let mut t = base.clone();
            t.weight.data = v.to_vec();
            dot(&conv2d_valid(&x, &t).unwrap().data, &r)
        });
        let e3 = compare(&base.bias.data, &gb, |v| {
            let mut t = base.clone();
            t.bias.data = v.to_vec();
            dot(&conv2d_valid(&x, &t).unwrap().data, &r)
        });
        e1.max(e2).max(e3)
    })
}

pub fn check_maxpool() -> OpReport {
    run("maxpool2d", 12, |rng| {
        let (n, c) = (rng.random_range(1..3), rng.random_range(1..3));
        let k = rng.random_range(1..4);
        let s = rng.random_range(1..3);
        let (h, w) = (rng.random_range(k..k + 6), rng.random_range(k..k + 6));
        let x = Tensor::new(vec![n, c, h, w], distinct(rng, n * c * h * w));
        let (y, arg) = maxpool2d(&x, k, s).unwrap();
        let r = uniform(rng, y.len());
        let dx = maxpool2d_backward(&x.shape, &arg, &Tensor::new(y.shape.clone(), r.clone())).unwrap();
        compare(&x.data, &dx.data, |v| dot(&maxpool2d(&Tensor::new(x.shape.clone(), v.to_vec()), k, s).unwrap().0.data, &r))
    })
}

pub fn check_relu() -> OpReport {
    run("relu", 13, |rng| {
        let n = rng.random_range(1..40);
        let x = Tensor::new(vec![n], distinct(rng, n));
        let r = uniform(rng, n);
        let dx = relu_backward(&x, &Tensor::new(vec![n], r.clone())).unwrap();
        compare(&x.data, &dx.data, |v| dot(&relu(&Tensor::new(vec![n], v.to_vec())).data, &r))
    })
}

pub fn check_batchnorm() -> OpReport {
    run("batchnorm2d", 14, |rng| {
        let (n, c) = (rng.random_range(1..4), rng.random_range(1..4));
        let (h, w) = (rng.random_range(1..4), rng.random_range(2..5));
        let x = Tensor::new(vec![n, c, h, w], uniform(rng, n * c * h * w));
        let mut st = BatchNormState::<f64>::new(c);
        st.gamma.data = uniform(rng, c);
        st.beta.data = uniform(rng, c);
        let (y, cache) = batchnorm2d(&x, &mut st).unwrap();
        let r = uniform(rng, y.len());
        let dx = batchnorm2d_backward(&cache, &mut st, &Tensor::new(y.shape.clone(), r.clone())).unwrap();
        let (gg, gb) = (st.gamma.grad.clone().unwrap(), st.beta.grad.clone().unwrap());
        let base = st.clone();
        let fwd = |x: &Tensor<f64>, st: &BatchNormState<f64>| dot(&batchnorm2d(x, &mut st.clone()).unwrap().0.data, &r);
        let e1 = compare(&x.data, &dx.data, |v| fwd(&Tensor::new(x.shape.clone(), v.to_vec()), &base));
        let e2 = compare(&base.gamma.data, &gg, |v| {
            let mut t = base.clone();
            t.gamma.data = v.to_vec();
            fwd(&x, &t)
        });
        let e3 = compare(&base.beta.data, &gb, |v| {
            let mut t = base.clone();
            t.beta.data = v.to_vec();
            fwd(&x, &t)
        });
        e1.max(e2).max(e3)
    })
}

pub fn check_linear() -> OpReport {
    run("linear", 15, |rng| {
        let (n, i, o) = (rng.random_range(1..5), rng.random_range(1..12), rng.random_range(1..6));
        let x = Tensor::new(vec![n, i], uniform(rng, n * i));
        let mut st = LinearState::<f64>::zeros(i, o);
        st.weight.data = uniform(rng, i * o);
        st.bias.data = uniform(rng, o);
        let y = linear(&x, &st).unwrap();
        let r = uniform(rng, y.len());
        let dx = linear_backward(&x, &mut st, &Tensor::new(y.shape.clone(), r.clone())).unwrap();
        let (gw, gb) = (st.weight.grad.clone().unwrap(), st.bias.grad.clone().unwrap());
        let base = st.clone();
        let e1 = compare(&x.data, &dx.data, |v| dot(&linear(&Tensor::new(x.shape.clone(), v.to_vec()), &base).unwrap().data, &r));
        let e2 = compare(&base.weight.data, &gw, |v| {
            let mut t = base.clone();
            t.weight.data = v.to_vec();
            dot(&linear(&x, &t).unwrap().data, &r)
        });
        let e3 = compare(&base.bias.data, &gb, |v| {
            let mut t = base.clone();
            t.bias.data = v.to_vec();
            dot(&linear(&x, &t).unwrap().data, &r)
        });
        e1.max(e2).max(e3)
    })
}

pub fn check_adaptive_avg_pool() -> OpReport {
    run("adaptive_avg_pool2d", 16, |rng| {
        let (n, c) = (rng.random_range(1..3), rng.random_range(1..3));
        let (h, w) = (rng.random_range(1..9), rng.random_range(1..9));
        let (oh, ow) = (rng.random_range(1..=h), rng.random_range(1..=w));
        let x = Tensor::new(vec![n, c, h, w], uniform(rng, n * c * h * w));
        let y = adaptive_avg_pool2d(&x, oh, ow).unwrap();
        let r = uniform(rng, y.len());
        let dx = adaptive_avg_pool2d_backward(&x.shape, &Tensor::new(y.shape.clone(), r.clone())).unwrap();
        compare(&x.data, &dx.data, |v| dot(&adaptive_avg_pool2d(&Tensor::new(x.shape.clone(), v.to_vec()), oh, ow).unwrap().data, &r))
    })
}

pub fn check_softmax_cross_entropy() -> OpReport {
    run("softmax_cross_entropy", 17, |rng| {
        let (n, k) = (rng.random_range(1..6), rng.random_range(2..5));
        let logits = Tensor::new(vec![n, k], (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect());
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let (_, d) = cross_entropy(&logits, &labels).unwrap();
        compare(&logits.data, &d.data, |v| cross_entropy(&Tensor::new(vec![n, k], v.to_vec()), &labels).unwrap().0)
    })
}

pub fn all_ops() -> Vec<OpReport> {
    vec![
        check_conv(),
        check_maxpool(),
        check_relu(),
        check_batchnorm(),
        check_linear(),
        check_adaptive_avg_pool(),
        check_softmax_cross_entropy(),
    ]
}
