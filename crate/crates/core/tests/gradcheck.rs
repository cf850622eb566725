mod common;

use celestine::netspec::{init_params, LayerSpec, NetSpec};
use celestine::nn::{cross_entropy, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn assert_report(r: common::OpReport) {
    assert!(r.ok(), "{}: max relative error {:.3e} over {} shapes", r.op, r.max_rel_err, r.shapes);
}

#[test]
fn conv2d_gradients() {
    assert_report(common::check_conv());
}

#[test]
fn maxpool2d_gradients() {
    assert_report(common::check_maxpool());
}

#[test]
fn relu_gradients() {
    assert_report(common::check_relu());
}

#[test]
fn batchnorm2d_gradients() {
    assert_report(common::check_batchnorm());
}

#[test]
fn linear_gradients() {
    assert_report(common::check_linear());
}

#[test]
fn adaptive_avg_pool2d_gradients() {
    assert_report(common::check_adaptive_avg_pool());
}

#[test]
fn softmax_cross_entropy_gradients() {
    assert_report(common::check_softmax_cross_entropy());
}

/// End-to-end: the layer stack's input gradient matches finite differences
/// of the loss.
#[test]
fn network_input_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..20 {
        let spec = NetSpec {
            name: "check".into(),
            version: 1,
            input: [1, rng.random_range(6..9), rng.random_range(6..9)],
            layers: vec![
                LayerSpec::Conv { kernel: 3, stride: 1, out_channels: 2 },
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::AdaptiveAvgPool { target_h: 2, target_w: 2 },
                LayerSpec::Flatten,
                LayerSpec::Linear { units: 3 },
                LayerSpec::Relu,
                LayerSpec::Linear { units: 2 },
                LayerSpec::Softmax,
            ],
        };
        let mut net = init_params::<f64>(&spec, trial).unwrap();
        let n = 2;
        let shape = vec![n, 1, spec.input[1], spec.input[2]];
        let x: Vec<f64> = common::uniform(&mut rng, shape.iter().product());
        let labels = [0, 1];
        let logits = net.forward_train(Tensor::new(shape.clone(), x.clone())).unwrap();
        let (_, d) = cross_entropy(&logits, &labels).unwrap();
        let dx = net.backward(d).unwrap();
        let err = common::compare(&x, &dx.data, |v| {
            let logits = net.clone().forward_train(Tensor::new(shape.clone(), v.to_vec())).unwrap();
            cross_entropy(&logits, &labels).unwrap().0
        });
        assert!(err < common::TOL, "trial {trial}: {err:.3e}");
    }
}
