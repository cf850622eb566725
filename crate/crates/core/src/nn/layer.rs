use super::{
    adaptive_avg_pool2d, adaptive_avg_pool2d_backward, batchnorm2d, batchnorm2d_backward, batchnorm2d_eval_inplace,
    conv2d_backward, conv2d_valid, linear, linear_backward, maxpool2d, maxpool2d_backward, relu_backward,
    relu_inplace, softmax, BatchNormCache, BatchNormState, ConvLayerState, LinearState, Mode, NnError, Result,
    Scalar, Tensor,
};

/// One layer with its trainable state.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(ConvLayerState<T>),
    MaxPool { kernel: usize, stride: usize },
    Relu,
    BatchNorm(BatchNormState<T>),
    AdaptiveAvgPool { h: usize, w: usize },
    Flatten,
    Linear(LinearState<T>),
    Softmax,
}

impl<T: Scalar> Layer<T> {
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv(c) => vec![&mut c.weight, &mut c.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv(c) => c.weight.len() + c.bias.len(),
            Layer::BatchNorm(b) => b.gamma.len() + b.beta.len(),
            Layer::Linear(l) => l.weight.len() + l.bias.len(),
            _ => 0,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv(c) => Layer::Conv(ConvLayerState { weight: c.weight.cast(), bias: c.bias.cast(), stride: c.stride }),
            Layer::BatchNorm(b) => Layer::BatchNorm(BatchNormState {
                gamma: b.gamma.cast(),
                beta: b.beta.cast(),
                running_mean: b.running_mean.iter().map(|v| U::of(v.f64())).collect(),
                running_var: b.running_var.iter().map(|v| U::of(v.f64())).collect(),
                eps: b.eps,
                momentum: b.momentum,
                mode: b.mode,
            }),
            Layer::Linear(l) => Layer::Linear(LinearState { weight: l.weight.cast(), bias: l.bias.cast() }),
            Layer::MaxPool { kernel, stride } => Layer::MaxPool { kernel: *kernel, stride: *stride },
            Layer::Relu => Layer::Relu,
            Layer::AdaptiveAvgPool { h, w } => Layer::AdaptiveAvgPool { h: *h, w: *w },
            Layer::Flatten => Layer::Flatten,
            Layer::Softmax => Layer::Softmax,
        }
    }
}

#[derive(Debug, Clone)]
enum Cache<T> {
    Input(Tensor<T>),
    Pool { shape: Vec<usize>, argmax: Vec<u32> },
    Norm(BatchNormCache<T>),
    Shape(Vec<usize>),
}

/// A layer stack with the activations the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub layers: Vec<Layer<T>>,
    caches: Vec<CacheSlot<T>>,
}

// Caches are transient and excluded from equality.
#[derive(Debug, Clone)]
struct CacheSlot<T>(Cache<T>);

impl<T> PartialEq for CacheSlot<T> {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

fn flatten<T: Scalar>(x: Tensor<T>) -> Tensor<T> {
    let n = x.shape.first().copied().unwrap_or(1);
    let rest = x.len() / n.max(1);
    x.reshape(vec![n, rest])
}

impl<T: Scalar> Network<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers, caches: Vec::new() }
    }

    /// Number of layers run by the training forward pass (a trailing softmax
    /// is folded into the loss).
    fn trained_layers(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Softmax) => self.layers.len() - 1,
            _ => self.layers.len(),
        }
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for l in &mut self.layers {
            if let Layer::BatchNorm(b) = l {
                b.mode = mode;
            }
        }
    }

    /// Training forward pass with batch-statistics normalization. Returns
    /// logits (the output of the last layer before a trailing softmax).
    pub fn forward_train(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        self.set_mode(Mode::Train);
        let count = self.trained_layers();
        let mut caches = Vec::with_capacity(count);
        let mut x = x;
        for layer in &mut self.layers[..count] {
            let (y, cache) = match layer {
                Layer::Conv(st) => (conv2d_valid(&x, st)?, Cache::Input(x)),
                Layer::MaxPool { kernel, stride } => {
                    let (y, argmax) = maxpool2d(&x, *kernel, *stride)?;
                    (y, Cache::Pool { shape: x.shape, argmax })
                }
                Layer::Relu => {
                    let mut y = x.clone();
                    relu_inplace(&mut y);
                    (y, Cache::Input(x))
                }
                Layer::BatchNorm(st) => {
                    let (y, c) = batchnorm2d(&x, st)?;
                    (y, Cache::Norm(c))
                }
                Layer::AdaptiveAvgPool { h, w } => (adaptive_avg_pool2d(&x, *h, *w)?, Cache::Shape(x.shape)),
                Layer::Flatten => {
                    let shape = x.shape.clone();
                    (flatten(x), Cache::Shape(shape))
                }
                Layer::Linear(st) => (linear(&x, st)?, Cache::Input(x)),
                Layer::Softmax => {
                    return Err(NnError::Invalid { op: "network", detail: "softmax is only supported as the last layer".into() })
                }
            };
            caches.push(CacheSlot(cache));
            x = y;
        }
        self.caches = caches;
        Ok(x)
    }

    /// Back-propagates `dL/dlogits` through the cached forward pass,
    /// accumulating parameter gradients. Returns `dL/dinput`.
    pub fn backward(&mut self, dlogits: Tensor<T>) -> Result<Tensor<T>> {
        let count = self.trained_layers();
        if self.caches.len() != count {
            return Err(NnError::Invalid { op: "network", detail: "backward without a training forward pass".into() });
        }
        let caches = std::mem::take(&mut self.caches);
        let mut g = dlogits;
        for (layer, CacheSlot(cache)) in self.layers[..count].iter_mut().zip(caches).rev() {
            g = match (layer, cache) {
                (Layer::Conv(st), Cache::Input(x)) => conv2d_backward(&x, st, &g)?,
                (Layer::MaxPool { .. }, Cache::Pool { shape, argmax }) => maxpool2d_backward(&shape, &argmax, &g)?,
                (Layer::Relu, Cache::Input(x)) => relu_backward(&x, &g)?,
                (Layer::BatchNorm(st), Cache::Norm(c)) => batchnorm2d_backward(&c, st, &g)?,
                (Layer::AdaptiveAvgPool { .. }, Cache::Shape(shape)) => adaptive_avg_pool2d_backward(&shape, &g)?,
                (Layer::Flatten, Cache::Shape(shape)) => g.reshape(shape),
                (Layer::Linear(st), Cache::Input(x)) => linear_backward(&x, st, &g)?,
                _ => {
                    return Err(NnError::Invalid { op: "network", detail: "cache does not match layer".into() })
                }
            };
        }
        Ok(g)
    }

    /// Inference pass with running-statistics normalization; activations are
    /// dropped as soon as the next layer has consumed them. Applies every
    /// layer, so a trailing softmax yields class probabilities.
    pub fn forward_eval(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        self.forward_eval_inspect(x, |_, _| {})
    }

    /// `forward_eval` that reports each layer's output shape to `inspect`.
    pub fn forward_eval_inspect(&self, x: Tensor<T>, mut inspect: impl FnMut(usize, &Tensor<T>)) -> Result<Tensor<T>> {
        let mut x = x;
        for (i, layer) in self.layers.iter().enumerate() {
            x = match layer {
                Layer::Conv(st) => conv2d_valid(&x, st)?,
                Layer::MaxPool { kernel, stride } => maxpool2d(&x, *kernel, *stride)?.0,
                Layer::Relu => {
                    relu_inplace(&mut x);
                    x
                }
                Layer::BatchNorm(st) => {
                    batchnorm2d_eval_inplace(&mut x, st)?;
                    x
                }
                Layer::AdaptiveAvgPool { h, w } => adaptive_avg_pool2d(&x, *h, *w)?,
                Layer::Flatten => flatten(x),
                Layer::Linear(st) => linear(&x, st)?,
                Layer::Softmax => softmax(&x)?,
            };
            inspect(i, &x);
        }
        Ok(x)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network::new(self.layers.iter().map(Layer::cast).collect())
    }
}
