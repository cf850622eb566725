use super::{gemm, Mat, NnError, Result, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearState<T> {
    /// `out x in`
    pub weight: Tensor<T>,
    /// `out`
    pub bias: Tensor<T>,
}

impl<T: Scalar> LinearState<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::param(vec![outputs, inputs], vec![T::zero(); outputs * inputs]),
            bias: Tensor::param(vec![outputs], vec![T::zero(); outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }

    fn check(&self, x: &Tensor<T>) -> Result<[usize; 2]> {
        let [n, k] = x.dims2("linear")?;
        if k != self.inputs() || self.bias.shape != [self.outputs()] {
            return Err(NnError::Shape { op: "linear", expected: format!("N x {}", self.inputs()), got: x.shape.clone() });
        }
        Ok([n, k])
    }
}

/// `out = x * W^T + b`.
pub fn linear<T: Scalar>(x: &Tensor<T>, st: &LinearState<T>) -> Result<Tensor<T>> {
    let [n, k] = st.check(x)?;
    let o = st.outputs();
    let mut out = Vec::with_capacity(n * o);
    for _ in 0..n {
        out.extend_from_slice(&st.bias.data);
    }
    gemm(n, k, o, Mat::new(&x.data, k), Mat::t(&st.weight.data, k), &mut out, o, T::one());
    Ok(Tensor::new(vec![n, o], out))
}

/// Returns `dL/dx`; accumulates `dL/dW` and `dL/db`.
pub fn linear_backward<T: Scalar>(x: &Tensor<T>, st: &mut LinearState<T>, dout: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, k] = st.check(x)?;
    let o = st.outputs();
    if dout.shape != [n, o] {
        return Err(NnError::Shape { op: "linear_backward", expected: format!("{n} x {o}"), got: dout.shape.clone() });
    }
    let mut dx = vec![T::zero(); n * k];
    gemm(n, o, k, Mat::new(&dout.data, o), Mat::new(&st.weight.data, k), &mut dx, k, T::zero());
    gemm(o, n, k, Mat::t(&dout.data, o), Mat::new(&x.data, k), st.weight.grad_mut(), k, T::one());
    let bgrad = st.bias.grad_mut();
    for row in dout.data.chunks(o) {
        bgrad.iter_mut().zip(row).for_each(|(g, &d)| *g += d);
    }
    Ok(Tensor::new(vec![n, k], dx))
}
