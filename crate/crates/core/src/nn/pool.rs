use super::{check_same_shape, NnError, Result, Scalar, SharedMut, Tensor};
use crate::par;

/// `floor((input - k) / stride) + 1`; `None` when the window does not fit.
pub fn pool_out_dim(input: usize, k: usize, stride: usize) -> Option<usize> {
    (k >= 1 && stride >= 1 && input >= k).then(|| (input - k) / stride + 1)
}

/// Max pooling. The second return value holds, per output element, the
/// in-plane index of the maximum (first occurrence in row-major window order).
pub fn maxpool2d<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize) -> Result<(Tensor<T>, Vec<u32>)> {
    let [n, c, h, w] = x.dims4("maxpool2d")?;
    if stride == 0 {
        return Err(NnError::Invalid { op: "maxpool2d", detail: "stride must be >= 1".into() });
    }
    let (Some(ho), Some(wo)) = (pool_out_dim(h, k, stride), pool_out_dim(w, k, stride)) else {
        return Err(NnError::WindowTooLarge { op: "maxpool2d", k, h, w });
    };
    let planes = n * c;
    let mut out = Tensor::zeros(vec![n, c, ho, wo]);
    let mut argmax = vec![0u32; planes * ho * wo];
    let (out_ptr, arg_ptr) = (SharedMut::new(&mut out.data), SharedMut::new(&mut argmax));
    par::for_each_index(planes, |p| {
        let src = &x.data[p * h * w..(p + 1) * h * w];
        // SAFETY: plane `p` owns output range [p*ho*wo, (p+1)*ho*wo).
        let (dst, arg) = unsafe { (out_ptr.slice(p * ho * wo, ho * wo), arg_ptr.slice(p * ho * wo, ho * wo)) };
        for i in 0..ho {
            for j in 0..wo {
                let mut best = (i * stride) * w + j * stride;
                for u in 0..k {
                    let row = (i * stride + u) * w;
                    for v in 0..k {
                        let idx = row + j * stride + v;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                }
                dst[i * wo + j] = src[best];
                arg[i * wo + j] = best as u32;
            }
        }
    });
    Ok((out, argmax))
}

/// Routes each upstream gradient to its recorded argmax position.
pub fn maxpool2d_backward<T: Scalar>(input_shape: &[usize], argmax: &[u32], dout: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = match input_shape {
        &[n, c, h, w] => [n, c, h, w],
        _ => {
            return Err(NnError::Shape {
                op: "maxpool2d_backward",
                expected: "N x C x H x W".into(),
                got: input_shape.to_vec(),
            })
        }
    };
    let [dn, dc, ho, wo] = dout.dims4("maxpool2d_backward")?;
    if (dn, dc) != (n, c) || argmax.len() != dout.len() {
        return Err(NnError::Shape {
            op: "maxpool2d_backward",
            expected: format!("{n} x {c} x H' x W' with matching argmax"),
            got: dout.shape.clone(),
        });
    }
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let plane_out = ho * wo;
    par::for_each_chunk_mut(&mut dx.data, h * w, |p, plane| {
        let g = &dout.data[p * plane_out..(p + 1) * plane_out];
        let a = &argmax[p * plane_out..(p + 1) * plane_out];
        for (&idx, &v) in a.iter().zip(g) {
            plane[idx as usize] += v;
        }
    });
    Ok(dx)
}

/// Input window `[start, end)` of adaptive-pool output cell `i` along one axis.
pub fn adaptive_window(i: usize, input: usize, output: usize) -> (usize, usize) {
    ((i * input) / output, ((i + 1) * input).div_ceil(output))
}

pub fn adaptive_avg_pool2d<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("adaptive_avg_pool2d")?;
    if out_h == 0 || out_w == 0 {
        return Err(NnError::Invalid { op: "adaptive_avg_pool2d", detail: "zero output size".into() });
    }
    if out_h > h || out_w > w {
        return Err(NnError::Invalid {
            op: "adaptive_avg_pool2d",
            detail: format!("target {out_h}x{out_w} exceeds input {h}x{w}"),
        });
    }
    let mut out = Tensor::zeros(vec![n, c, out_h, out_w]);
    par::for_each_chunk_mut(&mut out.data, out_h * out_w, |p, dst| {
        let src = &x.data[p * h * w..(p + 1) * h * w];
        for i in 0..out_h {
            let (r0, r1) = adaptive_window(i, h, out_h);
            for j in 0..out_w {
                let (c0, c1) = adaptive_window(j, w, out_w);
                let mut acc = T::zero();
                for r in r0..r1 {
                    for &v in &src[r * w + c0..r * w + c1] {
                        acc += v;
                    }
                }
                dst[i * out_w + j] = acc / T::of(((r1 - r0) * (c1 - c0)) as f64);
            }
        }
    });
    Ok(out)
}

/// Spreads each upstream gradient uniformly over its window.
pub fn adaptive_avg_pool2d_backward<T: Scalar>(input_shape: &[usize], dout: &Tensor<T>) -> Result<Tensor<T>> {
    let &[n, c, h, w] = input_shape else {
        return Err(NnError::Shape {
            op: "adaptive_avg_pool2d_backward",
            expected: "N x C x H x W".into(),
            got: input_shape.to_vec(),
        });
    };
    let [_, _, out_h, out_w] = dout.dims4("adaptive_avg_pool2d_backward")?;
    check_same_shape("adaptive_avg_pool2d_backward", &[n, c, out_h, out_w], dout)?;
    let mut dx = Tensor::zeros(input_shape.to_vec());
    par::for_each_chunk_mut(&mut dx.data, h * w, |p, plane| {
        let g = &dout.data[p * out_h * out_w..(p + 1) * out_h * out_w];
        for i in 0..out_h {
            let (r0, r1) = adaptive_window(i, h, out_h);
            for j in 0..out_w {
                let (c0, c1) = adaptive_window(j, w, out_w);
                let share = g[i * out_w + j] / T::of(((r1 - r0) * (c1 - c0)) as f64);
                for r in r0..r1 {
                    for v in &mut plane[r * w + c0..r * w + c1] {
                        *v += share;
                    }
                }
            }
        }
    });
    Ok(dx)
}
