//! Valid (unpadded) 2-D convolution lowered to GEMM over row tiles.

use super::{check_same_shape, gemm, Mat, NnError, Result, Scalar, SharedMut, Tensor};
use crate::par;

/// Upper bound on the elements of one im2col tile.
const TILE_ELEMS: usize = 1 << 21;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerState<T> {
    /// `C_out x C_in x k x k`
    pub weight: Tensor<T>,
    /// `C_out`
    pub bias: Tensor<T>,
    pub stride: usize,
}

impl<T: Scalar> ConvLayerState<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            weight: Tensor::param(
                vec![out_channels, in_channels, kernel, kernel],
                vec![T::zero(); out_channels * in_channels * kernel * kernel],
            ),
            bias: Tensor::param(vec![out_channels], vec![T::zero(); out_channels]),
            stride,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape[2]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(NnError::Invalid { op: "conv2d", detail });
        match self.weight.shape[..] {
            [o, _, k, k2] if k == k2 && k >= 1 => {
                if self.bias.shape != [o] {
                    return bad(format!("bias shape {:?} for {o} output channels", self.bias.shape));
                }
            }
            _ => return bad(format!("weight shape {:?} is not C_out x C_in x k x k", self.weight.shape)),
        }
        if self.stride == 0 {
            return bad("stride must be >= 1".into());
        }
        Ok(())
    }
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    ho: usize,
    wo: usize,
    tile_rows: usize,
}

impl Geometry {
    fn new<T: Scalar>(x: &Tensor<T>, st: &ConvLayerState<T>) -> Result<(usize, Self)> {
        st.validate()?;
        let [n, c, h, w] = x.dims4("conv2d")?;
        let k = st.kernel();
        if c != st.in_channels() {
            return Err(NnError::Shape {
                op: "conv2d",
                expected: format!("{} input channels", st.in_channels()),
                got: x.shape.clone(),
            });
        }
        if h < k || w < k {
            return Err(NnError::WindowTooLarge { op: "conv2d", k, h, w });
        }
        let s = st.stride;
        let ho = (h - k) / s + 1;
        let wo = (w - k) / s + 1;
        let tile_rows = (TILE_ELEMS / (c * k * k * wo)).clamp(1, ho);
        Ok((n, Self { c, h, w, k, s, ho, wo, tile_rows }))
    }

    fn tiles(&self) -> usize {
        self.ho.div_ceil(self.tile_rows)
    }

    fn tile(&self, t: usize) -> (usize, usize) {
        let r0 = t * self.tile_rows;
        (r0, (r0 + self.tile_rows).min(self.ho))
    }

    fn patch(&self) -> usize {
        self.c * self.k * self.k
    }

    /// Lowers output rows `[r0, r1)` of one sample: `cols[p * ncols + q]`,
    /// `p = (ci * k + u) * k + v`, `q = (i - r0) * wo + j`.
    fn im2col<T: Scalar>(&self, x: &[T], r0: usize, r1: usize, cols: &mut [T]) {
        let ncols = (r1 - r0) * self.wo;
        let (k, s, wo) = (self.k, self.s, self.wo);
        for ci in 0..self.c {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for u in 0..k {
                for v in 0..k {
                    let p = (ci * k + u) * k + v;
                    let dst = &mut cols[p * ncols..(p + 1) * ncols];
                    for i in r0..r1 {
                        let src = &plane[(i * s + u) * self.w..];
                        let d = &mut dst[(i - r0) * wo..(i - r0 + 1) * wo];
                        if s == 1 {
                            d.copy_from_slice(&src[v..v + wo]);
                        } else {
                            for (j, out) in d.iter_mut().enumerate() {
                                *out = src[j * s + v];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `im2col`: accumulates `cols` into the sample gradient.
    fn col2im<T: Scalar>(&self, cols: &[T], r0: usize, r1: usize, dx: &mut [T]) {
        let ncols = (r1 - r0) * self.wo;
        let (k, s, wo) = (self.k, self.s, self.wo);
        for ci in 0..self.c {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for u in 0..k {
                for v in 0..k {
                    let p = (ci * k + u) * k + v;
                    let src = &cols[p * ncols..(p + 1) * ncols];
                    for i in r0..r1 {
                        let row = &mut plane[(i * s + u) * self.w..];
                        for (j, &g) in src[(i - r0) * wo..(i - r0 + 1) * wo].iter().enumerate() {
                            row[j * s + v] += g;
                        }
                    }
                }
            }
        }
    }
}

/// `out[n,o,i,j] = bias[o] + sum_{c,u,v} x[n,c,i*s+u,j*s+v] * w[o,c,u,v]`.
pub fn conv2d_valid<T: Scalar>(x: &Tensor<T>, st: &ConvLayerState<T>) -> Result<Tensor<T>> {
    let (n, g) = Geometry::new(x, st)?;
    let o = st.out_channels();
    let hw_out = g.ho * g.wo;
    let mut out = Tensor::zeros(vec![n, o, g.ho, g.wo]);
    par::for_each_chunk_mut(&mut out.data, hw_out, |plane, chunk| {
        chunk.fill(st.bias.data[plane % o]);
    });
    let in_len = g.c * g.h * g.w;
    let tiles = g.tiles();
    let k2c = g.patch();
    let out_ptr = SharedMut::new(&mut out.data);
    par::for_each_index(n * tiles, |t| {
        let (sample, tile) = (t / tiles, t % tiles);
        let (r0, r1) = g.tile(tile);
        let ncols = (r1 - r0) * g.wo;
        let mut cols = vec![T::zero(); k2c * ncols];
        g.im2col(&x.data[sample * in_len..(sample + 1) * in_len], r0, r1, &mut cols);
        // SAFETY: this tile writes rows [r0, r1) of every channel of `sample`;
        // no other tile touches those elements. Weight and cols are m x k and
        // k x n row-major; the output has row stride `hw_out`.
        unsafe {
            let c = out_ptr.ptr().add(sample * o * hw_out + r0 * g.wo);
            T::gemm_raw(
                o,
                k2c,
                ncols,
                T::one(),
                st.weight.data.as_ptr(),
                k2c as isize,
                1,
                cols.as_ptr(),
                ncols as isize,
                1,
                T::one(),
                c,
                hw_out as isize,
                1,
            );
        }
    });
    Ok(out)
}

/// Returns `dL/dx` and accumulates `dL/dw`, `dL/db` into the state.
pub fn conv2d_backward<T: Scalar>(x: &Tensor<T>, st: &mut ConvLayerState<T>, dout: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, g) = Geometry::new(x, st)?;
    let o = st.out_channels();
    check_same_shape("conv2d_backward", &[n, o, g.ho, g.wo], dout)?;
    let hw_out = g.ho * g.wo;
    let in_len = g.c * g.h * g.w;
    let k2c = g.patch();
    let weight = &st.weight.data;
    let samples: Vec<usize> = (0..n).collect();
    let partials = par::map_collect(&samples, |&sample| {
        let xs = &x.data[sample * in_len..(sample + 1) * in_len];
        let ds = &dout.data[sample * o * hw_out..(sample + 1) * o * hw_out];
        let mut dx = vec![T::zero(); in_len];
        let mut dw = vec![T::zero(); o * k2c];
        let mut cols = Vec::new();
        let mut dcols = Vec::new();
        for tile in 0..g.tiles() {
            let (r0, r1) = g.tile(tile);
            let ncols = (r1 - r0) * g.wo;
            cols.resize(k2c * ncols, T::zero());
            dcols.resize(k2c * ncols, T::zero());
            g.im2col(xs, r0, r1, &mut cols);
            let dtile = Mat::new(&ds[r0 * g.wo..], hw_out);
            gemm(o, ncols, k2c, dtile, Mat::t(&cols, ncols), &mut dw, k2c, T::one());
            gemm(k2c, o, ncols, Mat::t(weight, k2c), dtile, &mut dcols, ncols, T::zero());
            g.col2im(&dcols, r0, r1, &mut dx);
        }
        let db: Vec<T> = ds.chunks(hw_out).map(|c| c.iter().copied().sum()).collect();
        (dx, dw, db)
    });
    let mut dx = Vec::with_capacity(n * in_len);
    let wgrad = st.weight.grad_mut();
    for (_, dw, _) in &partials {
        wgrad.iter_mut().zip(dw).for_each(|(a, &b)| *a += b);
    }
    let bgrad = st.bias.grad_mut();
    for (_, _, db) in &partials {
        bgrad.iter_mut().zip(db).for_each(|(a, &b)| *a += b);
    }
    for (dxs, _, _) in partials {
        dx.extend(dxs);
    }
    Ok(Tensor::new(x.shape.clone(), dx))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution.
    #[allow(clippy::needless_range_loop)]
    pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], s: usize) -> Tensor<f64> {
        let [n, c, h, wd] = x.dims4("oracle").unwrap();
        let (o, k) = (w.shape[0], w.shape[2]);
        let (ho, wo) = ((h - k) / s + 1, (wd - k) / s + 1);
        let mut out = Tensor::zeros(vec![n, o, ho, wo]);
        for ni in 0..n {
            for oi in 0..o {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = b[oi];
                        for ci in 0..c {
                            for u in 0..k {
                                for v in 0..k {
                                    acc += x.data[((ni * c + ci) * h + i * s + u) * wd + j * s + v]
                                        * w.data[((oi * c + ci) * k + u) * k + v];
                                }
                            }
                        }
                        out.data[((ni * o + oi) * ho + i) * wo + j] = acc;
                    }
                }
            }
        }
        out
    }

    fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::filled(vec![1, 1, 3, 3], 1.0f64);
        let mut st = ConvLayerState::zeros(1, 1, 3, 1);
        st.weight.data.fill(1.0);
        let y = conv2d_valid(&x, &st).unwrap();
        assert_eq!(y.shape, vec![1, 1, 1, 1]);
        assert_eq!(y.data, vec![9.0]);
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (shape, o, k, s) in [([1, 2, 5, 5], 3, 3, 1), ([2, 3, 9, 7], 4, 2, 2), ([1, 1, 6, 11], 2, 5, 1)] {
            let x = random(&mut rng, shape.to_vec());
            let mut st = ConvLayerState::zeros(shape[1], o, k, s);
            st.weight = random(&mut rng, st.weight.shape.clone());
            st.bias = random(&mut rng, vec![o]);
            let got = conv2d_valid(&x, &st).unwrap();
            let want = conv_oracle(&x, &st.weight, &st.bias.data, s);
            assert_eq!(got.shape, want.shape);
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn tiled_path_matches_oracle() {
        // Wide enough that one tile cannot hold the whole output.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, vec![1, 2, 40, 3000]);
        let mut st = ConvLayerState::zeros(2, 2, 7, 1);
        st.weight = random(&mut rng, st.weight.shape.clone());
        let (_, g) = Geometry::new(&x, &st).unwrap();
        assert!(g.tiles() > 1);
        let got = conv2d_valid(&x, &st).unwrap();
        let want = conv_oracle(&x, &st.weight, &st.bias.data, 1);
        let err = got.data.iter().zip(&want.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn kernel_larger_than_input() {
        let x = Tensor::<f32>::zeros(vec![1, 1, 2, 5]);
        let st = ConvLayerState::zeros(1, 1, 3, 1);
        assert!(matches!(conv2d_valid(&x, &st), Err(NnError::WindowTooLarge { .. })));
    }
}
