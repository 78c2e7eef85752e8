//! Convolution and transposed convolution via batched im2col + GEMM.

use super::{ConvSpec, Needs};
use crate::tensor::{gemm, Scalar, Tensor};

pub fn conv_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if padded < kernel || stride == 0 {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

pub fn deconv_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let full = (size - 1) * stride + kernel;
    if full <= 2 * padding {
        None
    } else {
        Some(full - 2 * padding)
    }
}

/// Geometry of a convolution reading an `(n, c, h, w)` image and producing `ho × wo` columns.
#[derive(Clone, Copy)]
struct Geom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.n * self.ho * self.wo
    }
}

fn im2col<T: Scalar>(x: &[T], g: Geom) -> Vec<T> {
    let ncols = g.cols();
    let plane = g.ho * g.wo;
    let mut out = vec![T::zero(); g.rows() * ncols];
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst_row = &mut out[row * ncols..(row + 1) * ncols];
                for n in 0..g.n {
                    let src = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    for oy in 0..g.ho {
                        let iy = (oy * g.s + ki) as isize - g.p as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let dst = &mut dst_row[n * plane + oy * g.wo..n * plane + (oy + 1) * g.wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.s + kj) as isize - g.p as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn col2im<T: Scalar>(cols: &[T], g: Geom) -> Vec<T> {
    let ncols = g.cols();
    let plane = g.ho * g.wo;
    let mut x = vec![T::zero(); g.n * g.c * g.h * g.w];
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                for n in 0..g.n {
                    let base = (n * g.c + c) * g.h * g.w;
                    for oy in 0..g.ho {
                        let iy = (oy * g.s + ki) as isize - g.p as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst = &mut x[base + iy as usize * g.w..base + (iy as usize + 1) * g.w];
                        let src = &src_row[n * plane + oy * g.wo..n * plane + (oy + 1) * g.wo];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * g.s + kj) as isize - g.p as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[ix as usize] = dst[ix as usize] + v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `(N, C, P)` -> `(C, N·P)`.
fn nchw_to_cn<T: Scalar>(x: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for i in 0..n {
        for ch in 0..c {
            let src = &x[(i * c + ch) * plane..(i * c + ch + 1) * plane];
            out[ch * n * plane + i * plane..ch * n * plane + (i + 1) * plane].copy_from_slice(src);
        }
    }
    out
}

/// `(C, N·P)` -> `(N, C, P)`, adding `bias[c]` when given.
fn cn_to_nchw<T: Scalar>(x: &[T], n: usize, c: usize, plane: usize, bias: Option<&[T]>) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for i in 0..n {
        for ch in 0..c {
            let src = &x[ch * n * plane + i * plane..ch * n * plane + (i + 1) * plane];
            let dst = &mut out[(i * c + ch) * plane..(i * c + ch + 1) * plane];
            match bias {
                Some(b) => dst.iter_mut().zip(src).for_each(|(d, &s)| *d = s + b[ch]),
                None => dst.copy_from_slice(src),
            }
        }
    }
    out
}

fn channel_sums<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let (n, c) = (g.dim(0), g.dim(1));
    let plane = g.len() / (n * c);
    let mut out = vec![T::zero(); c];
    for i in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let s: T = g.data()[(i * c + ch) * plane..(i * c + ch + 1) * plane].iter().copied().sum();
            *o = *o + s;
        }
    }
    Tensor::from_raw(vec![c], out)
}

fn conv_geom(spec: &ConvSpec, n: usize, c: usize, h: usize, w: usize, ho: usize, wo: usize) -> Geom {
    Geom {
        n,
        c,
        h,
        w,
        k: spec.kernel,
        s: spec.stride,
        p: spec.padding,
        ho,
        wo,
    }
}

pub fn conv_forward<T: Scalar>(
    spec: &ConvSpec,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    out_shape: Vec<usize>,
) -> Tensor<T> {
    let s = x.shape();
    let g = conv_geom(spec, s[0], s[1], s[2], s[3], out_shape[2], out_shape[3]);
    let cols = im2col(x.data(), g);
    let mut out = vec![T::zero(); spec.out_channels * g.cols()];
    gemm(false, false, spec.out_channels, g.cols(), g.rows(), weight.data(), &cols, T::zero(), &mut out);
    let data = cn_to_nchw(&out, g.n, spec.out_channels, g.ho * g.wo, bias.map(|b| b.data()));
    Tensor::from_raw(out_shape, data)
}

type ConvGrads<T> = (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>);

pub fn conv_backward<T: Scalar>(
    spec: &ConvSpec,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    upstream: &Tensor<T>,
    needs: Needs,
) -> ConvGrads<T> {
    let s = x.shape();
    let u = upstream.shape();
    let g = conv_geom(spec, s[0], s[1], s[2], s[3], u[2], u[3]);
    let g_cn = nchw_to_cn(upstream.data(), g.n, spec.out_channels, g.ho * g.wo);
    let (mut dw, mut db, mut dx) = (None, None, None);
    if needs.params {
        let cols = im2col(x.data(), g);
        let mut w = vec![T::zero(); weight.len()];
        gemm(false, true, spec.out_channels, g.rows(), g.cols(), &g_cn, &cols, T::zero(), &mut w);
        dw = Some(Tensor::from_raw(weight.shape().to_vec(), w));
        if spec.bias {
            db = Some(channel_sums(upstream));
        }
    }
    if needs.inputs {
        let mut dcols = vec![T::zero(); g.rows() * g.cols()];
        gemm(true, false, g.rows(), g.cols(), spec.out_channels, weight.data(), &g_cn, T::zero(), &mut dcols);
        dx = Some(Tensor::from_raw(s.to_vec(), col2im(&dcols, g)));
    }
    (dx, dw, db)
}

pub fn deconv_forward<T: Scalar>(
    spec: &ConvSpec,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    out_shape: Vec<usize>,
) -> Tensor<T> {
    let s = x.shape();
    let (n, cin, h, w) = (s[0], s[1], s[2], s[3]);
    // The equivalent forward convolution maps the output grid back onto the input grid.
    let g = conv_geom(spec, n, spec.out_channels, out_shape[2], out_shape[3], h, w);
    let x_cn = nchw_to_cn(x.data(), n, cin, h * w);
    let mut cols = vec![T::zero(); g.rows() * g.cols()];
    gemm(true, false, g.rows(), g.cols(), cin, weight.data(), &x_cn, T::zero(), &mut cols);
    let mut data = col2im(&cols, g);
    if let Some(b) = bias {
        let plane = out_shape[2] * out_shape[3];
        for (i, chunk) in data.chunks_mut(plane).enumerate() {
            let bv = b.data()[i % spec.out_channels];
            chunk.iter_mut().for_each(|v| *v = *v + bv);
        }
    }
    Tensor::from_raw(out_shape, data)
}

pub fn deconv_backward<T: Scalar>(
    spec: &ConvSpec,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    upstream: &Tensor<T>,
    needs: Needs,
) -> ConvGrads<T> {
    let s = x.shape();
    let (n, cin, h, w) = (s[0], s[1], s[2], s[3]);
    let u = upstream.shape();
    let g = conv_geom(spec, n, spec.out_channels, u[2], u[3], h, w);
    let gcols = im2col(upstream.data(), g);
    let (mut dw, mut db, mut dx) = (None, None, None);
    if needs.params {
        let x_cn = nchw_to_cn(x.data(), n, cin, h * w);
        let mut wg = vec![T::zero(); weight.len()];
        gemm(false, true, cin, g.rows(), g.cols(), &x_cn, &gcols, T::zero(), &mut wg);
        dw = Some(Tensor::from_raw(weight.shape().to_vec(), wg));
        if spec.bias {
            db = Some(channel_sums(upstream));
        }
    }
    if needs.inputs {
        let mut dx_cn = vec![T::zero(); cin * g.cols()];
        gemm(false, false, cin, g.cols(), g.rows(), weight.data(), &gcols, T::zero(), &mut dx_cn);
        dx = Some(Tensor::from_raw(s.to_vec(), cn_to_nchw(&dx_cn, n, cin, h * w, None)));
    }
    (dx, dw, db)
}
