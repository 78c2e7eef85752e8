use crate::tensor::{Scalar, Tensor};

pub fn avg_pool_forward<T: Scalar>(x: &Tensor<T>, k: usize, out_shape: Vec<usize>) -> Tensor<T> {
    let (h, w) = (x.dim(2), x.dim(3));
    let (ho, wo) = (out_shape[2], out_shape[3]);
    let inv = T::one() / T::lit((k * k) as f64);
    let planes = x.dim(0) * x.dim(1);
    let mut out = vec![T::zero(); planes * ho * wo];
    for p in 0..planes {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = T::zero();
                for dy in 0..k {
                    for dx in 0..k {
                        acc = acc + src[(oy * k + dy) * w + ox * k + dx];
                    }
                }
                out[(p * ho + oy) * wo + ox] = acc * inv;
            }
        }
    }
    Tensor::from_raw(out_shape, out)
}

pub fn avg_pool_backward<T: Scalar>(in_shape: &[usize], k: usize, g: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (ho, wo) = (g.dim(2), g.dim(3));
    let inv = T::one() / T::lit((k * k) as f64);
    let planes = in_shape[0] * in_shape[1];
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        for oy in 0..ho {
            for ox in 0..wo {
                let v = g.data()[(p * ho + oy) * wo + ox] * inv;
                for dy in 0..k {
                    for ddx in 0..k {
                        dx[p * h * w + (oy * k + dy) * w + ox * k + ddx] = v;
                    }
                }
            }
        }
    }
    Tensor::from_raw(in_shape.to_vec(), dx)
}

pub fn global_avg_pool_forward<T: Scalar>(x: &Tensor<T>, (h, w): (usize, usize)) -> Tensor<T> {
    let inv = T::one() / T::lit((h * w) as f64);
    let data = x.data().chunks(h * w).map(|c| c.iter().copied().sum::<T>() * inv).collect();
    Tensor::from_raw(vec![x.dim(0), x.dim(1), 1, 1], data)
}

pub fn global_avg_pool_backward<T: Scalar>(in_shape: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let plane = in_shape[2] * in_shape[3];
    let inv = T::one() / T::lit(plane as f64);
    let mut dx = Vec::with_capacity(g.len() * plane);
    for &v in g.data() {
        dx.extend(std::iter::repeat_n(v * inv, plane));
    }
    Tensor::from_raw(in_shape.to_vec(), dx)
}
