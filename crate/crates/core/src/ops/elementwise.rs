use crate::tensor::{Scalar, Tensor};

pub fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_raw(a.shape().to_vec(), data)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    zip(x, g, |v, g| if v > T::zero() { g } else { T::zero() })
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { v * slope })
}

pub fn leaky_relu_backward<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>, slope: T) -> Tensor<T> {
    zip(x, g, |v, g| if v > T::zero() { g } else { g * slope })
}

/// Logistic function, evaluated in the branch that cannot overflow.
pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| {
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    })
}

pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let k = x.dim(1);
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - max).exp()));
        let total: T = out[start..].iter().copied().sum();
        out[start..].iter_mut().for_each(|v| *v = *v / total);
    }
    Tensor::from_raw(x.shape().to_vec(), out)
}

pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let k = y.dim(1);
    let mut out = Vec::with_capacity(y.len());
    for (yr, gr) in y.data().chunks(k).zip(g.data().chunks(k)) {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        out.extend(yr.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
    }
    Tensor::from_raw(y.shape().to_vec(), out)
}
