use super::Needs;
use crate::tensor::{gemm, Scalar, Tensor};

pub fn forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, out_shape: Vec<usize>) -> Tensor<T> {
    let (n, input) = (x.dim(0), x.dim(1));
    let out = w.dim(0);
    let mut y = Vec::with_capacity(n * out);
    match b {
        Some(b) => (0..n).for_each(|_| y.extend_from_slice(b.data())),
        None => y.resize(n * out, T::zero()),
    }
    gemm(false, true, n, out, input, x.data(), w.data(), T::one(), &mut y);
    Tensor::from_raw(out_shape, y)
}

#[allow(clippy::type_complexity)]
pub fn backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
    needs: Needs,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>) {
    let (n, input) = (x.dim(0), x.dim(1));
    let out = w.dim(0);
    let dx = needs.inputs.then(|| {
        let mut d = vec![T::zero(); n * input];
        gemm(false, false, n, input, out, g.data(), w.data(), T::zero(), &mut d);
        Tensor::from_raw(x.shape().to_vec(), d)
    });
    let (dw, db) = if needs.params {
        let mut d = vec![T::zero(); out * input];
        gemm(true, false, out, input, n, g.data(), x.data(), T::zero(), &mut d);
        let mut bias = vec![T::zero(); out];
        for row in g.data().chunks(out) {
            bias.iter_mut().zip(row).for_each(|(b, &v)| *b = *b + v);
        }
        (
            Some(Tensor::from_raw(w.shape().to_vec(), d)),
            Some(Tensor::from_raw(vec![out], bias)),
        )
    } else {
        (None, None)
    };
    (dx, dw, db)
}
