use super::{ensure_same_shape, ImageTensor, LayerGrad};
use crate::error::Result;
use crate::scalar::Scalar;

pub fn relu<T: Scalar>(input: &ImageTensor<T>) -> ImageTensor<T> {
    input.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// Passes `upstream` where the forward input was strictly positive. The
/// subgradient at exactly zero is zero.
pub fn relu_backward<T: Scalar>(
    upstream: &ImageTensor<T>,
    saved_input: &ImageTensor<T>,
) -> Result<LayerGrad<T>> {
    ensure_same_shape("relu backward", upstream.shape(), saved_input.shape())?;
    let mut grad = upstream.clone();
    for (g, &x) in grad.data_mut().iter_mut().zip(saved_input.data()) {
        if x <= T::ZERO {
            *g = T::ZERO;
        }
    }
    Ok(LayerGrad { wrt_input: grad })
}
