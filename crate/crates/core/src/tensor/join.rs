use alloc::format;
use alloc::vec::Vec;

use super::{ensure_same_shape, ImageTensor, Shape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn add<T: Scalar>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    ensure_same_shape("add", a.shape(), b.shape())?;
    let mut out = a.clone();
    out.accumulate(b)?;
    Ok(out)
}

/// The sum rule: both operands receive the upstream gradient unchanged.
pub fn add_backward<T: Scalar>(upstream: &ImageTensor<T>) -> (ImageTensor<T>, ImageTensor<T>) {
    (upstream.clone(), upstream.clone())
}

/// Stacks inputs along the channel axis, in argument order.
pub fn concat_channels<T: Scalar>(inputs: &[&ImageTensor<T>]) -> Result<ImageTensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::config("concat", "needs at least one input"))?;
    let (h, w) = (first.height(), first.width());
    let mut channels = 0;
    for t in inputs {
        if t.height() != h || t.width() != w {
            return Err(Error::config(
                "concat",
                format!("spatial mismatch: {}x{} vs {}x{}", h, w, t.height(), t.width()),
            ));
        }
        channels += t.channels();
    }
    let mut data = Vec::with_capacity(channels * h * w);
    for t in inputs {
        data.extend_from_slice(t.data());
    }
    ImageTensor::from_vec(Shape::new(channels, h, w), data)
}

/// Splits the upstream gradient back into per-input channel blocks.
pub fn concat_channels_backward<T: Scalar>(
    upstream: &ImageTensor<T>,
    input_shapes: &[Shape],
) -> Result<Vec<ImageTensor<T>>> {
    let total: usize = input_shapes.iter().map(|s| s.channels).sum();
    ensure_same_shape(
        "concat backward",
        upstream.shape(),
        Shape::new(total, upstream.height(), upstream.width()),
    )?;
    let mut offset = 0;
    let mut parts = Vec::with_capacity(input_shapes.len());
    for &shape in input_shapes {
        ensure_same_shape(
            "concat backward",
            Shape::new(shape.channels, upstream.height(), upstream.width()),
            shape,
        )?;
        let len = shape.len();
        parts.push(ImageTensor::from_vec(
            shape,
            upstream.data()[offset..offset + len].to_vec(),
        )?);
        offset += len;
    }
    Ok(parts)
}
