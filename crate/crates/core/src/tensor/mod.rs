//! Dense C×H×W tensors and the layer kernels (forward and input-gradient
//! backward) needed by the architecture zoo.
//!
//! Activations are stored as `f32` by default (`f64` is available to gradient
//! oracles); every reduction accumulates in `f64` with a fixed loop order per
//! output element.

mod batchnorm;
mod conv;
mod gradcheck;
mod join;
mod pool;
mod relu;

pub use batchnorm::{batchnorm_backward, batchnorm_inference, BatchNormParams};
pub use conv::{conv2d_backward, conv2d_forward, Conv2d};
pub use gradcheck::{finite_difference_check, relative_error};
pub use join::{add, add_backward, concat_channels, concat_channels_backward};
pub use pool::{pool2d, pool2d_backward, Pool2d, PoolKind};
pub use relu::{relu, relu_backward};

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// A C×H×W block of activations (or normalized pixels) in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor<T: Scalar = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> ImageTensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        ImageTensor {
            shape,
            data: vec![T::ZERO; shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        ImageTensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Precondition(alloc::format!(
                "tensor of shape {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(ImageTensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    data.push(f(c, y, x));
                }
            }
        }
        ImageTensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.shape.height + y) * self.shape.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: T) {
        let idx = (c * self.shape.height + y) * self.shape.width + x;
        self.data[idx] = value;
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let plane = self.shape.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> ImageTensor<T> {
        ImageTensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Adds `other` into `self` elementwise.
    pub fn accumulate(&mut self, other: &ImageTensor<T>) -> Result<()> {
        ensure_same_shape("accumulate", self.shape, other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn scaled(&self, factor: T) -> ImageTensor<T> {
        self.map(|v| v * factor)
    }

    pub fn max_abs_diff(&self, other: &ImageTensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Converts element type (e.g. an `f32` image into the `f64` oracle path).
    pub fn cast<U: Scalar>(&self) -> ImageTensor<U> {
        ImageTensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Activations at a tap viewed as an N×M matrix: N filters by M spatial
/// positions. The matrix view is the tensor's own buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T: Scalar = f32> {
    pub layer_id: alloc::string::String,
    pub tensor: ImageTensor<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(layer_id: impl Into<alloc::string::String>, tensor: ImageTensor<T>) -> Self {
        FeatureMap {
            layer_id: layer_id.into(),
            tensor,
        }
    }

    /// Number of filters (rows).
    pub fn filters(&self) -> usize {
        self.tensor.channels()
    }

    /// Number of spatial positions (columns).
    pub fn positions(&self) -> usize {
        self.tensor.shape().plane()
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.tensor.channel(i)
    }

    pub fn matrix(&self) -> &[T] {
        self.tensor.data()
    }
}

/// Gradient of a scalar with respect to a layer's input. Weight gradients are
/// never produced; only the image is optimized.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T: Scalar = f32> {
    pub wrt_input: ImageTensor<T>,
}

pub(crate) fn ensure_same_shape(op: &str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(Error::config(
            op,
            alloc::format!("shape mismatch: {a} vs {b}"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(ImageTensor::<f32>::from_vec(Shape::new(1, 2, 2), vec![0.0; 3]).is_err());
        let t = ImageTensor::<f32>::from_vec(Shape::new(1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.get(0, 1, 0), 3.0);
    }

    #[test]
    fn feature_map_view_is_source_buffer() {
        let t = ImageTensor::from_fn(Shape::new(3, 2, 5), |c, y, x| (c * 100 + y * 10 + x) as f32);
        let fm = FeatureMap::new("relu1", t.clone());
        assert_eq!(fm.filters(), 3);
        assert_eq!(fm.positions(), 10);
        assert_eq!(fm.matrix(), t.data());
        assert_eq!(fm.row(2)[7], t.get(2, 1, 2));
    }
}
