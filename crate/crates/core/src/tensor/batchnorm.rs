use alloc::format;
use alloc::vec::Vec;

use super::{ensure_same_shape, ImageTensor, LayerGrad};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Frozen per-channel statistics and affine parameters.
#[derive(Debug, Clone, Copy)]
pub struct BatchNormParams<'a> {
    pub gamma: &'a [f32],
    pub beta: &'a [f32],
    pub running_mean: &'a [f32],
    pub running_var: &'a [f32],
    pub eps: f64,
}

impl BatchNormParams<'_> {
    /// Per-channel `(scale, shift)` such that `y = scale * x + shift`.
    fn affine(&self, channels: usize) -> Result<Vec<(f64, f64)>> {
        for (name, v) in [
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("running_mean", self.running_mean),
            ("running_var", self.running_var),
        ] {
            if v.len() != channels {
                return Err(Error::config(
                    "batchnorm",
                    format!("{name} has {} entries, input has {channels} channels", v.len()),
                ));
            }
        }
        (0..channels)
            .map(|c| {
                let denom = f64::from(self.running_var[c]) + self.eps;
                if denom <= 0.0 || !denom.is_finite() {
                    return Err(Error::config(
                        "batchnorm",
                        format!("channel {c}: var + eps = {denom} is not positive"),
                    ));
                }
                let scale = f64::from(self.gamma[c]) / libm::sqrt(denom);
                Ok((scale, f64::from(self.beta[c]) - scale * f64::from(self.running_mean[c])))
            })
            .collect()
    }
}

/// `gamma * (x - mean) / sqrt(var + eps) + beta`, per channel.
pub fn batchnorm_inference<T: Scalar>(
    input: &ImageTensor<T>,
    params: &BatchNormParams<'_>,
) -> Result<ImageTensor<T>> {
    let affine = params.affine(input.channels())?;
    let plane = input.shape().plane();
    let mut out = input.clone();
    for (c, chunk) in out.data_mut().chunks_mut(plane.max(1)).enumerate().take(affine.len()) {
        let (scale, shift) = affine[c];
        for v in chunk {
            *v = T::from_f64(scale * v.to_f64() + shift);
        }
    }
    Ok(out)
}

pub fn batchnorm_backward<T: Scalar>(
    upstream: &ImageTensor<T>,
    saved_input: &ImageTensor<T>,
    params: &BatchNormParams<'_>,
) -> Result<LayerGrad<T>> {
    ensure_same_shape("batchnorm backward", upstream.shape(), saved_input.shape())?;
    let affine = params.affine(upstream.channels())?;
    let plane = upstream.shape().plane();
    let mut grad = upstream.clone();
    for (c, chunk) in grad.data_mut().chunks_mut(plane.max(1)).enumerate().take(affine.len()) {
        let scale = affine[c].0;
        for v in chunk {
            *v = T::from_f64(scale * v.to_f64());
        }
    }
    Ok(LayerGrad { wrt_input: grad })
}
