use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ImageTensor, LayerGrad, Shape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Geometry of a 2-D convolution. Kernels may be rectangular (kh×kw) so the
/// factorized 1×n / n×1 convolutions of Inception-style modules are expressible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: (usize, usize),
}

impl Conv2d {
    pub const fn square(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride,
            padding: (pad, pad),
        }
    }

    pub const fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel.0 * self.kernel.1
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if self.stride == 0 {
            return Err(Error::config("conv2d", "stride must be positive"));
        }
        if input.channels != self.in_channels {
            return Err(Error::config(
                "conv2d",
                format!(
                    "expected {} input channels, got {}",
                    self.in_channels, input.channels
                ),
            ));
        }
        let (kh, kw) = self.kernel;
        let (ph, pw) = self.padding;
        if kh == 0 || kw == 0 || kh > input.height + 2 * ph || kw > input.width + 2 * pw {
            return Err(Error::config(
                "conv2d",
                format!(
                    "kernel {kh}x{kw} (padding {ph},{pw}) does not fit input {}x{}",
                    input.height, input.width
                ),
            ));
        }
        Ok(Shape::new(
            self.out_channels,
            (input.height + 2 * ph - kh) / self.stride + 1,
            (input.width + 2 * pw - kw) / self.stride + 1,
        ))
    }

    #[inline]
    fn weight_index(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_channels + ic) * self.kernel.0 + ky) * self.kernel.1 + kx
    }
}

/// Output indices `o` in `[lo, hi)` for which `o*stride + k - pad` lands inside
/// `[0, in_len)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    if in_len + pad <= k {
        return (0, 0);
    }
    let hi = ((in_len - 1 + pad - k) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

/// Zero-padded cross-correlation.
pub fn conv2d_forward<T: Scalar>(
    input: &ImageTensor<T>,
    geom: &Conv2d,
    weight: &[f32],
    bias: Option<&[f32]>,
) -> Result<ImageTensor<T>> {
    let out_shape = geom.output_shape(input.shape())?;
    if weight.len() != geom.weight_len() {
        return Err(Error::config(
            "conv2d",
            format!("weight has {} values, geometry needs {}", weight.len(), geom.weight_len()),
        ));
    }
    if let Some(b) = bias {
        if b.len() != geom.out_channels {
            return Err(Error::config(
                "conv2d",
                format!("bias has {} values, expected {}", b.len(), geom.out_channels),
            ));
        }
    }

    let in_shape = input.shape();
    let (kh, kw) = geom.kernel;
    let (ph, pw) = geom.padding;
    let s = geom.stride;
    let (oh, ow) = (out_shape.height, out_shape.width);
    let mut out = ImageTensor::zeros(out_shape);
    let mut acc = vec![0.0f64; oh * ow];
    // Widen once so the inner loops are plain f64 multiply-adds.
    let wide: Vec<f64> = input.data().iter().map(|v| v.to_f64()).collect();
    let plane_len = in_shape.height * in_shape.width;

    for oc in 0..geom.out_channels {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for ic in 0..geom.in_channels {
            let plane = &wide[ic * plane_len..(ic + 1) * plane_len];
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_range(oh, in_shape.height, s, ky, ph);
                for kx in 0..kw {
                    let w = f64::from(weight[geom.weight_index(oc, ic, ky, kx)]);
                    let (ox_lo, ox_hi) = valid_range(ow, in_shape.width, s, kx, pw);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let ix_lo = ox_lo * s + kx - pw;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - ph;
                        let row = &plane[iy * in_shape.width..(iy + 1) * in_shape.width];
                        let acc_row = &mut acc[oy * ow + ox_lo..oy * ow + ox_hi];
                        if s == 1 {
                            for (a, x) in acc_row.iter_mut().zip(&row[ix_lo..]) {
                                *a += w * x;
                            }
                        } else {
                            for (a, x) in acc_row.iter_mut().zip(row[ix_lo..].iter().step_by(s)) {
                                *a += w * x;
                            }
                        }
                    }
                }
            }
        }
        let b = bias.map_or(0.0, |b| f64::from(b[oc]));
        let dst = &mut out.data_mut()[oc * oh * ow..(oc + 1) * oh * ow];
        for (d, a) in dst.iter_mut().zip(&acc) {
            *d = T::from_f64(a + b);
        }
    }
    Ok(out)
}

/// Gradient with respect to the convolution input: the transposed
/// convolution of `upstream` by `weight`.
pub fn conv2d_backward<T: Scalar>(
    upstream: &ImageTensor<T>,
    saved_input: &ImageTensor<T>,
    geom: &Conv2d,
    weight: &[f32],
) -> Result<LayerGrad<T>> {
    let in_shape = saved_input.shape();
    let out_shape = geom
        .output_shape(in_shape)
        .map_err(|e| Error::Internal(format!("conv2d backward: {e}")))?;
    if upstream.shape() != out_shape {
        return Err(Error::Internal(format!(
            "conv2d backward: upstream {} but forward output was {out_shape}",
            upstream.shape()
        )));
    }
    if weight.len() != geom.weight_len() {
        return Err(Error::Internal(format!(
            "conv2d backward: weight has {} values, geometry needs {}",
            weight.len(),
            geom.weight_len()
        )));
    }

    let (kh, kw) = geom.kernel;
    let (ph, pw) = geom.padding;
    let s = geom.stride;
    let (oh, ow) = (out_shape.height, out_shape.width);
    let (ih, iw) = (in_shape.height, in_shape.width);
    let mut grad = ImageTensor::zeros(in_shape);
    let mut acc = vec![0.0f64; ih * iw];
    let wide: Vec<f64> = upstream.data().iter().map(|v| v.to_f64()).collect();

    for ic in 0..geom.in_channels {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for oc in 0..geom.out_channels {
            let up = &wide[oc * oh * ow..(oc + 1) * oh * ow];
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_range(oh, ih, s, ky, ph);
                for kx in 0..kw {
                    let w = f64::from(weight[geom.weight_index(oc, ic, ky, kx)]);
                    let (ox_lo, ox_hi) = valid_range(ow, iw, s, kx, pw);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let ix_lo = ox_lo * s + kx - pw;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - ph;
                        let up_row = &up[oy * ow + ox_lo..oy * ow + ox_hi];
                        let acc_row = &mut acc[iy * iw..(iy + 1) * iw];
                        if s == 1 {
                            for (a, g) in acc_row[ix_lo..].iter_mut().zip(up_row) {
                                *a += w * g;
                            }
                        } else {
                            for (a, g) in acc_row[ix_lo..].iter_mut().step_by(s).zip(up_row) {
                                *a += w * g;
                            }
                        }
                    }
                }
            }
        }
        let dst = &mut grad.data_mut()[ic * ih * iw..(ic + 1) * ih * iw];
        for (d, a) in dst.iter_mut().zip(&acc) {
            *d = T::from_f64(*a);
        }
    }
    Ok(LayerGrad { wrt_input: grad })
}
