//! Image quality metrics between a reference (content) image and a generated
//! one: MSE, PSNR, SSIM on luma, and a deep-feature perceptual distance.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::arch::{normalize_input, ArchName, WeightedGraph};
use crate::error::{Error, Result};
use crate::tensor::{ensure_same_shape, ImageTensor};

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Mean squared error over every value of every channel.
pub fn mse(x: &ImageTensor<f32>, y: &ImageTensor<f32>) -> Result<f64> {
    ensure_same_shape("mse", x.shape(), y.shape()).map_err(as_precondition)?;
    if x.is_empty() {
        return Err(Error::Precondition("mse of empty images".into()));
    }
    let sum: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| {
            let d = f64::from(*a) - f64::from(*b);
            d * d
        })
        .sum();
    Ok(sum / x.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsnrParams {
    pub max_value: f64,
}

impl Default for PsnrParams {
    fn default() -> Self {
        PsnrParams { max_value: 1.0 }
    }
}

/// `10·log10(MAX²/mse)`; identical images give `+∞`.
pub fn psnr_from_mse(mse: f64, params: &PsnrParams) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * libm::log10(params.max_value * params.max_value / mse)
    }
}

pub fn psnr(x: &ImageTensor<f32>, y: &ImageTensor<f32>, params: &PsnrParams) -> Result<f64> {
    if !(params.max_value > 0.0) {
        return Err(Error::config("psnr", "max_value must be positive"));
    }
    Ok(psnr_from_mse(mse(x, y)?, params))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        let v = self.k1 * self.data_range;
        v * v
    }

    pub fn c2(&self) -> f64 {
        let v = self.k2 * self.data_range;
        v * v
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                libm::exp(-d * d / (2.0 * self.sigma * self.sigma))
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::config("ssim", "window must be odd"));
        }
        if !(self.sigma > 0.0 && self.k1 > 0.0 && self.k2 > 0.0 && self.data_range > 0.0) {
            return Err(Error::config("ssim", "sigma, K1, K2 and L must be positive"));
        }
        Ok(())
    }
}

fn as_precondition(e: Error) -> Error {
    match e {
        Error::Config { context, message } => Error::Precondition(format!("{context}: {message}")),
        other => other,
    }
}

/// Single-channel plane in f64: luma for RGB, the channel itself for gray.
pub fn luma(image: &ImageTensor<f32>) -> Result<Vec<f64>> {
    let plane = image.shape().plane();
    match image.channels() {
        1 => Ok(image.data().iter().map(|&v| f64::from(v)).collect()),
        3 => Ok((0..plane)
            .map(|i| {
                (0..3)
                    .map(|c| LUMA_WEIGHTS[c] * f64::from(image.data()[c * plane + i]))
                    .sum()
            })
            .collect()),
        n => Err(Error::Precondition(format!("ssim expects 1 or 3 channels, got {n}"))),
    }
}

/// Valid-region separable Gaussian filter of an `h×w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&line[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all fully contained Gaussian windows of the luma planes.
pub fn ssim(x: &ImageTensor<f32>, y: &ImageTensor<f32>, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    ensure_same_shape("ssim", x.shape(), y.shape()).map_err(as_precondition)?;
    let (h, w) = (x.height(), x.width());
    if h < params.window || w < params.window {
        return Err(Error::Precondition(format!(
            "ssim needs at least {0}x{0} pixels, got {h}x{w}",
            params.window
        )));
    }
    let (a, b) = (luma(x)?, luma(y)?);
    let k = params.kernel();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mu_x = filter_valid(&a, h, w, &k);
    let mu_y = filter_valid(&b, h, w, &k);
    let xx = filter_valid(&prod(&a, &a), h, w, &k);
    let yy = filter_valid(&prod(&b, &b), h, w, &k);
    let xy = filter_valid(&prod(&a, &b), h, w, &k);
    let (c1, c2) = (params.c1(), params.c2());
    let total: f64 = (0..mu_x.len())
        .map(|i| ssim_index(mu_x[i], mu_y[i], xx[i], yy[i], xy[i], c1, c2))
        .sum();
    Ok(total / mu_x.len() as f64)
}

/// SSIM of one window from its raw Gaussian-weighted moments.
#[inline]
pub fn ssim_index(mx: f64, my: f64, exx: f64, eyy: f64, exy: f64, c1: f64, c2: f64) -> f64 {
    let vx = exx - mx * mx;
    let vy = eyy - my * my;
    let cxy = exy - mx * my;
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Which taps of which backbone the perceptual distance compares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptualConfig {
    pub arch: ArchName,
    pub taps: Vec<usize>,
    pub weights: Vec<f64>,
    /// Unit-normalize each position's channel vector before differencing.
    pub normalize_channels: bool,
}

impl PerceptualConfig {
    /// All taps of `arch`, equally weighted, with channel normalization.
    pub fn all_taps(arch: ArchName, tap_count: usize) -> Self {
        PerceptualConfig {
            arch,
            taps: (1..=tap_count).collect(),
            weights: vec![1.0 / tap_count.max(1) as f64; tap_count],
            normalize_channels: true,
        }
    }

    pub fn validate(&self, graph: &WeightedGraph) -> Result<()> {
        if graph.graph().name() != self.arch {
            return Err(Error::config(
                "perceptual",
                format!("configured for {}, given {}", self.arch, graph.graph().name()),
            ));
        }
        if self.taps.len() != self.weights.len() {
            return Err(Error::config("perceptual", "one weight per tap required"));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::config("perceptual", "tap weights must be non-negative"));
        }
        for &t in &self.taps {
            graph.graph().tap_layer(t)?;
        }
        Ok(())
    }
}

/// Guards the unit normalization against all-zero feature vectors.
const NORM_EPS: f64 = 1e-10;

/// LPIPS-shaped distance without learned heads: per tap, the mean over
/// positions of the squared difference of (optionally unit-normalized)
/// channel vectors, then a weighted sum over taps. Inputs are RGB in `[0, 1]`.
pub fn perceptual_distance(
    x: &ImageTensor<f32>,
    y: &ImageTensor<f32>,
    cfg: &PerceptualConfig,
    graph: &WeightedGraph,
) -> Result<f64> {
    cfg.validate(graph)?;
    ensure_same_shape("perceptual distance", x.shape(), y.shape()).map_err(as_precondition)?;
    let fx = graph.forward_with_taps(&normalize_input(x)?, &cfg.taps)?.features;
    let fy = graph.forward_with_taps(&normalize_input(y)?, &cfg.taps)?.features;
    let mut total = 0.0;
    for (&tap, &weight) in cfg.taps.iter().zip(&cfg.weights) {
        let (a, b) = (&fx[&tap], &fy[&tap]);
        let (n, m) = (a.filters(), a.positions());
        let mut sum = 0.0;
        for k in 0..m {
            let column = |f: &crate::tensor::FeatureMap<f32>| -> Vec<f64> {
                (0..n).map(|c| f64::from(f.matrix()[c * m + k])).collect()
            };
            let (mut u, mut v) = (column(a), column(b));
            if cfg.normalize_channels {
                for vec in [&mut u, &mut v] {
                    let norm = libm::sqrt(vec.iter().map(|t| t * t).sum::<f64>()) + NORM_EPS;
                    vec.iter_mut().for_each(|t| *t /= norm);
                }
            }
            sum += u.iter().zip(&v).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        }
        total += weight * sum / m as f64;
    }
    Ok(total)
}
