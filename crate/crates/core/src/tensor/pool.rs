use alloc::format;
use alloc::vec;

use serde::{Deserialize, Serialize};

use super::{ImageTensor, LayerGrad, Shape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
}

/// Square pooling window. Padded positions never win a max; for averages
/// they count as zeros in the divisor (window² always).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool2d {
    pub kind: PoolKind,
    pub window: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Pool2d {
    pub const fn new(kind: PoolKind, window: usize, stride: usize) -> Self {
        Pool2d {
            kind,
            window,
            stride,
            padding: 0,
        }
    }

    pub const fn padded(self, padding: usize) -> Self {
        Pool2d { padding, ..self }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let (w, s, p) = (self.window, self.stride, self.padding);
        if w == 0 || s == 0 {
            return Err(Error::config("pool2d", "window and stride must be positive"));
        }
        if p >= w {
            return Err(Error::config("pool2d", "padding must be smaller than the window"));
        }
        if w > input.height + 2 * p || w > input.width + 2 * p {
            return Err(Error::config(
                "pool2d",
                format!("window {w} larger than input {}x{}", input.height, input.width),
            ));
        }
        Ok(Shape::new(
            input.channels,
            (input.height + 2 * p - w) / s + 1,
            (input.width + 2 * p - w) / s + 1,
        ))
    }

    /// In-bounds input coordinates `(row range, col range)` of the window at
    /// output position `(oy, ox)`.
    #[inline]
    fn window_at(&self, oy: usize, ox: usize, h: usize, w: usize) -> ((usize, usize), (usize, usize)) {
        let clip = |o: usize, len: usize| {
            let start = (o * self.stride) as isize - self.padding as isize;
            let end = start + self.window as isize;
            (start.max(0) as usize, (end.min(len as isize)) as usize)
        };
        (clip(oy, h), clip(ox, w))
    }
}

pub fn pool2d<T: Scalar>(input: &ImageTensor<T>, pool: &Pool2d) -> Result<ImageTensor<T>> {
    let out_shape = pool.output_shape(input.shape())?;
    let (h, w) = (input.height(), input.width());
    let area = (pool.window * pool.window) as f64;
    let mut out = ImageTensor::zeros(out_shape);
    for c in 0..out_shape.channels {
        let plane = input.channel(c);
        for oy in 0..out_shape.height {
            for ox in 0..out_shape.width {
                let ((y0, y1), (x0, x1)) = pool.window_at(oy, ox, h, w);
                let value = match pool.kind {
                    PoolKind::Max => {
                        let mut best = plane[y0 * w + x0];
                        for y in y0..y1 {
                            for x in x0..x1 {
                                let v = plane[y * w + x];
                                if v > best {
                                    best = v;
                                }
                            }
                        }
                        best
                    }
                    PoolKind::Avg => {
                        let mut sum = 0.0f64;
                        for y in y0..y1 {
                            for x in x0..x1 {
                                sum += plane[y * w + x].to_f64();
                            }
                        }
                        T::from_f64(sum / area)
                    }
                };
                out.set(c, oy, ox, value);
            }
        }
    }
    Ok(out)
}

/// Max pooling routes each upstream value to the first (row-major) maximum of
/// its window; average pooling spreads it uniformly over the window.
pub fn pool2d_backward<T: Scalar>(
    upstream: &ImageTensor<T>,
    saved_input: &ImageTensor<T>,
    pool: &Pool2d,
) -> Result<LayerGrad<T>> {
    let out_shape = pool
        .output_shape(saved_input.shape())
        .map_err(|e| Error::Internal(format!("pool2d backward: {e}")))?;
    if upstream.shape() != out_shape {
        return Err(Error::Internal(format!(
            "pool2d backward: upstream {} but forward output was {out_shape}",
            upstream.shape()
        )));
    }
    let (h, w) = (saved_input.height(), saved_input.width());
    let area = (pool.window * pool.window) as f64;
    let mut acc = vec![0.0f64; saved_input.len()];
    for c in 0..out_shape.channels {
        let plane = saved_input.channel(c);
        let base = c * h * w;
        for oy in 0..out_shape.height {
            for ox in 0..out_shape.width {
                let g = upstream.get(c, oy, ox).to_f64();
                let ((y0, y1), (x0, x1)) = pool.window_at(oy, ox, h, w);
                match pool.kind {
                    PoolKind::Max => {
                        let mut best_idx = y0 * w + x0;
                        for y in y0..y1 {
                            for x in x0..x1 {
                                if plane[y * w + x] > plane[best_idx] {
                                    best_idx = y * w + x;
                                }
                            }
                        }
                        acc[base + best_idx] += g;
                    }
                    PoolKind::Avg => {
                        for y in y0..y1 {
                            for x in x0..x1 {
                                acc[base + y * w + x] += g / area;
                            }
                        }
                    }
                }
            }
        }
    }
    let data = acc.into_iter().map(T::from_f64).collect();
    Ok(LayerGrad {
        wrt_input: ImageTensor::from_vec(saved_input.shape(), data)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_difference_check;
    use crate::testutil::{random_tensor, Lcg};
    use alloc::vec::Vec;

    fn two_by_two(v: [f32; 4]) -> ImageTensor {
        ImageTensor::from_vec(Shape::new(1, 2, 2), v.to_vec()).unwrap()
    }

    #[test]
    fn max_and_avg_of_single_window() {
        let x = two_by_two([1.0, 2.0, 3.0, 4.0]);
        let max = pool2d(&x, &Pool2d::new(PoolKind::Max, 2, 2)).unwrap();
        let avg = pool2d(&x, &Pool2d::new(PoolKind::Avg, 2, 2)).unwrap();
        assert_eq!(max.data(), &[4.0]);
        assert_eq!(avg.data(), &[2.5]);
    }

    /// Enumerates every window and picks the first maximal position explicitly.
    fn first_argmax_oracle(x: &ImageTensor, pool: &Pool2d) -> Vec<(usize, usize, usize)> {
        let out = pool.output_shape(x.shape()).unwrap();
        let mut picks = Vec::new();
        for c in 0..out.channels {
            for oy in 0..out.height {
                for ox in 0..out.width {
                    let mut cells = Vec::new();
                    for dy in 0..pool.window {
                        for dx in 0..pool.window {
                            cells.push((oy * pool.stride + dy, ox * pool.stride + dx));
                        }
                    }
                    let max = cells.iter().map(|&(y, x_)| x.get(c, y, x_)).fold(f32::MIN, f32::max);
                    let &(y, x_) = cells.iter().find(|&&(y, x_)| x.get(c, y, x_) == max).unwrap();
                    picks.push((c, y, x_));
                }
            }
        }
        picks
    }

    #[test]
    fn max_backward_breaks_ties_to_first_index() {
        let x = two_by_two([7.0, 7.0, 0.0, 0.0]);
        let up = ImageTensor::filled(Shape::new(1, 1, 1), 1.0);
        let pool = Pool2d::new(PoolKind::Max, 2, 2);
        let g = pool2d_backward(&up, &x, &pool).unwrap();
        assert_eq!(g.wrt_input.data(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(first_argmax_oracle(&x, &pool), alloc::vec![(0, 0, 0)]);

        // Quantized random inputs force plenty of ties.
        let mut rng = Lcg::new(4);
        let x = ImageTensor::from_fn(Shape::new(2, 6, 6), |_, _, _| (rng.uniform(0.0, 3.0) as i32) as f32);
        let out_shape = pool.output_shape(x.shape()).unwrap();
        let up = ImageTensor::filled(out_shape, 1.0);
        let g = pool2d_backward(&up, &x, &pool).unwrap();
        let mut expected = ImageTensor::<f32>::zeros(x.shape());
        for (c, y, x_) in first_argmax_oracle(&x, &pool) {
            expected.set(c, y, x_, 1.0);
        }
        assert_eq!(g.wrt_input, expected);
    }

    #[test]
    fn max_dominates_avg() {
        let mut rng = Lcg::new(17);
        let x = random_tensor::<f32>(&mut rng, Shape::new(3, 9, 9));
        for (window, stride) in [(2, 2), (3, 1), (3, 2)] {
            let max = pool2d(&x, &Pool2d::new(PoolKind::Max, window, stride)).unwrap();
            let avg = pool2d(&x, &Pool2d::new(PoolKind::Avg, window, stride)).unwrap();
            assert!(max.data().iter().zip(avg.data()).all(|(m, a)| m >= a));
        }
    }

    #[test]
    fn padded_pools_match_finite_differences() {
        let mut rng = Lcg::new(31);
        let x = random_tensor::<f64>(&mut rng, Shape::new(2, 7, 7));
        for pool in [
            Pool2d::new(PoolKind::Avg, 3, 1).padded(1),
            Pool2d::new(PoolKind::Max, 3, 2).padded(1),
            Pool2d::new(PoolKind::Max, 2, 2),
        ] {
            let probe = random_tensor(&mut rng, pool.output_shape(x.shape()).unwrap());
            let err = finite_difference_check(
                |t| pool2d(t, &pool),
                |up, t| pool2d_backward(up, t, &pool).map(|g| g.wrt_input),
                &x,
                &probe,
                1e-6,
                None,
            )
            .unwrap();
            assert!(err < 1e-3, "{pool:?}: {err}");
        }
    }

    #[test]
    fn avg_with_padding_divides_by_full_window() {
        let x = ImageTensor::<f32>::filled(Shape::new(1, 3, 3), 9.0);
        let out = pool2d(&x, &Pool2d::new(PoolKind::Avg, 3, 1).padded(1)).unwrap();
        assert_eq!(out.get(0, 0, 0), 4.0);
        assert_eq!(out.get(0, 1, 1), 9.0);
    }

    #[test]
    fn oversized_window_rejected() {
        let x = ImageTensor::<f32>::zeros(Shape::new(1, 2, 2));
        assert!(pool2d(&x, &Pool2d::new(PoolKind::Max, 3, 1)).is_err());
    }
}
