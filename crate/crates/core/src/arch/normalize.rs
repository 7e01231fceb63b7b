use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

fn per_channel<T: Scalar>(
    image: &ImageTensor<T>,
    f: impl Fn(usize, f64) -> f64,
) -> Result<ImageTensor<T>> {
    if image.channels() != 3 {
        return Err(Error::config(
            "normalize",
            alloc::format!("expected an RGB image, got {} channels", image.channels()),
        ));
    }
    let plane = image.shape().plane().max(1);
    let mut out = image.clone();
    for (c, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        for v in chunk {
            *v = T::from_f64(f(c, v.to_f64()));
        }
    }
    Ok(out)
}

/// Maps `[0, 1]` RGB to ImageNet-standardized values, `(x - mean) / std`.
pub fn normalize_input<T: Scalar>(image: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    per_channel(image, |c, v| (v - IMAGENET_MEAN[c]) / IMAGENET_STD[c])
}

/// Inverse of [`normalize_input`], clamped to `[0, 1]`.
pub fn denormalize<T: Scalar>(image: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    per_channel(image, |c, v| (v * IMAGENET_STD[c] + IMAGENET_MEAN[c]).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use crate::testutil::Lcg;

    #[test]
    fn channel_mean_maps_to_zero() {
        let x = ImageTensor::<f64>::from_fn(Shape::new(3, 2, 2), |c, _, _| IMAGENET_MEAN[c]);
        assert!(normalize_input(&x).unwrap().data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn white_pixel_values() {
        let x = ImageTensor::<f32>::filled(Shape::new(3, 1, 1), 1.0);
        let n = normalize_input(&x).unwrap();
        for (got, want) in n.data().iter().zip([2.2489, 2.4286, 2.64]) {
            assert!((f64::from(*got) - want).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn round_trip_and_clamp() {
        let mut rng = Lcg::new(1);
        let x = ImageTensor::<f32>::from_fn(Shape::new(3, 5, 5), |_, _, _| rng.uniform(0.01, 0.99));
        let back = denormalize(&normalize_input(&x).unwrap()).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-6);

        let wild = ImageTensor::<f32>::filled(Shape::new(3, 1, 1), 50.0);
        assert!(denormalize(&wild).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn grayscale_rejected() {
        assert!(normalize_input(&ImageTensor::<f32>::zeros(Shape::new(1, 2, 2))).is_err());
    }
}
