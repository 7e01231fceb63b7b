use super::ImageTensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares an analytic input gradient against central differences.
///
/// The checked scalar is `f(x) = <probe, forward(x)>`, so `backward(probe, x)`
/// must equal `df/dx`. Every coordinate is tested unless `coords` restricts
/// the set. Returns the worst relative error seen.
pub fn finite_difference_check<T, F, B>(
    forward: F,
    backward: B,
    input: &ImageTensor<T>,
    probe: &ImageTensor<T>,
    eps: f64,
    coords: Option<&[usize]>,
) -> Result<f64>
where
    T: Scalar,
    F: Fn(&ImageTensor<T>) -> Result<ImageTensor<T>>,
    B: Fn(&ImageTensor<T>, &ImageTensor<T>) -> Result<ImageTensor<T>>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Precondition(alloc::format!(
            "finite-difference step must be positive and finite, got {eps}"
        )));
    }
    let analytic = backward(probe, input)?;
    if analytic.shape() != input.shape() {
        return Err(Error::Internal("gradient shape differs from input shape".into()));
    }
    let objective = |x: &ImageTensor<T>| -> Result<f64> {
        let out = forward(x)?;
        Ok(out
            .data()
            .iter()
            .zip(probe.data())
            .map(|(o, p)| o.to_f64() * p.to_f64())
            .sum())
    };

    let all: alloc::vec::Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..input.len()).collect();
            &all
        }
    };
    let mut worst = 0.0f64;
    let mut shifted = input.clone();
    for &i in coords {
        let original = input.data()[i];
        shifted.data_mut()[i] = T::from_f64(original.to_f64() + eps);
        let plus = objective(&shifted)?;
        shifted.data_mut()[i] = T::from_f64(original.to_f64() - eps);
        let minus = objective(&shifted)?;
        shifted.data_mut()[i] = original;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i].to_f64(), numeric));
    }
    Ok(worst)
}
