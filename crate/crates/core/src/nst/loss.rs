//! Gram matrices and the content, style, and total losses with their
//! gradients with respect to the generated image's feature maps.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{FeatureMap, ImageTensor};

/// `N×N` filter correlation matrix `G[i][j] = Σ_k F[i][k]·F[j][k]`, summed in
/// f64 and left unnormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub layer_id: String,
    pub n: usize,
    pub values: Vec<f64>,
}

impl GramMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

pub fn gram<T: Scalar>(feature: &FeatureMap<T>) -> GramMatrix {
    let n = feature.filters();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| feature.row(i).iter().map(|v| v.to_f64()).collect())
        .collect();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            values[i * n + j] = dot;
            values[j * n + i] = dot;
        }
    }
    GramMatrix {
        layer_id: feature.layer_id.clone(),
        n,
        values,
    }
}

/// `½·Σ(F − P)²` and its gradient `F − P`.
pub fn content_loss<T: Scalar>(
    generated: &FeatureMap<T>,
    target: &FeatureMap<T>,
) -> Result<(f64, ImageTensor<T>)> {
    if generated.tensor.shape() != target.tensor.shape() {
        return Err(Error::config(
            &generated.layer_id,
            format!(
                "content features {} differ from target {}",
                generated.tensor.shape(),
                target.tensor.shape()
            ),
        ));
    }
    let mut loss = 0.0;
    let grad: Vec<T> = generated
        .tensor
        .data()
        .iter()
        .zip(target.tensor.data())
        .map(|(f, p)| {
            let d = f.to_f64() - p.to_f64();
            loss += d * d;
            T::from_f64(d)
        })
        .collect();
    Ok((0.5 * loss, ImageTensor::from_vec(generated.tensor.shape(), grad)?))
}

fn check_grams(generated: &GramMatrix, style: &GramMatrix) -> Result<()> {
    if generated.n != style.n {
        return Err(Error::config(
            &generated.layer_id,
            format!("Gram sizes differ: {} vs {} filters", generated.n, style.n),
        ));
    }
    Ok(())
}

/// One layer's style contribution `Σ(G − A)² / (4·N²·M²)`, where `G` is the
/// Gram matrix of the generated image and `A` the style image's (some texts
/// swap the letters; the term is symmetric in the two matrices).
pub fn style_term(generated: &GramMatrix, style: &GramMatrix, positions: usize) -> Result<f64> {
    check_grams(generated, style)?;
    let n = generated.n as f64;
    let m = positions as f64;
    let sq: f64 = generated
        .values
        .iter()
        .zip(&style.values)
        .map(|(g, a)| (g - a) * (g - a))
        .sum();
    Ok(sq / (4.0 * n * n * m * m))
}

/// Gradient of [`style_term`] with respect to the generated feature map:
/// `((G − A)·F) / (N²·M²)`.
pub fn style_term_grad<T: Scalar>(
    feature: &FeatureMap<T>,
    generated: &GramMatrix,
    style: &GramMatrix,
) -> Result<ImageTensor<T>> {
    check_grams(generated, style)?;
    if feature.filters() != generated.n {
        return Err(Error::config(
            &feature.layer_id,
            format!("feature has {} filters, Gram has {}", feature.filters(), generated.n),
        ));
    }
    let n = generated.n;
    let m = feature.positions();
    let scale = 1.0 / ((n * n) as f64 * (m * m) as f64);
    let diff: Vec<f64> = generated
        .values
        .iter()
        .zip(&style.values)
        .map(|(g, a)| (g - a) * scale)
        .collect();
    let mut acc = vec![0.0f64; n * m];
    for i in 0..n {
        let out = &mut acc[i * m..(i + 1) * m];
        for j in 0..n {
            let d = diff[i * n + j];
            if d == 0.0 {
                continue;
            }
            for (o, f) in out.iter_mut().zip(feature.row(j)) {
                *o += d * f.to_f64();
            }
        }
    }
    ImageTensor::from_vec(feature.tensor.shape(), acc.into_iter().map(T::from_f64).collect())
}

/// `Σ w_l·E_l` over `(w_l, E_l)` pairs.
pub fn style_loss(terms: &[(f64, f64)]) -> f64 {
    terms.iter().map(|(w, e)| w * e).sum()
}

/// Content weight α, style weight β, and per-tap style weights `w_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub layer_weights: BTreeMap<usize, f64>,
}

impl LossWeights {
    /// Uniform `w_l = 1/|style_taps|` over the given taps.
    pub fn uniform(alpha: f64, beta: f64, style_taps: &[usize]) -> Self {
        let w = 1.0 / style_taps.len().max(1) as f64;
        LossWeights {
            alpha,
            beta,
            layer_weights: style_taps.iter().map(|&t| (t, w)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.alpha) || !ok(self.beta) {
            return Err(Error::config("loss weights", "alpha and beta must be finite and non-negative"));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::config("loss weights", "alpha and beta cannot both be zero"));
        }
        if self.layer_weights.values().any(|&w| !ok(w)) {
            return Err(Error::config("loss weights", "style layer weights must be non-negative"));
        }
        if !self.layer_weights.values().any(|&w| w > 0.0) {
            return Err(Error::config("loss weights", "at least one style layer weight must be positive"));
        }
        Ok(())
    }
}

/// `α·L_content + β·L_style`.
pub fn total_loss(content: f64, style: f64, weights: &LossWeights) -> f64 {
    weights.alpha * content + weights.beta * style
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_difference_check, Shape};
    use crate::testutil::{random_tensor, Lcg};

    fn fmap<T: Scalar>(t: ImageTensor<T>) -> FeatureMap<T> {
        FeatureMap::new("t", t)
    }

    #[test]
    fn gram_of_two_by_two() {
        let f = fmap(ImageTensor::from_vec(Shape::new(2, 1, 2), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap());
        assert_eq!(gram(&f).values, vec![5.0, 11.0, 11.0, 25.0]);
    }

    #[test]
    fn gram_of_orthonormal_rows_is_identity() {
        let f = fmap(ImageTensor::from_vec(Shape::new(2, 1, 2), vec![0.6f64, 0.8, -0.8, 0.6]).unwrap());
        let g = gram(&f);
        for (v, e) in g.values.iter().zip([1.0, 0.0, 0.0, 1.0]) {
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn content_loss_values() {
        let p = fmap(ImageTensor::<f32>::zeros(Shape::new(2, 1, 3)));
        let f = fmap(ImageTensor::<f32>::filled(Shape::new(2, 1, 3), 1.0));
        assert_eq!(content_loss(&p, &p).unwrap().0, 0.0);
        let (l, g) = content_loss(&f, &p).unwrap();
        assert_eq!(l, 3.0);
        assert!(g.data().iter().all(|&v| v == 1.0));
        let other = fmap(ImageTensor::<f32>::zeros(Shape::new(3, 1, 3)));
        assert!(content_loss(&f, &other).is_err());
    }

    #[test]
    fn content_gradient_matches_finite_differences() {
        let mut rng = Lcg::new(8);
        let shape = Shape::new(3, 2, 2);
        let target = fmap(random_tensor::<f64>(&mut rng, shape));
        let x = random_tensor::<f64>(&mut rng, shape);
        let one = ImageTensor::filled(Shape::new(1, 1, 1), 1.0);
        let err = finite_difference_check(
            |t| {
                let (l, _) = content_loss(&fmap(t.clone()), &target)?;
                Ok(ImageTensor::filled(Shape::new(1, 1, 1), l))
            },
            |up, t| Ok(content_loss(&fmap(t.clone()), &target)?.1.scaled(up.data()[0])),
            &x,
            &one,
            1e-4,
            None,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn style_term_unit_case() {
        let g = GramMatrix { layer_id: "t".into(), n: 1, values: vec![2.0] };
        let a = GramMatrix { layer_id: "t".into(), n: 1, values: vec![0.0] };
        assert_eq!(style_term(&g, &a, 1).unwrap(), 1.0);
        assert_eq!(style_term(&g, &g, 1).unwrap(), 0.0);
        let b = GramMatrix { layer_id: "t".into(), n: 2, values: vec![0.0; 4] };
        assert!(style_term(&g, &b, 1).is_err());
    }

    #[test]
    fn style_gradient_matches_finite_differences() {
        let mut rng = Lcg::new(12);
        let shape = Shape::new(3, 2, 2);
        let style = gram(&fmap(random_tensor::<f64>(&mut rng, shape)));
        let x = random_tensor::<f64>(&mut rng, shape);
        let one = ImageTensor::filled(Shape::new(1, 1, 1), 1.0);
        let err = finite_difference_check(
            |t| {
                let e = style_term(&gram(&fmap(t.clone())), &style, 4)?;
                Ok(ImageTensor::filled(Shape::new(1, 1, 1), e))
            },
            |up, t| {
                let f = fmap(t.clone());
                Ok(style_term_grad(&f, &gram(&f), &style)?.scaled(up.data()[0]))
            },
            &x,
            &one,
            1e-5,
            None,
        )
        .unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn style_and_total_loss_arithmetic() {
        assert_eq!(style_loss(&[(1.0, 0.5)]), 0.5);
        let third = 1.0 / 3.0;
        assert!((style_loss(&[(third, 0.3); 3]) - 0.3).abs() < 1e-15);
        let w = LossWeights::uniform(1.0, 1e8, &[4]);
        assert!((total_loss(2.0, 3e-8, &w) - 5.0).abs() < 1e-12);
        let content_only = LossWeights::uniform(1.0, 0.0, &[4]);
        assert_eq!(total_loss(2.0, 3e-8, &content_only), 2.0);
        let c = LossWeights::uniform(10.0, 1e8, &[4]);
        assert!((total_loss(2.0, 0.0, &c) - 10.0 * total_loss(2.0, 0.0, &w)).abs() < 1e-12);
    }

    #[test]
    fn loss_weight_validation() {
        assert!(LossWeights::uniform(0.0, 0.0, &[1]).validate().is_err());
        assert!(LossWeights::uniform(-1.0, 1.0, &[1]).validate().is_err());
        assert!(LossWeights::uniform(1.0, 1.0, &[]).validate().is_err());
        let w = LossWeights::uniform(1.0, 1.0, &[6, 8, 10]);
        assert!(w.validate().is_ok());
        assert!(w.layer_weights.values().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }
}
