//! Tapped forward execution and reverse-mode propagation back to the image.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::weights::{LayerWeights, WeightedGraph};
use super::{LayerKind, Source};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{
    add, add_backward, batchnorm_backward, batchnorm_inference, concat_channels,
    concat_channels_backward, conv2d_backward, conv2d_forward, pool2d, pool2d_backward, relu,
    relu_backward, BatchNormParams, FeatureMap, ImageTensor, PoolKind, Shape,
};

/// Feature maps at the requested tap ordinals plus the tape needed to
/// backpropagate any scalar function of them.
#[derive(Debug, Clone)]
pub struct TappedForward<T: Scalar = f32> {
    pub features: BTreeMap<usize, FeatureMap<T>>,
    pub tape: Tape<T>,
}

/// Saved activations of one forward pass. Only layers that feed a requested
/// tap were executed; the rest are `None`.
#[derive(Debug, Clone)]
pub struct Tape<T: Scalar = f32> {
    input: ImageTensor<T>,
    outputs: Vec<Option<ImageTensor<T>>>,
    taps: BTreeMap<usize, usize>,
}

impl WeightedGraph {
    /// Runs the layers needed for `taps` (1-based ordinals) on an already
    /// normalized image.
    pub fn forward_with_taps<T: Scalar>(
        &self,
        image: &ImageTensor<T>,
        taps: &[usize],
    ) -> Result<TappedForward<T>> {
        let graph = self.graph();
        let mut tap_layers = BTreeMap::new();
        for &ordinal in taps {
            tap_layers.insert(ordinal, graph.tap_layer(ordinal)?);
        }
        graph.check_input(image.shape())?;
        let targets: Vec<usize> = tap_layers.values().copied().collect();
        let needed = graph.ancestors(&targets);

        let mut outputs: Vec<Option<ImageTensor<T>>> = vec![None; graph.layers().len()];
        for (i, layer) in graph.layers().iter().enumerate() {
            if !needed[i] {
                continue;
            }
            let ins: Vec<&ImageTensor<T>> = graph
                .sources(i)
                .iter()
                .map(|s| match *s {
                    Source::Input => image,
                    Source::Layer(j) => outputs[j].as_ref().expect("ancestors run first"),
                })
                .collect();
            let out = self.layer_forward(i, &ins).map_err(|e| e.in_layer(&layer.id))?;
            outputs[i] = Some(out);
        }

        let features = tap_layers
            .iter()
            .map(|(&ordinal, &layer)| {
                let tensor = outputs[layer].clone().expect("tap layer executed");
                (ordinal, FeatureMap::new(graph.layers()[layer].id.clone(), tensor))
            })
            .collect();
        Ok(TappedForward {
            features,
            tape: Tape {
                input: image.clone(),
                outputs,
                taps: tap_layers,
            },
        })
    }

    /// Runs every layer and returns the last layer's output, freeing each
    /// activation after its last consumer. Used for timing full passes.
    pub fn forward<T: Scalar>(&self, image: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        let graph = self.graph();
        graph.check_input(image.shape())?;
        let n = graph.layers().len();
        let mut last_use = vec![0usize; n];
        for i in 0..n {
            for s in graph.sources(i) {
                if let Source::Layer(j) = *s {
                    last_use[j] = i;
                }
            }
        }
        let mut outputs: Vec<Option<ImageTensor<T>>> = vec![None; n];
        for (i, layer) in graph.layers().iter().enumerate() {
            let ins: Vec<&ImageTensor<T>> = graph
                .sources(i)
                .iter()
                .map(|s| match *s {
                    Source::Input => image,
                    Source::Layer(j) => outputs[j].as_ref().expect("sources run first"),
                })
                .collect();
            let out = self.layer_forward(i, &ins).map_err(|e| e.in_layer(&layer.id))?;
            for s in graph.sources(i) {
                if let Source::Layer(j) = *s {
                    if last_use[j] == i {
                        outputs[j] = None;
                    }
                }
            }
            outputs[i] = Some(out);
        }
        match outputs.pop().flatten() {
            Some(out) => Ok(out),
            None => Ok(image.clone()),
        }
    }

    fn layer_forward<T: Scalar>(&self, i: usize, ins: &[&ImageTensor<T>]) -> Result<ImageTensor<T>> {
        let kind = &self.graph().layers()[i].kind;
        match kind {
            LayerKind::Conv { .. } => {
                let (weight, bias) = self.conv_params(i)?;
                conv2d_forward(ins[0], &kind.conv_geometry().unwrap(), weight, bias)
            }
            LayerKind::Relu => Ok(relu(ins[0])),
            LayerKind::MaxPool { .. } | LayerKind::AvgPool { .. } => pool2d(ins[0], &kind.pool().unwrap()),
            LayerKind::BatchNorm { eps, .. } => batchnorm_inference(ins[0], &self.bn_params(i, *eps)?),
            LayerKind::Add => add(ins[0], ins[1]),
            LayerKind::Concat => concat_channels(ins),
        }
    }

    fn conv_params(&self, i: usize) -> Result<(&[f32], Option<&[f32]>)> {
        match self.params(i) {
            Some(LayerWeights::Conv { weight, bias }) => Ok((weight, bias.as_deref())),
            _ => Err(Error::Internal(format!("layer {i} has no conv parameters"))),
        }
    }

    fn bn_params(&self, i: usize, eps: f64) -> Result<BatchNormParams<'_>> {
        match self.params(i) {
            Some(LayerWeights::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            }) => Ok(BatchNormParams {
                gamma,
                beta,
                running_mean,
                running_var,
                eps,
            }),
            _ => Err(Error::Internal(format!("layer {i} has no batch-norm parameters"))),
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn input_shape(&self) -> Shape {
        self.input.shape()
    }

    /// Given `d(loss)/d(tap output)` for some of the taps recorded on this
    /// tape, returns `d(loss)/d(image)`.
    pub fn backward(
        &self,
        weighted: &WeightedGraph,
        tap_grads: &BTreeMap<usize, ImageTensor<T>>,
    ) -> Result<ImageTensor<T>> {
        let graph = weighted.graph();
        if self.outputs.len() != graph.layers().len() {
            return Err(Error::Internal("tape recorded for a different graph".into()));
        }
        let mut grads: Vec<Option<ImageTensor<T>>> = vec![None; self.outputs.len()];
        for (&ordinal, g) in tap_grads {
            let &layer = self.taps.get(&ordinal).ok_or_else(|| {
                Error::config(format!("tap {ordinal}"), "gradient given for a tap not on the tape")
            })?;
            accumulate(&mut grads[layer], g)?;
        }
        let mut input_grad: Option<ImageTensor<T>> = None;

        for i in (0..self.outputs.len()).rev() {
            let Some(upstream) = grads[i].take() else {
                continue;
            };
            let sources = graph.sources(i);
            let ins: Vec<&ImageTensor<T>> = sources.iter().map(|s| self.source_value(*s)).collect();
            let kind = &graph.layers()[i].kind;
            let parts: Vec<ImageTensor<T>> = match kind {
                LayerKind::Conv { .. } => {
                    let (weight, _) = weighted.conv_params(i)?;
                    vec![conv2d_backward(&upstream, ins[0], &kind.conv_geometry().unwrap(), weight)?.wrt_input]
                }
                LayerKind::Relu => vec![relu_backward(&upstream, ins[0])?.wrt_input],
                LayerKind::MaxPool { .. } | LayerKind::AvgPool { .. } => {
                    vec![pool2d_backward(&upstream, ins[0], &kind.pool().unwrap())?.wrt_input]
                }
                LayerKind::BatchNorm { eps, .. } => {
                    vec![batchnorm_backward(&upstream, ins[0], &weighted.bn_params(i, *eps)?)?.wrt_input]
                }
                LayerKind::Add => {
                    let (a, b) = add_backward(&upstream);
                    vec![a, b]
                }
                LayerKind::Concat => {
                    let shapes: Vec<Shape> = ins.iter().map(|t| t.shape()).collect();
                    concat_channels_backward(&upstream, &shapes)?
                }
            };
            for (src, g) in sources.iter().zip(&parts) {
                match *src {
                    Source::Input => accumulate(&mut input_grad, g)?,
                    Source::Layer(j) => accumulate(&mut grads[j], g)?,
                }
            }
        }
        Ok(input_grad.unwrap_or_else(|| ImageTensor::zeros(self.input.shape())))
    }

    fn source_value(&self, src: Source) -> &ImageTensor<T> {
        match src {
            Source::Input => &self.input,
            Source::Layer(j) => self.outputs[j].as_ref().expect("executed layer"),
        }
    }

    /// Fingerprint of every non-smooth decision taken in the forward pass:
    /// ReLU signs and max-pool argmax positions. Two inputs with the same
    /// signature lie in the same linear region of the network.
    pub fn kink_signature(&self, weighted: &WeightedGraph) -> u64 {
        let graph = weighted.graph();
        let mut h = Fnv::new();
        for (i, layer) in graph.layers().iter().enumerate() {
            if self.outputs[i].is_none() {
                continue;
            }
            let ins: Vec<&ImageTensor<T>> =
                graph.sources(i).iter().map(|s| self.source_value(*s)).collect();
            match &layer.kind {
                LayerKind::Relu => {
                    for v in ins[0].data() {
                        h.write(u64::from(*v > T::ZERO));
                    }
                }
                LayerKind::MaxPool { .. } => {
                    let pool = layer.kind.pool().unwrap();
                    debug_assert_eq!(pool.kind, PoolKind::Max);
                    // The backward pass routes a unit gradient to the argmax,
                    // so its support pattern identifies the argmax choice.
                    let out = self.outputs[i].as_ref().unwrap();
                    let ones = ImageTensor::<T>::filled(out.shape(), T::ONE);
                    if let Ok(g) = pool2d_backward(&ones, ins[0], &pool) {
                        for v in g.wrt_input.data() {
                            h.write(v.to_f64().to_bits());
                        }
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<ImageTensor<T>>, g: &ImageTensor<T>) -> Result<()> {
    match slot {
        Some(acc) => acc.accumulate(g),
        None => {
            *slot = Some(g.clone());
            Ok(())
        }
    }
}

/// FNV-1a over 64-bit words; only used to compare kink patterns.
struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, word: u64) {
        for b in word.to_le_bytes() {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_arch, init_weights, ArchName, WeightScheme};
    use crate::tensor::{finite_difference_check, Conv2d, Pool2d};
    use crate::testutil::{random_tensor, Lcg};

    fn weighted(name: ArchName, seed: u64) -> WeightedGraph {
        init_weights(build_arch(name).unwrap(), WeightScheme::Random { seed }).unwrap()
    }

    #[test]
    fn zero_image_gives_zero_first_tap() {
        let g = weighted(ArchName::TinyVgg, 7);
        let x = ImageTensor::<f32>::zeros(Shape::new(3, 64, 64));
        let out = g.forward_with_taps(&x, &[1]).unwrap();
        let f = &out.features[&1];
        assert_eq!(f.tensor.shape(), Shape::new(8, 64, 64));
        assert!(f.tensor.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_forward_matches_last_layer_tap() {
        for name in [ArchName::TinyVgg, ArchName::TinyResnet, ArchName::TinyInception] {
            let g = weighted(name, 3);
            let mut rng = Lcg::new(5);
            let x = ImageTensor::<f32>::from_fn(Shape::new(3, 16, 16), |_, _, _| rng.uniform(-1.0, 1.0));
            let full = g.forward(&x).unwrap();
            let last = g.graph().layers().len() - 1;
            let ordinal = (1..=g.graph().taps().len())
                .find(|&t| g.graph().tap_layer(t).unwrap() == last);
            if let Some(t) = ordinal {
                assert_eq!(full, g.forward_with_taps(&x, &[t]).unwrap().features[&t].tensor, "{name}");
            } else {
                assert!(full.is_finite());
            }
        }
    }

    #[test]
    fn out_of_range_tap_rejected() {
        for name in ArchName::ALL {
            let g = init_weights(build_arch(name).unwrap(), WeightScheme::Random { seed: 1 });
            if name.is_tiny() {
                let g = g.unwrap();
                let x = ImageTensor::<f32>::zeros(Shape::new(3, 64, 64));
                let err = g.forward_with_taps(&x, &[99]).unwrap_err();
                assert!(matches!(err, Error::Config { .. }));
            }
        }
    }

    #[test]
    fn tiny_vgg_taps_match_manual_composition() {
        let g = weighted(ArchName::TinyVgg, 7);
        let mut rng = Lcg::new(5);
        let x = random_tensor::<f32>(&mut rng, Shape::new(3, 16, 16));
        let out = g.forward_with_taps(&x, &[1, 2, 3, 4]).unwrap();

        let conv = |i: usize, t: &ImageTensor, cin: usize, cout: usize| {
            let Some(LayerWeights::Conv { weight, bias }) = g.params(g.graph().layer_index(&format!("conv{i}")).unwrap()) else {
                panic!()
            };
            let geom = Conv2d { in_channels: cin, out_channels: cout, kernel: (3, 3), stride: 1, padding: (1, 1) };
            conv2d_forward(t, &geom, weight, bias.as_deref()).unwrap()
        };
        let r1 = relu(&conv(1, &x, 3, 8));
        let r2 = relu(&conv(2, &r1, 8, 8));
        let p = pool2d(&r2, &Pool2d::new(PoolKind::Max, 2, 2)).unwrap();
        let r3 = relu(&conv(3, &p, 8, 16));
        let r4 = relu(&conv(4, &r3, 16, 16));
        for (k, expected) in [(1, &r1), (2, &r2), (3, &r3), (4, &r4)] {
            assert_eq!(&out.features[&k].tensor, expected, "tap {k}");
        }
    }

    #[test]
    fn skipping_unneeded_layers_does_not_change_taps() {
        let g = weighted(ArchName::TinyInception, 2);
        let mut rng = Lcg::new(9);
        let x = random_tensor::<f32>(&mut rng, Shape::new(3, 16, 16));
        let all = g.forward_with_taps(&x, &[1, 2, 3]).unwrap();
        let one = g.forward_with_taps(&x, &[2]).unwrap();
        assert_eq!(all.features[&2], one.features[&2]);
    }

    #[test]
    fn backward_of_tap_sum_matches_finite_differences() {
        for name in [ArchName::TinyVgg, ArchName::TinyResnet, ArchName::TinyInception] {
            let g = weighted(name, 11);
            let mut rng = Lcg::new(3);
            let x = random_tensor::<f64>(&mut rng, Shape::new(3, 8, 8));
            let taps: Vec<usize> = (1..=g.graph().taps().len()).collect();
            let fwd = g.forward_with_taps(&x, &taps).unwrap();
            let signature = fwd.tape.kink_signature(&g);

            // f(x) = sum over all taps of all activations.
            let grads = fwd
                .features
                .iter()
                .map(|(&k, f)| (k, ImageTensor::filled(f.tensor.shape(), 1.0)))
                .collect();
            let analytic = fwd.tape.backward(&g, &grads).unwrap();
            let f = |t: &ImageTensor<f64>| -> (f64, u64) {
                let out = g.forward_with_taps(t, &taps).unwrap();
                let s = out.features.values().flat_map(|f| f.tensor.data().iter()).sum();
                (s, out.tape.kink_signature(&g))
            };
            let eps = 1e-5;
            let mut checked = 0;
            for i in (0..x.len()).step_by(5) {
                let mut plus = x.clone();
                plus.data_mut()[i] += eps;
                let mut minus = x.clone();
                minus.data_mut()[i] -= eps;
                let ((fp, sp), (fm, sm)) = (f(&plus), f(&minus));
                if sp != sm || sp != signature {
                    continue;
                }
                let numeric = (fp - fm) / (2.0 * eps);
                let err = crate::tensor::relative_error(analytic.data()[i], numeric);
                assert!(err < 1e-6, "{name} coord {i}: {err}");
                checked += 1;
            }
            assert!(checked > 20, "{name}: only {checked} coordinates checked");
        }
    }

    #[test]
    fn generic_fd_helper_agrees_on_tiny_resnet() {
        let g = weighted(ArchName::TinyResnet, 4);
        let mut rng = Lcg::new(21);
        let x = random_tensor::<f64>(&mut rng, Shape::new(3, 8, 8));
        let fwd = g.forward_with_taps(&x, &[4]).unwrap();
        let probe = random_tensor::<f64>(&mut rng, fwd.features[&4].tensor.shape());
        let sig = fwd.tape.kink_signature(&g);
        let coords: Vec<usize> = (0..x.len())
            .filter(|&i| {
                let mut p = x.clone();
                p.data_mut()[i] += 1e-5;
                let mut m = x.clone();
                m.data_mut()[i] -= 1e-5;
                let s = |t: &ImageTensor<f64>| g.forward_with_taps(t, &[4]).unwrap().tape.kink_signature(&g);
                s(&p) == sig && s(&m) == sig
            })
            .collect();
        let err = finite_difference_check(
            |t| Ok(g.forward_with_taps(t, &[4])?.features[&4].tensor.clone()),
            |up, t| {
                let f = g.forward_with_taps(t, &[4])?;
                f.tape.backward(&g, &BTreeMap::from([(4, up.clone())]))
            },
            &x,
            &probe,
            1e-5,
            Some(&coords),
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }
}
