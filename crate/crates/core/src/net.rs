//! Per-axis feed-forward networks with `sin(w0 x)` activation.
//!
//! Each network maps one coordinate axis (input dimension 1) to `R*C`
//! features. Initialization follows the sine-network scheme: first-layer
//! weights uniform in `[-1/fan_in, 1/fan_in]`, deeper weights uniform in
//! `[-sqrt(6/fan_in)/w0, sqrt(6/fan_in)/w0]`, biases uniform in
//! `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`. A `tanh` variant (w0 = 1) exists
//! for the scalar regression study.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// `x -> sin(w0 x)` after every affine layer except the last.
    Sine,
    /// `tanh` after every affine layer except the last (w0 ignored).
    Tanh,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Sine => "sine",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "sine" => Ok(Activation::Sine),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidValue(format!("unknown activation `{other}`"))),
        }
    }
}

/// One affine layer; `weight` is stored `[fan_in, fan_out]`.
#[derive(Clone, Debug)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct AxisNet<T: Real> {
    pub layers: Vec<Dense<T>>,
    pub w0: T,
    pub activation: Activation,
}

/// SplitMix64 mixing step, used to derive independent RNG streams.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for a named sub-stream of `master`. Streams are independent of
/// each other, so adding a stream never reshuffles existing ones.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream))
}

impl<T: Real> AxisNet<T> {
    /// Build a network with the given layer widths (`layer_sizes[0]` must
    /// be 1). Parameters are drawn reproducibly from `seed`.
    pub fn init(layer_sizes: &[usize], w0: T, activation: Activation, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidValue(format!(
                "need at least input and output sizes, got {layer_sizes:?}"
            )));
        }
        if layer_sizes[0] != 1 {
            return Err(Error::InvalidValue(format!(
                "axis networks take exactly one coordinate, got input width {}",
                layer_sizes[0]
            )));
        }
        if layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidValue("zero layer width".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(layer_sizes.len() - 1);
        for l in 0..layer_sizes.len() - 1 {
            let fan_in = layer_sizes[l];
            let fan_out = layer_sizes[l + 1];
            let w_bound = if l == 0 {
                1.0 / fan_in as f64
            } else {
                (6.0 / fan_in as f64).sqrt() / w0.to_f64().unwrap()
            };
            let b_bound = 1.0 / (fan_in as f64).sqrt();
            let weight = Tensor::from_fn(&[fan_in, fan_out], |_| {
                T::lit(rng.gen_range(-w_bound..=w_bound))
            });
            let bias = Tensor::from_fn(&[fan_out], |_| T::lit(rng.gen_range(-b_bound..=b_bound)));
            layers.push(Dense { weight, bias });
        }
        Ok(Self { layers, w0, activation })
    }

    /// Number of output features (R*C for field nets).
    pub fn out_features(&self) -> usize {
        self.layers.last().unwrap().bias.shape()[0]
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].weight.shape()[0]];
        sizes.extend(self.layers.iter().map(|d| d.weight.shape()[1]));
        sizes
    }

    /// Parameters in canonical order (per layer: weight, then bias).
    pub fn param_tensors(&self) -> Vec<&Tensor<T>> {
        self.layers
            .iter()
            .flat_map(|d| [&d.weight, &d.bias])
            .collect()
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|d| [&mut d.weight, &mut d.bias])
            .collect()
    }

    /// Register this network's parameters on a tape. Node order matches
    /// [`AxisNet::param_tensors`].
    pub fn bind(&self, tape: &mut Tape<T>) -> AxisNetGraph<T> {
        let layers = self
            .layers
            .iter()
            .map(|d| (tape.param(d.weight.clone()), tape.param(d.bias.clone())))
            .collect();
        AxisNetGraph { layers, w0: self.w0, activation: self.activation }
    }

    /// Evaluate at a batch of points without keeping a tape around.
    pub fn forward_values(&self, points: &[T]) -> Result<Tensor<T>> {
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite input coordinate".into()));
        }
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(points));
        let graph = self.bind(&mut tape);
        let out = graph.forward(&mut tape, x)?;
        Ok(tape.value(out).clone())
    }
}

/// Tape-bound view of an [`AxisNet`].
pub struct AxisNetGraph<T> {
    layers: Vec<(NodeId, NodeId)>,
    w0: T,
    activation: Activation,
}

impl<T: Real> AxisNetGraph<T> {
    /// Forward pass for a coordinate vector node of shape `[n]`,
    /// producing the `[n, out_features]` feature matrix.
    pub fn forward(&self, tape: &mut Tape<T>, x: NodeId) -> Result<NodeId> {
        let n = tape.value(x).len();
        let mut h = tape.reshape(x, &[n, 1])?;
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let mm = tape.matmul(h, *w)?;
            let affine = tape.add(mm, *b)?;
            h = if l == last {
                affine
            } else {
                match self.activation {
                    Activation::Sine => {
                        let scaled = tape.scale(affine, self.w0);
                        tape.sin(scaled)
                    }
                    Activation::Tanh => tape.tanh(affine),
                }
            };
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_layer_weights_within_unit_bound() {
        let net = AxisNet::<f64>::init(&[1, 64, 64, 16], 10.0, Activation::Sine, 1234).unwrap();
        assert!(net.layers[0]
            .weight
            .data()
            .iter()
            .all(|w| (-1.0..=1.0).contains(w)));
    }

    #[test]
    fn hidden_weights_within_sine_bound() {
        let net = AxisNet::<f64>::init(&[1, 128, 128, 8], 10.0, Activation::Sine, 7).unwrap();
        let bound = (6.0f64 / 128.0).sqrt() / 10.0;
        for l in 1..net.layers.len() {
            assert!(net.layers[l]
                .weight
                .data()
                .iter()
                .all(|w| w.abs() <= bound + 1e-15));
            // the draw should actually use the range
            let max = net.layers[l].weight.data().iter().fold(0.0f64, |m, w| m.max(w.abs()));
            assert!(max > 0.5 * bound);
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = AxisNet::<f64>::init(&[1, 32, 4], 10.0, Activation::Sine, 99).unwrap();
        let b = AxisNet::<f64>::init(&[1, 32, 4], 10.0, Activation::Sine, 99).unwrap();
        for (pa, pb) in a.param_tensors().iter().zip(b.param_tensors()) {
            assert_eq!(pa.data(), pb.data());
        }
        let c = AxisNet::<f64>::init(&[1, 32, 4], 10.0, Activation::Sine, 100).unwrap();
        assert_ne!(a.layers[0].weight.data(), c.layers[0].weight.data());
    }

    #[test]
    fn single_affine_layer_is_identity_like() {
        // W=1, b=0: forward(2) = 2, no activation on the last layer
        let mut net = AxisNet::<f64>::init(&[1, 1], 10.0, Activation::Sine, 0).unwrap();
        net.layers[0].weight = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        net.layers[0].bias = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let out = net.forward_values(&[2.0]).unwrap();
        assert_eq!(out.shape(), &[1, 1]);
        assert_eq!(out.data()[0], 2.0);
    }

    #[test]
    fn batch_rows_and_concatenation() {
        let net = AxisNet::<f64>::init(&[1, 16, 3], 10.0, Activation::Sine, 5).unwrap();
        let pts: Vec<f64> = (0..7).map(|i| i as f64 * 0.1).collect();
        let full = net.forward_values(&pts).unwrap();
        assert_eq!(full.shape(), &[7, 3]);
        let first = net.forward_values(&pts[..3]).unwrap();
        let second = net.forward_values(&pts[3..]).unwrap();
        let cat: Vec<f64> = first.data().iter().chain(second.data()).copied().collect();
        assert_eq!(full.data(), &cat[..]);
    }

    #[test]
    fn hidden_activations_bounded_by_one() {
        // truncate after each hidden affine layer and apply the activation
        // by hand: every hidden activation stays in [-1, 1]
        let net = AxisNet::<f64>::init(&[1, 32, 32, 4], 10.0, Activation::Sine, 21).unwrap();
        for depth in 1..net.layers.len() {
            let hidden = AxisNet {
                layers: net.layers[..depth].to_vec(),
                w0: net.w0,
                activation: net.activation,
            };
            let mut tape = Tape::new();
            let x = tape.input(Tensor::vector(&[-2.0, -0.3, 0.0, 0.7, 3.1]));
            let g = hidden.bind(&mut tape);
            let pre = g.forward(&mut tape, x).unwrap();
            let scaled = tape.scale(pre, net.w0);
            let act = tape.sin(scaled);
            assert!(tape.value(act).data().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let net = AxisNet::<f64>::init(&[1, 8, 2], 10.0, Activation::Sine, 1).unwrap();
        assert!(net.forward_values(&[0.1, f64::NAN]).is_err());
    }

    #[test]
    fn permuting_points_permutes_rows() {
        let net = AxisNet::<f64>::init(&[1, 16, 2], 10.0, Activation::Sine, 13).unwrap();
        let pts = [0.3, -0.8, 0.5, 0.0];
        let perm = [2usize, 0, 3, 1];
        let fwd = net.forward_values(&pts).unwrap();
        let ppts: Vec<f64> = perm.iter().map(|&i| pts[i]).collect();
        let pfwd = net.forward_values(&ppts).unwrap();
        for (row, &src) in perm.iter().enumerate() {
            assert_eq!(&pfwd.data()[row * 2..row * 2 + 2], &fwd.data()[src * 2..src * 2 + 2]);
        }
    }

    #[test]
    fn derive_seed_stable_streams() {
        let s1 = derive_seed(42, 0);
        let s2 = derive_seed(42, 1);
        assert_ne!(s1, s2);
        assert_eq!(s1, derive_seed(42, 0));
    }
}
