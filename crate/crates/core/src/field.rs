//! Multi-channel separable fields on rectilinear grids.
//!
//! A field assigns one [`AxisNet`] per coordinate axis; each net emits
//! `R*C` features per point and the field value is the rank-R CP
//! contraction of the per-axis features, channel by channel. Evaluating
//! on an `N_1 x .. x N_d` grid therefore needs only `sum N_i` network
//! passes. Velocity axes can carry a learnable Gaussian decay factor
//! `exp(-tau^2 (v - mu)^2 / 2)` multiplied into their features.

use crate::error::{Error, Result};
use crate::net::{derive_seed, Activation, AxisNet, AxisNetGraph};
use crate::scalar::Real;
use crate::tape::{NodeId, Tape};
use crate::tensor::{cp_dense, Tensor};

/// Coordinate vectors for a rectilinear grid, in field axis order.
#[derive(Clone, Debug)]
pub struct GridBatch<T> {
    axes: Vec<(String, Vec<T>)>,
}

impl<T: Real> GridBatch<T> {
    pub fn new(axes: Vec<(String, Vec<T>)>) -> Result<Self> {
        for (name, coords) in &axes {
            if coords.is_empty() {
                return Err(Error::InvalidValue(format!("axis `{name}` has no points")));
            }
            if coords.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidValue(format!(
                    "axis `{name}` has non-finite coordinates"
                )));
            }
        }
        Ok(Self { axes })
    }

    pub fn axes(&self) -> &[(String, Vec<T>)] {
        &self.axes
    }

    pub fn coords(&self, name: &str) -> Option<&[T]> {
        self.axes
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c.as_slice())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|(_, c)| c.len()).collect()
    }
}

/// Learnable Gaussian decay attached to a subset of axes: a single shared
/// `tau` and one center `mu_p` per tagged axis.
#[derive(Clone, Debug)]
pub struct FieldGaussian<T> {
    pub tau: Tensor<T>,
    pub mu: Vec<Tensor<T>>,
    pub axes: Vec<usize>,
}

impl<T: Real> FieldGaussian<T> {
    pub fn new(axes: Vec<usize>, mu0: T, tau0: T) -> Self {
        let mu = axes.iter().map(|_| Tensor::scalar(mu0)).collect();
        Self { tau: Tensor::scalar(tau0), mu, axes }
    }

    pub fn position(&self, axis: usize) -> Option<usize> {
        self.axes.iter().position(|&a| a == axis)
    }
}

#[derive(Clone, Debug)]
pub struct FieldAxis<T: Real> {
    pub name: String,
    pub net: AxisNet<T>,
}

#[derive(Clone, Debug)]
pub struct SeparableField<T: Real> {
    pub axes: Vec<FieldAxis<T>>,
    pub rank: usize,
    pub channels: usize,
    pub gaussian: Option<FieldGaussian<T>>,
}

impl<T: Real> SeparableField<T> {
    /// Initialize one axis net per name with hidden widths `hidden` and
    /// `rank*channels` outputs. Axis seeds derive from
    /// `(master_seed, seed_stream_base + axis_index)`, so adding axes never
    /// reshuffles existing ones. Gaussian parameters start at
    /// `(mu, tau) = (0, 1)`.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        axis_names: &[&str],
        hidden: &[usize],
        rank: usize,
        channels: usize,
        w0: T,
        activation: Activation,
        gaussian_axes: &[&str],
        master_seed: u64,
        seed_stream_base: u64,
    ) -> Result<Self> {
        if rank == 0 || channels == 0 {
            return Err(Error::InvalidValue("rank and channels must be positive".into()));
        }
        let mut sizes = vec![1usize];
        sizes.extend_from_slice(hidden);
        sizes.push(rank * channels);
        let mut axes = Vec::with_capacity(axis_names.len());
        for (i, name) in axis_names.iter().enumerate() {
            let seed = derive_seed(master_seed, seed_stream_base + i as u64);
            axes.push(FieldAxis {
                name: name.to_string(),
                net: AxisNet::init(&sizes, w0, activation, seed)?,
            });
        }
        let gaussian = if gaussian_axes.is_empty() {
            None
        } else {
            let mut idx = Vec::new();
            for g in gaussian_axes {
                let pos = axis_names
                    .iter()
                    .position(|a| a == g)
                    .ok_or_else(|| Error::UnknownAxis((*g).to_string()))?;
                idx.push(pos);
            }
            Some(FieldGaussian::new(idx, T::zero(), T::one()))
        };
        Ok(Self { axes, rank, channels, gaussian })
    }

    pub fn axis_index(&self, name: &str) -> Result<usize> {
        self.axes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAxis(name.to_string()))
    }

    fn check_nets(&self) -> Result<()> {
        for a in &self.axes {
            if a.net.out_features() != self.rank * self.channels {
                return Err(Error::RankMismatch(format!(
                    "axis `{}` emits {} features, field needs rank*channels = {}",
                    a.name,
                    a.net.out_features(),
                    self.rank * self.channels
                )));
            }
        }
        Ok(())
    }

    fn check_grid(&self, grid: &GridBatch<T>) -> Result<()> {
        if grid.axes().len() != self.axes.len() {
            return Err(Error::UnknownAxis(format!(
                "grid has {} axes, field has {}",
                grid.axes().len(),
                self.axes.len()
            )));
        }
        for (g, f) in grid.axes().iter().zip(&self.axes) {
            if g.0 != f.name {
                return Err(Error::UnknownAxis(format!(
                    "grid axis `{}` vs field axis `{}`",
                    g.0, f.name
                )));
            }
        }
        Ok(())
    }

    /// Parameters in canonical order: every axis net in order, then the
    /// Gaussian `tau` and the per-axis `mu`s.
    pub fn param_tensors(&self) -> Vec<&Tensor<T>> {
        let mut v: Vec<&Tensor<T>> = self
            .axes
            .iter()
            .flat_map(|a| a.net.param_tensors())
            .collect();
        if let Some(g) = &self.gaussian {
            v.push(&g.tau);
            v.extend(g.mu.iter());
        }
        v
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v: Vec<&mut Tensor<T>> = self
            .axes
            .iter_mut()
            .flat_map(|a| a.net.param_tensors_mut())
            .collect();
        if let Some(g) = &mut self.gaussian {
            v.push(&mut g.tau);
            v.extend(g.mu.iter_mut());
        }
        v
    }

    /// Register all parameters on a tape (same order as `param_tensors`).
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<FieldGraph<T>> {
        self.check_nets()?;
        let axes: Vec<AxisNetGraph<T>> = self.axes.iter().map(|a| a.net.bind(tape)).collect();
        let gaussian = self.gaussian.as_ref().map(|g| GaussianGraph {
            tau: tape.param(g.tau.clone()),
            mu: g.mu.iter().map(|m| tape.param(m.clone())).collect(),
            axes: g.axes.clone(),
        });
        Ok(FieldGraph {
            axes,
            rank: self.rank,
            channels: self.channels,
            gaussian,
        })
    }

    /// Materialize all channels on a rectilinear grid. Each axis net runs
    /// exactly once on its coordinate vector.
    pub fn eval_grid(&self, grid: &GridBatch<T>) -> Result<Vec<Tensor<T>>> {
        self.check_grid(grid)?;
        let mut tape = Tape::new();
        let graph = self.bind(&mut tape)?;
        let coords = graph.grid_inputs(&mut tape, grid);
        let out = graph.eval_channels(&mut tape, &coords)?;
        Ok(out.into_iter().map(|id| tape.value(id).clone()).collect())
    }

    /// Per-channel derivative of the field along one axis, on a grid.
    pub fn axis_derivative(&self, grid: &GridBatch<T>, axis: &str) -> Result<Vec<Tensor<T>>> {
        let ax = self.axis_index(axis)?;
        self.check_grid(grid)?;
        let mut tape = Tape::new();
        let graph = self.bind(&mut tape)?;
        let coords = graph.grid_inputs(&mut tape, grid);
        let out = graph.eval_channels(&mut tape, &coords)?;
        let tangents = tape.axis_tangent(&out, coords[ax])?;
        Ok(tangents.into_iter().map(|id| tape.value(id).clone()).collect())
    }
}

struct GaussianGraph {
    tau: NodeId,
    mu: Vec<NodeId>,
    axes: Vec<usize>,
}

impl GaussianGraph {
    fn position(&self, axis: usize) -> Option<usize> {
        self.axes.iter().position(|&a| a == axis)
    }
}

/// Tape-bound view of a [`SeparableField`].
pub struct FieldGraph<T: Real> {
    axes: Vec<AxisNetGraph<T>>,
    rank: usize,
    channels: usize,
    gaussian: Option<GaussianGraph>,
}

impl<T: Real> FieldGraph<T> {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_axes(&self) -> usize {
        self.axes.len()
    }

    /// Register grid coordinate vectors as tape inputs.
    pub fn grid_inputs(&self, tape: &mut Tape<T>, grid: &GridBatch<T>) -> Vec<NodeId> {
        grid.axes()
            .iter()
            .map(|(_, c)| tape.input(Tensor::vector(c)))
            .collect()
    }

    /// `[n, R*C]` feature matrix of one axis at coordinate node `x`,
    /// Gaussian factor included.
    pub fn axis_features(&self, tape: &mut Tape<T>, axis: usize, x: NodeId) -> Result<NodeId> {
        let raw = self.axes[axis].forward(tape, x)?;
        let Some(g) = &self.gaussian else { return Ok(raw) };
        let Some(pos) = g.position(axis) else { return Ok(raw) };
        let n = tape.value(x).len();
        let factor = gaussian_factor_on(tape, x, g.mu[pos], g.tau)?;
        let col = tape.reshape(factor, &[n, 1])?;
        tape.mul(raw, col)
    }

    /// Features for every axis (one forward per axis).
    pub fn all_features(&self, tape: &mut Tape<T>, coords: &[NodeId]) -> Result<Vec<NodeId>> {
        if coords.len() != self.axes.len() {
            return Err(Error::UnknownAxis(format!(
                "{} coordinate vectors for {} axes",
                coords.len(),
                self.axes.len()
            )));
        }
        (0..self.axes.len())
            .map(|a| self.axis_features(tape, a, coords[a]))
            .collect()
    }

    /// Rank-R factor block of `features` for one channel.
    pub fn channel_factor(
        &self,
        tape: &mut Tape<T>,
        features: NodeId,
        channel: usize,
    ) -> Result<NodeId> {
        tape.slice_cols(features, channel * self.rank, self.rank)
    }

    /// Dense per-channel tensors on the grid spanned by `coords`.
    pub fn eval_channels(&self, tape: &mut Tape<T>, coords: &[NodeId]) -> Result<Vec<NodeId>> {
        let features = self.all_features(tape, coords)?;
        self.eval_channels_from_features(tape, &features)
    }

    pub fn eval_channels_from_features(
        &self,
        tape: &mut Tape<T>,
        features: &[NodeId],
    ) -> Result<Vec<NodeId>> {
        (0..self.channels)
            .map(|c| {
                let factors: Vec<NodeId> = features
                    .iter()
                    .map(|&f| self.channel_factor(tape, f, c))
                    .collect::<Result<_>>()?;
                tape.cp_contract(&factors)
            })
            .collect()
    }
}

/// `exp(-tau^2 (v - mu)^2 / 2)` as tape nodes, for a coordinate vector node.
pub fn gaussian_factor_on<T: Real>(
    tape: &mut Tape<T>,
    v: NodeId,
    mu: NodeId,
    tau: NodeId,
) -> Result<NodeId> {
    let d = tape.sub(v, mu)?;
    let d2 = tape.square(d)?;
    let tau2 = tape.square(tau)?;
    let prod = tape.mul(d2, tau2)?;
    let scaled = tape.scale(prod, T::lit(-0.5));
    Ok(tape.exp(scaled))
}

/// Plain evaluation of the Gaussian decay factor.
pub fn gaussian_factor<T: Real>(v: &[T], mu: T, tau: T) -> Vec<T> {
    v.iter()
        .map(|&x| {
            let d = x - mu;
            (-tau * tau * d * d * T::lit(0.5)).exp()
        })
        .collect()
}

/// CP combination of per-axis factor matrices `[n_a, R]` (one channel)
/// into the dense grid tensor.
pub fn cp_combine<T: Real>(factors: &[&Tensor<T>]) -> Result<Tensor<T>> {
    cp_dense(factors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{max_rel_err, rel_err};

    fn identity_net() -> AxisNet<f64> {
        let mut net = AxisNet::init(&[1, 1], 10.0, Activation::Sine, 0).unwrap();
        net.layers[0].weight = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        net.layers[0].bias = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        net
    }

    fn constant_net(c: f64) -> AxisNet<f64> {
        let mut net = AxisNet::init(&[1, 1], 10.0, Activation::Sine, 0).unwrap();
        net.layers[0].weight = Tensor::from_vec(&[1, 1], vec![0.0]).unwrap();
        net.layers[0].bias = Tensor::from_vec(&[1], vec![c]).unwrap();
        net
    }

    fn random_field(names: &[&str], rank: usize, channels: usize, seed: u64) -> SeparableField<f64> {
        SeparableField::init(names, &[12, 12], rank, channels, 10.0, Activation::Sine, &[], seed, 0)
            .unwrap()
    }

    /// Independent pointwise oracle: evaluate nets one point at a time and
    /// combine with explicit loops.
    fn pointwise_eval(field: &SeparableField<f64>, point: &[f64], channel: usize) -> f64 {
        let r = field.rank;
        let feats: Vec<Vec<f64>> = field
            .axes
            .iter()
            .zip(point)
            .enumerate()
            .map(|(ai, (axis, &x))| {
                let mut row = axis.net.forward_values(&[x]).unwrap().into_data();
                if let Some(g) = &field.gaussian {
                    if let Some(pos) = g.position(ai) {
                        let f = gaussian_factor(&[x], g.mu[pos].item(), g.tau.item())[0];
                        for v in &mut row {
                            *v *= f;
                        }
                    }
                }
                row
            })
            .collect();
        let mut sum = 0.0;
        for rr in 0..r {
            let mut prod = 1.0;
            for f in &feats {
                prod *= f[channel * r + rr];
            }
            sum += prod;
        }
        sum
    }

    #[test]
    fn cp_combine_spec_examples() {
        let f1 = Tensor::from_vec(&[1, 1], vec![2.0]).unwrap();
        let f2 = Tensor::from_vec(&[1, 1], vec![3.0]).unwrap();
        assert_eq!(cp_combine(&[&f1, &f2]).unwrap().data(), &[6.0]);

        let f1 = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let f2 = Tensor::from_vec(&[1, 2], vec![3.0, 4.0]).unwrap();
        assert_eq!(cp_combine(&[&f1, &f2]).unwrap().data(), &[11.0]);

        let bad = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(cp_combine(&[&f1, &bad]).is_err());
    }

    #[test]
    fn cp_combine_is_multilinear() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::from_fn(&[4, 3], |_| rng.gen_range(-1.0f64..1.0));
        let b = Tensor::from_fn(&[5, 3], |_| rng.gen_range(-1.0f64..1.0));
        let s = 2.5;
        let scaled = a.map(|x| x * s);
        let base = cp_combine(&[&a, &b]).unwrap();
        let out = cp_combine(&[&scaled, &b]).unwrap();
        let expect = base.map(|x| x * s);
        assert!(max_rel_err(out.data(), expect.data()) < 1e-12);
    }

    #[test]
    fn eval_grid_matches_pointwise_oracle() {
        let field = random_field(&["t", "x", "vx", "vy", "vz"], 4, 2, 17);
        let coords: Vec<(String, Vec<f64>)> = ["t", "x", "vx", "vy", "vz"]
            .iter()
            .enumerate()
            .map(|(i, n)| {
                (
                    n.to_string(),
                    (0..3).map(|j| 0.1 * (i as f64 + 1.0) * (j as f64 - 1.0)).collect(),
                )
            })
            .collect();
        let grid = GridBatch::new(coords.clone()).unwrap();
        let out = field.eval_grid(&grid).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].shape(), &[3, 3, 3, 3, 3]);
        for c in 0..2 {
            for flat in 0..out[c].len() {
                let mut rem = flat;
                let mut idx = [0usize; 5];
                for d in (0..5).rev() {
                    idx[d] = rem % 3;
                    rem /= 3;
                }
                let point: Vec<f64> = idx.iter().enumerate().map(|(d, &i)| coords[d].1[i]).collect();
                let expect = pointwise_eval(&field, &point, c);
                let got = out[c].data()[flat];
                assert!(
                    rel_err(got, expect) <= 1e-12,
                    "channel {c} at {point:?}: {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn eval_grid_respects_gaussian_factor() {
        let field = SeparableField::init(
            &["t", "vx"],
            &[8],
            3,
            1,
            10.0,
            Activation::Sine,
            &["vx"],
            5,
            0,
        )
        .unwrap();
        let grid = GridBatch::new(vec![
            ("t".into(), vec![0.3]),
            ("vx".into(), vec![-0.7, 0.4]),
        ])
        .unwrap();
        let out = field.eval_grid(&grid).unwrap();
        for (k, &v) in out[0].data().iter().enumerate() {
            let point = [0.3, grid.axes()[1].1[k]];
            let expect = pointwise_eval(&field, &point, 0);
            assert!(rel_err(v, expect) <= 1e-12);
        }
        // decay: far velocity values are crushed toward zero
        let far = GridBatch::new(vec![("t".into(), vec![0.3]), ("vx".into(), vec![50.0])]).unwrap();
        let fv = field.eval_grid(&far).unwrap()[0].data()[0];
        assert!(fv.abs() < 1e-300, "expected decay, got {fv}");
    }

    #[test]
    fn permuting_axis_points_permutes_that_dimension() {
        let field = random_field(&["t", "x"], 3, 1, 23);
        let grid = GridBatch::new(vec![
            ("t".into(), vec![0.1, 0.2]),
            ("x".into(), vec![-0.4, 0.0, 0.4]),
        ])
        .unwrap();
        let permuted = GridBatch::new(vec![
            ("t".into(), vec![0.1, 0.2]),
            ("x".into(), vec![0.4, -0.4, 0.0]),
        ])
        .unwrap();
        let a = field.eval_grid(&grid).unwrap();
        let b = field.eval_grid(&permuted).unwrap();
        let perm = [2usize, 0, 1]; // position in original for each new column
        for t in 0..2 {
            for (new_col, &old_col) in perm.iter().enumerate() {
                assert_eq!(b[0].data()[t * 3 + new_col], a[0].data()[t * 3 + old_col]);
            }
        }
    }

    #[test]
    fn gaussian_factor_closed_forms() {
        assert_eq!(gaussian_factor(&[1.5], 1.5, 0.7)[0], 1.0);
        assert_eq!(gaussian_factor(&[3.0, -2.0], 0.5, 0.0), vec![1.0, 1.0]);
        let v = gaussian_factor(&[2.0], 0.0, 1.0)[0];
        assert!(rel_err(v, (-2.0f64).exp()) < 1e-15);
    }

    #[test]
    fn axis_derivative_of_product_field() {
        // rank-1 field t*x: d/dx at (t=2, x=3) is 2
        let field = SeparableField {
            axes: vec![
                FieldAxis { name: "t".into(), net: identity_net() },
                FieldAxis { name: "x".into(), net: identity_net() },
            ],
            rank: 1,
            channels: 1,
            gaussian: None,
        };
        let grid = GridBatch::new(vec![("t".into(), vec![2.0]), ("x".into(), vec![3.0])]).unwrap();
        let d = field.axis_derivative(&grid, "x").unwrap();
        assert!((d[0].data()[0] - 2.0).abs() < 1e-14);
        let dt = field.axis_derivative(&grid, "t").unwrap();
        assert!((dt[0].data()[0] - 3.0).abs() < 1e-14);
        assert!(field.axis_derivative(&grid, "y").is_err());
    }

    #[test]
    fn axis_derivative_of_constant_channel_is_zero() {
        let field = SeparableField {
            axes: vec![
                FieldAxis { name: "t".into(), net: constant_net(4.0) },
                FieldAxis { name: "x".into(), net: constant_net(0.5) },
            ],
            rank: 1,
            channels: 1,
            gaussian: None,
        };
        let grid =
            GridBatch::new(vec![("t".into(), vec![0.2, 0.7]), ("x".into(), vec![0.1])]).unwrap();
        let d = field.axis_derivative(&grid, "x").unwrap();
        assert!(d[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn axis_derivative_matches_finite_differences() {
        let field = SeparableField::init(
            &["t", "x", "vx"],
            &[10, 10],
            4,
            1,
            10.0,
            Activation::Sine,
            &["vx"],
            31,
            0,
        )
        .unwrap();
        let t = vec![0.05, 0.09];
        let x = vec![-0.3, 0.2, 0.4];
        let vx = vec![-1.0, 0.5];
        let grid = GridBatch::new(vec![
            ("t".into(), t.clone()),
            ("x".into(), x.clone()),
            ("vx".into(), vx.clone()),
        ])
        .unwrap();
        for (axis, coords) in [("t", &t), ("x", &x), ("vx", &vx)] {
            let d = field.axis_derivative(&grid, axis).unwrap();
            let h = 1e-4;
            let shift = |delta: f64| {
                let axes = vec![
                    ("t".into(), if axis == "t" { t.iter().map(|v| v + delta).collect() } else { t.clone() }),
                    ("x".into(), if axis == "x" { x.iter().map(|v| v + delta).collect() } else { x.clone() }),
                    ("vx".into(), if axis == "vx" { vx.iter().map(|v| v + delta).collect() } else { vx.clone() }),
                ];
                field.eval_grid(&GridBatch::new(axes).unwrap()).unwrap()
            };
            let plus = shift(h);
            let minus = shift(-h);
            let _ = coords;
            for i in 0..d[0].len() {
                let fd = (plus[0].data()[i] - minus[0].data()[i]) / (2.0 * h);
                assert!(
                    rel_err(d[0].data()[i], fd) <= 1e-5,
                    "axis {axis} elem {i}: {} vs fd {fd}",
                    d[0].data()[i]
                );
            }
        }
    }
}
