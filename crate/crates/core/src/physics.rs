//! Kinetic physics: Maxwellian distribution, macroscopic moments, and the
//! BGK residual.
//!
//! The model density is split into an equilibrium part and a correction:
//! `f = M[rho, u, T] + alpha * f_neq`, where `(rho, u, T)` come from a
//! separable field over `(t, x)` (5 channels, positivity enforced by
//! softplus on the density and temperature channels) and `f_neq` is a
//! separable field over `(t, x, v)` with Gaussian decay factors on the
//! velocity axes.
//!
//! Moments of the equilibrium part are closed-form; moments of the
//! correction contract each velocity axis down to an R-vector of 1-D
//! quadratures before the cross-axis combination, which costs
//! `O(3 R N_v)` instead of the `O(N_v^3)` dense route. The dense route is
//! kept as an oracle and benchmark baseline.

use crate::error::{Error, Result};
use crate::field::{FieldGraph, GridBatch, SeparableField};
use crate::net::Activation;
use crate::scalar::Real;
use crate::tape::{NodeId, Tape};
use crate::tensor::{cp_dense, Tensor};

/// Velocity-space truncation `(-V, V)` per axis with trapezoid nodes.
#[derive(Clone, Debug)]
pub struct QuadAxis<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct QuadratureGrid<T> {
    pub axes: [QuadAxis<T>; 3],
}

impl<T: Real> QuadratureGrid<T> {
    /// Symmetric trapezoid rule with `n` nodes per axis on `(-vmax, vmax)`.
    pub fn trapezoid(vmax: T, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidValue("need at least 2 quadrature nodes".into()));
        }
        if vmax <= T::zero() {
            return Err(Error::InvalidValue("velocity truncation must be positive".into()));
        }
        let h = (vmax + vmax) / T::from_count(n - 1);
        let nodes: Vec<T> = (0..n).map(|i| -vmax + h * T::from_count(i)).collect();
        let mut weights = vec![h; n];
        weights[0] = h * T::lit(0.5);
        weights[n - 1] = h * T::lit(0.5);
        let axis = QuadAxis { nodes, weights };
        Ok(Self { axes: [axis.clone(), axis.clone(), axis] })
    }

    pub fn len(&self) -> usize {
        self.axes[0].nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axes[0].nodes.is_empty()
    }
}

/// Macroscopic state sampled on a grid. `temp_valid` flags entries where
/// the temperature came out positive.
#[derive(Clone, Debug)]
pub struct MacroState<T> {
    pub rho: Tensor<T>,
    pub u: [Tensor<T>; 3],
    pub temp: Tensor<T>,
    pub temp_valid: Vec<bool>,
}

/// Moments `(m0, m1, trace m2)` wanted by the macro conversion.
#[derive(Clone, Debug)]
pub struct MomentSet<T> {
    pub m0: Tensor<T>,
    pub m1: [Tensor<T>; 3],
    pub m2_trace: Tensor<T>,
}

/// `(rho, u, T)` sampled on a space-time grid — the common currency
/// between the neural model and the reference solver. Tensors are shaped
/// `[n_t, n_x(, n_y)]`.
#[derive(Clone, Debug)]
pub struct MomentField<T> {
    pub times: Vec<T>,
    pub space: Vec<Vec<T>>,
    pub rho: Tensor<T>,
    pub u: [Tensor<T>; 3],
    pub temp: Tensor<T>,
}

impl<T: Real> MomentField<T> {
    pub fn grid_shape(&self) -> Vec<usize> {
        let mut s = vec![self.times.len()];
        s.extend(self.space.iter().map(|c| c.len()));
        s
    }

    pub fn spatial_len(&self) -> usize {
        self.space.iter().map(|c| c.len()).product()
    }
}

/// Pointwise Maxwellian `rho / (2 pi T)^{3/2} * exp(-|v-u|^2 / (2T))`.
pub fn maxwellian<T: Real>(rho: T, u: [T; 3], temp: T, v: [T; 3]) -> Result<T> {
    if rho <= T::zero() || temp <= T::zero() {
        return Err(Error::InvalidValue(format!(
            "maxwellian needs rho > 0 and T > 0, got rho={rho}, T={temp}"
        )));
    }
    Ok(maxwellian_unchecked(rho, u, temp, v))
}

pub(crate) fn maxwellian_unchecked<T: Real>(rho: T, u: [T; 3], temp: T, v: [T; 3]) -> T {
    let two_pi_t = T::lit(2.0) * T::PI() * temp;
    let pref = rho / (two_pi_t * two_pi_t * two_pi_t).sqrt();
    let mut q = T::zero();
    for p in 0..3 {
        let d = v[p] - u[p];
        q += d * d;
    }
    pref * (-q / (T::lit(2.0) * temp)).exp()
}

/// Closed-form moments of the Maxwellian: `(rho, rho*u, rho*(3T + |u|^2))`.
pub fn equilibrium_moments<T: Real>(rho: T, u: [T; 3], temp: T) -> Result<(T, [T; 3], T)> {
    if rho <= T::zero() || temp <= T::zero() {
        return Err(Error::InvalidValue(format!(
            "equilibrium moments need rho > 0 and T > 0, got rho={rho}, T={temp}"
        )));
    }
    let usq = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
    Ok((rho, [rho * u[0], rho * u[1], rho * u[2]], rho * (T::lit(3.0) * temp + usq)))
}

/// Invert moments to `(rho, u, T)`. Errors when `m0 <= 0`; non-positive
/// temperatures are kept but flagged in the validity mask.
pub fn moments_to_macro<T: Real>(moments: &MomentSet<T>) -> Result<MacroState<T>> {
    let shape = moments.m0.shape().to_vec();
    for t in moments.m1.iter().chain([&moments.m2_trace]) {
        if t.shape() != shape {
            return Err(Error::ShapeMismatch("moment grids differ".into()));
        }
    }
    if moments.m0.data().iter().any(|&v| v <= T::zero()) {
        return Err(Error::InvalidValue("non-positive density moment".into()));
    }
    let rho = moments.m0.clone();
    let u: [Tensor<T>; 3] = std::array::from_fn(|p| {
        moments.m1[p].zip(&rho, |m, r| m / r).expect("same shape")
    });
    let mut temp = Tensor::zeros(&shape);
    let mut valid = vec![true; rho.len()];
    let third = T::lit(1.0 / 3.0);
    for i in 0..rho.len() {
        let usq = (0..3).map(|p| u[p].data()[i] * u[p].data()[i]).fold(T::zero(), |a, b| a + b);
        let t = (moments.m2_trace.data()[i] / rho.data()[i] - usq) * third;
        temp.data_mut()[i] = t;
        valid[i] = t > T::zero();
    }
    Ok(MacroState { rho, u, temp, temp_valid: valid })
}

/// Moment powers `(i, j, k)` for `integral f v_x^i v_y^j v_z^k dv`,
/// restricted to total degree <= 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MomentPowers {
    pub i: u32,
    pub j: u32,
    pub k: u32,
}

impl MomentPowers {
    pub fn new(i: u32, j: u32, k: u32) -> Result<Self> {
        if i + j + k > 2 {
            return Err(Error::UnsupportedPowers(i, j, k));
        }
        Ok(Self { i, j, k })
    }

    pub fn density() -> Self {
        Self { i: 0, j: 0, k: 0 }
    }

    pub fn velocity(p: usize) -> Self {
        match p {
            0 => Self { i: 1, j: 0, k: 0 },
            1 => Self { i: 0, j: 1, k: 0 },
            2 => Self { i: 0, j: 0, k: 1 },
            _ => unreachable!("velocity component index"),
        }
    }

    fn per_axis(&self) -> [u32; 3] {
        [self.i, self.j, self.k]
    }
}

fn weighted_power_row<T: Real>(axis: &QuadAxis<T>, power: u32) -> Tensor<T> {
    let row: Vec<T> = axis
        .nodes
        .iter()
        .zip(&axis.weights)
        .map(|(&v, &w)| {
            let mut p = T::one();
            for _ in 0..power {
                p *= v;
            }
            w * p
        })
        .collect();
    Tensor::from_vec(&[1, row.len()], row).expect("row shape")
}

/// Moment of a separable field over `(t, x.., v)` axes: every velocity
/// axis is reduced to an R-vector of weighted 1-D sums before the
/// cross-axis combination.
pub fn separable_moments<T: Real>(
    field: &SeparableField<T>,
    t_x_grid: &GridBatch<T>,
    quad: &QuadratureGrid<T>,
    powers: MomentPowers,
) -> Result<Tensor<T>> {
    check_moment_field(field, t_x_grid)?;
    let mut tape = Tape::new();
    let graph = field.bind(&mut tape)?;
    let tx_nodes: Vec<NodeId> = t_x_grid
        .axes()
        .iter()
        .map(|(_, c)| tape.input(Tensor::vector(c)))
        .collect();
    let out = separable_moments_on(&mut tape, &graph, &tx_nodes, quad, powers)?;
    Ok(tape.value(out).clone())
}

fn check_moment_field<T: Real>(field: &SeparableField<T>, t_x_grid: &GridBatch<T>) -> Result<()> {
    if field.channels != 1 {
        return Err(Error::InvalidValue(
            "moment integration expects a single-channel field".into(),
        ));
    }
    if field.axes.len() != t_x_grid.axes().len() + 3 {
        return Err(Error::UnknownAxis(format!(
            "field has {} axes; grid covers {}, velocity needs 3",
            field.axes.len(),
            t_x_grid.axes().len()
        )));
    }
    match &field.gaussian {
        Some(g) => {
            let nt = t_x_grid.axes().len();
            let want: Vec<usize> = (nt..nt + 3).collect();
            if g.axes != want {
                return Err(Error::InvalidValue(
                    "Gaussian factors must sit on the three velocity axes".into(),
                ));
            }
        }
        None => {
            return Err(Error::InvalidValue(
                "moment integration expects Gaussian decay factors on velocity axes".into(),
            ))
        }
    }
    Ok(())
}

/// Tape-level separable moment: returns a node shaped like the `(t, x)`
/// grid. `tx_nodes` are the space-time coordinate nodes; quadrature nodes
/// enter as constants.
pub fn separable_moments_on<T: Real>(
    tape: &mut Tape<T>,
    graph: &FieldGraph<T>,
    tx_nodes: &[NodeId],
    quad: &QuadratureGrid<T>,
    powers: MomentPowers,
) -> Result<NodeId> {
    let n_tx = tx_nodes.len();
    let mut factors = Vec::with_capacity(n_tx + 3);
    for (a, &node) in tx_nodes.iter().enumerate() {
        let feat = graph.axis_features(tape, a, node)?;
        factors.push(graph.channel_factor(tape, feat, 0)?);
    }
    let pw = powers.per_axis();
    for p in 0..3 {
        let vnode = tape.constant(Tensor::vector(&quad.axes[p].nodes));
        let feat = graph.axis_features(tape, n_tx + p, vnode)?;
        let feat = graph.channel_factor(tape, feat, 0)?;
        let row = tape.constant(weighted_power_row(&quad.axes[p], pw[p]));
        factors.push(tape.matmul(row, feat)?); // [1, R]
    }
    let combined = tape.cp_contract(&factors)?;
    let tx_shape: Vec<usize> = tx_nodes.iter().map(|&n| tape.value(n).len()).collect();
    tape.reshape(combined, &tx_shape)
}

/// Dense-route moment: materialize the field on the full
/// `(t, x, v^3)` tensor, then contract against the quadrature weights.
/// Refuses tensors above `element_budget`.
pub fn dense_moments<T: Real>(
    field: &SeparableField<T>,
    t_x_grid: &GridBatch<T>,
    quad: &QuadratureGrid<T>,
    powers: MomentPowers,
    element_budget: usize,
) -> Result<Tensor<T>> {
    check_moment_field(field, t_x_grid)?;
    let nv = quad.len();
    let tx_shape = t_x_grid.shape();
    let tx_len: usize = tx_shape.iter().product();
    let total = tx_len * nv * nv * nv;
    if total > element_budget {
        return Err(Error::ResourceGuard(format!(
            "dense moment tensor needs {total} elements, budget is {element_budget}"
        )));
    }
    // per-axis features, Gaussian applied, channel 0
    let mut factors: Vec<Tensor<T>> = Vec::new();
    for (a, (_, coords)) in t_x_grid.axes().iter().enumerate() {
        factors.push(plain_axis_features(field, a, coords)?);
    }
    let n_tx = t_x_grid.axes().len();
    for p in 0..3 {
        factors.push(plain_axis_features(field, n_tx + p, &quad.axes[p].nodes)?);
    }
    let refs: Vec<&Tensor<T>> = factors.iter().collect();
    let full = cp_dense(&refs)?;
    // flat velocity weight block w_i w_j w_k * vx^i vy^j vz^k
    let pw = powers.per_axis();
    let mut wblock = vec![T::zero(); nv * nv * nv];
    let wx = weighted_power_row(&quad.axes[0], pw[0]).into_data();
    let wy = weighted_power_row(&quad.axes[1], pw[1]).into_data();
    let wz = weighted_power_row(&quad.axes[2], pw[2]).into_data();
    for i in 0..nv {
        for j in 0..nv {
            let base = (i * nv + j) * nv;
            let wij = wx[i] * wy[j];
            for k in 0..nv {
                wblock[base + k] = wij * wz[k];
            }
        }
    }
    let mut out = vec![T::zero(); tx_len];
    for (cell, slab) in full.data().chunks(nv * nv * nv).enumerate() {
        let mut s = T::zero();
        for (&f, &w) in slab.iter().zip(&wblock) {
            s += f * w;
        }
        out[cell] = s;
    }
    Tensor::from_vec(&tx_shape, out)
}

fn plain_axis_features<T: Real>(
    field: &SeparableField<T>,
    axis: usize,
    coords: &[T],
) -> Result<Tensor<T>> {
    let mut feat = field.axes[axis].net.forward_values(coords)?;
    if let Some(g) = &field.gaussian {
        if let Some(pos) = g.axes.iter().position(|&a| a == axis) {
            let fac = crate::field::gaussian_factor(coords, g.mu[pos].item(), g.tau.item());
            let cols = feat.shape()[1];
            for (row, f) in fac.iter().enumerate() {
                for v in &mut feat.data_mut()[row * cols..(row + 1) * cols] {
                    *v *= *f;
                }
            }
        }
    }
    if field.channels == 1 {
        Ok(feat)
    } else {
        feat.slice_cols(0, field.rank)
    }
}

/// Sum of the three diagonal second moments of a separable field.
pub fn separable_second_trace<T: Real>(
    field: &SeparableField<T>,
    t_x_grid: &GridBatch<T>,
    quad: &QuadratureGrid<T>,
) -> Result<Tensor<T>> {
    let mut acc = separable_moments(field, t_x_grid, quad, MomentPowers::new(2, 0, 0)?)?;
    for pw in [MomentPowers::new(0, 2, 0)?, MomentPowers::new(0, 0, 2)?] {
        let m = separable_moments(field, t_x_grid, quad, pw)?;
        acc = acc.zip(&m, |a, b| a + b)?;
    }
    Ok(acc)
}

/// Reference quadrature of an arbitrary pointwise density over the full
/// velocity tensor. Used as the dense oracle in tests and diagnostics.
pub fn quadrature_moment<T: Real>(
    f: impl Fn([T; 3]) -> T,
    quad: &QuadratureGrid<T>,
    powers: MomentPowers,
) -> T {
    let pw = powers.per_axis();
    let pow = |v: T, p: u32| {
        let mut acc = T::one();
        for _ in 0..p {
            acc *= v;
        }
        acc
    };
    let mut total = T::zero();
    for (&vx, &wx) in quad.axes[0].nodes.iter().zip(&quad.axes[0].weights) {
        let px = wx * pow(vx, pw[0]);
        for (&vy, &wy) in quad.axes[1].nodes.iter().zip(&quad.axes[1].weights) {
            let py = wy * pow(vy, pw[1]);
            let mut row = T::zero();
            for (&vz, &wz) in quad.axes[2].nodes.iter().zip(&quad.axes[2].weights) {
                row += wz * pow(vz, pw[2]) * f([vx, vy, vz]);
            }
            total += px * py * row;
        }
    }
    total
}

// ---------------------------------------------------------------------
// Kinetic model
// ---------------------------------------------------------------------

/// Equilibrium/non-equilibrium split model with learnable Gaussian decay.
#[derive(Clone, Debug)]
pub struct KineticModel<T: Real> {
    pub eq: SeparableField<T>,
    pub neq: SeparableField<T>,
    pub alpha: T,
}

pub const EQ_CHANNELS: usize = 5;

/// Axis names for a `dim`-dimensional problem: `t, x[, y, z]`.
pub fn space_time_axes(dim: usize) -> Vec<&'static str> {
    let mut names = vec!["t"];
    names.extend_from_slice(&["x", "y", "z"][..dim]);
    names
}

pub const VELOCITY_AXES: [&str; 3] = ["vx", "vy", "vz"];

impl<T: Real> KineticModel<T> {
    /// Fresh model for a `dim`-dimensional problem. The equilibrium field
    /// spans `(t, x)` with 5 channels (raw density, velocity, raw
    /// temperature); the correction field spans `(t, x, v)` with Gaussian
    /// factors on the velocity axes.
    pub fn init(dim: usize, hidden: &[usize], rank: usize, w0: T, seed: u64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidValue(format!("spatial dimension {dim}")));
        }
        let mut tx = space_time_axes(dim);
        let eq = SeparableField::init(
            &tx,
            hidden,
            rank,
            EQ_CHANNELS,
            w0,
            Activation::Sine,
            &[],
            seed,
            0,
        )?;
        let mut all = Vec::new();
        all.append(&mut tx);
        all.extend_from_slice(&VELOCITY_AXES);
        let neq = SeparableField::init(
            &all,
            hidden,
            rank,
            1,
            w0,
            Activation::Sine,
            &VELOCITY_AXES,
            seed,
            100,
        )?;
        Ok(Self { eq, neq, alpha: T::one() })
    }

    pub fn dim(&self) -> usize {
        self.eq.axes.len() - 1
    }

    /// Model whose density is exactly the constant-in-(t,x) Maxwellian
    /// `M[rho, u, temp]` with zero correction. Useful as a steady-state
    /// diagnostic: the BGK residual of this model vanishes.
    pub fn constant_maxwellian(
        dim: usize,
        hidden: &[usize],
        rank: usize,
        w0: T,
        seed: u64,
        rho: T,
        u: [T; 3],
        temp: T,
    ) -> Result<Self> {
        if rho <= T::zero() || temp <= T::zero() {
            return Err(Error::InvalidValue("need rho > 0 and T > 0".into()));
        }
        let mut model = Self::init(dim, hidden, rank, w0, seed)?;
        let raw = [softplus_inv(rho), u[0], u[1], u[2], softplus_inv(temp)];
        for (ai, axis) in model.eq.axes.iter_mut().enumerate() {
            let last = axis.net.layers.last_mut().unwrap();
            last.weight = Tensor::zeros(last.weight.shape());
            let mut bias = Tensor::zeros(last.bias.shape());
            for (c, &r) in raw.iter().enumerate() {
                bias.data_mut()[c * rank] = if ai == 0 { r } else { T::one() };
            }
            last.bias = bias;
        }
        for axis in model.neq.axes.iter_mut() {
            let last = axis.net.layers.last_mut().unwrap();
            last.weight = Tensor::zeros(last.weight.shape());
            last.bias = Tensor::zeros(last.bias.shape());
        }
        Ok(model)
    }

    /// Parameters in canonical order: equilibrium field, then correction.
    pub fn param_tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = self.eq.param_tensors();
        v.extend(self.neq.param_tensors());
        v
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.eq.param_tensors_mut();
        v.extend(self.neq.param_tensors_mut());
        v
    }

    pub fn param_count(&self) -> usize {
        self.param_tensors().iter().map(|t| t.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Result<ModelGraph<T>> {
        Ok(ModelGraph {
            eq: self.eq.bind(tape)?,
            neq: self.neq.bind(tape)?,
            alpha: self.alpha,
            dim: self.dim(),
        })
    }

    /// Macroscopic moments of the model on a space-time grid:
    /// closed-form equilibrium moments plus `alpha` times the separable
    /// quadrature of the correction.
    pub fn model_moments(
        &self,
        t_x_grid: &GridBatch<T>,
        quad: &QuadratureGrid<T>,
    ) -> Result<MacroState<T>> {
        let mut tape = Tape::new();
        let graph = self.bind(&mut tape)?;
        let tx: Vec<NodeId> = t_x_grid
            .axes()
            .iter()
            .map(|(_, c)| tape.input(Tensor::vector(c)))
            .collect();
        let m = graph.moments_on(&mut tape, &tx, quad)?;
        let set = MomentSet {
            m0: tape.value(m.m0).clone(),
            m1: std::array::from_fn(|p| tape.value(m.m1[p]).clone()),
            m2_trace: tape.value(m.m2_trace).clone(),
        };
        moments_to_macro(&set)
    }

    /// BGK residual on a tensor-product collocation batch
    /// (axes `t, x[, y, z], vx, vy, vz`). The relaxation Maxwellian uses
    /// moments computed on `quad`, evaluated at the batch velocities.
    pub fn bgk_residual(
        &self,
        batch: &GridBatch<T>,
        quad: &QuadratureGrid<T>,
        kn: T,
    ) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let graph = self.bind(&mut tape)?;
        let coords: Vec<NodeId> = batch
            .axes()
            .iter()
            .map(|(_, c)| tape.input(Tensor::vector(c)))
            .collect();
        let res = graph.residual_on(&mut tape, &coords, quad, kn)?;
        Ok(tape.value(res.residual).clone())
    }

    /// Model density values on a full `(t, x, v)` grid.
    pub fn density_grid(&self, batch: &GridBatch<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let graph = self.bind(&mut tape)?;
        let coords: Vec<NodeId> = batch
            .axes()
            .iter()
            .map(|(_, c)| tape.input(Tensor::vector(c)))
            .collect();
        let f = graph.density_on(&mut tape, &coords)?;
        Ok(tape.value(f).clone())
    }
}

/// Inverse of the softplus positivity transform.
pub fn softplus_inv<T: Real>(y: T) -> T {
    ((-y).exp().neg().ln_1p()) + y
}

/// Macroscopic moment nodes on a space-time grid.
pub struct MacroNodes {
    pub m0: NodeId,
    pub m1: [NodeId; 3],
    pub m2_trace: NodeId,
    pub rho: NodeId,
    pub u: [NodeId; 3],
    pub temp: NodeId,
}

pub struct ResidualNodes {
    pub residual: NodeId,
    /// model density at the batch points (weighting uses it)
    pub density: NodeId,
}

/// Tape-bound kinetic model.
pub struct ModelGraph<T: Real> {
    pub eq: FieldGraph<T>,
    pub neq: FieldGraph<T>,
    pub alpha: T,
    dim: usize,
}

impl<T: Real> ModelGraph<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Equilibrium channels `(rho, u, T)` on the space-time grid, with the
    /// positivity transform applied.
    pub fn eq_macro(&self, tape: &mut Tape<T>, tx_nodes: &[NodeId]) -> Result<(NodeId, [NodeId; 3], NodeId)> {
        let ch = self.eq.eval_channels(tape, tx_nodes)?;
        let rho = tape.softplus(ch[0]);
        let u = [ch[1], ch[2], ch[3]];
        let temp = tape.softplus(ch[4]);
        Ok((rho, u, temp))
    }

    /// Maxwellian tensor `M[rho,u,T](v)` on the product of the space-time
    /// grid (shape of `rho`) and the velocity vectors. Factored per axis:
    /// only the final products touch full-size tensors.
    pub fn maxwellian_on(
        &self,
        tape: &mut Tape<T>,
        rho: NodeId,
        u: &[NodeId; 3],
        temp: NodeId,
        v_nodes: &[NodeId; 3],
    ) -> Result<NodeId> {
        let tx_shape = tape.shape(rho).to_vec();
        let nd = tx_shape.len() + 3;
        let mut pad = tx_shape.clone();
        pad.extend([1, 1, 1]);
        let rho_p = tape.reshape(rho, &pad)?;
        let temp_p = tape.reshape(temp, &pad)?;
        let two_pi_t = tape.scale(temp_p, T::lit(2.0) * T::PI());
        let sq = tape.mul(two_pi_t, two_pi_t)?;
        let cube = tape.mul(sq, two_pi_t)?;
        let root = tape.sqrt(cube);
        let inv_root = tape.recip(root);
        let pref = tape.mul(rho_p, inv_root)?;
        let twot = tape.scale(temp_p, T::lit(2.0));
        let inv2t = tape.recip(twot);
        let mut m = pref;
        for p in 0..3 {
            let nv = tape.value(v_nodes[p]).len();
            let mut vshape = vec![1usize; nd];
            vshape[tx_shape.len() + p] = nv;
            let v_p = tape.reshape(v_nodes[p], &vshape)?;
            let u_p = tape.reshape(u[p], &pad)?;
            let d = tape.sub(v_p, u_p)?;
            let d2 = tape.square(d)?;
            let arg = tape.mul(d2, inv2t)?;
            let neg = tape.neg(arg);
            let e = tape.exp(neg);
            m = tape.mul(m, e)?;
        }
        Ok(m)
    }

    /// Model density `f = M[eq] + alpha * f_neq` on the tensor grid
    /// spanned by `coords = (t, x.., vx, vy, vz)`.
    pub fn density_on(&self, tape: &mut Tape<T>, coords: &[NodeId]) -> Result<NodeId> {
        let n_tx = self.dim + 1;
        if coords.len() != n_tx + 3 {
            return Err(Error::UnknownAxis(format!(
                "expected {} coordinate vectors, got {}",
                n_tx + 3,
                coords.len()
            )));
        }
        let tx = &coords[..n_tx];
        let v: [NodeId; 3] = [coords[n_tx], coords[n_tx + 1], coords[n_tx + 2]];
        let (rho, u, temp) = self.eq_macro(tape, tx)?;
        let m = self.maxwellian_on(tape, rho, &u, temp, &v)?;
        let neq = self.neq.eval_channels(tape, coords)?[0];
        let scaled = tape.scale(neq, self.alpha);
        tape.add(m, scaled)
    }

    /// Moments of the model on a space-time grid: analytic equilibrium
    /// part plus separable quadrature of the correction.
    pub fn moments_on(
        &self,
        tape: &mut Tape<T>,
        tx_nodes: &[NodeId],
        quad: &QuadratureGrid<T>,
    ) -> Result<MacroNodes> {
        let (rho_eq, u_eq, temp_eq) = self.eq_macro(tape, tx_nodes)?;
        // analytic equilibrium moments
        let m0_eq = rho_eq;
        let m1_eq: [NodeId; 3] = [
            tape.mul(rho_eq, u_eq[0])?,
            tape.mul(rho_eq, u_eq[1])?,
            tape.mul(rho_eq, u_eq[2])?,
        ];
        let u0sq = tape.square(u_eq[0])?;
        let u1sq = tape.square(u_eq[1])?;
        let u2sq = tape.square(u_eq[2])?;
        let usum = tape.add(u0sq, u1sq)?;
        let usq_eq = tape.add(usum, u2sq)?;
        let three_t = tape.scale(temp_eq, T::lit(3.0));
        let inner = tape.add(three_t, usq_eq)?;
        let m2_eq = tape.mul(rho_eq, inner)?;

        // separable moments of the correction
        let m0_neq = separable_moments_on(tape, &self.neq, tx_nodes, quad, MomentPowers::density())?;
        let m1_neq: [NodeId; 3] = [
            separable_moments_on(tape, &self.neq, tx_nodes, quad, MomentPowers::velocity(0))?,
            separable_moments_on(tape, &self.neq, tx_nodes, quad, MomentPowers::velocity(1))?,
            separable_moments_on(tape, &self.neq, tx_nodes, quad, MomentPowers::velocity(2))?,
        ];
        let mxx = separable_moments_on(tape, &self.neq, tx_nodes, quad, MomentPowers::new(2, 0, 0)?)?;
        let myy = separable_moments_on(tape, &self.neq, tx_nodes, quad, MomentPowers::new(0, 2, 0)?)?;
        let mzz = separable_moments_on(tape, &self.neq, tx_nodes, quad, MomentPowers::new(0, 0, 2)?)?;
        let mxy = tape.add(mxx, myy)?;
        let m2_neq = tape.add(mxy, mzz)?;

        let a = self.alpha;
        let add_scaled = |tape: &mut Tape<T>, eq: NodeId, neq: NodeId| -> Result<NodeId> {
            let s = tape.scale(neq, a);
            tape.add(eq, s)
        };
        let m0 = add_scaled(tape, m0_eq, m0_neq)?;
        let m1 = [
            add_scaled(tape, m1_eq[0], m1_neq[0])?,
            add_scaled(tape, m1_eq[1], m1_neq[1])?,
            add_scaled(tape, m1_eq[2], m1_neq[2])?,
        ];
        let m2_trace = add_scaled(tape, m2_eq, m2_neq)?;

        // macro conversion
        let inv_m0 = tape.recip(m0);
        let u = [
            tape.mul(m1[0], inv_m0)?,
            tape.mul(m1[1], inv_m0)?,
            tape.mul(m1[2], inv_m0)?,
        ];
        let uu0 = tape.square(u[0])?;
        let uu1 = tape.square(u[1])?;
        let uu2 = tape.square(u[2])?;
        let us = tape.add(uu0, uu1)?;
        let usq = tape.add(us, uu2)?;
        let e = tape.mul(m2_trace, inv_m0)?;
        let neg_usq = tape.neg(usq);
        let diff = tape.add(e, neg_usq)?;
        let temp = tape.scale(diff, T::lit(1.0 / 3.0));
        Ok(MacroNodes { m0, m1, m2_trace, rho: m0, u, temp })
    }

    /// BGK residual `df/dt + v . grad_x f - (M[f] - f)/Kn` on the
    /// collocation grid. Everything stays parameter-differentiable.
    pub fn residual_on(
        &self,
        tape: &mut Tape<T>,
        coords: &[NodeId],
        quad: &QuadratureGrid<T>,
        kn: T,
    ) -> Result<ResidualNodes> {
        if kn <= T::zero() {
            return Err(Error::InvalidValue(format!("Knudsen number must be positive, got {kn}")));
        }
        let n_tx = self.dim + 1;
        let f = self.density_on(tape, coords)?;
        let full_shape = tape.shape(f).to_vec();
        let nd = full_shape.len();

        // transport: df/dt + sum_k v_k df/dx_k
        let mut transport = tape.axis_tangent(&[f], coords[0])?[0];
        for k in 0..self.dim {
            let dxk = tape.axis_tangent(&[f], coords[1 + k])?[0];
            let vnode = coords[n_tx + k];
            let nv = tape.value(vnode).len();
            let mut vshape = vec![1usize; nd];
            vshape[n_tx + k] = nv;
            let v = tape.reshape(vnode, &vshape)?;
            let term = tape.mul(v, dxk)?;
            transport = tape.add(transport, term)?;
        }

        // relaxation Maxwellian from quadrature moments
        let m = self.moments_on(tape, &coords[..n_tx], quad)?;
        let v: [NodeId; 3] = [coords[n_tx], coords[n_tx + 1], coords[n_tx + 2]];
        let m_relax = self.maxwellian_on(tape, m.rho, &m.u, m.temp, &v)?;
        let neg_m = tape.neg(m_relax);
        let f_minus_m = tape.add(f, neg_m)?;
        let relax = tape.scale(f_minus_m, T::one() / kn);
        let residual = tape.add(transport, relax)?;
        Ok(ResidualNodes { residual, density: f })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{max_rel_err, rel_err};

    fn random_moment_field(seed: u64, rank: usize, n_tx: usize) -> SeparableField<f64> {
        let names: Vec<&str> = ["t", "x", "y"][..n_tx]
            .iter()
            .copied()
            .chain(VELOCITY_AXES)
            .collect();
        SeparableField::init(&names, &[10, 10], rank, 1, 10.0, Activation::Sine, &VELOCITY_AXES, seed, 0)
            .unwrap()
    }

    fn tx_grid(nt: usize, nx: usize) -> GridBatch<f64> {
        GridBatch::new(vec![
            ("t".into(), (0..nt).map(|i| 0.01 + 0.08 * i as f64 / nt as f64).collect()),
            ("x".into(), (0..nx).map(|i| -0.4 + 0.8 * i as f64 / nx as f64).collect()),
        ])
        .unwrap()
    }

    #[test]
    fn trapezoid_invariants() {
        let q = QuadratureGrid::<f64>::trapezoid(10.0, 257).unwrap();
        for axis in &q.axes {
            let total: f64 = axis.weights.iter().sum();
            assert!(rel_err(total, 20.0) < 1e-12);
            assert!(axis.nodes.windows(2).all(|w| w[0] < w[1]));
        }
        assert!(QuadratureGrid::<f64>::trapezoid(10.0, 1).is_err());
    }

    #[test]
    fn maxwellian_closed_forms() {
        let m = maxwellian(1.0, [0.0; 3], 1.0, [0.0; 3]).unwrap();
        let expect = (2.0 * std::f64::consts::PI).powf(-1.5);
        assert!(rel_err(m, expect) < 1e-14);
        let m2 = maxwellian(2.0, [0.0; 3], 1.0, [0.0; 3]).unwrap();
        assert!(rel_err(m2, 2.0 * expect) < 1e-14);
        assert!(maxwellian(-1.0, [0.0; 3], 1.0, [0.0; 3]).is_err());
        assert!(maxwellian(1.0, [0.0; 3], 0.0, [0.0; 3]).is_err());
    }

    #[test]
    fn maxwellian_density_quadrature() {
        let quad = QuadratureGrid::<f64>::trapezoid(10.0, 257).unwrap();
        let (rho, u, temp) = (1.3, [0.2, -0.4, 0.1], 0.9);
        let got = quadrature_moment(
            |v| maxwellian_unchecked(rho, u, temp, v),
            &quad,
            MomentPowers::density(),
        );
        assert!(rel_err(got, rho) <= 1e-10, "quadrature rho {got}");
    }

    #[test]
    fn maxwellian_rotation_invariance() {
        let angle: f64 = 0.7;
        let (c, s) = (angle.cos(), angle.sin());
        let rot = |v: [f64; 3]| [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]];
        let u = [0.3, -0.2, 0.5];
        let v = [1.0, 0.4, -0.7];
        let a = maxwellian(1.1, u, 0.8, v).unwrap();
        let b = maxwellian(1.1, rot(u), 0.8, rot(v)).unwrap();
        assert!(rel_err(a, b) < 1e-14);
    }

    #[test]
    fn equilibrium_moment_closed_forms() {
        let (m0, m1, m2) = equilibrium_moments(1.0, [0.0; 3], 1.0).unwrap();
        assert_eq!((m0, m1, m2), (1.0, [0.0; 3], 3.0));
        let (m0, m1, m2) = equilibrium_moments(2.0, [1.0, 0.0, 0.0], 0.5).unwrap();
        assert_eq!((m0, m1, m2), (2.0, [2.0, 0.0, 0.0], 5.0));
    }

    #[test]
    fn equilibrium_moments_match_quadrature() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let quad = QuadratureGrid::<f64>::trapezoid(10.0, 257).unwrap();
        for _ in 0..3 {
            let rho = rng.gen_range(0.3..2.0);
            let u = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let temp = rng.gen_range(0.5..1.5);
            let (m0, m1, m2) = equilibrium_moments(rho, u, temp).unwrap();
            let f = |v: [f64; 3]| maxwellian_unchecked(rho, u, temp, v);
            assert!(rel_err(quadrature_moment(f, &quad, MomentPowers::density()), m0) <= 1e-9);
            for p in 0..3 {
                let got = quadrature_moment(f, &quad, MomentPowers::velocity(p));
                assert!((got - m1[p]).abs() / m0.max(1e-12) <= 1e-9);
            }
            let tr: f64 = [
                quadrature_moment(f, &quad, MomentPowers::new(2, 0, 0).unwrap()),
                quadrature_moment(f, &quad, MomentPowers::new(0, 2, 0).unwrap()),
                quadrature_moment(f, &quad, MomentPowers::new(0, 0, 2).unwrap()),
            ]
            .iter()
            .sum();
            assert!(rel_err(tr, m2) <= 1e-9);
        }
    }

    #[test]
    fn moments_to_macro_inverts_equilibrium() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        // trivial cases
        let set = MomentSet {
            m0: Tensor::vector(&[1.0]),
            m1: [Tensor::vector(&[0.0]), Tensor::vector(&[0.0]), Tensor::vector(&[0.0])],
            m2_trace: Tensor::vector(&[3.0]),
        };
        let m = moments_to_macro(&set).unwrap();
        assert_eq!(m.rho.data(), &[1.0]);
        assert_eq!(m.temp.data(), &[1.0]);
        let set = MomentSet {
            m0: Tensor::vector(&[2.0]),
            m1: [Tensor::vector(&[2.0]), Tensor::vector(&[0.0]), Tensor::vector(&[0.0])],
            m2_trace: Tensor::vector(&[5.0]),
        };
        let m = moments_to_macro(&set).unwrap();
        assert_eq!(m.u[0].data(), &[1.0]);
        assert!(rel_err(m.temp.data()[0], 0.5) < 1e-14);
        // roundtrip on random positive states
        for _ in 0..50 {
            let rho: f64 = rng.gen_range(0.1..3.0);
            let u: [f64; 3] = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let temp: f64 = rng.gen_range(0.1..2.0);
            let (m0, m1, m2) = equilibrium_moments(rho, u, temp).unwrap();
            let set = MomentSet {
                m0: Tensor::vector(&[m0]),
                m1: [Tensor::vector(&[m1[0]]), Tensor::vector(&[m1[1]]), Tensor::vector(&[m1[2]])],
                m2_trace: Tensor::vector(&[m2]),
            };
            let m = moments_to_macro(&set).unwrap();
            assert!(rel_err(m.rho.data()[0], rho) < 1e-12);
            for p in 0..3 {
                assert!((m.u[p].data()[0] - u[p]).abs() < 1e-12);
            }
            assert!(rel_err(m.temp.data()[0], temp) < 1e-12);
            assert!(m.temp_valid.iter().all(|&v| v));
        }
        // m0 <= 0 errors
        let bad = MomentSet {
            m0: Tensor::vector(&[0.0]),
            m1: [Tensor::vector(&[0.0]), Tensor::vector(&[0.0]), Tensor::vector(&[0.0])],
            m2_trace: Tensor::vector(&[1.0]),
        };
        assert!(moments_to_macro(&bad).is_err());
    }

    #[test]
    fn powers_above_quadratic_rejected() {
        assert!(MomentPowers::new(2, 1, 0).is_err());
        assert!(MomentPowers::new(1, 1, 0).is_ok());
    }

    #[test]
    fn separable_matches_dense_on_random_field() {
        let field = random_moment_field(77, 8, 2);
        let grid = tx_grid(2, 3);
        let quad = QuadratureGrid::<f64>::trapezoid(6.0, 65).unwrap();
        for powers in [
            MomentPowers::density(),
            MomentPowers::velocity(0),
            MomentPowers::velocity(2),
            MomentPowers::new(2, 0, 0).unwrap(),
            MomentPowers::new(1, 1, 0).unwrap(),
        ] {
            let sep = separable_moments(&field, &grid, &quad, powers).unwrap();
            let den = dense_moments(&field, &grid, &quad, powers, usize::MAX).unwrap();
            assert!(
                max_rel_err(sep.data(), den.data()) <= 1e-10,
                "powers {powers:?}"
            );
        }
    }

    #[test]
    fn zero_field_has_zero_moments() {
        let mut field = random_moment_field(5, 4, 2);
        for axis in field.axes.iter_mut() {
            let last = axis.net.layers.last_mut().unwrap();
            last.weight = Tensor::zeros(last.weight.shape());
            last.bias = Tensor::zeros(last.bias.shape());
        }
        let grid = tx_grid(2, 2);
        let quad = QuadratureGrid::<f64>::trapezoid(6.0, 17).unwrap();
        let m = separable_moments(&field, &grid, &quad, MomentPowers::density()).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_moments_memory_guard() {
        let field = random_moment_field(5, 4, 2);
        let grid = tx_grid(2, 2);
        let quad = QuadratureGrid::<f64>::trapezoid(6.0, 33).unwrap();
        let err = dense_moments(&field, &grid, &quad, MomentPowers::density(), 1000);
        assert!(matches!(err, Err(Error::ResourceGuard(_))));
    }

    #[test]
    fn constant_field_dense_volume() {
        // constant field c integrates to c * (2V)^3 under power (0,0,0)
        let mut field = random_moment_field(9, 1, 1);
        field.gaussian = Some(crate::field::FieldGaussian::new(vec![1, 2, 3], 0.0, 0.0));
        for (i, axis) in field.axes.iter_mut().enumerate() {
            let last = axis.net.layers.last_mut().unwrap();
            last.weight = Tensor::zeros(last.weight.shape());
            let mut b = Tensor::zeros(last.bias.shape());
            b.data_mut()[0] = if i == 0 { 0.7 } else { 1.0 };
            last.bias = b;
        }
        let grid = GridBatch::new(vec![("t".into(), vec![0.0])]).unwrap();
        let quad = QuadratureGrid::<f64>::trapezoid(6.0, 33).unwrap();
        let m = dense_moments(&field, &grid, &quad, MomentPowers::density(), usize::MAX).unwrap();
        assert!(rel_err(m.data()[0], 0.7 * 12.0f64.powi(3)) <= 1e-12);
        // odd power of the symmetric (constant) field vanishes
        let modd = dense_moments(&field, &grid, &quad, MomentPowers::velocity(0), usize::MAX).unwrap();
        assert!(modd.data()[0].abs() <= 1e-12);
    }

    #[test]
    fn rank_one_gaussian_field_factorizes() {
        // a rank-1 product of per-axis Gaussians integrates to the product
        // of 1-D quadratures (Fubini)
        let mut field = random_moment_field(11, 1, 2);
        // neutralize nets: output 1, leave the Gaussian factors as the field
        for (i, axis) in field.axes.iter_mut().enumerate() {
            let last = axis.net.layers.last_mut().unwrap();
            last.weight = Tensor::zeros(last.weight.shape());
            let mut b = Tensor::zeros(last.bias.shape());
            b.data_mut()[0] = if i == 0 { 2.5 } else { 1.0 };
            last.bias = b;
        }
        let g = field.gaussian.as_mut().unwrap();
        g.tau = Tensor::scalar(1.0);
        g.mu = vec![Tensor::scalar(0.3), Tensor::scalar(-0.2), Tensor::scalar(0.0)];
        let grid = GridBatch::new(vec![("t".into(), vec![0.1]), ("x".into(), vec![0.2])]).unwrap();
        let quad = QuadratureGrid::<f64>::trapezoid(8.0, 129).unwrap();
        let got = separable_moments(&field, &grid, &quad, MomentPowers::density()).unwrap();
        let mut expect = 2.5;
        for p in 0..3 {
            let mu = [0.3, -0.2, 0.0][p];
            let onedim: f64 = quad.axes[p]
                .nodes
                .iter()
                .zip(&quad.axes[p].weights)
                .map(|(&v, &w)| w * (-0.5 * (v - mu) * (v - mu)).exp())
                .sum();
            expect *= onedim;
        }
        assert!(rel_err(got.data()[0], expect) <= 1e-12);
    }

    #[test]
    fn model_moments_reduce_to_equilibrium_channels() {
        let model = KineticModel::constant_maxwellian(
            1, &[8], 4, 10.0, 3, 1.2, [0.1, 0.0, -0.3], 0.8,
        )
        .unwrap();
        let grid = tx_grid(2, 3);
        let quad = QuadratureGrid::<f64>::trapezoid(10.0, 65).unwrap();
        let m = model.model_moments(&grid, &quad).unwrap();
        for &r in m.rho.data() {
            assert!(rel_err(r, 1.2) < 1e-12);
        }
        for &t in m.temp.data() {
            assert!(rel_err(t, 0.8) < 1e-12);
        }
        assert!(m.u[0].data().iter().all(|&v| (v - 0.1).abs() < 1e-12));
    }

    #[test]
    fn alpha_zero_ignores_correction() {
        let mut model = KineticModel::init(1, &[8], 4, 10.0, 41).unwrap();
        model.alpha = 0.0;
        let grid = tx_grid(2, 2);
        let quad = QuadratureGrid::<f64>::trapezoid(10.0, 33).unwrap();
        let with_neq = model.model_moments(&grid, &quad).unwrap();
        // zero out the correction entirely; moments must not change
        for axis in model.neq.axes.iter_mut() {
            let last = axis.net.layers.last_mut().unwrap();
            last.weight = Tensor::zeros(last.weight.shape());
            last.bias = Tensor::zeros(last.bias.shape());
        }
        let without = model.model_moments(&grid, &quad).unwrap();
        assert_eq!(with_neq.rho.data(), without.rho.data());
        assert_eq!(with_neq.temp.data(), without.temp.data());
    }

    #[test]
    fn model_moments_match_dense_quadrature_of_f() {
        let model = KineticModel::init(1, &[8], 4, 10.0, 57).unwrap();
        let quad = QuadratureGrid::<f64>::trapezoid(10.0, 129).unwrap();
        let grid = GridBatch::new(vec![("t".into(), vec![0.05]), ("x".into(), vec![-0.2])]).unwrap();
        let m = model.model_moments(&grid, &quad).unwrap();
        // dense oracle: evaluate f on the full velocity grid and integrate
        let batch = GridBatch::new(vec![
            ("t".into(), vec![0.05]),
            ("x".into(), vec![-0.2]),
            ("vx".into(), quad.axes[0].nodes.clone()),
            ("vy".into(), quad.axes[1].nodes.clone()),
            ("vz".into(), quad.axes[2].nodes.clone()),
        ])
        .unwrap();
        let f = model.density_grid(&batch).unwrap();
        let n = quad.len();
        let fval = |i: usize, j: usize, k: usize| f.data()[(i * n + j) * n + k];
        let moment = |pw: [u32; 3]| {
            let mut s = 0.0;
            for i in 0..n {
                let wi = quad.axes[0].weights[i] * quad.axes[0].nodes[i].powi(pw[0] as i32);
                for j in 0..n {
                    let wj = quad.axes[1].weights[j] * quad.axes[1].nodes[j].powi(pw[1] as i32);
                    for k in 0..n {
                        let wk = quad.axes[2].weights[k] * quad.axes[2].nodes[k].powi(pw[2] as i32);
                        s += wi * wj * wk * fval(i, j, k);
                    }
                }
            }
            s
        };
        let m0 = moment([0, 0, 0]);
        let m1 = [moment([1, 0, 0]), moment([0, 1, 0]), moment([0, 0, 1])];
        let m2 = moment([2, 0, 0]) + moment([0, 2, 0]) + moment([0, 0, 2]);
        assert!(rel_err(m.rho.data()[0], m0) <= 1e-8, "{} vs {}", m.rho.data()[0], m0);
        for p in 0..3 {
            let u = m1[p] / m0;
            assert!((m.u[p].data()[0] - u).abs() <= 1e-8);
        }
        let temp = (m2 / m0 - (0..3).map(|p| (m1[p] / m0).powi(2)).sum::<f64>()) / 3.0;
        assert!(rel_err(m.temp.data()[0], temp) <= 1e-8);
    }

    fn small_batch() -> GridBatch<f64> {
        GridBatch::new(vec![
            ("t".into(), vec![0.02, 0.07]),
            ("x".into(), vec![-0.3, 0.1, 0.4]),
            ("vx".into(), vec![-2.0, 0.5]),
            ("vy".into(), vec![0.0, 1.0]),
            ("vz".into(), vec![-1.0, 0.3]),
        ])
        .unwrap()
    }

    #[test]
    fn residual_vanishes_for_global_maxwellian() {
        let model = KineticModel::constant_maxwellian(
            1, &[8], 4, 10.0, 13, 1.0, [0.0; 3], 1.0,
        )
        .unwrap();
        let quad = QuadratureGrid::<f64>::trapezoid(10.0, 257).unwrap();
        let res = model.bgk_residual(&small_batch(), &quad, 0.5).unwrap();
        let worst = res.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst <= 1e-8, "residual {worst}");
    }

    #[test]
    fn residual_reduces_to_relaxation_for_tx_independent_model() {
        // constant-in-(t,x) model with a nonzero correction: transport
        // terms vanish, residual = (f - M[f]) / Kn exactly
        let mut model = KineticModel::constant_maxwellian(
            1, &[8], 2, 10.0, 19, 1.0, [0.0; 3], 1.0,
        )
        .unwrap();
        // correction: constant in t,x; Gaussian bumps in v
        for (i, axis) in model.neq.axes.iter_mut().enumerate() {
            let last = axis.net.layers.last_mut().unwrap();
            last.weight = Tensor::zeros(last.weight.shape());
            let mut b = Tensor::zeros(last.bias.shape());
            b.data_mut()[0] = if i == 0 { 0.05 } else { 1.0 };
            last.bias = b;
        }
        let kn = 0.7;
        let quad = QuadratureGrid::<f64>::trapezoid(10.0, 129).unwrap();
        let batch = small_batch();
        let res = model.bgk_residual(&batch, &quad, kn).unwrap();

        let f = model.density_grid(&batch).unwrap();
        let macro_grid = GridBatch::new(vec![
            ("t".into(), batch.coords("t").unwrap().to_vec()),
            ("x".into(), batch.coords("x").unwrap().to_vec()),
        ])
        .unwrap();
        let m = model.model_moments(&macro_grid, &quad).unwrap();
        let (nt, nx) = (2, 3);
        let (nvx, nvy, nvz) = (2, 2, 2);
        for it in 0..nt {
            for ix in 0..nx {
                let cell = it * nx + ix;
                let (rho, temp) = (m.rho.data()[cell], m.temp.data()[cell]);
                let u = [m.u[0].data()[cell], m.u[1].data()[cell], m.u[2].data()[cell]];
                for i in 0..nvx {
                    for j in 0..nvy {
                        for k in 0..nvz {
                            let v = [
                                batch.coords("vx").unwrap()[i],
                                batch.coords("vy").unwrap()[j],
                                batch.coords("vz").unwrap()[k],
                            ];
                            let flat = ((((it * nx) + ix) * nvx + i) * nvy + j) * nvz + k;
                            let expect =
                                (f.data()[flat] - maxwellian(rho, u, temp, v).unwrap()) / kn;
                            assert!(
                                (res.data()[flat] - expect).abs() <= 1e-12,
                                "flat {flat}: {} vs {expect}",
                                res.data()[flat]
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn density_tangents_match_finite_differences() {
        let model = KineticModel::init(1, &[10, 10], 3, 10.0, 23).unwrap();
        let batch = small_batch();
        let mut tape = Tape::new();
        let graph = model.bind(&mut tape).unwrap();
        let coords: Vec<NodeId> = batch
            .axes()
            .iter()
            .map(|(_, c)| tape.input(Tensor::vector(c)))
            .collect();
        let f = graph.density_on(&mut tape, &coords).unwrap();
        for (axis, name) in [(0usize, "t"), (1usize, "x")] {
            let tangents = tape.axis_tangent(&[f], coords[axis]).unwrap();
            let tan = tape.value(tangents[0]).clone();
            let h = 1e-5;
            let shifted = |delta: f64| {
                let axes: Vec<(String, Vec<f64>)> = batch
                    .axes()
                    .iter()
                    .enumerate()
                    .map(|(i, (n, c))| {
                        let cc = if i == axis { c.iter().map(|v| v + delta).collect() } else { c.clone() };
                        (n.clone(), cc)
                    })
                    .collect();
                model.density_grid(&GridBatch::new(axes).unwrap()).unwrap()
            };
            let plus = shifted(h);
            let minus = shifted(-h);
            for i in 0..tan.len() {
                let fd = (plus.data()[i] - minus.data()[i]) / (2.0 * h);
                assert!(
                    rel_err(tan.data()[i], fd) <= 1e-5,
                    "{name} elem {i}: {} vs {fd}",
                    tan.data()[i]
                );
            }
        }
    }

    #[test]
    fn residual_rejects_bad_knudsen() {
        let model = KineticModel::init(1, &[8], 2, 10.0, 3).unwrap();
        let quad = QuadratureGrid::<f64>::trapezoid(10.0, 17).unwrap();
        assert!(model.bgk_residual(&small_batch(), &quad, 0.0).is_err());
    }

    #[test]
    fn softplus_inv_roundtrips() {
        for y in [0.3, 0.8, 1.0, 1.5, 2.0] {
            let x = softplus_inv(y);
            let back = (x as f64).exp().ln_1p();
            assert!(rel_err(back, y) < 1e-12);
        }
    }
}
