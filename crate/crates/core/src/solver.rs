//! Deterministic reference solvers for the BGK equation.
//!
//! Two oracles:
//!
//! * [`homogeneous_exact`] — the closed-form space-homogeneous solution
//!   `f(t) = e^{-t/Kn} f0 + (1 - e^{-t/Kn}) M[f0]` (moments are collision
//!   invariants, so `M[f]` is constant in time).
//! * A finite-volume discrete-velocity solver: first-order upwind
//!   transport per discrete velocity plus an implicit relaxation step
//!   `f <- (Kn f* + dt M[f*]) / (Kn + dt)`, which is unconditionally
//!   stable in the stiff limit and conserves the discrete moments because
//!   `M[f*]` shares them with `f*`.
//!
//! Layout: `f[iv * n_cells + cell]` (velocity-major), so transport sweeps
//! and moment accumulation both stream over contiguous cell slabs.

use crate::error::{Error, Result};
use crate::physics::{MomentField, QuadratureGrid};
use crate::problems::{BoundaryKind, ProblemSpec};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SpatialGrid<T> {
    /// cells per spatial axis (1 or 2 axes)
    pub dims: Vec<usize>,
    pub lo: Vec<T>,
    pub hi: Vec<T>,
}

impl<T: Real> SpatialGrid<T> {
    pub fn uniform(domain: &[(f64, f64)], cells: usize) -> Self {
        Self {
            dims: vec![cells; domain.len()],
            lo: domain.iter().map(|d| T::lit(d.0)).collect(),
            hi: domain.iter().map(|d| T::lit(d.1)).collect(),
        }
    }

    pub fn n_cells(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn width(&self, d: usize) -> T {
        (self.hi[d] - self.lo[d]) / T::from_count(self.dims[d])
    }

    pub fn centers(&self, d: usize) -> Vec<T> {
        let h = self.width(d);
        (0..self.dims[d])
            .map(|i| self.lo[d] + h * (T::from_count(i) + T::lit(0.5)))
            .collect()
    }

    /// Cell center coordinates of a flattened cell index (row-major).
    pub fn center_of(&self, cell: usize) -> Vec<T> {
        let mut idx = vec![0usize; self.dims.len()];
        let mut rem = cell;
        for d in (0..self.dims.len()).rev() {
            idx[d] = rem % self.dims[d];
            rem /= self.dims[d];
        }
        idx.iter()
            .enumerate()
            .map(|(d, &i)| self.lo[d] + self.width(d) * (T::from_count(i) + T::lit(0.5)))
            .collect()
    }
}

/// Discrete kinetic state: `f` on space cells x velocity nodes.
#[derive(Clone, Debug)]
pub struct DiscreteKineticState<T: Real> {
    /// `f[iv * n_cells + cell]`, `iv = (ivx * nv + ivy) * nv + ivz`
    pub f: Vec<T>,
    pub space: SpatialGrid<T>,
    pub quad: QuadratureGrid<T>,
    pub bc: BoundaryKind,
    pub time: T,
}

/// Discrete trapezoid moments of a velocity profile (one cell).
pub fn velocity_moments<T: Real>(f: &[T], quad: &QuadratureGrid<T>) -> (T, [T; 3], T) {
    let nv = quad.len();
    let mut m0 = T::zero();
    let mut m1 = [T::zero(); 3];
    let mut m2 = T::zero();
    let mut iv = 0usize;
    for i in 0..nv {
        let (vx, wx) = (quad.axes[0].nodes[i], quad.axes[0].weights[i]);
        for j in 0..nv {
            let (vy, wy) = (quad.axes[1].nodes[j], quad.axes[1].weights[j]);
            let wxy = wx * wy;
            for k in 0..nv {
                let (vz, wz) = (quad.axes[2].nodes[k], quad.axes[2].weights[k]);
                let w = wxy * wz * f[iv];
                m0 += w;
                m1[0] += w * vx;
                m1[1] += w * vy;
                m1[2] += w * vz;
                m2 += w * (vx * vx + vy * vy + vz * vz);
                iv += 1;
            }
        }
    }
    (m0, m1, m2)
}

/// Exact space-homogeneous relaxation of a velocity profile.
pub fn homogeneous_exact<T: Real>(
    f0: &[T],
    quad: &QuadratureGrid<T>,
    kn: T,
    t: T,
) -> Result<Vec<T>> {
    if kn <= T::zero() {
        return Err(Error::InvalidValue("Kn must be positive".into()));
    }
    let nv = quad.len();
    if f0.len() != nv * nv * nv {
        return Err(Error::ShapeMismatch(format!(
            "f0 has {} entries for a {}^3 velocity grid",
            f0.len(),
            nv
        )));
    }
    let (m0, m1, m2) = velocity_moments(f0, quad);
    if m0 <= T::zero() {
        return Err(Error::InvalidValue("non-positive density".into()));
    }
    let u = [m1[0] / m0, m1[1] / m0, m1[2] / m0];
    let usq = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
    let temp = (m2 / m0 - usq) / T::lit(3.0);
    if temp <= T::zero() {
        return Err(Error::InvalidValue("non-positive temperature".into()));
    }
    let decay = (-t / kn).exp();
    let mut out = vec![T::zero(); f0.len()];
    let mut iv = 0usize;
    for i in 0..nv {
        for j in 0..nv {
            for k in 0..nv {
                let v = [quad.axes[0].nodes[i], quad.axes[1].nodes[j], quad.axes[2].nodes[k]];
                let m = crate::physics::maxwellian_unchecked(m0, u, temp, v);
                out[iv] = decay * f0[iv] + (T::one() - decay) * m;
                iv += 1;
            }
        }
    }
    Ok(out)
}

impl<T: Real> DiscreteKineticState<T> {
    /// Initialize from a problem's Maxwellian initial condition at cell
    /// centers.
    pub fn from_problem(
        problem: &ProblemSpec,
        cells: usize,
        velocity_nodes: usize,
    ) -> Result<Self> {
        if problem.dim > 2 {
            return Err(Error::InvalidValue(
                "no reference available for 3D problems".into(),
            ));
        }
        let space = SpatialGrid::uniform(&problem.domain, cells);
        let quad = QuadratureGrid::trapezoid(T::lit(problem.v_max), velocity_nodes)?;
        let n_cells = space.n_cells();
        let nv = quad.len();
        let nv3 = nv * nv * nv;
        let mut f = vec![T::zero(); nv3 * n_cells];
        let centers: Vec<Vec<T>> = (0..n_cells).map(|c| space.center_of(c)).collect();
        let rho: Vec<T> = centers.iter().map(|x| problem.ic.rho0(x)).collect();
        let u: Vec<[T; 3]> = centers.iter().map(|x| problem.ic.u0(x)).collect();
        let temp: Vec<T> = centers.iter().map(|x| problem.ic.temp0(x)).collect();
        // factorized Maxwellian: rho~(c) * prod_p exp(-(v_p - u_p)^2 / 2T)
        let mut iv = 0usize;
        let pref: Vec<T> = (0..n_cells)
            .map(|c| {
                let tpt = T::lit(2.0) * T::PI() * temp[c];
                rho[c] / (tpt * tpt * tpt).sqrt()
            })
            .collect();
        let etab = |p: usize| -> Vec<Vec<T>> {
            quad.axes[p]
                .nodes
                .iter()
                .map(|&v| {
                    (0..n_cells)
                        .map(|c| {
                            let d = v - u[c][p];
                            (-d * d / (T::lit(2.0) * temp[c])).exp()
                        })
                        .collect()
                })
                .collect()
        };
        let (ex, ey, ez) = (etab(0), etab(1), etab(2));
        for i in 0..nv {
            for j in 0..nv {
                for k in 0..nv {
                    let slab = &mut f[iv * n_cells..(iv + 1) * n_cells];
                    for (c, out) in slab.iter_mut().enumerate() {
                        *out = pref[c] * ex[i][c] * ey[j][c] * ez[k][c];
                    }
                    iv += 1;
                }
            }
        }
        Ok(Self { f, space, quad, bc: problem.bc, time: T::zero() })
    }

    pub fn n_cells(&self) -> usize {
        self.space.n_cells()
    }

    /// Largest velocity magnitude on the grid (per axis they coincide).
    pub fn v_max(&self) -> T {
        self.quad.axes[0]
            .nodes
            .iter()
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Macroscopic `(rho, u, T)` per cell.
    pub fn macro_fields(&self) -> (Vec<T>, [Vec<T>; 3], Vec<T>) {
        let n_cells = self.n_cells();
        let nv = self.quad.len();
        let mut m0 = vec![T::zero(); n_cells];
        let mut m1 = [vec![T::zero(); n_cells], vec![T::zero(); n_cells], vec![T::zero(); n_cells]];
        let mut m2 = vec![T::zero(); n_cells];
        let mut iv = 0usize;
        for i in 0..nv {
            let (vx, wx) = (self.quad.axes[0].nodes[i], self.quad.axes[0].weights[i]);
            for j in 0..nv {
                let (vy, wy) = (self.quad.axes[1].nodes[j], self.quad.axes[1].weights[j]);
                for k in 0..nv {
                    let (vz, wz) = (self.quad.axes[2].nodes[k], self.quad.axes[2].weights[k]);
                    let w = wx * wy * wz;
                    let vsq = vx * vx + vy * vy + vz * vz;
                    let slab = &self.f[iv * n_cells..(iv + 1) * n_cells];
                    for (c, &fv) in slab.iter().enumerate() {
                        let wf = w * fv;
                        m0[c] += wf;
                        m1[0][c] += wf * vx;
                        m1[1][c] += wf * vy;
                        m1[2][c] += wf * vz;
                        m2[c] += wf * vsq;
                    }
                    iv += 1;
                }
            }
        }
        let mut u = [vec![T::zero(); n_cells], vec![T::zero(); n_cells], vec![T::zero(); n_cells]];
        let mut temp = vec![T::zero(); n_cells];
        for c in 0..n_cells {
            for p in 0..3 {
                u[p][c] = m1[p][c] / m0[c];
            }
            let usq = u[0][c] * u[0][c] + u[1][c] * u[1][c] + u[2][c] * u[2][c];
            temp[c] = (m2[c] / m0[c] - usq) / T::lit(3.0);
        }
        (m0, u, temp)
    }

    /// Domain totals of the collision invariants: mass, momentum, energy
    /// (cell volume included).
    pub fn invariants(&self) -> (T, [T; 3], T) {
        let n_cells = self.n_cells();
        let nv = self.quad.len();
        let vol: T = (0..self.space.dims.len())
            .map(|d| self.space.width(d))
            .fold(T::one(), |a, b| a * b);
        let mut mass = T::zero();
        let mut mom = [T::zero(); 3];
        let mut energy = T::zero();
        let mut iv = 0usize;
        for i in 0..nv {
            let (vx, wx) = (self.quad.axes[0].nodes[i], self.quad.axes[0].weights[i]);
            for j in 0..nv {
                let (vy, wy) = (self.quad.axes[1].nodes[j], self.quad.axes[1].weights[j]);
                for k in 0..nv {
                    let (vz, wz) = (self.quad.axes[2].nodes[k], self.quad.axes[2].weights[k]);
                    let w = wx * wy * wz;
                    let vsq = vx * vx + vy * vy + vz * vz;
                    let slab = &self.f[iv * n_cells..(iv + 1) * n_cells];
                    let mut s = T::zero();
                    for &fv in slab {
                        s += fv;
                    }
                    mass += w * s;
                    mom[0] += w * vx * s;
                    mom[1] += w * vy * s;
                    mom[2] += w * vz * s;
                    energy += w * vsq * s;
                    iv += 1;
                }
            }
        }
        // momentum here sums the per-cell m1; cells share volume
        let _ = &mom;
        (mass * vol, [mom[0] * vol, mom[1] * vol, mom[2] * vol], energy * vol)
    }
}

/// One finite-volume step: upwind transport for every discrete velocity
/// (dimension by dimension), then implicit relaxation toward the local
/// Maxwellian. Errors if `dt` violates the CFL bound.
pub fn fv_step<T: Real>(state: &mut DiscreteKineticState<T>, dt: T, kn: T) -> Result<()> {
    fv_step_parts(state, dt, kn, true, true)
}

/// Transport-only / relaxation-only variants used by the oracle tests.
pub fn fv_step_parts<T: Real>(
    state: &mut DiscreteKineticState<T>,
    dt: T,
    kn: T,
    transport: bool,
    relax: bool,
) -> Result<()> {
    if kn <= T::zero() {
        return Err(Error::InvalidValue("Kn must be positive".into()));
    }
    if transport {
        let vmax = state.v_max();
        for d in 0..state.space.dims.len() {
            if dt * vmax > state.space.width(d) * (T::one() + T::lit(1e-12)) {
                return Err(Error::Cfl(format!(
                    "dt * vmax = {} exceeds cell width {}",
                    dt * vmax,
                    state.space.width(d)
                )));
            }
        }
        for d in 0..state.space.dims.len() {
            transport_sweep(state, dt, d);
        }
    }
    if relax {
        relax_step(state, dt, kn);
    }
    state.time += dt;
    Ok(())
}

/// In-place first-order upwind sweep along spatial dimension `d`.
fn transport_sweep<T: Real>(state: &mut DiscreteKineticState<T>, dt: T, d: usize) {
    let dims = state.space.dims.clone();
    let n_cells = state.n_cells();
    let nv = state.quad.len();
    let h = state.space.width(d);
    let periodic = state.bc == BoundaryKind::Periodic;
    // iterate lines along dimension d: stride and count
    let stride: usize = dims[d + 1..].iter().product();
    let nd = dims[d];
    let n_lines = n_cells / nd;
    let vnode = |iv: usize, p: usize| -> T {
        // iv = (ivx*nv + ivy)*nv + ivz
        let idx = match p {
            0 => iv / (nv * nv),
            1 => (iv / nv) % nv,
            _ => iv % nv,
        };
        state.quad.axes[p].nodes[idx]
    };
    for iv in 0..nv * nv * nv {
        let v = vnode(iv, d);
        if v == T::zero() {
            continue;
        }
        let nu = dt * v / h;
        let slab = &mut state.f[iv * n_cells..(iv + 1) * n_cells];
        for line in 0..n_lines {
            // base offset of this line: lines enumerate all indices with
            // dimension d removed
            let outer = line / stride;
            let inner = line % stride;
            let base = outer * (nd * stride) + inner;
            let at = |i: usize| base + i * stride;
            if v > T::zero() {
                let inflow_edge = if periodic { slab[at(nd - 1)] } else { slab[at(0)] };
                let mut i = nd - 1;
                loop {
                    let upwind = if i == 0 { inflow_edge } else { slab[at(i - 1)] };
                    slab[at(i)] = slab[at(i)] - nu * (slab[at(i)] - upwind);
                    if i == 0 {
                        break;
                    }
                    i -= 1;
                }
            } else {
                let inflow_edge = if periodic { slab[at(0)] } else { slab[at(nd - 1)] };
                for i in 0..nd {
                    let upwind = if i == nd - 1 { inflow_edge } else { slab[at(i + 1)] };
                    slab[at(i)] = slab[at(i)] - nu * (upwind - slab[at(i)]);
                }
            }
        }
    }
}

/// Implicit relaxation `f <- (Kn f + dt M[f]) / (Kn + dt)` with the
/// Maxwellian built from the pre-step discrete moments.
fn relax_step<T: Real>(state: &mut DiscreteKineticState<T>, dt: T, kn: T) {
    let n_cells = state.n_cells();
    let nv = state.quad.len();
    let (rho, u, temp) = state.macro_fields();
    let pref: Vec<T> = (0..n_cells)
        .map(|c| {
            let tpt = T::lit(2.0) * T::PI() * temp[c];
            rho[c] / (tpt * tpt * tpt).sqrt()
        })
        .collect();
    let etab = |p: usize| -> Vec<Vec<T>> {
        state.quad.axes[p]
            .nodes
            .iter()
            .map(|&v| {
                (0..n_cells)
                    .map(|c| {
                        let dd = v - u[p][c];
                        (-dd * dd / (T::lit(2.0) * temp[c])).exp()
                    })
                    .collect()
            })
            .collect()
    };
    let (ex, ey, ez) = (etab(0), etab(1), etab(2));
    let denom = T::one() / (kn + dt);
    let mut iv = 0usize;
    for i in 0..nv {
        for j in 0..nv {
            for k in 0..nv {
                let slab = &mut state.f[iv * n_cells..(iv + 1) * n_cells];
                for (c, fv) in slab.iter_mut().enumerate() {
                    let m = pref[c] * ex[i][c] * ey[j][c] * ez[k][c];
                    *fv = (kn * *fv + dt * m) * denom;
                }
                iv += 1;
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverResolution {
    pub cells: usize,
    pub velocity_nodes: usize,
    /// safety factor applied to the CFL-limited step
    pub cfl: f64,
}

impl SolverResolution {
    /// Defaults used for published-style comparisons.
    pub fn default_for_dim(dim: usize) -> Self {
        match dim {
            1 => Self { cells: 640, velocity_nodes: 48, cfl: 0.9 },
            _ => Self { cells: 128, velocity_nodes: 24, cfl: 0.9 },
        }
    }
}

/// March the finite-volume solver to each requested output time and
/// return `(rho, u, T)` snapshots on the cell-center grid.
pub fn solve<T: Real>(
    problem: &ProblemSpec,
    kn: T,
    resolution: SolverResolution,
    output_times: &[T],
) -> Result<MomentField<T>> {
    let mut state = DiscreteKineticState::from_problem(
        problem,
        resolution.cells,
        resolution.velocity_nodes,
    )?;
    let mut times: Vec<T> = output_times.to_vec();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if times.iter().any(|&t| t < T::zero()) {
        return Err(Error::InvalidValue("negative output time".into()));
    }
    let n_cells = state.n_cells();
    let guard = 200_000_000usize;
    if state.f.len() > guard {
        return Err(Error::ResourceGuard(format!(
            "state needs {} entries, guard is {guard}",
            state.f.len()
        )));
    }
    let vmax = state.v_max();
    let h = (0..problem.dim).map(|d| state.space.width(d)).fold(T::infinity(), T::min);
    let dt_cfl = T::lit(resolution.cfl) * h / vmax;

    let shape: Vec<usize> = std::iter::once(times.len())
        .chain(state.space.dims.iter().copied())
        .collect();
    let mut rho_out = Tensor::zeros(&shape);
    let mut u_out = [Tensor::zeros(&shape), Tensor::zeros(&shape), Tensor::zeros(&shape)];
    let mut temp_out = Tensor::zeros(&shape);

    for (ti, &t_out) in times.iter().enumerate() {
        while state.time < t_out - T::lit(1e-12) {
            let dt = dt_cfl.min(t_out - state.time);
            fv_step(&mut state, dt, kn)?;
        }
        let (rho, u, temp) = state.macro_fields();
        let dst = ti * n_cells;
        rho_out.data_mut()[dst..dst + n_cells].copy_from_slice(&rho);
        for p in 0..3 {
            u_out[p].data_mut()[dst..dst + n_cells].copy_from_slice(&u[p]);
        }
        temp_out.data_mut()[dst..dst + n_cells].copy_from_slice(&temp);
    }
    Ok(MomentField {
        times,
        space: (0..problem.dim).map(|d| state.space.centers(d)).collect(),
        rho: rho_out,
        u: u_out,
        temp: temp_out,
    })
}
