//! Experiment definitions: domains, initial moments, boundary kinds,
//! velocity truncations, and per-problem collocation sizes.

use crate::error::{Error, Result};
use crate::physics::{maxwellian, space_time_axes, VELOCITY_AXES};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryKind {
    Periodic,
    /// Outflow boundary, realized as zero normal gradient.
    FreeFlow,
}

impl BoundaryKind {
    pub fn name(&self) -> &'static str {
        match self {
            BoundaryKind::Periodic => "periodic",
            BoundaryKind::FreeFlow => "free-flow",
        }
    }
}

/// Smoothed Heaviside `(1 + tanh(100 s)) / 2`.
pub fn smoothed_heaviside<T: Real>(s: T) -> T {
    (T::one() + (T::lit(100.0) * s).tanh()) * T::lit(0.5)
}

/// Initial macroscopic moments, one variant per experiment family.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialMoments {
    Smooth1d,
    Riemann1d,
    Smooth2d,
    Riemann2d,
    Riemann3d,
    Uniform { rho: f64, u: [f64; 3], temp: f64 },
}

impl InitialMoments {
    pub fn rho0<T: Real>(&self, x: &[T]) -> T {
        let two_pi = T::lit(std::f64::consts::TAU);
        match self {
            InitialMoments::Smooth1d => T::one() + T::lit(0.5) * (two_pi * x[0]).sin(),
            InitialMoments::Riemann1d => T::one() - T::lit(0.875) * smoothed_heaviside(x[0]),
            InitialMoments::Smooth2d => {
                T::one() + T::lit(0.5) * (two_pi * x[0]).sin() * (two_pi * x[1]).sin()
            }
            InitialMoments::Riemann2d => {
                let r2 = T::lit(0.2) - x[0] * x[0] - x[1] * x[1];
                T::lit(0.125) + T::lit(0.875) * smoothed_heaviside(r2)
            }
            InitialMoments::Riemann3d => {
                let r2 = T::lit(0.25) - x[0] * x[0] - x[1] * x[1] - x[2] * x[2];
                T::lit(0.375) + T::lit(0.625) * smoothed_heaviside(r2)
            }
            InitialMoments::Uniform { rho, .. } => T::lit(*rho),
        }
    }

    pub fn u0<T: Real>(&self, _x: &[T]) -> [T; 3] {
        match self {
            InitialMoments::Uniform { u, .. } => [T::lit(u[0]), T::lit(u[1]), T::lit(u[2])],
            _ => [T::zero(); 3],
        }
    }

    pub fn temp0<T: Real>(&self, x: &[T]) -> T {
        let two_pi = T::lit(std::f64::consts::TAU);
        match self {
            InitialMoments::Smooth1d => {
                T::one() + T::lit(0.5) * (two_pi * x[0] + T::lit(0.2)).sin()
            }
            InitialMoments::Riemann1d => T::one() - T::lit(0.2) * smoothed_heaviside(x[0]),
            InitialMoments::Smooth2d => T::one(),
            InitialMoments::Riemann2d => {
                let r2 = T::lit(0.2) - x[0] * x[0] - x[1] * x[1];
                T::lit(0.8) + T::lit(0.2) * smoothed_heaviside(r2)
            }
            InitialMoments::Riemann3d => {
                let r2 = T::lit(0.25) - x[0] * x[0] - x[1] * x[1] - x[2] * x[2];
                T::lit(0.8) + T::lit(0.2) * smoothed_heaviside(r2)
            }
            InitialMoments::Uniform { temp, .. } => T::lit(*temp),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub name: String,
    pub dim: usize,
    /// spatial box, one `(lo, hi)` per axis
    pub domain: Vec<(f64, f64)>,
    /// time horizon `(0, t_final]`
    pub t_final: f64,
    /// velocity truncation `(-v_max, v_max)^3`
    pub v_max: f64,
    pub bc: BoundaryKind,
    pub ic: InitialMoments,
    pub quad_points: usize,
    /// collocation sizes per axis: `t, x.., vx, vy, vz`
    pub collocation: Vec<usize>,
    pub default_rank: usize,
}

/// The named experiments.
pub const PROBLEM_NAMES: [&str; 5] =
    ["1d-smooth", "1d-riemann", "2d-smooth", "2d-riemann", "3d-riemann"];

pub fn make_problem(name: &str) -> Result<ProblemSpec> {
    let p = match name {
        "1d-smooth" => ProblemSpec {
            name: name.into(),
            dim: 1,
            domain: vec![(-0.5, 0.5)],
            t_final: 0.1,
            v_max: 10.0,
            bc: BoundaryKind::Periodic,
            ic: InitialMoments::Smooth1d,
            quad_points: 257,
            collocation: vec![12, 16, 12, 12, 12],
            default_rank: 128,
        },
        "1d-riemann" => ProblemSpec {
            name: name.into(),
            dim: 1,
            domain: vec![(-0.5, 0.5)],
            t_final: 0.1,
            v_max: 10.0,
            bc: BoundaryKind::FreeFlow,
            ic: InitialMoments::Riemann1d,
            quad_points: 257,
            collocation: vec![12, 32, 32, 12, 12],
            default_rank: 256,
        },
        "2d-smooth" => ProblemSpec {
            name: name.into(),
            dim: 2,
            domain: vec![(-0.5, 0.5), (-0.5, 0.5)],
            t_final: 0.1,
            v_max: 10.0,
            bc: BoundaryKind::Periodic,
            ic: InitialMoments::Smooth2d,
            quad_points: 257,
            collocation: vec![12; 6],
            default_rank: 128,
        },
        "2d-riemann" => ProblemSpec {
            name: name.into(),
            dim: 2,
            domain: vec![(-1.0, 1.0), (-1.0, 1.0)],
            t_final: 0.1,
            v_max: 6.0,
            bc: BoundaryKind::FreeFlow,
            ic: InitialMoments::Riemann2d,
            quad_points: 257,
            collocation: vec![12; 6],
            default_rank: 256,
        },
        "3d-riemann" => ProblemSpec {
            name: name.into(),
            dim: 3,
            domain: vec![(-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)],
            t_final: 0.1,
            v_max: 6.0,
            bc: BoundaryKind::FreeFlow,
            ic: InitialMoments::Riemann3d,
            quad_points: 257,
            collocation: vec![12; 7],
            default_rank: 256,
        },
        other => return Err(Error::UnknownProblem(other.into())),
    };
    Ok(p)
}

/// Space-homogeneous relaxation setup: constant Maxwellian initial data on
/// a periodic box. Not one of the named experiments; used for solver
/// cross-checks and quick training smoke runs.
pub fn homogeneous_problem() -> ProblemSpec {
    ProblemSpec {
        name: "homogeneous".into(),
        dim: 1,
        domain: vec![(-0.5, 0.5)],
        t_final: 0.1,
        v_max: 10.0,
        bc: BoundaryKind::Periodic,
        ic: InitialMoments::Uniform { rho: 1.0, u: [0.0; 3], temp: 1.0 },
        quad_points: 257,
        collocation: vec![12, 12, 12, 12, 12],
        default_rank: 32,
    }
}

impl ProblemSpec {
    /// `t, x[, y, z], vx, vy, vz` axis names in model order.
    pub fn axis_names(&self) -> Vec<&'static str> {
        let mut names = space_time_axes(self.dim);
        names.extend_from_slice(&VELOCITY_AXES);
        names
    }

    /// Initial particle density: the Maxwellian of the initial moments.
    pub fn initial_density<T: Real>(&self, x: &[T], v: [T; 3]) -> Result<T> {
        maxwellian(self.ic.rho0(x), self.ic.u0(x), self.ic.temp0(x), v)
    }
}
