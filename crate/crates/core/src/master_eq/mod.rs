//! Single-particle master equation: generator, time propagation and
//! steady-state solvers.
//!
//! With per-index lead indicator `lambda_m`, lattice indicator `chi_m` and
//! `A = i H + diag(gamma_m lambda_m / 2 + kappa chi_m / 2)`, the generator is
//!
//! ```text
//! d rho/dt = -(A rho + rho A^dagger) + gamma rho~ + kappa diag_lattice(rho)
//! ```
//!
//! which is `-i[H, rho]` plus lead relaxation toward the thermal target and
//! on-site dephasing of the lattice.

mod full;
mod propagate;
mod sylvester;

use std::time::Instant;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::leads::{BlockLayout, CompositeSystem};
use crate::{CMatrix, Error, Result, C64};

pub use full::full_linear_steady_state;
pub use propagate::propagate;
pub use sylvester::SylvesterSolver;

/// Largest dimension accepted by the vectorized `N^2 x N^2` solver.
pub const FULL_SOLVE_MAX_DIM: usize = 40;

/// Single-particle density matrix `rho_mn = <c_n^dagger c_m>`.
#[derive(Debug, Clone)]
pub struct Spdm {
    pub matrix: CMatrix,
    pub layout: BlockLayout,
    pub time: f64,
}

impl Spdm {
    pub fn zeros(sys: &CompositeSystem) -> Self {
        let n = sys.dim();
        Spdm { matrix: DMatrix::zeros(n, n), layout: sys.layout, time: 0.0 }
    }

    /// The thermal target of the leads (empty lattice).
    pub fn target(sys: &CompositeSystem) -> Self {
        Spdm { matrix: sys.target.clone(), layout: sys.layout, time: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Check Hermiticity, diagonal range and eigenvalue range.
    pub fn check_physical(&self, tol: f64) -> Result<()> {
        let herm = crate::lattice::hermiticity_defect(&self.matrix);
        if herm > tol {
            return Err(Error::param("rho", format!("not Hermitian (defect {herm:.3e})")));
        }
        for i in 0..self.dim() {
            let d = self.matrix[(i, i)].re;
            if d < -tol || d > 1.0 + tol {
                return Err(Error::param("rho", format!("diagonal element {i} = {d} outside [0, 1]")));
            }
        }
        let eig = self.matrix.clone().symmetric_eigen();
        for &x in eig.eigenvalues.iter() {
            if x < -tol || x > 1.0 + tol {
                return Err(Error::param("rho", format!("eigenvalue {x} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn to_dump(&self) -> SpdmDump {
        let n = self.dim();
        let mut matrix = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let z = self.matrix[(i, j)];
                matrix.push([z.re, z.im]);
            }
        }
        SpdmDump { n, time: self.time, index_map: self.layout, matrix }
    }
}

/// JSON debugging dump `{N, index_map, matrix}`; matrix row-major `[re, im]`.
#[derive(Debug, Clone, Serialize)]
pub struct SpdmDump {
    #[serde(rename = "N")]
    pub n: usize,
    pub time: f64,
    pub index_map: BlockLayout,
    pub matrix: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    #[serde(alias = "TimeMarch")]
    TimeMarch,
    #[serde(alias = "SylvesterIteration")]
    SylvesterIteration,
    #[serde(alias = "FullLinearSolve")]
    FullLinearSolve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub method: SolverMethod,
    /// Initial time step of the Runge-Kutta integrator.
    pub dt: f64,
    /// Steady state is declared when the generator's max-abs entry falls below
    /// `residual_tol * max(1, max|target|)`.
    pub residual_tol: f64,
    /// Time horizon for time marching.
    pub max_time: f64,
    /// Refinement iterations of the Sylvester solver.
    pub max_iters: usize,
    /// Accepted-step budget of the integrator.
    pub max_steps: usize,
    /// Local error tolerance of the integrator (absolute and relative).
    pub step_tol: f64,
    /// Retry with time marching when the Sylvester route misses the tolerance.
    pub fallback: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: SolverMethod::SylvesterIteration,
            dt: 0.05,
            residual_tol: 1e-9,
            max_time: 1e6,
            max_iters: 20,
            max_steps: 5_000_000,
            step_tol: 1e-11,
            fallback: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.residual_tol > 0.0) {
            return Err(Error::param("residual_tol", format!("must be positive, got {}", self.residual_tol)));
        }
        if !(self.max_time > 0.0) {
            return Err(Error::param("max_time", format!("must be positive, got {}", self.max_time)));
        }
        if !(self.step_tol > 0.0) {
            return Err(Error::param("step_tol", format!("must be positive, got {}", self.step_tol)));
        }
        if self.max_iters == 0 || self.max_steps == 0 {
            return Err(Error::param("max_iters", "iteration budgets must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub method: SolverMethod,
    pub iterations: usize,
    pub residual: f64,
    pub wall_time_s: f64,
    pub dark_pairs: usize,
    pub warnings: Vec<String>,
}

/// Precomputed pieces of the generator for repeated application.
pub(crate) struct Generator {
    h: CMatrix,
    damping: Vec<f64>,
    source: CMatrix,
    kappa: f64,
    n_lattice: usize,
}

impl Generator {
    pub(crate) fn new(sys: &CompositeSystem, kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::param("kappa", format!("must be >= 0, got {kappa}")));
        }
        Ok(Generator {
            h: sys.hamiltonian.clone(),
            damping: sys.damping(kappa),
            source: sys.source(),
            kappa,
            n_lattice: sys.layout.lattice,
        })
    }

    pub(crate) fn dim(&self) -> usize {
        self.h.nrows()
    }

    /// Linear part plus source; `with_source = false` gives the homogeneous map.
    pub(crate) fn apply(&self, rho: &CMatrix, with_source: bool) -> CMatrix {
        let n = self.dim();
        let hr = &self.h * rho;
        let rh = rho * &self.h;
        let mut out = (hr - rh).map(|z| C64::new(z.im, -z.re));
        for j in 0..n {
            for i in 0..n {
                out[(i, j)] -= rho[(i, j)] * (self.damping[i] + self.damping[j]);
            }
        }
        for i in 0..self.n_lattice {
            out[(i, i)] += rho[(i, i)] * self.kappa;
        }
        if with_source {
            out += &self.source;
        }
        out
    }
}

/// `d rho / dt` for the full generator.
pub fn apply_liouvillian(sys: &CompositeSystem, rho: &CMatrix, kappa: f64) -> Result<CMatrix> {
    let n = sys.dim();
    if rho.nrows() != n || rho.ncols() != n {
        return Err(Error::Dimension(format!(
            "rho is {}x{}, system has dimension {n}",
            rho.nrows(),
            rho.ncols()
        )));
    }
    Ok(Generator::new(sys, kappa)?.apply(rho, true))
}

/// Max-abs generator entry at `rho`.
pub fn residual(sys: &CompositeSystem, rho: &CMatrix, kappa: f64) -> Result<f64> {
    Ok(crate::max_abs(&apply_liouvillian(sys, rho, kappa)?))
}

fn residual_scale(sys: &CompositeSystem) -> f64 {
    crate::max_abs(&sys.target).max(1.0)
}

/// Steady state with the configured method, starting time marching (if used)
/// from the empty state.
pub fn solve_steady_state(sys: &CompositeSystem, kappa: f64, cfg: &SolverConfig) -> Result<(Spdm, Diagnostics)> {
    solve_steady_state_from(sys, kappa, cfg, None)
}

/// As [`solve_steady_state`], with an optional initial state for time
/// marching (the direct methods ignore it).
pub fn solve_steady_state_from(
    sys: &CompositeSystem,
    kappa: f64,
    cfg: &SolverConfig,
    initial: Option<&Spdm>,
) -> Result<(Spdm, Diagnostics)> {
    cfg.validate()?;
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::param("kappa", format!("must be >= 0, got {kappa}")));
    }
    let start = Instant::now();
    let tol = cfg.residual_tol * residual_scale(sys);
    let mut warnings = Vec::new();
    if sys.epsilon == 0.0 {
        let msg = "epsilon = 0: lattice is decoupled and its steady state is not unique; \
                   the lattice block is taken from the initial (empty) state";
        warn!("{msg}");
        warnings.push(msg.to_string());
    }

    let outcome = match cfg.method {
        SolverMethod::SylvesterIteration => match sylvester_steady_state(sys, kappa, cfg, tol) {
            Ok(r) => Ok(r),
            Err(Error::NotConverged { residual, .. }) if cfg.fallback => {
                let msg = format!("Sylvester residual {residual:.3e} above tolerance; falling back to time marching");
                warn!("{msg}");
                warnings.push(msg);
                time_march_steady_state(sys, kappa, cfg, tol, initial)
            }
            Err(e) => Err(e),
        },
        SolverMethod::TimeMarch => time_march_steady_state(sys, kappa, cfg, tol, initial),
        SolverMethod::FullLinearSolve => {
            let rho = full_linear_steady_state(sys, kappa)?;
            let res = residual(sys, &rho, kappa)?;
            if res < tol {
                Ok(SteadyOutcome { rho, method: SolverMethod::FullLinearSolve, iterations: 1, residual: res, dark_pairs: 0 })
            } else {
                Err(Error::NotConverged { iterations: 1, residual: res })
            }
        }
    }?;

    let spdm = Spdm { matrix: outcome.rho, layout: sys.layout, time: f64::INFINITY };
    let diag = Diagnostics {
        method: outcome.method,
        iterations: outcome.iterations,
        residual: outcome.residual,
        wall_time_s: start.elapsed().as_secs_f64(),
        dark_pairs: outcome.dark_pairs,
        warnings,
    };
    Ok((spdm, diag))
}

struct SteadyOutcome {
    rho: CMatrix,
    method: SolverMethod,
    iterations: usize,
    residual: f64,
    dark_pairs: usize,
}

/// Solve `A rho + rho A^dagger = gamma rho~ + kappa diag_lattice(rho)`.
///
/// The dephasing term only feeds back the lattice populations `P`, and the
/// solution is affine in `P`: `rho(P) = rho_0 + kappa sum_l P_l G_l` with
/// `G_l` the response to a unit population source on site `l`. The
/// self-consistency `P = diag rho(P)` is an `L x L` linear system with
/// Jacobian `I - kappa M`, `M_ml = (G_l)_mm`. Newton steps with this exact
/// Jacobian, each evaluated through a fresh Sylvester solve, refine `P` until
/// the full generator residual meets the tolerance.
fn sylvester_steady_state(sys: &CompositeSystem, kappa: f64, cfg: &SolverConfig, tol: f64) -> Result<SteadyOutcome> {
    let solver = SylvesterSolver::new(sys.drift_matrix(kappa))?;
    let source = sys.source();
    let n_lat = sys.layout.lattice;
    let lattice: Vec<usize> = (0..n_lat).collect();

    let with_populations = |p: &[f64]| -> CMatrix {
        let mut c = source.clone();
        for (i, &pi) in p.iter().enumerate() {
            c[(i, i)] += C64::new(kappa * pi, 0.0);
        }
        solver.solve(&c)
    };

    let rho0 = solver.solve(&source);
    if kappa == 0.0 || sys.epsilon == 0.0 {
        let rho = hermitize(rho0);
        let res = residual(sys, &rho, kappa)?;
        return finish(rho, 1, res, tol, solver.dark_pairs());
    }

    let columns: Vec<Vec<f64>> = lattice
        .par_iter()
        .map(|&l| solver.unit_source_diagonal(l, &lattice))
        .collect();
    let jacobian = DMatrix::from_fn(n_lat, n_lat, |m, l| {
        let id = if m == l { 1.0 } else { 0.0 };
        id - kappa * columns[l][m]
    });
    let lu = jacobian.lu();

    let b = nalgebra::DVector::from_fn(n_lat, |m, _| rho0[(m, m)].re);
    let mut p = lu
        .solve(&b)
        .ok_or_else(|| Error::Decomposition("population Jacobian is singular".into()))?;

    let mut last = f64::INFINITY;
    for iter in 1..=cfg.max_iters {
        let rho = hermitize(with_populations(p.as_slice()));
        let res = residual(sys, &rho, kappa)?;
        if res < tol || iter == cfg.max_iters || res >= last {
            return finish(rho, iter, res, tol, solver.dark_pairs());
        }
        last = res;
        let mismatch = nalgebra::DVector::from_fn(n_lat, |m, _| rho[(m, m)].re - p[m]);
        let step = lu
            .solve(&mismatch)
            .ok_or_else(|| Error::Decomposition("population Jacobian is singular".into()))?;
        p += step;
    }
    unreachable!("max_iters validated positive")
}

fn finish(rho: CMatrix, iterations: usize, res: f64, tol: f64, dark_pairs: usize) -> Result<SteadyOutcome> {
    if res < tol {
        Ok(SteadyOutcome { rho, method: SolverMethod::SylvesterIteration, iterations, residual: res, dark_pairs })
    } else {
        Err(Error::NotConverged { iterations, residual: res })
    }
}

fn time_march_steady_state(
    sys: &CompositeSystem,
    kappa: f64,
    cfg: &SolverConfig,
    tol: f64,
    initial: Option<&Spdm>,
) -> Result<SteadyOutcome> {
    let gen = Generator::new(sys, kappa)?;
    let rho0 = match initial {
        Some(s) if s.dim() == sys.dim() => s.matrix.clone(),
        Some(s) => {
            return Err(Error::Dimension(format!("initial state has dimension {}, system {}", s.dim(), sys.dim())))
        }
        None => DMatrix::zeros(sys.dim(), sys.dim()),
    };
    let out = propagate::march(&gen, rho0, 0.0, cfg.max_time, cfg, Some(tol))?;
    if out.residual < tol {
        Ok(SteadyOutcome {
            rho: out.rho,
            method: SolverMethod::TimeMarch,
            iterations: out.steps,
            residual: out.residual,
            dark_pairs: 0,
        })
    } else {
        Err(Error::NotConverged { iterations: out.steps, residual: out.residual })
    }
}

pub(crate) fn hermitize(mut m: CMatrix) -> CMatrix {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
        m[(i, i)].im = 0.0;
    }
    m
}
