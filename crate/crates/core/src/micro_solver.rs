//! Finite-volume discretization of the ε-problem: bulk diffusion above and
//! below the layer, scaled diffusion `ε^γ D^M(x/ε)` in the channels, and
//! the `1/ε`-weighted storage term of the channel equation.
//!
//! Unknowns live at active cell centres. Fluxes use two-point differences
//! with the harmonic mean of the adjacent cell coefficients, which also
//! carries the transmission conditions across `S^±_{*,ε}`.

use log::debug;
use thiserror::Error;

use crate::expr::{Env, Expr};
use crate::fields::{FieldError, ProblemData};
use crate::geometry::{CellKind, Eps, FaceKind, MicroMesh};
use crate::linalg::{CsrMatrix, SolveError};
use crate::stepping::{integrate, SteppingError, ThetaStepper, TimeStepping};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("γ = {0} is outside [-1, 1)")]
    GammaOutOfRange(f64),
    #[error(transparent)]
    Stepping(#[from] SteppingError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("linear solve failed at step {step}: {source}")]
    LinearSolveDiverged {
        step: usize,
        #[source]
        source: SolveError,
    },
    #[error("step would pass the horizon T = {0}")]
    HorizonExceeded(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicroConfig {
    pub gamma: f64,
    pub stepping: TimeStepping,
}

impl MicroConfig {
    pub fn new(gamma: f64, stepping: TimeStepping) -> Result<Self, SolverError> {
        if !(-1.0..1.0).contains(&gamma) {
            return Err(SolverError::GammaOutOfRange(gamma));
        }
        stepping.validate()?;
        Ok(MicroConfig { gamma, stepping })
    }
}

/// `2ab / (a + b)`
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    FPlus,
    FMinus,
    G,
}

#[derive(Debug, Clone)]
struct CellLoad {
    cell: usize,
    weight: f64,
    source: Source,
    x: [f64; 2],
    y: [f64; 2],
}

#[derive(Debug, Clone)]
struct WallLoad {
    cell: usize,
    weight: f64,
    x: [f64; 2],
    y: [f64; 2],
}

/// Mass, stiffness and load recipe of the semi-discrete system
/// `M u' + K u = F(t)`.
#[derive(Debug, Clone)]
pub struct DiscreteSystem {
    pub eps: Eps,
    pub gamma: f64,
    /// `h²` in bulk cells, `h²/ε` in channel cells
    pub mass: Vec<f64>,
    pub stiffness: CsrMatrix,
    /// cell coefficient: `D±` in bulk, `ε^γ D^M(y)` in channels
    pub diffusivity: Vec<f64>,
    f_plus: Expr,
    f_minus: Expr,
    g: Expr,
    h: Expr,
    cell_loads: Vec<CellLoad>,
    wall_loads: Vec<WallLoad>,
}

impl DiscreteSystem {
    pub fn n(&self) -> usize {
        self.mass.len()
    }

    /// Load vector: `∫ f` in bulk cells, `(1/ε) ∫ g` in channel cells, and
    /// `−∫ h dS` on lateral wall faces.
    pub fn load(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for l in &self.cell_loads {
            let e = match l.source {
                Source::FPlus => &self.f_plus,
                Source::FMinus => &self.f_minus,
                Source::G => &self.g,
            };
            out[l.cell] += l.weight * e.eval(&Env::new(t, l.x, l.y));
        }
        for w in &self.wall_loads {
            out[w.cell] += w.weight * self.h.eval(&Env::new(t, w.x, w.y));
        }
        out
    }

    /// Discrete `(u, 1)_{L_ε}`.
    pub fn scaled_mass(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.mass).map(|(u, m)| u * m).sum()
    }

    pub fn stepper(&self, stepping: TimeStepping) -> ThetaStepper {
        ThetaStepper::new(&self.mass, &self.stiffness, stepping)
    }
}

fn nonzero(e: &Expr) -> bool {
    e.as_const() != Some(0.0)
}

pub fn assemble(
    mesh: &MicroMesh,
    data: &ProblemData,
    cfg: &MicroConfig,
) -> Result<DiscreteSystem, SolverError> {
    if !(-1.0..1.0).contains(&cfg.gamma) {
        return Err(SolverError::GammaOutOfRange(cfg.gamma));
    }
    let d = &data.diffusion;
    if !(d.d_plus > 0.0 && d.d_minus > 0.0) {
        return Err(FieldError::NonPositiveBulkDiffusion.into());
    }
    let eps = mesh.eps.value();
    let scale = eps.powf(cfg.gamma);
    let area = mesh.cell_area();
    let n = mesh.n_active();

    let mut mass = Vec::with_capacity(n);
    let mut diffusivity = Vec::with_capacity(n);
    let mut cell_loads = Vec::new();
    let src = &data.sources;
    for (idx, c) in mesh.cells().iter().enumerate() {
        match c.kind {
            CellKind::BulkPlus => {
                mass.push(area);
                diffusivity.push(d.d_plus);
                if nonzero(&src.f_plus) {
                    cell_loads.push(CellLoad {
                        cell: idx,
                        weight: area,
                        source: Source::FPlus,
                        x: c.center,
                        y: [0.0; 2],
                    });
                }
            }
            CellKind::BulkMinus => {
                mass.push(area);
                diffusivity.push(d.d_minus);
                if nonzero(&src.f_minus) {
                    cell_loads.push(CellLoad {
                        cell: idx,
                        weight: area,
                        source: Source::FMinus,
                        x: c.center,
                        y: [0.0; 2],
                    });
                }
            }
            CellKind::Channel => {
                let y = c.fast.expect("channel cells carry fast coordinates");
                let dm = d.d_m.eval(&Env::new(0.0, c.center, y));
                if !(dm >= d.c0) {
                    return Err(FieldError::DiffusionBelowBound {
                        value: dm,
                        y1: y[0],
                        yn: y[1],
                        c0: d.c0,
                    }
                    .into());
                }
                mass.push(area / eps);
                diffusivity.push(scale * dm);
                if nonzero(&src.g) {
                    cell_loads.push(CellLoad {
                        cell: idx,
                        weight: area / eps,
                        source: Source::G,
                        x: c.center,
                        y,
                    });
                }
            }
            CellKind::Void => unreachable!("void cells are not active"),
        }
    }

    let mut triplets = Vec::with_capacity(4 * mesh.faces().len());
    let mut wall_loads = Vec::new();
    for f in mesh.faces() {
        match (f.kind, f.b) {
            (FaceKind::Interior | FaceKind::TopInterface | FaceKind::BottomInterface, Some(b)) => {
                // face length h over centre distance h
                let t = harmonic_mean(diffusivity[f.a], diffusivity[b]);
                triplets.push((f.a, f.a, t));
                triplets.push((b, b, t));
                triplets.push((f.a, b, -t));
                triplets.push((b, f.a, -t));
            }
            (FaceKind::Lateral, _) if nonzero(&src.h) => {
                wall_loads.push(WallLoad {
                    cell: f.a,
                    weight: -mesh.h,
                    x: f.midpoint,
                    y: f.fast.expect("lateral faces carry fast coordinates"),
                });
            }
            _ => {}
        }
    }
    let stiffness = CsrMatrix::from_triplets(n, triplets);
    debug!(
        "assembled micro system: eps = {eps}, gamma = {}, {n} unknowns, {} nonzeros",
        cfg.gamma,
        stiffness.nnz()
    );
    Ok(DiscreteSystem {
        eps: mesh.eps,
        gamma: cfg.gamma,
        mass,
        stiffness,
        diffusivity,
        f_plus: src.f_plus.clone(),
        f_minus: src.f_minus.clone(),
        g: src.g.clone(),
        h: src.h.clone(),
        cell_loads,
        wall_loads,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroState {
    pub t: f64,
    pub step: usize,
    pub u: Vec<f64>,
    /// `Σ M u`, the discrete `(u, 1)_{L_ε}`
    pub mass: f64,
    /// accumulated `∫ 1ᵀF dt` under the θ-rule
    pub supplied: f64,
    pub iterations: usize,
}

impl MicroState {
    pub fn initial(sys: &DiscreteSystem, u: Vec<f64>) -> Self {
        MicroState {
            t: 0.0,
            step: 0,
            mass: sys.scaled_mass(&u),
            u,
            supplied: 0.0,
            iterations: 0,
        }
    }
}

/// Initial values: `u_i±` in bulk cells and `u_i^M(x̄, x/ε)` in channels.
pub fn initial_values(mesh: &MicroMesh, data: &ProblemData) -> Vec<f64> {
    let init = &data.initial;
    mesh.cells()
        .iter()
        .map(|c| match c.kind {
            CellKind::BulkPlus => init.u_plus.eval(&Env::new(0.0, c.center, [0.0; 2])),
            CellKind::BulkMinus => init.u_minus.eval(&Env::new(0.0, c.center, [0.0; 2])),
            _ => init
                .u_m
                .eval(&Env::new(0.0, c.center, c.fast.unwrap_or([0.0; 2]))),
        })
        .collect()
}

fn advance(
    state: &MicroState,
    sys: &DiscreteSystem,
    stepper: &ThetaStepper,
    load_old: &[f64],
    load_new: &[f64],
) -> Result<MicroState, SolverError> {
    let s = stepper.stepping();
    let (u, stats) = stepper
        .advance(&state.u, load_old, load_new)
        .map_err(|source| SolverError::LinearSolveDiverged {
            step: state.step + 1,
            source,
        })?;
    let supplied_new: f64 = load_new.iter().sum();
    let supplied_old: f64 = load_old.iter().sum();
    Ok(MicroState {
        t: state.t + s.dt,
        step: state.step + 1,
        mass: sys.scaled_mass(&u),
        u,
        supplied: state.supplied + s.dt * (s.theta * supplied_new + (1.0 - s.theta) * supplied_old),
        iterations: stats.iterations,
    })
}

/// One θ-step.
pub fn step(
    state: &MicroState,
    sys: &DiscreteSystem,
    stepper: &ThetaStepper,
) -> Result<MicroState, SolverError> {
    let s = stepper.stepping();
    if state.t + s.dt > s.t_end + 1e-9 * s.dt {
        return Err(SolverError::HorizonExceeded(s.t_end));
    }
    advance(
        state,
        sys,
        stepper,
        &sys.load(state.t),
        &sys.load(state.t + s.dt),
    )
}

/// Time series of the microscopic solution at stored snapshots.
#[derive(Debug, Clone)]
pub struct MicroSolution {
    pub eps: Eps,
    pub gamma: f64,
    pub theta: f64,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// worst `|Σ M uⁿ − Σ M u⁰ − supplied|` over all steps
    pub balance_defect: f64,
    /// initial `Σ M u⁰`
    pub initial_mass: f64,
    pub final_mass: f64,
    pub cg_iterations: usize,
}

impl MicroSolution {
    pub fn final_values(&self) -> &[f64] {
        self.values.last().expect("at least the initial snapshot")
    }
}

/// Run the θ-scheme to `T`, keeping every `stride`-th state plus the last.
pub fn solve(
    mesh: &MicroMesh,
    data: &ProblemData,
    cfg: &MicroConfig,
    stride: usize,
) -> Result<MicroSolution, SolverError> {
    let sys = assemble(mesh, data, cfg)?;
    solve_system(&sys, initial_values(mesh, data), cfg, stride)
}

pub fn solve_system(
    sys: &DiscreteSystem,
    u0: Vec<f64>,
    cfg: &MicroConfig,
    stride: usize,
) -> Result<MicroSolution, SolverError> {
    let run = integrate(
        &sys.mass,
        &sys.stiffness,
        cfg.stepping,
        u0,
        |t| sys.load(t),
        stride,
    )
    .map_err(|f| SolverError::LinearSolveDiverged {
        step: f.step,
        source: f.source,
    })?;
    debug!(
        "micro solve eps = {}, gamma = {}: {} steps, {} CG iterations",
        sys.eps.value(),
        cfg.gamma,
        cfg.stepping.steps(),
        run.cg_iterations
    );
    Ok(MicroSolution {
        eps: sys.eps,
        gamma: cfg.gamma,
        theta: cfg.stepping.theta,
        times: run.times,
        values: run.values,
        balance_defect: run.balance_defect,
        initial_mass: run.initial_mass,
        final_mass: run.final_mass,
        cg_iterations: run.cg_iterations,
    })
}
