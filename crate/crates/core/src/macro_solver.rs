//! The limit problem: bulk diffusion in `Ω±` coupled through an interface
//! concentration `u₀^M` on `Σ`, which is the common trace of both bulk
//! solutions and obeys the flux-jump law
//! `|Z*| ∂_t u₀^M = −[D ∇u₀ · ν]_Σ + G0 − H0`.

use log::debug;

use crate::expr::{Env, Expr};
use crate::fields::{EffectiveData, FieldError, ProblemData};
use crate::geometry::MacroMesh;
use crate::linalg::CsrMatrix;
use crate::micro_solver::SolverError;
use crate::stepping::{integrate, TimeStepping};

/// Mass, stiffness and loads of the limit problem. Built without any
/// reference to the layer scaling exponent.
#[derive(Debug, Clone)]
pub struct MacroSystem {
    pub mesh: MacroMesh,
    /// `h²` per bulk cell, `|Z*| h` per interface cell
    pub mass: Vec<f64>,
    pub stiffness: CsrMatrix,
    f_plus: Expr,
    f_minus: Expr,
    eff: EffectiveData,
}

impl MacroSystem {
    pub fn n(&self) -> usize {
        self.mass.len()
    }

    pub fn load(&self, t: f64) -> Vec<f64> {
        let mesh = &self.mesh;
        let area = mesh.h * mesh.h;
        let mut out = vec![0.0; self.n()];
        for j in 0..mesh.ny {
            let d = mesh.row_offset(j);
            for i in 0..mesh.nx {
                let x1 = mesh.x1(i);
                out[mesh.plus(i, j)] = area * self.f_plus.eval(&Env::new(t, [x1, d], [0.0; 2]));
                out[mesh.minus(i, j)] = area * self.f_minus.eval(&Env::new(t, [x1, -d], [0.0; 2]));
            }
        }
        for i in 0..mesh.nx {
            let x1 = mesh.x1(i);
            out[mesh.interface(i)] = mesh.h * (self.eff.g0(t, x1) - self.eff.h0(t, x1));
        }
        out
    }

    /// `∫u⁺ + ∫u⁻ + |Z*| ∫_Σ u^M`
    pub fn total_mass(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.mass).map(|(u, m)| u * m).sum()
    }
}

pub fn assemble_macro(mesh: &MacroMesh, data: &ProblemData, eff: &EffectiveData) -> MacroSystem {
    let (dp, dm) = (data.diffusion.d_plus, data.diffusion.d_minus);
    let n = mesh.n_unknowns();
    let mut mass = vec![mesh.h * mesh.h; n];
    for i in 0..mesh.nx {
        mass[mesh.interface(i)] = eff.z_star_area * mesh.h;
    }
    let mut t = Vec::with_capacity(5 * n);
    let mut link = |a: usize, b: usize, c: f64| {
        t.push((a, a, c));
        t.push((b, b, c));
        t.push((a, b, -c));
        t.push((b, a, -c));
    };
    for (d, idx) in [
        (
            dp,
            &(|i, j| mesh.plus(i, j)) as &dyn Fn(usize, usize) -> usize,
        ),
        (dm, &|i, j| mesh.minus(i, j)),
    ] {
        for j in 0..mesh.ny {
            for i in 0..mesh.nx {
                if i + 1 < mesh.nx {
                    link(idx(i, j), idx(i + 1, j), d);
                }
                if j + 1 < mesh.ny {
                    link(idx(i, j), idx(i, j + 1), d);
                }
            }
        }
        // half-cell flux to the shared trace unknown
        for i in 0..mesh.nx {
            link(idx(i, 0), mesh.interface(i), 2.0 * d);
        }
    }
    let stiffness = CsrMatrix::from_triplets(n, t);
    MacroSystem {
        mesh: *mesh,
        mass,
        stiffness,
        f_plus: data.sources.f_plus.clone(),
        f_minus: data.sources.f_minus.clone(),
        eff: eff.clone(),
    }
}

pub fn initial_macro(mesh: &MacroMesh, data: &ProblemData, eff: &EffectiveData) -> Vec<f64> {
    let mut u = vec![0.0; mesh.n_unknowns()];
    for j in 0..mesh.ny {
        let d = mesh.row_offset(j);
        for i in 0..mesh.nx {
            let x1 = mesh.x1(i);
            u[mesh.plus(i, j)] = data.initial.u_plus.eval(&Env::new(0.0, [x1, d], [0.0; 2]));
            u[mesh.minus(i, j)] = data
                .initial
                .u_minus
                .eval(&Env::new(0.0, [x1, -d], [0.0; 2]));
        }
    }
    for i in 0..mesh.nx {
        u[mesh.interface(i)] = eff.u_m_init_avg(mesh.x1(i));
    }
    u
}

/// Snapshot view of one macro state vector.
#[derive(Debug, Clone, Copy)]
pub struct MacroState<'a> {
    pub t: f64,
    pub u_plus: &'a [f64],
    pub u_minus: &'a [f64],
    pub u_m: &'a [f64],
}

impl MacroState<'_> {
    /// Trace of the `Ω⁺` column on `Σ`.
    pub fn trace_plus(&self) -> &[f64] {
        self.u_m
    }

    /// Trace of the `Ω⁻` column on `Σ`.
    pub fn trace_minus(&self) -> &[f64] {
        self.u_m
    }
}

#[derive(Debug, Clone)]
pub struct MacroSolution {
    pub mesh: MacroMesh,
    pub theta: f64,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub balance_defect: f64,
    pub initial_mass: f64,
    pub final_mass: f64,
    pub cg_iterations: usize,
}

impl MacroSolution {
    pub fn state(&self, k: usize) -> MacroState<'_> {
        let nb = self.mesh.n_bulk();
        let v = &self.values[k];
        MacroState {
            t: self.times[k],
            u_plus: &v[..nb],
            u_minus: &v[nb..2 * nb],
            u_m: &v[2 * nb..],
        }
    }

    pub fn last(&self) -> MacroState<'_> {
        self.state(self.values.len() - 1)
    }
}

pub fn solve_macro(
    mesh: &MacroMesh,
    data: &ProblemData,
    eff: &EffectiveData,
    stepping: TimeStepping,
    stride: usize,
) -> Result<MacroSolution, SolverError> {
    stepping.validate()?;
    if !(data.diffusion.d_plus > 0.0 && data.diffusion.d_minus > 0.0) {
        return Err(FieldError::NonPositiveBulkDiffusion.into());
    }
    let sys = assemble_macro(mesh, data, eff);
    let u0 = initial_macro(mesh, data, eff);
    let run = integrate(
        &sys.mass,
        &sys.stiffness,
        stepping,
        u0,
        |t| sys.load(t),
        stride,
    )
    .map_err(|f| SolverError::LinearSolveDiverged {
        step: f.step,
        source: f.source,
    })?;
    debug!(
        "macro solve h = {}: {} unknowns, {} CG iterations",
        mesh.h,
        mesh.n_unknowns(),
        run.cg_iterations
    );
    Ok(MacroSolution {
        mesh: *mesh,
        theta: stepping.theta,
        times: run.times,
        values: run.values,
        balance_defect: run.balance_defect,
        initial_mass: run.initial_mass,
        final_mass: run.final_mass,
        cg_iterations: run.cg_iterations,
    })
}
