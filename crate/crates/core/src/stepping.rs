//! θ-scheme time integration shared by the microscopic and limit solvers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{conjugate_gradient, CgStats, CsrMatrix, SolveError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteppingError {
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("θ must be 1 (implicit Euler) or 1/2 (Crank-Nicolson), got {0}")]
    UnsupportedTheta(f64),
    #[error("horizon T = {t_end} is not an integer multiple of dt = {dt}")]
    HorizonNotMultiple { t_end: f64, dt: f64 },
    #[error("linear solver tolerance must be positive")]
    NonPositiveTolerance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeStepping {
    pub dt: f64,
    pub t_end: f64,
    pub theta: f64,
    pub lin_tol: f64,
    pub lin_maxit: usize,
}

impl TimeStepping {
    pub fn new(
        dt: f64,
        t_end: f64,
        theta: f64,
        lin_tol: f64,
        lin_maxit: usize,
    ) -> Result<Self, SteppingError> {
        let s = TimeStepping {
            dt,
            t_end,
            theta,
            lin_tol,
            lin_maxit,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn implicit_euler(dt: f64, t_end: f64) -> Result<Self, SteppingError> {
        TimeStepping::new(dt, t_end, 1.0, 1e-12, 20_000)
    }

    pub fn validate(&self) -> Result<(), SteppingError> {
        if !(self.dt > 0.0) {
            return Err(SteppingError::NonPositiveStep(self.dt));
        }
        if self.theta != 1.0 && self.theta != 0.5 {
            return Err(SteppingError::UnsupportedTheta(self.theta));
        }
        if !(self.lin_tol > 0.0) {
            return Err(SteppingError::NonPositiveTolerance);
        }
        let n = (self.t_end / self.dt).round();
        if n < 1.0 || (n * self.dt - self.t_end).abs() > 1e-9 * self.t_end.abs().max(self.dt) {
            return Err(SteppingError::HorizonNotMultiple {
                t_end: self.t_end,
                dt: self.dt,
            });
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }
}

/// Advances `M u' + K u = F(t)` by
/// `(M + θ dt K) uⁿ⁺¹ = (M − (1−θ) dt K) uⁿ + dt (θ Fⁿ⁺¹ + (1−θ) Fⁿ)`.
#[derive(Debug, Clone)]
pub struct ThetaStepper {
    system: CsrMatrix,
    stiffness: CsrMatrix,
    mass: Vec<f64>,
    stepping: TimeStepping,
}

impl ThetaStepper {
    pub fn new(mass: &[f64], stiffness: &CsrMatrix, stepping: TimeStepping) -> Self {
        let system = stiffness.scaled_plus_diagonal(stepping.theta * stepping.dt, mass, 1.0);
        ThetaStepper {
            system,
            stiffness: stiffness.clone(),
            mass: mass.to_vec(),
            stepping,
        }
    }

    pub fn stepping(&self) -> &TimeStepping {
        &self.stepping
    }

    pub fn advance(
        &self,
        u: &[f64],
        load_old: &[f64],
        load_new: &[f64],
    ) -> Result<(Vec<f64>, CgStats), SolveError> {
        self.advance_from(u, u.to_vec(), load_old, load_new)
    }

    /// As [`advance`](Self::advance) with an explicit initial guess for the
    /// linear solve.
    pub fn advance_from(
        &self,
        u: &[f64],
        guess: Vec<f64>,
        load_old: &[f64],
        load_new: &[f64],
    ) -> Result<(Vec<f64>, CgStats), SolveError> {
        let TimeStepping { dt, theta, .. } = self.stepping;
        let mut rhs: Vec<f64> = u.iter().zip(&self.mass).map(|(u, m)| m * u).collect();
        if theta < 1.0 {
            let ku = self.stiffness.mul_vec(u);
            for (r, k) in rhs.iter_mut().zip(&ku) {
                *r -= (1.0 - theta) * dt * k;
            }
        }
        for i in 0..rhs.len() {
            rhs[i] += dt * (theta * load_new[i] + (1.0 - theta) * load_old[i]);
        }
        let mut next = guess;
        let stats = conjugate_gradient(
            &self.system,
            &rhs,
            &mut next,
            self.stepping.lin_tol,
            self.stepping.lin_maxit,
        )?;
        Ok((next, stats))
    }
}

/// Stored snapshots and balance bookkeeping of a θ-scheme run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// worst `|Σ M uⁿ − Σ M u⁰ − Σ_k dt 1ᵀ(θ Fᵏ⁺¹ + (1−θ) Fᵏ)|` over all steps
    pub balance_defect: f64,
    pub initial_mass: f64,
    pub final_mass: f64,
    pub cg_iterations: usize,
}

/// Failure inside [`integrate`], tagged with the 1-based step number.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFailure {
    pub step: usize,
    pub source: SolveError,
}

/// Run `M u' + K u = F(t)` from `u0` to `T`, keeping every `stride`-th
/// state plus the last.
pub fn integrate(
    mass: &[f64],
    stiffness: &CsrMatrix,
    stepping: TimeStepping,
    u0: Vec<f64>,
    load: impl Fn(f64) -> Vec<f64>,
    stride: usize,
) -> Result<Trajectory, StepFailure> {
    let stride = stride.max(1);
    let stepper = ThetaStepper::new(mass, stiffness, stepping);
    let weigh = |u: &[f64]| -> f64 { u.iter().zip(mass).map(|(u, m)| u * m).sum() };
    let steps = stepping.steps();
    let initial_mass = weigh(&u0);
    let mut u = u0;
    let mut previous: Option<Vec<f64>> = None;
    let mut times = vec![0.0];
    let mut values = vec![u.clone()];
    let mut load_old = load(0.0);
    let mut supplied = 0.0;
    let mut balance_defect: f64 = 0.0;
    let mut cg_iterations = 0;
    let mut current = initial_mass;
    for n in 1..=steps {
        let t = stepping.time(n);
        let load_new = load(t);
        // linear extrapolation of the last two states as the CG start
        let guess = match &previous {
            Some(p) => u.iter().zip(p).map(|(a, b)| 2.0 * a - b).collect(),
            None => u.clone(),
        };
        let (next, stats) = stepper
            .advance_from(&u, guess, &load_old, &load_new)
            .map_err(|source| StepFailure { step: n, source })?;
        previous = Some(std::mem::replace(&mut u, next));
        cg_iterations += stats.iterations;
        let (s_new, s_old): (f64, f64) = (load_new.iter().sum(), load_old.iter().sum());
        supplied += stepping.dt * (stepping.theta * s_new + (1.0 - stepping.theta) * s_old);
        current = weigh(&u);
        balance_defect = balance_defect.max((current - initial_mass - supplied).abs());
        if n % stride == 0 || n == steps {
            times.push(t);
            values.push(u.clone());
        }
        load_old = load_new;
    }
    Ok(Trajectory {
        times,
        values,
        balance_defect,
        initial_mass,
        final_mass: current,
        cg_iterations,
    })
}
