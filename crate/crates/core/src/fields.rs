//! Problem data: diffusion coefficients, reaction terms, boundary and
//! initial data, and the cell-averaged quantities entering the limit model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Env, Expr, ExprError, Var};
use crate::geometry::{Channel, EdgeClass, EdgeSide, Eps};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("expression for '{field}': {source}")]
    Parse {
        field: &'static str,
        #[source]
        source: ExprError,
    },
    #[error("point ({0}, {1}) does not fall inside a channel copy")]
    PointOutsideChannel(f64, f64),
    #[error("bulk diffusion coefficients must be positive")]
    NonPositiveBulkDiffusion,
    #[error("D_M = {value} at y = ({y1}, {yn}) is below the declared bound c0 = {c0}")]
    DiffusionBelowBound {
        value: f64,
        y1: f64,
        yn: f64,
        c0: f64,
    },
    #[error("'{field}' is not 1-periodic in y1 (differs at y = ({y1}, {yn}))")]
    NotPeriodic {
        field: &'static str,
        y1: f64,
        yn: f64,
    },
    #[error("'{field}' evaluates to a non-finite value")]
    NonFinite { field: &'static str },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionData {
    pub d_plus: f64,
    pub d_minus: f64,
    /// `D^M(y)`, periodic in `ȳ`
    pub d_m: Expr,
    pub c0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceData {
    pub f_plus: Expr,
    pub f_minus: Expr,
    /// `g(t, x̄, y)`; the channel source is `g(t, x̄, x/ε)`
    pub g: Expr,
    /// `h(t, x̄, y)` on the lateral walls
    pub h: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub u_plus: Expr,
    pub u_minus: Expr,
    /// `u_i^M(x̄, y)`
    pub u_m: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    pub diffusion: DiffusionData,
    pub sources: SourceData,
    pub initial: InitialData,
}

/// String form of [`ProblemData`] as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    pub d_plus: f64,
    pub d_minus: f64,
    pub d_m: String,
    pub c0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub f_plus: String,
    pub f_minus: String,
    pub g: String,
    pub h: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialSpec {
    pub u_plus: String,
    pub u_minus: String,
    pub u_m: String,
}

fn parse_field(field: &'static str, s: &str) -> Result<Expr, FieldError> {
    s.parse()
        .map_err(|source| FieldError::Parse { field, source })
}

impl DiffusionSpec {
    pub fn build(&self) -> Result<DiffusionData, FieldError> {
        Ok(DiffusionData {
            d_plus: self.d_plus,
            d_minus: self.d_minus,
            d_m: parse_field("d_m", &self.d_m)?,
            c0: self.c0,
        })
    }
}

impl SourceSpec {
    pub fn build(&self) -> Result<SourceData, FieldError> {
        Ok(SourceData {
            f_plus: parse_field("f_plus", &self.f_plus)?,
            f_minus: parse_field("f_minus", &self.f_minus)?,
            g: parse_field("g", &self.g)?,
            h: parse_field("h", &self.h)?,
        })
    }
}

impl InitialSpec {
    pub fn build(&self) -> Result<InitialData, FieldError> {
        Ok(InitialData {
            u_plus: parse_field("u_plus", &self.u_plus)?,
            u_minus: parse_field("u_minus", &self.u_minus)?,
            u_m: parse_field("u_m", &self.u_m)?,
        })
    }
}

impl ProblemData {
    /// Zero reactions, constant diffusion `d` everywhere, constant initial value.
    pub fn constant(d: f64, u0: f64) -> Self {
        ProblemData {
            diffusion: DiffusionData {
                d_plus: d,
                d_minus: d,
                d_m: Expr::c(d),
                c0: d,
            },
            sources: SourceData {
                f_plus: Expr::zero(),
                f_minus: Expr::zero(),
                g: Expr::zero(),
                h: Expr::zero(),
            },
            initial: InitialData {
                u_plus: Expr::c(u0),
                u_minus: Expr::c(u0),
                u_m: Expr::c(u0),
            },
        }
    }

    /// Check positivity of `D±`, the lower bound on `D^M`, periodicity in
    /// `ȳ` of all fast-variable fields and finiteness, on a sample lattice.
    pub fn validate(&self, channel: &Channel, t_end: f64) -> Result<(), FieldError> {
        let d = &self.diffusion;
        if !(d.d_plus > 0.0 && d.d_minus > 0.0 && d.c0 > 0.0) {
            return Err(FieldError::NonPositiveBulkDiffusion);
        }
        let ys = sample_points(channel, 8);
        let slow = [0.0, 0.37, 0.81];
        let times = [0.0, 0.5 * t_end, t_end];
        for &y in &ys {
            let v = d.d_m.eval(&Env::new(0.0, [0.0, 0.0], y));
            if !v.is_finite() {
                return Err(FieldError::NonFinite { field: "d_m" });
            }
            if v < d.c0 {
                return Err(FieldError::DiffusionBelowBound {
                    value: v,
                    y1: y[0],
                    yn: y[1],
                    c0: d.c0,
                });
            }
        }
        let fast_fields: [(&'static str, &Expr); 4] = [
            ("d_m", &d.d_m),
            ("g", &self.sources.g),
            ("h", &self.sources.h),
            ("u_m", &self.initial.u_m),
        ];
        for (name, e) in fast_fields {
            for &t in &times {
                for &x in &slow {
                    for &y in &ys {
                        let a = e.eval(&Env::new(t, [x, 0.0], y));
                        let b = e.eval(&Env::new(t, [x, 0.0], [y[0] + 1.0, y[1]]));
                        if !a.is_finite() {
                            return Err(FieldError::NonFinite { field: name });
                        }
                        if (a - b).abs() > 1e-10 * (1.0 + a.abs()) {
                            return Err(FieldError::NotPeriodic {
                                field: name,
                                y1: y[0],
                                yn: y[1],
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Midpoints of an `n × n` subdivision of every raster square of `Z*`.
fn sample_points(channel: &Channel, n: usize) -> Vec<[f64; 2]> {
    volume_rule(channel, n)
        .into_iter()
        .map(|(y, _)| y)
        .collect()
}

/// Evaluate a fast-variable field at the physical point `x`: returns
/// `field(t, x̄, x/ε)` with `ȳ` reduced into `[0, 1)`.
pub fn eval_fast(
    field: &Expr,
    channel: &Channel,
    t: f64,
    x: [f64; 2],
    eps: Eps,
) -> Result<f64, FieldError> {
    let y = fast_coordinate(x, eps);
    if !channel.contains_closed(y, 1e-12) {
        return Err(FieldError::PointOutsideChannel(x[0], x[1]));
    }
    Ok(field.eval(&Env::new(t, x, y)))
}

pub fn fast_coordinate(x: [f64; 2], eps: Eps) -> [f64; 2] {
    let inv = eps.inverse() as f64;
    let y1 = x[0] * inv;
    [y1 - y1.floor(), x[1] * inv]
}

/// Two-point Gauss-Legendre nodes on `[0, s]`, as offsets (weights `s/2`).
fn gauss2(s: f64) -> [f64; 2] {
    let d = 0.5 * s / 3f64.sqrt();
    [0.5 * s - d, 0.5 * s + d]
}

/// Composite two-point Gauss rule over `Z*`: each `1/q` raster square is
/// split into `n × n` sub-squares with four nodes each, so polynomials of
/// degree 3 per sub-square are integrated exactly. Weights sum to `|Z*|`.
pub fn volume_rule(channel: &Channel, n: usize) -> Vec<([f64; 2], f64)> {
    let q = channel.den() as f64;
    let s = 1.0 / (q * n as f64);
    let nodes = gauss2(s);
    let mut out = Vec::new();
    let qi = channel.den() as i64;
    for b in 0..2 * qi {
        for a in 0..qi {
            if !channel.contains_square(a, b) {
                continue;
            }
            for jb in 0..n {
                for ja in 0..n {
                    let y1 = a as f64 / q + ja as f64 * s;
                    let yn = -1.0 + b as f64 / q + jb as f64 * s;
                    for gb in nodes {
                        for ga in nodes {
                            out.push(([y1 + ga, yn + gb], 0.25 * s * s));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Composite two-point Gauss rule over the lateral boundary `N`. Weights
/// sum to `|N|`.
pub fn lateral_rule(channel: &Channel, n: usize) -> Vec<([f64; 2], f64)> {
    let q = channel.den() as f64;
    let s = 1.0 / (q * n as f64);
    let nodes = gauss2(s);
    let mut out = Vec::new();
    for (a, b, side, class) in channel.boundary_edges() {
        if class != EdgeClass::Lateral {
            continue;
        }
        let (a, b) = (a as f64 / q, -1.0 + b as f64 / q);
        for k in 0..n {
            for g in nodes {
                let u = k as f64 * s + g;
                let y = match side {
                    EdgeSide::Left => [a, b + u],
                    EdgeSide::Right => [a + 1.0 / q, b + u],
                    EdgeSide::Bottom => [a + u, b],
                    EdgeSide::Top => [a + u, b + 1.0 / q],
                };
                out.push((y, 0.5 * s));
            }
        }
    }
    out
}

/// Cell-averaged data of the limit problem.
#[derive(Debug, Clone)]
pub struct EffectiveData {
    pub z_star_area: f64,
    pub lateral_length: f64,
    volume: Vec<([f64; 2], f64)>,
    surface: Vec<([f64; 2], f64)>,
    g: Expr,
    h: Expr,
    u_m: Expr,
}

impl EffectiveData {
    /// `G0(t, x̄) = ∫_{Z*} g(t, x̄, y) dy`
    pub fn g0(&self, t: f64, x1: f64) -> f64 {
        self.volume
            .iter()
            .map(|&(y, w)| w * self.g.eval(&Env::new(t, [x1, 0.0], y)))
            .sum()
    }

    /// `H0(t, x̄) = ∫_N h(t, x̄, y) dS(y)`
    pub fn h0(&self, t: f64, x1: f64) -> f64 {
        self.surface
            .iter()
            .map(|&(y, w)| w * self.h.eval(&Env::new(t, [x1, 0.0], y)))
            .sum()
    }

    /// `(1/|Z*|) ∫_{Z*} u_i^M(x̄, y) dy`
    pub fn u_m_init_avg(&self, x1: f64) -> f64 {
        let (s, area) = self.volume.iter().fold((0.0, 0.0), |(s, a), &(y, w)| {
            (s + w * self.u_m.eval(&Env::new(0.0, [x1, 0.0], y)), a + w)
        });
        s / area
    }

    /// `∫_{Z*} ψ(t, x̄, y) dy` for an arbitrary fast-variable expression.
    pub fn cell_integral(&self, psi: &Expr, t: f64, x1: f64) -> f64 {
        self.volume
            .iter()
            .map(|&(y, w)| w * psi.eval(&Env::new(t, [x1, 0.0], y)))
            .sum()
    }

    /// `∫_N ψ(t, x̄, y) dS(y)`
    pub fn lateral_integral(&self, psi: &Expr, t: f64, x1: f64) -> f64 {
        self.surface
            .iter()
            .map(|&(y, w)| w * psi.eval(&Env::new(t, [x1, 0.0], y)))
            .sum()
    }

    /// Replace `|Z*|` in the interface law (used for the degenerate
    /// flux-continuity check).
    pub fn with_z_star_area(mut self, area: f64) -> Self {
        self.z_star_area = area;
        self
    }
}

/// Compute the cell averages by composite midpoint quadrature with `quad_n`
/// points along each edge of every `1/q` raster square of `Z*`.
pub fn effective_quantities(
    sources: &SourceData,
    initial: &InitialData,
    channel: &Channel,
    quad_n: usize,
) -> EffectiveData {
    let quad_n = quad_n.max(1);
    let m = channel.measures();
    EffectiveData {
        z_star_area: m.area_f64(),
        lateral_length: m.lateral_f64(),
        volume: volume_rule(channel, quad_n),
        surface: lateral_rule(channel, quad_n),
        g: sources.g.clone(),
        h: sources.h.clone(),
        u_m: initial.u_m.clone(),
    }
}

/// Whether an expression is free of the fast variables.
pub fn is_slow(e: &Expr) -> bool {
    !e.depends_on(Var::Y1) && !e.depends_on(Var::Yn)
}
