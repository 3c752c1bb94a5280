#![allow(dead_code)]

use chanhom::expr::{parse, Env, Expr, Var};
use chanhom::fields::{effective_quantities, ProblemData};
use chanhom::geometry::{build_channel, CellKind, Channel, ChannelSpec, MacroMesh, MicroMesh};
use chanhom::micro_solver::DiscreteSystem;

pub const D_M: &str = "1 + 0.5*sin(2*pi*y1)*cos(pi*yn/2)";

pub fn straight_channel() -> Channel {
    build_channel(&ChannelSpec::straight(0.25, 0.75, 4)).unwrap()
}

fn x1() -> Expr {
    Expr::var(Var::X1)
}

fn xn() -> Expr {
    Expr::var(Var::Xn)
}

fn decay() -> Expr {
    (-Expr::var(Var::T)).exp()
}

/// Exact fields of the micro manufactured problem, one per region.
pub struct MicroExact {
    pub plus: Expr,
    pub minus: Expr,
    pub channel: Expr,
}

impl MicroExact {
    pub fn eval(&self, kind: CellKind, t: f64, x: [f64; 2]) -> f64 {
        let e = match kind {
            CellKind::BulkPlus => &self.plus,
            CellKind::BulkMinus => &self.minus,
            _ => &self.channel,
        };
        e.eval(&Env::new(t, x, [0.0; 2]))
    }
}

fn bulk_source(u: &Expr, d: f64) -> Expr {
    let lap = u.diff(Var::X1).diff(Var::X1) + u.diff(Var::Xn).diff(Var::Xn);
    u.diff(Var::T) - Expr::c(d) * lap
}

/// `u = e^{−t} cos(πx̄)` in the channels and
/// `e^{−t} cos(πx̄) cos(π(±x_n − ε)/(H − ε))` in the bulk, which meets all
/// transmission and Neumann conditions; sources follow symbolically.
pub fn micro_manufactured(eps: f64, gamma: f64, height: f64) -> (ProblemData, MicroExact) {
    let pi = std::f64::consts::PI;
    let slow = decay() * (Expr::c(pi) * x1()).cos();
    let k = Expr::c(pi / (height - eps));
    let plus = slow.clone() * (k.clone() * (xn() - Expr::c(eps))).cos();
    let minus = slow.clone() * (k * (-xn() - Expr::c(eps))).cos();
    let d_m = parse(D_M).unwrap();
    let scale = Expr::c(eps.powf(1.0 + gamma));
    let du = slow.diff(Var::X1);
    let div = Expr::c(1.0 / eps) * d_m.diff(Var::Y1) * du.clone() + d_m.clone() * du.diff(Var::X1);
    let g = slow.diff(Var::T) - scale * div;
    // outward wall normal of the straight channel is −sin(2π y1)
    let h = Expr::c(eps.powf(gamma))
        * d_m.clone()
        * du
        * (Expr::c(2.0 * pi) * Expr::var(Var::Y1)).sin();
    let mut data = ProblemData::constant(1.0, 0.0);
    data.diffusion.d_m = d_m;
    data.diffusion.c0 = 0.5;
    data.sources.f_plus = bulk_source(&plus, 1.0);
    data.sources.f_minus = bulk_source(&minus, 1.0);
    data.sources.g = g;
    data.sources.h = h;
    let at0 = |e: &Expr| e.substitute(Var::T, &Expr::c(0.0));
    data.initial.u_plus = at0(&plus);
    data.initial.u_minus = at0(&minus);
    data.initial.u_m = at0(&slow);
    (
        data,
        MicroExact {
            plus,
            minus,
            channel: slow,
        },
    )
}

/// `L_ε`-weighted distance between a micro state and the exact field.
pub fn micro_error(
    mesh: &MicroMesh,
    sys: &DiscreteSystem,
    u: &[f64],
    exact: &MicroExact,
    t: f64,
) -> f64 {
    mesh.cells()
        .iter()
        .zip(u)
        .zip(&sys.mass)
        .map(|((c, v), m)| m * (v - exact.eval(c.kind, t, c.center)).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Limit manufactured solution `u± = e^{−t} cos(πx̄) cos(πx_n/H)`,
/// `u^M = e^{−t} cos(πx̄)`: zero normal derivative on `Σ`, so the
/// interface law reduces to `G0 = |Z*| ∂_t u^M`.
pub fn macro_manufactured(height: f64) -> (ProblemData, Expr, Expr) {
    let pi = std::f64::consts::PI;
    let slow = decay() * (Expr::c(pi) * x1()).cos();
    let bulk = slow.clone() * (Expr::c(pi / height) * xn()).cos();
    let mut data = ProblemData::constant(1.0, 0.0);
    data.sources.f_plus = bulk_source(&bulk, 1.0);
    data.sources.f_minus = bulk_source(&bulk, 1.0);
    // g is slow, so G0 = |Z*| g
    data.sources.g = slow.diff(Var::T);
    let at0 = |e: &Expr| e.substitute(Var::T, &Expr::c(0.0));
    data.initial.u_plus = at0(&bulk);
    data.initial.u_minus = at0(&bulk);
    data.initial.u_m = at0(&slow);
    (data, bulk, slow)
}

/// Discrete `L²` error of a macro state (bulk cells and interface row).
pub fn macro_error(mesh: &MacroMesh, u: &[f64], bulk: &Expr, slow: &Expr, t: f64) -> f64 {
    let mut s = 0.0;
    for j in 0..mesh.ny {
        let d = mesh.row_offset(j);
        for i in 0..mesh.nx {
            let x = mesh.x1(i);
            let ep = bulk.eval(&Env::new(t, [x, d], [0.0; 2]));
            let em = bulk.eval(&Env::new(t, [x, -d], [0.0; 2]));
            s += mesh.h
                * mesh.h
                * ((u[mesh.plus(i, j)] - ep).powi(2) + (u[mesh.minus(i, j)] - em).powi(2));
        }
    }
    for i in 0..mesh.nx {
        let e = slow.eval(&Env::new(t, [mesh.x1(i), 0.0], [0.0; 2]));
        s += mesh.h * (u[mesh.interface(i)] - e).powi(2);
    }
    s.sqrt()
}

pub fn effective(data: &ProblemData, channel: &Channel) -> chanhom::fields::EffectiveData {
    effective_quantities(&data.sources, &data.initial, channel, 4)
}
