//! Post-processing of microscopic and limit solutions: scaled norms,
//! two-scale pairings, the trace inequality and micro/macro errors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Env, Expr};
use crate::fields::volume_rule;
use crate::geometry::{Axis, CellKind, Channel, FaceKind, MicroMesh};
use crate::macro_solver::MacroSolution;
use crate::micro_solver::{DiscreteSystem, MicroSolution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("micro and macro runs are not commensurate: {0}")]
    IncommensurateGrids(String),
}

/// Time quadrature matching the θ-scheme: on each interval of length `Δ`
/// the right end point gets `θΔ` and the left one `(1−θ)Δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeRule {
    pub times: Vec<f64>,
    pub weights: Vec<f64>,
}

impl TimeRule {
    pub fn new(times: &[f64], theta: f64) -> Self {
        let mut weights = vec![0.0; times.len()];
        for k in 1..times.len() {
            let d = times[k] - times[k - 1];
            weights[k] += theta * d;
            weights[k - 1] += (1.0 - theta) * d;
        }
        TimeRule {
            times: times.to_vec(),
            weights,
        }
    }

    pub fn uniform(dt: f64, t_end: f64, theta: f64) -> Self {
        let n = (t_end / dt).round() as usize;
        let times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
        TimeRule::new(&times, theta)
    }

    pub fn of_micro(sol: &MicroSolution) -> Self {
        TimeRule::new(&sol.times, sol.theta)
    }

    fn iter(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.times
            .iter()
            .zip(&self.weights)
            .enumerate()
            .filter(|(_, (_, &w))| w != 0.0)
            .map(|(k, (&t, &w))| (k, t, w))
    }
}

/// Composite midpoint rule on `(0, L)` with `n` points per unit length.
pub fn slow_rule(sigma_length: u32, n: usize) -> Vec<(f64, f64)> {
    let total = n * sigma_length as usize;
    let s = sigma_length as f64 / total as f64;
    (0..total).map(|i| ((i as f64 + 0.5) * s, s)).collect()
}

/// `(u, u)_{L_ε}` for one state vector.
pub fn l_eps_norm_sq(mesh: &MicroMesh, u: &[f64]) -> f64 {
    let area = mesh.cell_area();
    let inv_eps = 1.0 / mesh.eps.value();
    mesh.cells()
        .iter()
        .zip(u)
        .map(|(c, v)| match c.kind {
            CellKind::Channel => inv_eps * area * v * v,
            _ => area * v * v,
        })
        .sum()
}

/// Face value on a bulk/channel interface that makes the two half-cell
/// fluxes equal.
fn face_trace(sys: &DiscreteSystem, u: &[f64], a: usize, b: usize) -> f64 {
    let (da, db) = (sys.diffusivity[a], sys.diffusivity[b]);
    (da * u[a] + db * u[b]) / (da + db)
}

/// Bulk and layer parts of `∫|∇u|²`, unweighted.
pub fn gradient_sq(mesh: &MicroMesh, sys: &DiscreteSystem, u: &[f64]) -> (f64, f64) {
    let cells = mesh.cells();
    let (mut bulk, mut layer) = (0.0, 0.0);
    for f in mesh.faces() {
        let Some(b) = f.b else { continue };
        match f.kind {
            FaceKind::Interior => {
                let d = u[f.a] - u[b];
                if cells[f.a].kind == CellKind::Channel {
                    layer += d * d;
                } else {
                    bulk += d * d;
                }
            }
            FaceKind::TopInterface | FaceKind::BottomInterface => {
                let tr = face_trace(sys, u, f.a, b);
                for c in [f.a, b] {
                    let part = 2.0 * (u[c] - tr).powi(2);
                    if cells[c].kind == CellKind::Channel {
                        layer += part;
                    } else {
                        bulk += part;
                    }
                }
            }
            _ => {}
        }
    }
    (bulk, layer)
}

pub fn h_gamma_norm_sq(mesh: &MicroMesh, sys: &DiscreteSystem, u: &[f64]) -> f64 {
    let (bulk, layer) = gradient_sq(mesh, sys, u);
    l_eps_norm_sq(mesh, u) + bulk + mesh.eps.value().powf(sys.gamma) * layer
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledNormReport {
    /// `max_t ‖u(t)‖_{L_ε}`
    pub l_eps_max: f64,
    /// `‖u‖_{L²(0,T; H_{γ,ε})}`
    pub h_gamma_l2: f64,
    /// gradient part of `h_gamma_l2`
    pub grad_l2: f64,
    /// `‖∂_t u‖_{L²(0,T; H')}` estimated over a fixed test battery
    pub dual_proxy: f64,
}

fn dual_battery() -> Vec<Expr> {
    ["1", "cos(pi*x1)", "xn", "cos(pi*x1)*xn"]
        .iter()
        .map(|s| crate::expr::parse(s).expect("battery expressions parse"))
        .collect()
}

pub fn scaled_norms(
    sol: &MicroSolution,
    mesh: &MicroMesh,
    sys: &DiscreteSystem,
) -> ScaledNormReport {
    let rule = TimeRule::of_micro(sol);
    let scale = mesh.eps.value().powf(sys.gamma);
    let l_eps_max = sol
        .values
        .iter()
        .map(|u| l_eps_norm_sq(mesh, u).sqrt())
        .fold(0.0, f64::max);
    let (mut h2, mut g2) = (0.0, 0.0);
    for (k, _, w) in rule.iter() {
        let u = &sol.values[k];
        let (bulk, layer) = gradient_sq(mesh, sys, u);
        g2 += w * (bulk + scale * layer);
        h2 += w * (l_eps_norm_sq(mesh, u) + bulk + scale * layer);
    }
    let tests: Vec<Vec<f64>> = dual_battery()
        .iter()
        .map(|e| {
            let v: Vec<f64> = mesh
                .cells()
                .iter()
                .map(|c| e.eval(&Env::new(0.0, c.center, [0.0; 2])))
                .collect();
            let n = h_gamma_norm_sq(mesh, sys, &v).sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let mut d2 = 0.0;
    for k in 1..sol.values.len() {
        let dt = sol.times[k] - sol.times[k - 1];
        let worst = tests
            .iter()
            .map(|phi| {
                let s: f64 = (0..phi.len())
                    .map(|i| sys.mass[i] * (sol.values[k][i] - sol.values[k - 1][i]) * phi[i])
                    .sum();
                (s / dt).abs()
            })
            .fold(0.0, f64::max);
        d2 += dt * worst * worst;
    }
    ScaledNormReport {
        l_eps_max,
        h_gamma_l2: h2.sqrt(),
        grad_l2: g2.sqrt(),
        dual_proxy: d2.sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairingResult {
    pub value: f64,
    pub reference: f64,
    pub gap: f64,
}

impl PairingResult {
    pub fn new(value: f64, reference: f64) -> Self {
        PairingResult {
            value,
            reference,
            gap: (value - reference).abs(),
        }
    }
}

/// `(1/ε) ∫₀^T ∫_{layer} v ψ(t, x̄, x/ε)` where `v(k, cell)` gives the
/// field at snapshot `k` on an active cell.
pub fn pair_volume(
    mesh: &MicroMesh,
    rule: &TimeRule,
    v: impl Fn(usize, usize) -> f64,
    psi: &Expr,
) -> f64 {
    let w_cell = mesh.cell_area() / mesh.eps.value();
    let mut total = 0.0;
    for (k, t, w) in rule.iter() {
        let mut s = 0.0;
        for (idx, c) in mesh.cells().iter().enumerate() {
            if let (CellKind::Channel, Some(y)) = (c.kind, c.fast) {
                s += v(k, idx) * psi.eval(&Env::new(t, c.center, y));
            }
        }
        total += w * w_cell * s;
    }
    total
}

/// `∫₀^T ∫_{N_ε} v ψ(t, x̄, x/ε) dS`, with the wall value taken from the
/// adjacent channel cell.
pub fn pair_surface(
    mesh: &MicroMesh,
    rule: &TimeRule,
    v: impl Fn(usize, usize) -> f64,
    psi: &Expr,
) -> f64 {
    let mut total = 0.0;
    for (k, t, w) in rule.iter() {
        let s: f64 = mesh
            .faces_of_kind(FaceKind::Lateral)
            .map(|f| v(k, f.a) * psi.eval(&Env::new(t, f.midpoint, f.fast.unwrap_or([0.0; 2]))))
            .sum();
        total += w * mesh.h * s;
    }
    total
}

/// `∫₀^T ∫_Σ ∫ v₀ ψ` over a fast-variable rule (cell volume or wall).
pub fn reference_integral(
    rule: &TimeRule,
    slow: &[(f64, f64)],
    fast: &[([f64; 2], f64)],
    v0: impl Fn(usize, f64, [f64; 2]) -> f64,
    psi: &Expr,
) -> f64 {
    let mut total = 0.0;
    for (k, t, w) in rule.iter() {
        let mut s = 0.0;
        for &(x1, wx) in slow {
            let inner: f64 = fast
                .iter()
                .map(|&(y, wy)| wy * v0(k, x1, y) * psi.eval(&Env::new(t, [x1, 0.0], y)))
                .sum();
            s += wx * inner;
        }
        total += w * s;
    }
    total
}

pub fn two_scale_pair_volume(
    mesh: &MicroMesh,
    rule: &TimeRule,
    v: impl Fn(usize, usize) -> f64,
    psi: &Expr,
    reference: f64,
) -> PairingResult {
    PairingResult::new(pair_volume(mesh, rule, v, psi), reference)
}

pub fn two_scale_pair_surface(
    mesh: &MicroMesh,
    rule: &TimeRule,
    v: impl Fn(usize, usize) -> f64,
    psi: &Expr,
    reference: f64,
) -> PairingResult {
    PairingResult::new(pair_surface(mesh, rule, v, psi), reference)
}

/// `(1/ε) ∫₀^T ∫_{layer} ∇u · ψ(t, x̄, x/ε)` for a vector test field that
/// vanishes on the lateral walls. Channel faces carry a full dual cell,
/// faces on `S^±` the channel half cell with the flux-matched face value.
pub fn gradient_two_scale_null(
    sol: &MicroSolution,
    mesh: &MicroMesh,
    sys: &DiscreteSystem,
    psi: &[Expr; 2],
) -> PairingResult {
    let rule = TimeRule::of_micro(sol);
    let cells = mesh.cells();
    let inv_eps = 1.0 / mesh.eps.value();
    let area = mesh.cell_area();
    let axis = |a: Axis| if a == Axis::X1 { 0 } else { 1 };
    let mut total = 0.0;
    for (k, t, w) in rule.iter() {
        let u = &sol.values[k];
        let mut s = 0.0;
        for f in mesh.faces() {
            let (Some(b), Some(y)) = (f.b, f.fast) else {
                continue;
            };
            let d = axis(f.normal);
            let comp = psi[d].eval(&Env::new(t, f.midpoint, y));
            match f.kind {
                FaceKind::Interior if cells[f.a].kind == CellKind::Channel => {
                    let grad = (u[b] - u[f.a]) / (cells[b].center[d] - cells[f.a].center[d]);
                    s += area * grad * comp;
                }
                FaceKind::TopInterface | FaceKind::BottomInterface => {
                    let c = if cells[f.a].kind == CellKind::Channel {
                        f.a
                    } else {
                        b
                    };
                    let tr = face_trace(sys, u, f.a, b);
                    let grad = (tr - u[c]) / (f.midpoint[d] - cells[c].center[d]);
                    s += 0.5 * area * grad * comp;
                }
                _ => {}
            }
        }
        total += w * inv_eps * s;
    }
    PairingResult::new(total, 0.0)
}

/// `(‖v‖_{N_ε} − √ε ‖∇v‖_{layer}) / (ε^{−1/2} ‖v‖_{layer})`, or `None` for
/// a field vanishing on the layer.
pub fn trace_ratio(mesh: &MicroMesh, v: &[f64]) -> Option<f64> {
    let cells = mesh.cells();
    let eps = mesh.eps.value();
    let layer: f64 = cells
        .iter()
        .zip(v)
        .filter(|(c, _)| c.kind == CellKind::Channel)
        .map(|(_, x)| mesh.cell_area() * x * x)
        .sum();
    if layer <= 0.0 {
        return None;
    }
    let wall: f64 = mesh
        .faces_of_kind(FaceKind::Lateral)
        .map(|f| mesh.h * v[f.a] * v[f.a])
        .sum();
    let grad: f64 = mesh
        .faces_of_kind(FaceKind::Interior)
        .filter(|f| cells[f.a].kind == CellKind::Channel)
        .map(|f| (v[f.a] - v[f.b.unwrap()]).powi(2))
        .sum();
    Some((wall.sqrt() - eps.sqrt() * grad.sqrt()) / (layer.sqrt() / eps.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceCheck {
    pub constant_ratio: f64,
    pub worst_ratio: f64,
    pub samples: usize,
}

/// Random layer fields: a constant, a few random periodic modes in the fast
/// variable with slow modulation, and cellwise noise of random amplitude.
fn random_layer_field(mesh: &MicroMesh, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let c0: f64 = rng.gen_range(-1.0..1.0);
    let modes: Vec<(f64, f64, f64, i32)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(-1.0..1.0),
                rng.gen_range(1..4) as f64,
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0..3),
            )
        })
        .collect();
    let slow_k: f64 = rng.gen_range(0..3) as f64;
    let noise: f64 = if rng.gen_bool(0.5) {
        rng.gen_range(0.0..0.5)
    } else {
        0.0
    };
    mesh.cells()
        .iter()
        .map(|c| match (c.kind, c.fast) {
            (CellKind::Channel, Some(y)) => {
                let mut v = c0;
                for &(a, k, phase, p) in &modes {
                    v += a * (std::f64::consts::TAU * k * y[0] + phase).cos() * y[1].powi(p);
                }
                v *= 1.0 + 0.5 * (std::f64::consts::PI * slow_k * c.center[0]).cos();
                v + noise * rng.gen_range(-1.0..1.0)
            }
            _ => 0.0,
        })
        .collect()
}

pub fn trace_check(mesh: &MicroMesh, samples: usize, seed: u64) -> TraceCheck {
    let ones = vec![1.0; mesh.n_active()];
    let constant_ratio = trace_ratio(mesh, &ones).unwrap_or(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = constant_ratio;
    for _ in 0..samples {
        let v = random_layer_field(mesh, &mut rng);
        if let Some(r) = trace_ratio(mesh, &v) {
            worst = worst.max(r);
        }
    }
    TraceCheck {
        constant_ratio,
        worst_ratio: worst,
        samples,
    }
}

/// Linear interpolation in a sorted node list, constant beyond the ends.
fn interp(nodes: &[f64], vals: impl Fn(usize) -> f64, x: f64) -> f64 {
    let n = nodes.len();
    if x <= nodes[0] {
        return vals(0);
    }
    if x >= nodes[n - 1] {
        return vals(n - 1);
    }
    let k = nodes.partition_point(|&p| p <= x).min(n - 1).max(1);
    let (x0, x1) = (nodes[k - 1], nodes[k]);
    let s = (x - x0) / (x1 - x0);
    (1.0 - s) * vals(k - 1) + s * vals(k)
}

/// Interpolates a macro state at micro points: bilinear in each bulk
/// column using the interface value as the row at `x_n = 0`.
pub struct MacroInterpolant<'a> {
    sol: &'a MacroSolution,
    xs: Vec<f64>,
    rows: Vec<f64>,
}

impl<'a> MacroInterpolant<'a> {
    pub fn new(sol: &'a MacroSolution) -> Self {
        let m = &sol.mesh;
        let xs = (0..m.nx).map(|i| m.x1(i)).collect();
        let rows = std::iter::once(0.0)
            .chain((0..m.ny).map(|j| m.row_offset(j)))
            .collect();
        MacroInterpolant { sol, xs, rows }
    }

    pub fn interface(&self, k: usize, x1: f64) -> f64 {
        let s = self.sol.state(k);
        interp(&self.xs, |i| s.u_m[i], x1)
    }

    pub fn bulk(&self, k: usize, x: [f64; 2]) -> f64 {
        let m = &self.sol.mesh;
        let s = self.sol.state(k);
        let side = if x[1] >= 0.0 { s.u_plus } else { s.u_minus };
        let column = |r: usize| {
            interp(
                &self.xs,
                |i| {
                    if r == 0 {
                        s.u_m[i]
                    } else {
                        side[(r - 1) * m.nx + i]
                    }
                },
                x[0],
            )
        };
        interp(&self.rows, column, x[1].abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroMacroErrors {
    pub e_bulk_plus: f64,
    pub e_bulk_minus: f64,
    pub e_trace_plus: f64,
    pub e_trace_minus: f64,
    pub e_layer: f64,
}

/// Trace of the bulk solution on `x_n = ±ε` in every `Σ`-column.
pub fn layer_traces(
    mesh: &MicroMesh,
    sys: &DiscreteSystem,
    u: &[f64],
    top: bool,
) -> Vec<(f64, f64)> {
    let contacts = if top {
        mesh.top_contacts()
    } else {
        mesh.bottom_contacts()
    };
    contacts
        .iter()
        .map(|c| {
            let x1 = mesh.cells()[c.bulk].center[0];
            let v = match c.channel {
                Some(ch) => face_trace(sys, u, c.bulk, ch),
                None => u[c.bulk],
            };
            (x1, v)
        })
        .collect()
}

pub fn check_commensurate(
    micro_mesh: &MicroMesh,
    micro: &MicroSolution,
    macro_sol: &MacroSolution,
) -> Result<(), AnalysisError> {
    let mm = &macro_sol.mesh;
    let r = micro_mesh.h / mm.h;
    if (r - r.round()).abs() > 1e-9 || r.round() < 1.0 {
        return Err(AnalysisError::IncommensurateGrids(format!(
            "macro spacing {} does not divide micro spacing {}",
            mm.h, micro_mesh.h
        )));
    }
    if mm.sigma_length != micro_mesh.sigma_length || (mm.height - micro_mesh.height).abs() > 1e-12 {
        return Err(AnalysisError::IncommensurateGrids("domains differ".into()));
    }
    if micro.times.len() != macro_sol.times.len()
        || micro
            .times
            .iter()
            .zip(&macro_sol.times)
            .any(|(a, b)| (a - b).abs() > 1e-12)
        || micro.theta != macro_sol.theta
    {
        return Err(AnalysisError::IncommensurateGrids(
            "snapshot times differ".into(),
        ));
    }
    Ok(())
}

/// Errors between a microscopic run and the limit solution. `battery`
/// lists the layer test functions, `fast` a rule on `Z*` for the
/// reference integrals.
pub fn micro_macro_error(
    micro_mesh: &MicroMesh,
    sys: &DiscreteSystem,
    micro: &MicroSolution,
    macro_sol: &MacroSolution,
    battery: &[Expr],
    fast: &[([f64; 2], f64)],
) -> Result<MicroMacroErrors, AnalysisError> {
    check_commensurate(micro_mesh, micro, macro_sol)?;
    let rule = TimeRule::of_micro(micro);
    let lim = MacroInterpolant::new(macro_sol);
    let area = micro_mesh.cell_area();
    let (mut bp, mut bm, mut tp, mut tm) = (0.0, 0.0, 0.0, 0.0);
    for (k, _, w) in rule.iter() {
        let u = &micro.values[k];
        for (c, v) in micro_mesh.cells().iter().zip(u) {
            let d = (v - lim.bulk(k, c.center)).powi(2) * area * w;
            match c.kind {
                CellKind::BulkPlus => bp += d,
                CellKind::BulkMinus => bm += d,
                _ => {}
            }
        }
        for (top, acc) in [(true, &mut tp), (false, &mut tm)] {
            for (x1, v) in layer_traces(micro_mesh, sys, u, top) {
                *acc += w * micro_mesh.h * (v - lim.interface(k, x1)).powi(2);
            }
        }
    }
    let mm = &macro_sol.mesh;
    let slow: Vec<(f64, f64)> = (0..mm.nx).map(|i| (mm.x1(i), mm.h)).collect();
    let mut e_layer: f64 = 0.0;
    for psi in battery {
        let reference =
            reference_integral(&rule, &slow, fast, |k, x1, _| lim.interface(k, x1), psi);
        let pairing =
            two_scale_pair_volume(micro_mesh, &rule, |k, c| micro.values[k][c], psi, reference);
        e_layer = e_layer.max(pairing.gap);
    }
    Ok(MicroMacroErrors {
        e_bulk_plus: bp.sqrt(),
        e_bulk_minus: bm.sqrt(),
        e_trace_plus: tp.sqrt(),
        e_trace_minus: tm.sqrt(),
        e_layer,
    })
}

/// Fast-variable rule used for layer reference integrals.
pub fn reference_rule(channel: &Channel, quad_n: usize) -> Vec<([f64; 2], f64)> {
    volume_rule(channel, quad_n)
}
