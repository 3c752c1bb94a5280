//! Experiment configuration, single runs, ε/γ sweeps and the verification
//! battery, with CSV/JSON writers for their results.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    gradient_two_scale_null, micro_macro_error, pair_surface, pair_volume, reference_integral,
    scaled_norms, slow_rule, trace_check, AnalysisError, ScaledNormReport, TimeRule,
};
use crate::expr::{parse, Expr, ExprError};
use crate::fields::{
    effective_quantities, lateral_rule, volume_rule, DiffusionSpec, EffectiveData, FieldError,
    InitialSpec, ProblemData, SourceSpec,
};
use crate::geometry::{
    build_channel, build_macro_mesh, build_micro_mesh, CellKind, Channel, ChannelSpec, Eps,
    GeometryError, MacroMesh, MicroMesh,
};
use crate::macro_solver::{assemble_macro, solve_macro, MacroSolution};
use crate::micro_solver::{
    assemble, initial_values, solve_system, DiscreteSystem, MicroConfig, MicroSolution, SolverError,
};
use crate::stepping::{SteppingError, TimeStepping};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Invalid(String),
    #[error("expression '{expr}': {source}")]
    Expr {
        expr: String,
        #[source]
        source: ExprError,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Stepping(#[from] SteppingError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub channel: ChannelSpec,
    pub height: f64,
    pub sigma_length: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsConfig {
    pub diffusion: DiffusionSpec,
    pub sources: SourceSpec,
    pub initial: InitialSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericsConfig {
    /// micro cells per `1/q` raster square edge
    pub m: u32,
    pub h_macro: f64,
    pub dt: f64,
    pub theta: f64,
    pub t_end: f64,
    pub lin_tol: f64,
    pub lin_maxit: usize,
    /// sub-intervals per raster edge for cell integrals
    pub quad_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub eps: Vec<f64>,
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// test functions `ψ(t, x̄, y)` for the layer error
    pub layer_psi: Vec<String>,
    /// vector test functions for the gradient pairing
    pub grad_psi: Vec<[String; 2]>,
    /// test function for the oscillation checks
    pub oscillation_psi: String,
    pub trace_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub snapshot_stride: usize,
    pub formats: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub physics: PhysicsConfig,
    pub numerics: NumericsConfig,
    pub sweep: SweepConfig,
    pub analysis: AnalysisConfig,
    pub output: OutputConfig,
}

fn parse_expr(s: &str) -> Result<Expr> {
    parse(s).map_err(|source| ExperimentError::Expr {
        expr: s.to_string(),
        source,
    })
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.into(),
            source,
        })?;
        ExperimentConfig::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for &e in &self.sweep.eps {
            Eps::from_value(e)?;
        }
        for &g in &self.sweep.gamma {
            if !(-1.0..1.0).contains(&g) {
                return Err(SolverError::GammaOutOfRange(g).into());
            }
        }
        if self.sweep.eps.is_empty() || self.sweep.gamma.is_empty() {
            return Err(ExperimentError::Invalid(
                "sweep lists must be nonempty".into(),
            ));
        }
        self.stepping()?;
        if self.numerics.m == 0 || self.numerics.quad_n == 0 {
            return Err(ExperimentError::Invalid(
                "m and quad_n must be positive".into(),
            ));
        }
        for s in self
            .analysis
            .layer_psi
            .iter()
            .chain(self.analysis.grad_psi.iter().flatten())
        {
            parse_expr(s)?;
        }
        parse_expr(&self.analysis.oscillation_psi)?;
        Ok(())
    }

    pub fn stepping(&self) -> Result<TimeStepping> {
        let n = &self.numerics;
        Ok(TimeStepping::new(
            n.dt,
            n.t_end,
            n.theta,
            n.lin_tol,
            n.lin_maxit,
        )?)
    }

    pub fn eps_list(&self) -> Result<Vec<Eps>> {
        let mut v: Vec<Eps> = self
            .sweep
            .eps
            .iter()
            .map(|&e| Eps::from_value(e))
            .collect::<std::result::Result<_, _>>()?;
        v.sort_by_key(|e| e.inverse());
        Ok(v)
    }
}

/// Everything derived from a config once: geometry, data, cell averages.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub channel: Channel,
    pub data: ProblemData,
    pub eff: EffectiveData,
    pub stepping: TimeStepping,
    pub layer_psi: Vec<Expr>,
    pub grad_psi: Vec<[Expr; 2]>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let channel = build_channel(&cfg.geometry.channel)?;
    let p = &cfg.physics;
    let data = ProblemData {
        diffusion: p.diffusion.build()?,
        sources: p.sources.build()?,
        initial: p.initial.build()?,
    };
    data.validate(&channel, cfg.numerics.t_end)?;
    let eff = effective_quantities(&data.sources, &data.initial, &channel, cfg.numerics.quad_n);
    let layer_psi = cfg
        .analysis
        .layer_psi
        .iter()
        .map(|s| parse_expr(s))
        .collect::<Result<_>>()?;
    let grad_psi = cfg
        .analysis
        .grad_psi
        .iter()
        .map(|[a, b]| Ok([parse_expr(a)?, parse_expr(b)?]))
        .collect::<Result<_>>()?;
    Ok(Prepared {
        channel,
        data,
        eff,
        stepping: cfg.stepping()?,
        layer_psi,
        grad_psi,
    })
}

pub struct MicroRun {
    pub mesh: MicroMesh,
    pub system: DiscreteSystem,
    pub solution: MicroSolution,
    pub norms: ScaledNormReport,
}

pub fn micro_run(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    eps: Eps,
    gamma: f64,
    stride: usize,
) -> Result<MicroRun> {
    let g = &cfg.geometry;
    let mesh = build_micro_mesh(&prep.channel, eps, cfg.numerics.m, g.height, g.sigma_length)?;
    let mc = MicroConfig::new(gamma, prep.stepping)?;
    let system = assemble(&mesh, &prep.data, &mc)?;
    let solution = solve_system(&system, initial_values(&mesh, &prep.data), &mc, stride)?;
    let norms = scaled_norms(&solution, &mesh, &system);
    info!(
        "micro eps = 1/{} gamma = {gamma}: {} cells, {} CG iterations",
        eps.inverse(),
        mesh.n_active(),
        solution.cg_iterations
    );
    Ok(MicroRun {
        mesh,
        system,
        solution,
        norms,
    })
}

pub fn macro_mesh(cfg: &ExperimentConfig) -> Result<MacroMesh> {
    Ok(build_macro_mesh(
        cfg.numerics.h_macro,
        cfg.geometry.height,
        cfg.geometry.sigma_length,
    )?)
}

pub fn macro_run(cfg: &ExperimentConfig, prep: &Prepared, stride: usize) -> Result<MacroSolution> {
    let mesh = macro_mesh(cfg)?;
    Ok(solve_macro(
        &mesh,
        &prep.data,
        &prep.eff,
        prep.stepping,
        stride,
    )?)
}

/// One `(ε, γ)` row of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub gamma: f64,
    pub e_bulk_plus: f64,
    pub e_bulk_minus: f64,
    pub e_trace_plus: f64,
    pub e_trace_minus: f64,
    pub e_layer: f64,
    pub l_eps_max: f64,
    pub h_gamma_l2: f64,
    pub dual_proxy: f64,
    pub grad_null: f64,
    pub trace_ratio: f64,
    pub trace_ratio_constant: f64,
    pub mass_drift: f64,
    pub cg_iterations: usize,
}

impl ConvergenceRow {
    pub const ERROR_COLUMNS: [&'static str; 5] = [
        "e_bulk_plus",
        "e_bulk_minus",
        "e_trace_plus",
        "e_trace_minus",
        "e_layer",
    ];
    pub const NORM_COLUMNS: [&'static str; 3] = ["l_eps_max", "h_gamma_l2", "dual_proxy"];

    pub fn errors(&self) -> [f64; 5] {
        [
            self.e_bulk_plus,
            self.e_bulk_minus,
            self.e_trace_plus,
            self.e_trace_minus,
            self.e_layer,
        ]
    }

    pub fn norms(&self) -> [f64; 3] {
        [self.l_eps_max, self.h_gamma_l2, self.dual_proxy]
    }

    pub fn max_error(&self) -> f64 {
        self.errors().into_iter().fold(0.0, f64::max)
    }
}

/// Bulk `L²((0,T) × Ω_ε^±)` distance between two runs on the same mesh.
pub fn bulk_difference(mesh: &MicroMesh, a: &MicroSolution, b: &MicroSolution) -> f64 {
    let rule = TimeRule::of_micro(a);
    let area = mesh.cell_area();
    let mut s = 0.0;
    for (k, &w) in rule.weights.iter().enumerate() {
        for (c, (u, v)) in mesh
            .cells()
            .iter()
            .zip(a.values[k].iter().zip(&b.values[k]))
        {
            if c.kind != CellKind::Channel {
                s += w * area * (u - v).powi(2);
            }
        }
    }
    s.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaGap {
    pub eps: f64,
    pub gamma_a: f64,
    pub gamma_b: f64,
    pub bulk_difference: f64,
    /// largest micro/macro error among the rows at this `ε`
    pub bound: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnVerdict {
    pub gamma: f64,
    pub column: String,
    pub strictly_decreasing: bool,
    /// `e(ε_min) / e(ε_max)`
    pub ratio: f64,
    pub ratio_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    pub columns: Vec<ColumnVerdict>,
    pub gamma_gaps: Vec<GammaGap>,
    pub max_mass_drift: f64,
    pub drift_ok: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub verdicts: Verdicts,
}

pub const DRIFT_TOLERANCE: f64 = 1e-8;
pub const RATIO_BOUND: f64 = 0.5;
pub const GAMMA_FACTOR: f64 = 3.0;

pub fn sort_rows(rows: &mut [ConvergenceRow]) {
    rows.sort_by(|a, b| b.eps.total_cmp(&a.eps).then(a.gamma.total_cmp(&b.gamma)));
}

/// Verdicts computed from the rows alone (plus pairwise γ differences).
pub fn verdicts(rows: &[ConvergenceRow], gamma_gaps: Vec<GammaGap>) -> Verdicts {
    let mut gammas: Vec<f64> = rows.iter().map(|r| r.gamma).collect();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    let mut columns = Vec::new();
    for &g in &gammas {
        let series: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.gamma == g).collect();
        if series.len() < 2 {
            continue;
        }
        for (c, name) in ConvergenceRow::ERROR_COLUMNS.iter().enumerate() {
            let vals: Vec<f64> = series.iter().map(|r| r.errors()[c]).collect();
            let strictly_decreasing = vals.windows(2).all(|w| w[1] < w[0]);
            let ratio = vals[vals.len() - 1] / vals[0];
            columns.push(ColumnVerdict {
                gamma: g,
                column: name.to_string(),
                strictly_decreasing,
                ratio,
                ratio_ok: ratio <= RATIO_BOUND,
            });
        }
    }
    let max_mass_drift = rows.iter().map(|r| r.mass_drift).fold(0.0, f64::max);
    let drift_ok = max_mass_drift <= DRIFT_TOLERANCE;
    let pass = drift_ok
        && columns.iter().all(|c| c.strictly_decreasing && c.ratio_ok)
        && gamma_gaps.iter().all(|g| g.ok);
    Verdicts {
        columns,
        gamma_gaps,
        max_mass_drift,
        drift_ok,
        pass,
    }
}

/// Solve every `(ε, γ)` task against one limit solution on at most `jobs`
/// threads. Runs for which `keep` holds are returned alongside their rows.
pub fn evaluate(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    macro_sol: &MacroSolution,
    tasks: &[(Eps, f64)],
    jobs: usize,
    keep: impl Fn(Eps, f64) -> bool + Sync,
) -> Result<Vec<(ConvergenceRow, Option<MicroRun>)>> {
    let stride = cfg.output.snapshot_stride.max(1);
    let fast = volume_rule(&prep.channel, cfg.numerics.quad_n);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ExperimentError::Invalid(e.to_string()))?;
    pool.install(|| {
        tasks
            .par_iter()
            .map(|&(eps, gamma)| {
                let run = micro_run(cfg, prep, eps, gamma, stride)?;
                let e = micro_macro_error(
                    &run.mesh,
                    &run.system,
                    &run.solution,
                    macro_sol,
                    &prep.layer_psi,
                    &fast,
                )?;
                let grad_null = prep
                    .grad_psi
                    .iter()
                    .map(|psi| {
                        gradient_two_scale_null(&run.solution, &run.mesh, &run.system, psi)
                            .value
                            .abs()
                    })
                    .fold(0.0, f64::max);
                let tc = trace_check(&run.mesh, cfg.analysis.trace_samples, cfg.analysis.seed);
                let sol = &run.solution;
                let row = ConvergenceRow {
                    eps: eps.value(),
                    gamma,
                    e_bulk_plus: e.e_bulk_plus,
                    e_bulk_minus: e.e_bulk_minus,
                    e_trace_plus: e.e_trace_plus,
                    e_trace_minus: e.e_trace_minus,
                    e_layer: e.e_layer,
                    l_eps_max: run.norms.l_eps_max,
                    h_gamma_l2: run.norms.h_gamma_l2,
                    dual_proxy: run.norms.dual_proxy,
                    grad_null,
                    trace_ratio: tc.worst_ratio,
                    trace_ratio_constant: tc.constant_ratio,
                    mass_drift: sol.balance_defect / sol.initial_mass.abs().max(1.0),
                    cg_iterations: sol.cg_iterations,
                };
                Ok((row, keep(eps, gamma).then_some(run)))
            })
            .collect()
    })
}

/// Pairwise bulk differences between runs sharing an `ε`, each compared
/// with `GAMMA_FACTOR` times the largest micro/macro error at that `ε`.
pub fn gamma_gaps(runs: &[(ConvergenceRow, Option<MicroRun>)]) -> Vec<GammaGap> {
    let mut eps: Vec<f64> = runs.iter().map(|(r, _)| r.eps).collect();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    let mut gaps = Vec::new();
    for e in eps {
        let group: Vec<&(ConvergenceRow, Option<MicroRun>)> =
            runs.iter().filter(|(row, _)| row.eps == e).collect();
        let bound = group
            .iter()
            .map(|(row, _)| row.max_error())
            .fold(0.0, f64::max);
        for i in 0..group.len() {
            for j in i + 1..group.len() {
                let (ra, Some(a)) = group[i] else { continue };
                let (rb, Some(b)) = group[j] else { continue };
                let d = bulk_difference(&a.mesh, &a.solution, &b.solution);
                gaps.push(GammaGap {
                    eps: e,
                    gamma_a: ra.gamma,
                    gamma_b: rb.gamma,
                    bulk_difference: d,
                    bound,
                    ok: d <= GAMMA_FACTOR * bound,
                });
            }
        }
    }
    gaps
}

/// Run the limit problem once and every `(ε, γ)` micro problem of the
/// sweep, on at most `jobs` threads.
pub fn converge(cfg: &ExperimentConfig, jobs: usize) -> Result<ConvergenceReport> {
    let prep = prepare(cfg)?;
    let macro_sol = macro_run(cfg, &prep, cfg.output.snapshot_stride.max(1))?;
    let tasks: Vec<(Eps, f64)> = cfg
        .eps_list()?
        .into_iter()
        .flat_map(|e| cfg.sweep.gamma.iter().map(move |&g| (e, g)))
        .collect();
    let several = cfg.sweep.gamma.len() > 1;
    let runs = evaluate(cfg, &prep, &macro_sol, &tasks, jobs, |_, _| several)?;
    let gaps = gamma_gaps(&runs);
    let mut rows: Vec<ConvergenceRow> = runs.into_iter().map(|(r, _)| r).collect();
    sort_rows(&mut rows);
    let verdicts = verdicts(&rows, gaps);
    Ok(ConvergenceReport { rows, verdicts })
}

fn fmt_f(x: f64) -> String {
    format!("{x:.12e}")
}

pub fn rows_csv(rows: &[ConvergenceRow]) -> String {
    let mut s = String::from(
        "eps,gamma,e_bulk_plus,e_bulk_minus,e_trace_plus,e_trace_minus,e_layer,l_eps_max,h_gamma_l2,dual_proxy,grad_null,trace_ratio,trace_ratio_constant,mass_drift,cg_iterations\n",
    );
    for r in rows {
        let vals = [
            r.eps,
            r.gamma,
            r.e_bulk_plus,
            r.e_bulk_minus,
            r.e_trace_plus,
            r.e_trace_minus,
            r.e_layer,
            r.l_eps_max,
            r.h_gamma_l2,
            r.dual_proxy,
            r.grad_null,
            r.trace_ratio,
            r.trace_ratio_constant,
            r.mass_drift,
        ];
        let line: Vec<String> = vals.iter().map(|&v| fmt_f(v)).collect();
        let _ = writeln!(s, "{},{}", line.join(","), r.cg_iterations);
    }
    s
}

/// Whitespace table for gnuplot: one block per γ, columns as in the CSV.
pub fn rows_plotdata(rows: &[ConvergenceRow]) -> String {
    let mut s = String::from(
        "# eps e_bulk_plus e_bulk_minus e_trace_plus e_trace_minus e_layer grad_null\n",
    );
    let mut gammas: Vec<f64> = rows.iter().map(|r| r.gamma).collect();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    for g in gammas {
        let _ = writeln!(s, "# gamma = {g}");
        for r in rows.iter().filter(|r| r.gamma == g) {
            let e = r.errors();
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {}",
                r.eps, e[0], e[1], e[2], e[3], e[4], r.grad_null
            );
        }
        s.push_str("\n\n");
    }
    s
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
            path: dir.into(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| ExperimentError::Io {
        path: path.into(),
        source,
    })
}

pub fn write_report(
    report: &ConvergenceReport,
    out: &Path,
    plotdata: bool,
) -> Result<Vec<PathBuf>> {
    let mut written = vec![out.join("convergence.csv"), out.join("convergence.json")];
    write(&written[0], &rows_csv(&report.rows))?;
    write(&written[1], &serde_json::to_string_pretty(report)?)?;
    if plotdata {
        let p = out.join("convergence.dat");
        write(&p, &rows_plotdata(&report.rows))?;
        written.push(p);
    }
    Ok(written)
}

fn gamma_tag(g: f64) -> String {
    format!("{g}").replace('-', "m").replace('.', "p")
}

#[derive(Debug, Clone, Serialize)]
struct SnapshotMeta<'a> {
    kind: &'a str,
    columns: [&'a str; 4],
    region_codes: &'a str,
    eps: Option<f64>,
    gamma: Option<f64>,
    h: f64,
    height: f64,
    sigma_length: u32,
    times: &'a [f64],
    files: Vec<String>,
}

fn region(kind: CellKind) -> u8 {
    match kind {
        CellKind::BulkPlus => 1,
        CellKind::BulkMinus => 2,
        CellKind::Channel => 3,
        CellKind::Void => 0,
    }
}

/// Solve one micro problem and write snapshots, a JSON sidecar and the
/// scaled norms into `out/micro_eps<1/ε>_gamma<γ>/`.
pub fn run_micro(
    cfg: &ExperimentConfig,
    eps: Eps,
    gamma: f64,
    out: &Path,
    plotdata: bool,
) -> Result<PathBuf> {
    let prep = prepare(cfg)?;
    let run = micro_run(cfg, &prep, eps, gamma, cfg.output.snapshot_stride)?;
    let dir = out.join(format!(
        "micro_eps{}_gamma{}",
        eps.inverse(),
        gamma_tag(gamma)
    ));
    let mut files = Vec::new();
    for (k, u) in run.solution.values.iter().enumerate() {
        let mut s = String::from("x1,xn,region,u\n");
        let mut dat = String::new();
        for (c, v) in run.mesh.cells().iter().zip(u) {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                c.center[0],
                c.center[1],
                region(c.kind),
                fmt_f(*v)
            );
            if plotdata {
                let _ = writeln!(dat, "{} {} {}", c.center[0], c.center[1], v);
            }
        }
        let name = format!("snapshot_{k:04}.csv");
        write(&dir.join(&name), &s)?;
        if plotdata {
            write(&dir.join(format!("snapshot_{k:04}.dat")), &dat)?;
        }
        files.push(name);
    }
    let meta = SnapshotMeta {
        kind: "micro",
        columns: ["x1", "xn", "region", "u"],
        region_codes: "1 = bulk above, 2 = bulk below, 3 = channel",
        eps: Some(eps.value()),
        gamma: Some(gamma),
        h: run.mesh.h,
        height: run.mesh.height,
        sigma_length: run.mesh.sigma_length,
        times: &run.solution.times,
        files,
    };
    write(
        &dir.join("meta.json"),
        &serde_json::to_string_pretty(&meta)?,
    )?;
    #[derive(Serialize)]
    struct Summary<'a> {
        mesh: crate::geometry::MeshStats,
        norms: &'a ScaledNormReport,
        balance_defect: f64,
        cg_iterations: usize,
    }
    let summary = Summary {
        mesh: run.mesh.stats(),
        norms: &run.norms,
        balance_defect: run.solution.balance_defect,
        cg_iterations: run.solution.cg_iterations,
    };
    write(
        &dir.join("norms.json"),
        &serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(dir)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellQuantities {
    pub z_star_area: f64,
    pub lateral_length: f64,
    pub top_length: f64,
    pub bottom_length: f64,
    pub wall_distance: f64,
    /// `(x̄, G0(0, x̄), H0(0, x̄), u₀^M(0, x̄))` on a few sample points
    pub samples: Vec<[f64; 4]>,
}

pub fn cell_quantities(cfg: &ExperimentConfig) -> Result<CellQuantities> {
    let prep = prepare(cfg)?;
    let m = prep.channel.measures();
    let l = cfg.geometry.sigma_length as f64;
    let samples = (0..5)
        .map(|i| {
            let x = l * i as f64 / 4.0;
            [
                x,
                prep.eff.g0(0.0, x),
                prep.eff.h0(0.0, x),
                prep.eff.u_m_init_avg(x),
            ]
        })
        .collect();
    Ok(CellQuantities {
        z_star_area: m.area_f64(),
        lateral_length: m.lateral_f64(),
        top_length: m.top_f64(),
        bottom_length: m.bottom_f64(),
        wall_distance: crate::geometry::to_f64(m.wall_distance),
        samples,
    })
}

/// Solve the limit problem and write snapshots, `interface_trace.csv` and
/// an echo of the cell quantities into `out/macro/`.
pub fn run_macro(cfg: &ExperimentConfig, out: &Path, plotdata: bool) -> Result<PathBuf> {
    let prep = prepare(cfg)?;
    let sol = macro_run(cfg, &prep, cfg.output.snapshot_stride)?;
    let dir = out.join("macro");
    let mesh = &sol.mesh;
    let mut files = Vec::new();
    let mut trace = String::from("t,x1,u_M\n");
    for k in 0..sol.values.len() {
        let st = sol.state(k);
        let mut s = String::from("x1,xn,region,u\n");
        for j in 0..mesh.ny {
            for i in 0..mesh.nx {
                let (x, d) = (mesh.x1(i), mesh.row_offset(j));
                let _ = writeln!(s, "{x},{d},1,{}", fmt_f(st.u_plus[j * mesh.nx + i]));
                let _ = writeln!(s, "{x},{},2,{}", -d, fmt_f(st.u_minus[j * mesh.nx + i]));
            }
        }
        for i in 0..mesh.nx {
            let _ = writeln!(s, "{},0,4,{}", mesh.x1(i), fmt_f(st.u_m[i]));
            let _ = writeln!(trace, "{},{},{}", st.t, mesh.x1(i), fmt_f(st.u_m[i]));
        }
        let name = format!("snapshot_{k:04}.csv");
        write(&dir.join(&name), &s)?;
        files.push(name);
    }
    write(&dir.join("interface_trace.csv"), &trace)?;
    if plotdata {
        let mut dat = String::from("# t x1 u_M\n");
        for k in 0..sol.values.len() {
            let st = sol.state(k);
            for i in 0..mesh.nx {
                let _ = writeln!(dat, "{} {} {}", st.t, mesh.x1(i), st.u_m[i]);
            }
            dat.push('\n');
        }
        write(&dir.join("interface_trace.dat"), &dat)?;
    }
    let meta = SnapshotMeta {
        kind: "macro",
        columns: ["x1", "xn", "region", "u"],
        region_codes: "1 = bulk above, 2 = bulk below, 4 = interface",
        eps: None,
        gamma: None,
        h: mesh.h,
        height: mesh.height,
        sigma_length: mesh.sigma_length,
        times: &sol.times,
        files,
    };
    write(
        &dir.join("meta.json"),
        &serde_json::to_string_pretty(&meta)?,
    )?;
    write(
        &dir.join("effective.json"),
        &serde_json::to_string_pretty(&cell_quantities(cfg)?)?,
    )?;
    Ok(dir)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            value,
            limit,
            pass: value <= limit,
        }
    }
}

/// Gap of the volume and surface oscillation pairings of `ψ` against
/// `v ≡ 1`, on the θ-rule grid of the config.
pub fn oscillation_gaps(
    prep: &Prepared,
    mesh: &MicroMesh,
    rule: &TimeRule,
    psi: &Expr,
    quad_n: usize,
) -> (f64, f64) {
    let slow = slow_rule(
        mesh.sigma_length,
        8 * mesh.eps.inverse() as usize * mesh.m as usize,
    );
    let vol_ref = reference_integral(
        rule,
        &slow,
        &volume_rule(&prep.channel, quad_n),
        |_, _, _| 1.0,
        psi,
    );
    let surf_ref = reference_integral(
        rule,
        &slow,
        &lateral_rule(&prep.channel, quad_n),
        |_, _, _| 1.0,
        psi,
    );
    let vol = pair_volume(mesh, rule, |_, _| 1.0, psi);
    let surf = pair_surface(mesh, rule, |_, _| 1.0, psi);
    ((vol - vol_ref).abs(), (surf - surf_ref).abs())
}

/// Constants, conservation, oscillation pairing, trace check and channel
/// measures for the coarsest `ε` of the sweep.
pub fn verify(cfg: &ExperimentConfig) -> Result<Vec<Check>> {
    let prep = prepare(cfg)?;
    let eps = cfg.eps_list()?[0];
    let g = &cfg.geometry;
    let mesh = build_micro_mesh(&prep.channel, eps, cfg.numerics.m, g.height, g.sigma_length)?;
    let mut checks = Vec::new();

    let m = prep.channel.measures();
    let rule_area: f64 = volume_rule(&prep.channel, cfg.numerics.quad_n)
        .iter()
        .map(|p| p.1)
        .sum();
    let rule_wall: f64 = lateral_rule(&prep.channel, cfg.numerics.quad_n)
        .iter()
        .map(|p| p.1)
        .sum();
    checks.push(Check::at_most(
        "channel area matches quadrature",
        (rule_area - m.area_f64()).abs(),
        1e-12,
    ));
    checks.push(Check::at_most(
        "wall length matches quadrature",
        (rule_wall - m.lateral_f64()).abs(),
        1e-12,
    ));

    let constant = {
        let mut d = prep.data.clone();
        let c = ProblemData::constant(1.0, 1.0);
        d.sources = c.sources;
        d.initial = c.initial;
        d
    };
    let gamma = cfg.sweep.gamma[0];
    let mc = MicroConfig::new(gamma, prep.stepping)?;
    let sys = assemble(&mesh, &constant, &mc)?;
    let sol = solve_system(&sys, initial_values(&mesh, &constant), &mc, 0)?;
    let dev = sol
        .values
        .iter()
        .flatten()
        .map(|v| (v - 1.0).abs())
        .fold(0.0, f64::max);
    checks.push(Check::at_most("micro constant preservation", dev, 1e-9));
    let eff = effective_quantities(
        &constant.sources,
        &constant.initial,
        &prep.channel,
        cfg.numerics.quad_n,
    );
    let mm = macro_mesh(cfg)?;
    let msol = solve_macro(&mm, &constant, &eff, prep.stepping, 0)?;
    let dev = msol
        .values
        .iter()
        .flatten()
        .map(|v| (v - 1.0).abs())
        .fold(0.0, f64::max);
    checks.push(Check::at_most("macro constant preservation", dev, 1e-9));

    let run = micro_run(cfg, &prep, eps, gamma, 0)?;
    let drift = run.solution.balance_defect / run.solution.initial_mass.abs().max(1.0);
    checks.push(Check::at_most(
        "micro balance drift",
        drift,
        DRIFT_TOLERANCE,
    ));
    let msys = assemble_macro(&mm, &prep.data, &prep.eff);
    let msol = solve_macro(&mm, &prep.data, &prep.eff, prep.stepping, 0)?;
    let drift = msol.balance_defect / msys.total_mass(&msol.values[0]).abs().max(1.0);
    checks.push(Check::at_most(
        "macro balance drift",
        drift,
        DRIFT_TOLERANCE,
    ));

    let one = Expr::c(1.0);
    let rule = TimeRule::uniform(prep.stepping.dt, prep.stepping.t_end, prep.stepping.theta);
    let (gv, gs) = oscillation_gaps(&prep, &mesh, &rule, &one, cfg.numerics.quad_n);
    checks.push(Check::at_most(
        "oscillation pairing of 1 (volume)",
        gv,
        1e-10,
    ));
    checks.push(Check::at_most(
        "oscillation pairing of 1 (surface)",
        gs,
        1e-10,
    ));

    let tc = trace_check(&mesh, cfg.analysis.trace_samples, cfg.analysis.seed);
    let expected = (m.lateral_f64() / m.area_f64()).sqrt();
    checks.push(Check::at_most(
        "constant-field trace ratio",
        (tc.constant_ratio - expected).abs(),
        1e-10,
    ));
    checks.push(Check::at_most(
        "random-field trace ratio",
        tc.worst_ratio,
        10.0 * tc.constant_ratio,
    ));
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            geometry: GeometryConfig {
                channel: ChannelSpec::straight(0.25, 0.75, 4),
                height: 1.0,
                sigma_length: 1,
            },
            physics: PhysicsConfig {
                diffusion: DiffusionSpec {
                    d_plus: 1.0,
                    d_minus: 1.0,
                    d_m: "1 + 0.5*sin(2*pi*y1)*cos(pi*yn/2)".into(),
                    c0: 0.5,
                },
                sources: SourceSpec {
                    f_plus: "0".into(),
                    f_minus: "0.5*cos(pi*x1)".into(),
                    g: "1 + 0.5*cos(pi*x1)".into(),
                    h: "0.05*(1 + yn)".into(),
                },
                initial: InitialSpec {
                    u_plus: "1".into(),
                    u_minus: "1 + 0.5*cos(pi*x1)".into(),
                    u_m: "1 + 0.2*sin(2*pi*y1)".into(),
                },
            },
            numerics: NumericsConfig {
                m: 1,
                h_macro: 1.0 / 32.0,
                dt: 0.05,
                theta: 1.0,
                t_end: 0.2,
                lin_tol: 1e-12,
                lin_maxit: 20000,
                quad_n: 2,
            },
            sweep: SweepConfig {
                eps: vec![0.25, 0.125],
                gamma: vec![0.0, -1.0],
            },
            analysis: AnalysisConfig {
                layer_psi: vec!["1".into(), "1 + yn".into()],
                grad_psi: vec![["0".into(), "cos(2*pi*y1)^2".into()]],
                oscillation_psi: "(1+t)*sin(2*pi*x1)*cos(2*pi*y1)*yn".into(),
                trace_samples: 8,
                seed: 11,
            },
            output: OutputConfig {
                dir: "out".into(),
                snapshot_stride: 1,
                formats: vec!["csv".into()],
            },
        }
    }

    #[test]
    fn config_round_trip() {
        let c = small_config();
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn config_validation() {
        let mut c = small_config();
        c.sweep.eps = vec![0.3];
        assert!(matches!(c.validate(), Err(ExperimentError::Geometry(_))));
        let mut c = small_config();
        c.sweep.gamma = vec![1.0];
        assert!(matches!(
            c.validate(),
            Err(ExperimentError::Solver(SolverError::GammaOutOfRange(_)))
        ));
        let mut c = small_config();
        c.numerics.dt = 0.3;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.analysis.layer_psi = vec!["1 +".into()];
        assert!(matches!(c.validate(), Err(ExperimentError::Expr { .. })));
    }

    #[test]
    fn constant_sweep_has_vanishing_errors() {
        let mut c = small_config();
        c.physics.sources = SourceSpec {
            f_plus: "0".into(),
            f_minus: "0".into(),
            g: "0".into(),
            h: "0".into(),
        };
        c.physics.initial = InitialSpec {
            u_plus: "2".into(),
            u_minus: "2".into(),
            u_m: "2".into(),
        };
        c.sweep = SweepConfig {
            eps: vec![0.25],
            gamma: vec![0.0],
        };
        let r = converge(&c, 1).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(r.rows[0].max_error() <= c.numerics.lin_tol);
        assert!(r.verdicts.pass);
    }

    #[test]
    fn sweep_rows_are_sorted_and_deterministic() {
        let c = small_config();
        let a = converge(&c, 2).unwrap();
        let b = converge(&c, 1).unwrap();
        assert_eq!(rows_csv(&a.rows), rows_csv(&b.rows));
        let eps: Vec<f64> = a.rows.iter().map(|r| r.eps).collect();
        assert_eq!(eps, vec![0.25, 0.25, 0.125, 0.125]);
        assert_eq!(a.verdicts.gamma_gaps.len(), 2);
        assert!(a.rows.iter().all(|r| r.mass_drift < 1e-9));
    }

    #[test]
    fn verify_passes_on_small_config() {
        let checks = verify(&small_config()).unwrap();
        for c in &checks {
            assert!(c.pass, "{c:?}");
        }
    }

    #[test]
    fn verdicts_flag_non_monotone_columns() {
        let row = |eps: f64, e: f64| ConvergenceRow {
            eps,
            gamma: 0.0,
            e_bulk_plus: e,
            e_bulk_minus: e,
            e_trace_plus: e,
            e_trace_minus: e,
            e_layer: e,
            l_eps_max: 1.0,
            h_gamma_l2: 1.0,
            dual_proxy: 1.0,
            grad_null: 0.0,
            trace_ratio: 2.0,
            trace_ratio_constant: 2.0,
            mass_drift: 0.0,
            cg_iterations: 0,
        };
        let good = verdicts(&[row(0.5, 1.0), row(0.25, 0.4)], vec![]);
        assert!(good.pass);
        let flat = verdicts(&[row(0.5, 1.0), row(0.25, 1.0)], vec![]);
        assert!(!flat.pass && !flat.columns[0].strictly_decreasing);
        let slow = verdicts(&[row(0.5, 1.0), row(0.25, 0.7)], vec![]);
        assert!(!slow.pass && slow.columns[0].strictly_decreasing && !slow.columns[0].ratio_ok);
    }
}
