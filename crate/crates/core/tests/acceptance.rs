//! Acceptance battery: one PASS/FAIL line per criterion, nonzero exit on
//! any failure.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use chanhom::analysis::{gradient_two_scale_null, TimeRule};
use chanhom::experiment::{
    evaluate, macro_mesh, macro_run, oscillation_gaps, prepare, sort_rows, ConvergenceRow,
    ExperimentConfig, MicroRun, Prepared,
};
use chanhom::expr::parse;
use chanhom::fields::ProblemData;
use chanhom::geometry::{build_macro_mesh, build_micro_mesh, Eps};
use chanhom::macro_solver::{assemble_macro, initial_macro, solve_macro};
use chanhom::micro_solver::{assemble, initial_values, solve_system, MicroConfig};
use chanhom::stepping::TimeStepping;
use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn benchmark() -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/benchmark.json");
    ExperimentConfig::load(&path).expect("benchmark config")
}

fn fmt(v: &[f64]) -> String {
    let s: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", s.join(", "))
}

fn orders(e: &[f64]) -> Vec<f64> {
    e.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

fn with_horizon(prep: &Prepared, t_end: f64) -> TimeStepping {
    let s = prep.stepping;
    TimeStepping::new(s.dt, t_end, s.theta, s.lin_tol, s.lin_maxit).unwrap()
}

fn constant_preservation(cfg: &ExperimentConfig) -> Outcome {
    let prep = prepare(cfg).unwrap();
    let mut data = prep.data.clone();
    let c = ProblemData::constant(1.0, 1.0);
    data.sources = c.sources;
    data.initial = c.initial;
    let stepping = with_horizon(&prep, 1.0);
    let eps = Eps::from_inverse(8).unwrap();
    let mut worst: f64 = 0.0;
    let mut slowest: f64 = 0.0;
    for gamma in [-1.0, 0.0, 0.5] {
        let start = Instant::now();
        let mesh = build_micro_mesh(&prep.channel, eps, 4, 1.0, 1).unwrap();
        let mc = MicroConfig::new(gamma, stepping).unwrap();
        let sys = assemble(&mesh, &data, &mc).unwrap();
        let sol = solve_system(&sys, initial_values(&mesh, &data), &mc, 1).unwrap();
        slowest = slowest.max(start.elapsed().as_secs_f64());
        worst = sol
            .values
            .iter()
            .flatten()
            .map(|v| (v - 1.0).abs())
            .fold(worst, f64::max);
    }
    let eff = chanhom::fields::effective_quantities(&data.sources, &data.initial, &prep.channel, 4);
    let mm = macro_mesh(cfg).unwrap();
    let msol = solve_macro(&mm, &data, &eff, stepping, 1).unwrap();
    let macro_dev = msol
        .values
        .iter()
        .flatten()
        .map(|v| (v - 1.0).abs())
        .fold(0.0, f64::max);
    outcome(
        worst <= 1e-9 && macro_dev <= 1e-9 && slowest < 10.0,
        format!(
            "micro dev {worst:.2e}, macro dev {macro_dev:.2e}, slowest micro run {slowest:.1} s"
        ),
    )
}

fn conservation(cfg: &ExperimentConfig) -> Outcome {
    let prep = prepare(cfg).unwrap();
    let mut data = prep.data.clone();
    data.sources = ProblemData::constant(1.0, 0.0).sources;
    let stepping = with_horizon(&prep, 1.0);
    let eps = Eps::from_inverse(8).unwrap();
    let mut micro: f64 = 0.0;
    for gamma in [-1.0, 0.0, 0.5] {
        let mesh = build_micro_mesh(&prep.channel, eps, 4, 1.0, 1).unwrap();
        let mc = MicroConfig::new(gamma, stepping).unwrap();
        let sys = assemble(&mesh, &data, &mc).unwrap();
        let sol = solve_system(&sys, initial_values(&mesh, &data), &mc, 0).unwrap();
        micro = micro.max((sol.final_mass - sol.initial_mass).abs() / sol.initial_mass.abs());
    }
    let eff = chanhom::fields::effective_quantities(&data.sources, &data.initial, &prep.channel, 4);
    let mm = macro_mesh(cfg).unwrap();
    let sys = assemble_macro(&mm, &data, &eff);
    let msol = solve_macro(&mm, &data, &eff, stepping, 0).unwrap();
    let m0 = sys.total_mass(&msol.values[0]);
    let m1 = sys.total_mass(msol.values.last().unwrap());
    let macro_drift = (m1 - m0).abs() / m0.abs();
    outcome(
        micro <= 1e-8 && macro_drift <= 1e-8,
        format!("micro drift {micro:.2e}, macro drift {macro_drift:.2e}"),
    )
}

fn micro_manufactured_run(m: u32, stepping: TimeStepping) -> (f64, Vec<f64>, Vec<f64>) {
    let eps = Eps::from_inverse(4).unwrap();
    let mesh = build_micro_mesh(&straight_channel(), eps, m, 1.0, 1).unwrap();
    let (data, exact) = micro_manufactured(eps.value(), 0.0, 1.0);
    let cfg = MicroConfig::new(0.0, stepping).unwrap();
    let sys = assemble(&mesh, &data, &cfg).unwrap();
    let sol = solve_system(&sys, initial_values(&mesh, &data), &cfg, usize::MAX).unwrap();
    let u = sol.final_values().to_vec();
    (
        micro_error(&mesh, &sys, &u, &exact, stepping.t_end),
        u,
        sys.mass.clone(),
    )
}

fn weighted_distance(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(w)
        .map(|((a, b), w)| w * (a - b).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn manufactured_orders() -> Outcome {
    let cn = TimeStepping::new(0.0025, 0.1, 0.5, 1e-12, 20_000).unwrap();
    let micro: Vec<f64> = [4, 8, 16]
        .iter()
        .map(|&m| micro_manufactured_run(m, cn).0)
        .collect();

    let ch = straight_channel();
    let (data, bulk, slow) = macro_manufactured(1.0);
    let eff = effective(&data, &ch);
    let macro_err: Vec<f64> = [8.0, 16.0, 32.0]
        .iter()
        .map(|&n| {
            let mesh = build_macro_mesh(1.0 / n, 1.0, 1).unwrap();
            let sol = solve_macro(&mesh, &data, &eff, cn, usize::MAX).unwrap();
            macro_error(&mesh, sol.values.last().unwrap(), &bulk, &slow, 0.1)
        })
        .collect();

    // implicit Euler self-convergence under dt halving on a fixed mesh
    let dts = [0.1, 0.05, 0.025, 0.0125];
    let ie = |dt: f64| TimeStepping::new(dt, 0.5, 1.0, 1e-12, 20_000).unwrap();
    let runs: Vec<(Vec<f64>, Vec<f64>)> = dts
        .iter()
        .map(|&dt| {
            let (_, u, w) = micro_manufactured_run(4, ie(dt));
            (u, w)
        })
        .collect();
    let micro_dt: Vec<f64> = runs
        .windows(2)
        .map(|p| weighted_distance(&p[0].0, &p[1].0, &p[0].1))
        .collect();
    let mesh = build_macro_mesh(1.0 / 16.0, 1.0, 1).unwrap();
    let msys = assemble_macro(&mesh, &data, &eff);
    let mruns: Vec<Vec<f64>> = dts
        .iter()
        .map(|&dt| {
            solve_macro(&mesh, &data, &eff, ie(dt), usize::MAX)
                .unwrap()
                .values
                .pop()
                .unwrap()
        })
        .collect();
    let macro_dt: Vec<f64> = mruns
        .windows(2)
        .map(|p| weighted_distance(&p[0], &p[1], &msys.mass))
        .collect();

    let (space_micro, space_macro, time_micro, time_macro) = (
        orders(&micro),
        orders(&macro_err),
        orders(&micro_dt),
        orders(&macro_dt),
    );
    let pass = space_micro.iter().chain(&space_macro).all(|&p| p >= 1.8)
        && time_micro.iter().chain(&time_macro).all(|&p| p >= 0.9);
    outcome(
        pass,
        format!(
            "micro space {} macro space {} micro time {} macro time {}",
            fmt(&space_micro),
            fmt(&space_macro),
            fmt(&time_micro),
            fmt(&time_macro)
        ),
    )
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn gamma_zero_sweep(rows: &[ConvergenceRow], seconds: f64) -> Outcome {
    let mut pass = seconds <= 600.0;
    let mut worst_ratio: f64 = 0.0;
    for c in 0..5 {
        let col: Vec<f64> = rows.iter().map(|r| r.errors()[c]).collect();
        pass &= strictly_decreasing(&col);
        let ratio = col[col.len() - 1] / col[0];
        worst_ratio = worst_ratio.max(ratio);
    }
    pass &= worst_ratio <= 0.5;
    outcome(
        pass,
        format!("worst e(eps_min)/e(eps_max) {worst_ratio:.3}, sweep time {seconds:.0} s"),
    )
}

fn gamma_independence(
    base: &ConvergenceRow,
    runs: &[(ConvergenceRow, Option<MicroRun>)],
) -> Outcome {
    let at: Vec<&(ConvergenceRow, Option<MicroRun>)> =
        runs.iter().filter(|(r, _)| r.eps == 0.0625).collect();
    let mut pass = at.len() == 3;
    let mut detail = vec![format!(
        "eps = 1/4 gamma = 0 errors {}",
        fmt(&base.errors())
    )];
    for (row, _) in &at {
        let ok = row.errors().iter().zip(base.errors()).all(|(e, b)| *e <= b);
        pass &= ok;
        let mark = if ok { "within" } else { "exceeds" };
        detail.push(format!(
            "gamma {} errors {} {mark}",
            row.gamma,
            fmt(&row.errors())
        ));
    }
    let gaps = gamma_gaps_ref(&at);
    for (a, b, d, bound) in gaps {
        pass &= d <= 3.0 * bound;
        detail.push(format!("|u({a})-u({b})| {d:.2e} vs 3x{bound:.2e}"));
    }
    outcome(pass, detail.join("; "))
}

fn gamma_gaps_ref(at: &[&(ConvergenceRow, Option<MicroRun>)]) -> Vec<(f64, f64, f64, f64)> {
    let bound = at.iter().map(|(r, _)| r.max_error()).fold(0.0, f64::max);
    let mut out = Vec::new();
    for i in 0..at.len() {
        for j in i + 1..at.len() {
            if let ((ra, Some(a)), (rb, Some(b))) = (at[i], at[j]) {
                let d = chanhom::experiment::bulk_difference(&a.mesh, &a.solution, &b.solution);
                out.push((ra.gamma, rb.gamma, d, bound));
            }
        }
    }
    out
}

fn gradient_null(prep: &Prepared, runs: &[(ConvergenceRow, Option<MicroRun>)]) -> Outcome {
    let mut kept: Vec<&(ConvergenceRow, Option<MicroRun>)> = runs
        .iter()
        .filter(|(r, run)| r.gamma == -1.0 && run.is_some())
        .collect();
    kept.sort_by(|a, b| b.0.eps.total_cmp(&a.0.eps));
    let mut pass = kept.len() >= 2;
    let mut detail = Vec::new();
    for (i, psi) in prep.grad_psi.iter().enumerate() {
        let v: Vec<f64> = kept
            .iter()
            .map(|(_, run)| {
                let run = run.as_ref().unwrap();
                gradient_two_scale_null(&run.solution, &run.mesh, &run.system, psi)
                    .value
                    .abs()
            })
            .collect();
        pass &= strictly_decreasing(&v);
        detail.push(format!("psi{} {}", i + 1, fmt(&v)));
    }
    outcome(pass, detail.join("; "))
}

fn oscillation(cfg: &ExperimentConfig, prep: &Prepared) -> Outcome {
    let psi = parse(&cfg.analysis.oscillation_psi).unwrap();
    let s = prep.stepping;
    let rule = TimeRule::uniform(s.dt, s.t_end, s.theta);
    let g = &cfg.geometry;
    let (mut vol, mut surf) = (Vec::new(), Vec::new());
    for eps in cfg.eps_list().unwrap() {
        let mesh =
            build_micro_mesh(&prep.channel, eps, cfg.numerics.m, g.height, g.sigma_length).unwrap();
        let (v, w) = oscillation_gaps(prep, &mesh, &rule, &psi, cfg.numerics.quad_n);
        vol.push(v);
        surf.push(w);
    }
    // a gap at rounding level cannot certify any rate
    let floor = 1e-10 * s.t_end * g.sigma_length as f64;
    let ratios = |v: &[f64]| -> Vec<f64> { v.windows(2).map(|w| w[1] / w[0]).collect() };
    let (rv, rs) = (ratios(&vol), ratios(&surf));
    let degenerate = vol.iter().chain(&surf).any(|&g| g < floor);
    let in_band = rv.iter().chain(&rs).all(|r| (0.3..=0.8).contains(r));
    let mut detail = format!(
        "volume gaps {} ratios {}; surface gaps {} ratios {}",
        fmt(&vol),
        fmt(&rv),
        fmt(&surf),
        fmt(&rs)
    );
    if degenerate {
        detail.push_str("; gaps at rounding level, pairing degenerate for this psi");
    }
    outcome(in_band && !degenerate, detail)
}

fn initial_average(cfg: &ExperimentConfig) -> Outcome {
    let mut cfg = cfg.clone();
    cfg.physics.initial.u_m = "yn^2".into();
    let prep = prepare(&cfg).unwrap();
    let mesh = macro_mesh(&cfg).unwrap();
    let u0 = initial_macro(&mesh, &prep.data, &prep.eff);
    let dev = (0..mesh.nx)
        .map(|i| (u0[mesh.interface(i)] - 1.0 / 3.0).abs())
        .fold(0.0, f64::max);
    outcome(dev <= 1e-6, format!("max |u_M(0) - 1/3| {dev:.2e}"))
}

fn norm_bounds(rows: &[ConvergenceRow]) -> Outcome {
    let names = ["L_eps max", "H_gamma L2", "dual proxy"];
    let mut pass = true;
    let mut detail = Vec::new();
    for (c, name) in names.iter().enumerate() {
        let col: Vec<f64> = rows.iter().map(|r| r.norms()[c]).collect();
        let hi = col.iter().cloned().fold(f64::MIN, f64::max);
        let lo = col.iter().cloned().fold(f64::MAX, f64::min);
        let ratio = hi / lo;
        pass &= lo > 0.0 && ratio <= 4.0;
        detail.push(format!("{name} max/min {ratio:.3}"));
    }
    outcome(pass, detail.join(", "))
}

fn trace_bounds(prep: &Prepared, rows: &[ConvergenceRow]) -> Outcome {
    let m = prep.channel.measures();
    let analytic = (m.lateral_f64() / m.area_f64()).sqrt();
    let worst = rows.iter().map(|r| r.trace_ratio).fold(0.0, f64::max);
    let constant_ok = rows
        .iter()
        .all(|r| (r.trace_ratio_constant - analytic).abs() <= 1e-10);
    outcome(
        constant_ok && worst <= 10.0 * analytic,
        format!("constant-field ratio {analytic:.4}, worst sampled ratio {worst:.4}"),
    )
}

fn main() -> ExitCode {
    let cfg = benchmark();
    let prep = prepare(&cfg).unwrap();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let report = |name: &'static str, o: Outcome, results: &mut Vec<(&str, Outcome)>| {
        let n = results.len() + 1;
        println!(
            "criterion {n:>2}: {} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((name, o));
    };

    report(
        "constant preservation",
        constant_preservation(&cfg),
        &mut results,
    );
    report("conservation", conservation(&cfg), &mut results);
    report("manufactured orders", manufactured_orders(), &mut results);

    let start = Instant::now();
    let macro_sol = macro_run(&cfg, &prep, 1).unwrap();
    let zero: Vec<(Eps, f64)> = cfg
        .eps_list()
        .unwrap()
        .into_iter()
        .map(|e| (e, 0.0))
        .collect();
    let sixteenth = |e: Eps, _: f64| e.inverse() == 16;
    let mut runs = evaluate(&cfg, &prep, &macro_sol, &zero, 1, sixteenth).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let mut rows: Vec<ConvergenceRow> = runs.iter().map(|(r, _)| *r).collect();
    sort_rows(&mut rows);
    report(
        "gamma = 0 convergence",
        gamma_zero_sweep(&rows, seconds),
        &mut results,
    );

    let mut others: Vec<(Eps, f64)> = cfg
        .eps_list()
        .unwrap()
        .into_iter()
        .map(|e| (e, -1.0))
        .collect();
    others.push((Eps::from_inverse(16).unwrap(), 0.5));
    let keep = |e: Eps, g: f64| g == -1.0 || e.inverse() == 16;
    runs.extend(evaluate(&cfg, &prep, &macro_sol, &others, 1, keep).unwrap());
    let base = rows[0];
    report(
        "gamma independence at eps = 1/16",
        gamma_independence(&base, &runs),
        &mut results,
    );
    report(
        "two-scale gradient null (gamma = -1)",
        gradient_null(&prep, &runs),
        &mut results,
    );
    report("oscillation pairing", oscillation(&cfg, &prep), &mut results);
    report("initial cell average", initial_average(&cfg), &mut results);
    report("scaled norm bounds", norm_bounds(&rows), &mut results);
    report("trace inequality", trace_bounds(&prep, &rows), &mut results);

    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!(
        "acceptance: {} of {} criteria pass",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
