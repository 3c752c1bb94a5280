mod common;

use chanhom::geometry::{build_macro_mesh, build_micro_mesh, Eps};
use chanhom::macro_solver::solve_macro;
use chanhom::micro_solver::{assemble, initial_values, solve_system, MicroConfig};
use chanhom::stepping::TimeStepping;
use common::*;

fn micro_final_error(m: u32, gamma: f64) -> f64 {
    let eps = Eps::from_inverse(4).unwrap();
    let mesh = build_micro_mesh(&straight_channel(), eps, m, 1.0, 1).unwrap();
    let (data, exact) = micro_manufactured(eps.value(), gamma, 1.0);
    let cfg = MicroConfig::new(
        gamma,
        TimeStepping::new(0.0025, 0.1, 0.5, 1e-12, 20_000).unwrap(),
    )
    .unwrap();
    let sys = assemble(&mesh, &data, &cfg).unwrap();
    let sol = solve_system(&sys, initial_values(&mesh, &data), &cfg, 1000).unwrap();
    micro_error(&mesh, &sys, sol.final_values(), &exact, 0.1)
}

#[test]
fn micro_spatial_order_for_each_gamma() {
    for gamma in [-1.0, 0.0, 0.5] {
        let e: Vec<f64> = [4, 8, 16]
            .iter()
            .map(|&m| micro_final_error(m, gamma))
            .collect();
        let orders = [(e[0] / e[1]).log2(), (e[1] / e[2]).log2()];
        println!("gamma {gamma}: errors {e:?} orders {orders:?}");
        assert!(orders.iter().all(|&p| p >= 1.8), "gamma {gamma}: {e:?}");
    }
}

#[test]
fn macro_spatial_order() {
    let ch = straight_channel();
    let (data, bulk, slow) = macro_manufactured(1.0);
    let eff = effective(&data, &ch);
    let s = TimeStepping::new(0.0025, 0.1, 0.5, 1e-12, 20_000).unwrap();
    let e: Vec<f64> = [8.0, 16.0, 32.0]
        .iter()
        .map(|&n| {
            let mesh = build_macro_mesh(1.0 / n, 1.0, 1).unwrap();
            let sol = solve_macro(&mesh, &data, &eff, s, 1000).unwrap();
            macro_error(&mesh, sol.values.last().unwrap(), &bulk, &slow, 0.1)
        })
        .collect();
    let orders = [(e[0] / e[1]).log2(), (e[1] / e[2]).log2()];
    println!("macro errors {e:?} orders {orders:?}");
    assert!(orders.iter().all(|&p| p >= 1.8), "{e:?}");
}
