//! Picard iterates for `f = sin(y) + ½cos(z)` with `λ = 5`: successive
//! differences in the weighted norm shrink geometrically.

use markov_bsde::bsde_solver::{solve, Driver, SolverConfig};
use markov_bsde::clock_measure::Clock;
use markov_bsde::forward_models::ForwardModel;

fn main() -> markov_bsde::Result<()> {
    let model = ForwardModel::brownian(Clock::identity(1.0, 20)?, 0.0, 1.0)?;
    // K^Y = K^Z = 1 gives λ = 1 + 2(1 + 1) = 5
    let driver = Driver::sin_cos(|x| x[0].cos()).with_lipschitz(1.0, 1.0);
    let config = SolverConfig {
        n_paths: 10_000,
        lambda: Some(driver.default_lambda()),
        tol: 1e-12,
        max_iters: 30,
        ..Default::default()
    };
    let (sol, report) = solve(&driver, &model, (0.0, &[0.0]), &config)?;
    println!("lambda = {}", report.lambda);
    for r in &report.iterations {
        println!(
            "iteration {:>2}: ‖Δ‖² = {:.3e}  ratio {}  Y_0 = {:.6}",
            r.iteration,
            r.difference_norm,
            r.ratio.map_or("-".to_string(), |q| format!("{q:.4}")),
            r.start_value
        );
    }
    println!("u(0, 0) = {:.6} ± {:.6}", sol.start_value(), sol.start_stderr);
    Ok(())
}
