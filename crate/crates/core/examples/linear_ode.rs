//! `f = −y`, `g ≡ 1`: the solution is `e^{−(T−t)}` whatever the forward
//! process, so Brownian, jump and stable models all give the same answer.

use markov_bsde::bsde_solver::{solve, Driver, SolverConfig};
use markov_bsde::clock_measure::Clock;
use markov_bsde::forward_models::ForwardModel;

fn main() -> markov_bsde::Result<()> {
    let clock = Clock::identity(1.0, 50)?;
    let models = [
        ("brownian", ForwardModel::brownian(clock.clone(), 0.0, 1.0)?),
        ("jump diffusion", ForwardModel::jump_diffusion(clock.clone(), 0.1, 0.5, 3.0, 0.0, 0.4)?),
        ("alpha-stable 1.5", ForwardModel::alpha_stable(clock, 1.5, 1.0)?),
    ];
    let driver = Driver::linear_y(-1.0, |_| 1.0);
    let config = SolverConfig {
        n_paths: 5_000,
        ..Default::default()
    };
    let exact = (-1.0f64).exp();
    for (name, model) in &models {
        let (sol, report) = solve(&driver, model, (0.0, &[0.0]), &config)?;
        println!(
            "{name:>18}: u(0, 0) = {:.6}  exact {exact:.6}  discrete {:.6}  iterations {}",
            sol.start_value(),
            1.02f64.powi(-50),
            report.n_iterations()
        );
    }
    Ok(())
}
