//! A nonlinear problem under a jump diffusion: `Γ` by closed form and by its
//! definition, then the solution on a small node grid.

use markov_bsde::bsde_solver::{Driver, SolverConfig};
use markov_bsde::clock_measure::Clock;
use markov_bsde::forward_models::{carre_du_champ, carre_du_champ_by_definition, ForwardModel, TestFunction};
use markov_bsde::pseudo_pde::extract_solution;

fn main() -> markov_bsde::Result<()> {
    let model = ForwardModel::jump_diffusion(Clock::identity(1.0, 20)?, 0.0, 0.5, 2.0, 0.1, 0.3)?;
    let phi = TestFunction::coordinate_square(1, 0);
    let psi = TestFunction::gaussian_bump(vec![0.5], 0.7);
    for x in [-1.0, 0.0, 1.5] {
        println!(
            "x = {x:+.1}: Γ(x², bump) = {:.6} (definition {:.6})",
            carre_du_champ(&model, &phi, &psi, 0.0, &[x])?,
            carre_du_champ_by_definition(&model, &phi, &psi, 0.0, &[x])?
        );
    }

    let driver = Driver::sin_cos(|x| x[0].tanh());
    let nodes: Vec<_> = [0.0, 0.5]
        .iter()
        .flat_map(|&s| [-1.0, 0.0, 1.0].map(|x| (s, vec![x])))
        .collect();
    let config = SolverConfig {
        n_paths: 5_000,
        seed: 11,
        ..Default::default()
    };
    let field = extract_solution(&driver, &model, &nodes, &config)?;
    for n in &field.nodes {
        println!(
            "u({:.1}, {:+.1}) = {:.5} ± {:.5}   v = {:.5}   replicas agree: {}",
            n.s, n.x[0], n.u, n.stderr_u, n.v, n.independent_agreement
        );
    }
    Ok(())
}
