//! Potential measure `U(s, x, A) = E ∫ 1_A(t, X_t) dV_t` of a few sets,
//! with a clock that stops on `[0.4, 0.6]`.

use markov_bsde::clock_measure::Clock;
use markov_bsde::forward_models::ForwardModel;
use markov_bsde::pseudo_pde::estimate_potential;

fn main() -> markov_bsde::Result<()> {
    let clock = Clock::piecewise_linear(&[(0.0, 0.0), (0.4, 0.4), (0.6, 0.4), (1.0, 0.8)], 50)?;
    let model = ForwardModel::brownian(clock, 0.0, 1.0)?;
    let start = (0.0, &[0.0][..]);
    let sets: [(&str, fn(f64, &[f64]) -> bool); 4] = [
        ("everything", |_, _| true),
        ("x > 0", |_, x| x[0] > 0.0),
        ("|x| < 0.5", |_, x| x[0].abs() < 0.5),
        ("t in [0.4, 0.6)", |t, _| (0.4..0.6).contains(&t)),
    ];
    for (name, set) in sets {
        let p = estimate_potential(&model, start, set, 20_000, 3)?;
        println!("{name:>16}: {:.5} ± {:.5}", p.value, p.stderr);
    }
    Ok(())
}
