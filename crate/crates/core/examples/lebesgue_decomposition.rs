//! Splitting a measure against a clock with a flat stretch: mass where the
//! clock does not move is singular and flagged by `K = 1`.

use markov_bsde::clock_measure::{lebesgue_decompose, radon_nikodym_integral, Clock, DiscreteMeasurePath};

fn main() -> markov_bsde::Result<()> {
    let clock = Clock::piecewise_linear(&[(0.0, 0.0), (0.4, 0.4), (0.6, 0.4), (1.0, 1.0)], 10)?;
    let b = clock.as_measure();
    let a = DiscreteMeasurePath::nonnegative(vec![0.1, 0.2, 0.1, 0.05, 0.3, 0.2, 0.1, 0.1, 0.2, 0.15])?;
    let d = lebesgue_decompose(&a, &b)?;
    println!("{:>4} {:>8} {:>8} {:>9} {:>9} {:>2}", "cell", "ΔA", "ΔB", "dA/dB", "singular", "K");
    for k in 0..a.n_cells() {
        println!(
            "{k:>4} {:>8.4} {:>8.4} {:>9.4} {:>9.4} {:>2}",
            a.mass(k),
            b.mass(k),
            d.density[k],
            d.singular.mass(k),
            d.indicator[k]
        );
    }
    let ones = vec![1.0; a.n_cells()];
    println!(
        "total {:.4} = absolutely continuous {:.4} + singular {:.4}",
        a.total(),
        radon_nikodym_integral(&ones, &a, &b)?,
        d.singular.total()
    );
    Ok(())
}
