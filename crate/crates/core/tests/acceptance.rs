//! The acceptance suite. Each criterion prints one `PASS`/`FAIL` line; the
//! test fails if any criterion fails.
//!
//! Run with `cargo test --test acceptance`.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use markov_bsde::bsde_solver::{
    estimate_bracket_density, solve, solve_on_ensemble, Driver, SolverConfig,
};
use markov_bsde::clock_measure::{lebesgue_decompose, CellArray, Clock, DiscreteMeasurePath};
use markov_bsde::forward_models::{
    apply_generator, bracket_identity, sample_paths, ForwardModel, TestFunction,
};
use markov_bsde::pseudo_pde::{extract_solution, verify_classical_vs_bsde, Node, VerifyBudget};
use markov_bsde::regression::RegressionBasis;
use markov_bsde::rng::path_rng;
use markov_bsde::verification::{Oracle, Quadratic};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn brownian(steps: usize) -> ForwardModel {
    ForwardModel::brownian(Clock::identity(1.0, steps).unwrap(), 0.0, 1.0).unwrap()
}

fn x_squared() -> TestFunction {
    TestFunction::coordinate_square(1, 0)
}

fn decomposition_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = path_rng(2024, 0);
    let mut worst: f64 = 0.0;
    let mut misplaced = 0usize;
    for _ in 0..1000 {
        let n = rng.random_range(1..=10_000);
        let b: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    rng.random_range(0.0..3.0)
                }
            })
            .collect();
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let am = DiscreteMeasurePath::signed(&a).unwrap();
        let bm = DiscreteMeasurePath::nonnegative(b.clone()).unwrap();
        let d = lebesgue_decompose(&am, &bm).unwrap();
        let singular = d.singular.net();
        for k in 0..n {
            let rebuilt = d.density[k] * b[k] + singular[k];
            worst = worst.max((rebuilt - a[k]).abs() / a[k].abs().max(f64::MIN_POSITIVE));
            if b[k] > 0.0 && singular[k] != 0.0 {
                misplaced += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-12 && misplaced == 0 && secs < 5.0,
        format!("max relative reconstruction error {worst:.2e}, {misplaced} misplaced singular cells, {secs:.2} s"),
    )
}

fn heat_oracle() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let start = Instant::now();
        let m = brownian(50);
        let d = Driver::zero(|x| x[0] * x[0]);
        let cfg = SolverConfig {
            n_paths: 100_000,
            seed: 1,
            basis: Some(RegressionBasis::polynomial(2)),
            ..Default::default()
        };
        let (at_zero, _) = solve(&d, &m, (0.0, &[0.0]), &cfg).unwrap();
        let (at_one, _) = solve(&d, &m, (0.0, &[1.0]), &SolverConfig { seed: 2, ..cfg }).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let u = at_zero.start_value();
        let u_ok = (u - 1.0).abs() <= 3.0 * at_zero.start_stderr + 0.01;
        let v = at_one.start_z();
        let se_v = at_one.start_zsq_stderr / (2.0 * v);
        let v_ok = (v - 2.0).abs() <= 3.0 * se_v + 0.01;
        outcome(
            u_ok && v_ok && secs < 60.0,
            format!(
                "u(0,0) = {u:.5} (SE {:.5}), v(0,1) = {v:.5} (SE {se_v:.5}), {secs:.1} s on one thread",
                at_zero.start_stderr
            ),
        )
    })
}

fn ode_oracle() -> Outcome {
    let clock = Clock::identity(1.0, 50).unwrap();
    let models = [
        ("brownian", ForwardModel::brownian(clock.clone(), 0.0, 1.0).unwrap()),
        (
            "jump",
            ForwardModel::jump_diffusion(clock.clone(), 0.0, 1.0, 2.0, 0.0, 0.5).unwrap(),
        ),
        ("stable 1.5", ForwardModel::alpha_stable(clock, 1.5, 1.0).unwrap()),
    ];
    let d = Driver::linear_y(-1.0, |_| 1.0);
    let want = (-1.0f64).exp();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, m) in &models {
        let cfg = SolverConfig {
            n_paths: 10_000,
            seed: 3,
            tol: 1e-4,
            ..Default::default()
        };
        match solve(&d, m, (0.0, &[0.0]), &cfg) {
            Ok((sol, report)) => {
                let rel = sol.start_value() / want - 1.0;
                let iters = report.n_iterations();
                pass &= rel.abs() < 0.02 && iters <= 8;
                parts.push(format!("{name}: rel {rel:+.4}, {iters} iters"));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{name}: {e}"));
            }
        }
    }
    outcome(pass, parts.join("; "))
}

fn contraction_ratio() -> Outcome {
    let m = brownian(20);
    let d = Driver::sin_cos(|x| x[0].cos());
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for seed in 0..10u64 {
        let cfg = SolverConfig {
            n_paths: 10_000,
            seed,
            lambda: Some(5.0),
            tol: 1e-12,
            max_iters: 30,
            ..Default::default()
        };
        let (_, report) = solve(&d, &m, (0.0, &[0.0]), &cfg).unwrap();
        for r in report.ratios() {
            worst = worst.max(r);
            count += 1;
        }
    }
    outcome(
        worst <= 0.6 && count > 0,
        format!("worst ratio {worst:.4} over {count} successive pairs, 10 seeds"),
    )
}

/// Budget `3 m₂² Δt T` for the `O(Δt)` bias `2 m₂² Δt T` of the realized
/// bracket of `x²`, where `m₂ = a(x²)` is the second moment of the jump and
/// diffusion parts per unit clock.
fn bracket_check(name: &str, m: &ForwardModel) -> (bool, String) {
    let e = sample_paths(m, (0.0, &[0.0]), 100_000, 5).unwrap();
    let phi = x_squared();
    let m2 = apply_generator(m, &phi, 0.0, &[0.0]).unwrap();
    let dt = m.clock().dt(0);
    let budget = 3.0 * m2 * m2 * dt * m.clock().horizon();
    let r = bracket_identity(m, &phi, &phi, &e, budget).unwrap();
    (
        r.pass,
        format!(
            "{name}: diff {:.4} (SE {:.4}, budget {budget:.4})",
            r.difference, r.standard_error
        ),
    )
}

fn bracket_identity_check() -> Outcome {
    let clock = Clock::identity(1.0, 50).unwrap();
    let (p1, d1) = bracket_check("brownian", &ForwardModel::brownian(clock.clone(), 0.0, 1.0).unwrap());
    let stable = ForwardModel::alpha_stable_truncated(clock, 1.5, 1.0, 2.0).unwrap();
    let (p2, d2) = bracket_check("truncated stable", &stable);
    outcome(p1 && p2, format!("{d1}; {d2}"))
}

fn cauchy_schwarz() -> Outcome {
    let m = brownian(10);
    let n = 2000;
    let mut worst = f64::INFINITY;
    for pair in 0..100u64 {
        let e = sample_paths(&m, (0.0, &[0.0]), n, 1000 + pair).unwrap();
        let mut rng = path_rng(pair, 99);
        let rho: f64 = rng.random_range(-1.0..1.0);
        let scale: f64 = rng.random_range(0.1..3.0);
        let mut dm1 = CellArray::zeros(n, 10);
        let mut dm2 = CellArray::zeros(n, 10);
        for p in 0..n {
            for k in 0..10 {
                let x = e.state(p, k)[0];
                let dx = e.state(p, k + 1)[0] - x;
                let z: f64 = StandardNormal.sample(&mut rng);
                dm1.set(p, k, (1.0 + x * x).sqrt() * dx);
                dm2.set(p, k, scale * (rho * x.sin() * dx + (1.0 - rho * rho).sqrt() * z * 0.1f64.sqrt()));
            }
        }
        let degree = 1 + (pair % 4) as u32;
        let dens = estimate_bracket_density(&dm1, &dm2, &e, &RegressionBasis::polynomial(degree), 0.0).unwrap();
        let min = dens.determinants().as_slice().iter().copied().fold(f64::INFINITY, f64::min);
        worst = worst.min(min);
    }
    outcome(worst >= -1e-10, format!("smallest determinant {worst:.3e} over 100 pairs"))
}

fn classical_vs_bsde() -> Outcome {
    let budget = VerifyBudget::default();
    let cfg = |seed| SolverConfig {
        n_paths: 10_000,
        seed,
        basis: Some(RegressionBasis::polynomial(2)),
        ..Default::default()
    };
    let heat = Oracle::HeatQuadratic {
        horizon: 1.0,
        sigma: 1.0,
    };
    let linear = Oracle::LinearDriverOde {
        horizon: 1.0,
        rate: -1.0,
        terminal: Quadratic {
            a: 1.0,
            b: 0.5,
            c: 0.25,
        },
        mu: 0.0,
        sigma: 1.0,
    };
    let run = |o: &Oracle, u: TestFunction, seed| {
        verify_classical_vs_bsde(&u, &o.driver(), &o.model(20).unwrap(), (0.0, &[0.0]), &cfg(seed), &budget)
            .unwrap()
    };
    let h = run(&heat, heat.test_function(), 7);
    let l = run(&linear, linear.test_function(), 8);
    let wrong = run(&heat, heat.test_function().shifted(0.5), 7);
    outcome(
        h.pass && l.pass && !wrong.pass,
        format!(
            "heat pass={} (gap {:.4}), linear pass={} (gap {:.4}), u+0.5 pass={} (gap {:.4})",
            h.pass, h.max_mean_abs_diff, l.pass, l.max_mean_abs_diff, wrong.pass, wrong.max_mean_abs_diff
        ),
    )
}

fn uniqueness_surrogate() -> Outcome {
    let m = brownian(10);
    let d = Driver::sin_cos(|x| x[0].cos());
    let nodes: Vec<Node> = [0.0, 0.2, 0.4, 0.6, 0.8]
        .iter()
        .flat_map(|&t| [-1.0, -0.5, 0.0, 0.5, 1.0].map(|x| (t, vec![x])))
        .collect();
    let cfg = |degree, seed| SolverConfig {
        n_paths: 10_000,
        seed,
        basis: Some(RegressionBasis::polynomial(degree)),
        ..Default::default()
    };
    // degree 2 cannot represent cos-shaped solutions exactly; the additive
    // term is the declared projection-bias budget between the two bases
    let projection_budget = 0.01;
    let gaps = |a: &markov_bsde::pseudo_pde::SolutionField, b: &markov_bsde::pseudo_pde::SolutionField| {
        let mut worst: f64 = 0.0;
        let mut fails = 0;
        for (na, nb) in a.nodes.iter().zip(&b.nodes) {
            let se = na.stderr_u.hypot(nb.stderr_u);
            let gap = (na.u - nb.u).abs();
            worst = worst.max(gap / se.max(f64::MIN_POSITIVE));
            if gap > 3.0 * se + projection_budget || na.error.is_some() || nb.error.is_some() {
                fails += 1;
            }
        }
        (worst, fails)
    };
    let a = extract_solution(&d, &m, &nodes, &cfg(2, 100)).unwrap();
    let b = extract_solution(&d, &m, &nodes, &cfg(4, 200)).unwrap();
    let (worst, fails) = gaps(&a, &b);
    // same basis, disjoint seeds: isolates the Monte Carlo part
    let c = extract_solution(&d, &m, &nodes, &cfg(4, 300)).unwrap();
    let (worst_same, _) = gaps(&b, &c);
    outcome(
        fails == 0,
        format!(
            "{fails} of {} nodes outside 3 SE + {projection_budget}; worst standardized gap {worst:.2} \
             (degree 4 vs 4: {worst_same:.2})",
            a.nodes.len()
        ),
    )
}

fn run_cli(config: &Path, out: &Path, threads: usize) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_markov-bsde"))
        .args(["solve", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--threads", &threads.to_string()])
        .status()
        .unwrap()
        .code()
        .unwrap_or(-1)
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let base = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/nonlinear.json");
    let mut json: serde_json::Value = serde_json::from_slice(&std::fs::read(base).unwrap()).unwrap();
    json["output"] = serde_json::json!({"write_paths": true});
    let config = dir.path().join("config.json");
    std::fs::write(&config, json.to_string()).unwrap();
    let one = dir.path().join("one");
    let eight = dir.path().join("eight");
    let codes = (run_cli(&config, &one, 1), run_cli(&config, &eight, 8));
    if codes != (0, 0) {
        return outcome(false, format!("exit codes {codes:?}"));
    }
    let mut compared = 0;
    let mut same = true;
    for entry in std::fs::read_dir(&one).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "csv") {
            let other = eight.join(path.file_name().unwrap());
            same &= std::fs::read(&path).unwrap() == std::fs::read(other).unwrap_or_default();
            compared += 1;
        }
    }
    outcome(
        same && compared > 0,
        format!("{compared} CSV files compared, identical = {same}"),
    )
}

#[test]
fn acceptance_suite() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 measure decomposition exactness", decomposition_exactness),
        ("2 heat-equation oracle", heat_oracle),
        ("3 linear-driver ODE oracle", ode_oracle),
        ("4 contraction ratio", contraction_ratio),
        ("5 bracket identity", bracket_identity_check),
        ("6 Cauchy-Schwarz density property", cauchy_schwarz),
        ("7 classical vs BSDE equivalence", classical_vs_bsde),
        ("8 uniqueness surrogate", uniqueness_surrogate),
        ("9 reproducibility across thread counts", reproducibility),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let o = check();
        // straight to the handle so the line shows even when output is captured
        writeln!(std::io::stderr(), "[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail).unwrap();
        if !o.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn heat_oracle_values_are_exact_at_known_points() {
    let o = Oracle::HeatQuadratic {
        horizon: 1.0,
        sigma: 1.0,
    };
    assert_eq!(o.value(1.0, 3.0), 9.0);
    assert_eq!(o.value(0.0, 0.0), 1.0);
    let ode = Oracle::LinearDriverOde {
        horizon: 1.0,
        rate: -1.0,
        terminal: Quadratic::constant(1.0),
        mu: 0.0,
        sigma: 1.0,
    };
    assert!((ode.value(0.0, 0.3) - 0.367_879_441_171_442_3).abs() < 1e-15);
}

#[test]
fn brownian_ensemble_for_solver_restart() {
    // a solve on a restarted ensemble starts from the restart time
    let m = brownian(10);
    let e = sample_paths(&m, (0.0, &[0.0]), 500, 1).unwrap().restart_at(5);
    let (sol, _) = solve_on_ensemble(&Driver::zero(|x| x[0]), &e, &SolverConfig::default()).unwrap();
    assert_eq!(sol.start_index, 5);
}
