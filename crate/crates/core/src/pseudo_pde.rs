//! The deterministic pair `(u, v)` with `Y^{s,x}_t = u(t, X_t)` and
//! `d⟨M^{s,x}⟩/dV = v²(·, X)`, residuals of candidate classical solutions of
//! `a(u) + f(·, ·, u, √Γ(u, u)) = 0, u(T, ·) = g`, and their comparison with
//! the BSDE.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::bsde_solver::{solve, solve_on_ensemble, ConvergenceReport, Driver, SolverConfig};
use crate::error::{Error, Result};
use crate::forward_models::{
    apply_generator, bracket_identity, carre_du_champ, sample_paths, BracketComparison, ForwardModel,
    TestFunction,
};
use crate::io::{fmt_float, state_columns, write_csv};
use crate::rng::derive_seed;

/// A start node `(s, x)`.
pub type Node = (f64, Vec<f64>);

/// Outcome at one node. `u` and `v` average two solves on disjoint seeds.
#[derive(Debug, Clone, Serialize)]
pub struct NodeSolution {
    pub s: f64,
    pub x: Vec<f64>,
    pub u: f64,
    pub v: f64,
    pub stderr_u: f64,
    pub stderr_v: f64,
    /// `(u_a, u_b)` from the two seeds.
    pub replicates: (f64, f64),
    /// `|u_a − u_b| ≤ 3 √(se_a² + se_b²)`.
    pub independent_agreement: bool,
    pub iterations: usize,
    pub error: Option<String>,
    /// Reports of the solves that ran, including a non-converged one.
    #[serde(skip)]
    pub reports: Vec<ConvergenceReport>,
}

impl NodeSolution {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub driver: String,
    pub base_seed: u64,
    pub node_seeds: Vec<(u64, u64)>,
    pub n_paths: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolutionField {
    pub dim: usize,
    pub nodes: Vec<NodeSolution>,
    pub provenance: Provenance,
}

impl SolutionField {
    pub fn failures(&self) -> Vec<&NodeSolution> {
        self.nodes.iter().filter(|n| !n.is_ok()).collect()
    }

    pub fn all_independent(&self) -> bool {
        self.nodes.iter().all(|n| n.independent_agreement)
    }

    /// `s,x_1..x_d,u,v,stderr_u`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .nodes
            .iter()
            .map(|n| {
                let mut row = vec![fmt_float(n.s)];
                row.extend(n.x.iter().map(|&v| fmt_float(v)));
                row.extend([fmt_float(n.u), fmt_float(n.v), fmt_float(n.stderr_u)]);
                row
            })
            .collect();
        write_csv(path, &format!("s,{},u,v,stderr_u", state_columns(self.dim)), &rows)
    }
}

/// Stable fingerprint of the inputs that determine a solve.
pub fn config_hash(driver: &Driver, model: &ForwardModel, config: &SolverConfig) -> Result<String> {
    let mut h = DefaultHasher::new();
    driver.name().hash(&mut h);
    serde_json::to_string(model.kind())?.hash(&mut h);
    serde_json::to_string(model.clock())?.hash(&mut h);
    serde_json::to_string(config)?.hash(&mut h);
    Ok(format!("{:016x}", h.finish()))
}

struct NodeRun {
    u: f64,
    se_u: f64,
    v: f64,
    se_v: f64,
    report: ConvergenceReport,
}

fn solve_node(
    driver: &Driver,
    model: &ForwardModel,
    node: &Node,
    config: &SolverConfig,
    seed: u64,
) -> Result<NodeRun> {
    let cfg = SolverConfig {
        seed,
        ..config.clone()
    };
    let (it, report) = solve(driver, model, (node.0, &node.1), &cfg)?;
    let v = it.start_z();
    let se_v = if v > 0.0 {
        it.start_zsq_stderr / (2.0 * v)
    } else {
        it.start_zsq_stderr.sqrt()
    };
    Ok(NodeRun {
        u: it.start_value(),
        se_u: it.start_stderr,
        v,
        se_v,
        report,
    })
}

/// Solves from every node, in parallel, each with two derived seeds.
/// Per-node failures are recorded, not propagated.
pub fn extract_solution(
    driver: &Driver,
    model: &ForwardModel,
    nodes: &[Node],
    config: &SolverConfig,
) -> Result<SolutionField> {
    config.validate()?;
    let dim = model.dim();
    let horizon = model.clock().horizon();
    let seeds: Vec<(u64, u64)> = (0..nodes.len() as u64)
        .map(|i| (derive_seed(config.seed, 2 * i), derive_seed(config.seed, 2 * i + 1)))
        .collect();
    let solutions: Vec<NodeSolution> = nodes
        .par_iter()
        .zip(&seeds)
        .map(|(node, &(sa, sb))| {
            let mut out = NodeSolution {
                s: node.0,
                x: node.1.clone(),
                u: f64::NAN,
                v: f64::NAN,
                stderr_u: f64::NAN,
                stderr_v: f64::NAN,
                replicates: (f64::NAN, f64::NAN),
                independent_agreement: false,
                iterations: 0,
                error: None,
                reports: Vec::new(),
            };
            if node.1.len() != dim {
                out.error = Some(format!("node has dimension {}, model {dim}", node.1.len()));
                return out;
            }
            if node.0 == horizon {
                let g = driver.g(&node.1);
                out.u = g;
                out.v = 0.0;
                out.stderr_u = 0.0;
                out.stderr_v = 0.0;
                out.replicates = (g, g);
                out.independent_agreement = true;
                return out;
            }
            let mut runs = Vec::with_capacity(2);
            for seed in [sa, sb] {
                match solve_node(driver, model, node, config, seed) {
                    Ok(run) => runs.push(run),
                    Err(Error::Convergence(report)) => {
                        out.error = Some(Error::Convergence(report.clone()).to_string());
                        out.reports.push(*report);
                        return out;
                    }
                    Err(e) => {
                        out.error = Some(e.to_string());
                        return out;
                    }
                }
            }
            let (a, b) = (&runs[0], &runs[1]);
            let combined = (a.se_u * a.se_u + b.se_u * b.se_u).sqrt();
            out.u = 0.5 * (a.u + b.u);
            out.v = 0.5 * (a.v + b.v);
            out.stderr_u = 0.5 * combined;
            out.stderr_v = 0.5 * (a.se_v * a.se_v + b.se_v * b.se_v).sqrt();
            out.replicates = (a.u, b.u);
            out.independent_agreement = (a.u - b.u).abs() <= 3.0 * combined + 1e-12 * a.u.abs().max(1.0);
            out.iterations = a.report.n_iterations().max(b.report.n_iterations());
            out.reports = runs.into_iter().map(|r| r.report).collect();
            out
        })
        .collect();
    Ok(SolutionField {
        dim,
        nodes: solutions,
        provenance: Provenance {
            config_hash: config_hash(driver, model, config)?,
            driver: driver.name().to_string(),
            base_seed: config.seed,
            node_seeds: seeds,
            n_paths: config.n_paths,
        },
    })
}

/// `a(u) + f(t, x, u, √Γ(u, u))` on a set of nodes.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualField {
    pub dim: usize,
    pub nodes: Vec<Node>,
    pub residuals: Vec<f64>,
    /// `max |u(T, x) − g(x)|` over the node states.
    pub terminal_mismatch: f64,
    /// Nodes where a negative `Γ(u, u)` was clipped to 0.
    pub clipped: Vec<usize>,
}

impl ResidualField {
    pub fn max_abs(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// `t,x_1..x_d,residual`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .nodes
            .iter()
            .zip(&self.residuals)
            .map(|((t, x), r)| {
                let mut row = vec![fmt_float(*t)];
                row.extend(x.iter().map(|&v| fmt_float(v)));
                row.push(fmt_float(*r));
                row
            })
            .collect();
        write_csv(path, &format!("t,{},residual", state_columns(self.dim)), &rows)
    }
}

pub fn classical_residual(
    u: &TestFunction,
    model: &ForwardModel,
    driver: &Driver,
    nodes: &[Node],
) -> Result<ResidualField> {
    let horizon = model.clock().horizon();
    let mut residuals = Vec::with_capacity(nodes.len());
    let mut clipped = Vec::new();
    let mut terminal_mismatch: f64 = 0.0;
    for (i, (t, x)) in nodes.iter().enumerate() {
        if x.len() != model.dim() {
            return Err(Error::Alignment(format!(
                "node {i} has dimension {}, model {}",
                x.len(),
                model.dim()
            )));
        }
        let gamma = carre_du_champ(model, u, u, *t, x)?;
        if gamma < 0.0 {
            clipped.push(i);
        }
        let value = u.value(*t, x);
        let r = apply_generator(model, u, *t, x)? + driver.f(*t, x, value, gamma.max(0.0).sqrt());
        residuals.push(r);
        terminal_mismatch = terminal_mismatch.max((u.value(horizon, x) - driver.g(x)).abs());
    }
    Ok(ResidualField {
        dim: model.dim(),
        nodes: nodes.to_vec(),
        residuals,
        terminal_mismatch,
        clipped,
    })
}

/// Tolerances for [`verify_classical_vs_bsde`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct VerifyBudget {
    /// Added to `3 SE` for `sup_t E|u(t, X_t) − Y_t|`.
    pub value: f64,
    /// Bracket identity slack per unit of `max ΔV · (V(T) − V(s))`; the
    /// realized bracket carries an `O(Δt)` discretization bias (`2 Δt T` for
    /// `x²` under Brownian motion).
    pub bracket: f64,
    /// Bound on `|classical residual|` at the probed nodes.
    pub residual: f64,
}

impl Default for VerifyBudget {
    fn default() -> Self {
        Self {
            value: 0.05,
            bracket: 3.0,
            residual: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassicalVsBsde {
    /// `sup_t` of the ensemble mean of `|u(t, X_t) − Y_t|`.
    pub max_mean_abs_diff: f64,
    pub stderr_at_max: f64,
    pub time_at_max: f64,
    pub value_pass: bool,
    /// Ensemble mean of `|Σ_j (ΔM[u]_j − ΔM_j)|` over the whole horizon.
    pub martingale_gap: f64,
    pub bracket: BracketComparison,
    pub max_residual: f64,
    pub terminal_mismatch: f64,
    pub residual_pass: bool,
    pub budget: VerifyBudget,
    pub pass: bool,
}

/// Absolute bracket slack `coefficient · max ΔV · (V(T) − V(s))` over the
/// ensemble's active cells.
pub fn bracket_allowance(ensemble: &crate::forward_models::PathEnsemble, coefficient: f64) -> f64 {
    let dv = ensemble.clock().increments();
    let active = &dv[ensemble.start_index()..];
    let max = active.iter().copied().fold(0.0, f64::max);
    coefficient * max * active.iter().sum::<f64>()
}

pub fn verify_classical_vs_bsde(
    u: &TestFunction,
    driver: &Driver,
    model: &ForwardModel,
    start: (f64, &[f64]),
    config: &SolverConfig,
    budget: &VerifyBudget,
) -> Result<ClassicalVsBsde> {
    let ensemble = sample_paths(model, start, config.n_paths, config.seed)?;
    let (sol, _) = solve_on_ensemble(driver, &ensemble, config)?;
    let grid = ensemble.clock().grid();
    let s = ensemble.start_index();
    let n = ensemble.n_paths();
    let nf = n as f64;

    let mut max_mean_abs_diff: f64 = -1.0;
    let mut stderr_at_max = 0.0;
    let mut time_at_max = grid[s];
    let mut value_pass = true;
    for (i, &t) in grid.iter().enumerate().skip(s) {
        let diffs: Vec<f64> = (0..n)
            .map(|p| (u.value(t, ensemble.state(p, i)) - sol.y.get(p, i)).abs())
            .collect();
        let mean = diffs.iter().sum::<f64>() / nf;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0).max(1.0);
        let se = (var / nf).sqrt();
        if mean > 3.0 * se + budget.value {
            value_pass = false;
        }
        if mean > max_mean_abs_diff {
            max_mean_abs_diff = mean;
            stderr_at_max = se;
            time_at_max = t;
        }
    }

    let dm_u = crate::forward_models::martingale_path(model, u, &ensemble)?;
    let martingale_gap = (0..n)
        .map(|p| {
            dm_u.path(p)
                .iter()
                .zip(sol.dm.path(p))
                .map(|(a, b)| a - b)
                .sum::<f64>()
                .abs()
        })
        .sum::<f64>()
        / nf;
    let bracket = bracket_identity(model, u, u, &ensemble, bracket_allowance(&ensemble, budget.bracket))?;

    // classical residual along the start state and a spread of times
    let probe: Vec<Node> = grid[s..]
        .iter()
        .step_by((grid.len() / 10).max(1))
        .map(|&t| (t, start.1.to_vec()))
        .collect();
    let residual = classical_residual(u, model, driver, &probe)?;
    let max_residual = residual.max_abs();
    let residual_pass = max_residual <= budget.residual && residual.terminal_mismatch <= budget.residual;

    Ok(ClassicalVsBsde {
        pass: value_pass && bracket.pass && residual_pass,
        max_mean_abs_diff,
        stderr_at_max,
        time_at_max,
        value_pass,
        martingale_gap,
        bracket,
        max_residual,
        terminal_mismatch: residual.terminal_mismatch,
        residual_pass,
        budget: *budget,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PotentialEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// `U(s, x, A) ≈ E[Σ_k 1_A(t_k, X_{t_k}) ΔV_k]` over cells after the start.
pub fn estimate_potential<A>(
    model: &ForwardModel,
    start: (f64, &[f64]),
    set: A,
    n_paths: usize,
    seed: u64,
) -> Result<PotentialEstimate>
where
    A: Fn(f64, &[f64]) -> bool + Sync,
{
    let ensemble = sample_paths(model, start, n_paths, seed)?;
    let clock = ensemble.clock();
    let grid = clock.grid();
    let dv = clock.increments();
    let s = ensemble.start_index();
    let occupation: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            (s..clock.n_cells())
                .filter(|&k| set(grid[k], ensemble.state(p, k)))
                .map(|k| dv[k])
                .sum()
        })
        .collect();
    let nf = n_paths as f64;
    let value = occupation.iter().sum::<f64>() / nf;
    let var = occupation.iter().map(|o| (o - value).powi(2)).sum::<f64>() / (nf - 1.0).max(1.0);
    Ok(PotentialEstimate {
        value,
        stderr: (var / nf).sqrt(),
    })
}
