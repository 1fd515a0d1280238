//! `solve`, `verify`, `decompose` and `gamma-check`.
//!
//! Exit codes: 0 success, 1 invalid input, 2 a solve or check that ran but
//! did not converge or did not pass.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::clock_measure::{lebesgue_decompose, DiscreteMeasurePath};
use crate::config::{Prepared, RunConfig};
use crate::error::{Error, Result};
use crate::expression::Expression;
use crate::forward_models::{
    carre_du_champ, carre_du_champ_by_definition, markov_property_test, sample_paths, MarkovTest,
    TestFunction,
};
use crate::io::{fmt_float, state_columns, write_csv};
use crate::pseudo_pde::{classical_residual, extract_solution, verify_classical_vs_bsde, ClassicalVsBsde};
use crate::verification::{statistical_compare, CompareReport, Estimate};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "markov-bsde", version, about = "Markovian BSDE and Pseudo-PDE laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Base seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Paths per solve (overrides the config).
    #[arg(long)]
    pub paths: Option<usize>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve from every node and write `solution.csv` and `convergence.json`.
    Solve(RunArgs),
    /// Check a candidate classical solution against the BSDE.
    Verify(RunArgs),
    /// Lebesgue decomposition of measure A against measure B.
    Decompose {
        /// CSV `cell_index,pos_mass,neg_mass` of A.
        a: PathBuf,
        /// CSV `cell_index,pos_mass,neg_mass` of B.
        b: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Tabulate the carré du champ of test functions at the nodes.
    GammaCheck(RunArgs),
}

/// Maps an error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Convergence(_) | Error::Numeric(_) | Error::Singular(_) => EXIT_FAILED,
        _ => EXIT_INVALID,
    }
}

fn report_error(e: &Error) -> i32 {
    eprintln!("error: {e}");
    exit_code(e)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Solve(a) => with_threads(a.threads, || run_solve(&a)),
        Command::Verify(a) => with_threads(a.threads, || run_verify(&a)),
        Command::GammaCheck(a) => with_threads(a.threads, || run_gamma_check(&a)),
        Command::Decompose { a, b, out } => run_decompose(&a, &b, &out),
    }
}

fn with_threads(threads: Option<usize>, f: impl FnOnce() -> i32 + Send) -> i32 {
    match threads {
        None => f(),
        Some(0) => {
            eprintln!("error: --threads must be >= 1");
            EXIT_INVALID
        }
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(e) => {
                eprintln!("error: cannot start thread pool: {e}");
                EXIT_INVALID
            }
        },
    }
}

/// Loads the config, applies overrides, validates, creates the output
/// directory and echoes the resolved config into it.
fn prepare(args: &RunArgs) -> Result<(Prepared, PathBuf)> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
    }
    if let Some(n) = args.paths {
        cfg.solver.n_paths = n;
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    let base = args.config.parent().unwrap_or(Path::new("."));
    let prepared = cfg.prepare(base)?;
    let out = prepared.config.output.dir.clone();
    std::fs::create_dir_all(&out)?;
    std::fs::write(
        out.join("resolved_config.json"),
        serde_json::to_string_pretty(&prepared.config)?,
    )?;
    Ok((prepared, out))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn run_solve(args: &RunArgs) -> i32 {
    match solve_inner(args) {
        Ok(code) => code,
        Err(e) => report_error(&e),
    }
}

fn solve_inner(args: &RunArgs) -> Result<i32> {
    let (p, out) = prepare(args)?;
    if p.nodes.is_empty() {
        return Err(Error::config("nodes", "empty node list"));
    }
    if p.config.output.write_paths {
        let (s, x) = &p.nodes[0];
        sample_paths(&p.model, (*s, x), p.config.solver.n_paths, p.config.solver.seed)?
            .write_csv(out.join("paths.csv"))?;
    }
    let field = extract_solution(&p.driver, &p.model, &p.nodes, &p.config.solver)?;
    field.write_csv(out.join("solution.csv"))?;
    let reports: Vec<_> = field.nodes.iter().map(|n| &n.reports).collect();
    write_json(&out.join("convergence.json"), &reports)?;
    write_json(&out.join("nodes.json"), &field)?;
    let failures = field.failures();
    for n in &failures {
        eprintln!(
            "node (s = {}, x = {:?}): {}",
            n.s,
            n.x,
            n.error.as_deref().unwrap_or_default()
        );
    }
    Ok(if failures.is_empty() { EXIT_OK } else { EXIT_FAILED })
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    max_residual: f64,
    terminal_mismatch: f64,
    classical_vs_bsde: ClassicalVsBsde,
    markov: Option<MarkovTest>,
    oracle_comparison: Option<CompareReport>,
    pass: bool,
}

pub fn run_verify(args: &RunArgs) -> i32 {
    match verify_inner(args) {
        Ok(code) => code,
        Err(e) => report_error(&e),
    }
}

fn verify_inner(args: &RunArgs) -> Result<i32> {
    let (p, out) = prepare(args)?;
    if p.nodes.is_empty() {
        return Err(Error::config("nodes", "empty node list"));
    }
    let spec = &p.config.verify;
    let u = spec.candidate(p.model.dim())?;
    let residual = classical_residual(&u, &p.model, &p.driver, &p.nodes)?;
    residual.write_csv(out.join("residual.csv"))?;
    let (s, x) = &p.nodes[0];
    let cvb = verify_classical_vs_bsde(&u, &p.driver, &p.model, (*s, x), &p.config.solver, &spec.budget)?;

    let ensemble = sample_paths(&p.model, (*s, x), p.config.solver.n_paths, p.config.solver.seed)?;
    let n_times = ensemble.n_times();
    let t_mid = (ensemble.start_index() + n_times - 1) / 2;
    let markov = if t_mid >= ensemble.start_index() + 2 {
        let lag = (ensemble.start_index() + t_mid) / 2;
        Some(markov_property_test(&ensemble, |x| x[0], t_mid, &[lag], spec.markov_level)?)
    } else {
        None
    };

    let oracle_comparison = match &spec.oracle {
        Some(oracle) => {
            let field = extract_solution(&p.driver, &p.model, &p.nodes, &p.config.solver)?;
            field.write_csv(out.join("solution.csv"))?;
            let estimates: Vec<Estimate> = field
                .nodes
                .iter()
                .map(|n| Estimate {
                    value: n.u,
                    stderr: n.stderr_u,
                })
                .collect();
            let truths: Vec<f64> = p
                .nodes
                .iter()
                .map(|(s, x)| oracle.value(*s, x[0]) + spec.shift)
                .collect();
            Some(statistical_compare(&estimates, &truths, spec.bias_budget)?)
        }
        None => None,
    };

    let pass = residual.max_abs() <= spec.budget.residual
        && residual.terminal_mismatch <= spec.budget.residual
        && cvb.pass
        && markov.as_ref().is_none_or(|m| m.pass)
        && oracle_comparison.as_ref().is_none_or(|c| c.pass);
    let report = VerifyReport {
        max_residual: residual.max_abs(),
        terminal_mismatch: residual.terminal_mismatch,
        classical_vs_bsde: cvb,
        markov,
        oracle_comparison,
        pass,
    };
    write_json(&out.join("verify_report.json"), &report)?;
    Ok(if pass { EXIT_OK } else { EXIT_FAILED })
}

pub fn run_decompose(a: &Path, b: &Path, out: &Path) -> i32 {
    let run = || -> Result<()> {
        let ma = DiscreteMeasurePath::read_csv(a)?;
        let mb = DiscreteMeasurePath::read_csv(b)?;
        let d = lebesgue_decompose(&ma, &mb)?;
        std::fs::create_dir_all(out)?;
        let rows: Vec<Vec<String>> = (0..d.density.len())
            .map(|k| vec![k.to_string(), fmt_float(d.density[k]), fmt_float(d.indicator[k])])
            .collect();
        write_csv(out.join("density.csv"), "cell_index,density,indicator", &rows)?;
        d.singular.write_csv(out.join("singular.csv"))?;
        Ok(())
    };
    match run() {
        Ok(()) => EXIT_OK,
        Err(e) => report_error(&e),
    }
}

pub fn run_gamma_check(args: &RunArgs) -> i32 {
    match gamma_inner(args) {
        Ok(code) => code,
        Err(e) => report_error(&e),
    }
}

fn gamma_inner(args: &RunArgs) -> Result<i32> {
    let (p, out) = prepare(args)?;
    if p.nodes.is_empty() {
        return Err(Error::config("nodes", "empty node list"));
    }
    let spec = &p.config.gamma_check;
    let dim = p.model.dim();
    let functions: Vec<(String, TestFunction)> = spec
        .functions
        .iter()
        .enumerate()
        .map(|(i, src)| {
            let e = Expression::parse(&format!("gamma_check.functions[{i}]"), src, dim)?;
            Ok((src.clone(), TestFunction::new(dim, move |t, x| e.eval(t, x, 0.0, 0.0))))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut pass = true;
    for (t, x) in &p.nodes {
        for (i, (src_a, fa)) in functions.iter().enumerate() {
            for (src_b, fb) in &functions[i..] {
                let closed = carre_du_champ(&p.model, fa, fb, *t, x)?;
                let by_def = carre_du_champ_by_definition(&p.model, fa, fb, *t, x)?;
                let diff = (closed - by_def).abs();
                let scale = closed.abs().max(1.0);
                if diff > spec.tolerance * scale || (src_a == src_b && closed < -spec.tolerance * scale) {
                    pass = false;
                }
                let mut row = vec![fmt_float(*t)];
                row.extend(x.iter().map(|&v| fmt_float(v)));
                row.extend([
                    src_a.clone(),
                    src_b.clone(),
                    fmt_float(closed),
                    fmt_float(by_def),
                    fmt_float(diff),
                ]);
                rows.push(row);
            }
        }
    }
    write_csv(
        out.join("gamma.csv"),
        &format!("t,{},phi,psi,gamma,gamma_by_definition,abs_diff", state_columns(dim)),
        &rows,
    )?;
    Ok(if pass { EXIT_OK } else { EXIT_FAILED })
}
