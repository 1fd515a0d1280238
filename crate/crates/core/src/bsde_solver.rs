//! Picard iteration for `Y_t = g(X_T) + ∫_t^T f(r, X_r, Y_r, Z_r) dV_r − (M_T − M_t)`
//! with `Z = √(d⟨M⟩/dV)`, on a fixed path ensemble.

use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clock_measure::{CellArray, Clock};
use crate::error::{Error, Result};
use crate::forward_models::{sample_paths, ForwardModel, PathEnsemble};
use crate::regression::{fit, predict, FittedRegression, RegressionBasis};
use crate::rng::path_rng;

pub type DriverFn = Arc<dyn Fn(f64, &[f64], f64, f64) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// The pair `(f, g)` with declared Lipschitz constants of `f` in `y` and `z`.
#[derive(Clone)]
pub struct Driver {
    f: DriverFn,
    g: TerminalFn,
    k_y: f64,
    k_z: f64,
    name: String,
}

impl fmt::Debug for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Driver")
            .field("name", &self.name)
            .field("k_y", &self.k_y)
            .field("k_z", &self.k_z)
            .finish()
    }
}

impl Driver {
    pub fn new<F, G>(f: F, g: G, k_y: f64, k_z: f64) -> Self
    where
        F: Fn(f64, &[f64], f64, f64) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            f: Arc::new(f),
            g: Arc::new(g),
            k_y,
            k_z,
            name: "custom".into(),
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// `f ≡ 0`.
    pub fn zero<G>(g: G) -> Self
    where
        G: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(|_, _, _, _| 0.0, g, 0.0, 0.0).named("zero")
    }

    /// `f ≡ c`.
    pub fn constant<G>(c: f64, g: G) -> Self
    where
        G: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(move |_, _, _, _| c, g, 0.0, 0.0).named("constant")
    }

    /// `f(t, x, y, z) = c·y`.
    pub fn linear_y<G>(c: f64, g: G) -> Self
    where
        G: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(move |_, _, y, _| c * y, g, c.abs(), 0.0).named("linear_y")
    }

    /// `f(t, x, y, z) = sin(y) + ½ cos(z)`.
    pub fn sin_cos<G>(g: G) -> Self
    where
        G: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(|_, _, y, z| y.sin() + 0.5 * z.cos(), g, 1.0, 0.5).named("sin_cos")
    }

    /// Replaces the declared Lipschitz constants (any upper bound is valid).
    pub fn with_lipschitz(mut self, k_y: f64, k_z: f64) -> Self {
        self.k_y = k_y;
        self.k_z = k_z;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn k_y(&self) -> f64 {
        self.k_y
    }

    pub fn k_z(&self) -> f64 {
        self.k_z
    }

    #[inline]
    pub fn f(&self, t: f64, x: &[f64], y: f64, z: f64) -> f64 {
        (self.f)(t, x, y, z)
    }

    #[inline]
    pub fn g(&self, x: &[f64]) -> f64 {
        (self.g)(x)
    }

    /// `1 + 2((K^Y)² + (K^Z)²)`.
    pub fn default_lambda(&self) -> f64 {
        1.0 + 2.0 * (self.k_y * self.k_y + self.k_z * self.k_z)
    }

    /// Randomized check of `|f(t,x,y,z) − f(t,x,y',z')| ≤ K^Y|y−y'| + K^Z|z−z'|`.
    pub fn check_lipschitz(&self, dim: usize, horizon: f64, samples: usize, seed: u64) -> Result<()> {
        if !(self.k_y >= 0.0 && self.k_z >= 0.0) {
            return Err(Error::config("driver.lipschitz", "constants must be >= 0"));
        }
        let mut rng = path_rng(seed, u64::MAX);
        for _ in 0..samples {
            let t = rng.random_range(0.0..=horizon);
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
            let (y, y2) = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            let (z, z2) = (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
            let lhs = (self.f(t, &x, y, z) - self.f(t, &x, y2, z2)).abs();
            let rhs = self.k_y * (y - y2).abs() + self.k_z * (z - z2).abs();
            if !(lhs <= rhs * (1.0 + 1e-9) + 1e-12) {
                return Err(Error::config(
                    "driver.lipschitz",
                    format!(
                        "declared K^Y = {}, K^Z = {} violated at t={t}, x={x:?}, (y,z)=({y},{z}), \
                         (y',z')=({y2},{z2}): |Δf| = {lhs} > {rhs}",
                        self.k_y, self.k_z
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Treatment of negative regressed variances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipPolicy {
    /// Replace by 0 and count the event.
    #[default]
    ClipAtZero,
    /// Fail with a numeric error.
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Weight exponent of the norm; `None` uses [`Driver::default_lambda`].
    pub lambda: Option<f64>,
    pub max_iters: usize,
    /// Threshold on the squared weighted norm of successive differences.
    pub tol: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// `None` uses `1e-8 · n_paths`.
    pub ridge: Option<f64>,
    /// `None` uses [`RegressionBasis::default_for`].
    pub basis: Option<RegressionBasis>,
    pub clip: ClipPolicy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            max_iters: 20,
            tol: 1e-4,
            n_paths: 10_000,
            seed: 0,
            ridge: None,
            basis: None,
            clip: ClipPolicy::ClipAtZero,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::config("solver.lambda", "must be >= 0"));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("solver.tol", "must be > 0"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("solver.max_iters", "must be >= 1"));
        }
        if self.n_paths < 2 {
            return Err(Error::config("solver.n_paths", "must be >= 2"));
        }
        if let Some(r) = self.ridge {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::config("solver.ridge", "must be >= 0"));
            }
        }
        if let Some(b) = &self.basis {
            b.validate()?;
        }
        Ok(())
    }

    pub fn ridge_for(&self, n_paths: usize) -> f64 {
        self.ridge.unwrap_or(1e-8 * n_paths as f64)
    }

    pub fn basis_for(&self, dim: usize) -> RegressionBasis {
        self.basis.clone().unwrap_or_else(|| RegressionBasis::default_for(dim))
    }

    pub fn lambda_for(&self, driver: &Driver) -> f64 {
        self.lambda.unwrap_or_else(|| driver.default_lambda())
    }
}

/// Regression settings shared by every step of one solve.
#[derive(Debug, Clone)]
pub struct StepSettings {
    pub basis: RegressionBasis,
    pub ridge: f64,
    pub clip: ClipPolicy,
}

/// One Picard iterate `(Y^k, M^k)` on a fixed ensemble.
#[derive(Debug, Clone)]
pub struct BsdeIterate {
    /// `n_paths × (N+1)` values `Y_{t_i}`.
    pub y: CellArray,
    /// `n_paths × N` increments `ΔM_j = M_{t_{j+1}} − M_{t_j}`.
    pub dm: CellArray,
    /// `n_paths × N` estimates of `d⟨M⟩/dV` at `X_{t_j}`, ≥ 0.
    pub zsq: CellArray,
    pub iteration: usize,
    /// Regression of `Y` per time; `None` at the start (sample mean) and at `T`.
    pub y_fits: Vec<Option<FittedRegression>>,
    /// Regression of `ΔM²/ΔV` per cell; `None` where not fitted.
    pub zsq_fits: Vec<Option<FittedRegression>>,
    pub clip_count: usize,
    /// Ensemble mean of `Σ ΔM²` over cells with `ΔV = 0`.
    pub singular_mass: f64,
    pub start_index: usize,
    /// Standard error of `Y` at the start index.
    pub start_stderr: f64,
    /// Standard error of `Zsq` on the first cell after the start.
    pub start_zsq_stderr: f64,
}

impl BsdeIterate {
    /// `(Y⁰, M⁰) = (0, 0)`.
    pub fn zero(ensemble: &PathEnsemble) -> Self {
        let n = ensemble.n_paths();
        let cells = ensemble.clock().n_cells();
        Self {
            y: CellArray::zeros(n, cells + 1),
            dm: CellArray::zeros(n, cells),
            zsq: CellArray::zeros(n, cells),
            iteration: 0,
            y_fits: vec![None; cells + 1],
            zsq_fits: vec![None; cells],
            clip_count: 0,
            singular_mass: 0.0,
            start_index: ensemble.start_index(),
            start_stderr: 0.0,
            start_zsq_stderr: 0.0,
        }
    }

    /// Wraps arbitrary processes `(Y, ΔM)` as an iterate, estimating the
    /// bracket density from `ΔM`.
    pub fn from_processes(
        ensemble: &PathEnsemble,
        y: CellArray,
        dm: CellArray,
        settings: &StepSettings,
    ) -> Result<Self> {
        let cells = ensemble.clock().n_cells();
        if y.n_paths() != ensemble.n_paths()
            || y.n_cells() != cells + 1
            || dm.n_paths() != ensemble.n_paths()
            || dm.n_cells() != cells
        {
            return Err(Error::Alignment("processes do not match the ensemble shape".into()));
        }
        let mut out = Self::zero(ensemble);
        let z = bracket_density(&dm, ensemble, settings)?;
        out.y = y;
        out.dm = dm;
        out.zsq = z.zsq;
        out.zsq_fits = z.fits;
        out.clip_count = z.clip_count;
        out.singular_mass = z.singular_mass;
        Ok(out)
    }

    /// `Y` at the start index of path 0; deterministic for a common start.
    pub fn start_value(&self) -> f64 {
        self.y.get(0, self.start_index)
    }

    /// `√Zsq` on the first cell after the start, path 0.
    pub fn start_z(&self) -> f64 {
        if self.start_index < self.zsq.n_cells() {
            self.zsq.get(0, self.start_index).sqrt()
        } else {
            0.0
        }
    }

    pub fn n_times(&self) -> usize {
        self.y.n_cells()
    }
}

struct ZsqEstimate {
    zsq: CellArray,
    fits: Vec<Option<FittedRegression>>,
    clip_count: usize,
    singular_mass: f64,
    start_stderr: f64,
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// Fits `targets` on the states at `time_index`, or takes the sample mean
/// when all paths share one start state there.
fn conditional_expectation(
    targets: &[f64],
    ensemble: &PathEnsemble,
    time_index: usize,
    settings: &StepSettings,
) -> Result<(Vec<f64>, Option<FittedRegression>, f64)> {
    if ensemble.has_common_start() && time_index <= ensemble.start_index() {
        let (m, se) = mean_and_stderr(targets);
        return Ok((vec![m; targets.len()], None, se));
    }
    let states = ensemble.states_at(time_index);
    let fitted = fit(targets, &states, &settings.basis, settings.ridge)?;
    let pred = predict(&fitted, &states);
    let n = targets.len() as f64;
    let se = (fitted.residual_sum_of_squares() / (n * (n - 1.0).max(1.0))).sqrt();
    Ok((pred, Some(fitted), se))
}

fn bracket_density(dm: &CellArray, ensemble: &PathEnsemble, settings: &StepSettings) -> Result<ZsqEstimate> {
    let clock = ensemble.clock();
    let n = ensemble.n_paths();
    let cells = clock.n_cells();
    let s = ensemble.start_index();
    let dv = clock.increments();
    let per_cell: Vec<Result<(Vec<f64>, Option<FittedRegression>, usize, f64, f64)>> = (s..cells)
        .into_par_iter()
        .map(|j| {
            let col = dm.column(j);
            if dv[j] <= 0.0 {
                let mass = col.iter().map(|m| m * m).sum::<f64>() / n as f64;
                return Ok((vec![0.0; n], None, 0, mass, 0.0));
            }
            let targets: Vec<f64> = col.iter().map(|m| m * m / dv[j]).collect();
            let (mut pred, fitted, se) = conditional_expectation(&targets, ensemble, j, settings)?;
            let mut clips = 0;
            for v in pred.iter_mut() {
                if *v < 0.0 {
                    if settings.clip == ClipPolicy::Reject {
                        return Err(Error::Numeric(format!(
                            "negative bracket density {v} on cell {j}"
                        )));
                    }
                    *v = 0.0;
                    clips += 1;
                }
            }
            Ok((pred, fitted, clips, 0.0, se))
        })
        .collect();
    let mut zsq = CellArray::zeros(n, cells);
    let mut fits = vec![None; cells];
    let mut clip_count = 0;
    let mut singular_mass = 0.0;
    let mut start_stderr = 0.0;
    for (offset, r) in per_cell.into_iter().enumerate() {
        let j = s + offset;
        let (pred, fitted, clips, mass, se) = r?;
        for (p, v) in pred.into_iter().enumerate() {
            zsq.set(p, j, v);
        }
        fits[j] = fitted;
        clip_count += clips;
        singular_mass += mass;
        if j == s {
            start_stderr = se;
        }
    }
    Ok(ZsqEstimate {
        zsq,
        fits,
        clip_count,
        singular_mass,
        start_stderr,
    })
}

/// One application of the Picard map `Φ` to `prev` on `ensemble`.
pub fn picard_step(
    prev: &BsdeIterate,
    ensemble: &PathEnsemble,
    driver: &Driver,
    settings: &StepSettings,
) -> Result<BsdeIterate> {
    let clock = ensemble.clock();
    let n = ensemble.n_paths();
    let cells = clock.n_cells();
    let n_times = cells + 1;
    let s = ensemble.start_index();
    if prev.y.n_paths() != n || prev.y.n_cells() != n_times || prev.dm.n_cells() != cells {
        return Err(Error::Alignment(
            "previous iterate is not defined on this ensemble".into(),
        ));
    }
    let grid = clock.grid();
    let dv = clock.increments();

    // per-path driver increments F_j and backward targets
    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..n)
        .into_par_iter()
        .map(|p| {
            let mut f_inc = vec![0.0; cells];
            for j in s..cells {
                if dv[j] > 0.0 {
                    let x = ensemble.state(p, j);
                    let y = prev.y.get(p, j);
                    let z = prev.zsq.get(p, j).max(0.0).sqrt();
                    let v = driver.f(grid[j], x, y, z);
                    if !v.is_finite() {
                        return Err(Error::Numeric(format!(
                            "driver returned {v} at t={}, x={x:?}, y={y}, z={z}",
                            grid[j]
                        )));
                    }
                    f_inc[j] = v * dv[j];
                }
            }
            let xt = ensemble.state(p, cells);
            let g = driver.g(xt);
            if !g.is_finite() {
                return Err(Error::Numeric(format!("terminal condition returned {g} at x={xt:?}")));
            }
            let mut target = vec![0.0; n_times];
            target[cells] = g;
            for i in (s..cells).rev() {
                target[i] = target[i + 1] + f_inc[i];
            }
            Ok((f_inc, target))
        })
        .collect();
    let mut f_inc = CellArray::zeros(n, cells);
    let mut targets = CellArray::zeros(n, n_times);
    for (p, r) in rows.into_iter().enumerate() {
        let (fi, ti) = r?;
        f_inc.path_mut(p).copy_from_slice(&fi);
        targets.path_mut(p).copy_from_slice(&ti);
    }

    let fitted: Vec<Result<(Vec<f64>, Option<FittedRegression>, f64)>> = (s..cells)
        .into_par_iter()
        .map(|i| conditional_expectation(&targets.column(i), ensemble, i, settings))
        .collect();
    let mut y = CellArray::zeros(n, n_times);
    let mut y_fits = vec![None; n_times];
    let mut start_stderr = 0.0;
    for (offset, r) in fitted.into_iter().enumerate() {
        let i = s + offset;
        let (pred, fit_i, se) = r?;
        for (p, v) in pred.into_iter().enumerate() {
            y.set(p, i, v);
        }
        y_fits[i] = fit_i;
        if i == s {
            start_stderr = se;
        }
    }
    for p in 0..n {
        y.set(p, cells, targets.get(p, cells));
        let ys = y.get(p, s);
        for i in 0..s {
            y.set(p, i, ys);
        }
    }

    let mut dm = CellArray::zeros(n, cells);
    for p in 0..n {
        for j in s..cells {
            dm.set(p, j, y.get(p, j + 1) - y.get(p, j) + f_inc.get(p, j));
        }
    }
    let z = bracket_density(&dm, ensemble, settings)?;
    // the start-cell bracket also inherits the error of the fit one step later
    let mut start_zsq_stderr = z.start_stderr;
    if ensemble.has_common_start() && s < cells && dv[s] > 0.0 {
        if let Some(next) = y_fits[s + 1].as_ref() {
            let w: Vec<f64> = dm.column(s).iter().map(|m| 2.0 * m / (n as f64 * dv[s])).collect();
            let se = next.functional_standard_error(&ensemble.states_at(s + 1), &w);
            start_zsq_stderr = start_zsq_stderr.hypot(se);
        }
    }
    Ok(BsdeIterate {
        y,
        dm,
        zsq: z.zsq,
        iteration: prev.iteration + 1,
        y_fits,
        zsq_fits: z.fits,
        clip_count: z.clip_count,
        singular_mass: z.singular_mass,
        start_index: s,
        start_stderr,
        start_zsq_stderr,
    })
}

/// Ensemble mean of `Σ_k e^{λV_{t_k}} (Y_{t_k}² ΔV_k + ΔM_k²)`, the squared
/// `‖·‖_λ` norm.
pub fn weighted_norm(iter: &BsdeIterate, clock: &Clock, lambda: f64) -> f64 {
    weighted_norm_of(&iter.y, &iter.dm, clock, lambda)
}

/// Squared `‖·‖_λ` norm of the difference of two iterates.
pub fn weighted_norm_difference(a: &BsdeIterate, b: &BsdeIterate, clock: &Clock, lambda: f64) -> Result<f64> {
    if !a.y.same_shape(&b.y) || !a.dm.same_shape(&b.dm) {
        return Err(Error::Alignment("iterates live on different ensembles".into()));
    }
    let y = a.y.zip_with(&b.y, |u, v| u - v)?;
    let dm = a.dm.zip_with(&b.dm, |u, v| u - v)?;
    Ok(weighted_norm_of(&y, &dm, clock, lambda))
}

fn weighted_norm_of(y: &CellArray, dm: &CellArray, clock: &Clock, lambda: f64) -> f64 {
    let values = clock.values();
    let dv = clock.increments();
    let weights: Vec<f64> = (0..dv.len()).map(|k| (lambda * values[k]).exp()).collect();
    let mut total = 0.0;
    for p in 0..y.n_paths() {
        let (yp, mp) = (y.path(p), dm.path(p));
        for k in 0..dv.len() {
            total += weights[k] * (yp[k] * yp[k] * dv[k] + mp[k] * mp[k]);
        }
    }
    total / y.n_paths() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Squared `‖·‖_λ` norm of the difference to the previous iterate.
    pub difference_norm: f64,
    /// Ratio to the previous difference norm.
    pub ratio: Option<f64>,
    pub clip_count: usize,
    pub singular_mass: f64,
    pub start_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub driver: String,
    pub lambda: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub converged: bool,
    pub iterations: Vec<IterationRecord>,
    pub wall_time_seconds: f64,
}

impl ConvergenceReport {
    pub fn ratios(&self) -> Vec<f64> {
        self.iterations.iter().filter_map(|r| r.ratio).collect()
    }

    /// The last `n` successive ratios.
    pub fn ratio_tail(&self, n: usize) -> Vec<f64> {
        let r = self.ratios();
        r[r.len().saturating_sub(n)..].to_vec()
    }

    pub fn n_iterations(&self) -> usize {
        self.iterations.len()
    }

    pub fn write_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Samples an ensemble from `start` and runs [`solve_on_ensemble`].
pub fn solve(
    driver: &Driver,
    model: &ForwardModel,
    start: (f64, &[f64]),
    config: &SolverConfig,
) -> Result<(BsdeIterate, ConvergenceReport)> {
    config.validate()?;
    let ensemble = sample_paths(model, start, config.n_paths, config.seed)?;
    solve_on_ensemble(driver, &ensemble, config)
}

/// Iterates [`picard_step`] from `(0, 0)` until the squared difference norm
/// drops below `tol`.
pub fn solve_on_ensemble(
    driver: &Driver,
    ensemble: &PathEnsemble,
    config: &SolverConfig,
) -> Result<(BsdeIterate, ConvergenceReport)> {
    config.validate()?;
    let clock = ensemble.clock();
    let n_times = clock.grid().len();
    let second_moment = (0..ensemble.n_paths())
        .map(|p| driver.g(ensemble.state(p, n_times - 1)).powi(2))
        .sum::<f64>()
        / ensemble.n_paths() as f64;
    if !second_moment.is_finite() {
        return Err(Error::Numeric(
            "terminal condition has no finite sample second moment".into(),
        ));
    }
    let settings = StepSettings {
        basis: config.basis_for(ensemble.dim()),
        ridge: config.ridge_for(ensemble.n_paths()),
        clip: config.clip,
    };
    let lambda = config.lambda_for(driver);
    let started = Instant::now();
    let mut report = ConvergenceReport {
        driver: driver.name().to_string(),
        lambda,
        tol: config.tol,
        max_iters: config.max_iters,
        n_paths: ensemble.n_paths(),
        seed: ensemble.seed(),
        converged: false,
        iterations: Vec::new(),
        wall_time_seconds: 0.0,
    };
    let mut current = BsdeIterate::zero(ensemble);
    let mut last_diff: Option<f64> = None;
    for _ in 0..config.max_iters {
        let next = picard_step(&current, ensemble, driver, &settings)?;
        let diff = weighted_norm_difference(&next, &current, clock, lambda)?;
        report.iterations.push(IterationRecord {
            iteration: next.iteration,
            difference_norm: diff,
            ratio: last_diff.map(|d| if d > 0.0 { diff / d } else { 0.0 }),
            clip_count: next.clip_count,
            singular_mass: next.singular_mass,
            start_value: next.start_value(),
        });
        last_diff = Some(diff);
        current = next;
        if diff < config.tol {
            report.converged = true;
            break;
        }
    }
    report.wall_time_seconds = started.elapsed().as_secs_f64();
    if !report.converged {
        return Err(Error::Convergence(Box::new(report)));
    }
    Ok((current, report))
}

/// Per-path per-cell estimates of `d⟨M⟩/dV`, `d⟨M'⟩/dV` and `d⟨M,M'⟩/dV`.
#[derive(Debug, Clone)]
pub struct BracketDensities {
    pub a: CellArray,
    pub b: CellArray,
    pub c: CellArray,
    /// Ensemble means of `Σ ΔM²`, `Σ ΔM'²`, `Σ ΔMΔM'` over cells with `ΔV = 0`.
    pub singular: [f64; 3],
    /// Number of path-cells where the regressed matrix had a negative eigenvalue.
    pub projected: usize,
}

impl BracketDensities {
    /// `a·b − c²` per path-cell.
    pub fn determinants(&self) -> CellArray {
        let ab = self.a.zip_with(&self.b, |a, b| a * b).expect("same shape");
        ab.zip_with(&self.c, |ab, c| ab - c * c).expect("same shape")
    }
}

/// Nearest positive-semidefinite `[[a, c], [c, b]]` in Frobenius norm.
pub fn project_psd(a: f64, b: f64, c: f64) -> (f64, f64, f64, bool) {
    let mean = 0.5 * (a + b);
    let rad = (0.25 * (a - b).powi(2) + c * c).sqrt();
    let (l1, l2) = (mean + rad, mean - rad);
    if l2 >= 0.0 {
        return (a, b, c, false);
    }
    if l1 <= 0.0 {
        return (0.0, 0.0, 0.0, true);
    }
    // keep the top eigenpair only
    let (vx, vy) = if c.abs() > 0.0 {
        let (vx, vy) = (l1 - b, c);
        let nrm = (vx * vx + vy * vy).sqrt();
        (vx / nrm, vy / nrm)
    } else if a >= b {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let (mut pa, mut pb, mut pc) = (l1 * vx * vx, l1 * vy * vy, l1 * vx * vy);
    pa = pa.max(0.0);
    pb = pb.max(0.0);
    let cap = (pa * pb).sqrt();
    if pc.abs() > cap {
        pc = pc.signum() * cap;
    }
    (pa, pb, pc, true)
}

/// Regresses the entries of `(ΔM, ΔM')(ΔM, ΔM')ᵀ/ΔV` on `X_{t_j}` with one
/// shared design per cell and projects each prediction onto the PSD cone.
pub fn estimate_bracket_density(
    dm: &CellArray,
    dm2: &CellArray,
    ensemble: &PathEnsemble,
    basis: &RegressionBasis,
    ridge: f64,
) -> Result<BracketDensities> {
    let clock = ensemble.clock();
    let n = ensemble.n_paths();
    let cells = clock.n_cells();
    if !dm.same_shape(dm2) || dm.n_paths() != n || dm.n_cells() != cells {
        return Err(Error::Alignment("increments do not match the ensemble".into()));
    }
    let settings = StepSettings {
        basis: basis.clone(),
        ridge,
        clip: ClipPolicy::ClipAtZero,
    };
    let dv = clock.increments();
    let s = ensemble.start_index();
    type CellOut = (Vec<(f64, f64, f64)>, [f64; 3], usize);
    let per_cell: Vec<Result<CellOut>> = (s..cells)
        .into_par_iter()
        .map(|j| {
            let (u, w) = (dm.column(j), dm2.column(j));
            if dv[j] <= 0.0 {
                let nf = n as f64;
                let mass = [
                    u.iter().map(|x| x * x).sum::<f64>() / nf,
                    w.iter().map(|x| x * x).sum::<f64>() / nf,
                    u.iter().zip(&w).map(|(x, y)| x * y).sum::<f64>() / nf,
                ];
                return Ok((vec![(0.0, 0.0, 0.0); n], mass, 0));
            }
            let ta: Vec<f64> = u.iter().map(|x| x * x / dv[j]).collect();
            let tb: Vec<f64> = w.iter().map(|x| x * x / dv[j]).collect();
            let tc: Vec<f64> = u.iter().zip(&w).map(|(x, y)| x * y / dv[j]).collect();
            let (pa, _, _) = conditional_expectation(&ta, ensemble, j, &settings)?;
            let (pb, _, _) = conditional_expectation(&tb, ensemble, j, &settings)?;
            let (pc, _, _) = conditional_expectation(&tc, ensemble, j, &settings)?;
            let mut projected = 0;
            let out = (0..n)
                .map(|p| {
                    let (a, b, c, changed) = project_psd(pa[p], pb[p], pc[p]);
                    projected += changed as usize;
                    (a, b, c)
                })
                .collect();
            Ok((out, [0.0; 3], projected))
        })
        .collect();
    let mut a = CellArray::zeros(n, cells);
    let mut b = CellArray::zeros(n, cells);
    let mut c = CellArray::zeros(n, cells);
    let mut singular = [0.0; 3];
    let mut projected = 0;
    for (offset, r) in per_cell.into_iter().enumerate() {
        let j = s + offset;
        let (vals, mass, proj) = r?;
        for (p, (va, vb, vc)) in vals.into_iter().enumerate() {
            a.set(p, j, va);
            b.set(p, j, vb);
            c.set(p, j, vc);
        }
        for i in 0..3 {
            singular[i] += mass[i];
        }
        projected += proj;
    }
    Ok(BracketDensities {
        a,
        b,
        c,
        singular,
        projected,
    })
}

/// Per-cell discrete martingale check of `E[ΔM_k | X_{t_k}] = 0`.
#[derive(Debug, Clone, Serialize)]
pub struct MartingaleDiagnostic {
    /// Root-mean-square over paths of `prediction / standard error` per cell.
    pub standardized: Vec<f64>,
    pub max_violation: f64,
    pub worst_cell: Option<usize>,
    pub pass: bool,
}

pub fn martingale_diagnostic(
    dm: &CellArray,
    ensemble: &PathEnsemble,
    basis: &RegressionBasis,
    ridge: f64,
) -> Result<MartingaleDiagnostic> {
    let clock = ensemble.clock();
    let cells = clock.n_cells();
    if dm.n_paths() != ensemble.n_paths() || dm.n_cells() != cells {
        return Err(Error::Alignment("increments do not match the ensemble".into()));
    }
    let s = ensemble.start_index();
    let standardize = |pred: f64, se: f64| -> f64 {
        if se > 0.0 {
            pred / se
        } else if pred.abs() <= f64::MIN_POSITIVE {
            0.0
        } else {
            f64::INFINITY
        }
    };
    let standardized: Vec<Result<f64>> = (0..cells)
        .into_par_iter()
        .map(|j| {
            if j < s {
                return Ok(0.0);
            }
            let col = dm.column(j);
            if col.iter().all(|&v| v == 0.0) {
                return Ok(0.0);
            }
            if ensemble.has_common_start() && j == s {
                let (m, se) = mean_and_stderr(&col);
                return Ok(standardize(m, se).abs());
            }
            let states = ensemble.states_at(j);
            let fitted = fit(&col, &states, basis, ridge)?;
            let pred = predict(&fitted, &states);
            let se = fitted.prediction_standard_errors(&states);
            let ms = pred
                .iter()
                .zip(&se)
                .map(|(&p, &e)| standardize(p, e).powi(2))
                .sum::<f64>()
                / pred.len() as f64;
            Ok(ms.sqrt())
        })
        .collect();
    let standardized: Vec<f64> = standardized.into_iter().collect::<Result<_>>()?;
    let mut max_violation = 0.0;
    let mut worst_cell = None;
    for (j, &v) in standardized.iter().enumerate() {
        if v > max_violation {
            max_violation = v;
            worst_cell = Some(j);
        }
    }
    Ok(MartingaleDiagnostic {
        pass: max_violation <= 3.0,
        standardized,
        max_violation,
        worst_cell,
    })
}
