//! Forward Markov models: path simulation under `P^{s,x}` and the generator
//! `a` / carré du champ `Γ` acting on test functions.
//!
//! Every model runs on the clock `V`: over a cell the state moves by an
//! amount whose law is driven by `ΔV` (Gaussian variance `σσ^⊺ΔV`, jump
//! counts `Poisson(λΔV)`, stable scale `ΔV^{1/α}`), and the generator is the
//! density of the compensator against `dV`.

mod generator;
pub mod stable;
mod test_function;

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clock_measure::Clock;
use crate::error::{Error, Result};
use crate::io::{fmt_float, state_columns, write_csv};
use crate::quadrature::gauss_hermite_normal;
use crate::rng::path_rng;

pub use generator::{
    apply_generator, bracket_identity, carre_du_champ, carre_du_champ_by_definition,
    markov_property_test, martingale_path, BracketComparison, MarkovTest,
};
pub use stable::{StableQuadrature, Truncation};
pub use test_function::{fd_step, ScalarFn, TestFunction, VectorFn};

/// `μ(t, x) = offset + linear·x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineDrift {
    pub offset: Vec<f64>,
    /// Row-major `d × d`; empty means zero.
    #[serde(default)]
    pub linear: Vec<f64>,
}

impl AffineDrift {
    pub fn constant(offset: Vec<f64>) -> Self {
        Self {
            offset,
            linear: Vec::new(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let d = self.offset.len();
        let mut out = self.offset.clone();
        if !self.linear.is_empty() {
            for i in 0..d {
                for j in 0..d {
                    out[i] += self.linear[i * d + j] * x[j];
                }
            }
        }
        out
    }
}

/// Finite-activity jumps: intensity `rate` per unit clock, i.i.d. Gaussian
/// sizes with independent components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpLaw {
    pub rate: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Gauss–Hermite nodes per dimension for jump expectations.
    #[serde(default = "default_hermite_nodes")]
    pub quadrature_nodes: usize,
}

fn default_hermite_nodes() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    BrownianDiffusion {
        drift: AffineDrift,
        /// Row-major constant `d × d` diffusion matrix.
        sigma: Vec<f64>,
    },
    JumpDiffusion {
        drift: AffineDrift,
        sigma: Vec<f64>,
        jumps: JumpLaw,
    },
    AlphaStable {
        alpha: f64,
        /// `c_α` in front of the principal-value integral.
        scale: f64,
        #[serde(default)]
        truncation: Option<Truncation>,
        #[serde(default)]
        quadrature: StableQuadrature,
    },
}

/// A forward model bound to its clock.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    kind: ModelKind,
    dim: usize,
    clock: Clock,
    /// Jump-size quadrature `(offset, weight)` with weights summing to one.
    jump_nodes: Vec<(Vec<f64>, f64)>,
    /// `λ E[J / (1 + |J|²)]`, folded into the simulated drift.
    compensator: Vec<f64>,
}

impl ForwardModel {
    pub fn new(kind: ModelKind, dim: usize, clock: Clock) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("model.dim", "dimension must be >= 1"));
        }
        let mut jump_nodes = Vec::new();
        let mut compensator = vec![0.0; dim];
        match &kind {
            ModelKind::BrownianDiffusion { drift, sigma } => {
                check_drift(drift, dim)?;
                check_sigma(sigma, dim, false)?;
            }
            ModelKind::JumpDiffusion {
                drift,
                sigma,
                jumps,
            } => {
                check_drift(drift, dim)?;
                check_sigma(sigma, dim, true)?;
                if !(jumps.rate >= 0.0 && jumps.rate.is_finite()) {
                    return Err(Error::config("model.jumps.rate", "must be finite and >= 0"));
                }
                if jumps.mean.len() != dim || jumps.std.len() != dim {
                    return Err(Error::config(
                        "model.jumps",
                        format!("mean/std must have length {dim}"),
                    ));
                }
                if jumps.std.iter().any(|s| !(*s >= 0.0)) {
                    return Err(Error::config("model.jumps.std", "must be >= 0"));
                }
                if jumps.quadrature_nodes == 0 {
                    return Err(Error::config("model.jumps.quadrature_nodes", "must be >= 1"));
                }
                jump_nodes = jump_quadrature(jumps);
                for (y, w) in &jump_nodes {
                    let damp = 1.0 / (1.0 + y.iter().map(|v| v * v).sum::<f64>());
                    for i in 0..dim {
                        compensator[i] += jumps.rate * w * y[i] * damp;
                    }
                }
            }
            ModelKind::AlphaStable {
                alpha,
                scale,
                truncation,
                quadrature,
            } => {
                if !(*alpha > 0.0 && *alpha < 2.0) {
                    return Err(Error::config(
                        "model.alpha",
                        format!("alpha must lie in (0, 2), got {alpha}"),
                    ));
                }
                if !(*scale > 0.0 && scale.is_finite()) {
                    return Err(Error::config("model.scale", "must be finite and > 0"));
                }
                if dim != 1 {
                    return Err(Error::config(
                        "model.dim",
                        "alpha_stable models are one-dimensional",
                    ));
                }
                if let Some(t) = truncation {
                    if !(t.radius > 0.0 && t.small_jump_cutoff > 0.0 && t.small_jump_cutoff < t.radius)
                    {
                        return Err(Error::config(
                            "model.truncation",
                            "need 0 < small_jump_cutoff < radius",
                        ));
                    }
                }
                quadrature.validate()?;
            }
        }
        Ok(Self {
            kind,
            dim,
            clock,
            jump_nodes,
            compensator,
        })
    }

    /// One-dimensional `dX = μ dV + σ dW_V`.
    pub fn brownian(clock: Clock, mu: f64, sigma: f64) -> Result<Self> {
        Self::new(
            ModelKind::BrownianDiffusion {
                drift: AffineDrift::constant(vec![mu]),
                sigma: vec![sigma],
            },
            1,
            clock,
        )
    }

    /// One-dimensional jump diffusion with Gaussian jump sizes.
    pub fn jump_diffusion(
        clock: Clock,
        mu: f64,
        sigma: f64,
        rate: f64,
        jump_mean: f64,
        jump_std: f64,
    ) -> Result<Self> {
        Self::new(
            ModelKind::JumpDiffusion {
                drift: AffineDrift::constant(vec![mu]),
                sigma: vec![sigma],
                jumps: JumpLaw {
                    rate,
                    mean: vec![jump_mean],
                    std: vec![jump_std],
                    quadrature_nodes: default_hermite_nodes(),
                },
            },
            1,
            clock,
        )
    }

    /// Symmetric α-stable process with generator `c PV∫(φ(·+y) − φ)|y|^{−1−α}dy`.
    pub fn alpha_stable(clock: Clock, alpha: f64, scale: f64) -> Result<Self> {
        Self::new(
            ModelKind::AlphaStable {
                alpha,
                scale,
                truncation: None,
                quadrature: StableQuadrature::default(),
            },
            1,
            clock,
        )
    }

    /// The same stable model with jumps above `radius` removed.
    pub fn alpha_stable_truncated(clock: Clock, alpha: f64, scale: f64, radius: f64) -> Result<Self> {
        Self::new(
            ModelKind::AlphaStable {
                alpha,
                scale,
                truncation: Some(Truncation::new(radius)),
                quadrature: StableQuadrature::default(),
            },
            1,
            clock,
        )
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    /// Same dynamics on another clock.
    pub fn with_clock(&self, clock: Clock) -> Result<Self> {
        Self::new(self.kind.clone(), self.dim, clock)
    }

    pub(crate) fn jump_nodes(&self) -> &[(Vec<f64>, f64)] {
        &self.jump_nodes
    }

    /// Advances `x` across one cell of clock length `dv`.
    fn step<R: Rng>(&self, x: &mut [f64], dv: f64, rng: &mut R) {
        if dv <= 0.0 {
            return;
        }
        let d = self.dim;
        match &self.kind {
            ModelKind::BrownianDiffusion { drift, sigma }
            | ModelKind::JumpDiffusion { drift, sigma, .. } => {
                let mu = drift.eval(x);
                let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                let sq = dv.sqrt();
                for i in 0..d {
                    let noise: f64 = (0..d).map(|j| sigma[i * d + j] * z[j]).sum();
                    x[i] += (mu[i] - self.compensator[i]) * dv + sq * noise;
                }
                if let ModelKind::JumpDiffusion { jumps, .. } = &self.kind {
                    let n = sample_poisson(jumps.rate * dv, rng);
                    for _ in 0..n {
                        for i in 0..d {
                            let e: f64 = StandardNormal.sample(rng);
                            x[i] += jumps.mean[i] + jumps.std[i] * e;
                        }
                    }
                }
            }
            ModelKind::AlphaStable {
                alpha,
                scale,
                truncation,
                ..
            } => match truncation {
                Some(t) => x[0] += t.sample_increment(*alpha, *scale, dv, rng),
                None => {
                    let s = (scale * stable::cosine_integral(*alpha) * dv).powf(1.0 / alpha);
                    x[0] += s * stable::standard_symmetric_stable(*alpha, rng);
                }
            },
        }
    }
}

fn check_drift(drift: &AffineDrift, dim: usize) -> Result<()> {
    if drift.offset.len() != dim {
        return Err(Error::config(
            "model.drift.offset",
            format!("expected length {dim}, got {}", drift.offset.len()),
        ));
    }
    if !drift.linear.is_empty() && drift.linear.len() != dim * dim {
        return Err(Error::config(
            "model.drift.linear",
            format!("expected {} entries", dim * dim),
        ));
    }
    Ok(())
}

fn check_sigma(sigma: &[f64], dim: usize, invertible: bool) -> Result<()> {
    if sigma.len() != dim * dim {
        return Err(Error::config(
            "model.sigma",
            format!("expected {} entries, got {}", dim * dim, sigma.len()),
        ));
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("model.sigma", "entries must be finite"));
    }
    if invertible {
        let m = nalgebra::DMatrix::from_row_slice(dim, dim, sigma);
        if m.determinant().abs() < 1e-300 {
            return Err(Error::config(
                "model.sigma",
                "jump diffusions need an invertible sigma",
            ));
        }
    }
    Ok(())
}

fn jump_quadrature(jumps: &JumpLaw) -> Vec<(Vec<f64>, f64)> {
    let (z, w) = gauss_hermite_normal(jumps.quadrature_nodes);
    let d = jumps.mean.len();
    let mut out = vec![(Vec::new(), 1.0)];
    for i in 0..d {
        let mut next = Vec::with_capacity(out.len() * z.len());
        for (y, wy) in &out {
            if jumps.std[i] == 0.0 {
                let mut y = y.clone();
                y.push(jumps.mean[i]);
                next.push((y, *wy));
                continue;
            }
            for (zk, wk) in z.iter().zip(&w) {
                let mut y = y.clone();
                y.push(jumps.mean[i] + jumps.std[i] * zk);
                next.push((y, wy * wk));
            }
        }
        out = next;
    }
    out
}

pub(crate) fn sample_poisson<R: Rng + ?Sized>(intensity: f64, rng: &mut R) -> u64 {
    if intensity <= 0.0 {
        return 0;
    }
    Poisson::new(intensity)
        .map(|p| p.sample(rng) as u64)
        .unwrap_or(0)
}

/// Simulated trajectories under `P^{s,x}`.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    start_time: f64,
    start_index: usize,
    start_state: Vec<f64>,
    /// False once paths are restarted from their own states.
    common_start: bool,
    n_paths: usize,
    dim: usize,
    seed: u64,
    clock: Clock,
    /// Path-major `n_paths × (N+1) × d`.
    states: Vec<f64>,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn start_index(&self) -> usize {
        self.start_index
    }

    /// The common start point; meaningless when [`Self::has_common_start`] is false.
    pub fn start_state(&self) -> &[f64] {
        &self.start_state
    }

    /// Whether every path sits at the same state at the start index, making
    /// `F_s` trivial.
    pub fn has_common_start(&self) -> bool {
        self.common_start
    }

    pub fn n_times(&self) -> usize {
        self.clock.grid().len()
    }

    #[inline]
    pub fn state(&self, path: usize, time_index: usize) -> &[f64] {
        let base = (path * self.n_times() + time_index) * self.dim;
        &self.states[base..base + self.dim]
    }

    /// Flattened `n_paths × d` states at one grid time.
    pub fn states_at(&self, time_index: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_paths * self.dim);
        for p in 0..self.n_paths {
            out.extend_from_slice(self.state(p, time_index));
        }
        out
    }

    /// Raw path-major storage.
    pub fn raw(&self) -> &[f64] {
        &self.states
    }

    /// The sub-ensemble restarted at a later grid time: paths are frozen at
    /// their own state before `time_index`. Each path is then a sample under
    /// `P^{s', X_{s'}}` along the frozen noise.
    pub fn restart_at(&self, time_index: usize) -> Self {
        let mut out = self.clone();
        out.start_index = time_index;
        out.start_time = self.clock.grid()[time_index];
        out.common_start = false;
        let n_times = self.n_times();
        let d = self.dim;
        for p in 0..self.n_paths {
            let anchor = self.state(p, time_index).to_vec();
            for k in 0..time_index {
                let base = (p * n_times + k) * d;
                out.states[base..base + d].copy_from_slice(&anchor);
            }
        }
        out
    }

    /// `path_id,t,x_1..x_d` dump.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut rows = Vec::with_capacity(self.n_paths * self.n_times());
        for p in 0..self.n_paths {
            for (k, &t) in self.clock.grid().iter().enumerate() {
                let mut row = vec![p.to_string(), fmt_float(t)];
                row.extend(self.state(p, k).iter().map(|&v| fmt_float(v)));
                rows.push(row);
            }
        }
        write_csv(path, &format!("path_id,t,{}", state_columns(self.dim)), &rows)
    }
}

/// Simulates `n_paths` trajectories started from `x` at grid time `s`.
/// Path `i` draws only from the stream `(seed, i)`.
pub fn sample_paths(
    model: &ForwardModel,
    start: (f64, &[f64]),
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    let (s, x) = start;
    if n_paths == 0 {
        return Err(Error::Domain("n_paths must be >= 1".into()));
    }
    if x.len() != model.dim() {
        return Err(Error::Alignment(format!(
            "start state has dimension {}, model {}",
            x.len(),
            model.dim()
        )));
    }
    let clock = model.clock().clone();
    let start_index = clock.index_of(s)?;
    let n_times = clock.grid().len();
    let d = model.dim();
    let dv = clock.increments();
    let mut states = vec![0.0; n_paths * n_times * d];
    states
        .par_chunks_mut(n_times * d)
        .enumerate()
        .for_each(|(p, chunk)| {
            let mut rng = path_rng(seed, p as u64);
            let mut cur = x.to_vec();
            for k in 0..n_times {
                if k > start_index {
                    model.step(&mut cur, dv[k - 1], &mut rng);
                }
                chunk[k * d..(k + 1) * d].copy_from_slice(&cur);
            }
        });
    Ok(PathEnsemble {
        start_time: clock.grid()[start_index],
        start_index,
        start_state: x.to_vec(),
        common_start: true,
        n_paths,
        dim: d,
        seed,
        clock,
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn degenerate_diffusion_is_constant() {
        let clock = Clock::identity(1.0, 10).unwrap();
        let m = ForwardModel::brownian(clock, 0.0, 0.0).unwrap();
        let e = sample_paths(&m, (0.0, &[1.5]), 7, 1).unwrap();
        assert!(e.raw().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn brownian_terminal_moments() {
        let clock = Clock::identity(1.0, 20).unwrap();
        let m = ForwardModel::brownian(clock, 0.0, 1.0).unwrap();
        let n = 100_000;
        let e = sample_paths(&m, (0.0, &[0.0]), n, 42).unwrap();
        let (mean, var) = moments(&e.states_at(20));
        assert!(mean.abs() < 3.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn frozen_before_start_and_deterministic() {
        let clock = Clock::identity(1.0, 10).unwrap();
        let m = ForwardModel::jump_diffusion(clock, 0.1, 0.5, 2.0, 0.0, 0.3).unwrap();
        let a = sample_paths(&m, (0.4, &[2.0]), 50, 9).unwrap();
        let b = sample_paths(&m, (0.4, &[2.0]), 50, 9).unwrap();
        assert_eq!(a.raw(), b.raw());
        for p in 0..50 {
            for k in 0..=4 {
                assert_eq!(a.state(p, k), &[2.0]);
            }
        }
        let c = sample_paths(&m, (0.4, &[2.0]), 50, 10).unwrap();
        assert_ne!(a.raw(), c.raw());
    }

    #[test]
    fn off_grid_start_is_alignment_error() {
        let clock = Clock::identity(1.0, 10).unwrap();
        let m = ForwardModel::brownian(clock, 0.0, 1.0).unwrap();
        assert!(matches!(
            sample_paths(&m, (0.45, &[0.0]), 5, 0),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn parallelism_does_not_change_paths() {
        let clock = Clock::identity(1.0, 16).unwrap();
        let m = ForwardModel::alpha_stable(clock, 1.5, 0.3).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| sample_paths(&m, (0.0, &[0.0]), 300, 5).unwrap());
        let b = four.install(|| sample_paths(&m, (0.0, &[0.0]), 300, 5).unwrap());
        assert_eq!(a.raw(), b.raw());
    }

    #[test]
    fn stable_generator_on_cosines() {
        // a(cos(k·))(0) = −c|k|^α I_α and Γ(cos, cos)(0) = c|k|^α I_α (2 − 2^{α−1}),
        // I_α = ∫(1 − cos u)|u|^{−1−α} du
        let clock = Clock::identity(1.0, 4).unwrap();
        for alpha in [1.0, 1.5, 1.9] {
            let m = ForwardModel::alpha_stable(clock.clone(), alpha, 0.7).unwrap();
            let i = stable::cosine_integral(alpha);
            for k in [0.5f64, 2.0] {
                let phi = TestFunction::spatial(1, move |x| (k * x[0]).cos());
                let a = apply_generator(&m, &phi, 0.0, &[0.0]).unwrap();
                let want = -0.7 * k.powf(alpha) * i;
                assert!((a - want).abs() < 1e-3 * want.abs(), "alpha {alpha} k {k}: {a} vs {want}");
                let g = carre_du_champ(&m, &phi, &phi, 0.0, &[0.0]).unwrap();
                let want = 0.7 * k.powf(alpha) * i * (2.0 - 2f64.powf(alpha - 1.0));
                assert!((g - want).abs() < 1e-3 * want.abs(), "alpha {alpha} k {k}: {g} vs {want}");
            }
        }
    }

    #[test]
    fn stable_alpha_two_matches_brownian_scaling() {
        // α = 2 stable increments have variance 2Δt: compare with σ = √2 Brownian.
        let n = 100_000;
        for dt in [0.01f64, 0.04] {
            let mut rng = path_rng(1, 0);
            let stable: Vec<f64> = (0..n)
                .map(|_| dt.sqrt() * stable::standard_symmetric_stable(2.0, &mut rng))
                .collect();
            let clock = Clock::identity(dt, 1).unwrap();
            let m = ForwardModel::brownian(clock, 0.0, 2f64.sqrt()).unwrap();
            let e = sample_paths(&m, (0.0, &[0.0]), n, 2).unwrap();
            let (_, vs) = moments(&stable);
            let (_, vb) = moments(&e.states_at(1));
            assert!((vs / (2.0 * dt) - 1.0).abs() < 0.03);
            assert!((vs / vb - 1.0).abs() < 0.04, "{vs} vs {vb}");
        }
    }

    #[test]
    fn validation() {
        let clock = Clock::identity(1.0, 4).unwrap();
        assert!(matches!(
            ForwardModel::alpha_stable(clock.clone(), 2.5, 1.0),
            Err(Error::Config { field, .. }) if field == "model.alpha"
        ));
        assert!(ForwardModel::jump_diffusion(clock.clone(), 0.0, 0.0, 1.0, 0.0, 1.0).is_err());
        assert!(ForwardModel::brownian(clock, 0.0, 0.0).is_ok());
    }

    #[test]
    fn restart_freezes_prefix() {
        let clock = Clock::identity(1.0, 10).unwrap();
        let m = ForwardModel::brownian(clock, 0.0, 1.0).unwrap();
        let e = sample_paths(&m, (0.0, &[0.0]), 20, 3).unwrap();
        let r = e.restart_at(6);
        for p in 0..20 {
            for k in 0..6 {
                assert_eq!(r.state(p, k), e.state(p, 6));
            }
            assert_eq!(r.state(p, 9), e.state(p, 9));
        }
        assert_eq!(r.start_index(), 6);
    }
}
