use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::stable::radial_pv_integral;
use super::{ForwardModel, ModelKind, PathEnsemble, TestFunction};
use crate::clock_measure::CellArray;
use crate::error::{Error, Result};
use crate::regression::{fit, BasisFamily, RegressionBasis};

fn sigma_sigma_t(sigma: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).map(|k| sigma[i * d + k] * sigma[j * d + k]).sum();
        }
    }
    out
}

fn shifted(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a + b).collect()
}

/// `a(φ)(t, x)`: the density against `dV` of the compensator of `φ(·, X)`.
pub fn apply_generator(model: &ForwardModel, phi: &TestFunction, t: f64, x: &[f64]) -> Result<f64> {
    let d = model.dim();
    let clock = model.clock();
    let rate = clock.time_rate(clock.cell_containing(t));
    let mut out = if rate != 0.0 {
        rate * phi.time_derivative(t, x)
    } else {
        0.0
    };
    match model.kind() {
        ModelKind::BrownianDiffusion { drift, sigma }
        | ModelKind::JumpDiffusion { drift, sigma, .. } => {
            let mu = drift.eval(x);
            let grad = phi.gradient(t, x);
            out += mu.iter().zip(&grad).map(|(m, g)| m * g).sum::<f64>();
            if sigma.iter().any(|&s| s != 0.0) {
                let a = sigma_sigma_t(sigma, d);
                let h = phi.hessian(t, x);
                out += 0.5 * a.iter().zip(&h).map(|(p, q)| p * q).sum::<f64>();
            }
            if let ModelKind::JumpDiffusion { jumps, .. } = model.kind() {
                let f0 = phi.value(t, x);
                let mut acc = 0.0;
                for (y, w) in model.jump_nodes() {
                    let damp = 1.0 / (1.0 + y.iter().map(|v| v * v).sum::<f64>());
                    let drift_part: f64 = y.iter().zip(&grad).map(|(a, b)| a * b).sum::<f64>() * damp;
                    acc += w * (phi.value(t, &shifted(x, y)) - f0 - drift_part);
                }
                out += jumps.rate * acc;
            }
        }
        ModelKind::AlphaStable {
            alpha,
            scale,
            truncation,
            quadrature,
        } => {
            let f0 = phi.value(t, x);
            let x0 = x[0];
            let second = phi.hessian(t, x)[0];
            let upper = truncation.map_or(quadrature.outer_cutoff, |tr| tr.radius);
            let q = radial_pv_integral(
                *alpha,
                *scale,
                quadrature,
                upper,
                truncation.is_some(),
                second,
                |r| phi.value(t, &[x0 + r]) + phi.value(t, &[x0 - r]) - 2.0 * f0,
            )
            .map_err(|e| diagnose(e, "generator", t, x))?;
            out += q.value;
        }
    }
    if !out.is_finite() {
        return Err(Error::Numeric(format!("a(φ) not finite at t={t}, x={x:?}")));
    }
    Ok(out)
}

fn diagnose(e: Error, what: &str, t: f64, x: &[f64]) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("{what} at t={t}, x={x:?}: {msg}")),
        other => other,
    }
}

/// `Γ(φ, ψ)(t, x)` from the closed form of each model kind.
pub fn carre_du_champ(
    model: &ForwardModel,
    phi: &TestFunction,
    psi: &TestFunction,
    t: f64,
    x: &[f64],
) -> Result<f64> {
    let d = model.dim();
    let out = match model.kind() {
        ModelKind::BrownianDiffusion { sigma, .. } | ModelKind::JumpDiffusion { sigma, .. } => {
            let mut g = 0.0;
            if sigma.iter().any(|&s| s != 0.0) {
                let a = sigma_sigma_t(sigma, d);
                let (gp, gq) = (phi.gradient(t, x), psi.gradient(t, x));
                for i in 0..d {
                    for j in 0..d {
                        g += a[i * d + j] * gp[i] * gq[j];
                    }
                }
            }
            if let ModelKind::JumpDiffusion { jumps, .. } = model.kind() {
                let (p0, q0) = (phi.value(t, x), psi.value(t, x));
                let mut acc = 0.0;
                for (y, w) in model.jump_nodes() {
                    let xy = shifted(x, y);
                    acc += w * (phi.value(t, &xy) - p0) * (psi.value(t, &xy) - q0);
                }
                g += jumps.rate * acc;
            }
            g
        }
        ModelKind::AlphaStable {
            alpha,
            scale,
            truncation,
            quadrature,
        } => {
            let (p0, q0) = (phi.value(t, x), psi.value(t, x));
            let x0 = x[0];
            let coeff = 2.0 * phi.gradient(t, x)[0] * psi.gradient(t, x)[0];
            let upper = truncation.map_or(quadrature.outer_cutoff, |tr| tr.radius);
            radial_pv_integral(
                *alpha,
                *scale,
                quadrature,
                upper,
                truncation.is_some(),
                coeff,
                |r| {
                    let (xp, xm) = ([x0 + r], [x0 - r]);
                    (phi.value(t, &xp) - p0) * (psi.value(t, &xp) - q0)
                        + (phi.value(t, &xm) - p0) * (psi.value(t, &xm) - q0)
                },
            )
            .map_err(|e| diagnose(e, "carré du champ", t, x))?
            .value
        }
    };
    Ok(out)
}

/// `Γ(φ, ψ) = a(φψ) − φ a(ψ) − ψ a(φ)` evaluated literally.
pub fn carre_du_champ_by_definition(
    model: &ForwardModel,
    phi: &TestFunction,
    psi: &TestFunction,
    t: f64,
    x: &[f64],
) -> Result<f64> {
    let prod = phi.product(psi);
    Ok(apply_generator(model, &prod, t, x)?
        - phi.value(t, x) * apply_generator(model, psi, t, x)?
        - psi.value(t, x) * apply_generator(model, phi, t, x)?)
}

/// `ΔM[φ]_k = φ(t_{k+1}, X_{k+1}) − φ(t_k, X_k) − a(φ)(t_k, X_k) ΔV_k` per
/// path, zero on cells before the start.
pub fn martingale_path(
    model: &ForwardModel,
    phi: &TestFunction,
    ensemble: &PathEnsemble,
) -> Result<CellArray> {
    let clock = ensemble.clock();
    let grid = clock.grid();
    let n_cells = clock.n_cells();
    let dv = clock.increments();
    let s = ensemble.start_index();
    let rows: Vec<Result<Vec<f64>>> = (0..ensemble.n_paths())
        .into_par_iter()
        .map(|p| {
            let mut row = vec![0.0; n_cells];
            for k in s..n_cells {
                let (x0, x1) = (ensemble.state(p, k), ensemble.state(p, k + 1));
                let compensator = if dv[k] > 0.0 {
                    apply_generator(model, phi, grid[k], x0)? * dv[k]
                } else {
                    0.0
                };
                row[k] = phi.value(grid[k + 1], x1) - phi.value(grid[k], x0) - compensator;
            }
            Ok(row)
        })
        .collect();
    let mut data = Vec::with_capacity(ensemble.n_paths() * n_cells);
    for r in rows {
        data.extend(r?);
    }
    CellArray::from_vec(ensemble.n_paths(), n_cells, data)
}

/// Paired Monte-Carlo comparison of `Σ_k ΔM[φ]_k ΔM[ψ]_k` with
/// `Σ_k Γ(φ, ψ)(t_k, X_k) ΔV_k`.
#[derive(Debug, Clone, Serialize)]
pub struct BracketComparison {
    pub realized_mean: f64,
    pub compensator_mean: f64,
    pub difference: f64,
    pub standard_error: f64,
    pub bias_budget: f64,
    pub pass: bool,
}

pub fn bracket_identity(
    model: &ForwardModel,
    phi: &TestFunction,
    psi: &TestFunction,
    ensemble: &PathEnsemble,
    bias_budget: f64,
) -> Result<BracketComparison> {
    let dm_phi = martingale_path(model, phi, ensemble)?;
    let dm_psi = martingale_path(model, psi, ensemble)?;
    let clock = ensemble.clock();
    let grid = clock.grid();
    let dv = clock.increments();
    let s = ensemble.start_index();
    let n = ensemble.n_paths();
    let pairs: Vec<Result<(f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|p| {
            let mut realized = 0.0;
            let mut comp = 0.0;
            for k in s..clock.n_cells() {
                realized += dm_phi.get(p, k) * dm_psi.get(p, k);
                if dv[k] > 0.0 {
                    comp += carre_du_champ(model, phi, psi, grid[k], ensemble.state(p, k))? * dv[k];
                }
            }
            Ok((realized, comp))
        })
        .collect();
    let pairs: Vec<(f64, f64)> = pairs.into_iter().collect::<Result<_>>()?;
    let nf = n as f64;
    let realized_mean = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let compensator_mean = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let difference = realized_mean - compensator_mean;
    let var = pairs
        .iter()
        .map(|p| (p.0 - p.1 - difference).powi(2))
        .sum::<f64>()
        / (nf - 1.0).max(1.0);
    let standard_error = (var / nf).sqrt();
    Ok(BracketComparison {
        realized_mean,
        compensator_mean,
        difference,
        standard_error,
        bias_budget,
        pass: difference.abs() <= 3.0 * standard_error + bias_budget,
    })
}

/// Nested-model F test of whether past states improve the regression of a
/// terminal functional on the current state.
#[derive(Debug, Clone, Serialize)]
pub struct MarkovTest {
    pub time_index: usize,
    pub lags: Vec<usize>,
    pub f_statistic: f64,
    pub p_value: f64,
    pub level: f64,
    pub pass: bool,
}

pub fn markov_property_test<G>(
    ensemble: &PathEnsemble,
    functional: G,
    time_index: usize,
    lags: &[usize],
    level: f64,
) -> Result<MarkovTest>
where
    G: Fn(&[f64]) -> f64,
{
    let n_times = ensemble.n_times();
    if time_index >= n_times || lags.iter().any(|&l| l >= time_index) {
        return Err(Error::Domain(
            "Markov test needs lags strictly before the conditioning time".into(),
        ));
    }
    let d = ensemble.dim();
    let n = ensemble.n_paths();
    let terminal = n_times - 1;
    let targets: Vec<f64> = (0..n).map(|p| functional(ensemble.state(p, terminal))).collect();
    let current = ensemble.states_at(time_index);
    let dh = d * (1 + lags.len());
    let mut history = Vec::with_capacity(n * dh);
    for p in 0..n {
        history.extend_from_slice(ensemble.state(p, time_index));
        for &l in lags {
            history.extend_from_slice(ensemble.state(p, l));
        }
    }
    let restricted_basis = RegressionBasis::new(BasisFamily::Polynomial { degree: 2 }, d);
    let full_basis = RegressionBasis::new(BasisFamily::Polynomial { degree: 2 }, dh);
    let restricted = fit(&targets, &current, &restricted_basis, 0.0)?;
    let full = fit(&targets, &history, &full_basis, 0.0)?;
    let (pr, pf) = (restricted.n_coefficients(), full.n_coefficients());
    let q = (pf - pr) as f64;
    let dof = n as f64 - pf as f64;
    let rss_r = restricted.residual_sum_of_squares();
    let rss_f = full.residual_sum_of_squares();
    let f_statistic = ((rss_r - rss_f).max(0.0) / q) / (rss_f / dof);
    let dist = FisherSnedecor::new(q, dof)
        .map_err(|e| Error::Numeric(format!("F distribution: {e}")))?;
    let p_value = 1.0 - dist.cdf(f_statistic);
    Ok(MarkovTest {
        time_index,
        lags: lags.to_vec(),
        f_statistic,
        p_value,
        level,
        pass: p_value > level,
    })
}
