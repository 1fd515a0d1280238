//! Closed-form Brownian oracles and the fixed 3-SE comparison gate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bsde_solver::Driver;
use crate::clock_measure::Clock;
use crate::error::{Error, Result};
use crate::forward_models::{ForwardModel, TestFunction};
use crate::pseudo_pde::{classical_residual, Node};

/// `g(x) = a + b x + c x²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadratic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Quadratic {
    pub fn constant(a: f64) -> Self {
        Self { a, b: 0.0, c: 0.0 }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.a + self.b * x + self.c * x * x
    }
}

fn default_sigma() -> f64 {
    1.0
}

/// One-dimensional Brownian problems `dX = μ dt + σ dW`, `V(t) = t`, with
/// known solutions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Oracle {
    /// `f ≡ 0`, `g = x²`, `μ = 0`: `u = x² + σ²(T − t)`.
    HeatQuadratic {
        horizon: f64,
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    /// `f = c·y`, quadratic `g`: `u = e^{c(T−t)} E[g(X_T) | X_t = x]`.
    LinearDriverOde {
        horizon: f64,
        rate: f64,
        terminal: Quadratic,
        #[serde(default)]
        mu: f64,
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    /// `f ≡ 0`, `g = x^p`: `u = E[X_T^p | X_t = x]`.
    GaussianMoment {
        horizon: f64,
        power: u32,
        #[serde(default)]
        mu: f64,
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
}

fn double_factorial_moment(k: u32) -> f64 {
    // E[Z^k] for standard normal Z
    if k % 2 == 1 {
        return 0.0;
    }
    (1..k).step_by(2).map(f64::from).product()
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

impl Oracle {
    /// Parses an oracle from JSON, reporting unknown kinds as config errors.
    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        serde_json::from_value(value.clone()).map_err(|e| Error::config("oracle", e.to_string()))
    }

    pub fn horizon(&self) -> f64 {
        match *self {
            Oracle::HeatQuadratic { horizon, .. }
            | Oracle::LinearDriverOde { horizon, .. }
            | Oracle::GaussianMoment { horizon, .. } => horizon,
        }
    }

    fn drift_vol(&self) -> (f64, f64) {
        match *self {
            Oracle::HeatQuadratic { sigma, .. } => (0.0, sigma),
            Oracle::LinearDriverOde { mu, sigma, .. } | Oracle::GaussianMoment { mu, sigma, .. } => {
                (mu, sigma)
            }
        }
    }

    pub fn model(&self, steps: usize) -> Result<ForwardModel> {
        let (mu, sigma) = self.drift_vol();
        ForwardModel::brownian(Clock::identity(self.horizon(), steps)?, mu, sigma)
    }

    pub fn driver(&self) -> Driver {
        match *self {
            Oracle::HeatQuadratic { .. } => Driver::zero(|x| x[0] * x[0]).named("heat_quadratic"),
            Oracle::LinearDriverOde { rate, terminal, .. } => {
                Driver::linear_y(rate, move |x| terminal.eval(x[0])).named("linear_driver_ode")
            }
            Oracle::GaussianMoment { power, .. } => {
                Driver::zero(move |x| x[0].powi(power as i32)).named("gaussian_moment")
            }
        }
    }

    /// `E[X_T^p | X_t = x]` for the oracle's Brownian motion.
    fn moment(&self, p: u32, t: f64, x: f64) -> f64 {
        let (mu, sigma) = self.drift_vol();
        let tau = self.horizon() - t;
        let m = x + mu * tau;
        let sd = sigma * tau.max(0.0).sqrt();
        (0..=p)
            .map(|k| binomial(p, k) * m.powi((p - k) as i32) * double_factorial_moment(k) * sd.powi(k as i32))
            .sum()
    }

    pub fn value(&self, t: f64, x: f64) -> f64 {
        match *self {
            Oracle::HeatQuadratic { horizon, sigma } => x * x + sigma * sigma * (horizon - t),
            Oracle::LinearDriverOde {
                horizon,
                rate,
                terminal,
                ..
            } => {
                let q = terminal;
                let e = q.a + q.b * self.moment(1, t, x) + q.c * self.moment(2, t, x);
                (rate * (horizon - t)).exp() * e
            }
            Oracle::GaussianMoment { power, .. } => self.moment(power, t, x),
        }
    }

    /// `u` with analytic `∂_t u`, `∂_x u`, `∂²_x u`.
    pub fn test_function(&self) -> TestFunction {
        let o = *self;
        let (mu, sigma) = o.drift_vol();
        let s2 = sigma * sigma;
        // every oracle solves ∂_t u = −(μ ∂_x u + ½σ² ∂²_x u) − f(u)
        let rate = match o {
            Oracle::LinearDriverOde { rate, .. } => rate,
            _ => 0.0,
        };
        let dx = move |t: f64, x: f64| -> f64 {
            match o {
                Oracle::HeatQuadratic { .. } => 2.0 * x,
                Oracle::LinearDriverOde { horizon, rate, terminal, .. } => {
                    let m = x + mu * (horizon - t);
                    (rate * (horizon - t)).exp() * (terminal.b + 2.0 * terminal.c * m)
                }
                Oracle::GaussianMoment { power, .. } => {
                    if power == 0 {
                        0.0
                    } else {
                        f64::from(power) * o.moment(power - 1, t, x)
                    }
                }
            }
        };
        let dxx = move |t: f64, x: f64| -> f64 {
            match o {
                Oracle::HeatQuadratic { .. } => 2.0,
                Oracle::LinearDriverOde { horizon, rate, terminal, .. } => {
                    (rate * (horizon - t)).exp() * 2.0 * terminal.c
                }
                Oracle::GaussianMoment { power, .. } => {
                    if power < 2 {
                        0.0
                    } else {
                        f64::from(power * (power - 1)) * o.moment(power - 2, t, x)
                    }
                }
            }
        };
        TestFunction::new(1, move |t, x: &[f64]| o.value(t, x[0]))
            .with_time_derivative(move |t, x| {
                -(mu * dx(t, x[0]) + 0.5 * s2 * dxx(t, x[0])) - rate * o.value(t, x[0])
            })
            .with_gradient(move |t, x| vec![dx(t, x[0])])
            .with_hessian(move |t, x| vec![dxx(t, x[0])])
    }

    /// Maximum classical residual over a small grid of nodes; should vanish.
    pub fn self_check(&self) -> Result<f64> {
        let model = self.model(20)?;
        let h = self.horizon();
        let nodes: Vec<Node> = [0.0, 0.3, 0.7]
            .iter()
            .flat_map(|&frac| [-1.5, 0.0, 0.8].map(|x| (frac * h, vec![x])))
            .collect();
        let r = classical_residual(&self.test_function(), &model, &self.driver(), &nodes)?;
        // time derivative uses the PDE itself, so also check it numerically
        let u = self.test_function();
        let mut worst = r.max_abs().max(r.terminal_mismatch);
        for (t, x) in &nodes {
            let numeric = u.numeric_time_derivative(*t, x);
            worst = worst.max((numeric - u.time_derivative(*t, x)).abs() / numeric.abs().max(1.0));
        }
        Ok(worst)
    }
}

pub fn oracle_value(oracle: &Oracle, t: f64, x: &[f64]) -> Result<f64> {
    if x.len() != 1 {
        return Err(Error::Domain(format!("oracles are one-dimensional, got x of length {}", x.len())));
    }
    if !(t <= oracle.horizon()) {
        return Err(Error::Domain(format!("t = {t} beyond horizon {}", oracle.horizon())));
    }
    Ok(oracle.value(t, x[0]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareEntry {
    pub estimate: f64,
    pub stderr: f64,
    pub truth: f64,
    /// `|estimate − truth|` in units of SE (infinite when SE = 0 and they differ).
    pub standardized: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub bias_budget: f64,
    pub entries: Vec<CompareEntry>,
    pub worst_standardized: f64,
    pub pass: bool,
}

impl CompareReport {
    pub fn write_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Entry-wise gate `|estimate − truth| ≤ 3·SE + bias_budget`, inclusive.
pub fn statistical_compare(estimates: &[Estimate], truths: &[f64], bias_budget: f64) -> Result<CompareReport> {
    if estimates.len() != truths.len() {
        return Err(Error::Alignment(format!(
            "{} estimates for {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    let entries: Vec<CompareEntry> = estimates
        .iter()
        .zip(truths)
        .map(|(e, &truth)| {
            let dev = (e.value - truth).abs();
            // absorbs the rounding of `truth + budget − truth`
            let slack = 4.0 * f64::EPSILON * e.value.abs().max(truth.abs());
            let standardized = if e.stderr > 0.0 {
                dev / e.stderr
            } else if dev == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            CompareEntry {
                estimate: e.value,
                stderr: e.stderr,
                truth,
                standardized,
                pass: dev <= 3.0 * e.stderr + bias_budget + slack,
            }
        })
        .collect();
    let worst_standardized = entries.iter().fold(0.0f64, |m, e| m.max(e.standardized));
    Ok(CompareReport {
        bias_budget,
        pass: entries.iter().all(|e| e.pass),
        entries,
        worst_standardized,
    })
}
