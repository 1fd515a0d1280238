//! JSON run configurations for the command-line front end.
//!
//! ```json
//! {
//!   "model": {"kind": "brownian_diffusion", "drift": {"offset": [0.0]}, "sigma": [1.0]},
//!   "clock": {"type": "identity", "horizon": 1.0, "steps": 50},
//!   "driver": {"name": "zero", "g": "x^2"},
//!   "solver": {"n_paths": 100000, "basis": {"family": "polynomial", "degree": 2, "dim": 1}},
//!   "nodes": {"points": [[0.0, [0.0]], [0.0, [1.0]]]},
//!   "seed": 7
//! }
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bsde_solver::{Driver, SolverConfig};
use crate::clock_measure::Clock;
use crate::error::{Error, Result};
use crate::expression::Expression;
use crate::forward_models::{ForwardModel, ModelKind, TestFunction};
use crate::pseudo_pde::{Node, VerifyBudget};
use crate::verification::Oracle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClockSpec {
    /// `V(t) = t` on a uniform grid.
    Identity { horizon: f64, steps: usize },
    /// Linear interpolation of `(t, V)` knots, sampled on a uniform grid.
    PiecewiseLinear { knots: Vec<(f64, f64)>, steps: usize },
    /// A `t,V` CSV table used as the grid itself.
    Table { file: PathBuf },
}

impl ClockSpec {
    pub fn build(&self, base: &Path) -> Result<Clock> {
        let clock = match self {
            ClockSpec::Identity { horizon, steps } => Clock::identity(*horizon, *steps),
            ClockSpec::PiecewiseLinear { knots, steps } => Clock::piecewise_linear(knots, *steps),
            ClockSpec::Table { file } => Clock::read_csv(base.join(file)),
        };
        clock.map_err(|e| match e {
            Error::Config { .. } => e,
            other => Error::config("clock", other.to_string()),
        })
    }
}

/// Either a catalog driver (`name` plus `params`) or a formula `f`, always
/// with a terminal formula `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverSpec {
    /// One of `zero`, `constant` (`c`), `linear_y` (`c`), `sin_cos`.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Formula in `t, x.., y, z`.
    #[serde(default)]
    pub f: Option<String>,
    /// Terminal formula in `x..`.
    pub g: String,
    #[serde(default)]
    pub k_y: Option<f64>,
    #[serde(default)]
    pub k_z: Option<f64>,
}

impl DriverSpec {
    pub fn build(&self, dim: usize, horizon: f64, seed: u64) -> Result<Driver> {
        let g = Expression::parse("driver.g", &self.g, dim)?;
        let terminal = move |x: &[f64]| g.eval(0.0, x, 0.0, 0.0);
        let param = |key: &str| -> Result<f64> {
            self.params
                .get(key)
                .copied()
                .ok_or_else(|| Error::config(format!("driver.params.{key}"), "missing"))
        };
        let driver = match (&self.name, &self.f) {
            (Some(_), Some(_)) => {
                return Err(Error::config("driver", "give either `name` or `f`, not both"))
            }
            (None, None) => return Err(Error::config("driver", "need `name` or `f`")),
            (Some(name), None) => match name.as_str() {
                "zero" => Driver::zero(terminal),
                "constant" => Driver::constant(param("c")?, terminal),
                "linear_y" => Driver::linear_y(param("c")?, terminal),
                "sin_cos" => Driver::sin_cos(terminal),
                other => {
                    return Err(Error::config(
                        "driver.name",
                        format!("unknown catalog driver `{other}`"),
                    ))
                }
            },
            (None, Some(src)) => {
                let f = Expression::parse("driver.f", src, dim)?;
                let (k_y, k_z) = match (self.k_y, self.k_z) {
                    (Some(a), Some(b)) => (a, b),
                    _ => {
                        return Err(Error::config(
                            "driver.k_y",
                            "formula drivers must declare k_y and k_z",
                        ))
                    }
                };
                Driver::new(move |t, x, y, z| f.eval(t, x, y, z), terminal, k_y, k_z)
                    .named(format!("f = {src}"))
            }
        };
        let driver = match (self.k_y, self.k_z, &self.name) {
            (Some(a), Some(b), Some(_)) => driver.with_lipschitz(a, b),
            _ => driver,
        };
        driver.check_lipschitz(dim, horizon, 1000, seed)?;
        Ok(driver)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    /// Explicit `(s, x)` nodes.
    #[serde(default)]
    pub points: Vec<(f64, Vec<f64>)>,
    /// Product grid of start times and states, appended after `points`.
    #[serde(default)]
    pub grid: Option<NodeGrid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeGrid {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl NodeSpec {
    pub fn nodes(&self) -> Vec<Node> {
        let mut out = self.points.clone();
        if let Some(g) = &self.grid {
            for &t in &g.times {
                for x in &g.states {
                    out.push((t, x.clone()));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// Also dump the path ensemble of the first node.
    pub write_paths: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            write_paths: false,
        }
    }
}

/// The candidate solution checked by `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    /// Closed-form candidate with analytic derivatives.
    pub oracle: Option<Oracle>,
    /// Formula candidate `u(t, x..)`; derivatives by finite differences.
    pub u: Option<String>,
    /// Added to the candidate; a nonzero shift is a negative control.
    pub shift: f64,
    pub budget: VerifyBudget,
    /// Additive budget for oracle-vs-solver comparisons at the nodes.
    pub bias_budget: f64,
    /// Significance level of the Markov-property F test.
    pub markov_level: f64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            oracle: None,
            u: None,
            shift: 0.0,
            budget: VerifyBudget::default(),
            bias_budget: 0.02,
            markov_level: 1e-3,
        }
    }
}

impl VerifySpec {
    pub fn candidate(&self, dim: usize) -> Result<TestFunction> {
        let base = match (&self.oracle, &self.u) {
            (Some(o), None) => o.test_function(),
            (None, Some(src)) => {
                let e = Expression::parse("verify.u", src, dim)?;
                TestFunction::new(dim, move |t, x| e.eval(t, x, 0.0, 0.0))
            }
            (Some(_), Some(_)) => {
                return Err(Error::config("verify", "give either `oracle` or `u`, not both"))
            }
            (None, None) => return Err(Error::config("verify", "need `oracle` or `u`")),
        };
        Ok(if self.shift != 0.0 {
            base.shifted(self.shift)
        } else {
            base
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaCheckSpec {
    /// Test functions in `t, x..`; Γ is tabulated for every pair.
    pub functions: Vec<String>,
    /// Allowed `|Γ_closed − Γ_definition|` relative to `max(1, |Γ|)`.
    pub tolerance: f64,
}

impl Default for GammaCheckSpec {
    fn default() -> Self {
        Self {
            functions: vec!["x_1".into(), "x_1^2".into(), "sin(x_1)".into()],
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    /// State dimension; inferred from the model when absent.
    #[serde(default)]
    pub dim: Option<usize>,
    pub clock: ClockSpec,
    pub driver: DriverSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub nodes: NodeSpec,
    #[serde(default)]
    pub output: OutputSpec,
    /// Overrides `solver.seed`.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub gamma_check: GammaCheckSpec,
}

/// Everything a run needs, validated.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub model: ForwardModel,
    pub driver: Driver,
    pub nodes: Vec<Node>,
}

fn infer_dim(kind: &ModelKind) -> usize {
    match kind {
        ModelKind::BrownianDiffusion { drift, .. } | ModelKind::JumpDiffusion { drift, .. } => {
            drift.offset.len().max(1)
        }
        ModelKind::AlphaStable { .. } => 1,
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn dim(&self) -> usize {
        self.dim.unwrap_or_else(|| infer_dim(&self.model))
    }

    /// Validates and builds the model and driver. Defaults that depend on
    /// other fields (seed, ridge, basis, λ) are written back so the echoed
    /// config is complete.
    pub fn prepare(&self, base: &Path) -> Result<Prepared> {
        let mut config = self.clone();
        if let Some(seed) = config.seed {
            config.solver.seed = seed;
        }
        config.seed = Some(config.solver.seed);
        config.solver.validate()?;
        let dim = config.dim();
        config.dim = Some(dim);
        let clock = config.clock.build(base)?;
        let model = ForwardModel::new(config.model.clone(), dim, clock)?;
        let driver = config
            .driver
            .build(dim, model.clock().horizon(), config.solver.seed)?;
        config.solver.ridge = Some(config.solver.ridge_for(config.solver.n_paths));
        config.solver.basis = Some(config.solver.basis_for(dim));
        config.solver.lambda = Some(config.solver.lambda_for(&driver));
        if let Some(b) = &config.solver.basis {
            if b.dim != dim {
                return Err(Error::config(
                    "solver.basis.dim",
                    format!("basis dimension {} does not match state dimension {dim}", b.dim),
                ));
            }
        }
        let nodes = config.nodes.nodes();
        for (i, (s, x)) in nodes.iter().enumerate() {
            if x.len() != dim {
                return Err(Error::config(
                    format!("nodes[{i}]"),
                    format!("state has dimension {}, expected {dim}", x.len()),
                ));
            }
            model
                .clock()
                .index_of(*s)
                .map_err(|e| Error::config(format!("nodes[{i}]"), e.to_string()))?;
        }
        Ok(Prepared {
            config,
            model,
            driver,
            nodes,
        })
    }
}
