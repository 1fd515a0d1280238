//! Driver, terminal and test-function formulas given as strings, e.g.
//! `"sin(y) + 0.5*cos(z)"` or `"x_1^2 + x_2"`.
//!
//! Variables: `t`, `y`, `z`, `x` (one-dimensional states), `x_1..x_d`, and
//! the constants `pi`, `e`.

use meval::{ContextProvider, Expr, FuncEvalError};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Expression {
    source: String,
    expr: Expr,
    dim: usize,
}

struct Vars<'a> {
    t: f64,
    x: &'a [f64],
    y: f64,
    z: f64,
}

impl ContextProvider for Vars<'_> {
    fn get_var(&self, name: &str) -> Option<f64> {
        match name {
            "t" => Some(self.t),
            "y" => Some(self.y),
            "z" => Some(self.z),
            "x" if self.x.len() == 1 => Some(self.x[0]),
            "pi" => Some(std::f64::consts::PI),
            "e" => Some(std::f64::consts::E),
            _ => {
                let i: usize = name.strip_prefix("x_")?.parse().ok()?;
                self.x.get(i.checked_sub(1)?).copied()
            }
        }
    }

    fn eval_func(&self, name: &str, args: &[f64]) -> std::result::Result<f64, FuncEvalError> {
        let unary = |f: fn(f64) -> f64| match args {
            [a] => Ok(f(*a)),
            _ => Err(FuncEvalError::NumberArgs(1)),
        };
        match name {
            "sin" => unary(f64::sin),
            "cos" => unary(f64::cos),
            "tan" => unary(f64::tan),
            "sinh" => unary(f64::sinh),
            "cosh" => unary(f64::cosh),
            "tanh" => unary(f64::tanh),
            "atan" => unary(f64::atan),
            "exp" => unary(f64::exp),
            "ln" | "log" => unary(f64::ln),
            "log10" => unary(f64::log10),
            "sqrt" => unary(f64::sqrt),
            "abs" => unary(f64::abs),
            "signum" => unary(f64::signum),
            "floor" => unary(f64::floor),
            "ceil" => unary(f64::ceil),
            "min" | "max" => {
                if args.is_empty() {
                    return Err(FuncEvalError::TooFewArguments);
                }
                let pick = if name == "min" { f64::min } else { f64::max };
                Ok(args[1..].iter().fold(args[0], |m, &v| pick(m, v)))
            }
            "pow" => match args {
                [a, b] => Ok(a.powf(*b)),
                _ => Err(FuncEvalError::NumberArgs(2)),
            },
            _ => Err(FuncEvalError::UnknownFunction),
        }
    }
}

impl Expression {
    /// Parses `source` and probes it once so unknown names fail here, with
    /// `field` named in the error.
    pub fn parse(field: &str, source: &str, dim: usize) -> Result<Self> {
        let expr: Expr = source
            .parse()
            .map_err(|e| Error::config(field, format!("cannot parse `{source}`: {e}")))?;
        let probe = vec![0.5; dim];
        expr.eval_with_context(Vars {
            t: 0.5,
            x: &probe,
            y: 0.5,
            z: 0.5,
        })
        .map_err(|e| Error::config(field, format!("cannot evaluate `{source}`: {e}")))?;
        Ok(Self {
            source: source.to_string(),
            expr,
            dim,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Evaluates the formula; evaluation failures give NaN.
    pub fn eval(&self, t: f64, x: &[f64], y: f64, z: f64) -> f64 {
        self.expr
            .eval_with_context(Vars { t, x, y, z })
            .unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_with_state_variables() {
        let e = Expression::parse("f", "sin(y) + 0.5*cos(z) + x_1^2 - t", 2).unwrap();
        let v = e.eval(0.25, &[2.0, 7.0], 1.0, 0.0);
        assert!((v - (1.0f64.sin() + 0.5 + 4.0 - 0.25)).abs() < 1e-15);
        let one_d = Expression::parse("g", "2*x + 1/2", 1).unwrap();
        assert_eq!(one_d.eval(0.0, &[3.0], 0.0, 0.0), 6.5);
        let f = Expression::parse("g", "max(x, 0) + pow(2, 3) + abs(-pi) - pi", 1).unwrap();
        assert_eq!(f.eval(0.0, &[-1.0], 0.0, 0.0), 8.0);
    }

    #[test]
    fn unknown_names_are_config_errors() {
        for src in ["q + 1", "x_3", "foo(x)", "x_1 +"] {
            match Expression::parse("driver.f", src, 2) {
                Err(Error::Config { field, .. }) => assert_eq!(field, "driver.f"),
                other => panic!("{src}: {other:?}"),
            }
        }
    }
}
