//! Symmetric α-stable increments and the radial principal-value quadrature
//! for the one-dimensional fractional generator
//! `c PV∫ (φ(x+y) − φ(x)) / |y|^{1+α} dy`.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre_8;

/// Chambers–Mallows–Stuck draw with characteristic function `exp(−|ξ|^α)`,
/// valid for `α ∈ (0, 2]`.
pub fn standard_symmetric_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random_range(-FRAC_PI_2..FRAC_PI_2);
    if (alpha - 1.0).abs() < 1e-12 {
        return u.tan();
    }
    let w: f64 = Exp1.sample(rng);
    (alpha * u).sin() / u.cos().powf(1.0 / alpha)
        * (((1.0 - alpha) * u).cos() / w).powf((1.0 - alpha) / alpha)
}

/// `∫_ℝ (1 − cos u) |u|^{−1−α} du = π / (Γ(1+α) sin(πα/2))`.
pub fn cosine_integral(alpha: f64) -> f64 {
    PI / (gamma(1.0 + alpha) * (PI * alpha / 2.0).sin())
}

/// The constant making `c PV∫(φ(x+y) − φ(x))/|y|^{1+α} dy = −(−Δ)^{α/2}φ`
/// in one dimension, i.e. the generator of the process with
/// characteristic exponent `|ξ|^α` per unit clock.
pub fn fractional_laplacian_constant(alpha: f64) -> f64 {
    1.0 / cosine_integral(alpha)
}

/// Radial quadrature settings for the principal-value integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StableQuadrature {
    /// Below this radius the integrand is replaced by its second-order Taylor term.
    pub inner_cutoff: f64,
    /// Upper radius for untruncated models; truncated models integrate to their jump cap.
    pub outer_cutoff: f64,
    /// Eight-point Gauss–Legendre panels per decade of `log r`.
    pub panels_per_decade: usize,
    /// Tolerance on the reported tail bound, relative to `max(1, |value|)`.
    pub tail_tolerance: f64,
}

impl Default for StableQuadrature {
    fn default() -> Self {
        Self {
            inner_cutoff: 1e-3,
            outer_cutoff: 1e4,
            panels_per_decade: 2,
            tail_tolerance: 1e-3,
        }
    }
}

impl StableQuadrature {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_cutoff > 0.0 && self.outer_cutoff > self.inner_cutoff) {
            return Err(Error::config(
                "model.quadrature",
                "need 0 < inner_cutoff < outer_cutoff",
            ));
        }
        if self.panels_per_decade == 0 {
            return Err(Error::config("model.quadrature.panels_per_decade", "must be >= 1"));
        }
        if !(self.tail_tolerance > 0.0) {
            return Err(Error::config("model.quadrature.tail_tolerance", "must be > 0"));
        }
        Ok(())
    }
}

/// Jump cap of a truncated stable model: jumps larger than `radius` are
/// removed, jumps below `small_jump_cutoff` are simulated by their Gaussian
/// second-moment match.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub radius: f64,
    pub small_jump_cutoff: f64,
}

impl Truncation {
    pub fn new(radius: f64) -> Self {
        Self {
            radius,
            small_jump_cutoff: 0.05 * radius,
        }
    }

    /// Variance per unit clock of the Gaussian stand-in for jumps below the cutoff.
    pub fn small_jump_variance(&self, alpha: f64, scale: f64) -> f64 {
        2.0 * scale * self.small_jump_cutoff.powf(2.0 - alpha) / (2.0 - alpha)
    }

    /// Intensity per unit clock of jumps in `[cutoff, radius]` (both signs).
    pub fn big_jump_rate(&self, alpha: f64, scale: f64) -> f64 {
        2.0 * scale * (self.small_jump_cutoff.powf(-alpha) - self.radius.powf(-alpha)) / alpha
    }

    /// Signed jump with density `∝ |r|^{−1−α}` on `cutoff ≤ |r| ≤ radius`.
    pub fn sample_big_jump<R: Rng + ?Sized>(&self, alpha: f64, rng: &mut R) -> f64 {
        let lo = self.small_jump_cutoff.powf(-alpha);
        let hi = self.radius.powf(-alpha);
        let u: f64 = rng.random();
        let r = (lo - u * (lo - hi)).powf(-1.0 / alpha);
        if rng.random::<bool>() {
            r
        } else {
            -r
        }
    }

    /// Increment over a clock step `dv`.
    pub fn sample_increment<R: Rng + ?Sized>(
        &self,
        alpha: f64,
        scale: f64,
        dv: f64,
        rng: &mut R,
    ) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        let mut dx = (self.small_jump_variance(alpha, scale) * dv).sqrt() * z;
        let intensity = self.big_jump_rate(alpha, scale) * dv;
        if intensity > 0.0 {
            let n = super::sample_poisson(intensity, rng);
            for _ in 0..n {
                dx += self.sample_big_jump(alpha, rng);
            }
        }
        dx
    }
}

/// Outcome of one principal-value quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvQuadrature {
    pub value: f64,
    pub tail_bound: f64,
}

/// Bisects `[a, b]` until the panel estimate agrees with the sum of its
/// halves. Oscillating numerators need this far out in `r`.
fn adaptive_panel<G>(gauss: &G, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64
where
    G: Fn(f64, f64) -> f64,
{
    let m = 0.5 * (a + b);
    let (left, right) = (gauss(a, m), gauss(m, b));
    if (left + right - whole).abs() <= tol || depth >= 24 {
        return left + right;
    }
    adaptive_panel(gauss, a, m, left, 0.5 * tol, depth + 1) + adaptive_panel(gauss, m, b, right, 0.5 * tol, depth + 1)
}

/// `scale ∫_0^{upper} N(r) r^{−1−α} dr` where `N(r) ≈ taylor_coeff·r²` near 0.
/// `N` must already be symmetrized over `±r`. When `truncated` is false the
/// tail beyond `upper` is bounded from samples of `N` and checked against the
/// quadrature tolerance.
pub fn radial_pv_integral<N>(
    alpha: f64,
    scale: f64,
    quad: &StableQuadrature,
    upper: f64,
    truncated: bool,
    taylor_coeff: f64,
    numerator: N,
) -> Result<PvQuadrature>
where
    N: Fn(f64) -> f64,
{
    let eps = quad.inner_cutoff.min(upper);
    let inner = taylor_coeff * eps.powf(2.0 - alpha) / (2.0 - alpha);
    let (nodes, weights) = gauss_legendre_8();
    let (lo, hi) = (eps.ln(), upper.ln());
    let decades = (hi - lo) / std::f64::consts::LN_10;
    let panels = ((decades * quad.panels_per_decade as f64).ceil() as usize).max(1);
    let width = (hi - lo) / panels as f64;
    // integrand in u = ln r
    let f = |u: f64| {
        let r = u.exp();
        numerator(r) * r.powf(-alpha)
    };
    let gauss = |a: f64, b: f64| {
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        nodes
            .iter()
            .zip(weights)
            .map(|(z, w)| w * half * f(mid + half * z))
            .sum::<f64>()
    };
    let panel_tol = 1e-3 * quad.tail_tolerance / (panels as f64 * scale.max(f64::MIN_POSITIVE));
    let mut body = 0.0;
    for p in 0..panels {
        let a = lo + p as f64 * width;
        body += adaptive_panel(&gauss, a, a + width, gauss(a, a + width), panel_tol, 0);
    }
    let value = scale * (inner + body);
    let tail_bound = if truncated {
        0.0
    } else {
        let sup = [1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|m| numerator(m * upper).abs())
            .fold(0.0, f64::max);
        scale * sup * upper.powf(-alpha) / alpha
    };
    if !value.is_finite() || tail_bound > quad.tail_tolerance * value.abs().max(1.0) {
        return Err(Error::Numeric(format!(
            "principal-value quadrature did not converge: value {value}, tail bound {tail_bound} \
             beyond outer cutoff {upper} (tolerance {})",
            quad.tail_tolerance
        )));
    }
    Ok(PvQuadrature { value, tail_bound })
}
