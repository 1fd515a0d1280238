//! Least-squares conditional expectations `E[· | X_{t_k}]` on a finite basis.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BasisFamily {
    /// Monomials of total degree `<= degree` in the normalized state.
    Polynomial { degree: u32 },
    /// Monomials with every coordinate degree `<= degree`.
    TensorPolynomial { degree: u32 },
    /// `bins` cells per dimension with an affine fit on each.
    LocalPartition { bins: u32 },
}

/// A basis family plus the box used to normalize states to `[-1, 1]^d`.
/// Without explicit bounds the box is taken from the sample at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionBasis {
    #[serde(flatten)]
    pub family: BasisFamily,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default)]
    pub bounds: Option<Vec<(f64, f64)>>,
}

fn one() -> usize {
    1
}

impl RegressionBasis {
    pub fn new(family: BasisFamily, dim: usize) -> Self {
        Self {
            family,
            dim,
            bounds: None,
        }
    }

    pub fn polynomial(degree: u32) -> Self {
        Self::new(BasisFamily::Polynomial { degree }, 1)
    }

    /// Degree 4 in one dimension, tensor degree 2 above.
    pub fn default_for(dim: usize) -> Self {
        if dim == 1 {
            Self::new(BasisFamily::Polynomial { degree: 4 }, 1)
        } else {
            Self::new(BasisFamily::TensorPolynomial { degree: 2 }, dim)
        }
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.bounds = Some(bounds);
        self
    }

    /// Number of basis functions.
    pub fn size(&self) -> usize {
        match self.family {
            BasisFamily::Polynomial { degree } => total_degree_exponents(self.dim, degree).len(),
            BasisFamily::TensorPolynomial { degree } => (degree as usize + 1).pow(self.dim as u32),
            BasisFamily::LocalPartition { bins } => {
                (bins as usize).pow(self.dim as u32) * (self.dim + 1)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("basis.dim", "must be >= 1"));
        }
        if let BasisFamily::LocalPartition { bins: 0 } = self.family {
            return Err(Error::config("basis.bins", "must be >= 1"));
        }
        if let Some(b) = &self.bounds {
            if b.len() != self.dim || b.iter().any(|(lo, hi)| !(lo <= hi)) {
                return Err(Error::config("basis.bounds", "need one (lo, hi) pair per dimension"));
            }
        }
        Ok(())
    }

    fn resolve(&self, states: &[f64]) -> Result<ResolvedBasis> {
        self.validate()?;
        let d = self.dim;
        if states.len() % d != 0 {
            return Err(Error::Alignment(format!(
                "{} state values are not a multiple of dimension {d}",
                states.len()
            )));
        }
        let bounds = match &self.bounds {
            Some(b) => b.clone(),
            None => {
                let mut b = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
                for chunk in states.chunks_exact(d) {
                    for (i, &v) in chunk.iter().enumerate() {
                        b[i].0 = b[i].0.min(v);
                        b[i].1 = b[i].1.max(v);
                    }
                }
                if states.is_empty() {
                    b = vec![(-1.0, 1.0); d];
                }
                b
            }
        };
        let center = bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
        let half = bounds
            .iter()
            .map(|(lo, hi)| {
                let h = 0.5 * (hi - lo);
                if h > 0.0 && h.is_finite() {
                    h
                } else {
                    1.0
                }
            })
            .collect();
        let exponents = match self.family {
            BasisFamily::Polynomial { degree } => total_degree_exponents(d, degree),
            BasisFamily::TensorPolynomial { degree } => tensor_exponents(d, degree),
            BasisFamily::LocalPartition { .. } => Vec::new(),
        };
        Ok(ResolvedBasis {
            family: self.family,
            dim: d,
            center,
            half,
            exponents,
        })
    }
}

fn total_degree_exponents(dim: usize, degree: u32) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = tensor_exponents(dim, degree)
        .into_iter()
        .filter(|e| e.iter().sum::<u32>() <= degree)
        .collect();
    out.sort_by_key(|e| e.iter().sum::<u32>());
    out
}

fn tensor_exponents(dim: usize, degree: u32) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for _ in 0..dim {
        let mut next = Vec::with_capacity(out.len() * (degree as usize + 1));
        for e in &out {
            for k in 0..=degree {
                let mut e = e.clone();
                e.push(k);
                next.push(e);
            }
        }
        out = next;
    }
    out.sort_by_key(|e| e.iter().sum::<u32>());
    out
}

/// A basis with its normalization frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedBasis {
    family: BasisFamily,
    dim: usize,
    center: Vec<f64>,
    half: Vec<f64>,
    exponents: Vec<Vec<u32>>,
}

impl ResolvedBasis {
    pub fn size(&self) -> usize {
        match self.family {
            BasisFamily::LocalPartition { bins } => {
                (bins as usize).pow(self.dim as u32) * (self.dim + 1)
            }
            _ => self.exponents.len(),
        }
    }

    /// Whether basis function `j` is a constant (on its support); constants
    /// are left out of the ridge penalty.
    fn is_constant(&self, j: usize) -> bool {
        match self.family {
            BasisFamily::LocalPartition { .. } => j % (self.dim + 1) == 0,
            _ => self.exponents[j].iter().all(|&e| e == 0),
        }
    }

    /// Sparse feature vector `(index, value)` of one state.
    fn features(&self, x: &[f64], out: &mut Vec<(usize, f64)>) {
        out.clear();
        let d = self.dim;
        match self.family {
            BasisFamily::LocalPartition { bins } => {
                let bins = bins as usize;
                let mut cell = 0;
                for i in 0..d {
                    let z = (x[i] - self.center[i]) / self.half[i];
                    let b = (((z + 1.0) * 0.5 * bins as f64).floor() as isize)
                        .clamp(0, bins as isize - 1) as usize;
                    cell = cell * bins + b;
                }
                let base = cell * (d + 1);
                out.push((base, 1.0));
                for i in 0..d {
                    out.push((base + 1 + i, (x[i] - self.center[i]) / self.half[i]));
                }
            }
            _ => {
                let max_deg = self
                    .exponents
                    .last()
                    .map_or(0, |e| *e.iter().max().unwrap_or(&0)) as usize;
                let mut powers = vec![1.0; d * (max_deg + 1)];
                for i in 0..d {
                    let z = (x[i] - self.center[i]) / self.half[i];
                    for k in 1..=max_deg {
                        powers[i * (max_deg + 1) + k] = powers[i * (max_deg + 1) + k - 1] * z;
                    }
                }
                for (j, e) in self.exponents.iter().enumerate() {
                    let mut v = 1.0;
                    for (i, &k) in e.iter().enumerate() {
                        v *= powers[i * (max_deg + 1) + k as usize];
                    }
                    out.push((j, v));
                }
            }
        }
    }
}

/// Coefficients of one least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedRegression {
    basis: ResolvedBasis,
    coefficients: Vec<f64>,
    /// `(BᵀB + ridge I)^{-1}`, row-major.
    gram_inverse: Vec<f64>,
    residual_sum_of_squares: f64,
    n_samples: usize,
    ridge: f64,
}

/// Minimizes `Σ (target_i − Σ_j c_j b_j(x_i))² + ridge Σ_{j non-constant} c_j²`.
/// Unpenalized constants keep constant targets exactly reproduced.
/// `states` is the flattened `n × d` sample.
pub fn fit(
    targets: &[f64],
    states: &[f64],
    basis: &RegressionBasis,
    ridge: f64,
) -> Result<FittedRegression> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Domain(format!("ridge must be >= 0, got {ridge}")));
    }
    let resolved = basis.resolve(states)?;
    let d = resolved.dim;
    let n = targets.len();
    if states.len() != n * d {
        return Err(Error::Alignment(format!(
            "{n} targets but {} states of dimension {d}",
            states.len() / d
        )));
    }
    let p = resolved.size();
    if ridge == 0.0 && n < p {
        return Err(Error::Singular(format!("{n} samples for {p} basis functions")));
    }
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    let mut feats = Vec::with_capacity(p);
    for (x, &y) in states.chunks_exact(d).zip(targets) {
        resolved.features(x, &mut feats);
        for &(a, va) in &feats {
            rhs[a] += va * y;
            let row = &mut gram[a * p..(a + 1) * p];
            for &(b, vb) in &feats {
                row[b] += va * vb;
            }
        }
    }
    let mut penalized: Vec<f64> = (0..p)
        .map(|j| if resolved.is_constant(j) { 0.0 } else { ridge })
        .collect();
    for j in 0..p {
        if gram[j * p + j] == 0.0 {
            // an empty partition cell: its constant is penalized too
            penalized[j] = ridge;
        }
        gram[j * p + j] += penalized[j];
    }
    let g = DMatrix::from_row_slice(p, p, &gram);
    let chol = g.clone().cholesky().ok_or_else(|| {
        Error::Singular(format!("normal equations of size {p} are not positive definite"))
    })?;
    if ridge == 0.0 {
        let diag: Vec<f64> = (0..p).map(|j| chol.l_dirty()[(j, j)]).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) || (min / max).powi(2) < 1e-13 {
            return Err(Error::Singular(format!(
                "basis of size {p} is numerically rank deficient on this sample"
            )));
        }
    }
    let mut coef = chol.solve(&DVector::from_vec(rhs));
    // one step of iterative refinement
    let mut correction = vec![0.0; p];
    for (x, &y) in states.chunks_exact(d).zip(targets) {
        resolved.features(x, &mut feats);
        let r = y - feats.iter().map(|&(j, v)| coef[j] * v).sum::<f64>();
        for &(j, v) in &feats {
            correction[j] += v * r;
        }
    }
    for j in 0..p {
        correction[j] -= penalized[j] * coef[j];
    }
    coef += chol.solve(&DVector::from_vec(correction));
    let coefficients: Vec<f64> = coef.iter().copied().collect();
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numeric("non-finite regression coefficients".into()));
    }
    let mut rss = 0.0;
    for (x, &y) in states.chunks_exact(d).zip(targets) {
        resolved.features(x, &mut feats);
        let r = y - feats.iter().map(|&(j, v)| coefficients[j] * v).sum::<f64>();
        rss += r * r;
    }
    let inv = chol.inverse();
    let gram_inverse = (0..p * p).map(|k| inv[(k / p, k % p)]).collect();
    Ok(FittedRegression {
        basis: resolved,
        coefficients,
        gram_inverse,
        residual_sum_of_squares: rss,
        n_samples: n,
        ridge,
    })
}

/// Evaluates the fitted combination on a flattened `n × d` sample.
pub fn predict(fit: &FittedRegression, states: &[f64]) -> Vec<f64> {
    let d = fit.basis.dim;
    let mut feats = Vec::with_capacity(fit.coefficients.len());
    states
        .chunks_exact(d)
        .map(|x| {
            fit.basis.features(x, &mut feats);
            feats.iter().map(|&(j, v)| fit.coefficients[j] * v).sum()
        })
        .collect()
}

impl FittedRegression {
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn n_coefficients(&self) -> usize {
        self.coefficients.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn residual_sum_of_squares(&self) -> f64 {
        self.residual_sum_of_squares
    }

    /// In-sample residual norm `sqrt(RSS)`.
    pub fn residual_norm(&self) -> f64 {
        self.residual_sum_of_squares.sqrt()
    }

    pub fn predict_one(&self, x: &[f64]) -> f64 {
        predict(self, x)[0]
    }

    /// Residual variance estimate `RSS / (n − p)`.
    pub fn residual_variance(&self) -> f64 {
        let dof = self.n_samples.saturating_sub(self.coefficients.len()).max(1);
        self.residual_sum_of_squares / dof as f64
    }

    /// Standard error of the fitted value at each state, under homoscedastic
    /// residuals: `σ̂ sqrt(b(x)ᵀ G⁻¹ b(x))`.
    pub fn prediction_standard_errors(&self, states: &[f64]) -> Vec<f64> {
        let d = self.basis.dim;
        let p = self.coefficients.len();
        let sigma = self.residual_variance().sqrt();
        let mut feats = Vec::with_capacity(p);
        states
            .chunks_exact(d)
            .map(|x| {
                self.basis.features(x, &mut feats);
                let mut q = 0.0;
                for &(a, va) in &feats {
                    for &(b, vb) in &feats {
                        q += va * self.gram_inverse[a * p + b] * vb;
                    }
                }
                sigma * q.max(0.0).sqrt()
            })
            .collect()
    }

    /// Standard error of the linear functional `Σ_p w_p f̂(x_p)` of the fitted
    /// function, from the coefficient covariance `σ̂² (BᵀB)^{-1}`.
    pub fn functional_standard_error(&self, states: &[f64], weights: &[f64]) -> f64 {
        let d = self.basis.dim;
        let p = self.coefficients.len();
        let mut g = vec![0.0; p];
        let mut feats = Vec::with_capacity(p);
        for (x, &w) in states.chunks_exact(d).zip(weights) {
            self.basis.features(x, &mut feats);
            for &(j, v) in &feats {
                g[j] += w * v;
            }
        }
        let mut q = 0.0;
        for a in 0..p {
            for b in 0..p {
                q += g[a] * self.gram_inverse[a * p + b] * g[b];
            }
        }
        (self.residual_variance() * q.max(0.0)).sqrt()
    }

    /// For one-dimensional polynomial fits, the coefficients of
    /// `1, x, x², …` in the original (unnormalized) variable.
    pub fn polynomial_coefficients(&self) -> Option<Vec<f64>> {
        if self.basis.dim != 1 || !matches!(self.basis.family, BasisFamily::Polynomial { .. }) {
            return None;
        }
        let (c, h) = (self.basis.center[0], self.basis.half[0]);
        let degree = self.coefficients.len() - 1;
        let mut out = vec![0.0; degree + 1];
        // z^k = ((x − c)/h)^k = Σ_j C(k, j) x^j (−c)^{k−j} / h^k
        for (k, &a) in self.coefficients.iter().enumerate() {
            let mut binom = 1.0;
            for j in 0..=k {
                if j > 0 {
                    binom = binom * (k + 1 - j) as f64 / j as f64;
                }
                out[j] += a * binom * (-c).powi((k - j) as i32) / h.powi(k as i32);
            }
        }
        Some(out)
    }

    /// `coefficient,value` dump for diagnostics.
    pub fn coefficient_rows(&self) -> Vec<Vec<String>> {
        self.coefficients
            .iter()
            .enumerate()
            .map(|(j, &c)| vec![j.to_string(), crate::io::fmt_float(c)])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock_measure::Clock;
    use crate::forward_models::{sample_paths, ForwardModel};
    use proptest::prelude::*;

    fn variance(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn constants_are_reproduced() {
        let xs: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        for basis in [
            RegressionBasis::polynomial(4),
            RegressionBasis::new(BasisFamily::LocalPartition { bins: 3 }, 1),
        ] {
            let f = fit(&[7.0; 50], &xs, &basis, 0.0).unwrap();
            for v in predict(&f, &xs) {
                assert!((v - 7.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn affine_data_recovers_raw_coefficients() {
        let xs: Vec<f64> = (0..40).map(|i| -2.0 + 0.13 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        for degree in [1, 2, 3] {
            let f = fit(&ys, &xs, &RegressionBasis::polynomial(degree), 0.0).unwrap();
            let c = f.polynomial_coefficients().unwrap();
            assert!((c[0] - 1.0).abs() < 1e-10 && (c[1] - 2.0).abs() < 1e-10, "{c:?}");
            for extra in &c[2..] {
                assert!(extra.abs() < 1e-10);
            }
            let pred = predict(&f, &xs);
            for (p, y) in pred.iter().zip(&ys) {
                assert!((p - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let xs = vec![1.0; 20];
        let ys = vec![2.0; 20];
        assert!(matches!(
            fit(&ys, &xs, &RegressionBasis::polynomial(2), 0.0),
            Err(Error::Singular(_))
        ));
        assert!(fit(&ys, &xs, &RegressionBasis::polynomial(2), 1e-6).is_ok());
        assert!(matches!(
            fit(&[1.0, 2.0], &[0.0, 1.0], &RegressionBasis::polynomial(3), 0.0),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn zero_coefficients_predict_zero() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let f = fit(&[0.0; 10], &xs, &RegressionBasis::polynomial(2), 0.0).unwrap();
        assert!(predict(&f, &xs).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn residuals_are_orthogonal_to_basis() {
        let xs: Vec<f64> = (0..500).map(|i| ((i * 7919) % 1000) as f64 / 250.0 - 2.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sin() * 3.0 + x.abs()).collect();
        let basis = RegressionBasis::polynomial(4);
        let f = fit(&ys, &xs, &basis, 0.0).unwrap();
        let pred = predict(&f, &xs);
        let resolved = basis.resolve(&xs).unwrap();
        let mut feats = Vec::new();
        let mut dots = vec![0.0; resolved.size()];
        let mut norms = vec![0.0; resolved.size()];
        for (i, x) in xs.iter().enumerate() {
            resolved.features(&[*x], &mut feats);
            for &(j, v) in &feats {
                dots[j] += v * (ys[i] - pred[i]);
                norms[j] += v * v;
            }
        }
        let rnorm = f.residual_norm();
        for j in 0..dots.len() {
            assert!(dots[j].abs() <= 1e-8 * norms[j].sqrt() * rnorm, "column {j}");
        }
        assert!(variance(&pred) <= variance(&ys));
    }

    #[test]
    fn multi_dimensional_bases() {
        let n = 300;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let a = ((i * 37) % 101) as f64 / 50.0 - 1.0;
            let b = ((i * 53) % 97) as f64 / 48.0 - 1.0;
            xs.extend([a, b]);
            ys.push(1.0 + a - 2.0 * b + 0.5 * a * b);
        }
        let tensor = RegressionBasis::new(BasisFamily::TensorPolynomial { degree: 1 }, 2);
        assert_eq!(tensor.size(), 4);
        let f = fit(&ys, &xs, &tensor, 0.0).unwrap();
        assert!(f.residual_norm() < 1e-10);
        let total = RegressionBasis::new(BasisFamily::Polynomial { degree: 2 }, 2);
        assert_eq!(total.size(), 6);
        assert!(fit(&ys, &xs, &total, 0.0).unwrap().residual_norm() < 1e-10);
        let local = RegressionBasis::new(BasisFamily::LocalPartition { bins: 2 }, 2);
        assert_eq!(local.size(), 12);
        let lin: Vec<f64> = xs.chunks(2).map(|x| 3.0 * x[0] - x[1]).collect();
        assert!(fit(&lin, &xs, &local, 0.0).unwrap().residual_norm() < 1e-9);
    }

    #[test]
    fn gaussian_conditional_second_moment() {
        // E[X_T² | X_t] = X_t² + (T − t) for standard Brownian motion
        let clock = Clock::identity(1.0, 10).unwrap();
        let m = ForwardModel::brownian(clock, 0.0, 1.0).unwrap();
        let n = 100_000;
        let e = sample_paths(&m, (0.0, &[0.0]), n, 17).unwrap();
        let k = 4;
        let xt = e.states_at(k);
        let targets: Vec<f64> = e.states_at(10).iter().map(|x| x * x).collect();
        let f = fit(&targets, &xt, &RegressionBasis::polynomial(2), 0.0).unwrap();
        let se = f.prediction_standard_errors(&[-1.0, 0.0, 0.5, 1.0]);
        for (i, x) in [-1.0f64, 0.0, 0.5, 1.0].iter().enumerate() {
            let want = x * x + 0.6;
            let got = f.predict_one(&[*x]);
            assert!((got - want).abs() < 3.0 * se[i] + 1e-3, "x={x}: {got} vs {want} (se {})", se[i]);
        }
    }

    #[test]
    fn tower_property_surrogate() {
        let clock = Clock::identity(1.0, 10).unwrap();
        let m = ForwardModel::brownian(clock, 0.0, 1.0).unwrap();
        let e = sample_paths(&m, (0.0, &[0.0]), 20_000, 23).unwrap();
        let basis = RegressionBasis::polynomial(2);
        let targets: Vec<f64> = e.states_at(10).iter().map(|x| x * x).collect();
        let (x3, x6) = (e.states_at(3), e.states_at(6));
        let inner = fit(&targets, &x6, &basis, 0.0).unwrap();
        let staged = fit(&predict(&inner, &x6), &x3, &basis, 0.0).unwrap();
        let direct = fit(&targets, &x3, &basis, 0.0).unwrap();
        let se = direct.prediction_standard_errors(&[0.0, 0.5]);
        for (i, x) in [0.0, 0.5].iter().enumerate() {
            let gap = (staged.predict_one(&[*x]) - direct.predict_one(&[*x])).abs();
            assert!(gap < 3.0 * se[i], "gap {gap} se {}", se[i]);
        }
    }

    proptest! {
        #[test]
        fn projection_does_not_increase_variance(
            ys in prop::collection::vec(-5.0f64..5.0, 30..80),
            degree in 0u32..4,
        ) {
            let xs: Vec<f64> = (0..ys.len()).map(|i| (i as f64 * 0.61).cos() * 2.0 + i as f64 * 0.01).collect();
            let f = fit(&ys, &xs, &RegressionBasis::polynomial(degree), 0.0).unwrap();
            let pred = predict(&f, &xs);
            prop_assert!(variance(&pred) <= variance(&ys) * (1.0 + 1e-10) + 1e-12);
            // refitting the fitted values reproduces them
            let again = predict(&fit(&pred, &xs, &RegressionBasis::polynomial(degree), 0.0).unwrap(), &xs);
            for (a, b) in again.iter().zip(&pred) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }
    }
}
