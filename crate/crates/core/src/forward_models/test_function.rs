use std::fmt;
use std::sync::Arc;

pub type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// A function `φ(t, x)` in the generator's domain together with whatever
/// derivatives are known in closed form. Missing derivatives fall back to
/// central finite differences.
#[derive(Clone)]
pub struct TestFunction {
    dim: usize,
    value: ScalarFn,
    time_derivative: Option<ScalarFn>,
    gradient: Option<VectorFn>,
    hessian: Option<VectorFn>,
    time_homogeneous: bool,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("dim", &self.dim)
            .field("analytic_dt", &self.time_derivative.is_some())
            .field("analytic_gradient", &self.gradient.is_some())
            .field("analytic_hessian", &self.hessian.is_some())
            .field("time_homogeneous", &self.time_homogeneous)
            .finish()
    }
}

/// Step for first derivatives: `ε^{1/3}·max(1, |x|)`.
pub fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

/// Step for second differences of values: `ε^{1/4}·max(1, |x|)`.
fn fd_step_second(x: f64) -> f64 {
    f64::EPSILON.powf(0.25) * x.abs().max(1.0)
}

impl TestFunction {
    pub fn new<F>(dim: usize, value: F) -> Self
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim,
            value: Arc::new(value),
            time_derivative: None,
            gradient: None,
            hessian: None,
            time_homogeneous: false,
        }
    }

    /// `φ(t, x) = h(x)`: the time derivative is identically zero.
    pub fn spatial<F>(dim: usize, value: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let mut f = Self::new(dim, move |_, x| value(x));
        f.time_homogeneous = true;
        f
    }

    pub fn with_time_derivative<F>(mut self, dt: F) -> Self
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.time_derivative = Some(Arc::new(dt));
        self
    }

    pub fn with_gradient<F>(mut self, grad: F) -> Self
    where
        F: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(grad));
        self
    }

    /// Row-major `d × d` Hessian.
    pub fn with_hessian<F>(mut self, hess: F) -> Self
    where
        F: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.hessian = Some(Arc::new(hess));
        self
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::spatial(dim, move |_| c)
            .with_gradient(move |_, _| vec![0.0; dim])
            .with_hessian(move |_, _| vec![0.0; dim * dim])
    }

    /// `φ(t, x) = x_i`.
    pub fn coordinate(dim: usize, i: usize) -> Self {
        Self::spatial(dim, move |x| x[i])
            .with_gradient(move |_, _| {
                let mut g = vec![0.0; dim];
                g[i] = 1.0;
                g
            })
            .with_hessian(move |_, _| vec![0.0; dim * dim])
    }

    /// `φ(t, x) = x_i²`.
    pub fn coordinate_square(dim: usize, i: usize) -> Self {
        Self::spatial(dim, move |x| x[i] * x[i])
            .with_gradient(move |_, x| {
                let mut g = vec![0.0; dim];
                g[i] = 2.0 * x[i];
                g
            })
            .with_hessian(move |_, _| {
                let mut h = vec![0.0; dim * dim];
                h[i * dim + i] = 2.0;
                h
            })
    }

    /// Gaussian bump `exp(−|x − center|² / (2 width²))`.
    pub fn gaussian_bump(center: Vec<f64>, width: f64) -> Self {
        let dim = center.len();
        let c1 = center.clone();
        let c2 = center.clone();
        let w2 = width * width;
        let val = move |x: &[f64], c: &[f64]| -> f64 {
            let r2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            (-r2 / (2.0 * w2)).exp()
        };
        Self::spatial(dim, move |x| val(x, &center))
            .with_gradient(move |_, x| {
                let e = val(x, &c1);
                x.iter().zip(&c1).map(|(a, b)| -(a - b) / w2 * e).collect()
            })
            .with_hessian(move |_, x| {
                let e = val(x, &c2);
                let mut h = vec![0.0; dim * dim];
                for i in 0..dim {
                    for j in 0..dim {
                        let di = x[i] - c2[i];
                        let dj = x[j] - c2[j];
                        let delta = if i == j { 1.0 } else { 0.0 };
                        h[i * dim + j] = (di * dj / (w2 * w2) - delta / w2) * e;
                    }
                }
                h
            })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_time_homogeneous(&self) -> bool {
        self.time_homogeneous
    }

    pub fn has_analytic_derivatives(&self) -> bool {
        self.gradient.is_some() && self.hessian.is_some()
            && (self.time_homogeneous || self.time_derivative.is_some())
    }

    #[inline]
    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        (self.value)(t, x)
    }

    pub fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        if self.time_homogeneous {
            return 0.0;
        }
        match &self.time_derivative {
            Some(dt) => dt(t, x),
            None => self.numeric_time_derivative(t, x),
        }
    }

    pub fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        match &self.gradient {
            Some(g) => g(t, x),
            None => self.numeric_gradient(t, x),
        }
    }

    pub fn hessian(&self, t: f64, x: &[f64]) -> Vec<f64> {
        match &self.hessian {
            Some(h) => h(t, x),
            None => self.numeric_hessian(t, x),
        }
    }

    pub fn numeric_time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        let h = fd_step(t);
        (self.value(t + h, x) - self.value(t - h, x)) / (2.0 * h)
    }

    pub fn numeric_gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut xp = x.to_vec();
        (0..self.dim)
            .map(|i| {
                let h = fd_step(x[i]);
                xp[i] = x[i] + h;
                let up = self.value(t, &xp);
                xp[i] = x[i] - h;
                let down = self.value(t, &xp);
                xp[i] = x[i];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    /// Central differences of the gradient when it is analytic, second
    /// differences of values otherwise.
    pub fn numeric_hessian(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        let mut xp = x.to_vec();
        if let Some(grad) = &self.gradient {
            for j in 0..d {
                let h = fd_step(x[j]);
                xp[j] = x[j] + h;
                let gp = grad(t, &xp);
                xp[j] = x[j] - h;
                let gm = grad(t, &xp);
                xp[j] = x[j];
                for i in 0..d {
                    out[i * d + j] = (gp[i] - gm[i]) / (2.0 * h);
                }
            }
            for i in 0..d {
                for j in 0..i {
                    let s = 0.5 * (out[i * d + j] + out[j * d + i]);
                    out[i * d + j] = s;
                    out[j * d + i] = s;
                }
            }
            return out;
        }
        let f0 = self.value(t, x);
        for i in 0..d {
            let hi = fd_step_second(x[i]);
            xp[i] = x[i] + hi;
            let fp = self.value(t, &xp);
            xp[i] = x[i] - hi;
            let fm = self.value(t, &xp);
            xp[i] = x[i];
            out[i * d + i] = (fp - 2.0 * f0 + fm) / (hi * hi);
            for j in 0..i {
                let hj = fd_step_second(x[j]);
                let mut corner = |si: f64, sj: f64| {
                    xp[i] = x[i] + si * hi;
                    xp[j] = x[j] + sj * hj;
                    let v = self.value(t, &xp);
                    xp[i] = x[i];
                    xp[j] = x[j];
                    v
                };
                let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0)
                    + corner(-1.0, -1.0))
                    / (4.0 * hi * hj);
                out[i * d + j] = v;
                out[j * d + i] = v;
            }
        }
        out
    }

    /// Largest absolute gap between analytic and finite-difference
    /// derivatives at `(t, x)`; zero when nothing analytic is supplied.
    pub fn derivative_consistency(&self, t: f64, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        if let Some(dt) = &self.time_derivative {
            worst = worst.max((dt(t, x) - self.numeric_time_derivative(t, x)).abs());
        }
        if let Some(g) = &self.gradient {
            let num = self.numeric_gradient(t, x);
            for (a, b) in g(t, x).iter().zip(&num) {
                worst = worst.max((a - b).abs());
            }
        }
        if let Some(h) = &self.hessian {
            let num = self.numeric_hessian(t, x);
            for (a, b) in h(t, x).iter().zip(&num) {
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }

    /// `φψ` with derivatives by the product rule.
    pub fn product(&self, other: &TestFunction) -> TestFunction {
        assert_eq!(self.dim, other.dim, "dimension mismatch in product");
        let d = self.dim;
        let (a, b) = (self.clone(), other.clone());
        let mut out = TestFunction::new(d, move |t, x| a.value(t, x) * b.value(t, x));
        out.time_homogeneous = self.time_homogeneous && other.time_homogeneous;
        let (a, b) = (self.clone(), other.clone());
        out.time_derivative = Some(Arc::new(move |t, x| {
            a.time_derivative(t, x) * b.value(t, x) + a.value(t, x) * b.time_derivative(t, x)
        }));
        let (a, b) = (self.clone(), other.clone());
        out.gradient = Some(Arc::new(move |t, x| {
            let (fa, fb) = (a.value(t, x), b.value(t, x));
            let (ga, gb) = (a.gradient(t, x), b.gradient(t, x));
            (0..d).map(|i| ga[i] * fb + fa * gb[i]).collect()
        }));
        let (a, b) = (self.clone(), other.clone());
        out.hessian = Some(Arc::new(move |t, x| {
            let (fa, fb) = (a.value(t, x), b.value(t, x));
            let (ga, gb) = (a.gradient(t, x), b.gradient(t, x));
            let (ha, hb) = (a.hessian(t, x), b.hessian(t, x));
            let mut h = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    h[i * d + j] = ha[i * d + j] * fb
                        + ga[i] * gb[j]
                        + ga[j] * gb[i]
                        + fa * hb[i * d + j];
                }
            }
            h
        }));
        out
    }

    /// `αφ + ψ`.
    pub fn linear_combination(&self, alpha: f64, other: &TestFunction) -> TestFunction {
        assert_eq!(self.dim, other.dim, "dimension mismatch in combination");
        let (a, b) = (self.clone(), other.clone());
        let mut out = TestFunction::new(self.dim, move |t, x| alpha * a.value(t, x) + b.value(t, x));
        out.time_homogeneous = self.time_homogeneous && other.time_homogeneous;
        let (a, b) = (self.clone(), other.clone());
        out.time_derivative = Some(Arc::new(move |t, x| {
            alpha * a.time_derivative(t, x) + b.time_derivative(t, x)
        }));
        let (a, b) = (self.clone(), other.clone());
        out.gradient = Some(Arc::new(move |t, x| {
            a.gradient(t, x)
                .iter()
                .zip(b.gradient(t, x))
                .map(|(p, q)| alpha * p + q)
                .collect()
        }));
        let (a, b) = (self.clone(), other.clone());
        out.hessian = Some(Arc::new(move |t, x| {
            a.hessian(t, x)
                .iter()
                .zip(b.hessian(t, x))
                .map(|(p, q)| alpha * p + q)
                .collect()
        }));
        out
    }

    /// `φ + c`.
    pub fn shifted(&self, c: f64) -> TestFunction {
        self.linear_combination(1.0, &TestFunction::constant(self.dim, c))
    }
}
