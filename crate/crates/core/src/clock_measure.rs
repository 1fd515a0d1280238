//! Discrete clocks, atomic measures on grid cells and their Lebesgue
//! decomposition.
//!
//! Cell `k` is the half-open interval `(t_k, t_{k+1}]`, so a grid with `N + 1`
//! times has `N` cells. All measures here are purely atomic: a measure is the
//! list of its cell masses, which makes the decomposition `A = A^B + A^{⊥B}`
//! an exact per-cell computation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_float, write_csv};

/// Relative tolerance used when locating a time on the grid.
const GRID_MATCH_TOL: f64 = 1e-9;

/// The deterministic non-decreasing clock `V` sampled on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clock {
    grid: Vec<f64>,
    values: Vec<f64>,
    v_max: f64,
}

impl Clock {
    /// Builds a clock from grid times and clock values. `v_max` defaults to
    /// the terminal value.
    pub fn new(grid: Vec<f64>, values: Vec<f64>, v_max: Option<f64>) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::Domain("clock grid needs at least two times".into()));
        }
        if grid.len() != values.len() {
            return Err(Error::Alignment(format!(
                "clock grid has {} times but {} values",
                grid.len(),
                values.len()
            )));
        }
        if grid[0] != 0.0 {
            return Err(Error::Domain(format!("clock grid must start at 0, got {}", grid[0])));
        }
        if values[0] != 0.0 {
            return Err(Error::Domain(format!("V(0) must be 0, got {}", values[0])));
        }
        if grid.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("clock contains non-finite entries".into()));
        }
        if let Some(k) = grid.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Domain(format!(
                "clock grid not strictly increasing at index {}",
                k + 1
            )));
        }
        if let Some(k) = values.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::Domain(format!("V decreases on cell {k}")));
        }
        let terminal = *values.last().unwrap();
        let v_max = v_max.unwrap_or(terminal);
        if terminal > v_max {
            return Err(Error::Domain(format!(
                "V(T) = {terminal} exceeds declared bound {v_max}"
            )));
        }
        Ok(Self { grid, values, v_max })
    }

    /// `V(t) = t` on a uniform grid of `steps` cells over `[0, horizon]`.
    pub fn identity(horizon: f64, steps: usize) -> Result<Self> {
        let grid = uniform_grid(horizon, steps)?;
        Self::new(grid.clone(), grid, None)
    }

    /// Uniform time grid with `V` linearly interpolated between `knots`
    /// `(t, V(t))`. The knots must start at `(0, 0)` and end at the horizon.
    pub fn piecewise_linear(knots: &[(f64, f64)], steps: usize) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Domain("piecewise-linear clock needs two knots".into()));
        }
        if let Some(k) = knots.windows(2).position(|w| w[1].1 < w[0].1) {
            return Err(Error::Domain(format!("V decreases between knots {k} and {}", k + 1)));
        }
        let horizon = knots.last().unwrap().0;
        let grid = uniform_grid(horizon, steps)?;
        let mut running: f64 = 0.0;
        let values = grid
            .iter()
            .map(|&t| {
                let j = knots
                    .windows(2)
                    .position(|w| t <= w[1].0)
                    .unwrap_or(knots.len() - 2);
                let (t0, v0) = knots[j];
                let (t1, v1) = knots[j + 1];
                let v = if t1 <= t0 {
                    v1
                } else {
                    let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
                    if w == 1.0 {
                        v1
                    } else {
                        v0 + (v1 - v0) * w
                    }
                };
                // absorb rounding so a monotone table stays monotone
                running = running.max(v);
                running
            })
            .collect();
        Self::new(grid, values, None)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn n_cells(&self) -> usize {
        self.grid.len() - 1
    }

    /// `ΔV_k = V(t_{k+1}) − V(t_k)` for every cell.
    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn dv(&self, cell: usize) -> f64 {
        self.values[cell + 1] - self.values[cell]
    }

    pub fn dt(&self, cell: usize) -> f64 {
        self.grid[cell + 1] - self.grid[cell]
    }

    /// Index of a grid time, or an alignment error when `t` is off grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let tol = GRID_MATCH_TOL * self.horizon().max(1.0);
        self.grid
            .iter()
            .position(|&g| (g - t).abs() <= tol)
            .ok_or_else(|| Error::Alignment(format!("time {t} is not a grid point")))
    }

    /// Cell containing `t`: the `k` with `t_k <= t < t_{k+1}`, the last cell for `t = T`.
    pub fn cell_containing(&self, t: f64) -> usize {
        let n = self.n_cells();
        match self.grid.iter().rposition(|&g| g <= t) {
            Some(k) => k.min(n - 1),
            None => 0,
        }
    }

    /// `dt/dV` on a cell; 0 on flat cells, where time drift is singular to `dV`.
    pub fn time_rate(&self, cell: usize) -> f64 {
        let dv = self.dv(cell);
        if dv > 0.0 {
            self.dt(cell) / dv
        } else {
            0.0
        }
    }

    /// Singular-cell indicator of `dV` against itself: `K_k = 1{ΔV_k = 0}`.
    pub fn singular_indicator(&self) -> Vec<f64> {
        self.increments()
            .iter()
            .map(|&dv| if dv == 0.0 { 1.0 } else { 0.0 })
            .collect()
    }

    /// The clock increments as a nonnegative measure.
    pub fn as_measure(&self) -> DiscreteMeasurePath {
        DiscreteMeasurePath {
            pos: self.increments(),
            neg: vec![0.0; self.n_cells()],
        }
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .grid
            .iter()
            .zip(&self.values)
            .map(|(&t, &v)| vec![fmt_float(t), fmt_float(v)])
            .collect();
        write_csv(path, "t,V", &rows)
    }

    /// Reads a `t,V` table.
    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        expect_header(reader.headers()?, &["t", "V"])?;
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for record in reader.records() {
            let record = record?;
            grid.push(parse_field(&record, 0)?);
            values.push(parse_field(&record, 1)?);
        }
        Self::new(grid, values, None)
    }
}

fn uniform_grid(horizon: f64, steps: usize) -> Result<Vec<f64>> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
    }
    if steps == 0 {
        return Err(Error::Domain("clock needs at least one step".into()));
    }
    let mut grid: Vec<f64> = (0..=steps)
        .map(|k| horizon * k as f64 / steps as f64)
        .collect();
    grid[steps] = horizon;
    Ok(grid)
}

/// A signed atomic measure in minimal Jordan form: per cell at most one of
/// `pos`, `neg` is nonzero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasurePath {
    pos: Vec<f64>,
    neg: Vec<f64>,
}

impl DiscreteMeasurePath {
    /// Nonnegative measure from cell masses.
    pub fn nonnegative(masses: Vec<f64>) -> Result<Self> {
        if let Some(k) = masses.iter().position(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::Domain(format!(
                "mass {} at cell {k} is not a finite nonnegative number",
                masses[k]
            )));
        }
        let neg = vec![0.0; masses.len()];
        Ok(Self { pos: masses, neg })
    }

    /// Signed measure from net cell masses.
    pub fn signed(net: &[f64]) -> Result<Self> {
        if let Some(k) = net.iter().position(|m| !m.is_finite()) {
            return Err(Error::Domain(format!("mass at cell {k} is not finite")));
        }
        Ok(Self {
            pos: net.iter().map(|&m| m.max(0.0)).collect(),
            neg: net.iter().map(|&m| (-m).max(0.0)).collect(),
        })
    }

    /// Builds from possibly overlapping positive and negative parts, cancelling
    /// them cell by cell.
    pub fn from_parts(pos: &[f64], neg: &[f64]) -> Result<Self> {
        if pos.len() != neg.len() {
            return Err(Error::Alignment(format!(
                "positive part has {} cells, negative part {}",
                pos.len(),
                neg.len()
            )));
        }
        for (k, (&p, &n)) in pos.iter().zip(neg).enumerate() {
            if !(p.is_finite() && n.is_finite() && p >= 0.0 && n >= 0.0) {
                return Err(Error::Domain(format!(
                    "cell {k}: parts must be finite and nonnegative"
                )));
            }
        }
        let net: Vec<f64> = pos.iter().zip(neg).map(|(p, n)| p - n).collect();
        Self::signed(&net)
    }

    pub fn zeros(n_cells: usize) -> Self {
        Self {
            pos: vec![0.0; n_cells],
            neg: vec![0.0; n_cells],
        }
    }

    pub fn n_cells(&self) -> usize {
        self.pos.len()
    }

    pub fn pos(&self) -> &[f64] {
        &self.pos
    }

    pub fn neg(&self) -> &[f64] {
        &self.neg
    }

    /// Net mass `pos_k − neg_k` of one cell.
    pub fn mass(&self, cell: usize) -> f64 {
        self.pos[cell] - self.neg[cell]
    }

    pub fn net(&self) -> Vec<f64> {
        (0..self.n_cells()).map(|k| self.mass(k)).collect()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.neg.iter().all(|&n| n == 0.0)
    }

    /// Net total mass.
    pub fn total(&self) -> f64 {
        self.net().iter().sum()
    }

    /// Total variation `Σ (pos_k + neg_k)`.
    pub fn variation(&self) -> f64 {
        self.pos.iter().zip(&self.neg).map(|(p, n)| p + n).sum()
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_aligned(self, other)?;
        let net: Vec<f64> = (0..self.n_cells())
            .map(|k| self.mass(k) + other.mass(k))
            .collect();
        Self::signed(&net)
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let rows: Vec<Vec<String>> = (0..self.n_cells())
            .map(|k| vec![k.to_string(), fmt_float(self.pos[k]), fmt_float(self.neg[k])])
            .collect();
        write_csv(path, "cell_index,pos_mass,neg_mass", &rows)
    }

    /// Reads a `cell_index,pos_mass,neg_mass` table. Cell indices must run
    /// `0, 1, …` in order.
    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        expect_header(reader.headers()?, &["cell_index", "pos_mass", "neg_mass"])?;
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (expected, record) in reader.records().enumerate() {
            let record = record?;
            let index: usize = record
                .get(0)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Domain(format!("bad cell_index in row {expected}")))?;
            if index != expected {
                return Err(Error::Alignment(format!(
                    "cell_index {index} found where {expected} was expected"
                )));
            }
            pos.push(parse_field(&record, 1)?);
            neg.push(parse_field(&record, 2)?);
        }
        Self::from_parts(&pos, &neg)
    }
}

fn check_aligned(a: &DiscreteMeasurePath, b: &DiscreteMeasurePath) -> Result<()> {
    if a.n_cells() != b.n_cells() {
        return Err(Error::Alignment(format!(
            "measures live on {} and {} cells",
            a.n_cells(),
            b.n_cells()
        )));
    }
    Ok(())
}

/// Result of decomposing `A` against `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// `dA/dB` per cell, 0 where `ΔB = 0`.
    pub density: Vec<f64>,
    /// `A^{⊥B}`, supported on cells with `ΔB = 0`.
    pub singular: DiscreteMeasurePath,
    /// `K_k = 1` exactly on cells where `ΔB_k = 0`.
    pub indicator: Vec<f64>,
}

impl Decomposition {
    /// `density_k·ΔB_k + singular_k` per cell.
    pub fn reconstruct(&self, b: &DiscreteMeasurePath) -> Vec<f64> {
        (0..self.density.len())
            .map(|k| self.density[k] * b.mass(k) + self.singular.mass(k))
            .collect()
    }

    /// `A^B` as a signed measure.
    pub fn absolutely_continuous(&self, b: &DiscreteMeasurePath) -> DiscreteMeasurePath {
        let net: Vec<f64> = (0..self.density.len())
            .map(|k| self.density[k] * b.mass(k))
            .collect();
        DiscreteMeasurePath::signed(&net).expect("finite by construction")
    }
}

/// Splits `A` into a part with a density against `B` and a part singular to `B`.
pub fn lebesgue_decompose(
    a: &DiscreteMeasurePath,
    b: &DiscreteMeasurePath,
) -> Result<Decomposition> {
    check_aligned(a, b)?;
    if !b.is_nonnegative() {
        return Err(Error::Domain("reference measure B has negative mass".into()));
    }
    let n = a.n_cells();
    let mut density = vec![0.0; n];
    let mut singular = vec![0.0; n];
    let mut indicator = vec![0.0; n];
    for k in 0..n {
        let db = b.mass(k);
        if db > 0.0 {
            density[k] = a.mass(k) / db;
        } else {
            singular[k] = a.mass(k);
            indicator[k] = 1.0;
        }
    }
    Ok(Decomposition {
        density,
        singular: DiscreteMeasurePath::signed(&singular)?,
        indicator,
    })
}

/// `Σ φ_k (dA/dB)_k ΔB_k`. For nonnegative `A` the result is checked against
/// `Σ φ_k a_k`, which it can never exceed.
pub fn radon_nikodym_integral(
    phi: &[f64],
    a: &DiscreteMeasurePath,
    b: &DiscreteMeasurePath,
) -> Result<f64> {
    if phi.len() != a.n_cells() {
        return Err(Error::Alignment(format!(
            "integrand has {} cells, measure {}",
            phi.len(),
            a.n_cells()
        )));
    }
    if let Some(k) = phi.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Domain(format!("integrand negative or non-finite at cell {k}")));
    }
    let dec = lebesgue_decompose(a, b)?;
    let mut integral = 0.0;
    let mut full = 0.0;
    for k in 0..phi.len() {
        integral += phi[k] * dec.density[k] * b.mass(k);
        full += phi[k] * a.mass(k);
    }
    if a.is_nonnegative() && integral > full + 1e-12 * full.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::Numeric(format!(
            "domination violated: {integral} > {full}"
        )));
    }
    Ok(integral)
}

/// A per-path, per-cell array of reals (martingale increments, bracket
/// densities, …), stored path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CellArray {
    n_paths: usize,
    n_cells: usize,
    data: Vec<f64>,
}

impl CellArray {
    pub fn zeros(n_paths: usize, n_cells: usize) -> Self {
        Self {
            n_paths,
            n_cells,
            data: vec![0.0; n_paths * n_cells],
        }
    }

    pub fn from_vec(n_paths: usize, n_cells: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_paths * n_cells {
            return Err(Error::Alignment(format!(
                "{} values cannot fill {n_paths} paths x {n_cells} cells",
                data.len()
            )));
        }
        Ok(Self {
            n_paths,
            n_cells,
            data,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    #[inline]
    pub fn get(&self, path: usize, cell: usize) -> f64 {
        self.data[path * self.n_cells + cell]
    }

    #[inline]
    pub fn set(&mut self, path: usize, cell: usize, value: f64) {
        self.data[path * self.n_cells + cell] = value;
    }

    pub fn path(&self, path: usize) -> &[f64] {
        &self.data[path * self.n_cells..(path + 1) * self.n_cells]
    }

    pub fn path_mut(&mut self, path: usize) -> &mut [f64] {
        &mut self.data[path * self.n_cells..(path + 1) * self.n_cells]
    }

    /// All paths' values on one cell.
    pub fn column(&self, cell: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.get(p, cell)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_paths == other.n_paths && self.n_cells == other.n_cells
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n_paths: self.n_paths,
            n_cells: self.n_cells,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::Alignment("cell arrays differ in shape".into()));
        }
        Ok(Self {
            n_paths: self.n_paths,
            n_cells: self.n_cells,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Per-path sum over cells.
    pub fn path_sums(&self) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.path(p).iter().sum()).collect()
    }
}

/// Splits increments into the part charged by `dV` (`K < 1`) and the part
/// singular to it (`K = 1`).
pub fn martingale_split(dm: &CellArray, indicator: &[f64]) -> Result<(CellArray, CellArray)> {
    if indicator.len() != dm.n_cells() {
        return Err(Error::Alignment(format!(
            "indicator has {} cells, increments {}",
            indicator.len(),
            dm.n_cells()
        )));
    }
    if let Some(k) = indicator.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Domain(format!(
            "indicator {} at cell {k} outside [0, 1]",
            indicator[k]
        )));
    }
    let mut regular = dm.clone();
    let mut singular = CellArray::zeros(dm.n_paths(), dm.n_cells());
    for p in 0..dm.n_paths() {
        for (k, &kk) in indicator.iter().enumerate() {
            if kk == 1.0 {
                singular.set(p, k, dm.get(p, k));
                regular.set(p, k, 0.0);
            }
        }
    }
    Ok((regular, singular))
}

fn expect_header(headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Domain(format!(
            "expected header `{}`, found `{}`",
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

fn parse_field(record: &csv::StringRecord, i: usize) -> Result<f64> {
    record
        .get(i)
        .and_then(|s| s.trim().parse::<f64>().ok())
        .ok_or_else(|| Error::Domain(format!("unparsable field {i} in `{record:?}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn measure(v: &[f64]) -> DiscreteMeasurePath {
        DiscreteMeasurePath::signed(v).unwrap()
    }

    #[test]
    fn clock_rejects_bad_inputs() {
        assert!(Clock::new(vec![0.0, 1.0], vec![0.0, 1.0], None).is_ok());
        assert!(matches!(
            Clock::new(vec![0.0, 1.0, 1.0], vec![0.0, 1.0, 2.0], None),
            Err(Error::Domain(_))
        ));
        assert!(Clock::new(vec![0.0, 1.0], vec![0.0, -1.0], None).is_err());
        assert!(Clock::new(vec![0.0, 1.0], vec![0.5, 1.0], None).is_err());
        assert!(Clock::new(vec![0.0, 1.0], vec![0.0, 2.0], Some(1.5)).is_err());
    }

    #[test]
    fn piecewise_linear_clock_interpolates() {
        let c = Clock::piecewise_linear(&[(0.0, 0.0), (0.5, 0.0), (1.0, 1.0)], 4).unwrap();
        assert_eq!(c.values(), &[0.0, 0.0, 0.0, 0.5, 1.0]);
        assert_eq!(c.singular_indicator(), vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(c.time_rate(0), 0.0);
        assert!((c.time_rate(3) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grid_lookup() {
        let c = Clock::identity(1.0, 10).unwrap();
        assert_eq!(c.index_of(0.3).unwrap(), 3);
        assert!(matches!(c.index_of(0.35), Err(Error::Alignment(_))));
        assert_eq!(c.cell_containing(0.35), 3);
        assert_eq!(c.cell_containing(1.0), 9);
    }

    #[test]
    fn jordan_form_cancels() {
        let m = DiscreteMeasurePath::from_parts(&[1.0, 0.2], &[0.25, 0.5]).unwrap();
        assert_eq!(m.pos(), &[0.75, 0.0]);
        assert!((m.neg()[1] - 0.3).abs() < 1e-15);
        assert!((m.variation() - 1.05).abs() < 1e-15);
    }

    #[test]
    fn decompose_identity_case() {
        let b = measure(&[0.1, 0.0, 2.0, 0.3]);
        let d = lebesgue_decompose(&b, &b).unwrap();
        assert_eq!(d.density, vec![1.0, 0.0, 1.0, 1.0]);
        assert_eq!(d.singular.net(), vec![0.0; 4]);
    }

    #[test]
    fn decompose_against_zero_is_singular() {
        let a = measure(&[0.5, -0.2, 1.0]);
        let d = lebesgue_decompose(&a, &DiscreteMeasurePath::zeros(3)).unwrap();
        assert_eq!(d.density, vec![0.0; 3]);
        assert_eq!(d.singular, a);
        assert_eq!(d.indicator, vec![1.0; 3]);
    }

    #[test]
    fn decompose_two_cell_example() {
        let a = measure(&[0.5, 0.3]);
        let b = measure(&[0.25, 0.0]);
        let d = lebesgue_decompose(&a, &b).unwrap();
        assert_eq!(d.density, vec![2.0, 0.0]);
        assert_eq!(d.singular.net(), vec![0.0, 0.3]);
        assert_eq!(d.indicator, vec![0.0, 1.0]);
    }

    #[test]
    fn decompose_errors() {
        let a = measure(&[0.5, 0.3]);
        assert!(matches!(
            lebesgue_decompose(&a, &measure(&[1.0])),
            Err(Error::Alignment(_))
        ));
        assert!(matches!(
            lebesgue_decompose(&a, &measure(&[1.0, -1.0])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn radon_nikodym_integral_examples() {
        let a = measure(&[0.5, 0.3, 0.2]);
        let b = measure(&[1.0, 1.0, 1.0]);
        let one = [1.0; 3];
        assert!((radon_nikodym_integral(&one, &a, &b).unwrap() - 1.0).abs() < 1e-15);
        let b2 = measure(&[1.0, 0.0, 1.0]);
        assert!((radon_nikodym_integral(&one, &a, &b2).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(radon_nikodym_integral(&[0.0; 3], &a, &b2).unwrap(), 0.0);
        assert!(matches!(
            radon_nikodym_integral(&[1.0, -1.0, 1.0], &a, &b),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn split_examples() {
        let dm = CellArray::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let (r, s) = martingale_split(&dm, &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(r.as_slice(), &[1.0, 0.0, 3.0]);
        assert_eq!(s.as_slice(), &[0.0, 2.0, 0.0]);
        let (r, s) = martingale_split(&dm, &[0.0; 3]).unwrap();
        assert_eq!((r.as_slice(), s.as_slice()), (dm.as_slice(), &[0.0; 3][..]));
        let (r, s) = martingale_split(&dm, &[1.0; 3]).unwrap();
        assert_eq!((r.as_slice(), s.as_slice()), (&[0.0; 3][..], dm.as_slice()));
        assert!(martingale_split(&dm, &[0.0, 1.5, 0.0]).is_err());
        assert!(martingale_split(&dm, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn csv_round_trip_and_alignment() {
        let dir = tempfile::tempdir().unwrap();
        let m = measure(&[0.5, -0.25, 0.0]);
        let p = dir.path().join("m.csv");
        m.write_csv(&p).unwrap();
        assert_eq!(DiscreteMeasurePath::read_csv(&p).unwrap(), m);

        std::fs::write(&p, "cell_index,pos_mass,neg_mass\n0,1,0\n2,1,0\n").unwrap();
        assert!(matches!(
            DiscreteMeasurePath::read_csv(&p),
            Err(Error::Alignment(_))
        ));

        let c = Clock::piecewise_linear(&[(0.0, 0.0), (1.0, 2.0)], 5).unwrap();
        let q = dir.path().join("clock.csv");
        c.write_csv(&q).unwrap();
        assert_eq!(Clock::read_csv(&q).unwrap(), c);
    }

    fn random_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..64).prop_flat_map(|n| {
            (
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..5.0], n),
            )
        })
    }

    proptest! {
        #[test]
        fn reconstruction_and_singularity((a, b) in random_pair()) {
            let a = measure(&a);
            let b = measure(&b);
            let d = lebesgue_decompose(&a, &b).unwrap();
            let rec = d.reconstruct(&b);
            for k in 0..a.n_cells() {
                let scale = a.mass(k).abs().max(f64::MIN_POSITIVE);
                prop_assert!((rec[k] - a.mass(k)).abs() <= 1e-12 * scale);
                if d.singular.mass(k) != 0.0 {
                    prop_assert_eq!(b.mass(k), 0.0);
                }
                prop_assert_eq!(d.indicator[k] == 1.0, b.mass(k) == 0.0);
            }
        }

        #[test]
        fn decomposition_is_additive((a1, b) in random_pair(), seed in 0u64..1000) {
            let n = a1.len();
            let a2: Vec<f64> = (0..n).map(|k| ((k as u64 * 31 + seed) % 17) as f64 - 8.0).collect();
            let (a1, a2, b) = (measure(&a1), measure(&a2), measure(&b));
            let d1 = lebesgue_decompose(&a1, &b).unwrap();
            let d2 = lebesgue_decompose(&a2, &b).unwrap();
            let d12 = lebesgue_decompose(&a1.add(&a2).unwrap(), &b).unwrap();
            for k in 0..n {
                let sum = d1.density[k] + d2.density[k];
                prop_assert!((d12.density[k] - sum).abs() <= 1e-12 * (d1.density[k].abs() + d2.density[k].abs()).max(1e-300));
                let s = d1.singular.mass(k) + d2.singular.mass(k);
                prop_assert!((d12.singular.mass(k) - s).abs() <= 1e-12 * s.abs().max(1e-300) + 1e-15);
            }
            // decomposing twice gives the same answer
            prop_assert_eq!(lebesgue_decompose(&a1, &b).unwrap(), d1);
        }

        #[test]
        fn domination_inequality(
            (a, b) in random_pair(),
            phi_seed in prop::collection::vec(0.0f64..3.0, 64),
        ) {
            let a: Vec<f64> = a.iter().map(|v| v.abs()).collect();
            let phi = &phi_seed[..a.len()];
            let am = measure(&a);
            let bm = measure(&b);
            let lhs = radon_nikodym_integral(phi, &am, &bm).unwrap();
            let rhs: f64 = phi.iter().zip(&a).map(|(p, m)| p * m).sum();
            prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-300);
        }
    }
}
