//! Shared domain types: state grids, reference measures, scale kernels and
//! boundary cases, plus structural validation of a model bundle.
//!
//! Index `0` of every grid is the absorbing left endpoint. It carries no
//! reference mass; states are the indices `1..=M`. Integrals over an open
//! interval `(x_i, x_j)` become sums over `i < k < j`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Dynamics;

/// Spectral parameter `q` (inverse time). Complex throughout the engine.
pub type ComplexRate = Complex64;

/// Returns an error unless both components of `q` are finite.
pub fn check_rate(q: ComplexRate) -> Result<()> {
    if q.re.is_finite() && q.im.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("non-finite rate {q}")))
    }
}

/// How the grid ends on the right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "level", rename_all = "snake_case")]
pub enum RightEnd {
    /// The state space is `(0, inf)`; the grid stops at a truncation level.
    Truncation(f64),
    /// The state space has a genuine right boundary `l = x_M`.
    Boundary(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateGrid {
    points: Vec<f64>,
    right_end: RightEnd,
}

impl StateGrid {
    /// Builds a grid without checking invariants; use [`validate_model`]
    /// or [`StateGrid::new`] for checked construction.
    pub fn from_parts(points: Vec<f64>, right_end: RightEnd) -> Self {
        Self { points, right_end }
    }

    pub fn new(points: Vec<f64>, right_end: RightEnd) -> Result<Self> {
        let grid = Self::from_parts(points, right_end);
        let issues = grid.violations();
        if let Some(v) = issues.first() {
            return Err(Error::InvalidModel(v.message.clone()));
        }
        Ok(grid)
    }

    /// Uniform grid with `intervals` cells on `[0, length]`.
    pub fn uniform(intervals: usize, length: f64, right_end_is_boundary: bool) -> Result<Self> {
        if intervals < 2 || !(length > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "uniform grid needs >= 2 intervals and positive length (got {intervals}, {length})"
            )));
        }
        let h = length / intervals as f64;
        let mut points: Vec<f64> = (0..=intervals).map(|k| k as f64 * h).collect();
        points[intervals] = length;
        let right_end = if right_end_is_boundary {
            RightEnd::Boundary(length)
        } else {
            RightEnd::Truncation(length)
        };
        Self::new(points, right_end)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn right_end(&self) -> RightEnd {
        self.right_end
    }

    /// Index of the last grid point (`M`).
    pub fn last(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    pub fn x(&self, i: usize) -> f64 {
        self.points[i]
    }

    /// Largest spacing between consecutive points.
    pub fn max_spacing(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Index of the grid point nearest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        match self
            .points
            .binary_search_by(|p| p.partial_cmp(&x).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i > self.last() => self.last(),
            Err(i) => {
                if x - self.points[i - 1] <= self.points[i] - x {
                    i - 1
                } else {
                    i
                }
            }
        }
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.points.len() < 2 {
            out.push(Violation::new(
                ViolationKind::GridTooSmall,
                None,
                format!("grid needs M >= 1, got {} points", self.points.len()),
            ));
            return out;
        }
        if self.points[0] != 0.0 {
            out.push(Violation::new(
                ViolationKind::GridOrigin,
                Some((0, 0)),
                format!("x_0 must be 0, got {}", self.points[0]),
            ));
        }
        for (k, w) in self.points.windows(2).enumerate() {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                out.push(Violation::new(
                    ViolationKind::GridOrder,
                    Some((k, k + 1)),
                    format!("grid not strictly increasing at {k}: {} -> {}", w[0], w[1]),
                ));
            }
        }
        let end = match self.right_end {
            RightEnd::Truncation(l) | RightEnd::Boundary(l) => l,
        };
        let last = self.points[self.last()];
        if (end - last).abs() > 1e-12 * last.abs().max(1.0) {
            out.push(Violation::new(
                ViolationKind::GridRightEnd,
                Some((self.last(), self.last())),
                format!("right end level {end} differs from last grid point {last}"),
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    /// Cell masses approximating a density.
    Diffuse,
    /// Exact point masses (chains).
    Atomic,
}

/// Reference measure on the grid. `weights[0]` is always zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMeasure {
    weights: Vec<f64>,
    kind: MeasureKind,
}

impl ReferenceMeasure {
    /// `weights` must have one entry per grid point; entry 0 is forced to zero.
    pub fn new(mut weights: Vec<f64>, kind: MeasureKind) -> Self {
        if let Some(w0) = weights.first_mut() {
            *w0 = 0.0;
        }
        Self { weights, kind }
    }

    /// Trapezoid cell masses of `density` on `grid` (half cells at the ends).
    pub fn trapezoid(grid: &StateGrid, density: &[f64]) -> Result<Self> {
        let pts = grid.points();
        if density.len() != pts.len() {
            return Err(Error::Dimension(format!(
                "density has {} samples for {} grid points",
                density.len(),
                pts.len()
            )));
        }
        let m = grid.last();
        let mut weights = vec![0.0; m + 1];
        for k in 1..=m {
            let left = 0.5 * (pts[k] - pts[k - 1]);
            let right = if k < m { 0.5 * (pts[k + 1] - pts[k]) } else { 0.0 };
            weights[k] = density[k] * (left + right);
        }
        Ok(Self::new(weights, MeasureKind::Diffuse))
    }

    pub fn counting(m: usize) -> Self {
        let mut weights = vec![1.0; m + 1];
        weights[0] = 0.0;
        Self::new(weights, MeasureKind::Atomic)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn last(&self) -> usize {
        self.weights.len().saturating_sub(1)
    }

    /// Mass at index `k`; zero outside `1..=M`.
    #[inline]
    pub fn w(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.weights.get(k).copied().unwrap_or(0.0)
        }
    }
}

/// Square table stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Table<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> Table<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::default(); n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.n..(i + 1) * self.n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelRepr {
    /// `W(x_i, x_j) = s_j - s_i` for `i <= j` (diffusions in natural scale).
    Scale(Vec<f64>),
    /// Explicit values, including anything stored below the diagonal.
    Table(Table<f64>),
}

/// The 0-scale function `W(x_i, x_j)` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleKernel {
    repr: KernelRepr,
    diag_zero: bool,
}

impl ScaleKernel {
    pub fn from_scale(s: Vec<f64>) -> Self {
        Self {
            repr: KernelRepr::Scale(s),
            diag_zero: true,
        }
    }

    /// `diag_zero` records whether the diagonal was pinned to zero on construction.
    pub fn from_table(table: Table<f64>, diag_zero: bool) -> Self {
        Self {
            repr: KernelRepr::Table(table),
            diag_zero,
        }
    }

    pub fn repr(&self) -> &KernelRepr {
        &self.repr
    }

    pub fn diag_zero(&self) -> bool {
        self.diag_zero
    }

    pub fn size(&self) -> usize {
        match &self.repr {
            KernelRepr::Scale(s) => s.len(),
            KernelRepr::Table(t) => t.size(),
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.repr {
            KernelRepr::Scale(s) => {
                if j >= i {
                    s[j] - s[i]
                } else {
                    0.0
                }
            }
            KernelRepr::Table(t) => t.get(i, j),
        }
    }

    pub fn to_table(&self) -> Table<f64> {
        match &self.repr {
            KernelRepr::Table(t) => t.clone(),
            KernelRepr::Scale(_) => Table::from_fn(self.size(), |i, j| self.get(i, j)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCase {
    /// `I = (0, inf)` with an entrance boundary at infinity; the grid is a truncation.
    EntranceInfinity,
    /// `I = (0, l]`, killed only at 0.
    ReflectingRight,
    /// `I = (0, l)`, killed at both ends.
    KilledBoth,
}

impl BoundaryCase {
    /// Whether the right end of the grid belongs to the state space.
    pub fn right_end_in_state_space(self) -> bool {
        !matches!(self, BoundaryCase::KilledBoth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    GridTooSmall,
    GridOrigin,
    GridOrder,
    GridRightEnd,
    NegativeWeight,
    EmptyWindow,
    KernelNotPositive,
    KernelBelowDiagonal,
    KernelDiagonalMass,
    KernelNotFinite,
    BoundaryMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Grid index (or index pair) where the violation was found.
    pub location: Option<(usize, usize)>,
    pub message: String,
}

impl Violation {
    fn new(kind: ViolationKind, location: Option<(usize, usize)>, message: String) -> Self {
        Self {
            kind,
            location,
            message,
        }
    }
}

/// Every violated invariant of a model bundle. Empty means valid.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub fn at(&self, kind: ViolationKind, loc: (usize, usize)) -> bool {
        self.violations
            .iter()
            .any(|v| v.kind == kind && v.location == Some(loc))
    }
}

/// Checks every invariant of `(grid, m, k, bc)`.
///
/// Dimension mismatches are structural and returned as `Err`; invariant
/// violations are collected in the report.
pub fn validate_model(
    grid: &StateGrid,
    m: &ReferenceMeasure,
    k: &ScaleKernel,
    bc: BoundaryCase,
) -> Result<ValidationReport> {
    let n = grid.points().len();
    if m.weights().len() != n || k.size() != n {
        return Err(Error::Dimension(format!(
            "grid has {n} points, measure {}, kernel {}",
            m.weights().len(),
            k.size()
        )));
    }
    let mut out = grid.violations();
    if n < 3 {
        return Ok(ValidationReport { violations: out });
    }
    let last = n - 1;

    for (i, &w) in m.weights().iter().enumerate().skip(1) {
        if !(w >= 0.0) || !w.is_finite() {
            out.push(Violation::new(
                ViolationKind::NegativeWeight,
                Some((i, i)),
                format!("weight w_{i} = {w} is not a finite nonnegative number"),
            ));
        }
    }
    // m(x_i, x_j) > 0 whenever j >= i + 2 is equivalent to positive interior weights.
    for i in 1..last {
        if !(m.w(i) > 0.0) {
            out.push(Violation::new(
                ViolationKind::EmptyWindow,
                Some((i - 1, i + 1)),
                format!("window ({}, {}) has no reference mass", i - 1, i + 1),
            ));
        }
    }

    for i in 0..n {
        for j in 0..n {
            let v = k.get(i, j);
            if !v.is_finite() {
                out.push(Violation::new(
                    ViolationKind::KernelNotFinite,
                    Some((i, j)),
                    format!("W[{i}][{j}] = {v}"),
                ));
            } else if i < j && !(v > 0.0) {
                out.push(Violation::new(
                    ViolationKind::KernelNotPositive,
                    Some((i, j)),
                    format!("W[{i}][{j}] = {v} must be positive"),
                ));
            } else if j < i && v != 0.0 {
                out.push(Violation::new(
                    ViolationKind::KernelBelowDiagonal,
                    Some((i, j)),
                    format!("W[{i}][{j}] = {v} must vanish below the diagonal"),
                ));
            }
        }
    }
    if m.kind() == MeasureKind::Diffuse {
        for i in 1..n {
            if k.get(i, i) * m.w(i) != 0.0 {
                out.push(Violation::new(
                    ViolationKind::KernelDiagonalMass,
                    Some((i, i)),
                    format!("W[{i}][{i}] * w_{i} = {} must vanish", k.get(i, i) * m.w(i)),
                ));
            }
        }
    }

    let consistent = matches!(
        (bc, grid.right_end()),
        (BoundaryCase::EntranceInfinity, RightEnd::Truncation(_))
            | (BoundaryCase::ReflectingRight, RightEnd::Boundary(_))
            | (BoundaryCase::KilledBoth, RightEnd::Boundary(_))
    );
    if !consistent {
        out.push(Violation::new(
            ViolationKind::BoundaryMismatch,
            None,
            format!(
                "boundary-case/right-end mismatch: {bc:?} with {:?}",
                grid.right_end()
            ),
        ));
    }
    Ok(ValidationReport { violations: out })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Closure {
    /// `i < k < j`
    Open,
    /// `i < k <= j`
    ClosedRight,
}

/// `sum f(x_k) w_k` over the window `(i, j)` or `(i, j]`.
pub fn window_sum(m: &ReferenceMeasure, f: &[f64], i: usize, j: usize, closure: Closure) -> Result<f64> {
    let last = m.last();
    if i > j || j > last || f.len() != last + 1 {
        return Err(Error::Index(format!(
            "window ({i}, {j}) on a grid with M = {last} and {} values",
            f.len()
        )));
    }
    let hi = match closure {
        Closure::Open => j,
        Closure::ClosedRight => j + 1,
    };
    Ok(((i + 1)..hi).map(|k| f[k] * m.w(k)).sum())
}

/// A complete model: grid, reference measure, 0-scale kernel, boundary case and
/// the dynamics that generated them (used by the oracles).
#[derive(Debug, Clone)]
pub struct Model {
    pub grid: StateGrid,
    pub measure: ReferenceMeasure,
    pub kernel: ScaleKernel,
    pub boundary: BoundaryCase,
    pub dynamics: Dynamics,
}

impl Model {
    /// Index of the last grid point.
    pub fn last(&self) -> usize {
        self.grid.last()
    }

    /// Exclusive upper index for windows reaching the right end.
    ///
    /// When the right end belongs to the state space the window runs through a
    /// ghost index `M + 1`, so the mass at `x_M` is included.
    pub fn end_limit(&self) -> usize {
        if self.boundary.right_end_in_state_space() {
            self.last() + 1
        } else {
            self.last()
        }
    }

    /// Last transient (non-absorbing) state index.
    pub fn last_transient(&self) -> usize {
        if self.boundary.right_end_in_state_space() {
            self.last()
        } else {
            self.last() - 1
        }
    }

    #[inline]
    pub fn w(&self, k: usize) -> f64 {
        self.measure.w(k)
    }

    #[inline]
    pub fn k(&self, i: usize, j: usize) -> f64 {
        self.kernel.get(i, j)
    }

    pub fn validate(&self) -> Result<ValidationReport> {
        validate_model(&self.grid, &self.measure, &self.kernel, self.boundary)
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate()?;
        match report.violations.first() {
            None => Ok(()),
            Some(v) => Err(Error::InvalidModel(format!(
                "{} ({} violation(s))",
                v.message,
                report.violations.len()
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brownian(n: usize) -> (StateGrid, ReferenceMeasure, ScaleKernel) {
        let grid = StateGrid::uniform(n, 1.0, true).unwrap();
        let m = ReferenceMeasure::trapezoid(&grid, &vec![2.0; n + 1]).unwrap();
        let k = ScaleKernel::from_scale(grid.points().to_vec());
        (grid, m, k)
    }

    #[test]
    fn boundary_mismatch_is_reported() {
        let (grid, m, k) = brownian(16);
        let report = validate_model(&grid, &m, &k, BoundaryCase::EntranceInfinity).unwrap();
        assert!(report.has(ViolationKind::BoundaryMismatch));
        assert_eq!(report.violations.len(), 1);
    }

    #[test]
    fn below_diagonal_entry_is_located() {
        let (grid, m, k) = brownian(8);
        let mut t = k.to_table();
        t.set(2, 1, 0.1);
        let k = ScaleKernel::from_table(t, true);
        let report = validate_model(&grid, &m, &k, BoundaryCase::KilledBoth).unwrap();
        assert!(report.at(ViolationKind::KernelBelowDiagonal, (2, 1)));
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let (grid, _, k) = brownian(8);
        let m = ReferenceMeasure::counting(5);
        assert!(matches!(
            validate_model(&grid, &m, &k, BoundaryCase::KilledBoth),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn diagonal_mass_only_checked_for_diffuse() {
        let (grid, _, k) = brownian(4);
        let mut t = k.to_table();
        t.set(2, 2, 0.5);
        let k = ScaleKernel::from_table(t, false);
        let diffuse = ReferenceMeasure::trapezoid(&grid, &[2.0; 5]).unwrap();
        let r = validate_model(&grid, &diffuse, &k, BoundaryCase::KilledBoth).unwrap();
        assert!(r.at(ViolationKind::KernelDiagonalMass, (2, 2)));
        let atomic = ReferenceMeasure::counting(4);
        let r = validate_model(&grid, &atomic, &k, BoundaryCase::KilledBoth).unwrap();
        assert!(!r.has(ViolationKind::KernelDiagonalMass));
    }

    #[test]
    fn validation_is_repeatable() {
        let (grid, m, k) = brownian(8);
        let a = validate_model(&grid, &m, &k, BoundaryCase::EntranceInfinity).unwrap();
        let b = validate_model(&grid, &m, &k, BoundaryCase::EntranceInfinity).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_interior_weight_breaks_window_positivity() {
        let (grid, _, k) = brownian(6);
        let mut w = vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.5];
        w[3] = 0.0;
        let m = ReferenceMeasure::new(w, MeasureKind::Diffuse);
        let r = validate_model(&grid, &m, &k, BoundaryCase::KilledBoth).unwrap();
        assert!(r.at(ViolationKind::EmptyWindow, (2, 4)));
    }

    #[test]
    fn window_sums() {
        let n = 100;
        let (grid, m, _) = brownian(n);
        let h = 1.0 / n as f64;
        let ones = vec![1.0; n + 1];
        assert_eq!(window_sum(&m, &ones, 5, 5, Closure::Open).unwrap(), 0.0);
        assert_eq!(window_sum(&m, &ones, 5, 6, Closure::Open).unwrap(), 0.0);
        let interior = window_sum(&m, &ones, 0, n, Closure::Open).unwrap();
        assert!((interior - 2.0 * h * (n - 1) as f64).abs() < 1e-12);
        let id: Vec<f64> = grid.points().to_vec();
        let closed = window_sum(&m, &id, 0, n, Closure::ClosedRight).unwrap();
        // trapezoid of 2u on [0, 1] is exact
        assert!((closed - 1.0).abs() < 1e-12);
        assert!(window_sum(&m, &ones, 3, n + 1, Closure::Open).is_err());
        assert!(window_sum(&m, &ones, 4, 3, Closure::Open).is_err());
    }

    #[test]
    fn nearest_grid_point() {
        let grid = StateGrid::uniform(10, 1.0, true).unwrap();
        assert_eq!(grid.nearest(-0.3), 0);
        assert_eq!(grid.nearest(0.34), 3);
        assert_eq!(grid.nearest(0.36), 4);
        assert_eq!(grid.nearest(7.0), 10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn window_sum_is_additive(i in 0usize..20, a in 0usize..20, b in 0usize..20,
                                      vals in proptest::collection::vec(-5.0f64..5.0, 61)) {
                let (_, m, _) = brownian(60);
                let j = i + a;
                let k = j + b;
                let left = window_sum(&m, &vals, i, j, Closure::ClosedRight).unwrap();
                let right = window_sum(&m, &vals, j, k, Closure::ClosedRight).unwrap();
                let whole = window_sum(&m, &vals, i, k, Closure::ClosedRight).unwrap();
                prop_assert!((left + right - whole).abs() < 1e-12);
            }

            #[test]
            fn open_and_closed_differ_by_one_cell(i in 0usize..30, a in 1usize..30,
                                                   vals in proptest::collection::vec(-5.0f64..5.0, 61)) {
                let (_, m, _) = brownian(60);
                let j = i + a;
                let open = window_sum(&m, &vals, i, j, Closure::Open).unwrap();
                let closed = window_sum(&m, &vals, i, j, Closure::ClosedRight).unwrap();
                let cell = (1..=60).map(|k| (vals[k] * m.w(k)).abs()).fold(0.0, f64::max);
                prop_assert!((closed - open).abs() <= cell + 1e-15);
            }
        }
    }
}
