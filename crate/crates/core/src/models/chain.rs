//! Downward skip-free continuous-time chains on `{0, 1, ..., N}`.
//!
//! The reference measure is counting measure and the kernel is the
//! occupation density `W(a, u)` of state `u` before the chain first goes
//! below `a + 1`. As a function of its first argument, `W(., u)` solves
//! `Q W(., u) = delta_u` on `(a, u]` with `W(y, u) = 0` for `y >= u`, which
//! gives a downward recursion in the increments `d_y = W(y - 1, u) - W(y, u)`:
//!
//! ```text
//! d_u = 1 / Q(u, u-1),    Q(y, y-1) d_y = sum_{z > y} Q(y, z) (W(y, u) - W(z, u))
//! ```
//!
//! Every term is a sum of positive increments, so there is no cancellation.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{
    BoundaryCase, ComplexRate, Model, ReferenceMeasure, RightEnd, ScaleKernel, StateGrid, Table,
};
use crate::models::Dynamics;

/// Transition rates `(from, to, rate)` on states `1..=N`, with `0` absorbing.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    pub states: usize,
    pub rates: Vec<(usize, usize, f64)>,
    pub boundary: BoundaryCase,
}

impl ChainSpec {
    /// Birth-death chain with `birth(n)` for `n -> n + 1` and `death(n)` for `n -> n - 1`.
    ///
    /// Births out of the top state are dropped unless the top state is the
    /// killing boundary of a `KilledBoth` chain, where they are meaningless anyway.
    pub fn birth_death(
        states: usize,
        birth: impl Fn(usize) -> f64,
        death: impl Fn(usize) -> f64,
        boundary: BoundaryCase,
    ) -> Self {
        let mut rates = Vec::new();
        for n in 1..=states {
            rates.push((n, n - 1, death(n)));
            if n < states {
                let b = birth(n);
                if b != 0.0 {
                    rates.push((n, n + 1, b));
                }
            }
        }
        Self {
            states,
            rates,
            boundary,
        }
    }

    /// The chain with `1 -> 0`, `1 -> 2`, `2 -> 1` at the given rates, reflecting at 2.
    pub fn two_state(a: f64, b: f64, c: f64) -> Self {
        Self {
            states: 2,
            rates: vec![(1, 0, a), (1, 2, b), (2, 1, c)],
            boundary: BoundaryCase::ReflectingRight,
        }
    }
}

/// Validated rates in adjacency form.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRates {
    states: usize,
    boundary: BoundaryCase,
    /// `down[y] = Q(y, y - 1)`; `down[0] = 0`.
    down: Vec<f64>,
    /// `up[y]` lists `(z, Q(y, z))` for `z > y`, sorted by `z`.
    up: Vec<Vec<(usize, f64)>>,
}

impl ChainRates {
    pub fn new(spec: &ChainSpec) -> Result<Self> {
        let n = spec.states;
        if n < 1 {
            return Err(Error::InvalidModel("a chain needs at least one state".into()));
        }
        let mut down = vec![0.0; n + 1];
        let mut up: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n + 1];
        for &(i, j, r) in &spec.rates {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(Error::InvalidModel(format!("rate {i} -> {j} = {r} must be finite and nonnegative")));
            }
            if i == 0 || i > n || j > n || i == j {
                return Err(Error::InvalidModel(format!("transition {i} -> {j} outside states 1..={n}")));
            }
            if j + 2 <= i {
                return Err(Error::InvalidModel(format!(
                    "transition {i} -> {j} skips downward; chains must be downward skip-free"
                )));
            }
            if r == 0.0 {
                continue;
            }
            if j + 1 == i {
                down[i] += r;
            } else {
                up[i].push((j, r));
            }
        }
        match spec.boundary {
            // The top state is the killing boundary; its down rate only fixes the
            // normalization of W(., N) and its other rates are never used.
            BoundaryCase::KilledBoth => {
                if n < 2 {
                    return Err(Error::InvalidModel("a killed-at-both-ends chain needs N >= 2".into()));
                }
                if down[n] == 0.0 {
                    down[n] = 1.0;
                }
                up[n].clear();
            }
            _ => up[n].clear(),
        }
        for y in 1..=n {
            if !(down[y] > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "state {y} has no downward rate; the chain cannot reach 0 from above {}",
                    y - 1
                )));
            }
            up[y].sort_by_key(|&(z, _)| z);
            up[y].dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
        }
        Ok(Self {
            states: n,
            boundary: spec.boundary,
            down,
            up,
        })
    }

    /// Number of nonzero states `N`.
    pub fn states(&self) -> usize {
        self.states
    }

    pub fn boundary(&self) -> BoundaryCase {
        self.boundary
    }

    pub fn down(&self, y: usize) -> f64 {
        self.down[y]
    }

    pub fn up(&self, y: usize) -> &[(usize, f64)] {
        &self.up[y]
    }

    /// Total jump rate out of `y`.
    pub fn total(&self, y: usize) -> f64 {
        self.down[y] + self.up[y].iter().map(|&(_, r)| r).sum::<f64>()
    }

    /// Last transient state.
    pub fn last_transient(&self) -> usize {
        if self.boundary == BoundaryCase::KilledBoth {
            self.states - 1
        } else {
            self.states
        }
    }
}

/// Occupation kernel by the downward increment recursion, `O(N^2 * bandwidth)`.
fn occupation_kernel(rates: &ChainRates) -> Table<f64> {
    let n = rates.states;
    let mut table = Table::zeros(n + 1);
    // tail[k] = sum_{k <= l <= u} d_l = W(k - 1, u)
    let mut tail = vec![0.0; n + 2];
    for u in 1..=n {
        tail[u + 1] = 0.0;
        tail[u] = 1.0 / rates.down[u];
        for y in (1..u).rev() {
            let mut acc = 0.0;
            for &(z, r) in &rates.up[y] {
                acc += r * (tail[y + 1] - tail[z.min(u) + 1]);
            }
            tail[y] = tail[y + 1] + acc / rates.down[y];
        }
        for a in 0..u {
            table.set(a, u, tail[a + 1]);
        }
    }
    table
}

pub fn build_chain(spec: &ChainSpec) -> Result<Model> {
    let rates = ChainRates::new(spec)?;
    let n = rates.states;
    let points: Vec<f64> = (0..=n).map(|i| i as f64).collect();
    let right_end = match spec.boundary {
        BoundaryCase::EntranceInfinity => RightEnd::Truncation(n as f64),
        _ => RightEnd::Boundary(n as f64),
    };
    let table = occupation_kernel(&rates);
    if let Some((a, u)) = (0..=n)
        .flat_map(|a| ((a + 1)..=n).map(move |u| (a, u)))
        .find(|&(a, u)| !table.get(a, u).is_finite())
    {
        return Err(Error::Singular(format!("occupation density W({a}, {u}) is not finite")));
    }
    let model = Model {
        grid: StateGrid::from_parts(points, right_end),
        measure: ReferenceMeasure::counting(n),
        kernel: ScaleKernel::from_table(table, true),
        boundary: spec.boundary,
        dynamics: Dynamics::Chain(rates),
    };
    model.ensure_valid()?;
    Ok(model)
}

/// Killed resolvent `(q - Q_w)^{-1}` on the window of states `a+1 ..= top`
/// (jumps above `top` leave the window) and the down-exit transform `h`.
fn window_solve(rates: &ChainRates, q: ComplexRate, a: usize, top: usize) -> Result<(DMatrix<Complex64>, Vec<Complex64>)> {
    let dim = top - a;
    let mut m = DMatrix::<Complex64>::zeros(dim, dim);
    for y in (a + 1)..=top {
        let r = y - a - 1;
        m[(r, r)] = q + rates.total(y);
        if y > a + 1 {
            m[(r, r - 1)] -= rates.down[y];
        }
        for &(z, rate) in &rates.up[y] {
            if z <= top {
                m[(r, z - a - 1)] -= rate;
            }
        }
    }
    let inv = m
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("window ({a}, {top}] is singular at q = {q}")))?;
    let first = rates.down[a + 1];
    let h = (0..dim).map(|r| inv[(r, 0)] * first).collect();
    Ok((inv, h))
}

/// `W^(q)(a, u) = G^(q)(u, u) / h^(q)(u)` on the window `(a, top]`, for all `u` in it.
///
/// `top >= u` may be chosen freely; the ratio does not depend on it.
pub fn windowed_scale(rates: &ChainRates, q: ComplexRate, a: usize, top: usize) -> Result<Vec<Complex64>> {
    if a >= top || top > rates.states {
        return Err(Error::Index(format!("window ({a}, {top}] with N = {}", rates.states)));
    }
    let (inv, h) = window_solve(rates, q, a, top)?;
    (0..(top - a))
        .map(|r| {
            if h[r].norm() < 1e-300 {
                Err(Error::Singular(format!("down-exit transform vanishes at state {}", a + 1 + r)))
            } else {
                Ok(inv[(r, r)] / h[r])
            }
        })
        .collect()
}

/// `W^(q)` of a chain from windowed killed-resolvent solves, one window per left end.
///
/// Costs `O(N^4)`; intended as an independent check on small chains.
pub fn chain_scale_direct(spec: &ChainSpec, q: ComplexRate) -> Result<Table<Complex64>> {
    crate::model::check_rate(q)?;
    let rates = ChainRates::new(spec)?;
    let n = rates.states;
    let mut table = Table::zeros(n + 1);
    for a in 0..n {
        let row = windowed_scale(&rates, q, a, n)?;
        for (r, v) in row.into_iter().enumerate() {
            table.set(a, a + 1 + r, v);
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_state_kernel() {
        let m = build_chain(&ChainSpec::two_state(1.0, 1.0, 1.0)).unwrap();
        assert!((m.k(0, 1) - 1.0).abs() < 1e-15);
        // started at 2, the chain returns to 2 before reaching 0 with probability 1/2
        assert!((m.k(0, 2) - 2.0).abs() < 1e-15);
        assert!((m.k(1, 2) - 1.0).abs() < 1e-15);
        assert_eq!(m.k(1, 1), 0.0);
    }

    #[test]
    fn pure_death() {
        let spec = ChainSpec {
            states: 1,
            rates: vec![(1, 0, 2.0)],
            boundary: BoundaryCase::ReflectingRight,
        };
        let rates = ChainRates::new(&spec).unwrap();
        let table = occupation_kernel(&rates);
        assert_eq!(table.get(0, 1), 0.5);
    }

    #[test]
    fn birth_death_validates() {
        let spec = ChainSpec::birth_death(50, |_| 1.0, |n| (n * n) as f64, BoundaryCase::EntranceInfinity);
        let m = build_chain(&spec).unwrap();
        assert!(m.validate().unwrap().is_valid());
    }

    #[test]
    fn rejects_skips_and_bad_rates() {
        let mut spec = ChainSpec::two_state(1.0, 1.0, 1.0);
        spec.states = 3;
        spec.rates.push((3, 1, 1.0));
        assert!(matches!(build_chain(&spec), Err(Error::InvalidModel(_))));
        let mut spec = ChainSpec::two_state(1.0, 1.0, 1.0);
        spec.rates[0].2 = -1.0;
        assert!(build_chain(&spec).is_err());
        let spec = ChainSpec::two_state(0.0, 1.0, 1.0);
        assert!(build_chain(&spec).is_err());
    }

    #[test]
    fn direct_matches_recursion_at_zero() {
        let spec = ChainSpec {
            states: 6,
            rates: vec![
                (1, 0, 1.5),
                (1, 3, 0.4),
                (2, 1, 2.0),
                (2, 5, 0.3),
                (3, 2, 1.0),
                (3, 4, 0.7),
                (4, 3, 2.5),
                (4, 6, 0.2),
                (5, 4, 1.1),
                (6, 5, 3.0),
                (5, 6, 0.5),
            ],
            boundary: BoundaryCase::ReflectingRight,
        };
        let m = build_chain(&spec).unwrap();
        let d = chain_scale_direct(&spec, Complex64::new(0.0, 0.0)).unwrap();
        for a in 0..=6 {
            for u in (a + 1)..=6 {
                assert!((d.get(a, u).re - m.k(a, u)).abs() < 1e-12 * m.k(a, u));
            }
        }
    }

    #[test]
    fn window_independence() {
        let spec = ChainSpec::birth_death(12, |n| 1.0 + 0.1 * n as f64, |n| n as f64, BoundaryCase::ReflectingRight);
        let rates = ChainRates::new(&spec).unwrap();
        let q = Complex64::new(-0.3, 0.8);
        let wide = windowed_scale(&rates, q, 2, 12).unwrap();
        for top in 5..12 {
            let narrow = windowed_scale(&rates, q, 2, top).unwrap();
            for (r, v) in narrow.iter().enumerate() {
                assert!((v - wide[r]).norm() < 1e-10 * (1.0 + wide[r].norm()));
            }
        }
    }
}
