//! q-scale functions `W^(q)`, the companion `Z^(q)`, and exit-time transforms.
//!
//! The production path solves the discrete Volterra system
//!
//! ```text
//! W^(q)(x_i, x_j) = W(x_i, x_j) + q * sum_{i<k<j} W^(q)(x_i, x_k) W(x_k, x_j) w_k
//! ```
//!
//! by forward recursion over the second index. Because every sum runs over an
//! open window, the unknowns on the right only involve strictly smaller
//! indices and no linear solve is needed. The same system can be read as
//! `W^(q) = K (I - q D K)^{-1}` with `K` the strictly upper triangular kernel
//! and `D = diag(w)`, which gives backward recursions for columns of `W^(q)`
//! and for `Z^(q)(., y)`.
//!
//! For kernels of the form `W(x, y) = s(y) - s(x)` all recursions run in
//! linear time using running sums of scale increments.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{check_rate, ComplexRate, KernelRepr, Model, Table};
use crate::qsd;

type C = Complex64;

const ZERO: C = C::new(0.0, 0.0);
const ONE: C = C::new(1.0, 0.0);

/// Default relative tolerance for series truncation.
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Partial sums of `q^n W^{(x)(n+1)}` with a certified tail bound.
    Series,
    /// Forward recursion of the discrete Volterra system (exact on the grid).
    Volterra,
}

/// Upper limit of a window: a grid index, or the right end of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upper {
    Index(usize),
    End,
}

impl Upper {
    /// Exclusive index bound of the corresponding open window.
    pub fn limit(self, model: &Model) -> usize {
        match self {
            Upper::Index(j) => j,
            Upper::End => model.end_limit(),
        }
    }
}

/// Row `i` of `W^(q)`: entries `W^(q)(x_i, x_j)` for `j = 0..=M` (zero for `j <= i`).
pub fn scale_row(model: &Model, q: ComplexRate, i: usize) -> Vec<C> {
    let n = model.last() + 1;
    let mut f = vec![ZERO; n];
    if i + 1 >= n {
        return f;
    }
    match model.kernel.repr() {
        KernelRepr::Scale(s) => {
            // p = sum_{i<k<j} f_k w_k (s_j - s_k), a = sum_{i<k<j} f_k w_k
            let mut p = ZERO;
            let mut a = ZERO;
            for j in (i + 1)..n {
                p += a * (s[j] - s[j - 1]);
                f[j] = C::new(s[j] - s[i], 0.0) + q * p;
                a += f[j] * model.w(j);
            }
        }
        KernelRepr::Table(t) => {
            for j in (i + 1)..n {
                let mut acc = ZERO;
                for k in (i + 1)..j {
                    acc += f[k] * (t.get(k, j) * model.w(k));
                }
                f[j] = C::new(t.get(i, j), 0.0) + q * acc;
            }
        }
    }
    f
}

/// Column `j` of `W^(q)`: entries `W^(q)(x_u, x_j)` for `u = 0..=M` (zero for `u >= j`).
pub fn scale_col(model: &Model, q: ComplexRate, j: usize) -> Vec<C> {
    let n = model.last() + 1;
    let mut c = vec![ZERO; n];
    if j == 0 || j >= n {
        return c;
    }
    match model.kernel.repr() {
        KernelRepr::Scale(s) => {
            // p = sum_{u<k<j} w_k c_k (s_k - s_u), a = sum_{u<k<j} w_k c_k
            let mut p = ZERO;
            let mut a = ZERO;
            for u in (0..j).rev() {
                p += a * (s[u + 1] - s[u]);
                c[u] = C::new(s[j] - s[u], 0.0) + q * p;
                a += c[u] * model.w(u);
            }
        }
        KernelRepr::Table(t) => {
            for u in (0..j).rev() {
                let mut acc = ZERO;
                for k in (u + 1)..j {
                    acc += c[k] * (t.get(u, k) * model.w(k));
                }
                c[u] = C::new(t.get(u, j), 0.0) + q * acc;
            }
        }
    }
    c
}

/// `Z^(q)(x_u, y)` for all `u`, where the window `(x_u, y)` ends before index `limit`.
///
/// `limit = M + 1` gives the right-end function of a model whose right end is
/// in the state space; values for `u >= limit - 1` are exactly one.
pub fn z_col(model: &Model, q: ComplexRate, limit: usize) -> Vec<C> {
    let n = model.last() + 1;
    let mut v = vec![ONE; n];
    if limit < 2 {
        return v;
    }
    let top = (limit - 1).min(n - 1);
    match model.kernel.repr() {
        KernelRepr::Scale(s) => {
            let mut p = ZERO;
            let mut a = v[top] * model.w(top);
            for u in (0..top).rev() {
                p += a * (s[u + 1] - s[u]);
                v[u] = ONE + q * p;
                a += v[u] * model.w(u);
            }
        }
        KernelRepr::Table(t) => {
            for u in (0..top).rev() {
                let mut acc = ZERO;
                for k in (u + 1)..=top {
                    acc += v[k] * (t.get(u, k) * model.w(k));
                }
                v[u] = ONE + q * acc;
            }
        }
    }
    v
}

/// `Z^(q)(x_i, .)` from a precomputed row of `W^(q)`, over the window ending before `limit`.
pub fn z_from_row(model: &Model, q: ComplexRate, row: &[C], i: usize, limit: usize) -> C {
    let hi = limit.min(row.len());
    let mut acc = ZERO;
    for k in (i + 1)..hi {
        acc += row[k] * model.w(k);
    }
    ONE + q * acc
}

/// Iterated kernels `W^{(x)(n+1)}(x_i, .)` for `n = 0..count`, as real rows.
pub fn series_terms(model: &Model, i: usize, count: usize) -> Vec<Vec<f64>> {
    let n = model.last() + 1;
    let mut terms = Vec::with_capacity(count);
    if count == 0 {
        return terms;
    }
    let first: Vec<f64> = (0..n).map(|j| if j > i { model.k(i, j) } else { 0.0 }).collect();
    terms.push(first);
    while terms.len() < count {
        let prev = terms.last().unwrap();
        terms.push(convolve_with_kernel(model, prev, i));
    }
    terms
}

/// `(f (x) W)(x_i, x_j) = sum_{i<k<j} f_k W(x_k, x_j) w_k` for all `j`.
fn convolve_with_kernel(model: &Model, f: &[f64], i: usize) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    match model.kernel.repr() {
        KernelRepr::Scale(s) => {
            let mut p = 0.0;
            let mut a = 0.0;
            for j in (i + 1)..n {
                p += a * (s[j] - s[j - 1]);
                out[j] = p;
                a += f[j] * model.w(j);
            }
        }
        KernelRepr::Table(t) => {
            for j in (i + 1)..n {
                out[j] = ((i + 1)..j).map(|k| f[k] * t.get(k, j) * model.w(k)).sum();
            }
        }
    }
    out
}

/// Bound on `sum_{n > last} a^n / n!`.
fn exp_tail(a: f64, last: usize) -> f64 {
    let mut term = 1.0;
    for n in 1..=(last + 1) {
        term *= a / n as f64;
    }
    let ratio = a / (last + 2) as f64;
    if ratio < 1.0 {
        term / (1.0 - ratio)
    } else {
        f64::INFINITY
    }
}

/// Series evaluation of row `i`, truncated once the tail bound drops below `tol`
/// (relative to `W(x_i, .)`).
pub struct SeriesRow {
    pub values: Vec<C>,
    /// Absolute bound on the discarded tail.
    pub trunc_error: f64,
    /// Bound on accumulated rounding error, `eps * W * exp(|q| Wbar)`.
    pub roundoff_bound: f64,
    pub terms: usize,
}

pub fn series_row(model: &Model, q: ComplexRate, i: usize, tol: f64) -> SeriesRow {
    let n = model.last() + 1;
    let wbar_all: f64 = ((i + 1)..n).map(|k| model.k(i, k) * model.w(k)).sum();
    let kmax = ((i + 1)..n).map(|j| model.k(i, j)).fold(0.0, f64::max);
    let a = q.norm() * wbar_all;
    let mut values = vec![ZERO; n];
    let mut term: Vec<f64> = (0..n).map(|j| if j > i { model.k(i, j) } else { 0.0 }).collect();
    let mut qn = ONE;
    let mut count = 0;
    loop {
        for j in (i + 1)..n {
            values[j] += qn * term[j];
        }
        count += 1;
        if exp_tail(a, count - 1) <= tol || count > 10_000 {
            break;
        }
        term = convolve_with_kernel(model, &term, i);
        qn *= q;
    }
    SeriesRow {
        values,
        trunc_error: kmax * exp_tail(a, count - 1),
        roundoff_bound: 4.0 * f64::EPSILON * (n as f64) * kmax * a.exp(),
        terms: count,
    }
}

/// `W^(q)` and `Z^(q)` tables on a fixed model.
#[derive(Debug, Clone)]
pub struct ScaleEval {
    pub q: ComplexRate,
    pub method: Method,
    /// `W^(q)(x_i, x_j)`, zero for `j <= i`.
    pub wq: Table<C>,
    /// `Z^(q)(x_i, .)` over the window reaching the right end.
    pub zq_end: Vec<C>,
    /// Nonnegative bound on series truncation (zero for the Volterra method).
    pub trunc_error: f64,
    /// Rounding-error bound of the series (zero for the Volterra method).
    pub roundoff_bound: f64,
    weights: Vec<f64>,
    wbar_end: Vec<f64>,
}

/// Evaluates the full `W^(q)` table.
pub fn wq_eval(model: &Model, q: ComplexRate, method: Method, tol: f64) -> Result<ScaleEval> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    check_rate(q)?;
    model.ensure_valid()?;
    let n = model.last() + 1;
    let mut wq = Table::zeros(n);
    let mut trunc_error: f64 = 0.0;
    let mut roundoff_bound: f64 = 0.0;
    for i in 0..n {
        let row = match method {
            Method::Volterra => scale_row(model, q, i),
            Method::Series => {
                let s = series_row(model, q, i, tol);
                trunc_error = trunc_error.max(s.trunc_error);
                roundoff_bound = roundoff_bound.max(s.roundoff_bound);
                s.values
            }
        };
        wq.row_mut(i).copy_from_slice(&row);
    }
    let end_limit = model.end_limit();
    let zq_end = (0..n)
        .map(|i| z_from_row(model, q, wq.row(i), i, end_limit))
        .collect();
    let wbar_end = (0..n)
        .map(|i| ((i + 1)..end_limit.min(n)).map(|k| model.k(i, k) * model.w(k)).sum())
        .collect();
    Ok(ScaleEval {
        q,
        method,
        wq,
        zq_end,
        trunc_error,
        roundoff_bound,
        weights: model.measure.weights().to_vec(),
        wbar_end,
    })
}

impl ScaleEval {
    pub fn w(&self, i: usize, j: usize) -> C {
        self.wq.get(i, j)
    }

    /// `Z^(q)(x_i, x_j)` (open window) for any `j`, including the ghost index `M + 1`.
    pub fn z(&self, i: usize, j: usize) -> C {
        let row = self.wq.row(i);
        let hi = j.min(row.len());
        let mut acc = ZERO;
        for k in (i + 1)..hi {
            acc += row[k] * self.weights[k];
        }
        ONE + self.q * acc
    }
}

/// Result of [`zq_eval`]. `bound` is the a-priori bound
/// `1 + |q| Wbar e^{|q| Wbar}` used to certify truncated right-end values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZValue {
    pub value: C,
    pub bound: Option<f64>,
    pub truncated: bool,
}

pub fn zq_eval(eval: &ScaleEval, model: &Model, i: usize, upper: Upper) -> Result<ZValue> {
    let last = model.last();
    match upper {
        Upper::Index(j) => {
            if i >= j || j > last {
                return Err(Error::Index(format!("Z window ({i}, {j}) with M = {last}")));
            }
            Ok(ZValue {
                value: eval.z(i, j),
                bound: None,
                truncated: false,
            })
        }
        Upper::End => {
            if i > last {
                return Err(Error::Index(format!("Z start {i} with M = {last}")));
            }
            let truncated = model.boundary == crate::model::BoundaryCase::EntranceInfinity;
            let wbar = eval.wbar_end[i];
            let a = eval.q.norm() * wbar;
            Ok(ZValue {
                value: eval.zq_end[i],
                bound: truncated.then(|| 1.0 + a * a.exp()),
                truncated,
            })
        }
    }
}

/// `Z^(q)(x)` on a model with an entrance boundary at infinity.
pub fn zq_infinity(eval: &ScaleEval, model: &Model, i: usize) -> Result<ZValue> {
    if model.boundary != crate::model::BoundaryCase::EntranceInfinity {
        return Err(Error::WrongCase(
            "Z^(q)(x) at infinity requires an entrance-at-infinity model".into(),
        ));
    }
    zq_eval(eval, model, i, Upper::End)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WbarValue {
    pub value: f64,
    /// True when the window was cut at a truncation level rather than a boundary.
    pub tail_truncated: bool,
}

/// `Wbar(x_i, y) = sum_{i<k<j} W(x_i, x_k) w_k`.
pub fn wbar(model: &Model, i: usize, upper: Upper) -> Result<WbarValue> {
    let limit = upper.limit(model);
    if i >= limit {
        return Err(Error::Index(format!("Wbar window ({i}, {limit}) is empty or reversed")));
    }
    if limit > model.end_limit() {
        return Err(Error::Index(format!("Wbar window end {limit} beyond the model")));
    }
    let value = ((i + 1)..limit).map(|k| model.k(i, k) * model.w(k)).sum();
    Ok(WbarValue {
        value,
        tail_truncated: matches!(upper, Upper::End)
            && model.boundary == crate::model::BoundaryCase::EntranceInfinity,
    })
}

/// `Wbar` over the half-closed window `(x_i, x_j]`.
pub fn wbar_closed(model: &Model, i: usize, j: usize) -> Result<f64> {
    if i > j || j > model.last() {
        return Err(Error::Index(format!("window ({i}, {j}]")));
    }
    Ok(((i + 1)..=j).map(|k| model.k(i, k) * model.w(k)).sum())
}

/// Laplace transforms of the two-sided exit from `(x_i, x_j)` started at `x_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitLaplace {
    /// `E[e^{-q T}; exit below x_i first]`
    pub down: C,
    /// `E[e^{-q T}; exit at or above x_j (or killing) first]`
    pub up: C,
}

pub fn exit_laplace(model: &Model, q: ComplexRate, i: usize, k: usize, j: usize) -> Result<ExitLaplace> {
    check_rate(q)?;
    if !(i <= k && k <= j && i < j && j <= model.last()) {
        return Err(Error::Index(format!("exit window needs i <= k <= j, i < j (got {i}, {k}, {j})")));
    }
    let col = scale_col(model, q, j);
    let denom = col[i];
    let scale = model.k(i, j).abs().max(f64::MIN_POSITIVE);
    if denom.norm() <= 1e-13 * scale {
        return Err(Error::Singular(format!(
            "W^(q)(x_{i}, x_{j}) vanishes; q is near a zero of the killed-window spectrum"
        )));
    }
    let down = col[k] / denom;
    let z = z_col(model, q, j);
    let up = z[k] - down * z[i];
    Ok(ExitLaplace { down, up })
}

/// Scaled residuals of the resolvent identities for `W`, `Z` and the resolvent density.
///
/// Each residual is `max |lhs - rhs|` over all grid pairs divided by
/// `max(1, largest magnitude of the tables and convolution terms involved)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityResiduals {
    pub res_w: f64,
    pub res_z: f64,
    /// `None` when `q` or `r` is too close to the zero set for the density to exist.
    pub res_r: Option<f64>,
}

pub fn identity_residuals(model: &Model, q: ComplexRate, r: ComplexRate) -> Result<IdentityResiduals> {
    let eq = wq_eval(model, q, Method::Volterra, DEFAULT_TOL)?;
    let er = wq_eval(model, r, Method::Volterra, DEFAULT_TOL)?;
    let n = model.last() + 1;
    let end = model.end_limit();
    let diff = q - r;

    let mut scale_w: f64 = 1.0;
    for i in 0..n {
        for j in 0..n {
            scale_w = scale_w.max(eq.w(i, j).norm()).max(er.w(i, j).norm());
        }
    }
    // Z tables, including the ghost column when present.
    let zr: Vec<Vec<C>> = (0..n).map(|i| (0..=end).map(|j| er.z(i, j)).collect()).collect();
    let zq: Vec<Vec<C>> = (0..n).map(|i| (0..=end).map(|j| eq.z(i, j)).collect()).collect();
    let mut scale_z: f64 = 1.0;
    for i in 0..n {
        for j in 0..=end {
            scale_z = scale_z.max(zq[i][j].norm()).max(zr[i][j].norm());
        }
    }

    let mut res_w: f64 = 0.0;
    let mut res_z: f64 = 0.0;
    for i in 0..n {
        let wq_row = eq.wq.row(i);
        for j in (i + 1)..=end {
            let mut conv_zw = ZERO;
            let mut conv_ww = ZERO;
            for k in (i + 1)..j.min(n) {
                let a = wq_row[k] * model.w(k);
                conv_zw += a * zr[k][j];
                if j < n {
                    conv_ww += a * er.w(k, j);
                }
            }
            if j < n {
                let lhs = eq.w(i, j) - er.w(i, j);
                res_w = res_w.max((lhs - diff * conv_ww).norm());
            }
            let lhs = zq[i][j] - zr[i][j];
            res_z = res_z.max((lhs - diff * conv_zw).norm());
        }
    }

    let res_r = match (qsd::resolvent_table(model, q), qsd::resolvent_table(model, r)) {
        (Ok(rq), Ok(rr)) => {
            let states = rq.size();
            let mut scale_r: f64 = 1.0;
            for x in 0..states {
                for y in 0..states {
                    scale_r = scale_r.max(rq.get(x, y).norm()).max(rr.get(x, y).norm());
                }
            }
            let mut worst: f64 = 0.0;
            // states are indices 1..=states-1; row/col 0 is the absorbing point.
            for x in 1..states {
                for y in 1..states {
                    let mut acc = ZERO;
                    for u in 1..states {
                        acc += rq.get(x, u) * rr.get(u, y) * model.w(u);
                    }
                    let lhs = rq.get(x, y) - rr.get(x, y);
                    let rhs = (r - q) * acc;
                    scale_r = scale_r.max(rhs.norm());
                    worst = worst.max((lhs - rhs).norm());
                }
            }
            Some(worst / scale_r)
        }
        _ => None,
    };

    Ok(IdentityResiduals {
        res_w: res_w / scale_w,
        res_z: res_z / scale_z,
        res_r,
    })
}
