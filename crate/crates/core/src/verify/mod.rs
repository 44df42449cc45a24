//! Independent oracles: dense generators, eigen-decomposition, matrix
//! exponentials and Monte Carlo simulation.

mod semigroup;
mod sim;

pub use semigroup::{semigroup_checks, CheckMode, SemigroupReport};
pub use sim::{simulate, yaglom_report, SimConfig, SimEnsemble, Start, YaglomReport, YaglomRow, GENERATOR_ID};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BoundaryCase, Model};
use crate::models::Dynamics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Chain,
    FiniteDifference,
}

/// Generator restricted to the transient states.
#[derive(Debug, Clone)]
pub struct SubGenerator {
    pub matrix: DMatrix<f64>,
    /// Grid index of each row.
    pub states: Vec<usize>,
    /// `max |Q(i, i)|`.
    pub scale: f64,
    pub kind: GeneratorKind,
}

impl SubGenerator {
    /// Chains use their rates. Diffusions use the conservative three-point
    /// discretization of `(d/dm)(d/ds)` on the model grid, with rates
    /// `1 / (w_k (s_{k+1} - s_k))` up and `1 / (w_k (s_k - s_{k-1}))` down.
    pub fn from_model(model: &Model) -> Result<Self> {
        let last = model.last_transient();
        let states: Vec<usize> = (1..=last).collect();
        let n = states.len();
        let mut q = DMatrix::<f64>::zeros(n, n);
        let kind = match &model.dynamics {
            Dynamics::Chain(rates) => {
                for y in 1..=last {
                    let r = y - 1;
                    q[(r, r)] = -rates.total(y);
                    if y > 1 {
                        q[(r, r - 1)] = rates.down(y);
                    }
                    for &(z, rate) in rates.up(y) {
                        if z <= last {
                            q[(r, z - 1)] += rate;
                        }
                    }
                }
                GeneratorKind::Chain
            }
            Dynamics::Diffusion { scale, .. } => {
                let m = model.last();
                for y in 1..=last {
                    let r = y - 1;
                    let down = 1.0 / (model.w(y) * (scale[y] - scale[y - 1]));
                    let up = if y < m { 1.0 / (model.w(y) * (scale[y + 1] - scale[y])) } else { 0.0 };
                    q[(r, r)] = -(down + up);
                    if y > 1 {
                        q[(r, r - 1)] = down;
                    }
                    if y < last {
                        q[(r, r + 1)] = up;
                    }
                }
                GeneratorKind::FiniteDifference
            }
        };
        if model.boundary == BoundaryCase::KilledBoth && n == 0 {
            return Err(Error::InvalidModel("no transient states".into()));
        }
        let scale = (0..n).map(|i| q[(i, i)].abs()).fold(0.0, f64::max);
        let out = Self {
            matrix: q,
            states,
            scale,
            kind,
        };
        out.check()?;
        Ok(out)
    }

    fn check(&self) -> Result<()> {
        let n = self.matrix.nrows();
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                let v = self.matrix[(i, j)];
                if i != j && v < 0.0 {
                    return Err(Error::InvalidModel(format!("negative off-diagonal rate at ({i}, {j})")));
                }
                row += v;
            }
            if row > 1e-12 * self.scale.max(1.0) {
                return Err(Error::InvalidModel(format!("row {i} of the sub-generator sums to {row} > 0")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    /// Restricts a grid function to the transient states.
    pub fn restrict(&self, f: &[f64]) -> Vec<f64> {
        self.states.iter().map(|&i| f[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenDecay {
    pub lambda0: f64,
    pub lambda1: f64,
    /// Left Perron vector over the transient states, summing to one.
    pub left: Vec<f64>,
    /// Right Perron vector, one at the top transient state.
    pub right: Vec<f64>,
    /// `max(|A r - lambda0 r|, |A^T l - lambda0 l|) / scale` with `A = -Q_sub`.
    pub residual: f64,
}

/// All decay rates (eigenvalues of `-Q_sub`), by ascending real part.
pub fn decay_rates(sub: &SubGenerator) -> Result<Vec<Complex64>> {
    let a = -sub.matrix.clone();
    let schur = nalgebra::linalg::Schur::try_new(a, 1e-15, 100_000)
        .ok_or_else(|| Error::NoConvergence("Schur decomposition of the sub-generator".into()))?;
    let mut ev: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.re.partial_cmp(&y.re).unwrap().then(x.im.abs().partial_cmp(&y.im.abs()).unwrap()));
    Ok(ev)
}

/// Inverse iteration with shift `sigma` on `m`, from a positive start.
fn inverse_iteration(m: &DMatrix<f64>, sigma: f64, scale: f64) -> Result<DVector<f64>> {
    let n = m.nrows();
    let mut shift = sigma;
    for attempt in 0..4 {
        let shifted = m - DMatrix::<f64>::identity(n, n) * shift;
        let lu = shifted.lu();
        let mut x = DVector::<f64>::from_element(n, 1.0 / (n as f64).sqrt());
        let mut ok = true;
        for _ in 0..60 {
            match lu.solve(&x) {
                Some(y) if y.iter().all(|v| v.is_finite()) => {
                    let norm = y.norm();
                    if norm == 0.0 {
                        ok = false;
                        break;
                    }
                    let y = y / norm;
                    let sign = if y.sum() < 0.0 { -1.0 } else { 1.0 };
                    let y = y * sign;
                    let diff = (&y - &x).norm();
                    x = y;
                    if diff < 1e-15 {
                        break;
                    }
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(x);
        }
        shift = sigma - 1e-10 * scale.max(1.0) * (attempt + 1) as f64;
    }
    Err(Error::NoConvergence(format!("inverse iteration at shift {sigma}")))
}

/// Leading decay rates with Perron vectors.
///
/// The spectrum comes from a real Schur decomposition; the leading rate and
/// both Perron vectors are then refined by shifted inverse iteration and a
/// two-sided Rayleigh quotient.
pub fn eig_decay_oracle(sub: &SubGenerator) -> Result<EigenDecay> {
    let n = sub.dim();
    if n == 0 {
        return Err(Error::InvalidModel("empty sub-generator".into()));
    }
    let a = -sub.matrix.clone();
    let rates = decay_rates(sub)?;
    let lambda0_est = rates[0].re;
    let lambda1 = rates.iter().skip(1).map(|z| z.re).next().unwrap_or(f64::INFINITY);

    let r = inverse_iteration(&a, lambda0_est, sub.scale)?;
    let l = inverse_iteration(&a.transpose(), lambda0_est, sub.scale)?;
    let lambda0 = (l.transpose() * &a * &r)[(0, 0)] / l.dot(&r);

    let res_r = (&a * &r - &r * lambda0).amax() / r.amax();
    let res_l = (a.transpose() * &l - &l * lambda0).amax() / l.amax();
    let residual = res_r.max(res_l) / sub.scale.max(1.0);
    if residual > 1e-8 {
        return Err(Error::NoConvergence(format!("Perron pair residual {residual:.3e}")));
    }
    let top = r[n - 1];
    let right: Vec<f64> = r.iter().map(|v| v / top).collect();
    let sum = l.sum();
    let left: Vec<f64> = l.iter().map(|v| v / sum).collect();
    // entries far below the largest one carry only absolute accuracy
    let negative = |v: &[f64]| {
        let big = v.iter().fold(0.0, |a: f64, x| a.max(x.abs()));
        v.iter().any(|x| *x < -1e-10 * big) || v.iter().all(|x| *x <= 0.0)
    };
    if negative(&right) || negative(&left) {
        return Err(Error::Consistency("Perron vectors are not positive".into()));
    }
    Ok(EigenDecay {
        lambda0,
        lambda1,
        left,
        right,
        residual,
    })
}

/// Total-variation target of the uniformization tail.
const TAIL: f64 = 1e-12;
/// Largest `scale * t` handled before refusing.
const MAX_RATE_TIME: f64 = 1e7;

fn poisson_weights(mean: f64) -> Vec<f64> {
    // Terms up to the point where the remaining tail is below TAIL.
    let mut w = Vec::new();
    let mut log_p = -mean;
    let mut cum = 0.0;
    let mut n = 0usize;
    loop {
        let p = log_p.exp();
        w.push(p);
        cum += p;
        if n as f64 > mean && 1.0 - cum < TAIL * 0.5 {
            break;
        }
        // past the mode the tail is dominated by a geometric series
        if n as f64 > mean + 10.0 {
            let ratio = mean / (n + 1) as f64;
            if p * ratio / (1.0 - ratio) < TAIL * 0.5 {
                break;
            }
        }
        n += 1;
        log_p += mean.ln() - (n as f64).ln();
    }
    w
}

/// `e^{t Q_sub} v` (`left = false`) or `v^T e^{t Q_sub}` (`left = true`).
///
/// Chains use uniformization with a Poisson tail below `1e-12 * |v|_inf`;
/// finite-difference generators use scaling and squaring.
pub fn transition_oracle_dir(sub: &SubGenerator, t: f64, v: &[f64], left: bool) -> Result<Vec<f64>> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("t = {t} must be finite and nonnegative")));
    }
    let n = sub.dim();
    if v.len() != n {
        return Err(Error::Dimension(format!("v has {} entries for {n} states", v.len())));
    }
    if t == 0.0 {
        return Ok(v.to_vec());
    }
    if sub.scale * t > MAX_RATE_TIME {
        return Err(Error::InvalidArgument(format!(
            "t * rate = {:.3e} exceeds the uniformization limit",
            sub.scale * t
        )));
    }
    let q = if left { sub.matrix.transpose() } else { sub.matrix.clone() };
    let vv = DVector::from_column_slice(v);
    match sub.kind {
        GeneratorKind::Chain => {
            let lam = sub.scale.max(1e-300);
            let p = DMatrix::<f64>::identity(n, n) + &q / lam;
            let weights = poisson_weights(lam * t);
            let mut term = vv;
            let mut acc = DVector::<f64>::zeros(n);
            for (k, w) in weights.iter().enumerate() {
                if k > 0 {
                    term = &p * term;
                }
                acc += &term * *w;
            }
            Ok(acc.iter().copied().collect())
        }
        GeneratorKind::FiniteDifference => {
            let e = (q * t).exp();
            Ok((e * vv).iter().copied().collect())
        }
    }
}

pub fn transition_oracle(sub: &SubGenerator, t: f64, v: &[f64]) -> Result<Vec<f64>> {
    transition_oracle_dir(sub, t, v, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_bm_closed_form, build_chain, BmSpec, ChainSpec};

    #[test]
    fn two_state_eigen() {
        let m = build_chain(&ChainSpec::two_state(1.0, 1.0, 1.0)).unwrap();
        let s = SubGenerator::from_model(&m).unwrap();
        let e = eig_decay_oracle(&s).unwrap();
        let s5 = 5f64.sqrt();
        assert!((e.lambda0 - (3.0 - s5) / 2.0).abs() < 1e-14);
        assert!((e.lambda1 - (3.0 + s5) / 2.0).abs() < 1e-12);
        assert!((e.left[0] - (3.0 - s5) / 2.0).abs() < 1e-14);
        assert_eq!(e.right[1], 1.0);
    }

    #[test]
    fn pure_death_eigen() {
        let spec = ChainSpec { states: 1, rates: vec![(1, 0, 3.0)], boundary: BoundaryCase::ReflectingRight };
        let s = SubGenerator::from_model(&build_chain(&spec).unwrap()).unwrap();
        let e = eig_decay_oracle(&s).unwrap();
        assert!((e.lambda0 - 3.0).abs() < 1e-14);
        assert_eq!(e.left, vec![1.0]);
        assert!(e.lambda1.is_infinite());
    }

    #[test]
    fn dirichlet_laplacian() {
        let m = build_bm_closed_form(&BmSpec { length: 1.0, boundary: BoundaryCase::KilledBoth, intervals: 512 })
            .unwrap()
            .0;
        let s = SubGenerator::from_model(&m).unwrap();
        let e = eig_decay_oracle(&s).unwrap();
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((e.lambda0 - pi2 / 2.0).abs() < 1e-3);
        assert!((e.lambda1 - 2.0 * pi2).abs() < 1e-2);
    }

    #[test]
    fn transition_identities() {
        let m = build_chain(&ChainSpec::two_state(1.0, 1.0, 1.0)).unwrap();
        let s = SubGenerator::from_model(&m).unwrap();
        let e = eig_decay_oracle(&s).unwrap();
        assert_eq!(transition_oracle(&s, 0.0, &e.right).unwrap(), e.right);
        let pr = transition_oracle(&s, 1.0, &e.right).unwrap();
        for (a, b) in pr.iter().zip(&e.right) {
            assert!((a * e.lambda0.exp() - b).abs() < 1e-8);
        }
        let p1 = transition_oracle(&s, 3.0, &[1.0, 1.0]).unwrap();
        let surv: f64 = p1.iter().zip(&e.left).map(|(a, b)| a * b).sum();
        assert!((surv - (-3.0 * e.lambda0).exp()).abs() < 1e-8);
        let lp = transition_oracle_dir(&s, 3.0, &e.left, true).unwrap();
        for (a, b) in lp.iter().zip(&e.left) {
            assert!((a - b * (-3.0 * e.lambda0).exp()).abs() < 1e-10);
        }
        assert!(transition_oracle(&s, -1.0, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn uniformization_matches_expm() {
        let spec = ChainSpec::birth_death(8, |n| 0.5 + n as f64, |n| 1.0 + (n * n) as f64, BoundaryCase::ReflectingRight);
        let s = SubGenerator::from_model(&build_chain(&spec).unwrap()).unwrap();
        let v: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).cos()).collect();
        let a = transition_oracle(&s, 0.4, &v).unwrap();
        let e = (&s.matrix * 0.4).exp() * DVector::from_column_slice(&v);
        for (x, y) in a.iter().zip(e.iter()) {
            assert!((x - y).abs() < 1e-11);
        }
    }
}
