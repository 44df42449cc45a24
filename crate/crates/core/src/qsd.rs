//! Quasi-stationary distribution, invariant function, resolvent density and
//! the Yaglom projection, built from the leading zero `-lambda0` of `D`.
//!
//! With `W = W^(-lambda0)`:
//!
//! * `nu(x_i) = lambda0 W(0, x_i) w_i` (reflecting or entrance right end), or
//!   `C W(0, x_i) w_i` normalized to one (killed at both ends);
//! * the invariant function is `Z^(-lambda0)(., end)`, or `W(., l)` when killed at `l`;
//! * `rho = D'(-lambda0) = sum_u W(0, u) zinv(u) w_u`;
//! * the projection is `pi f(x) = zinv(x) sum_u W(0, u) f(u) w_u / rho`.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{check_rate, ComplexRate, MeasureKind, Model, Table};
use crate::scale::{scale_col, scale_row, z_col, z_from_row};
use crate::spectral::{eval_d_pair, DKind, SpectralProblem};

type C = Complex64;

/// Indices of the transient states: `1..end` with `end` exclusive.
fn state_end(model: &Model) -> usize {
    model.end_limit().min(model.last() + 1)
}

/// Allowed deviation of the self-normalizing weight sum from one.
pub fn normalization_budget(model: &Model) -> f64 {
    match model.measure.kind() {
        MeasureKind::Diffuse => {
            let h = model.grid.max_spacing();
            (10.0 * h * h).max(1e-10)
        }
        MeasureKind::Atomic => 1e-8,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QsdDensity {
    /// QSD mass per grid point, summing to one; zero at absorbing points.
    pub nu: Vec<f64>,
    /// `sum lambda0 W(0, x_i) w_i` (or `sum W(0, x_i) w_i` when killed at both ends).
    pub pre_norm_sum: f64,
    /// `1` for self-normalizing cases, `C` when killed at both ends.
    pub norm_const: f64,
}

pub fn qsd_density(p: &SpectralProblem, lambda0: f64) -> Result<QsdDensity> {
    let m = p.model;
    if !(lambda0 > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda0 = {lambda0} must be positive")));
    }
    let row = scale_row(m, C::new(-lambda0, 0.0), 0);
    let end = state_end(m);
    let mut nu = vec![0.0; m.last() + 1];
    for u in 1..end {
        nu[u] = row[u].re * m.w(u);
    }
    let raw: f64 = nu.iter().sum();
    let scale = nu.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if let Some(i) = nu.iter().position(|v| *v < -1e-10 * scale) {
        return Err(Error::Consistency(format!(
            "QSD weight at x_{i} is negative ({}); lambda0 is not the leading zero",
            nu[i]
        )));
    }
    let (pre_norm_sum, norm_const) = match p.kind {
        DKind::WInterval => (raw, 1.0 / raw),
        DKind::ZInfinity | DKind::ZInterval => {
            let s = lambda0 * raw;
            let budget = normalization_budget(m);
            if (s - 1.0).abs() > budget {
                return Err(Error::Consistency(format!(
                    "QSD weights sum to {s} before normalization (budget {budget:.3e})"
                )));
            }
            (s, 1.0)
        }
    };
    for v in nu.iter_mut() {
        *v = v.max(0.0) / raw;
    }
    Ok(QsdDensity {
        nu,
        pre_norm_sum,
        norm_const,
    })
}

/// `Z^(-lambda0)(x_i, end)`, or `W^(-lambda0)(x_i, l)` when killed at both ends.
///
/// The first is one at the right end; the second vanishes there and is left unscaled.
pub fn invariant_function(p: &SpectralProblem, lambda0: f64) -> Result<Vec<f64>> {
    let m = p.model;
    let q = C::new(-lambda0, 0.0);
    let values: Vec<f64> = match p.kind {
        DKind::WInterval => scale_col(m, q, m.last()).iter().map(|v| v.re).collect(),
        _ => z_col(m, q, m.end_limit()).iter().map(|v| v.re).collect(),
    };
    if p.kind == DKind::ZInfinity {
        if let Some(i) = (1..values.len()).find(|&i| !(values[i] > values[i - 1])) {
            return Err(Error::Consistency(format!(
                "invariant function is not strictly increasing at x_{i} ({} -> {})",
                values[i - 1],
                values[i]
            )));
        }
    }
    Ok(values)
}

/// `rho = D'(-lambda0)`, checked against the window sum with the invariant function.
pub fn rho_value(p: &SpectralProblem, lambda0: f64) -> Result<f64> {
    let (_, dp) = eval_d_pair(p, C::new(-lambda0, 0.0))?;
    let rho = dp.re;
    if p.kind == DKind::ZInfinity {
        let m = p.model;
        let row = scale_row(m, C::new(-lambda0, 0.0), 0);
        let zinv = invariant_function(p, lambda0)?;
        let explicit: f64 = (1..state_end(m)).map(|u| row[u].re * zinv[u] * m.w(u)).sum();
        if (explicit - rho).abs() > 1e-8 * rho.abs().max(1e-300) {
            return Err(Error::Consistency(format!(
                "rho from D' ({rho}) and from the window sum ({explicit}) disagree"
            )));
        }
    }
    if !(rho > 0.0) {
        return Err(Error::Consistency(format!("rho = {rho} must be positive")));
    }
    Ok(rho)
}

/// Everything needed to project onto the leading eigenfunction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QsdBundle {
    pub kind: DKind,
    pub lambda0: f64,
    pub nu: Vec<f64>,
    pub zinv: Vec<f64>,
    pub rho: f64,
    pub norm_const: f64,
    pub pre_norm_sum: f64,
    /// `W^(-lambda0)(0, x_i)`.
    pub w0: Vec<f64>,
    /// Reference weights `w_i` restricted to transient states.
    pub weights: Vec<f64>,
}

pub fn qsd_bundle(p: &SpectralProblem, lambda0: f64) -> Result<QsdBundle> {
    let m = p.model;
    let density = qsd_density(p, lambda0)?;
    let zinv = invariant_function(p, lambda0)?;
    let rho = rho_value(p, lambda0)?;
    let w0 = scale_row(m, C::new(-lambda0, 0.0), 0).iter().map(|v| v.re).collect();
    let end = state_end(m);
    let weights = (0..=m.last()).map(|u| if u >= 1 && u < end { m.w(u) } else { 0.0 }).collect();
    Ok(QsdBundle {
        kind: p.kind,
        lambda0,
        nu: density.nu,
        zinv,
        rho,
        norm_const: density.norm_const,
        pre_norm_sum: density.pre_norm_sum,
        w0,
        weights,
    })
}

impl QsdBundle {
    /// `sum_u W^(-lambda0)(0, u) f(u) w_u`.
    pub fn w0_integral(&self, f: &[f64]) -> f64 {
        self.w0
            .iter()
            .zip(&self.weights)
            .zip(f)
            .map(|((a, w), f)| a * w * f)
            .sum()
    }
}

/// Rank-one projection `pi f = zinv * (sum W(0,.) f w) / rho`.
pub fn yaglom_projection(bundle: &QsdBundle, f: &[f64]) -> Result<Vec<f64>> {
    if f.len() != bundle.zinv.len() {
        return Err(Error::Dimension(format!(
            "f has {} values for {} grid points",
            f.len(),
            bundle.zinv.len()
        )));
    }
    let c = bundle.w0_integral(f) / bundle.rho;
    Ok(bundle.zinv.iter().map(|z| z * c).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QProcess {
    /// Stationary law of the conditioned process, per grid point.
    pub mu: Vec<f64>,
    pub mu_sum: f64,
    /// `h` of the h-transform `q_t f = e^{lambda0 t} p_t(h f) / h`.
    pub h: Vec<f64>,
    pub lambda0: f64,
}

pub fn qprocess_quantities(p: &SpectralProblem, bundle: &QsdBundle) -> Result<QProcess> {
    let n = bundle.zinv.len();
    let mu: Vec<f64> = (0..n)
        .map(|u| bundle.w0[u] * bundle.zinv[u] * bundle.weights[u] / bundle.rho)
        .collect();
    let mu_sum: f64 = mu.iter().sum();
    let budget = normalization_budget(p.model).max(1e-10);
    if (mu_sum - 1.0).abs() > budget {
        return Err(Error::Consistency(format!("Q-process law sums to {mu_sum}")));
    }
    Ok(QProcess {
        mu,
        mu_sum,
        h: bundle.zinv.clone(),
        lambda0: bundle.lambda0,
    })
}

/// Rejects `q` with `|D(q)| < 1e-8 |D'(q)| max(1, |q|)`, i.e. a Newton distance
/// to the zero set below `1e-8 max(1, |q|)`.
fn pole_guard(p: &SpectralProblem, q: C) -> Result<()> {
    let (d, dp) = eval_d_pair(p, q)?;
    if d.norm() < 1e-8 * dp.norm() * q.norm().max(1.0) || d.norm() == 0.0 {
        return Err(Error::NearPole {
            re: q.re,
            im: q.im,
            distance: if dp.norm() > 0.0 { (d / dp).norm() } else { 0.0 },
        });
    }
    Ok(())
}

/// Resolvent density `r^(q)(x_i, x_j)` with respect to the reference measure.
pub fn resolvent_density(p: &SpectralProblem, q: ComplexRate, i: usize, j: usize) -> Result<C> {
    check_rate(q)?;
    let m = p.model;
    if i > m.last() || j > m.last() {
        return Err(Error::Index(format!("({i}, {j}) outside 0..={}", m.last())));
    }
    pole_guard(p, q)?;
    let row0 = scale_row(m, q, 0);
    let rowi = scale_row(m, q, i);
    let ratio = match p.kind {
        DKind::WInterval => rowi[m.last()] / row0[m.last()],
        _ => z_from_row(m, q, &rowi, i, m.end_limit()) / z_from_row(m, q, &row0, 0, m.end_limit()),
    };
    Ok(ratio * row0[j] - rowi[j])
}

/// Full table of `r^(q)`, indexed by grid points; rows and columns of
/// absorbing points are zero.
pub fn resolvent_table(model: &Model, q: ComplexRate) -> Result<Table<C>> {
    let p = SpectralProblem::new(model)?;
    pole_guard(&p, q)?;
    let n = model.last() + 1;
    let end = state_end(model);
    let row0 = scale_row(model, q, 0);
    let h: Vec<C> = match p.kind {
        DKind::WInterval => {
            let col = scale_col(model, q, model.last());
            col.iter().map(|v| v / row0[model.last()]).collect()
        }
        _ => {
            let z = z_col(model, q, model.end_limit());
            z.iter().map(|v| v / z[0]).collect()
        }
    };
    let mut t = Table::zeros(n);
    for x in 1..end {
        let rowx = scale_row(model, q, x);
        for u in 1..end {
            t.set(x, u, h[x] * row0[u] - rowx[u]);
        }
    }
    Ok(t)
}

/// `(1 / Z^(q)(0)) sum_u W^(q)(0, u) f(u) w_u`: the resolvent at the attached point infinity.
pub fn resolvent_at_infinity(p: &SpectralProblem, q: ComplexRate, f: &[f64]) -> Result<C> {
    if p.kind != DKind::ZInfinity {
        return Err(Error::WrongCase("the resolvent at infinity needs an entrance boundary".into()));
    }
    let m = p.model;
    if f.len() != m.last() + 1 {
        return Err(Error::Dimension(format!("f has {} values for {} grid points", f.len(), m.last() + 1)));
    }
    pole_guard(p, q)?;
    let row = scale_row(m, q, 0);
    let z0 = z_from_row(m, q, &row, 0, m.end_limit());
    let mut acc = C::new(0.0, 0.0);
    for u in 1..state_end(m) {
        acc += row[u] * f[u] * m.w(u);
    }
    Ok(acc / z0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BoundaryCase;
    use crate::models::{build_bm_closed_form, build_chain, BmSpec, ChainSpec};
    use crate::spectral::decay_parameter;
    use std::f64::consts::PI;

    fn bm(n: usize, bc: BoundaryCase) -> Model {
        build_bm_closed_form(&BmSpec { length: 1.0, boundary: bc, intervals: n }).unwrap().0
    }

    #[test]
    fn reflecting_brownian_qsd() {
        let m = bm(512, BoundaryCase::ReflectingRight);
        let p = SpectralProblem::new(&m).unwrap();
        let l0 = decay_parameter(&p).unwrap().lambda0;
        let b = qsd_bundle(&p, l0).unwrap();
        let h = 1.0 / 512.0;
        for i in (16..512).step_by(16) {
            let x = m.grid.x(i);
            let dens = b.nu[i] / h;
            assert!((dens - PI / 2.0 * (PI * x / 2.0).sin()).abs() < 1e-4, "{x}");
            assert!((b.zinv[i] - (PI * x / 2.0).sin()).abs() < 1e-5);
        }
        assert_eq!(b.zinv[512], 1.0);
        assert!((b.rho - 2.0 / PI).abs() < 1e-5);
        assert!((b.pre_norm_sum - 1.0).abs() <= 10.0 * h * h);
        let qp = qprocess_quantities(&p, &b).unwrap();
        assert!((qp.mu_sum - 1.0).abs() < 1e-12);
        let x = m.grid.x(256);
        assert!((qp.mu[256] / h - 2.0 * (PI * x / 2.0).sin().powi(2)).abs() < 1e-3);
    }

    #[test]
    fn killed_brownian_qsd() {
        let m = bm(512, BoundaryCase::KilledBoth);
        let p = SpectralProblem::new(&m).unwrap();
        let l0 = decay_parameter(&p).unwrap().lambda0;
        let b = qsd_bundle(&p, l0).unwrap();
        let x = m.grid.x(100);
        assert!((b.nu[100] * 512.0 - PI / 2.0 * (PI * x).sin()).abs() < 1e-4);
        assert_eq!(b.nu[512], 0.0);
        assert!((b.rho - 1.0 / (PI * PI)).abs() < 1e-5);
        assert!(b.norm_const > 0.0);
    }

    #[test]
    fn two_state_qsd() {
        let m = build_chain(&ChainSpec::two_state(1.0, 1.0, 1.0)).unwrap();
        let p = SpectralProblem::new(&m).unwrap();
        let l0 = decay_parameter(&p).unwrap().lambda0;
        let b = qsd_bundle(&p, l0).unwrap();
        let g = (5f64.sqrt() - 1.0) / 2.0;
        assert!((b.nu[1] - (1.0 - g)).abs() < 1e-12);
        assert!((b.nu[2] - g).abs() < 1e-12);
        assert!((b.pre_norm_sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_is_idempotent() {
        let m = build_chain(&ChainSpec::birth_death(10, |_| 1.0, |n| n as f64, BoundaryCase::ReflectingRight)).unwrap();
        let p = SpectralProblem::new(&m).unwrap();
        let b = qsd_bundle(&p, decay_parameter(&p).unwrap().lambda0).unwrap();
        let f: Vec<f64> = (0..=10).map(|i| (i as f64).sin()).collect();
        let pf = yaglom_projection(&b, &f).unwrap();
        let ppf = yaglom_projection(&b, &pf).unwrap();
        for (a, c) in pf.iter().zip(&ppf) {
            assert!((a - c).abs() < 1e-12 * (1.0 + a.abs()));
        }
        let zero = yaglom_projection(&b, &[0.0; 11]).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn killed_green_function() {
        let m = bm(512, BoundaryCase::KilledBoth);
        let p = SpectralProblem::new(&m).unwrap();
        let r = resolvent_density(&p, C::new(1.0, 0.0), 256, 256).unwrap();
        assert!((r.re - 0.21527).abs() < 1e-4);
        assert_eq!(resolvent_density(&p, C::new(1.0, 0.0), 0, 256).unwrap(), C::new(0.0, 0.0));
        let l0 = decay_parameter(&p).unwrap().lambda0;
        assert!(matches!(
            resolvent_density(&p, C::new(-l0, 0.0), 10, 20),
            Err(Error::NearPole { .. })
        ));
    }

    #[test]
    fn resolvent_of_one_is_hitting_transform() {
        let m = bm(512, BoundaryCase::ReflectingRight);
        let p = SpectralProblem::new(&m).unwrap();
        let q = C::new(1.0, 0.0);
        let x = 200;
        let total: C = (1..=512).map(|u| resolvent_density(&p, q, x, u).unwrap() * m.w(u)).sum();
        // E_x e^{-tau} = cosh(sqrt2 (1 - x)) / cosh(sqrt2)
        let s2 = 2f64.sqrt();
        let xx = m.grid.x(x);
        let hit = (s2 * (1.0 - xx)).cosh() / s2.cosh();
        assert!((total.re - (1.0 - hit)).abs() < 1e-4);
    }

    #[test]
    fn resolvent_at_infinity_identities() {
        let m = build_chain(&ChainSpec::birth_death(40, |_| 1.0, |n| (n * n) as f64, BoundaryCase::EntranceInfinity)).unwrap();
        let p = SpectralProblem::new(&m).unwrap();
        let q = C::new(0.7, 0.0);
        assert_eq!(resolvent_at_infinity(&p, q, &vec![0.0; 41]).unwrap(), C::new(0.0, 0.0));
        let z0 = crate::spectral::eval_d(&p, q).unwrap();
        let v = resolvent_at_infinity(&p, q, &vec![1.0; 41]).unwrap();
        assert!((v - (z0 - 1.0) / (q * z0)).norm() < 1e-12);
        let rb = bm(16, BoundaryCase::ReflectingRight);
        let pb = SpectralProblem::new(&rb).unwrap();
        assert!(matches!(resolvent_at_infinity(&pb, q, &[1.0; 17]), Err(Error::WrongCase(_))));
    }
}
