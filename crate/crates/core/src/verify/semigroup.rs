//! Checks of the leading eigen-structure against the transition semigroup.

use serde::Serialize;

use super::{transition_oracle, SubGenerator};
use crate::error::{Error, Result};
use crate::qsd::{yaglom_projection, QsdBundle};

/// Times at which the invariant function identity is checked.
pub const INVARIANCE_TIMES: [f64; 3] = [0.5, 1.0, 2.0];
/// Simpson intervals per unit time for the time average.
const SIMPSON_PER_UNIT: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub enum CheckMode {
    /// `sup_x |e^{lambda0 t} p_t zinv - zinv|` at each of [`INVARIANCE_TIMES`].
    Invariance,
    /// Relative sup error of `(1/t) int_0^t e^{lambda0 s} p_s f ds` against the projection of `f`.
    MeanYaglom { f: Vec<f64>, t: f64 },
    /// `sup_x zinv(x) |q_t f(x) - mu(f)|` at each time, with the fitted decay rate.
    QProcess { f: Vec<f64>, times: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SemigroupPoint {
    pub t: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemigroupReport {
    pub mode: &'static str,
    pub points: Vec<SemigroupPoint>,
    pub max_residual: f64,
    /// `-slope` of `log residual` against `t` (Q-process mode only).
    pub fitted_rate: Option<f64>,
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn check_len(sub: &SubGenerator, bundle: &QsdBundle, f: Option<&[f64]>) -> Result<()> {
    let n = bundle.zinv.len();
    if sub.states.iter().any(|&i| i >= n) {
        return Err(Error::Dimension("sub-generator states lie outside the bundle grid".into()));
    }
    if let Some(f) = f {
        if f.len() != n {
            return Err(Error::Dimension(format!("f has {} values for {n} grid points", f.len())));
        }
    }
    Ok(())
}

fn invariance(bundle: &QsdBundle, sub: &SubGenerator) -> Result<Vec<SemigroupPoint>> {
    let z = sub.restrict(&bundle.zinv);
    INVARIANCE_TIMES
        .iter()
        .map(|&t| {
            let pz: Vec<f64> = transition_oracle(sub, t, &z)?
                .iter()
                .map(|v| v * (bundle.lambda0 * t).exp())
                .collect();
            Ok(SemigroupPoint { t, residual: sup_diff(&pz, &z) })
        })
        .collect()
}

fn mean_yaglom(bundle: &QsdBundle, sub: &SubGenerator, f: &[f64], t: f64) -> Result<SemigroupPoint> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("averaging time {t} must be positive")));
    }
    let intervals = (((t * SIMPSON_PER_UNIT).ceil() as usize).max(2) + 1) & !1;
    let h = t / intervals as f64;
    let mut v = sub.restrict(f);
    let mut acc = vec![0.0; v.len()];
    for k in 0..=intervals {
        if k > 0 {
            v = transition_oracle(sub, h, &v)?;
        }
        let c = if k == 0 || k == intervals {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let g = c * (bundle.lambda0 * k as f64 * h).exp();
        for (a, x) in acc.iter_mut().zip(&v) {
            *a += g * x;
        }
    }
    let avg: Vec<f64> = acc.iter().map(|a| a * h / 3.0 / t).collect();
    let target = sub.restrict(&yaglom_projection(bundle, f)?);
    let scale = target.iter().fold(0.0, |a: f64, v| a.max(v.abs())).max(1e-300);
    Ok(SemigroupPoint { t, residual: sup_diff(&avg, &target) / scale })
}

fn qprocess(bundle: &QsdBundle, sub: &SubGenerator, f: &[f64], times: &[f64]) -> Result<Vec<SemigroupPoint>> {
    let z = sub.restrict(&bundle.zinv);
    if z.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Consistency("the invariant function must be positive on transient states".into()));
    }
    let fr = sub.restrict(f);
    let mu_f: f64 = (0..bundle.zinv.len())
        .map(|u| bundle.w0[u] * bundle.zinv[u] * bundle.weights[u] * f[u])
        .sum::<f64>()
        / bundle.rho;
    let hf: Vec<f64> = z.iter().zip(&fr).map(|(a, b)| a * b).collect();
    times
        .iter()
        .map(|&t| {
            let p = transition_oracle(sub, t, &hf)?;
            let e = (bundle.lambda0 * t).exp();
            let residual = p
                .iter()
                .zip(&z)
                .map(|(pv, zv)| (e * pv - zv * mu_f).abs())
                .fold(0.0, f64::max);
            Ok(SemigroupPoint { t, residual })
        })
        .collect()
}

/// Least-squares rate of `log residual` over the points above `floor`.
fn fit_rate(points: &[SemigroupPoint], floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.residual > floor)
        .map(|p| (p.t, p.residual.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| -sxy / sxx)
}

pub fn semigroup_checks(bundle: &QsdBundle, sub: &SubGenerator, mode: &CheckMode) -> Result<SemigroupReport> {
    let (name, points, fitted_rate) = match mode {
        CheckMode::Invariance => {
            check_len(sub, bundle, None)?;
            ("invariance", invariance(bundle, sub)?, None)
        }
        CheckMode::MeanYaglom { f, t } => {
            check_len(sub, bundle, Some(f))?;
            ("mean_yaglom", vec![mean_yaglom(bundle, sub, f, *t)?], None)
        }
        CheckMode::QProcess { f, times } => {
            check_len(sub, bundle, Some(f))?;
            let pts = qprocess(bundle, sub, f, times)?;
            let rate = fit_rate(&pts, 1e-11);
            ("qprocess", pts, rate)
        }
    };
    let max_residual = points.iter().map(|p| p.residual).fold(0.0, f64::max);
    Ok(SemigroupReport { mode: name, points, max_residual, fitted_rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BoundaryCase;
    use crate::models::{build_chain, ChainSpec};
    use crate::qsd::qsd_bundle;
    use crate::spectral::{decay_parameter, SpectralProblem};

    fn bundle_for(spec: &ChainSpec) -> (QsdBundle, SubGenerator) {
        let m = build_chain(spec).unwrap();
        let p = SpectralProblem::new(&m).unwrap();
        let d = decay_parameter(&p).unwrap();
        (qsd_bundle(&p, d.lambda0).unwrap(), SubGenerator::from_model(&m).unwrap())
    }

    #[test]
    fn two_state_invariance() {
        let (b, s) = bundle_for(&ChainSpec::two_state(1.0, 1.0, 1.0));
        let r = semigroup_checks(&b, &s, &CheckMode::Invariance).unwrap();
        assert_eq!(r.points.len(), 3);
        assert!(r.max_residual < 1e-8, "{}", r.max_residual);
    }

    #[test]
    fn mean_yaglom_error_shrinks_like_one_over_t() {
        let (b, s) = bundle_for(&ChainSpec::two_state(1.0, 1.0, 1.0));
        let f = vec![0.0, 0.0, 1.0];
        let e10 = semigroup_checks(&b, &s, &CheckMode::MeanYaglom { f: f.clone(), t: 10.0 }).unwrap();
        let e40 = semigroup_checks(&b, &s, &CheckMode::MeanYaglom { f, t: 40.0 }).unwrap();
        let ratio = e10.max_residual / e40.max_residual;
        assert!((ratio - 4.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn qprocess_rate_matches_gap() {
        let spec = ChainSpec::birth_death(6, |_| 1.0, |k| k as f64, BoundaryCase::ReflectingRight);
        let (b, s) = bundle_for(&spec);
        let e = super::super::eig_decay_oracle(&s).unwrap();
        let f: Vec<f64> = (0..b.zinv.len()).map(|i| if i == 2 { 1.0 / b.zinv[2] } else { 0.0 }).collect();
        let times: Vec<f64> = (1..=8).map(|k| k as f64).collect();
        let r = semigroup_checks(&b, &s, &CheckMode::QProcess { f, times }).unwrap();
        let gap = e.lambda1 - e.lambda0;
        let rate = r.fitted_rate.unwrap();
        assert!(rate > 0.5 * gap && rate < 1.5 * gap, "{rate} vs {gap}");
    }

    #[test]
    fn dimension_mismatch() {
        let (b, s) = bundle_for(&ChainSpec::two_state(1.0, 1.0, 1.0));
        assert!(semigroup_checks(&b, &s, &CheckMode::MeanYaglom { f: vec![1.0], t: 1.0 }).is_err());
    }
}
