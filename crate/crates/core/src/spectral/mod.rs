//! Zeros of the characteristic function `D(q)` of a model: the decay
//! parameter, the spectral gap and the spectrum inside a search box.
//!
//! `D` depends on the boundary case:
//!
//! | case               | `D(q)`             |
//! |--------------------|--------------------|
//! | entrance at infinity | `Z^(q)(0)`       |
//! | reflecting right end | `Z^(q)(0, l)`    |
//! | killed at both ends  | `W^(q)(0, l)`    |

mod boundary;
mod rect;

pub use boundary::{
    classify_boundary, expected_downcrossing_time, BoundaryReport, Downcrossing, TailRow, Verdict,
};
pub use rect::{spectrum_in_rect, Cell, Rect, RectSpectrum, Zero};

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{check_rate, BoundaryCase, ComplexRate, Model};
use crate::scale::{scale_col, scale_row, z_col};

type C = Complex64;

pub const DEFAULT_LAMBDA_MAX: f64 = 50.0;
pub const DEFAULT_HALF_HEIGHT: f64 = 20.0;
const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DKind {
    ZInfinity,
    ZInterval,
    WInterval,
}

impl DKind {
    pub fn for_case(bc: BoundaryCase) -> Self {
        match bc {
            BoundaryCase::EntranceInfinity => DKind::ZInfinity,
            BoundaryCase::ReflectingRight => DKind::ZInterval,
            BoundaryCase::KilledBoth => DKind::WInterval,
        }
    }
}

/// A model together with its characteristic function and a search box
/// `[-lambda_max, 0] x [-half_height, half_height]`.
#[derive(Debug, Clone, Copy)]
pub struct SpectralProblem<'a> {
    pub model: &'a Model,
    pub kind: DKind,
    pub lambda_max: f64,
    pub half_height: f64,
}

impl<'a> SpectralProblem<'a> {
    pub fn new(model: &'a Model) -> Result<Self> {
        Self::with_box(model, DEFAULT_LAMBDA_MAX, DEFAULT_HALF_HEIGHT)
    }

    pub fn with_box(model: &'a Model, lambda_max: f64, half_height: f64) -> Result<Self> {
        if !(lambda_max > 0.0) || !lambda_max.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda_max = {lambda_max} must be positive")));
        }
        if !(half_height >= 0.0) || !half_height.is_finite() {
            return Err(Error::InvalidArgument(format!("half height = {half_height} must be nonnegative")));
        }
        model.ensure_valid()?;
        Ok(Self {
            model,
            kind: DKind::for_case(model.boundary),
            lambda_max,
            half_height,
        })
    }

    /// True when `D` is evaluated on a truncated state space.
    pub fn tail_truncated(&self) -> bool {
        self.kind == DKind::ZInfinity
    }
}

/// `D(q)`.
pub fn eval_d(p: &SpectralProblem, q: ComplexRate) -> Result<C> {
    check_rate(q)?;
    let m = p.model;
    let row = scale_row(m, q, 0);
    Ok(match p.kind {
        DKind::WInterval => row[m.last()],
        DKind::ZInfinity | DKind::ZInterval => {
            crate::scale::z_from_row(m, q, &row, 0, m.end_limit())
        }
    })
}

/// `dD/dq` from the resolvent identities:
/// `sum_u W^(q)(0,u) Z^(q)(u, end) w_u` or `sum_u W^(q)(0,u) W^(q)(u, l) w_u`.
pub fn eval_d_prime(p: &SpectralProblem, q: ComplexRate) -> Result<C> {
    Ok(eval_d_pair(p, q)?.1)
}

/// `(D(q), D'(q))` sharing one row evaluation.
pub fn eval_d_pair(p: &SpectralProblem, q: ComplexRate) -> Result<(C, C)> {
    check_rate(q)?;
    let m = p.model;
    let row = scale_row(m, q, 0);
    let end = m.end_limit();
    match p.kind {
        DKind::WInterval => {
            let col = scale_col(m, q, m.last());
            let mut d1 = C::new(0.0, 0.0);
            for k in 1..m.last() {
                d1 += row[k] * col[k] * m.w(k);
            }
            Ok((row[m.last()], d1))
        }
        DKind::ZInfinity | DKind::ZInterval => {
            let z = z_col(m, q, end);
            let mut d0 = C::new(0.0, 0.0);
            let mut d1 = C::new(0.0, 0.0);
            for u in 1..end.min(m.last() + 1) {
                d0 += row[u] * m.w(u);
                d1 += row[u] * z[u] * m.w(u);
            }
            Ok((1.0 + q * d0, d1))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayParameter {
    pub lambda0: f64,
    /// `|D(-lambda0)|`.
    pub residual: f64,
    /// `D'(-lambda0)`, bounded away from zero for a simple root.
    pub derivative: f64,
    pub simple_root: bool,
    /// True when the result came from bisection after Newton failed.
    pub bisection_fallback: bool,
    pub tail_truncated: bool,
}

/// Smallest `lambda > 0` with `D(-lambda) = 0`.
///
/// Scans `(0, lambda_max]` geometrically (factor 1.5, each step split in
/// eight), brackets the first sign change, then polishes with safeguarded Newton.
pub fn decay_parameter(p: &SpectralProblem) -> Result<DecayParameter> {
    let d = |lam: f64| -> Result<f64> { Ok(eval_d(p, C::new(-lam, 0.0))?.re) };
    let d0 = d(0.0)?;
    if !(d0 > 0.0) {
        return Err(Error::Consistency(format!("D(0) = {d0} must be positive")));
    }
    let lam_max = p.lambda_max;
    let mut lo = 0.0;
    let mut hi = f64::NAN;
    let mut outer = lam_max * 1e-6;
    'scan: loop {
        let start = lo;
        let stop = outer.min(lam_max);
        for s in 1..=8 {
            let lam = start + (stop - start) * s as f64 / 8.0;
            let v = d(lam)?;
            if v <= 0.0 {
                hi = lam;
                break 'scan;
            }
            lo = lam;
        }
        if stop >= lam_max {
            break;
        }
        outer *= 1.5;
    }
    if hi.is_nan() {
        return Err(Error::NoZero(format!(
            "D(-lambda) has no sign change on (0, {lam_max}]; lambda_max too small or no zero"
        )));
    }

    // Shrink the bracket, then Newton with bisection safeguard.
    let mut x = 0.5 * (lo + hi);
    let mut converged = false;
    for _ in 0..NEWTON_MAX_ITER {
        let (f, fp) = eval_d_pair(p, C::new(-x, 0.0))?;
        let (f, dfdl) = (f.re, -fp.re);
        if f > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if f == 0.0 {
            converged = true;
            break;
        }
        let step = f / dfdl;
        let next = x - step;
        let next = if dfdl != 0.0 && next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
        let moved = (next - x).abs();
        x = next;
        if moved <= NEWTON_TOL * x.max(1e-300) || hi - lo <= NEWTON_TOL * x {
            converged = true;
            break;
        }
    }
    let bisection_fallback = !converged;
    if !converged {
        while hi - lo > NEWTON_TOL * hi {
            let mid = 0.5 * (lo + hi);
            if d(mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        x = 0.5 * (lo + hi);
    }
    let (f, fp) = eval_d_pair(p, C::new(-x, 0.0))?;
    let simple_root = fp.norm() > 1e-8 * d0.abs().max(1.0) / x.max(1e-300);
    Ok(DecayParameter {
        lambda0: x,
        residual: f.norm(),
        derivative: fp.re,
        simple_root,
        bisection_fallback,
        tail_truncated: p.tail_truncated(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub lambda0: Option<f64>,
    pub lambda1: Option<f64>,
    pub gap: Option<f64>,
    pub zeros: Vec<Zero>,
    pub certificates: Vec<Cell>,
    /// The box the statement about further zeros refers to.
    pub search_box: Rect,
    pub note: String,
}

/// Decay parameter, next zero and gap, relative to the search box.
pub fn spectral_gap(p: &SpectralProblem) -> Result<SpectrumReport> {
    let dp = decay_parameter(p)?;
    let lambda0 = dp.lambda0;
    let rect = Rect {
        re_min: -p.lambda_max,
        re_max: -0.5 * lambda0,
        im_min: -p.half_height,
        im_max: p.half_height,
    };
    let found = spectrum_in_rect(p, rect)?;
    let tol = 1e-6 * lambda0.max(1.0);
    if let Some(z) = found.zeros.iter().find(|z| z.q.re > -lambda0 + tol) {
        return Err(Error::Consistency(format!(
            "zero at {} lies to the right of -lambda0 = {}",
            z.q, -lambda0
        )));
    }
    if !found.zeros.iter().any(|z| (z.q - C::new(-lambda0, 0.0)).norm() <= tol) {
        return Err(Error::Consistency(format!(
            "argument-principle search did not recover the zero at -lambda0 = {}",
            -lambda0
        )));
    }
    let lambda1 = found
        .zeros
        .iter()
        .filter(|z| (z.q - C::new(-lambda0, 0.0)).norm() > tol)
        .map(|z| -z.q.re)
        .fold(f64::INFINITY, f64::min);
    if !lambda1.is_finite() {
        return Err(Error::NoZero(format!(
            "no second zero with Re q >= {}; increase lambda_max",
            -p.lambda_max
        )));
    }
    if lambda1 <= lambda0 + tol {
        return Err(Error::GapViolation { lambda0, lambda1 });
    }
    Ok(SpectrumReport {
        lambda0: Some(lambda0),
        lambda1: Some(lambda1),
        gap: Some(lambda1 - lambda0),
        zeros: found.zeros,
        certificates: found.cells,
        search_box: found.rect,
        note: format!(
            "no further zeros with Re q >= {} and |Im q| <= {} (search box only)",
            -p.lambda_max, p.half_height
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_bm_closed_form, build_chain, BmSpec, ChainSpec};
    use std::f64::consts::PI;

    fn bm(n: usize, bc: BoundaryCase) -> Model {
        build_bm_closed_form(&BmSpec { length: 1.0, boundary: bc, intervals: n }).unwrap().0
    }

    #[test]
    fn d_at_zero() {
        let m = bm(64, BoundaryCase::ReflectingRight);
        let p = SpectralProblem::new(&m).unwrap();
        assert_eq!(eval_d(&p, C::new(0.0, 0.0)).unwrap(), C::new(1.0, 0.0));
        let dp = eval_d_prime(&p, C::new(0.0, 0.0)).unwrap();
        let wbar = crate::scale::wbar(&m, 0, crate::scale::Upper::End).unwrap().value;
        assert!((dp.re - wbar).abs() < 1e-14);
        let k = bm(64, BoundaryCase::KilledBoth);
        let p = SpectralProblem::new(&k).unwrap();
        assert_eq!(eval_d(&p, C::new(0.0, 0.0)).unwrap().re, k.k(0, 64));
    }

    #[test]
    fn derivative_matches_central_difference() {
        for m in [bm(128, BoundaryCase::KilledBoth), bm(128, BoundaryCase::ReflectingRight)] {
            let p = SpectralProblem::new(&m).unwrap();
            for q in [C::new(1.0, 0.0), C::new(-3.0, 2.0)] {
                let h = 1e-5;
                let fd = (eval_d(&p, q + h).unwrap() - eval_d(&p, q - h).unwrap()) / (2.0 * h);
                let an = eval_d_prime(&p, q).unwrap();
                assert!((fd - an).norm() < 1e-7 * (1.0 + an.norm()), "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn brownian_decay_parameters() {
        let m = bm(1024, BoundaryCase::KilledBoth);
        let d = decay_parameter(&SpectralProblem::new(&m).unwrap()).unwrap();
        assert!((d.lambda0 - PI * PI / 2.0).abs() < 1e-3);
        assert!(d.simple_root && !d.bisection_fallback);
        let m = bm(1024, BoundaryCase::ReflectingRight);
        let d = decay_parameter(&SpectralProblem::new(&m).unwrap()).unwrap();
        assert!((d.lambda0 - PI * PI / 8.0).abs() < 1e-3);
    }

    #[test]
    fn two_state_spectrum() {
        let m = build_chain(&ChainSpec::two_state(1.0, 1.0, 1.0)).unwrap();
        let p = SpectralProblem::new(&m).unwrap();
        let r = spectral_gap(&p).unwrap();
        let s5 = 5f64.sqrt();
        assert!((r.lambda0.unwrap() - (3.0 - s5) / 2.0).abs() < 1e-12);
        assert!((r.lambda1.unwrap() - (3.0 + s5) / 2.0).abs() < 1e-10);
        assert!((r.gap.unwrap() - s5).abs() < 1e-10);
        // D(q) = q^2 + 3q + 1
        let q = C::new(0.7, -1.1);
        assert!((eval_d(&p, q).unwrap() - (q * q + 3.0 * q + 1.0)).norm() < 1e-14);
    }

    #[test]
    fn no_sign_change_is_reported() {
        let m = bm(64, BoundaryCase::KilledBoth);
        let p = SpectralProblem::with_box(&m, 2.0, 1.0).unwrap();
        assert!(matches!(decay_parameter(&p), Err(Error::NoZero(_))));
        assert!(SpectralProblem::with_box(&m, -1.0, 1.0).is_err());
    }
}
