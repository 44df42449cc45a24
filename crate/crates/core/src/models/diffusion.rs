//! One-dimensional diffusions in natural-scale form.
//!
//! For `dX = b(X) dt + sigma(X) dB` the scale derivative is
//! `s'(x) = exp(-int_0^x 2b/sigma^2)`, the speed density is
//! `2 / (sigma^2 s')`, and `W(x, y) = s(y) - s(x)`.

use crate::error::{Error, Result};
use crate::model::{
    BoundaryCase, Model, ReferenceMeasure, RightEnd, ScaleKernel, StateGrid,
};
use crate::models::Dynamics;

#[derive(Debug, Clone)]
pub struct DiffusionSpec {
    pub grid: StateGrid,
    /// Drift samples `b(x_i)`.
    pub drift: Vec<f64>,
    /// Diffusion samples `sigma(x_i)`.
    pub sigma: Vec<f64>,
    pub boundary: BoundaryCase,
}

impl DiffusionSpec {
    /// Samples `b` and `sigma` on a uniform grid of `intervals` cells over `[0, length]`.
    pub fn from_fns(
        intervals: usize,
        length: f64,
        boundary: BoundaryCase,
        b: impl Fn(f64) -> f64,
        sigma: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let grid = StateGrid::uniform(
            intervals,
            length,
            boundary != BoundaryCase::EntranceInfinity,
        )?;
        let drift = grid.points().iter().map(|&x| b(x)).collect();
        let sigma = grid.points().iter().map(|&x| sigma(x)).collect();
        Ok(Self {
            grid,
            drift,
            sigma,
            boundary,
        })
    }
}

/// Built-in drift coefficients, by name.
pub fn named_drift(name: &str) -> Option<fn(f64) -> f64> {
    match name {
        "zero" => Some(|_| 0.0),
        "ou" => Some(|x| -x),
        "unit_up" => Some(|_| 1.0),
        "unit_down" => Some(|_| -1.0),
        _ => None,
    }
}

/// Built-in diffusion coefficients, by name.
pub fn named_sigma(name: &str) -> Option<fn(f64) -> f64> {
    match name {
        "unit" => Some(|_| 1.0),
        "half" => Some(|_| 0.5),
        _ => None,
    }
}

/// Divided-difference derivative of grid samples, second order in the interior.
fn derivative(x: &[f64], f: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
        d[i] = (f[i + 1] - f[i]) * h0 / (h1 * (h0 + h1)) + (f[i] - f[i - 1]) * h1 / (h0 * (h0 + h1));
    }
    d[0] = 2.0 * (f[1] - f[0]) / (x[1] - x[0]) - d[1];
    d[n - 1] = 2.0 * (f[n - 1] - f[n - 2]) / (x[n - 1] - x[n - 2]) - d[n - 2];
    d
}

/// Cumulative trapezoid with the Euler-Maclaurin end correction per cell.
fn cumulative(x: &[f64], f: &[f64], df: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for k in 1..x.len() {
        let h = x[k] - x[k - 1];
        out[k] = out[k - 1] + 0.5 * h * (f[k - 1] + f[k]) - h * h / 12.0 * (df[k] - df[k - 1]);
    }
    out
}

/// Natural scale on the given nodes.
fn natural_scale(x: &[f64], drift: &[f64], sigma: &[f64]) -> Vec<f64> {
    let g: Vec<f64> = drift
        .iter()
        .zip(sigma)
        .map(|(b, s)| 2.0 * b / (s * s))
        .collect();
    let phi = cumulative(x, &g, &derivative(x, &g));
    let sp: Vec<f64> = phi.iter().map(|p| (-p).exp()).collect();
    let dsp: Vec<f64> = sp.iter().zip(&g).map(|(s, g)| -g * s).collect();
    cumulative(x, &sp, &dsp)
}

pub fn build_diffusion(spec: &DiffusionSpec) -> Result<Model> {
    let x = spec.grid.points();
    let n = x.len();
    if spec.drift.len() != n || spec.sigma.len() != n {
        return Err(Error::Dimension(format!(
            "grid has {n} points, drift {}, sigma {}",
            spec.drift.len(),
            spec.sigma.len()
        )));
    }
    if n < 3 {
        return Err(Error::InvalidModel("diffusion grid needs at least 3 points".into()));
    }
    if let Some(i) = spec.sigma.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidModel(format!(
            "sigma(x_{i}) = {} must be positive",
            spec.sigma[i]
        )));
    }
    if let Some(i) = spec.drift.iter().position(|b| !b.is_finite()) {
        return Err(Error::InvalidModel(format!("drift(x_{i}) is not finite")));
    }
    let scale = natural_scale(x, &spec.drift, &spec.sigma);
    let g: Vec<f64> = spec
        .drift
        .iter()
        .zip(&spec.sigma)
        .map(|(b, s)| 2.0 * b / (s * s))
        .collect();
    let phi = cumulative(x, &g, &derivative(x, &g));
    let density: Vec<f64> = phi
        .iter()
        .zip(&spec.sigma)
        .map(|(p, s)| 2.0 * p.exp() / (s * s))
        .collect();
    if scale.iter().chain(&density).any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel("non-finite scale or speed quadrature".into()));
    }

    // Richardson estimate from the even-index subgrid.
    let quadrature_error = if n >= 5 {
        let idx: Vec<usize> = (0..n).step_by(2).collect();
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let coarse = natural_scale(&pick(x), &pick(&spec.drift), &pick(&spec.sigma));
        let k = *idx.last().unwrap();
        (scale[k] - coarse[coarse.len() - 1]).abs() / scale[k].abs().max(f64::MIN_POSITIVE)
    } else {
        f64::NAN
    };

    let grid = match (spec.boundary, spec.grid.right_end()) {
        (BoundaryCase::EntranceInfinity, RightEnd::Boundary(l)) => {
            StateGrid::from_parts(x.to_vec(), RightEnd::Truncation(l))
        }
        _ => spec.grid.clone(),
    };
    let measure = ReferenceMeasure::trapezoid(&grid, &density)?;
    let model = Model {
        grid,
        measure,
        kernel: ScaleKernel::from_scale(scale.clone()),
        boundary: spec.boundary,
        dynamics: Dynamics::Diffusion {
            drift: spec.drift.clone(),
            sigma: spec.sigma.clone(),
            scale,
            quadrature_error,
        },
    };
    model.ensure_valid()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scale::exit_laplace;
    use num_complex::Complex64;

    #[test]
    fn brownian_is_natural_scale() {
        let spec = DiffusionSpec::from_fns(64, 1.0, BoundaryCase::KilledBoth, |_| 0.0, |_| 1.0).unwrap();
        let m = build_diffusion(&spec).unwrap();
        for i in 0..=64 {
            for j in (i + 1)..=64 {
                assert!((m.k(i, j) - (m.grid.x(j) - m.grid.x(i))).abs() < 1e-14);
            }
        }
        for k in 1..64 {
            assert!((m.w(k) - 2.0 / 64.0).abs() < 1e-14);
        }
        assert!((m.w(64) - 1.0 / 64.0).abs() < 1e-14);
    }

    #[test]
    fn gamblers_ruin() {
        let spec = DiffusionSpec::from_fns(64, 1.0, BoundaryCase::KilledBoth, |_| 0.0, |_| 1.0).unwrap();
        let m = build_diffusion(&spec).unwrap();
        let e = exit_laplace(&m, Complex64::new(0.0, 0.0), 0, 16, 64).unwrap();
        assert!((e.down.re - 0.75).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_coefficients() {
        let mut spec = DiffusionSpec::from_fns(16, 1.0, BoundaryCase::KilledBoth, |_| 0.0, |_| 1.0).unwrap();
        spec.sigma[3] = 0.0;
        assert!(build_diffusion(&spec).is_err());
        spec.sigma[3] = 1.0;
        spec.drift[2] = f64::NAN;
        assert!(build_diffusion(&spec).is_err());
        spec.drift[2] = 0.0;
        spec.drift.pop();
        assert!(matches!(build_diffusion(&spec), Err(Error::Dimension(_))));
    }

    #[test]
    fn builtins_resolve() {
        assert_eq!(named_drift("ou").unwrap()(2.0), -2.0);
        assert_eq!(named_sigma("unit").unwrap()(0.3), 1.0);
        assert!(named_drift("nope").is_none());
    }
}
