//! Brownian motion on `(0, l)` with `W(x, y) = y - x` and `m = 2 dx`, whose
//! q-scale functions are known in closed form.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{BoundaryCase, Model};
use crate::models::{build_diffusion, DiffusionSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BmSpec {
    pub length: f64,
    pub boundary: BoundaryCase,
    pub intervals: usize,
}

/// Closed-form reference values for [`BmSpec`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BmOracle {
    pub length: f64,
    pub boundary: BoundaryCase,
}

/// `sinh(z) / z`, accurate near `z = 0`.
fn sinhc(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        let z2 = z * z;
        1.0 + z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sinh() / z
    }
}

impl BmOracle {
    /// `W^(q)(x, y) = sinh(sqrt(2q)(y - x)) / sqrt(2q)` for `y > x`, else 0.
    pub fn w(&self, q: Complex64, x: f64, y: f64) -> Complex64 {
        if y <= x {
            return Complex64::new(0.0, 0.0);
        }
        let d = y - x;
        d * sinhc((2.0 * q).sqrt() * d)
    }

    /// `Z^(q)(x, y) = cosh(sqrt(2q)(y - x))`.
    pub fn z(&self, q: Complex64, x: f64, y: f64) -> Complex64 {
        if y <= x {
            return Complex64::new(1.0, 0.0);
        }
        ((2.0 * q).sqrt() * (y - x)).cosh()
    }

    /// `k`-th zero (`k >= 1`) of the characteristic function of the boundary case.
    pub fn zero(&self, k: usize) -> Result<f64> {
        if k == 0 {
            return Err(Error::InvalidArgument("zeros are numbered from 1".into()));
        }
        let l2 = self.length * self.length;
        match self.boundary {
            BoundaryCase::KilledBoth => Ok(-((k * k) as f64) * PI * PI / (2.0 * l2)),
            BoundaryCase::ReflectingRight => {
                let a = k as f64 - 0.5;
                Ok(-a * a * PI * PI / (2.0 * l2))
            }
            BoundaryCase::EntranceInfinity => Err(Error::WrongCase(
                "Brownian motion has no entrance boundary at infinity".into(),
            )),
        }
    }

    pub fn lambda0(&self) -> Result<f64> {
        Ok(-self.zero(1)?)
    }

    pub fn gap(&self) -> Result<f64> {
        Ok(self.zero(1)? - self.zero(2)?)
    }

    /// QSD density with respect to length.
    pub fn qsd_density(&self, x: f64) -> Result<f64> {
        let l = self.length;
        match self.boundary {
            BoundaryCase::KilledBoth => Ok(PI / (2.0 * l) * (PI * x / l).sin()),
            BoundaryCase::ReflectingRight => Ok(PI / (2.0 * l) * (PI * x / (2.0 * l)).sin()),
            BoundaryCase::EntranceInfinity => Err(Error::WrongCase("no entrance case".into())),
        }
    }

    /// Invariant function: `Z^(-l0)(x, l)` (reflecting) or `W^(-k0)(x, l)` (killed).
    pub fn zinv(&self, x: f64) -> Result<f64> {
        let q = Complex64::new(-self.lambda0()?, 0.0);
        match self.boundary {
            BoundaryCase::KilledBoth => Ok(self.w(q, x, self.length).re),
            _ => Ok(self.z(q, x, self.length).re),
        }
    }

    /// `rho = dD/dq` at the leading zero: `2l/pi` (reflecting), `l^3/pi^2` (killed).
    pub fn rho(&self) -> Result<f64> {
        let l = self.length;
        match self.boundary {
            BoundaryCase::KilledBoth => Ok(l * l * l / (PI * PI)),
            BoundaryCase::ReflectingRight => Ok(2.0 * l / PI),
            BoundaryCase::EntranceInfinity => Err(Error::WrongCase("no entrance case".into())),
        }
    }

    /// Green density of Brownian motion killed at `0` and `l`, with respect to `m = 2 dx`.
    pub fn killed_green(&self, q: Complex64, x: f64, u: f64) -> Complex64 {
        let l = self.length;
        self.w(q, x, l) / self.w(q, 0.0, l) * self.w(q, 0.0, u) - self.w(q, x, u)
    }
}

pub fn build_bm_closed_form(spec: &BmSpec) -> Result<(Model, BmOracle)> {
    if !(spec.length > 0.0) {
        return Err(Error::InvalidModel(format!("length {} must be positive", spec.length)));
    }
    if spec.boundary == BoundaryCase::EntranceInfinity {
        return Err(Error::WrongCase("Brownian motion has no entrance boundary at infinity".into()));
    }
    let d = DiffusionSpec::from_fns(spec.intervals, spec.length, spec.boundary, |_| 0.0, |_| 1.0)?;
    let model = build_diffusion(&d)?;
    Ok((
        model,
        BmOracle {
            length: spec.length,
            boundary: spec.boundary,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(bc: BoundaryCase) -> BmOracle {
        BmOracle { length: 1.0, boundary: bc }
    }

    #[test]
    fn reference_values() {
        let o = oracle(BoundaryCase::KilledBoth);
        assert!((o.w(Complex64::new(1.0, 0.0), 0.0, 1.0).re - 1.368298872).abs() < 1e-9);
        assert!((o.zero(1).unwrap() + PI * PI / 2.0).abs() < 1e-12);
        assert!((o.zero(2).unwrap() + 2.0 * PI * PI).abs() < 1e-12);
        assert!((o.gap().unwrap() - 1.5 * PI * PI).abs() < 1e-12);
        let r = oracle(BoundaryCase::ReflectingRight);
        assert!((r.qsd_density(1.0).unwrap() - PI / 2.0).abs() < 1e-15);
        assert!((r.zinv(1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((r.zinv(0.3).unwrap() - (PI * 0.3 / 2.0).sin()).abs() < 1e-12);
        assert!((r.gap().unwrap() - PI * PI).abs() < 1e-12);
    }

    #[test]
    fn rho_matches_finite_difference() {
        for bc in [BoundaryCase::KilledBoth, BoundaryCase::ReflectingRight] {
            let o = oracle(bc);
            let q0 = o.zero(1).unwrap();
            let h = 1e-5;
            let d = |q: f64| {
                let q = Complex64::new(q, 0.0);
                match bc {
                    BoundaryCase::KilledBoth => o.w(q, 0.0, 1.0).re,
                    _ => o.z(q, 0.0, 1.0).re,
                }
            };
            let fd = (d(q0 + h) - d(q0 - h)) / (2.0 * h);
            assert!((fd - o.rho().unwrap()).abs() < 1e-8, "{bc:?}: {fd}");
        }
    }

    #[test]
    fn green_function_value() {
        let o = oracle(BoundaryCase::KilledBoth);
        let g = o.killed_green(Complex64::new(1.0, 0.0), 0.5, 0.5).re;
        let s2 = 2f64.sqrt();
        let exact = (s2 / 2.0).sinh().powi(2) / (s2 * s2.sinh());
        assert!((g - exact).abs() < 1e-14);
        assert!((exact - 0.21527).abs() < 1e-5);
    }

    #[test]
    fn rejects_entrance_case() {
        let spec = BmSpec { length: 1.0, boundary: BoundaryCase::EntranceInfinity, intervals: 8 };
        assert!(build_bm_closed_form(&spec).is_err());
    }
}
