//! Browser demo: scale curves, quasi-stationary laws and spectra of a few
//! built-in models. The plain functions return flat `f64` arrays and are
//! wrapped for JavaScript by `wasm-bindgen`.

use nojump::model::BoundaryCase;
use nojump::models::{build_bm_closed_form, build_chain, build_diffusion, BmSpec, ChainSpec, DiffusionSpec};
use nojump::qsd::qsd_bundle;
use nojump::scale::{wq_eval, Method, DEFAULT_TOL};
use nojump::spectral::{decay_parameter, spectral_gap, spectrum_in_rect, Rect, SpectralProblem};
use nojump::Model;
use num_complex::Complex64;
use wasm_bindgen::prelude::*;

/// Largest grid the page may request.
pub const MAX_SIZE: usize = 2048;

/// Names accepted by the `model` argument.
pub const MODELS: [&str; 4] = ["bm_killed", "bm_reflecting", "ou_reflecting", "birth_death"];

/// Builds a named model with `n` intervals (diffusions) or `n` states (chains).
pub fn build(model: &str, n: usize) -> Result<Model, String> {
    if !(2..=MAX_SIZE).contains(&n) {
        return Err(format!("size {n} outside 2..={MAX_SIZE}"));
    }
    let bm = |boundary| {
        build_bm_closed_form(&BmSpec { length: 1.0, boundary, intervals: n }).map(|(m, _)| m)
    };
    let built = match model {
        "bm_killed" => bm(BoundaryCase::KilledBoth),
        "bm_reflecting" => bm(BoundaryCase::ReflectingRight),
        "ou_reflecting" => DiffusionSpec::from_fns(n, 2.0, BoundaryCase::ReflectingRight, |x| -x, |_| 1.0)
            .and_then(|s| build_diffusion(&s)),
        "birth_death" => build_chain(&ChainSpec::birth_death(
            n,
            |_| 1.0,
            |k| k as f64,
            BoundaryCase::ReflectingRight,
        )),
        _ => return Err(format!("unknown model \"{model}\"; expected one of {MODELS:?}")),
    };
    built.map_err(|e| e.to_string())
}

/// `[x, Re W, Im W, Re Z, Im Z]` per grid point for `W^(q)(0, x)` and `Z^(q)(0, x)`.
pub fn scale_values(model: &str, n: usize, q_re: f64, q_im: f64) -> Result<Vec<f64>, String> {
    let m = build(model, n)?;
    let e = wq_eval(&m, Complex64::new(q_re, q_im), Method::Volterra, DEFAULT_TOL).map_err(|e| e.to_string())?;
    Ok((0..=m.last())
        .flat_map(|j| {
            let (w, z) = (e.w(0, j), e.z(0, j));
            [m.grid.x(j), w.re, w.im, z.re, z.im]
        })
        .collect())
}

/// `[lambda0, x_0, d_0, x_1, d_1, ...]` with `d` the quasi-stationary mass per
/// unit length (per state for chains).
pub fn qsd_values(model: &str, n: usize) -> Result<Vec<f64>, String> {
    let m = build(model, n)?;
    let p = SpectralProblem::new(&m).map_err(|e| e.to_string())?;
    let d = decay_parameter(&p).map_err(|e| e.to_string())?;
    let b = qsd_bundle(&p, d.lambda0).map_err(|e| e.to_string())?;
    let x = m.grid.points();
    let chain = model == "birth_death";
    let cell = |i: usize| {
        let lo = if i == 0 { x[0] } else { 0.5 * (x[i - 1] + x[i]) };
        let hi = if i == m.last() { x[i] } else { 0.5 * (x[i] + x[i + 1]) };
        hi - lo
    };
    let mut out = vec![d.lambda0];
    for (i, &xi) in x.iter().enumerate() {
        out.push(xi);
        out.push(if chain { b.nu[i] } else { b.nu[i] / cell(i) });
    }
    Ok(out)
}

/// `[re, im, residual]` per zero. Without a rectangle (all bounds zero) the
/// leading zeros from the decay-parameter search are returned.
pub fn spectrum_values(model: &str, n: usize, re_min: f64, re_max: f64, im_min: f64, im_max: f64) -> Result<Vec<f64>, String> {
    let m = build(model, n)?;
    let p = SpectralProblem::new(&m).map_err(|e| e.to_string())?;
    let zeros = if [re_min, re_max, im_min, im_max].iter().all(|v| *v == 0.0) {
        spectral_gap(&p).map_err(|e| e.to_string())?.zeros
    } else {
        spectrum_in_rect(&p, Rect { re_min, re_max, im_min, im_max }).map_err(|e| e.to_string())?.zeros
    };
    Ok(zeros.iter().flat_map(|z| [z.q.re, z.q.im, z.residual]).collect())
}

#[wasm_bindgen]
pub fn scale_curve(model: &str, n: usize, q_re: f64, q_im: f64) -> Result<Vec<f64>, JsError> {
    scale_values(model, n, q_re, q_im).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn qsd_curve(model: &str, n: usize) -> Result<Vec<f64>, JsError> {
    qsd_values(model, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn spectrum(model: &str, n: usize, re_min: f64, re_max: f64, im_min: f64, im_max: f64) -> Result<Vec<f64>, JsError> {
    spectrum_values(model, n, re_min, re_max, im_min, im_max).map_err(|e| JsError::new(&e))
}
