//! Argument-principle zero search in a rectangle.
//!
//! The winding number of `D` around a rectangle is the total change of
//! `arg D` along its boundary divided by `2 pi`. Each edge is sampled
//! adaptively until consecutive samples differ in argument by less than
//! [`MAX_ARG_STEP`] and in modulus by less than a factor two, so the
//! accumulated increment is exact up to rounding. Rectangles are quadrisected
//! until each holds at most one zero, which is then polished by Newton.

use std::collections::HashMap;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ComplexRate;
use crate::spectral::{eval_d, eval_d_pair, SpectralProblem, NEWTON_MAX_ITER, NEWTON_TOL};

type C = Complex64;

const MAX_ARG_STEP: f64 = 0.3;
const MIN_EDGE_SAMPLES: usize = 16;
const MAX_DEPTH: usize = 40;
/// Off-centre split fractions, tried in order when a split line meets a zero.
const SPLITS: [f64; 4] = [0.4637, 0.5419, 0.3917, 0.6173];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rect {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Rect {
    pub fn is_valid(&self) -> bool {
        [self.re_min, self.re_max, self.im_min, self.im_max]
            .iter()
            .all(|v| v.is_finite())
            && self.re_min < self.re_max
            && self.im_min < self.im_max
    }

    fn contains(&self, q: C, margin: f64) -> bool {
        q.re >= self.re_min - margin
            && q.re <= self.re_max + margin
            && q.im >= self.im_min - margin
            && q.im <= self.im_max + margin
    }

    fn center(&self) -> C {
        C::new(0.5 * (self.re_min + self.re_max), 0.5 * (self.im_min + self.im_max))
    }

    fn size(&self) -> f64 {
        (self.re_max - self.re_min).max(self.im_max - self.im_min)
    }

    fn corners(&self) -> [C; 4] {
        [
            C::new(self.re_min, self.im_min),
            C::new(self.re_max, self.im_min),
            C::new(self.re_max, self.im_max),
            C::new(self.re_min, self.im_max),
        ]
    }

    fn grow(&self, by: f64) -> Rect {
        Rect {
            re_min: self.re_min - by,
            re_max: self.re_max + by,
            im_min: self.im_min - by,
            im_max: self.im_max + by,
        }
    }
}

/// A rectangle of the subdivision with its winding-number certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub rect: Rect,
    /// Accumulated argument change divided by `2 pi`, before rounding.
    pub raw_winding: f64,
    pub winding: i64,
    /// False for cells left with winding > 1 at the depth limit.
    pub resolved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Zero {
    #[serde(serialize_with = "ser_complex")]
    pub q: ComplexRate,
    /// `|D(q)|` at the reported zero.
    pub residual: f64,
    /// Index into the certificate list of the cell that holds the zero.
    pub cell: usize,
}

fn ser_complex<S: serde::Serializer>(q: &C, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeTuple;
    let mut t = s.serialize_tuple(2)?;
    t.serialize_element(&q.re)?;
    t.serialize_element(&q.im)?;
    t.end()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RectSpectrum {
    /// The rectangle actually searched (possibly nudged off zeros on its edge).
    pub rect: Rect,
    pub total_winding: i64,
    pub zeros: Vec<Zero>,
    pub cells: Vec<Cell>,
}

struct Search<'p, 'a> {
    p: &'p SpectralProblem<'a>,
    cache: HashMap<(u64, u64), C>,
    cells: Vec<Cell>,
    zeros: Vec<Zero>,
}

#[derive(Debug)]
enum EdgeError {
    /// `D` (numerically) vanishes on the contour.
    Hit,
    Engine(Error),
}

impl From<Error> for EdgeError {
    fn from(e: Error) -> Self {
        EdgeError::Engine(e)
    }
}

impl<'p, 'a> Search<'p, 'a> {
    fn d(&mut self, q: C) -> Result<C> {
        let key = (q.re.to_bits(), q.im.to_bits());
        if let Some(v) = self.cache.get(&key) {
            return Ok(*v);
        }
        let v = eval_d(self.p, q)?;
        self.cache.insert(key, v);
        Ok(v)
    }

    /// Change of `arg D` along the segment `a -> b`.
    fn edge(&mut self, a: C, b: C) -> std::result::Result<f64, EdgeError> {
        let len = (b - a).norm();
        let mut total = 0.0;
        let mut stack: Vec<(f64, f64)> = Vec::new();
        let n0 = MIN_EDGE_SAMPLES;
        for k in (0..n0).rev() {
            stack.push((k as f64 / n0 as f64, (k + 1) as f64 / n0 as f64));
        }
        while let Some((t0, t1)) = stack.pop() {
            let fa = self.d(a + (b - a) * t0)?;
            let fb = self.d(a + (b - a) * t1)?;
            if fa.norm() == 0.0 || fb.norm() == 0.0 {
                return Err(EdgeError::Hit);
            }
            let ratio = fb / fa;
            let step = ratio.arg();
            let modulus = ratio.norm();
            if step.abs() < MAX_ARG_STEP && modulus < 2.0 && modulus > 0.5 {
                total += step;
                continue;
            }
            if (t1 - t0) * len < 1e-11 * (1.0 + a.norm().max(b.norm())) {
                return Err(EdgeError::Hit);
            }
            let mid = 0.5 * (t0 + t1);
            stack.push((mid, t1));
            stack.push((t0, mid));
        }
        Ok(total)
    }

    fn winding(&mut self, r: &Rect) -> std::result::Result<(f64, i64), EdgeError> {
        let c = r.corners();
        let mut total = 0.0;
        for k in 0..4 {
            total += self.edge(c[k], c[(k + 1) % 4])?;
        }
        let raw = total / (2.0 * std::f64::consts::PI);
        let rounded = raw.round();
        if (raw - rounded).abs() > 1e-6 {
            return Err(EdgeError::Engine(Error::Consistency(format!(
                "non-integer winding number {raw} on {r:?}"
            ))));
        }
        Ok((raw, rounded as i64))
    }

    fn newton(&mut self, start: C) -> Result<Option<C>> {
        let mut q = start;
        for _ in 0..NEWTON_MAX_ITER {
            let (f, fp) = eval_d_pair(self.p, q)?;
            if f.norm() == 0.0 {
                return Ok(Some(q));
            }
            if fp.norm() == 0.0 || !fp.is_finite() {
                return Ok(None);
            }
            let step = f / fp;
            q -= step;
            if !q.is_finite() {
                return Ok(None);
            }
            if step.norm() <= NEWTON_TOL * q.norm().max(1.0) {
                return Ok(Some(q));
            }
        }
        Ok(None)
    }

    fn record(&mut self, rect: Rect, raw: f64, winding: i64, resolved: bool) -> usize {
        self.cells.push(Cell {
            rect,
            raw_winding: raw,
            winding,
            resolved,
        });
        self.cells.len() - 1
    }

    fn cell(&mut self, rect: Rect, raw: f64, winding: i64, depth: usize) -> Result<()> {
        if winding == 0 {
            self.record(rect, raw, 0, true);
            return Ok(());
        }
        if winding < 0 {
            return Err(Error::Consistency(format!("negative winding {winding} for an entire function")));
        }
        if winding == 1 {
            if let Some(q) = self.newton(rect.center())? {
                if rect.contains(q, 1e-9 * (1.0 + q.norm())) {
                    let idx = self.record(rect, raw, 1, true);
                    let residual = eval_d(self.p, q)?.norm();
                    self.zeros.push(Zero { q, residual, cell: idx });
                    return Ok(());
                }
            }
        }
        if depth >= MAX_DEPTH || rect.size() < 1e-10 * (1.0 + rect.center().norm()) {
            let idx = self.record(rect, raw, winding, winding == 1);
            let q = rect.center();
            let residual = eval_d(self.p, q)?.norm();
            self.zeros.push(Zero { q, residual, cell: idx });
            return Ok(());
        }
        for &f in &SPLITS {
            match self.split(&rect, f, winding) {
                Ok(children) => {
                    for (r, raw, w) in children {
                        self.cell(r, raw, w, depth + 1)?;
                    }
                    return Ok(());
                }
                Err(EdgeError::Hit) => continue,
                Err(EdgeError::Engine(e)) => return Err(e),
            }
        }
        Err(Error::NoConvergence(format!("could not split {rect:?} away from zeros")))
    }

    fn split(&mut self, r: &Rect, f: f64, parent: i64) -> std::result::Result<Vec<(Rect, f64, i64)>, EdgeError> {
        let xm = r.re_min + f * (r.re_max - r.re_min);
        let ym = r.im_min + (1.0 - f) * (r.im_max - r.im_min);
        let quads = [
            Rect { re_min: r.re_min, re_max: xm, im_min: r.im_min, im_max: ym },
            Rect { re_min: xm, re_max: r.re_max, im_min: r.im_min, im_max: ym },
            Rect { re_min: r.re_min, re_max: xm, im_min: ym, im_max: r.im_max },
            Rect { re_min: xm, re_max: r.re_max, im_min: ym, im_max: r.im_max },
        ];
        let mut out = Vec::with_capacity(4);
        let mut sum = 0;
        for q in quads {
            let (raw, w) = self.winding(&q)?;
            sum += w;
            out.push((q, raw, w));
        }
        if sum != parent {
            return Err(EdgeError::Engine(Error::Consistency(format!(
                "child windings sum to {sum}, parent has {parent}"
            ))));
        }
        Ok(out)
    }
}

/// All zeros of `D` inside `rect`, with winding-number certificates.
///
/// Zeros are ordered by descending real part, ties by ascending `|Im q|`.
pub fn spectrum_in_rect(p: &SpectralProblem, rect: Rect) -> Result<RectSpectrum> {
    if !rect.is_valid() {
        return Err(Error::InvalidArgument(format!("degenerate rectangle {rect:?}")));
    }
    let mut s = Search {
        p,
        cache: HashMap::new(),
        cells: Vec::new(),
        zeros: Vec::new(),
    };
    let mut r = rect;
    let mut found = None;
    for k in 0..6 {
        match s.winding(&r) {
            Ok(w) => {
                found = Some(w);
                break;
            }
            Err(EdgeError::Hit) => r = rect.grow(1e-7 * rect.size() * (1.0 + k as f64) * 3f64.powi(k)),
            Err(EdgeError::Engine(e)) => return Err(e),
        }
    }
    let (raw, total) = found.ok_or_else(|| {
        Error::NoConvergence(format!("zeros on the boundary of {rect:?} could not be avoided"))
    })?;
    s.cell(r, raw, total, 0)?;
    let mut zeros = s.zeros;
    zeros.sort_by(|a, b| {
        b.q.re
            .partial_cmp(&a.q.re)
            .unwrap()
            .then(a.q.im.abs().partial_cmp(&b.q.im.abs()).unwrap())
    });
    Ok(RectSpectrum {
        rect: r,
        total_winding: total,
        zeros,
        cells: s.cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BoundaryCase;
    use crate::models::{build_bm_closed_form, build_chain, BmSpec, ChainSpec};
    use std::f64::consts::PI;

    #[test]
    fn killed_brownian_zeros() {
        let m = build_bm_closed_form(&BmSpec { length: 1.0, boundary: BoundaryCase::KilledBoth, intervals: 512 })
            .unwrap()
            .0;
        let p = SpectralProblem::new(&m).unwrap();
        let rect = Rect { re_min: -25.0, re_max: -0.1, im_min: -5.0, im_max: 5.0 };
        let s = spectrum_in_rect(&p, rect).unwrap();
        assert_eq!(s.zeros.len(), 2);
        assert_eq!(s.total_winding, 2);
        assert!((s.zeros[0].q.re + PI * PI / 2.0).abs() < 1e-3);
        assert!((s.zeros[1].q.re + 2.0 * PI * PI).abs() < 1e-2);
        for z in &s.zeros {
            assert!(z.q.im.abs() < 1e-9);
        }
        for c in &s.cells {
            assert!((c.raw_winding - c.winding as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn right_half_plane_is_empty() {
        let m = build_chain(&ChainSpec::two_state(1.0, 1.0, 1.0)).unwrap();
        let p = SpectralProblem::new(&m).unwrap();
        let s = spectrum_in_rect(&p, Rect { re_min: 1.0, re_max: 2.0, im_min: -1.0, im_max: 1.0 }).unwrap();
        assert!(s.zeros.is_empty());
        assert_eq!(s.total_winding, 0);
    }

    #[test]
    fn zero_on_edge_is_avoided() {
        let m = build_chain(&ChainSpec::two_state(1.0, 1.0, 1.0)).unwrap();
        let p = SpectralProblem::new(&m).unwrap();
        let l0 = -(3.0 - 5f64.sqrt()) / 2.0;
        let s = spectrum_in_rect(&p, Rect { re_min: -3.0, re_max: l0, im_min: -1.0, im_max: 1.0 }).unwrap();
        assert_eq!(s.zeros.len(), 2);
    }

    #[test]
    fn degenerate_rect_rejected() {
        let m = build_chain(&ChainSpec::two_state(1.0, 1.0, 1.0)).unwrap();
        let p = SpectralProblem::new(&m).unwrap();
        assert!(spectrum_in_rect(&p, Rect { re_min: 1.0, re_max: 1.0, im_min: 0.0, im_max: 1.0 }).is_err());
    }
}
