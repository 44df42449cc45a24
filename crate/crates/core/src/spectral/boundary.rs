//! Entrance classification of the right boundary from truncated models.
//!
//! Infinity is an entrance boundary iff `Wbar(b, inf) < inf`, equivalently iff
//! the expected down-crossing times `E_x tau_b` stay bounded in `x`. Both are
//! tracked along a doubling schedule of truncation levels.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BoundaryCase, Model, RightEnd};
use crate::scale::{wbar, Upper};

/// Increment ratio at or below which the tail is taken as converging.
const CONVERGING_RATIO: f64 = 0.75;
/// Last increment ratio at or above which the tail is taken as diverging.
const DIVERGING_RATIO: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Entrance,
    NonEntrance,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailRow {
    pub states: usize,
    pub level: f64,
    pub wbar: f64,
    /// `sup_x E_x tau_b` on this truncation.
    pub sup_hitting_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryReport {
    pub verdict: Verdict,
    pub b_index: usize,
    pub rows: Vec<TailRow>,
    /// Verdict from the down-crossing times alone.
    pub hitting_verdict: Verdict,
    /// True when both criteria give the same verdict.
    pub agree: bool,
}

impl BoundaryReport {
    pub fn entrance(&self) -> Option<bool> {
        match self.verdict {
            Verdict::Entrance => Some(true),
            Verdict::NonEntrance => Some(false),
            Verdict::Inconclusive => None,
        }
    }
}

fn trend(values: &[f64]) -> Result<Verdict> {
    if values.len() < 3 {
        return Ok(Verdict::Inconclusive);
    }
    let inc: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    for (k, d) in inc.iter().enumerate() {
        if *d < -1e-12 * values[k + 1].abs() {
            return Err(Error::InvalidModel(format!(
                "tail sums decrease along the truncation schedule ({} -> {})",
                values[k],
                values[k + 1]
            )));
        }
    }
    let ratio = |k: usize| {
        let (prev, last) = (inc[k - 1].max(0.0), inc[k].max(0.0));
        if last == 0.0 {
            0.0
        } else if prev > 0.0 {
            last / prev
        } else {
            f64::INFINITY
        }
    };
    let k = inc.len() - 1;
    let last_ratio = ratio(k);
    let converging = last_ratio <= CONVERGING_RATIO && (k < 2 || ratio(k - 1) <= CONVERGING_RATIO);
    if converging {
        Ok(Verdict::Entrance)
    } else if last_ratio >= DIVERGING_RATIO {
        Ok(Verdict::NonEntrance)
    } else {
        Ok(Verdict::Inconclusive)
    }
}

/// `E_x tau_b` from the window sum `sum_{u in (b, end]} (W(b, u) - W(x, u)) w_u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Downcrossing {
    pub value: f64,
    pub tail_truncated: bool,
}

/// Expected time to go below `x_b` from `x_x`, assuming the process
/// reaches `x_b` almost surely (conservative above `b`).
pub fn expected_downcrossing_time(model: &Model, x_idx: usize, b_idx: usize) -> Result<Downcrossing> {
    if model.boundary == BoundaryCase::KilledBoth {
        return Err(Error::WrongCase(
            "down-crossing times need a model that is conservative above b".into(),
        ));
    }
    if b_idx > x_idx || x_idx > model.last() {
        return Err(Error::Index(format!(
            "need b <= x <= M, got b = {b_idx}, x = {x_idx}, M = {}",
            model.last()
        )));
    }
    let end = model.end_limit().min(model.last() + 1);
    let value = ((b_idx + 1)..end)
        .map(|u| (model.k(b_idx, u) - model.k(x_idx, u)) * model.w(u))
        .sum();
    Ok(Downcrossing {
        value,
        tail_truncated: model.boundary == BoundaryCase::EntranceInfinity,
    })
}

/// Classifies infinity from models built at each truncation level of `schedule`.
///
/// `b` is a state level; it is mapped to the nearest grid point of each model.
pub fn classify_boundary<F>(build: F, schedule: &[usize], b: f64) -> Result<BoundaryReport>
where
    F: Fn(usize) -> Result<Model>,
{
    if schedule.len() < 3 {
        return Err(Error::InvalidArgument("the truncation schedule needs at least 3 levels".into()));
    }
    let mut rows = Vec::with_capacity(schedule.len());
    let mut b_index = 0;
    for &n in schedule {
        let model = build(n)?;
        if model.boundary != BoundaryCase::EntranceInfinity
            || !matches!(model.grid.right_end(), RightEnd::Truncation(_))
        {
            return Err(Error::WrongCase(
                "classification needs truncated models of an infinite state space".into(),
            ));
        }
        b_index = model.grid.nearest(b);
        if b_index >= model.last() {
            return Err(Error::InvalidArgument(format!("b = {b} is not below truncation level {n}")));
        }
        let tail = wbar(&model, b_index, Upper::End)?.value;
        let sup = expected_downcrossing_time(&model, model.last(), b_index)?.value;
        rows.push(TailRow {
            states: n,
            level: model.grid.x(model.last()),
            wbar: tail,
            sup_hitting_time: sup,
        });
    }
    let verdict = trend(&rows.iter().map(|r| r.wbar).collect::<Vec<_>>())?;
    let hitting_verdict = trend(&rows.iter().map(|r| r.sup_hitting_time).collect::<Vec<_>>())?;
    Ok(BoundaryReport {
        verdict,
        b_index,
        rows,
        hitting_verdict,
        agree: verdict == hitting_verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_bm_closed_form, build_chain, BmSpec, ChainSpec};

    fn chain(n: usize, quadratic: bool) -> Result<Model> {
        build_chain(&ChainSpec::birth_death(
            n,
            |_| 1.0,
            move |k| if quadratic { (k * k) as f64 } else { 1.0 },
            BoundaryCase::EntranceInfinity,
        ))
    }

    #[test]
    fn quadratic_death_is_entrance() {
        let r = classify_boundary(|n| chain(n, true), &[64, 128, 256, 512], 5.0).unwrap();
        assert_eq!(r.verdict, Verdict::Entrance);
        assert!(r.agree);
    }

    #[test]
    fn symmetric_walk_is_not_entrance() {
        let r = classify_boundary(|n| chain(n, false), &[64, 128, 256, 512], 5.0).unwrap();
        assert_eq!(r.verdict, Verdict::NonEntrance);
        assert!(r.agree);
    }

    #[test]
    fn accessible_boundary_is_refused() {
        let build = |n: usize| {
            build_bm_closed_form(&BmSpec { length: 1.0, boundary: BoundaryCase::ReflectingRight, intervals: n })
                .map(|x| x.0)
        };
        assert!(matches!(classify_boundary(build, &[8, 16, 32], 0.1), Err(Error::WrongCase(_))));
    }

    #[test]
    fn brownian_downcrossing() {
        let (m, _) =
            build_bm_closed_form(&BmSpec { length: 1.0, boundary: BoundaryCase::ReflectingRight, intervals: 512 })
                .unwrap();
        assert_eq!(expected_downcrossing_time(&m, 100, 100).unwrap().value, 0.0);
        let x = m.grid.x(256);
        let v = expected_downcrossing_time(&m, 256, 0).unwrap().value;
        // reflecting at 1, killed at 0: E_x tau = x (2 - x)
        assert!((v - x * (2.0 - x)).abs() < 1e-5, "{v}");
        assert!(expected_downcrossing_time(&m, 10, 20).is_err());
    }
}
