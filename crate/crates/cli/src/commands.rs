//! The batch commands. Each writes its files into the output directory and
//! returns the process exit code.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use nojump::model::{BoundaryCase, MeasureKind};
use nojump::models::Dynamics;
use nojump::qsd::{normalization_budget, qprocess_quantities, qsd_bundle, QsdBundle};
use nojump::scale::{identity_residuals, wq_eval, Method};
use nojump::spectral::{
    classify_boundary, decay_parameter, spectral_gap, spectrum_in_rect, DecayParameter, Rect, SpectralProblem,
    Verdict, Zero,
};
use nojump::verify::{
    eig_decay_oracle, semigroup_checks, simulate, yaglom_report, CheckMode, SimConfig, Start, SubGenerator,
    GENERATOR_ID,
};
use nojump::{Error, Model};

use crate::doc::{Family, ModelDocument};
use crate::output::{num, Out, Plot, RunMetadata, Series};
use crate::CliError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFY: u8 = 1;
pub const EXIT_INCONCLUSIVE: u8 = 3;
pub const EXIT_PARTIAL: u8 = 5;

pub struct Ctx<'a> {
    pub doc: &'a ModelDocument,
    pub meta: RunMetadata,
    pub out: Out,
}

fn problem<'m>(ctx: &Ctx, m: &'m Model) -> Result<SpectralProblem<'m>, CliError> {
    let t = ctx.doc.tolerances;
    Ok(SpectralProblem::with_box(m, t.lambda_max, t.half_height)?)
}

#[derive(Serialize)]
struct TailEntry {
    n_points: usize,
    level: f64,
    value: f64,
}

#[derive(Serialize)]
struct ClassifyReport {
    entrance: Option<bool>,
    verdict: Verdict,
    hitting_verdict: Verdict,
    agree: bool,
    b_level: f64,
    tail_table: Vec<TailEntry>,
    hitting_time_table: Vec<TailEntry>,
}

pub fn classify(ctx: &mut Ctx) -> Result<u8, CliError> {
    let doc = ctx.doc;
    if doc.boundary_case != BoundaryCase::EntranceInfinity {
        return Err(CliError::Input("classification needs boundary_case \"entrance_infinity\"".into()));
    }
    let schedule = &doc.grid.truncation_schedule;
    if schedule.len() < 3 {
        return Err(CliError::Input("grid.truncation_schedule needs at least 3 levels".into()));
    }
    let b = doc.grid.classify_level.unwrap_or(1.0);
    let report = classify_boundary(
        |n| doc.build_truncated(n).map_err(|e| Error::InvalidModel(e.to_string())),
        schedule,
        b,
    )?;
    let table = |f: fn(&nojump::spectral::TailRow) -> f64| {
        report
            .rows
            .iter()
            .map(|r| TailEntry {
                n_points: r.states,
                level: r.level,
                value: f(r),
            })
            .collect::<Vec<_>>()
    };
    let body = ClassifyReport {
        entrance: report.entrance(),
        verdict: report.verdict,
        hitting_verdict: report.hitting_verdict,
        agree: report.agree,
        b_level: b,
        tail_table: table(|r| r.wbar),
        hitting_time_table: table(|r| r.sup_hitting_time),
    };
    ctx.out.json("classify.json", &ctx.meta, &body)?;
    Ok(if report.verdict == Verdict::Inconclusive {
        EXIT_INCONCLUSIVE
    } else {
        EXIT_OK
    })
}

#[derive(Serialize)]
struct ScaleReport {
    q: (f64, f64),
    row: usize,
    method: Method,
    trunc_error: f64,
    roundoff_bound: f64,
    z_end: (f64, f64),
}

pub fn scale(ctx: &mut Ctx, q: Complex64, row: usize, method: Method) -> Result<u8, CliError> {
    let m = ctx.doc.build()?;
    if row > m.last() {
        return Err(CliError::Input(format!("row {row} outside the grid 0..={}", m.last())));
    }
    let e = wq_eval(&m, q, method, ctx.doc.tolerances.tol)?;
    let rows: Vec<Vec<String>> = (0..=m.last())
        .map(|j| {
            let (w, z) = (e.w(row, j), e.z(row, j));
            vec![num(m.grid.x(j)), num(w.re), num(w.im), num(z.re), num(z.im)]
        })
        .collect();
    ctx.out.csv("scale.csv", &ctx.meta, &["x", "w_re", "w_im", "z_re", "z_im"], &rows)?;
    let z_end = e.zq_end[row];
    ctx.out.json(
        "scale.json",
        &ctx.meta,
        &ScaleReport {
            q: (q.re, q.im),
            row,
            method,
            trunc_error: e.trunc_error,
            roundoff_bound: e.roundoff_bound,
            z_end: (z_end.re, z_end.im),
        },
    )?;
    let series = |im: bool, color| Series {
        points: (row..=m.last())
            .map(|j| (m.grid.x(j), if im { e.w(row, j).im } else { e.w(row, j).re }))
            .collect(),
        line: true,
        color,
    };
    let plot = Plot {
        title: format!("W^(q)(x_{row}, x), q = {} + {}i", q.re, q.im),
        x_label: "x".into(),
        y_label: "W".into(),
        series: vec![series(false, "#1f4e9c"), series(true, "#c0392b")],
        frame: None,
        log_y: false,
    };
    ctx.out.svg("scale.svg", &ctx.meta, &plot)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct SpectrumBody<'a> {
    search_box: Rect,
    lambda0: Option<f64>,
    lambda1: Option<f64>,
    gap: Option<f64>,
    zeros: &'a [Zero],
    certificates: &'a [nojump::spectral::Cell],
    note: String,
}

pub fn spectrum(ctx: &mut Ctx, rect: Option<Rect>) -> Result<u8, CliError> {
    let m = ctx.doc.build()?;
    let p = problem(ctx, &m)?;
    let (body_rect, lambda0, lambda1, gap, zeros, cells, note) = match rect {
        Some(r) => {
            let s = spectrum_in_rect(&p, r)?;
            let note = format!("total winding {} in the searched rectangle", s.total_winding);
            (s.rect, None, None, None, s.zeros, s.cells, note)
        }
        None => {
            let s = spectral_gap(&p)?;
            (s.search_box, s.lambda0, s.lambda1, s.gap, s.zeros, s.certificates, s.note)
        }
    };
    let rows: Vec<Vec<String>> = zeros
        .iter()
        .map(|z| vec![num(z.q.re), num(z.q.im), num(z.residual), z.cell.to_string()])
        .collect();
    ctx.out.csv("spectrum.csv", &ctx.meta, &["re", "im", "residual", "winding_cell"], &rows)?;
    ctx.out.json(
        "spectrum.json",
        &ctx.meta,
        &SpectrumBody {
            search_box: body_rect,
            lambda0,
            lambda1,
            gap,
            zeros: &zeros,
            certificates: &cells,
            note,
        },
    )?;
    let plot = Plot {
        title: "zeros of D in the search box".into(),
        x_label: "Re q".into(),
        y_label: "Im q".into(),
        series: vec![Series {
            points: zeros.iter().map(|z| (z.q.re, z.q.im)).collect(),
            line: false,
            color: "#c0392b",
        }],
        frame: Some((body_rect.re_min, body_rect.re_max, body_rect.im_min, body_rect.im_max)),
        log_y: false,
    };
    ctx.out.svg("spectrum.svg", &ctx.meta, &plot)?;
    Ok(EXIT_OK)
}

fn solve(ctx: &Ctx, m: &Model) -> Result<(DecayParameter, QsdBundle), CliError> {
    let p = problem(ctx, m)?;
    let d = decay_parameter(&p)?;
    let b = qsd_bundle(&p, d.lambda0)?;
    Ok((d, b))
}

#[derive(Serialize)]
struct QsdBody<'a> {
    decay: DecayParameter,
    bundle: &'a QsdBundle,
    normalization_budget: f64,
    mu: Vec<f64>,
    mu_sum: f64,
}

pub fn qsd(ctx: &mut Ctx) -> Result<u8, CliError> {
    let m = ctx.doc.build()?;
    let (d, b) = solve(ctx, &m)?;
    let q = qprocess_quantities(&problem(ctx, &m)?, &b)?;
    let diffuse = m.measure.kind() == MeasureKind::Diffuse;
    let x = m.grid.points();
    let cell = |i: usize| {
        let lo = if i == 0 { x[0] } else { 0.5 * (x[i - 1] + x[i]) };
        let hi = if i == m.last() { x[i] } else { 0.5 * (x[i] + x[i + 1]) };
        hi - lo
    };
    // per unit length, against the trapezoid cell of each point
    let density = |i: usize| if cell(i) > 0.0 { b.nu[i] / cell(i) } else { 0.0 };
    let rows: Vec<Vec<String>> = (0..=m.last())
        .map(|i| {
            let mut r = vec![num(m.grid.x(i)), num(b.nu[i])];
            if diffuse {
                r.push(num(density(i)));
            }
            r.push(num(b.zinv[i]));
            r.push(num(q.mu[i]));
            r
        })
        .collect();
    let header: &[&str] = if diffuse {
        &["x", "nu_weight", "nu_density", "zinv", "mu_weight"]
    } else {
        &["x", "nu_weight", "zinv", "mu_weight"]
    };
    ctx.out.csv("qsd.csv", &ctx.meta, header, &rows)?;
    ctx.out.json(
        "qsd.json",
        &ctx.meta,
        &QsdBody {
            decay: d,
            bundle: &b,
            normalization_budget: normalization_budget(&m),
            mu_sum: q.mu_sum,
            mu: q.mu,
        },
    )?;
    let plot = Plot {
        title: format!("quasi-stationary law, lambda0 = {:.6}", d.lambda0),
        x_label: "x".into(),
        y_label: if diffuse { "density".into() } else { "mass".into() },
        series: vec![Series {
            points: (0..=m.last())
                .map(|i| (m.grid.x(i), if diffuse { density(i) } else { b.nu[i] }))
                .collect(),
            line: diffuse,
            color: "#1f4e9c",
        }],
        frame: None,
        log_y: false,
    };
    ctx.out.svg("qsd.svg", &ctx.meta, &plot)?;
    Ok(EXIT_OK)
}

pub struct YaglomArgs {
    pub paths: Option<u64>,
    pub horizon: Option<f64>,
    pub buckets: Option<usize>,
    pub start: Option<usize>,
    pub step: Option<f64>,
    pub from_qsd: bool,
}

#[derive(Serialize)]
struct YaglomBody {
    paths: u64,
    horizon: f64,
    step: f64,
    start: String,
    lambda0: f64,
    gap: Option<f64>,
    fitted_rate: Option<f64>,
    rate_ci: Option<(f64, f64)>,
    fitted_range: Option<(f64, f64)>,
    rate_over_gap: Option<f64>,
    dropped_buckets: Vec<f64>,
    warnings: Vec<String>,
}

pub fn yaglom(ctx: &mut Ctx, a: &YaglomArgs) -> Result<u8, CliError> {
    let m = ctx.doc.build()?;
    let (d, b) = solve(ctx, &m)?;
    let sim = ctx.doc.simulation.as_ref();
    let horizon = a.horizon.or(sim.map(|s| s.horizon)).unwrap_or(15.0);
    let paths = a.paths.or(sim.map(|s| s.paths)).unwrap_or(100_000);
    let buckets = a.buckets.or(sim.map(|s| s.buckets)).unwrap_or(60);
    let start_index = a.start.or(sim.map(|s| s.start_index)).unwrap_or(1);
    let step = match &m.dynamics {
        Dynamics::Chain(_) => 0.0,
        Dynamics::Diffusion { sigma, .. } => a.step.or(sim.and_then(|s| s.step)).unwrap_or_else(|| {
            let smax = sigma.iter().fold(0.0f64, |x, s| x.max(*s));
            1e-4 * m.grid.x(m.last()).powi(2) / (smax * smax)
        }),
    };
    let start = if a.from_qsd {
        Start::Law(b.nu.clone())
    } else {
        Start::Index(start_index)
    };
    let cfg = SimConfig {
        start: start.clone(),
        horizon,
        paths,
        seed: ctx.meta.seed,
        step,
        buckets: SimConfig::uniform_buckets(horizon, buckets),
        workers: ctx.meta.workers,
    };
    let ens = simulate(&m, &cfg)?;
    let rep = yaglom_report(&ens, &b)?;
    let gap = spectral_gap(&problem(ctx, &m)?).ok().and_then(|s| s.gap);
    let rows: Vec<Vec<String>> = rep
        .rows
        .iter()
        .map(|r| {
            vec![
                num(r.t),
                r.survivors.to_string(),
                num(r.survival),
                num(r.tv),
                num(r.noise_floor),
                num(r.std_error),
            ]
        })
        .collect();
    ctx.out.csv(
        "yaglom.csv",
        &ctx.meta,
        &["t", "survivors", "survival", "tv", "noise_floor", "std_error"],
        &rows,
    )?;
    let body = YaglomBody {
        paths,
        horizon,
        step: ens.step,
        start: match start {
            Start::Index(i) => format!("index {i}"),
            Start::Law(_) => "qsd".into(),
        },
        lambda0: d.lambda0,
        gap,
        fitted_rate: rep.fitted_rate,
        rate_ci: rep.rate_ci,
        fitted_range: rep.fitted_range,
        rate_over_gap: rep.fitted_rate.zip(gap).map(|(r, g)| r / g),
        dropped_buckets: rep.dropped.clone(),
        warnings: ens.warnings.clone(),
    };
    ctx.out.json("yaglom.json", &ctx.meta, &body)?;
    let plot = Plot {
        title: "total variation to the quasi-stationary law".into(),
        x_label: "t".into(),
        y_label: "TV (log scale)".into(),
        series: vec![
            Series {
                points: rep.rows.iter().filter(|r| r.tv > 0.0).map(|r| (r.t, r.tv)).collect(),
                line: true,
                color: "#1f4e9c",
            },
            Series {
                points: rep.rows.iter().map(|r| (r.t, r.noise_floor)).collect(),
                line: true,
                color: "#999999",
            },
        ],
        frame: None,
        log_y: true,
    };
    ctx.out.svg("yaglom.svg", &ctx.meta, &plot)?;
    Ok(if rep.dropped.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Identities,
    Oracle,
    Semigroup,
    All,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub id: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn check(id: impl Into<String>, value: f64, tolerance: f64) -> Check {
    Check {
        id: id.into(),
        value,
        tolerance,
        pass: value <= tolerance,
    }
}

/// Largest grid on which the cubic-cost identity checks run; finer diffusion
/// grids are resampled to this size over the same domain.
const IDENTITY_MAX_POINTS: usize = 257;

fn identity_checks(ctx: &Ctx, full: &Model) -> Result<Vec<Check>, CliError> {
    let resampled;
    let m = if full.last() + 1 > IDENTITY_MAX_POINTS && ctx.doc.family != Family::Chain {
        resampled = ctx.doc.build_resampled(IDENTITY_MAX_POINTS)?;
        &resampled
    } else {
        full
    };
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.meta.seed);
    let mut draw = || Complex64::from_polar(20.0 * rng.random::<f64>().sqrt(), std::f64::consts::TAU * rng.random::<f64>());
    let (mut w, mut z, mut r) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..5 {
        let (q, s) = (draw(), draw());
        let res = identity_residuals(m, q, s)?;
        w = w.max(res.res_w);
        z = z.max(res.res_z);
        r = r.max(res.res_r.unwrap_or(0.0));
    }
    let mut out = vec![
        check("identity.w", w, 1e-9),
        check("identity.z", z, 1e-9),
        check("identity.resolvent", r, 1e-9),
    ];
    if ctx.doc.family == Family::BmClosedForm && m.boundary != BoundaryCase::EntranceInfinity {
        let o = nojump::models::BmOracle {
            length: m.grid.x(m.last()),
            boundary: m.boundary,
        };
        let h = m.grid.max_spacing();
        let mut worst = 0.0f64;
        for q in [Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0), Complex64::new(2.0, 3.0)] {
            let e = wq_eval(m, q, Method::Volterra, ctx.doc.tolerances.tol)?;
            for i in 0..=m.last() {
                for j in (i + 1)..=m.last() {
                    let exact = o.w(q, m.grid.x(i), m.grid.x(j));
                    worst = worst.max((e.w(i, j) - exact).norm() / exact.norm());
                }
            }
        }
        out.push(check("closed_form.w", worst, (100.0 * h * h).max(1e-12)));
    }
    Ok(out)
}

fn oracle_checks(ctx: &Ctx, m: &Model) -> Result<Vec<Check>, CliError> {
    let (d, b) = solve(ctx, m)?;
    let sub = SubGenerator::from_model(m)?;
    let e = eig_decay_oracle(&sub)?;
    let nu = sub.restrict(&b.nu);
    let zinv = sub.restrict(&b.zinv);
    let scale = zinv.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let dev = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let right_scaled: Vec<f64> = if m.boundary == BoundaryCase::KilledBoth {
        // the invariant function is unnormalized; compare directions
        let top = zinv[zinv.len() - 1];
        e.right.iter().map(|v| v * top).collect()
    } else {
        e.right.clone()
    };
    Ok(vec![
        check("oracle.lambda0", (d.lambda0 - e.lambda0).abs() / e.lambda0.max(1.0), 1e-8),
        check("oracle.qsd", dev(&nu, &e.left), 1e-8),
        check("oracle.zinv", dev(&zinv, &right_scaled) / scale, 1e-8),
        check("oracle.eigen_residual", e.residual, 1e-8),
    ])
}

fn semigroup_suite(ctx: &Ctx, m: &Model) -> Result<Vec<Check>, CliError> {
    let (_, b) = solve(ctx, m)?;
    let sub = SubGenerator::from_model(m)?;
    let r = semigroup_checks(&b, &sub, &CheckMode::Invariance)?;
    let scale = b.zinv.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    Ok(r.points
        .iter()
        .map(|p| check(format!("semigroup.invariance.t={}", p.t), p.residual / scale, 1e-6))
        .collect())
}

#[derive(Serialize)]
struct VerifyBody<'a> {
    suite: &'static str,
    pass: bool,
    checks: &'a [Check],
}

pub fn verify(ctx: &mut Ctx, suite: Suite) -> Result<u8, CliError> {
    let m = ctx.doc.build()?;
    let mut checks = Vec::new();
    if matches!(suite, Suite::Identities | Suite::All) {
        checks.extend(identity_checks(ctx, &m)?);
    }
    if matches!(suite, Suite::Oracle | Suite::All) {
        checks.extend(oracle_checks(ctx, &m)?);
    }
    if matches!(suite, Suite::Semigroup | Suite::All) {
        checks.extend(semigroup_suite(ctx, &m)?);
    }
    let pass = checks.iter().all(|c| c.pass);
    let name = match suite {
        Suite::Identities => "identities",
        Suite::Oracle => "oracle",
        Suite::Semigroup => "semigroup",
        Suite::All => "all",
    };
    ctx.out.json(
        "verify.json",
        &ctx.meta,
        &VerifyBody {
            suite: name,
            pass,
            checks: &checks,
        },
    )?;
    for c in checks.iter().filter(|c| !c.pass) {
        eprintln!("FAIL {}: {:.3e} > {:.3e}", c.id, c.value, c.tolerance);
    }
    Ok(if pass { EXIT_OK } else { EXIT_VERIFY })
}

pub fn generator_for(cmd: &str) -> &'static str {
    match cmd.as_bytes() {
        b"yaglom" => GENERATOR_ID,
        _ => "none",
    }
}
