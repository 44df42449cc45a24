//! Seeded, scheduling-independent path simulation and the Yaglom TV report.
//!
//! Path `k` draws from `ChaCha8Rng::seed_from_u64(seed)` switched to stream
//! `k`, so each path is a pure function of `(seed, k)`. Workers only sum
//! integer counts, which makes the ensemble independent of the worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BoundaryCase, Model};
use crate::models::{ChainRates, Dynamics};
use crate::qsd::QsdBundle;

pub const GENERATOR_ID: &str = "chacha8/stream-per-path/v1";

/// Initial law of the simulated paths.
#[derive(Debug, Clone, PartialEq)]
pub enum Start {
    /// Every path starts at this grid index.
    Index(usize),
    /// Start drawn from these weights over grid indices.
    Law(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub start: Start,
    pub horizon: f64,
    pub paths: u64,
    pub seed: u64,
    /// Euler step for diffusions; ignored for chains.
    pub step: f64,
    /// Observation times in `[0, horizon]`, increasing.
    pub buckets: Vec<f64>,
    /// Thread cap; `0` uses the global pool.
    pub workers: usize,
}

impl SimConfig {
    /// `count + 1` equally spaced buckets on `[0, horizon]`.
    pub fn uniform_buckets(horizon: f64, count: usize) -> Vec<f64> {
        (0..=count).map(|k| horizon * k as f64 / count as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimEnsemble {
    pub seed: u64,
    pub paths: u64,
    pub horizon: f64,
    pub step: f64,
    pub generator: String,
    pub bucket_times: Vec<f64>,
    /// Paths alive at each bucket time.
    pub survivors: Vec<u64>,
    /// Counts per grid index of the alive paths at each bucket time.
    pub histograms: Vec<Vec<u64>>,
    pub warnings: Vec<String>,
}

struct Counts {
    survivors: Vec<u64>,
    hist: Vec<Vec<u64>>,
}

impl Counts {
    fn new(buckets: usize, cells: usize) -> Self {
        Self {
            survivors: vec![0; buckets],
            hist: vec![vec![0; cells]; buckets],
        }
    }

    fn merge(mut self, other: Counts) -> Counts {
        for (a, b) in self.survivors.iter_mut().zip(other.survivors) {
            *a += b;
        }
        for (ha, hb) in self.hist.iter_mut().zip(other.hist) {
            for (a, b) in ha.iter_mut().zip(hb) {
                *a += b;
            }
        }
        self
    }

    fn record(&mut self, b: usize, cell: usize) {
        self.survivors[b] += 1;
        self.hist[b][cell] += 1;
    }
}

fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

fn draw_start(start: &Start, cdf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    match start {
        Start::Index(i) => *i,
        Start::Law(_) => {
            let u: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
            cdf.partition_point(|c| *c <= u).min(cdf.len() - 1)
        }
    }
}

fn chain_path(rates: &ChainRates, start: usize, buckets: &[f64], rng: &mut ChaCha8Rng, out: &mut Counts) {
    let killed_top = rates.boundary() == BoundaryCase::KilledBoth;
    let top = rates.states();
    let mut y = start;
    let mut t = 0.0;
    let mut b = 0;
    loop {
        if y == 0 || (killed_top && y == top) {
            return;
        }
        let total = rates.total(y);
        let hold: f64 = Exp1.sample(rng);
        let next = t + hold / total;
        while b < buckets.len() && buckets[b] < next {
            out.record(b, y);
            b += 1;
        }
        if b == buckets.len() {
            return;
        }
        t = next;
        let mut u = rng.random::<f64>() * total;
        if u < rates.down(y) {
            y -= 1;
            continue;
        }
        u -= rates.down(y);
        let mut moved = false;
        for &(z, r) in rates.up(y) {
            if u < r {
                y = z;
                moved = true;
                break;
            }
            u -= r;
        }
        if !moved {
            // rounding left u just past the last rate
            y = rates.up(y).last().map(|&(z, _)| z).unwrap_or(y - 1);
        }
    }
}

struct DiffusionPath<'a> {
    x: &'a [f64],
    drift: &'a [f64],
    sigma: &'a [f64],
    right: f64,
    boundary: BoundaryCase,
    step: f64,
}

impl DiffusionPath<'_> {
    fn coef(&self, pos: f64) -> (f64, f64) {
        let k = self.x.partition_point(|v| *v <= pos).clamp(1, self.x.len() - 1);
        let (x0, x1) = (self.x[k - 1], self.x[k]);
        let a = ((pos - x0) / (x1 - x0)).clamp(0.0, 1.0);
        (
            self.drift[k - 1] + a * (self.drift[k] - self.drift[k - 1]),
            self.sigma[k - 1] + a * (self.sigma[k] - self.sigma[k - 1]),
        )
    }

    fn cell(&self, pos: f64) -> usize {
        let k = self.x.partition_point(|v| *v < pos);
        if k == 0 {
            0
        } else if k >= self.x.len() {
            self.x.len() - 1
        } else if pos - self.x[k - 1] <= self.x[k] - pos {
            k - 1
        } else {
            k
        }
    }

    fn run(&self, start: usize, buckets: &[f64], rng: &mut ChaCha8Rng, out: &mut Counts) {
        let mut pos = self.x[start];
        if start == 0 || (self.boundary == BoundaryCase::KilledBoth && start == self.x.len() - 1) {
            return;
        }
        let mut t = 0.0;
        let mut b = 0;
        let sq = self.step.sqrt();
        loop {
            let next = t + self.step;
            while b < buckets.len() && buckets[b] < next {
                out.record(b, self.cell(pos));
                b += 1;
            }
            if b == buckets.len() {
                return;
            }
            let (mu, sig) = self.coef(pos);
            let z: f64 = StandardNormal.sample(rng);
            pos += mu * self.step + sig * sq * z;
            if pos <= 0.0 {
                return;
            }
            if pos >= self.right {
                match self.boundary {
                    BoundaryCase::KilledBoth => return,
                    _ => pos = (2.0 * self.right - pos).max(f64::MIN_POSITIVE),
                }
            }
            t = next;
        }
    }
}

/// Simulates `paths` independent paths and counts the survivors and their
/// positions at each bucket time.
///
/// Chains jump exactly. Diffusions use the Euler scheme, absorbed at the first
/// step whose endpoint is `<= 0`, and reflected (or killed) at the right end.
pub fn simulate(model: &Model, cfg: &SimConfig) -> Result<SimEnsemble> {
    if cfg.paths == 0 {
        return Err(Error::InvalidArgument("paths must be at least 1".into()));
    }
    if !(cfg.horizon > 0.0) {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    if cfg.buckets.is_empty()
        || cfg.buckets.windows(2).any(|w| !(w[1] > w[0]))
        || cfg.buckets[0] < 0.0
        || *cfg.buckets.last().unwrap() > cfg.horizon
    {
        return Err(Error::InvalidArgument("bucket times must increase within [0, horizon]".into()));
    }
    let cells = model.last() + 1;
    let cdf: Vec<f64> = match &cfg.start {
        Start::Index(i) => {
            if *i > model.last() {
                return Err(Error::Index(format!("start {i} outside the grid")));
            }
            Vec::new()
        }
        Start::Law(w) => {
            if w.len() != cells || w.iter().any(|v| !(*v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::InvalidArgument("initial law must be nonnegative weights on the grid".into()));
            }
            w.iter()
                .scan(0.0, |acc, v| {
                    *acc += v;
                    Some(*acc)
                })
                .collect()
        }
    };

    let mut warnings = Vec::new();
    let diffusion = match &model.dynamics {
        Dynamics::Diffusion { drift, sigma, .. } => {
            if !(cfg.step > 0.0) {
                return Err(Error::InvalidArgument("diffusions need a positive Euler step".into()));
            }
            let smax = sigma.iter().fold(0.0f64, |a, s| a.max(*s));
            let width = model.grid.x(model.last());
            if smax * cfg.step.sqrt() > 0.05 * width {
                warnings.push(format!(
                    "Euler step {} is large: sigma * sqrt(step) = {:.3e} exceeds 5% of the domain",
                    cfg.step,
                    smax * cfg.step.sqrt()
                ));
            }
            Some(DiffusionPath {
                x: model.grid.points(),
                drift,
                sigma,
                right: width,
                boundary: model.boundary,
                step: cfg.step,
            })
        }
        Dynamics::Chain(_) => None,
    };

    let nb = cfg.buckets.len();
    let run = |range: std::ops::Range<u64>| -> Counts {
        let mut c = Counts::new(nb, cells);
        for k in range {
            let mut rng = path_rng(cfg.seed, k);
            let start = draw_start(&cfg.start, &cdf, &mut rng);
            match (&model.dynamics, &diffusion) {
                (Dynamics::Chain(rates), _) => chain_path(rates, start, &cfg.buckets, &mut rng, &mut c),
                (_, Some(d)) => d.run(start, &cfg.buckets, &mut rng, &mut c),
                _ => unreachable!(),
            }
        }
        c
    };
    let chunk = 1024u64;
    let chunks: Vec<std::ops::Range<u64>> = (0..cfg.paths.div_ceil(chunk))
        .map(|i| (i * chunk)..((i + 1) * chunk).min(cfg.paths))
        .collect();
    let total = if cfg.workers == 0 {
        chunks
            .into_par_iter()
            .map(run)
            .reduce(|| Counts::new(nb, cells), Counts::merge)
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| {
            chunks
                .into_par_iter()
                .map(run)
                .reduce(|| Counts::new(nb, cells), Counts::merge)
        })
    };
    Ok(SimEnsemble {
        seed: cfg.seed,
        paths: cfg.paths,
        horizon: cfg.horizon,
        step: if diffusion.is_some() { cfg.step } else { 0.0 },
        generator: GENERATOR_ID.to_string(),
        bucket_times: cfg.buckets.clone(),
        survivors: total.survivors,
        histograms: total.hist,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct YaglomRow {
    pub t: f64,
    pub survivors: u64,
    pub survival: f64,
    pub tv: f64,
    /// Expected TV of a sample of this size drawn from `nu` itself.
    pub noise_floor: f64,
    /// `max_i sqrt(nu_i (1 - nu_i) / n)`: one binomial standard error.
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YaglomReport {
    pub rows: Vec<YaglomRow>,
    /// Bucket times dropped for having too few survivors.
    pub dropped: Vec<f64>,
    /// `-slope` of `log TV` over the fit window.
    pub fitted_rate: Option<f64>,
    /// 95% interval for the fitted rate.
    pub rate_ci: Option<(f64, f64)>,
    pub fitted_range: Option<(f64, f64)>,
}

/// Minimum survivors for a bucket to enter the report.
pub const MIN_SURVIVORS: u64 = 100;

/// Total variation between the empirical conditional law and `nu`, and the
/// decay rate fitted on the window from the first bucket with TV below 0.5 to
/// the last bucket with TV above three times its noise floor.
pub fn yaglom_report(ens: &SimEnsemble, bundle: &QsdBundle) -> Result<YaglomReport> {
    if ens.survivors.iter().all(|s| *s == 0) {
        return Err(Error::InvalidArgument("empty ensemble: no surviving paths".into()));
    }
    let nu = &bundle.nu;
    if ens.histograms.first().map(|h| h.len()) != Some(nu.len()) {
        return Err(Error::Dimension("ensemble histograms and QSD grid differ".into()));
    }
    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    for (b, &t) in ens.bucket_times.iter().enumerate() {
        let n = ens.survivors[b];
        if n < MIN_SURVIVORS {
            dropped.push(t);
            continue;
        }
        let nf = n as f64;
        let tv = 0.5
            * ens.histograms[b]
                .iter()
                .zip(nu)
                .map(|(c, p)| (*c as f64 / nf - p).abs())
                .sum::<f64>();
        let noise_floor = 0.5
            * nu.iter()
                .map(|p| (2.0 * p * (1.0 - p) / (std::f64::consts::PI * nf)).sqrt())
                .sum::<f64>();
        let std_error = nu.iter().map(|p| (p * (1.0 - p) / nf).sqrt()).fold(0.0, f64::max);
        rows.push(YaglomRow {
            t,
            survivors: n,
            survival: nf / ens.paths as f64,
            tv,
            noise_floor,
            std_error,
        });
    }
    let first = rows.iter().position(|r| r.tv < 0.5);
    let last = rows.iter().rposition(|r| r.tv > 3.0 * r.noise_floor);
    let (mut fitted_rate, mut rate_ci, mut fitted_range) = (None, None, None);
    if let (Some(a), Some(b)) = (first, last) {
        if b >= a + 2 {
            let pts: Vec<(f64, f64)> = rows[a..=b].iter().map(|r| (r.t, r.tv.ln())).collect();
            let n = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let slope = sxy / sxx;
            let resid: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
            let se = (resid / (n - 2.0) / sxx).sqrt();
            fitted_rate = Some(-slope);
            rate_ci = Some((-slope - 1.96 * se, -slope + 1.96 * se));
            fitted_range = Some((rows[a].t, rows[b].t));
        }
    }
    Ok(YaglomReport {
        rows,
        dropped,
        fitted_rate,
        rate_ci,
        fitted_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_chain, ChainSpec};

    fn pure_death() -> Model {
        build_chain(&ChainSpec { states: 1, rates: vec![(1, 0, 1.0)], boundary: BoundaryCase::ReflectingRight }).unwrap()
    }

    #[test]
    fn exponential_survival() {
        let m = pure_death();
        let cfg = SimConfig {
            start: Start::Index(1),
            horizon: 5.0,
            paths: 100_000,
            seed: 7,
            step: 0.0,
            buckets: SimConfig::uniform_buckets(5.0, 10),
            workers: 2,
        };
        let e = simulate(&m, &cfg).unwrap();
        for (b, &t) in e.bucket_times.iter().enumerate() {
            let p = (-t).exp();
            let se = (p * (1.0 - p) / 1e5).sqrt();
            let got = e.survivors[b] as f64 / 1e5;
            assert!((got - p).abs() <= 3.0 * se + 1e-12, "t={t}: {got} vs {p}");
        }
    }

    #[test]
    fn worker_count_does_not_matter() {
        let m = build_chain(&ChainSpec::two_state(1.0, 1.0, 1.0)).unwrap();
        let mut cfg = SimConfig {
            start: Start::Index(1),
            horizon: 3.0,
            paths: 5000,
            seed: 42,
            step: 0.0,
            buckets: SimConfig::uniform_buckets(3.0, 6),
            workers: 1,
        };
        let a = simulate(&m, &cfg).unwrap();
        cfg.workers = 4;
        let b = simulate(&m, &cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed = 43;
        assert_ne!(simulate(&m, &cfg).unwrap(), a);
    }

    #[test]
    fn rejects_bad_configs() {
        let m = pure_death();
        let mut cfg = SimConfig {
            start: Start::Index(1),
            horizon: 1.0,
            paths: 0,
            seed: 1,
            step: 0.0,
            buckets: vec![0.0, 0.5],
            workers: 0,
        };
        assert!(simulate(&m, &cfg).is_err());
        cfg.paths = 10;
        cfg.buckets = vec![0.5, 0.2];
        assert!(simulate(&m, &cfg).is_err());
    }
}
