//! Model documents (JSON, schema version 1) and their translation into engine models.

use serde::{Deserialize, Serialize};

use nojump::model::{BoundaryCase, StateGrid};
use nojump::models::{
    build_bm_closed_form, build_chain, build_diffusion, named_drift, named_sigma, BmSpec, ChainSpec, DiffusionSpec,
};
use nojump::spectral::{DEFAULT_HALF_HEIGHT, DEFAULT_LAMBDA_MAX};
use nojump::Model;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub schema_version: u32,
    pub family: Family,
    pub boundary_case: BoundaryCase,
    pub grid: GridDoc,
    #[serde(default)]
    pub chain: Option<ChainDoc>,
    #[serde(default)]
    pub diffusion: Option<DiffusionDoc>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub simulation: Option<SimulationDoc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Diffusion,
    Chain,
    BmClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDoc {
    /// Grid points including 0 (diffusions) or states `0..=N` (chains).
    pub n_points: usize,
    /// Right end of the domain; ignored for chains.
    #[serde(default = "one")]
    pub length: f64,
    /// Point counts of the truncations used for boundary classification.
    #[serde(default)]
    pub truncation_schedule: Vec<usize>,
    /// Level below which down-crossing times are measured in classification.
    #[serde(default)]
    pub classify_level: Option<f64>,
}

fn one() -> f64 {
    1.0
}

/// `c0 + c1 k + c2 k^2 + ...`
pub type Polynomial = Vec<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ChainDoc {
    /// Explicit `(i, j, rate)` triplets.
    Rates(Vec<(usize, usize, f64)>),
    /// Birth rate and death rate in state `k` as polynomials in `k`.
    BirthDeath { birth: Polynomial, death: Polynomial },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Named(String),
    Samples(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionDoc {
    pub drift: Coefficient,
    pub sigma: Coefficient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_lambda_max")]
    pub lambda_max: f64,
    #[serde(default = "default_half_height")]
    pub half_height: f64,
}

fn default_tol() -> f64 {
    nojump::scale::DEFAULT_TOL
}
fn default_lambda_max() -> f64 {
    DEFAULT_LAMBDA_MAX
}
fn default_half_height() -> f64 {
    DEFAULT_HALF_HEIGHT
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            lambda_max: default_lambda_max(),
            half_height: default_half_height(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationDoc {
    #[serde(default = "default_start")]
    pub start_index: usize,
    pub horizon: f64,
    #[serde(default = "default_paths")]
    pub paths: u64,
    /// Number of equal intervals between observation times.
    #[serde(default = "default_buckets")]
    pub buckets: usize,
    /// Euler step for diffusions.
    #[serde(default)]
    pub step: Option<f64>,
}

fn default_start() -> usize {
    1
}
fn default_paths() -> u64 {
    100_000
}
fn default_buckets() -> usize {
    60
}

type Builtin = fn(&str) -> Option<fn(f64) -> f64>;

fn eval_poly(p: &[f64], k: usize) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * k as f64 + c)
}

impl ModelDocument {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| CliError::Input(format!("model document: {e}")))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(CliError::Input(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        match doc.family {
            Family::Chain if doc.chain.is_none() => {
                return Err(CliError::Input("family \"chain\" needs a \"chain\" section".into()))
            }
            Family::Diffusion if doc.diffusion.is_none() => {
                return Err(CliError::Input("family \"diffusion\" needs a \"diffusion\" section".into()))
            }
            _ => {}
        }
        if doc.grid.n_points < 2 {
            return Err(CliError::Input("grid.n_points must be at least 2".into()));
        }
        if let Some(d) = &doc.diffusion {
            for (name, c, known) in [
                ("drift", &d.drift, named_drift as Builtin),
                ("sigma", &d.sigma, named_sigma),
            ] {
                match c {
                    Coefficient::Named(n) if known(n).is_none() => {
                        return Err(CliError::Input(format!("unknown built-in {name} \"{n}\"")))
                    }
                    Coefficient::Samples(v) if v.len() != doc.grid.n_points => {
                        return Err(CliError::Input(format!(
                            "{name} has {} samples for {} grid points",
                            v.len(),
                            doc.grid.n_points
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(doc)
    }

    /// Builds the model described by the document.
    pub fn build(&self) -> Result<Model, CliError> {
        self.build_with_points(self.grid.n_points, self.grid.length)
    }

    /// Builds the model with `n_points` points; diffusions keep the document's spacing.
    pub fn build_truncated(&self, n_points: usize) -> Result<Model, CliError> {
        let h = self.grid.length / (self.grid.n_points - 1) as f64;
        self.build_with_points(n_points, h * (n_points - 1) as f64)
    }

    /// Builds the model on `n_points` points over the same domain (not for chains).
    pub fn build_resampled(&self, n_points: usize) -> Result<Model, CliError> {
        if self.family == Family::Chain {
            return self.build();
        }
        self.build_with_points(n_points, self.grid.length)
    }

    fn build_with_points(&self, n_points: usize, length: f64) -> Result<Model, CliError> {
        let intervals = n_points - 1;
        let model = match self.family {
            Family::BmClosedForm => build_bm_closed_form(&BmSpec {
                length,
                boundary: self.boundary_case,
                intervals,
            })
            .map(|r| r.0),
            Family::Chain => build_chain(&self.chain_spec(intervals)?),
            Family::Diffusion => {
                let d = self.diffusion.as_ref().expect("checked in parse");
                let grid = StateGrid::uniform(intervals, length, self.boundary_case != BoundaryCase::EntranceInfinity)?;
                let sample = |c: &Coefficient, named: Builtin| -> Result<Vec<f64>, CliError> {
                    match c {
                        Coefficient::Named(n) => {
                            let f = named(n).expect("checked in parse");
                            Ok(grid.points().iter().map(|&x| f(x)).collect())
                        }
                        Coefficient::Samples(v) if v.len() == n_points => Ok(v.clone()),
                        Coefficient::Samples(_) => Err(CliError::Input(
                            "coefficient samples cannot be re-gridded; use built-in names for truncation schedules"
                                .into(),
                        )),
                    }
                };
                let drift = sample(&d.drift, named_drift)?;
                let sigma = sample(&d.sigma, named_sigma)?;
                build_diffusion(&DiffusionSpec {
                    grid,
                    drift,
                    sigma,
                    boundary: self.boundary_case,
                })
            }
        };
        Ok(model?)
    }

    pub fn chain_spec(&self, states: usize) -> Result<ChainSpec, CliError> {
        match self.chain.as_ref() {
            Some(ChainDoc::Rates(r)) => Ok(ChainSpec {
                states,
                rates: r.clone(),
                boundary: self.boundary_case,
            }),
            Some(ChainDoc::BirthDeath { birth, death }) => {
                let (b, d) = (birth.clone(), death.clone());
                Ok(ChainSpec::birth_death(
                    states,
                    move |k| eval_poly(&b, k),
                    move |k| eval_poly(&d, k),
                    self.boundary_case,
                ))
            }
            None => Err(CliError::Input("not a chain document".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_rates() {
        assert_eq!(eval_poly(&[1.0, 0.0, 2.0], 3), 19.0);
        assert_eq!(eval_poly(&[], 3), 0.0);
    }

    #[test]
    fn rejects_unknown_builtins_and_versions() {
        let base = r#"{"schema_version": 1, "family": "diffusion", "boundary_case": "killed_both",
            "grid": {"n_points": 9}, "diffusion": {"drift": "nope", "sigma": "unit"}}"#;
        assert!(matches!(ModelDocument::parse(base), Err(CliError::Input(_))));
        let v2 = base.replace("\"schema_version\": 1", "\"schema_version\": 2").replace("nope", "zero");
        assert!(matches!(ModelDocument::parse(&v2), Err(CliError::Input(_))));
        let ok = base.replace("nope", "zero");
        let doc = ModelDocument::parse(&ok).unwrap();
        assert_eq!(doc.build().unwrap().last(), 8);
    }

    #[test]
    fn birth_death_document() {
        let text = r#"{"schema_version": 1, "family": "chain", "boundary_case": "reflecting_right",
            "grid": {"n_points": 3}, "chain": {"birth_death": {"birth": [1.0], "death": [0.0, 1.0]}}}"#;
        let m = ModelDocument::parse(text).unwrap().build().unwrap();
        assert_eq!(m.last(), 2);
        assert_eq!(m.k(0, 1), 1.0);
    }
}
