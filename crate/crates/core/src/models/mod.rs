//! Builders for the shipped model families.

mod chain;
mod closed_form;
mod diffusion;

pub use chain::{build_chain, chain_scale_direct, windowed_scale, ChainRates, ChainSpec};
pub use closed_form::{build_bm_closed_form, BmOracle, BmSpec};
pub use diffusion::{build_diffusion, named_drift, named_sigma, DiffusionSpec};

/// The dynamics a model was built from. The oracles in `verify` use it to
/// assemble generators and simulate paths independently of the scale kernel.
#[derive(Debug, Clone)]
pub enum Dynamics {
    /// Diffusion `dX = b(X) dt + sigma(X) dB` with coefficients sampled on the grid.
    Diffusion {
        drift: Vec<f64>,
        sigma: Vec<f64>,
        /// Natural scale `s(x_i)`.
        scale: Vec<f64>,
        /// Richardson estimate of the relative quadrature error in `s`.
        quadrature_error: f64,
    },
    /// Downward skip-free chain on `0..=N`.
    Chain(ChainRates),
}
