//! Area-level Fay-Herriot smoothing on the logit scale.
//!
//! Two fits are provided: an iid model by empirical Bayes and a BYM2 model
//! with scaled ICAR spatial effects by MCMC. Either can use a single global
//! intercept or one intercept per Admin-1 area (the nested model). Both
//! return posterior draws of every area's θ, including areas with no usable
//! direct estimate.

mod bym2;
mod diagnostics;
mod eb;
mod icar;
mod input;
mod summary;

pub use bym2::{fit_bym2_mcmc, McmcOptions};
pub use diagnostics::{effective_sample_size, split_rhat};
pub use eb::{fit_iid_eb, iid_posterior, IidOptions, IidPosterior};
pub use icar::{build_scaled_icar, read_adjacency, SpatialStructure};
pub use input::{FhArea, FhInput};
pub use summary::{
    band_sizes, hyperparameter_summary, quantile, posterior_prevalence, ranking_probabilities, AreaSummary,
    HyperSummary, RankRow, RankTable,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Iid,
    Bym2,
}

impl Model {
    pub fn as_str(self) -> &'static str {
        match self {
            Model::Iid => "iid",
            Model::Bym2 => "bym2",
        }
    }
}

impl std::str::FromStr for Model {
    type Err = crate::SaeError;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "iid" => Ok(Model::Iid),
            "bym2" => Ok(Model::Bym2),
            other => Err(crate::SaeError::InvalidArgument(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    /// Split-R̂ of θ per area.
    pub rhat: Vec<f64>,
    /// Bulk effective sample size of θ per area.
    pub ess: Vec<f64>,
    pub n_chains: usize,
    pub accept_rate: f64,
}

impl Diagnostics {
    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().fold(f64::NAN, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess.iter().copied().fold(f64::NAN, f64::min)
    }
}

/// Posterior draws for an area-level model.
#[derive(Clone, Debug)]
pub struct FhFit {
    pub model: Model,
    pub nested: bool,
    pub area_ids: Vec<String>,
    /// Names of the fixed effects: Admin-1 ids when nested, else `intercept`,
    /// followed by covariate names.
    pub fixed_names: Vec<String>,
    /// Draws × areas.
    pub theta: DMatrix<f64>,
    /// Draws × fixed effects.
    pub fixed: DMatrix<f64>,
    pub sigma: Vec<f64>,
    /// BYM2 mixing proportion; empty for the iid model.
    pub phi: Vec<f64>,
    /// Structured component S per draw (draws × areas); BYM2 only.
    pub spatial: Option<DMatrix<f64>>,
    pub diagnostics: Option<Diagnostics>,
    pub warnings: Vec<String>,
}

impl FhFit {
    pub fn n_draws(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n_areas(&self) -> usize {
        self.theta.ncols()
    }
}
