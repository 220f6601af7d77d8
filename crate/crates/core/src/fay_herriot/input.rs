use std::collections::{BTreeSet, HashMap};

use nalgebra::DMatrix;

use crate::direct::DomainEstimate;
use crate::error::{Result, SaeError};
use crate::interval::logit_transform_parts;

/// One area of the linking model.
#[derive(Clone, Debug, PartialEq)]
pub struct FhArea {
    pub area_id: String,
    pub admin1: String,
    /// Logit-scale direct estimate; `None` for areas to be predicted.
    pub theta_hat: Option<f64>,
    pub var_theta: Option<f64>,
    pub covariates: Vec<f64>,
}

impl FhArea {
    pub fn is_missing(&self) -> bool {
        self.theta_hat.is_none()
    }
}

#[derive(Clone, Debug, Default)]
pub struct FhInput {
    pub areas: Vec<FhArea>,
    pub covariate_names: Vec<String>,
}

impl FhInput {
    pub fn new(areas: Vec<FhArea>, covariate_names: Vec<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for a in &areas {
            if !seen.insert(a.area_id.as_str()) {
                return Err(SaeError::InvalidArgument(format!("duplicate area `{}`", a.area_id)));
            }
            if a.covariates.len() != covariate_names.len() {
                return Err(SaeError::InvalidArgument(format!(
                    "area `{}` has {} covariates, expected {}",
                    a.area_id,
                    a.covariates.len(),
                    covariate_names.len()
                )));
            }
            match (a.theta_hat, a.var_theta) {
                (Some(t), Some(v)) if t.is_finite() && v.is_finite() && v > 0.0 => {}
                (None, _) => {}
                _ => {
                    return Err(SaeError::InvalidArgument(format!(
                        "area `{}`: observed areas need a finite estimate and positive variance",
                        a.area_id
                    )))
                }
            }
        }
        Ok(FhInput {
            areas,
            covariate_names,
        })
    }

    /// Builds the input from direct estimates. Areas without an estimate,
    /// without a positive variance, or on the boundary become missing.
    pub fn from_estimates(estimates: &[DomainEstimate], admin1_of: &HashMap<String, String>) -> Result<Self> {
        let areas = estimates
            .iter()
            .map(|e| {
                let admin1 = admin1_of
                    .get(&e.domain_id)
                    .cloned()
                    .ok_or_else(|| SaeError::UnknownDomain(e.domain_id.clone()))?;
                let t = match (e.p_hat, e.variance) {
                    (Some(p), Some(v)) if v > 0.0 => logit_transform_parts(p, v).ok(),
                    _ => None,
                };
                Ok(FhArea {
                    area_id: e.domain_id.clone(),
                    admin1,
                    theta_hat: t.map(|t| t.theta),
                    var_theta: t.map(|t| t.var_theta),
                    covariates: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        FhInput::new(areas, Vec::new())
    }

    pub fn n_observed(&self) -> usize {
        self.areas.iter().filter(|a| !a.is_missing()).count()
    }

    pub fn admin1_groups(&self) -> Vec<String> {
        self.areas
            .iter()
            .map(|a| a.admin1.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Fixed-effect design matrix over all areas and the effect names.
    pub(crate) fn design(&self, nested: bool) -> Result<(DMatrix<f64>, Vec<String>)> {
        let mut names: Vec<String> = if nested {
            let g = self.admin1_groups();
            if g.len() < 2 {
                return Err(SaeError::InvalidArgument(
                    "nested model needs at least two Admin-1 groups".into(),
                ));
            }
            g
        } else {
            vec!["intercept".to_string()]
        };
        let n_base = names.len();
        names.extend(self.covariate_names.iter().cloned());
        let mut x = DMatrix::zeros(self.areas.len(), names.len());
        for (i, a) in self.areas.iter().enumerate() {
            if nested {
                let j = names[..n_base].iter().position(|g| *g == a.admin1).expect("group listed");
                x[(i, j)] = 1.0;
            } else {
                x[(i, 0)] = 1.0;
            }
            for (k, c) in a.covariates.iter().enumerate() {
                x[(i, n_base + k)] = *c;
            }
        }
        Ok((x, names))
    }
}
