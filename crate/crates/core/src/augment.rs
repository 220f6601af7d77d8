//! Phantom-cluster augmentation.
//!
//! A phantom cluster is a cluster-level pseudo-observation: its estimate is a
//! prior mean and its weight total a prior weight. Appending it to a stratum
//! of a domain turns the Hájek ratio into a convex combination of the data and
//! the prior, and the same closed-form variance is then evaluated on the
//! augmented sample with `n + n_phantoms` clusters in the stratum.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::direct::{
    classify_blocks, domain_blocks, linearized_variance, pooled_ratio, variance_domain,
    DomainEstimate, Legality, Method, StratumBlock, Term,
};
use crate::error::{Result, SaeError};
use crate::survey_data::{ExtendedDataset, SurveyDataset, UrbanRural};

/// Prior used for every phantom cluster of one urban/rural class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomPrior {
    pub urban_rural: UrbanRural,
    pub prior_mean: f64,
    pub prior_weight: f64,
}

/// A synthetic cluster added to one stratum of one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomCluster {
    pub domain_id: String,
    pub admin1: String,
    pub urban_rural: UrbanRural,
    pub cluster_id: String,
    pub mean: f64,
    pub weight_total: f64,
    pub(crate) stratum: usize,
}

/// National Hájek estimate and average cluster weight total for one class.
pub fn national_stratum_prior(data: &SurveyDataset, urban_rural: UrbanRural) -> Result<PhantomPrior> {
    let mut n = 0usize;
    let (mut w, mut wy) = (0.0, 0.0);
    for c in data.clusters() {
        if data.strata()[c.stratum].urban_rural == urban_rural {
            n += 1;
            w += c.weight_total;
            wy += c.weighted_events;
        }
    }
    if n == 0 || w <= 0.0 {
        return Err(SaeError::EmptyPriorClass(urban_rural.to_string()));
    }
    Ok(PhantomPrior {
        urban_rural,
        prior_mean: wy / w,
        prior_weight: w / n as f64,
    })
}

/// Priors for both classes, each either computed nationally or overridden.
#[derive(Clone, Debug, Default)]
pub struct PhantomPriors {
    urban: Option<PhantomPrior>,
    rural: Option<PhantomPrior>,
}

/// Explicit prior values for one class; unset fields fall back to the national value.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PriorOverride {
    pub mean: Option<f64>,
    pub weight: Option<f64>,
}

impl PhantomPriors {
    /// National priors for whichever classes the sample contains.
    pub fn national(data: &SurveyDataset) -> Self {
        Self::with_overrides(data, PriorOverride::default(), PriorOverride::default())
            .expect("no overrides to validate")
    }

    pub fn with_overrides(
        data: &SurveyDataset,
        urban: PriorOverride,
        rural: PriorOverride,
    ) -> Result<Self> {
        let build = |ur: UrbanRural, ov: PriorOverride| -> Result<Option<PhantomPrior>> {
            if let Some(m) = ov.mean {
                if !(0.0..=1.0).contains(&m) {
                    return Err(SaeError::InvalidArgument(format!(
                        "phantom mean must lie in [0, 1], got {m}"
                    )));
                }
            }
            if let Some(w) = ov.weight {
                if !(w.is_finite() && w > 0.0) {
                    return Err(SaeError::InvalidArgument(format!(
                        "phantom weight must be positive, got {w}"
                    )));
                }
            }
            let national = national_stratum_prior(data, ur).ok();
            Ok(match (national, ov.mean, ov.weight) {
                (_, Some(m), Some(w)) => Some(PhantomPrior {
                    urban_rural: ur,
                    prior_mean: m,
                    prior_weight: w,
                }),
                (Some(p), m, w) => Some(PhantomPrior {
                    urban_rural: ur,
                    prior_mean: m.unwrap_or(p.prior_mean),
                    prior_weight: w.unwrap_or(p.prior_weight),
                }),
                (None, _, _) => None,
            })
        };
        Ok(PhantomPriors {
            urban: build(UrbanRural::Urban, urban)?,
            rural: build(UrbanRural::Rural, rural)?,
        })
    }

    pub fn from_priors(urban: Option<PhantomPrior>, rural: Option<PhantomPrior>) -> Self {
        PhantomPriors { urban, rural }
    }

    pub fn get(&self, ur: UrbanRural) -> Result<PhantomPrior> {
        match ur {
            UrbanRural::Urban => self.urban,
            UrbanRural::Rural => self.rural,
        }
        .ok_or_else(|| SaeError::EmptyPriorClass(ur.to_string()))
    }
}

fn phantom_id(data: &SurveyDataset, domain: &str, admin1: &str, ur: UrbanRural) -> String {
    let taken: HashSet<&str> = data.clusters().iter().map(|c| c.id.as_str()).collect();
    let base = format!("phantom:{domain}:{admin1}:{ur}");
    let mut id = base.clone();
    let mut k = 1;
    while taken.contains(id.as_str()) {
        id = format!("{base}#{k}");
        k += 1;
    }
    id
}

fn phantom_for(
    ext: &ExtendedDataset<'_>,
    stratum: usize,
    priors: &PhantomPriors,
) -> Result<PhantomCluster> {
    let data = ext.data();
    let key = &data.strata()[stratum];
    let prior = priors.get(key.urban_rural)?;
    Ok(PhantomCluster {
        domain_id: ext.domain_id().to_string(),
        admin1: key.admin1.clone(),
        urban_rural: key.urban_rural,
        cluster_id: phantom_id(data, ext.domain_id(), &key.admin1, key.urban_rural),
        mean: prior.prior_mean,
        weight_total: prior.prior_weight,
        stratum,
    })
}

/// Phantoms repairing an illegal domain: one per single-cluster stratum, or
/// one per stratum meeting the identical-estimates condition.
pub fn build_phantom_clusters(
    ext: &ExtendedDataset<'_>,
    legality: Legality,
    priors: &PhantomPriors,
) -> Result<Vec<PhantomCluster>> {
    let blocks = domain_blocks(ext);
    let targets: Vec<usize> = match legality {
        Legality::IllegalSingleCluster => blocks
            .iter()
            .filter(|b| b.n() == 1)
            .map(|b| b.stratum)
            .collect(),
        Legality::IllegalIdentical => blocks
            .iter()
            .filter(|b| b.identical())
            .map(|b| b.stratum)
            .collect(),
        Legality::Legal => {
            return Err(SaeError::RepairNotApplicable(format!(
                "domain `{}` already has a legal variance",
                ext.domain_id()
            )))
        }
        Legality::NoData => {
            return Err(SaeError::RepairNotApplicable(format!(
                "domain `{}` has no data; leave it to the smoothing model",
                ext.domain_id()
            )))
        }
    };
    targets.into_iter().map(|s| phantom_for(ext, s, priors)).collect()
}

/// One phantom in every stratum holding domain data, regardless of legality.
pub fn build_phantom_clusters_all(
    ext: &ExtendedDataset<'_>,
    priors: &PhantomPriors,
) -> Result<Vec<PhantomCluster>> {
    domain_blocks(ext)
        .iter()
        .map(|b| phantom_for(ext, b.stratum, priors))
        .collect()
}

fn augmented_blocks(ext: &ExtendedDataset<'_>, phantoms: &[PhantomCluster]) -> Result<Vec<StratumBlock>> {
    let data = ext.data();
    let mut blocks = domain_blocks(ext);
    for ph in phantoms {
        if ph.domain_id != ext.domain_id() {
            return Err(SaeError::InvalidArgument(format!(
                "phantom for domain `{}` applied to `{}`",
                ph.domain_id,
                ext.domain_id()
            )));
        }
        let term = Term {
            v: ph.weight_total,
            vz: ph.weight_total * ph.mean,
            in_domain: true,
        };
        match blocks.iter_mut().find(|b| b.stratum == ph.stratum) {
            Some(b) => {
                b.terms.push(term);
                b.n_phantoms += 1;
            }
            None => {
                let mut terms: Vec<Term> = data
                    .stratum_clusters(ph.stratum)
                    .iter()
                    .map(|_| Term {
                        v: 0.0,
                        vz: 0.0,
                        in_domain: false,
                    })
                    .collect();
                terms.push(term);
                blocks.push(StratumBlock {
                    stratum: ph.stratum,
                    terms,
                    n_phantoms: 1,
                });
            }
        }
    }
    blocks.sort_by_key(|b| b.stratum);
    Ok(blocks)
}

fn n_real_clusters(ext: &ExtendedDataset<'_>) -> usize {
    ext.data().domain_clusters(ext.domain()).len()
}

/// Augmented point estimate: pooled ratio over real and phantom clusters.
pub fn augmented_estimate(ext: &ExtendedDataset<'_>, phantoms: &[PhantomCluster]) -> Result<DomainEstimate> {
    if phantoms.is_empty() {
        return Err(SaeError::InvalidArgument("no phantom clusters supplied".into()));
    }
    let blocks = augmented_blocks(ext, phantoms)?;
    let p = pooled_ratio(&blocks);
    Ok(DomainEstimate::finish(
        ext.domain_id().to_string(),
        p,
        None,
        classify_blocks(&blocks),
        n_real_clusters(ext),
        Method::Augmented,
    ))
}

/// Augmented estimate with the closed-form variance evaluated on the
/// augmented sample. With no phantoms this is the unaugmented variance.
pub fn augmented_variance(ext: &ExtendedDataset<'_>, phantoms: &[PhantomCluster]) -> Result<DomainEstimate> {
    let blocks = augmented_blocks(ext, phantoms)?;
    let legality = classify_blocks(&blocks);
    if legality == Legality::NoData {
        return Err(SaeError::RepairNotApplicable(format!(
            "domain `{}` has no data",
            ext.domain_id()
        )));
    }
    if legality.is_illegal() {
        return Err(SaeError::DegenerateAfterFix(ext.domain_id().to_string()));
    }
    Ok(DomainEstimate::finish(
        ext.domain_id().to_string(),
        pooled_ratio(&blocks),
        linearized_variance(&blocks),
        legality,
        n_real_clusters(ext),
        if phantoms.is_empty() {
            Method::Hajek
        } else {
            Method::Augmented
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    AllUnfixed,
    AllFixed,
    Mixed,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::AllUnfixed, Strategy::AllFixed, Strategy::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::AllUnfixed => "all_unfixed",
            Strategy::AllFixed => "all_fixed",
            Strategy::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = SaeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "all_unfixed" | "unfixed" => Ok(Strategy::AllUnfixed),
            "all" | "all_fixed" => Ok(Strategy::AllFixed),
            "mixed" => Ok(Strategy::Mixed),
            other => Err(SaeError::InvalidArgument(format!("unknown strategy `{other}`"))),
        }
    }
}

/// One domain's output under a strategy.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyRow {
    pub estimate: DomainEstimate,
    /// Legality of the unaugmented closed form.
    pub original_legality: Legality,
    pub phantoms: Vec<PhantomCluster>,
    /// Set when a requested repair could not be applied.
    pub note: Option<String>,
}

/// Estimates one domain under a strategy.
pub fn estimate_domain(ext: &ExtendedDataset<'_>, strategy: Strategy, priors: &PhantomPriors) -> StrategyRow {
    let direct = variance_domain(ext);
    let original = direct.legality;
    let unfixed = |note: Option<String>| StrategyRow {
        estimate: direct.clone(),
        original_legality: original,
        phantoms: Vec::new(),
        note,
    };
    let phantoms = match (strategy, original) {
        (_, Legality::NoData) | (Strategy::AllUnfixed, _) | (Strategy::Mixed, Legality::Legal) => {
            return unfixed(None)
        }
        (Strategy::Mixed, l) => build_phantom_clusters(ext, l, priors),
        (Strategy::AllFixed, _) => build_phantom_clusters_all(ext, priors),
    };
    match phantoms.and_then(|ph| augmented_variance(ext, &ph).map(|est| (ph, est))) {
        Ok((phantoms, estimate)) => StrategyRow {
            estimate,
            original_legality: original,
            phantoms,
            note: None,
        },
        Err(e) => unfixed(Some(e.to_string())),
    }
}

/// Estimates every domain of the dataset under a strategy.
pub fn apply_strategy(data: &SurveyDataset, strategy: Strategy, priors: &PhantomPriors) -> Vec<StrategyRow> {
    (0..data.domains().len())
        .into_par_iter()
        .map(|d| estimate_domain(&data.extend_domain_idx(d), strategy, priors))
        .collect()
}

/// Sequential variant for callers already running inside a worker pool.
pub fn apply_strategy_seq(data: &SurveyDataset, strategy: Strategy, priors: &PhantomPriors) -> Vec<StrategyRow> {
    (0..data.domains().len())
        .map(|d| estimate_domain(&data.extend_domain_idx(d), strategy, priors))
        .collect()
}
