//! Hájek domain estimates and their closed-form design variance under
//! stratified two-stage cluster sampling.
//!
//! Every quantity is computed at cluster level from the extended-domain
//! totals `v_{c.}` and `sum_k v z`. A domain's variance sums, over each
//! contributing planned stratum, the squared deviations of cluster residuals
//! scaled by `n/(n-1)`, with `n` the number of clusters in the *planned*
//! stratum. Clusters of the stratum that fall outside the domain still enter
//! (the `B` terms of the decomposition). The finite population correction is 0.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SaeError};
use crate::survey_data::{ExtendedDataset, UrbanRural};

/// Absolute tolerance when comparing cluster, stratum and domain estimates.
pub const IDENTICAL_TOL: f64 = 1e-12;

/// A computed variance at or below this value is treated as exactly zero.
pub(crate) const ZERO_VARIANCE_TOL: f64 = 1e-24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Legality {
    Legal,
    IllegalSingleCluster,
    IllegalIdentical,
    NoData,
}

impl Legality {
    pub fn as_str(self) -> &'static str {
        match self {
            Legality::Legal => "legal",
            Legality::IllegalSingleCluster => "illegal_single_cluster",
            Legality::IllegalIdentical => "illegal_identical",
            Legality::NoData => "no_data",
        }
    }

    pub fn is_illegal(self) -> bool {
        matches!(self, Legality::IllegalSingleCluster | Legality::IllegalIdentical)
    }
}

impl std::str::FromStr for Legality {
    type Err = SaeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "legal" => Ok(Legality::Legal),
            "illegal_single_cluster" => Ok(Legality::IllegalSingleCluster),
            "illegal_identical" => Ok(Legality::IllegalIdentical),
            "no_data" => Ok(Legality::NoData),
            other => Err(SaeError::InvalidArgument(format!("unknown legality `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Hajek,
    Augmented,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Hajek => "hajek",
            Method::Augmented => "augmented",
        }
    }
}

/// Point estimate, variance and legality for one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainEstimate {
    pub domain_id: String,
    /// Undefined only for `no_data` domains.
    pub p_hat: Option<f64>,
    /// Defined exactly when `legality` is `Legal`.
    pub variance: Option<f64>,
    /// The value the closed form produced before legality screening
    /// (`Some(0.0)` for identical estimates, `None` when undefined).
    pub raw_variance: Option<f64>,
    pub legality: Legality,
    pub n_clusters_in_domain: usize,
    pub cv: Option<f64>,
    pub method: Method,
}

impl DomainEstimate {
    pub(crate) fn finish(
        domain_id: String,
        p_hat: Option<f64>,
        raw_variance: Option<f64>,
        legality: Legality,
        n_clusters_in_domain: usize,
        method: Method,
    ) -> Self {
        let variance = if legality == Legality::Legal {
            raw_variance
        } else {
            None
        };
        let cv = match (variance, p_hat) {
            (Some(v), Some(p)) if p > 0.0 => Some(v.sqrt() / p),
            _ => None,
        };
        DomainEstimate {
            domain_id,
            p_hat,
            variance,
            raw_variance,
            legality,
            n_clusters_in_domain,
            cv,
            method,
        }
    }

    pub fn se(&self) -> Option<f64> {
        self.variance.map(f64::sqrt)
    }
}

/// Per-cluster contribution inside a planned stratum.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterTerm {
    pub cluster_id: String,
    /// `v_{c.}`
    pub v: f64,
    /// `p_{c}`: the cluster's Hájek estimate.
    pub p: f64,
}

/// Hájek summary of one stratum restricted to a domain.
#[derive(Clone, Debug, PartialEq)]
pub struct StratumSummary {
    pub admin1: String,
    pub urban_rural: UrbanRural,
    /// Clusters in the planned stratum.
    pub n_clusters: usize,
    /// `v_{h..}`: domain weight in the stratum.
    pub v_dot: f64,
    pub p_stratum: f64,
    /// Share of the domain weight falling in this stratum.
    pub q_share: f64,
    /// Domain clusters of the stratum with their weight and estimate.
    pub cluster_terms: Vec<ClusterTerm>,
}

/// Cluster-level totals entering the variance: `v` and `sum v z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Term {
    pub v: f64,
    pub vz: f64,
    pub in_domain: bool,
}

/// All clusters of one planned stratum (plus any phantoms) seen from a domain.
#[derive(Clone, Debug)]
pub(crate) struct StratumBlock {
    pub stratum: usize,
    pub terms: Vec<Term>,
    pub n_phantoms: usize,
}

impl StratumBlock {
    pub fn n(&self) -> usize {
        self.terms.len()
    }

    pub fn v_dot(&self) -> f64 {
        self.terms.iter().map(|t| t.v).sum()
    }

    pub fn vz_dot(&self) -> f64 {
        self.terms.iter().map(|t| t.vz).sum()
    }

    pub fn p(&self) -> f64 {
        self.vz_dot() / self.v_dot()
    }

    /// Whether every domain cluster's estimate equals the stratum estimate.
    pub fn identical(&self) -> bool {
        let p_h = self.p();
        self.terms
            .iter()
            .filter(|t| t.in_domain && t.v > 0.0)
            .all(|t| (t.vz / t.v - p_h).abs() <= IDENTICAL_TOL)
    }
}

/// Blocks for every planned stratum holding at least one domain cluster.
pub(crate) fn domain_blocks(ext: &ExtendedDataset<'_>) -> Vec<StratumBlock> {
    let data = ext.data();
    ext.contributing_strata()
        .into_iter()
        .map(|s| StratumBlock {
            stratum: s,
            terms: data
                .stratum_clusters(s)
                .iter()
                .map(|&c| Term {
                    v: ext.cluster_v(c),
                    vz: ext.cluster_vz(c),
                    in_domain: data.cluster(c).domain == ext.domain(),
                })
                .collect(),
            n_phantoms: 0,
        })
        .filter(|b| b.v_dot() > 0.0)
        .collect()
}

pub(crate) fn pooled_ratio(blocks: &[StratumBlock]) -> Option<f64> {
    let v: f64 = blocks.iter().map(StratumBlock::v_dot).sum();
    if v > 0.0 {
        Some(blocks.iter().map(StratumBlock::vz_dot).sum::<f64>() / v)
    } else {
        None
    }
}

/// Closed-form variance written in terms of cluster and stratum estimates.
/// Returns `None` if any block has a single cluster.
pub(crate) fn linearized_variance(blocks: &[StratumBlock]) -> Option<f64> {
    let p_i = pooled_ratio(blocks)?;
    let v_tot: f64 = blocks.iter().map(StratumBlock::v_dot).sum();
    let mut acc = 0.0;
    for b in blocks {
        let n = b.n();
        if n < 2 {
            return None;
        }
        let n = n as f64;
        let stratum_dev = b.v_dot() * (b.p() - p_i) / n;
        let ss: f64 = b
            .terms
            .iter()
            .map(|t| {
                let cluster_dev = if t.v > 0.0 { t.v * (t.vz / t.v - p_i) } else { 0.0 };
                (cluster_dev - stratum_dev).powi(2)
            })
            .sum();
        acc += n / (n - 1.0) * ss;
    }
    Some(acc / (v_tot * v_tot))
}

pub(crate) fn classify_blocks(blocks: &[StratumBlock]) -> Legality {
    if blocks.is_empty() {
        return Legality::NoData;
    }
    if blocks.iter().any(|b| b.n() == 1) {
        return Legality::IllegalSingleCluster;
    }
    let p_i = pooled_ratio(blocks).expect("non-empty blocks carry weight");
    let all_identical = blocks.iter().all(StratumBlock::identical);
    let strata_identical = all_identical && blocks.iter().all(|b| (b.p() - p_i).abs() <= IDENTICAL_TOL);
    // A domain made of whole strata can have within-stratum identical
    // estimates that differ across strata; with equal cluster weights the
    // closed form is then zero as well.
    let degenerate = all_identical
        && linearized_variance(blocks).is_some_and(|v| v <= ZERO_VARIANCE_TOL);
    if strata_identical || degenerate {
        Legality::IllegalIdentical
    } else {
        Legality::Legal
    }
}

fn n_domain_clusters(ext: &ExtendedDataset<'_>) -> usize {
    let data = ext.data();
    data.domain_clusters(ext.domain())
        .iter()
        .filter(|&&c| data.cluster(c).weight_total > 0.0)
        .count()
}

/// Hájek estimate of one stratum restricted to the domain.
pub fn hajek_stratum(
    ext: &ExtendedDataset<'_>,
    admin1: &str,
    urban_rural: UrbanRural,
) -> Result<StratumSummary> {
    let data = ext.data();
    let no_data = || SaeError::NoDataInStratum {
        admin1: admin1.to_string(),
        urban_rural: urban_rural.to_string(),
    };
    let s = data.stratum_index(admin1, urban_rural).ok_or_else(no_data)?;
    let clusters = data.stratum_clusters(s);
    let v_dot: f64 = clusters.iter().map(|&c| ext.cluster_v(c)).sum();
    if v_dot <= 0.0 {
        return Err(no_data());
    }
    let vz_dot: f64 = clusters.iter().map(|&c| ext.cluster_vz(c)).sum();
    let domain_v: f64 = data
        .domain_clusters(ext.domain())
        .iter()
        .map(|&c| ext.cluster_v(c))
        .sum();
    let cluster_terms = clusters
        .iter()
        .filter(|&&c| ext.cluster_v(c) > 0.0)
        .map(|&c| ClusterTerm {
            cluster_id: data.cluster(c).id.clone(),
            v: ext.cluster_v(c),
            p: ext.cluster_vz(c) / ext.cluster_v(c),
        })
        .collect();
    Ok(StratumSummary {
        admin1: admin1.to_string(),
        urban_rural,
        n_clusters: clusters.len(),
        v_dot,
        p_stratum: vz_dot / v_dot,
        q_share: v_dot / domain_v,
        cluster_terms,
    })
}

/// Domain Hájek estimate as the `q`-weighted sum of stratum estimates.
/// The variance is left unset; see [`variance_domain`].
pub fn hajek_domain(ext: &ExtendedDataset<'_>) -> DomainEstimate {
    let data = ext.data();
    let mut summaries = Vec::new();
    for s in ext.contributing_strata() {
        let key = &data.strata()[s];
        if let Ok(sum) = hajek_stratum(ext, &key.admin1, key.urban_rural) {
            summaries.push(sum);
        }
    }
    let p_hat = if summaries.is_empty() {
        None
    } else {
        Some(summaries.iter().map(|s| s.q_share * s.p_stratum).sum())
    };
    let legality = if p_hat.is_none() {
        Legality::NoData
    } else {
        classify_legality(ext)
    };
    DomainEstimate::finish(
        ext.domain_id().to_string(),
        p_hat,
        None,
        legality,
        n_domain_clusters(ext),
        Method::Hajek,
    )
}

/// Domain estimate with the closed-form design variance filled in.
///
/// Single-cluster strata leave the variance undefined; identical estimates
/// yield a raw variance of zero. Both are flagged illegal.
pub fn variance_domain(ext: &ExtendedDataset<'_>) -> DomainEstimate {
    let blocks = domain_blocks(ext);
    let legality = classify_blocks(&blocks);
    let p_hat = pooled_ratio(&blocks);
    let raw = match legality {
        Legality::NoData | Legality::IllegalSingleCluster => None,
        _ => linearized_variance(&blocks),
    };
    DomainEstimate::finish(
        ext.domain_id().to_string(),
        p_hat,
        raw,
        legality,
        n_domain_clusters(ext),
        Method::Hajek,
    )
}

/// Legality of the closed-form variance for the domain.
///
/// Precedence: `no_data`, then single-cluster strata, then identical estimates.
pub fn classify_legality(ext: &ExtendedDataset<'_>) -> Legality {
    classify_blocks(&domain_blocks(ext))
}

/// `A` and `B` parts of one stratum's contribution.
#[derive(Clone, Debug, PartialEq)]
pub struct StratumDecomposition {
    pub admin1: String,
    pub urban_rural: UrbanRural,
    pub n_clusters: usize,
    /// Sum over the domain's clusters in the stratum.
    pub a: f64,
    /// Sum over the stratum's clusters outside the domain.
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceDecomposition {
    pub strata: Vec<StratumDecomposition>,
    pub total: f64,
}

/// Splits the closed-form variance into within-domain (`A`) and
/// outside-domain (`B`) cluster contributions.
pub fn variance_decomposition(ext: &ExtendedDataset<'_>) -> Result<VarianceDecomposition> {
    let blocks = domain_blocks(ext);
    match classify_blocks(&blocks) {
        Legality::NoData => {
            return Err(SaeError::InvalidArgument(format!(
                "domain `{}` has no data",
                ext.domain_id()
            )))
        }
        Legality::IllegalSingleCluster => {
            return Err(SaeError::InvalidArgument(format!(
                "domain `{}` lies in a single-cluster stratum",
                ext.domain_id()
            )))
        }
        _ => {}
    }
    let p_i = pooled_ratio(&blocks).expect("checked non-empty");
    let v_tot: f64 = blocks.iter().map(StratumBlock::v_dot).sum();
    let strata = ext.data().strata();
    let mut out = Vec::with_capacity(blocks.len());
    let mut total = 0.0;
    for b in &blocks {
        let n = b.n() as f64;
        let shift = b.v_dot() * (b.p() - p_i) / n;
        let mut a = 0.0;
        let mut bsum = 0.0;
        for t in &b.terms {
            if t.in_domain {
                let d = t.v * (t.vz / t.v - p_i) - shift;
                a += d * d;
            } else {
                bsum += b.v_dot().powi(2) * (b.p() - p_i).powi(2) / (n * n);
            }
        }
        total += n / (n - 1.0) * (a + bsum);
        let key = &strata[b.stratum];
        out.push(StratumDecomposition {
            admin1: key.admin1.clone(),
            urban_rural: key.urban_rural,
            n_clusters: b.n(),
            a,
            b: bsum,
        });
    }
    Ok(VarianceDecomposition {
        strata: out,
        total: total / (v_tot * v_tot),
    })
}

/// Stratified delete-one-cluster jackknife variance of the domain ratio.
pub fn jackknife_variance(ext: &ExtendedDataset<'_>) -> Result<f64> {
    let blocks = domain_blocks(ext);
    if blocks.is_empty() {
        return Err(SaeError::InvalidArgument(format!(
            "domain `{}` has no data",
            ext.domain_id()
        )));
    }
    if blocks.iter().any(|b| b.n() < 2) {
        return Err(SaeError::InvalidArgument(
            "jackknife undefined for a stratum with one cluster".into(),
        ));
    }
    let full = pooled_ratio(&blocks).expect("non-empty");
    let totals: Vec<(f64, f64)> = blocks.iter().map(|b| (b.vz_dot(), b.v_dot())).collect();
    let (num_all, den_all) = totals
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let mut var = 0.0;
    for (h, b) in blocks.iter().enumerate() {
        let n = b.n() as f64;
        let scale = n / (n - 1.0);
        let (num_h, den_h) = totals[h];
        let mut ss = 0.0;
        for t in &b.terms {
            let num = num_all - num_h + scale * (num_h - t.vz);
            let den = den_all - den_h + scale * (den_h - t.v);
            if den <= 0.0 {
                return Err(SaeError::Numerical(format!(
                    "jackknife replicate for domain `{}` has no domain weight",
                    ext.domain_id()
                )));
            }
            ss += (num / den - full).powi(2);
        }
        var += (n - 1.0) / n * ss;
    }
    Ok(var)
}
