//! Admin-2 to Admin-1 and national aggregation.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{Result, SaeError};
use crate::fay_herriot::FhFit;
use crate::interval::expit;
use crate::survey_data::SurveyDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FractionSource {
    DesignWeights,
    ExternalPopulation,
}

impl FractionSource {
    pub fn as_str(self) -> &'static str {
        match self {
            FractionSource::DesignWeights => "design_weights",
            FractionSource::ExternalPopulation => "external_population",
        }
    }
}

/// Shares of each Admin-2 area within its Admin-1 area and of each Admin-1
/// area nationally.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregationFractions {
    pub source: FractionSource,
    /// admin1 → (area → share within admin1).
    pub within: BTreeMap<String, BTreeMap<String, f64>>,
    /// admin1 → national share.
    pub national: BTreeMap<String, f64>,
}

impl AggregationFractions {
    fn from_totals(source: FractionSource, totals: BTreeMap<String, BTreeMap<String, f64>>) -> Result<Self> {
        let grand: f64 = totals.values().flat_map(|m| m.values()).sum();
        if !(grand > 0.0) {
            return Err(SaeError::InvalidArgument("fractions need a positive total".into()));
        }
        let mut within = BTreeMap::new();
        let mut national = BTreeMap::new();
        for (a1, areas) in totals {
            let t: f64 = areas.values().sum();
            if !(t > 0.0) {
                return Err(SaeError::InvalidArgument(format!("Admin-1 `{a1}` has zero total")));
            }
            national.insert(a1.clone(), t / grand);
            within.insert(a1, areas.into_iter().map(|(k, v)| (k, v / t)).collect());
        }
        Ok(AggregationFractions { source, within, national })
    }

    /// Builds shares from `(admin1, area, population)` rows.
    pub fn from_population(rows: &[(String, String, f64)]) -> Result<Self> {
        let mut totals: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for (a1, area, pop) in rows {
            if !(pop.is_finite() && *pop >= 0.0) {
                return Err(SaeError::InvalidArgument(format!("population for `{area}` must be nonnegative")));
            }
            *totals.entry(a1.clone()).or_default().entry(area.clone()).or_default() += pop;
        }
        Self::from_totals(FractionSource::ExternalPopulation, totals)
    }

    pub fn area_share(&self, admin1: &str, area: &str) -> Option<f64> {
        self.within.get(admin1)?.get(area).copied()
    }
}

/// Shares from the sum of design weights per (Admin-1, area).
pub fn design_weight_fractions(data: &SurveyDataset) -> Result<AggregationFractions> {
    if data.is_empty() {
        return Err(SaeError::InvalidArgument("empty survey".into()));
    }
    let mut totals: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for c in data.clusters() {
        let a1 = &data.strata()[c.stratum].admin1;
        let area = &data.domains()[c.domain];
        *totals.entry(a1.clone()).or_default().entry(area.clone()).or_default() += c.weight_total;
    }
    AggregationFractions::from_totals(FractionSource::DesignWeights, totals)
}

/// Reads `admin1,area,population` rows.
pub fn read_population_fractions(path: impl AsRef<Path>) -> Result<AggregationFractions> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| SaeError::io(path.display().to_string(), e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers()?.clone();
    let col = |n: &str| headers.iter().position(|h| h == n).ok_or_else(|| SaeError::MissingColumn(n.into()));
    let (a, b, p) = (col("admin1")?, col("area")?, col("population")?);
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let pop: f64 = rec[p].parse().map_err(|_| SaeError::InvalidRow {
            row: k + 2,
            message: format!("bad population `{}`", &rec[p]),
        })?;
        rows.push((rec[a].to_string(), rec[b].to_string(), pop));
    }
    AggregationFractions::from_population(&rows)
}

/// Median and equal-tailed 95% interval of an aggregated quantity.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateSummary {
    pub name: String,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    /// Per-draw values; a single value on the direct path.
    pub draws: Vec<f64>,
}

impl AggregateSummary {
    fn from_draws(name: String, draws: Vec<f64>) -> Self {
        let mut s = draws.clone();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| crate::fay_herriot::quantile(&s, p);
        AggregateSummary {
            name,
            median: q(0.5),
            lower: q(0.025),
            upper: q(0.975),
            draws,
        }
    }
}

/// Per-draw Admin-1 prevalence Σ_i q_i expit(θ_i), summarized.
pub fn aggregate_admin1(fit: &FhFit, fractions: &AggregationFractions) -> Result<Vec<AggregateSummary>> {
    let col: HashMap<&str, usize> = fit.area_ids.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
    let prev = fit.theta.map(expit);
    fractions
        .within
        .iter()
        .map(|(a1, shares)| {
            let idx: Vec<(usize, f64)> = shares
                .iter()
                .map(|(area, q)| {
                    col.get(area.as_str())
                        .map(|&i| (i, *q))
                        .ok_or_else(|| SaeError::InvalidArgument(format!("no draws for area `{area}`")))
                })
                .collect::<Result<_>>()?;
            let draws = (0..fit.n_draws())
                .map(|d| idx.iter().map(|&(i, q)| q * prev[(d, i)]).sum())
                .collect();
            Ok(AggregateSummary::from_draws(a1.clone(), draws))
        })
        .collect()
}

/// Per-draw national prevalence Σ_h q_h p_h from Admin-1 draws.
pub fn aggregate_national(admin1: &[AggregateSummary], fractions: &AggregationFractions) -> Result<AggregateSummary> {
    let n_draws = admin1.first().map(|a| a.draws.len()).unwrap_or(0);
    let mut draws = vec![0.0; n_draws];
    for (a1, q) in &fractions.national {
        let s = admin1
            .iter()
            .find(|s| s.name == *a1)
            .ok_or_else(|| SaeError::InvalidArgument(format!("no aggregate for Admin-1 `{a1}`")))?;
        if s.draws.len() != n_draws {
            return Err(SaeError::InvalidArgument("Admin-1 aggregates have different draw counts".into()));
        }
        for (d, v) in draws.iter_mut().zip(&s.draws) {
            *d += q * v;
        }
    }
    Ok(AggregateSummary::from_draws("national".into(), draws))
}

/// Direct path: weighted sums of Admin-2 point estimates.
pub fn aggregate_admin1_direct(estimates: &HashMap<String, f64>, fractions: &AggregationFractions) -> Result<Vec<AggregateSummary>> {
    fractions
        .within
        .iter()
        .map(|(a1, shares)| {
            let v = shares
                .iter()
                .map(|(area, q)| {
                    estimates
                        .get(area)
                        .map(|p| q * p)
                        .ok_or_else(|| SaeError::InvalidArgument(format!("no estimate for area `{area}`")))
                })
                .sum::<Result<f64>>()?;
            Ok(AggregateSummary::from_draws(a1.clone(), vec![v]))
        })
        .collect()
}
