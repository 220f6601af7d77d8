//! Survey observations, their validation, and the extended-domain view used
//! by every estimator.
//!
//! The canonical form is unit-level: cluster-aggregate input is expanded into
//! `n_trials` unit records carrying the cluster weight. Strata are the cross
//! of `admin1` and urban/rural. A dataset whose urban/rural column is constant
//! is a single-stratum-per-Admin-1 design, which is what the simulation uses.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SaeError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UrbanRural {
    Urban,
    Rural,
}

impl UrbanRural {
    pub const ALL: [UrbanRural; 2] = [UrbanRural::Urban, UrbanRural::Rural];

    pub fn as_str(self) -> &'static str {
        match self {
            UrbanRural::Urban => "urban",
            UrbanRural::Rural => "rural",
        }
    }
}

impl fmt::Display for UrbanRural {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UrbanRural {
    type Err = SaeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "urban" => Ok(UrbanRural::Urban),
            "rural" => Ok(UrbanRural::Rural),
            other => Err(SaeError::InvalidArgument(format!(
                "urban_rural must be `urban` or `rural`, got `{other}`"
            ))),
        }
    }
}

/// One sampled unit.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitRecord {
    pub admin1: String,
    pub urban_rural: UrbanRural,
    pub cluster_id: String,
    pub domain_id: String,
    pub weight: f64,
    pub outcome: u8,
    /// Optional unit identifier within the cluster, used only for duplicate detection.
    pub unit_id: Option<String>,
}

/// One sampled cluster in aggregated form.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAggregate {
    pub admin1: String,
    pub urban_rural: UrbanRural,
    pub cluster_id: String,
    pub domain_id: String,
    pub weight: f64,
    pub n_trials: u32,
    pub events: u32,
}

impl ClusterAggregate {
    /// Expands to `n_trials` unit records, the first `events` of which are ones.
    pub fn expand(&self) -> impl Iterator<Item = UnitRecord> + '_ {
        (0..self.n_trials).map(move |k| UnitRecord {
            admin1: self.admin1.clone(),
            urban_rural: self.urban_rural,
            cluster_id: self.cluster_id.clone(),
            domain_id: self.domain_id.clone(),
            weight: self.weight,
            outcome: u8::from(k < self.events),
            unit_id: None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    Unit,
    ClusterAggregate,
}

impl FromStr for Schema {
    type Err = SaeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "unit" => Ok(Schema::Unit),
            "cluster" | "cluster_aggregate" => Ok(Schema::ClusterAggregate),
            other => Err(SaeError::InvalidArgument(format!("unknown schema `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StratumKey {
    pub admin1: String,
    pub urban_rural: UrbanRural,
}

impl fmt::Display for StratumKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.admin1, self.urban_rural)
    }
}

/// Per-cluster totals computed once at construction.
#[derive(Clone, Debug)]
pub struct ClusterInfo {
    pub id: String,
    pub stratum: usize,
    pub domain: usize,
    pub n_units: usize,
    /// Sum of unit weights in the cluster.
    pub weight_total: f64,
    /// Sum of weight times outcome in the cluster.
    pub weighted_events: f64,
}

impl ClusterInfo {
    pub fn mean(&self) -> f64 {
        self.weighted_events / self.weight_total
    }
}

/// A validated survey sample with stratum, cluster and domain indices.
#[derive(Clone, Debug)]
pub struct SurveyDataset {
    records: Vec<UnitRecord>,
    record_cluster: Vec<usize>,
    strata: Vec<StratumKey>,
    domains: Vec<String>,
    domain_admin1: Vec<BTreeSet<String>>,
    clusters: Vec<ClusterInfo>,
    stratum_clusters: Vec<Vec<usize>>,
    domain_clusters: Vec<Vec<usize>>,
}

impl SurveyDataset {
    /// Builds a dataset, rejecting records that violate the unit invariants.
    pub fn new(records: Vec<UnitRecord>) -> Result<Self> {
        Self::with_domains(records, std::iter::empty::<String>())
    }

    /// Like [`SurveyDataset::new`] but also registers domains that may have no
    /// sampled units (they are estimated as `no_data`).
    pub fn with_domains<I, S>(records: Vec<UnitRecord>, declared: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let rows: Vec<(Option<usize>, &UnitRecord)> = records.iter().map(|r| (None, r)).collect();
        if let Some(v) = hard_violations(&rows).into_iter().next() {
            return Err(match v.row {
                Some(row) => SaeError::InvalidRow {
                    row,
                    message: v.message,
                },
                None => SaeError::InvalidArgument(v.message),
            });
        }
        drop(rows);

        let mut strata: BTreeSet<StratumKey> = BTreeSet::new();
        let mut domains: BTreeSet<String> = declared.into_iter().map(Into::into).collect();
        for r in &records {
            strata.insert(StratumKey {
                admin1: r.admin1.clone(),
                urban_rural: r.urban_rural,
            });
            domains.insert(r.domain_id.clone());
        }
        let strata: Vec<StratumKey> = strata.into_iter().collect();
        let domains: Vec<String> = domains.into_iter().collect();
        let stratum_idx: HashMap<&StratumKey, usize> =
            strata.iter().enumerate().map(|(i, s)| (s, i)).collect();
        let domain_idx: HashMap<&str, usize> = domains
            .iter()
            .enumerate()
            .map(|(i, d)| (d.as_str(), i))
            .collect();

        // Clusters ordered by (stratum, id) so that downstream sums do not
        // depend on record order.
        let mut cluster_keys: BTreeMap<(usize, &str), usize> = BTreeMap::new();
        for r in &records {
            let key = StratumKey {
                admin1: r.admin1.clone(),
                urban_rural: r.urban_rural,
            };
            let s = stratum_idx[&key];
            let d = domain_idx[r.domain_id.as_str()];
            cluster_keys.entry((s, r.cluster_id.as_str())).or_insert(d);
        }
        let mut clusters: Vec<ClusterInfo> = cluster_keys
            .iter()
            .map(|(&(s, id), &d)| ClusterInfo {
                id: id.to_string(),
                stratum: s,
                domain: d,
                n_units: 0,
                weight_total: 0.0,
                weighted_events: 0.0,
            })
            .collect();
        let record_cluster: Vec<usize> = {
            let lookup: HashMap<&str, usize> = clusters
                .iter()
                .enumerate()
                .map(|(i, c)| (c.id.as_str(), i))
                .collect();
            records
                .iter()
                .map(|r| lookup[r.cluster_id.as_str()])
                .collect()
        };
        for (r, &c) in records.iter().zip(&record_cluster) {
            let info = &mut clusters[c];
            info.n_units += 1;
            info.weight_total += r.weight;
            info.weighted_events += r.weight * f64::from(r.outcome);
        }

        let mut stratum_clusters = vec![Vec::new(); strata.len()];
        let mut domain_clusters = vec![Vec::new(); domains.len()];
        let mut domain_admin1 = vec![BTreeSet::new(); domains.len()];
        for (i, c) in clusters.iter().enumerate() {
            stratum_clusters[c.stratum].push(i);
            domain_clusters[c.domain].push(i);
            domain_admin1[c.domain].insert(strata[c.stratum].admin1.clone());
        }

        Ok(SurveyDataset {
            records,
            record_cluster,
            strata,
            domains,
            domain_admin1,
            clusters,
            stratum_clusters,
            domain_clusters,
        })
    }

    /// Builds a dataset from cluster aggregates by unit expansion.
    pub fn from_clusters(clusters: &[ClusterAggregate]) -> Result<Self> {
        for c in clusters {
            if c.events > c.n_trials {
                return Err(SaeError::InvalidArgument(format!(
                    "cluster `{}`: events {} exceed n_trials {}",
                    c.cluster_id, c.events, c.n_trials
                )));
            }
        }
        Self::new(clusters.iter().flat_map(ClusterAggregate::expand).collect())
    }

    pub fn records(&self) -> &[UnitRecord] {
        &self.records
    }

    pub fn strata(&self) -> &[StratumKey] {
        &self.strata
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn clusters(&self) -> &[ClusterInfo] {
        &self.clusters
    }

    pub fn cluster(&self, idx: usize) -> &ClusterInfo {
        &self.clusters[idx]
    }

    /// Cluster indices of the planned stratum `s`.
    pub fn stratum_clusters(&self, s: usize) -> &[usize] {
        &self.stratum_clusters[s]
    }

    /// Cluster indices whose units belong to domain `d`.
    pub fn domain_clusters(&self, d: usize) -> &[usize] {
        &self.domain_clusters[d]
    }

    /// Admin-1 areas the domain's sampled clusters fall in.
    pub fn domain_admin1(&self, d: usize) -> &BTreeSet<String> {
        &self.domain_admin1[d]
    }

    pub fn domain_index(&self, domain: &str) -> Option<usize> {
        self.domains.binary_search_by(|d| d.as_str().cmp(domain)).ok()
    }

    pub fn stratum_index(&self, admin1: &str, urban_rural: UrbanRural) -> Option<usize> {
        self.strata
            .binary_search_by(|s| {
                (s.admin1.as_str(), s.urban_rural).cmp(&(admin1, urban_rural))
            })
            .ok()
    }

    /// Index of the cluster each record belongs to.
    pub fn record_cluster(&self, record: usize) -> usize {
        self.record_cluster[record]
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sum of all unit weights.
    pub fn total_weight(&self) -> f64 {
        self.clusters.iter().map(|c| c.weight_total).sum()
    }

    /// Extended-domain view for `domain`.
    pub fn extend_domain(&self, domain: &str) -> Result<ExtendedDataset<'_>> {
        let idx = self
            .domain_index(domain)
            .ok_or_else(|| SaeError::UnknownDomain(domain.to_string()))?;
        Ok(self.extend_domain_idx(idx))
    }

    pub fn extend_domain_idx(&self, domain: usize) -> ExtendedDataset<'_> {
        ExtendedDataset {
            data: self,
            domain,
        }
    }
}

/// The dataset seen through the indicator of one target domain.
///
/// `z = I(k in U_i) y` and `v = I(k in U_i) w`; units outside the domain stay
/// in the view with `z = v = 0` because they still enter unplanned-domain
/// variances through their planned strata.
#[derive(Clone, Copy, Debug)]
pub struct ExtendedDataset<'a> {
    data: &'a SurveyDataset,
    domain: usize,
}

impl<'a> ExtendedDataset<'a> {
    pub fn data(&self) -> &'a SurveyDataset {
        self.data
    }

    pub fn domain(&self) -> usize {
        self.domain
    }

    pub fn domain_id(&self) -> &'a str {
        &self.data.domains[self.domain]
    }

    fn in_domain(&self, record: usize) -> bool {
        self.data.clusters[self.data.record_cluster[record]].domain == self.domain
    }

    /// Extended outcome `z` for a record.
    pub fn z(&self, record: usize) -> f64 {
        if self.in_domain(record) {
            f64::from(self.data.records[record].outcome)
        } else {
            0.0
        }
    }

    /// Extended weight `v` for a record.
    pub fn v(&self, record: usize) -> f64 {
        if self.in_domain(record) {
            self.data.records[record].weight
        } else {
            0.0
        }
    }

    /// `(z, v)` for every record in dataset order.
    pub fn extended_values(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.data.records.len()).map(move |k| (self.z(k), self.v(k)))
    }

    /// `v_{c.}`: domain weight of cluster `c`.
    pub fn cluster_v(&self, c: usize) -> f64 {
        let info = &self.data.clusters[c];
        if info.domain == self.domain {
            info.weight_total
        } else {
            0.0
        }
    }

    /// `sum_k v z` over cluster `c`.
    pub fn cluster_vz(&self, c: usize) -> f64 {
        let info = &self.data.clusters[c];
        if info.domain == self.domain {
            info.weighted_events
        } else {
            0.0
        }
    }

    /// True when the domain has no sampled unit.
    pub fn no_data(&self) -> bool {
        self.data.domain_clusters[self.domain]
            .iter()
            .all(|&c| self.data.clusters[c].weight_total <= 0.0)
    }

    /// Strata containing at least one cluster of the domain, in index order.
    pub fn contributing_strata(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.data.domain_clusters[self.domain]
            .iter()
            .map(|&c| self.data.clusters[c].stratum)
            .collect();
        set.into_iter().collect()
    }
}

/// One constraint violation found while reading or validating.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    /// 1-based line number in the source file (header is line 1).
    pub row: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.row {
            Some(r) => write!(f, "row {r}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StratumCount {
    pub admin1: String,
    pub urban_rural: UrbanRural,
    pub n_clusters: usize,
    pub n_units: usize,
    pub weight_total: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DomainCount {
    pub domain: String,
    pub n_clusters: usize,
    pub n_units: usize,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct WeightSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationReport {
    pub n_records: usize,
    pub n_clusters: usize,
    pub strata: Vec<StratumCount>,
    pub domains: Vec<DomainCount>,
    pub weights: WeightSummary,
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

fn hard_violations(rows: &[(Option<usize>, &UnitRecord)]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut cluster_home: HashMap<&str, (&str, UrbanRural, &str, Option<usize>)> = HashMap::new();
    for &(row, r) in rows {
        if !(r.weight.is_finite() && r.weight > 0.0) {
            out.push(Violation {
                row,
                message: format!("weight must be positive, got {}", r.weight),
            });
        }
        if r.outcome > 1 {
            out.push(Violation {
                row,
                message: format!("outcome must be 0 or 1, got {}", r.outcome),
            });
        }
        match cluster_home.get(r.cluster_id.as_str()) {
            None => {
                cluster_home.insert(
                    &r.cluster_id,
                    (&r.admin1, r.urban_rural, &r.domain_id, row),
                );
            }
            Some(&(a1, ur, dom, _)) => {
                if a1 != r.admin1 || ur != r.urban_rural {
                    out.push(Violation {
                        row,
                        message: format!(
                            "cluster `{}` spans two strata ({a1}/{ur} and {}/{})",
                            r.cluster_id, r.admin1, r.urban_rural
                        ),
                    });
                }
                if dom != r.domain_id {
                    out.push(Violation {
                        row,
                        message: format!(
                            "cluster `{}` spans two domains (`{dom}` and `{}`)",
                            r.cluster_id, r.domain_id
                        ),
                    });
                }
            }
        }
    }
    out
}

/// Validates raw records, each optionally tagged with its source row.
pub fn validate_records(rows: &[(Option<usize>, &UnitRecord)]) -> ValidationReport {
    let mut report = ValidationReport {
        n_records: rows.len(),
        violations: hard_violations(rows),
        ..Default::default()
    };

    let mut seen_units: HashMap<(&str, &str), Option<usize>> = HashMap::new();
    for &(row, r) in rows {
        if let Some(unit) = r.unit_id.as_deref() {
            if let Some(first) = seen_units.insert((&r.cluster_id, unit), row) {
                report.violations.push(Violation {
                    row,
                    message: format!(
                        "duplicate unit `{unit}` in cluster `{}` (first seen at row {})",
                        r.cluster_id,
                        first.map_or_else(|| "?".to_string(), |f| f.to_string())
                    ),
                });
            }
        }
    }

    let mut strata: BTreeMap<(String, UrbanRural), (BTreeSet<&str>, usize, f64)> = BTreeMap::new();
    let mut domains: BTreeMap<&str, (BTreeSet<&str>, usize)> = BTreeMap::new();
    let mut clusters: BTreeSet<&str> = BTreeSet::new();
    let (mut wmin, mut wmax, mut wsum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for &(_, r) in rows {
        let e = strata
            .entry((r.admin1.clone(), r.urban_rural))
            .or_insert_with(|| (BTreeSet::new(), 0, 0.0));
        e.0.insert(&r.cluster_id);
        e.1 += 1;
        e.2 += r.weight;
        let d = domains.entry(&r.domain_id).or_default();
        d.0.insert(&r.cluster_id);
        d.1 += 1;
        clusters.insert(&r.cluster_id);
        wmin = wmin.min(r.weight);
        wmax = wmax.max(r.weight);
        wsum += r.weight;
    }
    report.n_clusters = clusters.len();
    if !rows.is_empty() {
        report.weights = WeightSummary {
            min: wmin,
            max: wmax,
            mean: wsum / rows.len() as f64,
        };
    }
    for ((admin1, ur), (cl, n_units, w)) in strata {
        if cl.len() == 1 {
            report.warnings.push(format!(
                "stratum {admin1}/{ur} has only one sampled cluster; variances of domains in it are undefined"
            ));
        }
        report.strata.push(StratumCount {
            admin1,
            urban_rural: ur,
            n_clusters: cl.len(),
            n_units,
            weight_total: w,
        });
    }
    report.domains = domains
        .into_iter()
        .map(|(d, (cl, n))| DomainCount {
            domain: d.to_string(),
            n_clusters: cl.len(),
            n_units: n,
        })
        .collect();
    report
}

/// Validation summary of an already constructed dataset.
pub fn validate(data: &SurveyDataset) -> ValidationReport {
    let rows: Vec<(Option<usize>, &UnitRecord)> = data.records.iter().map(|r| (None, r)).collect();
    let mut report = validate_records(&rows);
    for (d, name) in data.domains.iter().enumerate() {
        if data.domain_clusters[d].is_empty() {
            report.domains.push(DomainCount {
                domain: name.clone(),
                n_clusters: 0,
                n_units: 0,
            });
            report
                .warnings
                .push(format!("domain `{name}` has no sampled clusters"));
        }
    }
    report.domains.sort_by(|a, b| a.domain.cmp(&b.domain));
    report
}

pub const UNIT_COLUMNS: [&str; 6] = ["admin1", "urban_rural", "cluster", "domain", "weight", "outcome"];
pub const CLUSTER_COLUMNS: [&str; 7] = [
    "admin1",
    "urban_rural",
    "cluster",
    "domain",
    "weight",
    "n_trials",
    "events",
];

/// Reads a survey CSV leniently: rows that cannot be parsed become violations
/// and are skipped, rows that parse are returned with their line number.
pub fn read_survey_rows(
    path: &Path,
    schema: Schema,
) -> Result<(Vec<(usize, UnitRecord)>, Vec<Violation>)> {
    let file = std::fs::File::open(path).map_err(|e| SaeError::io(path.display().to_string(), e))?;
    read_survey_rows_from(file, schema)
}

pub fn read_survey_rows_from<R: std::io::Read>(
    reader: R,
    schema: Schema,
) -> Result<(Vec<(usize, UnitRecord)>, Vec<Violation>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let required: &[&str] = match schema {
        Schema::Unit => &UNIT_COLUMNS,
        Schema::ClusterAggregate => &CLUSTER_COLUMNS,
    };
    let mut col = HashMap::new();
    for name in required {
        let idx = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| SaeError::MissingColumn((*name).to_string()))?;
        col.insert(*name, idx);
    }
    let unit_col = headers.iter().position(|h| h.eq_ignore_ascii_case("unit"));

    let mut out = Vec::new();
    let mut violations = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let field = |name: &str| rec.get(col[name]).unwrap_or("");
        let mut bad = |msg: String| {
            violations.push(Violation {
                row: Some(row),
                message: msg,
            })
        };
        let urban_rural = match field("urban_rural").parse::<UrbanRural>() {
            Ok(u) => u,
            Err(e) => {
                bad(e.to_string());
                continue;
            }
        };
        let weight = match field("weight").parse::<f64>() {
            Ok(w) => w,
            Err(_) => {
                bad(format!("weight `{}` is not a number", field("weight")));
                continue;
            }
        };
        let base = |outcome: u8| UnitRecord {
            admin1: field("admin1").to_string(),
            urban_rural,
            cluster_id: field("cluster").to_string(),
            domain_id: field("domain").to_string(),
            weight,
            outcome,
            unit_id: None,
        };
        match schema {
            Schema::Unit => {
                let outcome = match field("outcome") {
                    "0" => 0,
                    "1" => 1,
                    other => {
                        bad(format!("outcome must be 0 or 1, got `{other}`"));
                        continue;
                    }
                };
                let mut r = base(outcome);
                r.unit_id = unit_col.and_then(|c| rec.get(c)).map(str::to_string);
                out.push((row, r));
            }
            Schema::ClusterAggregate => {
                let (n, e) = match (
                    field("n_trials").parse::<u32>(),
                    field("events").parse::<u32>(),
                ) {
                    (Ok(n), Ok(e)) => (n, e),
                    _ => {
                        bad(format!(
                            "n_trials `{}` and events `{}` must be nonnegative integers",
                            field("n_trials"),
                            field("events")
                        ));
                        continue;
                    }
                };
                if e > n {
                    bad(format!("events {e} exceed n_trials {n}"));
                    continue;
                }
                let agg = ClusterAggregate {
                    admin1: field("admin1").to_string(),
                    urban_rural,
                    cluster_id: field("cluster").to_string(),
                    domain_id: field("domain").to_string(),
                    weight,
                    n_trials: n,
                    events: e,
                };
                if n == 0 && !(weight.is_finite() && weight > 0.0) {
                    bad(format!("weight must be positive, got {weight}"));
                }
                out.extend(agg.expand().map(|r| (row, r)));
            }
        }
    }
    Ok((out, violations))
}

/// Loads and validates a survey file; any violation is an error naming its row.
pub fn load_survey(path: &Path, schema: Schema) -> Result<SurveyDataset> {
    let (rows, mut violations) = read_survey_rows(path, schema)?;
    let tagged: Vec<(Option<usize>, &UnitRecord)> = rows.iter().map(|(r, u)| (Some(*r), u)).collect();
    violations.extend(validate_records(&tagged).violations);
    if let Some(first) = violations.into_iter().next() {
        return Err(SaeError::InvalidRow {
            row: first.row.unwrap_or(0),
            message: first.message,
        });
    }
    SurveyDataset::new(rows.into_iter().map(|(_, r)| r).collect())
}
