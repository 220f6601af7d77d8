//! CSV tables written and read by the command-line front end.
//!
//! Floats are written with the shortest representation that parses back to
//! the same value, so every table round-trips exactly.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::aggregate::AggregateSummary;
use crate::augment::{PhantomCluster, StrategyRow};
use crate::direct::{DomainEstimate, Legality, Method};
use crate::error::{Result, SaeError};
use crate::fay_herriot::{AreaSummary, FhFit, HyperSummary, Model, RankTable};
use crate::interval::interval_for;
use crate::survey_data::{SurveyDataset, UrbanRural};

const LIST_SEP: &str = ";";

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> SaeError + '_ {
    move |e| SaeError::io(path.display().to_string(), e)
}

/// Writes serializable rows with a header.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads rows written by [`write_rows`].
pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for (k, r) in rdr.deserialize().enumerate() {
        out.push(r.map_err(|e| SaeError::InvalidRow {
            row: k + 2,
            message: format!("{}: {e}", path.display()),
        })?);
    }
    Ok(out)
}

/// One row of `estimates.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub domain: String,
    /// Admin-1 areas the domain's clusters fall in, `;`-separated.
    pub admin1: String,
    pub p_hat: Option<f64>,
    pub variance: Option<f64>,
    pub raw_variance: Option<f64>,
    pub se: Option<f64>,
    pub cv: Option<f64>,
    pub legality: Legality,
    pub n_clusters: usize,
    pub method: Method,
    pub original_legality: Legality,
    pub phantom_strata: String,
    pub phantom_mean: String,
    pub phantom_weight: String,
    pub level: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub note: String,
}

impl EstimateRow {
    pub fn new(data: &SurveyDataset, row: &StrategyRow, level: f64) -> Result<Self> {
        let e = &row.estimate;
        let admin1 = match data.domain_index(&e.domain_id) {
            Some(d) => data.domain_admin1(d).iter().cloned().collect::<Vec<_>>().join(LIST_SEP),
            None => String::new(),
        };
        let iv = interval_for(e, level)?;
        let join = |f: &dyn Fn(&PhantomCluster) -> String| row.phantoms.iter().map(f).collect::<Vec<_>>().join(LIST_SEP);
        Ok(EstimateRow {
            domain: e.domain_id.clone(),
            admin1,
            p_hat: e.p_hat,
            variance: e.variance,
            raw_variance: e.raw_variance,
            se: e.se(),
            cv: e.cv,
            legality: e.legality,
            n_clusters: e.n_clusters_in_domain,
            method: e.method,
            original_legality: row.original_legality,
            phantom_strata: join(&|p| format!("{}:{}", p.admin1, p.urban_rural)),
            phantom_mean: join(&|p| p.mean.to_string()),
            phantom_weight: join(&|p| p.weight_total.to_string()),
            level,
            lower: iv.map(|i| i.lower),
            upper: iv.map(|i| i.upper),
            note: row.note.clone().unwrap_or_default(),
        })
    }

    pub fn to_estimate(&self) -> DomainEstimate {
        DomainEstimate {
            domain_id: self.domain.clone(),
            p_hat: self.p_hat,
            variance: self.variance,
            raw_variance: self.raw_variance,
            legality: self.legality,
            n_clusters_in_domain: self.n_clusters,
            cv: self.cv,
            method: self.method,
        }
    }
}

/// One row of `phantoms.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomRow {
    pub domain: String,
    pub admin1: String,
    pub urban_rural: UrbanRural,
    pub cluster_id: String,
    pub mean: f64,
    pub weight: f64,
}

impl From<&PhantomCluster> for PhantomRow {
    fn from(p: &PhantomCluster) -> Self {
        PhantomRow {
            domain: p.domain_id.clone(),
            admin1: p.admin1.clone(),
            urban_rural: p.urban_rural,
            cluster_id: p.cluster_id.clone(),
            mean: p.mean,
            weight: p.weight_total,
        }
    }
}

/// Estimates plus the Admin-1 label used to group areas in nested models.
pub fn estimates_for_smoothing(rows: &[EstimateRow]) -> (Vec<DomainEstimate>, HashMap<String, String>) {
    let est = rows.iter().map(EstimateRow::to_estimate).collect();
    let admin1 = rows.iter().map(|r| (r.domain.clone(), r.admin1.clone())).collect();
    (est, admin1)
}

/// One row of `smoothed.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothedRow {
    pub area: String,
    pub admin1: String,
    pub model: Model,
    pub nested: bool,
    pub observed: bool,
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
    pub q10: f64,
    pub q90: f64,
    pub mean_logit: f64,
    pub sd_logit: f64,
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
}

pub fn smoothed_rows(fit: &FhFit, summaries: &[AreaSummary], admin1: &HashMap<String, String>, observed: &HashMap<String, bool>) -> Vec<SmoothedRow> {
    summaries
        .iter()
        .enumerate()
        .map(|(i, s)| SmoothedRow {
            area: s.area_id.clone(),
            admin1: admin1.get(&s.area_id).cloned().unwrap_or_default(),
            model: fit.model,
            nested: fit.nested,
            observed: observed.get(&s.area_id).copied().unwrap_or(false),
            median: s.median,
            q025: s.q025,
            q975: s.q975,
            q10: s.q10,
            q90: s.q90,
            mean_logit: s.mean_logit,
            sd_logit: s.sd_logit,
            rhat: fit.diagnostics.as_ref().map(|d| d.rhat[i]),
            ess: fit.diagnostics.as_ref().map(|d| d.ess[i]),
        })
        .collect()
}

pub fn write_hyperparameters(path: &Path, rows: &[HyperSummary]) -> Result<()> {
    write_rows(path, rows)
}

/// Writes `ranking.csv`: one probability column per band, then the mean rank.
pub fn write_ranking(path: &Path, table: &RankTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["area".to_string()];
    header.extend((1..=table.band_sizes.len()).map(|b| format!("band_{b}")));
    header.push("mean_rank".into());
    w.write_record(&header)?;
    let mut sizes = vec!["#band_size".to_string()];
    sizes.extend(table.band_sizes.iter().map(|s| s.to_string()));
    sizes.push(String::new());
    w.write_record(&sizes)?;
    for r in &table.rows {
        let mut rec = vec![r.area_id.clone()];
        rec.extend(r.probs.iter().map(|p| p.to_string()));
        rec.push(r.mean_rank.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a table written by [`write_ranking`].
pub fn read_ranking(path: &Path) -> Result<RankTable> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::Reader::from_reader(file);
    let n_bands = rdr.headers()?.len().saturating_sub(2);
    let mut band_sizes = Vec::new();
    let mut rows = Vec::new();
    let num = |s: &str, k: usize| {
        s.parse::<f64>().map_err(|_| SaeError::InvalidRow {
            row: k + 2,
            message: format!("bad number `{s}`"),
        })
    };
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if &rec[0] == "#band_size" {
            band_sizes = (1..=n_bands).map(|b| num(&rec[b], k).map(|x| x as usize)).collect::<Result<_>>()?;
            continue;
        }
        rows.push(crate::fay_herriot::RankRow {
            area_id: rec[0].to_string(),
            probs: (1..=n_bands).map(|b| num(&rec[b], k)).collect::<Result<_>>()?,
            mean_rank: num(&rec[n_bands + 1], k)?,
        });
    }
    Ok(RankTable { band_sizes, rows })
}

/// Writes logit-scale draws (draws × areas) as gzip CSV, headed by area ids.
pub fn write_draws(path: &Path, fit: &FhFit) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let gz = flate2::GzBuilder::new().mtime(0).write(file, flate2::Compression::default());
    let mut w = csv::Writer::from_writer(gz);
    w.write_record(&fit.area_ids)?;
    let mut rec = Vec::with_capacity(fit.n_areas());
    for d in 0..fit.n_draws() {
        rec.clear();
        rec.extend(fit.theta.row(d).iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    let gz = w.into_inner().map_err(|e| SaeError::io(path.display().to_string(), e.into_error()))?;
    let mut file = gz.finish().map_err(io_err(path))?;
    file.flush().map_err(io_err(path))
}

/// Reads draws written by [`write_draws`] into a fit carrying only θ.
pub fn read_draws(path: &Path, model: Model, nested: bool) -> Result<FhFit> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::Reader::from_reader(flate2::read::GzDecoder::new(file));
    let area_ids: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut values = Vec::new();
    let mut n_draws = 0;
    for (k, rec) in rdr.records().enumerate() {
        for s in rec?.iter() {
            values.push(s.parse::<f64>().map_err(|_| SaeError::InvalidRow {
                row: k + 2,
                message: format!("bad draw `{s}`"),
            })?);
        }
        n_draws += 1;
    }
    if values.len() != n_draws * area_ids.len() {
        return Err(SaeError::InvalidArgument(format!("{}: ragged draw rows", path.display())));
    }
    Ok(FhFit {
        model,
        nested,
        theta: DMatrix::from_row_slice(n_draws, area_ids.len(), &values),
        area_ids,
        fixed_names: Vec::new(),
        fixed: DMatrix::zeros(n_draws, 0),
        sigma: Vec::new(),
        phi: Vec::new(),
        spatial: None,
        diagnostics: None,
        warnings: Vec::new(),
    })
}

/// One row of `aggregates.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub level: String,
    pub name: String,
    pub source: String,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl AggregateRow {
    pub fn new(level: &str, source: &str, s: &AggregateSummary) -> Self {
        AggregateRow {
            level: level.into(),
            name: s.name.clone(),
            source: source.into(),
            median: s.median,
            lower: s.lower,
            upper: s.upper,
        }
    }
}
