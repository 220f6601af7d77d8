//! Monte Carlo evaluation of the variance strategies on synthetic
//! populations drawn under a stratified two-stage PPS design.

mod config;
mod population;
mod sampling;

pub use config::{AreaConfig, PopulationConfig, StratumConfig};
pub use population::{
    allocate_clusters, mean_expit, synthesize_population, true_domain_prevalence, true_prevalences, PopCluster,
    SyntheticPopulation,
};
pub use sampling::{draw_sample, pps_probabilities, to_dataset, SampleDraw, SampledCluster};

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augment::{apply_strategy_seq, PhantomPriors, Strategy};
use crate::direct::{Legality, Method};
use crate::error::{Result, SaeError};
use crate::interval::{interval_for, interval_score};

/// Generator for one purpose of one replicate, independent of scheduling.
pub fn child_rng(master: u64, replicate: u64, purpose: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&replicate.to_le_bytes());
    seed[16..24].copy_from_slice(&purpose.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

const POPULATION_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;

/// One (replicate, area, strategy, level) outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub area: usize,
    pub strategy: Strategy,
    pub level: f64,
    pub truth: f64,
    pub p_hat: f64,
    pub lower: f64,
    pub upper: f64,
    /// Legality of the unaugmented variance.
    pub legality: Legality,
    pub method: Method,
    pub covered: bool,
    pub score: f64,
}

impl ReplicateRecord {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AreaMetrics {
    pub area: String,
    pub admin1: String,
    pub strategy: Strategy,
    pub level: f64,
    /// Replicates in which the area had at least one sampled cluster.
    pub valid: usize,
    pub coverage: f64,
    pub width: f64,
    pub interval_score: f64,
    pub illegal_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StratumMetrics {
    pub admin1: String,
    pub strategy: Strategy,
    pub level: f64,
    pub coverage: f64,
    pub width: f64,
    pub interval_score: f64,
    /// Mean over replicates of the percentage of sampled areas with an illegal variance.
    pub illegal_pct: f64,
    pub score_legal: Option<f64>,
    pub score_illegal: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SimulationResults {
    pub config_name: String,
    pub replicates: usize,
    pub seed: u64,
    pub areas: Vec<String>,
    pub area_admin1: Vec<String>,
    pub records: Vec<ReplicateRecord>,
    pub area_metrics: Vec<AreaMetrics>,
    pub stratum_metrics: Vec<StratumMetrics>,
    /// Replicates whose sample could not be drawn or estimated.
    pub failures: Vec<String>,
}

impl SimulationResults {
    /// Mean over areas with valid replicates of (coverage, width, score).
    pub fn overall(&self, strategy: Strategy, level: f64) -> Option<(f64, f64, f64)> {
        let rows: Vec<&AreaMetrics> = self
            .area_metrics
            .iter()
            .filter(|m| m.strategy == strategy && m.level == level && m.valid > 0)
            .collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some((
            rows.iter().map(|m| m.coverage).sum::<f64>() / n,
            rows.iter().map(|m| m.width).sum::<f64>() / n,
            rows.iter().map(|m| m.interval_score).sum::<f64>() / n,
        ))
    }

    pub fn stratum(&self, admin1: &str, strategy: Strategy, level: f64) -> Option<&StratumMetrics> {
        self.stratum_metrics
            .iter()
            .find(|m| m.admin1 == admin1 && m.strategy == strategy && m.level == level)
    }
}

fn run_replicate(
    cfg: &PopulationConfig,
    fixed: Option<&SyntheticPopulation>,
    seed: u64,
    rep: usize,
    strategies: &[Strategy],
) -> Result<Vec<ReplicateRecord>> {
    let owned;
    let pop = match fixed {
        Some(p) => p,
        None => {
            owned = synthesize_population(cfg, &mut child_rng(seed, rep as u64, POPULATION_STREAM))?;
            &owned
        }
    };
    let truth = true_prevalences(pop);
    let draw = draw_sample(pop, cfg, &mut child_rng(seed, rep as u64, SAMPLE_STREAM))?;
    let data = to_dataset(pop, &draw)?;
    let priors = PhantomPriors::national(&data);
    let mut out = Vec::new();
    for &strategy in strategies {
        for row in apply_strategy_seq(&data, strategy, &priors) {
            let est = &row.estimate;
            let area = pop
                .area_index(&est.domain_id)
                .ok_or_else(|| SaeError::UnknownDomain(est.domain_id.clone()))?;
            let Some(p_hat) = est.p_hat else { continue };
            for &level in &cfg.levels {
                let iv = interval_for(est, level)?.expect("estimate present");
                out.push(ReplicateRecord {
                    replicate: rep,
                    area,
                    strategy,
                    level,
                    truth: truth[area],
                    p_hat,
                    lower: iv.lower,
                    upper: iv.upper,
                    legality: row.original_legality,
                    method: est.method,
                    covered: iv.covers(truth[area]),
                    score: interval_score(&iv, truth[area], cfg.score_alpha),
                });
            }
        }
    }
    Ok(out)
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Runs `replicates` independent sample draws and scores every strategy.
pub fn run_study(cfg: &PopulationConfig, replicates: usize, seed: u64, strategies: &[Strategy]) -> Result<SimulationResults> {
    cfg.validate()?;
    if replicates == 0 {
        return Err(SaeError::InvalidArgument("at least one replicate is required".into()));
    }
    let fixed = if cfg.fixed_population {
        Some(synthesize_population(cfg, &mut child_rng(seed, u64::MAX, POPULATION_STREAM))?)
    } else {
        None
    };
    let outcomes: Vec<Result<Vec<ReplicateRecord>>> = (0..replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, fixed.as_ref(), seed, r, strategies))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(v) => records.extend(v),
            Err(SaeError::Config(m)) => return Err(SaeError::Config(m)),
            Err(e) => failures.push(format!("replicate {r}: {e}")),
        }
    }

    let areas: Vec<String> = cfg.areas.iter().map(|a| a.name.clone()).collect();
    let area_admin1: Vec<String> = cfg.areas.iter().map(|a| a.stratum.clone()).collect();

    let mut buckets: Vec<Vec<&ReplicateRecord>> = vec![Vec::new(); areas.len() * strategies.len() * cfg.levels.len()];
    let key = |area: usize, s: usize, l: usize| (area * strategies.len() + s) * cfg.levels.len() + l;
    for rec in &records {
        let s = strategies.iter().position(|x| *x == rec.strategy).expect("known strategy");
        let l = cfg.levels.iter().position(|x| *x == rec.level).expect("known level");
        buckets[key(rec.area, s, l)].push(rec);
    }
    let mut area_metrics = Vec::new();
    for i in 0..areas.len() {
        for (s, &strategy) in strategies.iter().enumerate() {
            for (l, &level) in cfg.levels.iter().enumerate() {
                let b = &buckets[key(i, s, l)];
                area_metrics.push(AreaMetrics {
                    area: areas[i].clone(),
                    admin1: area_admin1[i].clone(),
                    strategy,
                    level,
                    valid: b.len(),
                    coverage: mean(b.iter().map(|r| f64::from(u8::from(r.covered)))).unwrap_or(f64::NAN),
                    width: mean(b.iter().map(|r| r.width())).unwrap_or(f64::NAN),
                    interval_score: mean(b.iter().map(|r| r.score)).unwrap_or(f64::NAN),
                    illegal_rate: mean(b.iter().map(|r| f64::from(u8::from(r.legality.is_illegal())))).unwrap_or(f64::NAN),
                });
            }
        }
    }

    let mut stratum_metrics = Vec::new();
    for h in &cfg.strata {
        let in_h: Vec<usize> = (0..areas.len()).filter(|&i| area_admin1[i] == h.name).collect();
        for (s, &strategy) in strategies.iter().enumerate() {
            for (l, &level) in cfg.levels.iter().enumerate() {
                let rows: Vec<&AreaMetrics> = area_metrics
                    .iter()
                    .filter(|m| m.admin1 == h.name && m.strategy == strategy && m.level == level && m.valid > 0)
                    .collect();
                let recs: Vec<&ReplicateRecord> = in_h.iter().flat_map(|&i| buckets[key(i, s, l)].iter().copied()).collect();
                let mut per_rep: Vec<(usize, usize)> = vec![(0, 0); replicates];
                for r in &recs {
                    per_rep[r.replicate].0 += 1;
                    per_rep[r.replicate].1 += usize::from(r.legality.is_illegal());
                }
                let illegal_pct = mean(
                    per_rep
                        .iter()
                        .filter(|(n, _)| *n > 0)
                        .map(|(n, k)| 100.0 * *k as f64 / *n as f64),
                )
                .unwrap_or(f64::NAN);
                stratum_metrics.push(StratumMetrics {
                    admin1: h.name.clone(),
                    strategy,
                    level,
                    coverage: mean(rows.iter().map(|m| m.coverage)).unwrap_or(f64::NAN),
                    width: mean(rows.iter().map(|m| m.width)).unwrap_or(f64::NAN),
                    interval_score: mean(rows.iter().map(|m| m.interval_score)).unwrap_or(f64::NAN),
                    illegal_pct,
                    score_legal: mean(recs.iter().filter(|r| !r.legality.is_illegal()).map(|r| r.score)),
                    score_illegal: mean(recs.iter().filter(|r| r.legality.is_illegal()).map(|r| r.score)),
                });
            }
        }
    }

    Ok(SimulationResults {
        config_name: cfg.name.clone(),
        replicates,
        seed,
        areas,
        area_admin1,
        records,
        area_metrics,
        stratum_metrics,
        failures,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_err(path: &Path) -> impl Fn(std::io::Error) -> SaeError + '_ {
    move |e| SaeError::io(path.display().to_string(), e)
}

/// Writes `metrics.csv`, `stratum_summary.csv` and `replicates.csv.gz` into `dir`.
pub fn write_results(results: &SimulationResults, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(csv_err(dir))?;

    let path = dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["area", "admin1", "method", "level", "valid_replicates", "coverage", "width", "interval_score", "illegal_rate"])?;
    for m in &results.area_metrics {
        w.write_record([
            m.area.clone(),
            m.admin1.clone(),
            m.strategy.as_str().to_string(),
            m.level.to_string(),
            m.valid.to_string(),
            m.coverage.to_string(),
            m.width.to_string(),
            m.interval_score.to_string(),
            m.illegal_rate.to_string(),
        ])?;
    }
    w.flush().map_err(csv_err(&path))?;

    let path = dir.join("stratum_summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["admin1", "method", "level", "coverage", "width", "interval_score", "illegal_pct", "score_legal", "score_illegal"])?;
    for m in &results.stratum_metrics {
        w.write_record([
            m.admin1.clone(),
            m.strategy.as_str().to_string(),
            m.level.to_string(),
            m.coverage.to_string(),
            m.width.to_string(),
            m.interval_score.to_string(),
            m.illegal_pct.to_string(),
            fmt_opt(m.score_legal),
            fmt_opt(m.score_illegal),
        ])?;
    }
    w.flush().map_err(csv_err(&path))?;

    let path = dir.join("replicates.csv.gz");
    let file = std::fs::File::create(&path).map_err(csv_err(&path))?;
    let gz = flate2::GzBuilder::new().mtime(0).write(file, flate2::Compression::default());
    let mut w = csv::Writer::from_writer(gz);
    w.write_record(["replicate", "area", "method", "level", "truth", "p_hat", "lower", "upper", "legality", "estimator", "covered", "interval_score"])?;
    for r in &results.records {
        w.write_record([
            r.replicate.to_string(),
            results.areas[r.area].clone(),
            r.strategy.as_str().to_string(),
            r.level.to_string(),
            r.truth.to_string(),
            r.p_hat.to_string(),
            r.lower.to_string(),
            r.upper.to_string(),
            r.legality.as_str().to_string(),
            r.method.as_str().to_string(),
            u8::from(r.covered).to_string(),
            r.score.to_string(),
        ])?;
    }
    let gz = w.into_inner().map_err(|e| SaeError::io(path.display().to_string(), e.into_error()))?;
    let mut file = gz.finish().map_err(csv_err(&path))?;
    file.flush().map_err(csv_err(&path))?;
    Ok(())
}
