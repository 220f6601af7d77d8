//! Flat `key = value` study configuration.
//!
//! ```text
//! # comment
//! name = large_sample
//! m0 = 0.5
//! sigma_area = 0
//! sigma_cluster = 0.2
//! sigma_unit = 0.05
//! levels = 0.8, 0.9, 0.95
//! stratum.D01 = 1000, 100        # frame clusters, sampled clusters
//! area.D01.D01 = 250000          # population of area D01 in stratum D01
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Result, SaeError};

#[derive(Clone, Debug, PartialEq)]
pub struct StratumConfig {
    pub name: String,
    /// Frame cluster count C₊h.
    pub frame_clusters: usize,
    /// Sampled cluster count n_h.
    pub sampled_clusters: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AreaConfig {
    pub name: String,
    pub stratum: String,
    pub population: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PopulationConfig {
    pub name: String,
    pub m0: f64,
    pub sigma_area: f64,
    pub sigma_cluster: f64,
    pub sigma_unit: f64,
    pub units_per_cluster: u32,
    pub min_cluster_size: u32,
    /// Reuse one population for every replicate.
    pub fixed_population: bool,
    pub levels: Vec<f64>,
    pub score_alpha: f64,
    pub strata: Vec<StratumConfig>,
    pub areas: Vec<AreaConfig>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            name: "study".into(),
            m0: 0.5,
            sigma_area: 0.0,
            sigma_cluster: 0.0,
            sigma_unit: 0.0,
            units_per_cluster: 30,
            min_cluster_size: 30,
            fixed_population: true,
            levels: vec![0.8],
            score_alpha: crate::interval::DEFAULT_SCORE_ALPHA,
            strata: Vec::new(),
            areas: Vec::new(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str, line: usize) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| SaeError::Config(format!("line {line}: bad value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str, line: usize) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(SaeError::Config(format!("line {line}: bad boolean `{v}` for `{key}`"))),
    }
}

impl PopulationConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PopulationConfig::default();
        let mut strata: BTreeMap<String, StratumConfig> = BTreeMap::new();
        let mut stratum_order = Vec::new();
        let mut seen_areas = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| SaeError::Config(format!("line {line}: expected `key = value`")))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(name) = key.strip_prefix("stratum.") {
                let parts: Vec<&str> = value.split(',').collect();
                if parts.len() != 2 {
                    return Err(SaeError::Config(format!(
                        "line {line}: stratum needs `frame_clusters, sampled_clusters`"
                    )));
                }
                let s = StratumConfig {
                    name: name.to_string(),
                    frame_clusters: parse_num(key, parts[0], line)?,
                    sampled_clusters: parse_num(key, parts[1], line)?,
                };
                if strata.insert(name.to_string(), s).is_some() {
                    return Err(SaeError::Config(format!("line {line}: stratum `{name}` repeated")));
                }
                stratum_order.push(name.to_string());
                continue;
            }
            if let Some(rest) = key.strip_prefix("area.") {
                let (stratum, area) = rest
                    .split_once('.')
                    .ok_or_else(|| SaeError::Config(format!("line {line}: area key is `area.<stratum>.<area>`")))?;
                if seen_areas.insert(area.to_string(), line).is_some() {
                    return Err(SaeError::Config(format!("line {line}: area `{area}` repeated")));
                }
                cfg.areas.push(AreaConfig {
                    name: area.to_string(),
                    stratum: stratum.to_string(),
                    population: parse_num(key, value, line)?,
                });
                continue;
            }
            match key {
                "name" => cfg.name = value.to_string(),
                "m0" => cfg.m0 = parse_num(key, value, line)?,
                "sigma_area" => cfg.sigma_area = parse_num(key, value, line)?,
                "sigma_cluster" => cfg.sigma_cluster = parse_num(key, value, line)?,
                "sigma_unit" => cfg.sigma_unit = parse_num(key, value, line)?,
                "units_per_cluster" => cfg.units_per_cluster = parse_num(key, value, line)?,
                "min_cluster_size" => cfg.min_cluster_size = parse_num(key, value, line)?,
                "fixed_population" => cfg.fixed_population = parse_bool(key, value, line)?,
                "score_alpha" => cfg.score_alpha = parse_num(key, value, line)?,
                "levels" => {
                    cfg.levels = value
                        .split(',')
                        .map(|v| parse_num(key, v, line))
                        .collect::<Result<_>>()?
                }
                other => return Err(SaeError::Config(format!("line {line}: unknown key `{other}`"))),
            }
        }
        cfg.strata = stratum_order.into_iter().map(|n| strata.remove(&n).unwrap()).collect();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SaeError::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SaeError::Config(m));
        if !(self.m0 > 0.0 && self.m0 < 1.0) {
            return bad(format!("m0 must lie in (0, 1), got {}", self.m0));
        }
        for (n, s) in [
            ("sigma_area", self.sigma_area),
            ("sigma_cluster", self.sigma_cluster),
            ("sigma_unit", self.sigma_unit),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("{n} must be nonnegative, got {s}"));
            }
        }
        if self.units_per_cluster == 0 {
            return bad("units_per_cluster must be positive".into());
        }
        if self.min_cluster_size < self.units_per_cluster {
            return bad(format!(
                "min_cluster_size {} is below units_per_cluster {}",
                self.min_cluster_size, self.units_per_cluster
            ));
        }
        if self.levels.is_empty() || self.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return bad("levels must lie in (0, 1)".into());
        }
        if !(self.score_alpha > 0.0 && self.score_alpha < 1.0) {
            return bad("score_alpha must lie in (0, 1)".into());
        }
        if self.strata.is_empty() {
            return bad("no strata configured".into());
        }
        for s in &self.strata {
            if s.sampled_clusters == 0 || s.sampled_clusters > s.frame_clusters {
                return bad(format!(
                    "stratum `{}`: sampled clusters {} must be in 1..={}",
                    s.name, s.sampled_clusters, s.frame_clusters
                ));
            }
            if !self.areas.iter().any(|a| a.stratum == s.name) {
                return bad(format!("stratum `{}` has no areas", s.name));
            }
        }
        for a in &self.areas {
            if !self.strata.iter().any(|s| s.name == a.stratum) {
                return bad(format!("area `{}` names unknown stratum `{}`", a.name, a.stratum));
            }
            if a.population == 0 {
                return bad(format!("area `{}` has zero population", a.name));
            }
        }
        Ok(())
    }

    pub fn total_frame_clusters(&self) -> usize {
        self.strata.iter().map(|s| s.frame_clusters).sum()
    }
}
