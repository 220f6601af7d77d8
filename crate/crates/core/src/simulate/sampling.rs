use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Hypergeometric};

use super::config::PopulationConfig;
use super::population::SyntheticPopulation;
use crate::error::{Result, SaeError};
use crate::survey_data::{ClusterAggregate, SurveyDataset, UrbanRural};

/// One sampled cluster with its inclusion probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledCluster {
    pub cluster: usize,
    pub pi1: f64,
    pub pi2: f64,
    pub sampled_units: u32,
    pub sampled_events: u32,
}

impl SampledCluster {
    pub fn weight(&self) -> f64 {
        1.0 / (self.pi1 * self.pi2)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleDraw {
    pub clusters: Vec<SampledCluster>,
    /// Clusters taken with certainty at stage one.
    pub certainty: Vec<usize>,
}

/// Inclusion probabilities n·N_c/N over `sizes`, with clusters at or above 1
/// taken with certainty and the rest re-solved for the remaining sample.
pub fn pps_probabilities(sizes: &[u64], n: usize) -> Vec<f64> {
    let mut pi = vec![0.0; sizes.len()];
    let mut certain = vec![false; sizes.len()];
    loop {
        let k = certain.iter().filter(|c| **c).count();
        let rest: u64 = sizes.iter().zip(&certain).filter(|(_, c)| !**c).map(|(s, _)| *s).sum();
        let m = n.saturating_sub(k) as f64;
        let mut changed = false;
        for i in 0..sizes.len() {
            if certain[i] {
                pi[i] = 1.0;
            } else {
                pi[i] = if rest > 0 { m * sizes[i] as f64 / rest as f64 } else { 0.0 };
                if pi[i] >= 1.0 {
                    certain[i] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            return pi;
        }
    }
}

/// Systematic PPS on a randomly permuted list; returns selected indices.
fn systematic_pps<R: Rng + ?Sized>(pi: &[f64], rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pi.len()).collect();
    order.shuffle(rng);
    let mut chosen: Vec<usize> = order.iter().copied().filter(|&i| pi[i] >= 1.0).collect();
    let start: f64 = rng.random();
    let mut cum = 0.0;
    let mut next = start;
    for &i in order.iter().filter(|&&i| pi[i] < 1.0) {
        cum += pi[i];
        while next < cum {
            chosen.push(i);
            next += 1.0;
        }
    }
    // Rounding in the running sum can drop the final point.
    let target = pi.iter().sum::<f64>().round() as usize;
    if chosen.len() < target {
        if let Some(&i) = order.iter().rev().find(|i| pi[**i] < 1.0 && !chosen.contains(i)) {
            chosen.push(i);
        }
    }
    chosen
}

/// Two-stage sample: PPS of clusters in each stratum, then a simple random
/// sample of units within each selected cluster.
pub fn draw_sample<R: Rng + ?Sized>(pop: &SyntheticPopulation, cfg: &PopulationConfig, rng: &mut R) -> Result<SampleDraw> {
    let mut out = SampleDraw::default();
    for (h, members) in pop.stratum_clusters.iter().enumerate() {
        let n_h = cfg.strata[h].sampled_clusters;
        if n_h > members.len() {
            return Err(SaeError::Config(format!(
                "stratum `{}`: {} clusters requested from {} in the frame",
                pop.strata[h],
                n_h,
                members.len()
            )));
        }
        let sizes: Vec<u64> = members.iter().map(|&c| pop.clusters[c].size).collect();
        let pi = pps_probabilities(&sizes, n_h);
        let mut picked = systematic_pps(&pi, rng);
        picked.sort_unstable();
        debug_assert_eq!(picked.len(), n_h);
        for k in picked {
            let c = members[k];
            let cl = &pop.clusters[c];
            let m = u64::from(cfg.units_per_cluster).min(cl.size);
            let events = Hypergeometric::new(cl.size, cl.events, m)
                .map_err(|e| SaeError::Numerical(format!("hypergeometric draw: {e}")))?
                .sample(rng);
            if pi[k] >= 1.0 {
                out.certainty.push(c);
            }
            out.clusters.push(SampledCluster {
                cluster: c,
                pi1: pi[k].min(1.0),
                pi2: m as f64 / cl.size as f64,
                sampled_units: m as u32,
                sampled_events: events as u32,
            });
        }
    }
    Ok(out)
}

/// Converts a draw into a survey dataset whose domains are the population areas.
pub fn to_dataset(pop: &SyntheticPopulation, draw: &SampleDraw) -> Result<SurveyDataset> {
    let aggs: Vec<ClusterAggregate> = draw
        .clusters
        .iter()
        .map(|s| {
            let c = &pop.clusters[s.cluster];
            ClusterAggregate {
                admin1: pop.strata[c.stratum].clone(),
                urban_rural: UrbanRural::Rural,
                cluster_id: format!("c{:06}", s.cluster),
                domain_id: pop.areas[c.area].clone(),
                weight: s.weight(),
                n_trials: s.sampled_units,
                events: s.sampled_events,
            }
        })
        .collect();
    let data = SurveyDataset::from_clusters(&aggs)?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::population::{synthesize_population, PopCluster};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn equal_pop(n_clusters: usize, size: u64) -> (SyntheticPopulation, PopulationConfig) {
        let cfg = PopulationConfig::parse(&format!(
            "stratum.A = {n_clusters}, 5\narea.A.x = {}",
            n_clusters as u64 * size
        ))
        .unwrap();
        let pop = SyntheticPopulation {
            strata: vec!["A".into()],
            areas: vec!["x".into()],
            area_stratum: vec![0],
            area_effects: vec![0.0],
            clusters: (0..n_clusters)
                .map(|_| PopCluster { stratum: 0, area: 0, size, events: size / 3 })
                .collect(),
            stratum_clusters: vec![(0..n_clusters).collect()],
        };
        (pop, cfg)
    }

    #[test]
    fn equal_sizes_self_weighting() {
        let (pop, cfg) = equal_pop(40, 90);
        let d = draw_sample(&pop, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(d.clusters.len(), 5);
        let n_plus = 40.0 * 90.0;
        for s in &d.clusters {
            assert_abs_diff_eq!(s.pi1, 5.0 / 40.0, epsilon = 1e-15);
            assert_abs_diff_eq!(s.weight(), n_plus / (5.0 * 30.0), epsilon = 1e-9);
        }
    }

    #[test]
    fn certainty_cluster_resolved() {
        let pi = pps_probabilities(&[1000, 10, 10, 10, 10], 2);
        assert_eq!(pi[0], 1.0);
        assert_abs_diff_eq!(pi[1..].iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pi.iter().sum::<f64>(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn fixed_sample_size_and_inclusion_frequency() {
        let cfg = PopulationConfig::parse(
            "sigma_cluster = 0.3\nstratum.A = 30, 6\narea.A.x = 30000\nstratum.B = 12, 4\narea.B.y = 9000",
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pop = synthesize_population(&cfg, &mut rng).unwrap();
        let sizes: Vec<u64> = pop.stratum_clusters[0].iter().map(|&c| pop.clusters[c].size).collect();
        let pi = pps_probabilities(&sizes, 6);
        let mut hits = vec![0usize; sizes.len()];
        let reps = 1000;
        for _ in 0..reps {
            let d = draw_sample(&pop, &cfg, &mut rng).unwrap();
            let a = d.clusters.iter().filter(|s| pop.clusters[s.cluster].stratum == 0).count();
            let b = d.clusters.len() - a;
            assert_eq!((a, b), (6, 4));
            for s in &d.clusters {
                if let Some(k) = pop.stratum_clusters[0].iter().position(|&c| c == s.cluster) {
                    hits[k] += 1;
                }
            }
        }
        for (k, p) in pi.iter().enumerate() {
            let f = hits[k] as f64 / reps as f64;
            let se = (p * (1.0 - p) / reps as f64).sqrt().max(1e-3);
            assert!((f - p).abs() < 4.0 * se, "cluster {k}: {f} vs {p}");
        }
    }

    #[test]
    fn dataset_has_one_domain_per_sampled_area() {
        let (pop, cfg) = equal_pop(10, 60);
        let d = draw_sample(&pop, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let data = to_dataset(&pop, &d).unwrap();
        assert_eq!(data.domains(), &["x".to_string()]);
        assert_eq!(data.clusters().len(), 5);
        assert_eq!(data.records().len(), 150);
    }
}
