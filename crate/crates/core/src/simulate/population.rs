use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp1, StandardNormal};

use super::config::PopulationConfig;
use crate::error::{Result, SaeError};
use crate::interval::{expit, logit};

/// One frame cluster of a synthetic population.
#[derive(Clone, Debug, PartialEq)]
pub struct PopCluster {
    pub stratum: usize,
    pub area: usize,
    pub size: u64,
    /// Number of ones among the cluster's units.
    pub events: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPopulation {
    pub strata: Vec<String>,
    pub areas: Vec<String>,
    pub area_stratum: Vec<usize>,
    pub area_effects: Vec<f64>,
    pub clusters: Vec<PopCluster>,
    /// Cluster indices per stratum.
    pub stratum_clusters: Vec<Vec<usize>>,
}

impl SyntheticPopulation {
    pub fn stratum_size(&self, h: usize) -> u64 {
        self.stratum_clusters[h].iter().map(|&c| self.clusters[c].size).sum()
    }

    pub fn area_index(&self, name: &str) -> Option<usize> {
        self.areas.iter().position(|a| a == name)
    }
}

const GH_NODES: usize = 32;

/// Gauss-Hermite nodes and weights for ∫ e^{-x²} f(x) dx (Golub-Welsch).
fn gauss_hermite() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GH_NODES;
        let j = DMatrix::from_fn(n, n, |a, b| {
            if a + 1 == b || b + 1 == a {
                ((a.max(b)) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(j);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let v0 = eig.eigenvectors[(0, k)];
                (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.into_iter().unzip()
    })
}

/// E[expit(a + σ Z)] for standard normal Z.
pub fn mean_expit(a: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return expit(a);
    }
    let (x, w) = gauss_hermite();
    let s = std::f64::consts::SQRT_2 * sigma;
    x.iter().zip(w).map(|(x, w)| w * expit(a + s * x)).sum::<f64>() / std::f64::consts::PI.sqrt()
}

/// Cluster counts per area by population share, at least one per area.
pub fn allocate_clusters(cfg: &PopulationConfig) -> Vec<usize> {
    cfg.areas
        .iter()
        .map(|a| {
            let s = cfg.strata.iter().find(|s| s.name == a.stratum).expect("validated");
            let n_h: u64 = cfg.areas.iter().filter(|b| b.stratum == a.stratum).map(|b| b.population).sum();
            let c = (a.population as f64 / n_h as f64 * s.frame_clusters as f64).round() as usize;
            c.max(1)
        })
        .collect()
}

/// Synthesizes cluster sizes and outcome counts.
///
/// Units within a cluster are exchangeable given the cluster effect, so the
/// cluster's event count is Binomial(N_c, E[expit(η_c + e_ck)]) with the
/// expectation over the unit effect taken by quadrature.
pub fn synthesize_population<R: Rng + ?Sized>(cfg: &PopulationConfig, rng: &mut R) -> Result<SyntheticPopulation> {
    cfg.validate()?;
    let strata: Vec<String> = cfg.strata.iter().map(|s| s.name.clone()).collect();
    let areas: Vec<String> = cfg.areas.iter().map(|a| a.name.clone()).collect();
    let area_stratum: Vec<usize> = cfg
        .areas
        .iter()
        .map(|a| strata.iter().position(|s| *s == a.stratum).expect("validated"))
        .collect();
    let alloc = allocate_clusters(cfg);
    let base = logit(cfg.m0);
    let min = u64::from(cfg.min_cluster_size);

    let mut clusters = Vec::new();
    let mut stratum_clusters = vec![Vec::new(); strata.len()];
    let mut area_effects = Vec::with_capacity(areas.len());
    for (i, a) in cfg.areas.iter().enumerate() {
        let alpha = cfg.sigma_area * rng.sample::<f64, _>(StandardNormal);
        area_effects.push(alpha);
        let c = alloc[i] as u64;
        if a.population < min * c {
            return Err(SaeError::Config(format!(
                "area `{}`: population {} cannot host {} clusters of at least {}",
                a.name, a.population, c, min
            )));
        }
        let spare = (a.population - min * c) as f64;
        let draws: Vec<f64> = (0..c).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = draws.iter().sum();
        for d in draws {
            let size = min + (d / total * spare).round() as u64;
            let e_c = cfg.sigma_cluster * rng.sample::<f64, _>(StandardNormal);
            let p = mean_expit(base + alpha + e_c, cfg.sigma_unit);
            let events = Binomial::new(size, p)
                .map_err(|e| SaeError::Numerical(format!("binomial draw: {e}")))?
                .sample(rng);
            stratum_clusters[area_stratum[i]].push(clusters.len());
            clusters.push(PopCluster {
                stratum: area_stratum[i],
                area: i,
                size,
                events,
            });
        }
    }
    Ok(SyntheticPopulation {
        strata,
        areas,
        area_stratum,
        area_effects,
        clusters,
        stratum_clusters,
    })
}

/// Unweighted population prevalence of an area.
pub fn true_domain_prevalence(pop: &SyntheticPopulation, area: &str) -> Result<f64> {
    let i = pop
        .area_index(area)
        .ok_or_else(|| SaeError::UnknownDomain(area.to_string()))?;
    let (n, y) = pop
        .clusters
        .iter()
        .filter(|c| c.area == i)
        .fold((0u64, 0u64), |(n, y), c| (n + c.size, y + c.events));
    if n == 0 {
        return Err(SaeError::InvalidArgument(format!("area `{area}` is empty")));
    }
    Ok(y as f64 / n as f64)
}

/// True prevalence of every area, in population area order.
pub fn true_prevalences(pop: &SyntheticPopulation) -> Vec<f64> {
    let mut n = vec![0u64; pop.areas.len()];
    let mut y = vec![0u64; pop.areas.len()];
    for c in &pop.clusters {
        n[c.area] += c.size;
        y[c.area] += c.events;
    }
    n.iter().zip(&y).map(|(n, y)| *y as f64 / *n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(text: &str) -> PopulationConfig {
        PopulationConfig::parse(text).unwrap()
    }

    #[test]
    fn quadrature_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, s) = (-1.3, 0.7);
        let n = 400_000;
        let mc: f64 = (0..n)
            .map(|_| expit(a + s * rng.sample::<f64, _>(StandardNormal)))
            .sum::<f64>()
            / n as f64;
        assert_abs_diff_eq!(mean_expit(a, s), mc, epsilon = 1e-3);
        assert_eq!(mean_expit(a, 0.0), expit(a));
        let (_, w) = gauss_hermite();
        assert_abs_diff_eq!(w.iter().sum::<f64>(), std::f64::consts::PI.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn allocation_rule() {
        let c = cfg("stratum.A = 100, 5\narea.A.x = 30000\narea.A.y = 10000\nstratum.B = 7, 2\narea.B.z = 5000");
        assert_eq!(allocate_clusters(&c), vec![75, 25, 7]);
    }

    #[test]
    fn sizes_respect_floor_and_total() {
        let c = cfg("stratum.A = 50, 5\narea.A.x = 20000\narea.A.y = 8000");
        let pop = synthesize_population(&c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(pop.clusters.iter().all(|c| c.size >= 30));
        for (i, want) in [20000u64, 8000].iter().enumerate() {
            let got: u64 = pop.clusters.iter().filter(|c| c.area == i).map(|c| c.size).sum();
            let n = pop.clusters.iter().filter(|c| c.area == i).count() as i64;
            assert!((got as i64 - *want as i64).abs() <= n);
        }
    }

    #[test]
    fn too_small_population_rejected() {
        let c = cfg("stratum.A = 50, 5\narea.A.x = 1000");
        assert!(matches!(
            synthesize_population(&c, &mut ChaCha8Rng::seed_from_u64(1)),
            Err(SaeError::Config(_))
        ));
    }

    #[test]
    fn no_random_effects_concentrates_on_m0() {
        let c = cfg("m0 = 0.3\nstratum.A = 200, 5\narea.A.x = 400000");
        let pop = synthesize_population(&c, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let p = true_domain_prevalence(&pop, "x").unwrap();
        let tol = 3.0 * (0.3f64 * 0.7 / 400_000.0).sqrt();
        assert!((p - 0.3).abs() < tol, "{p}");
    }

    #[test]
    fn national_identity_and_determinism() {
        let c = cfg("m0 = 0.1\nsigma_area = 0.5\nsigma_cluster = 0.2\nstratum.A = 40, 5\narea.A.x = 9000\narea.A.y = 6000\nstratum.B = 30, 5\narea.B.z = 7000");
        let pop = synthesize_population(&c, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let again = synthesize_population(&c, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(pop, again);
        let p = true_prevalences(&pop);
        let n: Vec<f64> = (0..3)
            .map(|i| pop.clusters.iter().filter(|c| c.area == i).map(|c| c.size as f64).sum())
            .collect();
        let nat = pop.clusters.iter().map(|c| c.events as f64).sum::<f64>()
            / pop.clusters.iter().map(|c| c.size as f64).sum::<f64>();
        let agg = (0..3).map(|i| n[i] * p[i]).sum::<f64>() / n.iter().sum::<f64>();
        assert_abs_diff_eq!(agg, nat, epsilon = 1e-14);
        assert!(true_domain_prevalence(&pop, "nope").is_err());
    }

    #[test]
    fn ten_units_three_ones() {
        let pop = SyntheticPopulation {
            strata: vec!["A".into()],
            areas: vec!["x".into()],
            area_stratum: vec![0],
            area_effects: vec![0.0],
            clusters: vec![PopCluster { stratum: 0, area: 0, size: 10, events: 3 }],
            stratum_clusters: vec![vec![0]],
        };
        assert_eq!(true_domain_prevalence(&pop, "x").unwrap(), 0.3);
    }
}
