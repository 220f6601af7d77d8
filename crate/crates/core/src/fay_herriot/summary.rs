use serde::Serialize;

use super::FhFit;
use crate::error::{Result, SaeError};
use crate::interval::expit;

pub const MIN_SUMMARY_DRAWS: usize = 1000;

/// Posterior prevalence summary for one area.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AreaSummary {
    pub area_id: String,
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
    pub q10: f64,
    pub q90: f64,
    pub mean_logit: f64,
    pub sd_logit: f64,
}

/// Linear-interpolation quantile of ascending data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quantiles are taken on the logit scale and mapped through expit, so the
/// prevalence median is exactly expit of the logit median.
pub fn posterior_prevalence(fit: &FhFit) -> Result<Vec<AreaSummary>> {
    if fit.n_draws() < MIN_SUMMARY_DRAWS {
        return Err(SaeError::InvalidArgument(format!(
            "posterior summaries need at least {MIN_SUMMARY_DRAWS} draws, fit has {}",
            fit.n_draws()
        )));
    }
    Ok(fit
        .area_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let mut col: Vec<f64> = fit.theta.column(i).iter().copied().collect();
            col.sort_by(f64::total_cmp);
            let q = |p: f64| expit(quantile(&col, p));
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let sd = (col.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            AreaSummary {
                area_id: id.clone(),
                median: q(0.5),
                q025: q(0.025),
                q975: q(0.975),
                q10: q(0.10),
                q90: q(0.90),
                mean_logit: mean,
                sd_logit: sd,
            }
        })
        .collect())
}

/// Band sizes from fractions by largest remainder.
pub fn band_sizes(breaks: &[f64], n_areas: usize) -> Result<Vec<usize>> {
    if breaks.is_empty() || breaks.iter().any(|b| !(*b > 0.0)) {
        return Err(SaeError::InvalidArgument("band fractions must be positive".into()));
    }
    let total: f64 = breaks.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(SaeError::InvalidArgument(format!("band fractions sum to {total}, not 1")));
    }
    let raw: Vec<f64> = breaks.iter().map(|b| b * n_areas as f64).collect();
    let mut sizes: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        (raw[b] - raw[b].floor())
            .total_cmp(&(raw[a] - raw[a].floor()))
            .then(a.cmp(&b))
    });
    let short = n_areas - sizes.iter().sum::<usize>();
    for &k in order.iter().take(short) {
        sizes[k] += 1;
    }
    Ok(sizes)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankRow {
    pub area_id: String,
    /// Probability of each band, first band holding the highest prevalences.
    pub probs: Vec<f64>,
    pub mean_rank: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankTable {
    pub band_sizes: Vec<usize>,
    pub rows: Vec<RankRow>,
}

/// Posterior probabilities of each area falling in each prevalence band.
/// Rank 1 is the highest prevalence; ties go to the smaller area id.
pub fn ranking_probabilities(fit: &FhFit, breaks: &[f64]) -> Result<RankTable> {
    let n = fit.n_areas();
    let sizes = band_sizes(breaks, n)?;
    let mut band_of_rank = Vec::with_capacity(n);
    for (b, &s) in sizes.iter().enumerate() {
        band_of_rank.extend(std::iter::repeat_n(b, s));
    }
    let n_bands = sizes.len();
    let mut counts = vec![vec![0usize; n_bands]; n];
    let mut rank_sum = vec![0usize; n];
    let mut order: Vec<usize> = (0..n).collect();
    for d in 0..fit.n_draws() {
        let row = fit.theta.row(d);
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then_with(|| fit.area_ids[a].cmp(&fit.area_ids[b])));
        for (r, &i) in order.iter().enumerate() {
            counts[i][band_of_rank[r]] += 1;
            rank_sum[i] += r + 1;
        }
    }
    let nd = fit.n_draws() as f64;
    let rows = (0..n)
        .map(|i| {
            let mut probs: Vec<f64> = counts[i].iter().map(|&c| c as f64 / nd).collect();
            let head: f64 = probs[..n_bands - 1].iter().sum();
            probs[n_bands - 1] = 1.0 - head;
            RankRow {
                area_id: fit.area_ids[i].clone(),
                probs,
                mean_rank: rank_sum[i] as f64 / nd,
            }
        })
        .collect();
    Ok(RankTable { band_sizes: sizes, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HyperSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

fn summarize(name: &str, xs: &[f64]) -> Option<HyperSummary> {
    if xs.is_empty() || xs.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let sd = if s.len() > 1 {
        (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(HyperSummary {
        name: name.to_string(),
        mean,
        sd,
        q025: quantile(&s, 0.025),
        q50: quantile(&s, 0.5),
        q975: quantile(&s, 0.975),
    })
}

/// Summaries of the fixed effects, the random-effect precision 1/σ² and φ.
pub fn hyperparameter_summary(fit: &FhFit) -> Vec<HyperSummary> {
    let mut out: Vec<HyperSummary> = fit
        .fixed_names
        .iter()
        .enumerate()
        .filter_map(|(j, name)| {
            let col: Vec<f64> = fit.fixed.column(j).iter().copied().collect();
            summarize(name, &col)
        })
        .collect();
    let precision: Vec<f64> = fit.sigma.iter().map(|s| 1.0 / (s * s)).collect();
    out.extend(summarize("precision", &precision));
    out.extend(summarize("phi", &fit.phi));
    out
}
