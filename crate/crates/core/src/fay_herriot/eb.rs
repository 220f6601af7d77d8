use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{FhFit, FhInput, Model};
use crate::error::{Result, SaeError};

#[derive(Clone, Debug)]
pub struct IidOptions {
    pub nested: bool,
    pub n_draws: usize,
    pub seed: u64,
    /// Fixes σ²_u instead of estimating it.
    pub sigma2: Option<f64>,
    /// Fixes the fixed effects instead of their GLS estimate.
    pub fixed_effects: Option<Vec<f64>>,
}

impl Default for IidOptions {
    fn default() -> Self {
        IidOptions {
            nested: false,
            n_draws: 10_000,
            seed: 1,
            sigma2: None,
            fixed_effects: None,
        }
    }
}

/// Closed-form conditional posterior of each area's θ.
#[derive(Clone, Debug, PartialEq)]
pub struct IidPosterior {
    pub area_ids: Vec<String>,
    pub fixed_names: Vec<String>,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    /// γθ̂ + (1−γ)xᵀβ for observed areas, xᵀβ for missing ones.
    pub mean: Vec<f64>,
    /// sqrt(γV) for observed areas, σ for missing ones.
    pub sd: Vec<f64>,
}

struct Observed {
    x: DMatrix<f64>,
    y: DVector<f64>,
    v: DVector<f64>,
}

/// GLS estimate of the fixed effects and the profile log-likelihood.
fn profile(obs: &Observed, sigma2: f64) -> Result<(DVector<f64>, f64)> {
    let w = obs.v.map(|v| 1.0 / (sigma2 + v));
    let xtw = DMatrix::from_fn(obs.x.ncols(), obs.x.nrows(), |j, i| obs.x[(i, j)] * w[i]);
    let a = &xtw * &obs.x;
    let b = &xtw * &obs.y;
    let beta = a
        .cholesky()
        .ok_or_else(|| {
            SaeError::InvalidArgument(
                "fixed effects not identified: some group has no observed area".into(),
            )
        })?
        .solve(&b);
    let r = &obs.y - &obs.x * &beta;
    let ll = -0.5
        * (0..r.len())
            .map(|i| (sigma2 + obs.v[i]).ln() + r[i] * r[i] * w[i])
            .sum::<f64>();
    Ok((beta, ll))
}

/// Maximizes the profile likelihood over log σ² by grid bracketing and
/// golden-section refinement. Returns 0 when the maximum is on the lower edge.
fn estimate_sigma2(obs: &Observed) -> Result<f64> {
    let n = obs.y.len() as f64;
    let mean = obs.y.sum() / n;
    let spread = obs.y.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let scale = spread.max(obs.v.max()).max(1e-8);
    let (lo, hi) = ((scale * 1e-8).ln(), (scale * 100.0).ln());
    let f = |t: f64| profile(obs, t.exp()).map(|(_, ll)| ll);

    let grid = 80;
    let pts: Vec<f64> = (0..=grid).map(|k| lo + (hi - lo) * k as f64 / grid as f64).collect();
    let vals = pts.iter().map(|&t| f(t)).collect::<Result<Vec<_>>>()?;
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(SaeError::Numerical("non-finite likelihood in σ² search".into()));
    }
    let best = (0..vals.len())
        .max_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .expect("nonempty grid");
    if best == 0 {
        let at_zero = profile(obs, 0.0)?.1;
        if at_zero >= vals[0] - 1e-12 {
            return Ok(0.0);
        }
    }
    if best == grid {
        return Err(SaeError::Numerical(format!(
            "σ² likelihood increasing at upper bracket {:.3e}; trace: {:?}",
            hi.exp(),
            &vals[grid - 3..]
        )));
    }
    let (mut a, mut b) = (pts[best.saturating_sub(1)], pts[best + 1]);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..200 {
        if (b - a).abs() < 1e-10 {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    if (b - a).abs() >= 1e-6 {
        return Err(SaeError::Numerical(format!(
            "golden-section search did not converge: bracket [{a}, {b}]"
        )));
    }
    Ok(((a + b) / 2.0).exp())
}

/// Posterior moments given σ² and β, each estimated unless fixed in `opts`.
pub fn iid_posterior(input: &FhInput, opts: &IidOptions) -> Result<IidPosterior> {
    let obs_idx: Vec<usize> = (0..input.areas.len())
        .filter(|&i| !input.areas[i].is_missing())
        .collect();
    if obs_idx.len() < 3 {
        return Err(SaeError::InvalidArgument(format!(
            "iid model needs at least 3 observed areas, got {}",
            obs_idx.len()
        )));
    }
    let (x_all, fixed_names) = input.design(opts.nested)?;
    let obs = Observed {
        x: x_all.select_rows(&obs_idx),
        y: DVector::from_iterator(obs_idx.len(), obs_idx.iter().map(|&i| input.areas[i].theta_hat.unwrap())),
        v: DVector::from_iterator(obs_idx.len(), obs_idx.iter().map(|&i| input.areas[i].var_theta.unwrap())),
    };
    let sigma2 = match opts.sigma2 {
        Some(s) if s >= 0.0 && s.is_finite() => s,
        Some(s) => return Err(SaeError::InvalidArgument(format!("σ² must be nonnegative, got {s}"))),
        None => estimate_sigma2(&obs)?,
    };
    let beta = match &opts.fixed_effects {
        Some(b) if b.len() == fixed_names.len() => DVector::from_column_slice(b),
        Some(b) => {
            return Err(SaeError::InvalidArgument(format!(
                "{} fixed effects given, model has {}",
                b.len(),
                fixed_names.len()
            )))
        }
        None => profile(&obs, sigma2)?.0,
    };
    let m = &x_all * &beta;

    let (mean, sd): (Vec<f64>, Vec<f64>) = input
        .areas
        .iter()
        .enumerate()
        .map(|(i, a)| match (a.theta_hat, a.var_theta) {
            (Some(t), Some(v)) => {
                let gamma = if sigma2 + v > 0.0 { sigma2 / (sigma2 + v) } else { 0.0 };
                (gamma * t + (1.0 - gamma) * m[i], (gamma * v).sqrt())
            }
            _ => (m[i], sigma2.sqrt()),
        })
        .unzip();
    Ok(IidPosterior {
        area_ids: input.areas.iter().map(|a| a.area_id.clone()).collect(),
        fixed_names,
        beta: beta.iter().copied().collect(),
        sigma2,
        mean,
        sd,
    })
}

/// Empirical Bayes fit of the iid Fay-Herriot model with conditional draws.
pub fn fit_iid_eb(input: &FhInput, opts: &IidOptions) -> Result<FhFit> {
    let post = iid_posterior(input, opts)?;
    let n = post.mean.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut theta = DMatrix::zeros(opts.n_draws, n);
    for d in 0..opts.n_draws {
        for i in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            theta[(d, i)] = post.mean[i] + post.sd[i] * z;
        }
    }
    let fixed = DMatrix::from_fn(opts.n_draws, post.beta.len(), |_, j| post.beta[j]);
    Ok(FhFit {
        model: Model::Iid,
        nested: opts.nested,
        area_ids: post.area_ids,
        fixed_names: post.fixed_names,
        theta,
        fixed,
        sigma: vec![post.sigma2.sqrt(); opts.n_draws],
        phi: Vec::new(),
        spatial: None,
        diagnostics: None,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fay_herriot::FhArea;
    use approx::assert_abs_diff_eq;

    fn area(id: &str, g: &str, t: Option<f64>, v: f64) -> FhArea {
        FhArea {
            area_id: id.into(),
            admin1: g.into(),
            theta_hat: t,
            var_theta: t.map(|_| v),
            covariates: Vec::new(),
        }
    }

    fn col_mean(fit: &FhFit, i: usize) -> f64 {
        fit.theta.column(i).mean()
    }

    #[test]
    fn conjugate_three_areas() {
        let input = FhInput::new(
            vec![
                area("a", "g", Some(-1.0), 1.0),
                area("b", "g", Some(0.0), 1.0),
                area("c", "g", Some(1.0), 1.0),
            ],
            vec![],
        )
        .unwrap();
        let fit = fit_iid_eb(&input, &IidOptions { sigma2: Some(1.0), n_draws: 40_000, ..Default::default() }).unwrap();
        assert_abs_diff_eq!(fit.fixed[(0, 0)], 0.0, epsilon = 1e-12);
        for (i, want) in [-0.5, 0.0, 0.5].iter().enumerate() {
            assert_abs_diff_eq!(col_mean(&fit, i), *want, epsilon = 0.02);
        }
        // γV = 0.5
        let var = fit.theta.column(0).variance();
        assert_abs_diff_eq!(var, 0.5, epsilon = 0.02);
    }

    #[test]
    fn tiny_variance_recovers_direct() {
        let input = FhInput::new(
            vec![
                area("a", "g", Some(-1.0), 1.0),
                area("b", "g", Some(2.0), 1e-12),
                area("c", "g", Some(1.0), 1.0),
                area("d", "g", Some(0.3), 0.5),
            ],
            vec![],
        )
        .unwrap();
        let fit = fit_iid_eb(&input, &IidOptions { n_draws: 2000, ..Default::default() }).unwrap();
        assert_abs_diff_eq!(col_mean(&fit, 1), 2.0, epsilon = 1e-4);
    }

    #[test]
    fn no_between_area_spread_pools_completely() {
        let input = FhInput::new(
            (0..6).map(|i| area(&format!("a{i}"), "g", Some(0.2), 1.0)).collect(),
            vec![],
        )
        .unwrap();
        let fit = fit_iid_eb(&input, &IidOptions { n_draws: 1000, ..Default::default() }).unwrap();
        assert_eq!(fit.sigma[0], 0.0);
        for i in 0..6 {
            assert_abs_diff_eq!(col_mean(&fit, i), 0.2, epsilon = 1e-12);
        }
    }

    #[test]
    fn profile_optimum_matches_brute_force() {
        let thetas = [-2.1, -1.3, -0.2, 0.4, 1.9, -0.7, 0.8];
        let vs = [0.3, 0.5, 0.2, 0.9, 0.4, 0.6, 0.25];
        let obs = Observed {
            x: DMatrix::from_element(7, 1, 1.0),
            y: DVector::from_row_slice(&thetas),
            v: DVector::from_row_slice(&vs),
        };
        let s = estimate_sigma2(&obs).unwrap();
        // Independent oracle: dense scan of the same likelihood with the
        // weighted mean recomputed inline.
        let ll = |s2: f64| {
            let w: Vec<f64> = vs.iter().map(|v| 1.0 / (s2 + v)).collect();
            let mu = thetas.iter().zip(&w).map(|(t, w)| t * w).sum::<f64>() / w.iter().sum::<f64>();
            -0.5 * thetas.iter().zip(&vs).map(|(t, v)| (s2 + v).ln() + (t - mu).powi(2) / (s2 + v)).sum::<f64>()
        };
        let best = (1..200_000).map(|k| k as f64 * 2e-5).max_by(|a, b| ll(*a).total_cmp(&ll(*b))).unwrap();
        assert_abs_diff_eq!(s, best, epsilon = 1e-4);
    }

    #[test]
    fn missing_area_drawn_from_linking_model() {
        let input = FhInput::new(
            vec![
                area("a", "g", Some(-1.0), 0.5),
                area("b", "g", Some(0.0), 0.5),
                area("c", "g", Some(1.0), 0.5),
                area("m", "g", None, 0.0),
            ],
            vec![],
        )
        .unwrap();
        let fit = fit_iid_eb(&input, &IidOptions { sigma2: Some(0.8), n_draws: 20_000, ..Default::default() }).unwrap();
        assert_abs_diff_eq!(fit.theta.column(3).variance(), 0.8, epsilon = 0.04);
        assert!(fit.theta.column(3).variance() > fit.theta.column(1).variance());
    }

    #[test]
    fn too_few_areas() {
        let input = FhInput::new(vec![area("a", "g", Some(0.0), 1.0), area("b", "g", Some(0.0), 1.0)], vec![]).unwrap();
        assert!(fit_iid_eb(&input, &IidOptions::default()).is_err());
    }
}
