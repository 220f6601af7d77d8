//! BYM2 Fay-Herriot model by MCMC.
//!
//! θ_i = x_iᵀβ + σ(√(1−φ) e_i + √φ S_i) with S = U z, z ~ N(0, Λ⁻¹), where
//! U Λ Uᵀ is the positive part of the scaled ICAR precision. Each iteration
//! updates (log σ, logit φ) by random-walk Metropolis on the likelihood of the
//! observed θ̂ with β, z and e integrated out, then draws (β, z) jointly from
//! their Gaussian conditional with e integrated out, then e and θ.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::diagnostics::{effective_sample_size, split_rhat};
use super::{Diagnostics, FhFit, FhInput, Model, SpatialStructure};
use crate::error::{Result, SaeError};

#[derive(Clone, Debug)]
pub struct McmcOptions {
    pub nested: bool,
    pub n_chains: usize,
    /// Iterations per chain including burn-in.
    pub n_iter: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub fixed_phi: Option<f64>,
    pub fixed_sigma: Option<f64>,
    /// Prior precision of each fixed effect (zero-mean normal).
    pub fixed_effect_precision: f64,
    /// Scale of the half-normal prior on σ.
    pub sigma_prior_scale: f64,
}

impl Default for McmcOptions {
    fn default() -> Self {
        McmcOptions {
            nested: false,
            n_chains: 4,
            n_iter: 2500,
            burn_in: 500,
            seed: 1,
            fixed_phi: None,
            fixed_sigma: None,
            fixed_effect_precision: 0.001,
            sigma_prior_scale: 1.0,
        }
    }
}

impl McmcOptions {
    /// Sets iterations so that the pooled retained draws reach `draws`.
    pub fn with_total_draws(mut self, draws: usize) -> Self {
        let per_chain = draws.div_ceil(self.n_chains.max(1));
        self.n_iter = self.burn_in + per_chain;
        self
    }
}

struct Problem {
    n: usize,
    obs: Vec<usize>,
    y: DVector<f64>,
    v: DVector<f64>,
    x: DMatrix<f64>,
    x_obs: DMatrix<f64>,
    u: DMatrix<f64>,
    u_obs: DMatrix<f64>,
    lambda: DVector<f64>,
    /// X B Xᵀ over observed areas, B the fixed-effect prior covariance.
    cov_fixed: DMatrix<f64>,
    /// U Λ⁻¹ Uᵀ over observed areas.
    cov_spatial: DMatrix<f64>,
    tau_beta: f64,
    sigma_scale: f64,
}

impl Problem {
    fn log_marginal(&self, sigma: f64, phi: f64) -> Option<f64> {
        let s2 = sigma * sigma;
        let mut cov = &self.cov_fixed + &self.cov_spatial * (s2 * phi);
        for i in 0..self.obs.len() {
            cov[(i, i)] += s2 * (1.0 - phi) + self.v[i];
        }
        let chol = Cholesky::new(cov)?;
        let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        let alpha = chol.solve(&self.y);
        Some(-0.5 * (logdet + self.y.dot(&alpha)))
    }

    fn log_prior(&self, ls: f64, lp: Option<f64>) -> f64 {
        let sigma = ls.exp();
        let mut lp_total = -0.5 * (sigma / self.sigma_scale).powi(2) + ls;
        if let Some(l) = lp {
            // Uniform φ on the logit scale: φ(1−φ).
            lp_total += -softplus(-l) - softplus(l);
        }
        lp_total
    }

    /// Precision factor and linear term of the (β, z) conditional.
    fn conditional(&self, sigma: f64, phi: f64) -> Option<(Cholesky<f64, Dyn>, DVector<f64>)> {
        let p = self.x.ncols();
        let k = self.lambda.len();
        let c = sigma * phi.sqrt();
        let noise = sigma * sigma * (1.0 - phi);
        let m = self.obs.len();
        let mut ad = DMatrix::zeros(m, p + k);
        let mut dy = DVector::zeros(m);
        for i in 0..m {
            let w = 1.0 / (noise + self.v[i]);
            let sw = w.sqrt();
            for j in 0..p {
                ad[(i, j)] = self.x_obs[(i, j)] * sw;
            }
            for j in 0..k {
                ad[(i, p + j)] = self.u_obs[(i, j)] * c * sw;
            }
            dy[i] = self.y[i] * sw;
        }
        let mut prec = ad.tr_mul(&ad);
        for j in 0..p {
            prec[(j, j)] += self.tau_beta;
        }
        for j in 0..k {
            prec[(p + j, p + j)] += self.lambda[j];
        }
        let b = ad.tr_mul(&dy);
        Some((Cholesky::new(prec)?, b))
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn logistic(x: f64) -> f64 {
    crate::interval::expit(x)
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

struct ChainOut {
    theta: Vec<DVector<f64>>,
    fixed: Vec<DVector<f64>>,
    spatial: Vec<DVector<f64>>,
    sigma: Vec<f64>,
    phi: Vec<f64>,
    accepted: usize,
    proposed: usize,
}

fn run_chain(pb: &Problem, opts: &McmcOptions, chain: usize) -> Result<ChainOut> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(chain as u64 + 1);
    let p = pb.x.ncols();

    let mut ls = match opts.fixed_sigma {
        Some(s) => s.ln(),
        None => (0.3 + 1.2 * rng.random::<f64>()).ln(),
    };
    let mut lp = match opts.fixed_phi {
        Some(_) => None,
        None => Some(rng.sample::<f64, _>(StandardNormal)),
    };
    let phi_of = |lp: Option<f64>| opts.fixed_phi.unwrap_or_else(|| logistic(lp.unwrap()));
    let update_hyper = opts.fixed_sigma.is_none() || opts.fixed_phi.is_none();

    let mut cur = pb
        .log_marginal(ls.exp(), phi_of(lp))
        .ok_or_else(|| SaeError::Numerical("marginal covariance not positive definite".into()))?
        + pb.log_prior(ls, lp);
    let mut step = 0.5;
    let mut window_acc = 0usize;
    let mut cached: Option<(f64, f64, Cholesky<f64, Dyn>, DVector<f64>)> = None;

    let keep = opts.n_iter - opts.burn_in;
    let mut out = ChainOut {
        theta: Vec::with_capacity(keep),
        fixed: Vec::with_capacity(keep),
        spatial: Vec::with_capacity(keep),
        sigma: Vec::with_capacity(keep),
        phi: Vec::with_capacity(keep),
        accepted: 0,
        proposed: 0,
    };

    for it in 0..opts.n_iter {
        if update_hyper {
            let ls_new = if opts.fixed_sigma.is_some() { ls } else { ls + step * rng.sample::<f64, _>(StandardNormal) };
            let lp_new = lp.map(|l| l + step * rng.sample::<f64, _>(StandardNormal));
            let phi_new = phi_of(lp_new);
            if let Some(ll) = pb.log_marginal(ls_new.exp(), phi_new) {
                let prop = ll + pb.log_prior(ls_new, lp_new);
                if (prop - cur) >= rng.random::<f64>().ln() {
                    ls = ls_new;
                    lp = lp_new;
                    cur = prop;
                    window_acc += 1;
                    if it >= opts.burn_in {
                        out.accepted += 1;
                    }
                }
            }
            if it >= opts.burn_in {
                out.proposed += 1;
            }
            if it < opts.burn_in && (it + 1) % 50 == 0 {
                let rate = window_acc as f64 / 50.0;
                if rate > 0.4 {
                    step *= 1.25;
                } else if rate < 0.2 {
                    step /= 1.25;
                }
                window_acc = 0;
            }
        }
        if it < opts.burn_in {
            continue;
        }

        let sigma = ls.exp();
        let phi = phi_of(lp);
        let fresh = !matches!(&cached, Some((s, f, _, _)) if *s == sigma && *f == phi);
        if fresh {
            let (chol, b) = pb
                .conditional(sigma, phi)
                .ok_or_else(|| SaeError::Numerical("conditional precision not positive definite".into()))?;
            cached = Some((sigma, phi, chol, b));
        }
        let (_, _, chol, b) = cached.as_ref().expect("cached conditional");
        let mean = chol.solve(b);
        let eps = normal_vec(&mut rng, mean.len());
        let lt = chol.l().transpose();
        let dev = lt
            .solve_upper_triangular(&eps)
            .ok_or_else(|| SaeError::Numerical("triangular solve failed".into()))?;
        let draw = mean + dev;
        let beta = draw.rows(0, p).into_owned();
        let z = draw.rows(p, draw.len() - p).into_owned();
        let s = &pb.u * &z;
        let c = sigma * phi.sqrt();
        let eta = &pb.x * &beta + &s * c;
        let g = sigma * (1.0 - phi).max(0.0).sqrt();

        let mut theta = DVector::zeros(pb.n);
        let mut oi = 0;
        for i in 0..pb.n {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let e = if oi < pb.obs.len() && pb.obs[oi] == i {
                let v = pb.v[oi];
                let prec = 1.0 + g * g / v;
                let m = g * (pb.y[oi] - eta[i]) / v / prec;
                oi += 1;
                m + noise / prec.sqrt()
            } else {
                noise
            };
            theta[i] = eta[i] + g * e;
        }
        out.theta.push(theta);
        out.fixed.push(beta);
        out.spatial.push(s);
        out.sigma.push(sigma);
        out.phi.push(phi);
    }
    Ok(out)
}

/// Fits the BYM2 model. Areas of `input` must match those of `spatial`.
pub fn fit_bym2_mcmc(input: &FhInput, spatial: &SpatialStructure, opts: &McmcOptions) -> Result<FhFit> {
    if opts.n_chains == 0 || opts.burn_in >= opts.n_iter {
        return Err(SaeError::InvalidArgument("need at least one chain and iterations beyond burn-in".into()));
    }
    if let Some(phi) = opts.fixed_phi {
        if !(0.0..=1.0).contains(&phi) {
            return Err(SaeError::InvalidArgument(format!("φ must lie in [0, 1], got {phi}")));
        }
    }
    if let Some(s) = opts.fixed_sigma {
        if !(s > 0.0 && s.is_finite()) {
            return Err(SaeError::InvalidArgument(format!("σ must be positive, got {s}")));
        }
    }
    let n = input.areas.len();
    if spatial.n_areas() != n {
        return Err(SaeError::InvalidArgument(format!(
            "spatial structure has {} areas, input has {n}",
            spatial.n_areas()
        )));
    }
    let rows: Vec<usize> = input
        .areas
        .iter()
        .map(|a| {
            spatial
                .area_ids
                .iter()
                .position(|s| *s == a.area_id)
                .ok_or_else(|| SaeError::InvalidArgument(format!("area `{}` missing from adjacency", a.area_id)))
        })
        .collect::<Result<_>>()?;
    let obs: Vec<usize> = (0..n).filter(|&i| !input.areas[i].is_missing()).collect();
    if obs.is_empty() {
        return Err(SaeError::InvalidArgument("no observed areas".into()));
    }
    let (x, fixed_names) = input.design(opts.nested)?;
    let u = spatial.basis.select_rows(&rows);
    let u_obs = u.select_rows(&obs);
    let x_obs = x.select_rows(&obs);
    let cov_fixed = &x_obs * x_obs.transpose() / opts.fixed_effect_precision;
    let cov_spatial = spatial.covariance(&obs.iter().map(|&i| rows[i]).collect::<Vec<_>>());
    let pb = Problem {
        n,
        y: DVector::from_iterator(obs.len(), obs.iter().map(|&i| input.areas[i].theta_hat.unwrap())),
        v: DVector::from_iterator(obs.len(), obs.iter().map(|&i| input.areas[i].var_theta.unwrap())),
        obs,
        x,
        x_obs,
        u,
        u_obs,
        lambda: spatial.eigenvalues.clone(),
        cov_fixed,
        cov_spatial,
        tau_beta: opts.fixed_effect_precision,
        sigma_scale: opts.sigma_prior_scale,
    };

    let chains: Vec<ChainOut> = (0..opts.n_chains)
        .into_par_iter()
        .map(|c| run_chain(&pb, opts, c))
        .collect::<Result<_>>()?;

    let keep = opts.n_iter - opts.burn_in;
    let total = keep * opts.n_chains;
    let p = fixed_names.len();
    let mut theta = DMatrix::zeros(total, n);
    let mut fixed = DMatrix::zeros(total, p);
    let mut spatial_draws = DMatrix::zeros(total, n);
    let mut sigma = Vec::with_capacity(total);
    let mut phi = Vec::with_capacity(total);
    for (c, ch) in chains.iter().enumerate() {
        for d in 0..keep {
            let r = c * keep + d;
            theta.row_mut(r).copy_from(&ch.theta[d].transpose());
            fixed.row_mut(r).copy_from(&ch.fixed[d].transpose());
            spatial_draws.row_mut(r).copy_from(&ch.spatial[d].transpose());
        }
        sigma.extend_from_slice(&ch.sigma);
        phi.extend_from_slice(&ch.phi);
    }

    let per_area = |i: usize| -> Vec<Vec<f64>> {
        chains.iter().map(|ch| ch.theta.iter().map(|t| t[i]).collect()).collect()
    };
    let (rhat, ess): (Vec<f64>, Vec<f64>) = (0..n)
        .into_par_iter()
        .map(|i| {
            let c = per_area(i);
            (split_rhat(&c), effective_sample_size(&c))
        })
        .unzip();
    let (acc, prop) = chains.iter().fold((0, 0), |(a, p), c| (a + c.accepted, p + c.proposed));
    let diagnostics = Diagnostics {
        rhat,
        ess,
        n_chains: opts.n_chains,
        accept_rate: if prop > 0 { acc as f64 / prop as f64 } else { f64::NAN },
    };
    let mut warnings = Vec::new();
    let max_rhat = diagnostics.max_rhat();
    if max_rhat > 1.05 {
        warnings.push(format!(
            "split R-hat {max_rhat:.3} exceeds 1.05; increase iterations"
        ));
    }
    Ok(FhFit {
        model: Model::Bym2,
        nested: opts.nested,
        area_ids: input.areas.iter().map(|a| a.area_id.clone()).collect(),
        fixed_names,
        theta,
        fixed,
        sigma,
        phi,
        spatial: Some(spatial_draws),
        diagnostics: Some(diagnostics),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fay_herriot::{build_scaled_icar, fit_iid_eb, FhArea, IidOptions};

    fn line_input(thetas: &[Option<f64>], v: f64) -> (FhInput, SpatialStructure) {
        let ids: Vec<String> = (0..thetas.len()).map(|i| format!("a{i:02}")).collect();
        let areas = thetas
            .iter()
            .zip(&ids)
            .enumerate()
            .map(|(i, (t, id))| FhArea {
                area_id: id.clone(),
                admin1: if i < thetas.len() / 2 { "g1".into() } else { "g2".into() },
                theta_hat: *t,
                var_theta: t.map(|_| v),
                covariates: vec![],
            })
            .collect();
        let edges: Vec<(String, String)> = (1..ids.len()).map(|i| (ids[i - 1].clone(), ids[i].clone())).collect();
        (FhInput::new(areas, vec![]).unwrap(), build_scaled_icar(&ids, &edges).unwrap())
    }

    #[test]
    fn sum_to_zero_and_shapes() {
        let thetas: Vec<Option<f64>> = (0..8).map(|i| Some(-2.0 + 0.3 * i as f64)).collect();
        let (input, sp) = line_input(&thetas, 0.2);
        let opts = McmcOptions { n_iter: 300, burn_in: 100, n_chains: 2, ..Default::default() };
        let fit = fit_bym2_mcmc(&input, &sp, &opts).unwrap();
        assert_eq!(fit.n_draws(), 400);
        let s = fit.spatial.as_ref().unwrap();
        for d in 0..s.nrows() {
            assert!(s.row(d).sum().abs() <= 1e-8);
        }
        assert!(fit.phi.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn deterministic_for_seed() {
        let thetas: Vec<Option<f64>> = (0..6).map(|i| Some(-1.0 + 0.2 * i as f64)).collect();
        let (input, sp) = line_input(&thetas, 0.3);
        let opts = McmcOptions { n_iter: 150, burn_in: 50, n_chains: 2, ..Default::default() };
        let a = fit_bym2_mcmc(&input, &sp, &opts).unwrap();
        let b = fit_bym2_mcmc(&input, &sp, &opts).unwrap();
        assert_eq!(a.theta, b.theta);
    }

    #[test]
    fn phi_zero_reduces_to_iid() {
        let thetas: Vec<Option<f64>> = [-3.1, -2.6, -2.9, -3.5, -2.2, -3.0, -2.7, -3.3, -2.4, -2.8]
            .iter()
            .map(|t| Some(*t))
            .collect();
        let (input, sp) = line_input(&thetas, 0.15);
        let eb = fit_iid_eb(&input, &IidOptions { n_draws: 4000, ..Default::default() }).unwrap();
        let sigma = eb.sigma[0].max(0.05);
        let eb = fit_iid_eb(&input, &IidOptions { n_draws: 4000, sigma2: Some(sigma * sigma), ..Default::default() }).unwrap();
        let opts = McmcOptions { fixed_phi: Some(0.0), fixed_sigma: Some(sigma), n_iter: 1500, burn_in: 500, ..Default::default() };
        let fit = fit_bym2_mcmc(&input, &sp, &opts).unwrap();
        for i in 0..thetas.len() {
            let a = eb.theta.column(i).mean();
            let b = fit.theta.column(i).mean();
            assert!((a - b).abs() < 0.02, "area {i}: {a} vs {b}");
        }
    }

    #[test]
    fn missing_area_pulled_toward_neighbours() {
        let mut thetas: Vec<Option<f64>> = vec![Some(-3.0); 12];
        for t in thetas.iter_mut().take(6) {
            *t = Some(-1.0);
        }
        thetas[2] = None;
        let (input, sp) = line_input(&thetas, 0.05);
        let opts = McmcOptions { n_iter: 1200, burn_in: 400, ..Default::default() };
        let fit = fit_bym2_mcmc(&input, &sp, &opts).unwrap();
        let m = fit.theta.column(2).mean();
        let global = fit.fixed.column(0).mean();
        assert!(m > global && m < -1.0 + 0.1, "missing {m}, global {global}");
    }
}
