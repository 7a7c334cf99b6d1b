//! Type-II maximum likelihood: θ̂ = argmax log p(y | θ) by L-BFGS over the
//! unconstrained parameters, with random restarts.

pub mod lbfgs;

use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{log_marginal_likelihood, Design, HyperParams, ModelSpec, Objective, ParamLayout};
use crate::panel::{PanelDataset, TrainPredSplit};
use crate::par::{par_map, Parallelism};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Total number of initializations; the first is unperturbed.
    pub restarts: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    #[serde(default)]
    pub parallelism: Parallelism,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 3,
            max_iters: 1000,
            tol: 1e-6,
            seed: 0,
            parallelism: Parallelism::Auto,
        }
    }
}

/// Training-row z-scoring of outcomes and covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub y_mean: f64,
    pub y_sd: f64,
    pub x_mean: Vec<f64>,
    pub x_sd: Vec<f64>,
}

fn mean_sd(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count().max(1) as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 0.0 && sd.is_finite() { sd } else { 1.0 })
}

impl Standardizer {
    pub fn from_training(design: &Design, y: &DVector<f64>) -> Self {
        let (y_mean, y_sd) = mean_sd(y.iter().copied());
        let (x_mean, x_sd) = (0..design.p())
            .map(|j| mean_sd((0..design.len()).map(move |i| design.x(i)[j])))
            .unzip();
        Standardizer {
            y_mean,
            y_sd,
            x_mean,
            x_sd,
        }
    }

    pub fn design(&self, design: &Design) -> Design {
        design.map_covariates(|j, v| (v - self.x_mean[j]) / self.x_sd[j])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Variances in outcome units; covariate lengthscales in standardized
    /// covariate units.
    pub theta_hat: HyperParams,
    /// Log marginal likelihood of the centered training outcomes (with
    /// standardized covariates) under `theta_hat`.
    pub lml: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Not serialized, so fitted-parameter files are reproducible.
    #[serde(skip_serializing, default)]
    pub wall_time_s: f64,
    /// Unit-specific share of latent variance, counting every deviation term.
    pub rho: f64,
    /// Time-deviation share `σ_g1² / (σ_μ² + σ_g1²)`.
    pub rho_time: f64,
    pub restart_lml: Vec<Option<f64>>,
    pub standardizer: Standardizer,
}

/// `σ_g² / (σ_μ² + σ_g²)` with `σ_g² = σ_g1² + σ_g2²`.
pub fn intraclass_rho(theta: &HyperParams) -> Result<f64> {
    let g = theta.sigma_g1_2 + theta.sigma_g2_2;
    let den = theta.sigma_mu2 + g;
    if !(den > 0.0) {
        return Err(Error::Config("intraclass correlation undefined: zero total variance".into()));
    }
    Ok(g / den)
}

fn rho_time(theta: &HyperParams) -> f64 {
    let den = theta.sigma_mu2 + theta.sigma_g1_2;
    if den > 0.0 {
        theta.sigma_g1_2 / den
    } else {
        0.0
    }
}

/// Starting point in standardized units.
fn initial_theta(spec: &ModelSpec, design: &Design, y: &DVector<f64>) -> HyperParams {
    let (_, sd) = mean_sd(y.iter().copied());
    let var = sd * sd;
    let (tmin, tmax) = (0..design.len())
        .map(|i| design.time(i))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| (a.min(t), b.max(t)));
    let range = tmax - tmin;
    let groups = design.groups();
    let omega2 = design
        .unit_ids()
        .iter()
        .zip(&groups)
        .map(|(u, g)| {
            let (_, s) = mean_sd(g.iter().map(|&i| y[i]));
            (u.clone(), (0.1 * s * s).max(1e-4))
        })
        .collect();
    HyperParams {
        sigma_mu2: 0.5 * var,
        sigma_g1_2: 0.5 * var,
        sigma_g2_2: if spec.covariate_kernel.is_some() { 0.5 * var } else { 0.0 },
        ell_time: if range > 0.0 { range / 4.0 } else { 1.0 },
        ell_x: vec![1.0; spec.n_ell_x(design.p())],
        ell_shared: spec.has_shared().then_some(1.0),
        omega2,
    }
}

fn scale_variances(theta: &HyperParams, c: f64) -> HyperParams {
    HyperParams {
        sigma_mu2: theta.sigma_mu2 * c,
        sigma_g1_2: theta.sigma_g1_2 * c,
        sigma_g2_2: theta.sigma_g2_2 * c,
        omega2: theta.omega2.iter().map(|(u, w)| (u.clone(), w * c)).collect(),
        ..theta.clone()
    }
}

struct Restart {
    eta: Vec<f64>,
    lml: f64,
    iterations: usize,
    converged: bool,
}

/// Fits hyperparameters on an explicit design and outcome vector.
pub fn fit_design(spec: &ModelSpec, design: &Design, y: &DVector<f64>, opts: &FitOptions) -> Result<FitResult> {
    let clock = Instant::now();
    if design.len() < 2 {
        return Err(Error::Fit(format!("need at least 2 training rows, got {}", design.len())));
    }
    if opts.restarts == 0 {
        return Err(Error::Config("restarts must be at least 1".into()));
    }
    spec.validate(design.p())?;
    let stdz = Standardizer::from_training(design, y);
    let xd = stdz.design(design);
    let ys = y.map(|v| (v - stdz.y_mean) / stdz.y_sd);

    let obj = Objective::new(spec, &xd, &ys)?;
    let layout: &ParamLayout = obj.layout();
    let eta0 = layout.to_unconstrained(&initial_theta(spec, &xd, &ys))?;
    let lopts = lbfgs::LbfgsOptions {
        memory: 10,
        max_iters: opts.max_iters,
        tol: opts.tol,
    };

    let starts: Vec<Vec<f64>> = (0..opts.restarts)
        .map(|r| {
            if r == 0 {
                return eta0.clone();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(r as u64));
            let normal = Normal::new(0.0, 0.5).unwrap();
            eta0.iter().map(|e| e + normal.sample(&mut rng)).collect()
        })
        .collect();

    let runs: Vec<Option<Restart>> = par_map(&starts, opts.parallelism, |_, start| {
        let res = lbfgs::minimize(
            |eta| obj.value_grad(eta).ok().map(|(l, g)| (-l, g.into_iter().map(|v| -v).collect())),
            start.clone(),
            &lopts,
        )?;
        Some(Restart {
            eta: res.x,
            lml: -res.f,
            iterations: res.iterations,
            converged: res.converged,
        })
    });

    let restart_lml: Vec<Option<f64>> = runs.iter().map(|r| r.as_ref().map(|r| r.lml)).collect();
    let best = runs
        .into_iter()
        .flatten()
        .filter(|r| r.lml.is_finite())
        .fold(None::<Restart>, |acc, r| match acc {
            Some(a) if a.lml >= r.lml => Some(a),
            _ => Some(r),
        });
    let Some(best) = best else {
        let theta = layout.from_unconstrained(&eta0);
        return Err(match obj.value(&eta0) {
            Ok(v) if !v.is_finite() => Error::NonFinite {
                theta: format!("{theta:?}"),
            },
            Ok(_) => Error::Fit("every restart failed to improve on a factorizable start".into()),
            Err(e) => Error::Fit(format!("all {} restarts failed: {e}", opts.restarts)),
        });
    };

    let theta_std = layout.from_unconstrained(&best.eta);
    let theta_hat = scale_variances(&theta_std, stdz.y_sd * stdz.y_sd);
    let yc = y.map(|v| v - stdz.y_mean);
    let lml = log_marginal_likelihood(spec, &theta_hat, &xd, &yc)?;
    if !lml.is_finite() {
        return Err(Error::NonFinite {
            theta: format!("{theta_hat:?}"),
        });
    }
    Ok(FitResult {
        rho: intraclass_rho(&theta_hat)?,
        rho_time: rho_time(&theta_hat),
        lml,
        iterations: best.iterations,
        converged: best.converged,
        wall_time_s: clock.elapsed().as_secs_f64(),
        restart_lml,
        theta_hat,
        standardizer: stdz,
    })
}

/// Fits hyperparameters on the training rows of `split`.
pub fn fit(spec: &ModelSpec, data: &PanelDataset, split: &TrainPredSplit, opts: &FitOptions) -> Result<FitResult> {
    let (design, y) = Design::from_rows(data, &split.train_rows)?;
    fit_design(spec, &design, &y, opts)
}
