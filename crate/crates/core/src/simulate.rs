//! Exact draws from the exchangeable prior and dense Gaussian conditioning.
//!
//! The conditioning routines here work on the full joint covariance with a
//! direct LU solve and share no code with the production predictor.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::model::{CovariateKernel, HyperParams, ModelSpec, TimeKernel};
use crate::panel::{PanelDataset, UnitSeries};

#[derive(Clone, Debug, PartialEq)]
pub enum CovariateSource {
    StandardNormal,
    /// `values[unit][row]`, one `p`-vector per observed time.
    Supplied(Vec<Vec<Vec<f64>>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Treatment {
    pub unit: usize,
    pub t0: i64,
    /// Added to every row with `t > t0`.
    pub effect: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimLayout {
    /// Observation times of each unit; units are named `u000`, `u001`, ...
    pub times: Vec<Vec<i64>>,
    pub p: usize,
    pub covariates: CovariateSource,
    pub spec: ModelSpec,
    /// Noise variances are looked up by unit id.
    pub theta: HyperParams,
    pub treatments: Vec<Treatment>,
}

pub fn unit_name(i: usize) -> String {
    format!("u{i:03}")
}

impl SimLayout {
    /// `m` units observed at times `1..=t`, no covariates, common noise.
    pub fn balanced(m: usize, t: i64, spec: ModelSpec, mut theta: HyperParams, omega2: f64) -> Self {
        theta.omega2 = (0..m).map(|i| (unit_name(i), omega2)).collect();
        SimLayout {
            times: vec![(1..=t).collect(); m],
            p: 0,
            covariates: CovariateSource::StandardNormal,
            spec,
            theta,
            treatments: Vec::new(),
        }
    }

    pub fn m(&self) -> usize {
        self.times.len()
    }
}

/// One draw from `N(0, cov)` using a symmetric eigen-factor, which also
/// handles singular PSD matrices.
pub fn mvn_sample<R: Rng>(cov: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    let n = cov.nrows();
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    let eig = cov.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|&l| l < -1e-8 * lmax.max(1.0)) || !lmax.is_finite() {
        return Err(Error::NotPositiveDefinite { jitter: 0.0 });
    }
    let z = DVector::from_fn(n, |_, _| {
        let v: f64 = rng.sample(StandardNormal);
        v
    });
    let scaled = DVector::from_fn(n, |i, _| eig.eigenvalues[i].max(0.0).sqrt() * z[i]);
    Ok(&eig.eigenvectors * scaled)
}

fn kernel_gram(k: &KernelSpec, pts: &[Vec<f64>]) -> DMatrix<f64> {
    let n = pts.len();
    DMatrix::from_fn(n, n, |i, j| k.eval(&pts[i], &pts[j]).unwrap())
}

/// Draws a panel from the prior implied by `layout`.
pub fn sample_prior(layout: &SimLayout, seed: u64) -> Result<PanelDataset> {
    let spec = &layout.spec;
    let th = &layout.theta;
    spec.validate(layout.p)?;
    th.check(spec, layout.p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = layout.m();

    let x: Vec<Vec<Vec<f64>>> = match &layout.covariates {
        CovariateSource::Supplied(v) => {
            if v.len() != m || v.iter().zip(&layout.times).any(|(u, t)| u.len() != t.len()) {
                return Err(Error::Config("supplied covariates do not match the layout".into()));
            }
            v.clone()
        }
        CovariateSource::StandardNormal => layout
            .times
            .iter()
            .map(|ts| {
                ts.iter()
                    .map(|_| (0..layout.p).map(|_| rng.sample(StandardNormal)).collect())
                    .collect()
            })
            .collect(),
    };

    let time_k = match spec.time_kernel {
        TimeKernel::Ou => KernelSpec::ou(th.ell_time)?,
        TimeKernel::Rbf => KernelSpec::rbf_time(th.ell_time)?,
    };
    let shared_dims = &spec.shared_covariate_dims;
    let unit_dims = spec.unit_dims(layout.p);
    let pick = |v: &[f64], d: &[usize]| d.iter().map(|&j| v[j]).collect::<Vec<f64>>();

    // shared process over every distinct (time, shared covariates) input
    let mut keys: Vec<(i64, Vec<f64>)> = Vec::new();
    let mut key_of: Vec<Vec<usize>> = Vec::with_capacity(m);
    for (ts, xs) in layout.times.iter().zip(&x) {
        let mut ks = Vec::with_capacity(ts.len());
        for (&t, xi) in ts.iter().zip(xs) {
            let key = (t, pick(xi, shared_dims));
            let k = match keys.iter().position(|k| *k == key) {
                Some(k) => k,
                None => {
                    keys.push(key);
                    keys.len() - 1
                }
            };
            ks.push(k);
        }
        key_of.push(ks);
    }
    let key_t: Vec<Vec<f64>> = keys.iter().map(|(t, _)| vec![*t as f64]).collect();
    let mut c = kernel_gram(&time_k, &key_t);
    if let (true, Some(l)) = (spec.has_shared(), th.ell_shared) {
        let ks = KernelSpec::rbf_cov(l)?;
        let pts: Vec<Vec<f64>> = keys.iter().map(|(_, v)| v.clone()).collect();
        c += kernel_gram(&ks, &pts);
    }
    let mu = mvn_sample(&(c * th.sigma_mu2), &mut rng)?;

    let unit_k = match spec.covariate_kernel {
        None => None,
        Some(CovariateKernel::Rbf) => Some(KernelSpec::rbf_cov(th.ell_x[0])?),
        Some(CovariateKernel::RbfArd) => Some(KernelSpec::ard(th.ell_x.clone())?),
    };

    let mut units = Vec::with_capacity(m);
    for i in 0..m {
        let id = unit_name(i);
        let ts = &layout.times[i];
        let tp: Vec<Vec<f64>> = ts.iter().map(|&t| vec![t as f64]).collect();
        let g1 = mvn_sample(&(kernel_gram(&time_k, &tp) * th.sigma_g1_2), &mut rng)?;
        let g2 = match &unit_k {
            Some(k) => {
                let pts: Vec<Vec<f64>> = x[i].iter().map(|v| pick(v, &unit_dims)).collect();
                mvn_sample(&(kernel_gram(k, &pts) * th.sigma_g2_2), &mut rng)?
            }
            None => DVector::zeros(ts.len()),
        };
        let w = th.omega(&id)?.sqrt();
        let treat = layout.treatments.iter().find(|t| t.unit == i);
        let outcomes = (0..ts.len())
            .map(|k| {
                let e: f64 = rng.sample(StandardNormal);
                let shift = match treat {
                    Some(tr) if ts[k] > tr.t0 => tr.effect,
                    _ => 0.0,
                };
                mu[key_of[i][k]] + g1[k] + g2[k] + w * e + shift
            })
            .collect();
        units.push(UnitSeries {
            id,
            times: ts.clone(),
            outcomes,
            covariates: x[i].clone(),
            treatment_time: treat.map(|t| t.t0),
        });
    }
    let names = (0..layout.p).map(|j| format!("x{j}")).collect();
    PanelDataset::new(names, units)
}

/// Gaussian conditional of `target` given `obs = y_obs` for a zero-mean
/// joint covariance, via a direct LU solve on the observed block.
pub fn brute_force_condition(
    joint: &DMatrix<f64>,
    obs_idx: &[usize],
    target_idx: &[usize],
    y_obs: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if obs_idx.len() != y_obs.len() {
        return Err(Error::Dimension {
            expected: obs_idx.len(),
            got: y_obs.len(),
        });
    }
    if obs_idx.iter().any(|i| target_idx.contains(i)) {
        return Err(Error::Config("observed and target index sets overlap".into()));
    }
    let soo = joint.select_rows(obs_idx).select_columns(obs_idx);
    let sto = joint.select_rows(target_idx).select_columns(obs_idx);
    let stt = joint.select_rows(target_idx).select_columns(target_idx);
    let lu = soo.lu();
    let w = lu
        .solve(&sto.transpose())
        .ok_or_else(|| Error::Fit("singular observed block".into()))?;
    let a = lu.solve(y_obs).ok_or_else(|| Error::Fit("singular observed block".into()))?;
    Ok((&sto * a, stt - &sto * w))
}

/// `log N(y | 0, cov)` by LU.
pub fn mvn_log_density(cov: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    let lu = cov.clone().lu();
    let det = lu.determinant();
    if !(det > 0.0) {
        return Err(Error::NotPositiveDefinite { jitter: 0.0 });
    }
    let a = lu.solve(y).ok_or(Error::NotPositiveDefinite { jitter: 0.0 })?;
    Ok(-0.5 * y.dot(&a) - 0.5 * det.ln() - 0.5 * y.len() as f64 * (2.0 * PI).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_joint_gives_marginal() {
        let j = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let (m, c) = brute_force_condition(&j, &[0, 2], &[1], &DVector::from_vec(vec![5.0, -1.0])).unwrap();
        assert_eq!(m[0], 0.0);
        assert_eq!(c[(0, 0)], 2.0);
    }

    #[test]
    fn two_unit_instance() {
        // control y = 3 at unit a; unit b at the same time
        let j = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 3.0]);
        let (m, c) = brute_force_condition(&j, &[0], &[1], &DVector::from_element(1, 3.0)).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-15);
        assert!((c[(0, 0)] - 8.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn permuted_indices_agree() {
        let a = DMatrix::from_fn(4, 4, |i, j| (-(i as f64 - j as f64).powi(2) / 3.0).exp()) + DMatrix::identity(4, 4) * 0.1;
        let y = DVector::from_vec(vec![0.3, -1.0]);
        let (m1, c1) = brute_force_condition(&a, &[0, 3], &[1, 2], &y).unwrap();
        let y2 = DVector::from_vec(vec![-1.0, 0.3]);
        let (m2, c2) = brute_force_condition(&a, &[3, 0], &[2, 1], &y2).unwrap();
        assert!((m1[0] - m2[1]).abs() < 1e-14 && (m1[1] - m2[0]).abs() < 1e-14);
        assert!((c1[(0, 1)] - c2[(1, 0)]).abs() < 1e-14 && (c1[(0, 0)] - c2[(1, 1)]).abs() < 1e-14);
        assert!(brute_force_condition(&a, &[0, 1], &[1], &y).is_err());
    }

    #[test]
    fn sample_is_deterministic_and_injects_effects() {
        let spec = ModelSpec::preset("rbf-time").unwrap();
        let theta = HyperParams {
            sigma_mu2: 1.0,
            sigma_g1_2: 0.5,
            sigma_g2_2: 0.0,
            ell_time: 3.0,
            ell_x: vec![],
            ell_shared: None,
            omega2: Default::default(),
        };
        let mut layout = SimLayout::balanced(3, 10, spec, theta, 0.1);
        let base = sample_prior(&layout, 11).unwrap();
        assert_eq!(base, sample_prior(&layout, 11).unwrap());
        assert_ne!(base, sample_prior(&layout, 12).unwrap());
        layout.treatments.push(Treatment { unit: 1, t0: 6, effect: 5.0 });
        let treated = sample_prior(&layout, 11).unwrap();
        let (a, b) = (&base.units[1], &treated.units[1]);
        assert_eq!(b.treatment_time, Some(6));
        for k in 0..10 {
            let d = b.outcomes[k] - a.outcomes[k];
            let want = if a.times[k] > 6 { 5.0 } else { 0.0 };
            assert!((d - want).abs() < 1e-12);
        }
    }

    #[test]
    fn log_density_univariate() {
        let v = mvn_log_density(&DMatrix::from_element(1, 1, 3.0), &DVector::zeros(1)).unwrap();
        assert!((v + 0.5 * (6.0 * PI).ln()).abs() < 1e-15);
    }
}
