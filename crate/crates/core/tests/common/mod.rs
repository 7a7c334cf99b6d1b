//! Independent reference implementations and random instance generators.
#![allow(dead_code)]

use exchgp::model::{CovariateKernel, Design, HyperParams, ModelSpec, TimeKernel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct Row {
    pub unit: String,
    pub t: f64,
    pub x: Vec<f64>,
}

fn sqdist(a: &[f64], b: &[f64], dims: &[usize], ell: &dyn Fn(usize) -> f64) -> f64 {
    dims.iter()
        .enumerate()
        .map(|(k, &j)| ((a[j] - b[j]) / ell(k)).powi(2))
        .sum()
}

/// Latent covariance of two rows written straight from the model definition.
pub fn oracle_k(spec: &ModelSpec, th: &HyperParams, a: &Row, b: &Row, p: usize) -> f64 {
    let d = a.t - b.t;
    let kt = match spec.time_kernel {
        TimeKernel::Ou => (-d.abs() / th.ell_time).exp(),
        TimeKernel::Rbf => (-d * d / (2.0 * th.ell_time * th.ell_time)).exp(),
    };
    let shared: Vec<usize> = spec.shared_covariate_dims.clone();
    let ksh = match th.ell_shared {
        Some(l) if !shared.is_empty() => (-0.5 * sqdist(&a.x, &b.x, &shared, &|_| l)).exp(),
        _ => 0.0,
    };
    let mut v = th.sigma_mu2 * (kt + ksh);
    if a.unit == b.unit {
        v += th.sigma_g1_2 * kt;
        let own: Vec<usize> = (0..p).filter(|j| !shared.contains(j)).collect();
        let kx = match spec.covariate_kernel {
            None => 0.0,
            Some(CovariateKernel::Rbf) => (-0.5 * sqdist(&a.x, &b.x, &own, &|_| th.ell_x[0])).exp(),
            Some(CovariateKernel::RbfArd) => (-0.5 * sqdist(&a.x, &b.x, &own, &|k| th.ell_x[k])).exp(),
        };
        v += th.sigma_g2_2 * kx;
    }
    v
}

/// Observation covariance `K + Ω` over `rows`.
pub fn oracle_joint(spec: &ModelSpec, th: &HyperParams, rows: &[Row], p: usize) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, j| {
        let mut v = oracle_k(spec, th, &rows[i], &rows[j], p);
        if i == j {
            v += th.omega2[&rows[i].unit];
        }
        v
    })
}

pub fn design(rows: &[Row], p: usize) -> Design {
    let mut d = Design::new(p);
    for r in rows {
        d.push(&r.unit, r.t, &r.x).unwrap();
    }
    d
}

/// A small random prediction problem.
pub struct Instance {
    pub spec: ModelSpec,
    pub theta: HyperParams,
    pub p: usize,
    pub train: Vec<Row>,
    pub pred: Vec<Row>,
    pub y: DVector<f64>,
}

pub fn random_theta(rng: &mut ChaCha8Rng, spec: &ModelSpec, p: usize, units: &[String]) -> HyperParams {
    HyperParams {
        sigma_mu2: if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.05..3.0) },
        sigma_g1_2: rng.random_range(0.05..2.0),
        sigma_g2_2: if spec.covariate_kernel.is_some() { rng.random_range(0.05..2.0) } else { 0.0 },
        ell_time: rng.random_range(0.3..5.0),
        ell_x: (0..spec.n_ell_x(p)).map(|_| rng.random_range(0.3..3.0)).collect(),
        ell_shared: spec.has_shared().then(|| rng.random_range(0.3..3.0)),
        omega2: units.iter().map(|u| (u.clone(), rng.random_range(0.01..1.0))).collect(),
    }
}

pub fn random_instance(seed: u64, preset: &str) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = ModelSpec::preset(preset).unwrap();
    let m = rng.random_range(1..=4usize);
    let t_max = rng.random_range(2..=6i64);
    let p = if spec.covariate_kernel.is_some() { rng.random_range(1..=3usize) } else { rng.random_range(0..=2usize) };
    if p >= 2 && rng.random_bool(0.3) {
        spec = spec.with_shared_dims(vec![p - 1]);
    }
    let units: Vec<String> = (0..m).map(|i| format!("s{i}")).collect();
    let theta = random_theta(&mut rng, &spec, p, &units);
    let x = |rng: &mut ChaCha8Rng| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();

    let t0 = rng.random_range(1..t_max);
    let mut train = Vec::new();
    let mut pred = Vec::new();
    for (i, u) in units.iter().enumerate() {
        for t in 1..=t_max {
            let keep = i == 0 || rng.random_bool(0.8);
            if !keep {
                continue;
            }
            let row = Row { unit: u.clone(), t: t as f64, x: x(&mut rng) };
            if i == 0 && t > t0 {
                pred.push(row);
            } else {
                train.push(row);
            }
        }
    }
    let y = DVector::from_fn(train.len(), |_, _| rng.random_range(-3.0..3.0));
    Instance { spec, theta, p, train, pred, y }
}

/// Gaussian log density by eigen-decomposition, a third algebraic route.
pub fn eigen_log_density(cov: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let e = cov.clone().symmetric_eigen();
    let proj = e.eigenvectors.tr_mul(y);
    let quad: f64 = proj.iter().zip(e.eigenvalues.iter()).map(|(z, l)| z * z / l).sum();
    let logdet: f64 = e.eigenvalues.iter().map(|l| l.ln()).sum();
    -0.5 * quad - 0.5 * logdet - 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}

pub fn balanced_rows(m: usize, t: usize) -> Vec<Row> {
    let mut rows = Vec::new();
    for i in 0..m {
        for s in 1..=t {
            rows.push(Row { unit: format!("u{i:03}"), t: s as f64, x: vec![] });
        }
    }
    rows
}
