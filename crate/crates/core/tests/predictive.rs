mod common;

use common::{balanced_rows, design, oracle_joint, random_instance, Row};
use exchgp::kernels::KernelSpec;
use exchgp::model::{assemble_cov, log_marginal_likelihood, HyperParams, ModelSpec};
use exchgp::predict::posterior_predictive;
use exchgp::simulate::{brute_force_condition, sample_prior, SimLayout};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn preset() -> impl Strategy<Value = &'static str> {
    prop::sample::select(ModelSpec::PRESETS.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn production_matches_dense_conditioning(seed in any::<u64>(), preset in preset()) {
        let inst = random_instance(seed, preset);
        let g = posterior_predictive(&inst.spec, &inst.theta, &design(&inst.train, inst.p), &inst.y, &design(&inst.pred, inst.p)).unwrap();
        let rows: Vec<Row> = inst.train.iter().chain(&inst.pred).cloned().collect();
        let joint = oracle_joint(&inst.spec, &inst.theta, &rows, inst.p);
        let obs: Vec<usize> = (0..inst.train.len()).collect();
        let tgt: Vec<usize> = (inst.train.len()..rows.len()).collect();
        let (m, c) = brute_force_condition(&joint, &obs, &tgt, &inst.y).unwrap();
        prop_assert!((g.mean - m).amax() <= 1e-8);
        prop_assert!((g.cov - c).amax() <= 1e-8);
    }

    #[test]
    fn predictive_covariance_ignores_outcomes(seed in any::<u64>(), preset in preset(), shift in -5.0f64..5.0) {
        let inst = random_instance(seed, preset);
        let (train, pred) = (design(&inst.train, inst.p), design(&inst.pred, inst.p));
        let a = posterior_predictive(&inst.spec, &inst.theta, &train, &inst.y, &pred).unwrap();
        let y2 = inst.y.map(|v| v * 1.7 + shift);
        let b = posterior_predictive(&inst.spec, &inst.theta, &train, &y2, &pred).unwrap();
        prop_assert_eq!(a.cov, b.cov);
    }

    #[test]
    fn mean_is_linear_in_outcomes(seed in any::<u64>(), preset in preset(), alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
        let inst = random_instance(seed, preset);
        let (train, pred) = (design(&inst.train, inst.p), design(&inst.pred, inst.p));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
        let y2 = DVector::from_fn(inst.y.len(), |_, _| rng.random_range(-3.0..3.0));
        let m = |y: &DVector<f64>| posterior_predictive(&inst.spec, &inst.theta, &train, y, &pred).unwrap().mean;
        let lhs = m(&(&inst.y * alpha + &y2 * beta));
        let rhs = m(&inst.y) * alpha + m(&y2) * beta;
        prop_assert!((lhs - rhs).amax() <= 1e-10);
    }

    #[test]
    fn noise_free_prediction_interpolates(
        seed in any::<u64>(),
        mu in 0.5f64..2.0,
        g1 in 0.5f64..2.0,
        ell in 0.5f64..2.0,
        pick in 0usize..8,
    ) {
        let spec = ModelSpec::preset("ou-time").unwrap();
        let rows = balanced_rows(2, 4);
        let theta = HyperParams {
            sigma_mu2: mu,
            sigma_g1_2: g1,
            sigma_g2_2: 0.0,
            ell_time: ell,
            ell_x: vec![],
            ell_shared: None,
            omega2: [("u000".to_string(), 1e-6), ("u001".to_string(), 1e-6)].into(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = DVector::from_fn(rows.len(), |_, _| rng.random_range(-3.0..3.0));
        let target = &rows[pick];
        let g = posterior_predictive(&spec, &theta, &design(&rows, 0), &y, &design(std::slice::from_ref(target), 0)).unwrap();
        prop_assert!((g.mean[0] - y[pick]).abs() <= 1e-4);
        prop_assert!((g.cov[(0, 0)] - 1e-6).abs() <= 1e-4);
    }

    #[test]
    fn cross_unit_blocks_hold_only_the_common_time_term(seed in any::<u64>(), preset in preset()) {
        let inst = random_instance(seed, preset);
        prop_assume!(!inst.spec.has_shared());
        let rows = &inst.train;
        let k = assemble_cov(&inst.spec, &inst.theta, &design(rows, inst.p)).unwrap();
        let time = match inst.spec.time_kernel {
            exchgp::model::TimeKernel::Ou => KernelSpec::ou(inst.theta.ell_time),
            exchgp::model::TimeKernel::Rbf => KernelSpec::rbf_time(inst.theta.ell_time),
        }
        .unwrap();
        let base = ModelSpec { covariate_kernel: None, ..inst.spec.clone() };
        let k_base = assemble_cov(&base, &HyperParams { sigma_g2_2: 0.0, ell_x: vec![], ..inst.theta.clone() }, &design(rows, inst.p)).unwrap();
        for i in 0..rows.len() {
            for j in 0..rows.len() {
                if rows[i].unit != rows[j].unit {
                    let kt = time.eval(&[rows[i].t], &[rows[j].t]).unwrap();
                    prop_assert_eq!(k[(i, j)], inst.theta.sigma_mu2 * kt);
                    prop_assert_eq!(k[(i, j)], k_base[(i, j)]);
                }
            }
        }
    }
}

fn truth() -> HyperParams {
    HyperParams {
        sigma_mu2: 4.0,
        sigma_g1_2: 1.0,
        sigma_g2_2: 0.0,
        ell_time: 5.0,
        ell_x: vec![],
        ell_shared: None,
        omega2: Default::default(),
    }
}

#[test]
fn prior_samples_have_the_model_covariance() {
    let spec = ModelSpec::preset("rbf-time").unwrap();
    let layout = SimLayout::balanced(2, 2, spec.clone(), truth(), 0.25);
    let draws = 10_000;
    let rows = balanced_rows(2, 2);
    let mut sum = DMatrix::<f64>::zeros(4, 4);
    for s in 0..draws {
        let data = sample_prior(&layout, s).unwrap();
        let v: Vec<f64> = data.units.iter().flat_map(|u| u.outcomes.iter().copied()).collect();
        let v = DVector::from_vec(v);
        sum += &v * v.transpose();
    }
    let emp = sum / draws as f64;
    let exact = oracle_joint(&spec, &layout.theta, &rows, 0);
    for i in 0..4 {
        for j in 0..4 {
            let se = ((exact[(i, i)] * exact[(j, j)] + exact[(i, j)].powi(2)) / draws as f64).sqrt();
            assert!((emp[(i, j)] - exact[(i, j)]).abs() <= 3.0 * se, "({i},{j}) {} vs {}", emp[(i, j)], exact[(i, j)]);
        }
    }
}

#[test]
fn likelihood_prefers_the_generating_parameters() {
    let spec = ModelSpec::preset("rbf-time").unwrap();
    let layout = SimLayout::balanced(5, 10, spec.clone(), truth(), 0.25);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut gap = 0.0;
    for s in 0..100 {
        let data = sample_prior(&layout, 7000 + s).unwrap();
        let mut d = exchgp::model::Design::new(0);
        let mut y = Vec::new();
        for u in &data.units {
            for (t, v) in u.times.iter().zip(&u.outcomes) {
                d.push(&u.id, *t as f64, &[]).unwrap();
                y.push(*v);
            }
        }
        let y = DVector::from_vec(y);
        let mut jitter = |v: f64| v * rng.random_range(-0.7f64..0.7).exp();
        let th = &layout.theta;
        let perturbed = HyperParams {
            sigma_mu2: jitter(th.sigma_mu2),
            sigma_g1_2: jitter(th.sigma_g1_2),
            ell_time: jitter(th.ell_time),
            omega2: th.omega2.iter().map(|(u, w)| (u.clone(), jitter(*w))).collect(),
            ..th.clone()
        };
        gap += log_marginal_likelihood(&spec, th, &d, &y).unwrap() - log_marginal_likelihood(&spec, &perturbed, &d, &y).unwrap();
    }
    assert!(gap / 100.0 > 0.0, "mean gap {}", gap / 100.0);
}
