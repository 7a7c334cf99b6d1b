//! Posterior-predictive counterfactuals and treatment-effect summaries.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hyperopt::FitResult;
use crate::model::{cross_cov, assemble_cov, Design, HyperParams, ModelSpec, Prepared};
use crate::panel::{PanelDataset, RowRef, TrainPredSplit};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959964;

/// Predictive distribution of untreated outcomes at `rows`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPredictive {
    pub rows: Vec<RowRef>,
    pub mean: DVector<f64>,
    /// Includes the predicted unit's noise on the diagonal.
    pub cov: DMatrix<f64>,
}

impl GaussianPredictive {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn sd(&self, i: usize) -> f64 {
        self.cov[(i, i)].max(0.0).sqrt()
    }
}

/// Conditions the joint Gaussian on the training outcomes.
///
/// `m* = K*ᵀ Σ⁻¹ y`, `V* = K** + Ω* − K*ᵀ Σ⁻¹ K*`.
pub fn posterior_predictive(
    spec: &ModelSpec,
    theta: &HyperParams,
    train: &Design,
    y: &DVector<f64>,
    pred: &Design,
) -> Result<GaussianPredictive> {
    if train.len() != y.len() {
        return Err(Error::Dimension {
            expected: train.len(),
            got: y.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Split("no prediction rows".into()));
    }
    let prep = Prepared::new(spec, train)?;
    let fac = prep.factorize(spec, theta, train.p())?;
    if fac.jitter() > 0.0 {
        log::warn!("training covariance needed jitter {:e} to factorize", fac.jitter());
    }
    let kx = cross_cov(spec, theta, train, pred)?;
    let alpha = fac.solve(y);
    let mean = kx.tr_mul(&alpha);

    let k = pred.len();
    let mut sk = DMatrix::zeros(train.len(), k);
    for j in 0..k {
        sk.set_column(j, &fac.solve(&kx.column(j).into_owned()));
    }
    let mut cov = assemble_cov(spec, theta, pred)? - kx.tr_mul(&sk);
    for i in 0..k {
        cov[(i, i)] += theta.omega(pred.unit_of(i))?;
    }
    let cov = (&cov + cov.transpose()) * 0.5;
    if cov.iter().any(|v| !v.is_finite()) || mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            theta: format!("{theta:?}"),
        });
    }
    let rows = (0..k)
        .map(|i| RowRef::new(pred.unit_of(i), pred.time(i).round() as i64))
        .collect();
    Ok(GaussianPredictive { rows, mean, cov })
}

/// A fitted model bound to its training data.
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub fit: FitResult,
    train: Design,
    y_centered: DVector<f64>,
}

impl FittedModel {
    pub fn new(spec: ModelSpec, fit: FitResult, train: &Design, y: &DVector<f64>) -> Self {
        let stdz = &fit.standardizer;
        FittedModel {
            train: stdz.design(train),
            y_centered: y.map(|v| v - stdz.y_mean),
            spec,
            fit,
        }
    }

    pub fn from_split(spec: ModelSpec, fit: FitResult, data: &PanelDataset, split: &TrainPredSplit) -> Result<Self> {
        let (d, y) = Design::from_rows(data, &split.train_rows)?;
        Ok(Self::new(spec, fit, &d, &y))
    }

    /// Predictive distribution at `rows` in outcome units.
    pub fn predict(&self, pred: &Design) -> Result<GaussianPredictive> {
        let mut out = posterior_predictive(
            &self.spec,
            &self.fit.theta_hat,
            &self.train,
            &self.y_centered,
            &self.fit.standardizer.design(pred),
        )?;
        out.mean.add_scalar_mut(self.fit.standardizer.y_mean);
        Ok(out)
    }

    pub fn predict_rows(&self, data: &PanelDataset, rows: &[RowRef]) -> Result<GaussianPredictive> {
        let (d, _) = Design::from_rows(data, rows)?;
        self.predict(&d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Interval {
    pub estimate: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn gaussian(estimate: f64, var: f64) -> Self {
        let sd = var.max(0.0).sqrt();
        Interval {
            estimate,
            sd,
            lower: estimate - Z95 * sd,
            upper: estimate + Z95 * sd,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointEffect {
    pub time: i64,
    pub observed: f64,
    pub counterfactual: f64,
    pub effect: Interval,
}

/// Effects for one treated unit over its prediction window.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EffectSummary {
    pub unit: String,
    pub per_time: Vec<PointEffect>,
    pub cumulative: Interval,
    pub average: Interval,
    /// Predictive covariance over `per_time`, kept for cross-time aggregation.
    #[serde(skip)]
    pub cov: DMatrix<f64>,
}

fn check_aligned(pred: &GaussianPredictive, y_obs: &DVector<f64>) -> Result<()> {
    if pred.len() != y_obs.len() {
        return Err(Error::Dimension {
            expected: pred.len(),
            got: y_obs.len(),
        });
    }
    Ok(())
}

/// `δ_t = y_t − m*_t` with sd `√V*_tt`.
pub fn pointwise_effects(pred: &GaussianPredictive, y_obs: &DVector<f64>) -> Result<Vec<PointEffect>> {
    check_aligned(pred, y_obs)?;
    Ok((0..pred.len())
        .map(|i| PointEffect {
            time: pred.rows[i].time,
            observed: y_obs[i],
            counterfactual: pred.mean[i],
            effect: Interval::gaussian(y_obs[i] - pred.mean[i], pred.cov[(i, i)]),
        })
        .collect())
}

/// Cumulative `N(Σδ, 1ᵀV*1)` and average (cumulative over `|T1|`).
pub fn aggregate_effects(pred: &GaussianPredictive, y_obs: &DVector<f64>) -> Result<(Interval, Interval)> {
    check_aligned(pred, y_obs)?;
    if pred.is_empty() {
        return Err(Error::Split("no prediction rows".into()));
    }
    let total: f64 = (y_obs - &pred.mean).sum();
    let var = pred.cov.sum();
    let k = pred.len() as f64;
    Ok((Interval::gaussian(total, var), Interval::gaussian(total / k, var / (k * k))))
}

pub fn effect_summary(pred: &GaussianPredictive, y_obs: &DVector<f64>) -> Result<EffectSummary> {
    let per_time = pointwise_effects(pred, y_obs)?;
    let (cumulative, average) = aggregate_effects(pred, y_obs)?;
    let unit = pred.rows.first().map(|r| r.unit.clone()).unwrap_or_default();
    if pred.rows.iter().any(|r| r.unit != unit) {
        return Err(Error::Split("effect summary rows must belong to one unit".into()));
    }
    Ok(EffectSummary {
        unit,
        per_time,
        cumulative,
        average,
        cov: pred.cov.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttPoint {
    pub time: i64,
    pub n: usize,
    pub att: Interval,
}

/// Average effect on the treated by calendar time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttSeries {
    pub per_time: Vec<AttPoint>,
    pub total_cumulative: Interval,
    pub average_weekly: Interval,
}

/// Pools unit effects by calendar time, treating units as independent.
///
/// The cumulative total `Σ_t ATT_t` keeps each unit's within-window
/// covariance: its variance is `Σ_i w_iᵀ V*_i w_i` with `w_it = 1/n_t`.
pub fn att_by_time(units: &[EffectSummary]) -> Result<AttSeries> {
    let mut by_time: BTreeMap<i64, Vec<(usize, usize)>> = BTreeMap::new();
    for (u, s) in units.iter().enumerate() {
        for (k, p) in s.per_time.iter().enumerate() {
            by_time.entry(p.time).or_default().push((u, k));
        }
    }
    if by_time.is_empty() {
        return Err(Error::Split("no unit effects to aggregate".into()));
    }
    let mut per_time = Vec::with_capacity(by_time.len());
    let mut total = 0.0;
    for (&t, members) in &by_time {
        let n = members.len() as f64;
        let mean = members.iter().map(|&(u, k)| units[u].per_time[k].effect.estimate).sum::<f64>() / n;
        let var = members.iter().map(|&(u, k)| units[u].cov[(k, k)]).sum::<f64>() / (n * n);
        total += mean;
        per_time.push(AttPoint {
            time: t,
            n: members.len(),
            att: Interval::gaussian(mean, var),
        });
    }
    let mut total_var = 0.0;
    for s in units {
        let w = DVector::from_iterator(
            s.per_time.len(),
            s.per_time.iter().map(|p| 1.0 / by_time[&p.time].len() as f64),
        );
        total_var += w.dot(&(&s.cov * &w));
    }
    let weeks = per_time.len() as f64;
    Ok(AttSeries {
        per_time,
        total_cumulative: Interval::gaussian(total, total_var),
        average_weekly: Interval::gaussian(total / weeks, total_var / (weeks * weeks)),
    })
}
