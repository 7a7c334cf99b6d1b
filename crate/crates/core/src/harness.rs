//! Placebo validation, the staggered-adoption pipeline and accuracy metrics.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hyperopt::{fit, FitOptions, FitResult};
use crate::model::ModelSpec;
use crate::panel::{make_split, subsample_controls, PanelDataset, TrainPredSplit};
use crate::par::{par_map, Parallelism};
use crate::predict::{att_by_time, effect_summary, AttSeries, EffectSummary, FittedModel, GaussianPredictive, Z95};

/// Fraction of failed unit runs above which a batch is reported as failed.
pub const MAX_FAILURE_RATE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FakeTime {
    /// Leave at least this fraction of the points after the fake time.
    MatchFraction(f64),
    Fixed(i64),
}

/// Picks the placebo treatment time inside `pre_times`.
pub fn choose_fake_time(pre_times: &[i64], mode: FakeTime) -> Result<i64> {
    let mut ts = pre_times.to_vec();
    ts.sort_unstable();
    ts.dedup();
    let n = ts.len();
    if n < 3 {
        return Err(Error::Split(format!("need at least 3 pre-period points, got {n}")));
    }
    match mode {
        FakeTime::MatchFraction(f) => {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("fraction {f} outside (0, 1)")));
            }
            let need_post = ((f * n as f64 - 1e-9).ceil() as usize).max(1);
            if need_post >= n {
                return Err(Error::Split(format!("fraction {f} leaves no pre-period points")));
            }
            Ok(ts[n - need_post - 1])
        }
        FakeTime::Fixed(t1) => {
            if t1 < ts[0] || t1 >= ts[n - 1] {
                return Err(Error::Split(format!(
                    "fake time {t1} must leave points on both sides of [{}, {}]",
                    ts[0],
                    ts[n - 1]
                )));
            }
            Ok(t1)
        }
    }
}

/// Last predicted time for a unit whose last untreated time is `t0`:
/// `t0 − 1 + ⌊fraction · #{pre times before t0}⌋`.
pub fn horizon_end(pre_times: &[i64], t0: i64, fraction: f64) -> Result<i64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("horizon fraction {fraction} outside (0, 1]")));
    }
    let before = pre_times.iter().filter(|&&t| t < t0).count();
    let cap = (fraction * before as f64 + 1e-9).floor() as i64;
    let end = t0 - 1 + cap;
    if end <= t0 {
        return Err(Error::Split(format!(
            "horizon cap {cap} leaves no prediction window after {t0}"
        )));
    }
    Ok(end)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub mape: f64,
    /// Points left out of MAPE because the observed value was zero.
    pub mape_excluded: usize,
    pub rmse: f64,
    pub bias: f64,
    pub coverage: f64,
    pub pi_width: f64,
}

/// Pooled accuracy of predictive means and 95% intervals.
pub fn score(preds: &[GaussianPredictive], observed: &[DVector<f64>]) -> Result<Metrics> {
    if preds.len() != observed.len() {
        return Err(Error::Dimension {
            expected: preds.len(),
            got: observed.len(),
        });
    }
    let mut pts = Vec::new();
    for (p, y) in preds.iter().zip(observed) {
        if p.len() != y.len() {
            return Err(Error::Dimension {
                expected: p.len(),
                got: y.len(),
            });
        }
        pts.extend((0..p.len()).map(|i| (p.mean[i], p.sd(i), y[i])));
    }
    Ok(metrics(&pts))
}

/// `(mean, sd, observed)` triples.
fn metrics(pts: &[(f64, f64, f64)]) -> Metrics {
    let n = pts.len();
    if n == 0 {
        return Metrics::default();
    }
    let nf = n as f64;
    let mut ape = Vec::new();
    let (mut se, mut err, mut cov, mut width) = (0.0, 0.0, 0usize, 0.0);
    for &(m, sd, y) in pts {
        let e = m - y;
        se += e * e;
        err += e;
        if (y - m).abs() <= Z95 * sd {
            cov += 1;
        }
        width += 2.0 * Z95 * sd;
        if y != 0.0 {
            ape.push((e / y).abs());
        }
    }
    Metrics {
        n,
        mape: if ape.is_empty() { f64::NAN } else { ape.iter().sum::<f64>() / ape.len() as f64 },
        mape_excluded: n - ape.len(),
        rmse: (se / nf).sqrt(),
        bias: err / nf,
        coverage: cov as f64 / nf,
        pi_width: width / nf,
    }
}

pub struct Forecast {
    pub pred: GaussianPredictive,
    pub fit: Option<FitResult>,
}

/// Anything that maps a train/predict split to a predictive distribution.
pub trait Forecaster: Sync {
    fn name(&self) -> String;
    fn forecast(&self, data: &PanelDataset, split: &TrainPredSplit) -> Result<Forecast>;
}

/// Fit-then-predict with an exchangeable GP.
#[derive(Clone, Debug)]
pub struct GpForecaster {
    pub spec: ModelSpec,
    pub opts: FitOptions,
}

impl Forecaster for GpForecaster {
    fn name(&self) -> String {
        self.spec.name()
    }

    fn forecast(&self, data: &PanelDataset, split: &TrainPredSplit) -> Result<Forecast> {
        let f = fit(&self.spec, data, split, &self.opts)?;
        let model = FittedModel::from_split(self.spec.clone(), f, data, split)?;
        let pred = model.predict_rows(data, &split.pred_rows)?;
        Ok(Forecast {
            pred,
            fit: Some(model.fit),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub unit: String,
    pub time: i64,
    /// Steps past the (fake) treatment time.
    pub h: i64,
    pub observed: f64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub key: i64,
    pub n: usize,
    pub rmse: f64,
    pub bias: f64,
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub unit: String,
    pub error: String,
}

/// Accuracy of one model over a set of unit runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub rho: Option<f64>,
    pub rho_time: Option<f64>,
    /// MAPE, RMSE and bias average the per-unit values; coverage and
    /// interval width pool every prediction.
    pub metrics: Metrics,
    pub n_units: usize,
    pub failures: Vec<Failure>,
    pub per_horizon: Vec<BreakdownRow>,
    pub per_time: Vec<BreakdownRow>,
    pub predictions: Vec<PredictionRecord>,
    /// Mean optimizer wall time; not serialized so reports are reproducible.
    #[serde(skip)]
    pub opt_time_s: f64,
}

pub struct UnitOutcome {
    pub unit: String,
    pub t0: i64,
    pub forecast: Forecast,
    pub observed: DVector<f64>,
}

fn breakdown(records: &[PredictionRecord], key: impl Fn(&PredictionRecord) -> i64) -> Vec<BreakdownRow> {
    let mut groups: BTreeMap<i64, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for r in records {
        groups.entry(key(r)).or_default().push((r.mean, r.sd, r.observed));
    }
    groups
        .into_iter()
        .map(|(k, pts)| {
            let m = metrics(&pts);
            BreakdownRow {
                key: k,
                n: m.n,
                rmse: m.rmse,
                bias: m.bias,
                coverage: m.coverage,
            }
        })
        .collect()
}

fn mean_of(v: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = v.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn build_report(model: String, runs: &[UnitOutcome], failures: Vec<Failure>) -> ModelReport {
    let mut records = Vec::new();
    let mut per_unit = Vec::new();
    for run in runs {
        let p = &run.forecast.pred;
        let pts: Vec<(f64, f64, f64)> = (0..p.len()).map(|i| (p.mean[i], p.sd(i), run.observed[i])).collect();
        per_unit.push(metrics(&pts));
        for (i, row) in p.rows.iter().enumerate() {
            records.push(PredictionRecord {
                unit: row.unit.clone(),
                time: row.time,
                h: row.time - run.t0,
                observed: run.observed[i],
                mean: p.mean[i],
                sd: p.sd(i),
            });
        }
    }
    let pooled = metrics(&records.iter().map(|r| (r.mean, r.sd, r.observed)).collect::<Vec<_>>());
    let metrics = Metrics {
        mape: mean_of(per_unit.iter().map(|m| m.mape).filter(|v| v.is_finite())).unwrap_or(f64::NAN),
        rmse: mean_of(per_unit.iter().map(|m| m.rmse)).unwrap_or(f64::NAN),
        bias: mean_of(per_unit.iter().map(|m| m.bias)).unwrap_or(f64::NAN),
        ..pooled
    };
    let fits = || runs.iter().filter_map(|r| r.forecast.fit.as_ref());
    ModelReport {
        model,
        rho: mean_of(fits().map(|f| f.rho)),
        rho_time: mean_of(fits().map(|f| f.rho_time)),
        metrics,
        n_units: runs.len(),
        failures,
        per_horizon: breakdown(&records, |r| r.h),
        per_time: breakdown(&records, |r| r.time),
        predictions: records,
        opt_time_s: mean_of(fits().map(|f| f.wall_time_s)).unwrap_or(0.0),
    }
}

fn observed(data: &PanelDataset, split: &TrainPredSplit) -> Result<DVector<f64>> {
    let ys = split
        .pred_rows
        .iter()
        .map(|r| data.row(r).map(|(y, _)| y))
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(ys))
}

fn run_split(data: &PanelDataset, split: TrainPredSplit, forecaster: &dyn Forecaster) -> Result<UnitOutcome> {
    let forecast = forecaster.forecast(data, &split)?;
    Ok(UnitOutcome {
        unit: split.treated_unit.clone(),
        t0: split.t0,
        observed: observed(data, &split)?,
        forecast,
    })
}

fn collect(results: Vec<(String, Result<UnitOutcome>)>) -> Result<(Vec<UnitOutcome>, Vec<Failure>)> {
    let total = results.len();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (unit, r) in results {
        match r {
            Ok(o) => ok.push(o),
            Err(e) => {
                log::warn!("run for `{unit}` failed: {e}");
                failures.push(Failure {
                    unit,
                    error: e.to_string(),
                });
            }
        }
    }
    if ok.is_empty() {
        return Err(Error::Fit(format!("all {total} unit runs failed")));
    }
    Ok((ok, failures))
}

/// Each unit in turn is pseudo-treated at `t1`, fitted on every other unit's
/// window plus its own rows up to `t1`, and scored on the rest of its window.
pub fn leave_one_out_validation(
    data: &PanelDataset,
    t1: i64,
    forecaster: &dyn Forecaster,
    parallelism: Parallelism,
) -> Result<ModelReport> {
    if let Some(u) = data.units.iter().find(|u| u.has_treated_rows()) {
        return Err(Error::Split(format!(
            "unit `{}` is treated inside the validation window",
            u.id
        )));
    }
    let ids: Vec<String> = data.units.iter().map(|u| u.id.clone()).collect();
    let results = par_map(&ids, parallelism, |_, id| {
        let r = make_split(data, id, t1, None).and_then(|s| run_split(data, s, forecaster));
        (id.clone(), r)
    });
    let (runs, failures) = collect(results)?;
    Ok(build_report(forecaster.name(), &runs, failures))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineMode {
    Validate,
    Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaggeredConfig {
    /// Controls drawn per treated unit.
    pub controls: usize,
    pub horizon_fraction: f64,
    pub validation_fraction: f64,
    pub unit_sample: Option<usize>,
    pub seed: u64,
    #[serde(default)]
    pub parallelism: Parallelism,
}

impl Default for StaggeredConfig {
    fn default() -> Self {
        StaggeredConfig {
            controls: 20,
            horizon_fraction: 0.5,
            validation_fraction: 1.0 / 3.0,
            unit_sample: None,
            seed: 0,
            parallelism: Parallelism::Auto,
        }
    }
}

impl StaggeredConfig {
    pub fn validate(&self) -> Result<()> {
        if self.controls == 0 {
            return Err(Error::Config("controls must be at least 1".into()));
        }
        if !(self.horizon_fraction > 0.0 && self.horizon_fraction <= 1.0) {
            return Err(Error::Config("horizon fraction must be in (0, 1]".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation fraction must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Seed for one unit's control draw, independent of the other units.
pub fn unit_seed(seed: u64, unit: &str) -> u64 {
    let h = Sha256::digest(unit.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&h[..8]);
    seed ^ u64::from_le_bytes(b)
}

pub struct UnitRun {
    pub unit: String,
    pub treatment_time: i64,
    /// Time the predictions condition on (fake time in validate mode).
    pub t0: i64,
    pub n_train: usize,
    pub summary: EffectSummary,
    pub outcome: UnitOutcome,
}

pub struct StaggeredResult {
    pub runs: Vec<UnitRun>,
    pub failures: Vec<Failure>,
    pub att: AttSeries,
    /// Validate mode only.
    pub report: Option<ModelReport>,
}

fn staggered_unit(
    data: &PanelDataset,
    id: &str,
    cfg: &StaggeredConfig,
    forecaster: &dyn Forecaster,
    mode: PipelineMode,
) -> Result<UnitRun> {
    let unit = data.unit(id)?;
    let tt = unit
        .treatment_time
        .ok_or_else(|| Error::Split(format!("`{id}` is not treated")))?;
    let sub = subsample_controls(data, id, cfg.controls, unit_seed(cfg.seed, id))?;
    let pre = unit.pre_times();
    let split = match mode {
        PipelineMode::Validate => {
            let t1 = choose_fake_time(&pre, FakeTime::MatchFraction(cfg.validation_fraction))?;
            make_split(&sub, id, t1, Some(tt - t1))?
        }
        PipelineMode::Estimate => {
            let end = horizon_end(&pre, tt, cfg.horizon_fraction)?;
            make_split(&sub, id, tt, Some(end - tt))?
        }
    };
    let n_train = split.train_rows.len();
    let t0 = split.t0;
    let outcome = run_split(&sub, split, forecaster)?;
    let summary = effect_summary(&outcome.forecast.pred, &outcome.observed)?;
    Ok(UnitRun {
        unit: id.to_string(),
        treatment_time: tt,
        t0,
        n_train,
        summary,
        outcome,
    })
}

/// One-unit-at-a-time pipeline over the treated units of a staggered panel.
pub fn staggered_pipeline(
    data: &PanelDataset,
    cfg: &StaggeredConfig,
    forecaster: &dyn Forecaster,
    mode: PipelineMode,
) -> Result<StaggeredResult> {
    cfg.validate()?;
    let pool = data.never_treated().count();
    if pool < cfg.controls {
        return Err(Error::PoolTooSmall {
            requested: cfg.controls,
            available: pool,
        });
    }
    let mut treated: Vec<String> = data
        .units
        .iter()
        .filter(|u| match mode {
            PipelineMode::Estimate => u.has_treated_rows(),
            PipelineMode::Validate => u.treatment_time.is_some(),
        })
        .map(|u| u.id.clone())
        .collect();
    if treated.is_empty() {
        return Err(Error::Split("no treated units".into()));
    }
    if let Some(k) = cfg.unit_sample.filter(|&k| k < treated.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx = index::sample(&mut rng, treated.len(), k).into_vec();
        idx.sort_unstable();
        treated = idx.into_iter().map(|i| treated[i].clone()).collect();
    }

    let results = par_map(&treated, cfg.parallelism, |_, id| {
        (id.clone(), staggered_unit(data, id, cfg, forecaster, mode))
    });
    let attempted = results.len();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (unit, r) in results {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => {
                log::warn!("staggered run for `{unit}` failed: {e}");
                failures.push(Failure {
                    unit,
                    error: e.to_string(),
                });
            }
        }
    }
    if failures.len() as f64 > MAX_FAILURE_RATE * attempted as f64 {
        return Err(Error::Fit(format!(
            "{} of {attempted} unit runs failed (first: {}: {})",
            failures.len(),
            failures[0].unit,
            failures[0].error
        )));
    }
    let summaries: Vec<EffectSummary> = runs.iter().map(|r| r.summary.clone()).collect();
    let att = att_by_time(&summaries)?;
    let report = (mode == PipelineMode::Validate).then(|| {
        let outcomes: Vec<UnitOutcome> = runs
            .iter()
            .map(|r| UnitOutcome {
                unit: r.unit.clone(),
                t0: r.t0,
                forecast: Forecast {
                    pred: r.outcome.forecast.pred.clone(),
                    fit: r.outcome.forecast.fit.clone(),
                },
                observed: r.outcome.observed.clone(),
            })
            .collect();
        build_report(forecaster.name(), &outcomes, failures.clone())
    });
    Ok(StaggeredResult {
        runs,
        failures,
        att,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{RowRef, UnitSeries};
    use nalgebra::DMatrix;

    #[test]
    fn fake_time_examples() {
        let years: Vec<i64> = (1970..=1988).collect();
        assert_eq!(choose_fake_time(&years, FakeTime::MatchFraction(11.0 / 30.0)).unwrap(), 1981);
        let weeks: Vec<i64> = (1..=30).collect();
        assert_eq!(choose_fake_time(&weeks, FakeTime::MatchFraction(1.0 / 3.0)).unwrap(), 20);
        assert_eq!(choose_fake_time(&weeks, FakeTime::MatchFraction(1e-9)).unwrap(), 29);
        assert!(choose_fake_time(&weeks, FakeTime::MatchFraction(0.999)).is_err());
        assert!(choose_fake_time(&[1, 2], FakeTime::MatchFraction(0.5)).is_err());
        assert_eq!(choose_fake_time(&weeks, FakeTime::Fixed(5)).unwrap(), 5);
        assert!(choose_fake_time(&weeks, FakeTime::Fixed(30)).is_err());
    }

    #[test]
    fn horizon_examples() {
        let pre: Vec<i64> = (1..=21).collect();
        assert_eq!(horizon_end(&pre, 21, 0.5).unwrap(), 30);
        assert!(horizon_end(&[1, 2], 2, 0.5).is_err());
    }

    fn gp(mean: &[f64], sd: &[f64]) -> GaussianPredictive {
        GaussianPredictive {
            rows: (0..mean.len()).map(|i| RowRef::new("a", i as i64)).collect(),
            mean: DVector::from_row_slice(mean),
            cov: DMatrix::from_diagonal(&DVector::from_iterator(sd.len(), sd.iter().map(|s| s * s))),
        }
    }

    #[test]
    fn score_examples() {
        let m = score(&[gp(&[1.0, 2.0], &[0.1, 0.1])], &[DVector::from_vec(vec![1.0, 2.0])]).unwrap();
        assert_eq!((m.mape, m.rmse, m.bias, m.coverage), (0.0, 0.0, 0.0, 1.0));
        let m = score(&[gp(&[2.0, 2.0], &[0.0, 0.0])], &[DVector::from_vec(vec![1.0, 4.0])]).unwrap();
        assert!((m.bias + 0.5).abs() < 1e-15);
        assert!((m.rmse - 2.5f64.sqrt()).abs() < 1e-15);
        assert!((m.mape - 0.75).abs() < 1e-15);
        assert_eq!(m.coverage, 0.0);
        let m = score(&[gp(&[1.0], &[1.0])], &[DVector::from_vec(vec![0.0])]).unwrap();
        assert_eq!(m.mape_excluded, 1);
        assert!((m.pi_width - 2.0 * Z95).abs() < 1e-15);
    }

    struct Perfect;

    impl Forecaster for Perfect {
        fn name(&self) -> String {
            "oracle".into()
        }

        fn forecast(&self, data: &PanelDataset, split: &TrainPredSplit) -> Result<Forecast> {
            let y = observed(data, split)?;
            Ok(Forecast {
                pred: GaussianPredictive {
                    rows: split.pred_rows.clone(),
                    cov: DMatrix::identity(y.len(), y.len()) * 0.01,
                    mean: y,
                },
                fit: None,
            })
        }
    }

    fn panel(m: usize, t: i64, treated: &[(usize, i64)]) -> PanelDataset {
        let units = (0..m)
            .map(|i| UnitSeries {
                id: format!("u{i:02}"),
                times: (1..=t).collect(),
                outcomes: (1..=t).map(|s| 1.0 + (i as f64) + (s as f64) * 0.1).collect(),
                covariates: vec![vec![]; t as usize],
                treatment_time: treated.iter().find(|(u, _)| *u == i).map(|(_, t0)| *t0),
            })
            .collect();
        PanelDataset::new(vec![], units).unwrap()
    }

    #[test]
    fn loo_counts_with_stub() {
        let data = panel(2, 6, &[]);
        let r = leave_one_out_validation(&data, 4, &Perfect, Parallelism::Sequential).unwrap();
        assert_eq!(r.n_units, 2);
        assert_eq!(r.metrics.n, 4);
        assert_eq!((r.metrics.mape, r.metrics.rmse, r.metrics.bias, r.metrics.coverage), (0.0, 0.0, 0.0, 1.0));
        assert_eq!(r.per_time.iter().map(|x| x.n).sum::<usize>(), 4);
        assert_eq!(r.per_horizon.iter().map(|x| x.key).collect::<Vec<_>>(), vec![1, 2]);
        assert!(leave_one_out_validation(&panel(3, 6, &[(0, 3)]), 2, &Perfect, Parallelism::Sequential).is_err());
    }

    #[test]
    fn staggered_with_stub() {
        let data = panel(12, 40, &[(0, 21), (1, 30), (2, 25)]);
        let cfg = StaggeredConfig {
            controls: 5,
            parallelism: Parallelism::Sequential,
            ..Default::default()
        };
        let est = staggered_pipeline(&data, &cfg, &Perfect, PipelineMode::Estimate).unwrap();
        assert_eq!(est.runs.len(), 3);
        let r0 = &est.runs[0];
        assert_eq!(r0.summary.per_time.first().unwrap().time, 22);
        assert_eq!(r0.summary.per_time.last().unwrap().time, 30);
        assert_eq!(r0.n_train, 21 + 5 * 40);
        assert!(est.report.is_none());

        let val = staggered_pipeline(&data, &cfg, &Perfect, PipelineMode::Validate).unwrap();
        let r1 = val.runs.iter().find(|r| r.unit == "u01").unwrap();
        assert_eq!(r1.t0, 20);
        assert_eq!(r1.summary.per_time.last().unwrap().time, 30);
        assert!(val.att.total_cumulative.contains(0.0));
        assert_eq!(val.report.unwrap().metrics.coverage, 1.0);

        let par = staggered_pipeline(
            &data,
            &StaggeredConfig { parallelism: Parallelism::Parallel(3), ..cfg.clone() },
            &Perfect,
            PipelineMode::Validate,
        )
        .unwrap();
        assert_eq!(par.att, val.att);

        let sampled = StaggeredConfig { unit_sample: Some(2), ..cfg };
        assert_eq!(staggered_pipeline(&data, &sampled, &Perfect, PipelineMode::Estimate).unwrap().runs.len(), 2);
    }

    #[test]
    fn unit_seed_is_stable_and_distinct() {
        assert_eq!(unit_seed(7, "CA"), unit_seed(7, "CA"));
        assert_ne!(unit_seed(7, "CA"), unit_seed(7, "NV"));
        assert_eq!(unit_seed(0, "x") ^ 7, unit_seed(7, "x"));
    }
}
