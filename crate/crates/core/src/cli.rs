//! Command-line front end.
//!
//! Every option can also come from a JSON `--config` file whose keys are the
//! long flag names with underscores (`max_iters`, `horizon_frac`, ...).
//! Flags given on the command line win over the file.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::harness::{
    choose_fake_time, leave_one_out_validation, staggered_pipeline, FakeTime, Forecaster, GpForecaster, ModelReport,
    PipelineMode, StaggeredConfig,
};
use crate::hyperopt::{fit, FitOptions, FitResult, Standardizer};
use crate::model::{HyperParams, ModelSpec};
use crate::panel::{load_panel, make_split, write_panel, PanelDataset, Schema};
use crate::par::Parallelism;
use crate::predict::{effect_summary, EffectSummary, FittedModel};
use crate::report::{aggregate_rows, att_rows, effect_rows, horizon_rows, model_rows, OutputDir};
use crate::simulate::{sample_prior, CovariateSource, SimLayout, Treatment};

#[derive(Parser, Debug)]
#[command(name = "exchgp", version, about = "Exchangeable GP counterfactuals for panel data")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct GlobalArgs {
    /// JSON file supplying default values for any option.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Column mapping, e.g. `unit=state,time=year,outcome=cigsale,covariates=a|b`.
    #[arg(long, global = true)]
    pub schema: Option<String>,
    /// Comma-separated covariate columns that feed the shared process.
    #[arg(long, global = true)]
    pub shared_cols: Option<String>,
    #[arg(long, global = true)]
    pub restarts: Option<usize>,
    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit on a treated unit's pre-period and report its effects.
    Fit(FitArgs),
    /// Predict with previously fitted parameters.
    Predict(PredictArgs),
    /// Leave-one-unit-out placebo validation.
    Validate(ValidateArgs),
    /// One-unit-at-a-time staggered adoption pipeline.
    Staggered(StaggeredArgs),
    /// Draw a panel from the prior.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub treated: Option<String>,
    /// Last untreated time; defaults to the unit's treatment time.
    #[arg(long)]
    pub t0: Option<i64>,
    #[arg(long)]
    pub horizon: Option<i64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct PredictArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
    /// `theta.json` written by `fit`, or a bare hyperparameter object.
    #[arg(long)]
    pub theta: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidateArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Comma-separated model presets.
    #[arg(long)]
    pub models: Option<String>,
    #[arg(long)]
    pub fake_time: Option<i64>,
    /// Fraction of window points placed after the fake time.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Last time of the validation window; defaults to the earliest treatment time.
    #[arg(long)]
    pub window_end: Option<i64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct StaggeredArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub controls: Option<usize>,
    #[arg(long)]
    pub horizon_frac: Option<f64>,
    #[arg(long)]
    pub validation_frac: Option<f64>,
    #[arg(long)]
    pub unit_sample: Option<usize>,
    /// `validate` or `estimate`.
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub units: Option<usize>,
    #[arg(long)]
    pub times: Option<i64>,
    #[arg(long)]
    pub model: Option<String>,
    /// Covariate columns drawn from N(0, 1).
    #[arg(long)]
    pub covariates: Option<usize>,
    #[arg(long)]
    pub sigma_mu2: Option<f64>,
    #[arg(long)]
    pub sigma_g2: Option<f64>,
    #[arg(long)]
    pub sigma_g2_cov: Option<f64>,
    #[arg(long)]
    pub ell: Option<f64>,
    #[arg(long)]
    pub ell_x: Option<f64>,
    #[arg(long)]
    pub omega2: Option<f64>,
    /// Number of units given a treatment time.
    #[arg(long)]
    pub treated: Option<usize>,
    #[arg(long)]
    pub effect: Option<f64>,
}

/// Fills unset fields of `cli` from `config`.
fn merge<T: Serialize + DeserializeOwned>(cli: &T, config: &Map<String, Value>) -> Result<T> {
    let mut out = config.clone();
    if let Value::Object(m) = serde_json::to_value(cli)? {
        for (k, v) in m {
            if !v.is_null() {
                out.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(out)).map_err(|e| Error::Config(format!("config: {e}")))
}

struct Ctx {
    global: GlobalArgs,
    config: Map<String, Value>,
    started: Instant,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.global.seed.unwrap_or(0)
    }

    fn parallelism(&self) -> Parallelism {
        Parallelism::from_jobs(self.global.jobs)
    }

    fn fit_options(&self) -> Result<FitOptions> {
        let d = FitOptions::default();
        let o = FitOptions {
            restarts: self.global.restarts.unwrap_or(d.restarts),
            max_iters: self.global.max_iters.unwrap_or(d.max_iters),
            tol: self.global.tol.unwrap_or(d.tol),
            seed: self.seed(),
            parallelism: self.parallelism(),
        };
        if o.restarts == 0 || !(o.tol > 0.0) {
            return Err(Error::Config("restarts must be ≥ 1 and tol > 0".into()));
        }
        Ok(o)
    }

    fn output(&self) -> Result<OutputDir> {
        let dir = self
            .global
            .output
            .clone()
            .ok_or_else(|| Error::Config("--output is required".into()))?;
        OutputDir::create(dir)
    }

    fn load(&self, input: &Option<PathBuf>) -> Result<PanelDataset> {
        let path = input.as_ref().ok_or_else(|| Error::Config("--input is required".into()))?;
        let schema = match &self.global.schema {
            Some(s) => Schema::parse_mapping(s)?,
            None => Schema::default(),
        };
        let file = File::open(path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
        load_panel(file, &schema)
    }

    fn spec(&self, name: Option<&str>, data: &PanelDataset) -> Result<ModelSpec> {
        let spec = ModelSpec::preset(name.unwrap_or("ou-time"))?;
        let dims = match &self.global.shared_cols {
            None => Vec::new(),
            Some(cols) => cols
                .split(',')
                .map(str::trim)
                .filter(|c| !c.is_empty())
                .map(|c| {
                    data.covariate_names
                        .iter()
                        .position(|n| n == c)
                        .ok_or_else(|| Error::Config(format!("shared column `{c}` is not a covariate")))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let spec = spec.with_shared_dims(dims);
        spec.validate(data.p())?;
        Ok(spec)
    }

    fn finish(&self, out: OutputDir, command: &str, settings: Value, timings: Value) -> Result<()> {
        let mut config = serde_json::to_value(&self.global)?;
        if let (Value::Object(c), Value::Object(s)) = (&mut config, settings) {
            c.extend(s);
            c.insert("resolved_fit_options".into(), serde_json::to_value(self.fit_options()?)?);
        }
        let mut timings = timings;
        if let Value::Object(t) = &mut timings {
            t.insert("total_s".into(), json!(self.started.elapsed().as_secs_f64()));
        }
        let path = out.finish(command, config, self.seed(), timings)?;
        log::info!("wrote {}", path.display());
        Ok(())
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args(args: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let config = match &cli.global.config {
        None => Map::new(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            match serde_json::from_str(&text).map_err(|e| Error::Config(format!("config: {e}")))? {
                Value::Object(m) => m,
                _ => return Err(Error::Config("config file must hold a JSON object".into())),
            }
        }
    };
    let mut global = merge(&cli.global, &config)?;
    global.config = cli.global.config.clone();
    let ctx = Ctx {
        global,
        config,
        started: Instant::now(),
    };
    match &cli.command {
        Command::Fit(a) => cmd_fit(&ctx, &merge(a, &ctx.config)?),
        Command::Predict(a) => cmd_predict(&ctx, &merge(a, &ctx.config)?),
        Command::Validate(a) => cmd_validate(&ctx, &merge(a, &ctx.config)?),
        Command::Staggered(a) => cmd_staggered(&ctx, &merge(a, &ctx.config)?),
        Command::Simulate(a) => cmd_simulate(&ctx, &merge(a, &ctx.config)?),
    }
}

fn treated_split(data: &PanelDataset, a: &FitArgs) -> Result<crate::panel::TrainPredSplit> {
    let unit = a
        .treated
        .as_deref()
        .ok_or_else(|| Error::Config("--treated is required".into()))?;
    let t0 = match a.t0 {
        Some(t) => t,
        None => data
            .unit(unit)?
            .treatment_time
            .ok_or_else(|| Error::Config(format!("`{unit}` has no treatment time; pass --t0")))?,
    };
    make_split(data, unit, t0, a.horizon)
}

fn write_unit_effects(out: &mut OutputDir, summary: &EffectSummary, extra: Value) -> Result<()> {
    let s = std::slice::from_ref(summary);
    out.write_csv("effects.csv", &effect_rows(s))?;
    out.write_csv("report.csv", &aggregate_rows(s))?;
    let mut report = json!({ "effects": summary });
    if let (Value::Object(r), Value::Object(e)) = (&mut report, extra) {
        r.extend(e);
    }
    out.write_json("report.json", &report)
}

fn observed_for(data: &PanelDataset, split: &crate::panel::TrainPredSplit) -> Result<DVector<f64>> {
    let ys = split
        .pred_rows
        .iter()
        .map(|r| data.row(r).map(|(y, _)| y))
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(ys))
}

fn cmd_fit(ctx: &Ctx, a: &FitArgs) -> Result<()> {
    let data = ctx.load(&a.input)?;
    let spec = ctx.spec(a.model.as_deref(), &data)?;
    let split = treated_split(&data, a)?;
    let f = fit(&spec, &data, &split, &ctx.fit_options()?)?;
    let opt_time = f.wall_time_s;
    let model = FittedModel::from_split(spec.clone(), f, &data, &split)?;
    let pred = model.predict_rows(&data, &split.pred_rows)?;
    let summary = effect_summary(&pred, &observed_for(&data, &split)?)?;

    let mut out = ctx.output()?;
    out.write_json("theta.json", &model.fit)?;
    write_unit_effects(
        &mut out,
        &summary,
        json!({
            "model": spec.name(),
            "rho": model.fit.rho,
            "rho_time": model.fit.rho_time,
            "lml": model.fit.lml,
            "converged": model.fit.converged,
            "t0": split.t0,
            "n_train": split.train_rows.len(),
        }),
    )?;
    ctx.finish(out, "fit", serde_json::to_value(a)?, json!({ "opt_time_s": opt_time }))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ThetaFile {
    Fit(Box<FitResult>),
    Bare(HyperParams),
}

fn cmd_predict(ctx: &Ctx, a: &PredictArgs) -> Result<()> {
    let data = ctx.load(&a.fit.input)?;
    let spec = ctx.spec(a.fit.model.as_deref(), &data)?;
    let split = treated_split(&data, &a.fit)?;
    let path = a.theta.as_ref().ok_or_else(|| Error::Config("--theta is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let fit = match serde_json::from_str::<ThetaFile>(&text).map_err(|e| Error::Config(format!("theta: {e}")))? {
        ThetaFile::Fit(f) => *f,
        ThetaFile::Bare(theta) => {
            theta.check(&spec, data.p())?;
            FitResult {
                rho: crate::hyperopt::intraclass_rho(&theta)?,
                rho_time: theta.sigma_g1_2 / (theta.sigma_mu2 + theta.sigma_g1_2).max(f64::MIN_POSITIVE),
                theta_hat: theta,
                lml: f64::NAN,
                iterations: 0,
                converged: true,
                wall_time_s: 0.0,
                restart_lml: Vec::new(),
                standardizer: Standardizer {
                    y_mean: 0.0,
                    y_sd: 1.0,
                    x_mean: vec![0.0; data.p()],
                    x_sd: vec![1.0; data.p()],
                },
            }
        }
    };
    let model = FittedModel::from_split(spec.clone(), fit, &data, &split)?;
    let pred = model.predict_rows(&data, &split.pred_rows)?;
    let summary = effect_summary(&pred, &observed_for(&data, &split)?)?;
    let mut out = ctx.output()?;
    write_unit_effects(&mut out, &summary, json!({ "model": spec.name(), "t0": split.t0 }))?;
    ctx.finish(out, "predict", serde_json::to_value(a)?, json!({}))
}

fn write_model_reports(out: &mut OutputDir, reports: &[ModelReport]) -> Result<()> {
    out.write_csv("report.csv", &model_rows(reports))?;
    out.write_csv("horizon.csv", &horizon_rows(reports, false))?;
    out.write_csv("time.csv", &horizon_rows(reports, true))?;
    out.write_json("report.json", &reports)
}

fn cmd_validate(ctx: &Ctx, a: &ValidateArgs) -> Result<()> {
    let data = ctx.load(&a.input)?;
    let end = match a.window_end {
        Some(e) => e,
        None => data
            .units
            .iter()
            .filter_map(|u| u.treatment_time)
            .min()
            .unwrap_or_else(|| data.units.iter().filter_map(|u| u.times.last().copied()).max().unwrap_or(0)),
    };
    let window = data.truncate_to(end)?;
    let times: Vec<i64> = window
        .units
        .iter()
        .flat_map(|u| u.times.iter().copied())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let t1 = match (a.fake_time, a.fraction) {
        (Some(t), _) => choose_fake_time(&times, FakeTime::Fixed(t))?,
        (None, f) => choose_fake_time(&times, FakeTime::MatchFraction(f.unwrap_or(1.0 / 3.0)))?,
    };
    log::info!("validation window ends at {end}; fake treatment after {t1}");
    let names = a.models.clone().unwrap_or_else(|| "ou-time".into());
    let opts = ctx.fit_options()?;
    let mut reports = Vec::new();
    let mut opt_times = BTreeMap::new();
    for name in names.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let fc = GpForecaster {
            spec: ctx.spec(Some(name), &window)?,
            opts: opts.clone(),
        };
        let r = leave_one_out_validation(&window, t1, &fc, ctx.parallelism())?;
        opt_times.insert(fc.name(), r.opt_time_s);
        reports.push(r);
    }
    let mut out = ctx.output()?;
    write_model_reports(&mut out, &reports)?;
    let mut settings = serde_json::to_value(a)?;
    settings["resolved_fake_time"] = json!(t1);
    ctx.finish(out, "validate", settings, json!({ "mean_opt_time_s": opt_times }))
}

fn cmd_staggered(ctx: &Ctx, a: &StaggeredArgs) -> Result<()> {
    let data = ctx.load(&a.input)?;
    let spec = ctx.spec(a.model.as_deref(), &data)?;
    let d = StaggeredConfig::default();
    let cfg = StaggeredConfig {
        controls: a.controls.unwrap_or(d.controls),
        horizon_fraction: a.horizon_frac.unwrap_or(d.horizon_fraction),
        validation_fraction: a.validation_frac.unwrap_or(d.validation_fraction),
        unit_sample: a.unit_sample,
        seed: ctx.seed(),
        parallelism: ctx.parallelism(),
    };
    let mode = match a.mode.as_deref().unwrap_or("estimate") {
        "estimate" => PipelineMode::Estimate,
        "validate" => PipelineMode::Validate,
        other => return Err(Error::Config(format!("unknown mode `{other}`"))),
    };
    let mut opts = ctx.fit_options()?;
    // unit runs already saturate the pool
    opts.parallelism = Parallelism::Sequential;
    let fc = GpForecaster { spec, opts };
    let res = staggered_pipeline(&data, &cfg, &fc, mode)?;

    let summaries: Vec<EffectSummary> = res.runs.iter().map(|r| r.summary.clone()).collect();
    let mut out = ctx.output()?;
    out.write_csv("effects.csv", &effect_rows(&summaries))?;
    out.write_csv("att.csv", &att_rows(&res.att))?;
    let units: Vec<Value> = res
        .runs
        .iter()
        .map(|r| {
            json!({
                "unit": r.unit,
                "treatment_time": r.treatment_time,
                "t0": r.t0,
                "n_train": r.n_train,
                "rho": r.outcome.forecast.fit.as_ref().map(|f| f.rho),
                "cumulative": r.summary.cumulative,
                "average": r.summary.average,
            })
        })
        .collect();
    let mut opt_time = 0.0;
    for r in &res.runs {
        opt_time += r.outcome.forecast.fit.as_ref().map(|f| f.wall_time_s).unwrap_or(0.0);
    }
    match &res.report {
        Some(rep) => {
            let reports = std::slice::from_ref(rep);
            out.write_csv("report.csv", &model_rows(reports))?;
            out.write_csv("horizon.csv", &horizon_rows(reports, false))?;
            out.write_csv("time.csv", &horizon_rows(reports, true))?;
        }
        None => out.write_csv("report.csv", &aggregate_rows(&summaries))?,
    }
    out.write_json(
        "report.json",
        &json!({
            "model": fc.name(),
            "mode": mode,
            "att": res.att,
            "units": units,
            "failures": res.failures,
            "validation": res.report,
            "att_note": "units treated as independent across runs",
        }),
    )?;
    let n = res.runs.len().max(1) as f64;
    ctx.finish(out, "staggered", serde_json::to_value(a)?, json!({ "mean_opt_time_s": opt_time / n }))
}

fn cmd_simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<()> {
    let m = a.units.unwrap_or(30);
    let t = a.times.unwrap_or(50);
    let p = a.covariates.unwrap_or(0);
    if m == 0 || t < 1 {
        return Err(Error::Config("--units and --times must be positive".into()));
    }
    let spec = ModelSpec::preset(a.model.as_deref().unwrap_or("rbf-time"))?;
    let theta = HyperParams {
        sigma_mu2: a.sigma_mu2.unwrap_or(4.0),
        sigma_g1_2: a.sigma_g2.unwrap_or(1.0),
        sigma_g2_2: if spec.covariate_kernel.is_some() { a.sigma_g2_cov.unwrap_or(0.5) } else { 0.0 },
        ell_time: a.ell.unwrap_or(5.0),
        ell_x: vec![a.ell_x.unwrap_or(1.0); spec.n_ell_x(p)],
        ell_shared: None,
        omega2: Default::default(),
    };
    let mut layout = SimLayout::balanced(m, t, spec, theta, a.omega2.unwrap_or(0.25));
    layout.p = p;
    layout.covariates = CovariateSource::StandardNormal;
    let k = a.treated.unwrap_or(0).min(m);
    layout.treatments = (0..k)
        .map(|i| Treatment {
            unit: i,
            t0: t / 2 + (i as i64 % 5),
            effect: a.effect.unwrap_or(0.0),
        })
        .collect();
    let data = sample_prior(&layout, ctx.seed())?;
    let mut buf = Vec::new();
    write_panel(&data, &mut buf)?;
    let mut out = ctx.output()?;
    out.write_bytes("panel.csv", &buf)?;
    ctx.finish(out, "simulate", serde_json::to_value(a)?, json!({}))
}
