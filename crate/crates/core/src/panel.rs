//! Long-format panel data: loading, validation, train/prediction splits and
//! control subsampling.
//!
//! A panel is a set of units, each observed at strictly increasing integer
//! times. A unit may carry a treatment time `T0`; rows with `t > T0` are
//! treated, rows with `t <= T0` are not.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitSeries {
    pub id: String,
    pub times: Vec<i64>,
    pub outcomes: Vec<f64>,
    /// One covariate row per time, each of length `p`.
    pub covariates: Vec<Vec<f64>>,
    pub treatment_time: Option<i64>,
}

impl UnitSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `w_it`: true iff the unit is treated and `t > T0`.
    pub fn is_treated_at(&self, t: i64) -> bool {
        matches!(self.treatment_time, Some(t0) if t > t0)
    }

    /// True when at least one observed row is treated.
    pub fn has_treated_rows(&self) -> bool {
        self.times.last().is_some_and(|&t| self.is_treated_at(t))
    }

    pub fn position(&self, t: i64) -> Option<usize> {
        self.times.binary_search(&t).ok()
    }

    /// Times up to and including `T0` (all times when never treated).
    pub fn pre_times(&self) -> Vec<i64> {
        self.times
            .iter()
            .copied()
            .filter(|&t| !self.is_treated_at(t))
            .collect()
    }
}

/// Validated panel. Units are sorted by id, rows within a unit by time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub covariate_names: Vec<String>,
    pub units: Vec<UnitSeries>,
}

/// Column-name mapping for CSV ingestion.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Schema {
    pub unit: String,
    pub time: String,
    pub outcome: String,
    pub treatment_time: String,
    /// Covariate columns in order. `None` takes every other column.
    pub covariates: Option<Vec<String>>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            unit: "unit".into(),
            time: "time".into(),
            outcome: "outcome".into(),
            treatment_time: "treatment_time".into(),
            covariates: None,
        }
    }
}

impl Schema {
    /// Parses `key=column` pairs separated by commas, e.g.
    /// `unit=state,time=year,outcome=cigsale`. Covariates are given as
    /// `covariates=a|b|c`.
    pub fn parse_mapping(spec: &str) -> Result<Schema> {
        let mut schema = Schema::default();
        for pair in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("schema entry `{pair}` is not key=column")))?;
            let value = value.trim().to_string();
            match key.trim() {
                "unit" => schema.unit = value,
                "time" => schema.time = value,
                "outcome" => schema.outcome = value,
                "treatment_time" => schema.treatment_time = value,
                "covariates" => {
                    schema.covariates = Some(
                        value
                            .split('|')
                            .map(str::trim)
                            .filter(|s| !s.is_empty())
                            .map(String::from)
                            .collect(),
                    )
                }
                other => return Err(Error::Config(format!("unknown schema key `{other}`"))),
            }
        }
        Ok(schema)
    }
}

/// A (unit, time) reference into a panel.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowRef {
    pub unit: String,
    pub time: i64,
}

impl RowRef {
    pub fn new(unit: impl Into<String>, time: i64) -> Self {
        RowRef {
            unit: unit.into(),
            time,
        }
    }
}

/// Stacked training rows (controls plus the treated unit's pre-period) and
/// the treated unit's prediction targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPredSplit {
    pub treated_unit: String,
    pub t0: i64,
    pub train_rows: Vec<RowRef>,
    pub pred_rows: Vec<RowRef>,
}

impl PanelDataset {
    /// Builds a dataset from unit series, sorting and validating them.
    pub fn new(covariate_names: Vec<String>, mut units: Vec<UnitSeries>) -> Result<Self> {
        units.sort_by(|a, b| a.id.cmp(&b.id));
        for w in units.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::InvalidUnit {
                    unit: w[0].id.clone(),
                    reason: "appears more than once".into(),
                });
            }
        }
        let p = covariate_names.len();
        for u in &mut units {
            if u.outcomes.len() != u.times.len() || u.covariates.len() != u.times.len() {
                return Err(Error::InvalidUnit {
                    unit: u.id.clone(),
                    reason: "times, outcomes and covariates differ in length".into(),
                });
            }
            if u.times.is_empty() {
                return Err(Error::InvalidUnit {
                    unit: u.id.clone(),
                    reason: "no observations".into(),
                });
            }
            if let Some(row) = u.covariates.iter().find(|r| r.len() != p) {
                return Err(Error::Dimension {
                    expected: p,
                    got: row.len(),
                });
            }
            let mut order: Vec<usize> = (0..u.times.len()).collect();
            order.sort_by_key(|&i| u.times[i]);
            u.times = order.iter().map(|&i| u.times[i]).collect();
            u.outcomes = order.iter().map(|&i| u.outcomes[i]).collect();
            u.covariates = order.iter().map(|&i| u.covariates[i].clone()).collect();
            if let Some(w) = u.times.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::DuplicateRow {
                    unit: u.id.clone(),
                    time: w[0],
                });
            }
            if let Some(t0) = u.treatment_time {
                let (lo, hi) = (u.times[0], *u.times.last().unwrap());
                if t0 < lo || t0 > hi {
                    return Err(Error::InvalidUnit {
                        unit: u.id.clone(),
                        reason: format!("treatment time {t0} outside observed range [{lo}, {hi}]"),
                    });
                }
            }
            if u.outcomes.iter().any(|y| !y.is_finite()) {
                return Err(Error::InvalidUnit {
                    unit: u.id.clone(),
                    reason: "non-finite outcome".into(),
                });
            }
        }
        Ok(PanelDataset {
            covariate_names,
            units,
        })
    }

    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn m(&self) -> usize {
        self.units.len()
    }

    pub fn unit_index(&self, id: &str) -> Option<usize> {
        self.units.binary_search_by(|u| u.id.as_str().cmp(id)).ok()
    }

    pub fn unit(&self, id: &str) -> Result<&UnitSeries> {
        self.unit_index(id)
            .map(|i| &self.units[i])
            .ok_or_else(|| Error::UnknownUnit(id.to_string()))
    }

    /// Looks up the outcome and covariates of a row.
    pub fn row(&self, r: &RowRef) -> Result<(f64, &[f64])> {
        let u = self.unit(&r.unit)?;
        let pos = u.position(r.time).ok_or_else(|| {
            Error::Split(format!("unit `{}` has no observation at {}", r.unit, r.time))
        })?;
        Ok((u.outcomes[pos], &u.covariates[pos]))
    }

    pub fn never_treated(&self) -> impl Iterator<Item = &UnitSeries> {
        self.units.iter().filter(|u| u.treatment_time.is_none())
    }

    /// Restricts every unit to times `<= last`, dropping units left empty.
    /// Treatment times at or beyond `last` are kept (the unit is then
    /// untreated throughout the window).
    pub fn truncate_to(&self, last: i64) -> Result<PanelDataset> {
        let units = self
            .units
            .iter()
            .filter_map(|u| {
                let keep = u.times.partition_point(|&t| t <= last);
                (keep > 0).then(|| UnitSeries {
                    id: u.id.clone(),
                    times: u.times[..keep].to_vec(),
                    outcomes: u.outcomes[..keep].to_vec(),
                    covariates: u.covariates[..keep].to_vec(),
                    treatment_time: u.treatment_time.map(|t0| t0.min(u.times[keep - 1])),
                })
            })
            .collect();
        PanelDataset::new(self.covariate_names.clone(), units)
    }

    /// Number of rows across all units.
    pub fn n_rows(&self) -> usize {
        self.units.iter().map(UnitSeries::len).sum()
    }
}

/// Reads a long-format CSV panel.
pub fn load_panel<R: Read>(source: R, schema: &Schema) -> Result<PanelDataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| find(name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let unit_col = need(&schema.unit)?;
    let time_col = need(&schema.time)?;
    let outcome_col = need(&schema.outcome)?;
    let treat_col = find(&schema.treatment_time);

    let covariate_names: Vec<String> = match &schema.covariates {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| ![Some(unit_col), Some(time_col), Some(outcome_col), treat_col].contains(&Some(*i)))
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    let cov_cols = covariate_names
        .iter()
        .map(|n| need(n))
        .collect::<Result<Vec<_>>>()?;

    let mut by_unit: BTreeMap<String, UnitSeries> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // header is line 1
        let row = i + 2;
        let cell = |col: usize| record.get(col).unwrap_or("");
        let parse_err = |col: usize| Error::Parse {
            row,
            column: headers[col].to_string(),
            value: cell(col).to_string(),
        };
        let unit = cell(unit_col).to_string();
        if unit.is_empty() {
            return Err(parse_err(unit_col));
        }
        let time: i64 = cell(time_col).parse().map_err(|_| parse_err(time_col))?;
        let outcome: f64 = parse_real(cell(outcome_col)).ok_or_else(|| parse_err(outcome_col))?;
        let covariates = cov_cols
            .iter()
            .map(|&c| parse_real(cell(c)).ok_or_else(|| parse_err(c)))
            .collect::<Result<Vec<f64>>>()?;
        let treatment_time = match treat_col.map(cell) {
            None | Some("") => None,
            Some(s) => Some(s.parse::<i64>().map_err(|_| parse_err(treat_col.unwrap()))?),
        };

        let entry = by_unit.entry(unit.clone()).or_insert_with(|| UnitSeries {
            id: unit.clone(),
            times: Vec::new(),
            outcomes: Vec::new(),
            covariates: Vec::new(),
            treatment_time,
        });
        if entry.treatment_time != treatment_time {
            return Err(Error::InvalidUnit {
                unit,
                reason: format!("inconsistent treatment_time at row {row}"),
            });
        }
        entry.times.push(time);
        entry.outcomes.push(outcome);
        entry.covariates.push(covariates);
    }
    PanelDataset::new(covariate_names, by_unit.into_values().collect())
}

fn parse_real(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Writes the canonical CSV layout `unit,time,outcome,<covariates>,treatment_time`.
pub fn write_panel<W: Write>(data: &PanelDataset, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["unit".to_string(), "time".into(), "outcome".into()];
    header.extend(data.covariate_names.iter().cloned());
    header.push("treatment_time".into());
    w.write_record(&header)?;
    for u in &data.units {
        let t0 = u.treatment_time.map(|t| t.to_string()).unwrap_or_default();
        for k in 0..u.len() {
            let mut rec = vec![u.id.clone(), u.times[k].to_string(), u.outcomes[k].to_string()];
            rec.extend(u.covariates[k].iter().map(f64::to_string));
            rec.push(t0.clone());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Splits a panel around `t0` for `treated_unit`.
///
/// Training rows are every row of the other units without treated rows,
/// followed by the treated unit's rows with `t <= t0`. Prediction rows are
/// the treated unit's rows with `t0 < t <= t0 + horizon`.
pub fn make_split(
    data: &PanelDataset,
    treated_unit: &str,
    t0: i64,
    horizon: Option<i64>,
) -> Result<TrainPredSplit> {
    let treated = data.unit(treated_unit)?;
    let (lo, hi) = (treated.times[0], *treated.times.last().unwrap());
    if t0 < lo || t0 > hi {
        return Err(Error::Split(format!(
            "t0 = {t0} outside the observed times [{lo}, {hi}] of `{treated_unit}`"
        )));
    }
    if let Some(tt) = treated.treatment_time.filter(|&tt| t0 > tt) {
        return Err(Error::Split(format!(
            "t0 = {t0} is after the treatment time {tt} of `{treated_unit}`"
        )));
    }
    let end = match horizon {
        Some(h) if h < 1 => return Err(Error::Split("horizon must be at least 1".into())),
        Some(h) => t0.saturating_add(h),
        None => i64::MAX,
    };

    let mut train_rows = Vec::new();
    for u in data.units.iter().filter(|u| u.id != treated_unit && !u.has_treated_rows()) {
        train_rows.extend(u.times.iter().map(|&t| RowRef::new(u.id.clone(), t)));
    }
    let pre: Vec<RowRef> = treated
        .times
        .iter()
        .filter(|&&t| t <= t0)
        .map(|&t| RowRef::new(treated_unit, t))
        .collect();
    if pre.is_empty() {
        return Err(Error::Split(format!("`{treated_unit}` has no pre-period rows")));
    }
    train_rows.extend(pre);
    let pred_rows: Vec<RowRef> = treated
        .times
        .iter()
        .filter(|&&t| t > t0 && t <= end)
        .map(|&t| RowRef::new(treated_unit, t))
        .collect();
    if pred_rows.is_empty() {
        return Err(Error::Split(format!(
            "empty prediction window after t0 = {t0} for `{treated_unit}`"
        )));
    }
    Ok(TrainPredSplit {
        treated_unit: treated_unit.to_string(),
        t0,
        train_rows,
        pred_rows,
    })
}

/// Keeps `treated_unit` plus `m` never-treated units drawn uniformly without
/// replacement. Deterministic in `seed`.
pub fn subsample_controls(
    data: &PanelDataset,
    treated_unit: &str,
    m: usize,
    seed: u64,
) -> Result<PanelDataset> {
    let treated = data.unit(treated_unit)?.clone();
    let pool: Vec<&UnitSeries> = data.never_treated().filter(|u| u.id != treated_unit).collect();
    if m > pool.len() {
        return Err(Error::PoolTooSmall {
            requested: m,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, pool.len(), m).into_vec();
    picked.sort_unstable();
    let mut units: Vec<UnitSeries> = picked.into_iter().map(|i| pool[i].clone()).collect();
    units.push(treated);
    PanelDataset::new(data.covariate_names.clone(), units)
}
