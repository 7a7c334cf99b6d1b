//! Exchangeable multi-task Gaussian processes for counterfactual prediction
//! on panel data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod harness;
pub mod hyperopt;
pub mod kernels;
pub mod model;
pub mod panel;
pub mod par;
pub mod predict;
pub mod report;
pub mod simulate;

pub use error::{Error, Result};
pub use harness::{Forecaster, GpForecaster, ModelReport, StaggeredConfig};
pub use hyperopt::{fit, FitOptions, FitResult};
pub use model::{HyperParams, ModelSpec};
pub use panel::{PanelDataset, TrainPredSplit};
pub use predict::{posterior_predictive, FittedModel, GaussianPredictive};
