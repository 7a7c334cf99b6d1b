//! Exchangeable multi-task GP over stacked panel rows.
//!
//! Every unit's latent path is `f_i = μ + g_{i,1} + g_{i,2}`: a shared process
//! `μ` over time (optionally also over global covariates), a unit-specific
//! time deviation and, when enabled, a unit-specific covariate deviation.
//! The covariance between rows `(i, t)` and `(j, s)` is
//!
//! ```text
//! σ_μ² [k_t(t, s) + k_sh(x_t, x_s)] + 1{i = j} [σ_g1² k_t(t, s) + σ_g2² k_x(x_it, x_js)]
//! ```
//!
//! and observations add independent noise `ω_i²`.

mod factor;

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::panel::{PanelDataset, RowRef};

pub(crate) use factor::ExchFactor;

/// Lower bound on every variance reachable through the unconstrained map.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeKernel {
    Ou,
    Rbf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKernel {
    Rbf,
    RbfArd,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub time_kernel: TimeKernel,
    /// Unit-level covariate deviation `g_{i,2}`; `None` for time-only models.
    pub covariate_kernel: Option<CovariateKernel>,
    /// Zero-based covariate columns fed to the shared process.
    pub shared_covariate_dims: Vec<usize>,
}

impl ModelSpec {
    pub const PRESETS: [&'static str; 6] = [
        "ou-time",
        "rbf-time",
        "ou-time-cov",
        "rbf-time-cov",
        "ou-time-rbf-cov-ard",
        "rbf-time-cov-ard",
    ];

    pub fn preset(name: &str) -> Result<Self> {
        let (time_kernel, covariate_kernel) = match name {
            "ou-time" => (TimeKernel::Ou, None),
            "rbf-time" => (TimeKernel::Rbf, None),
            "ou-time-cov" => (TimeKernel::Ou, Some(CovariateKernel::Rbf)),
            "rbf-time-cov" => (TimeKernel::Rbf, Some(CovariateKernel::Rbf)),
            "ou-time-rbf-cov-ard" => (TimeKernel::Ou, Some(CovariateKernel::RbfArd)),
            "rbf-time-cov-ard" => (TimeKernel::Rbf, Some(CovariateKernel::RbfArd)),
            other => {
                return Err(Error::Config(format!(
                    "unknown model `{other}`; expected one of {}",
                    Self::PRESETS.join(", ")
                )))
            }
        };
        Ok(ModelSpec {
            time_kernel,
            covariate_kernel,
            shared_covariate_dims: Vec::new(),
        })
    }

    pub fn with_shared_dims(mut self, dims: Vec<usize>) -> Self {
        self.shared_covariate_dims = dims;
        self
    }

    pub fn name(&self) -> String {
        let t = match self.time_kernel {
            TimeKernel::Ou => "ou",
            TimeKernel::Rbf => "rbf",
        };
        let mut s = match (self.time_kernel, self.covariate_kernel) {
            (_, None) => format!("{t}-time"),
            (_, Some(CovariateKernel::Rbf)) => format!("{t}-time-cov"),
            (TimeKernel::Ou, Some(CovariateKernel::RbfArd)) => "ou-time-rbf-cov-ard".into(),
            (TimeKernel::Rbf, Some(CovariateKernel::RbfArd)) => "rbf-time-cov-ard".into(),
        };
        if !self.shared_covariate_dims.is_empty() {
            s.push_str("+shared");
        }
        s
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if let Some(&d) = self.shared_covariate_dims.iter().find(|&&d| d >= p) {
            return Err(Error::Config(format!(
                "shared covariate column {d} out of range for p = {p}"
            )));
        }
        if self.covariate_kernel.is_some() && self.unit_dims(p).is_empty() {
            return Err(Error::Config(
                "covariate model requires at least one non-shared covariate column".into(),
            ));
        }
        Ok(())
    }

    /// Covariate columns used by the unit-level covariate kernel.
    pub fn unit_dims(&self, p: usize) -> Vec<usize> {
        if self.covariate_kernel.is_none() {
            return Vec::new();
        }
        (0..p).filter(|d| !self.shared_covariate_dims.contains(d)).collect()
    }

    /// Number of covariate lengthscales for a panel with `p` columns.
    pub fn n_ell_x(&self, p: usize) -> usize {
        match self.covariate_kernel {
            None => 0,
            Some(CovariateKernel::Rbf) => 1,
            Some(CovariateKernel::RbfArd) => self.unit_dims(p).len(),
        }
    }

    pub fn has_shared(&self) -> bool {
        !self.shared_covariate_dims.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub sigma_mu2: f64,
    pub sigma_g1_2: f64,
    pub sigma_g2_2: f64,
    pub ell_time: f64,
    pub ell_x: Vec<f64>,
    pub ell_shared: Option<f64>,
    pub omega2: BTreeMap<String, f64>,
}

impl HyperParams {
    pub fn check(&self, spec: &ModelSpec, p: usize) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !(finite_nonneg(self.sigma_mu2) && finite_nonneg(self.sigma_g1_2) && finite_nonneg(self.sigma_g2_2)) {
            return Err(Error::Config("variances must be finite and non-negative".into()));
        }
        if !(self.ell_time > 0.0 && self.ell_time.is_finite()) {
            return Err(Error::Config("ell_time must be positive".into()));
        }
        if self.ell_x.len() != spec.n_ell_x(p) {
            return Err(Error::Dimension {
                expected: spec.n_ell_x(p),
                got: self.ell_x.len(),
            });
        }
        if self.ell_x.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Config("covariate lengthscales must be positive".into()));
        }
        if spec.has_shared() && !self.ell_shared.is_some_and(|l| l > 0.0) {
            return Err(Error::Config("shared covariate model needs a positive ell_shared".into()));
        }
        if let Some((u, w)) = self.omega2.iter().find(|(_, w)| !(**w > 0.0)) {
            return Err(Error::Config(format!("noise variance for `{u}` must be positive, got {w}")));
        }
        Ok(())
    }

    pub fn omega(&self, unit: &str) -> Result<f64> {
        self.omega2
            .get(unit)
            .copied()
            .ok_or_else(|| Error::Config(format!("no noise variance for unit `{unit}`")))
    }
}

/// Model inputs for a stacked set of rows: unit label, time and covariates.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    unit_ids: Vec<String>,
    unit: Vec<usize>,
    time: Vec<f64>,
    x: Vec<f64>,
    p: usize,
}

impl Design {
    pub fn new(p: usize) -> Self {
        Design {
            unit_ids: Vec::new(),
            unit: Vec::new(),
            time: Vec::new(),
            x: Vec::new(),
            p,
        }
    }

    pub fn push(&mut self, unit_id: &str, time: f64, x: &[f64]) -> Result<()> {
        if x.len() != self.p {
            return Err(Error::Dimension {
                expected: self.p,
                got: x.len(),
            });
        }
        let u = match self.unit_ids.iter().position(|id| id == unit_id) {
            Some(u) => u,
            None => {
                self.unit_ids.push(unit_id.to_string());
                self.unit_ids.len() - 1
            }
        };
        self.unit.push(u);
        self.time.push(time);
        self.x.extend_from_slice(x);
        Ok(())
    }

    /// Gathers rows from a panel, returning the design and the outcomes.
    pub fn from_rows(data: &PanelDataset, rows: &[RowRef]) -> Result<(Design, DVector<f64>)> {
        let mut d = Design::new(data.p());
        let mut y = Vec::with_capacity(rows.len());
        for r in rows {
            let (yi, xi) = data.row(r)?;
            d.push(&r.unit, r.time as f64, xi)?;
            y.push(yi);
        }
        Ok((d, DVector::from_vec(y)))
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn unit_of(&self, i: usize) -> &str {
        &self.unit_ids[self.unit[i]]
    }

    pub fn unit_index(&self, i: usize) -> usize {
        self.unit[i]
    }

    pub fn time(&self, i: usize) -> f64 {
        self.time[i]
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    /// Row indices of each unit, in `unit_ids` order.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); self.unit_ids.len()];
        for (i, &u) in self.unit.iter().enumerate() {
            g[u].push(i);
        }
        g
    }

    /// Applies `f(column, value)` to every covariate entry.
    pub fn map_covariates(&self, f: impl Fn(usize, f64) -> f64) -> Design {
        let mut out = self.clone();
        if self.p > 0 {
            for (k, v) in out.x.iter_mut().enumerate() {
                *v = f(k % self.p, *v);
            }
        }
        out
    }

    /// Reorders rows by permuting unit labels; used for relabeling checks.
    pub fn relabel(&self, rename: impl Fn(&str) -> String) -> Design {
        let mut out = Design::new(self.p);
        for i in 0..self.len() {
            out.push(&rename(self.unit_of(i)), self.time[i], self.x(i)).unwrap();
        }
        out
    }
}

fn gather(x: &[f64], dims: &[usize]) -> Vec<f64> {
    dims.iter().map(|&d| x[d]).collect()
}

/// Kernel objects resolved from a spec and a parameter vector.
struct Kernels {
    time: KernelSpec,
    unit_x: Option<KernelSpec>,
    shared: Option<KernelSpec>,
    unit_dims: Vec<usize>,
    shared_dims: Vec<usize>,
    sigma_mu2: f64,
    sigma_g1_2: f64,
    sigma_g2_2: f64,
}

impl Kernels {
    fn new(spec: &ModelSpec, theta: &HyperParams, p: usize) -> Result<Self> {
        spec.validate(p)?;
        theta.check(spec, p)?;
        let time = match spec.time_kernel {
            TimeKernel::Ou => KernelSpec::ou(theta.ell_time)?,
            TimeKernel::Rbf => KernelSpec::rbf_time(theta.ell_time)?,
        };
        let unit_x = match spec.covariate_kernel {
            None => None,
            Some(CovariateKernel::Rbf) => Some(KernelSpec::rbf_cov(theta.ell_x[0])?),
            Some(CovariateKernel::RbfArd) => Some(KernelSpec::ard(theta.ell_x.clone())?),
        };
        let shared = match theta.ell_shared {
            Some(l) if spec.has_shared() => Some(KernelSpec::rbf_cov(l)?),
            _ => None,
        };
        Ok(Kernels {
            time,
            unit_x,
            shared,
            unit_dims: spec.unit_dims(p),
            shared_dims: spec.shared_covariate_dims.clone(),
            sigma_mu2: theta.sigma_mu2,
            sigma_g1_2: theta.sigma_g1_2,
            sigma_g2_2: if spec.covariate_kernel.is_some() { theta.sigma_g2_2 } else { 0.0 },
        })
    }

    fn latent(&self, t: f64, s: f64, xa: &[f64], xb: &[f64], same_unit: bool) -> f64 {
        let kt = self.time.eval_unchecked(&[t], &[s]);
        let mut v = kt;
        if let Some(k) = &self.shared {
            v += k.eval_unchecked(&gather(xa, &self.shared_dims), &gather(xb, &self.shared_dims));
        }
        v *= self.sigma_mu2;
        if same_unit {
            v += self.sigma_g1_2 * kt;
            if let Some(k) = &self.unit_x {
                v += self.sigma_g2_2
                    * k.eval_unchecked(&gather(xa, &self.unit_dims), &gather(xb, &self.unit_dims));
            }
        }
        v
    }
}

/// Latent covariance `K_f` over the rows of `design` (no noise).
pub fn assemble_cov(spec: &ModelSpec, theta: &HyperParams, design: &Design) -> Result<DMatrix<f64>> {
    let k = Kernels::new(spec, theta, design.p())?;
    let n = design.len();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = k.latent(
                design.time(i),
                design.time(j),
                design.x(i),
                design.x(j),
                design.unit[i] == design.unit[j],
            );
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Diagonal noise `Ω` for the rows of `design`.
pub fn noise_diag(theta: &HyperParams, design: &Design) -> Result<DVector<f64>> {
    let per_unit = design
        .unit_ids()
        .iter()
        .map(|u| theta.omega(u))
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_iterator(design.len(), design.unit.iter().map(|&u| per_unit[u])))
}

/// Latent cross-covariance between training rows and prediction rows.
/// Rows sharing a unit label use the same-unit branch.
pub fn cross_cov(
    spec: &ModelSpec,
    theta: &HyperParams,
    train: &Design,
    pred: &Design,
) -> Result<DMatrix<f64>> {
    if train.p() != pred.p() {
        return Err(Error::Dimension {
            expected: train.p(),
            got: pred.p(),
        });
    }
    let k = Kernels::new(spec, theta, train.p())?;
    Ok(DMatrix::from_fn(train.len(), pred.len(), |i, j| {
        k.latent(
            train.time(i),
            pred.time(j),
            train.x(i),
            pred.x(j),
            train.unit_of(i) == pred.unit_of(j),
        )
    }))
}

/// Mapping between `HyperParams` and the unconstrained optimization vector.
///
/// Layout: `σ_μ², σ_g1², [σ_g2²], ℓ_time, [ℓ_x…], [ℓ_shared], ω_u² per unit`.
/// Variances map as `v = floor + exp(η)`, lengthscales as `ℓ = exp(η)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    units: Vec<String>,
    has_cov: bool,
    n_ell_x: usize,
    has_shared: bool,
}

impl ParamLayout {
    pub fn new(spec: &ModelSpec, design: &Design) -> Self {
        ParamLayout {
            units: design.unit_ids().to_vec(),
            has_cov: spec.covariate_kernel.is_some(),
            n_ell_x: spec.n_ell_x(design.p()),
            has_shared: spec.has_shared(),
        }
    }

    fn idx_g2(&self) -> Option<usize> {
        self.has_cov.then_some(2)
    }

    fn idx_ell_time(&self) -> usize {
        2 + self.has_cov as usize
    }

    fn idx_ell_x(&self) -> usize {
        self.idx_ell_time() + 1
    }

    fn idx_shared(&self) -> Option<usize> {
        self.has_shared.then_some(self.idx_ell_x() + self.n_ell_x)
    }

    fn idx_omega(&self) -> usize {
        self.idx_ell_x() + self.n_ell_x + self.has_shared as usize
    }

    pub fn len(&self) -> usize {
        self.idx_omega() + self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = vec!["sigma_mu2".to_string(), "sigma_g1_2".into()];
        if self.has_cov {
            out.push("sigma_g2_2".into());
        }
        out.push("ell_time".into());
        out.extend((0..self.n_ell_x).map(|j| format!("ell_x[{j}]")));
        if self.has_shared {
            out.push("ell_shared".into());
        }
        out.extend(self.units.iter().map(|u| format!("omega2[{u}]")));
        out
    }

    pub fn to_unconstrained(&self, theta: &HyperParams) -> Result<Vec<f64>> {
        let var = |name: &str, v: f64| {
            if v > VARIANCE_FLOOR {
                Ok((v - VARIANCE_FLOOR).ln())
            } else {
                Err(Error::Config(format!(
                    "{name} = {v} is not above the variance floor {VARIANCE_FLOOR}"
                )))
            }
        };
        let mut eta = vec![var("sigma_mu2", theta.sigma_mu2)?, var("sigma_g1_2", theta.sigma_g1_2)?];
        if self.has_cov {
            eta.push(var("sigma_g2_2", theta.sigma_g2_2)?);
        }
        eta.push(theta.ell_time.ln());
        if theta.ell_x.len() != self.n_ell_x {
            return Err(Error::Dimension {
                expected: self.n_ell_x,
                got: theta.ell_x.len(),
            });
        }
        eta.extend(theta.ell_x.iter().map(|l| l.ln()));
        if self.has_shared {
            let l = theta
                .ell_shared
                .ok_or_else(|| Error::Config("missing ell_shared".into()))?;
            eta.push(l.ln());
        }
        for u in &self.units {
            eta.push(var(&format!("omega2[{u}]"), theta.omega(u)?)?);
        }
        Ok(eta)
    }

    pub fn from_unconstrained(&self, eta: &[f64]) -> HyperParams {
        let var = |e: f64| VARIANCE_FLOOR + e.exp();
        let o = self.idx_omega();
        HyperParams {
            sigma_mu2: var(eta[0]),
            sigma_g1_2: var(eta[1]),
            sigma_g2_2: self.idx_g2().map(|i| var(eta[i])).unwrap_or(0.0),
            ell_time: eta[self.idx_ell_time()].exp(),
            ell_x: eta[self.idx_ell_x()..self.idx_ell_x() + self.n_ell_x]
                .iter()
                .map(|e| e.exp())
                .collect(),
            ell_shared: self.idx_shared().map(|i| eta[i].exp()),
            omega2: self
                .units
                .iter()
                .enumerate()
                .map(|(k, u)| (u.clone(), var(eta[o + k])))
                .collect(),
        }
    }
}

/// Precomputed row structure for the exchangeable factorization.
pub(crate) struct Prepared {
    groups: Vec<Vec<usize>>,
    key_of_row: Vec<usize>,
    key_time: Vec<f64>,
    key_shared_x: Vec<Vec<f64>>,
    row_time: Vec<f64>,
    row_unit_x: Vec<Vec<f64>>,
    unit_ids: Vec<String>,
}

/// Kernel matrices for one parameter setting, with optional derivatives.
struct Blocks {
    kt: Vec<DMatrix<f64>>,
    dkt: Vec<DMatrix<f64>>,
    kx: Vec<DMatrix<f64>>,
    dkx: Vec<Vec<DMatrix<f64>>>,
    ct: DMatrix<f64>,
    dct: DMatrix<f64>,
    cs: DMatrix<f64>,
    dcs: DMatrix<f64>,
}

impl Prepared {
    pub(crate) fn new(spec: &ModelSpec, design: &Design) -> Result<Self> {
        spec.validate(design.p())?;
        let shared_dims = &spec.shared_covariate_dims;
        let unit_dims = spec.unit_dims(design.p());
        let mut keys: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut key_of_row = Vec::with_capacity(design.len());
        let mut key_time = Vec::new();
        let mut key_shared_x = Vec::new();
        for i in 0..design.len() {
            let xs = gather(design.x(i), shared_dims);
            let mut bits = vec![design.time(i).to_bits()];
            bits.extend(xs.iter().map(|v| v.to_bits()));
            let next = keys.len();
            let k = *keys.entry(bits).or_insert(next);
            if k == next {
                key_time.push(design.time(i));
                key_shared_x.push(xs);
            }
            key_of_row.push(k);
        }
        Ok(Prepared {
            groups: design.groups(),
            key_of_row,
            key_time,
            key_shared_x,
            row_time: design.time.clone(),
            row_unit_x: (0..design.len()).map(|i| gather(design.x(i), &unit_dims)).collect(),
            unit_ids: design.unit_ids().to_vec(),
        })
    }

    fn blocks(&self, k: &Kernels, with_grad: bool) -> Blocks {
        let nx = k.unit_x.as_ref().map(|s| s.lengthscales().len()).unwrap_or(0);
        let mut g1 = [0.0];
        let mut gx = vec![0.0; nx.max(1)];
        let mut kt = Vec::new();
        let mut dkt = Vec::new();
        let mut kx = Vec::new();
        let mut dkx = Vec::new();
        for g in &self.groups {
            let nu = g.len();
            let mut t = DMatrix::zeros(nu, nu);
            let mut dt = DMatrix::zeros(if with_grad { nu } else { 0 }, if with_grad { nu } else { 0 });
            for a in 0..nu {
                for b in 0..=a {
                    let v = k
                        .time
                        .eval_with_grad(&[self.row_time[g[a]]], &[self.row_time[g[b]]], &mut g1);
                    t[(a, b)] = v;
                    t[(b, a)] = v;
                    if with_grad {
                        dt[(a, b)] = g1[0];
                        dt[(b, a)] = g1[0];
                    }
                }
            }
            kt.push(t);
            dkt.push(dt);
            if let Some(kxs) = &k.unit_x {
                let mut x = DMatrix::zeros(nu, nu);
                let mut dx = vec![DMatrix::zeros(nu, nu); if with_grad { nx } else { 0 }];
                for a in 0..nu {
                    for b in 0..=a {
                        let v = kxs.eval_with_grad(&self.row_unit_x[g[a]], &self.row_unit_x[g[b]], &mut gx);
                        x[(a, b)] = v;
                        x[(b, a)] = v;
                        if with_grad {
                            for (j, d) in dx.iter_mut().enumerate() {
                                d[(a, b)] = gx[j];
                                d[(b, a)] = gx[j];
                            }
                        }
                    }
                }
                kx.push(x);
                dkx.push(dx);
            }
        }

        let q = self.key_time.len();
        let mut ct = DMatrix::zeros(q, q);
        let mut dct = DMatrix::zeros(q, q);
        let mut cs = DMatrix::zeros(q, q);
        let mut dcs = DMatrix::zeros(q, q);
        let mut gs = [0.0];
        for a in 0..q {
            for b in 0..=a {
                let v = k.time.eval_with_grad(&[self.key_time[a]], &[self.key_time[b]], &mut g1);
                ct[(a, b)] = v;
                ct[(b, a)] = v;
                dct[(a, b)] = g1[0];
                dct[(b, a)] = g1[0];
                if let Some(ks) = &k.shared {
                    let v = ks.eval_with_grad(&self.key_shared_x[a], &self.key_shared_x[b], &mut gs);
                    cs[(a, b)] = v;
                    cs[(b, a)] = v;
                    dcs[(a, b)] = gs[0];
                    dcs[(b, a)] = gs[0];
                }
            }
        }
        Blocks {
            kt,
            dkt,
            kx,
            dkx,
            ct,
            dct,
            cs,
            dcs,
        }
    }

    fn factor(&self, k: &Kernels, theta: &HyperParams, bl: &Blocks) -> Result<ExchFactor> {
        let mut blocks = Vec::with_capacity(self.groups.len());
        for (u, id) in self.unit_ids.iter().enumerate() {
            let w = theta.omega(id)?;
            let mut b = &bl.kt[u] * k.sigma_g1_2;
            if k.unit_x.is_some() {
                b += &bl.kx[u] * k.sigma_g2_2;
            }
            for i in 0..b.nrows() {
                b[(i, i)] += w;
            }
            blocks.push(b);
        }
        let c = (&bl.ct + &bl.cs) * k.sigma_mu2;
        ExchFactor::new(blocks, self.groups.clone(), self.key_of_row.clone(), &c)
    }

    pub(crate) fn factorize(&self, spec: &ModelSpec, theta: &HyperParams, p: usize) -> Result<ExchFactor> {
        let k = Kernels::new(spec, theta, p)?;
        let bl = self.blocks(&k, false);
        self.factor(&k, theta, &bl)
    }

    fn n(&self) -> usize {
        self.key_of_row.len()
    }

    fn lml_from(&self, fac: &ExchFactor, y: &DVector<f64>) -> (f64, DVector<f64>) {
        let alpha = fac.solve(y);
        let n = self.n() as f64;
        let lml = -0.5 * y.dot(&alpha) - 0.5 * fac.logdet() - 0.5 * n * (2.0 * PI).ln();
        (lml, alpha)
    }

    /// Log marginal likelihood and its gradient with respect to the
    /// unconstrained parameters of `layout`.
    pub(crate) fn lml_grad(
        &self,
        spec: &ModelSpec,
        theta: &HyperParams,
        p: usize,
        layout: &ParamLayout,
        y: &DVector<f64>,
    ) -> Result<(f64, Vec<f64>)> {
        let k = Kernels::new(spec, theta, p)?;
        let bl = self.blocks(&k, true);
        let fac = self.factor(&k, theta, &bl)?;
        let (lml, alpha) = self.lml_from(&fac, y);

        // ∂L/∂θ = ½ tr((ααᵀ − Σ⁻¹) ∂Σ/∂θ), split into shared and per-unit parts.
        let aq = fac.project(&alpha);
        let ws = &aq * aq.transpose() - fac.projected_inverse();
        let dot = |w: &DMatrix<f64>, m: &DMatrix<f64>| w.component_mul(m).sum();

        let mut grad = vec![0.0; layout.len()];
        let jac = |v: f64| v - VARIANCE_FLOOR;
        grad[0] = 0.5 * dot(&ws, &(&bl.ct + &bl.cs)) * jac(theta.sigma_mu2);
        let it = layout.idx_ell_time();
        grad[it] = 0.5 * k.sigma_mu2 * dot(&ws, &bl.dct);
        if let Some(is) = layout.idx_shared() {
            grad[is] = 0.5 * k.sigma_mu2 * dot(&ws, &bl.dcs);
        }
        let io = layout.idx_omega();
        for (u, g) in fac.groups().iter().enumerate() {
            let au = DVector::from_iterator(g.len(), g.iter().map(|&i| alpha[i]));
            let wu = &au * au.transpose() - fac.inv_block(u);
            grad[1] += 0.5 * dot(&wu, &bl.kt[u]) * jac(theta.sigma_g1_2);
            grad[it] += 0.5 * k.sigma_g1_2 * dot(&wu, &bl.dkt[u]);
            if let Some(i2) = layout.idx_g2() {
                grad[i2] += 0.5 * dot(&wu, &bl.kx[u]) * jac(theta.sigma_g2_2);
                for (j, d) in bl.dkx[u].iter().enumerate() {
                    grad[layout.idx_ell_x() + j] += 0.5 * k.sigma_g2_2 * dot(&wu, d);
                }
            }
            let id = &self.unit_ids[u];
            let pos = layout
                .units
                .iter()
                .position(|x| x == id)
                .ok_or_else(|| Error::Config(format!("unit `{id}` missing from parameter layout")))?;
            grad[io + pos] = 0.5 * wu.trace() * jac(theta.omega(id)?);
        }
        Ok((lml, grad))
    }
}

fn check_y(design: &Design, y: &DVector<f64>) -> Result<()> {
    if design.len() != y.len() {
        return Err(Error::Dimension {
            expected: design.len(),
            got: y.len(),
        });
    }
    if design.is_empty() {
        return Err(Error::Config("no training rows".into()));
    }
    Ok(())
}

/// `log N(y | 0, K_f + Ω)`.
pub fn log_marginal_likelihood(
    spec: &ModelSpec,
    theta: &HyperParams,
    design: &Design,
    y: &DVector<f64>,
) -> Result<f64> {
    check_y(design, y)?;
    let prep = Prepared::new(spec, design)?;
    let fac = prep.factorize(spec, theta, design.p())?;
    Ok(prep.lml_from(&fac, y).0)
}

/// Gradient of the log marginal likelihood with respect to the
/// unconstrained parameter vector of [`ParamLayout`].
pub fn lml_gradient(
    spec: &ModelSpec,
    theta: &HyperParams,
    design: &Design,
    y: &DVector<f64>,
) -> Result<Vec<f64>> {
    lml_and_gradient(spec, theta, design, y).map(|(_, g)| g)
}

pub fn lml_and_gradient(
    spec: &ModelSpec,
    theta: &HyperParams,
    design: &Design,
    y: &DVector<f64>,
) -> Result<(f64, Vec<f64>)> {
    check_y(design, y)?;
    let layout = ParamLayout::new(spec, design);
    layout.to_unconstrained(theta)?;
    let prep = Prepared::new(spec, design)?;
    prep.lml_grad(spec, theta, design.p(), &layout, y)
}

/// Reusable objective over a fixed design, for the optimizer.
pub struct Objective<'a> {
    spec: &'a ModelSpec,
    design: &'a Design,
    y: &'a DVector<f64>,
    prep: Prepared,
    layout: ParamLayout,
}

impl<'a> Objective<'a> {
    pub fn new(spec: &'a ModelSpec, design: &'a Design, y: &'a DVector<f64>) -> Result<Self> {
        check_y(design, y)?;
        Ok(Objective {
            spec,
            design,
            y,
            prep: Prepared::new(spec, design)?,
            layout: ParamLayout::new(spec, design),
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn value_grad(&self, eta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let theta = self.layout.from_unconstrained(eta);
        self.prep.lml_grad(self.spec, &theta, self.design.p(), &self.layout, self.y)
    }

    pub fn value(&self, eta: &[f64]) -> Result<f64> {
        let theta = self.layout.from_unconstrained(eta);
        let fac = self.prep.factorize(self.spec, &theta, self.design.p())?;
        Ok(self.prep.lml_from(&fac, self.y).0)
    }
}
