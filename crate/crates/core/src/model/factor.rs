//! Exact factorization of an exchangeable covariance
//!
//! ```text
//! Σ = blockdiag(B_1, …, B_m) + P C Pᵀ
//! ```
//!
//! where `B_u` holds unit `u`'s deviation kernels plus noise, `C` is the
//! shared-process covariance over the distinct shared inputs (times, plus
//! shared covariates when configured) and `P` is the 0/1 row-to-input map.
//! With `C = L Lᵀ` from an eigen-decomposition, the Woodbury identity gives
//!
//! ```text
//! Σ⁻¹ = B⁻¹ − B⁻¹ P L A⁻¹ Lᵀ Pᵀ B⁻¹,   A = I + Lᵀ Pᵀ B⁻¹ P L,
//! log|Σ| = Σ_u log|B_u| + log|A|.
//! ```
//!
//! Cost is `O(Σ_u n_u³ + q³)` instead of `O(n³)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;
/// Eigenvalues of `C` below this fraction of the largest are dropped.
const EIG_CUTOFF: f64 = 1e-13;

/// Cholesky with jitter escalation. Returns the factor and the absolute
/// jitter that was added (0 when none was needed).
pub(crate) fn robust_cholesky(mut m: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Ok((ch, 0.0));
    }
    let n = m.nrows().max(1);
    let scale = (m.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut rel = JITTER_START;
    let mut added = 0.0;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let target = rel * scale;
        for i in 0..m.nrows() {
            m[(i, i)] += target - added;
        }
        added = target;
        if let Some(ch) = Cholesky::new(m.clone()) {
            log::debug!("cholesky needed jitter {added:e}");
            return Ok((ch, added));
        }
        rel *= 10.0;
    }
    Err(Error::NotPositiveDefinite { jitter: added })
}

pub(crate) fn chol_logdet(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub(crate) struct ExchFactor {
    groups: Vec<Vec<usize>>,
    key_of_row: Vec<usize>,
    n: usize,
    q: usize,
    binv: Vec<DMatrix<f64>>,
    /// `B_u⁻¹ P_u L`, one `n_u × r` block per unit.
    e: Vec<DMatrix<f64>>,
    /// `Pᵀ B⁻¹ P L`, `q × r`.
    f: DMatrix<f64>,
    a_chol: Option<Cholesky<f64, Dyn>>,
    logdet: f64,
    jitter: f64,
}

impl ExchFactor {
    pub(crate) fn new(
        blocks: Vec<DMatrix<f64>>,
        groups: Vec<Vec<usize>>,
        key_of_row: Vec<usize>,
        shared: &DMatrix<f64>,
    ) -> Result<Self> {
        let n = key_of_row.len();
        let q = shared.nrows();
        let mut logdet = 0.0;
        let mut jitter: f64 = 0.0;
        let mut binv = Vec::with_capacity(blocks.len());
        for b in blocks {
            let (ch, j) = robust_cholesky(b)?;
            jitter = jitter.max(j);
            logdet += chol_logdet(&ch);
            binv.push(ch.inverse());
        }

        let eig = shared.clone().symmetric_eigen();
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let kept: Vec<usize> = (0..q)
            .filter(|&k| eig.eigenvalues[k] > lmax * EIG_CUTOFF && eig.eigenvalues[k] > 0.0)
            .collect();
        let r = kept.len();
        let mut lc = DMatrix::zeros(q, r);
        for (c, &k) in kept.iter().enumerate() {
            let s = eig.eigenvalues[k].sqrt();
            for i in 0..q {
                lc[(i, c)] = eig.eigenvectors[(i, k)] * s;
            }
        }

        let mut e = Vec::with_capacity(groups.len());
        let mut f = DMatrix::zeros(q, r);
        for (g, bi) in groups.iter().zip(&binv) {
            let pl = DMatrix::from_fn(g.len(), r, |a, c| lc[(key_of_row[g[a]], c)]);
            let eu = bi * pl;
            for (a, &row) in g.iter().enumerate() {
                let k = key_of_row[row];
                for c in 0..r {
                    f[(k, c)] += eu[(a, c)];
                }
            }
            e.push(eu);
        }

        let a_chol = if r > 0 {
            let mut a = lc.transpose() * &f;
            a = (&a + a.transpose()) * 0.5;
            for i in 0..r {
                a[(i, i)] += 1.0;
            }
            let ch = Cholesky::new(a).ok_or(Error::NotPositiveDefinite { jitter })?;
            logdet += chol_logdet(&ch);
            Some(ch)
        } else {
            None
        };

        Ok(ExchFactor {
            groups,
            key_of_row,
            n,
            q,
            binv,
            e,
            f,
            a_chol,
            logdet,
            jitter,
        })
    }

    pub(crate) fn logdet(&self) -> f64 {
        self.logdet
    }

    pub(crate) fn jitter(&self) -> f64 {
        self.jitter
    }

    pub(crate) fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// `Σ⁻¹ v`.
    pub(crate) fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        let r = self.f.ncols();
        let mut w = DVector::zeros(r);
        for ((g, bi), eu) in self.groups.iter().zip(&self.binv).zip(&self.e) {
            let vu = DVector::from_iterator(g.len(), g.iter().map(|&i| v[i]));
            let bu = bi * &vu;
            for (a, &i) in g.iter().enumerate() {
                out[i] = bu[a];
            }
            if r > 0 {
                w += eu.tr_mul(&vu);
            }
        }
        if let Some(ch) = &self.a_chol {
            let z = ch.solve(&w);
            for (g, eu) in self.groups.iter().zip(&self.e) {
                let corr = eu * &z;
                for (a, &i) in g.iter().enumerate() {
                    out[i] -= corr[a];
                }
            }
        }
        out
    }

    /// Diagonal block of `Σ⁻¹` belonging to unit group `u`.
    pub(crate) fn inv_block(&self, u: usize) -> DMatrix<f64> {
        let mut out = self.binv[u].clone();
        if let Some(ch) = &self.a_chol {
            let eu = &self.e[u];
            let sol = ch.solve(&eu.transpose());
            out -= eu * sol;
        }
        out
    }

    /// `Pᵀ Σ⁻¹ P` over the shared inputs.
    pub(crate) fn projected_inverse(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.q, self.q);
        for (g, bi) in self.groups.iter().zip(&self.binv) {
            for (a, &i) in g.iter().enumerate() {
                let ki = self.key_of_row[i];
                for (b, &j) in g.iter().enumerate() {
                    s[(ki, self.key_of_row[j])] += bi[(a, b)];
                }
            }
        }
        if let Some(ch) = &self.a_chol {
            let sol = ch.solve(&self.f.transpose());
            s -= &self.f * sol;
        }
        s
    }

    /// `Pᵀ v`.
    pub(crate) fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.q);
        for (i, &k) in self.key_of_row.iter().enumerate() {
            out[k] += v[i];
        }
        out
    }
}
