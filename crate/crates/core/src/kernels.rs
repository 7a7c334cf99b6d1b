//! Unit-variance stationary kernels on time and covariates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    /// `exp(-|t - s| / l)`
    OuTime,
    /// `exp(-(t - s)^2 / (2 l^2))`
    RbfTime,
    /// Isotropic squared exponential on covariate vectors.
    RbfCov,
    /// Squared exponential with one lengthscale per covariate dimension.
    RbfCovArd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    kind: KernelKind,
    lengthscales: Vec<f64>,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, lengthscales: Vec<f64>) -> Result<Self> {
        let expected = match kind {
            KernelKind::RbfCovArd => lengthscales.len().max(1),
            _ => 1,
        };
        if lengthscales.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: lengthscales.len(),
            });
        }
        if let Some(l) = lengthscales.iter().find(|l| !(**l > 0.0)) {
            return Err(Error::Config(format!("lengthscale must be positive, got {l}")));
        }
        Ok(KernelSpec { kind, lengthscales })
    }

    pub fn ou(l: f64) -> Result<Self> {
        Self::new(KernelKind::OuTime, vec![l])
    }

    pub fn rbf_time(l: f64) -> Result<Self> {
        Self::new(KernelKind::RbfTime, vec![l])
    }

    pub fn rbf_cov(l: f64) -> Result<Self> {
        Self::new(KernelKind::RbfCov, vec![l])
    }

    pub fn ard(ls: Vec<f64>) -> Result<Self> {
        Self::new(KernelKind::RbfCovArd, ls)
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    /// Input dimension the kernel requires, `None` when any is accepted.
    pub fn arity(&self) -> Option<usize> {
        match self.kind {
            KernelKind::OuTime | KernelKind::RbfTime => Some(1),
            KernelKind::RbfCov => None,
            KernelKind::RbfCovArd => Some(self.lengthscales.len()),
        }
    }

    fn check(&self, a: &[f64], b: &[f64]) -> Result<()> {
        if a.len() != b.len() {
            return Err(Error::Dimension {
                expected: a.len(),
                got: b.len(),
            });
        }
        match self.arity() {
            Some(d) if d != a.len() => Err(Error::Dimension {
                expected: d,
                got: a.len(),
            }),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        self.check(a, b)?;
        Ok(self.eval_unchecked(a, b))
    }

    pub(crate) fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            KernelKind::OuTime => ou(a[0] - b[0], self.lengthscales[0]),
            KernelKind::RbfTime => rbf(a[0] - b[0], self.lengthscales[0]),
            KernelKind::RbfCov => {
                let l = self.lengthscales[0];
                let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-0.5 * r2 / (l * l)).exp()
            }
            KernelKind::RbfCovArd => {
                let s: f64 = a
                    .iter()
                    .zip(b)
                    .zip(&self.lengthscales)
                    .map(|((x, y), l)| {
                        let d = (x - y) / l;
                        d * d
                    })
                    .sum();
                (-0.5 * s).exp()
            }
        }
    }

    /// Kernel value and its derivatives with respect to each log lengthscale.
    pub(crate) fn eval_with_grad(&self, a: &[f64], b: &[f64], grad: &mut [f64]) -> f64 {
        match self.kind {
            KernelKind::OuTime => {
                let l = self.lengthscales[0];
                let r = (a[0] - b[0]).abs();
                let k = (-r / l).exp();
                grad[0] = k * r / l;
                k
            }
            KernelKind::RbfTime | KernelKind::RbfCov => {
                let l = self.lengthscales[0];
                let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                let k = (-0.5 * r2 / (l * l)).exp();
                grad[0] = k * r2 / (l * l);
                k
            }
            KernelKind::RbfCovArd => {
                let mut s = 0.0;
                for (j, ((x, y), l)) in a.iter().zip(b).zip(&self.lengthscales).enumerate() {
                    let d2 = ((x - y) / l).powi(2);
                    grad[j] = d2;
                    s += d2;
                }
                let k = (-0.5 * s).exp();
                grad.iter_mut().for_each(|g| *g *= k);
                k
            }
        }
    }

    /// Gram matrix with entries `eval(A_i, B_j)`.
    pub fn gram<P: AsRef<[f64]>>(&self, a: &[P], b: &[P]) -> Result<DMatrix<f64>> {
        if let (Some(x), Some(y)) = (a.first(), b.first()) {
            self.check(x.as_ref(), y.as_ref())?;
        }
        let mut out = DMatrix::zeros(a.len(), b.len());
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                let (x, y) = (x.as_ref(), y.as_ref());
                self.check(x, y)?;
                out[(i, j)] = self.eval_unchecked(x, y);
            }
        }
        Ok(out)
    }
}

#[inline]
pub(crate) fn ou(d: f64, l: f64) -> f64 {
    (-d.abs() / l).exp()
}

#[inline]
pub(crate) fn rbf(d: f64, l: f64) -> f64 {
    (-0.5 * d * d / (l * l)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_forms() {
        let ou1 = KernelSpec::ou(1.0).unwrap();
        assert_eq!(ou1.eval(&[0.0], &[0.0]).unwrap(), 1.0);
        assert!((ou1.eval(&[0.0], &[1.0]).unwrap() - 0.367_879_441_171_442_3).abs() < 1e-15);
        let rbf2 = KernelSpec::rbf_time(2.0).unwrap();
        assert!((rbf2.eval(&[0.0], &[2.0]).unwrap() - 0.606_530_659_712_633_4).abs() < 1e-15);
    }

    #[test]
    fn ard_limit_approaches_one_dimensional_rbf() {
        let target = (-0.5f64).exp();
        let mut prev = f64::INFINITY;
        for l2 in [10.0, 100.0, 1e3, 1e5] {
            let k = KernelSpec::ard(vec![1.0, l2]).unwrap();
            let v = k.eval(&[0.0, 0.0], &[1.0, 5.0]).unwrap();
            let gap = (v - target).abs();
            assert!(gap < prev);
            prev = gap;
        }
        assert!(prev < 1e-8);
    }

    #[test]
    fn gram_examples() {
        let e = std::f64::consts::E;
        let ou1 = KernelSpec::ou(1.0).unwrap();
        let g = ou1.gram(&[[0.0], [1.0], [2.0]], &[[0.0], [1.0], [2.0]]).unwrap();
        let first = [1.0, 1.0 / e, 1.0 / (e * e)];
        for i in 0..3 {
            for j in 0..3 {
                let d = (i as i64 - j as i64).unsigned_abs() as usize;
                assert!((g[(i, j)] - first[d]).abs() < 1e-15);
            }
        }
        let rbf1 = KernelSpec::rbf_time(1.0).unwrap();
        let g = rbf1.gram(&[[0.0]], &[[0.0], [1.0], [2.0]]).unwrap();
        let want = [1.0, (-0.5f64).exp(), (-2.0f64).exp()];
        for j in 0..3 {
            assert!((g[(0, j)] - want[j]).abs() < 1e-15);
        }
        assert_eq!(rbf1.gram(&[[0.0]], &[[0.0]]).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn dimension_errors() {
        let ou1 = KernelSpec::ou(1.0).unwrap();
        assert!(ou1.eval(&[0.0, 1.0], &[0.0, 1.0]).is_err());
        let ard = KernelSpec::ard(vec![1.0, 2.0]).unwrap();
        assert!(ard.eval(&[0.0], &[0.0]).is_err());
        assert!(KernelSpec::ou(0.0).is_err());
        assert!(KernelSpec::new(KernelKind::RbfTime, vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn log_lengthscale_gradients_match_finite_differences() {
        let a = [0.3, -1.2, 2.0];
        let b = [1.1, 0.4, -0.5];
        let specs = [
            (KernelKind::OuTime, vec![1.7]),
            (KernelKind::RbfTime, vec![0.8]),
            (KernelKind::RbfCov, vec![1.3]),
            (KernelKind::RbfCovArd, vec![0.7, 1.9, 1.1]),
        ];
        for (kind, ls) in specs {
            let (x, y): (&[f64], &[f64]) = match kind {
                KernelKind::OuTime | KernelKind::RbfTime => (&a[..1], &b[..1]),
                _ => (&a, &b),
            };
            let k = KernelSpec::new(kind, ls.clone()).unwrap();
            let mut g = vec![0.0; ls.len()];
            k.eval_with_grad(x, y, &mut g);
            for j in 0..ls.len() {
                let h = 1e-6;
                let mut up = ls.clone();
                up[j] *= f64::exp(h);
                let mut dn = ls.clone();
                dn[j] *= f64::exp(-h);
                let fd = (KernelSpec::new(kind, up).unwrap().eval(x, y).unwrap()
                    - KernelSpec::new(kind, dn).unwrap().eval(x, y).unwrap())
                    / (2.0 * h);
                assert!((fd - g[j]).abs() < 1e-8, "{kind:?} {j}: {fd} vs {}", g[j]);
            }
        }
    }

    fn min_eigenvalue(m: DMatrix<f64>) -> f64 {
        m.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    type Case<'a> = (KernelSpec, &'a Vec<Vec<f64>>, &'a Vec<Vec<f64>>);

    proptest! {
        #[test]
        fn symmetric_psd_and_stationary(
            pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 1..20),
            l0 in 0.2f64..5.0,
            l1 in 0.2f64..5.0,
            shift in -10.0f64..10.0,
        ) {
            let times: Vec<Vec<f64>> = pts.iter().map(|p| vec![p[0]]).collect();
            let shifted_t: Vec<Vec<f64>> = times.iter().map(|p| vec![p[0] + shift]).collect();
            let shifted_x: Vec<Vec<f64>> = pts.iter().map(|p| vec![p[0] + shift, p[1] - shift]).collect();
            let cases: Vec<Case> = vec![
                (KernelSpec::ou(l0).unwrap(), &times, &shifted_t),
                (KernelSpec::rbf_time(l0).unwrap(), &times, &shifted_t),
                (KernelSpec::rbf_cov(l0).unwrap(), &pts, &shifted_x),
                (KernelSpec::ard(vec![l0, l1]).unwrap(), &pts, &shifted_x),
            ];
            for (k, a, moved) in cases {
                let g = k.gram(a, a).unwrap();
                prop_assert!((&g - g.transpose()).amax() == 0.0);
                prop_assert!(min_eigenvalue(g.clone()) >= -1e-10);
                let g2 = k.gram(moved, moved).unwrap();
                prop_assert!((&g - &g2).amax() <= 1e-14);
            }
        }

        #[test]
        fn ard_with_equal_lengthscales_is_isotropic(
            a in prop::collection::vec(-3.0f64..3.0, 3),
            b in prop::collection::vec(-3.0f64..3.0, 3),
            l in 0.3f64..4.0,
        ) {
            let iso = KernelSpec::rbf_cov(l).unwrap().eval(&a, &b).unwrap();
            let ard = KernelSpec::ard(vec![l; 3]).unwrap().eval(&a, &b).unwrap();
            prop_assert!((iso - ard).abs() <= 1e-14);
        }
    }
}
