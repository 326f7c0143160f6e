//! Multivariate Gaussian and Student-t copulas.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::kendall::kendall_tau;
use crate::error::{Error, Result};
use crate::optim::brent_minimize;
use crate::rng;
use crate::special::{ln_gamma_fn, norm_cdf, t_cdf, t_log_norm_const, t_ppf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EllipticalKind {
    Gaussian,
    StudentT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticalCopula {
    pub kind: EllipticalKind,
    pub r: DMatrix<f64>,
    /// Degrees of freedom (Student-t only).
    pub nu: Option<f64>,
    /// The tau-implied matrix had to be projected to be positive definite.
    pub projected: bool,
}

impl EllipticalCopula {
    pub fn new(kind: EllipticalKind, r: DMatrix<f64>, nu: Option<f64>) -> Result<Self> {
        let d = r.nrows();
        if r.ncols() != d || d == 0 {
            return Err(Error::invalid("correlation matrix must be square and nonempty"));
        }
        for i in 0..d {
            if (r[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::invalid("correlation matrix needs a unit diagonal"));
            }
            for j in 0..i {
                if (r[(i, j)] - r[(j, i)]).abs() > 1e-12 {
                    return Err(Error::invalid("correlation matrix must be symmetric"));
                }
            }
        }
        if Cholesky::new(r.clone()).is_none() {
            return Err(Error::invalid("correlation matrix must be positive definite"));
        }
        match (kind, nu) {
            (EllipticalKind::StudentT, Some(v)) if v > 2.0 => {}
            (EllipticalKind::StudentT, _) => return Err(Error::invalid("t copula needs nu > 2")),
            (EllipticalKind::Gaussian, _) => {}
        }
        let nu = if kind == EllipticalKind::Gaussian { None } else { nu };
        Ok(EllipticalCopula { kind, r, nu, projected: false })
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }
}

/// Eigenvalue clipping at `1e-8` followed by rescaling to unit diagonal.
/// Returns the matrix and whether clipping was needed.
pub fn nearest_correlation(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let floor = 1e-8;
    if eig.eigenvalues.iter().all(|e| *e >= floor) {
        return (sym, false);
    }
    let clipped = eig.eigenvalues.map(|e| e.max(floor));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let d = rebuilt.nrows();
    let s: Vec<f64> = (0..d).map(|i| 1.0 / rebuilt[(i, i)].sqrt()).collect();
    let mut out = DMatrix::from_fn(d, d, |i, j| rebuilt[(i, j)] * s[i] * s[j]);
    for i in 0..d {
        out[(i, i)] = 1.0;
    }
    (out, true)
}

/// Correlation from pairwise Kendall's tau via `sin(pi tau / 2)`.
pub fn tau_correlation(u: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let d = u.ncols();
    let cols: Vec<Vec<f64>> = (0..d).map(|j| u.column(j).iter().copied().collect()).collect();
    let mut r = DMatrix::identity(d, d);
    for i in 0..d {
        for j in 0..i {
            let tau = kendall_tau(&cols[i], &cols[j])?;
            let rho = (std::f64::consts::FRAC_PI_2 * tau).sin();
            r[(i, j)] = rho;
            r[(j, i)] = rho;
        }
    }
    Ok(nearest_correlation(&r))
}

/// Profile log-likelihood of the t copula in `nu` at fixed correlation.
fn t_copula_loglik(u: &DMatrix<f64>, chol: &DMatrix<f64>, logdet: f64, nu: f64) -> f64 {
    let (n, d) = u.shape();
    let df = d as f64;
    let c_joint = ln_gamma_fn(0.5 * (nu + df)) - ln_gamma_fn(0.5 * nu) - 0.5 * df * (nu * std::f64::consts::PI).ln();
    let c_marg = t_log_norm_const(nu);
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut ll = 0.0;
    for i in 0..n {
        let mut marg = 0.0;
        for j in 0..d {
            x[j] = t_ppf(u[(i, j)], nu);
            marg += c_marg - 0.5 * (nu + 1.0) * (x[j] * x[j] / nu).ln_1p();
        }
        // forward substitution L y = x
        let mut quad = 0.0;
        for j in 0..d {
            let mut s = x[j];
            for k in 0..j {
                s -= chol[(j, k)] * y[k];
            }
            y[j] = s / chol[(j, j)];
            quad += y[j] * y[j];
        }
        ll += c_joint - 0.5 * logdet - 0.5 * (nu + df) * (quad / nu).ln_1p() - marg;
    }
    ll
}

pub fn fit_elliptical_copula(u: &DMatrix<f64>, kind: EllipticalKind) -> Result<EllipticalCopula> {
    let (n, d) = u.shape();
    if d == 0 || n < d + 10 {
        return Err(Error::invalid(format!("elliptical copula fit needs at least D + 10 = {} rows", d + 10)));
    }
    if u.iter().any(|x| !(*x > 0.0 && *x < 1.0)) {
        return Err(Error::invalid("copula data must lie in (0, 1)"));
    }
    let (r, projected) = tau_correlation(u)?;
    if projected {
        log::warn!("tau-implied correlation projected to the positive-definite cone");
    }
    let nu = match kind {
        EllipticalKind::Gaussian => None,
        EllipticalKind::StudentT => {
            let chol = Cholesky::new(r.clone())
                .ok_or_else(|| Error::Degenerate("correlation not positive definite".into()))?
                .l();
            let logdet = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let (s, _) = brent_minimize(
                |s| {
                    let ll = t_copula_loglik(u, &chol, logdet, 2.0 + s.exp());
                    if ll.is_finite() {
                        -ll
                    } else {
                        f64::INFINITY
                    }
                },
                0.05f64.ln(),
                98f64.ln(),
                1e-4,
                200,
            );
            Some(2.0 + s.exp())
        }
    };
    Ok(EllipticalCopula { kind, r, nu, projected })
}

/// Uniforms with the copula's dependence, clamped into the open unit interval.
pub fn sample_elliptical_copula(c: &EllipticalCopula, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let d = c.dim();
    let l = Cholesky::new(c.r.clone())
        .ok_or_else(|| Error::Degenerate("correlation not positive definite".into()))?
        .l();
    let mut r = rng::from_seed(seed);
    let chi = match c.kind {
        EllipticalKind::StudentT => {
            let nu = c.nu.ok_or_else(|| Error::invalid("t copula without nu"))?;
            Some((nu, ChiSquared::new(nu).map_err(|e| Error::invalid(e.to_string()))?))
        }
        EllipticalKind::Gaussian => None,
    };
    let mut out = DMatrix::zeros(n, d);
    let mut g = vec![0.0; d];
    for i in 0..n {
        for v in g.iter_mut() {
            *v = r.sample(StandardNormal);
        }
        let scale = match &chi {
            Some((nu, dist)) => (nu / dist.sample(&mut r)).sqrt(),
            None => 1.0,
        };
        for j in 0..d {
            let mut z = 0.0;
            for k in 0..=j {
                z += l[(j, k)] * g[k];
            }
            let u = match &chi {
                Some((nu, _)) => t_cdf(z * scale, *nu),
                None => norm_cdf(z),
            };
            out[(i, j)] = u.clamp(f64::EPSILON, 1.0 - f64::EPSILON);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr2(rho: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0])
    }

    fn ks_uniform(col: &[f64]) -> f64 {
        let mut s = col.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        s.iter()
            .enumerate()
            .map(|(i, x)| ((i as f64 + 1.0) / n - x).max(x - i as f64 / n))
            .fold(0.0, f64::max)
    }

    #[test]
    fn gaussian_refit_recovers_rho() {
        let c = EllipticalCopula::new(EllipticalKind::Gaussian, corr2(0.7), None).unwrap();
        let u = sample_elliptical_copula(&c, 100_000, 1).unwrap();
        let fit = fit_elliptical_copula(&u, EllipticalKind::Gaussian).unwrap();
        assert!((0.68..=0.72).contains(&fit.r[(0, 1)]), "{}", fit.r[(0, 1)]);
    }

    #[test]
    fn independent_uniforms_give_near_identity() {
        let c = EllipticalCopula::new(EllipticalKind::Gaussian, DMatrix::identity(3, 3), None).unwrap();
        let u = sample_elliptical_copula(&c, 100_000, 2).unwrap();
        let fit = fit_elliptical_copula(&u, EllipticalKind::Gaussian).unwrap();
        for i in 0..3 {
            for j in 0..i {
                assert!(fit.r[(i, j)].abs() < 0.02);
                let tau = kendall_tau(
                    &u.column(i).iter().copied().collect::<Vec<_>>(),
                    &u.column(j).iter().copied().collect::<Vec<_>>(),
                )
                .unwrap();
                assert!(tau.abs() < 0.01);
            }
        }
    }

    #[test]
    fn scalar_case() {
        let u = DMatrix::from_fn(30, 1, |i, _| (i as f64 + 0.5) / 30.0);
        let fit = fit_elliptical_copula(&u, EllipticalKind::Gaussian).unwrap();
        assert_eq!(fit.r, DMatrix::identity(1, 1));
    }

    #[test]
    fn margins_pass_ks() {
        let r = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.5, 1.0, -0.3, 0.2, -0.3, 1.0]);
        for c in [
            EllipticalCopula::new(EllipticalKind::Gaussian, r.clone(), None).unwrap(),
            EllipticalCopula::new(EllipticalKind::StudentT, r.clone(), Some(5.0)).unwrap(),
        ] {
            let n = 20_000;
            let u = sample_elliptical_copula(&c, n, 3).unwrap();
            for j in 0..3 {
                let col: Vec<f64> = u.column(j).iter().copied().collect();
                assert!(ks_uniform(&col) < 1.63 / (n as f64).sqrt());
            }
        }
    }

    #[test]
    fn deterministic_sampling() {
        let c = EllipticalCopula::new(EllipticalKind::StudentT, corr2(0.3), Some(6.0)).unwrap();
        assert_eq!(sample_elliptical_copula(&c, 100, 9).unwrap(), sample_elliptical_copula(&c, 100, 9).unwrap());
    }

    #[test]
    fn t_copula_refit_recovers_nu() {
        let c = EllipticalCopula::new(EllipticalKind::StudentT, corr2(0.5), Some(4.0)).unwrap();
        let u = sample_elliptical_copula(&c, 20_000, 4).unwrap();
        let fit = fit_elliptical_copula(&u, EllipticalKind::StudentT).unwrap();
        let nu = fit.nu.unwrap();
        assert!((nu - 4.0).abs() < 1.0, "nu = {nu}");
    }

    #[test]
    fn projection_repairs_indefinite_matrix() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        let (p, flagged) = nearest_correlation(&m);
        assert!(flagged);
        assert!(Cholesky::new(p.clone()).is_some());
        for i in 0..3 {
            assert!((p[(i, i)] - 1.0).abs() < 1e-15);
        }
    }
}
