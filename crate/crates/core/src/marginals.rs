//! Univariate marginal distributions: MLE fits, AIC selection, CDF / PPF and
//! rank-based pseudo-observations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{solve_increasing, NelderMead};
use crate::special::{expit, ln_gamma_fn, norm_cdf, norm_logpdf, norm_ppf, t_cdf, t_log_norm_const, t_ppf};

pub const MIN_SAMPLE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MarginalFamily {
    Gaussian,
    StudentT,
    NoncentralT,
    JohnsonSU,
    TukeyLambda,
    Laplace,
    AsymmetricLaplace,
    Empirical,
}

impl MarginalFamily {
    pub const PARAMETRIC: [MarginalFamily; 7] = [
        MarginalFamily::Gaussian,
        MarginalFamily::StudentT,
        MarginalFamily::NoncentralT,
        MarginalFamily::JohnsonSU,
        MarginalFamily::TukeyLambda,
        MarginalFamily::Laplace,
        MarginalFamily::AsymmetricLaplace,
    ];

    /// Number of free parameters (0 for the empirical distribution).
    pub fn n_params(self) -> usize {
        match self {
            MarginalFamily::Gaussian | MarginalFamily::Laplace => 2,
            MarginalFamily::StudentT | MarginalFamily::TukeyLambda | MarginalFamily::AsymmetricLaplace => 3,
            MarginalFamily::NoncentralT | MarginalFamily::JohnsonSU => 4,
            MarginalFamily::Empirical => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MarginalFamily::Gaussian => "norm",
            MarginalFamily::StudentT => "t",
            MarginalFamily::NoncentralT => "nct",
            MarginalFamily::JohnsonSU => "johnsonsu",
            MarginalFamily::TukeyLambda => "tukeylambda",
            MarginalFamily::Laplace => "laplace",
            MarginalFamily::AsymmetricLaplace => "laplace_asymmetric",
            MarginalFamily::Empirical => "empirical",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        let all = MarginalFamily::PARAMETRIC.iter().copied().chain(std::iter::once(MarginalFamily::Empirical));
        for f in all {
            if f.name().eq_ignore_ascii_case(s) || format!("{f:?}").eq_ignore_ascii_case(s) {
                return Ok(f);
            }
        }
        Err(Error::UnknownLabel(s.to_string()))
    }
}

impl std::str::FromStr for MarginalFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_name(s)
    }
}

/// A fitted marginal.
///
/// Parameter layouts:
/// - Gaussian `[mu, sigma]`
/// - StudentT `[nu, loc, scale]`
/// - NoncentralT `[nu, nc, loc, scale]`
/// - JohnsonSU `[gamma, delta, loc, scale]`
/// - TukeyLambda `[lambda, loc, scale]`
/// - Laplace `[loc, scale]`
/// - AsymmetricLaplace `[kappa, loc, scale]`
/// - Empirical: the sorted sample
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalModel {
    pub family: MarginalFamily,
    pub params: Vec<f64>,
    #[serde(with = "crate::serde_util::nullable_f64")]
    pub aic: f64,
    pub n_obs: usize,
}

impl MarginalModel {
    pub fn new(family: MarginalFamily, params: Vec<f64>) -> Result<Self> {
        let m = MarginalModel { family, params, aic: f64::NAN, n_obs: 0 };
        m.check()?;
        Ok(m)
    }

    pub fn empirical(sample: &[f64]) -> Result<Self> {
        if sample.len() < 2 || sample.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("empirical marginal needs at least 2 finite values"));
        }
        let mut sorted = sample.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(MarginalModel { family: MarginalFamily::Empirical, n_obs: sorted.len(), params: sorted, aic: f64::NAN })
    }

    fn check(&self) -> Result<()> {
        let p = &self.params;
        let want = self.family.n_params();
        if self.family != MarginalFamily::Empirical && p.len() != want {
            return Err(Error::invalid(format!("{:?} expects {want} parameters", self.family)));
        }
        let scale_ok = match self.family {
            MarginalFamily::Gaussian | MarginalFamily::Laplace => p[1] > 0.0,
            MarginalFamily::StudentT => p[0] > 0.0 && p[2] > 0.0,
            MarginalFamily::NoncentralT => p[0] > 0.0 && p[3] > 0.0,
            MarginalFamily::JohnsonSU => p[1] > 0.0 && p[3] > 0.0,
            MarginalFamily::TukeyLambda => p[2] > 0.0,
            MarginalFamily::AsymmetricLaplace => p[0] > 0.0 && p[2] > 0.0,
            MarginalFamily::Empirical => p.len() >= 2,
        };
        if !scale_ok || p.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("inadmissible {:?} parameters {p:?}", self.family)));
        }
        Ok(())
    }

    pub fn logpdf(&self, x: f64) -> f64 {
        logpdf(self.family, &self.params, x)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let p = &self.params;
        match self.family {
            MarginalFamily::Gaussian => norm_cdf((x - p[0]) / p[1]),
            MarginalFamily::StudentT => t_cdf((x - p[1]) / p[2], p[0]),
            MarginalFamily::NoncentralT => Nct::new(p[0], p[1]).cdf((x - p[2]) / p[3]),
            MarginalFamily::JohnsonSU => norm_cdf(p[0] + p[1] * ((x - p[2]) / p[3]).asinh()),
            MarginalFamily::TukeyLambda => tukey_cdf((x - p[1]) / p[2], p[0]),
            MarginalFamily::Laplace => {
                let z = (x - p[0]) / p[1];
                if z < 0.0 {
                    0.5 * z.exp()
                } else {
                    1.0 - 0.5 * (-z).exp()
                }
            }
            MarginalFamily::AsymmetricLaplace => {
                let (k, z) = (p[0], (x - p[1]) / p[2]);
                let k2 = k * k;
                if z < 0.0 {
                    k2 / (1.0 + k2) * (z / k).exp()
                } else {
                    1.0 - (-k * z).exp() / (1.0 + k2)
                }
            }
            MarginalFamily::Empirical => empirical_cdf(p, x),
        }
    }

    pub fn ppf(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::invalid(format!("quantile level {u} outside (0, 1)")));
        }
        Ok(self.ppf_unchecked(u))
    }

    /// Quantile function without range checking; callers guarantee `u ∈ (0,1)`.
    pub fn ppf_unchecked(&self, u: f64) -> f64 {
        let p = &self.params;
        match self.family {
            MarginalFamily::Gaussian => p[0] + p[1] * norm_ppf(u),
            MarginalFamily::StudentT => p[1] + p[2] * t_ppf(u, p[0]),
            MarginalFamily::NoncentralT => p[2] + p[3] * Nct::new(p[0], p[1]).ppf(u),
            MarginalFamily::JohnsonSU => p[2] + p[3] * ((norm_ppf(u) - p[0]) / p[1]).sinh(),
            MarginalFamily::TukeyLambda => p[1] + p[2] * tukey_quantile_logit(crate::special::logit(u), p[0]),
            MarginalFamily::Laplace => {
                if u < 0.5 {
                    p[0] + p[1] * (2.0 * u).ln()
                } else {
                    p[0] - p[1] * (2.0 * (1.0 - u)).ln()
                }
            }
            MarginalFamily::AsymmetricLaplace => {
                let (k, loc, s) = (p[0], p[1], p[2]);
                let k2 = k * k;
                if u < k2 / (1.0 + k2) {
                    loc + s * k * (u * (1.0 + k2) / k2).ln()
                } else {
                    loc - s / k * ((1.0 - u) * (1.0 + k2)).ln()
                }
            }
            MarginalFamily::Empirical => empirical_ppf(p, u),
        }
    }

    pub fn mean(&self) -> f64 {
        let p = &self.params;
        match self.family {
            MarginalFamily::Gaussian => p[0],
            MarginalFamily::Laplace => p[0],
            MarginalFamily::Empirical => p.iter().sum::<f64>() / p.len() as f64,
            _ => f64::NAN,
        }
    }
}

fn logpdf(family: MarginalFamily, p: &[f64], x: f64) -> f64 {
    match family {
        MarginalFamily::Gaussian => norm_logpdf((x - p[0]) / p[1]) - p[1].ln(),
        MarginalFamily::StudentT => {
            let (nu, z) = (p[0], (x - p[1]) / p[2]);
            t_log_norm_const(nu) - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p() - p[2].ln()
        }
        MarginalFamily::NoncentralT => Nct::new(p[0], p[1]).pdf((x - p[2]) / p[3]).ln() - p[3].ln(),
        MarginalFamily::JohnsonSU => {
            let (g, d, s) = (p[0], p[1], p[3]);
            let y = (x - p[2]) / s;
            let z = g + d * y.asinh();
            d.ln() - s.ln() - 0.5 * (1.0 + y * y).ln() + norm_logpdf(z)
        }
        MarginalFamily::TukeyLambda => tukey_logpdf((x - p[1]) / p[2], p[0]) - p[2].ln(),
        MarginalFamily::Laplace => -((x - p[0]).abs() / p[1]) - (2.0 * p[1]).ln(),
        MarginalFamily::AsymmetricLaplace => {
            let (k, s) = (p[0], p[2]);
            let z = (x - p[1]) / s;
            let core = if z >= 0.0 { -k * z } else { z / k };
            core - (k + 1.0 / k).ln() - s.ln()
        }
        MarginalFamily::Empirical => f64::NAN,
    }
}

fn loglik(family: MarginalFamily, p: &[f64], xs: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &x in xs {
        let v = logpdf(family, p, x);
        if !v.is_finite() {
            return f64::NEG_INFINITY;
        }
        acc += v;
    }
    acc
}

// ---------------------------------------------------------------------------
// Empirical

/// Interpolated empirical CDF, consistent with [`empirical_ppf`]: order
/// statistic `k` (1-based) sits at level `k / (n + 1)`; ties get the average
/// of their levels.
fn empirical_cdf(sorted: &[f64], x: f64) -> f64 {
    let n = sorted.len();
    let denom = (n + 1) as f64;
    if x <= sorted[0] {
        let hi = sorted.partition_point(|v| *v <= sorted[0]);
        return if x < sorted[0] { 1.0 / denom } else { (1.0 + hi as f64) / 2.0 / denom };
    }
    if x >= sorted[n - 1] {
        let lo = sorted.partition_point(|v| *v < sorted[n - 1]);
        return if x > sorted[n - 1] { n as f64 / denom } else { (lo as f64 + 1.0 + n as f64) / 2.0 / denom };
    }
    let lo = sorted.partition_point(|v| *v < x);
    let hi = sorted.partition_point(|v| *v <= x);
    if hi > lo {
        // x equals a (possibly tied) order statistic: ranks lo+1..=hi.
        return (lo + 1 + hi) as f64 / 2.0 / denom;
    }
    // sorted[lo-1] < x < sorted[lo]
    let (a, b) = (sorted[lo - 1], sorted[lo]);
    let ua = (lo as f64) / denom;
    let ub = (lo + 1) as f64 / denom;
    ua + (x - a) / (b - a) * (ub - ua)
}

fn empirical_ppf(sorted: &[f64], u: f64) -> f64 {
    let n = sorted.len();
    let pos = u * (n + 1) as f64; // 1-based fractional rank
    if pos <= 1.0 {
        return sorted[0];
    }
    if pos >= n as f64 {
        return sorted[n - 1];
    }
    let k = pos.floor() as usize; // 1 <= k < n
    let frac = pos - k as f64;
    sorted[k - 1] + frac * (sorted[k] - sorted[k - 1])
}

/// Average ranks (1-based) of `xs`, ties sharing the mean of their ranks.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && xs[idx[j]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Column-wise ranks scaled by `1 / (T + 1)`.
pub fn pseudo_observations(sample: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let t = sample.nrows();
    if t < 2 {
        return Err(Error::invalid("pseudo-observations need at least 2 rows"));
    }
    let mut out = DMatrix::zeros(t, sample.ncols());
    for j in 0..sample.ncols() {
        let col: Vec<f64> = sample.column(j).iter().copied().collect();
        for (i, r) in average_ranks(&col).into_iter().enumerate() {
            out[(i, j)] = r / (t + 1) as f64;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Tukey lambda. The quantile function is closed form; the CDF inverts it.

fn log_expit(t: f64) -> f64 {
    if t >= 0.0 {
        -(-t).exp().ln_1p()
    } else {
        t - t.exp().ln_1p()
    }
}

/// Standard Tukey-lambda quantile at `u = expit(t)`.
fn tukey_quantile_logit(t: f64, lambda: f64) -> f64 {
    let (lu, l1u) = (log_expit(t), log_expit(-t));
    if lambda.abs() < 1e-10 {
        return lu - l1u;
    }
    ((lambda * lu).exp_m1() - (lambda * l1u).exp_m1()) / lambda
}

/// dQ/dt at `u = expit(t)`: `u^λ (1-u) + (1-u)^λ u`.
fn tukey_dquantile_dlogit(t: f64, lambda: f64) -> f64 {
    let (lu, l1u) = (log_expit(t), log_expit(-t));
    (lambda * lu + l1u).exp() + (lambda * l1u + lu).exp()
}

fn tukey_support(lambda: f64) -> f64 {
    if lambda > 0.0 {
        1.0 / lambda
    } else {
        f64::INFINITY
    }
}

fn tukey_invert(y: f64, lambda: f64) -> Option<f64> {
    let bound = tukey_support(lambda);
    if y.abs() >= bound {
        return None;
    }
    let lim = 745.0;
    Some(solve_increasing(
        |t| tukey_quantile_logit(t, lambda),
        |t| tukey_dquantile_dlogit(t, lambda),
        y,
        -lim,
        lim,
        1e-13,
    ))
}

fn tukey_cdf(y: f64, lambda: f64) -> f64 {
    let bound = tukey_support(lambda);
    if y <= -bound {
        return 0.0;
    }
    if y >= bound {
        return 1.0;
    }
    tukey_invert(y, lambda).map(expit).unwrap_or(0.5)
}

fn tukey_logpdf(y: f64, lambda: f64) -> f64 {
    match tukey_invert(y, lambda) {
        None => f64::NEG_INFINITY,
        Some(t) => {
            // density = 1 / Q'(u) with Q'(u) = u^(λ-1) + (1-u)^(λ-1)
            let (lu, l1u) = (log_expit(t), log_expit(-t));
            let a = (lambda - 1.0) * lu;
            let b = (lambda - 1.0) * l1u;
            let m = a.max(b);
            -(m + ((a - m).exp() + (b - m).exp()).ln())
        }
    }
}

// ---------------------------------------------------------------------------
// Noncentral t as a scale mixture: T = (Z + nc) / S with S = sqrt(chi2_nu / nu).
// Expectations over S use a trapezoid rule in x = ln S, where the mixing
// density is smooth and decays fast in both directions.

pub const NCT_NU_RANGE: (f64, f64) = (1.0, 200.0);

struct Nct {
    nc: f64,
    s: Vec<f64>,
    w: Vec<f64>,
}

impl Nct {
    fn new(nu: f64, nc: f64) -> Self {
        let nu = nu.clamp(NCT_NU_RANGE.0, NCT_NU_RANGE.1);
        let lo = -(36.0 / nu).min(40.0);
        let hi = 0.5 * (3.0 + 80.0 / nu).ln();
        let h = (0.35 / nu.sqrt()).min(0.25);
        let n = ((hi - lo) / h).ceil() as usize + 1;
        let step = (hi - lo) / (n - 1) as f64;
        let mut s = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        for i in 0..n {
            let x = lo + step * i as f64;
            let e2 = (2.0 * x).exp();
            w.push((nu * (x - 0.5 * e2 + 0.5)).exp());
            s.push(x.exp());
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        Nct { nc, s, w }
    }

    fn pdf(&self, y: f64) -> f64 {
        self.s.iter().zip(&self.w).map(|(s, w)| w * s * norm_logpdf(y * s - self.nc).exp()).sum()
    }

    fn cdf(&self, y: f64) -> f64 {
        self.s.iter().zip(&self.w).map(|(s, w)| w * norm_cdf(y * s - self.nc)).sum::<f64>().clamp(0.0, 1.0)
    }

    fn ppf(&self, u: f64) -> f64 {
        // Bracket then solve with the density as derivative.
        let mut lo = -1.0;
        let mut hi = 1.0;
        while self.cdf(lo) > u && lo > -1e12 {
            lo *= 2.0;
        }
        while self.cdf(hi) < u && hi < 1e12 {
            hi *= 2.0;
        }
        solve_increasing(|y| self.cdf(y), |y| self.pdf(y), u, lo, hi, 1e-13 * (1.0 + lo.abs().max(hi.abs())))
    }
}

// ---------------------------------------------------------------------------
// Fitting

fn nm() -> NelderMead {
    NelderMead { max_evals: 4000, xtol: 1e-9, ftol: 1e-13, initial_step: 0.3 }
}

/// Fit `family` by maximum likelihood.
///
/// Optimization runs on the sample standardized by its median and standard
/// deviation; parameters and likelihood are mapped back to the original scale.
pub fn fit_marginal(sample: &[f64], family: MarginalFamily) -> Result<MarginalModel> {
    let n = sample.len();
    if n < MIN_SAMPLE {
        return Err(Error::invalid(format!("marginal fit needs at least {MIN_SAMPLE} observations, got {n}")));
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("sample contains non-finite values"));
    }
    if family == MarginalFamily::Empirical {
        return MarginalModel::empirical(sample);
    }
    let mean = sample.iter().sum::<f64>() / n as f64;
    let sd = (sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    if !(sd > 1e-14 * mean.abs().max(1e-300)) || sd == 0.0 {
        return Err(Error::Degenerate("sample has zero scale".into()));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    let z: Vec<f64> = sample.iter().map(|x| (x - median) / sd).collect();

    let (std_params, converged) = fit_standardized(family, &z)?;
    // Undo the standardization.
    let mut params = std_params.clone();
    match family {
        MarginalFamily::Gaussian => {
            params[0] = median + sd * std_params[0];
            params[1] = sd * std_params[1];
        }
        MarginalFamily::Laplace => {
            params[0] = median + sd * std_params[0];
            params[1] = sd * std_params[1];
        }
        MarginalFamily::StudentT | MarginalFamily::TukeyLambda | MarginalFamily::AsymmetricLaplace => {
            params[1] = median + sd * std_params[1];
            params[2] = sd * std_params[2];
        }
        MarginalFamily::NoncentralT | MarginalFamily::JohnsonSU => {
            params[2] = median + sd * std_params[2];
            params[3] = sd * std_params[3];
        }
        MarginalFamily::Empirical => unreachable!(),
    }
    let ll = loglik(family, &params, sample);
    if !converged {
        return Err(Error::NotConverged { what: format!("{family:?} marginal MLE"), best: params, value: ll });
    }
    if !ll.is_finite() {
        return Err(Error::Degenerate(format!("{family:?} likelihood is not finite at the optimum")));
    }
    let model = MarginalModel {
        family,
        aic: 2.0 * family.n_params() as f64 - 2.0 * ll,
        params,
        n_obs: n,
    };
    model.check()?;
    Ok(model)
}

/// Returns standardized-scale parameters and a convergence flag.
fn fit_standardized(family: MarginalFamily, z: &[f64]) -> Result<(Vec<f64>, bool)> {
    let n = z.len() as f64;
    match family {
        MarginalFamily::Gaussian => {
            let mu = z.iter().sum::<f64>() / n;
            let var = z.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
            Ok((vec![mu, var.sqrt()], true))
        }
        MarginalFamily::Laplace => {
            let mut s = z.to_vec();
            s.sort_by(f64::total_cmp);
            let m = s.len();
            let loc = if m % 2 == 1 { s[m / 2] } else { 0.5 * (s[m / 2 - 1] + s[m / 2]) };
            let scale = z.iter().map(|x| (x - loc).abs()).sum::<f64>() / n;
            Ok((vec![loc, scale], true))
        }
        _ => {
            let (to_params, starts): (fn(&[f64]) -> Vec<f64>, Vec<Vec<f64>>) = match family {
                MarginalFamily::StudentT => (
                    |q| vec![q[0].exp().clamp(0.05, 1e4), q[1], q[2].exp()],
                    vec![vec![5f64.ln(), 0.0, (0.75f64).ln()], vec![30f64.ln(), 0.0, 0.0], vec![3f64.ln(), 0.0, (0.6f64).ln()]],
                ),
                MarginalFamily::NoncentralT => (
                    |q| vec![q[0].exp().clamp(NCT_NU_RANGE.0, NCT_NU_RANGE.1), q[1], q[2], q[3].exp()],
                    vec![vec![5f64.ln(), 0.0, 0.0, (0.75f64).ln()], vec![30f64.ln(), 0.0, 0.0, 0.0]],
                ),
                MarginalFamily::JohnsonSU => (
                    |q| vec![q[0], q[1].exp(), q[2], q[3].exp()],
                    vec![vec![0.0, 2f64.ln(), 0.0, 2f64.ln()], vec![0.0, 0.0, 0.0, 0.0], vec![0.0, 5f64.ln(), 0.0, 5f64.ln()]],
                ),
                MarginalFamily::TukeyLambda => (
                    |q| vec![q[0], q[1], q[2].exp()],
                    vec![vec![0.14, 0.0, -(1.45f64.ln())], vec![-0.2, 0.0, -(2.0f64.ln())], vec![0.5, 0.0, -(1.0f64.ln())]],
                ),
                MarginalFamily::AsymmetricLaplace => (
                    |q| vec![q[0].exp(), q[1], q[2].exp()],
                    vec![vec![0.0, 0.0, (0.7f64).ln()], vec![0.3, 0.0, (0.7f64).ln()], vec![-0.3, 0.0, (0.7f64).ln()]],
                ),
                _ => unreachable!(),
            };
            let objective = |q: &[f64]| {
                let p = to_params(q);
                let ll = loglik(family, &p, z);
                if ll.is_finite() {
                    -ll
                } else {
                    f64::INFINITY
                }
            };
            let opt = nm();
            let mut best: Option<crate::optim::Minimum> = None;
            for s in &starts {
                let m = opt.minimize(objective, s);
                if best.as_ref().is_none_or(|b| m.value < b.value) {
                    best = Some(m);
                }
            }
            let mut best = best.expect("at least one start");
            // Polish from the best point with a fresh simplex.
            let polished = opt.minimize(objective, &best.x);
            if polished.value <= best.value {
                best = polished;
            }
            if !best.value.is_finite() {
                return Err(Error::Degenerate(format!("{family:?} likelihood is not finite for any start")));
            }
            Ok((to_params(&best.x), best.converged))
        }
    }
}

/// Fit every family in `families` and keep the smallest AIC. Ties go to the
/// family with fewer parameters, then to declaration order.
pub fn select_marginal(sample: &[f64], families: &[MarginalFamily]) -> Result<MarginalModel> {
    if families.is_empty() {
        return Err(Error::invalid("no marginal families given"));
    }
    let parametric: Vec<MarginalFamily> = families.iter().copied().filter(|f| *f != MarginalFamily::Empirical).collect();
    if parametric.is_empty() {
        return MarginalModel::empirical(sample);
    }
    let mut best: Option<MarginalModel> = None;
    let mut failures = Vec::new();
    for fam in parametric {
        match fit_marginal(sample, fam) {
            Ok(m) => {
                let better = match &best {
                    None => true,
                    Some(b) => {
                        (m.aic, m.family.n_params(), m.family) < (b.aic, b.family.n_params(), b.family)
                    }
                };
                if better {
                    best = Some(m);
                }
            }
            Err(e) => {
                log::debug!("marginal {fam:?} failed: {e}");
                failures.push(format!("{fam:?}: {e}"));
            }
        }
    }
    best.ok_or_else(|| Error::Degenerate(format!("all marginal fits failed ({})", failures.join("; "))))
}

pub fn marginal_cdf(m: &MarginalModel, x: f64) -> f64 {
    m.cdf(x)
}

pub fn marginal_ppf(m: &MarginalModel, u: f64) -> Result<f64> {
    m.ppf(u)
}

#[allow(dead_code)]
fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma_fn(a) + ln_gamma_fn(b) - ln_gamma_fn(a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, Normal, StudentT};

    fn normal_sample(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::from_seed(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        (0..n).map(|_| d.sample(&mut r)).collect()
    }

    fn laplace_sample(n: usize, scale: f64, seed: u64) -> Vec<f64> {
        // inverse-CDF sampling, independent of the model code
        let mut r = rng::from_seed(seed);
        (0..n)
            .map(|_| {
                let u: f64 = rand::Rng::random::<f64>(&mut r) - 0.5;
                -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            })
            .collect()
    }

    fn all_models() -> Vec<MarginalModel> {
        vec![
            MarginalModel::new(MarginalFamily::Gaussian, vec![0.01, 0.03]).unwrap(),
            MarginalModel::new(MarginalFamily::StudentT, vec![3.5, 0.0, 0.02]).unwrap(),
            MarginalModel::new(MarginalFamily::NoncentralT, vec![6.0, 0.7, -0.01, 0.02]).unwrap(),
            MarginalModel::new(MarginalFamily::JohnsonSU, vec![0.4, 1.7, 0.0, 0.03]).unwrap(),
            MarginalModel::new(MarginalFamily::TukeyLambda, vec![-0.15, 0.0, 0.02]).unwrap(),
            MarginalModel::new(MarginalFamily::TukeyLambda, vec![0.3, 0.01, 0.02]).unwrap(),
            MarginalModel::new(MarginalFamily::Laplace, vec![0.0, 0.02]).unwrap(),
            MarginalModel::new(MarginalFamily::AsymmetricLaplace, vec![1.4, 0.0, 0.02]).unwrap(),
        ]
    }

    #[test]
    fn gaussian_refit() {
        let m = fit_marginal(&normal_sample(10_000, 1), MarginalFamily::Gaussian).unwrap();
        assert!(m.params[0].abs() < 0.05 && (m.params[1] - 1.0).abs() < 0.05, "{:?}", m.params);
        assert_eq!(m.n_obs, 10_000);
        assert!(m.aic.is_finite());
    }

    #[test]
    fn laplace_refit() {
        let m = fit_marginal(&laplace_sample(10_000, 2.0, 2), MarginalFamily::Laplace).unwrap();
        assert!((m.params[1] - 2.0).abs() < 0.1, "{:?}", m.params);
    }

    #[test]
    fn constant_sample_is_degenerate() {
        assert!(fit_marginal(&[0.3; 50], MarginalFamily::Gaussian).is_err());
        assert!(fit_marginal(&[0.3; 50], MarginalFamily::StudentT).is_err());
        assert!(fit_marginal(&[1.0; 5], MarginalFamily::Gaussian).is_err());
    }

    #[test]
    fn heavy_tails_prefer_student_t() {
        let mut r = rng::from_seed(3);
        let d = StudentT::new(3.0).unwrap();
        let x: Vec<f64> = (0..5000).map(|_| d.sample(&mut r)).collect();
        let g = fit_marginal(&x, MarginalFamily::Gaussian).unwrap();
        let t = fit_marginal(&x, MarginalFamily::StudentT).unwrap();
        assert!(t.aic < g.aic);
        let sel = select_marginal(&x, &[MarginalFamily::Gaussian, MarginalFamily::StudentT]).unwrap();
        assert_eq!(sel.family, MarginalFamily::StudentT);
        assert!((t.params[0] - 3.0).abs() < 0.6, "nu = {}", t.params[0]);
    }

    #[test]
    fn normal_quantile_grid_selects_gaussian() {
        let n = 2000;
        let x: Vec<f64> = (1..=n).map(|i| norm_ppf(i as f64 / (n + 1) as f64)).collect();
        let sel = select_marginal(&x, &MarginalFamily::PARAMETRIC).unwrap();
        assert_eq!(sel.family, MarginalFamily::Gaussian);
    }

    #[test]
    fn singleton_family_set() {
        let sel = select_marginal(&normal_sample(100, 4), &[MarginalFamily::Gaussian]).unwrap();
        assert_eq!(sel.family, MarginalFamily::Gaussian);
    }

    #[test]
    fn simple_values() {
        let g = MarginalModel::new(MarginalFamily::Gaussian, vec![0.0, 1.0]).unwrap();
        assert_eq!(g.cdf(0.0), 0.5);
        let l = MarginalModel::new(MarginalFamily::Laplace, vec![0.0, 1.0]).unwrap();
        assert_eq!(l.ppf(0.5).unwrap(), 0.0);
        assert!(g.ppf(0.0).is_err() && g.ppf(1.0).is_err());
    }

    #[test]
    fn empirical_levels_match_rank_formula() {
        let e = MarginalModel::empirical(&[3.0, 1.0, 2.0]).unwrap();
        let u: Vec<f64> = [3.0, 1.0, 2.0].iter().map(|x| e.cdf(*x)).collect();
        assert_eq!(u, vec![0.75, 0.25, 0.5]);
        assert_eq!(e.ppf(0.5).unwrap(), 2.0);
        assert_abs_diff_eq!(e.ppf(0.375).unwrap(), 1.5, epsilon = 1e-15);
        // tails clamp
        assert_eq!(e.ppf(0.01).unwrap(), 1.0);
        assert_eq!(e.ppf(0.99).unwrap(), 3.0);
        let xs = [0.5, 1.0, 1.3, 2.0, 2.9, 3.0, 4.0];
        for w in xs.windows(2) {
            assert!(e.cdf(w[0]) <= e.cdf(w[1]));
        }
        for x in [1.2, 2.5] {
            assert_abs_diff_eq!(e.ppf(e.cdf(x)).unwrap(), x, epsilon = 1e-12);
        }
    }

    #[test]
    fn pseudo_observation_examples() {
        let col = |v: &[f64]| DMatrix::from_column_slice(v.len(), 1, v);
        let p = pseudo_observations(&col(&[10.0, 20.0])).unwrap();
        assert_abs_diff_eq!(p[(0, 0)], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[(1, 0)], 2.0 / 3.0, epsilon = 1e-15);
        let p = pseudo_observations(&col(&[5.0, 5.0])).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
        let p = pseudo_observations(&col(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(p.as_slice(), &[0.25, 0.5, 0.75]);
        assert!(pseudo_observations(&col(&[1.0])).is_err());
    }

    #[test]
    fn cdf_ppf_round_trip_every_family() {
        for m in all_models() {
            for i in 1..200 {
                let u = i as f64 / 200.0;
                let x = m.ppf(u).unwrap();
                assert_abs_diff_eq!(m.cdf(x), u, epsilon = 1e-9);
                let back = m.ppf(m.cdf(x)).unwrap();
                assert!((back - x).abs() < 1e-8, "{:?} u={u} x={x} back={back}", m.family);
            }
        }
    }

    #[test]
    fn cdf_monotone_on_grid() {
        for m in all_models() {
            let lo = m.ppf(1e-4).unwrap();
            let hi = m.ppf(1.0 - 1e-4).unwrap();
            let mut prev = -1.0;
            for i in 0..1001 {
                let x = lo + (hi - lo) * (i as f64 / 1000.0) * 1.4 - 0.2 * (hi - lo);
                let c = m.cdf(x);
                assert!(c >= prev - 1e-15, "{:?} not monotone at {x}", m.family);
                assert!((0.0..=1.0).contains(&c));
                prev = c;
            }
        }
    }

    #[test]
    fn densities_integrate_to_one() {
        // trapezoid over the central mass, independent of the cdf code
        for m in all_models() {
            let lo = m.ppf(1e-3).unwrap();
            let hi = m.ppf(1.0 - 1e-3).unwrap();
            let n = 20_000;
            let h = (hi - lo) / n as f64;
            let mut s = 0.0;
            for i in 0..=n {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                s += w * m.logpdf(lo + h * i as f64).exp();
            }
            assert_abs_diff_eq!(s * h, 0.998, epsilon = 2e-6);
        }
    }

    #[test]
    fn true_family_wins_aic_across_seeds() {
        let mut failures = 0;
        let seeds = 10;
        for seed in 0..seeds {
            let g = normal_sample(10_000, 100 + seed);
            let a = fit_marginal(&g, MarginalFamily::Gaussian).unwrap().aic;
            let b = fit_marginal(&g, MarginalFamily::Laplace).unwrap().aic;
            if a > b {
                failures += 1;
            }
            let l = laplace_sample(10_000, 1.0, 200 + seed);
            let a = fit_marginal(&l, MarginalFamily::Laplace).unwrap().aic;
            let b = fit_marginal(&l, MarginalFamily::Gaussian).unwrap().aic;
            if a > b {
                failures += 1;
            }
        }
        assert!(failures as f64 <= 0.05 * (2 * seeds) as f64);
    }

    #[test]
    fn every_family_fits_return_like_data() {
        let mut r = rng::from_seed(9);
        let d = StudentT::new(4.0).unwrap();
        let x: Vec<f64> = (0..300).map(|_| 0.001 + 0.02 * d.sample(&mut r)).collect();
        for fam in MarginalFamily::PARAMETRIC {
            let m = fit_marginal(&x, fam).unwrap_or_else(|e| panic!("{fam:?}: {e}"));
            assert!(m.aic.is_finite());
        }
    }

    #[test]
    fn json_shape() {
        let m = MarginalModel { family: MarginalFamily::Laplace, params: vec![0.0, 1.0], aic: 12.5, n_obs: 30 };
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"family":"Laplace","params":[0.0,1.0],"aic":12.5,"n_obs":30}"#);
        let e = MarginalModel::empirical(&[1.0, 2.0]).unwrap();
        let back: MarginalModel = serde_json::from_str(&serde_json::to_string(&e).unwrap()).unwrap();
        assert!(back.aic.is_nan());
    }
}
