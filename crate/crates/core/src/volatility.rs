//! GARCH(1,1) filtering and estimation, and DCC(1,1) dynamic correlations on
//! top of per-asset GARCH filters.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{Minimum, NelderMead};
use crate::rng::{self, Rng};
use crate::special::{expit, ln_gamma_fn, LN_SQRT_2PI};

pub const MIN_GARCH_OBS: usize = 50;
pub const NU_FLOOR: f64 = 2.1;
const PERSISTENCE_BOUNDARY: f64 = 1.0 - 1e-6;

/// Innovation family requested from a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DistKind {
    Gaussian,
    StudentT,
}

/// Fitted innovation law, standardized to unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Innovation {
    Gaussian,
    StudentT { nu: f64 },
}

impl Innovation {
    /// Log density of a unit-variance innovation `z`, given its variance scale `h`
    /// (so the argument is `a = sqrt(h) z`).
    fn logpdf(&self, a2: f64, h: f64) -> f64 {
        match *self {
            Innovation::Gaussian => -LN_SQRT_2PI - 0.5 * h.ln() - 0.5 * a2 / h,
            Innovation::StudentT { nu } => {
                let c = ln_gamma_fn(0.5 * (nu + 1.0))
                    - ln_gamma_fn(0.5 * nu)
                    - 0.5 * (std::f64::consts::PI * (nu - 2.0)).ln();
                c - 0.5 * h.ln() - 0.5 * (nu + 1.0) * (a2 / (h * (nu - 2.0))).ln_1p()
            }
        }
    }

    /// Draw a unit-variance innovation.
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        match *self {
            Innovation::Gaussian => z,
            Innovation::StudentT { nu } => {
                let chi: f64 = ChiSquared::new(nu).expect("nu > 0").sample(rng);
                z * ((nu - 2.0) / chi).sqrt()
            }
        }
    }
}

/// `r_t = mu + a_t`, `h_t = alpha0 + alpha1 a_{t-1}^2 + beta1 h_{t-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarchModel {
    pub mu: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub dist: Innovation,
    /// Variance seeding the recursion at the first observation.
    pub h_init: f64,
    /// Conditional variance at the last observation.
    pub last_h: f64,
    /// Mean-corrected return at the last observation.
    pub last_a: f64,
    /// Persistence hit the stationarity boundary during estimation.
    pub boundary: bool,
}

impl GarchModel {
    pub fn unconditional_variance(&self) -> f64 {
        self.alpha0 / (1.0 - self.alpha1 - self.beta1)
    }

    /// One-step-ahead conditional variance after the last observation.
    pub fn forecast_variance(&self) -> f64 {
        self.alpha0 + self.alpha1 * self.last_a * self.last_a + self.beta1 * self.last_h
    }

    /// Variance path for `returns` starting from `h1`.
    pub fn filter_from(&self, returns: &[f64], h1: f64) -> (Vec<f64>, Vec<f64>) {
        let mut z = Vec::with_capacity(returns.len());
        let mut h = Vec::with_capacity(returns.len());
        let mut ht = h1;
        let mut prev_a = 0.0;
        for (t, &r) in returns.iter().enumerate() {
            if t > 0 {
                ht = self.alpha0 + self.alpha1 * prev_a * prev_a + self.beta1 * ht;
            }
            let a = r - self.mu;
            z.push(a / ht.sqrt());
            h.push(ht);
            prev_a = a;
        }
        (z, h)
    }

    /// Generate a path from given standardized innovations, starting at `h1`.
    pub fn simulate_path(&self, z: &[f64], h1: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(z.len());
        let mut ht = h1;
        let mut prev_a = 0.0;
        for (t, &zt) in z.iter().enumerate() {
            if t > 0 {
                ht = self.alpha0 + self.alpha1 * prev_a * prev_a + self.beta1 * ht;
            }
            let a = ht.sqrt() * zt;
            out.push(self.mu + a);
            prev_a = a;
        }
        out
    }
}

/// Standardized residuals and variance path, seeded with the model's `h_init`.
pub fn garch_filter(model: &GarchModel, returns: &[f64]) -> (Vec<f64>, Vec<f64>) {
    model.filter_from(returns, model.h_init)
}

fn garch_loglik(a: &[f64], h1: f64, alpha0: f64, alpha1: f64, beta1: f64, dist: &Innovation) -> f64 {
    let mut h = h1;
    let mut ll = 0.0;
    for t in 0..a.len() {
        if t > 0 {
            h = alpha0 + alpha1 * a[t - 1] * a[t - 1] + beta1 * h;
        }
        ll += dist.logpdf(a[t] * a[t], h);
    }
    ll
}

struct GarchParams {
    alpha0: f64,
    alpha1: f64,
    beta1: f64,
    persistence: f64,
    dist: Innovation,
}

/// Unconstrained `q` to admissible parameters. `alpha0` is tied to the sample
/// variance so that `q[0] = 0` reproduces it as the unconditional variance.
fn garch_params(q: &[f64], var: f64, kind: DistKind) -> GarchParams {
    let p = expit(q[1]);
    let s = expit(q[2]);
    let dist = match kind {
        DistKind::Gaussian => Innovation::Gaussian,
        DistKind::StudentT => Innovation::StudentT { nu: NU_FLOOR + q[3].exp().min(1e4) },
    };
    GarchParams { alpha0: var * (1.0 - p) * q[0].exp(), alpha1: p * s, beta1: p * (1.0 - s), persistence: p, dist }
}

fn best_of(opt: &NelderMead, starts: &[Vec<f64>], f: impl Fn(&[f64]) -> f64) -> Minimum {
    let mut best: Option<Minimum> = None;
    for s in starts {
        let m = opt.minimize(&f, s);
        if best.as_ref().is_none_or(|b| m.value < b.value) {
            best = Some(m);
        }
    }
    let best = best.expect("nonempty starts");
    let polished = opt.minimize(&f, &best.x);
    if polished.value <= best.value {
        polished
    } else {
        best
    }
}

/// Quasi-maximum-likelihood GARCH(1,1) with constant mean.
pub fn fit_garch11(returns: &[f64], dist: DistKind) -> Result<GarchModel> {
    let n = returns.len();
    if n < MIN_GARCH_OBS {
        return Err(Error::invalid(format!("GARCH fit needs at least {MIN_GARCH_OBS} observations, got {n}")));
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::invalid("returns contain non-finite values"));
    }
    let mu = returns.iter().sum::<f64>() / n as f64;
    let a: Vec<f64> = returns.iter().map(|r| r - mu).collect();
    let var = a.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if !(var > 0.0) {
        return Err(Error::Degenerate("GARCH sample has zero variance".into()));
    }
    let objective = |q: &[f64]| {
        let p = garch_params(q, var, dist);
        let ll = garch_loglik(&a, var, p.alpha0, p.alpha1, p.beta1, &p.dist);
        if ll.is_finite() {
            -ll / n as f64
        } else {
            f64::INFINITY
        }
    };
    let logit = crate::special::logit;
    let mut starts = vec![
        vec![0.0, logit(0.9), logit(0.1)],
        vec![0.0, logit(0.5), logit(0.5)],
        vec![0.0, logit(0.98), logit(0.05)],
    ];
    if dist == DistKind::StudentT {
        for s in &mut starts {
            s.push((8.0 - NU_FLOOR).ln());
        }
    }
    let opt = NelderMead { max_evals: 3000, xtol: 1e-7, ftol: 1e-14, initial_step: 0.5 };
    let best = best_of(&opt, &starts, objective);
    let p = garch_params(&best.x, var, dist);
    let (_, h) = GarchModel {
        mu,
        alpha0: p.alpha0,
        alpha1: p.alpha1,
        beta1: p.beta1,
        dist: p.dist,
        h_init: var,
        last_h: var,
        last_a: 0.0,
        boundary: false,
    }
    .filter_from(returns, var);
    let model = GarchModel {
        mu,
        alpha0: p.alpha0,
        alpha1: p.alpha1,
        beta1: p.beta1,
        dist: p.dist,
        h_init: var,
        last_h: *h.last().expect("nonempty"),
        last_a: *a.last().expect("nonempty"),
        boundary: p.persistence >= PERSISTENCE_BOUNDARY,
    };
    if model.boundary {
        log::warn!("GARCH persistence at stationarity boundary ({:.8})", p.persistence);
    }
    if !best.converged {
        return Err(Error::NotConverged {
            what: "GARCH(1,1) QMLE".into(),
            best: vec![model.mu, model.alpha0, model.alpha1, model.beta1],
            value: -best.value * n as f64,
        });
    }
    Ok(model)
}

// ---------------------------------------------------------------------------
// DCC

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DccModel {
    pub a: f64,
    pub b: f64,
    pub qbar: DMatrix<f64>,
    pub last_q: DMatrix<f64>,
    /// Standardized residual row at the last observation.
    pub last_eps: Vec<f64>,
    /// Per-asset volatility filters; empty when fitted on residuals alone.
    pub garch: Vec<GarchModel>,
    pub dist: Innovation,
    /// `qbar` needed a diagonal jitter to be positive definite.
    pub jittered: bool,
}

/// Rescale `q` to unit diagonal.
pub fn correlation_from_q(q: &DMatrix<f64>) -> DMatrix<f64> {
    let d = q.nrows();
    let s: Vec<f64> = (0..d).map(|i| 1.0 / q[(i, i)].sqrt()).collect();
    let mut r = DMatrix::from_fn(d, d, |i, j| q[(i, j)] * s[i] * s[j]);
    for i in 0..d {
        r[(i, i)] = 1.0;
    }
    r
}

impl DccModel {
    /// Q for the step after the last observation.
    pub fn next_q(&self) -> DMatrix<f64> {
        let e = DVector::from_column_slice(&self.last_eps);
        &self.qbar * (1.0 - self.a - self.b) + (&e * e.transpose()) * self.a + &self.last_q * self.b
    }

    pub fn next_correlation(&self) -> DMatrix<f64> {
        correlation_from_q(&self.next_q())
    }

    /// Correlation matrices `R_t` over a residual sample, starting from `Q_1 = qbar`.
    pub fn correlation_path(&self, eps: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut q = self.qbar.clone();
        let mut out = Vec::with_capacity(eps.nrows());
        for t in 0..eps.nrows() {
            if t > 0 {
                let e = eps.row(t - 1).transpose();
                q = &self.qbar * (1.0 - self.a - self.b) + (&e * e.transpose()) * self.a + &q * self.b;
            }
            out.push(correlation_from_q(&q));
        }
        out
    }
}

struct DccParams {
    a: f64,
    b: f64,
    dist: Innovation,
}

fn dcc_params(q: &[f64], kind: DistKind) -> DccParams {
    let p = expit(q[0]) * PERSISTENCE_BOUNDARY;
    let s = expit(q[1]);
    let dist = match kind {
        DistKind::Gaussian => Innovation::Gaussian,
        DistKind::StudentT => Innovation::StudentT { nu: NU_FLOOR + q[2].exp().min(1e4) },
    };
    DccParams { a: p * s, b: p * (1.0 - s), dist }
}

/// Correlation-part log-likelihood (Gaussian) or full standardized
/// multivariate-t log-likelihood of residuals under DCC(a, b).
fn dcc_loglik(eps: &DMatrix<f64>, qbar: &DMatrix<f64>, a: f64, b: f64, dist: &Innovation) -> f64 {
    let (t_len, d) = eps.shape();
    let mut q = qbar.clone();
    let mut ll = 0.0;
    let t_const = match *dist {
        Innovation::StudentT { nu } => {
            ln_gamma_fn(0.5 * (nu + d as f64))
                - ln_gamma_fn(0.5 * nu)
                - 0.5 * d as f64 * (std::f64::consts::PI * (nu - 2.0)).ln()
        }
        Innovation::Gaussian => 0.0,
    };
    let mut e_prev = DVector::zeros(d);
    for t in 0..t_len {
        if t > 0 {
            q = qbar * (1.0 - a - b) + (&e_prev * e_prev.transpose()) * a + &q * b;
        }
        let r = correlation_from_q(&q);
        let e = eps.row(t).transpose();
        let Some(chol) = Cholesky::new(r) else {
            return f64::NEG_INFINITY;
        };
        let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let quad = e.dot(&chol.solve(&e));
        ll += match *dist {
            Innovation::Gaussian => -0.5 * (logdet + quad - e.dot(&e)),
            Innovation::StudentT { nu } => {
                t_const - 0.5 * logdet - 0.5 * (nu + d as f64) * (quad / (nu - 2.0)).ln_1p()
            }
        };
        e_prev = e;
    }
    ll
}

/// Second-moment matrix `E[eps' eps]`, jittered if not positive definite.
fn second_moment(eps: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let t = eps.nrows() as f64;
    let mut qbar = eps.transpose() * eps / t;
    qbar = (&qbar + qbar.transpose()) * 0.5;
    if Cholesky::new(qbar.clone()).is_some() {
        return (qbar, false);
    }
    for i in 0..qbar.nrows() {
        qbar[(i, i)] += 1e-8;
    }
    (qbar, true)
}

/// Two-step DCC(1,1): `qbar` from the residual second moments, then `(a, b)`
/// (and `nu` for t errors) by maximum likelihood.
pub fn fit_dcc11(std_residuals: &DMatrix<f64>, dist: DistKind) -> Result<DccModel> {
    let (t_len, d) = std_residuals.shape();
    if t_len < MIN_GARCH_OBS || d == 0 {
        return Err(Error::invalid(format!("DCC fit needs at least {MIN_GARCH_OBS} rows and one column")));
    }
    if std_residuals.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("residuals contain non-finite values"));
    }
    let (qbar, jittered) = second_moment(std_residuals);
    if jittered {
        log::warn!("DCC: residual second-moment matrix jittered to be positive definite");
    }
    if Cholesky::new(qbar.clone()).is_none() {
        return Err(Error::Degenerate("residual second-moment matrix is singular".into()));
    }
    let logit = crate::special::logit;
    let mut starts = vec![
        vec![logit(0.95), logit(0.05 / 0.95)],
        vec![logit(0.5), logit(0.5)],
        vec![logit(0.99), logit(0.02)],
    ];
    if dist == DistKind::StudentT {
        for s in &mut starts {
            s.push((8.0 - NU_FLOOR).ln());
        }
    }
    let (a, b, idist, converged) = if d == 1 {
        // R_t is identically [1]; dynamics are unidentified.
        let nu_fit = match dist {
            DistKind::Gaussian => Innovation::Gaussian,
            DistKind::StudentT => {
                let f = |q: &[f64]| -dcc_loglik(std_residuals, &qbar, 0.0, 0.0, &dcc_params(&[0.0, 0.0, q[0]], dist).dist);
                let m = NelderMead::default().minimize(f, &[(8.0 - NU_FLOOR).ln()]);
                dcc_params(&[0.0, 0.0, m.x[0]], dist).dist
            }
        };
        (0.0, 0.0, nu_fit, true)
    } else {
        let objective = |q: &[f64]| {
            let p = dcc_params(q, dist);
            let ll = dcc_loglik(std_residuals, &qbar, p.a, p.b, &p.dist);
            if ll.is_finite() {
                -ll / t_len as f64
            } else {
                f64::INFINITY
            }
        };
        let opt = NelderMead { max_evals: 2000, xtol: 1e-7, ftol: 1e-14, initial_step: 0.5 };
        let best = best_of(&opt, &starts, objective);
        let p = dcc_params(&best.x, dist);
        (p.a, p.b, p.dist, best.converged)
    };
    // Run the recursion to the end of the sample for the forecast state.
    let mut q = qbar.clone();
    for t in 1..t_len {
        let e = std_residuals.row(t - 1).transpose();
        q = &qbar * (1.0 - a - b) + (&e * e.transpose()) * a + &q * b;
    }
    let model = DccModel {
        a,
        b,
        qbar,
        last_q: q,
        last_eps: std_residuals.row(t_len - 1).iter().copied().collect(),
        garch: Vec::new(),
        dist: idist,
        jittered,
    };
    if !converged {
        return Err(Error::NotConverged { what: "DCC(1,1) QMLE".into(), best: vec![a, b], value: f64::NAN });
    }
    Ok(model)
}

/// Per-asset GARCH(1,1) filters followed by DCC(1,1) on their residuals.
pub fn fit_dcc_garch(returns: &DMatrix<f64>, dist: DistKind) -> Result<DccModel> {
    let (t_len, d) = returns.shape();
    let mut garch = Vec::with_capacity(d);
    let mut eps = DMatrix::zeros(t_len, d);
    for j in 0..d {
        let col: Vec<f64> = returns.column(j).iter().copied().collect();
        let g = fit_garch11(&col, dist).map_err(|e| e.at_stage(format!("garch column {j}")))?;
        let (z, _) = garch_filter(&g, &col);
        for (t, v) in z.into_iter().enumerate() {
            eps[(t, j)] = v;
        }
        garch.push(g);
    }
    let mut model = fit_dcc11(&eps, dist).map_err(|e| e.at_stage("dcc"))?;
    model.garch = garch;
    Ok(model)
}

/// Cholesky factor of a correlation matrix, jittering the diagonal once on failure.
pub fn robust_cholesky(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = Cholesky::new(r.clone()) {
        return Ok(c.l());
    }
    let mut j = r.clone();
    for i in 0..j.nrows() {
        j[(i, i)] += 1e-8;
    }
    Cholesky::new(j)
        .map(|c| c.l())
        .ok_or_else(|| Error::Degenerate("correlation matrix is not positive definite".into()))
}

/// One-step-ahead return scenarios: `r = mu + z ⊙ sqrt(h_{T+1})` with
/// `z ~ R_{T+1}`-correlated unit-variance innovations.
pub fn simulate_dcc(model: &DccModel, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let d = model.qbar.nrows();
    if model.garch.len() != d {
        return Err(Error::invalid("DCC simulation needs one GARCH filter per asset"));
    }
    let l = robust_cholesky(&model.next_correlation())?;
    let mu: Vec<f64> = model.garch.iter().map(|g| g.mu).collect();
    let sd: Vec<f64> = model.garch.iter().map(|g| g.forecast_variance().sqrt()).collect();
    let mut rng = rng::from_seed(seed);
    let chi = match model.dist {
        Innovation::StudentT { nu } => Some((nu, ChiSquared::new(nu).map_err(|e| Error::invalid(e.to_string()))?)),
        Innovation::Gaussian => None,
    };
    let mut out = DMatrix::zeros(n, d);
    let mut g = vec![0.0; d];
    for i in 0..n {
        for v in g.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let scale = match &chi {
            Some((nu, c)) => ((nu - 2.0) / c.sample(&mut rng)).sqrt(),
            None => 1.0,
        };
        for j in 0..d {
            let mut z = 0.0;
            for k in 0..=j {
                z += l[(j, k)] * g[k];
            }
            out[(i, j)] = mu[j] + sd[j] * scale * z;
        }
    }
    Ok(out)
}
