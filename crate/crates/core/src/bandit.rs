//! Value model (similarity and optimality) and policy model (blending or
//! switching) for eclectic portfolios.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{digamma, ln_gamma_fn, norm_cdf, norm_ppf, trigamma};

/// Arguments of logit and probit activations are kept inside
/// `[ACT_EPS, 1 - ACT_EPS]` so a perfect similarity stays finite.
pub const ACT_EPS: f64 = 1e-9;
/// Simplex entries are clamped to `[PI_EPS, 1 - PI_EPS]` before the
/// Dirichlet and beta likelihoods.
pub const PI_EPS: f64 = 1e-6;
pub const CONCENTRATION_CAP: f64 = 1e6;
/// Activation sharpness used by every non-greedy activation.
const K: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum SimilarityKind {
    Cosine,
    Zscore,
    L1,
    L2,
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ActivationKind {
    Maxout,
    Softmax,
    Logistic,
    Tanh,
    LeakyRelu,
    Logit,
    Probit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Policy {
    Blend,
    Switch,
}

macro_rules! labelled {
    ($t:ty, $($v:path => $s:literal),+ $(,)?) => {
        impl $t {
            pub const ALL: &'static [$t] = &[$($v),+];
            pub fn name(&self) -> &'static str {
                match self { $($v => $s),+ }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    _ => Err(Error::UnknownLabel(s.to_string())),
                }
            }
        }
        impl From<$t> for String {
            fn from(v: $t) -> String {
                v.name().to_string()
            }
        }
        impl TryFrom<String> for $t {
            type Error = Error;
            fn try_from(s: String) -> Result<Self> {
                s.parse()
            }
        }
    };
}

labelled!(SimilarityKind,
    SimilarityKind::Cosine => "cosine",
    SimilarityKind::Zscore => "ndtr",
    SimilarityKind::L1 => "L1",
    SimilarityKind::L2 => "L2",
    SimilarityKind::Linf => "Linf",
);

labelled!(ActivationKind,
    ActivationKind::Maxout => "maxout",
    ActivationKind::Softmax => "softmax",
    ActivationKind::Logistic => "logistic",
    ActivationKind::Tanh => "tanh",
    ActivationKind::LeakyRelu => "leaky relu",
    ActivationKind::Logit => "logit",
    ActivationKind::Probit => "probit",
);

labelled!(Policy,
    Policy::Blend => "blend",
    Policy::Switch => "switch",
);

/// One eclectic configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditConfig {
    pub similarity: SimilarityKind,
    pub activation: ActivationKind,
    pub policy: Policy,
    pub gamma: f64,
    /// Lookback in steps for the parameter estimates.
    #[serde(default = "default_window")]
    pub window: usize,
    /// Replace the printed leaky-relu grade with one that has slope 1/7 on
    /// negative similarities.
    #[serde(default)]
    pub conventional_leaky_relu: bool,
}

fn default_window() -> usize {
    26
}

impl BanditConfig {
    pub fn new(similarity: SimilarityKind, activation: ActivationKind, policy: Policy, gamma: f64) -> Result<Self> {
        let c = BanditConfig { similarity, activation, policy, gamma, window: default_window(), conventional_leaky_relu: false };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(format!("decay {} is outside (0, 1)", self.gamma)));
        }
        if self.window < 2 {
            return Err(Error::invalid("blend window must be at least 2 steps"));
        }
        Ok(())
    }

    /// Identifier such as `cosine/logit/blend/0.999`.
    pub fn id(&self) -> String {
        format!("{}/{}/{}/{}", self.similarity, self.activation, self.policy, self.gamma)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

fn l2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine of the angle between `w` and `r`; 0 if either is zero.
pub fn cosine(w: &[f64], r: &[f64]) -> f64 {
    let n = l2(w) * l2(r);
    if n > 0.0 {
        (dot(w, r) / n).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Ex-post similarity between decided weights and realized returns. The
/// flag is set when `r` (or `w`) is the zero vector and the value is 0.
pub fn similarity_flagged(kind: SimilarityKind, w: &[f64], r: &[f64]) -> (f64, bool) {
    assert_eq!(w.len(), r.len(), "weight and return dimensions differ");
    let zero = l1(r) == 0.0 || l1(w) == 0.0;
    match kind {
        SimilarityKind::Zscore => (2.0 * norm_cdf(dot(w, r)) - 1.0, false),
        _ if zero => (0.0, true),
        SimilarityKind::Cosine => (cosine(w, r), false),
        SimilarityKind::L1 | SimilarityKind::L2 | SimilarityKind::Linf => {
            let (nw, nr) = (l1(w), l1(r));
            let d: Vec<f64> = w.iter().zip(r).map(|(a, b)| a / nw - b / nr).collect();
            let norm = match kind {
                SimilarityKind::L1 => l1(&d),
                SimilarityKind::L2 => l2(&d),
                _ => d.iter().fold(0.0f64, |m, x| m.max(x.abs())),
            };
            (1.0 - norm, false)
        }
    }
}

pub fn similarity(kind: SimilarityKind, w: &[f64], r: &[f64]) -> f64 {
    similarity_flagged(kind, w, r).0
}

/// Grade of one similarity under a non-greedy activation.
pub fn grade(kind: ActivationKind, s: f64, conventional_leaky_relu: bool) -> f64 {
    let half = ((1.0 + s) / 2.0).clamp(ACT_EPS, 1.0 - ACT_EPS);
    match kind {
        ActivationKind::Maxout => panic!("maxout grades depend on all arms"),
        ActivationKind::Softmax => (K * s).exp(),
        ActivationKind::Logistic => 1.0 / (1.0 + (-K * s).exp()),
        ActivationKind::Tanh => 1.0 + (K * s).tanh(),
        ActivationKind::LeakyRelu if conventional_leaky_relu => 1.0 / K + if s >= 0.0 { K * s } else { s / K },
        ActivationKind::LeakyRelu => 1.0 / K + K * s.abs(),
        ActivationKind::Logit => (half / (1.0 - half)).ln().max(0.0),
        ActivationKind::Probit => norm_ppf(half).max(0.0),
    }
}

/// Simplex-normalized grades. The flag is set when every grade is zero and
/// the uniform vector was returned.
pub fn optimality_with(kind: ActivationKind, s: &[f64], conventional_leaky_relu: bool) -> (Vec<f64>, bool) {
    let g: Vec<f64> = match kind {
        ActivationKind::Maxout => {
            let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            s.iter().map(|x| if *x == m { 1.0 } else { 0.0 }).collect()
        }
        _ => s.iter().map(|x| grade(kind, *x, conventional_leaky_relu)).collect(),
    };
    let tot: f64 = g.iter().sum();
    if tot > 0.0 && tot.is_finite() {
        (g.iter().map(|x| x / tot).collect(), false)
    } else {
        (vec![1.0 / s.len() as f64; s.len()], true)
    }
}

pub fn optimality(kind: ActivationKind, s: &[f64]) -> Vec<f64> {
    optimality_with(kind, s, false).0
}

/// Decay weights for `n` rows ordered oldest to newest: the newest row gets
/// `gamma^0`.
pub fn decay_weights(n: usize, gamma: f64) -> Vec<f64> {
    (0..n).map(|i| gamma.powi((n - 1 - i) as i32)).collect()
}

/// Weighted categorical MLE over simplex rows (oldest first).
pub fn wmle_categorical(history: &[Vec<f64>], gamma: f64) -> Result<Vec<f64>> {
    let p = check_history(history)?;
    let w = decay_weights(history.len(), gamma);
    let mut theta = vec![0.0; p];
    for (row, wt) in history.iter().zip(&w) {
        for (t, x) in theta.iter_mut().zip(row) {
            *t += wt * x;
        }
    }
    let tot: f64 = theta.iter().sum();
    Ok(theta.iter().map(|x| x / tot).collect())
}

/// Weighted Bernoulli MLE of one arm's series (oldest first).
pub fn wmle_bernoulli(series: &[f64], gamma: f64) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::invalid("empty optimality series"));
    }
    let w = decay_weights(series.len(), gamma);
    Ok(dot(&w, series) / w.iter().sum::<f64>())
}

fn check_history(history: &[Vec<f64>]) -> Result<usize> {
    let p = history.first().map(|r| r.len()).ok_or_else(|| Error::invalid("empty optimality history"))?;
    if p == 0 || history.iter().any(|r| r.len() != p) {
        return Err(Error::invalid("optimality rows have inconsistent lengths"));
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletFit {
    pub alpha: Vec<f64>,
    /// False when the moment-matching fallback was used.
    pub converged: bool,
}

/// Sufficient statistics `(W, S_p = Σ w_t ln π_tp)` after clamping rows
/// into the simplex interior.
fn dirichlet_stats(history: &[Vec<f64>], gamma: f64) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    let w = decay_weights(history.len(), gamma);
    let rows: Vec<Vec<f64>> = history
        .iter()
        .map(|r| {
            let c: Vec<f64> = r.iter().map(|x| x.clamp(PI_EPS, 1.0 - PI_EPS)).collect();
            let s: f64 = c.iter().sum();
            c.iter().map(|x| x / s).collect()
        })
        .collect();
    let p = rows[0].len();
    let mut s = vec![0.0; p];
    for (row, wt) in rows.iter().zip(&w) {
        for (acc, x) in s.iter_mut().zip(row) {
            *acc += wt * x.ln();
        }
    }
    (w.iter().sum(), s, rows)
}

/// Weighted Dirichlet log-likelihood at `alpha` for clamped rows.
pub fn dirichlet_loglik(alpha: &[f64], history: &[Vec<f64>], gamma: f64) -> f64 {
    let (wsum, s, _) = dirichlet_stats(history, gamma);
    dirichlet_ll(alpha, wsum, &s)
}

fn dirichlet_ll(alpha: &[f64], wsum: f64, s: &[f64]) -> f64 {
    let a0: f64 = alpha.iter().sum();
    wsum * (ln_gamma_fn(a0) - alpha.iter().map(|a| ln_gamma_fn(*a)).sum::<f64>())
        + alpha.iter().zip(s).map(|(a, si)| (a - 1.0) * si).sum::<f64>()
}

fn weighted_moments(rows: &[Vec<f64>], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = rows[0].len();
    let wsum: f64 = w.iter().sum();
    let mut mean = vec![0.0; p];
    for (row, wt) in rows.iter().zip(w) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += wt * x / wsum;
        }
    }
    let mut var = vec![0.0; p];
    for (row, wt) in rows.iter().zip(w) {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += wt * (x - m).powi(2) / wsum;
        }
    }
    (mean, var)
}

/// Moment-matched Dirichlet concentrations, capped at [`CONCENTRATION_CAP`].
fn dirichlet_moments(rows: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
    let (mean, var) = weighted_moments(rows, w);
    let a0 = mean
        .iter()
        .zip(&var)
        .filter(|(_, v)| **v > 0.0)
        .map(|(m, v)| m * (1.0 - m) / v - 1.0)
        .filter(|x| *x > 0.0)
        .fold(f64::NAN, |acc: f64, x| if acc.is_nan() { x } else { acc.min(x) });
    let a0 = if a0.is_nan() { CONCENTRATION_CAP } else { a0.min(CONCENTRATION_CAP) };
    mean.iter().map(|m| m * a0).collect()
}

/// Weighted Dirichlet MLE by Newton's method on the digamma stationarity
/// conditions (the Hessian is diagonal plus rank one).
pub fn wmle_dirichlet(history: &[Vec<f64>], gamma: f64) -> Result<DirichletFit> {
    check_history(history)?;
    let (wsum, s, rows) = dirichlet_stats(history, gamma);
    let w = decay_weights(history.len(), gamma);
    let mut alpha = dirichlet_moments(&rows, &w);
    let p = alpha.len();
    let grad = |a: &[f64]| -> Vec<f64> {
        let d0 = digamma(a.iter().sum());
        a.iter().zip(&s).map(|(ak, sk)| wsum * (d0 - digamma(*ak)) + sk).collect()
    };
    let mut ll = dirichlet_ll(&alpha, wsum, &s);
    for _ in 0..200 {
        let g = grad(&alpha);
        if g.iter().all(|x| x.abs() < 1e-9 * wsum.max(1.0)) {
            return Ok(DirichletFit { alpha, converged: true });
        }
        if alpha.iter().sum::<f64>() > CONCENTRATION_CAP {
            break;
        }
        let q: Vec<f64> = alpha.iter().map(|a| -wsum * trigamma(*a)).collect();
        let z = wsum * trigamma(alpha.iter().sum());
        let b = g.iter().zip(&q).map(|(gi, qi)| gi / qi).sum::<f64>() / (1.0 / z + q.iter().map(|qi| 1.0 / qi).sum::<f64>());
        let step: Vec<f64> = (0..p).map(|k| (g[k] - b) / q[k]).collect();
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand: Vec<f64> = alpha.iter().zip(&step).map(|(a, st)| a - t * st).collect();
            if cand.iter().all(|a| *a > 0.0) {
                let l = dirichlet_ll(&cand, wsum, &s);
                if l >= ll - 1e-12 * ll.abs() {
                    alpha = cand;
                    ll = l;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let g = grad(&alpha);
    if g.iter().all(|x| x.abs() < 1e-6) {
        return Ok(DirichletFit { alpha, converged: true });
    }
    log::debug!("Dirichlet fit did not converge; using moment matching");
    Ok(DirichletFit { alpha: dirichlet_moments(&rows, &w), converged: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaFit {
    /// Mean.
    pub theta: f64,
    /// Concentration: `Beta(theta nu, (1 - theta) nu)`.
    pub nu: f64,
    pub converged: bool,
}

/// Weighted beta log-likelihood in the mean/concentration parameterization.
pub fn beta_loglik(theta: f64, nu: f64, series: &[f64], gamma: f64) -> f64 {
    let w = decay_weights(series.len(), gamma);
    let (a, b) = (theta * nu, (1.0 - theta) * nu);
    let lnb = ln_gamma_fn(a) + ln_gamma_fn(b) - ln_gamma_fn(a + b);
    series
        .iter()
        .zip(&w)
        .map(|(x, wt)| {
            let x = x.clamp(PI_EPS, 1.0 - PI_EPS);
            wt * ((a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - lnb)
        })
        .sum()
}

/// Weighted beta MLE by Newton's method in `(a, b)`.
pub fn wmle_beta(series: &[f64], gamma: f64) -> Result<BetaFit> {
    if series.is_empty() {
        return Err(Error::invalid("empty optimality series"));
    }
    let w = decay_weights(series.len(), gamma);
    let xs: Vec<f64> = series.iter().map(|x| x.clamp(PI_EPS, 1.0 - PI_EPS)).collect();
    let wsum: f64 = w.iter().sum();
    let s1: f64 = xs.iter().zip(&w).map(|(x, wt)| wt * x.ln()).sum();
    let s2: f64 = xs.iter().zip(&w).map(|(x, wt)| wt * (1.0 - x).ln()).sum();
    let mean = xs.iter().zip(&w).map(|(x, wt)| wt * x).sum::<f64>() / wsum;
    let var = xs.iter().zip(&w).map(|(x, wt)| wt * (x - mean).powi(2)).sum::<f64>() / wsum;
    let moments = |capped: bool| {
        let nu = if var > 0.0 { (mean * (1.0 - mean) / var - 1.0).clamp(1e-3, CONCENTRATION_CAP) } else { CONCENTRATION_CAP };
        BetaFit { theta: mean, nu, converged: !capped }
    };
    if var <= 0.0 {
        // Constant series: the likelihood grows without bound in nu.
        return Ok(moments(false));
    }
    let ll = |a: f64, b: f64| (a - 1.0) * s1 + (b - 1.0) * s2 - wsum * (ln_gamma_fn(a) + ln_gamma_fn(b) - ln_gamma_fn(a + b));
    let m0 = moments(true);
    let (mut a, mut b) = (m0.theta * m0.nu, (1.0 - m0.theta) * m0.nu);
    let mut cur = ll(a, b);
    for _ in 0..200 {
        let d0 = digamma(a + b);
        let ga = s1 - wsum * (digamma(a) - d0);
        let gb = s2 - wsum * (digamma(b) - d0);
        if ga.abs().max(gb.abs()) < 1e-10 * wsum.max(1.0) {
            return Ok(BetaFit { theta: a / (a + b), nu: a + b, converged: true });
        }
        if a + b > CONCENTRATION_CAP {
            return Ok(BetaFit { theta: a / (a + b), nu: CONCENTRATION_CAP, converged: false });
        }
        let t0 = trigamma(a + b);
        let haa = -wsum * (trigamma(a) - t0);
        let hbb = -wsum * (trigamma(b) - t0);
        let hab = wsum * t0;
        let det = haa * hbb - hab * hab;
        let (mut da, mut db) = ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det);
        // Newton step on a concave function: x - H^-1 g.
        da = -da;
        db = -db;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let (na, nb) = (a + t * da, b + t * db);
            if na > 0.0 && nb > 0.0 {
                let l = ll(na, nb);
                if l >= cur - 1e-12 * cur.abs() {
                    a = na;
                    b = nb;
                    cur = l;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let d0 = digamma(a + b);
    let g = (s1 - wsum * (digamma(a) - d0)).abs().max((s2 - wsum * (digamma(b) - d0)).abs());
    if g < 1e-6 {
        Ok(BetaFit { theta: a / (a + b), nu: a + b, converged: true })
    } else {
        log::debug!("beta fit did not converge; using moment matching");
        Ok(moments(true))
    }
}

/// Blend: `θ / Σθ`. Switch: one-hot at the largest `θ`, ties to the lowest
/// index.
pub fn policy_ratio(theta: &[f64], policy: Policy) -> Vec<f64> {
    match policy {
        Policy::Blend => {
            let s: f64 = theta.iter().sum();
            theta.iter().map(|t| t / s).collect()
        }
        Policy::Switch => {
            let mut best = 0;
            for (i, t) in theta.iter().enumerate() {
                if *t > theta[best] {
                    best = i;
                }
            }
            (0..theta.len()).map(|i| if i == best { 1.0 } else { 0.0 }).collect()
        }
    }
}

/// Parameter estimates behind the policy: categorical or Dirichlet for
/// blending, per-arm Bernoulli or beta means for switching.
pub fn estimate_theta(history: &[Vec<f64>], activation: ActivationKind, policy: Policy, gamma: f64) -> Result<Vec<f64>> {
    let p = check_history(history)?;
    let column = |k: usize| history.iter().map(|r| r[k]).collect::<Vec<f64>>();
    match (policy, activation) {
        (Policy::Blend, ActivationKind::Maxout) => wmle_categorical(history, gamma),
        (Policy::Blend, _) => Ok(wmle_dirichlet(history, gamma)?.alpha),
        (Policy::Switch, ActivationKind::Maxout) => (0..p).map(|k| wmle_bernoulli(&column(k), gamma)).collect(),
        (Policy::Switch, _) => (0..p).map(|k| wmle_beta(&column(k), gamma).map(|f| f.theta)).collect(),
    }
}

/// Blending ratios from an optimality history (oldest first) restricted to
/// the configured window. Fewer than two rows gives uniform ratios.
pub fn decide_psi(cfg: &BanditConfig, history: &[Vec<f64>], n_arms: usize) -> Result<Vec<f64>> {
    if history.len() < 2 {
        return Ok(vec![1.0 / n_arms as f64; n_arms]);
    }
    let start = history.len().saturating_sub(cfg.window);
    let theta = estimate_theta(&history[start..], cfg.activation, cfg.policy, cfg.gamma)?;
    Ok(policy_ratio(&theta, cfg.policy))
}

/// `Σ_p ψ_p w_p`, not renormalized.
pub fn eclectic_weights(psi: &[f64], arms: &[Vec<f64>]) -> Vec<f64> {
    assert_eq!(psi.len(), arms.len(), "one ratio per arm");
    let d = arms.first().map_or(0, |a| a.len());
    let mut out = vec![0.0; d];
    for (p, w) in psi.iter().zip(arms) {
        for (o, x) in out.iter_mut().zip(w) {
            *o += p * x;
        }
    }
    out
}
