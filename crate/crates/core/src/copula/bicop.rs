//! Bivariate (pair) copulas.
//!
//! `h1(u, v) = P(U <= u | V = v)` and `h2(u, v) = P(V <= v | U = u)`.
//! Rotations are counter-clockwise: 90° gives `v - C(1-u, v)`, 180° the
//! survival copula and 270° `u - C(u, 1-v)`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::kendall::kendall_tau;
use crate::error::{Error, Result};
use crate::optim::{brent_minimize, solve_increasing};
use crate::rng;
use crate::special::{ln_gamma_fn, norm_cdf, norm_ppf, t_cdf, t_ppf};

/// Inputs (and h-function outputs) are clamped into `[EPS, 1 - EPS]`.
pub const EPS: f64 = 1e-10;
/// Student-t pair copulas with larger fitted `nu` collapse to Gaussian.
pub const T_NU_CAP: f64 = 50.0;

const CLAYTON_MAX: f64 = 28.0;
const GUMBEL_MAX: f64 = 17.0;
const JOE_MAX: f64 = 30.0;
const FRANK_MAX: f64 = 35.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BicopFamily {
    Independence,
    Gaussian,
    StudentT,
    Clayton,
    Gumbel,
    Frank,
    Joe,
}

impl BicopFamily {
    pub fn n_params(self) -> usize {
        match self {
            BicopFamily::Independence => 0,
            BicopFamily::StudentT => 2,
            _ => 1,
        }
    }

    /// Families whose negative dependence comes from 90°/270° rotations.
    pub fn is_rotatable(self) -> bool {
        matches!(self, BicopFamily::Clayton | BicopFamily::Gumbel | BicopFamily::Joe)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u16", try_from = "u16")]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl From<Rotation> for u16 {
    fn from(r: Rotation) -> u16 {
        match r {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }
}

impl TryFrom<u16> for Rotation {
    type Error = String;
    fn try_from(v: u16) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Rotation::R0),
            90 => Ok(Rotation::R90),
            180 => Ok(Rotation::R180),
            270 => Ok(Rotation::R270),
            _ => Err(format!("invalid rotation {v}")),
        }
    }
}

impl Rotation {
    /// Rotation of the copula of `(V, U)`.
    pub fn transposed(self) -> Self {
        match self {
            Rotation::R90 => Rotation::R270,
            Rotation::R270 => Rotation::R90,
            r => r,
        }
    }

    fn flips(self) -> (bool, bool) {
        match self {
            Rotation::R0 => (false, false),
            Rotation::R90 => (true, false),
            Rotation::R180 => (true, true),
            Rotation::R270 => (false, true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicopModel {
    pub family: BicopFamily,
    pub rotation: Rotation,
    /// Gaussian `[rho]`, StudentT `[rho, nu]`, Archimedean `[theta]`.
    pub params: Vec<f64>,
    #[serde(with = "crate::serde_util::nullable_f64")]
    pub aic: f64,
}

fn clamp(u: f64) -> f64 {
    u.clamp(EPS, 1.0 - EPS)
}

fn flip(u: f64, f: bool) -> f64 {
    if f {
        1.0 - u
    } else {
        u
    }
}

impl BicopModel {
    pub fn independence() -> Self {
        BicopModel { family: BicopFamily::Independence, rotation: Rotation::R0, params: vec![], aic: 0.0 }
    }

    pub fn new(family: BicopFamily, rotation: Rotation, params: Vec<f64>) -> Result<Self> {
        let m = BicopModel { family, rotation, params, aic: f64::NAN };
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        let p = &self.params;
        let bad = || Error::invalid(format!("inadmissible {:?} parameters {p:?}", self.family));
        if p.len() != self.family.n_params() || p.iter().any(|x| !x.is_finite()) {
            return Err(bad());
        }
        if self.rotation != Rotation::R0 && !self.family.is_rotatable() {
            return Err(Error::invalid(format!("{:?} takes no rotation", self.family)));
        }
        let ok = match self.family {
            BicopFamily::Independence => true,
            BicopFamily::Gaussian => p[0].abs() < 1.0,
            BicopFamily::StudentT => p[0].abs() < 1.0 && p[1] > 2.0,
            BicopFamily::Clayton => p[0] > 0.0,
            BicopFamily::Gumbel | BicopFamily::Joe => p[0] >= 1.0,
            BicopFamily::Frank => true,
        };
        if ok {
            Ok(())
        } else {
            Err(bad())
        }
    }

    /// Copula of `(V, U)`.
    pub fn transposed(&self) -> Self {
        BicopModel { rotation: self.rotation.transposed(), ..self.clone() }
    }

    pub fn logpdf(&self, u: f64, v: f64) -> f64 {
        let (fu, fv) = self.rotation.flips();
        base_logpdf(self.family, &self.params, flip(clamp(u), fu), flip(clamp(v), fv))
    }

    pub fn hfunc1(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp(u), clamp(v));
        let (fu, fv) = self.rotation.flips();
        let h = base_h(self.family, &self.params, flip(u, fu), flip(v, fv));
        clamp(flip(h, fu))
    }

    pub fn hfunc2(&self, u: f64, v: f64) -> f64 {
        self.transposed().hfunc1(v, u)
    }

    /// Inverse of [`hfunc1`](Self::hfunc1) in its first argument.
    pub fn hinv1(&self, w: f64, v: f64) -> f64 {
        let (w, v) = (clamp(w), clamp(v));
        let (fu, fv) = self.rotation.flips();
        let u = base_hinv(self.family, &self.params, flip(w, fu), flip(v, fv));
        clamp(flip(u, fu))
    }

    /// Inverse of [`hfunc2`](Self::hfunc2) in `v`.
    pub fn hinv2(&self, w: f64, u: f64) -> f64 {
        self.transposed().hinv1(w, u)
    }

    /// Copula CDF. Closed forms exist for the independence and Archimedean
    /// families only; elliptical families return `None`.
    pub fn cdf(&self, u: f64, v: f64) -> Option<f64> {
        let c = |a: f64, b: f64| base_cdf(self.family, &self.params, a, b);
        Some(match self.rotation {
            Rotation::R0 => c(u, v)?,
            Rotation::R90 => v - c(1.0 - u, v)?,
            Rotation::R180 => u + v - 1.0 + c(1.0 - u, 1.0 - v)?,
            Rotation::R270 => u - c(u, 1.0 - v)?,
        })
    }

    /// Theoretical Kendall's tau.
    pub fn tau(&self) -> f64 {
        let t = base_tau(self.family, &self.params);
        match self.rotation {
            Rotation::R90 | Rotation::R270 => -t,
            _ => t,
        }
    }

    pub fn loglik(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).map(|(a, b)| self.logpdf(*a, *b)).sum()
    }
}

pub fn bicop_hfunc(m: &BicopModel, u: f64, v: f64) -> f64 {
    m.hfunc1(u, v)
}

pub fn bicop_hinv(m: &BicopModel, p: f64, v: f64) -> f64 {
    m.hinv1(p, v)
}

// ---------------------------------------------------------------------------
// Unrotated families on clamped inputs.

fn t_pair_const(nu: f64) -> f64 {
    ln_gamma_fn(0.5 * (nu + 2.0)) + ln_gamma_fn(0.5 * nu) - 2.0 * ln_gamma_fn(0.5 * (nu + 1.0))
}

fn gauss_logpdf_xy(rho: f64, x: f64, y: f64) -> f64 {
    let r2 = 1.0 - rho * rho;
    -0.5 * r2.ln() - (rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * r2)
}

fn t_logpdf_xy(rho: f64, nu: f64, c: f64, x: f64, y: f64) -> f64 {
    let r2 = 1.0 - rho * rho;
    c - 0.5 * r2.ln() - 0.5 * (nu + 2.0) * ((x * x - 2.0 * rho * x * y + y * y) / (nu * r2)).ln_1p()
        + 0.5 * (nu + 1.0) * ((x * x / nu).ln_1p() + (y * y / nu).ln_1p())
}

fn base_logpdf(fam: BicopFamily, p: &[f64], u: f64, v: f64) -> f64 {
    match fam {
        BicopFamily::Independence => 0.0,
        BicopFamily::Gaussian => gauss_logpdf_xy(p[0], norm_ppf(u), norm_ppf(v)),
        BicopFamily::StudentT => t_logpdf_xy(p[0], p[1], t_pair_const(p[1]), t_ppf(u, p[1]), t_ppf(v, p[1])),
        BicopFamily::Clayton => {
            let th = p[0];
            let (lu, lv) = (u.ln(), v.ln());
            let t = (-th * lu).exp() + (-th * lv).exp() - 1.0;
            (1.0 + th).ln() - (th + 1.0) * (lu + lv) - (2.0 + 1.0 / th) * t.ln()
        }
        BicopFamily::Gumbel => {
            let th = p[0];
            let (x, y) = (-u.ln(), -v.ln());
            let (lx, ly) = (x.ln(), y.ln());
            let s = (th * lx).exp() + (th * ly).exp();
            let a = s.powf(1.0 / th);
            -a + x + y + (th - 1.0) * (lx + ly) + (1.0 / th - 2.0) * s.ln() + (a + th - 1.0).ln()
        }
        BicopFamily::Frank => {
            let th = p[0];
            if th.abs() < 1e-10 {
                return 0.0;
            }
            let a = (-th).exp_m1();
            let x = (-th * u).exp_m1();
            let y = (-th * v).exp_m1();
            (-th * a).ln() - th * (u + v) - 2.0 * (a + x * y).abs().ln()
        }
        BicopFamily::Joe => {
            let th = p[0];
            let (lu, lv) = ((1.0 - u).ln(), (1.0 - v).ln());
            let (a, b) = ((th * lu).exp(), (th * lv).exp());
            let s = a + b - a * b;
            (1.0 / th - 2.0) * s.ln() + (th - 1.0) * (lu + lv) + (th - 1.0 + s).ln()
        }
    }
}

fn base_h(fam: BicopFamily, p: &[f64], u: f64, v: f64) -> f64 {
    match fam {
        BicopFamily::Independence => u,
        BicopFamily::Gaussian => {
            let rho = p[0];
            norm_cdf((norm_ppf(u) - rho * norm_ppf(v)) / (1.0 - rho * rho).sqrt())
        }
        BicopFamily::StudentT => {
            let (rho, nu) = (p[0], p[1]);
            let (x, y) = (t_ppf(u, nu), t_ppf(v, nu));
            let scale = ((nu + y * y) * (1.0 - rho * rho) / (nu + 1.0)).sqrt();
            t_cdf((x - rho * y) / scale, nu + 1.0)
        }
        BicopFamily::Clayton => {
            let th = p[0];
            let (lu, lv) = (u.ln(), v.ln());
            let t = (-th * lu).exp() + (-th * lv).exp() - 1.0;
            (-(th + 1.0) * lv - (1.0 + 1.0 / th) * t.ln()).exp()
        }
        BicopFamily::Gumbel => {
            let th = p[0];
            let (x, y) = (-u.ln(), -v.ln());
            let s = x.powf(th) + y.powf(th);
            let a = s.powf(1.0 / th);
            (-a + (1.0 - th) * a.ln() + (th - 1.0) * y.ln() + y).exp()
        }
        BicopFamily::Frank => {
            let th = p[0];
            if th.abs() < 1e-10 {
                return u;
            }
            let a = (-th).exp_m1();
            let x = (-th * u).exp_m1();
            let y = (-th * v).exp_m1();
            x * (-th * v).exp() / (a + x * y)
        }
        BicopFamily::Joe => {
            let th = p[0];
            let (ub, vb) = (1.0 - u, 1.0 - v);
            let (a, b) = (ub.powf(th), vb.powf(th));
            let s = a + b - a * b;
            vb.powf(th - 1.0) * (1.0 - a) * s.powf(1.0 / th - 1.0)
        }
    }
}

fn base_hinv(fam: BicopFamily, p: &[f64], w: f64, v: f64) -> f64 {
    match fam {
        BicopFamily::Independence => w,
        BicopFamily::Gaussian => {
            let rho = p[0];
            norm_cdf(norm_ppf(w) * (1.0 - rho * rho).sqrt() + rho * norm_ppf(v))
        }
        BicopFamily::StudentT => {
            let (rho, nu) = (p[0], p[1]);
            let y = t_ppf(v, nu);
            let scale = ((nu + y * y) * (1.0 - rho * rho) / (nu + 1.0)).sqrt();
            t_cdf(t_ppf(w, nu + 1.0) * scale + rho * y, nu)
        }
        BicopFamily::Clayton => {
            let th = p[0];
            let inner = 1.0 + (-th * v.ln()).exp() * (-th / (1.0 + th) * w.ln()).exp_m1();
            inner.powf(-1.0 / th)
        }
        BicopFamily::Frank => {
            let th = p[0];
            if th.abs() < 1e-10 {
                return w;
            }
            let a = (-th).exp_m1();
            let b = (-th * v).exp();
            let x = w * a / (b - w * (-th * v).exp_m1());
            -x.ln_1p() / th
        }
        BicopFamily::Gumbel | BicopFamily::Joe => solve_increasing(
            |u| base_h(fam, p, u, v),
            |u| base_logpdf(fam, p, u, v).exp(),
            w,
            EPS,
            1.0 - EPS,
            1e-15,
        ),
    }
}

fn base_cdf(fam: BicopFamily, p: &[f64], u: f64, v: f64) -> Option<f64> {
    let th = p.first().copied().unwrap_or(0.0);
    Some(match fam {
        BicopFamily::Independence => u * v,
        BicopFamily::Gaussian | BicopFamily::StudentT => return None,
        BicopFamily::Clayton => (u.powf(-th) + v.powf(-th) - 1.0).powf(-1.0 / th),
        BicopFamily::Gumbel => (-((-u.ln()).powf(th) + (-v.ln()).powf(th)).powf(1.0 / th)).exp(),
        BicopFamily::Frank => {
            if th.abs() < 1e-10 {
                u * v
            } else {
                -((-th * u).exp_m1() * (-th * v).exp_m1() / (-th).exp_m1()).ln_1p() / th
            }
        }
        BicopFamily::Joe => {
            let (a, b) = ((1.0 - u).powf(th), (1.0 - v).powf(th));
            1.0 - (a + b - a * b).powf(1.0 / th)
        }
    })
}

/// Debye function `D1(x) = (1/x) ∫_0^x t / (e^t - 1) dt` by Simpson's rule.
fn debye1(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        return 1.0 - x / 4.0;
    }
    if x < 0.0 {
        return debye1(-x) - x / 2.0;
    }
    let n = 2000;
    let h = x / n as f64;
    let f = |t: f64| if t == 0.0 { 1.0 } else { t / t.exp_m1() };
    let mut s = f(0.0) + f(x);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0 / x
}

fn base_tau(fam: BicopFamily, p: &[f64]) -> f64 {
    match fam {
        BicopFamily::Independence => 0.0,
        BicopFamily::Gaussian | BicopFamily::StudentT => 2.0 / std::f64::consts::PI * p[0].asin(),
        BicopFamily::Clayton => p[0] / (p[0] + 2.0),
        BicopFamily::Gumbel => 1.0 - 1.0 / p[0],
        BicopFamily::Frank => {
            let th = p[0];
            if th.abs() < 1e-8 {
                0.0
            } else {
                1.0 - 4.0 / th * (1.0 - debye1(th))
            }
        }
        BicopFamily::Joe => {
            let th = p[0];
            let mut s = 0.0;
            for k in 1..200_000 {
                let k = k as f64;
                s += 1.0 / (k * (th * k + 2.0) * (th * (k - 1.0) + 2.0));
            }
            1.0 - 4.0 * s
        }
    }
}

// ---------------------------------------------------------------------------
// Estimation

/// Independence test on Kendall's tau (asymptotic normal statistic); returns
/// the two-sided p-value.
pub fn independence_pvalue(tau: f64, n: usize) -> f64 {
    let nf = n as f64;
    let stat = (9.0 * nf * (nf - 1.0) / (2.0 * (2.0 * nf + 5.0))).sqrt() * tau.abs();
    2.0 * (1.0 - norm_cdf(stat))
}

fn brent(f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    brent_minimize(f, lo, hi, tol, 200)
}

fn archimedean_loglik(fam: BicopFamily, th: f64, u: &[f64], v: &[f64]) -> f64 {
    let p = [th];
    let mut s = 0.0;
    for (a, b) in u.iter().zip(v) {
        s += base_logpdf(fam, &p, *a, *b);
    }
    if s.is_finite() {
        s
    } else {
        f64::NEG_INFINITY
    }
}

fn neg(ll: f64) -> f64 {
    if ll.is_finite() {
        -ll
    } else {
        f64::INFINITY
    }
}

fn fit_gaussian(x: &[f64], y: &[f64]) -> (Vec<f64>, f64) {
    let ll = |rho: f64| x.iter().zip(y).map(|(a, b)| gauss_logpdf_xy(rho, *a, *b)).sum::<f64>();
    let (rho, nll) = brent(|r| neg(ll(r)), -0.9999, 0.9999, 1e-9);
    (vec![rho], -nll)
}

fn fit_student(u: &[f64], v: &[f64]) -> (Vec<f64>, f64) {
    let profile = |s: f64| {
        let nu = 2.0 + s.exp();
        let x: Vec<f64> = u.iter().map(|a| t_ppf(*a, nu)).collect();
        let y: Vec<f64> = v.iter().map(|b| t_ppf(*b, nu)).collect();
        let c = t_pair_const(nu);
        let ll = |rho: f64| x.iter().zip(&y).map(|(a, b)| t_logpdf_xy(rho, nu, c, *a, *b)).sum::<f64>();
        let (rho, nll) = brent(|r| neg(ll(r)), -0.9999, 0.9999, 1e-9);
        (rho, nll)
    };
    let (s, nll) = brent(|s| profile(s).1, 0.05f64.ln(), (T_NU_CAP - 2.0).ln(), 1e-3);
    let (rho, _) = profile(s);
    (vec![rho, 2.0 + s.exp()], -nll)
}

fn fit_one_param(fam: BicopFamily, u: &[f64], v: &[f64]) -> (Vec<f64>, f64) {
    let (to_theta, lo, hi): (fn(f64) -> f64, f64, f64) = match fam {
        BicopFamily::Clayton => (|s| s.exp(), 1e-4f64.ln(), CLAYTON_MAX.ln()),
        BicopFamily::Gumbel => (|s| 1.0 + s.exp(), 1e-4f64.ln(), (GUMBEL_MAX - 1.0).ln()),
        BicopFamily::Joe => (|s| 1.0 + s.exp(), 1e-4f64.ln(), (JOE_MAX - 1.0).ln()),
        BicopFamily::Frank => (|s| s, -FRANK_MAX, FRANK_MAX),
        _ => unreachable!(),
    };
    let (s, nll) = brent(|s| neg(archimedean_loglik(fam, to_theta(s), u, v)), lo, hi, 1e-8);
    (vec![to_theta(s)], -nll)
}

/// Fit one family at one rotation by maximum likelihood.
pub fn fit_bicop_family(u: &[f64], v: &[f64], family: BicopFamily, rotation: Rotation) -> Result<BicopModel> {
    if u.len() != v.len() {
        return Err(Error::invalid("pair copula inputs differ in length"));
    }
    let (fu, fv) = rotation.flips();
    let bu: Vec<f64> = u.iter().map(|a| flip(clamp(*a), fu)).collect();
    let bv: Vec<f64> = v.iter().map(|b| flip(clamp(*b), fv)).collect();
    let (params, ll) = match family {
        BicopFamily::Independence => (vec![], 0.0),
        BicopFamily::Gaussian => {
            let x: Vec<f64> = bu.iter().map(|a| norm_ppf(*a)).collect();
            let y: Vec<f64> = bv.iter().map(|b| norm_ppf(*b)).collect();
            fit_gaussian(&x, &y)
        }
        BicopFamily::StudentT => {
            let (p, ll) = fit_student(&bu, &bv);
            if p[1] >= T_NU_CAP - 0.5 {
                return fit_bicop_family(u, v, BicopFamily::Gaussian, Rotation::R0);
            }
            (p, ll)
        }
        _ => fit_one_param(family, &bu, &bv),
    };
    if !ll.is_finite() {
        return Err(Error::Degenerate(format!("{family:?} pair-copula likelihood is not finite")));
    }
    let mut m = BicopModel::new(family, rotation, params)?;
    m.aic = 2.0 * family.n_params() as f64 - 2.0 * ll;
    Ok(m)
}

/// Candidate (family, rotation) pairs consistent with the sign of `tau`.
fn candidates(families: &[BicopFamily], tau: f64) -> Vec<(BicopFamily, Rotation)> {
    let mut fams: Vec<BicopFamily> = families.to_vec();
    fams.sort();
    fams.dedup();
    let mut out = Vec::new();
    for f in fams {
        match f {
            BicopFamily::Independence => {}
            f if f.is_rotatable() => {
                if tau >= 0.0 {
                    out.push((f, Rotation::R0));
                    out.push((f, Rotation::R180));
                } else {
                    out.push((f, Rotation::R90));
                    out.push((f, Rotation::R270));
                }
            }
            f => out.push((f, Rotation::R0)),
        }
    }
    out
}

/// Minimum-AIC pair copula over `families` (Independence, with AIC 0, is
/// always a candidate). Ties go to fewer parameters, then declaration order.
pub fn fit_bicop(u: &[f64], v: &[f64], families: &[BicopFamily]) -> Result<BicopModel> {
    fit_bicop_with(u, v, families, None)
}

/// As [`fit_bicop`]; with `indep_level = Some(a)` Independence is chosen
/// outright when the tau-based independence test does not reject at level `a`.
pub fn fit_bicop_with(u: &[f64], v: &[f64], families: &[BicopFamily], indep_level: Option<f64>) -> Result<BicopModel> {
    let n = u.len();
    if n != v.len() {
        return Err(Error::invalid("pair copula inputs differ in length"));
    }
    if n < 30 {
        return Err(Error::invalid(format!("pair copula fit needs at least 30 observations, got {n}")));
    }
    if u.iter().chain(v).any(|x| !(*x > 0.0 && *x < 1.0)) {
        return Err(Error::invalid("pair copula inputs must lie in (0, 1)"));
    }
    let tau = kendall_tau(u, v)?;
    if let Some(level) = indep_level {
        if independence_pvalue(tau, n) > level {
            return Ok(BicopModel::independence());
        }
    }
    let mut best = BicopModel::independence();
    let mut fitted = 0;
    for (fam, rot) in candidates(families, tau) {
        match fit_bicop_family(u, v, fam, rot) {
            Ok(m) => {
                fitted += 1;
                let key = |m: &BicopModel| (m.aic, m.family.n_params(), m.family, m.rotation);
                if key(&m) < key(&best) {
                    best = m;
                }
            }
            Err(e) => log::debug!("pair copula {fam:?}/{rot:?} failed: {e}"),
        }
    }
    if fitted == 0 && families.iter().any(|f| *f != BicopFamily::Independence) {
        log::warn!("all pair-copula fits failed; using Independence");
    }
    Ok(best)
}

/// Draw `n` pairs: `v` uniform, `u = hinv1(w, v)`.
pub fn sample_bicop(m: &BicopModel, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng::from_seed(seed);
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        let vv: f64 = r.random();
        let w: f64 = r.random();
        u.push(m.hinv1(w, vv));
        v.push(vv);
    }
    (u, v)
}
