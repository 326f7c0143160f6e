//! One-period proxy objectives evaluated on a scenario matrix, all in the
//! maximization convention.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value returned for infeasible or undefined evaluations.
pub const SENTINEL: f64 = f64::NEG_INFINITY;
/// Kelly requires `1 + r_p` above this on every scenario.
pub const KELLY_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ObjectiveKind {
    Kelly,
    KellyExpansion4,
    MinVariance,
    MaxExpRetn,
    MinDownsideFreq,
    MinDownsideVariance,
    MaxSharpe,
    MaxSortino,
    MaxBernadoLedoit,
    MinVaR(f64),
    MinES(f64),
    LongParity,
    ShortParity,
    VarianceParity,
}

impl ObjectiveKind {
    pub fn new_var(alpha: f64) -> Result<Self> {
        check_alpha(alpha).map(|_| ObjectiveKind::MinVaR(alpha))
    }

    pub fn new_es(alpha: f64) -> Result<Self> {
        check_alpha(alpha).map(|_| ObjectiveKind::MinES(alpha))
    }

    /// The objectives studied in the backtests, with α ∈ {0.05, 0.1, 0.5}.
    pub fn catalogue() -> Vec<ObjectiveKind> {
        use ObjectiveKind::*;
        let mut v = vec![
            Kelly,
            MinVariance,
            MaxExpRetn,
            MinDownsideFreq,
            MinDownsideVariance,
            MaxSharpe,
            MaxSortino,
            MaxBernadoLedoit,
        ];
        for a in [0.05, 0.1, 0.5] {
            v.push(MinVaR(a));
        }
        for a in [0.05, 0.1, 0.5] {
            v.push(MinES(a));
        }
        v.extend([LongParity, ShortParity, VarianceParity]);
        v
    }

    pub fn label(&self) -> String {
        self.to_string()
    }

    pub fn is_parity(&self) -> bool {
        matches!(self, ObjectiveKind::LongParity | ObjectiveKind::ShortParity | ObjectiveKind::VarianceParity)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("quantile level {alpha} is outside (0, 1)")))
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ObjectiveKind::*;
        match self {
            Kelly => write!(f, "Kelly"),
            KellyExpansion4 => write!(f, "KellyExpansion4"),
            MinVariance => write!(f, "minVariance"),
            MaxExpRetn => write!(f, "maxExpRetn"),
            MinDownsideFreq => write!(f, "minDownsideFreq"),
            MinDownsideVariance => write!(f, "minDownsideVariance"),
            MaxSharpe => write!(f, "maxSharpeRatio"),
            MaxSortino => write!(f, "maxSortinoRatio"),
            MaxBernadoLedoit => write!(f, "maxBernadoLedoitRatio"),
            MinVaR(a) => write!(f, "minVaR {a}"),
            MinES(a) => write!(f, "minES {a}"),
            LongParity => write!(f, "LongParity"),
            ShortParity => write!(f, "ShortParity"),
            VarianceParity => write!(f, "VarianceParity"),
        }
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        use ObjectiveKind::*;
        let toks: Vec<&str> = s.split_whitespace().collect();
        let alpha = |t: &str| t.parse::<f64>().map_err(|_| Error::UnknownLabel(s.to_string()));
        Ok(match toks.as_slice() {
            ["Kelly"] => Kelly,
            ["KellyExpansion4"] => KellyExpansion4,
            ["minVariance"] => MinVariance,
            ["maxExpRetn"] => MaxExpRetn,
            ["minDownsideFreq"] => MinDownsideFreq,
            ["minDownsideVariance"] => MinDownsideVariance,
            ["maxSharpeRatio"] => MaxSharpe,
            ["maxSortinoRatio"] => MaxSortino,
            ["maxBernadoLedoitRatio"] => MaxBernadoLedoit,
            ["minVaR", a] => ObjectiveKind::new_var(alpha(a)?)?,
            ["minES", a] => ObjectiveKind::new_es(alpha(a)?)?,
            ["LongParity"] => LongParity,
            ["ShortParity"] => ShortParity,
            ["VarianceParity"] => VarianceParity,
            _ => return Err(Error::UnknownLabel(s.to_string())),
        })
    }
}

impl From<ObjectiveKind> for String {
    fn from(k: ObjectiveKind) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for ObjectiveKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Inputs shared by every objective at one rebalance.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveContext<'a> {
    /// N x D simulated simple returns.
    pub scenarios: &'a DMatrix<f64>,
    /// Weights before rebalancing.
    pub w1: &'a [f64],
    pub c: f64,
    /// Cost aversion: scales the cost charged inside the objective.
    pub v: f64,
    /// Use the classical gain/loss ratio instead of the printed
    /// Bernado-Ledoit form.
    pub classical_bernado_ledoit: bool,
}

impl<'a> ObjectiveContext<'a> {
    pub fn new(scenarios: &'a DMatrix<f64>, w1: &'a [f64], c: f64, v: f64) -> Result<Self> {
        if scenarios.ncols() != w1.len() {
            return Err(Error::invalid(format!(
                "scenario matrix has {} assets but w1 has {}",
                scenarios.ncols(),
                w1.len()
            )));
        }
        if scenarios.nrows() == 0 {
            return Err(Error::invalid("scenario matrix is empty"));
        }
        if !(c >= 0.0 && v >= 0.0) {
            return Err(Error::invalid("transaction cost and cost aversion must be non-negative"));
        }
        Ok(ObjectiveContext { scenarios, w1, c, v, classical_bernado_ledoit: false })
    }

    pub fn dim(&self) -> usize {
        self.w1.len()
    }

    fn cost(&self, w0: &[f64]) -> f64 {
        self.c * self.v * w0.iter().zip(self.w1).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

/// `r_p = R w0' - c v |w0 - w1|_1`, one entry per scenario.
pub fn portfolio_return_scenarios(w0: &[f64], ctx: &ObjectiveContext) -> Vec<f64> {
    let mut out = Vec::with_capacity(ctx.scenarios.nrows());
    portfolio_returns_into(w0, ctx, &mut out);
    out
}

fn portfolio_returns_into(w0: &[f64], ctx: &ObjectiveContext, out: &mut Vec<f64>) {
    assert_eq!(w0.len(), ctx.dim(), "weight dimension mismatch");
    let r = ctx.scenarios;
    let cost = ctx.cost(w0);
    out.clear();
    out.resize(r.nrows(), -cost);
    // Column-major storage: accumulate column by column.
    for (d, w) in w0.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        for (o, x) in out.iter_mut().zip(r.column(d).iter()) {
            *o += x * w;
        }
    }
}

/// Fourth-order expansion of `log(1 + x)` summed over every cell of
/// `R ⊙ w0`.
pub fn kelly_expansion4(w0: &[f64], ctx: &ObjectiveContext) -> f64 {
    let r = ctx.scenarios;
    let mut s = 0.0;
    for (d, w) in w0.iter().enumerate() {
        for x in r.column(d).iter() {
            let y = x * w;
            s += y * (1.0 - y * (0.5 - y * (1.0 / 3.0 - 0.25 * y)));
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    /// A conditional-on-loss measure had no losing scenario and contributed 0.
    pub empty_downside: bool,
}

/// Empirical α-quantile by lower interpolation: order statistic `ceil(α N)`.
/// Reorders `r`.
pub fn empirical_var(r: &mut [f64], alpha: f64) -> f64 {
    let k = quantile_index(r.len(), alpha);
    *r.select_nth_unstable_by(k, f64::total_cmp).1
}

/// Mean of the lower α tail with a fractional weight on the quantile
/// scenario. Reorders `r`.
pub fn empirical_es(r: &mut [f64], alpha: f64) -> f64 {
    let n = r.len();
    let k = quantile_index(n, alpha);
    let (below, q, _) = r.select_nth_unstable_by(k, f64::total_cmp);
    let q = *q;
    let an = alpha * n as f64;
    (below.iter().sum::<f64>() + (an - k as f64) * q) / an
}

fn quantile_index(n: usize, alpha: f64) -> usize {
    ((alpha * n as f64).ceil() as usize).clamp(1, n) - 1
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn cosine_with_ones(x: &[f64]) -> f64 {
    let n2 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n2 == 0.0 {
        return SENTINEL;
    }
    x.iter().sum::<f64>() / (n2 * (x.len() as f64).sqrt())
}

pub fn evaluate_objective(kind: ObjectiveKind, w0: &[f64], ctx: &ObjectiveContext) -> f64 {
    evaluate_objective_flagged(kind, w0, ctx).value
}

pub fn evaluate_objective_flagged(kind: ObjectiveKind, w0: &[f64], ctx: &ObjectiveContext) -> Evaluation {
    let mut buf = Vec::new();
    evaluate_with_buffer(kind, w0, ctx, &mut buf)
}

/// Evaluation reusing `buf` for the portfolio return vector.
pub(crate) fn evaluate_with_buffer(kind: ObjectiveKind, w0: &[f64], ctx: &ObjectiveContext, buf: &mut Vec<f64>) -> Evaluation {
    use ObjectiveKind::*;
    let ok = |value: f64| Evaluation { value: if value.is_nan() { SENTINEL } else { value }, empty_downside: false };
    match kind {
        LongParity => return ok(cosine_with_ones(w0)),
        ShortParity => return ok(-cosine_with_ones(w0)),
        VarianceParity => {
            let n = ctx.scenarios.nrows() as f64;
            let x: Vec<f64> = w0
                .iter()
                .enumerate()
                .map(|(d, w)| {
                    // The per-asset cost is constant across scenarios, so it
                    // shifts the contribution without changing its variance.
                    let col = ctx.scenarios.column(d);
                    let m = col.mean();
                    let var = col.iter().map(|r| (r - m).powi(2)).sum::<f64>() / n * w * w;
                    w * var
                })
                .collect();
            return ok(cosine_with_ones(&x));
        }
        KellyExpansion4 => {
            return ok(kelly_expansion4(w0, ctx) / ctx.scenarios.nrows() as f64 - ctx.cost(w0));
        }
        _ => {}
    }
    portfolio_returns_into(w0, ctx, buf);
    let r = buf.as_mut_slice();
    let n = r.len() as f64;
    match kind {
        Kelly => {
            if r.iter().any(|x| 1.0 + x <= KELLY_FLOOR) {
                return ok(SENTINEL);
            }
            ok(r.iter().map(|x| x.ln_1p()).sum::<f64>() / n)
        }
        MinVariance => {
            let m = mean(r);
            ok(-r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
        }
        MaxExpRetn => ok(mean(r)),
        MinDownsideFreq => ok(-(r.iter().filter(|x| **x < 0.0).count() as f64) / n),
        MinDownsideVariance => {
            let (s, k) = downside(r, |x| x * x);
            match k {
                0 => Evaluation { value: 0.0, empty_downside: true },
                _ => ok(-s / k as f64),
            }
        }
        MaxSharpe => {
            let m = mean(r);
            let sd = (r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
            ok(offset_log_ratio(m, sd))
        }
        MaxSortino => {
            let m = mean(r);
            let (s, k) = downside(r, |x| x * x);
            let sd = if k == 0 { 0.0 } else { (s / k as f64).sqrt() };
            Evaluation { value: offset_log_ratio(m, sd), empty_downside: k == 0 }
        }
        MaxBernadoLedoit => {
            let abs_mean = r.iter().map(|x| x.abs()).sum::<f64>() / n;
            let (s, k) = downside(r, f64::abs);
            let loss = if k == 0 { 0.0 } else { s / k as f64 };
            let value = if ctx.classical_bernado_ledoit {
                let gain = r.iter().filter(|x| **x > 0.0).sum::<f64>() / n;
                let loss = s / n;
                if loss > 0.0 && gain > 0.0 { (gain / loss).ln() } else { SENTINEL }
            } else if abs_mean > 0.0 {
                abs_mean.ln() - (abs_mean + loss).ln()
            } else {
                SENTINEL
            };
            Evaluation { value: if value.is_nan() { SENTINEL } else { value }, empty_downside: k == 0 }
        }
        MinVaR(a) => ok(empirical_var(r, a)),
        MinES(a) => ok(empirical_es(r, a)),
        LongParity | ShortParity | VarianceParity | KellyExpansion4 => unreachable!(),
    }
}

fn downside(r: &[f64], f: impl Fn(f64) -> f64) -> (f64, usize) {
    r.iter().filter(|x| **x < 0.0).fold((0.0, 0), |(s, k), x| (s + f(*x), k + 1))
}

/// `log(100 + m / sd)`, the sentinel when undefined.
fn offset_log_ratio(m: f64, sd: f64) -> f64 {
    if !(sd > 0.0) {
        return SENTINEL;
    }
    let v = (100.0 + m / sd).ln();
    if v.is_nan() {
        SENTINEL
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ctx<'a>(r: &'a DMatrix<f64>, w1: &'a [f64], c: f64, v: f64) -> ObjectiveContext<'a> {
        ObjectiveContext::new(r, w1, c, v).unwrap()
    }

    /// Scenarios whose portfolio return under w0 = [1, 0] is exactly `rp`.
    fn single(rp: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(rp.len(), 2, |i, j| if j == 0 { rp[i] } else { 0.0 })
    }

    #[test]
    fn portfolio_returns_examples() {
        let r = DMatrix::from_row_slice(1, 2, &[0.1, -0.1]);
        let w = [0.5, 0.5];
        assert_eq!(portfolio_return_scenarios(&w, &ctx(&r, &w, 0.005, 3.0)), vec![0.0]);
        let r = DMatrix::from_row_slice(1, 2, &[0.1, 0.0]);
        let got = portfolio_return_scenarios(&[1.0, 0.0], &ctx(&r, &[0.0, 1.0], 0.005, 2.0));
        assert_abs_diff_eq!(got[0], 0.08, epsilon = 1e-15);
        let r = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, -0.3, 0.05]);
        let got = portfolio_return_scenarios(&[0.3, 0.7], &ctx(&r, &[1.0, 0.0], 0.0, 2.0));
        assert_eq!(got, vec![0.1 * 0.3 + 0.2 * 0.7, -0.3 * 0.3 + 0.05 * 0.7]);
    }

    #[test]
    fn es_example_and_var_median() {
        let r = single(&[-2.0, -1.0, 0.0, 1.0]);
        let c = ctx(&r, &[1.0, 0.0], 0.0, 1.0);
        assert_abs_diff_eq!(evaluate_objective(ObjectiveKind::MinES(0.5), &[1.0, 0.0], &c), -1.5, epsilon = 1e-15);
        let r = single(&[3.0, -1.0, 0.5, 2.0, -4.0]);
        let c = ctx(&r, &[1.0, 0.0], 0.0, 1.0);
        assert_eq!(evaluate_objective(ObjectiveKind::MinVaR(0.5), &[1.0, 0.0], &c), 0.5);
    }

    #[test]
    fn sharpe_example() {
        let r = single(&[0.1, -0.1]);
        let c = ctx(&r, &[1.0, 0.0], 0.0, 1.0);
        assert_abs_diff_eq!(evaluate_objective(ObjectiveKind::MaxSharpe, &[1.0, 0.0], &c), 100f64.ln(), epsilon = 1e-15);
        let flat = single(&[0.1, 0.1]);
        let c = ctx(&flat, &[1.0, 0.0], 0.0, 1.0);
        assert_eq!(evaluate_objective(ObjectiveKind::MaxSharpe, &[1.0, 0.0], &c), SENTINEL);
    }

    #[test]
    fn moment_objectives_by_hand() {
        let rp = [0.02, -0.01, 0.03, -0.04];
        let r = single(&rp);
        let c = ctx(&r, &[1.0, 0.0], 0.0, 1.0);
        let w = [1.0, 0.0];
        let m = 0.0;
        let var = (0.02f64.powi(2) + 0.01f64.powi(2) + 0.03f64.powi(2) + 0.04f64.powi(2)) / 4.0 - m;
        assert_abs_diff_eq!(evaluate_objective(ObjectiveKind::MaxExpRetn, &w, &c), 0.0, epsilon = 1e-17);
        assert_abs_diff_eq!(evaluate_objective(ObjectiveKind::MinVariance, &w, &c), -var, epsilon = 1e-17);
        assert_eq!(evaluate_objective(ObjectiveKind::MinDownsideFreq, &w, &c), -0.5);
        let dv = (0.0001 + 0.0016) / 2.0;
        assert_abs_diff_eq!(evaluate_objective(ObjectiveKind::MinDownsideVariance, &w, &c), -dv, epsilon = 1e-17);
        assert_abs_diff_eq!(evaluate_objective(ObjectiveKind::MaxSortino, &w, &c), 100f64.ln(), epsilon = 1e-15);
        let abs_mean: f64 = 0.1 / 4.0;
        let loss = 0.05 / 2.0;
        assert_abs_diff_eq!(
            evaluate_objective(ObjectiveKind::MaxBernadoLedoit, &w, &c),
            abs_mean.ln() - (abs_mean + loss).ln(),
            epsilon = 1e-15
        );
        let mut cc = c;
        cc.classical_bernado_ledoit = true;
        assert_abs_diff_eq!(evaluate_objective(ObjectiveKind::MaxBernadoLedoit, &w, &cc), 0.0, epsilon = 1e-15);
        let kelly = rp.iter().map(|x| (1.0 + x).ln()).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(evaluate_objective(ObjectiveKind::Kelly, &w, &c), kelly, epsilon = 1e-16);
    }

    #[test]
    fn empty_downside_is_flagged() {
        let r = single(&[0.01, 0.02]);
        let c = ctx(&r, &[1.0, 0.0], 0.0, 1.0);
        let e = evaluate_objective_flagged(ObjectiveKind::MinDownsideVariance, &[1.0, 0.0], &c);
        assert_eq!(e, Evaluation { value: 0.0, empty_downside: true });
        assert!(evaluate_objective_flagged(ObjectiveKind::MaxSortino, &[1.0, 0.0], &c).empty_downside);
    }

    #[test]
    fn kelly_guard() {
        let r = single(&[-1.0, 0.5]);
        let c = ctx(&r, &[1.0, 0.0], 0.0, 1.0);
        assert_eq!(evaluate_objective(ObjectiveKind::Kelly, &[1.0, 0.0], &c), SENTINEL);
        assert!(evaluate_objective(ObjectiveKind::Kelly, &[0.5, 0.5], &c).is_finite());
    }

    #[test]
    fn kelly_single_asset_grid_optimum() {
        // 60% at +1, 40% at -1; second asset pays nothing.
        let rp: Vec<f64> = (0..10).map(|i| if i < 6 { 1.0 } else { -1.0 }).collect();
        let r = single(&rp);
        let c = ctx(&r, &[0.0, 1.0], 0.0, 1.0);
        let best = (1..1000)
            .map(|i| i as f64 / 1000.0)
            .max_by(|a, b| {
                let fa = evaluate_objective(ObjectiveKind::Kelly, &[*a, 1.0 - a], &c);
                let fb = evaluate_objective(ObjectiveKind::Kelly, &[*b, 1.0 - b], &c);
                fa.total_cmp(&fb)
            })
            .unwrap();
        assert_abs_diff_eq!(best, 0.2, epsilon = 1e-3);
    }

    #[test]
    fn kelly_expansion_cases() {
        let z = DMatrix::zeros(3, 2);
        assert_eq!(kelly_expansion4(&[0.5, 0.5], &ctx(&z, &[0.5, 0.5], 0.0, 1.0)), 0.0);
        let r = DMatrix::from_row_slice(1, 1, &[0.01]);
        let got = kelly_expansion4(&[1.0], &ctx(&r, &[1.0], 0.0, 1.0));
        assert_abs_diff_eq!(got, 0.01 - 0.00005 + 1e-6 / 3.0 - 0.25e-8, epsilon = 1e-18);
    }

    #[test]
    fn kelly_expansion_tracks_exact_log() {
        let mut rng = crate::rng::from_seed(5);
        use rand::Rng;
        let r = DMatrix::from_fn(500, 3, |_, _| rng.random_range(-0.05..0.05));
        let w = [0.6, -0.3, 0.1];
        let c = ctx(&r, &w, 0.0, 1.0);
        let exact: f64 = (0..3).flat_map(|d| r.column(d).iter().map(move |x| (1.0 + x * w[d]).ln()).collect::<Vec<_>>()).sum();
        let approx = kelly_expansion4(&w, &c);
        assert!(((approx - exact) / exact).abs() < 1e-4);
    }

    #[test]
    fn long_parity_is_maximized_by_equal_weights() {
        let r = DMatrix::zeros(2, 4);
        let w1 = [0.25; 4];
        let c = ctx(&r, &w1, 0.0, 1.0);
        assert_abs_diff_eq!(evaluate_objective(ObjectiveKind::LongParity, &w1, &c), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(evaluate_objective(ObjectiveKind::ShortParity, &[-0.25; 4], &c), 1.0, epsilon = 1e-15);
        assert!(evaluate_objective(ObjectiveKind::LongParity, &[0.4, 0.2, 0.2, 0.2], &c) < 1.0);
    }

    #[test]
    fn variance_parity_prefers_inverse_variance() {
        let mut rng = crate::rng::from_seed(6);
        use rand_distr::{Distribution, StandardNormal};
        let sd = [0.01, 0.02, 0.04];
        let r = DMatrix::from_fn(20_000, 3, |_, j| sd[j] * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
        let c = ctx(&r, &[1.0 / 3.0; 3], 0.0, 1.0);
        // w_d sigma_d(w)^2 = w_d^3 s_d^2 equal across d when w_d ∝ s_d^(-2/3).
        let raw: Vec<f64> = sd.iter().map(|s| s.powf(-2.0 / 3.0)).collect();
        let tot: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / tot).collect();
        let at = evaluate_objective(ObjectiveKind::VarianceParity, &w, &c);
        assert!(at > 0.999, "{at}");
        assert!(evaluate_objective(ObjectiveKind::VarianceParity, &[1.0 / 3.0; 3], &c) < at);
    }

    #[test]
    fn labels_round_trip() {
        for k in ObjectiveKind::catalogue().into_iter().chain([ObjectiveKind::KellyExpansion4]) {
            assert_eq!(k.label().parse::<ObjectiveKind>().unwrap(), k);
        }
        assert_eq!(ObjectiveKind::MinES(0.05).label(), "minES 0.05");
        assert_eq!(ObjectiveKind::MaxSharpe.label(), "maxSharpeRatio");
        assert!("minES 1.5".parse::<ObjectiveKind>().is_err());
        assert!("maxUtility".parse::<ObjectiveKind>().is_err());
        assert_eq!(serde_json::to_string(&ObjectiveKind::MinVaR(0.1)).unwrap(), "\"minVaR 0.1\"");
    }

    /// Argmax of each objective over a 0.01 grid of feasible D = 2 weights
    /// agrees with the argmin of the raw quantity computed independently.
    #[test]
    fn sign_conventions_by_grid() {
        let mut rng = crate::rng::from_seed(7);
        use rand::Rng;
        let r = DMatrix::from_fn(300, 2, |_, j| rng.random_range(-0.05..0.06) * (1.0 + j as f64));
        let w1 = [0.5, 0.5];
        let c = ctx(&r, &w1, 0.005, 1.0);
        let grid: Vec<[f64; 2]> = (0..=200)
            .map(|i| {
                let a = -1.0 + i as f64 * 0.01;
                [a, if a >= 0.0 { 1.0 - a } else { 1.0 + a }]
            })
            .collect();
        let rp = |w: &[f64; 2]| -> Vec<f64> {
            let cost = 0.005 * ((w[0] - 0.5).abs() + (w[1] - 0.5).abs());
            (0..300).map(|i| r[(i, 0)] * w[0] + r[(i, 1)] * w[1] - cost).collect()
        };
        let raw_min: Vec<(ObjectiveKind, Box<dyn Fn(&[f64]) -> f64>)> = vec![
            (ObjectiveKind::MinVariance, Box::new(|x| {
                let m = x.iter().sum::<f64>() / x.len() as f64;
                x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
            })),
            (ObjectiveKind::MaxExpRetn, Box::new(|x| -x.iter().sum::<f64>())),
            (ObjectiveKind::MinDownsideVariance, Box::new(|x| {
                let neg: Vec<f64> = x.iter().copied().filter(|v| *v < 0.0).collect();
                neg.iter().map(|v| v * v).sum::<f64>() / neg.len() as f64
            })),
            (ObjectiveKind::MinES(0.1), Box::new(|x| {
                let mut s = x.to_vec();
                s.sort_by(f64::total_cmp);
                -s[..30].iter().sum::<f64>() / 30.0
            })),
        ];
        for (kind, raw) in raw_min {
            let by_obj = grid
                .iter()
                .max_by(|a, b| evaluate_objective(kind, &a[..], &c).total_cmp(&evaluate_objective(kind, &b[..], &c)))
                .unwrap();
            let by_raw = grid.iter().min_by(|a, b| raw(&rp(a)).total_cmp(&raw(&rp(b)))).unwrap();
            assert_eq!(by_obj, by_raw, "{kind}");
        }
    }

    proptest! {
        #[test]
        fn es_never_exceeds_var(v in prop::collection::vec(-1.0f64..1.0, 1..200), alpha in 0.01f64..0.99) {
            let mut a = v.clone();
            let mut b = v;
            prop_assert!(empirical_es(&mut a, alpha) <= empirical_var(&mut b, alpha) + 1e-15);
        }

        #[test]
        fn parity_scale_invariance(w in prop::collection::vec(-1.0f64..1.0, 3), lambda in 0.01f64..100.0) {
            prop_assume!(w.iter().any(|x| x.abs() > 1e-3));
            let r = DMatrix::zeros(1, 3);
            let c = ctx(&r, &w, 0.0, 1.0);
            let scaled: Vec<f64> = w.iter().map(|x| x * lambda).collect();
            let a = evaluate_objective(ObjectiveKind::LongParity, &w, &c);
            let b = evaluate_objective(ObjectiveKind::LongParity, &scaled, &c);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn zero_cost_is_matrix_product(w in prop::collection::vec(-1.0f64..1.0, 3), seed in 0u64..1000) {
            use rand::Rng;
            let mut rng = crate::rng::from_seed(seed);
            let r = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-0.1..0.1));
            let got = portfolio_return_scenarios(&w, &ctx(&r, &[0.0; 3], 0.0, 3.0));
            let want = &r * nalgebra::DVector::from_column_slice(&w);
            for i in 0..5 {
                prop_assert!((got[i] - want[i]).abs() < 1e-15);
            }
        }
    }
}
