//! Rolling-window backtests of fixed arms and eclectic blends.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::{cosine, decide_psi, eclectic_weights, optimality_with, similarity, BanditConfig};
use crate::data::ReturnPanel;
use crate::error::{Error, Result};
use crate::objectives::{ObjectiveContext, ObjectiveKind};
use crate::optimizer::{solve_weights_with, SolverOptions};
use crate::rng::{self, purpose};
use crate::scenarios::{fit_generative, simulate_returns, GenModel, GenModelSpec, ScenarioConfig};

/// Clamp applied to the arguments of the logit measures.
pub const MEASURE_EPS: f64 = 1e-9;

/// A fixed arm: generative model, objective and cost aversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub model: GenModelSpec,
    pub objective: ObjectiveKind,
    pub v: f64,
}

impl ArmSpec {
    pub fn new(model: GenModelSpec, objective: ObjectiveKind, v: f64) -> Self {
        ArmSpec { model, objective, v }
    }

    /// Identifier such as `mv norm | minVariance | TCAvs 1.0`.
    pub fn id(&self) -> String {
        self.to_string()
    }

    fn needs_scenarios(&self) -> bool {
        !matches!(self.objective, ObjectiveKind::LongParity | ObjectiveKind::ShortParity)
    }
}

impl fmt::Display for ArmSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} | {} | TCAvs {:.1}", self.model, self.objective, self.v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    /// Price rows per return step.
    pub rebalance_step_days: usize,
    pub fit_window_steps: usize,
    pub blend_window_steps: usize,
    pub c: f64,
    pub m: f64,
    pub n_scenarios: usize,
    pub seeds: Vec<u64>,
    pub arms: Vec<ArmSpec>,
    pub bandits: Vec<BanditConfig>,
    pub scenario: ScenarioConfig,
    pub solver: SolverOptions,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            rebalance_step_days: 2,
            fit_window_steps: 91,
            blend_window_steps: 26,
            c: 0.005,
            m: 5.0,
            n_scenarios: 1000,
            seeds: vec![0],
            arms: Vec::new(),
            bandits: Vec::new(),
            scenario: ScenarioConfig::default(),
            solver: SolverOptions::default(),
        }
    }
}

impl BacktestConfig {
    /// Every violated constraint, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.rebalance_step_days == 0 {
            v.push("rebalance_step_days must be positive".into());
        }
        if self.fit_window_steps < 2 {
            v.push("fit_window_steps must be at least 2".into());
        }
        if self.blend_window_steps < 2 {
            v.push("blend_window_steps must be at least 2".into());
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            v.push(format!("transaction cost c = {} must be non-negative", self.c));
        }
        if !(self.m >= 1.0 && self.m.is_finite()) {
            v.push(format!("box multiplier m = {} must be at least 1", self.m));
        }
        if self.n_scenarios < crate::scenarios::MIN_SCENARIOS {
            v.push(format!("n_scenarios must be at least {}", crate::scenarios::MIN_SCENARIOS));
        }
        if self.seeds.is_empty() {
            v.push("at least one seed is required".into());
        }
        for a in &self.arms {
            if !(a.v >= 0.0 && a.v.is_finite()) {
                v.push(format!("arm `{a}` has negative cost aversion"));
            }
        }
        for b in &self.bandits {
            if let Err(e) = b.validate() {
                v.push(format!("bandit `{}`: {e}", b.id()));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(v.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Return row index in the panel.
    pub step: usize,
    pub t: DateTime<Utc>,
    pub w0: Vec<f64>,
    /// Weights before rebalancing.
    pub w1: Vec<f64>,
    pub r_p: f64,
    pub logit_cosine: f64,
    pub logit_turnover: f64,
    pub psi: Option<Vec<f64>>,
    /// The decision fell back to holding `w1` after a failure.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPath {
    pub arm: ArmSpec,
    pub seed: u64,
    pub records: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EclecticPath {
    pub bandit: BanditConfig,
    pub seed: u64,
    pub records: Vec<StepRecord>,
}

/// `logit(x)` with `x` clamped to `[MEASURE_EPS, 1 - MEASURE_EPS]`.
pub fn clamped_logit(x: f64) -> f64 {
    let x = x.clamp(MEASURE_EPS, 1.0 - MEASURE_EPS);
    x.ln() - (1.0 - x).ln()
}

/// `logit((1 + cos) / 2)` written as `ln(1 + cos) - ln(1 - cos)` so that it
/// is exactly odd in `cos`.
pub fn logit_cosine(w0: &[f64], r: &[f64]) -> f64 {
    let c = cosine(w0, r).clamp(-1.0 + 2.0 * MEASURE_EPS, 1.0 - 2.0 * MEASURE_EPS);
    c.ln_1p() - (-c).ln_1p()
}

/// `(r_p, logit-cosine, logit-turnover)` for one step, with the ex-post
/// cost `c |w0 - w1|_1`.
pub fn step_measures(w0: &[f64], w1: &[f64], r: &[f64], c: f64) -> (f64, f64, f64) {
    assert!(w0.len() == w1.len() && w0.len() == r.len(), "vector lengths differ");
    let turnover: f64 = w0.iter().zip(w1).map(|(a, b)| (a - b).abs()).sum();
    let gross: f64 = w0.iter().zip(r).map(|(a, b)| a * b).sum();
    (gross - c * turnover, logit_cosine(w0, r), clamped_logit(turnover / 2.0))
}

/// Weights carried into the next step: each position grows by its asset
/// return and is divided by the portfolio's growth.
pub fn roll_forward(w0: &[f64], r: &[f64], r_p: f64) -> Vec<f64> {
    w0.iter().zip(r).map(|(w, x)| w * (1.0 + x) / (1.0 + r_p)).collect()
}

/// Walk a path of decided weights through realized returns.
fn realize(panel: &ReturnPanel, steps: &[usize], c: f64, mut decide: impl FnMut(usize, &[f64]) -> (Vec<f64>, Option<Vec<f64>>, bool)) -> Vec<StepRecord> {
    let d = panel.n_assets();
    let mut w1 = vec![1.0 / d as f64; d];
    let mut out = Vec::with_capacity(steps.len());
    for &t in steps {
        let (w0, psi, flagged) = decide(t, &w1);
        let r = panel.row(t);
        let (r_p, lc, lt) = step_measures(&w0, &w1, &r, c);
        let next = roll_forward(&w0, &r, r_p);
        out.push(StepRecord { step: t, t: panel.timestamps[t], w0, w1, r_p, logit_cosine: lc, logit_turnover: lt, psi, flagged });
        w1 = next;
    }
    out
}

fn rebalance_steps(cfg: &BacktestConfig, panel: &ReturnPanel) -> Result<Vec<usize>> {
    if panel.n_rows() <= cfg.fit_window_steps {
        return Err(Error::invalid(format!(
            "return panel has {} rows; at least {} are needed for one fit window and one step",
            panel.n_rows(),
            cfg.fit_window_steps + 1
        )));
    }
    Ok((cfg.fit_window_steps..panel.n_rows()).collect())
}

/// Fitted models keyed by `(model id, step)`; failures are kept as messages.
pub type FitCache = BTreeMap<(String, usize), std::result::Result<GenModel, String>>;

/// Fit every model needed by `arms` at every rebalance step. Fits do not
/// depend on the seed and are shared by all paths.
pub fn fit_models(cfg: &BacktestConfig, panel: &ReturnPanel, arms: &[ArmSpec]) -> Result<FitCache> {
    let steps = rebalance_steps(cfg, panel)?;
    let models: BTreeSet<String> = arms.iter().filter(|a| a.needs_scenarios()).map(|a| a.model.id()).collect();
    let specs: BTreeMap<String, GenModelSpec> = arms.iter().map(|a| (a.model.id(), a.model.clone())).collect();
    let jobs: Vec<(String, usize)> = models.iter().flat_map(|m| steps.iter().map(move |t| (m.clone(), *t))).collect();
    let fitted: Vec<_> = jobs
        .par_iter()
        .map(|(m, t)| {
            // Only rows strictly before the decision step are visible.
            let window = panel.window(t - cfg.fit_window_steps, *t);
            let res = fit_generative(&specs[m], &window, &cfg.scenario).map_err(|e| e.to_string());
            if let Err(e) = &res {
                log::warn!("fit of `{m}` at step {t} failed: {e}");
            }
            ((m.clone(), *t), res)
        })
        .collect();
    Ok(fitted.into_iter().collect())
}

fn decide_arm(cfg: &BacktestConfig, fits: &FitCache, arm: &ArmSpec, seed: u64, t: usize, w1: &[f64], d: usize) -> Result<Vec<f64>> {
    let empty = nalgebra::DMatrix::zeros(1, d);
    let scen;
    let scenarios = if arm.needs_scenarios() {
        let model = match fits.get(&(arm.model.id(), t)) {
            Some(Ok(m)) => m,
            Some(Err(e)) => return Err(Error::Stage { stage: format!("fit {}", arm.model), source: Box::new(Error::invalid(e.clone())) }),
            None => return Err(Error::invalid(format!("no fit for `{}` at step {t}", arm.model))),
        };
        let s = rng::derive(seed, &[t as u64, purpose::SCENARIOS, rng::label_key(&arm.model.id())]);
        scen = simulate_returns(model, cfg.n_scenarios, s)?;
        &scen.values
    } else {
        &empty
    };
    let ctx = ObjectiveContext::new(scenarios, w1, cfg.c, arm.v)?;
    let s = rng::derive(seed, &[t as u64, purpose::OPTIMIZER, rng::label_key(&arm.id())]);
    Ok(solve_weights_with(arm.objective, &ctx, cfg.m, s, &cfg.solver)?.w_star)
}

/// One path of one arm, given precomputed fits.
pub fn run_fixed_path(cfg: &BacktestConfig, panel: &ReturnPanel, fits: &FitCache, arm: &ArmSpec, seed: u64) -> Result<FixedPath> {
    let steps = rebalance_steps(cfg, panel)?;
    let d = panel.n_assets();
    let records = realize(panel, &steps, cfg.c, |t, w1| match decide_arm(cfg, fits, arm, seed, t, w1, d) {
        Ok(w) => (w, None, false),
        Err(e) => {
            log::warn!("arm `{arm}` seed {seed} step {t}: {e}; holding previous weights");
            (w1.to_vec(), None, true)
        }
    });
    Ok(FixedPath { arm: arm.clone(), seed, records })
}

/// Every configured arm on every seed, ordered by (seed, arm).
pub fn run_fixed_backtest(cfg: &BacktestConfig, panel: &ReturnPanel) -> Result<Vec<FixedPath>> {
    cfg.validate()?;
    let fits = fit_models(cfg, panel, &cfg.arms)?;
    run_fixed_with_fits(cfg, panel, &fits)
}

pub fn run_fixed_with_fits(cfg: &BacktestConfig, panel: &ReturnPanel, fits: &FitCache) -> Result<Vec<FixedPath>> {
    let jobs: Vec<(u64, &ArmSpec)> = cfg.seeds.iter().flat_map(|s| cfg.arms.iter().map(move |a| (*s, a))).collect();
    jobs.par_iter().map(|(s, a)| run_fixed_path(cfg, panel, fits, a, *s)).collect()
}

/// One eclectic path over the fixed arms of the same seed (in config order).
pub fn run_eclectic_path(cfg: &BacktestConfig, panel: &ReturnPanel, arms: &[&FixedPath], bandit: &BanditConfig, seed: u64) -> Result<EclecticPath> {
    let p = arms.len();
    if p == 0 {
        return Err(Error::invalid("eclectic backtest needs at least one arm"));
    }
    let steps: Vec<usize> = arms[0].records.iter().map(|r| r.step).collect();
    if arms.iter().any(|a| a.records.iter().map(|r| r.step).ne(steps.iter().copied())) {
        return Err(Error::invalid("arm paths cover different steps"));
    }
    let mut bandit = bandit.clone();
    bandit.window = cfg.blend_window_steps;
    // Optimality of each arm at each step, known once the step's return is realized.
    let pi: Vec<Vec<f64>> = (0..steps.len())
        .map(|k| {
            let r = panel.row(steps[k]);
            let s: Vec<f64> = arms.iter().map(|a| similarity(bandit.similarity, &a.records[k].w0, &r)).collect();
            optimality_with(bandit.activation, &s, bandit.conventional_leaky_relu).0
        })
        .collect();
    let mut k: usize = 0;
    let records = realize(panel, &steps, cfg.c, |_, w1| {
        let lo = k.saturating_sub(cfg.blend_window_steps);
        let res = decide_psi(&bandit, &pi[lo..k], p);
        let arm_w: Vec<Vec<f64>> = arms.iter().map(|a| a.records[k].w0.clone()).collect();
        k += 1;
        match res {
            Ok(psi) => (eclectic_weights(&psi, &arm_w), Some(psi), false),
            Err(e) => {
                log::warn!("bandit `{}` seed {seed}: {e}; holding previous weights", bandit.id());
                (w1.to_vec(), None, true)
            }
        }
    });
    Ok(EclecticPath { bandit, seed, records })
}

/// Every bandit configuration on every seed, ordered by (seed, bandit).
pub fn run_eclectic_backtest(cfg: &BacktestConfig, panel: &ReturnPanel, fixed: &[FixedPath]) -> Result<Vec<EclecticPath>> {
    let jobs: Vec<(u64, &BanditConfig)> = cfg.seeds.iter().flat_map(|s| cfg.bandits.iter().map(move |b| (*s, b))).collect();
    jobs.par_iter()
        .map(|(s, b)| {
            let arms: Vec<&FixedPath> = cfg
                .arms
                .iter()
                .map(|a| {
                    fixed
                        .iter()
                        .find(|f| f.seed == *s && &f.arm == a)
                        .ok_or_else(|| Error::invalid(format!("missing fixed path for `{a}` seed {s}")))
                })
                .collect::<Result<_>>()?;
            run_eclectic_path(cfg, panel, &arms, b, *s)
        })
        .collect()
}

/// Equal long weights every step, without transaction costs.
pub fn benchmark_path(panel: &ReturnPanel, first_step: usize) -> Vec<StepRecord> {
    let d = panel.n_assets();
    let steps: Vec<usize> = (first_step..panel.n_rows()).collect();
    realize(panel, &steps, 0.0, |_, _| (vec![1.0 / d as f64; d], None, false))
}

/// `Π (1 + r_p)` over a record series.
pub fn terminal_wealth(records: &[StepRecord]) -> f64 {
    records.iter().map(|r| 1.0 + r.r_p).product()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::{ActivationKind, Policy, SimilarityKind};
    use crate::data::{compute_returns, synthetic_panel, SyntheticSpec};
    use approx::assert_abs_diff_eq;
    use chrono::{Duration, TimeZone};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn panel_from(returns: DMatrix<f64>) -> ReturnPanel {
        let start = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
        ReturnPanel {
            timestamps: (0..returns.nrows()).map(|i| start + Duration::days(2 * i as i64)).collect(),
            assets: (0..returns.ncols()).map(|j| format!("A{j}")).collect(),
            returns,
            step: 2,
        }
    }

    fn small_cfg(arms: Vec<ArmSpec>) -> BacktestConfig {
        BacktestConfig {
            fit_window_steps: 30,
            n_scenarios: 200,
            seeds: vec![1],
            arms,
            scenario: ScenarioConfig { min_window: 30, ..ScenarioConfig::default() },
            solver: SolverOptions { random_starts: 2, max_evals_per_start: 400, ..SolverOptions::default() },
            ..BacktestConfig::default()
        }
    }

    fn synthetic(n_rows: usize, seed: u64) -> ReturnPanel {
        let p = synthetic_panel(&SyntheticSpec { n_rows, seed, ..SyntheticSpec::default() }).unwrap();
        compute_returns(&p, 2).unwrap()
    }

    fn arm(model: &str, obj: &str, v: f64) -> ArmSpec {
        ArmSpec::new(model.parse().unwrap(), obj.parse().unwrap(), v)
    }

    #[test]
    fn step_measure_examples() {
        let (_, lc, _) = step_measures(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 0.3], 0.005);
        assert_eq!(lc, 0.0);
        let (_, _, lt) = step_measures(&[0.5, 0.5], &[0.5, 0.5], &[0.1, 0.2], 0.005);
        assert_abs_diff_eq!(lt, (1e-9f64 / (1.0 - 1e-9)).ln(), epsilon = 1e-12);
        assert!((lt + 20.7).abs() < 0.05);
        let (rp, _, _) = step_measures(&[1.0, 0.0], &[0.0, 1.0], &[0.1, 0.0], 0.005);
        assert_abs_diff_eq!(rp, 0.1 - 0.01, epsilon = 1e-15);
    }

    #[test]
    fn constant_prices_only_cost() {
        let panel = panel_from(DMatrix::zeros(40, 2));
        let cfg = small_cfg(vec![arm("mv norm", "LongParity", 1.0), arm("mv norm", "minVariance", 1.0)]);
        let paths = run_fixed_backtest(&cfg, &panel).unwrap();
        for p in &paths {
            for r in &p.records {
                let turnover: f64 = r.w0.iter().zip(&r.w1).map(|(a, b)| (a - b).abs()).sum();
                assert_abs_diff_eq!(r.r_p, -0.005 * turnover, epsilon = 1e-15);
                assert!(r.r_p <= 0.0);
            }
        }
        let parity = &paths[0];
        assert!(parity.records.iter().all(|r| r.r_p == 0.0));
    }

    #[test]
    fn single_asset_max_expected_return_follows_mean_sign() {
        let mut r = rng::from_seed(2);
        use rand::Rng;
        let up = DMatrix::from_fn(40, 1, |_, _| 0.01 + 0.002 * r.random::<f64>());
        let panel = panel_from(up);
        let cfg = small_cfg(vec![arm("mv norm", "maxExpRetn", 1.0)]);
        let paths = run_fixed_backtest(&cfg, &panel).unwrap();
        assert!(paths[0].records.iter().all(|r| r.w0 == vec![1.0]));
        let down = panel_from(panel.returns.map(|x| -x));
        let paths = run_fixed_backtest(&cfg, &down).unwrap();
        assert!(paths[0].records.iter().all(|r| r.w0 == vec![-1.0]));
    }

    #[test]
    fn fixed_backtest_is_deterministic_and_accounts() {
        let panel = synthetic(91, 3);
        let cfg = small_cfg(vec![arm("np mvcop norm", "maxSharpeRatio", 2.0), arm("mv t", "minES 0.1", 1.0)]);
        let a = run_fixed_backtest(&cfg, &panel).unwrap();
        let b = run_fixed_backtest(&cfg, &panel).unwrap();
        assert_eq!(a, b);
        for p in &a {
            let mut wealth = 1.0;
            let mut w1 = vec![0.25; 4];
            for rec in &p.records {
                for (a, b) in rec.w1.iter().zip(&w1) {
                    assert!((a - b).abs() < 1e-12);
                }
                let r = panel.row(rec.step);
                let cost = 0.005 * rec.w0.iter().zip(&w1).map(|(x, y)| (x - y).abs()).sum::<f64>();
                let holdings: Vec<f64> = rec.w0.iter().map(|w| wealth * w).collect();
                let cash = wealth - holdings.iter().sum::<f64>() - wealth * cost;
                let grown: Vec<f64> = holdings.iter().zip(&r).map(|(h, x)| h * (1.0 + x)).collect();
                let new_wealth = cash + grown.iter().sum::<f64>();
                w1 = grown.iter().map(|g| g / new_wealth).collect();
                wealth = new_wealth;
                assert!(rec.r_p > -1.0);
            }
            assert!((terminal_wealth(&p.records) - wealth).abs() < 1e-10);
        }
    }

    #[test]
    fn no_look_ahead() {
        let panel = synthetic(91, 4);
        let cfg = small_cfg(vec![arm("mv norm", "minVariance", 1.0), arm("np vinecop elliptical", "Kelly", 1.0)]);
        let clean = run_fixed_backtest(&cfg, &panel).unwrap();
        let t0 = cfg.fit_window_steps + 5;
        let mut poisoned = panel.clone();
        for i in t0..poisoned.n_rows() {
            for j in 0..poisoned.n_assets() {
                poisoned.returns[(i, j)] = 3.0 * (j as f64 - 1.5);
            }
        }
        let dirty = run_fixed_backtest(&cfg, &poisoned).unwrap();
        for (c, d) in clean.iter().zip(&dirty) {
            let k = c.records.iter().position(|r| r.step == t0).unwrap();
            for i in 0..=k {
                assert_eq!(c.records[i].w0, d.records[i].w0);
            }
        }
    }

    #[test]
    fn benchmark_cases() {
        let flat = panel_from(DMatrix::zeros(5, 3));
        assert!(benchmark_path(&flat, 0).iter().all(|r| r.r_p == 0.0));
        let one = panel_from(DMatrix::from_column_slice(3, 1, &[0.1, -0.05, 0.02]));
        let b = benchmark_path(&one, 0);
        assert_abs_diff_eq!(terminal_wealth(&b), 1.1 * 0.95 * 1.02, epsilon = 1e-15);
    }

    /// Two assets, three steps: returns (+10%, 0) then (0, +10%) then flat.
    /// Re-equalizing after the first step trades |0.55/1.05 - 0.5| on each
    /// side.
    #[test]
    fn benchmark_turnover_hand_computed() {
        let panel = panel_from(DMatrix::from_row_slice(3, 2, &[0.1, 0.0, 0.0, 0.1, 0.0, 0.0]));
        let b = benchmark_path(&panel, 0);
        let drift = 0.55 / 1.05 - 0.5;
        assert_abs_diff_eq!(b[1].logit_turnover, clamped_logit(drift), epsilon = 1e-12);
        assert_abs_diff_eq!(b[2].logit_turnover, clamped_logit(drift), epsilon = 1e-12);
        assert_abs_diff_eq!(b[0].logit_turnover, clamped_logit(0.0), epsilon = 1e-12);
    }

    #[test]
    fn eclectic_single_arm_equals_arm() {
        let panel = synthetic(81, 5);
        let mut cfg = small_cfg(vec![arm("mv norm", "maxSharpeRatio", 1.0)]);
        cfg.bandits = vec![BanditConfig::new(SimilarityKind::Cosine, ActivationKind::Logit, Policy::Blend, 0.999).unwrap()];
        let fixed = run_fixed_backtest(&cfg, &panel).unwrap();
        let ecl = run_eclectic_backtest(&cfg, &panel, &fixed).unwrap();
        for (a, b) in fixed[0].records.iter().zip(&ecl[0].records) {
            assert_eq!(a.w0, b.w0);
            assert_eq!(a.r_p, b.r_p);
        }
    }

    #[test]
    fn eclectic_identical_arms_blend_evenly() {
        let panel = synthetic(81, 6);
        let a = arm("mv norm", "maxSharpeRatio", 1.0);
        let mut cfg = small_cfg(vec![a.clone()]);
        cfg.bandits = vec![BanditConfig::new(SimilarityKind::Cosine, ActivationKind::Softmax, Policy::Blend, 0.99).unwrap()];
        let fixed = run_fixed_backtest(&cfg, &panel).unwrap();
        let twice = [&fixed[0], &fixed[0]];
        let e = run_eclectic_path(&cfg, &panel, &twice, &cfg.bandits[0], 1).unwrap();
        for r in &e.records {
            let psi = r.psi.as_ref().unwrap();
            assert!((psi[0] - 0.5).abs() < 1e-9, "{psi:?}");
        }
    }

    /// Arm 0 holds the realized return direction exactly, arm 1 its
    /// opposite: maxout grades arm 0 every step, the Bernoulli estimate is
    /// 1 versus 0 and switching goes all in from the first informed step.
    #[test]
    fn switch_locks_onto_dominant_arm() {
        let panel = synthetic(81, 7);
        let cfg = small_cfg(vec![]);
        let steps: Vec<usize> = (cfg.fit_window_steps..panel.n_rows()).collect();
        let mk = |sign: f64| FixedPath {
            arm: arm("mv norm", "LongParity", 1.0),
            seed: 1,
            records: steps
                .iter()
                .map(|t| {
                    let r = panel.row(*t);
                    let l1: f64 = r.iter().map(|x| x.abs()).sum();
                    StepRecord {
                        step: *t,
                        t: panel.timestamps[*t],
                        w0: r.iter().map(|x| sign * x / l1).collect(),
                        w1: vec![],
                        r_p: 0.0,
                        logit_cosine: 0.0,
                        logit_turnover: 0.0,
                        psi: None,
                        flagged: false,
                    }
                })
                .collect(),
        };
        let (good, bad) = (mk(1.0), mk(-1.0));
        let b = BanditConfig::new(SimilarityKind::Cosine, ActivationKind::Maxout, Policy::Switch, 0.9).unwrap();
        let e = run_eclectic_path(&cfg, &panel, &[&good, &bad], &b, 1).unwrap();
        assert_eq!(e.records[0].psi.as_deref(), Some(&[0.5, 0.5][..]));
        assert_eq!(e.records[1].psi.as_deref(), Some(&[0.5, 0.5][..]));
        for r in &e.records[2..] {
            assert_eq!(r.psi.as_deref(), Some(&[1.0, 0.0][..]));
        }
    }

    #[test]
    fn config_lists_every_violation() {
        let cfg = BacktestConfig { c: -1.0, m: 0.5, n_scenarios: 10, seeds: vec![], ..BacktestConfig::default() };
        assert_eq!(cfg.violations().len(), 4);
    }

    #[test]
    fn short_panel_rejected() {
        let panel = synthetic(41, 8);
        let cfg = small_cfg(vec![arm("mv norm", "Kelly", 1.0)]);
        assert!(run_fixed_backtest(&cfg, &panel).is_err());
    }

    proptest! {
        #[test]
        fn logit_cosine_is_odd(w in prop::collection::vec(-1.0f64..1.0, 4), r in prop::collection::vec(-0.3f64..0.3, 4)) {
            let neg: Vec<f64> = w.iter().map(|x| -x).collect();
            prop_assert!((logit_cosine(&neg, &r) + logit_cosine(&w, &r)).abs() <= 1e-12);
        }
    }
}
