//! Run configuration: a TOML file with one section per stage.

use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use genport::attribution::CvOptions;
use genport::backtest::{ArmSpec, BacktestConfig};
use genport::bandit::{ActivationKind, BanditConfig, Policy, SimilarityKind};
use genport::data::{FetchConfig, SyntheticSpec};
use genport::marginals::MarginalFamily;
use genport::objectives::ObjectiveKind;
use genport::optimizer::SolverOptions;
use genport::scenarios::{GenModelSpec, ScenarioConfig};
use genport::volatility::DistKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawConfig {
    pub data: RawData,
    pub backtest: RawBacktest,
    pub scenarios: RawScenarios,
    pub optimizer: RawOptimizer,
    pub arms: RawArms,
    pub bandit: RawBandit,
    pub attribution: RawAttribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawData {
    /// `synthetic`, `csv` or `fetch`.
    pub source: String,
    /// Price CSV for `csv`, relative to the config file.
    pub path: Option<String>,
    /// Price rows per return step.
    pub return_step: usize,
    pub synthetic: SyntheticSpec,
    pub fetch: Option<RawFetch>,
}

impl Default for RawData {
    fn default() -> Self {
        RawData { source: "synthetic".into(), path: None, return_step: 2, synthetic: SyntheticSpec::default(), fetch: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawFetch {
    pub endpoint: String,
    pub symbols: Vec<String>,
    #[serde(default = "default_interval")]
    pub interval: String,
    /// `YYYY-MM-DD` or RFC 3339.
    pub start: String,
    pub end: String,
    #[serde(default = "default_rate_limit")]
    pub rate_limit_ms: u64,
    #[serde(default = "default_page_limit")]
    pub page_limit: usize,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_interval() -> String {
    "1d".into()
}
fn default_rate_limit() -> u64 {
    250
}
fn default_page_limit() -> usize {
    1000
}
fn default_retries() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawBacktest {
    pub fit_window: usize,
    pub blend_window: usize,
    pub c: f64,
    pub m: f64,
    pub n_scenarios: usize,
    pub seeds: Vec<u64>,
}

impl Default for RawBacktest {
    fn default() -> Self {
        let d = BacktestConfig::default();
        RawBacktest { fit_window: d.fit_window_steps, blend_window: d.blend_window_steps, c: d.c, m: d.m, n_scenarios: d.n_scenarios, seeds: vec![1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawScenarios {
    pub min_window: usize,
    pub marginal_families: Vec<String>,
    pub include_joe: bool,
    /// `norm` or `t`.
    pub garch_dist: String,
    /// Independence pre-test level for vine pairs; 0 disables it.
    pub vine_indep_level: f64,
}

impl Default for RawScenarios {
    fn default() -> Self {
        let d = ScenarioConfig::default();
        RawScenarios {
            min_window: d.min_window,
            marginal_families: d.marginal_families.iter().map(|f| f.name().to_string()).collect(),
            include_joe: d.include_joe,
            garch_dist: "norm".into(),
            vine_indep_level: d.vine_indep_level.unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawOptimizer {
    pub random_starts: usize,
    pub max_evals_per_start: usize,
    pub xtol: f64,
    pub initial_step: f64,
}

impl Default for RawOptimizer {
    fn default() -> Self {
        let d = SolverOptions::default();
        RawOptimizer { random_starts: d.random_starts, max_evals_per_start: d.max_evals_per_start, xtol: d.xtol, initial_step: d.initial_step }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawArm {
    pub model: String,
    pub objective: String,
    #[serde(default = "one")]
    pub v: f64,
}

fn one() -> f64 {
    1.0
}

/// Arms are the explicit `list` followed by the cross product of `models`,
/// `objectives` and `v`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawArms {
    pub list: Vec<RawArm>,
    pub models: Vec<String>,
    pub objectives: Vec<String>,
    pub v: Vec<f64>,
}

/// Bandit configurations are the cross product of the four lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawBandit {
    pub similarity: Vec<String>,
    pub activation: Vec<String>,
    pub policy: Vec<String>,
    pub gamma: Vec<f64>,
    pub conventional_leaky_relu: bool,
}

impl Default for RawBandit {
    fn default() -> Self {
        RawBandit {
            similarity: vec!["cosine".into()],
            activation: vec!["logit".into()],
            policy: vec!["blend".into(), "switch".into()],
            gamma: vec![0.999],
            conventional_leaky_relu: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawAttribution {
    pub folds: usize,
    pub seed: u64,
    pub grid_len: usize,
    pub grid_ratio: f64,
}

impl Default for RawAttribution {
    fn default() -> Self {
        let d = CvOptions::default();
        RawAttribution { folds: d.folds, seed: d.seed, grid_len: d.grid_len, grid_ratio: d.grid_ratio }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv(PathBuf),
    Fetch { config: FetchConfig, symbols: Vec<String> },
}

/// A validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub raw: RawConfig,
    pub data: DataSource,
    pub return_step: usize,
    pub backtest: BacktestConfig,
    pub cv: CvOptions,
}

/// Parse and validate a TOML document. `base` resolves relative paths.
/// Every violated constraint is reported, not just the first.
pub fn parse_config(text: &str, base: &Path) -> Result<RunConfig, Vec<String>> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| vec![e.to_string()])?;
    validate(raw, base)
}

pub fn load_config(path: &Path) -> Result<RunConfig, Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| vec![format!("cannot read {}: {e}", path.display())])?;
    parse_config(&text, path.parent().unwrap_or(Path::new(".")))
}

fn parse_time(s: &str, what: &str, errs: &mut Vec<String>) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    match NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        Ok(d) => Some(d.and_hms_opt(0, 0, 0).unwrap().and_utc()),
        Err(_) => {
            errs.push(format!("{what}: `{s}` is not a date"));
            None
        }
    }
}

fn parse_each<T: std::str::FromStr>(items: &[String], what: &str, errs: &mut Vec<String>) -> Vec<T>
where
    T::Err: std::fmt::Display,
{
    items
        .iter()
        .filter_map(|s| match s.parse() {
            Ok(v) => Some(v),
            Err(e) => {
                errs.push(format!("{what}: `{s}`: {e}"));
                None
            }
        })
        .collect()
}

pub fn validate(raw: RawConfig, base: &Path) -> Result<RunConfig, Vec<String>> {
    let mut errs = Vec::new();

    let data = match raw.data.source.as_str() {
        "synthetic" => Some(DataSource::Synthetic(raw.data.synthetic.clone())),
        "csv" => match &raw.data.path {
            Some(p) => Some(DataSource::Csv(base.join(p))),
            None => {
                errs.push("data.path is required when data.source = \"csv\"".into());
                None
            }
        },
        "fetch" => match &raw.data.fetch {
            Some(f) => {
                let start = parse_time(&f.start, "data.fetch.start", &mut errs);
                let end = parse_time(&f.end, "data.fetch.end", &mut errs);
                if f.symbols.is_empty() {
                    errs.push("data.fetch.symbols is empty".into());
                }
                if f.page_limit == 0 {
                    errs.push("data.fetch.page_limit must be positive".into());
                }
                match (start, end) {
                    (Some(start), Some(end)) if start < end => Some(DataSource::Fetch {
                        config: FetchConfig {
                            endpoint: f.endpoint.clone(),
                            interval: f.interval.clone(),
                            start,
                            end,
                            rate_limit_ms: f.rate_limit_ms,
                            page_limit: f.page_limit,
                            max_retries: f.max_retries,
                        },
                        symbols: f.symbols.clone(),
                    }),
                    (Some(_), Some(_)) => {
                        errs.push("data.fetch.start must precede data.fetch.end".into());
                        None
                    }
                    _ => None,
                }
            }
            None => {
                errs.push("data.fetch section is required when data.source = \"fetch\"".into());
                None
            }
        },
        other => {
            errs.push(format!("data.source `{other}` is not one of synthetic, csv, fetch"));
            None
        }
    };
    if raw.data.return_step == 0 {
        errs.push("data.return_step must be positive".into());
    }
    let s = &raw.data.synthetic;
    if s.n_assets == 0 || s.n_rows < 2 || !(s.correlation > -1.0 / (s.n_assets.max(2) - 1) as f64 && s.correlation < 1.0) || !(s.daily_vol > 0.0) {
        errs.push("data.synthetic needs n_assets >= 1, n_rows >= 2, a valid equicorrelation and positive daily_vol".into());
    }

    let families: Vec<MarginalFamily> = parse_each(&raw.scenarios.marginal_families, "scenarios.marginal_families", &mut errs);
    if raw.scenarios.marginal_families.is_empty() {
        errs.push("scenarios.marginal_families is empty".into());
    }
    let garch_dist = match raw.scenarios.garch_dist.as_str() {
        "norm" => DistKind::Gaussian,
        "t" => DistKind::StudentT,
        other => {
            errs.push(format!("scenarios.garch_dist `{other}` is not norm or t"));
            DistKind::Gaussian
        }
    };
    if !(0.0..1.0).contains(&raw.scenarios.vine_indep_level) {
        errs.push("scenarios.vine_indep_level must lie in [0, 1)".into());
    }
    if raw.scenarios.min_window < 2 {
        errs.push("scenarios.min_window must be at least 2".into());
    }
    let scenario = ScenarioConfig {
        min_window: raw.scenarios.min_window,
        marginal_families: families,
        include_joe: raw.scenarios.include_joe,
        garch_dist,
        vine_indep_level: (raw.scenarios.vine_indep_level > 0.0).then_some(raw.scenarios.vine_indep_level),
    };

    let o = &raw.optimizer;
    if o.max_evals_per_start == 0 || !(o.xtol > 0.0) || !(o.initial_step > 0.0) {
        errs.push("optimizer needs max_evals_per_start > 0 and positive xtol and initial_step".into());
    }
    let solver = SolverOptions { random_starts: o.random_starts, max_evals_per_start: o.max_evals_per_start, xtol: o.xtol, initial_step: o.initial_step };

    let mut arms = Vec::new();
    for (i, a) in raw.arms.list.iter().enumerate() {
        let model = a.model.parse::<GenModelSpec>().map_err(|e| errs.push(format!("arms.list[{i}].model `{}`: {e}", a.model))).ok();
        let obj = a.objective.parse::<ObjectiveKind>().map_err(|e| errs.push(format!("arms.list[{i}].objective `{}`: {e}", a.objective))).ok();
        if let (Some(m), Some(o)) = (model, obj) {
            arms.push(ArmSpec::new(m, o, a.v));
        }
    }
    let models: Vec<GenModelSpec> = parse_each(&raw.arms.models, "arms.models", &mut errs);
    let objectives: Vec<ObjectiveKind> = parse_each(&raw.arms.objectives, "arms.objectives", &mut errs);
    let grid_parts = [raw.arms.models.is_empty(), raw.arms.objectives.is_empty(), raw.arms.v.is_empty()];
    if grid_parts.iter().any(|e| *e) && !grid_parts.iter().all(|e| *e) {
        errs.push("arms.models, arms.objectives and arms.v must be given together".into());
    }
    for m in &models {
        for o in &objectives {
            for v in &raw.arms.v {
                arms.push(ArmSpec::new(m.clone(), *o, *v));
            }
        }
    }
    if arms.is_empty() {
        errs.push("no arms configured".into());
    }
    for (i, a) in arms.iter().enumerate() {
        if arms[..i].contains(a) {
            errs.push(format!("arm `{a}` is listed twice"));
        }
    }

    let b = &raw.bandit;
    let sims: Vec<SimilarityKind> = parse_each(&b.similarity, "bandit.similarity", &mut errs);
    let acts: Vec<ActivationKind> = parse_each(&b.activation, "bandit.activation", &mut errs);
    let pols: Vec<Policy> = parse_each(&b.policy, "bandit.policy", &mut errs);
    let mut bandits = Vec::new();
    for s in &sims {
        for a in &acts {
            for p in &pols {
                for g in &b.gamma {
                    match BanditConfig::new(*s, *a, *p, *g) {
                        Ok(mut c) => {
                            c.window = raw.backtest.blend_window;
                            c.conventional_leaky_relu = b.conventional_leaky_relu;
                            if !bandits.contains(&c) {
                                bandits.push(c);
                            }
                        }
                        Err(e) => {
                            let msg = format!("bandit.gamma {g}: {e}");
                            if !errs.contains(&msg) {
                                errs.push(msg);
                            }
                        }
                    }
                }
            }
        }
    }

    let r = &raw.backtest;
    let backtest = BacktestConfig {
        rebalance_step_days: raw.data.return_step,
        fit_window_steps: r.fit_window,
        blend_window_steps: r.blend_window,
        c: r.c,
        m: r.m,
        n_scenarios: r.n_scenarios,
        seeds: r.seeds.clone(),
        arms,
        bandits,
        scenario,
        solver,
    };
    for v in backtest.violations() {
        errs.push(format!("backtest: {v}"));
    }
    if r.seeds.iter().enumerate().any(|(i, s)| r.seeds[..i].contains(s)) {
        errs.push("backtest.seeds contains duplicates".into());
    }

    let a = &raw.attribution;
    if a.folds < 2 {
        errs.push("attribution.folds must be at least 2".into());
    }
    if a.grid_len == 0 || !(a.grid_ratio > 0.0 && a.grid_ratio < 1.0) {
        errs.push("attribution needs grid_len >= 1 and grid_ratio in (0, 1)".into());
    }
    let cv = CvOptions { folds: a.folds, seed: a.seed, grid: None, grid_len: a.grid_len, grid_ratio: a.grid_ratio };

    if !errs.is_empty() {
        return Err(errs);
    }
    Ok(RunConfig { data: data.expect("checked above"), return_step: raw.data.return_step, backtest, cv, raw })
}

impl RunConfig {
    /// Replace the seed list, keeping `raw` in step so the hash reflects it.
    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.raw.backtest.seeds = seeds.clone();
        self.backtest.seeds = seeds;
        self
    }
}
