//! Command-line driver: fetch prices, run fixed-arm backtests, blend them
//! with bandit policies, attribute performance and emit report tables.

pub mod config;
pub mod manifest;
pub mod output;
pub mod report;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use chrono::Utc;
use clap::{Parser, Subcommand, ValueEnum};
use genport::attribution::{self, lasso_cv, lasso_path, write_coefficients, AttributionDataset, Measure, Scheme};
use genport::backtest::{benchmark_path, fit_models, run_eclectic_backtest, run_fixed_with_fits};
use genport::data::{compute_returns, fetch_panel, load_price_csv, save_price_csv, synthetic_panel, PricePanel, ReturnPanel};

use crate::config::{load_config, DataSource, RunConfig};
use crate::manifest::{config_hash, RunManifest, TOOL_VERSION};
use crate::output::{read_json, relative, write_json, write_records, write_table, EclecticResults, FixedResults, Results};

#[derive(Debug, Parser)]
#[command(name = "genport", version, about = "Generative-model portfolios, bandit blending and LASSO attribution")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, default_value = "genport.toml")]
    pub config: PathBuf,
    /// Directory for all outputs.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// `N` runs seeds 1..=N; a comma list such as `4,7` runs exactly those.
    #[arg(long, global = true)]
    pub seeds: Option<String>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured price panel to `prices.csv`.
    Fetch,
    /// Run every fixed arm on every seed.
    Backtest,
    /// Blend the fixed arms under every bandit configuration.
    Blend,
    /// Cross-validated LASSO attribution of a performance measure.
    Attribute {
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
        #[arg(long, value_enum)]
        measure: Option<MeasureArg>,
    },
    /// Plot-ready tables from the backtest and blend results.
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Fixed,
    Eclectic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeasureArg {
    #[value(name = "r-p")]
    RP,
    LogitCosine,
}

#[derive(Debug)]
pub enum CliError {
    Config(Vec<String>),
    Runtime(anyhow::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(v) => {
                writeln!(f, "invalid configuration ({} problem{}):", v.len(), if v.len() == 1 { "" } else { "s" })?;
                for e in v {
                    writeln!(f, "  - {e}")?;
                }
                Ok(())
            }
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<genport::error::Error> for CliError {
    fn from(e: genport::error::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

/// Parse `--seeds`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let s = s.trim();
    if s.contains(',') {
        let v: Vec<u64> = s.split(',').map(|x| x.trim().parse().map_err(|_| format!("--seeds: `{x}` is not a seed"))).collect::<Result<_, _>>()?;
        if v.is_empty() {
            return Err("--seeds is empty".into());
        }
        return Ok(v);
    }
    match s.parse::<u64>() {
        Ok(0) => Err("--seeds must be positive".into()),
        Ok(n) => Ok((1..=n).collect()),
        Err(_) => Err(format!("--seeds: `{s}` is neither a count nor a list")),
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log_level).format_timestamp(None).try_init();
    match execute(&cli) {
        Ok(outputs) => {
            for o in outputs {
                println!("{o}");
            }
            0
        }
        Err(e) => {
            eprint!("{e}");
            if matches!(e, CliError::Runtime(_)) {
                eprintln!();
            }
            e.exit_code()
        }
    }
}

/// Load the configuration, apply flag overrides and run the subcommand.
/// Returns output paths relative to the output directory.
pub fn execute(cli: &Cli) -> Result<Vec<String>, CliError> {
    let mut cfg = load_config(&cli.config).map_err(CliError::Config)?;
    if let Some(s) = &cli.seeds {
        cfg = cfg.with_seeds(parse_seeds(s).map_err(|e| CliError::Config(vec![e]))?);
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Config(vec!["--jobs must be positive".into()]));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| CliError::Runtime(e.into()))?;
    pool.install(|| run_command(&cli.command, &cfg, &cli.out_dir))
}

pub fn run_command(cmd: &Command, cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let started = Utc::now();
    let (name, files) = match cmd {
        Command::Fetch => ("fetch", cmd_fetch(cfg, out)?),
        Command::Backtest => ("backtest", cmd_backtest(cfg, out)?),
        Command::Blend => ("blend", cmd_blend(cfg, out)?),
        Command::Attribute { scheme, measure } => ("attribute", cmd_attribute(cfg, out, *scheme, *measure)?),
        Command::Report => ("report", cmd_report(cfg, out)?),
    };
    let outputs: Vec<String> = files.iter().map(|p| relative(p, out)).collect();
    let manifest = RunManifest {
        command: name.into(),
        config_hash: config_hash(&cfg.raw),
        seeds: cfg.backtest.seeds.clone(),
        started,
        finished: Utc::now(),
        tool_version: TOOL_VERSION.into(),
        outputs: outputs.clone(),
    };
    write_json(&manifest, &out.join("manifests").join(format!("{name}.json")))?;
    Ok(outputs)
}

fn prices_path(out: &Path) -> PathBuf {
    out.join("prices.csv")
}

/// The configured price panel. A `fetch` source reads the file written by
/// the fetch subcommand.
pub fn load_prices(cfg: &RunConfig, out: &Path) -> anyhow::Result<PricePanel> {
    Ok(match &cfg.data {
        DataSource::Synthetic(spec) => synthetic_panel(spec)?,
        DataSource::Csv(p) => load_price_csv(p).with_context(|| format!("loading {}", p.display()))?,
        DataSource::Fetch { .. } => {
            let p = prices_path(out);
            if !p.exists() {
                bail!("{} not found; run `genport fetch` first", p.display());
            }
            load_price_csv(&p)?
        }
    })
}

pub fn load_returns(cfg: &RunConfig, out: &Path) -> anyhow::Result<ReturnPanel> {
    Ok(compute_returns(&load_prices(cfg, out)?, cfg.return_step)?)
}

pub fn cmd_fetch(cfg: &RunConfig, out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let panel = match &cfg.data {
        DataSource::Fetch { config, symbols } => fetch_panel(config, symbols)?,
        _ => load_prices(cfg, out)?,
    };
    std::fs::create_dir_all(out)?;
    let p = prices_path(out);
    save_price_csv(&panel, &p)?;
    log::info!("{} rows x {} assets written to {}", panel.n_rows(), panel.n_assets(), p.display());
    Ok(vec![p])
}

fn fixed_dir(out: &Path) -> PathBuf {
    out.join("fixed")
}

fn eclectic_dir(out: &Path) -> PathBuf {
    out.join("eclectic")
}

pub fn cmd_backtest(cfg: &RunConfig, out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let panel = load_returns(cfg, out)?;
    let bt = &cfg.backtest;
    bt.validate()?;
    let fits = fit_models(bt, &panel, &bt.arms)?;
    let paths = run_fixed_with_fits(bt, &panel, &fits)?;
    let dir = fixed_dir(out);
    let mut files = Vec::new();
    let index: Vec<Vec<String>> = bt.arms.iter().enumerate().map(|(i, a)| vec![i.to_string(), a.id()]).collect();
    let p = dir.join("arms.csv");
    write_table(&p, &["index", "arm"], &index)?;
    files.push(p);
    for path in &paths {
        let i = bt.arms.iter().position(|a| a == &path.arm).expect("arm from config");
        let p = dir.join(format!("seed-{}", path.seed)).join(format!("arm-{i:02}.csv"));
        write_records(&path.records, &panel.assets, 0, &p)?;
        files.push(p);
    }
    let flagged: usize = paths.iter().map(|p| p.records.iter().filter(|r| r.flagged).count()).sum();
    if flagged > 0 {
        log::warn!("{flagged} fixed-arm steps held previous weights after a failure");
    }
    let p = dir.join("results.json");
    write_json(&Results { config_hash: config_hash(&cfg.raw), assets: panel.assets.clone(), paths }, &p)?;
    files.push(p);
    Ok(files)
}

fn load_fixed(cfg: &RunConfig, out: &Path) -> anyhow::Result<FixedResults> {
    let p = fixed_dir(out).join("results.json");
    if !p.exists() {
        bail!("{} not found; run `genport backtest` first", p.display());
    }
    let r: FixedResults = read_json(&p)?;
    for s in &cfg.backtest.seeds {
        for a in &cfg.backtest.arms {
            if !r.paths.iter().any(|p| p.seed == *s && &p.arm == a) {
                bail!("fixed results lack arm `{a}` for seed {s}; rerun `genport backtest` with this configuration");
            }
        }
    }
    Ok(r)
}

pub fn cmd_blend(cfg: &RunConfig, out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let panel = load_returns(cfg, out)?;
    let fixed = load_fixed(cfg, out)?;
    if cfg.backtest.bandits.is_empty() {
        bail!("no bandit configurations");
    }
    let paths = run_eclectic_backtest(&cfg.backtest, &panel, &fixed.paths)?;
    let dir = eclectic_dir(out);
    let mut files = Vec::new();
    let index: Vec<Vec<String>> = cfg.backtest.bandits.iter().enumerate().map(|(i, b)| vec![i.to_string(), b.id()]).collect();
    let p = dir.join("bandits.csv");
    write_table(&p, &["index", "bandit"], &index)?;
    files.push(p);
    for path in &paths {
        let i = cfg.backtest.bandits.iter().position(|b| b.id() == path.bandit.id()).expect("bandit from config");
        let p = dir.join(format!("seed-{}", path.seed)).join(format!("bandit-{i:02}.csv"));
        write_records(&path.records, &panel.assets, cfg.backtest.arms.len(), &p)?;
        files.push(p);
    }
    let p = dir.join("results.json");
    write_json(&Results { config_hash: config_hash(&cfg.raw), assets: panel.assets.clone(), paths }, &p)?;
    files.push(p);
    Ok(files)
}

fn load_eclectic(out: &Path) -> anyhow::Result<Option<EclecticResults>> {
    let p = eclectic_dir(out).join("results.json");
    if p.exists() {
        Ok(Some(read_json(&p)?))
    } else {
        Ok(None)
    }
}

fn attribution_files(cfg: &RunConfig, data: &AttributionDataset, stem: &str, dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let fit = lasso_cv(data, &cfg.cv)?;
    if !fit.degenerate_folds.is_empty() {
        log::warn!("{stem}: folds {:?} have a constant response", fit.degenerate_folds);
    }
    std::fs::create_dir_all(dir)?;
    let table = dir.join(format!("{stem}.csv"));
    write_coefficients(&fit, true, std::fs::File::create(&table)?)?;

    let mut cv_rows = Vec::new();
    for (g, l) in fit.grid.iter().enumerate() {
        let mut row = vec![l.to_string()];
        row.extend(fit.cv_mse.iter().map(|c| c[g].to_string()));
        cv_rows.push(row);
    }
    let mut header = vec!["lambda".to_string()];
    header.extend((0..fit.cv_mse.len()).map(|k| format!("fold{k}")));
    let cv = dir.join(format!("{stem}_cv.csv"));
    write_table(&cv, &header.iter().map(String::as_str).collect::<Vec<_>>(), &cv_rows)?;

    let ic = data.intercept_column();
    let path = lasso_path(&data.x, &data.y, &fit.grid, ic)?;
    let mut path_rows = Vec::new();
    for (l, s) in fit.grid.iter().zip(&path) {
        for (label, b) in data.column_labels.iter().zip(s.beta.iter()) {
            if *b != 0.0 {
                path_rows.push(vec![l.to_string(), label.clone(), b.to_string()]);
            }
        }
    }
    let pp = dir.join(format!("{stem}_path.csv"));
    write_table(&pp, &["lambda", "coefficient", "value"], &path_rows)?;

    let meta = dir.join(format!("{stem}_fit.json"));
    let info = serde_json::json!({
        "lambda_star": fit.lambda_star,
        "fold_lambda": fit.fold_lambda,
        "degenerate_folds": fit.degenerate_folds,
        "rows": data.x.nrows(),
        "columns": data.x.ncols(),
    });
    write_json(&info, &meta)?;
    Ok(vec![table, cv, pp, meta])
}

pub fn cmd_attribute(cfg: &RunConfig, out: &Path, scheme: Option<SchemeArg>, measure: Option<MeasureArg>) -> anyhow::Result<Vec<PathBuf>> {
    let schemes = match scheme {
        Some(SchemeArg::Fixed) => vec![Scheme::FixedArm],
        Some(SchemeArg::Eclectic) => vec![Scheme::Eclectic],
        None => vec![Scheme::FixedArm, Scheme::Eclectic],
    };
    let measures = match measure {
        Some(MeasureArg::RP) => vec![Measure::SimpleReturn],
        Some(MeasureArg::LogitCosine) => vec![Measure::LogitCosine],
        None => vec![Measure::SimpleReturn, Measure::LogitCosine],
    };
    let dir = out.join("attribution");
    let mut files = Vec::new();
    for s in schemes {
        for m in &measures {
            let (data, stem) = match s {
                Scheme::FixedArm => (attribution::build_fixed_design(&load_fixed(cfg, out)?.paths, *m)?, format!("fixed_{}", m.name())),
                Scheme::Eclectic => match load_eclectic(out)? {
                    Some(e) => (attribution::build_eclectic_design(&e.paths, *m)?, format!("eclectic_{}", m.name())),
                    None if scheme.is_none() => {
                        log::warn!("no eclectic results; skipping eclectic attribution");
                        continue;
                    }
                    None => bail!("eclectic results not found; run `genport blend` first"),
                },
            };
            files.extend(attribution_files(cfg, &data, &stem, &dir)?);
        }
    }
    Ok(files)
}

pub fn cmd_report(cfg: &RunConfig, out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let panel = load_returns(cfg, out)?;
    let fixed = load_fixed(cfg, out)?;
    let eclectic = load_eclectic(out)?;
    let bench = benchmark_path(&panel, cfg.backtest.fit_window_steps);
    let mut series = report::fixed_series(&fixed.paths);
    if let Some(e) = &eclectic {
        series.extend(report::eclectic_series(&e.paths));
    }
    series.push(report::Series { name: "equal weight".into(), kind: "benchmark", seed: None, records: &bench });

    let dir = out.join("report");
    let mut files = Vec::new();
    let mut emit = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> anyhow::Result<()> {
        let p = dir.join(name);
        write_table(&p, header, &rows)?;
        files.push(p);
        Ok(())
    };
    emit("cumulative_returns.csv", &["series", "kind", "seed", "step", "t", "cum_return"], report::cumulative_returns(&series))?;
    emit("fixed_logit_cosine_groups.csv", &["group", "step", "t", "paths", "mean_cum_logit_cosine"], report::fixed_group_logit_cosine(&fixed.paths))?;
    emit("average_weights.csv", &["series", "step", "t", "asset", "weight"], report::average_weights(&series, &panel.assets))?;
    if let Some(e) = &eclectic {
        emit("eclectic_logit_cosine_groups.csv", &["group", "step", "t", "paths", "mean_cum_logit_cosine"], report::eclectic_group_logit_cosine(&e.paths))?;
        let ids: Vec<String> = cfg.backtest.arms.iter().map(|a| a.id()).collect();
        emit("psi.csv", &["bandit", "seed", "step", "t", "arm", "psi"], report::psi_trajectories(&e.paths, &ids))?;
    }
    let sum = report::summary(&series);
    println!("{:<60} {:>9} {:>8} {:>12} {:>10}", "series", "kind", "paths", "wealth", "logit-cos");
    for r in &sum {
        println!("{:<60} {:>9} {:>8} {:>12.6} {:>10.4}", r[0], r[1], r[2], r[3].parse::<f64>().unwrap_or(f64::NAN), r[5].parse::<f64>().unwrap_or(f64::NAN));
    }
    emit(
        "summary.csv",
        &["series", "kind", "paths", "terminal_wealth", "mean_r_p", "mean_logit_cosine", "mean_logit_turnover", "flagged_steps"],
        sum,
    )?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_flag_forms() {
        assert_eq!(parse_seeds("3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_seeds("4, 9").unwrap(), vec![4, 9]);
        assert!(parse_seeds("0").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["genport", "--config", "/nonexistent.toml", "backtest"]), 1);
        assert_eq!(run(["genport", "frobnicate"]), 1);
        assert_eq!(CliError::Runtime(anyhow::anyhow!("x")).exit_code(), 2);
    }
}
