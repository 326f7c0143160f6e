//! Result files: JSON for reloading between subcommands, CSV per path.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use genport::backtest::{EclecticPath, FixedPath, StepRecord};
use genport::data::format_timestamp;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Results<P> {
    pub config_hash: String,
    pub assets: Vec<String>,
    pub paths: Vec<P>,
}

pub type FixedResults = Results<FixedPath>;
pub type EclecticResults = Results<EclecticPath>;

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Per-step CSV with cumulative wealth and one column per asset weight.
pub fn write_records(records: &[StepRecord], assets: &[String], n_arms: usize, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["step", "t", "r_p", "logit_cosine", "logit_turnover", "wealth", "flagged"].iter().map(|s| s.to_string()).collect();
    header.extend(assets.iter().map(|a| format!("w0:{a}")));
    header.extend(assets.iter().map(|a| format!("w1:{a}")));
    header.extend((0..n_arms).map(|k| format!("psi:{k}")));
    w.write_record(&header)?;
    let mut wealth = 1.0;
    for r in records {
        if r.w0.len() != assets.len() {
            bail!("record at step {} has {} weights for {} assets", r.step, r.w0.len(), assets.len());
        }
        wealth *= 1.0 + r.r_p;
        let mut row = vec![
            r.step.to_string(),
            format_timestamp(&r.t),
            r.r_p.to_string(),
            r.logit_cosine.to_string(),
            r.logit_turnover.to_string(),
            wealth.to_string(),
            (r.flagged as u8).to_string(),
        ];
        row.extend(r.w0.iter().map(|x| x.to_string()));
        row.extend(r.w1.iter().map(|x| x.to_string()));
        match &r.psi {
            Some(p) => row.extend(p.iter().map(|x| x.to_string())),
            None => row.extend((0..n_arms).map(|_| String::new())),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Write `rows` under `header` to a CSV file.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// `path` relative to `base`, with forward slashes, for manifests.
pub fn relative(path: &Path, base: &Path) -> String {
    let rel: PathBuf = path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf());
    rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/")
}
