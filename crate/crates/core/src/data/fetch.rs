//! Candle retrieval from an exchange-style kline endpoint.
//!
//! The endpoint is a URL template with `{symbol}`, `{interval}`, `{start}`,
//! `{end}` and `{limit}` placeholders (times in epoch milliseconds). The
//! response must be a JSON array of `[open_time, open, high, low, close, ...]`
//! rows; numeric fields may be JSON numbers or decimal strings.

use std::thread::sleep;
use std::time::Duration as StdDuration;

use chrono::{DateTime, TimeZone, Utc};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{merge_panels, PricePanel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchConfig {
    pub endpoint: String,
    pub interval: String,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    /// Pause between requests and after a rate-limit response.
    #[serde(default = "default_rate_limit_ms")]
    pub rate_limit_ms: u64,
    /// Page size requested via `{limit}`; a shorter page ends pagination.
    #[serde(default = "default_page_limit")]
    pub page_limit: usize,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
}

fn default_rate_limit_ms() -> u64 {
    250
}
fn default_page_limit() -> usize {
    1000
}
fn default_max_retries() -> u32 {
    3
}

fn render(template: &str, symbol: &str, interval: &str, start_ms: i64, end_ms: i64, limit: usize) -> String {
    template
        .replace("{symbol}", symbol)
        .replace("{interval}", interval)
        .replace("{start}", &start_ms.to_string())
        .replace("{end}", &end_ms.to_string())
        .replace("{limit}", &limit.to_string())
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.parse().ok(),
        _ => None,
    }
}

fn as_i64(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64().or_else(|| n.as_f64().map(|x| x as i64)),
        Value::String(s) => s.parse().ok(),
        _ => None,
    }
}

fn get_page(client: &reqwest::blocking::Client, url: &str, cfg: &FetchConfig) -> Result<Vec<(i64, f64)>> {
    let mut failures = 0u32;
    let mut throttled = 0u32;
    loop {
        let outcome = client.get(url).send();
        let retry_reason = match outcome {
            Ok(resp) => {
                let status = resp.status();
                if status.as_u16() == 429 || status.as_u16() == 418 {
                    throttled += 1;
                    if throttled > 10 * cfg.max_retries.max(1) {
                        return Err(Error::Http(format!("rate limited repeatedly at {url}")));
                    }
                    log::warn!("rate limited ({status}); sleeping {} ms", cfg.rate_limit_ms);
                    sleep(StdDuration::from_millis(cfg.rate_limit_ms));
                    continue;
                }
                if status.is_success() {
                    let body: Value = resp.json().map_err(|e| Error::Http(format!("bad body: {e}")))?;
                    return parse_rows(&body);
                }
                format!("status {status}")
            }
            Err(e) => e.to_string(),
        };
        failures += 1;
        if failures > cfg.max_retries {
            return Err(Error::Http(format!("{url}: {retry_reason}")));
        }
        let backoff = cfg.rate_limit_ms.max(50) * (1u64 << failures.min(10));
        log::warn!("request failed ({retry_reason}); retry {failures} in {backoff} ms");
        sleep(StdDuration::from_millis(backoff));
    }
}

fn parse_rows(body: &Value) -> Result<Vec<(i64, f64)>> {
    let rows = body.as_array().ok_or_else(|| Error::Http("response is not a JSON array".into()))?;
    rows.iter()
        .map(|row| {
            let cells = row.as_array().ok_or_else(|| Error::Http("candle is not an array".into()))?;
            if cells.len() < 5 {
                return Err(Error::Http("candle has fewer than 5 fields".into()));
            }
            let t = as_i64(&cells[0]).ok_or_else(|| Error::Http("bad open time".into()))?;
            let close = as_f64(&cells[4]).ok_or_else(|| Error::Http("bad close price".into()))?;
            Ok((t, close))
        })
        .collect()
}

/// Fetch one symbol's closes over `[cfg.start, cfg.end]`, following pages
/// until the range is covered.
pub fn fetch_candles(cfg: &FetchConfig, symbol: &str) -> Result<PricePanel> {
    if cfg.page_limit == 0 {
        return Err(Error::invalid("page_limit must be positive"));
    }
    let client = reqwest::blocking::Client::builder()
        .timeout(StdDuration::from_secs(30))
        .build()
        .map_err(|e| Error::Http(e.to_string()))?;
    let end_ms = cfg.end.timestamp_millis();
    let mut cursor = cfg.start.timestamp_millis();
    let mut candles: Vec<(i64, f64)> = Vec::new();
    let mut first = true;
    loop {
        let url = render(&cfg.endpoint, symbol, &cfg.interval, cursor, end_ms, cfg.page_limit);
        let page = get_page(&client, &url, cfg)?;
        if page.is_empty() {
            if first {
                return Err(Error::EmptyResponse);
            }
            break;
        }
        first = false;
        let last_open = page.iter().map(|c| c.0).max().unwrap_or(cursor);
        let full = page.len() >= cfg.page_limit;
        candles.extend(page);
        if !full || last_open >= end_ms || last_open < cursor {
            break;
        }
        cursor = last_open + 1;
        if cfg.rate_limit_ms > 0 {
            sleep(StdDuration::from_millis(cfg.rate_limit_ms));
        }
    }
    candles.retain(|c| c.0 <= end_ms && c.1.is_finite() && c.1 > 0.0);
    candles.sort_by_key(|c| c.0);
    candles.dedup_by_key(|c| c.0);
    if candles.is_empty() {
        return Err(Error::EmptyResponse);
    }
    let timestamps = candles
        .iter()
        .map(|c| Utc.timestamp_millis_opt(c.0).single().ok_or_else(|| Error::Http(format!("bad timestamp {}", c.0))))
        .collect::<Result<Vec<_>>>()?;
    Ok(PricePanel {
        timestamps,
        assets: vec![symbol.to_string()],
        prices: DMatrix::from_iterator(candles.len(), 1, candles.iter().map(|c| c.1)),
    })
}

/// Fetch each distinct symbol once and inner-join the results.
pub fn fetch_panel(cfg: &FetchConfig, symbols: &[String]) -> Result<PricePanel> {
    let mut unique: Vec<&String> = Vec::new();
    for s in symbols {
        if !unique.contains(&s) {
            unique.push(s);
        }
    }
    let panels = unique
        .iter()
        .map(|s| fetch_candles(cfg, s).map_err(|e| e.at_stage(format!("fetch {s}"))))
        .collect::<Result<Vec<_>>>()?;
    merge_panels(&panels)
}
