//! Price ingestion and return computation.

mod fetch;

pub use fetch::{fetch_candles, fetch_panel, FetchConfig};

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, SecondsFormat, TimeZone, Utc};
use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Close prices on a strictly increasing UTC time grid, one column per asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePanel {
    pub timestamps: Vec<DateTime<Utc>>,
    pub assets: Vec<String>,
    /// T × D, all entries finite and positive.
    pub prices: DMatrix<f64>,
}

/// Simple returns over non-overlapping intervals of `step` price rows.
///
/// Row `k` is the return from `timestamps[k] - step` rows to `timestamps[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnPanel {
    pub timestamps: Vec<DateTime<Utc>>,
    pub assets: Vec<String>,
    pub returns: DMatrix<f64>,
    pub step: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub rows_read: usize,
    pub rows_dropped: usize,
}

impl PricePanel {
    pub fn n_rows(&self) -> usize {
        self.prices.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.prices.ncols()
    }

    fn validate(&self) -> Result<()> {
        if self.timestamps.len() != self.prices.nrows() || self.assets.len() != self.prices.ncols() {
            return Err(Error::invalid("price panel shape mismatch"));
        }
        if self.timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("timestamps must be strictly increasing"));
        }
        if self.prices.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::invalid("prices must be finite and positive"));
        }
        Ok(())
    }
}

impl ReturnPanel {
    pub fn n_rows(&self) -> usize {
        self.returns.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.returns.ncols()
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.returns.row(t).iter().copied().collect()
    }

    /// Rows `[start, end)` as an owned matrix.
    pub fn window(&self, start: usize, end: usize) -> DMatrix<f64> {
        self.returns.rows(start, end - start).into_owned()
    }
}

pub fn load_price_csv(path: impl AsRef<Path>) -> Result<PricePanel> {
    let file = std::fs::File::open(path.as_ref())?;
    let (panel, stats) = read_price_csv(file)?;
    if stats.rows_dropped > 0 {
        log::warn!(
            "{}: dropped {} of {} rows with missing, non-finite or non-positive prices",
            path.as_ref().display(),
            stats.rows_dropped,
            stats.rows_read
        );
    }
    Ok(panel)
}

/// Parse a `timestamp,<sym1>,...,<symD>` CSV. Rows with any unusable price are
/// dropped; the remaining rows are sorted by timestamp.
pub fn read_price_csv<R: Read>(reader: R) -> Result<(PricePanel, LoadStats)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || !headers[0].eq_ignore_ascii_case("timestamp") {
        return Err(Error::Parse("malformed header: expected `timestamp,<symbols...>`".into()));
    }
    let assets: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut seen = HashSet::new();
    if assets.iter().any(|a| a.is_empty() || !seen.insert(a.clone())) {
        return Err(Error::Parse("malformed header: empty or duplicate symbol".into()));
    }

    let mut stats = LoadStats::default();
    let mut rows: Vec<(DateTime<Utc>, Vec<f64>)> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        stats.rows_read += 1;
        if record.len() != headers.len() {
            return Err(Error::Parse(format!("row {} has {} fields, expected {}", stats.rows_read, record.len(), headers.len())));
        }
        let ts = parse_timestamp(&record[0])?;
        let prices: Vec<f64> = record.iter().skip(1).map(|s| s.parse::<f64>().unwrap_or(f64::NAN)).collect();
        if prices.iter().all(|p| p.is_finite() && *p > 0.0) {
            rows.push((ts, prices));
        } else {
            stats.rows_dropped += 1;
        }
    }
    rows.sort_by_key(|r| r.0);
    if rows.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::Parse("duplicate timestamps".into()));
    }
    if rows.len() < 2 {
        return Err(Error::Parse(format!("fewer than 2 usable rows ({})", rows.len())));
    }
    let d = assets.len();
    let prices = DMatrix::from_fn(rows.len(), d, |i, j| rows[i].1[j]);
    let panel = PricePanel {
        timestamps: rows.into_iter().map(|r| r.0).collect(),
        assets,
        prices,
    };
    Ok((panel, stats))
}

fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::Parse(format!("bad timestamp `{s}`: {e}")))
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub fn write_price_csv<W: Write>(panel: &PricePanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend(panel.assets.iter().cloned());
    w.write_record(&header)?;
    for (i, ts) in panel.timestamps.iter().enumerate() {
        let mut rec = vec![format_timestamp(ts)];
        rec.extend(panel.prices.row(i).iter().map(|p| p.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_price_csv(panel: &PricePanel, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_price_csv(panel, std::io::BufWriter::new(file))
}

/// Non-overlapping `step`-row simple returns.
pub fn compute_returns(panel: &PricePanel, step: usize) -> Result<ReturnPanel> {
    panel.validate()?;
    let t = panel.n_rows();
    if step == 0 {
        return Err(Error::invalid("step must be positive"));
    }
    if step >= t {
        return Err(Error::invalid(format!("step {step} must be smaller than the number of price rows {t}")));
    }
    let n = (t - 1) / step;
    let d = panel.n_assets();
    let returns = DMatrix::from_fn(n, d, |k, j| panel.prices[((k + 1) * step, j)] / panel.prices[(k * step, j)] - 1.0);
    Ok(ReturnPanel {
        timestamps: (0..n).map(|k| panel.timestamps[(k + 1) * step]).collect(),
        assets: panel.assets.clone(),
        returns,
        step,
    })
}

/// Inner join of panels on their timestamps; columns are concatenated.
pub fn merge_panels(panels: &[PricePanel]) -> Result<PricePanel> {
    let first = panels.first().ok_or_else(|| Error::invalid("no panels to merge"))?;
    let mut common: Vec<DateTime<Utc>> = first.timestamps.clone();
    for p in &panels[1..] {
        let set: HashSet<_> = p.timestamps.iter().collect();
        common.retain(|t| set.contains(t));
    }
    if common.len() < 2 {
        return Err(Error::invalid("fewer than 2 common timestamps"));
    }
    let mut assets = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for p in panels {
        let index: std::collections::HashMap<_, _> = p.timestamps.iter().enumerate().map(|(i, t)| (*t, i)).collect();
        for (j, a) in p.assets.iter().enumerate() {
            if assets.contains(a) {
                return Err(Error::invalid(format!("asset `{a}` appears in more than one panel")));
            }
            assets.push(a.clone());
            cols.push(common.iter().map(|t| p.prices[(index[t], j)]).collect());
        }
    }
    let prices = DMatrix::from_fn(common.len(), assets.len(), |i, j| cols[j][i]);
    Ok(PricePanel { timestamps: common, assets, prices })
}

/// Parameters of the bundled synthetic market: correlated geometric random walks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_assets: usize,
    pub n_rows: usize,
    /// Pairwise correlation of the daily log-return shocks.
    pub correlation: f64,
    pub daily_drift: f64,
    pub daily_vol: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_assets: 4,
            n_rows: 241,
            correlation: 0.6,
            daily_drift: 0.0005,
            daily_vol: 0.03,
            seed: 20_230_604,
        }
    }
}

pub fn synthetic_panel(spec: &SyntheticSpec) -> Result<PricePanel> {
    if spec.n_assets == 0 || spec.n_rows < 2 {
        return Err(Error::invalid("synthetic panel needs at least one asset and two rows"));
    }
    if !(0.0..1.0).contains(&spec.correlation) {
        return Err(Error::invalid("synthetic correlation must lie in [0, 1)"));
    }
    let mut rng = rng::from_seed(spec.seed);
    let d = spec.n_assets;
    let rho = spec.correlation;
    let start = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).single().expect("valid date");
    let mut prices = DMatrix::zeros(spec.n_rows, d);
    let mut level: Vec<f64> = (0..d).map(|j| 100.0 * (1.0 + j as f64) * (0.9 + 0.2 * rng.random::<f64>())).collect();
    for i in 0..spec.n_rows {
        if i > 0 {
            let common: f64 = StandardNormal.sample(&mut rng);
            for l in level.iter_mut() {
                let idio: f64 = StandardNormal.sample(&mut rng);
                let shock = rho.sqrt() * common + (1.0 - rho).sqrt() * idio;
                *l *= (spec.daily_drift - 0.5 * spec.daily_vol.powi(2) + spec.daily_vol * shock).exp();
            }
        }
        for j in 0..d {
            prices[(i, j)] = level[j];
        }
    }
    Ok(PricePanel {
        timestamps: (0..spec.n_rows).map(|i| start + Duration::days(i as i64)).collect(),
        assets: (0..d).map(|j| format!("SYN{}", j + 1)).collect(),
        prices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const CSV3: &str = "timestamp,AAA,BBB\n\
        2021-01-01T00:00:00Z,100,50\n\
        2021-01-02T00:00:00Z,110,55\n\
        2021-01-03T00:00:00Z,99,44\n";

    fn panel_1d(prices: &[f64]) -> PricePanel {
        let start = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
        PricePanel {
            timestamps: (0..prices.len()).map(|i| start + Duration::days(i as i64)).collect(),
            assets: vec!["X".into()],
            prices: DMatrix::from_column_slice(prices.len(), 1, prices),
        }
    }

    #[test]
    fn parses_three_rows() {
        let (p, stats) = read_price_csv(CSV3.as_bytes()).unwrap();
        assert_eq!(p.n_rows(), 3);
        assert_eq!(p.n_assets(), 2);
        assert_eq!(p.prices[(2, 1)], 44.0);
        assert_eq!(stats.rows_dropped, 0);
    }

    #[test]
    fn drops_nan_rows() {
        let csv = "timestamp,AAA,BBB\n\
            2021-01-01T00:00:00Z,100,50\n\
            2021-01-02T00:00:00Z,NaN,55\n\
            2021-01-03T00:00:00Z,99,44\n\
            2021-01-04T00:00:00Z,-1,44\n";
        let (p, stats) = read_price_csv(csv.as_bytes()).unwrap();
        assert_eq!(p.n_rows(), 2);
        assert_eq!(stats.rows_dropped, 2);
    }

    #[test]
    fn shuffled_rows_sort() {
        let shuffled = "timestamp,AAA,BBB\n\
            2021-01-03T00:00:00Z,99,44\n\
            2021-01-01T00:00:00Z,100,50\n\
            2021-01-02T00:00:00Z,110,55\n";
        let (a, _) = read_price_csv(CSV3.as_bytes()).unwrap();
        let (b, _) = read_price_csv(shuffled.as_bytes()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(read_price_csv("time,AAA\n2021-01-01T00:00:00Z,1\n2021-01-02T00:00:00Z,2\n".as_bytes()).is_err());
        assert!(read_price_csv("timestamp,AAA\n2021-01-01T00:00:00Z,1\n".as_bytes()).is_err());
        let dup = "timestamp,AAA\n2021-01-01T00:00:00Z,1\n2021-01-01T00:00:00Z,2\n";
        assert!(read_price_csv(dup.as_bytes()).is_err());
    }

    #[test]
    fn returns_examples() {
        let r = compute_returns(&panel_1d(&[100.0, 110.0, 99.0]), 1).unwrap();
        assert_abs_diff_eq!(r.returns[(0, 0)], 0.10, epsilon = 1e-15);
        assert_abs_diff_eq!(r.returns[(1, 0)], -0.10, epsilon = 1e-15);

        let r = compute_returns(&panel_1d(&[100.0, 100.0, 100.0]), 1).unwrap();
        assert!(r.returns.iter().all(|x| *x == 0.0));

        let r = compute_returns(&panel_1d(&[100.0, 105.0, 110.25]), 2).unwrap();
        assert_eq!(r.n_rows(), 1);
        assert_abs_diff_eq!(r.returns[(0, 0)], 0.1025, epsilon = 1e-14);

        assert!(compute_returns(&panel_1d(&[1.0, 2.0]), 2).is_err());
    }

    #[test]
    fn csv_round_trip_is_idempotent() {
        let p = synthetic_panel(&SyntheticSpec { n_rows: 30, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        write_price_csv(&p, &mut buf).unwrap();
        let (q, _) = read_price_csv(buf.as_slice()).unwrap();
        assert_eq!(p, q);
        let mut buf2 = Vec::new();
        write_price_csv(&q, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn merge_is_inner_join() {
        let a = panel_1d(&[1.0, 2.0, 3.0]);
        let mut b = panel_1d(&[5.0, 6.0]);
        b.assets = vec!["Y".into()];
        b.timestamps = a.timestamps[1..].to_vec();
        let m = merge_panels(&[a, b]).unwrap();
        assert_eq!(m.n_rows(), 2);
        assert_eq!(m.prices[(0, 0)], 2.0);
        assert_eq!(m.prices[(1, 1)], 6.0);
    }

    proptest::proptest! {
        #[test]
        fn cumulative_returns_rebuild_prices(prices in proptest::collection::vec(0.01f64..1e4, 2..40), step in 1usize..4) {
            let panel = panel_1d(&prices);
            proptest::prop_assume!(step < prices.len());
            let r = compute_returns(&panel, step).unwrap();
            let mut acc = 1.0;
            for k in 0..r.n_rows() {
                acc *= 1.0 + r.returns[(k, 0)];
                let expected = prices[(k + 1) * step] / prices[0];
                proptest::prop_assert!((acc / expected - 1.0).abs() <= 1e-12);
            }
        }
    }
}
