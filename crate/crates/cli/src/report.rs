//! Plot-ready series derived from backtest results.

use std::collections::BTreeMap;

use genport::attribution::{eclectic_rows, fixed_rows, DesignLayout, Measure};
use genport::backtest::{terminal_wealth, EclecticPath, FixedPath, StepRecord};
use genport::data::format_timestamp;

/// One labelled path for reporting.
pub struct Series<'a> {
    pub name: String,
    pub kind: &'static str,
    pub seed: Option<u64>,
    pub records: &'a [StepRecord],
}

pub fn fixed_series(paths: &[FixedPath]) -> Vec<Series<'_>> {
    paths.iter().map(|p| Series { name: p.arm.id(), kind: "fixed", seed: Some(p.seed), records: &p.records }).collect()
}

pub fn eclectic_series(paths: &[EclecticPath]) -> Vec<Series<'_>> {
    paths.iter().map(|p| Series { name: p.bandit.id(), kind: "eclectic", seed: Some(p.seed), records: &p.records }).collect()
}

fn seed_cell(s: Option<u64>) -> String {
    s.map(|s| s.to_string()).unwrap_or_default()
}

/// `series,kind,seed,step,t,cum_return` with `cum_return = prod(1 + r_p) - 1`.
pub fn cumulative_returns(series: &[Series]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for s in series {
        let mut wealth = 1.0;
        for r in s.records {
            wealth *= 1.0 + r.r_p;
            rows.push(vec![s.name.clone(), s.kind.into(), seed_cell(s.seed), r.step.to_string(), format_timestamp(&r.t), (wealth - 1.0).to_string()]);
        }
    }
    rows
}

/// Mean over the paths carrying each factor level of the cumulative
/// logit-cosine: `group,step,t,paths,mean_cum_logit_cosine`.
fn group_means(layout: &DesignLayout, levels: Vec<Vec<String>>, records: Vec<&[StepRecord]>) -> Vec<Vec<String>> {
    // group label -> step -> (timestamp, sum, count)
    let mut acc: BTreeMap<String, BTreeMap<usize, (String, f64, usize)>> = BTreeMap::new();
    for (lv, recs) in levels.iter().zip(records) {
        let mut cum = 0.0;
        for r in recs {
            cum += r.logit_cosine;
            for (f, l) in layout.factors.iter().zip(lv) {
                let e = acc.entry(format!("{f} {l}")).or_default().entry(r.step).or_insert_with(|| (format_timestamp(&r.t), 0.0, 0));
                e.1 += cum;
                e.2 += 1;
            }
        }
    }
    let mut rows = Vec::new();
    for (g, steps) in acc {
        for (step, (t, sum, n)) in steps {
            rows.push(vec![g.clone(), step.to_string(), t, n.to_string(), (sum / n as f64).to_string()]);
        }
    }
    rows
}

pub fn fixed_group_logit_cosine(paths: &[FixedPath]) -> Vec<Vec<String>> {
    let levels = paths.iter().map(|p| fixed_rows(std::slice::from_ref(p), Measure::LogitCosine).first().map(|r| r.levels.clone()).unwrap_or_default()).collect();
    group_means(&DesignLayout::fixed_arm(), levels, paths.iter().map(|p| p.records.as_slice()).collect())
}

pub fn eclectic_group_logit_cosine(paths: &[EclecticPath]) -> Vec<Vec<String>> {
    let levels = paths.iter().map(|p| eclectic_rows(std::slice::from_ref(p), Measure::LogitCosine).first().map(|r| r.levels.clone()).unwrap_or_default()).collect();
    group_means(&DesignLayout::eclectic(), levels, paths.iter().map(|p| p.records.as_slice()).collect())
}

/// Weights averaged over seeds: `series,step,t,asset,weight`.
pub fn average_weights(series: &[Series], assets: &[String]) -> Vec<Vec<String>> {
    let mut acc: BTreeMap<(String, usize), (String, Vec<f64>, usize)> = BTreeMap::new();
    for s in series {
        for r in s.records {
            let e = acc.entry((s.name.clone(), r.step)).or_insert_with(|| (format_timestamp(&r.t), vec![0.0; assets.len()], 0));
            for (a, w) in e.1.iter_mut().zip(&r.w0) {
                *a += w;
            }
            e.2 += 1;
        }
    }
    let mut rows = Vec::new();
    for ((name, step), (t, sums, n)) in acc {
        for (asset, s) in assets.iter().zip(sums) {
            rows.push(vec![name.clone(), step.to_string(), t.clone(), asset.clone(), (s / n as f64).to_string()]);
        }
    }
    rows
}

/// `bandit,seed,step,t,arm,psi`.
pub fn psi_trajectories(paths: &[EclecticPath], arm_ids: &[String]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for p in paths {
        for r in &p.records {
            if let Some(psi) = &r.psi {
                for (k, v) in psi.iter().enumerate() {
                    let arm = arm_ids.get(k).cloned().unwrap_or_else(|| k.to_string());
                    rows.push(vec![p.bandit.id(), p.seed.to_string(), r.step.to_string(), format_timestamp(&r.t), arm, v.to_string()]);
                }
            }
        }
    }
    rows
}

/// Per-series means over paths:
/// `series,kind,paths,terminal_wealth,mean_r_p,mean_logit_cosine,mean_logit_turnover,flagged_steps`.
pub fn summary(series: &[Series]) -> Vec<Vec<String>> {
    let mut groups: BTreeMap<(String, &str), Vec<&Series>> = BTreeMap::new();
    for s in series {
        groups.entry((s.name.clone(), s.kind)).or_default().push(s);
    }
    let mut rows = Vec::new();
    for ((name, kind), ss) in groups {
        let n = ss.len() as f64;
        let steps: Vec<&StepRecord> = ss.iter().flat_map(|s| s.records.iter()).collect();
        let m = steps.len().max(1) as f64;
        rows.push(vec![
            name,
            kind.to_string(),
            ss.len().to_string(),
            (ss.iter().map(|s| terminal_wealth(s.records)).sum::<f64>() / n).to_string(),
            (steps.iter().map(|r| r.r_p).sum::<f64>() / m).to_string(),
            (steps.iter().map(|r| r.logit_cosine).sum::<f64>() / m).to_string(),
            (steps.iter().map(|r| r.logit_turnover).sum::<f64>() / m).to_string(),
            steps.iter().filter(|r| r.flagged).count().to_string(),
        ]);
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    fn rec(step: usize, r_p: f64, lc: f64, w0: Vec<f64>) -> StepRecord {
        StepRecord {
            step,
            t: Utc.with_ymd_and_hms(2021, 1, 1 + step as u32, 0, 0, 0).unwrap(),
            w1: w0.clone(),
            w0,
            r_p,
            logit_cosine: lc,
            logit_turnover: 0.0,
            psi: None,
            flagged: false,
        }
    }

    #[test]
    fn cumulative_and_summary() {
        let recs = vec![rec(0, 0.1, 1.0, vec![1.0]), rec(1, -0.5, -1.0, vec![1.0])];
        let s = [Series { name: "a".into(), kind: "fixed", seed: Some(1), records: &recs }];
        let c = cumulative_returns(&s);
        assert_eq!(c[1][5].parse::<f64>().unwrap(), 1.1 * 0.5 - 1.0);
        let sm = summary(&s);
        assert_eq!(sm[0][3].parse::<f64>().unwrap(), 1.1 * 0.5);
        assert_eq!(sm[0][5], "0");
    }

    #[test]
    fn weights_average_over_seeds() {
        let a = vec![rec(0, 0.0, 0.0, vec![1.0, 0.0])];
        let b = vec![rec(0, 0.0, 0.0, vec![0.0, -1.0])];
        let s = [
            Series { name: "x".into(), kind: "fixed", seed: Some(1), records: &a },
            Series { name: "x".into(), kind: "fixed", seed: Some(2), records: &b },
        ];
        let rows = average_weights(&s, &["A".into(), "B".into()]);
        assert_eq!(rows[0][4], "0.5");
        assert_eq!(rows[1][4], "-0.5");
    }
}
