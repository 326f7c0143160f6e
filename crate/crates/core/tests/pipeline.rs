use genport::attribution::{build_eclectic_design, build_fixed_design, lasso_cv, CvOptions, Measure};
use genport::backtest::{run_eclectic_backtest, run_fixed_backtest, terminal_wealth, ArmSpec, BacktestConfig};
use genport::bandit::{ActivationKind, BanditConfig, Policy, SimilarityKind};
use genport::data::{compute_returns, synthetic_panel, ReturnPanel, SyntheticSpec};
use genport::optimizer::SolverOptions;
use genport::scenarios::ScenarioConfig;

fn panel() -> ReturnPanel {
    let p = synthetic_panel(&SyntheticSpec { n_rows: 141, ..SyntheticSpec::default() }).unwrap();
    compute_returns(&p, 2).unwrap()
}

fn config() -> BacktestConfig {
    let arm = |m: &str, o: &str, v: f64| ArmSpec::new(m.parse().unwrap(), o.parse().unwrap(), v);
    BacktestConfig {
        fit_window_steps: 50,
        n_scenarios: 300,
        seeds: vec![11, 12],
        arms: vec![
            arm("np vinecop elliptical", "maxSharpeRatio", 1.0),
            arm("mv norm", "minVariance", 1.0),
            arm("mv norm", "LongParity", 1.0),
            arm("mv norm", "minVariance", 2.0),
        ],
        bandits: vec![
            BanditConfig::new(SimilarityKind::Cosine, ActivationKind::Logit, Policy::Blend, 0.999).unwrap(),
            BanditConfig::new(SimilarityKind::Cosine, ActivationKind::Logit, Policy::Switch, 0.999).unwrap(),
        ],
        scenario: ScenarioConfig { min_window: 50, ..ScenarioConfig::default() },
        solver: SolverOptions { random_starts: 3, max_evals_per_start: 600, ..SolverOptions::default() },
        ..BacktestConfig::default()
    }
}

#[test]
fn backtest_blend_attribute() {
    let (panel, cfg) = (panel(), config());
    let fixed = run_fixed_backtest(&cfg, &panel).unwrap();
    assert_eq!(fixed.len(), 8);
    let steps = panel.n_rows() - cfg.fit_window_steps;
    for p in &fixed {
        assert_eq!(p.records.len(), steps);
        assert!(p.records.iter().all(|r| !r.flagged));
        assert!(p.records.iter().all(|r| r.w0.iter().map(|x| x.abs()).sum::<f64>() <= 1.0 + 1e-9));
        assert!(terminal_wealth(&p.records) > 0.0);
    }
    let ecl = run_eclectic_backtest(&cfg, &panel, &fixed).unwrap();
    assert_eq!(ecl.len(), 4);
    for e in &ecl {
        for r in &e.records {
            let psi = r.psi.as_ref().unwrap();
            assert!((psi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(psi.iter().all(|x| *x >= 0.0));
        }
    }

    let d = build_fixed_design(&fixed, Measure::SimpleReturn).unwrap();
    assert_eq!(d.x.nrows(), 8 * steps);
    assert!(d.x.row_iter().all(|r| r.sum() == 7.0));
    let d = build_eclectic_design(&ecl, Measure::LogitCosine).unwrap();
    assert!(d.x.row_iter().all(|r| r.sum() == 11.0));
    let fit = lasso_cv(&d, &CvOptions::default()).unwrap();
    assert_eq!(fit.cv_mse.len(), 7);
    assert!(fit.beta.iter().all(|b| b.is_finite()));
}

/// Garbage after step t must not change any decision made at or before t.
#[test]
fn future_rows_do_not_leak() {
    let (panel, mut cfg) = (panel(), config());
    cfg.seeds = vec![11];
    let t0 = cfg.fit_window_steps + 20;
    let mut poisoned = panel.clone();
    for i in t0 + 1..poisoned.n_rows() {
        for j in 0..poisoned.n_assets() {
            poisoned.returns[(i, j)] = if (i + j) % 2 == 0 { 0.8 } else { -0.7 };
        }
    }
    let a = run_fixed_backtest(&cfg, &panel).unwrap();
    let b = run_fixed_backtest(&cfg, &poisoned).unwrap();
    let ea = run_eclectic_backtest(&cfg, &panel, &a).unwrap();
    let eb = run_eclectic_backtest(&cfg, &poisoned, &b).unwrap();
    let upto = |recs: &[genport::backtest::StepRecord]| recs.iter().take_while(|r| r.step <= t0).cloned().collect::<Vec<_>>();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(upto(&x.records), upto(&y.records));
    }
    for (x, y) in ea.iter().zip(&eb) {
        assert_eq!(upto(&x.records), upto(&y.records));
    }
}
