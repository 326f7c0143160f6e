//! Maximize a proxy objective over weights with unit L1 norm and a
//! symmetric box `|w_d| <= m / D`.

use std::time::{Duration, Instant};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{evaluate_objective, evaluate_with_buffer, ObjectiveContext, ObjectiveKind};
use crate::optim::NelderMead;
use crate::rng;

/// Limit of alternately clamping to the box and rescaling to unit L1 norm:
/// `w_d = sign(z_d) min(m / D, t |z_d|)` with `t` chosen so `|w|_1 = 1`,
/// found by water-filling. An all-zero `z` maps to equal long weights. If
/// too few coordinates are nonzero to carry unit mass under the box, the
/// nonzero ones sit at the bound and the rest share the remainder equally;
/// the flag is false in that case.
pub fn project_feasible_flagged(z: &[f64], m: f64) -> (Vec<f64>, bool) {
    let d = z.len();
    let bound = m / d as f64;
    let a: Vec<f64> = z.iter().map(|x| if x.is_finite() { x.abs() } else { 0.0 }).collect();
    let total: f64 = a.iter().sum();
    if !(total > 0.0) {
        return (vec![1.0 / d as f64; d], true);
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[j].total_cmp(&a[i]));
    // k largest coordinates clamped, the rest scaled by t.
    let mut rest = total;
    let mut t = None;
    for k in 0..d {
        let free = 1.0 - k as f64 * bound;
        if a[order[k]] == 0.0 || free <= 0.0 {
            break;
        }
        let cand = free / rest.max(a[order[k]]);
        if cand * a[order[k]] <= bound {
            t = Some(cand);
            break;
        }
        rest -= a[order[k]];
    }
    match t {
        Some(t) => {
            let w = z.iter().zip(&a).map(|(x, ax)| (t * ax).min(bound).copysign(*x) * (*ax > 0.0) as u8 as f64).collect();
            (w, true)
        }
        None => {
            let nnz = a.iter().filter(|x| **x > 0.0).count();
            let fill = (1.0 - nnz as f64 * bound).max(0.0) / (d - nnz).max(1) as f64;
            let w = z.iter().zip(&a).map(|(x, ax)| if *ax > 0.0 { bound.copysign(*x) } else { fill }).collect();
            (w, false)
        }
    }
}

pub fn project_feasible(z: &[f64], m: f64) -> Vec<f64> {
    project_feasible_flagged(z, m).0
}

/// True if `w` satisfies both constraints to the stated tolerances.
pub fn is_feasible(w: &[f64], m: f64) -> bool {
    let bound = m / w.len() as f64;
    let l1: f64 = w.iter().map(|x| x.abs()).sum();
    (l1 - 1.0).abs() <= 1e-6 && w.iter().all(|x| x.abs() <= bound + 1e-9)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub random_starts: usize,
    pub max_evals_per_start: usize,
    /// Simplex diameter at which a start stops.
    pub xtol: f64,
    pub initial_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { random_starts: 8, max_evals_per_start: 2000, xtol: 1e-7, initial_step: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub w_star: Vec<f64>,
    pub objective_value: f64,
    pub n_restarts: usize,
    pub converged: bool,
    /// Every start hit the sentinel and equal long weights were returned.
    pub fallback: bool,
    pub wall_time: Duration,
}

pub fn solve_weights(kind: ObjectiveKind, ctx: &ObjectiveContext, m: f64, seed: u64) -> Result<SolveReport> {
    solve_weights_with(kind, ctx, m, seed, &SolverOptions::default())
}

pub fn solve_weights_with(
    kind: ObjectiveKind,
    ctx: &ObjectiveContext,
    m: f64,
    seed: u64,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    let start = Instant::now();
    let d = ctx.dim();
    if d == 0 {
        return Err(Error::invalid("no assets"));
    }
    if !(m >= 1.0) {
        return Err(Error::invalid(format!("box multiplier m = {m} leaves no feasible weights")));
    }
    let closed = match kind {
        ObjectiveKind::LongParity => Some(vec![1.0 / d as f64; d]),
        ObjectiveKind::ShortParity => Some(vec![-1.0 / d as f64; d]),
        _ => None,
    };
    if let Some(w) = closed {
        let v = evaluate_objective(kind, &w, ctx);
        return Ok(SolveReport {
            w_star: w,
            objective_value: v,
            n_restarts: 0,
            converged: true,
            fallback: false,
            wall_time: start.elapsed(),
        });
    }

    let mut starts = vec![
        project_feasible(ctx.w1, m),
        vec![1.0 / d as f64; d],
        vec![-1.0 / d as f64; d],
    ];
    let mut r = rng::from_seed(seed);
    for _ in 0..opts.random_starts {
        let z: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        starts.push(project_feasible(&z, m));
    }

    let nm = NelderMead { max_evals: opts.max_evals_per_start, xtol: opts.xtol, ftol: 0.0, initial_step: opts.initial_step };
    let results: Vec<(Vec<f64>, f64, bool)> = starts
        .par_iter()
        .map(|x0| {
            let mut buf = Vec::with_capacity(ctx.scenarios.nrows());
            let res = nm.minimize(
                |z| {
                    let w = project_feasible_flagged(z, m).0;
                    -evaluate_with_buffer(kind, &w, ctx, &mut buf).value
                },
                x0,
            );
            let w = project_feasible(&res.x, m);
            let v = evaluate_objective(kind, &w, ctx);
            (w, v, res.converged)
        })
        .collect();

    // Reduce in start order: best value, ties to the lexicographically
    // smallest weights.
    let mut best: Option<&(Vec<f64>, f64, bool)> = None;
    for cand in &results {
        if !cand.1.is_finite() {
            continue;
        }
        best = match best {
            None => Some(cand),
            Some(b) => {
                let better = cand.1 > b.1
                    || (cand.1 == b.1 && cand.0.iter().zip(&b.0).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne())
                        == Some(std::cmp::Ordering::Less));
                Some(if better { cand } else { b })
            }
        };
    }
    let report = match best {
        Some((w, v, conv)) => SolveReport {
            w_star: w.clone(),
            objective_value: *v,
            n_restarts: results.len(),
            converged: *conv,
            fallback: false,
            wall_time: start.elapsed(),
        },
        None => {
            log::warn!("every start of {kind} hit the sentinel; using equal long weights");
            let w = vec![1.0 / d as f64; d];
            let v = evaluate_objective(kind, &w, ctx);
            SolveReport { w_star: w, objective_value: v, n_restarts: results.len(), converged: false, fallback: true, wall_time: start.elapsed() }
        }
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn projection_examples() {
        assert_eq!(project_feasible(&[2.0, 0.0], 5.0), vec![1.0, 0.0]);
        assert_eq!(project_feasible(&[0.25; 4], 5.0), vec![0.25; 4]);
        let w = project_feasible(&[10.0, 1.0, 1.0], 1.0);
        for x in w {
            assert!((x - 1.0 / 3.0).abs() < 1e-8);
        }
        assert_eq!(project_feasible(&[0.0, 0.0], 5.0), vec![0.5, 0.5]);
        let (w, ok) = project_feasible_flagged(&[0.0, 0.0, -1.0, 0.0], 2.0);
        assert!(!ok);
        assert!(is_feasible(&w, 2.0));
    }

    /// The closed form agrees with running the clamp-rescale iteration.
    #[test]
    fn projection_matches_iteration() {
        let mut r = rng::from_seed(8);
        for _ in 0..200 {
            let z: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
            let m = r.random_range(1.2..4.0);
            let bound = m / 6.0;
            let l1: f64 = z.iter().map(|x| x.abs()).sum();
            let mut w: Vec<f64> = z.iter().map(|x| x / l1).collect();
            for _ in 0..10_000 {
                w.iter_mut().for_each(|x| *x = x.clamp(-bound, bound));
                let l1: f64 = w.iter().map(|x| x.abs()).sum();
                w.iter_mut().for_each(|x| *x /= l1);
            }
            let got = project_feasible(&z, m);
            for (a, b) in got.iter().zip(&w) {
                assert!((a - b).abs() < 1e-9, "{got:?} vs {w:?}");
            }
        }
    }

    /// Markowitz oracle `Σ⁻¹1 / 1ᵀΣ⁻¹1`. With negative covariances and a
    /// positive oracle, flipping any sign only adds variance, so the unit-L1
    /// optimum is the oracle up to a global sign.
    #[test]
    fn min_variance_matches_markowitz() {
        let sigma = DMatrix::from_row_slice(3, 3, &[0.0004, -0.0001, -0.00005, -0.0001, 0.0009, -0.0002, -0.00005, -0.0002, 0.0016]);
        let l = sigma.clone().cholesky().unwrap().l();
        let mut r = rng::from_seed(1);
        let n = 200_000;
        let mut s = DMatrix::zeros(n, 3);
        for i in 0..n {
            let g = DVector::from_fn(3, |_, _| StandardNormal.sample(&mut r));
            let x = &l * g;
            for j in 0..3 {
                s[(i, j)] = x[j];
            }
        }
        let inv = sigma.try_inverse().unwrap();
        let raw = &inv * DVector::from_element(3, 1.0);
        let oracle = &raw / raw.sum();
        let w1 = [1.0 / 3.0; 3];
        let ctx = ObjectiveContext::new(&s, &w1, 0.0, 1.0).unwrap();
        assert!(oracle.iter().all(|x| *x > 0.0));
        let rep = solve_weights(ObjectiveKind::MinVariance, &ctx, 5.0, 2).unwrap();
        let sign = rep.w_star[0].signum();
        for j in 0..3 {
            assert!((sign * rep.w_star[j] - oracle[j]).abs() < 0.02, "{:?} vs {oracle}", rep.w_star);
        }
        assert!(is_feasible(&rep.w_star, 5.0));
    }

    #[test]
    fn kelly_binary_bet() {
        let s = DMatrix::from_fn(1000, 2, |i, j| if j == 1 { 0.0 } else if i % 5 < 3 { 1.0 } else { -1.0 });
        let w1 = [0.5, 0.5];
        let ctx = ObjectiveContext::new(&s, &w1, 0.0, 1.0).unwrap();
        let rep = solve_weights(ObjectiveKind::Kelly, &ctx, 5.0, 3).unwrap();
        assert!((rep.w_star[0] - 0.2).abs() < 0.02, "{:?}", rep.w_star);
    }

    #[test]
    fn parity_shortcuts() {
        let s = DMatrix::zeros(10, 4);
        let w1 = [0.1, 0.2, 0.3, 0.4];
        let ctx = ObjectiveContext::new(&s, &w1, 0.005, 1.0).unwrap();
        assert_eq!(solve_weights(ObjectiveKind::LongParity, &ctx, 5.0, 0).unwrap().w_star, vec![0.25; 4]);
        assert_eq!(solve_weights(ObjectiveKind::ShortParity, &ctx, 5.0, 0).unwrap().w_star, vec![-0.25; 4]);
    }

    #[test]
    fn symmetric_assets_split_evenly() {
        let mut r = rng::from_seed(4);
        let s = DMatrix::from_fn(20_000, 2, |_, _| 0.01 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r));
        let w1 = [1.0, 0.0];
        let ctx = ObjectiveContext::new(&s, &w1, 0.0, 1.0).unwrap();
        let rep = solve_weights(ObjectiveKind::MinVariance, &ctx, 5.0, 5).unwrap();
        // Uncorrelated assets: every sign pattern of (0.5, 0.5) is optimal.
        assert!((rep.w_star[0].abs() - 0.5).abs() < 0.02 && (rep.w_star[1].abs() - 0.5).abs() < 0.02, "{:?}", rep.w_star);
    }

    #[test]
    fn deterministic_and_not_worse_than_w1() {
        let mut r = rng::from_seed(6);
        let s = DMatrix::from_fn(500, 3, |_, j| 0.001 * j as f64 + 0.02 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r));
        let w1 = [0.2, 0.5, 0.3];
        let ctx = ObjectiveContext::new(&s, &w1, 0.005, 2.0).unwrap();
        for kind in ObjectiveKind::catalogue() {
            let a = solve_weights(kind, &ctx, 5.0, 9).unwrap();
            let b = solve_weights(kind, &ctx, 5.0, 9).unwrap();
            assert_eq!((&a.w_star, a.objective_value), (&b.w_star, b.objective_value), "{kind}");
            assert_eq!(a.objective_value, evaluate_objective(kind, &a.w_star, &ctx));
            assert!(a.objective_value >= evaluate_objective(kind, &w1, &ctx), "{kind}");
            assert!(is_feasible(&a.w_star, 5.0), "{kind}: {:?}", a.w_star);
        }
    }

    #[test]
    fn kelly_everywhere_infeasible_falls_back() {
        // Every asset loses everything in some scenario, and any L1 = 1
        // mix is then ruined in one of them.
        let s = DMatrix::from_row_slice(4, 2, &[-5.0, 5.0, 5.0, -5.0, -5.0, -5.0, 5.0, 5.0]);
        let ctx = ObjectiveContext::new(&s, &[0.5, 0.5], 0.0, 1.0).unwrap();
        let rep = solve_weights(ObjectiveKind::Kelly, &ctx, 5.0, 1).unwrap();
        assert!(rep.fallback);
        assert_eq!(rep.w_star, vec![0.5, 0.5]);
    }

    #[test]
    fn infeasible_box_rejected() {
        let s = DMatrix::zeros(3, 2);
        let ctx = ObjectiveContext::new(&s, &[0.5, 0.5], 0.0, 1.0).unwrap();
        assert!(solve_weights(ObjectiveKind::MinVariance, &ctx, 0.5, 1).is_err());
    }

    proptest! {
        #[test]
        fn projection_is_feasible(z in prop::collection::vec(-10.0f64..10.0, 1..12), m in 1.0f64..6.0) {
            let w = project_feasible(&z, m);
            prop_assert!(is_feasible(&w, m), "{:?}", w);
        }

        #[test]
        fn projection_is_idempotent(z in prop::collection::vec(-10.0f64..10.0, 2..8), m in 1.5f64..6.0) {
            let w = project_feasible(&z, m);
            let w2 = project_feasible(&w, m);
            for (a, b) in w.iter().zip(&w2) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
