//! Binary design matrices over portfolio-construction choices and a
//! cross-validated LASSO to attribute performance to them.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backtest::{EclecticPath, FixedPath, StepRecord};
use crate::error::{Error, Result};
use crate::rng::{self, purpose};

pub const INTERCEPT: &str = "intercept";
pub const KKT_TOL: f64 = 1e-7;
pub const DEFAULT_FOLDS: usize = 7;
pub const DEFAULT_GRID_LEN: usize = 100;
pub const DEFAULT_GRID_RATIO: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    FixedArm,
    Eclectic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Measure {
    SimpleReturn,
    LogitCosine,
}

impl Measure {
    pub fn of(self, r: &StepRecord) -> f64 {
        match self {
            Measure::SimpleReturn => r.r_p,
            Measure::LogitCosine => r.logit_cosine,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Measure::SimpleReturn => "r_p",
            Measure::LogitCosine => "logit_cosine",
        }
    }
}

/// One observation: a level for every factor plus the response.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorRow {
    pub levels: Vec<String>,
    pub y: f64,
}

/// Factor names and the pairs of factors that get interaction blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignLayout {
    pub factors: Vec<String>,
    pub interactions: Vec<(usize, usize)>,
}

impl DesignLayout {
    /// Intercept, `GenMdl`, `ObjFun`, `TCAvs` and their three pairwise blocks.
    pub fn fixed_arm() -> Self {
        DesignLayout { factors: vec!["GenMdl".into(), "ObjFun".into(), "TCAvs".into()], interactions: vec![(0, 1), (0, 2), (1, 2)] }
    }

    /// Intercept, four main effects and all six pairwise blocks.
    pub fn eclectic() -> Self {
        DesignLayout {
            factors: vec!["SimiMtd".into(), "ActFun".into(), "Decay".into(), "BldMtd".into()],
            interactions: vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
        }
    }

    pub fn for_scheme(s: Scheme) -> Self {
        match s {
            Scheme::FixedArm => Self::fixed_arm(),
            Scheme::Eclectic => Self::eclectic(),
        }
    }

    /// Ones in every row: intercept, mains and interactions.
    pub fn ones_per_row(&self) -> usize {
        1 + self.factors.len() + self.interactions.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionDataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub column_labels: Vec<String>,
}

impl AttributionDataset {
    pub fn intercept_column(&self) -> Option<usize> {
        self.column_labels.iter().position(|l| l == INTERCEPT)
    }
}

/// One-hot encode `rows` under `layout`. Columns appear in order of first
/// occurrence, so only observed levels and combinations get a column.
pub fn encode(layout: &DesignLayout, rows: &[FactorRow]) -> Result<AttributionDataset> {
    if rows.is_empty() {
        return Err(Error::invalid("design matrix needs at least one record"));
    }
    let nf = layout.factors.len();
    if let Some((a, b)) = layout.interactions.iter().find(|(a, b)| a >= b || *b >= nf) {
        return Err(Error::invalid(format!("interaction ({a}, {b}) is not an ordered factor pair")));
    }
    let mut labels = vec![INTERCEPT.to_string()];
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut cells: Vec<Vec<usize>> = Vec::with_capacity(rows.len());
    let mut col = |label: String, labels: &mut Vec<String>| -> usize {
        *index.entry(label.clone()).or_insert_with(|| {
            labels.push(label);
            labels.len() - 1
        })
    };
    // Main effects first so the column order reads like the tables.
    for (i, row) in rows.iter().enumerate() {
        if row.levels.len() != nf {
            return Err(Error::invalid(format!("record {i} has {} levels, expected {nf}", row.levels.len())));
        }
        if let Some(l) = row.levels.iter().find(|l| l.trim().is_empty()) {
            return Err(Error::UnknownLabel(format!("record {i}: empty level `{l}`")));
        }
        let mut c = vec![0];
        for f in 0..nf {
            c.push(col(format!("{} {}", layout.factors[f], row.levels[f]), &mut labels));
        }
        cells.push(c);
    }
    for (row, c) in rows.iter().zip(cells.iter_mut()) {
        for &(a, b) in &layout.interactions {
            let l = format!("{} {} : {} {}", layout.factors[a], row.levels[a], layout.factors[b], row.levels[b]);
            c.push(col(l, &mut labels));
        }
    }
    let mut x = DMatrix::zeros(rows.len(), labels.len());
    for (i, c) in cells.iter().enumerate() {
        for &j in c {
            x[(i, j)] = 1.0;
        }
    }
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.y));
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("non-finite response"));
    }
    Ok(AttributionDataset { x, y, column_labels: labels })
}

pub fn tcavs_label(v: f64) -> String {
    format!("{v:.1}")
}

pub fn fixed_rows(paths: &[FixedPath], measure: Measure) -> Vec<FactorRow> {
    paths
        .iter()
        .flat_map(|p| {
            let levels = vec![p.arm.model.to_string(), p.arm.objective.to_string(), tcavs_label(p.arm.v)];
            p.records.iter().map(move |r| FactorRow { levels: levels.clone(), y: measure.of(r) })
        })
        .collect()
}

pub fn eclectic_rows(paths: &[EclecticPath], measure: Measure) -> Vec<FactorRow> {
    paths
        .iter()
        .flat_map(|p| {
            let b = &p.bandit;
            let levels = vec![b.similarity.to_string(), b.activation.to_string(), format!("{}", b.gamma), b.policy.to_string()];
            p.records.iter().map(move |r| FactorRow { levels: levels.clone(), y: measure.of(r) })
        })
        .collect()
}

pub fn build_fixed_design(paths: &[FixedPath], measure: Measure) -> Result<AttributionDataset> {
    encode(&DesignLayout::fixed_arm(), &fixed_rows(paths, measure))
}

pub fn build_eclectic_design(paths: &[EclecticPath], measure: Measure) -> Result<AttributionDataset> {
    encode(&DesignLayout::eclectic(), &eclectic_rows(paths, measure))
}

/// Result of one coordinate-descent solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub beta: DVector<f64>,
    pub sweeps: usize,
    /// Largest KKT violation at exit.
    pub kkt: f64,
}

fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// Penalized objective `(1/2n)|y - Xb|^2 + lambda * sum |b_j|` over penalized `j`.
pub fn lasso_objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, lambda: f64, unpenalized: Option<usize>) -> f64 {
    let r = y - x * beta;
    let pen: f64 = beta.iter().enumerate().filter(|(j, _)| Some(*j) != unpenalized).map(|(_, b)| b.abs()).sum();
    r.norm_squared() / (2.0 * x.nrows() as f64) + lambda * pen
}

/// Largest violation of the optimality conditions at `beta`.
pub fn kkt_violation(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, lambda: f64, unpenalized: Option<usize>) -> f64 {
    let n = x.nrows() as f64;
    let r = y - x * beta;
    let g = x.tr_mul(&r) / n;
    (0..x.ncols())
        .map(|j| {
            if x.column(j).iter().all(|v| *v == 0.0) {
                0.0
            } else if Some(j) == unpenalized {
                g[j].abs()
            } else if beta[j] != 0.0 {
                (g[j] - lambda * beta[j].signum()).abs()
            } else {
                (g[j].abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    pub max_sweeps: usize,
    pub kkt_tol: f64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions { max_sweeps: 100_000, kkt_tol: KKT_TOL }
    }
}

/// Cyclic coordinate descent from `start`. Column `unpenalized` (the
/// intercept) carries no penalty.
pub fn lasso_fit_from(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    unpenalized: Option<usize>,
    start: DVector<f64>,
    opts: &LassoOptions,
) -> Result<LassoSolution> {
    let (n, p) = x.shape();
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda = {lambda} must be non-negative")));
    }
    if y.len() != n || start.len() != p || n == 0 {
        return Err(Error::invalid("design, response and start dimensions disagree"));
    }
    let nf = n as f64;
    let sq: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared() / nf).collect();
    let mut beta = start;
    let mut r = y - x * &beta;
    let mut sweeps = 0;
    let mut kkt = f64::INFINITY;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut max_move: f64 = 0.0;
        for j in 0..p {
            if sq[j] == 0.0 {
                beta[j] = 0.0;
                continue;
            }
            let xj = x.column(j);
            let z = xj.dot(&r) / nf + sq[j] * beta[j];
            let g = if Some(j) == unpenalized { 0.0 } else { lambda };
            let b = soft_threshold(z, g) / sq[j];
            let delta = b - beta[j];
            if delta != 0.0 {
                r.axpy(-delta, &xj, 1.0);
                beta[j] = b;
                max_move = max_move.max(delta.abs() * sq[j].sqrt());
            }
        }
        // The KKT check costs a full gradient, so only run it once moves are small.
        if max_move < opts.kkt_tol {
            r = y - x * &beta;
            kkt = kkt_violation(x, y, &beta, lambda, unpenalized);
            if kkt < opts.kkt_tol {
                break;
            }
        }
    }
    if kkt >= opts.kkt_tol {
        kkt = kkt_violation(x, y, &beta, lambda, unpenalized);
        if kkt >= opts.kkt_tol {
            return Err(Error::NotConverged {
                what: format!("lasso at lambda {lambda:e} after {sweeps} sweeps"),
                best: beta.iter().copied().collect(),
                value: kkt,
            });
        }
    }
    Ok(LassoSolution { beta, sweeps, kkt })
}

pub fn lasso_fit(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, unpenalized: Option<usize>) -> Result<LassoSolution> {
    lasso_fit_from(x, y, lambda, unpenalized, DVector::zeros(x.ncols()), &LassoOptions::default())
}

/// Warm-started solutions along `grid`, in grid order.
pub fn lasso_path(x: &DMatrix<f64>, y: &DVector<f64>, grid: &[f64], unpenalized: Option<usize>) -> Result<Vec<LassoSolution>> {
    let mut out: Vec<LassoSolution> = Vec::with_capacity(grid.len());
    let opts = LassoOptions::default();
    for &l in grid {
        let start = out.last().map_or_else(|| DVector::zeros(x.ncols()), |s| s.beta.clone());
        out.push(lasso_fit_from(x, y, l, unpenalized, start, &opts)?);
    }
    Ok(out)
}

/// Smallest lambda at which every penalized coefficient is zero.
pub fn lambda_max(x: &DMatrix<f64>, y: &DVector<f64>, unpenalized: Option<usize>) -> f64 {
    let n = x.nrows() as f64;
    let r = match unpenalized {
        Some(j) => {
            let xj = x.column(j);
            let ss = xj.norm_squared();
            if ss > 0.0 {
                y - xj * (xj.dot(y) / ss)
            } else {
                y.clone()
            }
        }
        None => y.clone(),
    };
    let g = x.tr_mul(&r) / n;
    (0..x.ncols()).filter(|j| Some(*j) != unpenalized).map(|j| g[j].abs()).fold(0.0, f64::max)
}

/// `len` log-spaced points from `hi` down to `hi * ratio`.
pub fn log_grid(hi: f64, ratio: f64, len: usize) -> Vec<f64> {
    if len == 1 || hi <= 0.0 {
        return vec![hi.max(0.0)];
    }
    let (a, b) = (hi.ln(), (hi * ratio).ln());
    (0..len).map(|i| (a + (b - a) * i as f64 / (len - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub folds: usize,
    pub seed: u64,
    /// Explicit decreasing grid; by default log-spaced from the data's
    /// `lambda_max`.
    pub grid: Option<Vec<f64>>,
    pub grid_len: usize,
    pub grid_ratio: f64,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions { folds: DEFAULT_FOLDS, seed: 0, grid: None, grid_len: DEFAULT_GRID_LEN, grid_ratio: DEFAULT_GRID_RATIO }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub column_labels: Vec<String>,
    pub beta: Vec<f64>,
    pub lambda_star: f64,
    pub grid: Vec<f64>,
    /// Held-out MSE, one curve per fold over the grid.
    pub cv_mse: Vec<Vec<f64>>,
    /// Per-fold MSE-minimizing lambda.
    pub fold_lambda: Vec<f64>,
    /// Folds whose training response was constant.
    pub degenerate_folds: Vec<usize>,
}

impl LassoFit {
    /// `(label, value)` sorted by value, largest first.
    pub fn table(&self) -> Vec<(String, f64)> {
        let mut t: Vec<(String, f64)> = self.column_labels.iter().cloned().zip(self.beta.iter().copied()).collect();
        t.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        t
    }

    pub fn nonzero_table(&self) -> Vec<(String, f64)> {
        self.table().into_iter().filter(|(_, v)| *v != 0.0).collect()
    }
}

/// Balanced random assignment of `n` rows to `k` folds.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::substream(seed, &[purpose::FOLDS]));
    let mut fold = vec![0; n];
    for (pos, i) in idx.into_iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

fn select_rows(x: &DMatrix<f64>, y: &DVector<f64>, rows: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    (x.select_rows(rows), DVector::from_iterator(rows.len(), rows.iter().map(|i| y[*i])))
}

/// K-fold cross-validated LASSO; the final fit uses all rows at the mean of
/// the per-fold optimal lambdas.
pub fn lasso_cv(data: &AttributionDataset, opts: &CvOptions) -> Result<LassoFit> {
    let (x, y) = (&data.x, &data.y);
    let n = x.nrows();
    if opts.folds < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 folds"));
    }
    if n < opts.folds {
        return Err(Error::invalid(format!("{n} rows cannot fill {} folds", opts.folds)));
    }
    let ic = data.intercept_column();
    let grid = match &opts.grid {
        Some(g) if g.is_empty() || g.iter().any(|l| !(*l >= 0.0)) => {
            return Err(Error::invalid("lambda grid must be non-empty and non-negative"))
        }
        Some(g) => g.clone(),
        None => log_grid(lambda_max(x, y, ic), opts.grid_ratio, opts.grid_len),
    };
    let fold = assign_folds(n, opts.folds, opts.seed);
    let per_fold: Vec<(Vec<f64>, bool)> = (0..opts.folds)
        .into_par_iter()
        .map(|k| -> Result<(Vec<f64>, bool)> {
            let train: Vec<usize> = (0..n).filter(|i| fold[*i] != k).collect();
            let test: Vec<usize> = (0..n).filter(|i| fold[*i] == k).collect();
            let (xt, yt) = select_rows(x, y, &train);
            let (xv, yv) = select_rows(x, y, &test);
            let degenerate = yt.iter().all(|v| *v == yt[0]);
            let path = lasso_path(&xt, &yt, &grid, ic)?;
            let mse = path.iter().map(|s| (&yv - &xv * &s.beta).norm_squared() / test.len() as f64).collect();
            Ok((mse, degenerate))
        })
        .collect::<Result<_>>()?;
    let mut fold_lambda = Vec::with_capacity(opts.folds);
    let mut degenerate_folds = Vec::new();
    for (k, (mse, deg)) in per_fold.iter().enumerate() {
        // First minimum along the grid, i.e. the largest lambda among ties.
        let best = mse.iter().enumerate().fold(0, |b, (i, v)| if *v < mse[b] { i } else { b });
        fold_lambda.push(grid[best]);
        if *deg {
            log::warn!("fold {k}: constant training response");
            degenerate_folds.push(k);
        }
    }
    let lambda_star = fold_lambda.iter().sum::<f64>() / fold_lambda.len() as f64;
    let fit = lasso_fit(x, y, lambda_star, ic)?;
    Ok(LassoFit {
        column_labels: data.column_labels.clone(),
        beta: fit.beta.iter().copied().collect(),
        lambda_star,
        grid,
        cv_mse: per_fold.into_iter().map(|(m, _)| m).collect(),
        fold_lambda,
        degenerate_folds,
    })
}

/// `coefficient,value` rows, largest value first.
pub fn write_coefficients<W: Write>(fit: &LassoFit, nonzero_only: bool, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["coefficient", "value"])?;
    let rows = if nonzero_only { fit.nonzero_table() } else { fit.table() };
    for (l, v) in rows {
        out.write_record([l, v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
