//! Named generative models: fit on a return window, simulate one-step
//! scenario matrices.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::copula::{
    elliptical::{fit_elliptical_copula, sample_elliptical_copula, EllipticalCopula, EllipticalKind},
    vine::{fit_rvine_with, MIN_VINE_OBS, sample_rvine, RvineModel, VineOptions},
    FamilyPreset,
};
use crate::error::{Error, Result};
use crate::marginals::{pseudo_observations, select_marginal, MarginalFamily, MarginalModel};
use crate::optim::brent_minimize;
use crate::rng;
use crate::special::ln_gamma_fn;
use crate::volatility::{fit_dcc_garch, fit_garch11, garch_filter, simulate_dcc, DccModel, DistKind, GarchModel};

pub const MIN_SCENARIOS: usize = 100;
/// Simulated simple returns are kept above `-1 + RETURN_FLOOR`.
pub const RETURN_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dependence {
    MvGaussian,
    MvStudentT,
    GaussCopula,
    TCopula,
    Rvine(FamilyPreset),
    Dcc(DistKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MarginalMode {
    Parametric,
    Empirical,
    NotApplicable,
}

/// A generative model variant, identified by its table label
/// (e.g. `np vinecop garch11 elliptical`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct GenModelSpec {
    pub dependence: Dependence,
    pub marginal_mode: MarginalMode,
    pub garch_prefilter: bool,
}

impl GenModelSpec {
    pub fn new(dependence: Dependence, marginal_mode: MarginalMode, garch_prefilter: bool) -> Result<Self> {
        let s = GenModelSpec { dependence, marginal_mode, garch_prefilter };
        match dependence {
            Dependence::MvGaussian | Dependence::MvStudentT
                if marginal_mode != MarginalMode::NotApplicable || garch_prefilter =>
            {
                Err(Error::invalid("multivariate distributions take no marginal mode or GARCH prefilter"))
            }
            Dependence::Dcc(_) if marginal_mode != MarginalMode::NotApplicable => {
                Err(Error::invalid("DCC models take no marginal mode"))
            }
            Dependence::GaussCopula | Dependence::TCopula | Dependence::Rvine(_)
                if marginal_mode == MarginalMode::NotApplicable =>
            {
                Err(Error::invalid("copula models need parametric or empirical marginals"))
            }
            _ => Ok(s),
        }
    }

    pub fn id(&self) -> String {
        self.to_string()
    }

    /// Every implemented variant.
    pub fn registry() -> Vec<GenModelSpec> {
        let mut out = vec![
            GenModelSpec { dependence: Dependence::MvGaussian, marginal_mode: MarginalMode::NotApplicable, garch_prefilter: false },
            GenModelSpec { dependence: Dependence::MvStudentT, marginal_mode: MarginalMode::NotApplicable, garch_prefilter: false },
        ];
        for mm in [MarginalMode::Parametric, MarginalMode::Empirical] {
            for dep in [Dependence::GaussCopula, Dependence::TCopula] {
                for g in [false, true] {
                    out.push(GenModelSpec { dependence: dep, marginal_mode: mm, garch_prefilter: g });
                }
            }
            for g in [false, true] {
                for p in [FamilyPreset::Elliptical, FamilyPreset::Archimedean, FamilyPreset::AllFam] {
                    out.push(GenModelSpec { dependence: Dependence::Rvine(p), marginal_mode: mm, garch_prefilter: g });
                }
            }
        }
        for d in [DistKind::Gaussian, DistKind::StudentT] {
            out.push(GenModelSpec { dependence: Dependence::Dcc(d), marginal_mode: MarginalMode::NotApplicable, garch_prefilter: true });
        }
        out
    }
}

impl fmt::Display for GenModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mm = match self.marginal_mode {
            MarginalMode::Parametric => "p",
            MarginalMode::Empirical => "np",
            MarginalMode::NotApplicable => "",
        };
        let g = if self.garch_prefilter { " garch11" } else { "" };
        match self.dependence {
            Dependence::MvGaussian => write!(f, "mv norm"),
            Dependence::MvStudentT => write!(f, "mv t"),
            Dependence::GaussCopula => write!(f, "{mm} mvcop norm{g}"),
            Dependence::TCopula => write!(f, "{mm} mvcop t{g}"),
            Dependence::Rvine(p) => write!(f, "{mm} vinecop{g} {}", p.label()),
            Dependence::Dcc(DistKind::Gaussian) => write!(f, "dcc11 norm garch11"),
            Dependence::Dcc(DistKind::StudentT) => write!(f, "dcc11 t garch11"),
        }
    }
}

impl FromStr for GenModelSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let toks: Vec<&str> = s.split_whitespace().collect();
        let unknown = || Error::UnknownLabel(s.to_string());
        let spec = match toks.as_slice() {
            ["mv", "norm"] => GenModelSpec::new(Dependence::MvGaussian, MarginalMode::NotApplicable, false),
            ["mv", "t"] => GenModelSpec::new(Dependence::MvStudentT, MarginalMode::NotApplicable, false),
            ["dcc11", d, "garch11"] => {
                let dist = match *d {
                    "norm" => DistKind::Gaussian,
                    "t" => DistKind::StudentT,
                    _ => return Err(unknown()),
                };
                GenModelSpec::new(Dependence::Dcc(dist), MarginalMode::NotApplicable, true)
            }
            [mm, kind, rest @ ..] => {
                let mode = match *mm {
                    "p" => MarginalMode::Parametric,
                    "np" => MarginalMode::Empirical,
                    _ => return Err(unknown()),
                };
                match (*kind, rest) {
                    ("mvcop", [c]) | ("mvcop", [c, "garch11"]) => {
                        let dep = match *c {
                            "norm" => Dependence::GaussCopula,
                            "t" => Dependence::TCopula,
                            _ => return Err(unknown()),
                        };
                        GenModelSpec::new(dep, mode, rest.len() == 2)
                    }
                    ("vinecop", [p]) | ("vinecop", ["garch11", p]) => {
                        let preset = match *p {
                            "elliptical" => FamilyPreset::Elliptical,
                            "archimedean" => FamilyPreset::Archimedean,
                            "allfam" => FamilyPreset::AllFam,
                            _ => return Err(unknown()),
                        };
                        GenModelSpec::new(Dependence::Rvine(preset), mode, rest.len() == 2)
                    }
                    _ => Err(unknown()),
                }
            }
            _ => Err(unknown()),
        }?;
        Ok(spec)
    }
}

impl From<GenModelSpec> for String {
    fn from(s: GenModelSpec) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for GenModelSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Fitting knobs shared by all variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub min_window: usize,
    pub marginal_families: Vec<MarginalFamily>,
    pub include_joe: bool,
    /// Innovation law of the GARCH prefilter in copula variants.
    pub garch_dist: DistKind,
    pub vine_indep_level: Option<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            min_window: 91,
            marginal_families: MarginalFamily::PARAMETRIC.to_vec(),
            include_joe: true,
            garch_dist: DistKind::Gaussian,
            vine_indep_level: Some(0.05),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CopulaFit {
    Elliptical(EllipticalCopula),
    Vine(RvineModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedDependence {
    MvGaussian { mean: Vec<f64>, chol: DMatrix<f64> },
    /// `chol` factors the scale matrix; covariance is `nu / (nu - 2)` times it.
    MvStudentT { mean: Vec<f64>, chol: DMatrix<f64>, nu: f64 },
    Copula { marginals: Vec<MarginalModel>, garch: Option<Vec<GarchModel>>, copula: CopulaFit },
    Dcc(DccModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenModel {
    pub spec: GenModelSpec,
    pub dim: usize,
    pub fitted: FittedDependence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMatrix {
    pub values: DMatrix<f64>,
    pub model_id: String,
    pub asof: Option<DateTime<Utc>>,
    pub seed: u64,
    /// Number of cells raised to the return floor.
    pub clamped: usize,
}

fn covariance(x: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (t, d) = x.shape();
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).mean()).collect();
    let mut c = DMatrix::zeros(d, d);
    for i in 0..t {
        for a in 0..d {
            let da = x[(i, a)] - mean[a];
            for b in 0..=a {
                c[(a, b)] += da * (x[(i, b)] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            c[(a, b)] /= (t - 1) as f64;
            c[(b, a)] = c[(a, b)];
        }
    }
    (mean, c)
}

fn chol_or_jitter(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = Cholesky::new(c.clone()) {
        return Ok(ch.l());
    }
    let scale = c.diagonal().iter().fold(0.0f64, |m, v| m.max(*v)).max(1e-300);
    let mut j = c.clone();
    for i in 0..j.nrows() {
        j[(i, i)] += 1e-8 * scale;
    }
    log::warn!("covariance jittered to be positive definite");
    Cholesky::new(j).map(|c| c.l()).ok_or_else(|| Error::Degenerate("covariance is not positive definite".into()))
}

/// Multivariate t with the sample mean, covariance matched to the sample
/// covariance and `nu` by profile likelihood.
fn fit_mv_t(x: &DMatrix<f64>) -> Result<FittedDependence> {
    let (t, d) = x.shape();
    let (mean, cov) = covariance(x);
    let l_cov = chol_or_jitter(&cov)?;
    let df = d as f64;
    // Mahalanobis distances under the covariance are computed once.
    let mut q = Vec::with_capacity(t);
    let mut y = vec![0.0; d];
    for i in 0..t {
        let mut s2 = 0.0;
        for j in 0..d {
            let mut s = x[(i, j)] - mean[j];
            for k in 0..j {
                s -= l_cov[(j, k)] * y[k];
            }
            y[j] = s / l_cov[(j, j)];
            s2 += y[j] * y[j];
        }
        q.push(s2);
    }
    let logdet_cov = 2.0 * l_cov.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let loglik = |nu: f64| {
        // scale = cov (nu - 2) / nu
        let k = (nu - 2.0) / nu;
        let logdet = logdet_cov + df * k.ln();
        let c = ln_gamma_fn(0.5 * (nu + df)) - ln_gamma_fn(0.5 * nu) - 0.5 * df * (nu * std::f64::consts::PI).ln() - 0.5 * logdet;
        q.iter().map(|qi| c - 0.5 * (nu + df) * (qi / (k * nu)).ln_1p()).sum::<f64>()
    };
    let (s, _) = brent_minimize(|s| -loglik(2.0 + s.exp()), 0.05f64.ln(), 1000f64.ln(), 1e-6, 200);
    let nu = 2.0 + s.exp();
    let chol = l_cov * ((nu - 2.0) / nu).sqrt();
    Ok(FittedDependence::MvStudentT { mean, chol, nu })
}

fn columns(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.ncols()).map(|j| x.column(j).iter().copied().collect()).collect()
}

const U_CLAMP: f64 = 1e-10;

/// Fit `spec` on a window of returns (rows = time, columns = assets).
pub fn fit_generative(spec: &GenModelSpec, window: &DMatrix<f64>, cfg: &ScenarioConfig) -> Result<GenModel> {
    let (t, d) = window.shape();
    if t < cfg.min_window {
        return Err(Error::invalid(format!("window has {t} rows, at least {} required", cfg.min_window)));
    }
    if d == 0 {
        return Err(Error::invalid("window has no assets"));
    }
    if window.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("window contains non-finite returns"));
    }
    let fitted = match spec.dependence {
        Dependence::MvGaussian => {
            let (mean, cov) = covariance(window);
            FittedDependence::MvGaussian { mean, chol: chol_or_jitter(&cov).map_err(|e| e.at_stage("covariance"))? }
        }
        Dependence::MvStudentT => fit_mv_t(window).map_err(|e| e.at_stage("mv t"))?,
        Dependence::Dcc(dist) => FittedDependence::Dcc(fit_dcc_garch(window, dist).map_err(|e| e.at_stage("dcc-garch"))?),
        Dependence::GaussCopula | Dependence::TCopula | Dependence::Rvine(_) => {
            let cols = columns(window);
            let (x, garch) = if spec.garch_prefilter {
                let mut z = DMatrix::zeros(t, d);
                let mut gs = Vec::with_capacity(d);
                for (j, c) in cols.iter().enumerate() {
                    let g = fit_garch11(c, cfg.garch_dist).map_err(|e| e.at_stage(format!("garch asset {j}")))?;
                    let (zj, _) = garch_filter(&g, c);
                    z.column_mut(j).copy_from_slice(&zj);
                    gs.push(g);
                }
                (z, Some(gs))
            } else {
                (window.clone(), None)
            };
            let xcols = columns(&x);
            let (u, marginals) = match spec.marginal_mode {
                MarginalMode::Empirical => {
                    let u = pseudo_observations(&x)?;
                    let ms = xcols.iter().map(|c| MarginalModel::empirical(c)).collect::<Result<Vec<_>>>()?;
                    (u, ms)
                }
                _ => {
                    let mut u = DMatrix::zeros(t, d);
                    let mut ms = Vec::with_capacity(d);
                    for (j, c) in xcols.iter().enumerate() {
                        let m = select_marginal(c, &cfg.marginal_families)
                            .map_err(|e| e.at_stage(format!("marginal asset {j}")))?;
                        for (i, v) in c.iter().enumerate() {
                            u[(i, j)] = m.cdf(*v).clamp(U_CLAMP, 1.0 - U_CLAMP);
                        }
                        ms.push(m);
                    }
                    (u, ms)
                }
            };
            let copula = match spec.dependence {
                Dependence::GaussCopula => CopulaFit::Elliptical(
                    fit_elliptical_copula(&u, EllipticalKind::Gaussian).map_err(|e| e.at_stage("copula"))?,
                ),
                Dependence::TCopula => CopulaFit::Elliptical(
                    fit_elliptical_copula(&u, EllipticalKind::StudentT).map_err(|e| e.at_stage("copula"))?,
                ),
                Dependence::Rvine(p) if d >= 2 => {
                    let opts = VineOptions {
                        families: p.families(cfg.include_joe),
                        indep_test_level: cfg.vine_indep_level,
                        // The rolling window is shorter than the standalone vine minimum.
                        min_obs: cfg.min_window.min(MIN_VINE_OBS),
                    };
                    CopulaFit::Vine(fit_rvine_with(&u, &opts).map_err(|e| e.at_stage("vine"))?)
                }
                // A single asset has no dependence to model.
                _ => CopulaFit::Elliptical(
                    EllipticalCopula::new(EllipticalKind::Gaussian, DMatrix::identity(1, 1), None)?,
                ),
            };
            FittedDependence::Copula { marginals, garch, copula }
        }
    };
    Ok(GenModel { spec: spec.clone(), dim: d, fitted })
}

fn floor_returns(values: &mut DMatrix<f64>) -> usize {
    let mut n = 0;
    for v in values.iter_mut() {
        if *v <= -1.0 + RETURN_FLOOR {
            *v = -1.0 + RETURN_FLOOR;
            n += 1;
        }
    }
    n
}

/// Draw `n` one-step return scenarios.
pub fn simulate_returns(model: &GenModel, n: usize, seed: u64) -> Result<ScenarioMatrix> {
    if n < MIN_SCENARIOS {
        return Err(Error::invalid(format!("at least {MIN_SCENARIOS} scenarios required")));
    }
    let d = model.dim;
    let mut values = match &model.fitted {
        FittedDependence::MvGaussian { mean, chol } | FittedDependence::MvStudentT { mean, chol, .. } => {
            let nu = match &model.fitted {
                FittedDependence::MvStudentT { nu, .. } => Some(*nu),
                _ => None,
            };
            let chi = nu.map(|v| ChiSquared::new(v).expect("nu > 0"));
            let mut r = rng::from_seed(seed);
            let mut out = DMatrix::zeros(n, d);
            let mut g = DVector::zeros(d);
            for i in 0..n {
                for k in 0..d {
                    g[k] = r.sample(StandardNormal);
                }
                let s = match (&chi, nu) {
                    (Some(c), Some(v)) => (v / c.sample(&mut r)).sqrt(),
                    _ => 1.0,
                };
                let z = chol * &g;
                for j in 0..d {
                    out[(i, j)] = mean[j] + s * z[j];
                }
            }
            out
        }
        FittedDependence::Dcc(m) => simulate_dcc(m, n, seed)?,
        FittedDependence::Copula { marginals, garch, copula } => {
            let u = match copula {
                CopulaFit::Elliptical(c) => sample_elliptical_copula(c, n, seed)?,
                CopulaFit::Vine(v) => sample_rvine(v, n, seed)?,
            };
            let mut out = DMatrix::zeros(n, d);
            for j in 0..d {
                let (mu, sd) = match garch {
                    Some(gs) => (gs[j].mu, gs[j].forecast_variance().sqrt()),
                    None => (0.0, 1.0),
                };
                for i in 0..n {
                    let x = marginals[j].ppf_unchecked(u[(i, j)].clamp(U_CLAMP, 1.0 - U_CLAMP));
                    out[(i, j)] = mu + sd * x;
                }
            }
            out
        }
    };
    let clamped = floor_returns(&mut values);
    if clamped > 0 {
        log::debug!("{clamped} simulated returns raised to the floor");
    }
    Ok(ScenarioMatrix { values, model_id: model.spec.id(), asof: None, seed, clamped })
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    model_id: String,
    asof: Option<DateTime<Utc>>,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "D")]
    d: usize,
    seed: u64,
}

/// Write `values` as little-endian row-major f64 to `path` and a JSON sidecar
/// to `path.json`.
pub fn save_scenarios(s: &ScenarioMatrix, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..s.values.nrows() {
        for j in 0..s.values.ncols() {
            f.write_all(&s.values[(i, j)].to_le_bytes())?;
        }
    }
    f.flush()?;
    let side = Sidecar { model_id: s.model_id.clone(), asof: s.asof, n: s.values.nrows(), d: s.values.ncols(), seed: s.seed };
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    std::fs::write(p, serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

pub fn load_scenarios(path: &Path) -> Result<ScenarioMatrix> {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(p)?)?;
    let bytes = std::fs::read(path)?;
    if bytes.len() != side.n * side.d * 8 {
        return Err(Error::Parse("scenario file size does not match its sidecar".into()));
    }
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(ScenarioMatrix {
        values: DMatrix::from_row_slice(side.n, side.d, &vals),
        model_id: side.model_id,
        asof: side.asof,
        seed: side.seed,
        clamped: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::kendall_tau;

    fn gaussian_panel(t: usize, d: usize, rho: f64, sd: f64, seed: u64) -> DMatrix<f64> {
        let mut r = rng::from_seed(seed);
        let mut m = DMatrix::zeros(t, d);
        for i in 0..t {
            let common: f64 = r.sample(StandardNormal);
            for j in 0..d {
                let e: f64 = r.sample(StandardNormal);
                m[(i, j)] = sd * (rho.sqrt() * common + (1.0 - rho).sqrt() * e);
            }
        }
        m
    }

    fn col(m: &DMatrix<f64>, j: usize) -> Vec<f64> {
        m.column(j).iter().copied().collect()
    }

    #[test]
    fn labels_round_trip_and_registry_size() {
        let reg = GenModelSpec::registry();
        assert_eq!(reg.len(), 24);
        for s in &reg {
            let back: GenModelSpec = s.id().parse().unwrap();
            assert_eq!(&back, s);
        }
        assert_eq!(
            "np vinecop garch11 elliptical".parse::<GenModelSpec>().unwrap(),
            GenModelSpec::new(Dependence::Rvine(FamilyPreset::Elliptical), MarginalMode::Empirical, true).unwrap()
        );
        assert!("mv cauchy".parse::<GenModelSpec>().is_err());
        assert!(GenModelSpec::new(Dependence::MvGaussian, MarginalMode::Empirical, false).is_err());
    }

    #[test]
    fn mv_gaussian_is_moment_matching() {
        let x = gaussian_panel(200, 3, 0.4, 0.02, 1);
        let spec: GenModelSpec = "mv norm".parse().unwrap();
        let m = fit_generative(&spec, &x, &ScenarioConfig::default()).unwrap();
        let FittedDependence::MvGaussian { mean, chol } = &m.fitted else { panic!() };
        let (m0, c0) = covariance(&x);
        assert_eq!(mean, &m0);
        assert!((chol * chol.transpose() - c0).abs().max() < 1e-15);
    }

    #[test]
    fn mv_gaussian_simulation_mean() {
        let m = GenModel {
            spec: "mv norm".parse().unwrap(),
            dim: 2,
            fitted: FittedDependence::MvGaussian { mean: vec![0.0, 0.0], chol: DMatrix::identity(2, 2) * 0.02 },
        };
        let s = simulate_returns(&m, 1_000_000, 2).unwrap();
        for j in 0..2 {
            let m = s.values.column(j).mean();
            assert!(m.abs() < 0.02 * 0.004, "{m}");
        }
        assert!(s.values.iter().all(|v| *v > -1.0));
    }

    #[test]
    fn empirical_gauss_copula_on_independent_data() {
        let x = gaussian_panel(91, 3, 0.0, 0.02, 3);
        let spec: GenModelSpec = "np mvcop norm".parse().unwrap();
        let m = fit_generative(&spec, &x, &ScenarioConfig::default()).unwrap();
        let FittedDependence::Copula { copula: CopulaFit::Elliptical(c), .. } = &m.fitted else { panic!() };
        for i in 0..3 {
            for j in 0..i {
                assert!(c.r[(i, j)].abs() < 0.1 + 0.15, "{}", c.r[(i, j)]);
            }
        }
    }

    #[test]
    fn every_registered_variant_fits_and_simulates() {
        let x = gaussian_panel(91, 3, 0.5, 0.03, 4);
        for spec in GenModelSpec::registry() {
            let m = fit_generative(&spec, &x, &ScenarioConfig::default()).unwrap_or_else(|e| panic!("{spec}: {e}"));
            let s = simulate_returns(&m, 200, 7).unwrap();
            assert_eq!(s.values.shape(), (200, 3));
            assert!(s.values.iter().all(|v| *v > -1.0 && v.is_finite()), "{spec}");
            assert_eq!(s, simulate_returns(&m, 200, 7).unwrap(), "{spec} not deterministic");
        }
    }

    #[test]
    fn short_window_rejected() {
        let x = gaussian_panel(50, 2, 0.5, 0.03, 5);
        let err = fit_generative(&"mv norm".parse().unwrap(), &x, &ScenarioConfig::default()).unwrap_err();
        assert!(err.to_string().contains("window"));
    }

    #[test]
    fn vine_simulate_refit_keeps_tau() {
        let x = gaussian_panel(400, 3, 0.5, 0.02, 6);
        let spec: GenModelSpec = "np vinecop elliptical".parse().unwrap();
        let cfg = ScenarioConfig::default();
        let m = fit_generative(&spec, &x, &cfg).unwrap();
        let s = simulate_returns(&m, 100_000, 8).unwrap();
        let FittedDependence::Copula { copula: CopulaFit::Vine(v), .. } = &m.fitted else { panic!() };
        let sim = sample_rvine(v, 100_000, 8).unwrap();
        for i in 0..3 {
            for j in 0..i {
                let model_tau = kendall_tau(&col(&sim, i), &col(&sim, j)).unwrap();
                let ret_tau = kendall_tau(&col(&s.values, i), &col(&s.values, j)).unwrap();
                // monotone marginal maps preserve tau
                assert!((model_tau - ret_tau).abs() < 0.05);
            }
        }
    }

    #[test]
    fn parametric_margins_pass_ks() {
        let x = gaussian_panel(150, 2, 0.3, 0.02, 9);
        let spec: GenModelSpec = "p mvcop t".parse().unwrap();
        let m = fit_generative(&spec, &x, &ScenarioConfig::default()).unwrap();
        let FittedDependence::Copula { marginals, .. } = &m.fitted else { panic!() };
        let n = 100_000;
        let s = simulate_returns(&m, n, 10).unwrap();
        for j in 0..2 {
            let mut u: Vec<f64> = s.values.column(j).iter().map(|v| marginals[j].cdf(*v)).collect();
            u.sort_by(f64::total_cmp);
            let ks = u
                .iter()
                .enumerate()
                .map(|(i, x)| ((i as f64 + 1.0) / n as f64 - x).max(x - i as f64 / n as f64))
                .fold(0.0, f64::max);
            assert!(ks < 1.63 / (n as f64).sqrt(), "ks = {ks}");
        }
    }

    #[test]
    fn garch_prefiltered_copula_reinflates() {
        let x = gaussian_panel(120, 2, 0.3, 0.02, 11);
        let spec: GenModelSpec = "np mvcop norm garch11".parse().unwrap();
        let m = fit_generative(&spec, &x, &ScenarioConfig::default()).unwrap();
        let FittedDependence::Copula { garch: Some(gs), .. } = &m.fitted else { panic!() };
        let s = simulate_returns(&m, 50_000, 12).unwrap();
        for j in 0..2 {
            let c = s.values.column(j);
            let mean = c.mean();
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c.len() as f64;
            let (z, _) = garch_filter(&gs[j], &col(&x, j));
            let zvar = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
            let expect = gs[j].forecast_variance() * zvar;
            assert!((var / expect - 1.0).abs() < 0.2, "var {var} expect {expect}");
        }
    }

    #[test]
    fn return_floor_applies() {
        let m = GenModel {
            spec: "mv norm".parse().unwrap(),
            dim: 1,
            fitted: FittedDependence::MvGaussian { mean: vec![0.0], chol: DMatrix::from_element(1, 1, 5.0) },
        };
        let s = simulate_returns(&m, 1000, 3).unwrap();
        assert!(s.clamped > 0);
        assert!(s.values.iter().all(|v| *v > -1.0));
    }

    #[test]
    fn binary_round_trip() {
        let m = GenModel {
            spec: "mv norm".parse().unwrap(),
            dim: 2,
            fitted: FittedDependence::MvGaussian { mean: vec![0.01, 0.0], chol: DMatrix::identity(2, 2) * 0.02 },
        };
        let s = simulate_returns(&m, 100, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        save_scenarios(&s, &p).unwrap();
        let back = load_scenarios(&p).unwrap();
        assert_eq!(back.values, s.values);
        assert_eq!(back.model_id, "mv norm");
    }
}
