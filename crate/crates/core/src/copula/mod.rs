//! Dependence models: pair copulas, elliptical copulas and regular vines.

pub mod bicop;
pub mod elliptical;
pub mod kendall;
pub mod vine;

use serde::{Deserialize, Serialize};

pub use bicop::{
    bicop_hfunc, bicop_hinv, fit_bicop, fit_bicop_with, sample_bicop, BicopFamily, BicopModel, Rotation,
};
pub use elliptical::{fit_elliptical_copula, sample_elliptical_copula, EllipticalCopula, EllipticalKind};
pub use kendall::{kendall_tau, kendall_tau_flagged};
pub use vine::{driving_uniforms, fit_rvine, fit_rvine_with, inverse_rosenblatt, rosenblatt, sample_rvine, RvineModel, VineEdge, VineOptions};

/// Pair-copula family sets named after the model labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyPreset {
    Elliptical,
    Archimedean,
    AllFam,
}

impl FamilyPreset {
    /// Independence is always a candidate in pair-copula selection and is
    /// therefore not listed.
    pub fn families(self, include_joe: bool) -> Vec<BicopFamily> {
        let ell = [BicopFamily::Gaussian, BicopFamily::StudentT];
        let mut arch = vec![BicopFamily::Clayton, BicopFamily::Gumbel, BicopFamily::Frank];
        if include_joe {
            arch.push(BicopFamily::Joe);
        }
        match self {
            FamilyPreset::Elliptical => ell.to_vec(),
            FamilyPreset::Archimedean => arch,
            FamilyPreset::AllFam => ell.iter().copied().chain(arch).collect(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FamilyPreset::Elliptical => "elliptical",
            FamilyPreset::Archimedean => "archimedean",
            FamilyPreset::AllFam => "allfam",
        }
    }
}
