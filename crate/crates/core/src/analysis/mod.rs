//! Certificate constructions: Lyapunov weights, the comparison matrix and
//! its spectral radius, the invariant region, decay and trapping constants,
//! and sampled contraction checks.

pub mod certificate;
pub mod constants;
pub mod region;
pub mod spectral;
pub mod weights;

pub use certificate::{
    analyze, build_core, AnalysisOptions, CertificateCore, CertificateFlags, StabilityCertificate,
};
pub use constants::{decay_constants, trapping_bound, DecayConstants, GammaOptions};
pub use region::{
    contraction_check, in_region, invariant_region, lipschitz_estimate, lyapunov_eval,
    ContractionReport, SampleOptions, SampleRegion,
};
pub use spectral::{build_gamma, spectral_radius_power, GammaInputs, SpectralReport};
pub use weights::{weights_r, weights_xi};
