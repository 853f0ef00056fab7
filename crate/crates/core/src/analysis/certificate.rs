//! Assembly of the full stability certificate.

use serde::Serialize;

use crate::analysis::constants::{decay_constants, trapping_bound, DecayConstants, GammaOptions};
use crate::analysis::region::{
    contraction_check, invariant_region, lipschitz_estimate, ContractionReport, SampleOptions,
    SampleRegion,
};
use crate::analysis::spectral::{build_gamma, GammaInputs, SpectralReport};
use crate::analysis::weights::{r_margin, weights_r, weights_xi, xi_margin};
use crate::controller::{synthesize, ControllerConfig, FloorCondition};
use crate::diagram::{verify_h1, verify_h4, AuditGrid, H1Report, H4Report, H4_TOL};
use crate::dynamics::Model;
use crate::equilibrium::{solve_uep, EquilibriumPair};
use crate::error::Result;
use crate::network::{topological_sort, ValidationReport};

/// Tolerance of the sampled contraction inequality.
pub const CONTRACTION_TOL: f64 = 1e-9;

/// Weights, invariant region and decay constants: everything needed before
/// a controller is chosen.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateCore {
    pub r: Vec<f64>,
    pub xi: Vec<f64>,
    pub epsstar: f64,
    pub beta: Vec<f64>,
    /// `Q Theta min(1, gamma)`.
    pub c: f64,
    pub decay: DecayConstants,
}

/// Builds the controller-independent part of the certificate.
pub fn build_core(
    model: &Model,
    eq: &EquilibriumPair,
    gamma: GammaOptions,
) -> Result<CertificateCore> {
    let p = model.spec().p();
    let r = weights_r(p)?;
    let l: Vec<f64> = model
        .diagrams()
        .cells
        .iter()
        .map(|c| c.constants.l)
        .collect();
    let g: Vec<f64> = model
        .diagrams()
        .cells
        .iter()
        .map(|c| c.constants.g)
        .collect();
    let xi = weights_xi(p, &l, &g)?;
    let (epsstar, beta) = invariant_region(&eq.xstar, &xi, model.spec().mu())?;
    let decay = decay_constants(model, &r, gamma)?;
    Ok(CertificateCore {
        r,
        xi,
        epsstar,
        beta,
        c: decay.c,
        decay,
    })
}

/// Options for [`analyze`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub gamma: GammaOptions,
    pub audit: AuditGrid,
    pub h4_tol: f64,
    /// Samples of the contraction check; 0 skips it.
    pub contraction_samples: usize,
    /// Samples of the amplification estimate; 0 skips it.
    pub lipschitz_samples: usize,
    pub seed: u64,
    /// Parameter used when the controller is synthesized.
    pub tau: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            gamma: GammaOptions::default(),
            audit: AuditGrid::default(),
            h4_tol: H4_TOL,
            contraction_samples: 10_000,
            lipschitz_samples: 10_000,
            seed: 1,
            tau: 0.5,
        }
    }
}

/// Summary of the controller the certificate refers to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllerSummary {
    pub synthesized: bool,
    pub b: Vec<f64>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    pub tau: f64,
    /// Controlled inflows (0-based).
    pub controlled: Vec<usize>,
    pub trivially_stable: bool,
}

/// Pass/fail flags of every audited condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CertificateFlags {
    pub network_valid: bool,
    pub demand_sector: bool,
    pub capacity_margin: bool,
    pub capacity_margin_strict: bool,
    pub equilibrium_uncongested: bool,
    pub equilibrium_below_threshold: bool,
    pub inflow_strict: bool,
    pub r_inequality: bool,
    pub xi_inequality: bool,
    pub region_nonempty: bool,
    pub rho_below_one: bool,
    pub c_in_unit_interval: bool,
    pub floor_condition: bool,
    pub trapping_bound_finite: bool,
    pub gain_saturates_outside: bool,
    pub contraction: bool,
}

impl CertificateFlags {
    /// Conditions the stability argument relies on. The strict variants of
    /// the capacity and inflow margins are informational.
    pub fn passed(&self) -> bool {
        self.network_valid
            && self.demand_sector
            && self.capacity_margin
            && self.equilibrium_uncongested
            && self.equilibrium_below_threshold
            && self.r_inequality
            && self.xi_inequality
            && self.region_nonempty
            && self.rho_below_one
            && self.c_in_unit_interval
            && self.floor_condition
            && self.trapping_bound_finite
            && self.gain_saturates_outside
            && self.contraction
    }
}

/// Every constant of the stability argument plus audit results.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityCertificate {
    pub validation: ValidationReport,
    /// Topological order, 0-based.
    pub order: Vec<usize>,
    pub equilibrium: EquilibriumPair,
    pub r: Vec<f64>,
    pub xi: Vec<f64>,
    pub epsstar: f64,
    pub beta: Vec<f64>,
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "Theta")]
    pub theta: f64,
    pub gamma: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub decay: DecayConstants,
    pub controller: ControllerSummary,
    pub floor: FloorCondition,
    /// Smallest `tau^-1 K_ij (beta_j - x_j*)`; at least 1 means the law
    /// returns the floor everywhere outside the invariant box.
    pub saturation_margin: f64,
    pub spectral: SpectralReport,
    pub rho: f64,
    /// Trapping bound, absent when the floor is too large.
    pub m: Option<u64>,
    pub m_error: Option<String>,
    pub h1: Vec<H1Report>,
    pub h4: H4Report,
    pub contraction: Option<ContractionReport>,
    /// Empirical one-step amplification of the deviation from `x*`.
    pub lipschitz_hat: Option<f64>,
    pub flags: CertificateFlags,
}

impl StabilityCertificate {
    pub fn passed(&self) -> bool {
        self.flags.passed()
    }
}

/// Builds the certificate for equilibrium inflow `vstar`, synthesizing the
/// controller unless one is given.
pub fn analyze(
    model: &Model,
    vstar: &[f64],
    controller: Option<&ControllerConfig>,
    opts: AnalysisOptions,
) -> Result<StabilityCertificate> {
    let spec = model.spec();
    let validation = spec.validate();
    let order = topological_sort(spec.p())?;
    let eq = solve_uep(model, vstar)?;
    let core = build_core(model, &eq, opts.gamma)?;
    let (cfg, synthesized) = match controller {
        Some(c) => (c.clone(), false),
        None => (synthesize(&eq, &core, opts.tau)?, true),
    };
    let n = spec.n();
    let l: Vec<f64> = model
        .diagrams()
        .cells
        .iter()
        .map(|c| c.constants.l)
        .collect();
    let g: Vec<f64> = model
        .diagrams()
        .cells
        .iter()
        .map(|c| c.constants.g)
        .collect();
    let spectral = build_gamma(
        &GammaInputs {
            p: spec.p(),
            l: &l,
            g: &g,
            vstar: &cfg.vstar,
            b: &cfg.b,
            k: &cfg.k,
            tau: cfg.tau,
        },
        &order,
    )?;
    let (m, m_error) = match trapping_bound(core.c, &core.r, &core.beta, &cfg.b, spec.a()) {
        Ok(m) => (Some(m), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let floor = cfg.floor_condition(&core.r, core.c);
    let saturation_margin = (0..n)
        .filter(|&i| cfg.b[i] < cfg.vstar[i])
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| cfg.k[(i, j)] * (core.beta[j] - eq.xstar[j]) / cfg.tau)
        .fold(f64::INFINITY, f64::min);
    let h1: Vec<H1Report> = (0..n)
        .map(|i| {
            verify_h1(
                &model.diagrams().cells[i],
                spec.a()[i],
                &model.diagrams().domain,
                opts.audit,
            )
        })
        .collect();
    let h4 = verify_h4(spec, model.diagrams(), opts.audit, opts.h4_tol);
    let contraction = if opts.contraction_samples > 0 {
        Some(contraction_check(
            model,
            &cfg,
            &spectral.gamma,
            &core.beta,
            SampleRegion::Inside,
            SampleOptions {
                samples: opts.contraction_samples,
                seed: opts.seed,
                tol: CONTRACTION_TOL,
            },
        )?)
    } else {
        None
    };
    let lipschitz_hat = if opts.lipschitz_samples > 0 {
        Some(lipschitz_estimate(
            model,
            &cfg,
            opts.lipschitz_samples,
            opts.seed.wrapping_add(1),
        )?)
    } else {
        None
    };
    let rho = spectral.rho();
    let flags = CertificateFlags {
        network_valid: validation.is_ok(),
        demand_sector: h1.iter().all(H1Report::passed),
        capacity_margin: h4.passed,
        capacity_margin_strict: h4.strict_ok,
        equilibrium_uncongested: eq.supply_slack > 0.0,
        equilibrium_below_threshold: eq.below_threshold,
        inflow_strict: eq.inflow_strict(),
        r_inequality: r_margin(spec.p(), &core.r) > 0.0,
        xi_inequality: xi_margin(spec.p(), &l, &g, &core.xi) > 0.0,
        region_nonempty: (0..n).all(|i| core.beta[i] > eq.xstar[i] && core.beta[i] <= spec.mu()[i]),
        rho_below_one: rho < 1.0,
        c_in_unit_interval: core.c > 0.0 && core.c < 1.0,
        floor_condition: floor.holds,
        trapping_bound_finite: m.is_some(),
        gain_saturates_outside: saturation_margin >= 1.0,
        contraction: contraction.as_ref().is_none_or(|c| c.passed),
    };
    Ok(StabilityCertificate {
        validation,
        order: order.perm().to_vec(),
        equilibrium: eq,
        r: core.r.clone(),
        xi: core.xi.clone(),
        epsstar: core.epsstar,
        beta: core.beta.clone(),
        q: core.decay.q,
        theta: core.decay.theta,
        gamma: core.decay.gamma,
        c: core.c,
        decay: core.decay.clone(),
        controller: ControllerSummary {
            synthesized,
            b: cfg.b.clone(),
            k: (0..n)
                .map(|i| (0..n).map(|j| cfg.k[(i, j)]).collect())
                .collect(),
            tau: cfg.tau,
            controlled: cfg.controlled(),
            trivially_stable: cfg.trivially_stable,
        },
        floor,
        saturation_margin,
        spectral,
        rho,
        m,
        m_error,
        h1,
        h4,
        contraction,
        lipschitz_hat,
        flags,
    })
}
