//! Per-sequence optimization of a dense deformation set.
//!
//! Every scenario starts from the identity and runs Adam on the weighted
//! objective. The input is divided by its maximum intensity first so the
//! loss weights mean the same thing for any scanner scaling.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{box_blur3, box_blur3_adjoint, box_radius, map_planes};
use crate::losses::nmi::NmiConfig;
use crate::losses::pca::{correlation_spectrum, CorrelationSpectrum};
use crate::losses::total::{LossTerms, NmiTemplate, Objective};
use crate::losses::LossWeights;
use crate::optimizer::Adam;
use crate::relaxometry::{fit_stack, FitConfig};
use crate::series::{DeformationSet, ImageSeries};
use crate::warp::warp_series;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "raw")]
    Raw,
    #[serde(rename = "vm-p")]
    VmP,
    #[serde(rename = "vm-g")]
    VmG,
    #[serde(rename = "pca")]
    Pca,
    #[serde(rename = "pca-relax")]
    PcaRelax,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [Scenario::Raw, Scenario::VmP, Scenario::VmG, Scenario::Pca, Scenario::PcaRelax];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Raw => "raw",
            Scenario::VmP => "vm-p",
            Scenario::VmG => "vm-g",
            Scenario::Pca => "pca",
            Scenario::PcaRelax => "pca-relax",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }

    pub fn default_weights(self) -> LossWeights {
        match self {
            Scenario::Raw | Scenario::Pca => LossWeights::PCA,
            Scenario::VmP => LossWeights::PAIRWISE_NMI,
            Scenario::VmG => LossWeights::GROUP_NMI,
            Scenario::PcaRelax => LossWeights::PCA_RELAX,
        }
    }

    /// Zeroes the weights this scenario never uses.
    pub fn restrict(self, w: LossWeights) -> LossWeights {
        match self {
            Scenario::Raw => w,
            Scenario::VmP => LossWeights {
                pca: 0.0,
                relax: 0.0,
                cyclic: 0.0,
                ..w
            },
            Scenario::VmG => LossWeights { pca: 0.0, relax: 0.0, ..w },
            Scenario::Pca => LossWeights { relax: 0.0, nmi: 0.0, ..w },
            Scenario::PcaRelax => LossWeights { nmi: 0.0, ..w },
        }
    }
}

impl core::fmt::Display for Scenario {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

fn default_learning_rate() -> f64 {
    0.1
}
fn default_max_iterations() -> usize {
    500
}
fn default_patience() -> usize {
    50
}
fn default_refit_period() -> usize {
    25
}
fn default_warmup() -> usize {
    100
}
fn default_field_smoothing() -> f64 {
    12.0
}

/// Driver settings. JSON example:
/// `{"scenario": "pca-relax", "learning_rate": 0.1, "max_iterations": 500}`.
/// Omitted `weights` take the scenario defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistrationConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub weights: Option<LossWeights>,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Refit period `R` of the relaxometry maps.
    #[serde(default = "default_refit_period")]
    pub refit_period: usize,
    /// PCA-only iterations before the relaxometry term switches on.
    #[serde(default = "default_warmup")]
    pub warmup_iterations: usize,
    /// The optimizer updates a latent per-pixel field `v` and the
    /// deformation is `φ = G * v` with `G` a near-Gaussian smoother of this
    /// standard deviation in pixels (three box passes per axis). Zero
    /// optimizes `φ` directly.
    #[serde(default = "default_field_smoothing")]
    pub field_smoothing_px: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub nmi: NmiConfig,
}

impl RegistrationConfig {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            weights: None,
            learning_rate: default_learning_rate(),
            max_iterations: default_max_iterations(),
            patience: default_patience(),
            refit_period: default_refit_period(),
            warmup_iterations: default_warmup(),
            field_smoothing_px: default_field_smoothing(),
            seed: 0,
            fit: FitConfig::default(),
            nmi: NmiConfig::default(),
        }
    }

    /// Weights after scenario defaults and restrictions.
    pub fn resolved_weights(&self) -> LossWeights {
        self.scenario
            .restrict(self.weights.unwrap_or_else(|| self.scenario.default_weights()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        if self.refit_period == 0 {
            return bad("refit_period must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.field_smoothing_px >= 0.0 && self.field_smoothing_px.is_finite()) {
            return bad("field_smoothing_px must be non-negative".into());
        }
        if self.nmi.bins < 2 {
            return bad("nmi.bins must be at least 2".into());
        }
        self.fit.validate()?;
        if self.scenario != Scenario::Raw {
            let w = self.resolved_weights();
            w.validate()?;
            let needed = match self.scenario {
                Scenario::VmP | Scenario::VmG => w.nmi,
                Scenario::Pca | Scenario::PcaRelax => w.pca,
                Scenario::Raw => 1.0,
            };
            if needed == 0.0 {
                return bad(format!("scenario {} needs its similarity weight to be non-zero", self.scenario));
            }
        }
        Ok(())
    }
}

/// One optimizer iteration: the objective at the pre-step deformation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub total: f64,
    pub pca: f64,
    pub reg: f64,
    pub cyclic: f64,
    pub relax: f64,
    pub nmi: f64,
}

impl IterationRecord {
    fn new(total: f64, t: &LossTerms) -> Self {
        Self {
            total,
            pca: t.pca,
            reg: t.reg,
            cyclic: t.cyclic,
            relax: t.relax,
            nmi: t.nmi,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationReport {
    pub scenario: Scenario,
    pub defs: DeformationSet,
    pub trace: Vec<IterationRecord>,
    pub iterations: usize,
    /// Filled by callers that can read a clock; zero otherwise.
    pub wall_s: f64,
    pub spectrum_before: CorrelationSpectrum,
    pub spectrum_after: CorrelationSpectrum,
    pub refits: usize,
    pub stopped_early: bool,
    pub seed: u64,
}

impl RegistrationReport {
    /// Lowest total loss seen, the bookkeeping behind early stopping.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.trace
            .iter()
            .map(|r| {
                best = best.min(r.total);
                best
            })
            .collect()
    }
}

fn breakdown(total: f64, t: &LossTerms) -> String {
    format!(
        "total={total} pca={} reg={} cyclic={} relax={} nmi={}",
        t.pca, t.reg, t.cyclic, t.relax, t.nmi
    )
}

/// Registers `series` according to `cfg.scenario`.
pub fn register(series: &ImageSeries, cfg: &RegistrationConfig) -> Result<RegistrationReport> {
    cfg.validate()?;
    match cfg.scenario {
        Scenario::Raw => {
            let before = correlation_spectrum(&series.as_stack())?;
            Ok(RegistrationReport {
                scenario: Scenario::Raw,
                defs: DeformationSet::zeros(series.len(), series.width(), series.height()),
                trace: Vec::new(),
                iterations: 0,
                wall_s: 0.0,
                spectrum_after: before.clone(),
                spectrum_before: before,
                refits: 0,
                stopped_early: false,
                seed: cfg.seed,
            })
        }
        Scenario::VmP => register_pairwise(series, cfg),
        Scenario::VmG => register_groupwise_template(series, cfg),
        Scenario::Pca | Scenario::PcaRelax => optimize(series, cfg, NmiTemplate::GroupMean, false),
    }
}

/// Registers images 2..N to the first image with NMI plus smoothness; the
/// first field stays at the identity.
pub fn register_pairwise(series: &ImageSeries, cfg: &RegistrationConfig) -> Result<RegistrationReport> {
    if cfg.scenario != Scenario::VmP {
        return Err(Error::InvalidConfig(format!("register_pairwise needs scenario vm-p, got {}", cfg.scenario)));
    }
    cfg.validate()?;
    optimize(series, cfg, NmiTemplate::FirstImage, true)
}

/// Registers every image to the running mean of the warped images with NMI,
/// smoothness and the cyclic term.
pub fn register_groupwise_template(series: &ImageSeries, cfg: &RegistrationConfig) -> Result<RegistrationReport> {
    if cfg.scenario != Scenario::VmG {
        return Err(Error::InvalidConfig(format!(
            "register_groupwise_template needs scenario vm-g, got {}",
            cfg.scenario
        )));
    }
    cfg.validate()?;
    optimize(series, cfg, NmiTemplate::GroupMean, false)
}

fn smooth_field(latent: &[f64], w: usize, h: usize, radius: usize, adjoint: bool) -> Vec<f64> {
    if radius == 0 {
        return latent.to_vec();
    }
    if adjoint {
        map_planes(latent, w, h, |p| box_blur3_adjoint(p, w, h, radius))
    } else {
        map_planes(latent, w, h, |p| box_blur3(p, w, h, radius))
    }
}

fn optimize(
    series: &ImageSeries,
    cfg: &RegistrationConfig,
    template: NmiTemplate,
    freeze_first: bool,
) -> Result<RegistrationReport> {
    let spectrum_before = correlation_spectrum(&series.as_stack())?;
    let peak = series.max_intensity();
    let norm = if peak > 0.0 { series.scaled(1.0 / peak)? } else { series.clone() };

    let weights = cfg.resolved_weights();
    let relax_enabled = cfg.scenario == Scenario::PcaRelax && weights.relax > 0.0;
    let warmup_weights = LossWeights { relax: 0.0, ..weights };
    let mut objective = Objective::new(&norm, if relax_enabled { warmup_weights } else { weights })?
        .with_nmi(template, cfg.nmi);

    let (n, w, h) = (series.len(), series.width(), series.height());
    let sigma = box_radius(cfg.field_smoothing_px);
    let mut latent = vec![0.0; 2 * n * w * h];
    let mut defs = DeformationSet::zeros(n, w, h);
    let mut adam = Adam::new(latent.len(), cfg.learning_rate);
    let mut trace = Vec::new();
    let mut refits = 0;
    let mut best = f64::INFINITY;
    let mut stall = 0;
    let mut stopped_early = false;
    let mut relax_on = false;
    let mut last_refit = 0;

    for it in 0..cfg.max_iterations {
        let warmup_over = it >= cfg.warmup_iterations || stall >= cfg.patience;
        let start_relax = relax_enabled && !relax_on && warmup_over;
        let refit_due = relax_on && it - last_refit >= cfg.refit_period;
        if start_relax || refit_due {
            let warped = warp_series(&norm, &defs)?;
            let maps = fit_stack(norm.times_ms(), &warped, None, &cfg.fit)?;
            objective.freeze_maps(&maps)?;
            if start_relax {
                objective.set_weights(weights)?;
                relax_on = true;
            }
            refits += 1;
            last_refit = it;
            // the objective changed, so earlier values are not comparable
            best = f64::INFINITY;
            stall = 0;
        }

        let eval = objective.evaluate(&defs)?;
        if !eval.total.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                breakdown: breakdown(eval.total, &eval.terms),
            });
        }
        trace.push(IterationRecord::new(eval.total, &eval.terms));

        if best.is_infinite() || eval.total < best - 1e-6 * best.abs() {
            best = eval.total;
            stall = 0;
        } else {
            stall += 1;
        }
        // a stalled warm-up hands over to the relaxometry phase instead
        if stall >= cfg.patience && !(relax_enabled && !relax_on) {
            stopped_early = true;
            break;
        }

        let mut grad = smooth_field(&eval.grad, w, h, sigma, true);
        if freeze_first {
            grad[..2 * w * h].iter_mut().for_each(|g| *g = 0.0);
        }
        adam.step(&mut latent, &grad, "total")?;
        defs = DeformationSet::from_vec(n, w, h, smooth_field(&latent, w, h, sigma, false))?;
    }

    let spectrum_after = correlation_spectrum(&warp_series(series, &defs)?)?;
    Ok(RegistrationReport {
        scenario: cfg.scenario,
        iterations: trace.len(),
        defs,
        trace,
        wall_s: 0.0,
        spectrum_before,
        spectrum_after,
        refits,
        stopped_early,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(Scenario::parse(s.name()), Some(s));
        }
        assert_eq!(Scenario::parse("pca_relax"), None);
    }

    #[test]
    fn pca_scenario_forces_relax_off() {
        let mut cfg = RegistrationConfig::new(Scenario::Pca);
        cfg.weights = Some(LossWeights::PCA_RELAX);
        assert_eq!(cfg.resolved_weights().relax, 0.0);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = RegistrationConfig::new(Scenario::Pca);
        cfg.max_iterations = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = RegistrationConfig::new(Scenario::PcaRelax);
        cfg.refit_period = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = RegistrationConfig::new(Scenario::VmP);
        cfg.weights = Some(LossWeights::PCA);
        assert!(cfg.validate().is_err());
    }
}
