//! Weighted objective over a deformation set and its gradient.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::nmi::{nmi_loss_over, NmiConfig, Range};
use super::pca::{correlation_spectrum, pca_loss, pca_loss_backward, CorrelationSpectrum};
use super::regularizers::{cyclic_backward, cyclic_loss, smoothness_backward, smoothness_loss};
use super::relax::{relax_loss_backward_with, relax_loss_with, relax_prediction};
use super::LossWeights;
use crate::error::{Error, Result};
use crate::series::{DeformationSet, ImageSeries, ParameterMaps};
use crate::warp::{warp_series, warp_series_backward};

/// Reference used by the NMI term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmiTemplate {
    /// The first (unwarped) image; NMI averages over the remaining images.
    FirstImage,
    /// `(1/N) Σ I_i ∘ φ_i`, recomputed at every evaluation.
    GroupMean,
}

/// Unweighted value of every term.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub pca: f64,
    pub reg: f64,
    pub cyclic: f64,
    pub relax: f64,
    pub nmi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub total: f64,
    pub terms: LossTerms,
    /// Gradient w.r.t. the deformation set, same layout.
    pub grad: Vec<f64>,
    pub spectrum: Option<CorrelationSpectrum>,
}

/// The objective for one series: weights plus the frozen state some terms
/// need (model prediction, NMI template choice).
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    series: &'a ImageSeries,
    weights: LossWeights,
    relax_prediction: Option<Vec<f64>>,
    template: NmiTemplate,
    nmi: NmiConfig,
    /// Intensity interval of every source image; warping cannot leave it.
    ranges: Vec<Range>,
}

fn ensure_finite(values: &[f64], term: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient { term: term.to_string() });
    }
    Ok(())
}

impl<'a> Objective<'a> {
    pub fn new(series: &'a ImageSeries, weights: LossWeights) -> Result<Self> {
        weights.validate()?;
        Ok(Self {
            series,
            weights,
            relax_prediction: None,
            template: NmiTemplate::GroupMean,
            nmi: NmiConfig::default(),
            ranges: (0..series.len())
                .map(|i| {
                    let img = series.image(i);
                    let lo = img.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = img.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (lo, hi)
                })
                .collect(),
        })
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    pub fn set_weights(&mut self, weights: LossWeights) -> Result<()> {
        weights.validate()?;
        self.weights = weights;
        Ok(())
    }

    /// Freezes the relaxometry target at the model prediction of `maps`.
    pub fn freeze_maps(&mut self, maps: &ParameterMaps) -> Result<()> {
        if maps.width != self.series.width() || maps.height != self.series.height() {
            return Err(Error::ShapeMismatch("maps grid differs from series grid".into()));
        }
        self.relax_prediction = Some(relax_prediction(self.series.times_ms(), maps)?);
        Ok(())
    }

    pub fn with_nmi(mut self, template: NmiTemplate, cfg: NmiConfig) -> Self {
        self.template = template;
        self.nmi = cfg;
        self
    }

    pub fn evaluate(&self, defs: &DeformationSet) -> Result<LossEval> {
        let series = self.series;
        let w = self.weights;
        let warped = warp_series(series, defs)?;
        let p = series.pixels();
        let n = series.len();
        let mut terms = LossTerms::default();
        let mut upstream = vec![0.0; warped.data.len()];
        let mut spectrum = None;

        if w.pca > 0.0 {
            let spec = correlation_spectrum(&warped)?;
            terms.pca = pca_loss(&spec);
            let g = pca_loss_backward(&warped, &spec);
            ensure_finite(&g, "pca")?;
            for (u, v) in upstream.iter_mut().zip(&g) {
                *u += w.pca * v;
            }
            spectrum = Some(spec);
        }

        if w.relax > 0.0 {
            let prediction = self.relax_prediction.as_ref().ok_or(Error::UnfittedMaps)?;
            terms.relax = relax_loss_with(&warped, prediction)?;
            let g = relax_loss_backward_with(&warped, prediction)?;
            ensure_finite(&g, "relax")?;
            for (u, v) in upstream.iter_mut().zip(&g) {
                *u += w.relax * v;
            }
        }

        if w.nmi > 0.0 {
            let (template, images, template_range): (Vec<f64>, _, Range) = match self.template {
                NmiTemplate::FirstImage => (series.image(0).to_vec(), 1..n, self.ranges[0]),
                NmiTemplate::GroupMean => {
                    let mut mean = vec![0.0; p];
                    for i in 0..n {
                        for (m, v) in mean.iter_mut().zip(warped.image(i)) {
                            *m += v / n as f64;
                        }
                    }
                    // the mean of values inside each interval lies inside the
                    // mean interval
                    let lo = self.ranges.iter().map(|r| r.0).sum::<f64>() / n as f64;
                    let hi = self.ranges.iter().map(|r| r.1).sum::<f64>() / n as f64;
                    (mean, 0..n, (lo, hi))
                }
            };
            let (loss, g, g_template) =
                nmi_loss_over(&warped, &template, &self.nmi, images, Some((&self.ranges, template_range)))?;
            ensure_finite(&g, "nmi")?;
            ensure_finite(&g_template, "nmi")?;
            terms.nmi = loss;
            for (u, v) in upstream.iter_mut().zip(&g) {
                *u += w.nmi * v;
            }
            if self.template == NmiTemplate::GroupMean {
                for i in 0..n {
                    for (u, v) in upstream[i * p..(i + 1) * p].iter_mut().zip(&g_template) {
                        *u += w.nmi * v / n as f64;
                    }
                }
            }
        }

        let mut grad = warp_series_backward(series, defs, &upstream);

        if w.reg > 0.0 {
            terms.reg = smoothness_loss(defs);
            let g = smoothness_backward(defs);
            ensure_finite(&g, "reg")?;
            for (a, v) in grad.iter_mut().zip(&g) {
                *a += w.reg * v;
            }
        }
        if w.cyclic > 0.0 {
            terms.cyclic = cyclic_loss(defs);
            let g = cyclic_backward(defs);
            ensure_finite(&g, "cyclic")?;
            for (a, v) in grad.iter_mut().zip(&g) {
                *a += w.cyclic * v;
            }
        }

        let total = w.pca * terms.pca + w.reg * terms.reg + w.cyclic * terms.cyclic + w.relax * terms.relax + w.nmi * terms.nmi;
        Ok(LossEval {
            total,
            terms,
            grad,
            spectrum,
        })
    }
}

/// Weighted sum of the enabled terms and its gradient w.r.t. `defs`.
///
/// `maps` are required when the relaxometry weight is non-zero and are held
/// fixed. A non-zero NMI weight uses the group-mean template.
pub fn total_loss(
    series: &ImageSeries,
    defs: &DeformationSet,
    maps: Option<&ParameterMaps>,
    weights: LossWeights,
) -> Result<LossEval> {
    let mut objective = Objective::new(series, weights)?;
    if let Some(maps) = maps {
        objective.freeze_maps(maps)?;
    }
    objective.evaluate(defs)
}
