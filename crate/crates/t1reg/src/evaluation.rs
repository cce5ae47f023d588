//! Myocardial SD statistics, scenario comparison and spectrum charts.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;
use t1reg_core::phantom::{anchor_to_reference, displacement_error, generate, PhantomSpec, PhantomTruth};
use t1reg_core::registration::{register, RegistrationConfig, RegistrationReport, Scenario};
use t1reg_core::relaxometry::{fit_series, FitConfig};
use t1reg_core::warp::warp_series;
use t1reg_core::{CorrelationSpectrum, DeformationSet, Error, ImageSeries, Mask, ParameterMaps};

use crate::io::{write_bytes, IoResult};

/// Mean and population SD of `sd_T1` over a region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SdStats {
    pub mean: f64,
    pub sd: f64,
    pub pixels: usize,
}

/// Statistics of `sd_T1` over converged pixels inside `mask`.
pub fn myocardial_sd(maps: &ParameterMaps, mask: &Mask) -> t1reg_core::Result<SdStats> {
    if maps.width != mask.width || maps.height != mask.height {
        return Err(Error::ShapeMismatch("mask grid differs from maps grid".into()));
    }
    let values: Vec<f64> = mask.indices().filter(|&q| maps.converged[q]).map(|q| maps.sd_t1[q]).collect();
    if values.is_empty() {
        return Err(Error::EmptyRegion("no converged pixels inside the mask".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(SdStats {
        mean,
        sd: var.sqrt(),
        pixels: values.len(),
    })
}

/// One scenario applied to one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceResult {
    pub sequence_id: String,
    pub scenario: Scenario,
    /// `Err` carries the message of a failed registration or fit.
    pub outcome: Result<SequenceOutcome, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOutcome {
    pub sd: SdStats,
    /// Mean endpoint error against the phantom truth, anchored to image 1.
    pub disp_err_px: Option<f64>,
    pub wall_s: f64,
    pub report: RegistrationReport,
    pub maps: ParameterMaps,
}

/// Per-scenario aggregate over sequences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub scenario: Scenario,
    pub sequences: usize,
    pub failures: usize,
    /// Mean over sequences of the myocardial mean `sd_T1`.
    pub sd_mean_ms: f64,
    /// Population SD over sequences of the myocardial mean `sd_T1`.
    pub sd_spread_ms: f64,
    pub disp_err_px: Option<f64>,
    pub wall_s: f64,
    /// Mean leading-eigenvalue share before and after registration.
    pub leading_share_before: f64,
    pub leading_share_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub rows: Vec<SequenceResult>,
    pub scenarios: Vec<ScenarioSummary>,
}

impl EvalSummary {
    fn from_rows(mut rows: Vec<SequenceResult>, order: &[Scenario]) -> Self {
        rows.sort_by(|a, b| {
            a.sequence_id.cmp(&b.sequence_id).then_with(|| {
                let pos = |s: Scenario| order.iter().position(|&o| o == s);
                pos(a.scenario).cmp(&pos(b.scenario))
            })
        });
        let mut scenarios = Vec::new();
        for &scenario in order {
            let ok: Vec<&SequenceOutcome> = rows
                .iter()
                .filter(|r| r.scenario == scenario)
                .filter_map(|r| r.outcome.as_ref().ok())
                .collect();
            let total = rows.iter().filter(|r| r.scenario == scenario).count();
            let n = ok.len().max(1) as f64;
            let mean = ok.iter().map(|o| o.sd.mean).sum::<f64>() / n;
            let spread = (ok.iter().map(|o| (o.sd.mean - mean).powi(2)).sum::<f64>() / n).sqrt();
            let errs: Vec<f64> = ok.iter().filter_map(|o| o.disp_err_px).collect();
            scenarios.push(ScenarioSummary {
                scenario,
                sequences: total,
                failures: total - ok.len(),
                sd_mean_ms: if ok.is_empty() { f64::NAN } else { mean },
                sd_spread_ms: if ok.is_empty() { f64::NAN } else { spread },
                disp_err_px: (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64),
                wall_s: ok.iter().map(|o| o.wall_s).sum::<f64>() / n,
                leading_share_before: ok.iter().map(|o| o.report.spectrum_before.leading_share()).sum::<f64>() / n,
                leading_share_after: ok.iter().map(|o| o.report.spectrum_after.leading_share()).sum::<f64>() / n,
            });
        }
        Self { rows, scenarios }
    }

    pub fn scenario(&self, s: Scenario) -> Option<&ScenarioSummary> {
        self.scenarios.iter().find(|x| x.scenario == s)
    }

    /// The per-sequence CSV. With `timing == false` the `wall_s` column is
    /// left empty so that repeated runs compare byte for byte.
    pub fn csv(&self, timing: bool) -> String {
        let mut out = String::from("sequence_id,scenario,sd_mean_ms,sd_sd_ms,disp_err_px,wall_s\n");
        for r in &self.rows {
            match &r.outcome {
                Ok(o) => {
                    let disp = o.disp_err_px.map(|d| format!("{d:.6}")).unwrap_or_default();
                    let wall = if timing { format!("{:.3}", o.wall_s) } else { String::new() };
                    let _ = writeln!(
                        out,
                        "{},{},{:.6},{:.6},{},{}",
                        r.sequence_id, r.scenario, o.sd.mean, o.sd.sd, disp, wall
                    );
                }
                Err(_) => {
                    let _ = writeln!(out, "{},{},,,,", r.sequence_id, r.scenario);
                }
            }
        }
        out
    }
}

/// Registers (timed), warps the original series, fits the masked pixels
/// and measures the myocardial SD and, given the truth, endpoint error.
pub fn evaluate_sequence(
    series: &ImageSeries,
    mask: &Mask,
    truth_correction: Option<&DeformationSet>,
    cfg: &RegistrationConfig,
    sequence_id: &str,
) -> SequenceResult {
    let run = || -> t1reg_core::Result<SequenceOutcome> {
        let start = Instant::now();
        let mut report = register(series, cfg)?;
        report.wall_s = start.elapsed().as_secs_f64();
        let maps = if cfg.scenario == Scenario::Raw {
            fit_series(series, Some(mask), &cfg.fit)?
        } else {
            let warped = warp_series(series, &report.defs)?.to_series(series.times_ms())?;
            fit_series(&warped, Some(mask), &cfg.fit)?
        };
        let sd = myocardial_sd(&maps, mask)?;
        let disp_err_px = match truth_correction {
            Some(truth) => {
                let anchored = anchor_to_reference(&report.defs, 0)?;
                Some(displacement_error(&anchored, truth, Some(mask))?.mean)
            }
            None => None,
        };
        Ok(SequenceOutcome {
            sd,
            disp_err_px,
            wall_s: report.wall_s,
            report,
            maps,
        })
    };
    SequenceResult {
        sequence_id: sequence_id.to_string(),
        scenario: cfg.scenario,
        outcome: run().map_err(|e| e.to_string()),
    }
}

/// Runs every configuration on one series. A failing scenario is recorded
/// and the others still run.
pub fn compare_scenarios(
    series: &ImageSeries,
    mask: &Mask,
    truth_correction: Option<&DeformationSet>,
    configs: &[RegistrationConfig],
) -> t1reg_core::Result<EvalSummary> {
    if configs.is_empty() {
        return Err(Error::InvalidConfig("at least one scenario is required".into()));
    }
    let rows = configs
        .iter()
        .map(|cfg| evaluate_sequence(series, mask, truth_correction, cfg, "0"))
        .collect();
    let order: Vec<Scenario> = configs.iter().map(|c| c.scenario).collect();
    Ok(EvalSummary::from_rows(rows, &dedup(order)))
}

fn dedup(order: Vec<Scenario>) -> Vec<Scenario> {
    let mut out = Vec::new();
    for s in order {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Generates phantoms for `seeds` and evaluates every configuration on
/// each, spreading the (phantom, scenario) jobs over `jobs` threads. The
/// result does not depend on `jobs`.
pub fn phantom_batch(
    base: &PhantomSpec,
    seeds: &[u64],
    configs: &[RegistrationConfig],
    jobs: usize,
) -> t1reg_core::Result<EvalSummary> {
    if configs.is_empty() {
        return Err(Error::InvalidConfig("at least one scenario is required".into()));
    }
    let phantoms: Vec<(String, PhantomTruth)> = seeds
        .iter()
        .map(|&seed| {
            let spec = PhantomSpec { seed, ..base.clone() };
            generate(&spec).map(|t| (format!("seed{seed:04}"), t))
        })
        .collect::<t1reg_core::Result<_>>()?;
    let tasks: Vec<(usize, usize)> = (0..phantoms.len())
        .flat_map(|p| (0..configs.len()).map(move |c| (p, c)))
        .collect();
    let next = Mutex::new(0usize);
    let rows = Mutex::new(Vec::with_capacity(tasks.len()));
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(tasks.len()) {
            scope.spawn(|| loop {
                let task = {
                    let mut n = next.lock().unwrap();
                    let t = tasks.get(*n).copied();
                    *n += 1;
                    t
                };
                let Some((p, c)) = task else { break };
                let (id, truth) = &phantoms[p];
                let row = evaluate_sequence(&truth.corrupted, &truth.mask, Some(&truth.correction), &configs[c], id);
                rows.lock().unwrap().push(row);
            });
        }
    });
    let order: Vec<Scenario> = configs.iter().map(|c| c.scenario).collect();
    Ok(EvalSummary::from_rows(rows.into_inner().unwrap(), &dedup(order)))
}

/// Default configuration of each scenario, sharing one fit configuration.
pub fn scenario_configs(scenarios: &[Scenario], fit: &FitConfig) -> Vec<RegistrationConfig> {
    scenarios
        .iter()
        .map(|&s| RegistrationConfig {
            fit: fit.clone(),
            ..RegistrationConfig::new(s)
        })
        .collect()
}

/// CSV of paired eigenvalues: `index,before,after`.
pub fn spectrum_csv(before: &CorrelationSpectrum, after: &CorrelationSpectrum) -> String {
    let mut out = String::from("index,before,after\n");
    let n = before.eigenvalues.len().max(after.eigenvalues.len());
    for i in 0..n {
        let get = |s: &CorrelationSpectrum| s.eigenvalues.get(i).map(|v| format!("{v:.9}")).unwrap_or_default();
        let _ = writeln!(out, "{},{},{}", i + 1, get(before), get(after));
    }
    out
}

const CHART_W: usize = 400;
const CHART_H: usize = 240;
const MARGIN: usize = 20;

/// Bar-pair chart as a P5 PGM: for each eigenvalue a mid-grey bar (before)
/// next to a black bar (after) on white, with a baseline and a tick every
/// unit of eigenvalue on the left axis.
pub fn spectrum_chart(before: &CorrelationSpectrum, after: &CorrelationSpectrum) -> Vec<u8> {
    let mut img = vec![255u8; CHART_W * CHART_H];
    let n = before.eigenvalues.len().max(after.eigenvalues.len()).max(1);
    let top = before
        .eigenvalues
        .iter()
        .chain(&after.eigenvalues)
        .fold(1.0f64, |m, v| m.max(*v))
        .ceil();
    let plot_h = (CHART_H - 2 * MARGIN) as f64;
    let base_y = CHART_H - MARGIN;
    let slot = (CHART_W - 2 * MARGIN) / n;
    let bar = (slot / 3).max(1);
    let mut fill = |x0: usize, x1: usize, y0: usize, y1: usize, v: u8| {
        for y in y0..y1.min(CHART_H) {
            for x in x0..x1.min(CHART_W) {
                img[y * CHART_W + x] = v;
            }
        }
    };
    for i in 0..n {
        let x = MARGIN + i * slot + slot / 6;
        for (j, (spec, shade)) in [(before, 160u8), (after, 0u8)].into_iter().enumerate() {
            let v = spec.eigenvalues.get(i).copied().unwrap_or(0.0).max(0.0);
            let h = ((v / top) * plot_h).round() as usize;
            fill(x + j * bar, x + (j + 1) * bar, base_y - h, base_y, shade);
        }
    }
    fill(MARGIN - 2, CHART_W - MARGIN, base_y, base_y + 1, 0);
    fill(MARGIN - 2, MARGIN - 1, MARGIN, base_y, 0);
    for t in 0..=top as usize {
        let y = base_y - ((t as f64 / top) * plot_h).round() as usize;
        fill(MARGIN - 6, MARGIN - 1, y, y + 1, 0);
    }
    let mut out = format!("P5\n{CHART_W} {CHART_H}\n255\n").into_bytes();
    out.extend(img);
    out
}

/// Writes `<path>.csv` and `<path>.pgm`.
pub fn spectrum_plot(before: &CorrelationSpectrum, after: &CorrelationSpectrum, path: &Path) -> IoResult<()> {
    write_bytes(&path.with_extension("csv"), spectrum_csv(before, after).as_bytes())?;
    write_bytes(&path.with_extension("pgm"), &spectrum_chart(before, after))
}
