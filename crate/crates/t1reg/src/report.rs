//! JSON form of a registration report; the deformation set is stored
//! separately as a binary container.

use std::path::Path;

use serde::Serialize;
use t1reg_core::registration::{IterationRecord, RegistrationReport, Scenario};
use t1reg_core::CorrelationSpectrum;

use crate::io::{save_defs, write_json, IoResult};

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumJson {
    pub eigenvalues: Vec<f64>,
    pub leading_share: f64,
    pub floored: Vec<usize>,
}

impl From<&CorrelationSpectrum> for SpectrumJson {
    fn from(s: &CorrelationSpectrum) -> Self {
        Self {
            eigenvalues: s.eigenvalues.clone(),
            leading_share: s.leading_share(),
            floored: s.floored.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportJson {
    pub scenario: Scenario,
    pub seed: u64,
    pub iterations: usize,
    pub refits: usize,
    pub stopped_early: bool,
    pub wall_s: f64,
    pub max_displacement_px: f64,
    pub spectrum_before: SpectrumJson,
    pub spectrum_after: SpectrumJson,
    pub defs_file: String,
    pub trace: Vec<IterationRecord>,
}

/// Writes `report.json` and `defs.json`/`defs.f32` into `dir`.
pub fn save_report(report: &RegistrationReport, dir: &Path) -> IoResult<()> {
    save_defs(&report.defs, &dir.join("defs.json"))?;
    write_json(
        &dir.join("report.json"),
        &ReportJson {
            scenario: report.scenario,
            seed: report.seed,
            iterations: report.iterations,
            refits: report.refits,
            stopped_early: report.stopped_early,
            wall_s: report.wall_s,
            max_displacement_px: report.defs.max_magnitude(),
            spectrum_before: (&report.spectrum_before).into(),
            spectrum_after: (&report.spectrum_after).into(),
            defs_file: "defs.json".into(),
            trace: report.trace.clone(),
        },
    )
}
