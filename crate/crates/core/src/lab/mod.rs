//! Experiment orchestration: configuration, initial data, scenario runners
//! and the files they leave behind.

pub mod catalog;
pub mod config;
pub mod fit;
pub mod report;
pub mod scenarios;
pub mod sweeps;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use config::ExperimentConfig;
use report::{ExperimentReport, OutputDir};

/// Every runnable scenario, including the `profiles` verbs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Evolve,
    GroundState,
    Norms,
    Trapping,
    BlowupProbe,
    Strichartz,
    Bilinear,
    Extinction,
    Kernel,
    ProfilesMake,
    ProfilesExtract,
    ProfileSuite,
    Stability,
}

impl Scenario {
    pub fn run(self, cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<ExperimentReport> {
        use scenarios::*;
        match self {
            Scenario::Evolve => run_evolve(cfg, out),
            Scenario::GroundState => run_ground_state(cfg, out),
            Scenario::Norms => run_norms(cfg, out),
            Scenario::Trapping => run_trapping(cfg, out),
            Scenario::BlowupProbe => run_blowup_probe(cfg, out),
            Scenario::Strichartz => run_strichartz(cfg, out),
            Scenario::Bilinear => run_bilinear(cfg, out),
            Scenario::Extinction => run_extinction_scenario(cfg, out),
            Scenario::Kernel => run_kernel(cfg, out),
            Scenario::ProfilesMake => run_profile_make(cfg, out),
            Scenario::ProfilesExtract => run_extract(cfg, out),
            Scenario::ProfileSuite => run_profile_suite(cfg, out),
            Scenario::Stability => run_stability(cfg, out),
        }
    }
}

/// Runs `scenario` with outputs under `dir`, finishing with the report,
/// `manifest.json` and `timing.txt`.
pub fn run_to_dir(
    scenario: Scenario,
    cfg: &ExperimentConfig,
    dir: &Path,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut out = OutputDir::create(dir)?;
    let report = scenario.run(cfg, &mut out)?;
    out.finish(&report, start.elapsed().as_secs_f64())?;
    Ok(report)
}
