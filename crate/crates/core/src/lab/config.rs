//! Experiment configuration read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{Dealias, EvolutionParams};
use crate::lab::catalog::InitialData;
use crate::lattice::TorusGeometry;
use crate::profiles::{EuclideanProfile, Frame, KernelSearch};

pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    #[serde(default = "unit_lambda")]
    pub lambda: [f64; 4],
    #[serde(default = "default_grid")]
    pub grid: [usize; 4],
}

fn unit_lambda() -> [f64; 4] {
    [1.0; 4]
}

fn default_grid() -> [usize; 4] {
    [16; 4]
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            lambda: unit_lambda(),
            grid: default_grid(),
        }
    }
}

impl GeometryConfig {
    pub fn build(&self) -> Result<TorusGeometry> {
        if self.grid.iter().any(|&g| g % 2 == 1 || g < 8) {
            return Err(Error::config(
                "geometry.grid",
                format!(
                    "every grid size must be even and at least 8, got {:?}",
                    self.grid
                ),
            ));
        }
        TorusGeometry::new(self.lambda, self.grid)
            .map_err(|e| Error::config("geometry.lambda", e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    #[serde(default = "defocusing")]
    pub mu: i32,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    #[serde(default = "default_dealias")]
    pub dealias: Dealias,
    #[serde(default = "default_threshold")]
    pub blowup_threshold: f64,
}

fn defocusing() -> i32 {
    1
}
fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_t_end() -> f64 {
    0.1
}
fn default_stride() -> usize {
    10
}
fn default_dealias() -> Dealias {
    Dealias::None
}
fn default_threshold() -> f64 {
    1e4
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            mu: defocusing(),
            dt: default_dt(),
            t_end: default_t_end(),
            snapshot_stride: default_stride(),
            dealias: default_dealias(),
            blowup_threshold: default_threshold(),
        }
    }
}

impl EvolutionConfig {
    pub fn params(&self) -> Result<EvolutionParams> {
        let p = EvolutionParams {
            mu: self.mu,
            dt: self.dt,
            t_end: self.t_end,
            snapshot_stride: self.snapshot_stride,
            dealias: self.dealias,
            blowup_threshold: self.blowup_threshold,
        };
        p.validate().map_err(|e| match e {
            Error::Config { key, message } => Error::config(format!("evolution.{key}"), message),
            other => other,
        })?;
        Ok(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsConfig {
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Overrides the default c_star.
    #[serde(default)]
    pub c_star: Option<f64>,
}

fn default_tolerance() -> f64 {
    1e-10
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        Self {
            tolerance: default_tolerance(),
            c_star: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrappingConfig {
    #[serde(default = "default_delta0")]
    pub delta0: f64,
}

fn default_delta0() -> f64 {
    0.05
}

impl Default for TrappingConfig {
    fn default() -> Self {
        Self {
            delta0: default_delta0(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrichartzConfig {
    #[serde(default = "default_strichartz_p")]
    pub p: Vec<u32>,
    #[serde(default = "default_shells")]
    pub shells: Vec<u32>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Acceptance band for each fitted slope, centred on 2 - 6/p.
    #[serde(default = "default_slope_band")]
    pub slope_band: f64,
    /// Held-out cells may exceed the calibrated refined-Strichartz constant by this factor.
    #[serde(default = "default_refined_slack")]
    pub refined_slack: f64,
}

fn default_strichartz_p() -> Vec<u32> {
    vec![4, 6]
}
fn default_shells() -> Vec<u32> {
    vec![2, 4, 8, 16]
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2]
}
fn default_slope_band() -> f64 {
    0.15
}
fn default_refined_slack() -> f64 {
    2.0
}

impl Default for StrichartzConfig {
    fn default() -> Self {
        Self {
            p: default_strichartz_p(),
            shells: default_shells(),
            seeds: default_seeds(),
            slope_band: default_slope_band(),
            refined_slack: default_refined_slack(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BilinearConfig {
    #[serde(default = "default_low_shells")]
    pub low_shells: Vec<u32>,
    #[serde(default = "default_ratios")]
    pub ratios: Vec<u32>,
    /// Random modes drawn per shell.
    #[serde(default = "default_modes")]
    pub modes: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_residual_limit")]
    pub residual_limit: f64,
}

fn default_low_shells() -> Vec<u32> {
    vec![1, 2, 4, 8]
}
fn default_ratios() -> Vec<u32> {
    vec![4, 16, 64]
}
fn default_modes() -> usize {
    64
}
fn default_residual_limit() -> f64 {
    0.2
}

impl Default for BilinearConfig {
    fn default() -> Self {
        Self {
            low_shells: default_low_shells(),
            ratios: default_ratios(),
            modes: default_modes(),
            seeds: default_seeds(),
            residual_limit: default_residual_limit(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtinctionConfig {
    #[serde(default = "default_extinction_profile")]
    pub profile: EuclideanProfile,
    #[serde(default = "default_extinction_n")]
    pub n: Vec<f64>,
    #[serde(default = "default_extinction_t")]
    pub t: Vec<f64>,
}

fn default_extinction_profile() -> EuclideanProfile {
    EuclideanProfile::Gaussian { sigma: 8.0 }
}
fn default_extinction_n() -> Vec<f64> {
    vec![64.0]
}
fn default_extinction_t() -> Vec<f64> {
    vec![4.0, 16.0, 64.0]
}

impl Default for ExtinctionConfig {
    fn default() -> Self {
        Self {
            profile: default_extinction_profile(),
            n: default_extinction_n(),
            t: default_extinction_t(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    #[serde(default = "default_kernel_m")]
    pub m: Vec<u32>,
    /// S for every M; defaults to S = M.
    #[serde(default)]
    pub s: Option<u32>,
    #[serde(default)]
    pub search: KernelSearch,
    /// Largest allowed ratio between fitted constants.
    #[serde(default = "default_kernel_spread")]
    pub spread_limit: f64,
}

fn default_kernel_m() -> Vec<u32> {
    vec![4, 8, 16]
}
fn default_kernel_spread() -> f64 {
    4.0
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            m: default_kernel_m(),
            s: None,
            search: KernelSearch::default(),
            spread_limit: default_kernel_spread(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileMakeConfig {
    #[serde(default = "default_make_profile")]
    pub profile: EuclideanProfile,
    #[serde(default = "default_make_n")]
    pub n: f64,
    #[serde(default)]
    pub center: [f64; 4],
}

fn default_make_profile() -> EuclideanProfile {
    EuclideanProfile::WBubble
}
fn default_make_n() -> f64 {
    16.0
}

impl Default for ProfileMakeConfig {
    fn default() -> Self {
        Self {
            profile: default_make_profile(),
            n: default_make_n(),
            center: [0.0; 4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractConfig {
    #[serde(default = "default_max_profiles")]
    pub max_profiles: usize,
    #[serde(default = "default_z_tolerance")]
    pub z_tolerance: f64,
    #[serde(default = "default_search_times")]
    pub search_times: Vec<f64>,
    #[serde(default = "default_skip_rel")]
    pub skip_rel: f64,
    /// Largest admissible relative Hdot1 decoupling defect.
    #[serde(default = "default_decoupling_limit")]
    pub decoupling_limit: f64,
}

fn default_max_profiles() -> usize {
    4
}
fn default_z_tolerance() -> f64 {
    1.0
}
fn default_search_times() -> Vec<f64> {
    vec![0.0]
}
fn default_skip_rel() -> f64 {
    1e-12
}
fn default_decoupling_limit() -> f64 {
    0.05
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            max_profiles: default_max_profiles(),
            z_tolerance: default_z_tolerance(),
            search_times: default_search_times(),
            skip_rel: default_skip_rel(),
            decoupling_limit: default_decoupling_limit(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Coarse step used for the approximate solution.
    #[serde(default = "default_coarse_dt")]
    pub coarse_dt: f64,
    /// Largest admissible distance / epsilon.
    #[serde(default = "default_distance_factor")]
    pub distance_factor: f64,
}

fn default_epsilon() -> f64 {
    1e-3
}
fn default_coarse_dt() -> f64 {
    1e-2
}
fn default_distance_factor() -> f64 {
    10.0
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            coarse_dt: default_coarse_dt(),
            distance_factor: default_distance_factor(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSuiteConfig {
    pub profile: EuclideanProfile,
    pub first: Frame,
    pub second: Frame,
    #[serde(default = "default_prefix")]
    pub prefix_len: usize,
    #[serde(default = "default_divergence")]
    pub divergence_threshold: f64,
    /// Frame terms k = 1..=pairs are turned into fields.
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    /// Require the frames to be orthogonal.
    #[serde(default = "yes")]
    pub require_orthogonal: bool,
    /// Length of the short nonlinear runs.
    #[serde(default = "default_nonlinear_t")]
    pub nonlinear_t: f64,
    #[serde(default = "default_nonlinear_limit")]
    pub nonlinear_limit: f64,
}

fn default_prefix() -> usize {
    8
}
fn default_divergence() -> f64 {
    4.0
}
fn default_pairs() -> usize {
    5
}
fn yes() -> bool {
    true
}
fn default_nonlinear_t() -> f64 {
    0.01
}
fn default_nonlinear_limit() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormsConfig {
    /// Directory written by an `evolve` run.
    pub trajectory: PathBuf,
    /// Windows as [start, end] pairs; defaults to consecutive windows of length 1.
    #[serde(default)]
    pub windows: Vec<[f64; 2]>,
}

/// Everything a scenario may read. Sections a scenario does not use are
/// ignored by it but still validated.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub evolution: EvolutionConfig,
    #[serde(default)]
    pub constants: ConstantsConfig,
    #[serde(default)]
    pub initial: Option<InitialData>,
    #[serde(default)]
    pub trapping: TrappingConfig,
    #[serde(default)]
    pub strichartz: StrichartzConfig,
    #[serde(default)]
    pub bilinear: BilinearConfig,
    #[serde(default)]
    pub extinction: ExtinctionConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub make: ProfileMakeConfig,
    #[serde(default)]
    pub extract: ExtractConfig,
    #[serde(default)]
    pub stability: StabilityConfig,
    #[serde(default)]
    pub profile_suite: Option<ProfileSuiteConfig>,
    #[serde(default)]
    pub norms: Option<NormsConfig>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let key = unknown_key(e.message()).unwrap_or_else(|| "config".into());
            Error::config(key, e.to_string().trim_end().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.build()?;
        self.evolution.params()?;
        if !(self.constants.tolerance > 0.0) {
            return Err(Error::config("constants.tolerance", "must be positive"));
        }
        if let Some(c) = self.constants.c_star {
            if !(c > 0.0) {
                return Err(Error::config("constants.c_star", "must be positive"));
            }
        }
        if !(self.trapping.delta0 > 0.0 && self.trapping.delta0 < 1.0) {
            return Err(Error::config("trapping.delta0", "must lie in (0, 1)"));
        }
        if matches!(self.initial, Some(InitialData::RandomH1 { .. })) && self.seed.is_none() {
            return Err(Error::config("seed", "random initial data needs a seed"));
        }
        Ok(())
    }
}

fn unknown_key(message: &str) -> Option<String> {
    let rest = message.split("unknown field `").nth(1)?;
    Some(rest.split('`').next()?.to_string())
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::parse("[evolution]\nt_end = 0.5\n").unwrap();
        assert_eq!(c.evolution.dt, 1e-3);
        assert_eq!(c.evolution.t_end, 0.5);
        assert_eq!(c.geometry.grid, [16; 4]);
    }

    #[test]
    fn odd_grid_names_grid() {
        let e = ExperimentConfig::parse("[geometry]\ngrid = [16, 15, 16, 16]\n").unwrap_err();
        match e {
            Error::Config { key, .. } => assert!(key.contains("grid")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let e = ExperimentConfig::parse("[evolution]\ndtt = 0.1\n").unwrap_err();
        match e {
            Error::Config { key, message } => {
                assert_eq!(key, "dtt");
                assert!(message.contains("dtt"));
                assert!(message.contains("line"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn random_data_needs_seed() {
        let text = "[initial]\nkind = \"random_h1\"\n";
        assert!(ExperimentConfig::parse(text).is_err());
        let ok = ExperimentConfig::parse(&format!("seed = 3\n{text}")).unwrap();
        assert_eq!(ok.seed, Some(3));
    }

    #[test]
    fn bubble_data_parses() {
        let text = r#"
[initial]
kind = "torus_bubble"
scale_n = 16.0
profile = { kind = "w_bubble" }
scale = { by = "energy_fraction", value = 0.9 }
"#;
        let c = ExperimentConfig::parse(text).unwrap();
        assert!(matches!(c.initial, Some(InitialData::TorusBubble { .. })));
    }
}
