//! Scenario runners. Each reads an [`ExperimentConfig`], writes its artifacts
//! through an [`OutputDir`] and returns the report.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::critical_norms::{x1_proxy, y1_proxy, z_norm, z_prime_from, NormReport, TimeWindow};
use crate::error::{Error, Result};
use crate::evolution::{
    duhamel_integral, evolve, free_propagate, EvolutionParams, HaltReason, SourceSamples,
    TrajectoryRecord,
};
use crate::field::{forward_transform, inverse_transform, read_snapshot, SpectralField, C64};
use crate::invariants::{
    compute_sobolev_constants, trapping_along_flow, verify_ground_state_equation, EnergyParts,
    SobolevConstants, TrappingVariant,
};
use crate::lab::catalog::{build_initial, random_h1};
use crate::lab::config::ExperimentConfig;
use crate::lab::fit::{loglog, ols, LinearFit};
use crate::lab::report::{
    csv_text, diagnostics_csv, ExperimentReport, OutputDir, EXTINCTION_HEADER, NORMS_HEADER,
};
use crate::lab::sweeps::{
    bilinear_cell, coherent_shell_data, kernel_origin_by_classes, strichartz_cell, BilinearCell,
    StrichartzCell,
};
use crate::lattice::TorusGeometry;
use crate::profiles::{
    extract_bubbles, frames_orthogonal, kernel_sup_bound_check, make_profile_on_torus,
    run_extinction, translate_modulate, ChartMap, ExtractionOptions, W_HDOT1_SQ,
};

fn constants(cfg: &ExperimentConfig, g: &TorusGeometry) -> Result<SobolevConstants> {
    let c = compute_sobolev_constants(cfg.constants.tolerance)?.for_geometry(g);
    Ok(match cfg.constants.c_star {
        Some(v) => c.with_c_star(v),
        None => c,
    })
}

fn initial(
    cfg: &ExperimentConfig,
    g: TorusGeometry,
    k: &SobolevConstants,
) -> Result<SpectralField> {
    let spec = cfg
        .initial
        .as_ref()
        .ok_or_else(|| Error::config("initial", "this scenario needs an [initial] section"))?;
    build_initial(spec, g, cfg.seed.unwrap_or(0), k)
}

fn require_focusing(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.evolution.mu != -1 {
        return Err(Error::Domain(format!(
            "this scenario needs the focusing flow mu = -1, got mu = {}",
            cfg.evolution.mu
        )));
    }
    Ok(())
}

fn relative_drift(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = values.clone();
    let Some(first) = it.next() else {
        return 0.0;
    };
    let scale = first.abs().max(f64::MIN_POSITIVE);
    values.map(|v| (v - first).abs()).fold(0.0, f64::max) / scale
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drifts {
    pub mass: f64,
    pub energy: f64,
    pub e_star: f64,
    pub e_star_star: f64,
}

impl Drifts {
    pub fn of(traj: &TrajectoryRecord) -> Self {
        let d = &traj.diagnostics;
        Self {
            mass: relative_drift(d.iter().map(|x| x.mass)),
            energy: relative_drift(d.iter().map(|x| x.energy)),
            e_star: relative_drift(d.iter().map(|x| x.e_star)),
            e_star_star: relative_drift(d.iter().map(|x| x.e_star_star)),
        }
    }
}

/// Index of a trajectory written by `evolve`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryIndex {
    pub mu: i32,
    pub lambda: [f64; 4],
    pub grid: [usize; 4],
    pub times: Vec<f64>,
    pub snapshots: Vec<String>,
    pub halt_reason: HaltReason,
}

fn write_trajectory(out: &mut OutputDir, traj: &TrajectoryRecord) -> Result<()> {
    out.write_text(
        "diagnostics.csv",
        "csv",
        &diagnostics_csv(&traj.diagnostics),
    )?;
    let mut names = Vec::with_capacity(traj.snapshots.len());
    for (k, s) in traj.snapshots.iter().enumerate() {
        let name = format!("snapshots/snap_{k:05}.tnls");
        out.write_field(&name, &inverse_transform(s))?;
        names.push(name);
    }
    let index = TrajectoryIndex {
        mu: traj.mu,
        lambda: traj.geometry.lambda(),
        grid: traj.geometry.grid(),
        times: traj.times.clone(),
        snapshots: names,
        halt_reason: traj.halt_reason,
    };
    out.write_json("trajectory.json", &index)
}

/// Reads a trajectory directory written by `evolve`.
pub fn read_trajectory(dir: &Path) -> Result<TrajectoryRecord> {
    let path = dir.join("trajectory.json");
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let index: TrajectoryIndex = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let geometry = TorusGeometry::new(index.lambda, index.grid)?;
    let mut snapshots = Vec::with_capacity(index.snapshots.len());
    for name in &index.snapshots {
        let p = dir.join(name);
        let file = File::open(&p).map_err(|e| Error::io(&p, e))?;
        let field = read_snapshot(BufReader::new(file))?;
        if field.geometry != geometry {
            return Err(Error::Data(format!(
                "{}: geometry differs from the index",
                p.display()
            )));
        }
        snapshots.push(forward_transform(&field)?);
    }
    if snapshots.len() != index.times.len() {
        return Err(Error::Data(
            "trajectory index lists a different number of times and snapshots".into(),
        ));
    }
    Ok(TrajectoryRecord {
        geometry,
        mu: index.mu,
        times: index.times,
        snapshots,
        diagnostics: Vec::new(),
        halt_reason: index.halt_reason,
    })
}

fn clean_halt(report: &mut ExperimentReport, traj: &TrajectoryRecord) -> Result<()> {
    let finite = traj
        .diagnostics
        .iter()
        .all(|d| d.hdot1.is_finite() && d.mass.is_finite());
    if traj.halt_reason == HaltReason::NonFinite || !finite {
        return Err(Error::Numeric(format!(
            "solution became non-finite before t = {}",
            traj.times.last().copied().unwrap_or(0.0)
        )));
    }
    report.check(
        "clean_halt",
        true,
        format!(
            "{:?} at t = {}",
            traj.halt_reason,
            traj.times.last().copied().unwrap_or(0.0)
        ),
    );
    Ok(())
}

pub fn run_evolve(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<ExperimentReport> {
    let g = cfg.geometry.build()?;
    let params = cfg.evolution.params()?;
    let k = constants(cfg, &g)?;
    let u0 = initial(cfg, g, &k)?;
    let traj = evolve(&u0, &params, &k)?;
    write_trajectory(out, &traj)?;
    let mut report = ExperimentReport::new("evolve", cfg).with_grid(&g);
    report.result("halt_reason", traj.halt_reason)?;
    report.result("samples", traj.len())?;
    report.result("final_time", traj.times.last().copied())?;
    report.result("drift", Drifts::of(&traj))?;
    clean_halt(&mut report, &traj)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundStateDocument {
    #[serde(rename = "W_hdot1_sq")]
    pub w_hdot1_sq: f64,
    #[serde(rename = "C4")]
    pub c4: f64,
    #[serde(rename = "E_W")]
    pub e_w: f64,
    pub relations_ok: bool,
    pub tolerance: f64,
}

pub fn run_ground_state(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<ExperimentReport> {
    let tol = cfg.constants.tolerance;
    let c = compute_sobolev_constants(tol)?;
    let relations_ok = c.relations_ok(1e-8);
    let doc = GroundStateDocument {
        w_hdot1_sq: c.w_hdot1_sq,
        c4: c.c4,
        e_w: c.e_w,
        relations_ok,
        tolerance: tol,
    };
    out.write_json("ground_state.json", &doc)?;
    let grid: Vec<f64> = (0..=5000).map(|k| k as f64 * 0.01).collect();
    let residual = verify_ground_state_equation(&grid);
    let mut report = ExperimentReport::new("ground_state", cfg);
    let rel = (c.w_hdot1_sq - W_HDOT1_SQ).abs() / W_HDOT1_SQ;
    report.result("constants", doc)?;
    report.result("w_hdot1_sq_relative_error", rel)?;
    report.result("elliptic_residual", residual.max_abs)?;
    report.result("e_w_times_4_c4_pow4", 4.0 * c.e_w * c.c4_pow4())?;
    report.check(
        "w_hdot1_sq_closed_form",
        rel < 1e-8,
        format!("relative error {rel:e}"),
    );
    report.check(
        "elliptic_residual",
        residual.max_abs < 1e-10,
        format!("max |Lap W + W^3| = {:e}", residual.max_abs),
    );
    report.check(
        "relations",
        relations_ok,
        format!("4 E_W C4^4 = {}", 4.0 * c.e_w * c.c4_pow4()),
    );
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowNorms {
    pub window: TimeWindow,
    pub z: NormReport,
    pub z_prime: f64,
}

fn default_windows(times: &[f64]) -> Vec<[f64; 2]> {
    let (a, b) = (times[0], *times.last().unwrap());
    if b - a <= 1.0 {
        return vec![[a, b]];
    }
    let mut out = Vec::new();
    let mut s = a;
    while s < b - 1e-12 {
        out.push([s, (s + 1.0).min(b)]);
        s += 1.0;
    }
    out
}

pub fn run_norms(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<ExperimentReport> {
    let nc = cfg
        .norms
        .as_ref()
        .ok_or_else(|| Error::config("norms", "the norms scenario needs a [norms] section"))?;
    let traj = read_trajectory(&nc.trajectory)?;
    let windows = if nc.windows.is_empty() {
        default_windows(&traj.times)
    } else {
        nc.windows.clone()
    };
    let x1 = x1_proxy(&traj)?;
    let y1 = y1_proxy(&traj)?;
    let mut rows = Vec::new();
    let mut detail = Vec::new();
    for [a, b] in windows {
        let w = TimeWindow::new(a, b)?;
        let z = z_norm(&traj, w)?;
        let zp = z_prime_from(z.value, x1);
        rows.push(vec![a, b, z.value, zp, x1, y1]);
        detail.push(WindowNorms {
            window: w,
            z,
            z_prime: zp,
        });
    }
    out.write_text("norms.csv", "csv", &csv_text(NORMS_HEADER, &rows))?;
    out.write_json("norms_shells.json", &detail)?;
    let mut report = ExperimentReport::new("norms", cfg).with_grid(&traj.geometry);
    report.result("x1_proxy", x1)?;
    report.result("y1_proxy", y1)?;
    report.result("windows", &detail)?;
    let finite = rows.iter().flatten().all(|v| v.is_finite());
    report.check("finite", finite, "every norm is finite");
    Ok(report)
}

pub fn run_trapping(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<ExperimentReport> {
    require_focusing(cfg)?;
    let g = cfg.geometry.build()?;
    let params = cfg.evolution.params()?;
    let k = constants(cfg, &g)?;
    let u0 = initial(cfg, g, &k)?;
    let traj = evolve(&u0, &params, &k)?;
    out.write_text(
        "diagnostics.csv",
        "csv",
        &diagnostics_csv(&traj.diagnostics),
    )?;
    let mut report = ExperimentReport::new("trapping", cfg).with_grid(&g);
    clean_halt(&mut report, &traj)?;
    let reached = traj.times.last().copied().unwrap_or(0.0);
    report.check(
        "reached_t_end",
        traj.halt_reason == HaltReason::Completed,
        format!("stopped at t = {reached}"),
    );
    for (variant, name) in [
        (TrappingVariant::Star, "star"),
        (TrappingVariant::StarStar, "star_star"),
    ] {
        let r = trapping_along_flow(&traj, &k, variant, cfg.trapping.delta0)?;
        report.check(
            name,
            r.passed(),
            format!(
                "delta_bar = {}, max_margin = {}, first failure {:?}, {} samples",
                r.delta_bar,
                r.max_margin,
                r.first_failure_time,
                r.samples.len()
            ),
        );
        report.result(name, &r)?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthRecord {
    pub times: Vec<f64>,
    pub hdot1: Vec<f64>,
    /// Samples from the start over which Hdot1 increases.
    pub monotone_samples: usize,
    pub growth_factor: f64,
    pub halt_reason: HaltReason,
}

pub fn run_blowup_probe(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<ExperimentReport> {
    require_focusing(cfg)?;
    let g = cfg.geometry.build()?;
    let params = cfg.evolution.params()?;
    let k = constants(cfg, &g)?;
    let u0 = initial(cfg, g, &k)?;
    let traj = evolve(&u0, &params, &k)?;
    out.write_text(
        "diagnostics.csv",
        "csv",
        &diagnostics_csv(&traj.diagnostics),
    )?;
    let hdot1: Vec<f64> = traj.diagnostics.iter().map(|d| d.hdot1).collect();
    let monotone_samples = 1 + hdot1.windows(2).take_while(|w| w[1] > w[0]).count();
    let growth_factor = hdot1.iter().copied().fold(0.0, f64::max) / hdot1[0].max(f64::MIN_POSITIVE);
    let rec = GrowthRecord {
        times: traj.times.clone(),
        hdot1,
        monotone_samples,
        growth_factor,
        halt_reason: traj.halt_reason,
    };
    let mut report = ExperimentReport::new("blowup_probe", cfg).with_grid(&g);
    clean_halt(&mut report, &traj)?;
    report.result("growth", &rec)?;
    report.result("initial_over_w", rec.hdot1[0] / k.w_hdot1())?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub p: u32,
    pub target: f64,
    pub shells: Vec<u32>,
    pub fit: LinearFit,
}

pub fn run_strichartz(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<ExperimentReport> {
    let sc = &cfg.strichartz;
    if let Some(p) = sc.p.iter().find(|p| **p <= 3) {
        return Err(Error::Domain(format!(
            "Strichartz exponent p = {p} must exceed 3"
        )));
    }
    if sc.seeds.is_empty() || sc.shells.len() < 2 {
        return Err(Error::config(
            "strichartz.shells",
            "need at least two shells and one seed",
        ));
    }
    let mut cells: Vec<StrichartzCell> = Vec::new();
    for &seed in &sc.seeds {
        for &n in &sc.shells {
            let f = coherent_shell_data(n, seed)?;
            cells.push(strichartz_cell(&f, n, seed, &sc.p)?);
        }
    }
    let mut report = ExperimentReport::new("strichartz", cfg);
    let mut rows = Vec::new();
    for c in &cells {
        for (p, v) in &c.lp {
            rows.push(vec![*p as f64, c.n as f64, c.seed as f64, *v]);
        }
    }
    out.write_text("strichartz.csv", "csv", &csv_text("p,N,seed,value", &rows))?;
    let mut fits = Vec::new();
    for (k, &p) in sc.p.iter().enumerate() {
        let ns: Vec<f64> = cells.iter().map(|c| c.n as f64).collect();
        let vs: Vec<f64> = cells.iter().map(|c| c.lp[k].1).collect();
        let fit = loglog(&ns, &vs)?;
        let target = 2.0 - 6.0 / p as f64;
        report.check(
            &format!("slope_p{p}"),
            (fit.slope - target).abs() <= sc.slope_band,
            format!(
                "slope {} (target {target}, band {}), rms log residual {}",
                fit.slope, sc.slope_band, fit.rms_residual
            ),
        );
        fits.push(ExponentFit {
            p,
            target,
            shells: sc.shells.clone(),
            fit,
        });
    }
    let calibration = cells
        .iter()
        .filter(|c| c.seed == sc.seeds[0])
        .map(|c| c.refined_ratio)
        .fold(0.0, f64::max);
    let held_out = cells
        .iter()
        .filter(|c| c.seed != sc.seeds[0])
        .map(|c| c.refined_ratio)
        .fold(0.0, f64::max);
    report.check(
        "refined",
        held_out <= sc.refined_slack * calibration,
        format!(
            "constant {calibration} fitted on seed {}, held-out max ratio {held_out}, slack {}",
            sc.seeds[0], sc.refined_slack
        ),
    );
    report.result("cells", &cells)?;
    report.result("fits", &fits)?;
    report.result("refined_constant", calibration)?;
    report.result("refined_held_out_max", held_out)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaFit {
    pub kappa: f64,
    pub kappa_se: f64,
    pub relative_se: f64,
    pub rms_log_residual: f64,
    pub kappa_lower95: f64,
    pub fit: LinearFit,
}

pub fn fit_kappa(cells: &[BilinearCell]) -> Result<KappaFit> {
    let x: Vec<f64> = cells.iter().map(|c| c.envelope.ln()).collect();
    let y: Vec<f64> = cells.iter().map(|c| c.ratio.ln()).collect();
    let fit = ols(&x, &y)?;
    Ok(KappaFit {
        kappa: fit.slope,
        kappa_se: fit.slope_se,
        relative_se: fit.slope_se / fit.slope.abs(),
        rms_log_residual: fit.rms_residual,
        kappa_lower95: fit.slope_lower95,
        fit,
    })
}

pub fn run_bilinear(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<ExperimentReport> {
    let bc = &cfg.bilinear;
    if let Some(r) = bc.ratios.iter().find(|r| **r < 1) {
        return Err(Error::Domain(format!(
            "ratio N1/N2 = {r} violates N1 >= N2"
        )));
    }
    let mut cells = Vec::new();
    for &seed in &bc.seeds {
        for &n2 in &bc.low_shells {
            for &r in &bc.ratios {
                cells.push(bilinear_cell(seed, r * n2, n2, bc.modes)?);
            }
        }
    }
    let rows: Vec<Vec<f64>> = cells
        .iter()
        .map(|c| {
            vec![
                c.seed as f64,
                c.n1 as f64,
                c.n2 as f64,
                c.product,
                c.ratio,
                c.envelope,
            ]
        })
        .collect();
    out.write_text(
        "bilinear.csv",
        "csv",
        &csv_text("seed,N1,N2,product,ratio,envelope", &rows),
    )?;
    let k = fit_kappa(&cells)?;
    let mut report = ExperimentReport::new("bilinear", cfg);
    report.check(
        "kappa_positive",
        k.kappa > 0.0 && k.kappa_lower95 > 0.0,
        format!(
            "kappa {} with one-sided 95% lower bound {}",
            k.kappa, k.kappa_lower95
        ),
    );
    report.check(
        "regression_residual",
        k.relative_se < bc.residual_limit,
        format!(
            "relative standard error {} (limit {}), rms log residual {}",
            k.relative_se, bc.residual_limit, k.rms_log_residual
        ),
    );
    report.result("cells", &cells)?;
    report.result("kappa", &k)?;
    Ok(report)
}

pub fn run_extinction_scenario(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
) -> Result<ExperimentReport> {
    let ec = &cfg.extinction;
    let g = cfg.geometry.build()?;
    let points = run_extinction(&ec.profile, &ec.n, &ec.t, &g)?;
    let rows: Vec<Vec<f64>> = points.iter().map(|p| vec![p.n, p.t, p.z_value]).collect();
    out.write_text("extinction.csv", "csv", &csv_text(EXTINCTION_HEADER, &rows))?;
    let mut report = ExperimentReport::new("extinction", cfg).with_grid(&g);
    for &n in &ec.n {
        let mut curve: Vec<(f64, f64)> = points
            .iter()
            .filter(|p| p.n == n)
            .map(|p| (p.t, p.z_value))
            .collect();
        curve.sort_by(|a, b| a.0.total_cmp(&b.0));
        let decreasing = curve.windows(2).all(|w| w[1].1 < w[0].1);
        report.check(
            &format!("decreasing_n{n}"),
            decreasing,
            format!("{:?}", curve.iter().map(|c| c.1).collect::<Vec<_>>()),
        );
    }
    if ec.n.len() > 1 {
        for &t in &ec.t {
            let zs: Vec<f64> = points
                .iter()
                .filter(|p| p.t == t)
                .map(|p| p.z_value)
                .collect();
            let hi = zs.iter().copied().fold(0.0, f64::max);
            let lo = zs.iter().copied().fold(f64::INFINITY, f64::min);
            if lo > 0.0 {
                report.check(
                    &format!("scale_agreement_t{t}"),
                    hi <= 2.0 * lo,
                    format!("Z values {zs:?}"),
                );
            } else {
                report.result(&format!("degenerate_t{t}"), &zs)?;
            }
        }
    }
    report.result("points", &points)?;
    Ok(report)
}

pub fn run_kernel(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<ExperimentReport> {
    let kc = &cfg.kernel;
    let mut reports = Vec::new();
    for &m in &kc.m {
        reports.push(kernel_sup_bound_check(m, kc.s.unwrap_or(m), &kc.search)?);
    }
    out.write_json("kernel.json", &reports)?;
    let mut report = ExperimentReport::new("kernel", cfg);
    let cs: Vec<f64> = reports.iter().map(|r| r.fitted_constant).collect();
    let hi = cs.iter().copied().fold(0.0, f64::max);
    let lo = cs.iter().copied().fold(f64::INFINITY, f64::min);
    report.check(
        "constant_spread",
        hi <= kc.spread_limit * lo,
        format!("constants {cs:?}, limit factor {}", kc.spread_limit),
    );
    let cutoff = crate::field::CutoffProfile::default();
    let mut worst: f64 = 0.0;
    for r in &reports {
        let golden = kernel_origin_by_classes(r.m, 0.0, &cutoff);
        worst = worst.max((golden - C64::new(r.origin_value, 0.0)).norm() / golden.norm());
    }
    report.check(
        "origin_value",
        worst < 1e-12,
        format!("largest relative gap to the norm-class sum {worst:e}"),
    );
    report.result("kernels", &reports)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub n: f64,
    pub center: [f64; 4],
    pub l2: f64,
    pub hdot1: f64,
    pub l4: f64,
}

pub fn run_profile_make(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<ExperimentReport> {
    let mc = &cfg.make;
    let g = cfg.geometry.build()?;
    let chart = ChartMap::for_geometry(&g);
    let mut s = forward_transform(&make_profile_on_torus(&mc.profile, mc.n, &g, &chart)?)?;
    if mc.center != [0.0; 4] {
        s = translate_modulate(&s, 0.0, mc.center);
    }
    let phys = inverse_transform(&s);
    out.write_field("profile.tnls", &phys)?;
    let summary = ProfileSummary {
        n: mc.n,
        center: mc.center,
        l2: s.l2_sq().sqrt(),
        hdot1: s.hdot1_sq().sqrt(),
        l4: phys.integral_abs_pow(4.0).powf(0.25),
    };
    out.write_json("profile.json", &summary)?;
    let mut report = ExperimentReport::new("profiles_make", cfg).with_grid(&g);
    report.check("finite", s.is_finite(), "coefficients are finite");
    report.result("profile", summary)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractedEntry {
    pub n: f64,
    pub shell: u32,
    pub t: f64,
    pub x: [f64; 4],
    pub file: String,
}

pub fn run_extract(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<ExperimentReport> {
    let xc = &cfg.extract;
    let g = cfg.geometry.build()?;
    let k = constants(cfg, &g)?;
    let f = initial(cfg, g, &k)?;
    let opts = ExtractionOptions {
        max_profiles: xc.max_profiles,
        z_tolerance: xc.z_tolerance,
        search_times: xc.search_times.clone(),
        skip_rel: xc.skip_rel,
        ..ExtractionOptions::default()
    };
    let e = extract_bubbles(&f, &opts)?;
    let mut entries = Vec::new();
    for (i, p) in e.profiles.iter().enumerate() {
        let file = format!("profiles/profile_{i:02}.tnls");
        out.write_field(&file, &inverse_transform(&p.field))?;
        entries.push(ExtractedEntry {
            n: p.scale,
            shell: p.shell,
            t: p.time,
            x: p.center,
            file,
        });
    }
    out.write_field("profiles/remainder.tnls", &inverse_transform(&e.remainder))?;
    #[derive(Serialize)]
    struct Document<'a> {
        profiles: &'a [ExtractedEntry],
        residuals: crate::profiles::DecouplingResiduals,
        z_history: &'a [f64],
        complete: bool,
    }
    out.write_json(
        "extraction.json",
        &Document {
            profiles: &entries,
            residuals: e.residuals,
            z_history: &e.z_history,
            complete: e.complete,
        },
    )?;
    let mut report = ExperimentReport::new("profiles_extract", cfg).with_grid(&g);
    report.check(
        "remainder_below_tolerance",
        e.complete,
        format!("Z history {:?}, tolerance {}", e.z_history, xc.z_tolerance),
    );
    report.check(
        "hdot1_decoupling",
        e.residuals.hdot1 < xc.decoupling_limit,
        format!(
            "relative defect {} (limit {})",
            e.residuals.hdot1, xc.decoupling_limit
        ),
    );
    report.result("profiles", &entries)?;
    report.result("residuals", e.residuals)?;
    report.result("z_history", &e.z_history)?;
    Ok(report)
}

fn sup_h1_distance(a: &TrajectoryRecord, b: &TrajectoryRecord) -> f64 {
    a.snapshots
        .iter()
        .zip(&b.snapshots)
        .map(|(x, y)| x.sub(y).h1_sq().sqrt())
        .fold(0.0, f64::max)
}

/// sup_t ||u(t) - e^{it Lap} u(0) + i mu int_0^t e^{i(t-s) Lap} |u|^2 u ds||_{H1}
/// over the sample times of `traj`.
pub fn duhamel_residual(traj: &TrajectoryRecord) -> Result<f64> {
    let source = SourceSamples {
        times: traj.times.clone(),
        fields: traj.snapshots.clone(),
    };
    let u0 = &traj.snapshots[0];
    let coef = C64::new(0.0, traj.mu as f64);
    let mut worst: f64 = 0.0;
    for (j, &t) in traj.times.iter().enumerate().skip(1) {
        let d = duhamel_integral(&source, (traj.times[0], t))?;
        let r = traj.snapshots[j]
            .sub(&free_propagate(u0, t - traj.times[0]))
            .add(&d.scaled(coef));
        worst = worst.max(r.h1_sq().sqrt());
    }
    Ok(worst)
}

pub fn run_stability(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<ExperimentReport> {
    let st = &cfg.stability;
    if !(st.epsilon >= 0.0) {
        return Err(Error::config("stability.epsilon", "must be non-negative"));
    }
    let g = cfg.geometry.build()?;
    let params = cfg.evolution.params()?;
    let k = constants(cfg, &g)?;
    let u0 = initial(cfg, g, &k)?;
    let kmax = *g.grid().iter().min().unwrap() as f64 / 4.0;
    let v = random_h1(g, cfg.seed.unwrap_or(0).wrapping_add(1), 1.0, kmax)?;
    let base = evolve(&u0, &params, &k)?;
    let perturbed = evolve(&u0.add(&v.scaled(C64::new(st.epsilon, 0.0))), &params, &k)?;
    let distance = sup_h1_distance(&base, &perturbed);
    let sample_dt = params.dt * params.snapshot_stride as f64;
    let coarse_stride = (sample_dt / st.coarse_dt).round() as usize;
    if coarse_stride == 0
        || ((coarse_stride as f64 * st.coarse_dt - sample_dt).abs() > 1e-9 * sample_dt)
    {
        return Err(Error::config(
            "stability.coarse_dt",
            format!("coarse step must divide the sampling interval {sample_dt}"),
        ));
    }
    let coarse_params = EvolutionParams {
        dt: st.coarse_dt,
        snapshot_stride: coarse_stride,
        ..params
    };
    let coarse = evolve(&u0, &coarse_params, &k)?;
    if coarse.len() != base.len() {
        return Err(Error::Numeric(
            "coarse and fine runs sampled different times".into(),
        ));
    }
    let residual = duhamel_residual(&coarse)?;
    let coarse_distance = sup_h1_distance(&base, &coarse);
    out.write_text(
        "diagnostics.csv",
        "csv",
        &diagnostics_csv(&base.diagnostics),
    )?;
    out.write_text(
        "diagnostics_perturbed.csv",
        "csv",
        &diagnostics_csv(&perturbed.diagnostics),
    )?;
    out.write_text(
        "diagnostics_coarse.csv",
        "csv",
        &diagnostics_csv(&coarse.diagnostics),
    )?;
    let mut report = ExperimentReport::new("stability", cfg).with_grid(&g);
    clean_halt(&mut report, &base)?;
    let ratio = if st.epsilon > 0.0 {
        distance / st.epsilon
    } else {
        0.0
    };
    report.check(
        "perturbation",
        if st.epsilon > 0.0 {
            distance <= st.distance_factor * st.epsilon
        } else {
            distance == 0.0
        },
        format!("sup H1 distance {distance}, ratio to epsilon {ratio}"),
    );
    let constant = if residual > 0.0 {
        coarse_distance / residual
    } else {
        0.0
    };
    report.check(
        "approximate_solution",
        coarse_distance <= st.distance_factor * residual,
        format!(
            "coarse-fine distance {coarse_distance}, Duhamel residual {residual}, measured constant {constant}"
        ),
    );
    report.result("distance", distance)?;
    report.result("distance_over_epsilon", ratio)?;
    report.result("coarse_distance", coarse_distance)?;
    report.result("duhamel_residual", residual)?;
    report.result("measured_constant", constant)?;
    Ok(report)
}

fn hdot1_inner(a: &SpectralField, b: &SpectralField, disp: &[f64]) -> C64 {
    let s: C64 = a
        .coeffs
        .iter()
        .zip(&b.coeffs)
        .zip(disp)
        .map(|((x, y), w)| x * y.conj() * *w)
        .sum();
    s * a.geometry.volume()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDecay {
    pub k: usize,
    pub first: crate::profiles::FrameTerm,
    pub second: crate::profiles::FrameTerm,
    /// |<a, b>_{H1}| / (||a||_{H1} ||b||_{H1}).
    pub h1_inner: f64,
    /// <|a|^2, |b|^2> / (||a||_4^2 ||b||_4^2).
    pub l4_mass: f64,
    /// |E(a + b) - E(a) - E(b)| / (|E(a)| + |E(b)|).
    pub energy_defect: f64,
    /// sup_t |<u_a(t), u_b(t)>_{Hdot1}| / (||u_a(t)|| ||u_b(t)||) over the short nonlinear run.
    pub nonlinear_cross: f64,
}

pub fn run_profile_suite(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<ExperimentReport> {
    let ps = cfg.profile_suite.as_ref().ok_or_else(|| {
        Error::config(
            "profile_suite",
            "the profile_suite scenario needs a [profile_suite] section",
        )
    })?;
    let g = cfg.geometry.build()?;
    let k = constants(cfg, &g)?;
    let verdict = frames_orthogonal(
        &ps.first,
        &ps.second,
        g.lambda(),
        ps.prefix_len,
        ps.divergence_threshold,
    )?;
    if ps.require_orthogonal && !verdict.orthogonal {
        return Err(Error::config(
            "profile_suite.second",
            format!(
                "frames are equivalent but orthogonal frames were requested; trace {:?}",
                verdict.trace
            ),
        ));
    }
    let chart = ChartMap::for_geometry(&g);
    let disp = g.dispersion_table();
    let mu = cfg.evolution.mu;
    let params = EvolutionParams {
        t_end: ps.nonlinear_t,
        snapshot_stride: 1,
        ..cfg.evolution.params()?
    };
    let build = |t: &crate::profiles::FrameTerm| -> Result<SpectralField> {
        let f = forward_transform(&make_profile_on_torus(&ps.profile, t.n, &g, &chart)?)?;
        Ok(translate_modulate(&f, t.t, t.x))
    };
    let mut pairs = Vec::new();
    for kk in 1..=ps.pairs {
        let (ta, tb) = (ps.first.term(kk)?, ps.second.term(kk)?);
        let (a, b) = (build(&ta)?, build(&tb)?);
        let h1_inner =
            crate::profiles::profile_inner_h1(&a, &b)?.norm() / (a.h1_sq() * b.h1_sq()).sqrt();
        let (pa, pb) = (inverse_transform(&a), inverse_transform(&b));
        let cross: f64 = pa
            .samples
            .iter()
            .zip(&pb.samples)
            .map(|(x, y)| x.norm_sqr() * y.norm_sqr())
            .sum::<f64>()
            * g.cell_volume();
        let l4_mass = cross / (pa.integral_abs_pow(4.0) * pb.integral_abs_pow(4.0)).sqrt();
        let ea = EnergyParts::of(&pa)?.energy(mu);
        let eb = EnergyParts::of(&pb)?.energy(mu);
        let eab = EnergyParts::of(&inverse_transform(&a.add(&b)))?.energy(mu);
        let energy_defect = (eab - ea - eb).abs() / (ea.abs() + eb.abs());
        let ua = evolve(&a, &params, &k)?;
        let ub = evolve(&b, &params, &k)?;
        let nonlinear_cross = ua
            .snapshots
            .iter()
            .zip(&ub.snapshots)
            .map(|(x, y)| {
                hdot1_inner(x, y, &disp).norm()
                    / (x.hdot1_sq_with(&disp) * y.hdot1_sq_with(&disp)).sqrt()
            })
            .fold(0.0, f64::max);
        pairs.push(PairDecay {
            k: kk,
            first: ta,
            second: tb,
            h1_inner,
            l4_mass,
            energy_defect,
            nonlinear_cross,
        });
    }
    let rows: Vec<Vec<f64>> = pairs
        .iter()
        .map(|p| {
            vec![
                p.k as f64,
                p.h1_inner,
                p.l4_mass,
                p.energy_defect,
                p.nonlinear_cross,
            ]
        })
        .collect();
    out.write_text(
        "profile_suite.csv",
        "csv",
        &csv_text("k,h1_inner,l4_mass,energy_defect,nonlinear_cross", &rows),
    )?;
    let mut report = ExperimentReport::new("profile_suite", cfg).with_grid(&g);
    report.result("frames", &verdict)?;
    if verdict.orthogonal {
        let decreasing = pairs.windows(2).all(|w| w[1].h1_inner < w[0].h1_inner);
        report.check(
            "linear_decay",
            decreasing,
            format!("{:?}", pairs.iter().map(|p| p.h1_inner).collect::<Vec<_>>()),
        );
        if let Some(last) = pairs.last() {
            report.check(
                "nonlinear_cross",
                last.nonlinear_cross < ps.nonlinear_limit,
                format!(
                    "k = {}: {} (limit {})",
                    last.k, last.nonlinear_cross, ps.nonlinear_limit
                ),
            );
        }
    }
    report.result("pairs", &pairs)?;
    Ok(report)
}
