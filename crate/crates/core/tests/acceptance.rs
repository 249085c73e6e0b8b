//! Acceptance suite. Runs every criterion in order, prints one verdict line
//! per criterion and exits non-zero if any fails. A substring argument
//! restricts the run to matching criteria.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use torus_nls::critical_norms::discrete_v2_norm;
use torus_nls::evolution::{evolve, picard_iterate, Dealias, EvolutionParams};
use torus_nls::field::{forward_transform, inverse_transform, SpectralField, C64};
use torus_nls::invariants::{compute_sobolev_constants, SobolevConstants};
use torus_nls::lab::catalog::random_h1;
use torus_nls::lab::config::ExperimentConfig;
use torus_nls::lab::report::ExperimentReport;
use torus_nls::lab::{run_to_dir, Scenario};
use torus_nls::lattice::{Mode, TorusGeometry};
use torus_nls::profiles::{
    extract_bubbles, kernel_sup_bound_check, make_profile_on_torus, translate_modulate, ChartMap,
    EuclideanProfile, ExtractionOptions, KernelSearch,
};
use torus_nls::quadrature::compensated_sum;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn consts(g: &TorusGeometry) -> SobolevConstants {
    compute_sobolev_constants(1e-10).unwrap().for_geometry(g)
}

fn run_scenario(scenario: Scenario, toml: &str) -> ExperimentReport {
    let cfg = ExperimentConfig::parse(toml).unwrap();
    let dir = tempfile::tempdir().unwrap();
    run_to_dir(scenario, &cfg, dir.path()).unwrap()
}

fn check<'a>(r: &'a ExperimentReport, name: &str) -> &'a torus_nls::lab::report::Check {
    r.find_check(name)
        .unwrap_or_else(|| panic!("report has no check `{name}`: {:?}", r.checks))
}

fn plane_wave() -> Outcome {
    let g = TorusGeometry::unit(16).unwrap();
    let n = [1i64, -2, 0, 3];
    let c = C64::new(0.6, 0.3);
    let u0 = SpectralField::from_modes(g, &[(Mode::new(n), c)]).unwrap();
    let k = consts(&g);
    let omega: Vec<f64> = n.iter().map(|v| 2.0 * PI * *v as f64).collect();
    let w2: f64 = omega.iter().map(|w| w * w).sum();
    let mut worst: f64 = 0.0;
    let mut slowest: f64 = 0.0;
    for mu in [-1, 1] {
        let p = EvolutionParams {
            mu,
            dt: 1e-4,
            t_end: 1.0,
            snapshot_stride: 2500,
            dealias: Dealias::None,
            blowup_threshold: 1e6,
        };
        let start = Instant::now();
        let rec = evolve(&u0, &p, &k).unwrap();
        slowest = slowest.max(start.elapsed().as_secs_f64());
        for (t, s) in rec.times.iter().zip(&rec.snapshots) {
            let u = inverse_transform(s);
            let freq = w2 + mu as f64 * c.norm_sqr();
            for (i, z) in u.samples.iter().enumerate() {
                let x = g.point(i);
                let phase: f64 = (0..4).map(|a| omega[a] * x[a]).sum::<f64>() - freq * t;
                worst = worst.max((z - c * C64::from_polar(1.0, phase)).norm());
            }
        }
    }
    outcome(
        worst < 1e-9 && slowest < 60.0,
        format!("max deviation {worst:.3e} (limit 1e-9), slowest run {slowest:.1} s (limit 60 s)"),
    )
}

fn conservation() -> Outcome {
    let g = TorusGeometry::unit(32).unwrap();
    let k = consts(&g);
    let u0 = random_h1(g, 1, 1.0, 8.0).unwrap();
    let p = EvolutionParams {
        mu: 1,
        dt: 1e-3,
        t_end: 0.5,
        snapshot_stride: 50,
        dealias: Dealias::None,
        blowup_threshold: 1e6,
    };
    let start = Instant::now();
    let rec = evolve(&u0, &p, &k).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let d0 = rec.diagnostics[0];
    let drift = |f: &dyn Fn(&torus_nls::evolution::Diagnostics) -> f64| {
        rec.diagnostics
            .iter()
            .map(|d| (f(d) - f(&d0)).abs() / f(&d0).abs())
            .fold(0.0, f64::max)
    };
    let m = drift(&|d| d.mass);
    let e = drift(&|d| d.energy);
    let es = drift(&|d| d.e_star);
    let ess = drift(&|d| d.e_star_star);
    let focusing_sign = drift(&|d| d.parts().e_star(&k));
    let worst = m.max(e).max(es).max(ess);
    outcome(
        worst < 1e-6 && secs < 600.0,
        format!(
            "drift M {m:.2e}, E {e:.2e}, E_* {es:.2e}, E_** {ess:.2e} (limit 1e-6), {secs:.0} s; \
             focusing-sign E_* drifts {focusing_sign:.2e} under the defocusing flow"
        ),
    )
}

fn splitting_order() -> Outcome {
    let g = TorusGeometry::unit(16).unwrap();
    let k = consts(&g);
    let u0 = random_h1(g, 5, 10.0, 1.0).unwrap();
    let run = |dt: f64| {
        let p = EvolutionParams {
            mu: 1,
            dt,
            t_end: 0.2,
            snapshot_stride: 100000,
            dealias: Dealias::None,
            blowup_threshold: 1e6,
        };
        evolve(&u0, &p, &k).unwrap().snapshots.pop().unwrap()
    };
    let reference = run(2.5e-4);
    let dts = [4e-3, 2e-3, 1e-3];
    let errs: Vec<f64> = dts
        .iter()
        .map(|&dt| run(dt).sub(&reference).l2_sq().sqrt())
        .collect();
    let x: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let y: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let fit = torus_nls::lab::fit::ols(&x, &y).unwrap();
    outcome(
        (fit.slope - 2.0).abs() <= 0.1,
        format!(
            "slope {:.4} (target 2.0 +- 0.1), errors {}",
            fit.slope,
            sci(&errs)
        ),
    )
}

fn ground_state() -> Outcome {
    let r = run_scenario(Scenario::GroundState, "");
    let c = compute_sobolev_constants(1e-10).unwrap();
    let oracle = 32.0 * PI * PI / 3.0;
    let rel = (c.w_hdot1_sq - oracle).abs() / oracle;
    let relation = (c.e_w * 4.0 * c.c4.powi(4) - 1.0).abs();
    let residual = r.results["elliptic_residual"].as_f64().unwrap();
    outcome(
        rel < 1e-8 && residual < 1e-10 && relation < 1e-8 && r.passed,
        format!("W_hdot1_sq rel. error {rel:.2e}, max |Lap W + W^3| {residual:.2e}, |4 E_W C4^4 - 1| {relation:.2e}"),
    )
}

const BUBBLE: &str = r#"
[geometry]
grid = [32, 32, 32, 32]
[initial]
kind = "torus_bubble"
scale_n = 16.0
profile = { kind = "w_bubble" }
"#;

fn trapping() -> Outcome {
    let sub = format!(
        "{BUBBLE}scale = {{ by = \"energy_fraction\", value = 0.9 }}\n\
         [evolution]\nmu = -1\ndt = 1e-3\nt_end = 0.2\nsnapshot_stride = 10\n\
         [trapping]\ndelta0 = 0.05\n"
    );
    let r = run_scenario(Scenario::Trapping, &sub);
    let star = check(&r, "star");
    let star_star = check(&r, "star_star");
    let reached = check(&r, "reached_t_end");
    let sup = format!(
        "{BUBBLE}scale = {{ by = \"amplitude\", value = 1.2 }}\n\
         [evolution]\nmu = -1\ndt = 1e-4\nt_end = 0.05\nsnapshot_stride = 10\nblowup_threshold = 40.0\n"
    );
    let b = run_scenario(Scenario::BlowupProbe, &sup);
    let growth = b.results["growth"]["growth_factor"].as_f64().unwrap();
    let halt = b.results["growth"]["halt_reason"]
        .as_str()
        .unwrap()
        .to_string();
    let clean = check(&b, "clean_halt").passed;
    outcome(
        star.passed && star_star.passed && reached.passed && clean && growth > 1.0,
        format!(
            "star: {}; star_star: {}; super-threshold run halted with {halt}, Hdot1 grew by {growth:.3}",
            star.detail, star_star.detail
        ),
    )
}

fn strichartz() -> Outcome {
    let r = run_scenario(Scenario::Strichartz, "");
    let p4 = check(&r, "slope_p4");
    let p6 = check(&r, "slope_p6");
    let refined = check(&r, "refined");
    let slope = |k: usize| r.results["fits"][k]["fit"]["slope"].as_f64().unwrap();
    let (s4, s6) = (slope(0), slope(1));
    outcome(
        (0.35..=0.65).contains(&s4)
            && (0.85..=1.15).contains(&s6)
            && refined.passed
            && p4.passed
            && p6.passed,
        format!(
            "p=4 slope {s4:.4} in [0.35, 0.65]; p=6 slope {s6:.4} in [0.85, 1.15]; refined: {}",
            refined.detail
        ),
    )
}

fn bilinear() -> Outcome {
    let r = run_scenario(Scenario::Bilinear, "");
    let k = &r.results["kappa"];
    let kappa = k["kappa"].as_f64().unwrap();
    let lower = k["kappa_lower95"].as_f64().unwrap();
    let rel_se = k["relative_se"].as_f64().unwrap();
    let rms = k["rms_log_residual"].as_f64().unwrap();
    outcome(
        kappa > 0.0 && lower > 0.0 && rel_se < 0.2,
        format!(
            "kappa {kappa:.4}, 95% lower bound {lower:.4}, relative standard error {rel_se:.3} (limit 0.2), \
             rms log residual {rms:.3}"
        ),
    )
}

fn extinction() -> Outcome {
    let grid = "[geometry]\ngrid = [32, 32, 32, 32]\n";
    let a = run_scenario(
        Scenario::Extinction,
        &format!("{grid}[extinction]\nn = [64.0]\nt = [4.0, 16.0, 64.0]\n"),
    );
    let b = run_scenario(
        Scenario::Extinction,
        &format!("{grid}[extinction]\nn = [64.0, 128.0]\nt = [16.0]\n"),
    );
    let dec = check(&a, "decreasing_n64");
    let agree = check(&b, "scale_agreement_t16");
    outcome(
        dec.passed && agree.passed,
        format!(
            "N=64 Z over T = 4, 16, 64: {}; N = 64, 128 at T = 16: {}",
            dec.detail, agree.detail
        ),
    )
}

/// Representations of k as a sum of four squares, counted directly.
fn r4_by_count(kmax: usize) -> Vec<u64> {
    let r = (kmax as f64).sqrt() as i64 + 1;
    let mut counts = vec![0u64; kmax + 1];
    for a in -r..=r {
        for b in -r..=r {
            for c in -r..=r {
                for d in -r..=r {
                    let s = (a * a + b * b + c * c + d * d) as usize;
                    if s <= kmax {
                        counts[s] += 1;
                    }
                }
            }
        }
    }
    counts
}

fn bump(r: f64) -> f64 {
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let s: f64 = r - 1.0;
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

/// K_M(0, 0) = sum over the lattice of eta(|xi| / M), grouped by |xi|^2.
fn kernel_origin_oracle(m: u32) -> f64 {
    let kmax = (4 * m * m) as usize;
    let r4 = r4_by_count(kmax);
    compensated_sum((0..=kmax).map(|k| r4[k] as f64 * bump((k as f64).sqrt() / m as f64)))
}

/// Frozen output of [`kernel_origin_oracle`] for M = 2.
const KERNEL_ORIGIN_M2: f64 = 566.524503126749;

fn kernel() -> Outcome {
    let r = run_scenario(Scenario::Kernel, "");
    let spread = check(&r, "constant_spread");
    let golden = kernel_origin_oracle(2);
    let got = kernel_sup_bound_check(2, 2, &KernelSearch::default())
        .unwrap()
        .origin_value;
    let mut worst = ((got - golden) / golden).abs();
    worst = worst.max(((golden - KERNEL_ORIGIN_M2) / KERNEL_ORIGIN_M2).abs());
    for rep in r.results["kernels"].as_array().unwrap() {
        let m = rep["m"].as_u64().unwrap() as u32;
        let v = rep["origin_value"].as_f64().unwrap();
        let o = kernel_origin_oracle(m);
        worst = worst.max(((v - o) / o).abs());
    }
    outcome(
        spread.passed && worst < 1e-12,
        format!(
            "{}; origin values vs lattice count: worst relative gap {worst:.1e}, M=2 value {got}",
            spread.detail
        ),
    )
}

fn v2_brute(v: &[C64]) -> f64 {
    let l = v.len();
    let mut best: f64 = 0.0;
    for mask in 1u32..(1 << l) {
        let idx: Vec<usize> = (0..l).filter(|i| mask >> i & 1 == 1).collect();
        let s: f64 = idx.windows(2).map(|w| (v[w[1]] - v[w[0]]).norm_sqr()).sum();
        best = best.max(s);
    }
    best.sqrt()
}

fn v2_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let l = rng.gen_range(1..=12);
        let v: Vec<C64> = (0..l)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        worst = worst.max((discrete_v2_norm(&v).unwrap() - v2_brute(&v)).abs());
    }
    outcome(
        worst <= 1e-12,
        format!("200 sequences, largest gap {worst:.1e} (limit 1e-12)"),
    )
}

fn extraction() -> Outcome {
    let g = TorusGeometry::unit(24).unwrap();
    let chart = ChartMap::for_geometry(&g);
    let n = 16.0;
    let f = forward_transform(
        &make_profile_on_torus(&EuclideanProfile::WBubble, n, &g, &chart).unwrap(),
    )
    .unwrap();
    let opts = ExtractionOptions {
        max_profiles: 2,
        z_tolerance: 0.5,
        ..ExtractionOptions::default()
    };
    let one = extract_bubbles(&f, &opts).unwrap();
    let first = &one.profiles[0];
    let scale_ok = first.scale >= n / 2.0 && first.scale <= 2.0 * n;
    let two_data = f.add(&translate_modulate(&f, 0.0, [0.5; 4]));
    let two = extract_bubbles(
        &two_data,
        &ExtractionOptions {
            max_profiles: 2,
            ..opts.clone()
        },
    )
    .unwrap();
    outcome(
        scale_ok && one.complete && two.residuals.hdot1 < 0.05,
        format!(
            "single bubble: N estimate {:.2} for N = {n}, Z history {:?}; two bubbles: Hdot1 decoupling defect {:.2e}",
            first.scale, one.z_history, two.residuals.hdot1
        ),
    )
}

fn picard() -> Outcome {
    let g = TorusGeometry::unit(16).unwrap();
    let u0 = random_h1(g, 3, 0.01, 3.0).unwrap();
    let it = picard_iterate(&u0, (0.0, 0.1), 201, 5, 1).unwrap();
    let sizes = it.increment_sizes();
    let ratios: Vec<f64> = sizes.windows(2).map(|w| w[1] / w[0]).collect();
    let p = EvolutionParams {
        mu: 1,
        dt: 1e-4,
        t_end: 0.1,
        snapshot_stride: 100,
        dealias: Dealias::None,
        blowup_threshold: 1e6,
    };
    let rec = evolve(&u0, &p, &consts(&g)).unwrap();
    let mut gap: f64 = 0.0;
    for (t, s) in rec.times.iter().zip(&rec.snapshots) {
        let j = (t / 0.1 * 200.0).round() as usize;
        gap = gap.max(it.last()[j].sub(s).h1_sq().sqrt());
    }
    outcome(
        ratios.len() >= 4 && ratios.iter().all(|r| *r < 0.5) && gap < 1e-6,
        format!(
            "contraction ratios {}, H1 gap to the splitting solver {gap:.2e}",
            sci(&ratios)
        ),
    )
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|s| s.to_str()), Some("csv" | "json")) {
                let key = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(key, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let cases = [
        (
            Scenario::Evolve,
            "seed = 11\n[geometry]\ngrid = [8, 8, 8, 8]\n[initial]\nkind = \"random_h1\"\n\
             [evolution]\nt_end = 0.05\nsnapshot_stride = 10\n",
        ),
        (
            Scenario::Bilinear,
            "[bilinear]\nlow_shells = [1, 2]\nratios = [4, 16]\nseeds = [5]\nmodes = 16\n",
        ),
        (
            Scenario::Strichartz,
            "[strichartz]\nshells = [2, 4]\nseeds = [3, 4]\n",
        ),
        (Scenario::Kernel, "[kernel]\nm = [2, 4]\n"),
        (Scenario::GroundState, ""),
    ];
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for (scenario, text) in cases {
        let cfg = ExperimentConfig::parse(text).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_to_dir(scenario, &cfg, a.path()).unwrap();
        run_to_dir(scenario, &cfg, b.path()).unwrap();
        let (fa, fb) = (files(a.path()), files(b.path()));
        if fa.keys().ne(fb.keys()) {
            mismatches.push(format!("{scenario:?}: file sets differ"));
        }
        for (name, bytes) in &fa {
            compared += 1;
            if fb.get(name) != Some(bytes) {
                mismatches.push(format!("{scenario:?}/{name}"));
            }
        }
    }
    outcome(
        mismatches.is_empty() && compared > 0,
        format!("{compared} CSV/JSON files compared across reruns, mismatches {mismatches:?}"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 13] = [
        ("01 plane-wave exactness", plane_wave),
        ("02 conservation", conservation),
        ("03 splitting order", splitting_order),
        ("04 ground-state constants", ground_state),
        ("05 energy trapping", trapping),
        ("06 strichartz exponents", strichartz),
        ("07 bilinear fit", bilinear),
        ("08 extinction", extinction),
        ("09 kernel bound", kernel),
        ("10 V2 oracle", v2_oracle),
        ("11 profile extraction", extraction),
        ("12 picard contraction", picard),
        ("13 determinism", determinism),
    ];
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = Vec::new();
    for (name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|s| name.contains(s.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(f));
        let secs = start.elapsed().as_secs_f64();
        let o = result.unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        println!("[{verdict}] criterion {name}: {} ({secs:.1} s)", o.detail);
        if !o.passed {
            failed.push(name);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
