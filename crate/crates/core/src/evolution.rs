//! Free propagator, pointwise nonlinear flow, Strang splitting, Duhamel
//! quadrature and Picard iteration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::fft::Fft4;
use crate::field::{forward_unchecked, inverse_transform, PhysicalField, SpectralField, C64};
use crate::invariants::{EnergyParts, SobolevConstants};
use crate::lattice::TorusGeometry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dealias {
    /// Cubic phase evaluated on a 3/2 zero-padded grid, then truncated.
    Pad3_2,
    /// Cubic phase evaluated on the simulation grid.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionParams {
    pub mu: i32,
    pub dt: f64,
    pub t_end: f64,
    pub snapshot_stride: usize,
    pub dealias: Dealias,
    /// Halt once ||u||_{Hdot1} exceeds this level.
    pub blowup_threshold: f64,
}

impl EvolutionParams {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.mu, -1..=1) {
            return Err(Error::config("mu", "must be -1, 0 or 1"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("dt", "must be positive"));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::config("t_end", "must be positive"));
        }
        if self.dt > self.t_end {
            return Err(Error::config("dt", "must not exceed t_end"));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::config("snapshot_stride", "must be at least 1"));
        }
        if !(self.blowup_threshold > 0.0) {
            return Err(Error::config("blowup_threshold", "must be positive"));
        }
        Ok(())
    }

    /// Number of steps and the step actually used (t_end is hit exactly).
    pub fn schedule(&self) -> (usize, f64) {
        let n = ((self.t_end / self.dt).round() as usize).max(1);
        (n, self.t_end / n as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    Completed,
    BlowupThreshold,
    NonFinite,
}

/// Conserved and monitored quantities at one sample time. The modified
/// energies carry the quartic term with the sign of the flow, so they agree
/// with E_* and E_** in the focusing case and are invariants for every mu.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub e_star: f64,
    pub e_star_star: f64,
    pub hdot1: f64,
    pub h1_star: f64,
    pub l4_pow4: f64,
}

impl Diagnostics {
    pub fn from_parts(t: f64, p: &EnergyParts, mu: i32, c: &SobolevConstants) -> Self {
        Self {
            t,
            mass: p.l2_sq,
            energy: p.energy(mu),
            e_star: p.flow_e_star(c, mu),
            e_star_star: p.flow_e_star_star(c, mu),
            hdot1: p.hdot1_sq.sqrt(),
            h1_star: p.h1_star(c.c_star),
            l4_pow4: p.l4_pow4,
        }
    }

    pub fn parts(&self) -> EnergyParts {
        EnergyParts {
            l2_sq: self.mass,
            hdot1_sq: self.hdot1 * self.hdot1,
            l4_pow4: self.l4_pow4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub geometry: TorusGeometry,
    pub mu: i32,
    pub times: Vec<f64>,
    pub snapshots: Vec<SpectralField>,
    pub diagnostics: Vec<Diagnostics>,
    pub halt_reason: HaltReason,
}

impl TrajectoryRecord {
    /// Record of exact free evolution sampled at `times`.
    pub fn free(u0: &SpectralField, times: &[f64]) -> Self {
        let disp = u0.geometry.dispersion_table();
        let snapshots = times
            .iter()
            .map(|&t| free_propagate_with(u0, t, &disp))
            .collect();
        Self {
            geometry: u0.geometry,
            mu: 0,
            times: times.to_vec(),
            snapshots,
            diagnostics: Vec::new(),
            halt_reason: HaltReason::Completed,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// u_hat(n) -> exp(-i |omega(n)|^2 t) u_hat(n).
pub fn free_propagate(spec: &SpectralField, t: f64) -> SpectralField {
    free_propagate_with(spec, t, &spec.geometry.dispersion_table())
}

pub fn free_propagate_with(spec: &SpectralField, t: f64, disp: &[f64]) -> SpectralField {
    let mut out = spec.clone();
    apply_free(&mut out.coeffs, disp, t);
    out
}

fn apply_free(coeffs: &mut [C64], disp: &[f64], t: f64) {
    if t == 0.0 {
        return;
    }
    exec::for_each_chunk_mut(coeffs, exec::REDUCE_CHUNK, |c, ch| {
        let base = c * exec::REDUCE_CHUNK;
        for (k, z) in ch.iter_mut().enumerate() {
            *z *= C64::from_polar(1.0, -disp[base + k] * t);
        }
    });
}

fn apply_table(coeffs: &mut [C64], table: &[C64]) {
    exec::for_each_chunk_mut(coeffs, exec::REDUCE_CHUNK, |c, ch| {
        let base = c * exec::REDUCE_CHUNK;
        for (k, z) in ch.iter_mut().enumerate() {
            *z *= table[base + k];
        }
    });
}

/// u -> scale * u exp(-i mu |u|^2 dt), pointwise.
/// Multiplies by a unimodular `table` and returns sum disp |z|^2, which the
/// multiplication leaves unchanged, in the same order as `sum_range`.
fn apply_table_measure(coeffs: &mut [C64], table: &[C64], disp: &[f64]) -> f64 {
    exec::sum_chunks_mut(coeffs, exec::REDUCE_CHUNK, |c, ch| {
        let base = c * exec::REDUCE_CHUNK;
        let mut s = 0.0;
        for (k, z) in ch.iter_mut().enumerate() {
            s += disp[base + k] * z.norm_sqr();
            *z *= table[base + k];
        }
        s
    })
}

fn phase_in_place(samples: &mut [C64], dt: f64, mu: i32, scale: f64) {
    let m = mu as f64;
    exec::for_each_chunk_mut(samples, exec::REDUCE_CHUNK, |_, ch| {
        for z in ch.iter_mut() {
            *z *= C64::from_polar(scale, -m * z.norm_sqr() * dt);
        }
    });
}

/// u(x) -> u(x) exp(-i mu |u(x)|^2 dt).
pub fn nonlinear_phase_step(field: &PhysicalField, dt: f64, mu: i32) -> Result<PhysicalField> {
    if !field.is_finite() {
        return Err(Error::Data("non-finite samples in nonlinear step".into()));
    }
    let mut out = field.clone();
    if mu != 0 {
        phase_in_place(&mut out.samples, dt, mu, 1.0);
    }
    Ok(out)
}

struct Padding {
    grid: [usize; 4],
    map: Vec<usize>,
}

impl Padding {
    fn new(g: &TorusGeometry) -> Self {
        let src = g.grid();
        let grid: [usize; 4] = src.map(|n| 3 * n / 2);
        let strides = [grid[1] * grid[2] * grid[3], grid[2] * grid[3], grid[3], 1];
        let map = (0..g.len())
            .map(|i| {
                let m = g.mode_at(i);
                (0..4)
                    .map(|a| m.n[a].rem_euclid(grid[a] as i64) as usize * strides[a])
                    .sum()
            })
            .collect();
        Self { grid, map }
    }
}

/// Reusable integrator for one geometry and parameter set.
pub struct Stepper {
    geometry: TorusGeometry,
    mu: i32,
    dt: f64,
    dealias: Dealias,
    disp: Vec<f64>,
    full: Vec<C64>,
    half: Vec<C64>,
    padding: Option<Padding>,
}

impl Stepper {
    pub fn new(geometry: TorusGeometry, mu: i32, dt: f64, dealias: Dealias) -> Self {
        let disp = geometry.dispersion_table();
        let full = disp
            .iter()
            .map(|&d| C64::from_polar(1.0, -d * dt))
            .collect();
        let half = disp
            .iter()
            .map(|&d| C64::from_polar(1.0, -d * 0.5 * dt))
            .collect();
        let padding = match dealias {
            Dealias::Pad3_2 if mu != 0 => Some(Padding::new(&geometry)),
            _ => None,
        };
        Self {
            geometry,
            mu,
            dt,
            dealias,
            disp,
            full,
            half,
            padding,
        }
    }

    pub fn dispersion(&self) -> &[f64] {
        &self.disp
    }

    pub fn dealias(&self) -> Dealias {
        self.dealias
    }

    /// Nonlinear substep applied to spectral coefficients in place.
    pub fn nonlinear(&self, coeffs: &mut [C64]) {
        if self.mu == 0 {
            return;
        }
        let n = self.geometry.len();
        match &self.padding {
            None => {
                let plan = Fft4::for_grid(self.geometry.grid());
                plan.inverse(coeffs);
                phase_in_place(coeffs, self.dt, self.mu, 1.0 / n as f64);
                plan.forward(coeffs);
            }
            Some(p) => {
                let plan = Fft4::for_grid(p.grid);
                let big: usize = p.grid.iter().product();
                let mut buf = vec![C64::default(); big];
                for (i, &j) in p.map.iter().enumerate() {
                    buf[j] = coeffs[i];
                }
                plan.inverse(&mut buf);
                phase_in_place(&mut buf, self.dt, self.mu, 1.0 / big as f64);
                plan.forward(&mut buf);
                for (i, &j) in p.map.iter().enumerate() {
                    coeffs[i] = buf[j];
                }
            }
        }
    }

    /// One Strang step: half free, nonlinear, half free.
    pub fn step(&self, state: &mut SpectralField) {
        apply_table(&mut state.coeffs, &self.half);
        self.nonlinear(&mut state.coeffs);
        apply_table(&mut state.coeffs, &self.half);
    }
}

pub fn strang_step(state: &SpectralField, dt: f64, mu: i32, dealias: Dealias) -> SpectralField {
    let mut out = state.clone();
    Stepper::new(state.geometry, mu, dt, dealias).step(&mut out);
    out
}

/// Quantities needed by the diagnostics, from the spectral state.
pub fn energy_parts(spec: &SpectralField, disp: &[f64]) -> EnergyParts {
    let phys = inverse_transform(spec);
    EnergyParts {
        l2_sq: spec.l2_sq(),
        hdot1_sq: spec.hdot1_sq_with(disp),
        l4_pow4: phys.integral_abs_pow(4.0),
    }
}

/// Integrates to `t_end`, sampling every `snapshot_stride` steps and at the end.
pub fn evolve(
    u0: &SpectralField,
    params: &EvolutionParams,
    constants: &SobolevConstants,
) -> Result<TrajectoryRecord> {
    params.validate()?;
    if !u0.is_finite() {
        return Err(Error::Data("initial data is not finite".into()));
    }
    let (steps, dt) = params.schedule();
    let stepper = Stepper::new(u0.geometry, params.mu, dt, params.dealias);
    let disp = stepper.dispersion();
    let h0 = u0.hdot1_sq_with(disp).sqrt();
    if h0 >= params.blowup_threshold {
        return Err(Error::Domain(format!(
            "initial Hdot1 norm {h0} is not below blowup_threshold {}",
            params.blowup_threshold
        )));
    }
    let mut rec = TrajectoryRecord {
        geometry: u0.geometry,
        mu: params.mu,
        times: vec![0.0],
        snapshots: vec![u0.clone()],
        diagnostics: vec![Diagnostics::from_parts(
            0.0,
            &energy_parts(u0, disp),
            params.mu,
            constants,
        )],
        halt_reason: HaltReason::Completed,
    };
    // `w` carries the state advanced by a pending half free step.
    let mut w = u0.clone();
    apply_table(&mut w.coeffs, &stepper.half);
    let volume = u0.geometry.volume();
    for k in 1..=steps {
        stepper.nonlinear(&mut w.coeffs);
        let sample = k % params.snapshot_stride == 0 || k == steps;
        let table = if sample { &stepper.half } else { &stepper.full };
        let h = (volume * apply_table_measure(&mut w.coeffs, table, disp)).sqrt();
        let t = k as f64 * dt;
        if !h.is_finite() {
            rec.halt_reason = HaltReason::NonFinite;
            break;
        }
        let halt = h > params.blowup_threshold;
        if halt && !sample {
            let back: Vec<C64> = stepper.half.iter().map(|z| z.conj()).collect();
            apply_table(&mut w.coeffs, &back);
        }
        if halt || sample {
            let parts = energy_parts(&w, disp);
            rec.times.push(t);
            rec.diagnostics
                .push(Diagnostics::from_parts(t, &parts, params.mu, constants));
            rec.snapshots.push(w.clone());
            if halt {
                rec.halt_reason = HaltReason::BlowupThreshold;
                break;
            }
            apply_table(&mut w.coeffs, &stepper.half);
        }
    }
    Ok(rec)
}

/// Samples of a source trajectory used by the Duhamel quadrature.
#[derive(Clone, Debug)]
pub struct SourceSamples {
    pub times: Vec<f64>,
    pub fields: Vec<SpectralField>,
}

/// F(u) = |u|^2 u evaluated on the grid.
pub fn cubic(spec: &SpectralField) -> SpectralField {
    let mut phys = inverse_transform(spec);
    for z in phys.samples.iter_mut() {
        *z *= z.norm_sqr();
    }
    forward_unchecked(&phys)
}

/// int_{t0}^{t} exp(i(t - s) Laplacian) F(s) ds for every sample time t,
/// by cumulative trapezoid in the interaction picture.
fn duhamel_cumulative(
    times: &[f64],
    sources: &[SpectralField],
    disp: &[f64],
) -> Vec<SpectralField> {
    let g = sources[0].geometry;
    let t0 = times[0];
    let pulled: Vec<SpectralField> = times
        .iter()
        .zip(sources)
        .map(|(&s, f)| free_propagate_with(f, -(s - t0), disp))
        .collect();
    let mut acc = SpectralField::zeros(g);
    let mut out = Vec::with_capacity(times.len());
    out.push(SpectralField::zeros(g));
    for k in 1..times.len() {
        let h = 0.5 * (times[k] - times[k - 1]);
        for ((a, x), y) in acc
            .coeffs
            .iter_mut()
            .zip(&pulled[k - 1].coeffs)
            .zip(&pulled[k].coeffs)
        {
            *a += (x + y) * h;
        }
        out.push(free_propagate_with(&acc, times[k] - t0, disp));
    }
    out
}

/// Duhamel integral of F(u) = |u|^2 u over `window`, evaluated at the window end.
pub fn duhamel_integral(source: &SourceSamples, window: (f64, f64)) -> Result<SpectralField> {
    let (a, b) = window;
    if !(b > a) {
        return Err(Error::Domain(format!("empty window [{a}, {b}]")));
    }
    let idx: Vec<usize> = (0..source.times.len())
        .filter(|&i| source.times[i] >= a - 1e-12 && source.times[i] <= b + 1e-12)
        .collect();
    if idx.len() < 2 {
        return Err(Error::Domain("window holds fewer than two samples".into()));
    }
    let times: Vec<f64> = idx.iter().map(|&i| source.times[i]).collect();
    let f: Vec<SpectralField> = idx.iter().map(|&i| cubic(&source.fields[i])).collect();
    let disp = f[0].geometry.dispersion_table();
    Ok(duhamel_cumulative(&times, &f, &disp).pop().unwrap())
}

/// Picard iterates on a uniform time grid.
#[derive(Clone, Debug)]
pub struct PicardIterates {
    pub times: Vec<f64>,
    /// `iterates[k][j]` is the k-th iterate at `times[j]`; entry 0 is the free solution.
    pub iterates: Vec<Vec<SpectralField>>,
    /// `increments[k][j]` is iterate k+1 minus iterate k, carried without cancellation.
    pub increments: Vec<Vec<SpectralField>>,
}

impl PicardIterates {
    /// sup over sample times of the H1 norm of each increment.
    pub fn increment_sizes(&self) -> Vec<f64> {
        self.increments
            .iter()
            .map(|inc| inc.iter().map(|d| d.h1_sq().sqrt()).fold(0.0, f64::max))
            .collect()
    }

    pub fn last(&self) -> &[SpectralField] {
        self.iterates.last().unwrap()
    }
}

/// Picard iterates of Phi(v) = e^{it Lap} u0 - i mu Duhamel(|v|^2 v) on a uniform
/// grid of `samples` times spanning `window`.
pub fn picard_iterate(
    u0: &SpectralField,
    window: (f64, f64),
    samples: usize,
    iters: usize,
    mu: i32,
) -> Result<PicardIterates> {
    let (a, b) = window;
    if !(b > a) {
        return Err(Error::Domain(format!("empty window [{a}, {b}]")));
    }
    if b - a > 1.0 {
        return Err(Error::Domain("window longer than 1".into()));
    }
    if iters == 0 || samples < 2 {
        return Err(Error::Domain(
            "need iters >= 1 and at least two samples".into(),
        ));
    }
    let g = u0.geometry;
    let disp = g.dispersion_table();
    let times: Vec<f64> = (0..samples)
        .map(|k| a + (b - a) * k as f64 / (samples - 1) as f64)
        .collect();
    let free: Vec<SpectralField> = times
        .iter()
        .map(|&t| free_propagate_with(u0, t - a, &disp))
        .collect();
    let coef = C64::new(0.0, -(mu as f64));
    let duhamel = |src: &[SpectralField]| -> Vec<SpectralField> {
        duhamel_cumulative(&times, src, &disp)
            .into_iter()
            .map(|d| d.scaled(coef))
            .collect()
    };
    let mut out = PicardIterates {
        times: times.clone(),
        iterates: vec![free.clone()],
        increments: Vec::new(),
    };
    let mut prev_phys: Vec<PhysicalField> = free.iter().map(inverse_transform).collect();
    let src: Vec<SpectralField> = exec::map_range(times.len(), |k| {
        let mut p = prev_phys[k].clone();
        p.samples.iter_mut().for_each(|z| *z *= z.norm_sqr());
        forward_unchecked(&p)
    });
    let mut delta = duhamel(&src);
    for it in 0..iters {
        let next: Vec<SpectralField> = out
            .iterates
            .last()
            .unwrap()
            .iter()
            .zip(&delta)
            .map(|(v, d)| v.add(d))
            .collect();
        out.iterates.push(next);
        out.increments.push(delta.clone());
        if it + 1 == iters {
            break;
        }
        let cur_phys: Vec<PhysicalField> = out
            .iterates
            .last()
            .unwrap()
            .iter()
            .map(inverse_transform)
            .collect();
        let delta_phys: Vec<PhysicalField> = delta.iter().map(inverse_transform).collect();
        let diff_src: Vec<SpectralField> = exec::map_range(times.len(), |k| {
            source_difference(&delta_phys[k], &cur_phys[k], &prev_phys[k])
        });
        delta = duhamel(&diff_src);
        prev_phys = cur_phys;
    }
    Ok(out)
}

/// |v|^2 v - |w|^2 w for v = w + d, written as d |v|^2 + w Re(d conj(v + w))
/// so that a tiny increment d keeps its relative precision.
fn source_difference(d: &PhysicalField, v: &PhysicalField, w: &PhysicalField) -> SpectralField {
    let samples = d
        .samples
        .iter()
        .zip(&v.samples)
        .zip(&w.samples)
        .map(|((&d, &a), &b)| d * a.norm_sqr() + b * (d * (a + b).conj()).re)
        .collect();
    forward_unchecked(&PhysicalField {
        geometry: v.geometry,
        samples,
    })
}
