//! Euclidean concentration profiles and their transfer to the torus, frames,
//! the truncated lattice kernel K_M, extinction curves and greedy bubble
//! extraction.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::critical_norms::{
    free_shell_series, z_from_series, z_norm, TimeWindow, UNIT_TORUS_PERIOD,
};
use crate::error::{Error, Result};
use crate::evolution::{free_propagate, TrajectoryRecord};
use crate::exec;
use crate::fft::Fft4;
use crate::field::{
    forward_transform, inverse_transform, minimal_image, CutoffProfile, PhysicalField,
    SpectralField, C64,
};
use crate::invariants::{ground_state_derivative, ground_state_radial, SPHERE3_AREA};
use crate::lattice::TorusGeometry;
use crate::quadrature::{compensated_sum, integrate_dyadic};

/// ||W||_{Hdot1(R^4)}^2.
pub const W_HDOT1_SQ: f64 = 32.0 * PI * PI / 3.0;
/// ||W||_{L4(R^4)}^4.
const W_L4_POW4: f64 = 32.0 * PI * PI / 3.0;

/// Radial profile on R^4 from a closed catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EuclideanProfile {
    /// W(x) = (1 + |x|^2/8)^{-1}.
    WBubble,
    /// exp(-|x|^2 / (2 sigma^2)).
    Gaussian { sigma: f64 },
    /// Piecewise-linear interpolation of (r, v) samples, zero beyond the last radius.
    Radial { r: Vec<f64>, v: Vec<f64> },
}

/// Norms of a profile on R^4; infinite where the integral diverges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileNorms {
    pub hdot1: f64,
    pub l1: f64,
    pub l2: f64,
    pub l4: f64,
}

impl EuclideanProfile {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::WBubble => Ok(()),
            Self::Gaussian { sigma } => {
                if *sigma > 0.0 && sigma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Domain(format!(
                        "gaussian sigma {sigma} must be positive"
                    )))
                }
            }
            Self::Radial { r, v } => {
                if r.len() < 2 || r.len() != v.len() {
                    return Err(Error::Domain(
                        "radial samples need at least two (r, v) pairs of equal length".into(),
                    ));
                }
                if r[0] != 0.0 || r.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::Domain(
                        "radial sample radii must start at 0 and increase strictly".into(),
                    ));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Domain("radial sample values must be finite".into()));
                }
                Ok(())
            }
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        match self {
            Self::WBubble => ground_state_radial(r),
            Self::Gaussian { sigma } => (-r * r / (2.0 * sigma * sigma)).exp(),
            Self::Radial { r: rs, v } => match segment(rs, r) {
                Some(k) => {
                    let s = (r - rs[k]) / (rs[k + 1] - rs[k]);
                    v[k] * (1.0 - s) + v[k + 1] * s
                }
                None => 0.0,
            },
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        match self {
            Self::WBubble => ground_state_derivative(r),
            Self::Gaussian { sigma } => -r / (sigma * sigma) * self.value(r),
            Self::Radial { r: rs, v } => match segment(rs, r) {
                Some(k) => (v[k + 1] - v[k]) / (rs[k + 1] - rs[k]),
                None => 0.0,
            },
        }
    }

    /// Radius beyond which the profile vanishes, if it does.
    fn support(&self) -> Option<f64> {
        match self {
            Self::Radial { r, .. } => r.last().copied(),
            _ => None,
        }
    }

    /// Hdot1, L1, L2 and L4 norms on R^4 by radial quadrature.
    pub fn norms(&self) -> Result<ProfileNorms> {
        self.validate()?;
        let tol = 1e-11;
        let radial = |g: &dyn Fn(f64) -> f64, r_max: f64| -> Result<f64> {
            Ok(SPHERE3_AREA * integrate_dyadic(|r| g(r) * r.powi(3), r_max, tol)?)
        };
        match self {
            Self::WBubble => Ok(ProfileNorms {
                hdot1: W_HDOT1_SQ.sqrt(),
                l1: f64::INFINITY,
                l2: f64::INFINITY,
                l4: W_L4_POW4.powf(0.25),
            }),
            _ => {
                let r_max = match (self, self.support()) {
                    (_, Some(r)) => r,
                    (Self::Gaussian { sigma }, None) => 40.0 * sigma,
                    _ => unreachable!(),
                };
                Ok(ProfileNorms {
                    hdot1: radial(&|r| self.derivative(r).powi(2), r_max)?.sqrt(),
                    l1: radial(&|r| self.value(r).abs(), r_max)?,
                    l2: radial(&|r| self.value(r).powi(2), r_max)?.sqrt(),
                    l4: radial(&|r| self.value(r).powi(4), r_max)?.powf(0.25),
                })
            }
        }
    }
}

fn segment(rs: &[f64], r: f64) -> Option<usize> {
    if r >= *rs.last()? {
        return None;
    }
    Some(rs.partition_point(|&x| x <= r).saturating_sub(1))
}

/// The identity chart from the ball |x| < radius of R^4 onto a neighbourhood
/// of the origin of the torus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartMap {
    pub radius: f64,
}

impl ChartMap {
    /// Largest admissible chart, capped at 1.
    pub fn for_geometry(geometry: &TorusGeometry) -> Self {
        let min = geometry
            .lambda()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        Self {
            radius: (0.5 * min).min(1.0),
        }
    }

    pub fn new(radius: f64, geometry: &TorusGeometry) -> Result<Self> {
        let limit = Self::for_geometry(geometry).radius;
        if !(radius > 0.0) || radius > limit {
            return Err(Error::Geometry(format!(
                "chart radius {radius} must lie in (0, {limit}] for injectivity"
            )));
        }
        Ok(Self { radius })
    }

    /// Smallest N whose cut-off profile fits inside the chart.
    pub fn min_scale(&self) -> f64 {
        let r2 = CutoffProfile::default().radius2;
        (r2 / self.radius).powi(2)
    }
}

/// f_N(y) = N (eta(./N^{1/2}) phi)(N y) for |y| < radius, zero elsewhere,
/// sampled on the grid with the chart centred at the origin.
pub fn make_profile_on_torus(
    phi: &EuclideanProfile,
    n: f64,
    geometry: &TorusGeometry,
    chart: &ChartMap,
) -> Result<PhysicalField> {
    phi.validate()?;
    if !(n >= 1.0) {
        return Err(Error::Domain(format!("scale N = {n} must be at least 1")));
    }
    if chart.radius > ChartMap::for_geometry(geometry).radius {
        return Err(Error::Geometry(
            "chart is not injective on this torus".into(),
        ));
    }
    if n < chart.min_scale() * (1.0 - 1e-12) {
        return Err(Error::Geometry(format!(
            "scale N = {n} needs N >= {} to fit a chart of radius {}",
            chart.min_scale(),
            chart.radius
        )));
    }
    let eta = CutoffProfile::default();
    let lambda = geometry.lambda();
    let sqrt_n = n.sqrt();
    Ok(PhysicalField::from_fn(*geometry, |y| {
        let d = minimal_image(y, lambda);
        let ry = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if ry >= chart.radius {
            return C64::default();
        }
        let x = n * ry;
        C64::new(n * eta.radial(x / sqrt_n) * phi.value(x), 0.0)
    }))
}

/// (Pi_{t0,x0} f)(x) = (e^{-i t0 Lap} f)(x - x0).
pub fn translate_modulate(f: &SpectralField, t0: f64, x0: [f64; 4]) -> SpectralField {
    let mut out = free_propagate(f, -t0);
    if x0 == [0.0; 4] {
        return out;
    }
    let g = f.geometry;
    let lambda = g.lambda();
    exec::for_each_chunk_mut(&mut out.coeffs, exec::REDUCE_CHUNK, |c, ch| {
        let base = c * exec::REDUCE_CHUNK;
        for (k, z) in ch.iter_mut().enumerate() {
            let m = g.mode_at(base + k);
            // Reduce each integer phase n_a x0_a / lambda_a modulo 1 first so that
            // lattice-commensurate shifts give exactly representable phases.
            let turns: f64 = (0..4)
                .map(|a| (m.n[a] as f64 * x0[a] / lambda[a]).rem_euclid(1.0))
                .sum();
            *z *= unit_phase(-turns);
        }
    });
    out
}

/// exp(2 pi i turns), exact at quarter turns.
fn unit_phase(turns: f64) -> C64 {
    let t = turns.rem_euclid(1.0);
    let q = 4.0 * t;
    if q == q.round() {
        return [
            C64::new(1.0, 0.0),
            C64::new(0.0, 1.0),
            C64::new(-1.0, 0.0),
            C64::new(0.0, -1.0),
        ][q as usize % 4];
    }
    C64::from_polar(1.0, 2.0 * PI * t)
}

/// volume * sum_n (1 + |omega(n)|^2) u_hat(n) conj(g_hat(n)).
pub fn profile_inner_h1(f: &SpectralField, g: &SpectralField) -> Result<C64> {
    if f.geometry != g.geometry {
        return Err(Error::Geometry(
            "inner product of fields on different tori".into(),
        ));
    }
    let disp = f.geometry.dispersion_table();
    let chunks = f.coeffs.len().div_ceil(exec::REDUCE_CHUNK);
    let parts = exec::map_range(chunks, |c| {
        let lo = c * exec::REDUCE_CHUNK;
        let hi = (lo + exec::REDUCE_CHUNK).min(f.coeffs.len());
        (lo..hi).fold(C64::default(), |s, i| {
            s + (1.0 + disp[i]) * f.coeffs[i] * g.coeffs[i].conj()
        })
    });
    Ok(parts.into_iter().sum::<C64>() * f.geometry.volume())
}

/// Scale sequence of a frame, indexed from k = 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScaleSequence {
    /// N_k = n0 * ratio^k.
    Geometric {
        n0: f64,
        ratio: f64,
    },
    Explicit {
        values: Vec<f64>,
    },
}

/// Time sequence of a frame, indexed from k = 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeSequence {
    Zero,
    /// t_k = coeff * k^power * base^{-k}.
    Decaying {
        coeff: f64,
        power: i32,
        base: f64,
    },
    Explicit {
        values: Vec<f64>,
    },
}

/// Centre sequence of a frame, indexed from k = 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CenterSequence {
    Fixed { x: [f64; 4] },
    Explicit { values: Vec<[f64; 4]> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub scales: ScaleSequence,
    pub times: TimeSequence,
    pub centers: CenterSequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameTerm {
    pub n: f64,
    pub t: f64,
    pub x: [f64; 4],
}

impl Frame {
    pub fn fixed(n: f64, x: [f64; 4]) -> Self {
        Self {
            scales: ScaleSequence::Geometric { n0: n, ratio: 1.0 },
            times: TimeSequence::Zero,
            centers: CenterSequence::Fixed { x },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.scales {
            ScaleSequence::Geometric { n0, ratio } => {
                if !(*n0 >= 1.0) || !(*ratio >= 1.0) {
                    return Err(Error::Domain(
                        "frame scales need n0 >= 1 and ratio >= 1".into(),
                    ));
                }
            }
            ScaleSequence::Explicit { values } => {
                if values.iter().any(|v| !(*v >= 1.0)) {
                    return Err(Error::Domain("frame scales must be at least 1".into()));
                }
            }
        }
        if let TimeSequence::Decaying { base, .. } = self.times {
            if !(base > 1.0) {
                return Err(Error::Domain("decaying frame times need base > 1".into()));
            }
        }
        Ok(())
    }

    /// The k-th term, k >= 1.
    pub fn term(&self, k: usize) -> Result<FrameTerm> {
        let pick = |v: &[f64]| {
            v.get(k - 1)
                .copied()
                .ok_or_else(|| Error::Domain(format!("explicit frame sequence has no term {k}")))
        };
        let n = match &self.scales {
            ScaleSequence::Geometric { n0, ratio } => n0 * ratio.powi(k as i32),
            ScaleSequence::Explicit { values } => pick(values)?,
        };
        let t = match &self.times {
            TimeSequence::Zero => 0.0,
            TimeSequence::Decaying { coeff, power, base } => {
                coeff * (k as f64).powi(*power) * base.powi(-(k as i32))
            }
            TimeSequence::Explicit { values } => pick(values)?,
        };
        let x = match &self.centers {
            CenterSequence::Fixed { x } => *x,
            CenterSequence::Explicit { values } => *values
                .get(k - 1)
                .ok_or_else(|| Error::Domain(format!("explicit frame centres have no term {k}")))?,
        };
        Ok(FrameTerm { n, t, x })
    }

    pub fn prefix(&self, len: usize) -> Result<Vec<FrameTerm>> {
        self.validate()?;
        (1..=len).map(|k| self.term(k)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameVerdict {
    pub orthogonal: bool,
    pub equivalent: bool,
    pub trace: Vec<f64>,
}

/// |ln(N/M)| + N^2 |t - s| + N |x - y| for one pair of terms, with the torus
/// distance taken over the minimal image.
pub fn frame_divergence(a: &FrameTerm, b: &FrameTerm, lambda: [f64; 4]) -> f64 {
    let d = minimal_image(std::array::from_fn(|i| a.x[i] - b.x[i]), lambda);
    let dist = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    (a.n / b.n).ln().abs() + a.n * a.n * (a.t - b.t).abs() + a.n * dist
}

/// Orthogonal when the divergence functional on the prefix ends above the
/// threshold and does not decrease over the last half of the prefix.
pub fn frames_orthogonal(
    f1: &Frame,
    f2: &Frame,
    lambda: [f64; 4],
    prefix_len: usize,
    divergence_threshold: f64,
) -> Result<FrameVerdict> {
    if prefix_len < 8 {
        return Err(Error::Domain(format!(
            "prefix length {prefix_len} is below 8"
        )));
    }
    let a = f1.prefix(prefix_len)?;
    let b = f2.prefix(prefix_len)?;
    let trace: Vec<f64> = a
        .iter()
        .zip(&b)
        .map(|(p, q)| frame_divergence(p, q, lambda))
        .collect();
    let half = &trace[prefix_len / 2..];
    let monotone = half.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12));
    let orthogonal = *trace.last().unwrap() > divergence_threshold && monotone;
    Ok(FrameVerdict {
        orthogonal,
        equivalent: !orthogonal,
        trace,
    })
}

/// Lattice points with eta(|xi|/M) > 0 and their weights.
fn kernel_support(m: u32, cutoff: &CutoffProfile) -> Vec<([i64; 4], f64)> {
    let r = (cutoff.radius2 * m as f64).ceil() as i64;
    let side = (2 * r + 1) as usize;
    let blocks = exec::map_range(side, |i| {
        let a = i as i64 - r;
        let mut out = Vec::new();
        for b in -r..=r {
            for c in -r..=r {
                for d in -r..=r {
                    let xi = [a, b, c, d];
                    let norm = (xi.iter().map(|v| v * v).sum::<i64>() as f64).sqrt();
                    let w = cutoff.radial(norm / m as f64);
                    if w > 0.0 {
                        out.push((xi, w));
                    }
                }
            }
        }
        out
    });
    blocks.into_iter().flatten().collect()
}

/// K_M(x, t) = sum_xi exp(-i [t |omega|^2 + x . omega]) eta(xi / M) on the unit
/// torus, omega = 2 pi xi, by direct lattice summation.
pub fn kernel_k_m(m: u32, x: [f64; 4], t: f64, cutoff: &CutoffProfile) -> Result<C64> {
    if m == 0 {
        return Err(Error::Domain(
            "kernel truncation M must be at least 1".into(),
        ));
    }
    let r = (cutoff.radius2 * m as f64).ceil() as i64;
    let side = (2 * r + 1) as usize;
    let two_pi = 2.0 * PI;
    let rows = exec::map_range(side, |i| {
        let a = i as i64 - r;
        let mut s = C64::default();
        for b in -r..=r {
            for c in -r..=r {
                for d in -r..=r {
                    let xi = [a, b, c, d];
                    let n2 = xi.iter().map(|v| v * v).sum::<i64>();
                    let w = cutoff.radial((n2 as f64).sqrt() / m as f64);
                    if w == 0.0 {
                        continue;
                    }
                    let phase = t * two_pi * two_pi * n2 as f64
                        + two_pi * (0..4).map(|k| x[k] * xi[k] as f64).sum::<f64>();
                    s += w * C64::from_polar(1.0, -phase);
                }
            }
        }
        s
    });
    Ok(rows.into_iter().sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSearch {
    /// Spatial grid per axis as a multiple of 4M.
    pub space_factor: usize,
    /// Time samples on a non-degenerate window.
    pub time_points: usize,
}

impl Default for KernelSearch {
    fn default() -> Self {
        Self {
            space_factor: 1,
            time_points: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub m: u32,
    pub s: u32,
    pub window: TimeWindow,
    pub origin_value: f64,
    /// sup |K_M| on the coarse space-time grid.
    pub coarse_sup: f64,
    /// sup |K_M| after halving the spatial and temporal spacing.
    pub sup: f64,
    pub at_x: [f64; 4],
    pub at_t: f64,
    pub refinement_change: f64,
    /// sup S^2 / M^4.
    pub fitted_constant: f64,
}

/// sup |K_M(x, t)| over a space grid and the given times, with every spatial
/// sample shifted by `shift` grid cells.
fn kernel_grid_sup(
    support: &[([i64; 4], f64)],
    g: usize,
    t: f64,
    shift: [f64; 4],
) -> (f64, [f64; 4]) {
    let grid = [g; 4];
    let fft = Fft4::for_grid(grid);
    let mut buf = vec![C64::default(); g.pow(4)];
    let two_pi = 2.0 * PI;
    for (xi, w) in support {
        let n2 = xi.iter().map(|v| v * v).sum::<i64>() as f64;
        let sh: f64 = (0..4).map(|k| shift[k] * xi[k] as f64).sum::<f64>() / g as f64;
        let idx = (0..4).fold(0usize, |acc, k| {
            acc * g + xi[k].rem_euclid(g as i64) as usize
        });
        buf[idx] += w * C64::from_polar(1.0, -(t * two_pi * two_pi * n2 + two_pi * sh));
    }
    fft.forward(&mut buf);
    let chunks = buf.len().div_ceil(exec::REDUCE_CHUNK);
    let best = exec::map_range(chunks, |c| {
        let lo = c * exec::REDUCE_CHUNK;
        let hi = (lo + exec::REDUCE_CHUNK).min(buf.len());
        (lo..hi).fold((f64::NEG_INFINITY, 0usize), |b, i| {
            let v = buf[i].norm();
            if v > b.0 {
                (v, i)
            } else {
                b
            }
        })
    });
    let (v, i) = best
        .into_iter()
        .fold((f64::NEG_INFINITY, 0), |b, x| if x.0 > b.0 { x } else { b });
    let mut j = [0usize; 4];
    let mut rest = i;
    for k in (0..4).rev() {
        j[k] = rest % g;
        rest /= g;
    }
    (
        v,
        std::array::from_fn(|k| (j[k] as f64 + shift[k]) / g as f64),
    )
}

/// Estimates sup |K_M| on T^4 x [S M^{-2}, S^{-1}] on a grid of 4M points
/// per axis, then again with half the spacing in space and time.
pub fn kernel_sup_bound_check(m: u32, s: u32, search: &KernelSearch) -> Result<KernelReport> {
    if m == 0 || s == 0 {
        return Err(Error::Domain("kernel check needs M, S >= 1".into()));
    }
    if s > m {
        return Err(Error::Domain(format!("S = {s} exceeds M = {m}")));
    }
    let cutoff = CutoffProfile::default();
    let support = kernel_support(m, &cutoff);
    let window = TimeWindow::new(s as f64 / (m as f64).powi(2), 1.0 / s as f64)?;
    let times = |count: usize| -> Vec<f64> {
        if window.is_empty() || count < 2 {
            vec![window.start]
        } else {
            (0..count)
                .map(|k| window.start + window.len() * k as f64 / (count - 1) as f64)
                .collect()
        }
    };
    let g = 4 * m as usize * search.space_factor.max(1);
    let scan = |ts: &[f64], shifts: &[[f64; 4]]| {
        let mut best = (f64::NEG_INFINITY, [0.0; 4], 0.0);
        for &t in ts {
            for sh in shifts {
                let (v, x) = kernel_grid_sup(&support, g, t, *sh);
                if v > best.0 {
                    best = (v, x, t);
                }
            }
        }
        best
    };
    let coarse = scan(&times(search.time_points), &[[0.0; 4]]);
    let half_shifts: Vec<[f64; 4]> = (0..16)
        .map(|b| std::array::from_fn(|k| if b >> k & 1 == 1 { 0.5 } else { 0.0 }))
        .collect();
    let fine_times = times(2 * search.time_points - 1);
    let fine = scan(&fine_times, &half_shifts);
    let origin_value = compensated_sum(support.iter().map(|(_, w)| *w));
    Ok(KernelReport {
        m,
        s,
        window,
        origin_value,
        coarse_sup: coarse.0,
        sup: fine.0,
        at_x: fine.1,
        at_t: fine.2,
        refinement_change: (fine.0 / coarse.0 - 1.0).abs(),
        fitted_constant: fine.0 * (s as f64).powi(2) / (m as f64).powi(4),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionPoint {
    pub n: f64,
    pub t: f64,
    pub z_value: f64,
}

/// Shells carrying at most this share of ||f_N||_2^2 are left out of the
/// extinction Z-norm.
pub const EXTINCTION_SKIP: f64 = 1e-14;

/// ||e^{it Lap} f_N||_{Z([T N^{-2}, T^{-1}])} for every (N, T) pair.
pub fn run_extinction(
    phi: &EuclideanProfile,
    ns: &[f64],
    ts: &[f64],
    geometry: &TorusGeometry,
) -> Result<Vec<ExtinctionPoint>> {
    let chart = ChartMap::for_geometry(geometry);
    let mut out = Vec::new();
    for &n in ns {
        for &t in ts {
            if !(t >= 1.0) {
                return Err(Error::Domain(format!("extinction needs T >= 1, got {t}")));
            }
            if t / (n * n) > 1.0 / t {
                return Err(Error::Domain(format!("empty window for N = {n}, T = {t}")));
            }
        }
        let f = forward_transform(&make_profile_on_torus(phi, n, geometry, &chart)?)?;
        let zero = f.coeffs.iter().all(|z| *z == C64::default());
        let series = if zero || !geometry.is_unit() {
            Vec::new()
        } else {
            free_shell_series(&f, 4, EXTINCTION_SKIP)?
        };
        for &t in ts {
            let window = TimeWindow::new(t / (n * n), 1.0 / t)?;
            let z_value = if zero || window.is_empty() {
                0.0
            } else if geometry.is_unit() {
                z_from_series(&series, window)?.value
            } else {
                let samples = 257;
                let times: Vec<f64> = (0..samples)
                    .map(|k| window.start + window.len() * k as f64 / (samples - 1) as f64)
                    .collect();
                z_norm(&TrajectoryRecord::free(&f, &times), window)?.value
            };
            out.push(ExtinctionPoint { n, t, z_value });
        }
    }
    Ok(out)
}

/// Z-norm of the free evolution of `f` over any window of length at most 1.
/// On the unit torus the flow has period 1/(2 pi) and every window is
/// integrated exactly; otherwise `samples` equispaced times on [0, 1] are used.
pub fn free_z_norm(f: &SpectralField, skip_rel: f64, samples: usize) -> Result<f64> {
    if f.coeffs.iter().all(|z| *z == C64::default()) {
        return Ok(0.0);
    }
    if f.geometry.is_unit() {
        let series = free_shell_series(f, 4, skip_rel)?;
        let starts = 128;
        let mut best: f64 = 0.0;
        for k in 0..starts {
            let a = UNIT_TORUS_PERIOD * k as f64 / starts as f64;
            best = best.max(z_from_series(&series, TimeWindow::new(a, a + 1.0)?)?.value);
        }
        Ok(best)
    } else {
        let times: Vec<f64> = (0..samples.max(2))
            .map(|k| k as f64 / (samples.max(2) - 1) as f64)
            .collect();
        Ok(z_norm(
            &TrajectoryRecord::free(f, &times),
            TimeWindow::new(0.0, 1.0)?,
        )?
        .value)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionOptions {
    pub max_profiles: usize,
    pub z_tolerance: f64,
    /// Times searched for the concentration point.
    pub search_times: Vec<f64>,
    /// Relative shell energy below which shells are ignored in Z evaluations.
    pub skip_rel: f64,
    /// Time samples for Z on tori without exact periodic integration.
    pub z_samples: usize,
}

impl Default for ExtractionOptions {
    fn default() -> Self {
        Self {
            max_profiles: 4,
            z_tolerance: 1e-2,
            search_times: vec![0.0],
            skip_rel: 1e-12,
            z_samples: 65,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractedProfile {
    /// Estimated concentration scale N.
    pub scale: f64,
    /// Shell maximizing N^{-1} |P_N e^{it Lap} R|.
    pub shell: u32,
    pub time: f64,
    pub center: [f64; 4],
    pub field: SpectralField,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecouplingResiduals {
    pub l2: f64,
    pub hdot1: f64,
    pub l4: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    pub profiles: Vec<ExtractedProfile>,
    pub remainder: SpectralField,
    pub z_history: Vec<f64>,
    pub complete: bool,
    /// |sum over pieces - whole| relative to the whole, per norm.
    pub residuals: DecouplingResiduals,
}

/// Location and shell of the largest N^{-1} |P_N e^{it Lap} R(x)|.
fn locate(r: &SpectralField, times: &[f64]) -> (u32, f64, [f64; 4], f64) {
    let g = r.geometry;
    let table = g.shell_table();
    let mut shells: Vec<u32> = table.clone();
    shells.sort_unstable();
    shells.dedup();
    let mut best = (1, 0.0, [0.0; 4], f64::NEG_INFINITY);
    for &t in times {
        let evolved = free_propagate(r, t);
        let found = exec::map_range(shells.len(), |k| {
            let n = shells[k];
            let p = inverse_transform(&evolved.masked(|i| table[i] == n));
            let (mut v, mut at) = (f64::NEG_INFINITY, 0);
            for (i, z) in p.samples.iter().enumerate() {
                let a = z.norm();
                if a > v {
                    v = a;
                    at = i;
                }
            }
            (n, v / n as f64, at)
        });
        for (n, v, at) in found {
            if v > best.3 {
                best = (n, t, g.point(at), v);
            }
        }
    }
    best
}

/// Multiplies `u` by a smooth radial window centred at `x0`: one inside
/// `inner`, zero outside `outer`.
fn window(u: &PhysicalField, x0: [f64; 4], inner: f64, outer: f64) -> PhysicalField {
    let eta = CutoffProfile {
        radius1: inner,
        radius2: outer,
    };
    let lambda = u.geometry.lambda();
    let mut out = u.clone();
    let g = u.geometry;
    exec::for_each_chunk_mut(&mut out.samples, exec::REDUCE_CHUNK, |c, ch| {
        let base = c * exec::REDUCE_CHUNK;
        for (k, z) in ch.iter_mut().enumerate() {
            let y = g.point(base + k);
            let d = minimal_image(std::array::from_fn(|a| y[a] - x0[a]), lambda);
            *z *= eta.radial(d.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
    });
    out
}

/// Greedy extraction of concentrated components. Each step finds the point
/// maximizing N^{-1} |P_N e^{it Lap} R(x)|, estimates the concentration scale
/// from the peak-to-Hdot1 ratio calibrated on W, and removes the windowed
/// component e^{-it Lap}(w e^{it Lap} R) with window radius 2 N^{-1/2}
/// (capped by the chart radius).
pub fn extract_bubbles(f: &SpectralField, opts: &ExtractionOptions) -> Result<Extraction> {
    if !f.is_finite() {
        return Err(Error::Data("field has non-finite coefficients".into()));
    }
    let geometry = f.geometry;
    let chart = ChartMap::for_geometry(&geometry);
    let times = if opts.search_times.is_empty() {
        vec![0.0]
    } else {
        opts.search_times.clone()
    };
    let total_l2 = f.l2_sq();
    let skip = |r: &SpectralField| -> f64 {
        let e = r.l2_sq();
        if e == 0.0 {
            0.0
        } else {
            opts.skip_rel * total_l2 / e
        }
    };
    let mut remainder = f.clone();
    let mut profiles = Vec::new();
    let mut z_history = Vec::new();
    let mut complete = false;
    loop {
        let z = free_z_norm(&remainder, skip(&remainder), opts.z_samples)?;
        z_history.push(z);
        if z < opts.z_tolerance {
            complete = true;
            break;
        }
        if profiles.len() >= opts.max_profiles {
            break;
        }
        let (shell, t, x, _) = locate(&remainder, &times);
        let evolved = inverse_transform(&free_propagate(&remainder, t));
        let idx = nearest_index(&geometry, x);
        let peak = evolved.samples[idx].norm();
        let trial =
            forward_transform(&window(&evolved, x, 0.9 * chart.radius, 1.1 * chart.radius))?;
        let hd = trial.hdot1_sq().sqrt();
        if hd == 0.0 {
            break;
        }
        let scale = (peak * W_HDOT1_SQ.sqrt() / (hd * ground_state_radial(0.0))).max(1.0);
        let radius = (2.0 / scale.sqrt()).min(chart.radius);
        let piece = forward_transform(&window(&evolved, x, 0.9 * radius, 1.1 * radius))?;
        let psi = free_propagate(&piece, -t);
        remainder = remainder.sub(&psi);
        profiles.push(ExtractedProfile {
            scale,
            shell,
            time: t,
            center: x,
            field: psi,
        });
    }
    let residuals = decoupling_residuals(f, &profiles, &remainder);
    Ok(Extraction {
        profiles,
        remainder,
        z_history,
        complete,
        residuals,
    })
}

fn nearest_index(g: &TorusGeometry, x: [f64; 4]) -> usize {
    let grid = g.grid();
    let lambda = g.lambda();
    (0..4).fold(0usize, |acc, a| {
        let j = (x[a] / lambda[a] * grid[a] as f64).round() as i64;
        acc * grid[a] + j.rem_euclid(grid[a] as i64) as usize
    })
}

/// Relative defects of the L2, Hdot1 and L4 decoupling identities.
pub fn decoupling_residuals(
    f: &SpectralField,
    profiles: &[ExtractedProfile],
    remainder: &SpectralField,
) -> DecouplingResiduals {
    let l4 = |s: &SpectralField| inverse_transform(s).integral_abs_pow(4.0);
    let rel = |whole: f64, parts: f64| {
        if whole == 0.0 {
            parts.abs()
        } else {
            (whole - parts).abs() / whole
        }
    };
    let sum = |m: &dyn Fn(&SpectralField) -> f64| -> f64 {
        profiles.iter().map(|p| m(&p.field)).sum::<f64>() + m(remainder)
    };
    DecouplingResiduals {
        l2: rel(f.l2_sq(), sum(&|s| s.l2_sq())),
        hdot1: rel(f.hdot1_sq(), sum(&|s| s.hdot1_sq())),
        l4: rel(l4(f), sum(&l4)),
    }
}
