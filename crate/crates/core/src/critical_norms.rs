//! Space-time norms: L^p_{t,x}, the dyadic Z-norm, Z', the sampled
//! V^2-variation and the Y1/X1 proxies.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{free_propagate_with, TrajectoryRecord};
use crate::exec;
use crate::field::{inverse_transform, SpectralField, C64};
use crate::lattice::shells_up_to;

const TIME_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

impl TimeWindow {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(end >= start) || !start.is_finite() || !end.is_finite() {
            return Err(Error::Domain(format!("invalid window [{start}, {end}]")));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellContribution {
    pub shell: u32,
    /// ||P_N u||_{L4(T^4 x J)} on the attaining window J.
    pub l4: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub value: f64,
    pub per_shell: Vec<ShellContribution>,
    pub window: TimeWindow,
}

fn check_covered(times: &[f64], w: &TimeWindow) -> Result<()> {
    let (Some(&a), Some(&b)) = (times.first(), times.last()) else {
        return Err(Error::Domain("trajectory has no samples".into()));
    };
    if w.start < a - TIME_SLACK || w.end > b + TIME_SLACK {
        return Err(Error::Domain(format!(
            "window [{}, {}] outside sampled range [{a}, {b}]",
            w.start, w.end
        )));
    }
    Ok(())
}

/// Trapezoid integral over [w.start, w.end] of a sampled function, with linear
/// interpolation at window ends that fall between samples.
fn trapezoid_window(times: &[f64], values: &[f64], w: &TimeWindow) -> f64 {
    let interp = |t: f64| -> f64 {
        match times.iter().position(|&s| s >= t) {
            Some(0) => values[0],
            Some(k) => {
                let (t0, t1) = (times[k - 1], times[k]);
                let s = (t - t0) / (t1 - t0);
                values[k - 1] * (1.0 - s) + values[k] * s
            }
            None => *values.last().unwrap(),
        }
    };
    let mut pts: Vec<(f64, f64)> = vec![(w.start, interp(w.start))];
    for (&t, &v) in times.iter().zip(values) {
        if t > w.start && t < w.end {
            pts.push((t, v));
        }
    }
    pts.push((w.end, interp(w.end)));
    pts.windows(2)
        .map(|p| 0.5 * (p[1].0 - p[0].0) * (p[0].1 + p[1].1))
        .sum()
}

/// ||u||_{L^p(T^4 x window)} by grid quadrature in space and trapezoid in time.
pub fn spacetime_lp(traj: &TrajectoryRecord, p: f64, window: TimeWindow) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("p = {p} must be at least 1")));
    }
    check_covered(&traj.times, &window)?;
    let q: Vec<f64> = exec::map_range(traj.len(), |k| {
        inverse_transform(&traj.snapshots[k]).integral_abs_pow(p)
    });
    Ok(trapezoid_window(&traj.times, &q, &window).powf(1.0 / p))
}

/// Per-shell ||P_N u(t_k)||_4^4 for every sample; shells without energy are dropped.
fn shell_quartics(snapshots: &[SpectralField]) -> Vec<(u32, Vec<f64>)> {
    let Some(first) = snapshots.first() else {
        return Vec::new();
    };
    let g = first.geometry;
    let table = g.shell_table();
    shells_up_to(g.max_shell())
        .into_iter()
        .filter_map(|n| {
            let present = snapshots.iter().any(|s| {
                s.coeffs
                    .iter()
                    .zip(&table)
                    .any(|(z, &t)| t == n && z.norm_sqr() > 0.0)
            });
            if !present {
                return None;
            }
            let q = exec::map_range(snapshots.len(), |k| {
                let p = snapshots[k].masked(|i| table[i] == n);
                inverse_transform(&p).integral_abs_pow(4.0)
            });
            Some((n, q))
        })
        .collect()
}

/// sup over sample-aligned subwindows J of length <= 1 of
/// (sum_N N^2 ||P_N u||^4_{L4(T^4 x J)})^{1/4}.
pub fn z_norm(traj: &TrajectoryRecord, window: TimeWindow) -> Result<NormReport> {
    check_covered(&traj.times, &window)?;
    let idx: Vec<usize> = (0..traj.len())
        .filter(|&k| {
            traj.times[k] >= window.start - TIME_SLACK && traj.times[k] <= window.end + TIME_SLACK
        })
        .collect();
    if idx.is_empty() {
        return Err(Error::Domain("no sample inside the window".into()));
    }
    let times: Vec<f64> = idx.iter().map(|&k| traj.times[k]).collect();
    let snaps: Vec<SpectralField> = idx.iter().map(|&k| traj.snapshots[k].clone()).collect();
    let shells = shell_quartics(&snaps);
    Ok(z_from_shell_samples(&times, &shells))
}

/// Z-norm from per-shell samples of ||P_N u(t)||_4^4 on `times`.
pub fn z_from_shell_samples(times: &[f64], shells: &[(u32, Vec<f64>)]) -> NormReport {
    let m = times.len();
    let prefix: Vec<Vec<f64>> = shells
        .iter()
        .map(|(_, q)| {
            let mut p = vec![0.0; m];
            for k in 1..m {
                p[k] = p[k - 1] + 0.5 * (times[k] - times[k - 1]) * (q[k] + q[k - 1]);
            }
            p
        })
        .collect();
    let mut best = (0.0, 0, 0);
    let mut j = 0;
    for i in 0..m {
        j = j.max(i);
        while j + 1 < m && times[j + 1] - times[i] <= 1.0 + TIME_SLACK {
            j += 1;
        }
        let s: f64 = shells
            .iter()
            .zip(&prefix)
            .map(|((n, _), p)| (*n as f64).powi(2) * (p[j] - p[i]))
            .sum();
        if s > best.0 || i == 0 {
            best = (s, i, j);
        }
    }
    let (s, i, j) = best;
    NormReport {
        value: s.max(0.0).powf(0.25),
        per_shell: shells
            .iter()
            .zip(&prefix)
            .map(|((n, _), p)| ShellContribution {
                shell: *n,
                l4: (p[j] - p[i]).max(0.0).powf(0.25),
            })
            .collect(),
        window: TimeWindow {
            start: times[i],
            end: times[j],
        },
    }
}

/// ||u||_{Z'} = ||u||_Z^{3/4} ||u||_{X1}^{1/4}, with the X1 proxy.
pub fn z_prime(traj: &TrajectoryRecord, window: TimeWindow) -> Result<f64> {
    let z = z_norm(traj, window)?.value;
    Ok(z_prime_from(z, x1_proxy(traj)?))
}

pub fn z_prime_from(z: f64, x1: f64) -> f64 {
    z.powf(0.75) * x1.powf(0.25)
}

/// (max over subsequences of sum |v_{i_j} - v_{i_{j-1}}|^2)^{1/2}, by dynamic
/// programming over the last chosen index.
pub fn discrete_v2_norm(values: &[C64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("empty sequence".into()));
    }
    let mut best = vec![0.0f64; values.len()];
    let mut top: f64 = 0.0;
    for j in 1..values.len() {
        let mut b: f64 = 0.0;
        for i in 0..j {
            b = b.max(best[i] + (values[j] - values[i]).norm_sqr());
        }
        best[j] = b;
        top = top.max(b);
    }
    Ok(top.sqrt())
}

const MIN_PROXY_SAMPLES: usize = 8;

/// sum_n <n>^2 ||e^{i |omega|^2 t} u_hat(t)(n)||^2_{V2}, square-rooted.
pub fn y1_proxy(traj: &TrajectoryRecord) -> Result<f64> {
    if traj.len() < MIN_PROXY_SAMPLES {
        return Err(Error::Domain(format!(
            "need at least {MIN_PROXY_SAMPLES} samples, got {}",
            traj.len()
        )));
    }
    let g = traj.geometry;
    let disp = g.dispersion_table();
    let norms = g.index_norm_sq_table();
    let total = exec::sum_range(g.len(), |i| {
        let track: Vec<C64> = traj
            .times
            .iter()
            .zip(&traj.snapshots)
            .map(|(&t, s)| s.coeffs[i] * C64::from_polar(1.0, disp[i] * t))
            .collect();
        if track.iter().all(|z| *z == track[0]) {
            return 0.0;
        }
        let v = discrete_v2_norm(&track).unwrap_or(0.0);
        (1.0 + norms[i] as f64) * v * v
    });
    Ok(total.sqrt())
}

/// max(sup_t ||u(t)||_{H1}, y1_proxy).
pub fn x1_proxy(traj: &TrajectoryRecord) -> Result<f64> {
    let y = y1_proxy(traj)?;
    let h = traj
        .snapshots
        .iter()
        .map(|s| s.h1_sq().sqrt())
        .fold(0.0, f64::max);
    Ok(h.max(y))
}

/// Trigonometric polynomial recovered from equispaced samples over one period.
#[derive(Clone, Debug)]
pub struct TrigSeries {
    pub period: f64,
    /// Coefficients for frequencies -K..=K.
    pub coeffs: Vec<C64>,
}

impl TrigSeries {
    /// `samples[j]` is the value at t = j * period / L for odd L; exact when
    /// the degree is at most (L - 1)/2.
    pub fn from_samples(samples: &[f64], period: f64) -> Self {
        let l = samples.len();
        let k = (l as i64 - 1) / 2;
        let coeffs = exec::map_range((2 * k + 1) as usize, |m| {
            let f = m as i64 - k;
            let mut s = C64::default();
            for (j, &v) in samples.iter().enumerate() {
                let ph = -2.0 * PI * ((f * j as i64).rem_euclid(l as i64)) as f64 / l as f64;
                s += v * C64::from_polar(1.0, ph);
            }
            s / l as f64
        });
        Self { period, coeffs }
    }

    pub fn degree(&self) -> usize {
        (self.coeffs.len() - 1) / 2
    }

    /// Exact integral over [a, b].
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let k = self.degree() as i64;
        let mut s = self.coeffs[k as usize].re * (b - a);
        for m in 1..=k {
            let w = 2.0 * PI * m as f64 / self.period;
            for (sign, c) in [
                (1.0, self.coeffs[(k + m) as usize]),
                (-1.0, self.coeffs[(k - m) as usize]),
            ] {
                let ws = sign * w;
                let e = (C64::from_polar(1.0, ws * b) - C64::from_polar(1.0, ws * a))
                    / C64::new(0.0, ws);
                s += (c * e).re;
            }
        }
        s
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[self.degree()].re
    }
}

/// Period in t of every free evolution on the unit torus.
pub const UNIT_TORUS_PERIOD: f64 = 1.0 / (2.0 * PI);

/// For free evolution of `f` on the unit torus: per-shell trigonometric series
/// of t -> ||P_N e^{it Lap} f||_p^p for even integer p. Shells whose share of
/// ||f||_2^2 is at most `skip_rel` are left out.
pub fn free_shell_series(
    f: &SpectralField,
    p: u32,
    skip_rel: f64,
) -> Result<Vec<(u32, TrigSeries)>> {
    let g = f.geometry;
    if !g.is_unit() {
        return Err(Error::Geometry(
            "periodic time integration needs the unit torus".into(),
        ));
    }
    if p == 0 || p % 2 == 1 {
        return Err(Error::Domain(format!(
            "exact time integration needs even p, got {p}"
        )));
    }
    let table = g.shell_table();
    let norms = g.index_norm_sq_table();
    let disp = g.dispersion_table();
    let total = f.l2_sq();
    let mut out = Vec::new();
    for n in shells_up_to(g.max_shell()) {
        let piece = f.masked(|i| table[i] == n);
        let e = piece.l2_sq();
        if e == 0.0 || e <= skip_rel * total {
            continue;
        }
        let (mut lo, mut hi) = (i64::MAX, i64::MIN);
        for (i, z) in piece.coeffs.iter().enumerate() {
            if z.norm_sqr() > 0.0 {
                lo = lo.min(norms[i]);
                hi = hi.max(norms[i]);
            }
        }
        let degree = (p as i64 / 2) * (hi - lo);
        let l = (2 * degree + 1) as usize;
        let samples: Vec<f64> = (0..l)
            .map(|j| {
                let t = j as f64 * UNIT_TORUS_PERIOD / l as f64;
                inverse_transform(&free_propagate_with(&piece, t, &disp)).integral_abs_pow(p as f64)
            })
            .collect();
        out.push((n, TrigSeries::from_samples(&samples, UNIT_TORUS_PERIOD)));
    }
    Ok(out)
}

/// Z-norm of free evolution on a window of length at most 1 from per-shell series.
pub fn z_from_series(series: &[(u32, TrigSeries)], window: TimeWindow) -> Result<NormReport> {
    if window.len() > 1.0 + TIME_SLACK {
        return Err(Error::Domain("Z-norm windows have length at most 1".into()));
    }
    let mut s = 0.0;
    let mut per_shell = Vec::new();
    for (n, ser) in series {
        let v = ser.integral(window.start, window.end).max(0.0);
        s += (*n as f64).powi(2) * v;
        per_shell.push(ShellContribution {
            shell: *n,
            l4: v.powf(0.25),
        });
    }
    Ok(NormReport {
        value: s.powf(0.25),
        per_shell,
        window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::TrajectoryRecord;
    use crate::lattice::{Mode, TorusGeometry};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn times(n: usize, t_end: f64) -> Vec<f64> {
        (0..n).map(|k| t_end * k as f64 / (n - 1) as f64).collect()
    }

    fn single_mode(c: C64, m: [i64; 4]) -> SpectralField {
        let g = TorusGeometry::unit(8).unwrap();
        SpectralField::from_modes(g, &[(Mode::new(m), c)]).unwrap()
    }

    #[test]
    fn spacetime_lp_examples() {
        let one = single_mode(C64::new(1.0, 0.0), [0; 4]);
        let tr = TrajectoryRecord::free(&one, &times(11, 1.0));
        let v = spacetime_lp(&tr, 4.0, TimeWindow::new(0.0, 1.0).unwrap()).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let zero = TrajectoryRecord::free(&single_mode(C64::default(), [0; 4]), &times(5, 1.0));
        assert_eq!(
            spacetime_lp(&zero, 4.0, TimeWindow::new(0.0, 1.0).unwrap()).unwrap(),
            0.0
        );
        let c = C64::new(0.3, -0.4);
        let tr = TrajectoryRecord::free(&single_mode(c, [1, 2, 0, -1]), &times(9, 0.8));
        for p in [2.0, 3.0, 4.0, 6.0] {
            let v = spacetime_lp(&tr, p, TimeWindow::new(0.1, 0.65).unwrap()).unwrap();
            assert!((v - c.norm() * 0.55f64.powf(1.0 / p)).abs() < 1e-12);
        }
        assert!(spacetime_lp(&tr, 4.0, TimeWindow::new(0.0, 2.0).unwrap()).is_err());
    }

    #[test]
    fn z_norm_single_shell_reduction() {
        let u = single_mode(C64::new(0.5, 0.0), [3, 0, 0, 0]);
        let tr = TrajectoryRecord::free(&u, &times(21, 2.0));
        let r = z_norm(&tr, TimeWindow::new(0.0, 2.0).unwrap()).unwrap();
        assert!(r.window.len() <= 1.0 + 1e-12);
        let a = spacetime_lp(&tr, 4.0, r.window).unwrap();
        assert!((r.value - 2.0 * a).abs() < 1e-12);
        let s: f64 = r
            .per_shell
            .iter()
            .map(|c| (c.shell as f64).powi(2) * c.l4.powi(4))
            .sum();
        assert!((s - r.value.powi(4)).abs() < 1e-12);
        let zero = TrajectoryRecord::free(&single_mode(C64::default(), [0; 4]), &times(5, 1.0));
        assert_eq!(
            z_norm(&zero, TimeWindow::new(0.0, 1.0).unwrap())
                .unwrap()
                .value,
            0.0
        );
    }

    #[test]
    fn z_norm_is_monotone_in_window() {
        let g = TorusGeometry::unit(8).unwrap();
        let u = crate::lab::catalog::random_h1(g, 1, 1.0, 2.5).unwrap();
        let tr = TrajectoryRecord::free(&u, &times(31, 1.5));
        let big = z_norm(&tr, TimeWindow::new(0.0, 1.5).unwrap())
            .unwrap()
            .value;
        let small = z_norm(&tr, TimeWindow::new(0.2, 0.9).unwrap())
            .unwrap()
            .value;
        assert!(small <= big);
    }

    #[test]
    fn z_prime_arithmetic() {
        assert!((z_prime_from(16.0, 1.0) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn v2_examples() {
        let c = |x: f64| C64::new(x, 0.0);
        assert!((discrete_v2_norm(&[c(0.0), c(1.0), c(0.0)]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(discrete_v2_norm(&[c(0.0), c(1.0)]).unwrap(), 1.0);
        assert_eq!(discrete_v2_norm(&[c(2.0); 5]).unwrap(), 0.0);
        assert!(discrete_v2_norm(&[]).is_err());
    }

    fn brute_force_v2(v: &[C64]) -> f64 {
        let l = v.len();
        let mut best: f64 = 0.0;
        for mask in 1u32..(1 << l) {
            let idx: Vec<usize> = (0..l).filter(|i| mask >> i & 1 == 1).collect();
            let s: f64 = idx.windows(2).map(|w| (v[w[1]] - v[w[0]]).norm_sqr()).sum();
            best = best.max(s);
        }
        best.sqrt()
    }

    #[test]
    fn v2_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..60 {
            let l = rng.gen_range(1..=10);
            let v: Vec<C64> = (0..l)
                .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            assert!((discrete_v2_norm(&v).unwrap() - brute_force_v2(&v)).abs() < 1e-12);
        }
    }

    #[test]
    fn free_trajectories_have_zero_y1() {
        let g = TorusGeometry::unit(8).unwrap();
        let u = crate::lab::catalog::random_h1(g, 2, 1.0, 2.0).unwrap();
        let tr = TrajectoryRecord::free(&u, &times(12, 0.3));
        assert!(y1_proxy(&tr).unwrap() < 1e-10);
        assert!((x1_proxy(&tr).unwrap() - u.h1_sq().sqrt()).abs() < 1e-12);
        let short = TrajectoryRecord::free(&u, &times(4, 0.3));
        assert!(y1_proxy(&short).is_err());
    }

    #[test]
    fn trig_series_integrates_exactly() {
        let period = 0.7;
        let f = |t: f64| {
            let w = 2.0 * PI / period;
            1.5 + (w * t).cos() - 0.3 * (3.0 * w * t).sin()
        };
        let l = 9;
        let s: Vec<f64> = (0..l).map(|j| f(j as f64 * period / l as f64)).collect();
        let ser = TrigSeries::from_samples(&s, period);
        let w = 2.0 * PI / period;
        let exact = |t: f64| 1.5 * t + (w * t).sin() / w + 0.3 * (3.0 * w * t).cos() / (3.0 * w);
        for (a, b) in [(0.0, 0.7), (0.1, 2.3), (-0.4, 0.05)] {
            assert!((ser.integral(a, b) - (exact(b) - exact(a))).abs() < 1e-12);
        }
    }

    #[test]
    fn free_series_matches_sampled_integral() {
        let g = TorusGeometry::unit(8).unwrap();
        let u = crate::lab::catalog::random_h1(g, 5, 1.0, 2.0).unwrap();
        let series = free_shell_series(&u, 4, 0.0).unwrap();
        let w = TimeWindow::new(0.0, 0.05).unwrap();
        let z = z_from_series(&series, w).unwrap();
        let tr = TrajectoryRecord::free(&u, &times(2001, 0.05));
        let zt = z_norm(&tr, w).unwrap();
        assert!(
            (z.value / zt.value - 1.0).abs() < 1e-5,
            "{} {}",
            z.value,
            zt.value
        );
    }
}
