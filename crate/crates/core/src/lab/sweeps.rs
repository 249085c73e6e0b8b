//! Measurements behind the Strichartz, bilinear and kernel sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critical_norms::{TimeWindow, TrigSeries, UNIT_TORUS_PERIOD};
use crate::error::{Error, Result};
use crate::evolution::free_propagate_with;
use crate::field::{inverse_transform, CutoffProfile, SpectralField, C64};
use crate::lattice::{shell_of_norm_sq, TorusGeometry};

fn cell_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Unit-L2 data on shell N focused at a seeded point x0: coefficients
/// r e^{-i omega . x0} with r uniform in [0.5, 1.5). Stored on the unit torus
/// with 2N + 4 points per side.
pub fn coherent_shell_data(n: u32, seed: u64) -> Result<SpectralField> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Domain(format!("shell {n} is not a power of two")));
    }
    let g = TorusGeometry::unit(2 * n as usize + 4)?;
    let mut rng = cell_rng(seed, n as u64);
    let x0: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
    let shells = g.shell_table();
    let mut s = SpectralField::zeros(g);
    for (i, &shell) in shells.iter().enumerate() {
        if shell != n {
            continue;
        }
        let m = g.mode_at(i);
        let r: f64 = rng.gen_range(0.5..1.5);
        let phase = -2.0 * PI * (0..4).map(|a| m.n[a] as f64 * x0[a]).sum::<f64>();
        s.coeffs[i] = C64::from_polar(r, phase);
    }
    let norm = s.l2_sq().sqrt();
    Ok(s.scaled(C64::new(1.0 / norm, 0.0)))
}

/// Space-time quantities of the free evolution of one shell-localized datum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrichartzCell {
    pub n: u32,
    pub seed: u64,
    /// (p, ||e^{it Lap} f||_{L^p([-1, 1] x T^4)}).
    pub lp: Vec<(u32, f64)>,
    /// ||f||_{Z([0, 1])} with the single shell N.
    pub z: f64,
    /// sup_t ||e^{it Lap} f||_{L^infinity} over the sampled period.
    pub linf: f64,
    pub h1: f64,
    /// Z / (||f||_{H1}^{5/6} (N^{-1} sup |e^{it Lap} f|)^{1/6}).
    pub refined_ratio: f64,
    pub time_samples: usize,
}

/// Exact-in-time space-time norms: the integrands are trigonometric
/// polynomials in t with period 1/(2 pi), sampled densely enough to be
/// recovered exactly, then integrated in closed form.
pub fn strichartz_cell(f: &SpectralField, n: u32, seed: u64, ps: &[u32]) -> Result<StrichartzCell> {
    if let Some(p) = ps.iter().find(|p| **p <= 3) {
        return Err(Error::Domain(format!(
            "Strichartz exponent p = {p} must exceed 3"
        )));
    }
    let g = f.geometry;
    if !g.is_unit() {
        return Err(Error::Geometry(
            "Strichartz cells need the unit torus".into(),
        ));
    }
    let norms = g.index_norm_sq_table();
    let support: Vec<i64> = (0..g.len())
        .filter(|&i| f.coeffs[i] != C64::default())
        .map(|i| norms[i])
        .collect();
    let (lo, hi) = match (support.iter().min(), support.iter().max()) {
        (Some(a), Some(b)) => (*a, *b),
        _ => return Err(Error::Domain("Strichartz data is zero".into())),
    };
    let half_p = ps.iter().map(|p| p.div_ceil(2)).max().unwrap_or(2).max(2) as usize;
    let samples = 2 * half_p * (hi - lo) as usize + 1;
    let disp = g.dispersion_table();
    let mut q: Vec<Vec<f64>> = vec![Vec::with_capacity(samples); ps.len()];
    let mut q4 = Vec::with_capacity(samples);
    let mut linf: f64 = 0.0;
    for j in 0..samples {
        let t = UNIT_TORUS_PERIOD * j as f64 / samples as f64;
        let u = inverse_transform(&free_propagate_with(f, t, &disp));
        for (k, p) in ps.iter().enumerate() {
            q[k].push(u.integral_abs_pow(*p as f64));
        }
        q4.push(u.integral_abs_pow(4.0));
        linf = linf.max(u.max_abs());
    }
    let lp = ps
        .iter()
        .zip(&q)
        .map(|(p, s)| {
            let v = TrigSeries::from_samples(s, UNIT_TORUS_PERIOD).integral(-1.0, 1.0);
            (*p, v.max(0.0).powf(1.0 / *p as f64))
        })
        .collect();
    let w = TimeWindow::new(0.0, 1.0)?;
    let z4 = (n as f64).powi(2)
        * TrigSeries::from_samples(&q4, UNIT_TORUS_PERIOD).integral(w.start, w.end);
    let z = z4.max(0.0).powf(0.25);
    let h1 = f.h1_sq().sqrt();
    let refined_ratio = z / (h1.powf(5.0 / 6.0) * (linf / n as f64).powf(1.0 / 6.0));
    Ok(StrichartzCell {
        n,
        seed,
        lp,
        z,
        linf,
        h1,
        refined_ratio,
        time_samples: samples,
    })
}

/// Sparse free solution sum_a c_a e^{i(2 pi a.x - 4 pi^2 |a|^2 t)} on the unit torus.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseWave {
    pub modes: Vec<([i64; 4], C64)>,
}

impl SparseWave {
    pub fn l2(&self) -> f64 {
        self.modes
            .iter()
            .map(|(_, c)| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn h1(&self) -> f64 {
        self.modes
            .iter()
            .map(|(a, c)| (1.0 + 4.0 * PI * PI * norm_sq(a) as f64) * c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

fn norm_sq(a: &[i64; 4]) -> i64 {
    a.iter().map(|v| v * v).sum()
}

/// Up to `k` distinct random modes of shell N with amplitudes uniform in
/// [0.5, 1.5) and uniform phases. Shells with at most `k` modes are taken whole.
pub fn random_shell_wave(n: u32, k: usize, rng: &mut ChaCha8Rng) -> Result<SparseWave> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Domain(format!("shell {n} is not a power of two")));
    }
    let r = n as i64;
    let in_shell = |a: &[i64; 4]| shell_of_norm_sq(norm_sq(a)) == n;
    let mut chosen = BTreeSet::new();
    if (2 * r + 1).pow(4) <= 6561 {
        let mut all = Vec::new();
        for a in -r..=r {
            for b in -r..=r {
                for c in -r..=r {
                    for d in -r..=r {
                        if in_shell(&[a, b, c, d]) {
                            all.push([a, b, c, d]);
                        }
                    }
                }
            }
        }
        if all.len() <= k {
            chosen.extend(all);
        } else {
            while chosen.len() < k {
                chosen.insert(all[rng.gen_range(0..all.len())]);
            }
        }
    } else {
        while chosen.len() < k {
            let a: [i64; 4] = std::array::from_fn(|_| rng.gen_range(-r..=r));
            if in_shell(&a) {
                chosen.insert(a);
            }
        }
    }
    let modes = chosen
        .into_iter()
        .map(|a| {
            let amp: f64 = rng.gen_range(0.5..1.5);
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            (a, C64::from_polar(amp, phase))
        })
        .collect();
    Ok(SparseWave { modes })
}

/// int_0^1 e^{-i w t} dt.
fn unit_interval_phase(w: f64) -> C64 {
    if w == 0.0 {
        C64::new(1.0, 0.0)
    } else {
        (C64::new(1.0, 0.0) - C64::from_polar(1.0, -w)) / C64::new(0.0, w)
    }
}

/// ||u1 u2||_{L2([0, 1] x T^4)} for two free sparse waves, exactly: terms of
/// the product are grouped by spatial frequency and temporal frequency, and
/// cross terms integrate in closed form.
pub fn bilinear_product_norm(u1: &SparseWave, u2: &SparseWave) -> f64 {
    let mut groups: BTreeMap<[i64; 4], BTreeMap<i64, C64>> = BTreeMap::new();
    for (a, ca) in &u1.modes {
        for (b, cb) in &u2.modes {
            let k: [i64; 4] = std::array::from_fn(|i| a[i] + b[i]);
            let e = norm_sq(a) + norm_sq(b);
            *groups.entry(k).or_default().entry(e).or_default() += ca * cb;
        }
    }
    let omega = 4.0 * PI * PI;
    let mut total = 0.0;
    for terms in groups.values() {
        let list: Vec<(i64, C64)> = terms.iter().map(|(e, c)| (*e, *c)).collect();
        for (i, (e1, c1)) in list.iter().enumerate() {
            total += c1.norm_sqr();
            for (e2, c2) in &list[i + 1..] {
                let w = omega * (e1 - e2) as f64;
                total += 2.0 * (c1 * c2.conj() * unit_interval_phase(w)).re;
            }
        }
    }
    total.max(0.0).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilinearCell {
    pub seed: u64,
    pub n1: u32,
    pub n2: u32,
    pub product: f64,
    /// ||u1 u2|| / (||u1||_{L2} ||u2||_{H1}).
    pub ratio: f64,
    /// N2 / N1 + 1 / N2.
    pub envelope: f64,
}

pub fn bilinear_cell(seed: u64, n1: u32, n2: u32, modes: usize) -> Result<BilinearCell> {
    if n1 < n2 {
        return Err(Error::Domain(format!(
            "need N1 >= N2, got N1 = {n1}, N2 = {n2}"
        )));
    }
    let mut rng = cell_rng(seed, ((n1 as u64) << 32) | n2 as u64);
    let u1 = random_shell_wave(n1, modes, &mut rng)?;
    let u2 = random_shell_wave(n2, modes, &mut rng)?;
    let product = bilinear_product_norm(&u1, &u2);
    Ok(BilinearCell {
        seed,
        n1,
        n2,
        product,
        ratio: product / (u1.l2() * u2.h1()),
        envelope: n2 as f64 / n1 as f64 + 1.0 / n2 as f64,
    })
}

/// r_4(k): representations of k as a sum of four squares, by Jacobi's
/// formula 8 * sum of the divisors of k not divisible by 4.
pub fn jacobi_r4(k: u64) -> u64 {
    if k == 0 {
        return 1;
    }
    let mut s = 0;
    let mut d = 1;
    while d * d <= k {
        if k.is_multiple_of(d) {
            for e in [d, k / d] {
                if e % 4 != 0 {
                    s += e;
                }
            }
            if d * d == k && d % 4 != 0 {
                s -= d;
            }
        }
        d += 1;
    }
    8 * s
}

/// K_M(0, t) = sum_k r_4(k) eta(sqrt(k) / M) e^{-4 pi^2 i k t}: the kernel at
/// the origin summed over norm classes instead of lattice points.
pub fn kernel_origin_by_classes(m: u32, t: f64, cutoff: &CutoffProfile) -> C64 {
    let kmax = (cutoff.radius2 * m as f64).powi(2).ceil() as u64;
    let mut acc = C64::default();
    for k in 0..=kmax {
        let w = cutoff.radial((k as f64).sqrt() / m as f64);
        if w > 0.0 {
            acc += C64::from_polar(jacobi_r4(k) as f64 * w, -4.0 * PI * PI * k as f64 * t);
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r4_matches_brute_force() {
        let mut counts = vec![0u64; 40];
        for a in -7i64..=7 {
            for b in -7i64..=7 {
                for c in -7i64..=7 {
                    for d in -7i64..=7 {
                        let k = (a * a + b * b + c * c + d * d) as usize;
                        if k < counts.len() {
                            counts[k] += 1;
                        }
                    }
                }
            }
        }
        for (k, c) in counts.iter().enumerate() {
            assert_eq!(jacobi_r4(k as u64), *c, "k = {k}");
        }
    }

    #[test]
    fn product_with_zero_wave_vanishes() {
        let mut rng = cell_rng(1, 0);
        let u1 = random_shell_wave(4, 8, &mut rng).unwrap();
        assert_eq!(
            bilinear_product_norm(&u1, &SparseWave { modes: vec![] }),
            0.0
        );
    }

    #[test]
    fn product_of_single_modes_is_product_of_amplitudes() {
        let u1 = SparseWave {
            modes: vec![([3, 0, 0, 0], C64::new(0.0, 2.0))],
        };
        let u2 = SparseWave {
            modes: vec![([0, 1, 0, 0], C64::new(1.5, 0.0))],
        };
        assert!((bilinear_product_norm(&u1, &u2) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn product_norm_matches_grid_quadrature() {
        // Direct evaluation on a 16^4 grid with 4000 midpoint times.
        let mut rng = cell_rng(7, 3);
        let u1 = random_shell_wave(2, 3, &mut rng).unwrap();
        let u2 = random_shell_wave(1, 2, &mut rng).unwrap();
        let g = TorusGeometry::unit(16).unwrap();
        let to_field = |w: &SparseWave| {
            let modes: Vec<_> = w
                .modes
                .iter()
                .map(|(a, c)| (crate::lattice::Mode::new(*a), *c))
                .collect();
            SpectralField::from_modes(g, &modes).unwrap()
        };
        let (f1, f2) = (to_field(&u1), to_field(&u2));
        let disp = g.dispersion_table();
        let steps = 4000;
        let mut acc = 0.0;
        for j in 0..steps {
            let t = (j as f64 + 0.5) / steps as f64;
            let a = inverse_transform(&free_propagate_with(&f1, t, &disp));
            let b = inverse_transform(&free_propagate_with(&f2, t, &disp));
            let s: f64 = a
                .samples
                .iter()
                .zip(&b.samples)
                .map(|(x, y)| (x * y).norm_sqr())
                .sum();
            acc += s / g.len() as f64 / steps as f64;
        }
        let exact = bilinear_product_norm(&u1, &u2);
        assert!(
            (acc.sqrt() - exact).abs() < 1e-3 * exact,
            "{} vs {exact}",
            acc.sqrt()
        );
    }

    #[test]
    fn shell_waves_are_distinct_and_in_shell() {
        let mut rng = cell_rng(2, 0);
        let w = random_shell_wave(8, 64, &mut rng).unwrap();
        assert_eq!(w.modes.len(), 64);
        for (a, _) in &w.modes {
            assert_eq!(shell_of_norm_sq(norm_sq(a)), 8);
        }
        let w1 = random_shell_wave(1, 64, &mut rng).unwrap();
        assert_eq!(w1.modes.len(), 9);
    }

    #[test]
    fn low_exponent_is_a_domain_error() {
        let f = coherent_shell_data(2, 1).unwrap();
        assert!(matches!(
            strichartz_cell(&f, 2, 1, &[3]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(bilinear_cell(1, 2, 4, 8), Err(Error::Domain(_))));
    }

    #[test]
    fn single_mode_cell_is_plancherel() {
        let g = TorusGeometry::unit(8).unwrap();
        let f = SpectralField::from_modes(
            g,
            &[(crate::lattice::Mode::new([1, 1, 0, 0]), C64::new(1.0, 0.0))],
        )
        .unwrap();
        let c = strichartz_cell(&f, 2, 0, &[4, 6]).unwrap();
        // |u| = 1 everywhere: ||u||_{L^p([-1,1] x T^4)} = 2^{1/p}.
        for (p, v) in &c.lp {
            assert!(
                (v - 2f64.powf(1.0 / *p as f64)).abs() < 1e-12,
                "p = {p}: {v}"
            );
        }
        assert!((c.linf - 1.0).abs() < 1e-12);
        assert!((c.z - 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn coherent_data_is_normalized_and_shell_localized() {
        let f = coherent_shell_data(4, 3).unwrap();
        assert!((f.l2_sq() - 1.0).abs() < 1e-12);
        let shells = f.geometry.shell_table();
        for (i, c) in f.coeffs.iter().enumerate() {
            if *c != C64::default() {
                assert_eq!(shells[i], 4);
            }
        }
    }
}
