//! Complex fields on the torus in grid-sample and Fourier form.
//!
//! Fourier coefficients are mean-type: u(x) = sum_n u_hat(n) exp(i omega(n).x),
//! so a single plane wave has coefficient 1 and Plancherel reads
//! ||u||_{L2}^2 = volume * sum |u_hat|^2.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::exec;
use crate::fft::Fft4;
use crate::lattice::{frequency, DyadicShell, Mode, TorusGeometry};

pub type C64 = Complex64;

/// Grid samples u(x_j), row-major with axis 0 slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalField {
    pub geometry: TorusGeometry,
    pub samples: Vec<C64>,
}

/// Fourier coefficients in FFT ordering (see [`TorusGeometry::mode_at`]).
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    pub geometry: TorusGeometry,
    pub coeffs: Vec<C64>,
}

impl PhysicalField {
    pub fn new(geometry: TorusGeometry, samples: Vec<C64>) -> Result<Self> {
        if samples.len() != geometry.len() {
            return Err(Error::Data(format!(
                "expected {} samples, got {}",
                geometry.len(),
                samples.len()
            )));
        }
        Ok(Self { geometry, samples })
    }

    pub fn zeros(geometry: TorusGeometry) -> Self {
        Self {
            geometry,
            samples: vec![C64::default(); geometry.len()],
        }
    }

    pub fn constant(geometry: TorusGeometry, c: C64) -> Self {
        Self {
            geometry,
            samples: vec![c; geometry.len()],
        }
    }

    /// Samples `f` at every grid point.
    pub fn from_fn<F>(geometry: TorusGeometry, f: F) -> Self
    where
        F: Fn([f64; 4]) -> C64 + Sync + Send,
    {
        let samples = exec::map_range(geometry.len(), |i| f(geometry.point(i)));
        Self { geometry, samples }
    }

    /// c * exp(i omega(n).x).
    pub fn plane_wave(geometry: TorusGeometry, mode: Mode, c: C64) -> Result<Self> {
        let w = frequency(&geometry, &mode)?;
        Ok(Self::from_fn(geometry, move |x| {
            let ph: f64 = (0..4).map(|a| w[a] * x[a]).sum();
            c * C64::from_polar(1.0, ph)
        }))
    }

    pub fn is_finite(&self) -> bool {
        self.samples
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        let s = &self.samples;
        exec::max_range(s.len(), |i| s[i].norm()).max(0.0)
    }

    /// Grid quadrature of |u|^p.
    pub fn integral_abs_pow(&self, p: f64) -> f64 {
        let s = &self.samples;
        let sum = if p == 2.0 {
            exec::sum_range(s.len(), |i| s[i].norm_sqr())
        } else if p == 4.0 {
            exec::sum_range(s.len(), |i| {
                let m = s[i].norm_sqr();
                m * m
            })
        } else {
            exec::sum_range(s.len(), |i| s[i].norm().powf(p))
        };
        sum * self.geometry.cell_volume()
    }

    pub fn scale(&mut self, c: C64) {
        exec::for_each_chunk_mut(&mut self.samples, exec::REDUCE_CHUNK, |_, ch| {
            ch.iter_mut().for_each(|z| *z *= c)
        });
    }

    pub fn add_scaled(&mut self, other: &PhysicalField, c: C64) {
        assert_eq!(self.geometry, other.geometry);
        for (a, b) in self.samples.iter_mut().zip(&other.samples) {
            *a += c * b;
        }
    }
}

impl SpectralField {
    pub fn new(geometry: TorusGeometry, coeffs: Vec<C64>) -> Result<Self> {
        if coeffs.len() != geometry.len() {
            return Err(Error::Data(format!(
                "expected {} coefficients, got {}",
                geometry.len(),
                coeffs.len()
            )));
        }
        Ok(Self { geometry, coeffs })
    }

    pub fn zeros(geometry: TorusGeometry) -> Self {
        Self {
            geometry,
            coeffs: vec![C64::default(); geometry.len()],
        }
    }

    /// Builds a field from (mode, coefficient) pairs; modes must be representable.
    pub fn from_modes(geometry: TorusGeometry, modes: &[(Mode, C64)]) -> Result<Self> {
        let mut f = Self::zeros(geometry);
        for (m, c) in modes {
            let idx = geometry
                .index_of(m)
                .ok_or_else(|| Error::Range(format!("mode {:?} outside grid", m.n)))?;
            f.coeffs[idx] += c;
        }
        Ok(f)
    }

    pub fn coefficient(&self, mode: &Mode) -> Option<C64> {
        self.geometry.index_of(mode).map(|i| self.coeffs[i])
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn l2_sq(&self) -> f64 {
        let c = &self.coeffs;
        self.geometry.volume() * exec::sum_range(c.len(), |i| c[i].norm_sqr())
    }

    pub fn hdot1_sq(&self) -> f64 {
        self.hdot1_sq_with(&self.geometry.dispersion_table())
    }

    /// As [`hdot1_sq`](Self::hdot1_sq) with a precomputed dispersion table.
    pub fn hdot1_sq_with(&self, disp: &[f64]) -> f64 {
        let c = &self.coeffs;
        self.geometry.volume() * exec::sum_range(c.len(), |i| disp[i] * c[i].norm_sqr())
    }

    pub fn h1_sq(&self) -> f64 {
        self.l2_sq() + self.hdot1_sq()
    }

    /// Pairing volume * sum u_hat conj(v_hat), the L2 inner product.
    pub fn inner_l2(&self, other: &SpectralField) -> C64 {
        assert_eq!(self.geometry, other.geometry);
        let (a, b) = (&self.coeffs, &other.coeffs);
        let re = exec::sum_range(a.len(), |i| (a[i] * b[i].conj()).re);
        let im = exec::sum_range(a.len(), |i| (a[i] * b[i].conj()).im);
        C64::new(re, im) * self.geometry.volume()
    }

    pub fn sub(&self, other: &SpectralField) -> SpectralField {
        assert_eq!(self.geometry, other.geometry);
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        SpectralField {
            geometry: self.geometry,
            coeffs,
        }
    }

    pub fn add(&self, other: &SpectralField) -> SpectralField {
        assert_eq!(self.geometry, other.geometry);
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a + b)
            .collect();
        SpectralField {
            geometry: self.geometry,
            coeffs,
        }
    }

    pub fn scaled(&self, c: C64) -> SpectralField {
        SpectralField {
            geometry: self.geometry,
            coeffs: self.coeffs.iter().map(|z| z * c).collect(),
        }
    }

    /// Keeps coefficients where `keep(flat_index)` holds.
    pub fn masked<F: Fn(usize) -> bool>(&self, keep: F) -> SpectralField {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &z)| if keep(i) { z } else { C64::default() })
            .collect();
        SpectralField {
            geometry: self.geometry,
            coeffs,
        }
    }
}

/// Trapezoidal-lattice Fourier coefficients of `field`.
pub fn forward_transform(field: &PhysicalField) -> Result<SpectralField> {
    if !field.is_finite() {
        return Err(Error::Data("non-finite samples in field".into()));
    }
    Ok(forward_unchecked(field))
}

pub(crate) fn forward_unchecked(field: &PhysicalField) -> SpectralField {
    let g = field.geometry;
    let mut coeffs = field.samples.clone();
    Fft4::for_grid(g.grid()).forward(&mut coeffs);
    let scale = 1.0 / g.len() as f64;
    exec::for_each_chunk_mut(&mut coeffs, exec::REDUCE_CHUNK, |_, ch| {
        ch.iter_mut().for_each(|z| *z *= scale)
    });
    SpectralField {
        geometry: g,
        coeffs,
    }
}

/// Sums the Fourier series back onto the grid.
pub fn inverse_transform(spec: &SpectralField) -> PhysicalField {
    let mut samples = spec.coeffs.clone();
    Fft4::for_grid(spec.geometry.grid()).inverse(&mut samples);
    PhysicalField {
        geometry: spec.geometry,
        samples,
    }
}

/// Standard norms of a field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldNorms {
    pub l2: f64,
    pub l4: f64,
    pub hdot1: f64,
    pub h1: f64,
}

impl FieldNorms {
    /// sqrt(||u||_{Hdot1}^2 + c_star ||u||_{L2}^2).
    pub fn h1_star(&self, c_star: f64) -> f64 {
        (self.hdot1 * self.hdot1 + c_star * self.l2 * self.l2).sqrt()
    }
}

pub fn norms(field: &PhysicalField) -> Result<FieldNorms> {
    let spec = forward_transform(field)?;
    Ok(norms_of(field, &spec))
}

/// Norms from both representations of the same field.
pub fn norms_of(field: &PhysicalField, spec: &SpectralField) -> FieldNorms {
    let l2_sq = spec.l2_sq();
    let hdot1_sq = spec.hdot1_sq();
    FieldNorms {
        l2: l2_sq.sqrt(),
        l4: field.integral_abs_pow(4.0).powf(0.25),
        hdot1: hdot1_sq.sqrt(),
        h1: (l2_sq + hdot1_sq).sqrt(),
    }
}

/// L^p norm by grid quadrature.
pub fn lp_norm(field: &PhysicalField, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("L^p norm needs p >= 1, got {p}")));
    }
    Ok(field.integral_abs_pow(p).powf(1.0 / p))
}

/// Sharp Littlewood-Paley projection P_N.
pub fn lp_project(field: &SpectralField, shell: DyadicShell) -> SpectralField {
    let table = field.geometry.shell_table();
    let n = shell.scale();
    field.masked(|i| table[i] == n)
}

/// Projection onto the modes with center_i - N/2 <= n_i < center_i + N/2.
pub fn cube_project(field: &SpectralField, center: &Mode, side: u32) -> SpectralField {
    let g = field.geometry;
    let half = side as i64 / 2;
    let lo: [i64; 4] = std::array::from_fn(|a| center.n[a] - half);
    let hi: [i64; 4] = std::array::from_fn(|a| center.n[a] - half + side as i64);
    field.masked(|i| {
        let m = g.mode_at(i);
        (0..4).all(|a| lo[a] <= m.n[a] && m.n[a] < hi[a])
    })
}

/// Smooth radial bump: 1 inside `radius1`, 0 outside `radius2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoffProfile {
    pub radius1: f64,
    pub radius2: f64,
}

impl Default for CutoffProfile {
    fn default() -> Self {
        Self {
            radius1: 1.0,
            radius2: 2.0,
        }
    }
}

impl CutoffProfile {
    /// eta(r) = exp(1 - 1/(1 - s^2)) with s = (r - r1)/(r2 - r1) on the transition band.
    pub fn radial(&self, r: f64) -> f64 {
        if r <= self.radius1 {
            1.0
        } else if r >= self.radius2 {
            0.0
        } else {
            let s = (r - self.radius1) / (self.radius2 - self.radius1);
            (1.0 - 1.0 / (1.0 - s * s)).exp()
        }
    }
}

/// The standard cutoff eta evaluated at a point of R^4.
pub fn cutoff_eval(profile: &CutoffProfile, x: &[f64; 4]) -> f64 {
    profile.radial(x.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Minimal-image representative of `x` in the box [-lambda/2, lambda/2)^4.
pub fn minimal_image(x: [f64; 4], lambda: [f64; 4]) -> [f64; 4] {
    std::array::from_fn(|a| {
        let l = lambda[a];
        let mut y = x[a].rem_euclid(l);
        if y >= 0.5 * l {
            y -= l;
        }
        y
    })
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"TNLS";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Writes the binary snapshot: magic, version, grid, lambda, then interleaved
/// little-endian (re, im) samples.
pub fn write_snapshot<W: Write>(mut w: W, field: &PhysicalField) -> std::io::Result<()> {
    let g = field.geometry;
    let mut buf = Vec::with_capacity(56 + 16 * field.samples.len());
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    for n in g.grid() {
        buf.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for l in g.lambda() {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    for z in &field.samples {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<PhysicalField> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Data(format!("snapshot read failed: {e}")))?;
    if bytes.len() < 56 || &bytes[..4] != SNAPSHOT_MAGIC {
        return Err(Error::Data("not a TNLS snapshot".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != SNAPSHOT_VERSION {
        return Err(Error::Data(format!(
            "unsupported snapshot version {version}"
        )));
    }
    let grid: [usize; 4] = std::array::from_fn(|a| u32_at(8 + 4 * a) as usize);
    let lambda: [f64; 4] = std::array::from_fn(|a| f64_at(24 + 8 * a));
    let geometry = TorusGeometry::new(lambda, grid)?;
    let n = geometry.len();
    if bytes.len() != 56 + 16 * n {
        return Err(Error::Data(format!(
            "snapshot payload has {} bytes, expected {}",
            bytes.len() - 56,
            16 * n
        )));
    }
    let samples = (0..n)
        .map(|i| C64::new(f64_at(56 + 16 * i), f64_at(64 + 16 * i)))
        .collect();
    Ok(PhysicalField { geometry, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_field(g: TorusGeometry, seed: u64) -> PhysicalField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..g.len())
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        PhysicalField::new(g, samples).unwrap()
    }

    fn smooth_random(g: TorusGeometry, seed: u64, kmax: i64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = SpectralField::zeros(g);
        for i in 0..g.len() {
            let m = g.mode_at(i);
            if m.n.iter().all(|x| x.abs() <= kmax) {
                s.coeffs[i] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        s
    }

    #[test]
    fn constant_and_plane_wave_coefficients() {
        let g = TorusGeometry::unit(8).unwrap();
        let c = C64::new(0.3, -1.2);
        let s = forward_transform(&PhysicalField::constant(g, c)).unwrap();
        assert!((s.coeffs[0] - c).norm() < 1e-15);
        assert!(s.coeffs[1..].iter().all(|z| z.norm() < 1e-15));

        let m = Mode::new([1, 0, 0, 0]);
        let pw = PhysicalField::plane_wave(g, m, C64::new(1.0, 0.0)).unwrap();
        let s = forward_transform(&pw).unwrap();
        let k = g.index_of(&m).unwrap();
        for (i, z) in s.coeffs.iter().enumerate() {
            let want = if i == k { 1.0 } else { 0.0 };
            assert!((z - want).norm() < 1e-14);
        }
    }

    #[test]
    fn roundtrip_and_plancherel() {
        let g = TorusGeometry::new([1.0, 2.0, 0.5, 1.5], [8, 10, 8, 12]).unwrap();
        let u = random_field(g, 7);
        let s = forward_transform(&u).unwrap();
        let back = inverse_transform(&s);
        let dev = u
            .samples
            .iter()
            .zip(&back.samples)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(dev < 1e-12 * u.max_abs());
        let l2_grid = u.integral_abs_pow(2.0);
        assert!((s.l2_sq() - l2_grid).abs() < 1e-12 * l2_grid);
    }

    #[test]
    fn non_finite_is_rejected() {
        let g = TorusGeometry::unit(8).unwrap();
        let mut u = PhysicalField::zeros(g);
        u.samples[3] = C64::new(f64::NAN, 0.0);
        assert!(matches!(forward_transform(&u), Err(Error::Data(_))));
    }

    #[test]
    fn norm_examples() {
        let g = TorusGeometry::unit(8).unwrap();
        let n = norms(&PhysicalField::constant(g, C64::new(1.0, 0.0))).unwrap();
        assert!((n.h1_star(10.5) - 3.240_37).abs() < 1e-5);
        let n = norms(&PhysicalField::constant(g, C64::new(2.0, 0.0))).unwrap();
        assert!((n.l2 * n.l2 - 4.0).abs() < 1e-12);
        let c = C64::new(0.5, 0.5);
        let pw = PhysicalField::plane_wave(g, Mode::new([1, 0, 0, 0]), c).unwrap();
        let n = norms(&pw).unwrap();
        assert!((n.hdot1 * n.hdot1 - 4.0 * PI * PI * c.norm_sqr()).abs() < 1e-12);
        assert!(matches!(lp_norm(&pw, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn h1_star_is_comparable_to_h1() {
        let g = TorusGeometry::unit(8).unwrap();
        let u = inverse_transform(&smooth_random(g, 3, 2));
        let n = norms(&u).unwrap();
        for c in [0.2, 1.0, 10.5] {
            let hs = n.h1_star(c);
            assert!(hs >= f64::min(1.0, c.sqrt()) * n.h1 * (1.0 - 1e-12));
            assert!(hs <= f64::max(1.0, c.sqrt()) * n.h1 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn gradient_matches_spectral_hdot1() {
        let g = TorusGeometry::new([1.0, 1.3, 1.0, 0.8], [8, 8, 10, 8]).unwrap();
        let s = smooth_random(g, 11, 3);
        let mut grad_sq = 0.0;
        for a in 0..4 {
            let mut d = s.clone();
            for (i, z) in d.coeffs.iter_mut().enumerate() {
                let w = frequency(&g, &g.mode_at(i)).unwrap();
                *z *= C64::new(0.0, w[a]);
            }
            grad_sq += inverse_transform(&d).integral_abs_pow(2.0);
        }
        let h = s.hdot1_sq();
        assert!((grad_sq - h).abs() < 1e-10 * h);
    }

    #[test]
    fn projector_algebra() {
        let g = TorusGeometry::unit(16).unwrap();
        let u = forward_transform(&random_field(g, 5)).unwrap();
        let mut total = SpectralField::zeros(g);
        for n in crate::lattice::shells_up_to(g.max_shell()) {
            let sh = DyadicShell::new(n).unwrap();
            let p = lp_project(&u, sh);
            assert_eq!(lp_project(&p, sh), p);
            let other = DyadicShell::new(if n == 1 { 2 } else { n / 2 }).unwrap();
            assert!(lp_project(&p, other)
                .coeffs
                .iter()
                .all(|z| *z == C64::default()));
            total = total.add(&p);
        }
        let dev = total
            .coeffs
            .iter()
            .zip(&u.coeffs)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(dev < 1e-12);

        let v = forward_transform(&random_field(g, 6)).unwrap();
        let sh = DyadicShell::new(4).unwrap();
        let lhs = lp_project(&u, sh).inner_l2(&v);
        let rhs = u.inner_l2(&lp_project(&v, sh));
        assert!((lhs - rhs).norm() < 1e-12 * lhs.norm().max(1.0));
    }

    #[test]
    fn single_mode_shell_membership() {
        let g = TorusGeometry::unit(16).unwrap();
        let m = Mode::new([3, 0, 0, 0]);
        let u = SpectralField::from_modes(g, &[(m, C64::new(1.0, 0.0))]).unwrap();
        let norm = |s: &SpectralField| s.l2_sq();
        assert_eq!(norm(&lp_project(&u, DyadicShell::new(4).unwrap())), 1.0);
        assert_eq!(norm(&lp_project(&u, DyadicShell::new(2).unwrap())), 0.0);
        assert_eq!(norm(&lp_project(&u, DyadicShell::new(8).unwrap())), 0.0);
    }

    #[test]
    fn cube_projection() {
        let g = TorusGeometry::unit(8).unwrap();
        let u = forward_transform(&random_field(g, 9)).unwrap();
        assert_eq!(cube_project(&u, &Mode::ZERO, 8), u);
        let a = cube_project(&u, &Mode::new([-2, 0, 0, 0]), 4);
        let b = cube_project(&u, &Mode::new([2, 0, 0, 0]), 4);
        for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
            assert!(x.norm() == 0.0 || y.norm() == 0.0);
        }
        assert!(a.l2_sq() <= u.l2_sq());
    }

    #[test]
    fn cutoff_values() {
        let eta = CutoffProfile::default();
        assert_eq!(cutoff_eval(&eta, &[0.5, 0.0, 0.0, 0.0]), 1.0);
        assert_eq!(cutoff_eval(&eta, &[0.0, 3.0, 0.0, 0.0]), 0.0);
        let mid = eta.radial(1.5);
        assert!(mid > 0.0 && mid < 1.0);
        assert!((mid - (1.0f64 - 1.0 / 0.75).exp()).abs() < 1e-15);
        let mut prev = 1.0;
        for k in 1..100 {
            let v = eta.radial(1.0 + k as f64 / 100.0);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn snapshot_roundtrip_is_bitwise() {
        let g = TorusGeometry::new([1.0, 2.5, 1.0, 0.75], [8, 8, 10, 8]).unwrap();
        let u = random_field(g, 2);
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &u).unwrap();
        assert_eq!(&buf[..4], b"TNLS");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 10);
        assert_eq!(f64::from_le_bytes(buf[32..40].try_into().unwrap()), 2.5);
        assert_eq!(
            f64::from_le_bytes(buf[56..64].try_into().unwrap()),
            u.samples[0].re
        );
        let back = read_snapshot(&buf[..]).unwrap();
        assert_eq!(back.geometry, u.geometry);
        for (a, b) in back.samples.iter().zip(&u.samples) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn minimal_image_is_centered() {
        let y = minimal_image([0.75, 0.25, 1.5, -0.6], [1.0; 4]);
        assert_eq!(y, [-0.25, 0.25, -0.5, 0.4]);
    }
}
