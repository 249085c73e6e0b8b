//! Torus geometry, the frequency lattice and dyadic shells.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectangular torus R^4 / (prod lambda_i Z) sampled on a uniform grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusGeometry {
    lambda: [f64; 4],
    grid: [usize; 4],
}

impl TorusGeometry {
    pub fn new(lambda: [f64; 4], grid: [usize; 4]) -> Result<Self> {
        for (i, &l) in lambda.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::Geometry(format!(
                    "lambda[{i}] = {l} must be positive"
                )));
            }
        }
        for (i, &g) in grid.iter().enumerate() {
            if g < 8 || g % 2 != 0 {
                return Err(Error::Geometry(format!(
                    "grid[{i}] = {g} must be even and >= 8"
                )));
            }
        }
        Ok(Self { lambda, grid })
    }

    /// Unit torus with `g` points per axis.
    pub fn unit(g: usize) -> Result<Self> {
        Self::new([1.0; 4], [g; 4])
    }

    pub fn lambda(&self) -> [f64; 4] {
        self.lambda
    }

    pub fn grid(&self) -> [usize; 4] {
        self.grid
    }

    pub fn volume(&self) -> f64 {
        self.lambda.iter().product()
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.volume() / self.len() as f64
    }

    pub fn is_unit(&self) -> bool {
        self.lambda == [1.0; 4]
    }

    /// Row-major strides, axis 0 slowest.
    pub fn strides(&self) -> [usize; 4] {
        let g = self.grid;
        [g[1] * g[2] * g[3], g[2] * g[3], g[3], 1]
    }

    /// Multi-index of flat position `idx`.
    pub fn unravel(&self, idx: usize) -> [usize; 4] {
        let g = self.grid;
        let i3 = idx % g[3];
        let r = idx / g[3];
        let i2 = r % g[2];
        let r = r / g[2];
        let i1 = r % g[1];
        [r / g[1], i1, i2, i3]
    }

    /// Spatial coordinate of grid point `idx`: x_i = j_i * lambda_i / grid_i.
    pub fn point(&self, idx: usize) -> [f64; 4] {
        let j = self.unravel(idx);
        std::array::from_fn(|a| j[a] as f64 * self.lambda[a] / self.grid[a] as f64)
    }

    /// Integer frequency stored at flat spectral position `idx` (FFT ordering;
    /// the Nyquist index maps to -grid/2).
    pub fn mode_at(&self, idx: usize) -> Mode {
        let j = self.unravel(idx);
        Mode::new(std::array::from_fn(|a| wrap_index(j[a], self.grid[a])))
    }

    /// Flat spectral position of `mode`, if representable.
    pub fn index_of(&self, mode: &Mode) -> Option<usize> {
        if !self.contains(mode) {
            return None;
        }
        let s = self.strides();
        let mut idx = 0;
        for (a, stride) in s.iter().enumerate() {
            let g = self.grid[a] as i64;
            idx += (mode.n[a].rem_euclid(g)) as usize * stride;
        }
        Some(idx)
    }

    /// Whether `mode` lies in the Nyquist range |n_i| <= grid_i/2.
    pub fn contains(&self, mode: &Mode) -> bool {
        (0..4).all(|a| mode.n[a].unsigned_abs() as usize <= self.grid[a] / 2)
    }

    /// Dispersion |omega(n)|^2 for every spectral position.
    pub fn dispersion_table(&self) -> Vec<f64> {
        let axes: [Vec<f64>; 4] = std::array::from_fn(|a| {
            (0..self.grid[a])
                .map(|j| {
                    let w = 2.0 * PI * wrap_index(j, self.grid[a]) as f64 / self.lambda[a];
                    w * w
                })
                .collect()
        });
        self.outer_sum(&axes)
    }

    /// |n|^2 of the integer index for every spectral position.
    pub fn index_norm_sq_table(&self) -> Vec<i64> {
        let g = self.grid;
        let mut out = Vec::with_capacity(self.len());
        for j0 in 0..g[0] {
            let a = sq(wrap_index(j0, g[0]));
            for j1 in 0..g[1] {
                let b = a + sq(wrap_index(j1, g[1]));
                for j2 in 0..g[2] {
                    let c = b + sq(wrap_index(j2, g[2]));
                    for j3 in 0..g[3] {
                        out.push(c + sq(wrap_index(j3, g[3])));
                    }
                }
            }
        }
        out
    }

    /// Dyadic shell (as its scale N) for every spectral position.
    pub fn shell_table(&self) -> Vec<u32> {
        self.index_norm_sq_table()
            .into_iter()
            .map(shell_of_norm_sq)
            .collect()
    }

    /// Largest shell scale present on this grid.
    pub fn max_shell(&self) -> u32 {
        let m: i64 = self.grid.iter().map(|&g| sq(g as i64 / 2)).sum();
        shell_of_norm_sq(m)
    }

    fn outer_sum(&self, axes: &[Vec<f64>; 4]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for &a in &axes[0] {
            for &b in &axes[1] {
                let ab = a + b;
                for &c in &axes[2] {
                    let abc = ab + c;
                    for &d in &axes[3] {
                        out.push(abc + d);
                    }
                }
            }
        }
        out
    }
}

fn sq(x: i64) -> i64 {
    x * x
}

/// Signed frequency represented by FFT position `j` on an axis of `g` points.
pub fn wrap_index(j: usize, g: usize) -> i64 {
    if j < g / 2 {
        j as i64
    } else {
        j as i64 - g as i64
    }
}

/// Integer lattice index n in Z^4.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mode {
    pub n: [i64; 4],
}

impl Mode {
    pub const ZERO: Mode = Mode { n: [0; 4] };

    pub fn new(n: [i64; 4]) -> Self {
        Self { n }
    }

    pub fn norm_sq(&self) -> i64 {
        self.n.iter().map(|&x| x * x).sum()
    }
}

/// Dyadic shell scale N in {1, 2, 4, ...}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicShell(u32);

impl DyadicShell {
    pub fn new(n: u32) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::Range(format!(
                "shell scale {n} is not a power of two"
            )));
        }
        Ok(Self(n))
    }

    pub fn scale(&self) -> u32 {
        self.0
    }

    /// Whether an index with |n|^2 = `norm_sq` belongs to this shell.
    pub fn contains_norm_sq(&self, norm_sq: i64) -> bool {
        shell_of_norm_sq(norm_sq) == self.0
    }
}

/// omega_i = 2 pi n_i / lambda_i.
pub fn frequency(geometry: &TorusGeometry, mode: &Mode) -> Result<[f64; 4]> {
    if !geometry.contains(mode) {
        return Err(Error::Range(format!(
            "mode {:?} outside Nyquist range of grid {:?}",
            mode.n,
            geometry.grid()
        )));
    }
    let l = geometry.lambda();
    Ok(std::array::from_fn(|a| 2.0 * PI * mode.n[a] as f64 / l[a]))
}

/// |omega(n)|^2.
pub fn dispersion(geometry: &TorusGeometry, mode: &Mode) -> Result<f64> {
    Ok(frequency(geometry, mode)?.iter().map(|w| w * w).sum())
}

pub fn shell_of(mode: &Mode) -> DyadicShell {
    DyadicShell(shell_of_norm_sq(mode.norm_sq()))
}

/// N = 1 for |n| <= 1, otherwise the power of two with N/2 < |n| <= N.
/// Works on |n|^2 so the comparison is exact.
pub fn shell_of_norm_sq(m: i64) -> u32 {
    if m <= 1 {
        return 1;
    }
    let mut n: i64 = 2;
    while n * n < m {
        n *= 2;
    }
    n as u32
}

/// All shell scales up to and including `max`.
pub fn shells_up_to(max: u32) -> Vec<u32> {
    let mut v = vec![1];
    while *v.last().unwrap() < max {
        let next = v.last().unwrap() * 2;
        v.push(next);
    }
    v
}
