//! Mass, energies, the ground state W, best Sobolev constants and the
//! energy-trapping checks.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::TrajectoryRecord;
use crate::field::{forward_transform, PhysicalField};
use crate::lattice::TorusGeometry;
use crate::quadrature::integrate_dyadic;

/// Surface measure of the unit sphere in R^4.
pub const SPHERE3_AREA: f64 = 2.0 * PI * PI;

/// Safety factor applied to the constant-field lower bound for c_star.
pub const C_STAR_SAFETY: f64 = 1.05;

/// The three integrals every energy functional is built from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyParts {
    pub l2_sq: f64,
    pub hdot1_sq: f64,
    pub l4_pow4: f64,
}

impl EnergyParts {
    pub fn of(field: &PhysicalField) -> Result<Self> {
        let spec = forward_transform(field)?;
        Ok(Self {
            l2_sq: field.integral_abs_pow(2.0),
            hdot1_sq: spec.hdot1_sq(),
            l4_pow4: field.integral_abs_pow(4.0),
        })
    }

    pub fn energy(&self, mu: i32) -> f64 {
        0.5 * self.hdot1_sq + 0.25 * mu as f64 * self.l4_pow4
    }

    pub fn h1_star_sq(&self, c_star: f64) -> f64 {
        self.hdot1_sq + c_star * self.l2_sq
    }

    pub fn h1_star(&self, c_star: f64) -> f64 {
        self.h1_star_sq(c_star).sqrt()
    }

    pub fn e_star(&self, c: &SobolevConstants) -> f64 {
        0.5 * self.h1_star_sq(c.c_star) - 0.25 * self.l4_pow4
    }

    pub fn e_star_star(&self, c: &SobolevConstants) -> f64 {
        self.e_star(c) + self.e_star_star_correction(c)
    }

    fn e_star_star_correction(&self, c: &SobolevConstants) -> f64 {
        0.25 * c.c_star * c.c_star * c.c4.powi(4) * self.l2_sq * self.l2_sq
    }

    /// E_* built on the energy of the flow with sign `mu`: equal to
    /// [`Self::e_star`] for mu = -1 and conserved by the flow for every mu.
    pub fn flow_e_star(&self, c: &SobolevConstants, mu: i32) -> f64 {
        0.5 * self.h1_star_sq(c.c_star) + 0.25 * mu as f64 * self.l4_pow4
    }

    pub fn flow_e_star_star(&self, c: &SobolevConstants, mu: i32) -> f64 {
        self.flow_e_star(c, mu) + self.e_star_star_correction(c)
    }
}

pub fn mass(field: &PhysicalField) -> f64 {
    field.integral_abs_pow(2.0)
}

/// E = 1/2 ||grad u||^2 + mu/4 ||u||_4^4.
pub fn energy(field: &PhysicalField, mu: i32) -> Result<f64> {
    Ok(EnergyParts::of(field)?.energy(mu))
}

pub fn modified_energy_star(field: &PhysicalField, c: &SobolevConstants) -> Result<f64> {
    Ok(EnergyParts::of(field)?.e_star(c))
}

pub fn modified_energy_star_star(field: &PhysicalField, c: &SobolevConstants) -> Result<f64> {
    Ok(EnergyParts::of(field)?.e_star_star(c))
}

/// W(r) = 1 / (1 + r^2/8).
pub fn ground_state_radial(r: f64) -> f64 {
    8.0 / (8.0 + r * r)
}

pub fn ground_state_value(x: &[f64; 4]) -> f64 {
    ground_state_radial(x.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// W'(r).
pub fn ground_state_derivative(r: f64) -> f64 {
    let q = 8.0 + r * r;
    -16.0 * r / (q * q)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundStateResidual {
    pub max_abs: f64,
    pub at_radius: f64,
}

/// Max |Lap W + W^3| over `radial_grid` using W'' + 3 W'/r, with W'/r taken
/// in closed form so r = 0 is regular.
pub fn verify_ground_state_equation(radial_grid: &[f64]) -> GroundStateResidual {
    let mut out = GroundStateResidual {
        max_abs: 0.0,
        at_radius: 0.0,
    };
    for &r in radial_grid {
        let q = 8.0 + r * r;
        let w_over_r = -16.0 / (q * q);
        let w2 = -16.0 / (q * q) + 64.0 * r * r / (q * q * q);
        let w = ground_state_radial(r);
        let res = (w2 + 3.0 * w_over_r + w * w * w).abs();
        if res > out.max_abs {
            out = GroundStateResidual {
                max_abs: res,
                at_radius: r,
            };
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolevConstants {
    /// ||W||^2 in Hdot1(R^4).
    pub w_hdot1_sq: f64,
    /// ||W||^4 in L4(R^4).
    pub w_l4_pow4: f64,
    pub c4: f64,
    pub e_w: f64,
    pub c_star: f64,
    pub tolerance: f64,
}

impl SobolevConstants {
    pub fn w_hdot1(&self) -> f64 {
        self.w_hdot1_sq.sqrt()
    }

    pub fn c4_pow4(&self) -> f64 {
        self.c4.powi(4)
    }

    /// Checks ||W||^2 C4^4 = 1 and 4 E_W C4^4 = 1.
    pub fn relations_ok(&self, tol: f64) -> bool {
        let c = self.c4_pow4();
        (self.w_hdot1_sq * c - 1.0).abs() < tol && (4.0 * self.e_w * c - 1.0).abs() < tol
    }

    /// 1 / (C4^2 sqrt(volume)), the value forced by constant fields.
    pub fn c_star_lower_bound(&self, volume: f64) -> f64 {
        1.0 / (self.c4 * self.c4 * volume.sqrt())
    }

    pub fn with_c_star(mut self, c_star: f64) -> Self {
        self.c_star = c_star;
        self
    }

    /// Default c_star for `geometry`: the lower bound times [`C_STAR_SAFETY`].
    pub fn for_geometry(self, geometry: &TorusGeometry) -> Self {
        let c = C_STAR_SAFETY * self.c_star_lower_bound(geometry.volume());
        self.with_c_star(c)
    }
}

/// Radial quadrature of ||W||^2_{Hdot1} and ||W||^4_{L4} with analytic tail bounds.
/// c_star is set for a unit-volume torus; use [`SobolevConstants::for_geometry`].
pub fn compute_sobolev_constants(quadrature_tolerance: f64) -> Result<SobolevConstants> {
    let tol = quadrature_tolerance;
    if !(tol > 0.0) {
        return Err(Error::Domain(
            "quadrature tolerance must be positive".into(),
        ));
    }
    let grad = |r: f64| {
        let d = ground_state_derivative(r);
        SPHERE3_AREA * d * d * r * r * r
    };
    let quart = |r: f64| {
        let w = ground_state_radial(r);
        SPHERE3_AREA * w * w * w * w * r * r * r
    };
    // Tails beyond R: |W'|^2 r^3 <= 256 r^-3 and W^4 r^3 <= 4096 r^-5.
    let grad_tail = |r: f64| SPHERE3_AREA * 128.0 / (r * r);
    let quart_tail = |r: f64| SPHERE3_AREA * 1024.0 / r.powi(4);
    let mut r_max: f64 = 64.0;
    while grad_tail(r_max) > 0.1 * tol * 100.0 || quart_tail(r_max) > 0.1 * tol * 100.0 {
        r_max *= 2.0;
        if r_max > 1e12 {
            return Err(Error::Numeric("radial cutoff did not converge".into()));
        }
    }
    let w_hdot1_sq = integrate_dyadic(grad, r_max, 0.1 * tol)?;
    let w_l4_pow4 = integrate_dyadic(quart, r_max, 0.1 * tol)?;
    if (grad_tail(r_max) > tol * w_hdot1_sq) || (quart_tail(r_max) > tol * w_l4_pow4) {
        return Err(Error::Numeric("radial tail exceeds tolerance".into()));
    }
    let c4 = w_hdot1_sq.powf(-0.25);
    let e_w = 0.5 * w_hdot1_sq - 0.25 * w_l4_pow4;
    Ok(SobolevConstants {
        w_hdot1_sq,
        w_l4_pow4,
        c4,
        e_w,
        c_star: C_STAR_SAFETY / (c4 * c4),
        tolerance: tol,
    })
}

/// Smallest c with ||f||_4^2 <= C4^2 (||f||_{Hdot1}^2 + c ||f||_2^2) over the
/// family, never below the constant-field bound. Zero fields are skipped.
pub fn estimate_c_star(
    geometry: &TorusGeometry,
    constants: &SobolevConstants,
    trial_family: &[PhysicalField],
) -> Result<f64> {
    let mut best: Option<f64> = None;
    for f in trial_family {
        let p = EnergyParts::of(f)?;
        if p.l2_sq == 0.0 {
            continue;
        }
        let c = (p.l4_pow4.sqrt() / (constants.c4 * constants.c4) - p.hdot1_sq) / p.l2_sq;
        best = Some(best.map_or(c, |b: f64| b.max(c)));
    }
    let best = best.ok_or_else(|| Error::Domain("trial family has no nonzero field".into()))?;
    Ok(best.max(constants.c_star_lower_bound(geometry.volume())))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrappingVariant {
    /// Modified norm H1_* with energy E_*.
    Star,
    /// Homogeneous norm Hdot1 with energy E_**.
    StarStar,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrappingSample {
    pub t: f64,
    /// Trapped norm squared (H1_* or Hdot1).
    pub norm_sq: f64,
    pub energy: f64,
    pub norm_below: bool,
    pub coercive: bool,
    pub energy_bound: bool,
}

impl TrappingSample {
    pub fn passes(&self) -> bool {
        self.norm_below && self.coercive && self.energy_bound
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrappingReport {
    pub variant: TrappingVariant,
    pub delta0: f64,
    pub delta_bar: f64,
    /// Largest margin in [0, 1] for which every inequality holds at every sample.
    pub max_margin: f64,
    pub c_star: f64,
    pub samples: Vec<TrappingSample>,
    pub first_failure_time: Option<f64>,
}

impl TrappingReport {
    pub fn passed(&self) -> bool {
        self.first_failure_time.is_none() && self.delta_bar > 0.0
    }
}

/// g1(y) = y/2 - C4^4 y^2 / 4.
pub fn g1(y: f64, c4_pow4: f64) -> f64 {
    0.5 * y - 0.25 * c4_pow4 * y * y
}

/// Certified margin from delta0: with y1 the smaller root of
/// g1(y) = (1 - delta0) E_W found by bisection, delta_bar = 1 - y1 / y_max.
pub fn delta_bar_from(delta0: f64, c: &SobolevConstants) -> Result<f64> {
    if !(delta0 > 0.0 && delta0 < 1.0) {
        return Err(Error::Domain(format!(
            "delta0 = {delta0} must lie in (0, 1)"
        )));
    }
    let c4p = c.c4_pow4();
    let y_max = 1.0 / c4p;
    let level = (1.0 - delta0) * g1(y_max, c4p);
    let (mut lo, mut hi) = (0.0, y_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g1(mid, c4p) < level {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * y_max {
            break;
        }
    }
    Ok(1.0 - 0.5 * (lo + hi) / y_max)
}

fn trapped(p: &EnergyParts, c: &SobolevConstants, variant: TrappingVariant) -> (f64, f64) {
    match variant {
        TrappingVariant::Star => (p.h1_star_sq(c.c_star), p.e_star(c)),
        TrappingVariant::StarStar => (p.hdot1_sq, p.e_star_star(c)),
    }
}

/// Coercivity left-hand side for each variant.
fn coercive_lhs(p: &EnergyParts, c: &SobolevConstants, variant: TrappingVariant) -> f64 {
    match variant {
        TrappingVariant::Star => p.h1_star_sq(c.c_star) - p.l4_pow4,
        TrappingVariant::StarStar => {
            let cs = c.c_star;
            p.hdot1_sq - p.l4_pow4 + 2.0 * cs * p.l2_sq + cs * cs * c.c4_pow4() * p.l2_sq * p.l2_sq
        }
    }
}

/// Verifies the hypotheses of the trapping statement for one datum.
pub fn trapping_preconditions(
    p: &EnergyParts,
    c: &SobolevConstants,
    variant: TrappingVariant,
    delta0: f64,
) -> Result<()> {
    let (y, e) = trapped(p, c, variant);
    let name = match variant {
        TrappingVariant::Star => "star",
        TrappingVariant::StarStar => "star_star",
    };
    if !(y.sqrt() < c.w_hdot1()) {
        return Err(Error::Precondition(format!(
            "{name}/norm_below_ground_state: norm {} is not below ||W|| = {}",
            y.sqrt(),
            c.w_hdot1()
        )));
    }
    if !(e < (1.0 - delta0) * c.e_w) {
        return Err(Error::Precondition(format!(
            "{name}/energy_below_threshold: energy {e} is not below (1 - delta0) E_W = {}",
            (1.0 - delta0) * c.e_w
        )));
    }
    Ok(())
}

/// Checks the trapping inequalities along `(t, parts)` samples; preconditions
/// are checked on the first sample.
pub fn trapping_from_parts(
    samples: &[(f64, EnergyParts)],
    c: &SobolevConstants,
    variant: TrappingVariant,
    delta0: f64,
) -> Result<TrappingReport> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Domain("no samples to check".into()))?;
    trapping_preconditions(&first.1, c, variant, delta0)?;
    let delta_bar = delta_bar_from(delta0, c)?;
    let w_sq = c.w_hdot1_sq;
    let mut max_margin: f64 = 1.0;
    let mut first_failure_time = None;
    let mut out = Vec::with_capacity(samples.len());
    for (t, p) in samples {
        let (y, e) = trapped(p, c, variant);
        let lhs = coercive_lhs(p, c, variant);
        let s = TrappingSample {
            t: *t,
            norm_sq: y,
            energy: e,
            norm_below: y < (1.0 - delta_bar) * w_sq,
            coercive: lhs >= delta_bar * y,
            energy_bound: e >= 0.25 * (1.0 + delta_bar) * y,
        };
        if y > 0.0 {
            max_margin = max_margin
                .min(1.0 - y / w_sq)
                .min(lhs / y)
                .min(4.0 * e / y - 1.0);
        }
        if !s.passes() && first_failure_time.is_none() {
            first_failure_time = Some(*t);
        }
        out.push(s);
    }
    Ok(TrappingReport {
        variant,
        delta0,
        delta_bar,
        max_margin: max_margin.max(0.0),
        c_star: c.c_star,
        samples: out,
        first_failure_time,
    })
}

pub fn check_energy_trapping(
    field: &PhysicalField,
    c: &SobolevConstants,
    variant: TrappingVariant,
    delta0: f64,
) -> Result<TrappingReport> {
    trapping_from_parts(&[(0.0, EnergyParts::of(field)?)], c, variant, delta0)
}

pub fn trapping_along_flow(
    trajectory: &TrajectoryRecord,
    c: &SobolevConstants,
    variant: TrappingVariant,
    delta0: f64,
) -> Result<TrappingReport> {
    let samples: Vec<(f64, EnergyParts)> = trajectory
        .diagnostics
        .iter()
        .map(|d| (d.t, d.parts()))
        .collect();
    trapping_from_parts(&samples, c, variant, delta0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::C64;
    use crate::lattice::Mode;

    fn consts() -> SobolevConstants {
        compute_sobolev_constants(1e-12).unwrap()
    }

    #[test]
    fn ground_state_values() {
        assert_eq!(ground_state_value(&[0.0; 4]), 1.0);
        let x = [2.0, 2.0, 0.0, 0.0];
        assert!((ground_state_value(&x) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ground_state_residual_vanishes() {
        let grid: Vec<f64> = (0..=5000).map(|k| k as f64 * 0.01).collect();
        let r = verify_ground_state_equation(&grid);
        assert!(r.max_abs < 1e-10, "{r:?}");
    }

    #[test]
    fn constants_match_closed_forms() {
        let c = consts();
        let pi2 = PI * PI;
        assert!((c.w_hdot1_sq / (32.0 * pi2 / 3.0) - 1.0).abs() < 1e-10);
        assert!((c.w_l4_pow4 / (32.0 * pi2 / 3.0) - 1.0).abs() < 1e-10);
        assert!((c.e_w / (8.0 * pi2 / 3.0) - 1.0).abs() < 1e-10);
        let c4_exact = (3.0 / (32.0 * pi2)).powf(0.25);
        assert!((c.c4 / c4_exact - 1.0).abs() < 1e-10);
        assert!((c.c4 / 0.312_201 - 1.0).abs() < 1e-4);
        assert!(c.relations_ok(1e-8));
    }

    #[test]
    fn energy_examples() {
        let g = TorusGeometry::unit(8).unwrap();
        let two = PhysicalField::constant(g, C64::new(2.0, 0.0));
        assert!((mass(&two) - 4.0).abs() < 1e-12);
        let one = PhysicalField::constant(g, C64::new(1.0, 0.0));
        assert!((energy(&one, 1).unwrap() - 0.25).abs() < 1e-12);
        let c = C64::new(0.3, 0.4);
        let pw = PhysicalField::plane_wave(g, Mode::new([1, 0, 0, 0]), c).unwrap();
        for mu in [-1, 1] {
            let want = 2.0 * PI * PI * c.norm_sqr() + 0.25 * mu as f64 * c.norm_sqr().powi(2);
            assert!((energy(&pw, mu).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn modified_energy_examples() {
        let g = TorusGeometry::unit(8).unwrap();
        let k = consts().with_c_star(10.5);
        let one = PhysicalField::constant(g, C64::new(1.0, 0.0));
        assert!((modified_energy_star(&one, &k).unwrap() - 5.0).abs() < 1e-12);
        let ess = modified_energy_star_star(&one, &k).unwrap();
        let exact = 5.0 + 110.25 * 3.0 / (32.0 * PI * PI) / 4.0;
        assert!((ess - exact).abs() < 1e-10);
        assert!((ess / 5.261_84 - 1.0).abs() < 1e-4);
        let zero = PhysicalField::zeros(g);
        assert_eq!(modified_energy_star(&zero, &k).unwrap(), 0.0);
        assert_eq!(modified_energy_star_star(&zero, &k).unwrap(), 0.0);
    }

    #[test]
    fn c_star_from_constant_field() {
        let g = TorusGeometry::unit(8).unwrap();
        let k = consts();
        let one = PhysicalField::constant(g, C64::new(1.0, 0.0));
        let c = estimate_c_star(&g, &k, &[one]).unwrap();
        assert!((c - 1.0 / (k.c4 * k.c4)).abs() < 1e-9);
        assert!((c / 10.2596 - 1.0).abs() < 1e-4);
        assert!(estimate_c_star(&g, &k, &[PhysicalField::zeros(g)]).is_err());
        assert!(estimate_c_star(&g, &k, &[]).is_err());
    }

    #[test]
    fn delta_bar_is_square_root_of_delta0() {
        let k = consts();
        for d0 in [0.01, 0.05, 0.1, 0.5] {
            let d = delta_bar_from(d0, &k).unwrap();
            assert!((d - f64::sqrt(d0)).abs() < 1e-9, "{d0}: {d}");
        }
        assert!(delta_bar_from(0.0, &k).is_err());
    }

    #[test]
    fn zero_field_is_trivially_trapped() {
        let g = TorusGeometry::unit(8).unwrap();
        let k = consts().for_geometry(&g);
        for v in [TrappingVariant::Star, TrappingVariant::StarStar] {
            let r = check_energy_trapping(&PhysicalField::zeros(g), &k, v, 0.05).unwrap();
            assert!(r.passed());
            assert_eq!(r.max_margin, 1.0);
        }
    }

    #[test]
    fn high_energy_fails_precondition() {
        let g = TorusGeometry::unit(8).unwrap();
        let k = consts().for_geometry(&g);
        // Constant field with a^2 = c_star maximises E_* = c_star^2 / 4 > E_W.
        let f = PhysicalField::constant(g, C64::new(k.c_star.sqrt(), 0.0));
        assert!(modified_energy_star(&f, &k).unwrap() > k.e_w);
        match check_energy_trapping(&f, &k, TrappingVariant::Star, 0.05) {
            Err(Error::Precondition(msg)) => assert!(msg.starts_with("star/")),
            other => panic!("expected precondition error, got {other:?}"),
        }
    }
}
