//! Initial-data catalog.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{forward_transform, inverse_transform, SpectralField, C64};
use crate::invariants::{EnergyParts, SobolevConstants};
use crate::lattice::{Mode, TorusGeometry};
use crate::profiles::{make_profile_on_torus, ChartMap, EuclideanProfile};

/// How a torus bubble is scaled after construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "by", rename_all = "snake_case")]
pub enum BubbleScale {
    /// Multiply f_N by a fixed factor.
    Amplitude { value: f64 },
    /// Scale so that ||f||_{H1*} equals `value` times ||W||_{Hdot1}.
    H1StarFraction { value: f64 },
    /// Scale so that ||f||_{Hdot1} equals `value` times ||W||_{Hdot1}.
    Hdot1Fraction { value: f64 },
    /// Smallest amplitude with E_*(a f) = `value` * E_W.
    EnergyFraction { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    Constant {
        re: f64,
        #[serde(default)]
        im: f64,
    },
    SingleMode {
        n: [i64; 4],
        re: f64,
        #[serde(default)]
        im: f64,
    },
    RandomH1 {
        /// Target ||u||_{H1}.
        #[serde(default = "one")]
        h1: f64,
        /// Largest |n| carrying energy; defaults to a quarter of the smallest grid size.
        #[serde(default)]
        kmax: Option<f64>,
    },
    TorusBubble {
        profile: EuclideanProfile,
        scale_n: f64,
        #[serde(default)]
        center: [f64; 4],
        #[serde(default)]
        scale: Option<BubbleScale>,
    },
    SumOfBubbles {
        profile: EuclideanProfile,
        scales: Vec<f64>,
        centers: Vec<[f64; 4]>,
        #[serde(default)]
        times: Vec<f64>,
        #[serde(default = "one")]
        amplitude: f64,
    },
}

fn one() -> f64 {
    1.0
}

/// <n>^{-3}-weighted random coefficients on |n| <= kmax with random phases,
/// normalized to the requested H1 norm.
pub fn random_h1(geometry: TorusGeometry, seed: u64, h1: f64, kmax: f64) -> Result<SpectralField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = SpectralField::zeros(geometry);
    let k2 = kmax * kmax;
    for i in 0..geometry.len() {
        let m = geometry.mode_at(i);
        let n2 = m.norm_sq() as f64;
        let amp: f64 = rng.gen_range(0.5..1.5);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        if n2 <= k2 {
            s.coeffs[i] = C64::from_polar(amp * (1.0 + n2).powf(-1.5), phase);
        }
    }
    let norm = s.h1_sq().sqrt();
    if norm == 0.0 {
        return Err(Error::Domain("random data has no modes below kmax".into()));
    }
    Ok(s.scaled(C64::new(h1 / norm, 0.0)))
}

/// Builds initial data in spectral form.
pub fn build_initial(
    spec: &InitialData,
    geometry: TorusGeometry,
    seed: u64,
    constants: &SobolevConstants,
) -> Result<SpectralField> {
    match spec {
        InitialData::Constant { re, im } => {
            SpectralField::from_modes(geometry, &[(Mode::ZERO, C64::new(*re, *im))])
        }
        InitialData::SingleMode { n, re, im } => {
            SpectralField::from_modes(geometry, &[(Mode::new(*n), C64::new(*re, *im))])
        }
        InitialData::RandomH1 { h1, kmax } => {
            let g = geometry.grid();
            let k = kmax.unwrap_or(*g.iter().min().unwrap() as f64 / 4.0);
            random_h1(geometry, seed, *h1, k)
        }
        InitialData::TorusBubble {
            profile,
            scale_n,
            center,
            scale,
        } => {
            let chart = ChartMap::for_geometry(&geometry);
            let f = make_profile_on_torus(profile, *scale_n, &geometry, &chart)?;
            let mut s = forward_transform(&f)?;
            if *center != [0.0; 4] {
                s = crate::profiles::translate_modulate(&s, 0.0, *center);
            }
            match scale {
                None => Ok(s),
                Some(sc) => scale_bubble(&s, sc, constants),
            }
        }
        InitialData::SumOfBubbles {
            profile,
            scales,
            centers,
            times,
            amplitude,
        } => {
            if scales.len() != centers.len() || (!times.is_empty() && times.len() != scales.len()) {
                return Err(Error::config(
                    "initial.centers",
                    "scales, centers and times must have equal lengths",
                ));
            }
            let chart = ChartMap::for_geometry(&geometry);
            let mut total = SpectralField::zeros(geometry);
            for (k, (&n, &x)) in scales.iter().zip(centers).enumerate() {
                let f = forward_transform(&make_profile_on_torus(profile, n, &geometry, &chart)?)?;
                let t = times.get(k).copied().unwrap_or(0.0);
                total = total.add(&crate::profiles::translate_modulate(&f, t, x));
            }
            Ok(total.scaled(C64::new(*amplitude, 0.0)))
        }
    }
}

/// Applies a [`BubbleScale`] rule.
pub fn scale_bubble(
    s: &SpectralField,
    rule: &BubbleScale,
    constants: &SobolevConstants,
) -> Result<SpectralField> {
    let parts = EnergyParts {
        l2_sq: s.l2_sq(),
        hdot1_sq: s.hdot1_sq(),
        l4_pow4: inverse_transform(s).integral_abs_pow(4.0),
    };
    let w = constants.w_hdot1();
    let a = match *rule {
        BubbleScale::Amplitude { value } => value,
        BubbleScale::H1StarFraction { value } => value * w / parts.h1_star(constants.c_star),
        BubbleScale::Hdot1Fraction { value } => value * w / parts.hdot1_sq.sqrt(),
        BubbleScale::EnergyFraction { value } => energy_scaling(&parts, constants, value)?,
    };
    if !a.is_finite() {
        return Err(Error::Domain("bubble scaling is not finite".into()));
    }
    Ok(s.scaled(C64::new(a, 0.0)))
}

/// Smallest a > 0 with E_*(a f) = target * E_W, by bisection below the maximum
/// of a -> a^2 Y/2 - a^4 L/4.
fn energy_scaling(p: &EnergyParts, c: &SobolevConstants, target: f64) -> Result<f64> {
    let y = p.h1_star_sq(c.c_star);
    let l = p.l4_pow4;
    let level = target * c.e_w;
    if y == 0.0 {
        return Err(Error::Domain(
            "cannot scale a zero field to an energy level".into(),
        ));
    }
    let e = |a: f64| 0.5 * a * a * y - 0.25 * a.powi(4) * l;
    let a_peak = if l > 0.0 {
        (y / l).sqrt()
    } else {
        f64::INFINITY
    };
    let mut hi = if a_peak.is_finite() {
        a_peak
    } else {
        (2.0 * level / y).sqrt() * 2.0
    };
    if e(hi) < level {
        return Err(Error::Domain(format!(
            "energy level {level} is above the maximum {} along the scaling ray",
            e(hi)
        )));
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if e(mid) < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::invariants::compute_sobolev_constants;

    #[test]
    fn random_data_is_normalized_and_seeded() {
        let g = TorusGeometry::unit(8).unwrap();
        let a = random_h1(g, 3, 1.0, 2.0).unwrap();
        let b = random_h1(g, 3, 1.0, 2.0).unwrap();
        let c = random_h1(g, 4, 1.0, 2.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!((a.h1_sq().sqrt() - 1.0).abs() < 1e-12);
        for (i, z) in a.coeffs.iter().enumerate() {
            if g.mode_at(i).norm_sq() > 4 {
                assert_eq!(*z, C64::default());
            }
        }
    }

    #[test]
    fn energy_fraction_scaling_hits_level() {
        let g = TorusGeometry::unit(16).unwrap();
        let k = compute_sobolev_constants(1e-10).unwrap().for_geometry(&g);
        let spec = InitialData::TorusBubble {
            profile: EuclideanProfile::WBubble,
            scale_n: 16.0,
            center: [0.0; 4],
            scale: Some(BubbleScale::EnergyFraction { value: 0.5 }),
        };
        let u = build_initial(&spec, g, 0, &k).unwrap();
        let e = EnergyParts::of(&inverse_transform(&u)).unwrap().e_star(&k);
        assert!((e / k.e_w - 0.5).abs() < 1e-9);
    }
}
