//! Adaptive Gauss-Kronrod (7/15) quadrature.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

/// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Neumaier-compensated sum; the error does not grow with the number of terms.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Kronrod estimate and |Kronrod - Gauss| on one interval.
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

/// Integrates `f` over [a, b] by bisecting the interval with the largest error
/// until the summed error is below max(abs_tol, rel_tol * |value|).
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> Result<Quadrature> {
    let (v, e) = gk15(&f, a, b);
    let mut parts = vec![(a, b, v, e)];
    loop {
        let value: f64 = parts.iter().map(|p| p.2).sum();
        let error: f64 = parts.iter().map(|p| p.3).sum();
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return Ok(Quadrature {
                value,
                error,
                intervals: parts.len(),
            });
        }
        if parts.len() >= max_intervals {
            return Err(Error::Numeric(format!(
                "quadrature on [{a}, {b}] did not converge: error {error:e} after {} intervals",
                parts.len()
            )));
        }
        let (i, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .unwrap();
        let (lo, hi, _, _) = parts.swap_remove(i);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}

/// Integral over [0, r_max] split at 1, 2, 4, ... so each piece sees one scale.
pub fn integrate_dyadic<F: Fn(f64) -> f64>(f: F, r_max: f64, rel_tol: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut lo = 0.0;
    let mut hi: f64 = 1.0;
    while lo < r_max {
        let top = hi.min(r_max);
        total += integrate(&f, lo, top, 0.0, rel_tol, 2000)?.value;
        lo = top;
        hi *= 2.0;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancelled_terms() {
        assert_eq!(compensated_sum([1.0, 1e100, 1.0, -1e100]), 2.0);
        let tenths = std::iter::repeat_n(0.1, 1_000_000);
        assert!((compensated_sum(tenths) - 100_000.0).abs() < 1e-9);
    }

    fn monomial_exact(k: i32) -> f64 {
        if k % 2 == 1 {
            0.0
        } else {
            2.0 / (k as f64 + 1.0)
        }
    }

    #[test]
    fn kronrod_rule_exact_to_degree_22() {
        for k in 0..=22 {
            let (v, _) = gk15(&|x: f64| x.powi(k), -1.0, 1.0);
            assert!((v - monomial_exact(k)).abs() < 1e-14, "degree {k}");
        }
        let (v, _) = gk15(&|x: f64| x.powi(24), -1.0, 1.0);
        assert!((v - monomial_exact(24)).abs() > 1e-10);
    }

    #[test]
    fn gauss_rule_exact_to_degree_13() {
        for k in 0..=13 {
            let f = |x: f64| x.powi(k);
            let mut g = WG[3] * f(0.0);
            for j in (1..7).step_by(2) {
                g += WG[j / 2] * (f(-XGK[j]) + f(XGK[j]));
            }
            assert!((g - monomial_exact(k)).abs() < 1e-14, "degree {k}");
        }
    }

    #[test]
    fn adaptive_handles_peaked_integrand() {
        let q = integrate(|x: f64| 1.0 / (1e-4 + x * x), -1.0, 1.0, 0.0, 1e-12, 500).unwrap();
        let exact = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert!((q.value - exact).abs() < 1e-10 * exact);
    }

    #[test]
    fn non_convergence_is_reported() {
        let r = integrate(
            |x: f64| if x < 0.3 { 0.0 } else { 1.0 },
            0.0,
            1.0,
            0.0,
            1e-15,
            4,
        );
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
