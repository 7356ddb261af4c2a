//! Adaptive Gauss–Kronrod quadrature.
//!
//! A 7-point Gauss / 15-point Kronrod pair with global adaptive bisection of the
//! interval carrying the largest error estimate. Semi-infinite ranges are mapped to
//! `[0, 1)` with `x = a + s·t/(1−t)` before integration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Numeric tolerance record shared by every integral in the rate model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerance {
    /// Target relative error of each integral.
    pub rel_tol: f64,
    /// Absolute error floor, used when the integral itself is close to zero.
    pub abs_tol: f64,
    /// Maximum number of interval bisections.
    pub max_subdivisions: usize,
    /// Radial interference integrals stop once a panel contributes less than this
    /// fraction of the running sum.
    pub truncation: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-15,
            max_subdivisions: 2000,
            truncation: 1e-14,
        }
    }
}

impl Tolerance {
    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub abs_error: f64,
    pub subdivisions: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gauss_kronrod_15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = fc * WGK[7];
    let mut res_g = fc * WG[3];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];

    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }

    let mean = 0.5 * res_k;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }

    let value = res_k * half;
    let res_abs = res_abs * half.abs();
    let res_asc = res_asc * half.abs();
    let mut error = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (200.0 * error / res_asc).powf(1.5).min(1.0);
    }
    let underflow = f64::MIN_POSITIVE / (50.0 * f64::EPSILON);
    if res_abs > underflow {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }
    Segment { a, b, value, error }
}

/// Integrates `f` over the finite interval `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: &Tolerance) -> Result<Integral> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!("finite interval required, got [{a}, {b}]")));
    }
    if a == b {
        return Ok(Integral {
            value: 0.0,
            abs_error: 0.0,
            subdivisions: 0,
        });
    }

    let first = gauss_kronrod_15(&f, a, b);
    let mut segments = vec![first];
    let mut total = first.value;
    let mut err = first.error;
    let mut subdivisions = 0;

    loop {
        if !total.is_finite() || !err.is_finite() {
            return Err(Error::Numerical {
                achieved: f64::INFINITY,
                subdivisions,
            });
        }
        if err <= tol.abs_tol.max(tol.rel_tol * total.abs()) {
            break;
        }
        if subdivisions >= tol.max_subdivisions {
            return Err(Error::Numerical {
                achieved: if total != 0.0 { err / total.abs() } else { err },
                subdivisions,
            });
        }

        let (worst, _) = segments
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, be), (i, s)| if s.error > be { (i, s.error) } else { (bi, be) });
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // interval exhausted at machine precision; accept what we have
            segments.push(Segment { error: 0.0, ..seg });
            err = segments.iter().map(|s| s.error).sum();
            if err <= tol.abs_tol.max(tol.rel_tol * total.abs()) {
                break;
            }
            subdivisions += 1;
            continue;
        }
        let left = gauss_kronrod_15(&f, seg.a, mid);
        let right = gauss_kronrod_15(&f, mid, seg.b);
        segments.push(left);
        segments.push(right);
        subdivisions += 1;

        // re-sum to avoid drift from repeated add/subtract
        total = segments.iter().map(|s| s.value).sum();
        err = segments.iter().map(|s| s.error).sum();
    }

    Ok(Integral {
        value: total,
        abs_error: err,
        subdivisions,
    })
}

/// Integrates `f` over `[a, ∞)` through `x = a + scale·t/(1−t)`.
///
/// `scale` should be of the order of the integrand's decay length.
pub fn integrate_semi_infinite<F: Fn(f64) -> f64>(f: F, a: f64, scale: f64, tol: &Tolerance) -> Result<Integral> {
    if !(scale > 0.0) {
        return Err(Error::Domain(format!("scale must be positive, got {scale}")));
    }
    let mapped = |t: f64| {
        let one_minus = 1.0 - t;
        if one_minus <= 0.0 {
            return 0.0;
        }
        let x = a + scale * t / one_minus;
        let v = f(x);
        if v == 0.0 {
            0.0
        } else {
            v * scale / (one_minus * one_minus)
        }
    };
    integrate(mapped, 0.0, 1.0, tol)
}

/// Integrates a non-negative, eventually decaying `f` over `[a, ∞)` panel by panel.
///
/// Panels grow geometrically from `first_width`; the sum stops once a panel adds less than
/// `tol.truncation` of the running total.
pub fn integrate_panels<F: Fn(f64) -> f64>(f: F, a: f64, first_width: f64, tol: &Tolerance) -> Result<Integral> {
    const GROWTH: f64 = 2.0;
    const MAX_PANELS: usize = 400;
    // a panel below the threshold may sit on a rising edge, so require a short run of them
    const QUIET_RUN: usize = 4;

    let mut lo = a;
    let mut width = first_width;
    let mut total = 0.0;
    let mut err = 0.0;
    let mut subdivisions = 0;
    let mut quiet = 0;

    for _ in 0..MAX_PANELS {
        let hi = lo + width;
        let panel = integrate(&f, lo, hi, tol)?;
        total += panel.value;
        err += panel.abs_error;
        subdivisions += panel.subdivisions + 1;
        if panel.value.abs() <= tol.truncation * total.abs() {
            quiet += 1;
            if quiet >= QUIET_RUN {
                return Ok(Integral {
                    value: total,
                    abs_error: err + panel.value.abs(),
                    subdivisions,
                });
            }
        } else {
            quiet = 0;
        }
        lo = hi;
        width *= GROWTH;
    }
    Err(Error::Numerical {
        achieved: if total != 0.0 { err / total.abs() } else { f64::INFINITY },
        subdivisions,
    })
}
