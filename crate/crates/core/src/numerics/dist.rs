use crate::error::{Error, Result};
use crate::math;

const SQRT_2: f64 = core::f64::consts::SQRT_2;

/// `P(Z >= z)` for a standard normal `Z`.
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * math::erfc(z / SQRT_2)
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * math::erfc(-z / SQRT_2)
}

/// Inverse of the standard normal CDF.
///
/// Acklam's rational approximation followed by one Halley step against the
/// `erfc`-based CDF, which brings the result to near machine precision.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Contract(alloc::format!(
            "std_normal_quantile: p must lie in (0, 1), got {p}"
        )));
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = math::sqrt(-2.0 * math::ln(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = math::sqrt(-2.0 * math::ln(1.0 - p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // Halley refinement. Work on whichever tail keeps the residual accurate.
    let e = if p < 0.5 {
        std_normal_cdf(x) - p
    } else {
        (1.0 - p) - std_normal_sf(x)
    };
    let u = e * math::sqrt(2.0 * core::f64::consts::PI) * math::exp(0.5 * x * x);
    Ok(x - u / (1.0 + 0.5 * x * u))
}

/// `P(X >= x)` for `X ~ chi-square(k)`.
pub fn chi2_sf(x: f64, k: usize) -> f64 {
    debug_assert!(k >= 1, "chi2_sf needs at least one degree of freedom");
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    upper_regularized_gamma(0.5 * k as f64, 0.5 * x)
}

/// `Q(a, x) = Gamma(a, x) / Gamma(a)`.
fn upper_regularized_gamma(a: f64, x: f64) -> f64 {
    const EPS: f64 = 1e-16;
    const MAX_ITER: usize = 10_000;
    let log_prefactor = a * math::ln(x) - x - math::lgamma(a);
    if x < a + 1.0 {
        // Series for the lower function P(a, x).
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut denom = a;
        for _ in 0..MAX_ITER {
            denom += 1.0;
            term *= x / denom;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                break;
            }
        }
        let lower = sum * math::exp(log_prefactor);
        (1.0 - lower).clamp(0.0, 1.0)
    } else {
        // Modified Lentz continued fraction for Q(a, x).
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                break;
            }
        }
        (math::exp(log_prefactor) * h).clamp(0.0, 1.0)
    }
}
