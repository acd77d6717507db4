//! Log-domain helpers shared by the scoring, inference and metric code.

/// Finite stand-in for `-inf` in guarded log-domain arithmetic.
pub const LOG_FLOOR: f64 = -1e9;

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// `log N(x; mean, sd^2)`.
#[inline]
pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let u = (x - mean) / sd;
    -0.5 * u * u - sd.ln() - HALF_LN_2PI
}

/// Numerically stable `log(sum(exp(v)))`. Returns `-inf` for an empty slice
/// or when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Clamp a log value to [`LOG_FLOOR`]. Returns the clamped value and whether
/// clamping happened. NaN is treated as `-inf`.
#[inline]
pub fn guard_log(v: f64) -> (f64, bool) {
    if v.is_nan() || v < LOG_FLOOR {
        (LOG_FLOOR, true)
    } else {
        (v, false)
    }
}

/// Basin label of a latent value. `sign(0) := +1`.
#[inline]
pub fn basin(z: f64) -> i8 {
    if z >= 0.0 {
        1
    } else {
        -1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_naive_on_small_values() {
        let v = [0.1, -0.3, 1.2];
        let naive = v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&v) - naive).abs() < 1e-14);
    }

    #[test]
    fn lse_survives_large_magnitudes() {
        let v = [-1000.0, -1000.0];
        assert!((log_sum_exp(&v) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn sign_of_zero_is_positive() {
        assert_eq!(basin(0.0), 1);
        assert_eq!(basin(-0.0), 1);
        assert_eq!(basin(-1e-300), -1);
    }
}
