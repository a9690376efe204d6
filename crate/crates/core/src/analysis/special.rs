//! Survival functions for the χ² and standard normal distributions, both
//! through the regularized upper incomplete gamma function.

use statrs::function::gamma::gamma_ur;

/// P(X > x) for X ~ χ²(df).
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(0.5 * df, 0.5 * x).clamp(0.0, 1.0)
}

/// P(Z > z) for a standard normal Z.
pub fn normal_sf(z: f64) -> f64 {
    if z == 0.0 {
        return 0.5;
    }
    // erfc(y) = Q(1/2, y²).
    let tail = 0.5 * gamma_ur(0.5, 0.5 * z * z);
    if z > 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn chi2_with_two_df_is_exponential() {
        for x in [0.1, 1.0, 7.2, 30.0] {
            assert_abs_diff_eq!(chi2_sf(x, 2.0), (-x / 2.0).exp(), epsilon = 1e-14);
        }
        assert_eq!(chi2_sf(0.0, 2.0), 1.0);
    }

    #[test]
    fn normal_is_symmetric() {
        assert_eq!(normal_sf(0.0), 0.5);
        for z in [0.3, 1.7, 4.0] {
            assert_abs_diff_eq!(normal_sf(z) + normal_sf(-z), 1.0, epsilon = 1e-15);
        }
    }
}
