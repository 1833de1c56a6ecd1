//! Scalar activation helpers with overflow-safe branches.

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `ln(sigmoid(z)) = -softplus(-z)`.
#[inline]
pub fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_symmetric_and_saturates_without_nan() {
        for z in [-800.0, -30.0, -1.0, 0.0, 1.0, 30.0, 800.0] {
            let s = sigmoid(z);
            assert!(s.is_finite());
            assert!((s + sigmoid(-z) - 1.0).abs() < 1e-15);
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn softplus_matches_naive_form_in_safe_range() {
        for z in [-5.0, -0.3, 0.0, 0.7, 4.0] {
            let naive: f64 = (1.0 + f64::exp(z)).ln();
            assert!((softplus(z) - naive).abs() < 1e-14);
        }
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-12);
        assert!(softplus(-1000.0) >= 0.0);
    }

    #[test]
    fn log_sigmoid_stays_finite() {
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-15);
        assert!((log_sigmoid(-1000.0) + 1000.0).abs() < 1e-9);
        assert!(log_sigmoid(1000.0).abs() < 1e-300);
        assert!((logit(sigmoid(2.5)) - 2.5).abs() < 1e-12);
    }
}
