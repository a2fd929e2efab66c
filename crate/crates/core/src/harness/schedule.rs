/// Experience-indexed learning-rate decay factor:
/// factor(i) = -0.9 / (1 + e^(-1.5 i + 8)) + 1.
/// Starts near 1 and settles at 0.1 as experiences accumulate.
pub fn lr_schedule_factor(i: usize) -> f64 {
    -0.9 / (1.0 + (-1.5 * i as f64 + 8.0).exp()) + 1.0
}

/// Learning rate for experience `i` (1-based).
pub fn lr_schedule(lr_init: f64, i: usize) -> f64 {
    lr_init * lr_schedule_factor(i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asymptote_is_one_tenth() {
        assert!((lr_schedule(1.0, 1_000_000) - 0.1).abs() < 1e-9);
    }

    #[test]
    fn early_experiences_near_full_rate() {
        // e^{6.5} = 665.1416...; factor(1) = 1 - 0.9/666.1416... ~ 0.99865
        let expected = 1.0 - 0.9 / (1.0 + 6.5f64.exp());
        assert!((lr_schedule_factor(1) - expected).abs() < 1e-15);
        assert!((lr_schedule_factor(1) - 0.99865).abs() < 1e-5);
    }

    #[test]
    fn factor_is_monotonically_decreasing() {
        for i in 1..30 {
            assert!(lr_schedule_factor(i) > lr_schedule_factor(i + 1));
        }
    }
}
