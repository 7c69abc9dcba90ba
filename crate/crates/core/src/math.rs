//! Scalar math on top of `libm` so the core builds without `std`.

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// Numerically stable logistic function.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + ln_1p(exp(-x))
    } else {
        ln_1p(exp(x))
    }
}

/// `ln(logistic(x))`.
#[inline]
pub fn log_logistic(x: f64) -> f64 {
    -softplus(-x)
}

/// Max-subtracted log-sum-exp. Returns `-inf` for an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    match lse_parts(xs) {
        Some((m, rest)) => m + ln_1p(rest),
        None => f64::NEG_INFINITY,
    }
}

/// `(max, Σ_{j ≠ argmax} exp(x_j − max))`, so that
/// `logsumexp = max + ln_1p(rest)` keeps full precision when one entry dominates.
fn lse_parts(xs: &[f64]) -> Option<(f64, f64)> {
    let (mut arg, mut m) = (usize::MAX, f64::NEG_INFINITY);
    for (i, &x) in xs.iter().enumerate() {
        if x > m || arg == usize::MAX {
            arg = i;
            m = x;
        }
    }
    if !m.is_finite() {
        return None;
    }
    let rest = xs.iter().enumerate().filter(|&(i, _)| i != arg).map(|(_, &x)| exp(x - m)).sum();
    Some((m, rest))
}

/// In-place log-softmax of one row.
pub fn log_softmax_in_place(xs: &mut [f64]) {
    if let Some((m, rest)) = lse_parts(xs) {
        let l = ln_1p(rest);
        for x in xs.iter_mut() {
            *x = (*x - m) - l;
        }
    }
}

/// Softmax of one row into a fresh vector.
pub fn softmax(xs: &[f64]) -> alloc::vec::Vec<f64> {
    let lse = logsumexp(xs);
    xs.iter().map(|&x| exp(x - lse)).collect()
}

/// Shannon entropy (nats) of a probability vector.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&q| q > 0.0).map(|&q| -q * ln(q)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_is_symmetric_and_saturates() {
        assert_eq!(logistic(0.0), 0.5);
        assert!((logistic(3.0) + logistic(-3.0) - 1.0).abs() < 1e-15);
        assert_eq!(logistic(-1e4), 0.0);
        assert_eq!(logistic(1e4), 1.0);
    }

    #[test]
    fn logsumexp_handles_large_logits() {
        let v = logsumexp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + core::f64::consts::LN_2)).abs() < 1e-12);
        let v = logsumexp(&[-1000.0, -1000.0]);
        assert!((v - (-1000.0 + core::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn log_logistic_matches_direct_form() {
        for &x in &[-5.0, -0.3, 0.0, 0.7, 6.0] {
            assert!((log_logistic(x) - ln(logistic(x))).abs() < 1e-14);
        }
    }
}
