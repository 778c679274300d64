//! Small log-domain helpers shared by the solvers and the simulator.

/// `ln(exp(a) + exp(b))` without overflow; `-inf` is the additive identity.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln Σ exp(x_i)` with a max shift. Empty or all `-inf` input gives `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Pairwise summation in a fixed tree order. The result depends only on the
/// slice contents, never on how the slice was produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// `ln((1/n) Σ exp(x_i))` using a max shift and a pairwise reduction of the
/// shifted exponentials. Equal inputs return that input bit-for-bit.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NEG_INFINITY;
    }
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let shifted: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
    let mean = pairwise_sum(&shifted) / xs.len() as f64;
    m + mean.ln()
}

/// Sample mean and (n-1)-normalized standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    if xs.iter().all(|&x| x == xs[0]) {
        return (xs[0], 0.0);
    }
    let mean = pairwise_sum(xs) / n as f64;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, (pairwise_sum(&dev) / (n - 1) as f64).sqrt())
}
