//! Fixed-order reductions and Monte Carlo summaries.
//!
//! Every reduction here is a deterministic function of its input order, so
//! results do not depend on how many threads produced the inputs.

/// Pairwise (cascade) summation in a fixed tree order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        let mut s = 0.0;
        for x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (xs.len() - 1) as f64
}

/// Standard error of the sample mean.
pub fn stderr(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Standard error of the unbiased sample variance, from the fourth central
/// moment: `Var(s^2) ~ (m4 - s^4 (n-3)/(n-1)) / n`.
pub fn variance_stderr(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 4 {
        return f64::INFINITY;
    }
    let m = mean(xs);
    let q: Vec<f64> = xs.iter().map(|x| (x - m).powi(4)).collect();
    let m4 = pairwise_sum(&q) / n;
    let s2 = variance(xs);
    ((m4 - s2 * s2 * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt()
}

/// Weighted sum `sum_i w_i x_i` in pairwise order.
pub fn weighted_sum(weights: &[f64], xs: &[f64]) -> f64 {
    let prod: Vec<f64> = weights.iter().zip(xs).map(|(w, x)| w * x).collect();
    pairwise_sum(&prod)
}

/// Grouped (delete-a-group) jackknife standard error of a statistic.
///
/// `stat(mask)` must evaluate the statistic on the sample with group `g`
/// removed when `mask == Some(g)`, and on the full sample for `None`.
pub fn grouped_jackknife_se(groups: usize, mut stat: impl FnMut(Option<usize>) -> f64) -> f64 {
    if groups < 2 {
        return 0.0;
    }
    let leave_out: Vec<f64> = (0..groups).map(|g| stat(Some(g))).collect();
    let m = mean(&leave_out);
    let sq: Vec<f64> = leave_out.iter().map(|x| (x - m) * (x - m)).collect();
    let g = groups as f64;
    ((g - 1.0) / g * pairwise_sum(&sq)).sqrt()
}
