//! Small numerical building blocks shared by the physics modules.

/// Neumaier-compensated sum. Results are insensitive to summation order at the
/// level of a few ulps, which keeps momentum sums reproducible.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
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

/// Find the root of a continuous function by bisection on `[lo, hi]`.
///
/// `f(lo)` and `f(hi)` must have opposite signs. Stops when `|f| <= tol`, when
/// the interval can no longer be split in floating point, or after
/// `max_iter` halvings. Returns `(root, f(root), iterations)`.
pub fn bisect<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    max_iter: usize,
) -> (f64, f64, usize) {
    let mut f_lo = f(lo);
    let mut best = (lo, f_lo);
    for it in 1..=max_iter {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return (best.0, best.1, it);
        }
        let f_mid = f(mid);
        if f_mid.abs() < best.1.abs() {
            best = (mid, f_mid);
        }
        if f_mid.abs() <= tol {
            return (mid, f_mid, it);
        }
        if (f_mid > 0.0) == (f_lo > 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    (best.0, best.1, max_iter)
}
