//! Bessel functions of the first kind for integer order.
//!
//! Small arguments use the ascending power series; from |x| = 8 onwards the
//! series loses too many digits to cancellation and Miller's backward
//! recurrence (normalized with `J0 + 2 Σ J_2k = 1`) takes over. Both paths
//! are accurate to ~1e-13 absolute for |x| ≤ 30.

const SERIES_LIMIT: f64 = 8.0;

/// `J_n(x)` for integer order `n ≥ 0` and real `x`.
pub fn bessel_j(n: u32, x: f64) -> f64 {
    if x == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let value = if x.abs() < SERIES_LIMIT {
        series(n, x.abs())
    } else {
        miller(n, x.abs())
    };
    if x < 0.0 && n % 2 == 1 {
        -value
    } else {
        value
    }
}

fn series(n: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = 1.0;
    for k in 1..=n {
        term *= half / k as f64;
    }
    let half_sq = half * half;
    let mut sum = term;
    let mut k = 0u32;
    loop {
        k += 1;
        term *= -half_sq / (k as f64 * (k + n) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) && k as f64 > half {
            break;
        }
        if k > 500 {
            break;
        }
    }
    sum
}

fn miller(n: u32, x: f64) -> f64 {
    let top = (n as f64).max(x);
    let mut start = (top + 30.0 + (50.0 * top).sqrt()) as u32;
    if start % 2 == 1 {
        start += 1;
    }
    let mut j_next = 0.0; // J_{k+1}
    let mut j_cur = 1e-30; // J_k
    let mut norm = 0.0;
    let mut wanted = 0.0;
    let mut k = start;
    while k > 0 {
        let j_prev = 2.0 * k as f64 / x * j_cur - j_next;
        j_next = j_cur;
        j_cur = j_prev;
        k -= 1;
        if k.is_multiple_of(2) && k > 0 {
            norm += 2.0 * j_cur;
        }
        if k == n {
            wanted = j_cur;
        }
        if j_cur.abs() > 1e250 {
            j_cur *= 1e-250;
            j_next *= 1e-250;
            norm *= 1e-250;
            wanted *= 1e-250;
        }
    }
    norm += j_cur;
    wanted / norm
}
