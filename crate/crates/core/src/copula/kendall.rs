//! Kendall's tau-b in O(n log n) (Knight's algorithm).

use crate::error::{Error, Result};

/// Tau-b together with a flag set when either input is constant (tau is then 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KendallTau {
    pub tau: f64,
    pub degenerate: bool,
}

pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    kendall_tau_flagged(x, y).map(|k| k.tau)
}

pub fn kendall_tau_flagged(x: &[f64], y: &[f64]) -> Result<KendallTau> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return Err(Error::invalid("kendall_tau needs two vectors of equal length >= 2"));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::invalid("kendall_tau input contains NaN"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    // pairs tied in x (n1) and tied in both (n3)
    let (mut n1, mut n3) = (0u64, 0u64);
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let run = (j - i) as u64;
        n1 += run * (run - 1) / 2;
        let mut k = i;
        while k < j {
            let mut l = k + 1;
            while l < j && y[idx[l]] == y[idx[k]] {
                l += 1;
            }
            let r = (l - k) as u64;
            n3 += r * (r - 1) / 2;
            k = l;
        }
        i = j;
    }

    let mut ys: Vec<f64> = idx.iter().map(|&k| y[k]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);

    let mut n2 = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && ys[j] == ys[i] {
            j += 1;
        }
        let run = (j - i) as u64;
        n2 += run * (run - 1) / 2;
        i = j;
    }

    if n1 == n0 || n2 == n0 {
        return Ok(KendallTau { tau: 0.0, degenerate: true });
    }
    let num = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    let den = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    Ok(KendallTau { tau: (num / den).clamp(-1.0, 1.0), degenerate: false })
}

/// Bottom-up merge sort returning the number of inversions (strictly greater
/// elements preceding smaller ones).
fn merge_count(a: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = a.len();
    let mut swaps = 0u64;
    let mut width = 1;
    while width < n {
        let mut lo = 0;
        while lo < n {
            let mid = (lo + width).min(n);
            let hi = (lo + 2 * width).min(n);
            let (mut i, mut j, mut k) = (lo, mid, lo);
            while i < mid && j < hi {
                if a[j] < a[i] {
                    buf[k] = a[j];
                    swaps += (mid - i) as u64;
                    j += 1;
                } else {
                    buf[k] = a[i];
                    i += 1;
                }
                k += 1;
            }
            buf[k..k + (mid - i)].copy_from_slice(&a[i..mid]);
            k += mid - i;
            buf[k..k + (hi - j)].copy_from_slice(&a[j..hi]);
            a[lo..hi].copy_from_slice(&buf[lo..hi]);
            lo = hi;
        }
        width *= 2;
    }
    swaps
}
