//! Bessel functions of the first kind and their positive zeros.
//!
//! `J_0 .. J_M` at one argument come from Miller's backward recurrence
//! normalized by `J_0 + 2 Σ J_2k = 1`. Zeros `j_{m,k}` are bracketed by
//! sign changes on a fixed grid and polished with safeguarded Newton steps.
//! The zero table is cached process-wide and only ever grows.

use std::sync::{Arc, OnceLock, RwLock};

/// `[J_0(x), ..., J_max_order(x)]`.
pub fn bessel_j_orders(max_order: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; max_order + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let ax = x.abs();
    let top = (max_order as f64).max(ax);
    let mut start = (top + 30.0 + (40.0 * top).sqrt()) as usize;
    start += start % 2;

    let mut j_next = 0.0; // J_{k+1}
    let mut j_cur = 1e-300; // J_k, arbitrary scale
    let mut norm = 0.0;
    for k in (1..=start).rev() {
        let j_prev = 2.0 * k as f64 / ax * j_cur - j_next;
        j_next = j_cur;
        j_cur = j_prev;
        // j_cur now holds J_{k-1}
        if k - 1 <= max_order {
            out[k - 1] = j_cur;
        }
        if (k - 1) % 2 == 0 && k > 1 {
            norm += 2.0 * j_cur;
        }
        if j_cur.abs() > 1e250 {
            j_cur *= 1e-250;
            j_next *= 1e-250;
            norm *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    norm += j_cur;
    for (m, v) in out.iter_mut().enumerate() {
        *v /= norm;
        if x < 0.0 && m % 2 == 1 {
            *v = -*v;
        }
    }
    out
}

pub fn bessel_j(order: usize, x: f64) -> f64 {
    bessel_j_orders(order, x)[order]
}

/// `(J_m(x), J_m'(x))` using `J_m' = (m / x) J_m - J_{m+1}`.
fn value_and_slope(m: usize, x: f64) -> (f64, f64) {
    let v = bessel_j_orders(m + 1, x);
    (v[m], m as f64 / x * v[m] - v[m + 1])
}

fn polish_zero(m: usize, mut lo: f64, mut hi: f64) -> f64 {
    let (f_lo, _) = value_and_slope(m, lo);
    let mut x = 0.5 * (lo + hi);
    for _ in 0..100 {
        let (f, df) = value_and_slope(m, x);
        if f == 0.0 {
            return x;
        }
        if (f > 0.0) == (f_lo > 0.0) {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - f / df;
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 4.0 * f64::EPSILON * x {
            return next;
        }
        x = next;
    }
    x
}

/// Zeros `(m, j_{m,k})` of `J_m` for all orders, sorted by value, complete
/// below `limit`.
#[derive(Debug, Clone)]
pub struct BesselZeroTable {
    pub limit: f64,
    pub zeros: Vec<(usize, f64)>,
}

const SCAN_STEP: f64 = 0.25;

impl BesselZeroTable {
    pub fn compute(limit: f64) -> Self {
        let max_order = limit.ceil() as usize + 1;
        let mut prev: Option<Vec<f64>> = None;
        let mut brackets = Vec::new();
        let mut i = 1usize;
        loop {
            let x = i as f64 * SCAN_STEP;
            let vals = bessel_j_orders(max_order, x);
            if let Some(p) = &prev {
                let x_prev = x - SCAN_STEP;
                // zeros of J_m all lie above m
                for m in 0..=max_order.min(x as usize) {
                    if p[m] != 0.0 && vals[m] != 0.0 && (p[m] > 0.0) != (vals[m] > 0.0) {
                        brackets.push((m, x_prev, x));
                    }
                }
            }
            prev = Some(vals);
            if x > limit {
                break;
            }
            i += 1;
        }
        let mut zeros: Vec<(usize, f64)> = brackets
            .into_iter()
            .map(|(m, lo, hi)| (m, polish_zero(m, lo, hi)))
            .filter(|&(_, j)| j < limit)
            .collect();
        zeros.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Self { limit, zeros }
    }

    /// k-th positive zero (1-based) of `J_m`, if below the table limit.
    pub fn zero(&self, m: usize, k: usize) -> Option<f64> {
        self.zeros
            .iter()
            .filter(|z| z.0 == m)
            .nth(k.checked_sub(1)?)
            .map(|z| z.1)
    }
}

static TABLE: OnceLock<RwLock<Arc<BesselZeroTable>>> = OnceLock::new();

/// Shared zero table complete at least up to `limit`.
pub fn zeros_up_to(limit: f64) -> Arc<BesselZeroTable> {
    let cell = TABLE.get_or_init(|| RwLock::new(Arc::new(BesselZeroTable::compute(32.0))));
    {
        let t = cell.read().unwrap();
        if t.limit >= limit {
            return Arc::clone(&t);
        }
    }
    let mut t = cell.write().unwrap();
    if t.limit < limit {
        *t = Arc::new(BesselZeroTable::compute(limit.max(1.5 * t.limit)));
    }
    Arc::clone(&t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Reference values from scipy.special.jv / jn_zeros.
    #[test]
    fn bessel_values() {
        assert_relative_eq!(
            bessel_j(0, 1.0),
            0.765_197_686_557_966_6,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            bessel_j(1, 1.0),
            0.440_050_585_744_933_5,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            bessel_j(5, 10.0),
            -0.234_061_528_186_793_6,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            bessel_j(0, 50.0),
            0.055_812_327_669_251_79,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            bessel_j(30, 10.0),
            1.551_096_078_257_474_5e-12,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            bessel_j(3, -2.0),
            -0.128_943_249_474_402_08,
            max_relative = 1e-13
        );
        assert_eq!(bessel_j(0, 0.0), 1.0);
        assert_eq!(bessel_j(4, 0.0), 0.0);
    }

    #[test]
    fn known_zeros() {
        let t = zeros_up_to(40.0);
        assert_relative_eq!(
            t.zero(0, 1).unwrap(),
            2.404_825_557_695_773,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            t.zero(0, 2).unwrap(),
            5.520_078_110_286_311,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            t.zero(1, 1).unwrap(),
            3.831_705_970_207_512,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            t.zero(2, 1).unwrap(),
            5.135_622_301_840_683,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            t.zero(10, 1).unwrap(),
            14.475_500_686_554_54,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            t.zero(0, 10).unwrap(),
            30.634_606_468_431_98,
            max_relative = 1e-13
        );
    }

    #[test]
    fn zero_count_follows_weyl_law() {
        // Dirichlet disk of radius 1: N(j < K) ~ K^2/4 - K/2 counting multiplicity
        let k = 60.0;
        let t = zeros_up_to(k);
        let n: usize = t
            .zeros
            .iter()
            .filter(|z| z.1 < k)
            .map(|z| if z.0 == 0 { 1 } else { 2 })
            .sum();
        let weyl = k * k / 4.0 - k / 2.0;
        assert!((n as f64 - weyl).abs() < 0.02 * weyl, "{n} vs {weyl}");
    }

    #[test]
    fn table_growth_is_consistent() {
        let small = BesselZeroTable::compute(20.0);
        let big = BesselZeroTable::compute(35.0);
        for z in &small.zeros {
            assert!(big.zeros.contains(z));
        }
    }
}
