//! Exact optimal transport between two equal-size empirical measures, by
//! brute force over matchings. These are oracles: they know nothing about
//! sorting and serve to check the order-statistics formula.

use crate::error::{Error, Result};

pub const EXHAUSTIVE_MAX: usize = 8;
pub const ASSIGNMENT_MAX: usize = 64;

fn check(x: &[f64], y: &[f64], max: usize) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            op: "w1 oracle",
            lhs: vec![x.len()],
            rhs: vec![y.len()],
        });
    }
    if x.is_empty() {
        return Err(Error::Empty("w1 oracle"));
    }
    if x.len() > max {
        return Err(Error::invalid(format!("oracle supports n <= {max}, got {}", x.len())));
    }
    Ok(x.len())
}

/// Minimum mean `|x_i - y_π(i)|` over all `n!` permutations (Heap's algorithm).
pub fn w1_exhaustive(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = check(x, y, EXHAUSTIVE_MAX)?;
    let mut perm: Vec<usize> = (0..n).collect();
    let cost = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| (x[i] - y[j]).abs()).sum::<f64>();
    let mut best = cost(&perm);
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best / n as f64)
}

/// Minimum mean matching cost via the O(n³) Hungarian algorithm
/// (shortest augmenting paths with row/column potentials).
pub fn w1_assignment(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = check(x, y, ASSIGNMENT_MAX)?;
    let cost = |i: usize, j: usize| (x[i - 1] - y[j - 1]).abs();
    // 1-based arrays; index 0 is the virtual root column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let total: f64 = (1..=n).map(|j| cost(p[j], j)).sum();
    Ok(total / n as f64)
}

/// Exhaustive for `n <= 8`, assignment solver for `n <= 64`.
pub fn w1_oracle(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() <= EXHAUSTIVE_MAX {
        w1_exhaustive(x, y)
    } else {
        w1_assignment(x, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases() {
        assert_eq!(w1_oracle(&[0.0], &[5.0]).unwrap(), 5.0);
        assert_eq!(w1_oracle(&[0.0, 1.0], &[2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(w1_oracle(&[3.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!(w1_oracle(&[1.0], &[1.0, 2.0]).is_err());
        assert!(w1_oracle(&vec![0.0; 65], &vec![0.0; 65]).is_err());
        assert!(w1_exhaustive(&[0.0; 9], &[0.0; 9]).is_err());
    }

    #[test]
    fn assignment_agrees_with_exhaustive() {
        let mut s = 12345u64;
        let mut next = || {
            s = crate::rand_noise::splitmix64(s);
            (s >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        for n in 1..=7 {
            for _ in 0..20 {
                let x: Vec<f64> = (0..n).map(|_| next()).collect();
                let y: Vec<f64> = (0..n).map(|_| next()).collect();
                let a = w1_exhaustive(&x, &y).unwrap();
                let b = w1_assignment(&x, &y).unwrap();
                assert!((a - b).abs() < 1e-12, "n={n}: {a} vs {b}");
            }
        }
    }
}
