//! Small dense solvers used on restricted supports: Cholesky and a
//! Lawson-Hanson nonnegative least squares working on the normal equations.

/// Solves `A x = b` for a symmetric positive definite `A` (row-major `n x n`).
/// Returns `None` when a pivot falls below `rel_pivot * max(diag)`.
pub fn cholesky_solve(a: &[f64], b: &[f64], rel_pivot: f64) -> Option<Vec<f64>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    let max_diag = (0..n).map(|i| a[i * n + i]).fold(0.0, f64::max);
    let floor = rel_pivot * max_diag;
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > floor) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut x = b.to_vec();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[i * n + k] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Nonnegative least squares `min ||y - M x||^2, x >= 0` given the normal
/// equations `G = M^T M` (row-major `n x n`) and `c = M^T y`.
///
/// Lawson-Hanson active set. Columns whose restricted system is numerically
/// singular are left at zero.
pub fn nnls_gram(g: &[f64], c: &[f64]) -> Vec<f64> {
    let n = c.len();
    let mut x = vec![0.0; n];
    let mut passive = vec![false; n];
    let mut blocked = vec![false; n];
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let tol = 1e-13 * scale;

    for _ in 0..3 * n + 3 {
        let w = gradient(g, c, &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && !blocked[j] && w[j] > tol)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(j) = candidate else { break };
        passive[j] = true;

        for _ in 0..3 * n + 3 {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let Some(z) = solve_restricted(g, c, &idx) else {
                // numerically dependent on the current support
                passive[j] = false;
                blocked[j] = true;
                break;
            };
            if z.iter().all(|&v| v > 0.0) {
                for (&i, &v) in idx.iter().zip(&z) {
                    x[i] = v;
                }
                break;
            }
            // step towards z until the first coordinate hits zero
            let mut alpha = 1.0f64;
            let mut leaving = None;
            for (&i, &v) in idx.iter().zip(&z) {
                if v <= 0.0 {
                    let t = x[i] / (x[i] - v);
                    if t < alpha {
                        alpha = t;
                        leaving = Some(i);
                    }
                }
            }
            for (&i, &v) in idx.iter().zip(&z) {
                x[i] += alpha * (v - x[i]);
            }
            if let Some(i) = leaving {
                x[i] = 0.0;
            }
            for &i in &idx {
                if x[i] <= 0.0 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    x
}

fn solve_restricted(g: &[f64], c: &[f64], idx: &[usize]) -> Option<Vec<f64>> {
    let n = c.len();
    let k = idx.len();
    let mut a = vec![0.0; k * k];
    for (r, &i) in idx.iter().enumerate() {
        for (s, &j) in idx.iter().enumerate() {
            a[r * k + s] = g[i * n + j];
        }
    }
    let b: Vec<f64> = idx.iter().map(|&i| c[i]).collect();
    cholesky_solve(&a, &b, 1e-13)
}

fn gradient(g: &[f64], c: &[f64], x: &[f64]) -> Vec<f64> {
    let n = c.len();
    (0..n)
        .map(|i| c[i] - (0..n).map(|j| g[i * n + j] * x[j]).sum::<f64>())
        .collect()
}

/// `y'y - 2 c'x + x'Gx`.
pub fn quadratic_rss(g: &[f64], c: &[f64], yy: f64, x: &[f64]) -> f64 {
    let n = c.len();
    let mut quad = 0.0;
    for i in 0..n {
        if x[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            quad += x[i] * g[i * n + j] * x[j];
        }
    }
    let lin: f64 = c.iter().zip(x).map(|(a, b)| a * b).sum();
    yy - 2.0 * lin + quad
}
