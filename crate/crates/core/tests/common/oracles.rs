//! Reference solvers written without any code from the library, used to
//! check its answers.
#![allow(dead_code)]

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y - sum_j x_j A_j - b0`.
pub fn residual(cols: &[&[f64]], x: &[f64], y: &[f64], b0: f64) -> Vec<f64> {
    let mut r: Vec<f64> = y.iter().map(|v| v - b0).collect();
    for (c, &xj) in cols.iter().zip(x) {
        for (ri, ci) in r.iter_mut().zip(c.iter()) {
            *ri -= xj * ci;
        }
    }
    r
}

pub fn rss(cols: &[&[f64]], x: &[f64], y: &[f64]) -> f64 {
    residual(cols, x, y, 0.0).iter().map(|v| v * v).sum()
}

/// Least squares by modified Gram-Schmidt with one reorthogonalization pass.
/// `None` when the columns are numerically dependent.
pub fn least_squares(cols: &[&[f64]], y: &[f64]) -> Option<Vec<f64>> {
    let k = cols.len();
    let n = y.len();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut r = vec![0.0; k * k];
    for (j, c) in cols.iter().enumerate() {
        let mut v = c.to_vec();
        let norm0 = dot(&v, &v).sqrt();
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let p = dot(qi, &v);
                r[i * k + j] += p;
                for t in 0..n {
                    v[t] -= p * qi[t];
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if !(norm > 1e-13 * norm0) {
            return None;
        }
        r[j * k + j] = norm;
        q.push(v.iter().map(|t| t / norm).collect());
    }
    let qty: Vec<f64> = q.iter().map(|qi| dot(qi, y)).collect();
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|j| r[i * k + j] * x[j]).sum();
        x[i] = (qty[i] - s) / r[i * k + i];
    }
    Some(x)
}

/// Exact nonnegative least squares by enumerating every support. Only for a
/// handful of columns.
pub fn nnls_by_enumeration(cols: &[&[f64]], y: &[f64]) -> (Vec<f64>, f64) {
    let k = cols.len();
    assert!(k <= 16, "enumeration over {k} columns");
    let mut best = (vec![0.0; k], dot(y, y));
    for mask in 1u32..(1 << k) {
        let support: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let sub: Vec<&[f64]> = support.iter().map(|&i| cols[i]).collect();
        let Some(xs) = least_squares(&sub, y) else { continue };
        if xs.iter().any(|&v| v < 0.0) {
            continue;
        }
        let mut x = vec![0.0; k];
        for (&i, &v) in support.iter().zip(&xs) {
            x[i] = v;
        }
        let value = rss(cols, &x, y);
        if value < best.1 {
            best = (x, value);
        }
    }
    best
}

/// `||y - A x||^2 + lambda w'x` over `x >= 0` by accelerated projected gradient
/// with adaptive restart.
pub fn projected_gradient_lasso(cols: &[&[f64]], y: &[f64], lambda: f64, w: &[f64], iters: usize) -> Vec<f64> {
    let k = cols.len();
    let gram: Vec<f64> = (0..k * k).map(|t| dot(cols[t / k], cols[t % k])).collect();
    let aty: Vec<f64> = cols.iter().map(|c| dot(c, y)).collect();
    // Lipschitz constant of the gradient, from the Gram trace bound tightened by power iteration
    let mut v = vec![1.0; k];
    let mut eig = 0.0;
    for _ in 0..500 {
        let gv: Vec<f64> = (0..k).map(|i| (0..k).map(|j| gram[i * k + j] * v[j]).sum()).collect();
        eig = dot(&gv, &gv).sqrt();
        v = gv.iter().map(|t| t / eig).collect();
    }
    let step = 1.0 / (2.0 * eig * 1.01);
    let grad = |x: &[f64]| -> Vec<f64> {
        (0..k)
            .map(|i| 2.0 * ((0..k).map(|j| gram[i * k + j] * x[j]).sum::<f64>() - aty[i]) + lambda * w[i])
            .collect()
    };
    let objective = |x: &[f64]| -> f64 {
        let xgx: f64 = (0..k).map(|i| x[i] * (0..k).map(|j| gram[i * k + j] * x[j]).sum::<f64>()).sum();
        xgx - 2.0 * dot(&aty, x) + lambda * dot(w, x)
    };
    let mut x = vec![0.0; k];
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut last = objective(&x);
    for _ in 0..iters {
        let g = grad(&z);
        let next: Vec<f64> = (0..k).map(|i| (z[i] - step * g[i]).max(0.0)).collect();
        let value = objective(&next);
        if value > last {
            // restart momentum
            t = 1.0;
            z = x.clone();
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = (0..k).map(|i| next[i] + (t - 1.0) / t_next * (next[i] - x[i])).collect();
        x = next;
        t = t_next;
        last = value;
    }
    x
}

/// Scaled KKT violation of a nonnegative weighted Lasso solution, from the
/// explicit residual. The scale is `max_j 2 |A_j' y_c|` with `y_c` centered
/// when there is an intercept.
pub fn kkt_violation(cols: &[&[f64]], y: &[f64], x: &[f64], b0: f64, lambda: f64, w: &[f64], centered: bool) -> f64 {
    let r = residual(cols, x, y, b0);
    let mean = if centered { y.iter().sum::<f64>() / y.len() as f64 } else { 0.0 };
    let yc: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let scale = cols.iter().map(|c| 2.0 * dot(c, &yc).abs()).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for (j, c) in cols.iter().enumerate() {
        let g = -2.0 * dot(c, &r) + lambda * w[j];
        let v = if x[j] > 0.0 { g.abs() } else { (-g).max(0.0) };
        worst = worst.max(v);
    }
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}
