//! LU determinant with partial pivoting and its reverse-mode adjoint.

/// Determinant of the row-major `n x n` matrix `a`.
pub fn lu_det(a: &[f64], n: usize) -> f64 {
    lu_forward(a, n, false).det
}

struct LuTrace {
    det: f64,
    u: Vec<f64>,
    sign: f64,
    pivots: Vec<usize>,
    /// Matrix state after the row swap of step `j`, before its elimination.
    snaps: Vec<Vec<f64>>,
    /// A zero pivot occurred before the last column.
    degenerate: bool,
}

fn lu_forward(a: &[f64], n: usize, record: bool) -> LuTrace {
    debug_assert_eq!(a.len(), n * n);
    let mut u = a.to_vec();
    let mut sign = 1.0;
    let mut pivots = Vec::with_capacity(n);
    let mut snaps = Vec::new();
    let mut degenerate = false;
    for j in 0..n {
        let mut p = j;
        let mut best = u[j * n + j].abs();
        for i in j + 1..n {
            let v = u[i * n + j].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if p != j {
            for c in 0..n {
                u.swap(j * n + c, p * n + c);
            }
            sign = -sign;
        }
        pivots.push(p);
        if record {
            snaps.push(u.clone());
        }
        let piv = u[j * n + j];
        if piv == 0.0 {
            if j + 1 < n {
                degenerate = true;
            }
            continue;
        }
        for i in j + 1..n {
            let l = u[i * n + j] / piv;
            if l == 0.0 {
                continue;
            }
            for c in j + 1..n {
                u[i * n + c] -= l * u[j * n + c];
            }
        }
    }
    let mut det = sign;
    for j in 0..n {
        det *= u[j * n + j];
    }
    LuTrace {
        det,
        u,
        sign,
        pivots,
        snaps,
        degenerate,
    }
}

/// Determinant and its gradient `d det / d a`, obtained by running the
/// elimination backwards. When a zero pivot makes the elimination
/// non-differentiable the gradient falls back to the cofactor matrix.
pub fn lu_det_grad(a: &[f64], n: usize) -> (f64, Vec<f64>) {
    if n == 0 {
        return (1.0, Vec::new());
    }
    let tr = lu_forward(a, n, true);
    if tr.degenerate {
        return (tr.det, cofactors(a, n));
    }
    let u = &tr.u;
    let mut ub = vec![0.0; n * n];
    for j in 0..n {
        let mut prod = tr.sign;
        for m in 0..n {
            if m != j {
                prod *= u[m * n + m];
            }
        }
        ub[j * n + j] = prod;
    }
    for j in (0..n).rev() {
        let s = &tr.snaps[j];
        let piv = s[j * n + j];
        if piv != 0.0 {
            for i in j + 1..n {
                let l = s[i * n + j] / piv;
                let mut lbar = 0.0;
                for c in j + 1..n {
                    lbar -= ub[i * n + c] * s[j * n + c];
                    ub[j * n + c] -= l * ub[i * n + c];
                }
                ub[i * n + j] += lbar / piv;
                ub[j * n + j] -= lbar * s[i * n + j] / (piv * piv);
            }
        }
        let p = tr.pivots[j];
        if p != j {
            for c in 0..n {
                ub.swap(j * n + c, p * n + c);
            }
        }
    }
    (tr.det, ub)
}

/// Cofactor matrix `C[i, j] = (-1)^(i+j) det(minor_ij)`, which equals the
/// gradient of the determinant for any (including singular) matrix.
fn cofactors(a: &[f64], n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let m = n - 1;
    let mut out = vec![0.0; n * n];
    let mut minor = vec![0.0; m * m];
    for i in 0..n {
        for j in 0..n {
            let mut idx = 0;
            for r in (0..n).filter(|&r| r != i) {
                for c in (0..n).filter(|&c| c != j) {
                    minor[idx] = a[r * n + c];
                    idx += 1;
                }
            }
            let sgn = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            out[i * n + j] = sgn * lu_det(&minor, m);
        }
    }
    out
}
