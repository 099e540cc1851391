//! Raw slice kernels shared by the tape ops and their adjoints.

/// `out[m,n] = a[m,k] · b[k,n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `out[k,n] += a[m,k]ᵀ · g[m,n]`
pub fn matmul_at_b_acc(out: &mut [f64], a: &[f64], g: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += aip * gv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] · b[k,n]ᵀ`
pub fn matmul_a_bt_acc(out: &mut [f64], g: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        let out_row = &mut out[i * k..(i + 1) * k];
        for (p, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            *o += dot(g_row, b_row);
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log Σ exp(row)`.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_by_hand() {
        let out = matmul(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0], 2, 2, 1);
        assert_eq!(out, vec![3.0, 7.0]);
    }

    #[test]
    fn adjoint_kernels_agree_with_explicit_transpose() {
        // a: 2x3, g: 2x2
        let a = [1.0, -2.0, 0.5, 3.0, 1.0, -1.0];
        let g = [0.5, 1.0, -1.0, 2.0];
        let mut got = vec![0.0; 6];
        matmul_at_b_acc(&mut got, &a, &g, 2, 3, 2);
        let at = [1.0, 3.0, -2.0, 1.0, 0.5, -1.0];
        assert_eq!(got, matmul(&at, &g, 3, 2, 2));

        // b: 3x2 so g·bᵀ is 2x3
        let b = [1.0, 0.0, 2.0, -1.0, 0.5, 0.5];
        let mut got = vec![0.0; 6];
        matmul_a_bt_acc(&mut got, &g, &b, 2, 3, 2);
        let bt = [1.0, 2.0, 0.5, 0.0, -1.0, 0.5];
        assert_eq!(got, matmul(&g, &bt, 2, 2, 3));
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
