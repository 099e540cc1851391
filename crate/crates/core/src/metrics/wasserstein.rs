use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Exact 2-Wasserstein distance between two 1-d empirical distributions with
/// uniform weights, via their quantile functions. Sorts in place.
pub fn wasserstein_1d(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0f64;
    let mut total = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) as f64 / n as f64;
        let next_b = (j + 1) as f64 / m as f64;
        let next = next_a.min(next_b);
        total += (a[i] - b[j]).powi(2) * (next - u);
        u = next;
        // advance every side whose quantile step ends here
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    total.sqrt()
}

/// Mean over `projections` random unit directions of the 1-d 2-Wasserstein
/// distance between the projected point sets `a: [n, d]` and `b: [m, d]`.
pub fn sliced_wasserstein(a: &Tensor, b: &Tensor, projections: usize, rng: &mut SeededRng) -> Result<f64> {
    let (n, d) = a.dims2().ok_or_else(|| Error::invalid("sliced_wasserstein", "expected [n, d]"))?;
    let (m, d2) = b.dims2().ok_or_else(|| Error::invalid("sliced_wasserstein", "expected [m, d]"))?;
    if d == 0 {
        return Err(Error::invalid("sliced_wasserstein", "zero dimension"));
    }
    if d != d2 {
        return Err(Error::Shape { op: "sliced_wasserstein", lhs: a.shape().to_vec(), rhs: b.shape().to_vec() });
    }
    if projections == 0 {
        return Err(Error::invalid("sliced_wasserstein", "need at least one projection"));
    }
    let mut total = 0.0;
    let mut pa = vec![0.0; n];
    let mut pb = vec![0.0; m];
    for _ in 0..projections {
        let mut dir: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|x| *x /= norm);
        for (i, p) in pa.iter_mut().enumerate() {
            *p = a.row(i).iter().zip(&dir).map(|(x, w)| x * w).sum();
        }
        for (j, p) in pb.iter_mut().enumerate() {
            *p = b.row(j).iter().zip(&dir).map(|(x, w)| x * w).sum();
        }
        total += wasserstein_1d(&mut pa, &mut pb);
    }
    Ok(total / projections as f64)
}
