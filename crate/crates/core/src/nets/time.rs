/// Sinusoidal embedding of a flow time `t ∈ [0, 1]`.
///
/// Half the channels are `sin(scale·t·ω_i)` and half `cos(scale·t·ω_i)` with
/// `ω_i = base^(-i/half)`, so frequencies span `scale` down to `scale/base`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeEmbedding {
    pub dim: usize,
    pub base: f64,
    pub scale: f64,
}

impl TimeEmbedding {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2 && dim % 2 == 0, "time embedding dim must be even, got {dim}");
        TimeEmbedding { dim, base: 10_000.0, scale: 1_000.0 }
    }

    pub fn embed_into(&self, t: f64, out: &mut [f64]) {
        let half = self.dim / 2;
        for i in 0..half {
            let freq = self.base.powf(-(i as f64) / half as f64);
            let arg = self.scale * t * freq;
            out[i] = arg.sin();
            out[half + i] = arg.cos();
        }
    }

    pub fn embed(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.embed_into(t, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_are_unit_bounded() {
        let e = TimeEmbedding::new(32);
        for k in 0..=100 {
            assert!(e.embed(k as f64 / 100.0).iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn injective_on_fine_grid() {
        let e = TimeEmbedding::new(32);
        let grid: Vec<Vec<f64>> = (0..=1000).map(|k| e.embed(k as f64 * 1e-3)).collect();
        let mut closest = f64::INFINITY;
        for i in 0..grid.len() {
            for j in i + 1..grid.len() {
                let d: f64 = grid[i].iter().zip(&grid[j]).map(|(a, b)| (a - b).powi(2)).sum();
                closest = closest.min(d.sqrt());
            }
        }
        assert!(closest > 1e-6, "closest pair at distance {closest}");
    }
}
