use std::collections::HashMap;

use crate::nets::{BOS, EOS};

/// Add-k smoothed n-gram model over token ids.
///
/// Outcomes are every id except padding and BOS (so EOS is predicted);
/// contexts are left-padded with BOS.
#[derive(Clone, Debug)]
pub struct NgramLm {
    order: usize,
    smoothing: f64,
    outcomes: usize,
    counts: HashMap<Vec<usize>, (HashMap<usize, f64>, f64)>,
}

impl NgramLm {
    pub fn train(seqs: &[Vec<usize>], vocab_size: usize, order: usize, smoothing: f64) -> Self {
        assert!(order >= 1 && smoothing > 0.0 && vocab_size > 2);
        let mut lm = NgramLm { order, smoothing, outcomes: vocab_size - 2, counts: HashMap::new() };
        for s in seqs {
            lm.for_each_event(s, |ctx, next, counts| {
                let entry = counts.entry(ctx.to_vec()).or_default();
                *entry.0.entry(next).or_default() += 1.0;
                entry.1 += 1.0;
            });
        }
        lm
    }

    fn for_each_event(
        &mut self,
        seq: &[usize],
        mut f: impl FnMut(&[usize], usize, &mut HashMap<Vec<usize>, (HashMap<usize, f64>, f64)>),
    ) {
        let padded: Vec<usize> = std::iter::repeat(BOS)
            .take(self.order - 1)
            .chain(seq.iter().copied())
            .chain(std::iter::once(EOS))
            .collect();
        for i in self.order - 1..padded.len() {
            f(&padded[i + 1 - self.order..i], padded[i], &mut self.counts);
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of predicted symbols (vocabulary minus padding and BOS).
    pub fn outcomes(&self) -> usize {
        self.outcomes
    }

    /// `P(next | context)` where `context` has `order − 1` ids.
    pub fn prob(&self, context: &[usize], next: usize) -> f64 {
        let (c, total) = match self.counts.get(context) {
            Some((m, t)) => (m.get(&next).copied().unwrap_or(0.0), *t),
            None => (0.0, 0.0),
        };
        (c + self.smoothing) / (total + self.smoothing * self.outcomes as f64)
    }

    /// Contexts seen in training.
    pub fn contexts(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.counts.keys()
    }

    /// `exp` of the mean per-token negative log-probability, EOS included.
    pub fn perplexity(&self, seqs: &[Vec<usize>]) -> f64 {
        let mut nll = 0.0;
        let mut tokens = 0usize;
        for s in seqs {
            let padded: Vec<usize> = std::iter::repeat(BOS)
                .take(self.order - 1)
                .chain(s.iter().copied())
                .chain(std::iter::once(EOS))
                .collect();
            for i in self.order - 1..padded.len() {
                nll -= self.prob(&padded[i + 1 - self.order..i], padded[i]).ln();
                tokens += 1;
            }
        }
        (nll / tokens.max(1) as f64).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conditionals_normalize() {
        let seqs = vec![vec![3, 4, 5], vec![3, 3, 4], vec![5, 4]];
        let lm = NgramLm::train(&seqs, 6, 3, 0.1);
        for ctx in lm.contexts() {
            let total: f64 = (2..6).map(|w| lm.prob(ctx, w)).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_corpus_has_perplexity_near_one() {
        let seqs = vec![vec![3, 4, 5]; 500];
        let lm = NgramLm::train(&seqs, 6, 3, 0.1);
        let ppl = lm.perplexity(&seqs);
        assert!(ppl > 1.0 && ppl < 1.001, "{ppl}");
    }
}
