use crate::error::{Error, Result};

/// Minimum held-out accuracy before a [`StyleJudge`] may score outputs.
pub const STYLE_GATE: f64 = 0.99;

/// Binary logistic regression on token-presence features.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn features(seq: &[usize], vocab_size: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = seq.iter().copied().filter(|&t| t < vocab_size).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

impl LogisticClassifier {
    /// Full-batch gradient descent on the mean logistic loss.
    pub fn fit(seqs: &[Vec<usize>], labels: &[usize], vocab_size: usize, epochs: usize, lr: f64) -> Self {
        let feats: Vec<Vec<usize>> = seqs.iter().map(|s| features(s, vocab_size)).collect();
        let mut clf = LogisticClassifier { weights: vec![0.0; vocab_size], bias: 0.0 };
        let n = seqs.len().max(1) as f64;
        for _ in 0..epochs {
            let mut gw = vec![0.0; vocab_size];
            let mut gb = 0.0;
            for (f, &y) in feats.iter().zip(labels) {
                let err = clf.prob_features(f) - y as f64;
                for &i in f {
                    gw[i] += err;
                }
                gb += err;
            }
            for (w, g) in clf.weights.iter_mut().zip(&gw) {
                *w -= lr * g / n;
            }
            clf.bias -= lr * gb / n;
        }
        clf
    }

    fn prob_features(&self, f: &[usize]) -> f64 {
        let logit = self.bias + f.iter().map(|&i| self.weights[i]).sum::<f64>();
        crate::autodiff::kernels::sigmoid(logit)
    }

    /// Probability of label 1.
    pub fn prob(&self, seq: &[usize]) -> f64 {
        self.prob_features(&features(seq, self.weights.len()))
    }

    pub fn predict(&self, seq: &[usize]) -> usize {
        usize::from(self.prob(seq) >= 0.5)
    }

    pub fn accuracy(&self, seqs: &[Vec<usize>], labels: &[usize]) -> f64 {
        let hits = seqs.iter().zip(labels).filter(|(s, &y)| self.predict(s) == y).count();
        hits as f64 / seqs.len().max(1) as f64
    }
}

/// A classifier together with the held-out accuracy that licenses its use.
#[derive(Clone, Debug)]
pub struct StyleJudge {
    pub classifier: LogisticClassifier,
    pub heldout_accuracy: f64,
}

impl StyleJudge {
    pub fn train(
        train: (&[Vec<usize>], &[usize]),
        heldout: (&[Vec<usize>], &[usize]),
        vocab_size: usize,
    ) -> Self {
        let classifier = LogisticClassifier::fit(train.0, train.1, vocab_size, 300, 2.0);
        let heldout_accuracy = classifier.accuracy(heldout.0, heldout.1);
        StyleJudge { classifier, heldout_accuracy }
    }
}

/// Fraction of `outputs` the judge assigns to `target_style`.
pub fn style_accuracy(outputs: &[Vec<usize>], judge: &StyleJudge, target_style: usize) -> Result<f64> {
    if judge.heldout_accuracy < STYLE_GATE {
        return Err(Error::Refused(format!(
            "style classifier held-out accuracy {:.4} is below {STYLE_GATE}",
            judge.heldout_accuracy
        )));
    }
    if outputs.is_empty() {
        return Err(Error::invalid("style_accuracy", "no outputs"));
    }
    let hits = outputs.iter().filter(|o| judge.classifier.predict(o) == target_style).count();
    Ok(hits as f64 / outputs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_tokens_are_learned() {
        let seqs = vec![vec![3, 4, 5], vec![3, 6, 5], vec![3, 4, 7], vec![3, 6, 7]];
        let labels = vec![0, 1, 0, 1];
        let judge = StyleJudge::train((&seqs, &labels), (&seqs, &labels), 8);
        assert_eq!(judge.heldout_accuracy, 1.0);
        assert_eq!(style_accuracy(&[vec![6]], &judge, 1).unwrap(), 1.0);
        assert!(style_accuracy(&[], &judge, 1).is_err());
    }

    #[test]
    fn weak_classifier_is_refused() {
        let judge = StyleJudge {
            classifier: LogisticClassifier { weights: vec![0.0; 4], bias: 0.0 },
            heldout_accuracy: 0.9,
        };
        assert!(matches!(style_accuracy(&[vec![1]], &judge, 0), Err(Error::Refused(_))));
    }
}
