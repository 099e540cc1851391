use proptest::prelude::*;
use rectiflow::config::TaskKind;
use rectiflow::metrics::{length_success, sliced_wasserstein, style_accuracy, NgramLm, StyleJudge};
use rectiflow::pipeline::corpus::{generate_corpus, Split};
use rectiflow::SeededRng;

#[test]
fn style_labels_are_balanced_at_scale() {
    let corpus = generate_corpus(TaskKind::StyleTransfer, 100_000, 0.1, 0.1, &mut SeededRng::new(21)).unwrap();
    let ones = corpus.sentences.iter().filter(|s| s.label == 1).count() as f64;
    let share = ones / corpus.sentences.len() as f64;
    assert!((share - 0.5).abs() <= 0.01, "share {share}");
}

#[test]
fn style_judge_agrees_with_corpus_labels() {
    let corpus = generate_corpus(TaskKind::StyleTransfer, 4000, 0.1, 0.1, &mut SeededRng::new(22)).unwrap();
    let v = corpus.vocab.len();
    let (tr, trl) = (corpus.seqs(Split::Train), corpus.labels(Split::Train));
    let (va, val) = (corpus.seqs(Split::Val), corpus.labels(Split::Val));
    let judge = StyleJudge::train((&tr, &trl), (&va, &val), v);
    let target = corpus.seqs_labeled(Split::Test, 1);
    let source = corpus.seqs_labeled(Split::Test, 0);
    assert!(style_accuracy(&target, &judge, 1).unwrap() >= 0.99);
    assert!(style_accuracy(&source, &judge, 1).unwrap() <= 0.01);
}

#[test]
fn uniform_tokens_have_perplexity_near_vocabulary_size() {
    // ids 3..12 are words; the model also predicts the end token
    let vocab = 12;
    let words = vocab - 3;
    let mut rng = SeededRng::new(23);
    let mut draw = |n: usize| -> Vec<Vec<usize>> { (0..n).map(|_| (0..60).map(|_| 3 + rng.below(words)).collect()).collect() };
    let train = draw(1000);
    let held_out = draw(200);
    let lm = NgramLm::train(&train, vocab, 3, 0.1);
    let ppl = lm.perplexity(&held_out);
    assert!((ppl - words as f64).abs() <= 0.1 * words as f64, "ppl {ppl}");
}

#[test]
fn shuffled_sentences_score_worse() {
    let corpus = generate_corpus(TaskKind::LengthControl, 4000, 0.1, 0.1, &mut SeededRng::new(24)).unwrap();
    let train = corpus.seqs(Split::Train);
    let lm = NgramLm::train(&train, corpus.vocab.len(), 3, 0.1);
    let mut rng = SeededRng::new(25);
    let mut wins = 0;
    for s in &train {
        let mut shuffled = s.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.below(i + 1));
        }
        if lm.perplexity(std::slice::from_ref(s)) < lm.perplexity(&[shuffled]) {
            wins += 1;
        }
    }
    let rate = wins as f64 / train.len() as f64;
    assert!(rate >= 0.95, "rate {rate}");
}

#[test]
fn sliced_wasserstein_self_distance_is_small() {
    let mut rng = SeededRng::new(26);
    let a = rng.normal_tensor(&[10_000, 2]);
    let b = rng.normal_tensor(&[10_000, 2]);
    let sw = sliced_wasserstein(&a, &b, 128, &mut rng).unwrap();
    assert!(sw <= 0.1, "sw {sw}");
}

proptest! {
    #[test]
    fn length_success_ignores_order(lens in prop::collection::vec(1usize..25, 1..40), seed in any::<u64>(), target in 4usize..20) {
        let outputs: Vec<Vec<usize>> = lens.iter().map(|&n| vec![3; n]).collect();
        let mut shuffled = outputs.clone();
        let mut rng = SeededRng::new(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.below(i + 1));
        }
        prop_assert_eq!(length_success(&outputs, target).unwrap(), length_success(&shuffled, target).unwrap());
    }

    #[test]
    fn sliced_wasserstein_is_symmetric_and_nonnegative(seed in any::<u64>(), n in 1usize..30, m in 1usize..30) {
        let mut rng = SeededRng::new(seed);
        let a = rng.normal_tensor(&[n, 3]);
        let b = rng.normal_tensor(&[m, 3]);
        let ab = sliced_wasserstein(&a, &b, 16, &mut SeededRng::new(1)).unwrap();
        let ba = sliced_wasserstein(&b, &a, 16, &mut SeededRng::new(1)).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn corpus_tsv_round_trips(seed in any::<u64>(), size in 10usize..80, style in any::<bool>()) {
        let task = if style { TaskKind::StyleTransfer } else { TaskKind::LengthControl };
        let corpus = generate_corpus(task, size, 0.1, 0.1, &mut SeededRng::new(seed)).unwrap();
        let back = rectiflow::pipeline::Corpus::from_tsv(task, &corpus.to_tsv()).unwrap();
        prop_assert_eq!(back.content_hash(), corpus.content_hash());
        prop_assert_eq!(back, corpus);
    }
}
