mod common;

use convo_td::checkpoint::{decode, encode};
use convo_td::corpus::{vectorize, BowVector, Vocabulary};
use convo_td::downstream::extract_features;
use convo_td::model::{centered_rows, sample_discourse, ModelConfig, ModelParameters};
use convo_td::nn::softmax;
use convo_td::objectives::{categorical_kld, gaussian_kld};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn distribution(len: usize) -> impl Strategy<Value = Array1<f64>> {
    proptest::collection::vec(0.01f64..1.0, len).prop_map(|v| {
        let total: f64 = v.iter().sum();
        Array1::from_iter(v.into_iter().map(|x| x / total))
    })
}

fn counts(len: usize) -> impl Strategy<Value = BowVector> {
    proptest::collection::vec(0u32..4, len).prop_map(|v| BowVector::from_dense(&v))
}

proptest! {
    #[test]
    fn flattening_yields_root_to_leaf_paths(parents in common::trees::parent_vectors(40)) {
        common::trees::check_flattening(&parents)?;
    }

    #[test]
    fn bag_of_words_ignores_order(tokens in proptest::collection::vec(0usize..12, 0..30), seed in any::<u64>()) {
        let vocab = Vocabulary::from_entries((0..10).map(|i| (format!("w{i}"), 1, false)).collect()).unwrap();
        let words: Vec<String> = tokens.iter().map(|t| format!("w{t}")).collect();
        let mut shuffled = words.clone();
        let mut state = seed;
        for i in (1..shuffled.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let bow = vectorize(&words, &vocab);
        prop_assert_eq!(&bow, &vectorize(&shuffled, &vocab));
        // w10 and w11 are out of vocabulary.
        prop_assert_eq!(bow.total() as usize, tokens.iter().filter(|&&t| t < 10).count());
    }

    #[test]
    fn vocabulary_survives_tsv(entries in proptest::collection::btree_map("[a-z#@_]{1,8}", (0u64..1000, any::<bool>()), 0..40)) {
        let vocab = Vocabulary::from_entries(entries.into_iter().map(|(w, (c, s))| (w, c, s)).collect()).unwrap();
        let mut buf = Vec::new();
        vocab.write_tsv(&mut buf).unwrap();
        let back = Vocabulary::read_tsv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.words(), vocab.words());
        prop_assert_eq!(back.stop_flags(), vocab.stop_flags());
        prop_assert_eq!(back.fingerprint(), vocab.fingerprint());
    }

    #[test]
    fn divergences_are_non_negative(
        mu in proptest::collection::vec(-5.0f64..5.0, 1..8),
        q in distribution(6),
        p in distribution(6),
    ) {
        let log_sigma = Array1::from_iter(mu.iter().map(|m| m.sin() * 2.0));
        let mu = Array1::from(mu);
        prop_assert!(gaussian_kld(&mu.view(), &log_sigma.view()).unwrap() >= 0.0);
        prop_assert!(gaussian_kld(&(&mu * 0.0).view(), &(&log_sigma * 0.0).view()).unwrap().abs() < 1e-15);
        prop_assert!(categorical_kld(&q.view(), &p.view()).unwrap() >= 0.0);
        prop_assert!(categorical_kld(&q.view(), &q.view()).unwrap().abs() < 1e-15);
    }

    #[test]
    fn softmax_normalizes(logits in proptest::collection::vec(-700.0f64..700.0, 1..50)) {
        let p = softmax(&Array1::from(logits).view());
        prop_assert!((p.sum() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn relaxed_samples_are_on_the_simplex(pi in distribution(5), g in proptest::collection::vec(-3.0f64..8.0, 5), tau in 0.05f64..2.0) {
        let d = sample_discourse(&pi.view(), tau, &Array1::from(g).view());
        prop_assert!((d.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_bytes_are_stable(topics in 2usize..5, roles in 2usize..4, vocab in 1usize..20, seed in any::<u64>()) {
        let cfg = ModelConfig { topic_hidden: 7, disc_hidden: 3, ..ModelConfig::new(topics, roles, vocab) };
        let bytes = encode(&ModelParameters::init(&cfg, seed), &cfg, Some("h"));
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(encode(&back.params, &back.config, back.vocab_hash.as_deref()), bytes);
    }

    #[test]
    fn centered_rows_ignore_shared_shifts(
        rows in 1usize..5,
        weights in proptest::collection::vec(-3.0f64..3.0, 20),
        shift in proptest::collection::vec(-10.0f64..10.0, 4),
    ) {
        let w = Array2::from_shape_fn((rows, 4), |(i, j)| weights[(i * 4 + j) % 20]);
        let shifted = &w + &Array1::from(shift);
        let (a, b) = (centered_rows(&w), centered_rows(&shifted));
        prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-9));
        prop_assert!(a.sum_axis(ndarray::Axis(0)).iter().all(|s| s.abs() < 1e-9));
    }

    #[test]
    fn feature_segments_are_distributions(message in counts(9), extra in counts(9), seed in 0u64..50) {
        let cfg = ModelConfig { topic_hidden: 6, disc_hidden: 5, ..ModelConfig::new(4, 3, 9) };
        let params = ModelParameters::init(&cfg, seed);
        let f = extract_features(&message, &message.add(&extra), &params).unwrap();
        prop_assert_eq!(f.len(), 7);
        prop_assert!((f.slice(ndarray::s![..4]).sum() - 1.0).abs() < 1e-9);
        prop_assert!((f.slice(ndarray::s![4..]).sum() - 1.0).abs() < 1e-9);
    }
}
