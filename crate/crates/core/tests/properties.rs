mod common;

use common::{oracle_tfidf, oracle_top_n};
use lifelong_qg::encoding::normalize;
use lifelong_qg::metrics::{bleu, m_first, m_seen, meteor_lite, rouge_l, MetricMatrix};
use lifelong_qg::numerics::{clip_global_norm, global_norm, AdamW, AdamWConfig, Tape, Tensor};
use lifelong_qg::strider::{ewc_penalty, similarity_lambda, top_n, ScoredExample};
use lifelong_qg::{EncodedExample, EwcAnchor, ReplayMemory, Vocab};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-50.0f64..50.0, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

fn shaped() -> impl Strategy<Value = Tensor> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| matrix(r, c))
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "what", "is", "?"]), 0..9)
        .prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(t in shaped()) {
        let s = t.softmax(1).unwrap();
        let (rows, _) = s.dims2().unwrap();
        for r in 0..rows {
            let total: f64 = s.row(r).iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(s.row(r).iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn softmax_ignores_a_row_constant(
        ints in prop::collection::vec(-4096i64..4096, 1..8),
        shift in -1000i64..1000,
    ) {
        // Multiples of 1/64 keep every shifted value and difference exact.
        let x: Vec<f64> = ints.iter().map(|&i| i as f64 / 64.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v + shift as f64).collect();
        let a = Tensor::new(vec![1, x.len()], x).unwrap().softmax(1).unwrap();
        let b = Tensor::new(vec![1, y.len()], y).unwrap().softmax(1).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn clipping_never_increases_the_norm(
        grads in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 0..6), 1..4),
        max_norm in 0.01f64..20.0,
    ) {
        let before = global_norm(&grads);
        let mut clipped = grads.clone();
        clip_global_norm(&mut clipped, max_norm).unwrap();
        let after = global_norm(&clipped);
        prop_assert!(after <= before + 1e-12);
        prop_assert!((after - before.min(max_norm)).abs() <= 1e-9);
    }

    #[test]
    fn adamw_is_deterministic(p in matrix(2, 3), g in prop::collection::vec(-1.0f64..1.0, 6)) {
        let run = || {
            let mut params = vec![p.clone()];
            let mut opt = AdamW::new(AdamWConfig::default());
            for _ in 0..3 {
                opt.step(&mut params, std::slice::from_ref(&g)).unwrap();
            }
            params[0].data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn sum_backward_is_all_ones(t in shaped()) {
        let mut tape = Tape::new();
        let v = tape.leaf(t.clone().with_grad());
        let s = tape.sum(v).unwrap();
        let g = tape.backward(s).unwrap().get(v);
        prop_assert!(g.data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn detokenize_inverts_tokenize(text in "[a-z ?,.]{0,40}") {
        let vocab = Vocab::build([text.as_str()], 1, usize::MAX).unwrap();
        let ids = vocab.tokenize(&text);
        prop_assert_eq!(vocab.detokenize(&ids).unwrap(), normalize(&text));
    }

    #[test]
    fn top_n_matches_oracle(
        scores in prop::collection::vec(prop::sample::select(vec![0.0, 0.5, 1.0, 1.5, 2.0, 7.25]), 1..60),
        n in 1usize..70,
    ) {
        let scored: Vec<ScoredExample> = scores
            .iter()
            .enumerate()
            .map(|(i, &score)| ScoredExample {
                task_id: 1,
                score,
                example: EncodedExample { input_ids: vec![], target_ids: vec![], source_index: i },
            })
            .collect();
        let got: Vec<usize> = top_n(scored, n).iter().map(|s| s.example.source_index).collect();
        prop_assert_eq!(got, oracle_top_n(&scores, n));
    }

    #[test]
    fn lambda_stays_in_range(
        cur in prop::collection::vec(prop::collection::vec(0u8..12, 0..6), 0..5),
        mem in prop::collection::vec(prop::collection::vec(0u8..12, 0..6), 0..5),
        lambda_ori in 0.0f64..1e6,
    ) {
        let lambda = similarity_lambda(&cur, &mem, lambda_ori).unwrap();
        prop_assert!((0.0..=lambda_ori).contains(&lambda));
        let words = ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l"];
        let as_words = |side: &Vec<Vec<u8>>| -> Vec<Vec<&str>> {
            side.iter().map(|d| d.iter().map(|&t| words[t as usize]).collect()).collect()
        };
        let oracle = oracle_tfidf(&as_words(&cur), &as_words(&mem));
        prop_assert!((lambda - lambda_ori * oracle).abs() <= 1e-9 * lambda_ori.max(1.0));
    }

    #[test]
    fn ewc_penalty_is_nonnegative_and_linear(
        values in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0.0f64..3.0), 1..20),
        lambda in 0.0f64..1e5,
    ) {
        let theta: Vec<f64> = values.iter().map(|v| v.0).collect();
        let anchor: Vec<f64> = values.iter().map(|v| v.1).collect();
        let fisher: Vec<f64> = values.iter().map(|v| v.2).collect();
        let a = EwcAnchor::new(anchor.clone(), fisher.clone(), lambda).unwrap();
        let b = EwcAnchor::new(anchor, fisher, 2.0 * lambda).unwrap();
        let pa = ewc_penalty(&theta, &a).unwrap();
        prop_assert!(pa >= 0.0);
        prop_assert_eq!(2.0 * pa, ewc_penalty(&theta, &b).unwrap());
    }

    #[test]
    fn metrics_stay_in_unit_interval(pairs in prop::collection::vec((sentence(), sentence()), 1..6)) {
        let (c, r): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
        for n in 1..=4 {
            let b = bleu(&c, &r, n).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&b));
        }
        for (x, y) in c.iter().zip(&r) {
            prop_assert!((0.0..=1.0).contains(&rouge_l(x, y)));
            prop_assert!((0.0..=1.0).contains(&meteor_lite(x, y)));
        }
    }

    #[test]
    fn identical_corpora_score_one(c in prop::collection::vec(sentence(), 1..5)) {
        prop_assume!(c.iter().any(|s| s.split_whitespace().count() >= 4));
        for n in 1..=4 {
            prop_assert!((bleu(&c, &c, n).unwrap() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_matrix_aggregates_to_its_value(t in 1usize..8, c in 0.0f64..100.0) {
        let rows = (0..t).map(|k| vec![c; t - k]).collect();
        let m = MetricMatrix::from_rows("x", rows).unwrap();
        prop_assert!((m_seen(&m).unwrap().mean - c).abs() <= 1e-12 * c.max(1.0));
        prop_assert!((m_first(&m).unwrap().mean - c).abs() <= 1e-12 * c.max(1.0));
    }

    #[test]
    fn memory_never_exceeds_tasks_times_capacity(sizes in prop::collection::vec(0usize..12, 1..6), cap in 1usize..8) {
        let mut memory = ReplayMemory::new(cap).unwrap();
        for (task, size) in sizes.iter().enumerate() {
            let set: Vec<ScoredExample> = (0..*size)
                .map(|i| ScoredExample {
                    task_id: task + 1,
                    score: 0.0,
                    example: EncodedExample { input_ids: vec![4], target_ids: vec![4, 2], source_index: i },
                })
                .collect();
            let pushed = memory.push(task + 1, set);
            prop_assert_eq!(pushed.is_ok(), *size <= cap);
        }
        prop_assert!(memory.len() <= sizes.len() * cap);
    }
}
