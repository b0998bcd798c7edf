use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lifelong_qg::metrics::score_corpus;
use lifelong_qg::numerics::Tape;
use lifelong_qg_bench::{random_batch, random_tensor, small_model};

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [32usize, 64, 128] {
        let a = random_tensor(n, n, 1);
        let b = random_tensor(n, n, 2);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(a.matmul(&b).unwrap()))
        });
    }
    g.finish();
}

fn attention(c: &mut Criterion) {
    let q = random_tensor(32, 64, 3);
    let k = random_tensor(32, 64, 4);
    let v = random_tensor(32, 64, 5);
    c.bench_function("attention_fwd_bwd_32x64_h4", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (q, k, v) = (tape.leaf(q.clone()), tape.leaf(k.clone()), tape.leaf(v.clone()));
            let out = tape.attention(q, k, v, 4, true).unwrap();
            let s = tape.sum(out).unwrap();
            black_box(tape.backward(s).unwrap());
        })
    });
}

fn training_step(c: &mut Criterion) {
    let model = small_model(300);
    let batch = random_batch(16, 28, 8, 300, 6);
    c.bench_function("loss_and_grad_batch16", |bench| {
        bench.iter(|| black_box(model.loss_and_grad(&batch, Some(1)).unwrap()))
    });
    let input = &batch[0].input_ids;
    c.bench_function("generate_len16", |bench| {
        bench.iter(|| black_box(model.generate(input, 16).unwrap()))
    });
}

fn metrics(c: &mut Criterion) {
    let cands: Vec<String> = (0..200).map(|i| format!("what did the cat {i} see on the mat ?")).collect();
    let refs: Vec<String> = (0..200).map(|i| format!("what did the dog {i} see near the mat ?")).collect();
    c.bench_function("score_corpus_200", |bench| {
        bench.iter(|| black_box(score_corpus(&cands, &refs).unwrap()))
    });
}

criterion_group!(benches, matmul, attention, training_step, metrics);
criterion_main!(benches);
