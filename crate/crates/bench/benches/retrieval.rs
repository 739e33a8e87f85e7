use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use map_bench::{history, target};
use map_core::similarity::genre_overlap_score;
use map_core::{retrieve_memory, RetrievalConfig, SimilarityStrategy, TrigramProvider};

fn retrieval(c: &mut Criterion) {
    let t = target();
    let mut group = c.benchmark_group("retrieve_memory");
    for n in [18, 200, 2000] {
        let h = history(n);
        let overlap = RetrievalConfig::default();
        group.bench_with_input(BenchmarkId::new("genre_overlap", n), &h, |b, h| {
            b.iter(|| retrieve_memory(black_box(h), &t, &overlap).unwrap())
        });
        let cosine = RetrievalConfig::with_k(5, SimilarityStrategy::embedding(Arc::new(TrigramProvider::default())));
        group.bench_with_input(BenchmarkId::new("trigram_cosine", n), &h, |b, h| {
            b.iter(|| retrieve_memory(black_box(h), &t, &cosine).unwrap())
        });
    }
    group.finish();
}

fn similarity(c: &mut Criterion) {
    let h = history(64);
    let t = target();
    c.bench_function("genre_overlap_score/64", |b| {
        b.iter(|| h.iter().map(|r| genre_overlap_score(black_box(&r.genres), &t.genres)).sum::<usize>())
    });
    let provider = TrigramProvider::default();
    c.bench_function("trigram_embed", |b| b.iter(|| provider.embed_one(black_box(&t.title))));
}

criterion_group!(benches, retrieval, similarity);
criterion_main!(benches);
