use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use map_bench::{history, target, REPLIES};
use map_core::prompting::{estimate_tokens, parse_rating_reply, BaselineMode};
use map_core::{retrieve_memory, PromptBuilder, RetrievalConfig};

fn prompts(c: &mut Criterion) {
    let builder = PromptBuilder::default();
    let h = history(18);
    let t = target();
    let memory = retrieve_memory(&h, &t, &RetrievalConfig::default()).unwrap();
    c.bench_function("recommendation_prompt/k5", |b| b.iter(|| builder.recommendation(black_box(&t), &memory)));
    c.bench_function("baseline_prompt/18", |b| {
        b.iter(|| builder.baseline(black_box(&h), &t, BaselineMode::SingleDomain))
    });
    let text = builder.baseline(&h, &t, BaselineMode::SingleDomain).text();
    c.bench_function("estimate_tokens", |b| b.iter(|| estimate_tokens(black_box(&text))));
}

fn parsing(c: &mut Criterion) {
    c.bench_function("parse_rating_reply", |b| {
        b.iter(|| REPLIES.iter().filter_map(|r| parse_rating_reply(black_box(r)).ok()).sum::<f64>())
    });
}

criterion_group!(benches, prompts, parsing);
criterion_main!(benches);
