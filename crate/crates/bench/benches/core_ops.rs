use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use instab::construction::{FoldChoice, Tower};
use instab::exact::rat;
use instab::gadget::fold_metric;
use instab::martingale::{select_extension, KtMixture};
use instab::randomness::{block_reports, lln_test};
use instab::{lz78_encode, BinString, Supermartingale};

fn pseudo_bits(n: usize) -> BinString {
    let mut s = 0x9e37_79b9_7f4a_7c15u64;
    BinString::from_bits(
        (0..n)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s & 1) as u8
            })
            .collect(),
    )
}

fn lz78(c: &mut Criterion) {
    let x = pseudo_bits(1 << 14);
    c.bench_function("lz78_encode_16k", |b| b.iter(|| lz78_encode(black_box(&x))));
}

fn metric(c: &mut Criterion) {
    let letters = vec![(rat(1, 2), 3), (rat(1, 4), 4), (rat(1, 8), 5), (rat(1, 8), 6)];
    c.bench_function("fold_metric_k4_m16", |b| {
        b.iter(|| fold_metric(black_box(&letters), &rat(3, 4), 16, 1 << 20))
    });
}

fn martingale(c: &mut Criterion) {
    let x = pseudo_bits(256);
    c.bench_function("kt_prefix_values_256", |b| b.iter(|| KtMixture.prefix_values(black_box(&x))));
    let a: Vec<BinString> = (1..=8).flat_map(BinString::all_of_length).take(200).collect();
    let x = pseudo_bits(32);
    c.bench_function("select_extension_200", |b| b.iter(|| select_extension(&KtMixture, black_box(&x), &a)));
}

fn tests(c: &mut Criterion) {
    let t = lln_test(&rat(1, 4)).unwrap();
    c.bench_function("lln_block_reports_20", |b| b.iter(|| block_reports(&t, black_box(20))));
}

fn tower(c: &mut Criterion) {
    c.bench_function("tower_stages_0_to_2", |b| {
        b.iter(|| {
            let mut t = Tower::new(&rat(1, 8), 3).unwrap();
            t.advance(1, &FoldChoice::Fixed(4)).unwrap();
            t.advance(1, &FoldChoice::Fixed(2)).unwrap();
            t
        })
    });
}

criterion_group!(benches, lz78, metric, martingale, tests, tower);
criterion_main!(benches);
