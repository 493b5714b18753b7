use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use latte_core::raster::{Pixel, PixelGrid};
use latte_core::{delta_view, par};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sparse glyph-like ink on white, so many columns repeat.
fn page(rng: &mut ChaCha8Rng, height: usize, width: usize) -> PixelGrid {
    let mut g = PixelGrid::white(height, width).unwrap();
    let mut x = 8;
    while x + 6 < width {
        let glyph = rng.gen_range(0u8..24);
        for dx in 0..5 {
            for y in 0..height / 2 {
                if (glyph >> (dx % 5)) & 1 == 1 && (y + dx) % 3 != 0 {
                    g.set(height / 4 + y, x + dx, Pixel::BLACK);
                }
            }
        }
        x += rng.gen_range(6..12);
    }
    g
}

fn pairs(n: usize, height: usize, width: usize) -> Vec<(PixelGrid, PixelGrid)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    (0..n).map(|_| (page(&mut rng, height, width), page(&mut rng, height, width))).collect()
}

fn batch(c: &mut Criterion) {
    let items = pairs(32, 64, 672);
    let mut group = c.benchmark_group("delta_view_batch");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("sequential", items.len()), |b| {
        b.iter(|| par::map_sequential(&items, |(g, r)| delta_view(black_box(g), black_box(r)).unwrap().distance))
    });
    #[cfg(feature = "parallel")]
    group.bench_function(BenchmarkId::new("parallel", items.len()), |b| {
        b.iter(|| par::map_parallel(&items, |(g, r)| delta_view(black_box(g), black_box(r)).unwrap().distance))
    });
    group.finish();
}

fn single(c: &mut Criterion) {
    let (g, r) = pairs(1, 224, 1344).pop().unwrap();
    let mut group = c.benchmark_group("delta_view_single");
    group.sample_size(10);
    group.bench_function("formula_canvas", |b| b.iter(|| delta_view(black_box(&g), black_box(&r)).unwrap()));
    group.finish();
}

criterion_group!(benches, batch, single);
criterion_main!(benches);
