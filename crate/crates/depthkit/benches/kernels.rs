//! Kernel benchmarks, labeled by execution mode so the data-parallel and
//! sequential builds can be compared directly:
//!
//! ```text
//! cargo bench -p depthkit                          # par
//! cargo bench -p depthkit --no-default-features    # seq
//! ```

use criterion::{criterion_group, criterion_main, Criterion};
use depthkit::edges::boundary_weight_mask;
use depthkit::losses::{
    berhu, gfrl, normal_loss, sample_grid_points, scale_invariant_gradient,
};
use depthkit::metrics::evaluate;
use depthkit::mixer::{next_batch, Category, CurriculumSchedule, DatasetDescriptor};
use depthkit::DepthMap;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

const MODE: &str = if cfg!(feature = "parallel") {
    "par"
} else {
    "seq"
};

fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize) -> DepthMap {
    let values = (0..w * h).map(|_| rng.random_range(0.5..10.0)).collect();
    DepthMap::from_values(w, h, values).unwrap()
}

fn bench_kernels(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let pred = random_map(&mut rng, 256, 256);
    let gt = random_map(&mut rng, 256, 256);
    let spacings = [1, 2, 4, 8, 16];

    c.bench_function(&format!("berhu_256/{MODE}"), |b| {
        b.iter(|| berhu(black_box(&pred), black_box(&gt), None).unwrap())
    });

    c.bench_function(&format!("gradient_loss_256/{MODE}"), |b| {
        b.iter(|| {
            scale_invariant_gradient(black_box(&pred), black_box(&gt), &spacings).unwrap()
        })
    });

    c.bench_function(&format!("normal_loss_256/{MODE}"), |b| {
        b.iter(|| normal_loss(black_box(&pred), black_box(&gt)).unwrap())
    });

    c.bench_function(&format!("metrics_256/{MODE}"), |b| {
        b.iter(|| evaluate(black_box(&pred), black_box(&gt)).unwrap())
    });

    c.bench_function(&format!("boundary_mask_256/{MODE}"), |b| {
        b.iter(|| boundary_weight_mask(black_box(&gt), 0.05, 0.1).unwrap())
    });

    c.bench_function(&format!("ranking_loss_256pts/{MODE}"), |b| {
        let mut sample_rng = ChaCha8Rng::seed_from_u64(7);
        let points = sample_grid_points(&pred, &gt, 16, 16, &mut sample_rng).unwrap();
        b.iter(|| gfrl(black_box(&points), 2.0, 0.02).unwrap())
    });

    c.bench_function(&format!("sampler_batch48/{MODE}"), |b| {
        let schedule = CurriculumSchedule::new(
            depthkit::mixer::default_stages(),
            vec![
                DatasetDescriptor {
                    id: "rooms".into(),
                    category: Category::Indoor,
                    size: 795,
                },
                DatasetDescriptor {
                    id: "renders".into(),
                    category: Category::Synthetic,
                    size: 5000,
                },
            ],
        )
        .unwrap();
        let mut batch_rng = ChaCha8Rng::seed_from_u64(3);
        b.iter(|| next_batch(black_box(&schedule), 48, &mut batch_rng).unwrap())
    });
}

criterion_group!(kernels, bench_kernels);
criterion_main!(kernels);
