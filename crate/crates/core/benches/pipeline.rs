use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spade_core::evaluation::pro_curve_with;
use spade_core::pipeline::fit;
use spade_core::retrieval::{build_pixel_gallery, ExactSearch, KdTree, NeighborSearch, VectorSet};
use spade_core::scoring::{score_level, score_pyramid};
use spade_core::synthetic::{generate, SynthSpec};
use spade_core::{AnomalyMap, Execution, Extractor, ExtractorSpec, Grid, GroundTruthMask, PipelineConfig};

const POLICIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn scoring(c: &mut Criterion) {
    let size = 128;
    let set = generate(&SynthSpec::localization(10, 1, 0, size, 1)).unwrap();
    let extractor = Extractor::load(&ExtractorSpec::toy(0)).unwrap();
    let base = PipelineConfig {
        k: 5,
        eval_resolution: (size, size),
        ..PipelineConfig::default()
    };
    let index = fit(&set.train, &extractor, &base).unwrap();
    let query = extractor.extract(&set.test[0]).unwrap();
    let neighbors: Vec<String> = index.image_ids()[..5].to_vec();
    let gallery = build_pixel_gallery(&neighbors, index.store(), &base.levels_selected, base.search).unwrap();

    let mut group = c.benchmark_group("pixel_knn_layer1");
    for (name, exec) in POLICIES {
        group.bench_function(name, |b| {
            b.iter(|| score_level(black_box(&query), &gallery, "layer1", 1, exec).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("score_image");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        let config = PipelineConfig {
            execution: exec,
            ..base.clone()
        };
        group.bench_function(name, |b| {
            b.iter(|| score_pyramid(black_box(&query), (size, size), &index, &config).unwrap())
        });
    }
    group.finish();
}

fn search_backends(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut group = c.benchmark_group("knn_backend");
    for dim in [8usize, 64] {
        let n = 2000;
        let data: Vec<f32> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rows = Arc::new(VectorSet::new(dim, data).unwrap());
        let queries: Vec<Vec<f32>> = (0..100).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let exact = ExactSearch::new(rows.clone());
        let tree = KdTree::build(rows);
        let backends: [(&str, &dyn NeighborSearch); 2] = [("exact", &exact), ("kd_tree", &tree)];
        for (name, search) in backends {
            group.bench_with_input(BenchmarkId::new(name, dim), &queries, |b, qs| {
                b.iter(|| {
                    for q in qs {
                        black_box(search.knn(q, 5).unwrap());
                    }
                })
            });
        }
    }
    group.finish();
}

fn pro(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut maps, mut masks) = (Vec::new(), Vec::new());
    for i in 0..20 {
        let id = format!("img{i}");
        let mask = Grid::from_fn(128, 128, |y, x| u8::from((y / 16 + x / 16 + i) % 7 == 0));
        let scores = Grid::from_fn(128, 128, |y, x| mask.get(y, x) as f64 * 0.5 + rng.random::<f64>());
        maps.push(AnomalyMap {
            image_id: id.clone(),
            scores,
            image_score: 0.0,
        });
        masks.push(GroundTruthMask::new(id, mask).unwrap());
    }
    let mut group = c.benchmark_group("pro_curve");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(name, |b| b.iter(|| pro_curve_with(&maps, &masks, 0.3, 200, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, scoring, search_backends, pro);
criterion_main!(benches);
