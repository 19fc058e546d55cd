use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use hids_bench::{dataset, prepared};
use hids_core::features::{Featurizer, Representation};
use hids_core::federated::{aggregate_fa, aggregate_wfa, ClientUpdate};
use hids_core::nn::{self, EpochStream, TrainConfig};
use hids_core::pca::{fit_pca, jacobi_eigen, ComponentSelection};

fn featurize(c: &mut Criterion) {
    let ds = dataset(200);
    let all: Vec<usize> = (0..ds.len()).collect();
    let f = Featurizer::fit(&ds, &all, Representation::Tfidf, 30, 10).unwrap();
    c.bench_function("tfidf_fit_400_traces", |b| {
        b.iter(|| Featurizer::fit(&ds, black_box(&all), Representation::Tfidf, 30, 10).unwrap())
    });
    c.bench_function("tfidf_transform_400_traces", |b| {
        b.iter(|| f.transform(&ds, black_box(&all)).unwrap())
    });
}

fn pca(c: &mut Criterion) {
    let ds = dataset(200);
    let all: Vec<usize> = (0..ds.len()).collect();
    let m = Featurizer::fit(&ds, &all, Representation::Tfidf, 30, 10)
        .unwrap()
        .transform(&ds, &all)
        .unwrap();
    c.bench_function("pca_fit_tfidf", |b| {
        b.iter(|| {
            fit_pca(
                black_box(&m.data),
                m.rows,
                m.cols,
                ComponentSelection::default(),
            )
            .unwrap()
        })
    });

    let n = 64;
    let sym: Vec<f64> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            ((i * j + i + j) % 17) as f64 / 17.0 + if i == j { n as f64 } else { 0.0 }
        })
        .collect();
    c.bench_function("jacobi_64x64", |b| {
        b.iter(|| jacobi_eigen(black_box(&sym), n))
    });
}

fn training(c: &mut Criterion) {
    let ds = dataset(200);
    let (cfg, p) = prepared(&ds);
    let init = nn::init_mlp(&p.mlp_dims(&cfg.hidden), 0).unwrap();
    let one_epoch = TrainConfig {
        epochs: 1,
        ..cfg.train.clone()
    };
    c.bench_function("mlp_epoch", |b| {
        b.iter(|| {
            nn::train_epochs(&init, &p.train, &one_epoch, EpochStream::central(0), 0, 1).unwrap()
        })
    });
    c.bench_function("mlp_predict_test", |b| {
        b.iter(|| nn::predict_proba(&init, black_box(&p.test)).unwrap())
    });
}

fn aggregation(c: &mut Criterion) {
    let dims = [64, 64, 32, 1];
    let updates: Vec<ClientUpdate> = (0..8)
        .map(|k| ClientUpdate {
            params: nn::init_mlp(&dims, k).unwrap(),
            sample_count: 10 * (k as usize + 1),
        })
        .collect();
    c.bench_function("aggregate_fa_8_clients", |b| {
        b.iter_batched(
            || updates.clone(),
            |u| aggregate_fa(&u).unwrap(),
            BatchSize::SmallInput,
        )
    });
    c.bench_function("aggregate_wfa_8_clients", |b| {
        b.iter(|| aggregate_wfa(black_box(&updates)).unwrap())
    });
}

criterion_group!(benches, featurize, pca, training, aggregation);
criterion_main!(benches);
