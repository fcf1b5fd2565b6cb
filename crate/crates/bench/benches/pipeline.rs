use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use phapred::data::{auto_label, LabelThresholds};
use phapred::model::PhaModel;
use phapred::select::{select_fps, select_nms};
use phapred::train::{loss_and_grads, LossOptions};
use phapred::ModelConfig;
use phapred_bench::{random_set, scenes};

fn selection(c: &mut Criterion) {
    let set = random_set(50, 30, 1);
    c.bench_function("fps_50_to_6", |b| {
        b.iter(|| select_fps(black_box(&set), 6).unwrap())
    });
    c.bench_function("nms_50_to_6", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        b.iter(|| select_nms(black_box(&set), 6, 2.0, &mut rng).unwrap())
    });
}

fn model(c: &mut Criterion) {
    let records = scenes(4, 3);
    let model = PhaModel::new(ModelConfig::default(), 0).unwrap();
    c.bench_function("sample_50_sequences", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        b.iter(|| {
            model
                .sample_sequences(black_box(&records[0]), 50, &mut rng)
                .unwrap()
        })
    });
    c.bench_function("loss_and_grads", |b| {
        b.iter(|| {
            loss_and_grads(&model, black_box(&records[1]), LossOptions::default(), 5).unwrap()
        })
    });
    let mut track = records[2].observed.clone();
    track.extend_from_slice(&records[2].future);
    let th = LabelThresholds::default();
    c.bench_function("auto_label_50_points", |b| {
        b.iter(|| auto_label(black_box(&track), &th).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = selection, model
}
criterion_main!(benches);
