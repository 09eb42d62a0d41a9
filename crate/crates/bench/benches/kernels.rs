use candle_core::{DType, Tensor};
use criterion::{criterion_group, criterion_main, Criterion};
use emss_core::data::image::standardize;
use emss_core::metrics::dice;
use emss_core::model_zoo::{build_generator, receptive_field, unet_preset_names};
use emss_core::{device, ImageGrid, ModelSpec};
use std::hint::black_box;

fn rf(c: &mut Criterion) {
    let specs: Vec<ModelSpec> = unet_preset_names()
        .into_iter()
        .map(|n| ModelSpec::preset(n).unwrap())
        .collect();
    c.bench_function("receptive_field/all_unets", |b| {
        b.iter(|| {
            for s in &specs {
                black_box(receptive_field(s).unwrap());
            }
        })
    });
}

fn forward(c: &mut Criterion) {
    let spec = ModelSpec::preset_with("U-Net_2_44", 1, 1, Some(8)).unwrap();
    let net = build_generator(&spec, 0).unwrap();
    let x = Tensor::ones((4, 1, 64, 64), DType::F32, &device()).unwrap();
    c.bench_function("forward/unet_2_44_w8_4x64x64", |b| {
        b.iter(|| black_box(net.forward(&x).unwrap()))
    });
}

fn grids(c: &mut Criterion) {
    let a = ImageGrid::from_fn(256, 256, |r, k| ((r * 7 + k * 13) % 5 == 0) as u8 as f32);
    let g = ImageGrid::from_fn(256, 256, |r, k| ((r * 3 + k * 11) % 4 == 0) as u8 as f32);
    c.bench_function("dice/256x256", |b| b.iter(|| black_box(dice(&a, &g).unwrap())));
    let img = ImageGrid::from_fn(256, 256, |r, k| (r as f32 * 0.1).sin() + k as f32 * 0.01);
    c.bench_function("standardize/256x256", |b| b.iter(|| black_box(standardize(&img))));
}

criterion_group!(benches, rf, forward, grids);
criterion_main!(benches);
