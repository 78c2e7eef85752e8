use std::hint::black_box;

use auxcnn_core::data::render_sample;
use auxcnn_core::data::images_to_tensor;
use auxcnn_core::losses::reconstruction_loss;
use auxcnn_core::training::{init_parameters, Method, ModelSpec, TrainConfig, Trainer};
use auxcnn_core::{Backprop, ConvSpec, GraphBuilder, Mode, OwnerGroup, ParameterStore, Tensor};
use criterion::{criterion_group, criterion_main, Criterion};

fn input(batch: usize, c: usize, side: usize) -> Tensor<f32> {
    Tensor::from_fn(&[batch, c, side, side], |i| ((i * 7919) % 1000) as f32 / 1000.0)
}

fn layers(c: &mut Criterion) {
    let cases = [
        ("conv3x3_16ch_16px", ConvSpec::new(16, 16, 3, 1, 1), false, 16),
        ("conv4x4_s2_16ch_32px", ConvSpec::k4s2(16, 32), false, 32),
        ("deconv4x4_s2_32ch_8px", ConvSpec::k4s2(32, 16), true, 8),
    ];
    for (name, spec, deconv, side) in cases {
        let mut store = ParameterStore::<f32>::new();
        let mut b = GraphBuilder::new(&mut store, name, OwnerGroup::F);
        let x = b.input(&[spec.in_channels, side, side]);
        let y = if deconv { b.deconv("op", x, spec) } else { b.conv("op", x, spec) }.unwrap();
        let g = b.finish(y).unwrap();
        init_parameters(&mut store, 1);
        let xin = input(8, spec.in_channels, side);
        c.bench_function(&format!("{name}_forward"), |bch| {
            bch.iter(|| black_box(g.forward(&store, &[&xin], Mode::Train).unwrap()))
        });
        let acts = g.forward(&store, &[&xin], Mode::Train).unwrap();
        let up = Tensor::full(acts.output().shape(), 1e-3f32);
        c.bench_function(&format!("{name}_backward"), |bch| {
            bch.iter(|| black_box(g.backward(&mut store, &acts, &up, Backprop::all()).unwrap()))
        });
    }
}

fn losses(c: &mut Criterion) {
    let x = input(8, 1, 32);
    let y = x.map(|v| 1.0 - v);
    c.bench_function("reconstruction_loss_8x32px", |b| {
        b.iter(|| black_box(reconstruction_loss(&x, &y, 1e-6, 1e-6).unwrap()))
    });
}

fn train_steps(c: &mut Criterion) {
    let mut spec = ModelSpec::new(12, 32);
    spec.base_width = 8;
    spec.rnet_hidden = 256;
    spec.rnet_channels = 32;
    spec.dnet_base_channels = 16;
    let imgs: Vec<_> = (0..8).map(|i| render_sample(i % 3, 32, i as u64)).collect();
    let x = images_to_tensor(&imgs.iter().collect::<Vec<_>>()).unwrap();
    let y: Vec<usize> = (0..8).map(|i| i % 3).collect();
    let mut group = c.benchmark_group("train_batch_8x32px");
    group.sample_size(10);
    for method in [Method::Baseline, Method::RNetDNet] {
        let cfg = TrainConfig::new(method, 32, 1);
        let mut t = Trainer::new(spec.bundle_config(method, 3).unwrap(), cfg).unwrap();
        group.bench_function(method.name(), |b| b.iter(|| black_box(t.train_batch(&x, &y).unwrap())));
    }
    group.finish();
}

criterion_group!(benches, layers, losses, train_steps);
criterion_main!(benches);
