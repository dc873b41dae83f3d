use criterion::{black_box, criterion_group, criterion_main, Criterion};

use ntnt_core::nets::{DenoiserConfig, DenoiserParams, TranslatorConfig, TranslatorParams};
use ntnt_core::rand_noise::{sample_gaussian, Prng};
use ntnt_core::spectral::{dft2_channelwise, magnitude};
use ntnt_core::stats::{channel_samples, w1_sorted};
use ntnt_core::{Graph, Tensor};

fn conv(c: &mut Criterion) {
    let mut prng = Prng::new(0);
    let x: Tensor<f32> = prng.gaussian_tensor([8, 16, 16, 16], 0.0, 1.0);
    let k: Tensor<f32> = prng.gaussian_tensor([32, 16, 3, 3], 0.0, 0.1);
    let b: Tensor<f32> = Tensor::zeros([32]);
    c.bench_function("conv3x3 16->32 8x16x16 fwd+bwd", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (xv, kv, bv) = (g.param(x.clone()), g.param(k.clone()), g.param(b.clone()));
            let y = g.conv2d(xv, kv, bv, 1, 1).unwrap();
            let s = g.sum(y).unwrap();
            black_box(g.backward(s).unwrap());
        })
    });
}

fn fft(c: &mut Criterion) {
    let field = sample_gaussian(&mut Prng::new(1), [1, 64, 64], 0.0, 0.1).unwrap();
    c.bench_function("dft2 magnitude 64x64", |bench| {
        bench.iter(|| black_box(magnitude(&dft2_channelwise(black_box(&field)), true)))
    });
}

fn w1(c: &mut Criterion) {
    let a = sample_gaussian(&mut Prng::new(2), [1, 64, 64], 0.0, 0.1).unwrap();
    let b = sample_gaussian(&mut Prng::new(3), [1, 64, 64], 0.0, 0.1).unwrap();
    c.bench_function("w1_sorted 4096", |bench| {
        bench.iter(|| black_box(w1_sorted(&channel_samples(&a), &channel_samples(&b)).unwrap()))
    });
}

fn networks(c: &mut Criterion) {
    let mut prng = Prng::new(4);
    let t = TranslatorParams::<f32>::new(TranslatorConfig::default(), &mut prng).unwrap();
    let d = DenoiserParams::<f32>::new(DenoiserConfig::default(), &mut prng).unwrap();
    let x: Tensor<f32> = prng.gaussian_tensor([1, 1, 64, 64], 0.5, 0.1);
    c.bench_function("translator forward 64x64", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let vars = t.params.bind(&mut g, false);
            let xv = g.constant(x.clone());
            black_box(t.forward(&mut g, &vars, xv, &mut Prng::new(5)).unwrap());
        })
    });
    c.bench_function("denoiser forward 64x64", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let vars = d.params.bind(&mut g, false);
            let xv = g.constant(x.clone());
            black_box(d.forward(&mut g, &vars, xv).unwrap());
        })
    });
}

criterion_group!(benches, conv, fft, w1, networks);
criterion_main!(benches);
