use criterion::{criterion_group, criterion_main, Criterion};
use lcot_bench::fixture;
use lcot_core::nn::Graph;
use lcot_core::policy::{rollout, LwmSource, Mode, SampleConfig};
use lcot_core::train::stage0_loss;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn benches(c: &mut Criterion) {
    let f = fixture();
    let clip = &f.clips[0];

    c.bench_function("codec_encode_64", |b| b.iter(|| f.codebook.encode(&clip.ego_future).unwrap()));

    let obs = f.policy.observe(clip);
    let finals = f.codebook.encode(&clip.ego_future).unwrap();
    c.bench_function("stage0_forward_backward", |b| {
        b.iter(|| {
            let mut g = Graph::new(&f.store);
            let l = stage0_loss(&f.policy, &mut g, &obs, &finals, Mode::Lwm0).unwrap();
            g.backward(l.total).unwrap()
        })
    });

    let mut group = c.benchmark_group("rollout");
    group.sample_size(10);
    for (name, mode, k) in [("none", Mode::None, 0), ("latent_cot_k5_b2", Mode::LatentCot, 5)] {
        let cfg = SampleConfig { k, b: 2, temperature: 0.6, top_p: 0.98 };
        group.bench_function(name, |b| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            b.iter(|| rollout(&f.policy, &f.store, &f.codebook, clip, mode, LwmSource::Gt, &cfg, &mut rng).unwrap())
        });
    }
    group.finish();
}

criterion_group!(core, benches);
criterion_main!(core);
