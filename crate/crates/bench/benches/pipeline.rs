use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use pgpo_core::policy_sim::{generate_task, rollout_group, PolicyParams, Sampling, TaskShape};
use pgpo_core::{
    gradient, reshape_flat, score_trajectory, ReshapeConfig, ScoreMode, TokenDistribution,
    TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_dists(rng: &mut ChaCha8Rng, len: usize, vocab: usize) -> Vec<TokenDistribution> {
    (0..len)
        .map(|_| {
            let logits: Vec<f64> = (0..vocab).map(|_| rng.gen_range(-3.0..3.0)).collect();
            TokenDistribution::from_logits(&logits).unwrap()
        })
        .collect()
}

fn bench_scoring(c: &mut Criterion) {
    let mut group = c.benchmark_group("score_trajectory");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(len, vocab) in &[(64, 32), (256, 64), (1024, 64)] {
        let cond = random_dists(&mut rng, len, vocab);
        let uncond = random_dists(&mut rng, len, vocab);
        let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
        for mode in [ScoreMode::Exact, ScoreMode::K3] {
            group.bench_with_input(
                BenchmarkId::new(format!("{mode:?}"), format!("T{len}_V{vocab}")),
                &(),
                |b, _| {
                    b.iter(|| {
                        score_trajectory(black_box(&cond), black_box(&uncond), Some(&tokens), mode, 1e-6)
                            .unwrap()
                    })
                },
            );
        }
    }
    group.finish();
}

fn bench_reshape(c: &mut Criterion) {
    let mut group = c.benchmark_group("reshape_flat");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = ReshapeConfig::default();
    for &(g, len) in &[(5, 64), (8, 512), (16, 2048)] {
        let lengths = vec![len; g];
        let raw: Vec<f64> = (0..g * len).map(|_| rng.gen_range(0.0..2.0)).collect();
        let rewards: Vec<f64> = (0..g).map(|i| (i % 2) as f64).collect();
        group.bench_with_input(BenchmarkId::from_parameter(format!("G{g}_T{len}")), &(), |b, _| {
            b.iter(|| reshape_flat(black_box(&raw), &rewards, &lengths, &cfg).unwrap())
        });
    }
    group.finish();
}

fn bench_gradient(c: &mut Criterion) {
    let shape = TaskShape::default();
    let cfg = TrainConfig::default();
    let params = PolicyParams::random(shape, 0.8, 3);
    let groups: Vec<_> = (0..8u64)
        .map(|k| {
            let task = generate_task(k, &shape).unwrap();
            let mut g = rollout_group(&params, &params, &task, 5, 100 + k, Sampling::Stochastic).unwrap();
            g.score(ScoreMode::Exact, cfg.reshape.epsilon).unwrap();
            g.normalize(cfg.epsilon_std).unwrap();
            g.reshape(&cfg.reshape).unwrap();
            g
        })
        .collect();
    c.bench_function("gradient_toy_batch", |b| {
        b.iter(|| gradient(black_box(&groups), &params, &cfg).unwrap())
    });
}

criterion_group!(benches, bench_scoring, bench_reshape, bench_gradient);
criterion_main!(benches);
