use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sols_core::algos::{advantages, loss, AlgoConfig, Algorithm, Terms};
use sols_core::env::{build_world, Family, World, WorldConfig};
use sols_core::eval::run_episode;
use sols_core::policy::{ActionTokenSequence, Featurizer, Policy};
use sols_core::replay::{StrBuffer, Transition};
use sols_core::trainer::{policy_config, Trainer, TrainerConfig};

fn setup() -> (World, Policy, Vec<Transition>) {
    let world = build_world(7, &WorldConfig::default()).unwrap();
    let policy = Policy::new(policy_config(&world, 128), 0).unwrap();
    let featurizer = Featurizer::new(&world);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let tasks: Vec<usize> = world.tasks_of(Family::B).map(|(i, _)| i).collect();
    let mut data = Vec::new();
    for (k, &t) in tasks.iter().cycle().enumerate() {
        if data.len() >= 64 {
            break;
        }
        let ep = run_episode(&world, &featurizer, &policy, t, 1.0, k as u64, 0, &mut rng).unwrap();
        data.extend(ep.transitions);
    }
    data.truncate(64);
    (world, policy, data)
}

fn policy_step(c: &mut Criterion) {
    let (world, policy, data) = setup();
    let fallback = ActionTokenSequence(Featurizer::new(&world).fallback());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = &data[0].features;
    c.bench_function("encode_and_sample", |b| {
        b.iter(|| {
            let enc = policy.encode(black_box(f)).unwrap();
            policy.sample(&enc, f, &world.vocabulary, 1.0, fallback, &mut rng).unwrap()
        })
    });
}

fn minibatch_gradient(c: &mut Criterion) {
    let (world, policy, data) = setup();
    let refs: Vec<&Transition> = data.iter().collect();
    let mut group = c.benchmark_group("minibatch_64_gradient");
    for algorithm in [Algorithm::Sols, Algorithm::Ppo, Algorithm::DigirlStr] {
        let cfg = AlgoConfig::new(algorithm);
        group.bench_function(algorithm.name(), |b| {
            let mut grads = policy.params.clone();
            b.iter(|| {
                grads.zero_grad();
                let adv = advantages(&policy, &refs, &cfg).unwrap();
                loss(&policy, &refs, &adv, &world.vocabulary, &cfg, Terms::Joint, 1.0, Some(&mut grads))
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn replay_record(c: &mut Criterion) {
    let (_, _, mut data) = setup();
    for t in &mut data {
        t.success = true;
        t.episode_id = 0;
        t.task_id = "task".into();
    }
    c.bench_function("replay_record_64_steps", |b| {
        b.iter_batched(
            StrBuffer::new,
            |mut buf| buf.record_episode(black_box(&data)).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn training_round(c: &mut Criterion) {
    let (world, policy, _) = setup();
    let cfg = TrainerConfig::desk(Algorithm::Sols);
    let mut group = c.benchmark_group("round");
    group.sample_size(10);
    group.bench_function("sols_str_desk", |b| {
        b.iter_batched(
            || Trainer::new(&world, cfg.clone(), policy.clone()).unwrap(),
            |mut t| t.run_round().unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, policy_step, minibatch_gradient, replay_record, training_round);
criterion_main!(benches);
