use std::fs;

use sols_core::algos::Algorithm;
use sols_core::env::{build_world, World, WorldConfig};
use sols_core::policy::Policy;
use sols_core::trainer::{
    policy_config, sft_from_world, train, Trainer, TrainerConfig, CATEGORY_HEADER, EVAL_HEADER,
    METRICS_HEADER,
};
use sols_core::Error;

fn world() -> World {
    build_world(7, &WorldConfig::default()).unwrap()
}

fn small(algorithm: Algorithm) -> TrainerConfig {
    TrainerConfig {
        workers: 3,
        on_policy_per_round: 30,
        total_episodes: 60,
        hidden: 24,
        minibatch: 16,
        eval_runs: 1,
        eval_every_rounds: 0,
        seed: 5,
        ..TrainerConfig::desk(algorithm)
    }
}

fn init(world: &World, cfg: &TrainerConfig) -> Policy {
    Policy::new(policy_config(world, cfg.hidden), 1).unwrap()
}

fn bits(p: &Policy) -> Vec<u64> {
    p.params.iter().flat_map(|x| x.value.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn identical_seeds_give_identical_runs() {
    let w = world();
    let cfg = small(Algorithm::Sols);
    let mut a = Trainer::new(&w, cfg.clone(), init(&w, &cfg)).unwrap();
    let mut b = Trainer::new(&w, cfg.clone(), init(&w, &cfg)).unwrap();
    for _ in 0..3 {
        assert_eq!(a.run_round().unwrap(), b.run_round().unwrap());
    }
    assert_eq!(bits(&a.policy), bits(&b.policy));
    assert_eq!(a.buffers, b.buffers);

    let mut other = Trainer::new(&w, TrainerConfig { seed: 6, ..cfg.clone() }, init(&w, &cfg)).unwrap();
    other.run_round().unwrap();
    let mut c = Trainer::new(&w, cfg.clone(), init(&w, &cfg)).unwrap();
    c.run_round().unwrap();
    assert_ne!(bits(&other.policy), bits(&c.policy));
}

#[test]
fn resuming_from_a_checkpoint_matches_an_uninterrupted_run() {
    let w = world();
    let cfg = small(Algorithm::Sols);
    let mut straight = Trainer::new(&w, cfg.clone(), init(&w, &cfg)).unwrap();
    for _ in 0..4 {
        straight.run_round().unwrap();
    }

    let dir = tempfile::tempdir().unwrap();
    let mut first = Trainer::new(&w, cfg.clone(), init(&w, &cfg)).unwrap();
    first.run_round().unwrap();
    first.run_round().unwrap();
    first.save_checkpoint(dir.path()).unwrap();
    drop(first);
    let mut resumed = Trainer::load_checkpoint(&w, dir.path()).unwrap();
    assert_eq!(resumed.round, 2);
    resumed.run_round().unwrap();
    resumed.run_round().unwrap();

    assert_eq!(bits(&straight.policy), bits(&resumed.policy));
    assert_eq!(straight.buffers, resumed.buffers);
    assert_eq!(straight.optimizer, resumed.optimizer);
    assert_eq!(straight.episodes, resumed.episodes);
}

#[test]
fn corrupt_or_foreign_checkpoints_are_rejected() {
    let w = world();
    let cfg = small(Algorithm::Sols);
    let mut t = Trainer::new(&w, cfg.clone(), init(&w, &cfg)).unwrap();
    t.run_round().unwrap();
    let dir = tempfile::tempdir().unwrap();
    t.save_checkpoint(dir.path()).unwrap();

    let other = build_world(8, &WorldConfig::default()).unwrap();
    assert!(matches!(Trainer::load_checkpoint(&other, dir.path()), Err(Error::Format(_))));

    let path = dir.path().join("params.ckpt");
    let mut bytes = fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 9] ^= 0x40;
    fs::write(&path, bytes).unwrap();
    assert!(matches!(Trainer::load_checkpoint(&w, dir.path()), Err(Error::Format(_))));
}

#[test]
fn rounds_account_for_every_episode_and_keep_the_learning_rate() {
    let w = world();
    let cfg = small(Algorithm::Sols);
    let mut t = Trainer::new(&w, cfg.clone(), init(&w, &cfg)).unwrap();
    let mut total = 0;
    let mut rounds = 0;
    while !t.done() {
        let r = t.run_round().unwrap();
        rounds += 1;
        total += r.episodes;
        assert_eq!(r.episodes_total, total);
        assert_eq!(r.learning_rate, cfg.rl_learning_rate);
        assert!(r.transitions >= cfg.workers * cfg.on_policy_per_round);
        assert_eq!(r.overall.episodes, r.by_task.values().map(|x| x.episodes).sum::<usize>());
        assert_eq!(r.overall.episodes, r.by_category.values().map(|x| x.episodes).sum::<usize>());
        assert_eq!(r.overall.successes, r.by_difficulty.values().map(|x| x.successes).sum::<usize>());
        // every worker trains on its own rollouts plus at most the replay budget
        let data: usize = r.dataset_sizes.iter().sum();
        let replay_cap: usize = r.str_sizes.iter().map(|s| (*s).min(cfg.str_budget)).sum();
        assert!(data >= r.transitions && data <= r.transitions + replay_cap);
        assert!(r.dataset_sizes.iter().all(|d| *d >= cfg.on_policy_per_round));
    }
    assert_eq!(t.episodes, total);
    assert_eq!(t.round, rounds);
    assert!(total >= cfg.total_episodes);
    assert_eq!(t.optimizer.config.lr, cfg.rl_learning_rate);
}

#[test]
fn replay_buffers_stay_with_their_worker() {
    let w = world();
    let cfg = TrainerConfig {
        total_episodes: 200,
        ..small(Algorithm::Sols)
    };
    let (sft, _) = sft_from_world(&w, &TrainerConfig { sft_epochs: 1, ..cfg.clone() }).unwrap();
    let mut t = Trainer::new(&w, cfg.clone(), sft).unwrap();
    while !t.done() {
        t.run_round().unwrap();
    }
    assert_eq!(t.buffers.len(), cfg.workers);
    assert!(t.buffers.iter().any(|b| !b.is_empty()), "no success was ever recorded");
    for (i, b) in t.buffers.iter().enumerate() {
        for (task, list) in b.tasks() {
            assert!(list.len() <= cfg.str_capacity);
            assert!(list.iter().all(|x| x.worker == i && x.success && &x.task_id == task));
        }
    }
}

#[test]
fn without_replay_no_stored_steps_reach_training() {
    let w = world();
    let cfg = TrainerConfig {
        use_str: false,
        ..small(Algorithm::Sols)
    };
    let mut t = Trainer::new(&w, cfg.clone(), init(&w, &cfg)).unwrap();
    let r = t.run_round().unwrap();
    let per_worker = r.transitions as f64 / cfg.workers as f64;
    assert_eq!(r.dataset_sizes.iter().sum::<usize>(), r.transitions);
    assert!(per_worker >= cfg.on_policy_per_round as f64);
}

#[test]
fn behaviour_cloning_fits_the_demonstrations() {
    let w = world();
    let cfg = TrainerConfig::desk(Algorithm::Sols);
    let (policy, report) = sft_from_world(&w, &cfg).unwrap();
    assert_eq!(report.epoch_losses.len(), cfg.sft_epochs);
    for pair in report.epoch_losses.windows(2) {
        assert!(pair[1] < pair[0], "{:?}", report.epoch_losses);
    }
    assert!(report.accuracy > 0.95, "accuracy {}", report.accuracy);

    // the value head is left at its initialization, however long cloning runs
    let (short, _) = sft_from_world(&w, &TrainerConfig { sft_epochs: 1, ..cfg.clone() }).unwrap();
    for name in ["value.w", "value.b"] {
        let id = policy.params.id(name).unwrap();
        assert_eq!(policy.params.value(id), short.params.value(id));
    }
    let head = policy.params.id("head.0.w").unwrap();
    assert_ne!(policy.params.value(head), short.params.value(head));
}

#[test]
fn training_writes_metric_files() {
    let w = world();
    let cfg = TrainerConfig {
        eval_every_rounds: 1,
        ..small(Algorithm::A2cStr)
    };
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(&w, cfg.clone(), init(&w, &cfg)).unwrap();
    let summary = train(&mut t, Some(dir.path())).unwrap();
    assert_eq!(summary.rounds, summary.reports.len());
    assert!(summary.initial_eval.is_some());

    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), summary.rounds + 1);
    // plain A2C never masks anything
    let masked_col = METRICS_HEADER.split(',').position(|c| c == "masked_fraction").unwrap();
    for l in &lines[1..] {
        assert_eq!(l.split(',').nth(masked_col).unwrap().parse::<f64>().unwrap(), 0.0);
    }
    let eval = fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    assert_eq!(eval.lines().next().unwrap(), EVAL_HEADER);
    assert_eq!(eval.lines().count(), summary.rounds + 2);
    let cats = fs::read_to_string(dir.path().join("categories.csv")).unwrap();
    assert_eq!(cats.lines().next().unwrap(), CATEGORY_HEADER);
    assert!(dir.path().join("checkpoint/round.json").exists());
}

#[test]
fn config_json_is_strict() {
    let cfg = TrainerConfig::desk(Algorithm::Ppo);
    assert_eq!(TrainerConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    let mut v: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
    v["surprise"] = serde_json::json!(1);
    assert!(TrainerConfig::from_json(&v.to_string()).is_err());
    let mut v: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
    v.as_object_mut().unwrap().remove("workers");
    assert!(TrainerConfig::from_json(&v.to_string()).is_err());
    let bad = TrainerConfig { max_grad_norm: -1.0, ..cfg };
    assert!(TrainerConfig::from_json(&bad.to_json()).is_err());
}

#[test]
fn published_preset_differs_only_in_scale() {
    let d = TrainerConfig::desk(Algorithm::Sols);
    let p = TrainerConfig::full_scale(Algorithm::Sols);
    assert_eq!((p.workers, p.total_episodes), (8, 15_000));
    assert_eq!((p.rl_learning_rate, p.sft_learning_rate), (1e-5, 1e-4));
    assert_eq!(p.algo, d.algo);
    assert_eq!(p.str_budget, d.str_budget);
    assert!(!TrainerConfig::desk(Algorithm::Ppo).use_str);
}
