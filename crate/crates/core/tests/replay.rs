use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sols_core::policy::{ActionTokenSequence, Features};
use sols_core::replay::{build_training_set, StrBuffer, Transition, STR_CAPACITY};

fn feats() -> Features {
    Features {
        dense: vec![0.0],
        mentions: vec![vec![0.0]; 3],
        invalid: vec![false],
    }
}

fn episode(task: usize, id: u64, len: usize, success: bool, worker: usize) -> Vec<Transition> {
    (0..len)
        .map(|s| Transition {
            task_id: format!("task{task}"),
            features: feats(),
            tokens: ActionTokenSequence([s, 0, 0]),
            behavior_log_prob: -0.5,
            return_r: success as u8 as f64,
            success,
            step_index: s,
            episode_id: id,
            reward: (success && s + 1 == len) as u8 as f64,
            final_step: len - 1,
            next_features: None,
            worker,
        })
        .collect()
}

/// (task, length, success, worker)
type Spec = (usize, usize, bool, usize);

fn stream(max: usize) -> impl Strategy<Value = Vec<Spec>> {
    prop::collection::vec((0..6usize, 1..10usize, prop::bool::weighted(0.3), 0..3usize), 1..max)
}

fn key(t: &Transition) -> (u64, usize) {
    (t.episode_id, t.step_index)
}

/// Reference: every successful step per task in arrival order, truncated to the last `cap`.
fn model(specs: &[Spec], worker: Option<usize>, cap: usize) -> BTreeMap<String, Vec<(u64, usize)>> {
    let mut m: BTreeMap<String, Vec<(u64, usize)>> = BTreeMap::new();
    for (id, &(task, len, success, w)) in specs.iter().enumerate() {
        if !success || worker.is_some_and(|x| x != w) {
            continue;
        }
        let list = m.entry(format!("task{task}")).or_default();
        list.extend((0..len).map(|s| (id as u64, s)));
    }
    for list in m.values_mut() {
        let n = list.len();
        list.drain(..n.saturating_sub(cap));
    }
    m.retain(|_, l| !l.is_empty());
    m
}

fn contents(b: &StrBuffer) -> BTreeMap<String, Vec<(u64, usize)>> {
    b.tasks()
        .filter(|(_, l)| !l.is_empty())
        .map(|(k, l)| (k.clone(), l.iter().map(key).collect()))
        .collect()
}

fn check_stream(specs: &[Spec]) {
    let workers = 3;
    let mut shared = StrBuffer::new();
    let mut per_worker = vec![StrBuffer::new(); workers];
    for (id, &(task, len, success, w)) in specs.iter().enumerate() {
        let ep = episode(task, id as u64, len, success, w);
        let stored = shared.record_episode(&ep).unwrap();
        assert_eq!(stored, if success { len.min(STR_CAPACITY) } else { 0 });
        per_worker[w].record_episode(&ep).unwrap();
        for l in shared.tasks().map(|(_, l)| l) {
            assert!(l.len() <= STR_CAPACITY);
        }
    }
    assert_eq!(contents(&shared), model(specs, None, STR_CAPACITY));
    for (w, b) in per_worker.iter().enumerate() {
        assert_eq!(contents(b), model(specs, Some(w), STR_CAPACITY));
        assert!(b.tasks().flat_map(|(_, l)| l).all(|t| t.worker == w && t.success));
    }
}

#[test]
fn ten_thousand_episode_stream_matches_the_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let specs: Vec<Spec> = {
        use rand::Rng;
        (0..10_000)
            .map(|_| (rng.gen_range(0..8), rng.gen_range(1..12), rng.gen_bool(0.25), rng.gen_range(0..3)))
            .collect()
    };
    check_stream(&specs);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn buffers_hold_the_most_recent_successes(specs in stream(10_000)) {
        check_stream(&specs);
    }

    #[test]
    fn budget_sampling_draws_distinct_stored_steps(
        specs in stream(400),
        budget in 0..200usize,
        seed in any::<u64>(),
    ) {
        let mut b = StrBuffer::new();
        for (id, &(task, len, success, w)) in specs.iter().enumerate() {
            b.record_episode(&episode(task, id as u64, len, success, w)).unwrap();
        }
        let stored: HashSet<(String, u64, usize)> = b
            .tasks()
            .flat_map(|(k, l)| l.iter().map(move |t| (k.clone(), t.episode_id, t.step_index)))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let drawn = b.sample_budget(budget, &mut rng);
        prop_assert_eq!(drawn.len(), budget.min(b.total()));
        let mut seen = HashSet::new();
        for t in &drawn {
            let k = (t.task_id.clone(), t.episode_id, t.step_index);
            prop_assert!(stored.contains(&k));
            prop_assert!(seen.insert(k));
        }

        let on_policy = episode(99, 1 << 40, 7, false, 0);
        let set = build_training_set(on_policy, &b, budget, &mut rng);
        prop_assert_eq!(set.len(), 7 + budget.min(b.total()));
        prop_assert_eq!(set.iter().filter(|t| t.task_id == "task99").count(), 7);
    }

    #[test]
    fn per_task_sampling_respects_availability(specs in stream(400), n in 0..80usize, seed in any::<u64>()) {
        let mut b = StrBuffer::new();
        for (id, &(task, len, success, w)) in specs.iter().enumerate() {
            b.record_episode(&episode(task, id as u64, len, success, w)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let drawn = b.sample(n, &mut rng);
        for (task, list) in b.tasks() {
            let got = drawn.iter().filter(|t| &t.task_id == task).count();
            prop_assert_eq!(got, n.min(list.len()));
        }
    }

    #[test]
    fn jsonl_round_trip_preserves_order(specs in stream(300)) {
        let mut b = StrBuffer::new();
        for (id, &(task, len, success, w)) in specs.iter().enumerate() {
            b.record_episode(&episode(task, id as u64, len, success, w)).unwrap();
        }
        let mut bytes = Vec::new();
        b.write_jsonl(&mut bytes).unwrap();
        let back = StrBuffer::read_jsonl(bytes.as_slice(), STR_CAPACITY).unwrap();
        prop_assert_eq!(contents(&back), contents(&b));
    }
}
