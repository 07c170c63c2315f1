//! Rollouts and greedy evaluation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Difficulty, Family, World};
use crate::error::{Error, Result};
use crate::policy::{ActionTokenSequence, Featurizer, Policy};
use crate::replay::Transition;

/// Derives an independent stream seed from a run seed and a path of indices.
pub fn stream_seed(seed: u64, path: &[u64]) -> u64 {
    // splitmix64 over the path
    let mut h = seed ^ 0x243f_6a88_85a3_08d3;
    for &p in path {
        h = h.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}

pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, path))
}

#[derive(Clone, Debug)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub success: bool,
}

/// Plays one episode of task `task` with the given sampling temperature.
#[allow(clippy::too_many_arguments)]
pub fn run_episode<R: Rng>(
    world: &World,
    featurizer: &Featurizer,
    policy: &Policy,
    task: usize,
    temperature: f64,
    episode_id: u64,
    worker: usize,
    rng: &mut R,
) -> Result<Episode> {
    let vocab = featurizer.vocabulary();
    let fallback = ActionTokenSequence(featurizer.fallback());
    let (mut state, obs) = world.reset_index(task);
    let task_id = world.tasks[task].task_id.clone();
    let mut feats = featurizer.featurize(&obs);
    let mut steps: Vec<Transition> = Vec::new();
    loop {
        let enc = policy.encode(&feats)?;
        let (tokens, lp) = policy.sample(&enc, &feats, vocab, temperature, fallback, rng)?;
        let action = vocab.detokenize(&tokens)?;
        let r = world.step(&mut state, &action)?;
        let next = (!r.done).then(|| featurizer.featurize(&r.observation));
        steps.push(Transition {
            task_id: task_id.clone(),
            features: feats,
            tokens,
            behavior_log_prob: lp,
            return_r: 0.0,
            success: false,
            step_index: steps.len(),
            episode_id,
            reward: r.reward,
            final_step: 0,
            next_features: next.clone(),
            worker,
        });
        match next {
            Some(f) => feats = f,
            None => break,
        }
    }
    let success = state.success;
    let last = steps.len() - 1;
    let ret = if success { 1.0 } else { 0.0 };
    for t in &mut steps {
        t.return_r = ret;
        t.success = success;
        t.final_step = last;
    }
    Ok(Episode {
        transitions: steps,
        success,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEval {
    pub task_id: String,
    pub difficulty: Difficulty,
    pub category: String,
    /// Success of each evaluation run.
    pub successes: Vec<bool>,
}

impl TaskEval {
    pub fn rate(&self) -> f64 {
        self.successes.iter().filter(|&&s| s).count() as f64 / self.successes.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Two standard errors of the mean across runs.
    pub two_sem: f64,
    pub tasks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub family: Family,
    pub runs: usize,
    pub temperature: f64,
    pub tasks: Vec<TaskEval>,
    pub overall: Aggregate,
    pub by_difficulty: BTreeMap<Difficulty, Aggregate>,
    pub by_category: BTreeMap<String, Aggregate>,
}

fn aggregate<'a>(tasks: impl Iterator<Item = &'a TaskEval> + Clone, runs: usize) -> Aggregate {
    let n = tasks.clone().count();
    if n == 0 {
        return Aggregate {
            mean: 0.0,
            two_sem: 0.0,
            tasks: 0,
        };
    }
    let per_run: Vec<f64> = (0..runs)
        .map(|k| tasks.clone().filter(|t| t.successes[k]).count() as f64 / n as f64)
        .collect();
    let mean = tasks.map(|t| t.rate()).sum::<f64>() / n as f64;
    let two_sem = if runs > 1 {
        let var = per_run.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
        2.0 * (var / runs as f64).sqrt()
    } else {
        0.0
    };
    Aggregate {
        mean,
        two_sem,
        tasks: n,
    }
}

/// Runs every task of `family` `runs` times without touching the policy.
pub fn evaluate(
    policy: &Policy,
    world: &World,
    family: Family,
    runs: usize,
    temperature: f64,
    seed: u64,
) -> Result<EvalReport> {
    if runs == 0 {
        return Err(Error::Config("evaluation needs at least one run per task".into()));
    }
    let featurizer = Featurizer::new(world);
    let tasks: Vec<usize> = world.tasks_of(family).map(|(i, _)| i).collect();
    let results: Vec<TaskEval> = tasks
        .par_iter()
        .map(|&ti| {
            let mut successes = Vec::with_capacity(runs);
            for k in 0..runs {
                let mut rng = stream(seed, &[ti as u64, k as u64]);
                let ep = run_episode(world, &featurizer, policy, ti, temperature, 0, 0, &mut rng)?;
                successes.push(ep.success);
            }
            let t = &world.tasks[ti];
            Ok(TaskEval {
                task_id: t.task_id.clone(),
                difficulty: t.difficulty,
                category: t.category.clone(),
                successes,
            })
        })
        .collect::<Result<_>>()?;
    let overall = aggregate(results.iter(), runs);
    let by_difficulty = Difficulty::ALL
        .iter()
        .map(|&d| (d, aggregate(results.iter().filter(move |t| t.difficulty == d), runs)))
        .collect();
    let by_category = world
        .categories()
        .into_iter()
        .map(|c| {
            let agg = aggregate(results.iter().filter(|t| t.category == c), runs);
            (c, agg)
        })
        .collect();
    Ok(EvalReport {
        family,
        runs,
        temperature,
        tasks: results,
        overall,
        by_difficulty,
        by_category,
    })
}
