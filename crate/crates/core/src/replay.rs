//! Successful Transition Replay: per-task recency buffers of successful timesteps.

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{ActionTokenSequence, Features};

pub const STR_CAPACITY: usize = 50;

/// One timestep of an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub task_id: String,
    pub features: Features,
    pub tokens: ActionTokenSequence,
    pub behavior_log_prob: f64,
    /// Terminal reward of the episode, shared by all its steps.
    pub return_r: f64,
    pub success: bool,
    pub step_index: usize,
    pub episode_id: u64,
    /// Immediate reward of this step.
    pub reward: f64,
    /// Index of the episode's final step.
    pub final_step: usize,
    /// Features after the action; `None` when the episode ended here.
    pub next_features: Option<Features>,
    pub worker: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StrBuffer {
    capacity: usize,
    per_task: BTreeMap<String, VecDeque<Transition>>,
}

impl StrBuffer {
    pub fn new() -> Self {
        Self::with_capacity(STR_CAPACITY)
    }

    pub fn with_capacity(capacity: usize) -> Self {
        StrBuffer {
            capacity,
            per_task: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stores every step of a successful episode; failed episodes store nothing.
    pub fn record_episode(&mut self, episode: &[Transition]) -> Result<usize> {
        let Some(first) = episode.first() else {
            return Ok(0);
        };
        if episode
            .iter()
            .any(|t| t.task_id != first.task_id || t.episode_id != first.episode_id)
        {
            return Err(Error::Contract(
                "an episode must have a single task and episode id".into(),
            ));
        }
        if !episode.iter().all(|t| t.success) {
            return Ok(0);
        }
        let list = self.per_task.entry(first.task_id.clone()).or_default();
        for t in episode {
            if list.len() == self.capacity {
                list.pop_front();
            }
            list.push_back(t.clone());
        }
        if self.capacity == 0 {
            self.per_task.remove(&first.task_id);
        }
        Ok(episode.len().min(self.capacity))
    }

    pub fn task(&self, task_id: &str) -> Option<&VecDeque<Transition>> {
        self.per_task.get(task_id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = (&String, &VecDeque<Transition>)> {
        self.per_task.iter()
    }

    pub fn total(&self) -> usize {
        self.per_task.values().map(|l| l.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    /// Up to `n_per_task` distinct transitions from every non-empty task.
    pub fn sample<R: Rng>(&self, n_per_task: usize, rng: &mut R) -> Vec<Transition> {
        let mut out = Vec::new();
        for list in self.per_task.values() {
            let k = n_per_task.min(list.len());
            out.extend(sample(rng, list.len(), k).into_iter().map(|i| list[i].clone()));
        }
        out
    }

    /// Per-task sample sizes totalling `min(budget, stored)`, dealt one at a time
    /// across non-empty tasks starting from a random task.
    fn allocate<R: Rng>(&self, budget: usize, rng: &mut R) -> Vec<(&VecDeque<Transition>, usize)> {
        let lists: Vec<&VecDeque<Transition>> =
            self.per_task.values().filter(|l| !l.is_empty()).collect();
        let mut take = vec![0usize; lists.len()];
        if lists.is_empty() {
            return Vec::new();
        }
        let mut remaining = budget.min(self.total());
        let mut i = rng.gen_range(0..lists.len());
        while remaining > 0 {
            if take[i] < lists[i].len() {
                take[i] += 1;
                remaining -= 1;
            }
            i = (i + 1) % lists.len();
        }
        lists.into_iter().zip(take).collect()
    }

    /// Samples `min(budget, stored)` transitions with round-robin per-task allocation.
    pub fn sample_budget<R: Rng>(&self, budget: usize, rng: &mut R) -> Vec<Transition> {
        let mut out = Vec::new();
        for (list, k) in self.allocate(budget, rng) {
            out.extend(sample(rng, list.len(), k).into_iter().map(|i| list[i].clone()));
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for list in self.per_task.values() {
            for t in list {
                serde_json::to_writer(&mut w, t)?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    /// Restores a buffer written by [`StrBuffer::write_jsonl`]; order within a task is kept.
    pub fn read_jsonl<R: BufRead>(r: R, capacity: usize) -> Result<Self> {
        let mut buf = StrBuffer::with_capacity(capacity);
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Transition = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("replay line {}: {e}", i + 1)))?;
            if !t.success {
                return Err(Error::Format(format!("replay line {} is not a success", i + 1)));
            }
            let list = buf.per_task.entry(t.task_id.clone()).or_default();
            if list.len() == capacity {
                return Err(Error::Format(format!("replay task {} over capacity", t.task_id)));
            }
            list.push_back(t);
        }
        Ok(buf)
    }
}

/// On-policy transitions plus `min(str_budget, stored)` replayed ones, shuffled.
pub fn build_training_set<R: Rng>(
    on_policy: Vec<Transition>,
    buffer: &StrBuffer,
    str_budget: usize,
    rng: &mut R,
) -> Vec<Transition> {
    let mut out = on_policy;
    out.extend(buffer.sample_budget(str_budget, rng));
    out.shuffle(rng);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn feats() -> Features {
        Features {
            dense: vec![0.0; 2],
            mentions: vec![vec![0.0; 3]; 3],
            invalid: vec![false; 3],
        }
    }

    pub(crate) fn episode(task: &str, id: u64, len: usize, success: bool) -> Vec<Transition> {
        (0..len)
            .map(|s| Transition {
                task_id: task.into(),
                features: feats(),
                tokens: ActionTokenSequence([1, 0, 0]),
                behavior_log_prob: -1.0,
                return_r: success as u8 as f64,
                success,
                step_index: s,
                episode_id: id,
                reward: (success && s + 1 == len) as u8 as f64,
                final_step: len - 1,
                next_features: None,
                worker: 0,
            })
            .collect()
    }

    #[test]
    fn failed_episodes_store_nothing() {
        let mut b = StrBuffer::new();
        assert_eq!(b.record_episode(&episode("t", 0, 6, false)).unwrap(), 0);
        assert!(b.is_empty());
        assert_eq!(b.record_episode(&episode("t", 1, 6, true)).unwrap(), 6);
        assert_eq!(b.total(), 6);
    }

    #[test]
    fn capacity_evicts_oldest() {
        let mut b = StrBuffer::new();
        for e in 0..8 {
            b.record_episode(&episode("t", e, 6, true)).unwrap();
        }
        assert_eq!(b.task("t").unwrap().len(), 48);
        b.record_episode(&episode("t", 99, 5, true)).unwrap();
        let list = b.task("t").unwrap();
        assert_eq!(list.len(), 50);
        // the three oldest steps of episode 0 are gone
        assert_eq!((list[0].episode_id, list[0].step_index), (0, 3));
        assert_eq!(list.back().unwrap().episode_id, 99);
    }

    #[test]
    fn mixed_task_ids_are_rejected() {
        let mut ep = episode("a", 0, 3, true);
        ep[1].task_id = "b".into();
        assert!(matches!(StrBuffer::new().record_episode(&ep), Err(Error::Contract(_))));
    }

    #[test]
    fn sampling_respects_availability() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = StrBuffer::new();
        assert!(b.sample(5, &mut rng).is_empty());
        b.record_episode(&episode("a", 0, 3, true)).unwrap();
        assert_eq!(b.sample(5, &mut rng).len(), 3);
    }

    #[test]
    fn training_set_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = StrBuffer::new();
        let on = episode("x", 0, 100, false);
        assert_eq!(build_training_set(on.clone(), &b, 50, &mut rng).len(), 100);
        for t in 0..5 {
            for e in 0..4 {
                b.record_episode(&episode(&format!("t{t}"), e, 10, true)).unwrap();
            }
        }
        assert_eq!(b.total(), 200);
        assert_eq!(build_training_set(on.clone(), &b, 50, &mut rng).len(), 150);
        assert_eq!(build_training_set(on.clone(), &b, 0, &mut rng).len(), 100);
        assert_eq!(build_training_set(on, &b, 500, &mut rng).len(), 300);
    }

    #[test]
    fn jsonl_round_trip() {
        let mut b = StrBuffer::new();
        b.record_episode(&episode("a", 0, 3, true)).unwrap();
        b.record_episode(&episode("b", 1, 2, true)).unwrap();
        let mut out = Vec::new();
        b.write_jsonl(&mut out).unwrap();
        assert_eq!(StrBuffer::read_jsonl(&out[..], STR_CAPACITY).unwrap(), b);
    }
}
