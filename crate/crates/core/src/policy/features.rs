//! Observation featurization.
//!
//! The dense part summarizes the goal, the visible elements and the recent action
//! types. The per-slot mention vectors mark vocabulary tokens whose surface form
//! appears in the goal, which is how the policy can name apps and labels it has
//! never seen during supervised training.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocabulary, E_MAX, N_SLOTS};
use crate::env::text::{bucket, label_code, words};
use crate::env::{ActionType, ElementKind, Observation, World};

pub const GOAL_BUCKETS: usize = 64;
const PER_ELEMENT: usize = 10;
const HISTORY: usize = 3;
const N_KINDS: usize = 5;

pub const FEATURE_DIM: usize =
    GOAL_BUCKETS + N_KINDS + E_MAX * PER_ELEMENT + (N_KINDS + 1) + HISTORY * 11 + 1;

/// Policy input for one observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Features {
    pub dense: Vec<f64>,
    /// `mentions[k][t]` is the copy signal for token `t` in slot `k`.
    pub mentions: Vec<Vec<f64>>,
    /// Tokens that cannot be executed here, such as elements that are not on screen.
    pub invalid: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct Featurizer {
    salt: u64,
    vocab: Vocabulary,
}

impl Featurizer {
    pub fn new(world: &World) -> Self {
        Featurizer {
            salt: world.hash_salt,
            vocab: world.vocabulary.clone(),
        }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn featurize(&self, obs: &Observation) -> Features {
        let v = self.vocab.len();
        let goal_words = words(&obs.goal_text);
        let goal: HashSet<&str> = goal_words.iter().map(|w| w.as_str()).collect();
        let mut x = vec![0.0; FEATURE_DIM];

        for w in &goal_words {
            x[bucket(self.salt, w, GOAL_BUCKETS)] = 1.0;
        }
        let mut off = GOAL_BUCKETS;

        let elements = &obs.element_list[..obs.element_list.len().min(E_MAX)];
        for e in elements {
            x[off + e.kind.index()] += 1.0 / E_MAX as f64;
        }
        off += N_KINDS;

        let last_target = obs.action_history.last().and_then(|a| a.target_element());
        let mut mentioned_kinds = [0.0; N_KINDS];
        let mut mention1 = vec![0.0; v];
        for (i, e) in elements.iter().enumerate() {
            let base = off + i * PER_ELEMENT;
            x[base + e.kind.index()] = 1.0;
            x[base + N_KINDS] = label_code(self.salt, &e.label);
            let active = match (e.kind, e.state.as_deref()) {
                (ElementKind::Toggle, Some(s)) => s == "on",
                (ElementKind::TextField, Some(s)) => !s.is_empty(),
                _ => false,
            };
            x[base + N_KINDS + 1] = e.state.is_some() as u8 as f64;
            x[base + N_KINDS + 2] = active as u8 as f64;
            x[base + N_KINDS + 4] = (last_target == Some(i)) as u8 as f64;
            let mentioned = words(&e.label).iter().all(|w| goal.contains(w.as_str()));
            if mentioned {
                x[base + N_KINDS + 3] = 1.0;
                mentioned_kinds[e.kind.index()] = 1.0;
                mention1[self.vocab.element_token(i)] = 1.0;
            }
        }
        off += E_MAX * PER_ELEMENT;

        x[off..off + N_KINDS].copy_from_slice(&mentioned_kinds);
        if let Some(app) = &obs.app {
            x[off + N_KINDS] = goal.contains(app.to_lowercase().as_str()) as u8 as f64;
        }
        off += N_KINDS + 1;

        for (h, a) in obs.action_history.iter().rev().take(HISTORY).enumerate() {
            x[off + h * 11 + a.action_type().index()] = 1.0;
        }
        off += HISTORY * 11;
        x[off] = obs.app.is_none() as u8 as f64;
        debug_assert_eq!(off + 1, FEATURE_DIM);

        for (a, name) in self.vocab.app_names().iter().enumerate() {
            if goal.contains(name.to_lowercase().as_str()) {
                mention1[self.vocab.app_token(a)] = 1.0;
            }
        }
        let lex: Vec<usize> = goal_words
            .iter()
            .filter_map(|w| self.vocab.word_index(w))
            .collect();
        let mut mention2 = vec![0.0; v];
        if let Some(&first) = lex.first() {
            mention1[self.vocab.text_token(first)] = 1.0;
            match lex.get(1) {
                Some(&second) => mention2[self.vocab.text_token(second)] = 1.0,
                None => mention2[self.vocab.pad()] = 1.0,
            }
        }

        let mut invalid = vec![false; v];
        for i in elements.len()..E_MAX {
            invalid[self.vocab.element_token(i)] = true;
        }

        let mut mentions = vec![vec![0.0; v]; N_SLOTS];
        mentions[1] = mention1;
        mentions[2] = mention2;
        Features {
            dense: x,
            mentions,
            invalid,
        }
    }

    /// Token sequence of the fallback action used when sampling produces an unusable token.
    pub fn fallback(&self) -> [TokenId; N_SLOTS] {
        let pad = self.vocab.pad();
        [self.vocab.type_token(ActionType::Wait), pad, pad]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_world, WorldConfig};

    #[test]
    fn mentions_mark_goal_app_and_text() {
        let world = build_world(3, &WorldConfig::default()).unwrap();
        let f = Featurizer::new(&world);
        let task = world
            .tasks
            .iter()
            .find(|t| t.kind == crate::env::TaskKind::InputText)
            .unwrap();
        let (_, obs) = world.reset(&task.task_id).unwrap();
        let feats = f.featurize(&obs);
        assert_eq!(feats.dense.len(), FEATURE_DIM);
        let app = world.apps[task.target.app].app_name.clone();
        let tok = world.vocabulary.app_token(world.vocabulary.app_index(&app).unwrap());
        assert_eq!(feats.mentions[1][tok], 1.0);
        let text = task.target.required_state.as_ref().unwrap();
        let first = text.split(' ').next().unwrap();
        let wt = world.vocabulary.text_token(world.vocabulary.word_index(first).unwrap());
        assert_eq!(feats.mentions[1][wt], 1.0);
        assert!(feats.mentions[0].iter().all(|&m| m == 0.0));
        // on the launcher every app icon is a visible element
        assert_eq!(feats.dense[FEATURE_DIM - 1], 1.0);
        let n = world.launcher.len();
        assert!(!feats.invalid[world.vocabulary.element_token(n - 1)]);
        assert!(feats.invalid[world.vocabulary.element_token(n)]);
    }
}
