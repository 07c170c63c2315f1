//! Supervised warm start and the synchronous data-parallel RL loop.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algos::{advantages, loss, AlgoConfig, Algorithm, LossBreakdown, Terms};
use crate::env::{generate_sft_dataset, DemoRecord, Difficulty, Family, World};
use crate::error::{Error, Result};
use crate::eval::{evaluate, run_episode, stream, EvalReport};
use crate::nn::{checkpoint, AdamW, AdamWConfig, ParamStore};
use crate::policy::{
    ActionSpace, ActionTokenSequence, Features, Featurizer, Policy, PolicyConfig, FEATURE_DIM,
    N_SLOTS,
};
use crate::replay::{build_training_set, StrBuffer, Transition, STR_CAPACITY};

/// Every key is required and unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub algo: AlgoConfig,
    pub use_str: bool,
    pub workers: usize,
    pub on_policy_per_round: usize,
    pub str_budget: usize,
    pub str_capacity: usize,
    pub minibatch: usize,
    pub rl_learning_rate: f64,
    pub rl_weight_decay: f64,
    /// Joint gradient norm cap applied before each RL step; 0 disables it.
    pub max_grad_norm: f64,
    pub sft_learning_rate: f64,
    pub sft_weight_decay: f64,
    pub sft_epochs: usize,
    pub sft_demos_per_task: usize,
    pub total_episodes: usize,
    pub epochs_per_round: usize,
    pub seed: u64,
    pub train_temperature: f64,
    pub eval_temperature: f64,
    pub eval_every_rounds: usize,
    pub eval_runs: usize,
    pub checkpoint_every_rounds: usize,
    pub hidden: usize,
    pub record_wallclock: bool,
}

impl TrainerConfig {
    /// Desk-scale defaults.
    pub fn desk(algorithm: Algorithm) -> Self {
        TrainerConfig {
            algo: AlgoConfig::new(algorithm),
            use_str: algorithm != Algorithm::Ppo,
            workers: 4,
            on_policy_per_round: 100,
            str_budget: 50,
            str_capacity: STR_CAPACITY,
            minibatch: 64,
            rl_learning_rate: 1e-3,
            rl_weight_decay: 0.0,
            max_grad_norm: 1.0,
            sft_learning_rate: 3e-3,
            sft_weight_decay: 0.01,
            sft_epochs: 3,
            sft_demos_per_task: 20,
            total_episodes: 3000,
            epochs_per_round: 1,
            seed: 0,
            train_temperature: 1.0,
            eval_temperature: 0.0,
            eval_every_rounds: 10,
            eval_runs: 3,
            checkpoint_every_rounds: 0,
            hidden: 128,
            record_wallclock: false,
        }
    }

    /// The published settings: 8 workers, 15K episodes, RL rate 1e-5, SFT rate 1e-4.
    pub fn full_scale(algorithm: Algorithm) -> Self {
        TrainerConfig {
            workers: 8,
            total_episodes: 15_000,
            rl_learning_rate: 1e-5,
            sft_learning_rate: 1e-4,
            sft_demos_per_task: 1,
            ..Self::desk(algorithm)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.algo.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.workers == 0 || self.minibatch == 0 || self.on_policy_per_round == 0 {
            return bad("workers, minibatch and on_policy_per_round must be positive");
        }
        if self.sft_epochs == 0 || self.sft_demos_per_task == 0 || self.epochs_per_round == 0 {
            return bad("epoch counts and sft_demos_per_task must be positive");
        }
        if self.eval_runs == 0 || self.hidden == 0 {
            return bad("eval_runs and hidden must be positive");
        }
        if !(self.rl_learning_rate >= 0.0 && self.sft_learning_rate >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if self.max_grad_norm.is_nan() || self.max_grad_norm < 0.0 {
            return bad("max_grad_norm must be non-negative");
        }
        if self.train_temperature < 0.0 || self.eval_temperature < 0.0 {
            return bad("temperatures must be non-negative");
        }
        Ok(())
    }

    /// PPO always makes `ppo_epochs` passes over a round's data.
    pub fn effective_epochs(&self) -> usize {
        match self.algo.algorithm {
            Algorithm::Ppo => self.algo.ppo_epochs,
            _ => self.epochs_per_round,
        }
    }

    pub fn effective_str_budget(&self) -> usize {
        if self.use_str {
            self.str_budget
        } else {
            0
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: TrainerConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn policy_config(world: &World, hidden: usize) -> PolicyConfig {
    PolicyConfig {
        input_dim: FEATURE_DIM,
        hidden,
        layers: 2,
        vocab_size: world.vocabulary.len(),
        n_slots: N_SLOTS,
        pointer_tokens: world.vocabulary.app_tokens().to_vec(),
    }
}

/// Rebuilds a policy for `world` around loaded parameters, reading the width from them.
pub fn policy_from_params(world: &World, params: ParamStore) -> Result<Policy> {
    let hidden = params.get(params.id("enc.0.b")?).value.len();
    let mut policy = Policy::new(policy_config(world, hidden), 0)?;
    policy.load_params(params)?;
    Ok(policy)
}

/// One supervised example: features and target tokens.
#[derive(Clone, Debug)]
pub struct SftExample {
    pub features: Features,
    pub tokens: ActionTokenSequence,
}

pub fn sft_examples(world: &World, demos: &[DemoRecord]) -> Result<Vec<SftExample>> {
    let featurizer = Featurizer::new(world);
    demos
        .iter()
        .map(|d| {
            Ok(SftExample {
                features: featurizer.featurize(&d.obs),
                tokens: world.vocabulary.tokenize(&d.action)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SftReport {
    pub epoch_losses: Vec<f64>,
    pub accuracy: f64,
    pub examples: usize,
}

/// Mean negative log-likelihood of the examples, with gradient when `grads` is given.
pub fn nll(
    policy: &Policy,
    batch: &[&SftExample],
    space: &dyn ActionSpace,
    mut grads: Option<&mut ParamStore>,
) -> Result<f64> {
    let inv_n = 1.0 / batch.len().max(1) as f64;
    let mut total = 0.0;
    for ex in batch {
        let enc = policy.encode(&ex.features)?;
        total -= policy.log_prob(&enc, &ex.features, space, &ex.tokens)? * inv_n;
        if let Some(g) = grads.as_deref_mut() {
            policy.backward(&enc, &ex.features, space, &ex.tokens, -inv_n, 0.0, g)?;
        }
    }
    Ok(total)
}

/// Fraction of examples whose greedy action equals the target.
pub fn greedy_accuracy(policy: &Policy, examples: &[SftExample], world: &World) -> Result<f64> {
    let mut rng = stream(0, &[]);
    let space = &world.vocabulary;
    let fb = ActionTokenSequence(Featurizer::new(world).fallback());
    let hits = examples
        .iter()
        .map(|ex| {
            let enc = policy.encode(&ex.features)?;
            let (seq, _) = policy.sample(&enc, &ex.features, space, 0.0, fb, &mut rng)?;
            Ok((seq == ex.tokens) as usize)
        })
        .sum::<Result<usize>>()?;
    Ok(hits as f64 / examples.len().max(1) as f64)
}

/// Behaviour cloning from the demonstrations, returning the warm-start policy.
///
/// The learning rate decays linearly to zero; the value head keeps its initial weights.
pub fn run_sft(world: &World, demos: &[DemoRecord], cfg: &TrainerConfig) -> Result<(Policy, SftReport)> {
    cfg.validate()?;
    if demos.is_empty() {
        return Err(Error::Config("no demonstrations to train on".into()));
    }
    let examples = sft_examples(world, demos)?;
    let mut policy = Policy::new(policy_config(world, cfg.hidden), stream_seed_of(cfg, "init"))?;
    let initial = policy.params.clone();
    let mut opt = AdamW::new(AdamWConfig::new(cfg.sft_learning_rate, cfg.sft_weight_decay), &policy.params);
    let batches_per_epoch = examples.len().div_ceil(cfg.minibatch);
    let total_steps = (batches_per_epoch * cfg.sft_epochs) as f64;
    let space = &world.vocabulary;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::new();
    let mut step = 0usize;
    for epoch in 0..cfg.sft_epochs {
        let mut rng = stream(cfg.seed, &[u64::MAX, epoch as u64]);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.minibatch) {
            let batch: Vec<&SftExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let mut grads = policy.params.clone();
            grads.zero_grad();
            let l = nll(&policy, &batch, space, Some(&mut grads))?;
            policy.params.zero_grad();
            policy.params.accumulate_grads(&grads, 1.0)?;
            sum += l * batch.len() as f64;
            opt.set_lr(cfg.sft_learning_rate * (1.0 - step as f64 / total_steps));
            opt.step(&mut policy.params)?;
            step += 1;
        }
        epoch_losses.push(sum / examples.len() as f64);
    }
    // the value head is trained only by RL
    for name in ["value.w", "value.b"] {
        let id = policy.params.id(name)?;
        let init = initial.value(id).to_vec();
        policy.params.value_mut(id).copy_from_slice(&init);
    }
    let accuracy = greedy_accuracy(&policy, &examples, world)?;
    Ok((
        policy,
        SftReport {
            epoch_losses,
            accuracy,
            examples: examples.len(),
        },
    ))
}

fn stream_seed_of(cfg: &TrainerConfig, what: &str) -> u64 {
    let tag = what.bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    crate::eval::stream_seed(cfg.seed, &[tag])
}

/// Generates the demonstration corpus and runs behaviour cloning on it.
pub fn sft_from_world(world: &World, cfg: &TrainerConfig) -> Result<(Policy, SftReport)> {
    let demos = generate_sft_dataset(world, cfg.sft_demos_per_task)?;
    run_sft(world, &demos, cfg)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub episodes: usize,
    pub successes: usize,
}

impl Tally {
    pub fn add(&mut self, success: bool) {
        self.episodes += 1;
        self.successes += success as usize;
    }

    pub fn rate(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.successes as f64 / self.episodes as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    /// Episodes run so far, this round included.
    pub episodes_total: usize,
    pub episodes: usize,
    pub transitions: usize,
    pub overall: Tally,
    pub by_difficulty: BTreeMap<Difficulty, Tally>,
    pub by_category: BTreeMap<String, Tally>,
    pub by_task: BTreeMap<String, Tally>,
    pub loss: LossBreakdown,
    pub str_sizes: Vec<usize>,
    pub str_inserted: usize,
    pub dataset_sizes: Vec<usize>,
    pub optimizer_steps: usize,
    pub learning_rate: f64,
    pub wallclock_s: f64,
}

struct WorkerRound {
    transitions: Vec<Transition>,
    episodes: Vec<(usize, bool)>,
    buffer: StrBuffer,
    inserted: usize,
    dataset: Vec<Transition>,
}

/// Training state that fully determines the continuation of a run.
pub struct Trainer<'w> {
    pub world: &'w World,
    pub cfg: TrainerConfig,
    pub policy: Policy,
    pub optimizer: AdamW,
    pub buffers: Vec<StrBuffer>,
    pub round: usize,
    pub episodes: usize,
    featurizer: Featurizer,
    online: Vec<usize>,
}

pub const METRICS_HEADER: &str = "round,episodes,success_rate,success_rate_easy,success_rate_medium,success_rate_hard,actor_loss,critic_loss,masked_fraction,str_total,wallclock_s";
pub const CATEGORY_HEADER: &str = "round,episodes,category,category_episodes,category_successes";
pub const EVAL_HEADER: &str = "round,episodes,success_rate,two_sem,success_rate_easy,success_rate_medium,success_rate_hard";

impl<'w> Trainer<'w> {
    pub fn new(world: &'w World, cfg: TrainerConfig, init: Policy) -> Result<Self> {
        cfg.validate()?;
        if init.config != policy_config(world, cfg.hidden) {
            return Err(Error::Shape("initial policy does not fit this world".into()));
        }
        let optimizer = AdamW::new(
            AdamWConfig::new(cfg.rl_learning_rate, cfg.rl_weight_decay),
            &init.params,
        );
        let online: Vec<usize> = world.tasks_of(Family::B).map(|(i, _)| i).collect();
        if online.is_empty() {
            return Err(Error::Config("world has no online tasks".into()));
        }
        Ok(Trainer {
            world,
            buffers: vec![StrBuffer::with_capacity(cfg.str_capacity); cfg.workers],
            cfg,
            policy: init,
            optimizer,
            round: 0,
            episodes: 0,
            featurizer: Featurizer::new(world),
            online,
        })
    }

    pub fn done(&self) -> bool {
        self.episodes >= self.cfg.total_episodes
    }

    fn collect(&self, worker: usize, mut buffer: StrBuffer) -> Result<WorkerRound> {
        let mut rng = stream(self.cfg.seed, &[self.round as u64, worker as u64]);
        let mut transitions = Vec::new();
        let mut episodes = Vec::new();
        let mut inserted = 0;
        while transitions.len() < self.cfg.on_policy_per_round {
            let task = *self.online.choose(&mut rng).expect("online tasks exist");
            let id = ((self.round as u64) << 24) | ((worker as u64) << 16) | episodes.len() as u64;
            let ep = run_episode(
                self.world,
                &self.featurizer,
                &self.policy,
                task,
                self.cfg.train_temperature,
                id,
                worker,
                &mut rng,
            )?;
            inserted += buffer.record_episode(&ep.transitions)?;
            episodes.push((task, ep.success));
            transitions.extend(ep.transitions);
        }
        let dataset = build_training_set(
            transitions.clone(),
            &buffer,
            self.cfg.effective_str_budget(),
            &mut rng,
        );
        Ok(WorkerRound {
            transitions,
            episodes,
            buffer,
            inserted,
            dataset,
        })
    }

    /// Collects one round on every worker and applies the synchronous updates.
    pub fn run_round(&mut self) -> Result<RoundReport> {
        let start = Instant::now();
        let buffers = std::mem::take(&mut self.buffers);
        let collected: Vec<Result<WorkerRound>> = {
            let this = &*self;
            buffers
                .into_par_iter()
                .enumerate()
                .map(|(w, b)| this.collect(w, b))
                .collect()
        };
        let mut rounds = Vec::with_capacity(collected.len());
        for r in collected {
            rounds.push(r?);
        }
        self.buffers = rounds.iter().map(|r| r.buffer.clone()).collect();

        let mut datasets: Vec<Vec<Transition>> =
            rounds.iter_mut().map(|r| std::mem::take(&mut r.dataset)).collect();
        let (loss, steps) = self.optimize(&mut datasets)?;

        let world = self.world;
        let mut report = RoundReport {
            round: self.round,
            episodes_total: 0,
            episodes: 0,
            transitions: rounds.iter().map(|r| r.transitions.len()).sum(),
            overall: Tally::default(),
            by_difficulty: Difficulty::ALL.iter().map(|&d| (d, Tally::default())).collect(),
            by_category: world.categories().into_iter().map(|c| (c, Tally::default())).collect(),
            by_task: BTreeMap::new(),
            loss,
            str_sizes: self.buffers.iter().map(|b| b.total()).collect(),
            str_inserted: rounds.iter().map(|r| r.inserted).sum(),
            dataset_sizes: datasets.iter().map(|d| d.len()).collect(),
            optimizer_steps: steps,
            learning_rate: self.optimizer.config.lr,
            wallclock_s: 0.0,
        };
        for r in &rounds {
            for &(ti, success) in &r.episodes {
                let t = &world.tasks[ti];
                report.overall.add(success);
                report.by_difficulty.get_mut(&t.difficulty).unwrap().add(success);
                report.by_category.get_mut(&t.category).unwrap().add(success);
                report.by_task.entry(t.task_id.clone()).or_default().add(success);
            }
        }
        report.episodes = report.overall.episodes;
        self.episodes += report.episodes;
        report.episodes_total = self.episodes;
        self.round += 1;
        if self.cfg.record_wallclock {
            report.wallclock_s = start.elapsed().as_secs_f64();
        }
        Ok(report)
    }

    fn optimize(&mut self, datasets: &mut [Vec<Transition>]) -> Result<(LossBreakdown, usize)> {
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        let mut steps = 0;
        for epoch in 0..self.cfg.effective_epochs() {
            if epoch > 0 {
                for (w, d) in datasets.iter_mut().enumerate() {
                    let mut rng = stream(self.cfg.seed, &[self.round as u64, w as u64, epoch as u64]);
                    d.shuffle(&mut rng);
                }
            }
            let positions = datasets
                .iter()
                .map(|d| d.len().div_ceil(self.cfg.minibatch))
                .max()
                .unwrap_or(0);
            for m in 0..positions {
                let policy = &self.policy;
                let cfg = &self.cfg;
                let space = &self.world.vocabulary;
                let parts: Vec<Result<Option<(ParamStore, LossBreakdown)>>> = datasets
                    .par_iter()
                    .map(|d| {
                        let lo = m * cfg.minibatch;
                        if lo >= d.len() {
                            return Ok(None);
                        }
                        let batch: Vec<&Transition> =
                            d[lo..(lo + cfg.minibatch).min(d.len())].iter().collect();
                        let adv = advantages(policy, &batch, &cfg.algo)?;
                        let mut g = policy.params.clone();
                        g.zero_grad();
                        let b = loss(policy, &batch, &adv, space, &cfg.algo, Terms::Joint, 1.0, Some(&mut g))?;
                        Ok(Some((g, b)))
                    })
                    .collect();
                self.policy.params.zero_grad();
                for p in parts {
                    if let Some((g, b)) = p? {
                        self.policy.params.accumulate_grads(&g, 1.0)?;
                        sum.actor_loss += b.actor_loss;
                        sum.critic_loss += b.critic_loss;
                        sum.joint += b.joint;
                        sum.masked_fraction += b.masked_fraction;
                        sum.batch += b.batch;
                        batches += 1;
                    }
                }
                self.policy.params.clip_grad_norm(self.cfg.max_grad_norm);
                self.optimizer.step(&mut self.policy.params)?;
                steps += 1;
            }
        }
        if batches > 0 {
            let k = batches as f64;
            sum.actor_loss /= k;
            sum.critic_loss /= k;
            sum.joint /= k;
            sum.masked_fraction /= k;
        }
        Ok((sum, steps))
    }

    pub fn evaluate(&self) -> Result<EvalReport> {
        evaluate(
            &self.policy,
            self.world,
            Family::B,
            self.cfg.eval_runs,
            self.cfg.eval_temperature,
            self.cfg.seed,
        )
    }

    /// Writes parameters, optimizer state, replay buffers and round metadata into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let meta = serde_json::json!({
            "round": self.round,
            "episodes": self.episodes,
            "world_hash": self.world.content_hash(),
        });
        checkpoint::save(&dir.join("params.ckpt"), &self.policy.params, Some(&self.optimizer), &meta)?;
        for (i, b) in self.buffers.iter().enumerate() {
            let mut w = BufWriter::new(File::create(dir.join(format!("str_worker{i}.jsonl")))?);
            b.write_jsonl(&mut w)?;
            w.flush()?;
        }
        let round = RoundState {
            round: self.round,
            episodes: self.episodes,
            workers: self.cfg.workers,
            world_hash: self.world.content_hash(),
            config: self.cfg.clone(),
        };
        fs::write(dir.join("round.json"), serde_json::to_string_pretty(&round)? + "\n")?;
        Ok(())
    }

    /// Restores a trainer saved by [`Trainer::save_checkpoint`].
    pub fn load_checkpoint(world: &'w World, dir: &Path) -> Result<Self> {
        let round: RoundState = serde_json::from_str(&fs::read_to_string(dir.join("round.json"))?)?;
        if round.world_hash != world.content_hash() {
            return Err(Error::Format("checkpoint was written for a different world".into()));
        }
        let ck = checkpoint::load(&dir.join("params.ckpt"))?;
        let mut policy = Policy::new(policy_config(world, round.config.hidden), 0)?;
        policy.load_params(ck.params)?;
        let mut t = Trainer::new(world, round.config, policy)?;
        t.optimizer = ck
            .optimizer
            .ok_or_else(|| Error::Format("checkpoint has no optimizer state".into()))?;
        t.buffers = (0..round.workers)
            .map(|i| {
                let f = File::open(dir.join(format!("str_worker{i}.jsonl")))?;
                StrBuffer::read_jsonl(BufReader::new(f), t.cfg.str_capacity)
            })
            .collect::<Result<_>>()?;
        t.round = round.round;
        t.episodes = round.episodes;
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RoundState {
    round: usize,
    episodes: usize,
    workers: usize,
    world_hash: String,
    config: TrainerConfig,
}

pub fn metrics_row(r: &RoundReport) -> String {
    let d = |k: Difficulty| r.by_difficulty.get(&k).map_or(0.0, |t| t.rate());
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        r.round,
        r.episodes_total,
        r.overall.rate(),
        d(Difficulty::Easy),
        d(Difficulty::Medium),
        d(Difficulty::Hard),
        r.loss.actor_loss,
        r.loss.critic_loss,
        r.loss.masked_fraction,
        r.str_sizes.iter().sum::<usize>(),
        r.wallclock_s
    )
}

pub fn category_rows(r: &RoundReport) -> Vec<String> {
    r.by_category
        .iter()
        .map(|(c, t)| format!("{},{},{},{},{}", r.round, r.episodes_total, c, t.episodes, t.successes))
        .collect()
}

pub fn eval_row(round: usize, episodes: usize, e: &EvalReport) -> String {
    let d = |k: Difficulty| e.by_difficulty.get(&k).map_or(0.0, |a| a.mean);
    format!(
        "{},{},{},{},{},{},{}",
        round,
        episodes,
        e.overall.mean,
        e.overall.two_sem,
        d(Difficulty::Easy),
        d(Difficulty::Medium),
        d(Difficulty::Hard)
    )
}

fn append_lines(path: &Path, header: &str, lines: &[String]) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{header}")?;
    }
    for l in lines {
        writeln!(f, "{l}")?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub rounds: usize,
    pub episodes: usize,
    pub initial_eval: Option<EvalReport>,
    pub final_eval: EvalReport,
    pub reports: Vec<RoundReport>,
}

/// Runs rounds until the episode budget is spent.
///
/// With `out`, metrics are appended to `metrics.csv`, `categories.csv` and `eval.csv`
/// and checkpoints are written to `out/checkpoint`. A divergence writes a diagnostic
/// checkpoint to `out/diagnostic` before the error is returned.
pub fn train(trainer: &mut Trainer, out: Option<&Path>) -> Result<TrainSummary> {
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let initial_eval = if trainer.round == 0 {
        let e = trainer.evaluate()?;
        if let Some(dir) = out {
            append_lines(&dir.join("eval.csv"), EVAL_HEADER, &[eval_row(0, 0, &e)])?;
        }
        Some(e)
    } else {
        None
    };
    let mut reports = Vec::new();
    let mut final_eval = None;
    while !trainer.done() {
        let report = match trainer.run_round() {
            Ok(r) => r,
            Err(e @ Error::Divergence(_)) => {
                if let Some(dir) = out {
                    trainer.save_checkpoint(&dir.join("diagnostic"))?;
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let last = trainer.done();
        if let Some(dir) = out {
            append_lines(&dir.join("metrics.csv"), METRICS_HEADER, &[metrics_row(&report)])?;
            append_lines(&dir.join("categories.csv"), CATEGORY_HEADER, &category_rows(&report))?;
            let every = trainer.cfg.checkpoint_every_rounds;
            if last || (every > 0 && trainer.round.is_multiple_of(every)) {
                trainer.save_checkpoint(&dir.join("checkpoint"))?;
            }
        }
        let every = trainer.cfg.eval_every_rounds;
        if last || (every > 0 && trainer.round.is_multiple_of(every)) {
            let e = trainer.evaluate()?;
            if let Some(dir) = out {
                append_lines(
                    &dir.join("eval.csv"),
                    EVAL_HEADER,
                    &[eval_row(trainer.round, trainer.episodes, &e)],
                )?;
            }
            if last {
                final_eval = Some(e);
            }
        }
        reports.push(report);
    }
    let final_eval = match final_eval {
        Some(e) => e,
        None => trainer.evaluate()?,
    };
    Ok(TrainSummary {
        rounds: trainer.round,
        episodes: trainer.episodes,
        initial_eval,
        final_eval,
        reports,
    })
}

/// Drops metric rows written after the round a checkpoint holds, so a resumed run
/// appends exactly what an uninterrupted one would have.
pub fn truncate_metrics(dir: &Path, round: usize) -> Result<()> {
    for (file, keep_equal) in [("metrics.csv", false), ("categories.csv", false), ("eval.csv", true)] {
        let path = dir.join(file);
        if !path.exists() {
            continue;
        }
        let text = fs::read_to_string(&path)?;
        let mut out = String::with_capacity(text.len());
        for (i, line) in text.lines().enumerate() {
            let keep = i == 0 || {
                let r: usize = line
                    .split(',')
                    .next()
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| Error::Format(format!("{file} line {} has no round", i + 1)))?;
                r < round || (keep_equal && r == round)
            };
            if keep {
                out.push_str(line);
                out.push('\n');
            }
        }
        fs::write(&path, out)?;
    }
    Ok(())
}
