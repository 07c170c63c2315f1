//! Autoregressive token policy with a value head sharing its encoder.
//!
//! Slot `k` scores token `t` as
//! `head_k[:, t] . h + bias_k[t] + sum_{j<k} cond_{k,j}[tok_j, t] + gain_k * mention_k[t]`,
//! normalized over the slot's support. Pointer tokens drop every term but the mention,
//! so they are chosen only by copying from the goal. The value is `sigmoid(w . h + b)`.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::Features;
use super::vocab::{ActionSpace, ActionTokenSequence, TokenId, N_SLOTS};
use crate::error::{Error, Result};
use crate::nn::{
    log_sum_exp, mat_vec_acc, outer_acc, sigmoid, sigmoid_grad, vec_mat_acc, DenseArray, ParamId,
    ParamStore,
};

pub const RATIO_MIN: f64 = 1e-6;
pub const RATIO_MAX: f64 = 1e6;
/// Resampling attempts before an unusable token falls back.
pub const MAX_RESAMPLES: usize = 8;
/// Initial weight of the goal-mention signal in every slot.
pub const MENTION_GAIN_INIT: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub vocab_size: usize,
    pub n_slots: usize,
    /// Tokens scored by the mention signal alone.
    pub pointer_tokens: Vec<TokenId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub config: PolicyConfig,
    pub params: ParamStore,
    enc_w: Vec<ParamId>,
    enc_b: Vec<ParamId>,
    head_w: Vec<ParamId>,
    head_b: Vec<ParamId>,
    /// `cond[k][j]` for `j < k`.
    cond: Vec<Vec<ParamId>>,
    gain: Vec<ParamId>,
    value_w: ParamId,
    value_b: ParamId,
    pointer: Vec<bool>,
}

/// Encoder activations of one observation.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `acts[0]` is the input; `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    value_logit: f64,
}

impl Encoded {
    pub fn hidden(&self) -> &[f64] {
        self.acts.last().expect("encoder has an input")
    }

    pub fn value(&self) -> f64 {
        sigmoid(self.value_logit)
    }
}

/// Importance ratio `exp(lp - lb)`, clamped; zero gradient when the clamp is active.
pub fn importance_ratio(lp: f64, lb: f64) -> (f64, f64) {
    let r = (lp - lb).exp();
    if r < RATIO_MIN {
        (RATIO_MIN, 0.0)
    } else if r > RATIO_MAX {
        (RATIO_MAX, 0.0)
    } else {
        (r, r)
    }
}

fn uniform_init<R: Rng>(rng: &mut R, shape: &[usize], scale: f64) -> DenseArray {
    let n: usize = shape.iter().product();
    let u = Uniform::new_inclusive(-scale, scale);
    DenseArray::from_vec(shape, (0..n).map(|_| u.sample(rng)).collect()).expect("shape matches")
}

impl Policy {
    pub fn new(config: PolicyConfig, seed: u64) -> Result<Self> {
        if config.layers == 0 || config.hidden == 0 || config.input_dim == 0 {
            return Err(Error::Config("policy needs at least one non-empty layer".into()));
        }
        if config.n_slots == 0 || config.n_slots > N_SLOTS || config.vocab_size == 0 {
            return Err(Error::Config(format!(
                "policy supports 1 to {N_SLOTS} slots over a non-empty vocabulary"
            )));
        }
        let mut pointer = vec![false; config.vocab_size];
        for &t in &config.pointer_tokens {
            *pointer.get_mut(t).ok_or_else(|| {
                Error::Config(format!("pointer token {t} outside the vocabulary"))
            })? = true;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (mut enc_w, mut enc_b) = (Vec::new(), Vec::new());
        let mut fan_in = config.input_dim;
        for l in 0..config.layers {
            let s = (6.0 / (fan_in + config.hidden) as f64).sqrt();
            enc_w.push(params.insert(
                &format!("enc.{l}.w"),
                uniform_init(&mut rng, &[fan_in, config.hidden], s),
            )?);
            enc_b.push(params.insert(&format!("enc.{l}.b"), DenseArray::zeros(&[config.hidden]))?);
            fan_in = config.hidden;
        }
        let v = config.vocab_size;
        let (mut head_w, mut head_b, mut cond, mut gain) = (vec![], vec![], vec![], vec![]);
        for k in 0..config.n_slots {
            let s = 1.0 / (config.hidden as f64).sqrt();
            head_w.push(params.insert(
                &format!("head.{k}.w"),
                uniform_init(&mut rng, &[config.hidden, v], s),
            )?);
            head_b.push(params.insert(&format!("head.{k}.b"), DenseArray::zeros(&[v]))?);
            let mut row = Vec::new();
            for j in 0..k {
                row.push(params.insert(&format!("cond.{k}.{j}"), DenseArray::zeros(&[v, v]))?);
            }
            cond.push(row);
            gain.push(params.insert(&format!("gain.{k}"), DenseArray::vector(vec![MENTION_GAIN_INIT]))?);
        }
        let s = 1.0 / (config.hidden as f64).sqrt();
        let value_w = params.insert("value.w", uniform_init(&mut rng, &[config.hidden], s))?;
        let value_b = params.insert("value.b", DenseArray::vector(vec![0.0]))?;
        Ok(Policy {
            config,
            params,
            enc_w,
            enc_b,
            head_w,
            head_b,
            cond,
            gain,
            value_w,
            value_b,
            pointer,
        })
    }

    /// Replaces the parameters, checking that names and shapes match.
    pub fn load_params(&mut self, params: ParamStore) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (a, b) in self.params.iter().zip(params.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Shape(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    b.name,
                    b.value.shape(),
                    a.name,
                    a.value.shape()
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    fn check_features(&self, f: &Features) -> Result<()> {
        let v = self.config.vocab_size;
        if f.dense.len() != self.config.input_dim
            || f.mentions.len() < self.config.n_slots
            || f.mentions.iter().any(|m| m.len() != v)
            || f.invalid.len() != v
        {
            return Err(Error::Shape("features do not match the policy".into()));
        }
        Ok(())
    }

    pub fn encode(&self, f: &Features) -> Result<Encoded> {
        self.check_features(f)?;
        let mut acts = Vec::with_capacity(self.config.layers + 1);
        acts.push(f.dense.clone());
        for l in 0..self.config.layers {
            let mut out = self.params.value(self.enc_b[l]).to_vec();
            vec_mat_acc(&acts[l], self.params.value(self.enc_w[l]), &mut out);
            out.iter_mut().for_each(|x| *x = x.tanh());
            acts.push(out);
        }
        let h = acts.last().unwrap();
        let value_logit = self.params.value(self.value_b)[0]
            + h.iter()
                .zip(self.params.value(self.value_w))
                .map(|(a, b)| a * b)
                .sum::<f64>();
        Ok(Encoded { acts, value_logit })
    }

    /// Logits of slot `k` over the whole vocabulary given the earlier tokens.
    fn slot_logits(&self, enc: &Encoded, f: &Features, k: usize, prefix: &[TokenId]) -> Vec<f64> {
        let v = self.config.vocab_size;
        let mut z = self.params.value(self.head_b[k]).to_vec();
        vec_mat_acc(enc.hidden(), self.params.value(self.head_w[k]), &mut z);
        for (j, &tok) in prefix.iter().enumerate().take(k) {
            let c = &self.params.value(self.cond[k][j])[tok * v..(tok + 1) * v];
            z.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        }
        let g = self.params.value(self.gain[k])[0];
        for ((a, m), &p) in z.iter_mut().zip(&f.mentions[k]).zip(&self.pointer) {
            if p {
                *a = 0.0;
            }
            *a += g * m;
        }
        z
    }

    fn support<'s>(
        &self,
        space: &'s dyn ActionSpace,
        k: usize,
        prefix: &[TokenId],
    ) -> Option<&'s [TokenId]> {
        space.support(k, prefix).filter(|s| !s.is_empty())
    }

    /// Log-probability of `seq`, summed over the slots that are not structurally PAD.
    pub fn log_prob(
        &self,
        enc: &Encoded,
        f: &Features,
        space: &dyn ActionSpace,
        seq: &ActionTokenSequence,
    ) -> Result<f64> {
        let mut total = 0.0;
        for k in 0..self.config.n_slots {
            let Some(support) = self.support(space, k, &seq.0[..k]) else {
                continue;
            };
            let tok = seq.0[k];
            if !support.contains(&tok) {
                return Err(Error::Encoding(format!("token {tok} outside the support of slot {k}")));
            }
            let z = self.slot_logits(enc, f, k, &seq.0[..k]);
            let zs: Vec<f64> = support.iter().map(|&t| z[t]).collect();
            total += z[tok] - log_sum_exp(&zs);
        }
        Ok(total)
    }

    /// Adds `c_pi * d log pi(seq) + c_v * d V` to the gradients held by `grads`.
    ///
    /// `grads` must have the layout of `self.params`; only its gradient arrays change.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        enc: &Encoded,
        f: &Features,
        space: &dyn ActionSpace,
        seq: &ActionTokenSequence,
        c_pi: f64,
        c_v: f64,
        grads: &mut ParamStore,
    ) -> Result<()> {
        let v = self.config.vocab_size;
        let h = enc.hidden();
        let mut dh = vec![0.0; self.config.hidden];
        if c_pi != 0.0 {
            for k in 0..self.config.n_slots {
                let Some(support) = self.support(space, k, &seq.0[..k]) else {
                    continue;
                };
                let tok = seq.0[k];
                if !support.contains(&tok) {
                    return Err(Error::Encoding(format!(
                        "token {tok} outside the support of slot {k}"
                    )));
                }
                let z = self.slot_logits(enc, f, k, &seq.0[..k]);
                let zs: Vec<f64> = support.iter().map(|&t| z[t]).collect();
                let lse = log_sum_exp(&zs);
                let mut dz = vec![0.0; v];
                for &t in support {
                    dz[t] = -c_pi * (z[t] - lse).exp();
                }
                dz[tok] += c_pi;
                grads.grad_mut(self.gain[k])[0] +=
                    dz.iter().zip(&f.mentions[k]).map(|(d, m)| d * m).sum::<f64>();
                for (d, &p) in dz.iter_mut().zip(&self.pointer) {
                    if p {
                        *d = 0.0;
                    }
                }
                outer_acc(h, &dz, grads.grad_mut(self.head_w[k]));
                grads.grad_mut(self.head_b[k]).iter_mut().zip(&dz).for_each(|(g, d)| *g += d);
                for (j, &prev) in seq.0[..k].iter().enumerate() {
                    let row = &mut grads.grad_mut(self.cond[k][j])[prev * v..(prev + 1) * v];
                    row.iter_mut().zip(&dz).for_each(|(g, d)| *g += d);
                }
                mat_vec_acc(self.params.value(self.head_w[k]), &dz, &mut dh);
            }
        }
        if c_v != 0.0 {
            let du = c_v * sigmoid_grad(enc.value_logit);
            grads.grad_mut(self.value_b)[0] += du;
            outer_acc(&[du], h, grads.grad_mut(self.value_w));
            dh.iter_mut()
                .zip(self.params.value(self.value_w))
                .for_each(|(d, w)| *d += du * w);
        }
        for l in (0..self.config.layers).rev() {
            let out = &enc.acts[l + 1];
            let dpre: Vec<f64> = dh.iter().zip(out).map(|(d, a)| d * (1.0 - a * a)).collect();
            outer_acc(&enc.acts[l], &dpre, grads.grad_mut(self.enc_w[l]));
            grads.grad_mut(self.enc_b[l]).iter_mut().zip(&dpre).for_each(|(g, d)| *g += d);
            if l > 0 {
                let mut din = vec![0.0; enc.acts[l].len()];
                mat_vec_acc(self.params.value(self.enc_w[l]), &dpre, &mut din);
                dh = din;
            }
        }
        Ok(())
    }

    /// Samples an action token by token.
    ///
    /// `temperature == 0` takes the best usable token of each slot. Otherwise unusable
    /// tokens are redrawn up to [`MAX_RESAMPLES`] times before the whole action becomes
    /// `fallback`. The returned log-probability is always taken under the
    /// untempered policy.
    pub fn sample<R: Rng>(
        &self,
        enc: &Encoded,
        f: &Features,
        space: &dyn ActionSpace,
        temperature: f64,
        fallback: ActionTokenSequence,
        rng: &mut R,
    ) -> Result<(ActionTokenSequence, f64)> {
        let pad = 0;
        let mut seq = [pad; N_SLOTS];
        let mut fell_back = false;
        'slots: for k in 0..self.config.n_slots {
            let Some(support) = self.support(space, k, &seq[..k]) else {
                continue;
            };
            let z = self.slot_logits(enc, f, k, &seq[..k]);
            let zs: Vec<f64> = support.iter().map(|&t| z[t]).collect();
            let tok = if temperature <= 0.0 {
                // mode of the distribution the sampler draws from, which skips unusable tokens
                let mut best: Option<usize> = None;
                for (i, &t) in support.iter().enumerate() {
                    if !f.invalid[t] && best.is_none_or(|b| zs[i] > zs[b]) {
                        best = Some(i);
                    }
                }
                match best {
                    Some(b) => support[b],
                    None => support[0],
                }
            } else {
                let scaled: Vec<f64> = zs.iter().map(|x| x / temperature).collect();
                let lse = log_sum_exp(&scaled);
                let probs: Vec<f64> = scaled.iter().map(|x| (x - lse).exp()).collect();
                let mut tok = draw(&probs, support, rng);
                for _ in 0..MAX_RESAMPLES {
                    if !f.invalid[tok] {
                        break;
                    }
                    tok = draw(&probs, support, rng);
                }
                tok
            };
            if f.invalid[tok] {
                fell_back = true;
                break 'slots;
            }
            seq[k] = tok;
        }
        let seq = if fell_back {
            fallback
        } else {
            ActionTokenSequence(seq)
        };
        let lp = self.log_prob(enc, f, space, &seq)?;
        Ok((seq, lp))
    }
}

fn draw<R: Rng>(probs: &[f64], support: &[TokenId], rng: &mut R) -> TokenId {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (p, &t) in probs.iter().zip(support) {
        acc += p;
        if u < acc {
            return t;
        }
    }
    *support.last().expect("support is non-empty")
}
