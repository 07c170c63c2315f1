//! Training losses with their analytic gradients.
//!
//! Every loss is a batch mean of per-sample terms that depend on the parameters only
//! through `log pi(a|s)` and `V(s)`, so each term is differentiated by handing
//! `dL/dlog pi` and `dL/dV` to [`Policy::backward`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::policy::{importance_ratio, ActionSpace, Policy};
use crate::replay::Transition;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Sols,
    Ppo,
    A2cStr,
    DigirlStr,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sols => "sols",
            Algorithm::Ppo => "ppo",
            Algorithm::A2cStr => "a2c",
            Algorithm::DigirlStr => "digirl",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "sols" => Algorithm::Sols,
            "ppo" => Algorithm::Ppo,
            "a2c" => Algorithm::A2cStr,
            "digirl" => Algorithm::DigirlStr,
            _ => {
                return Err(Error::Config(format!(
                    "unknown algorithm {s:?}; expected sols, ppo, a2c or digirl"
                )))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoConfig {
    pub algorithm: Algorithm,
    pub epsilon: f64,
    pub lambda_critic: f64,
    pub digirl_lambda: f64,
    pub digirl_threshold: f64,
    pub ppo_epochs: usize,
}

impl AlgoConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        AlgoConfig {
            algorithm,
            epsilon: 0.2,
            lambda_critic: 0.5,
            digirl_lambda: 0.8,
            digirl_threshold: 0.05,
            ppo_epochs: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if !(self.digirl_lambda > 0.0 && self.digirl_lambda < 1.0) {
            return Err(Error::Config("digirl_lambda must lie in (0, 1)".into()));
        }
        if self.lambda_critic < 0.0 || self.ppo_epochs == 0 {
            return Err(Error::Config("lambda_critic must be >= 0 and ppo_epochs >= 1".into()));
        }
        Ok(())
    }
}

/// Whether a transition keeps its actor gradient under SoLS.
pub fn sols_update_mask(advantage: f64, ratio: f64, epsilon: f64) -> bool {
    advantage > 0.0 || (1.0 - epsilon <= ratio && ratio <= 1.0 + epsilon)
}

/// Clipped surrogate `min(r A, clip(r) A)` and whether the unclipped branch is active.
pub fn ppo_objective(advantage: f64, ratio: f64, epsilon: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

/// Step advantage `lam^(H-t) r_H + (1 - lam^(H-t) r_t) (V(s_{t+1}) + r_t - V(s_t))`.
pub fn digirl_step_advantage(
    t: usize,
    horizon: usize,
    v_t: f64,
    v_next: f64,
    r_t: f64,
    r_h: f64,
    lam: f64,
) -> f64 {
    let decay = lam.powi(horizon.saturating_sub(t) as i32);
    decay * r_h + (1.0 - decay * r_t) * (v_next + r_t - v_t)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub joint: f64,
    /// Share of the batch whose actor gradient is exactly zero.
    pub masked_fraction: f64,
    pub batch: usize,
}

/// Which terms of the joint loss to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Terms {
    Actor,
    Critic,
    Joint,
}

/// Per-sample advantages under the current parameters, treated as constants.
///
/// `R - V(s)` for the importance-weighted losses, the step advantage for DigiRL.
pub fn advantages(
    policy: &Policy,
    batch: &[&Transition],
    cfg: &AlgoConfig,
) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|t| {
            let v = policy.encode(&t.features)?.value();
            Ok(match cfg.algorithm {
                Algorithm::DigirlStr => {
                    let v_next = match &t.next_features {
                        Some(f) => policy.encode(f)?.value(),
                        None => 0.0,
                    };
                    digirl_step_advantage(
                        t.step_index,
                        t.final_step,
                        v,
                        v_next,
                        t.reward,
                        t.return_r,
                        cfg.digirl_lambda,
                    )
                }
                _ => t.return_r - v,
            })
        })
        .collect()
}

/// Evaluates the loss for `batch` and, when `grads` is given, adds `scale * dL` to it.
///
/// `adv` must come from [`advantages`]; passing it in keeps it fixed under parameter
/// perturbations. Transitions whose actor gradient is zero are never back-propagated
/// through the actor term, so their contribution is exactly zero.
#[allow(clippy::too_many_arguments)]
pub fn loss(
    policy: &Policy,
    batch: &[&Transition],
    adv: &[f64],
    space: &dyn ActionSpace,
    cfg: &AlgoConfig,
    terms: Terms,
    scale: f64,
    mut grads: Option<&mut ParamStore>,
) -> Result<LossBreakdown> {
    if adv.len() != batch.len() {
        return Err(Error::Shape("one advantage per transition is required".into()));
    }
    let n = batch.len();
    if n == 0 {
        return Ok(LossBreakdown::default());
    }
    let inv_n = 1.0 / n as f64;
    let want_actor = terms != Terms::Critic;
    let want_critic = terms != Terms::Actor;
    let kept = match cfg.algorithm {
        Algorithm::DigirlStr => adv.iter().filter(|&&a| a > cfg.digirl_threshold).count(),
        _ => n,
    };
    let (mut actor, mut critic, mut zero) = (0.0, 0.0, 0usize);
    for (t, &a) in batch.iter().zip(adv) {
        let enc = policy.encode(&t.features)?;
        let lp = policy.log_prob(&enc, &t.features, space, &t.tokens)?;
        // (loss term, dL/dlog pi) before the batch mean
        let (term, d_lp) = match cfg.algorithm {
            Algorithm::Sols | Algorithm::A2cStr => {
                let (r, dr) = importance_ratio(lp, t.behavior_log_prob);
                if cfg.algorithm == Algorithm::Sols && !sols_update_mask(a, r, cfg.epsilon) {
                    (0.0, None)
                } else {
                    (-a * r, Some(-a * dr))
                }
            }
            Algorithm::Ppo => {
                let (r, dr) = importance_ratio(lp, t.behavior_log_prob);
                let (obj, unclipped) = ppo_objective(a, r, cfg.epsilon);
                (-obj, unclipped.then_some(-a * dr))
            }
            Algorithm::DigirlStr => {
                if a > cfg.digirl_threshold {
                    (-lp / kept as f64 * n as f64, Some(-(n as f64) / kept as f64))
                } else {
                    (0.0, None)
                }
            }
        };
        let d_lp = d_lp.filter(|d| *d != 0.0);
        if d_lp.is_none() {
            zero += 1;
        }
        actor += term * inv_n;
        let v = enc.value();
        critic += (t.return_r - v).powi(2) * inv_n;
        if let Some(g) = grads.as_deref_mut() {
            let c_pi = if want_actor { d_lp.map_or(0.0, |d| d * inv_n * scale) } else { 0.0 };
            let c_v = if want_critic {
                let lam = if terms == Terms::Joint { cfg.lambda_critic } else { 1.0 };
                -2.0 * (t.return_r - v) * inv_n * lam * scale
            } else {
                0.0
            };
            if c_pi != 0.0 || c_v != 0.0 {
                policy.backward(&enc, &t.features, space, &t.tokens, c_pi, c_v, g)?;
            }
        }
    }
    if !actor.is_finite() || !critic.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite loss (actor {actor}, critic {critic})"
        )));
    }
    let joint = match terms {
        Terms::Actor => actor,
        Terms::Critic => critic,
        Terms::Joint => actor + cfg.lambda_critic * critic,
    };
    Ok(LossBreakdown {
        actor_loss: actor,
        critic_loss: critic,
        joint,
        masked_fraction: zero as f64 * inv_n,
        batch: n,
    })
}
