use serde::{Deserialize, Serialize};

use crate::gnn::{GraphTensors, SampleMode};
use crate::scalar::Scalar;
use crate::tapegrad::{clip_global_norm, Adam, Bound, Tape, TapeError, Tensor, Var};

use super::dirichlet::{tape_entropy, tape_log_density};
use super::{Observation, PolicyError, PolicyNets};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub gamma: f64,
    pub episodes: u64,
    /// Weight `c_v` of the value loss.
    pub value_weight: f64,
    /// Weight `c_e` of the entropy bonus.
    pub entropy_weight: f64,
    /// Dirichlet concentration scale `κ`.
    pub kappa: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Rewards are multiplied by this before computing returns.
    pub reward_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.003,
            gamma: 0.97,
            episodes: 16_000,
            value_weight: 0.5,
            entropy_weight: 0.01,
            kappa: 10.0,
            clip_norm: 5.0,
            reward_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad("kappa must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if !(self.value_weight >= 0.0 && self.entropy_weight >= 0.0) {
            return bad("value_weight and entropy_weight must be nonnegative");
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("reward_scale must be positive");
        }
        Ok(())
    }
}

/// One rollout step as needed to rebuild the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<S> {
    pub features: Tensor<S>,
    pub action: Vec<f64>,
    pub log_density: f64,
    pub reward: f64,
    pub value: f64,
    /// Edge-sampler noise used at this step, if any.
    pub noise: Option<Vec<S>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory<S> {
    pub steps: Vec<StepRecord<S>>,
    /// Edge-sampler temperature during the rollout.
    pub temperature: f64,
}

/// `R_t = r_t + γ R_{t+1}` with `R_{T−1} = r_{T−1}`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, &r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Records the episode loss `Σ −log π(a_t) Â_t + c_v Σ (R_t − V_t)² − c_e Σ H_t`.
pub fn a2c_loss<S: Scalar>(
    tape: &mut Tape<S>,
    nets: &PolicyNets<S>,
    bound: &Bound,
    graph: &GraphTensors<S>,
    traj: &Trajectory<S>,
    structure: Option<Var>,
    cfg: &TrainConfig,
) -> Result<(Var, LossReport), TapeError> {
    let rewards: Vec<f64> = traj.steps.iter().map(|s| s.reward * cfg.reward_scale).collect();
    let returns = discounted_returns(&rewards, cfg.gamma);
    let temperature = S::lit(traj.temperature);

    let mut policy = None;
    let mut value = None;
    let mut entropy = None;
    let accumulate = |tape: &mut Tape<S>, acc: &mut Option<Var>, term: Var| -> Result<(), TapeError> {
        *acc = Some(match *acc {
            Some(prev) => tape.add(prev, term)?,
            None => term,
        });
        Ok(())
    };

    for (step, &ret) in traj.steps.iter().zip(&returns) {
        let sample = match &step.noise {
            Some(noise) => SampleMode::Stochastic { noise, temperature },
            None => SampleMode::Deterministic,
        };
        let obs = Observation {
            graph,
            features: &step.features,
            structure: None,
            sample,
        };
        let (actor, v) = nets.forward(tape, bound, &obs, structure)?;
        let advantage = ret - tape.value(v).item().as_f64();

        let logp = tape_log_density(tape, actor.concentration, &step.action)?;
        let term = tape.scale(logp, S::lit(-advantage))?;
        accumulate(tape, &mut policy, term)?;

        let diff = tape.add_scalar(v, S::lit(-ret))?;
        let sq = tape.mul(diff, diff)?;
        accumulate(tape, &mut value, sq)?;

        let h = tape_entropy(tape, actor.concentration)?;
        accumulate(tape, &mut entropy, h)?;
    }

    let empty = || TapeError::Domain {
        op: "a2c_loss",
        detail: "empty trajectory".into(),
    };
    let (policy, value, entropy) = (policy.ok_or_else(empty)?, value.ok_or_else(empty)?, entropy.ok_or_else(empty)?);
    let weighted_value = tape.scale(value, S::lit(cfg.value_weight))?;
    let weighted_entropy = tape.scale(entropy, S::lit(cfg.entropy_weight))?;
    let partial = tape.add(policy, weighted_value)?;
    let total = tape.sub(partial, weighted_entropy)?;

    let read = |v: Var| tape.value(v).item().as_f64();
    let report = LossReport {
        policy_loss: read(policy),
        value_loss: read(value),
        entropy: read(entropy),
        total: read(total),
        grad_norm: 0.0,
    };
    Ok((total, report))
}

/// One Adam step on every actor and critic parameter from a single episode.
/// With `structure_grad`, the gradient of the loss w.r.t. the refined
/// structure is returned as well.
pub fn a2c_update<S: Scalar>(
    nets: &mut PolicyNets<S>,
    adam: &mut Adam<S>,
    graph: &GraphTensors<S>,
    traj: &Trajectory<S>,
    structure: Option<&Tensor<S>>,
    structure_grad: bool,
    cfg: &TrainConfig,
) -> Result<(LossReport, Option<Tensor<S>>), PolicyError> {
    let mut tape = Tape::new();
    let bound = nets.store.bind(&mut tape);
    let s_var = structure.map(|s| {
        if structure_grad {
            tape.param(s.clone())
        } else {
            tape.constant(s.clone())
        }
    });
    let (loss, mut report) = a2c_loss(&mut tape, nets, &bound, graph, traj, s_var, cfg)?;
    if !report.total.is_finite() {
        return Err(PolicyError::NonFinite {
            what: format!("loss {report:?}"),
        });
    }
    let grads = tape.backward(loss)?;
    let mut param_grads = bound.gradients(&grads);
    if !param_grads.iter().all(Tensor::is_finite) {
        return Err(PolicyError::NonFinite {
            what: "parameter gradient".into(),
        });
    }
    report.grad_norm = clip_global_norm(&mut param_grads, S::lit(cfg.clip_norm)).as_f64();
    adam.step(nets.store.values_mut(), &param_grads)?;
    let s_grad = match (s_var, structure_grad) {
        (Some(v), true) => Some(grads.wrt(v)),
        _ => None,
    };
    Ok((report, s_grad))
}
