//! Alternating training of the tree and workload policies.
//!
//! Each outer iteration runs `fts_phases` phases that update the tree
//! policy while the workload policy is frozen, then `ws_phases` phases
//! that do the reverse. A phase collects rollouts from a parameter
//! snapshot in parallel and applies clipped policy-gradient epochs with a
//! learned value baseline.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::RoundSummary;
use crate::env::{EnvConfig, EnvShared, FtsAction, FtsEnv, FtsObservation, WsAction, WsObservation};
use crate::nn::Adam;
use crate::policy::{ActMode, FtsPolicyNet, LossWeights, Policy, PolicyError, WsPolicyNet};
use crate::scalar::Scalar;
use crate::seeds::derive_seed;
use crate::sim::RoundRecord;
use crate::workload::Granularity;

pub const CHECKPOINT_FORMAT: &str = "arsched-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("buffer holds {buffer:?} transitions, {requested:?} were requested")]
    FlavorMismatch { buffer: Flavor, requested: Flavor },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("checkpoint does not match: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    Fts,
    Ws,
}

impl Flavor {
    pub fn as_str(self) -> &'static str {
        match self {
            Flavor::Fts => "fts",
            Flavor::Ws => "ws",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Outer iterations (I).
    pub outer_iterations: usize,
    /// Tree-policy phases per outer iteration (J).
    pub fts_phases: usize,
    /// Workload-policy phases per outer iteration (K).
    pub ws_phases: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub clip_ratio: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    /// Episodes collected per phase.
    pub rollouts: usize,
    /// Passes over each phase's batch.
    pub update_epochs: usize,
    pub hidden: usize,
    pub seed: u64,
    pub env: EnvConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            outer_iterations: 10,
            fts_phases: 5,
            ws_phases: 5,
            gamma: 0.99,
            learning_rate: 3e-4,
            clip_ratio: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            rollouts: 16,
            update_epochs: 4,
            hidden: 128,
            seed: 0,
            env: EnvConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.outer_iterations == 0 || self.fts_phases == 0 || self.ws_phases == 0 {
            return bad("iteration counts must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return bad("clip ratio must lie in (0, 1)");
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return bad("learning rate must be finite and non-negative");
        }
        if self.rollouts == 0 || self.update_epochs == 0 || self.hidden == 0 {
            return bad("rollouts, update epochs and hidden width must be positive");
        }
        if self.env.cap_factor == 0 {
            return bad("episode cap factor must be positive");
        }
        Ok(())
    }
}

/// One stored transition with the quantities needed for the update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition<O, A, S> {
    pub obs: O,
    pub next_obs: O,
    pub action: A,
    pub reward: S,
    pub logp: S,
    pub value: S,
    /// Discounted return, filled once the episode ends.
    pub ret: S,
}

pub type FtsTransition<S> = Transition<FtsObservation<S>, FtsAction, S>;
pub type WsTransition<S> = Transition<WsObservation<S>, WsAction, S>;

/// Transitions from exactly one decision level.
#[derive(Debug, Clone)]
pub struct TrajectoryBuffer<S> {
    flavor: Flavor,
    fts: Vec<FtsTransition<S>>,
    ws: Vec<WsTransition<S>>,
}

impl<S: Scalar> TrajectoryBuffer<S> {
    pub fn new(flavor: Flavor) -> Self {
        TrajectoryBuffer {
            flavor,
            fts: Vec::new(),
            ws: Vec::new(),
        }
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn len(&self) -> usize {
        self.fts.len() + self.ws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn expect(&self, flavor: Flavor) -> Result<(), TrainError> {
        if self.flavor == flavor {
            Ok(())
        } else {
            Err(TrainError::FlavorMismatch {
                buffer: self.flavor,
                requested: flavor,
            })
        }
    }

    pub fn push_fts(&mut self, t: FtsTransition<S>) -> Result<(), TrainError> {
        self.expect(Flavor::Fts)?;
        self.fts.push(t);
        Ok(())
    }

    pub fn push_ws(&mut self, t: WsTransition<S>) -> Result<(), TrainError> {
        self.expect(Flavor::Ws)?;
        self.ws.push(t);
        Ok(())
    }

    pub fn fts(&self) -> Result<&[FtsTransition<S>], TrainError> {
        self.expect(Flavor::Fts)?;
        Ok(&self.fts)
    }

    pub fn ws(&self) -> Result<&[WsTransition<S>], TrainError> {
        self.expect(Flavor::Ws)?;
        Ok(&self.ws)
    }
}

/// Outcome of one episode.
#[derive(Debug, Clone)]
pub struct Episode<S> {
    pub rounds: usize,
    pub done: bool,
    /// Undiscounted sum of tree-level rewards.
    pub fts_return: S,
    pub log: Vec<RoundRecord>,
    pub fts: Vec<FtsTransition<S>>,
    pub ws: Vec<WsTransition<S>>,
}

/// Plays one episode. Transitions are recorded only for `collect`.
///
/// Tree-level returns are discounted per round. Workload-level returns
/// run over the whole episode and are also discounted per round, so that
/// sending a workload earlier is worth more than sending it later.
pub fn rollout<S: Scalar>(
    shared: &Arc<EnvShared>,
    tree: &FtsPolicyNet<S>,
    flow: &WsPolicyNet<S>,
    mode: ActMode,
    seed: u64,
    collect: Option<Flavor>,
    gamma: f64,
) -> Result<Episode<S>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = FtsEnv::new(Arc::clone(shared));
    let mut obs: FtsObservation<S> = env.reset();
    let mut fts = Vec::new();
    let mut ws = Vec::new();
    let mut ws_rounds = Vec::new();
    let mut fts_return = S::zero();
    loop {
        let (action, logp) = tree.act(&obs, &mut rng, mode)?;
        let value = if collect == Some(Flavor::Fts) { tree.value(&obs)? } else { S::zero() };
        let mut round = env.begin_round::<S>(&action).expect("episode is running");
        while !round.is_closed() {
            let wobs = round.observe();
            let (a, lp) = flow.act(&wobs, &mut rng, mode)?;
            let v = if collect == Some(Flavor::Ws) { flow.value(&wobs)? } else { S::zero() };
            let step = round.step(a).expect("policies only choose unmasked rows");
            if collect == Some(Flavor::Ws) {
                ws_rounds.push(env.state().round());
                ws.push(Transition {
                    obs: wobs,
                    next_obs: step.obs,
                    action: a,
                    reward: step.reward,
                    logp: lp,
                    value: v,
                    ret: S::zero(),
                });
            }
        }
        let step = env.finish_round(round);
        fts_return = fts_return + step.reward;
        let over = step.episode_over();
        if collect == Some(Flavor::Fts) {
            fts.push(Transition {
                obs: obs.clone(),
                next_obs: step.obs.clone(),
                action,
                reward: step.reward,
                logp,
                value,
                ret: S::zero(),
            });
        }
        obs = step.obs;
        if over {
            break;
        }
    }
    let g = S::of(gamma);
    let mut acc = S::zero();
    for t in fts.iter_mut().rev() {
        acc = t.reward + g * acc;
        t.ret = acc;
    }
    let mut acc = S::zero();
    let mut later_round = None;
    for (t, r) in ws.iter_mut().zip(&ws_rounds).rev() {
        if let Some(lr) = later_round {
            acc = acc * g.powi((lr - r) as i32);
        }
        later_round = Some(*r);
        acc = t.reward + acc;
        t.ret = acc;
    }
    Ok(Episode {
        rounds: env.state().round(),
        done: env.state().is_done(),
        fts_return,
        log: env.state().log().to_vec(),
        fts,
        ws,
    })
}

/// Loss components averaged over one update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

impl UpdateStats {
    pub fn total(&self, cfg: &TrainConfig) -> f64 {
        self.policy_loss + cfg.value_coef * self.value_loss - cfg.entropy_coef * self.entropy
    }
}

/// Clipped policy-gradient epochs over a batch of transitions.
pub fn ppo_update<S: Scalar, P: Policy<S>>(
    policy: &mut P,
    opt: &mut Adam<S>,
    batch: &[Transition<P::Obs, P::Action, S>],
    cfg: &TrainConfig,
) -> Result<UpdateStats, TrainError> {
    if batch.is_empty() {
        return Ok(UpdateStats::default());
    }
    let n = batch.len();
    let mut adv: Vec<f64> = batch
        .iter()
        .map(|t| (t.ret - t.value).to_f64_lossy())
        .collect();
    let mean = adv.iter().sum::<f64>() / n as f64;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    adv.iter_mut().for_each(|a| *a = (*a - mean) / (std + 1e-8));

    let inv_n = S::one() / S::of_usize(n);
    let clip = S::of(cfg.clip_ratio);
    let mut stats = UpdateStats::default();
    for _ in 0..cfg.update_epochs {
        stats = UpdateStats::default();
        let mut grads = policy.zeros_like();
        for (t, a) in batch.iter().zip(&adv) {
            let a = S::of(*a);
            let mut sample = UpdateStats::default();
            policy.accumulate(
                &t.obs,
                &t.action,
                |e| {
                    let ratio = (e.logp - t.logp).exp();
                    let clipped = ratio.max(S::one() - clip).min(S::one() + clip);
                    let unclipped_active = ratio * a <= clipped * a;
                    let err = e.value - t.ret;
                    sample = UpdateStats {
                        policy_loss: -(ratio * a).min(clipped * a).to_f64_lossy(),
                        value_loss: 0.5 * (err * err).to_f64_lossy(),
                        entropy: e.entropy.to_f64_lossy(),
                        clip_fraction: if unclipped_active { 0.0 } else { 1.0 },
                    };
                    LossWeights {
                        logp: if unclipped_active { -(a * ratio) * inv_n } else { S::zero() },
                        entropy: -S::of(cfg.entropy_coef) * inv_n,
                        value: S::of(cfg.value_coef) * err * inv_n,
                    }
                },
                &mut grads,
            )?;
            stats.policy_loss += sample.policy_loss / n as f64;
            stats.value_loss += sample.value_loss / n as f64;
            stats.entropy += sample.entropy / n as f64;
            stats.clip_fraction += sample.clip_fraction / n as f64;
        }
        let norm = grads.sq_norm().sqrt();
        let max = S::of(cfg.max_grad_norm);
        if cfg.max_grad_norm > 0.0 && norm > max {
            grads.scale(max / norm);
        }
        opt.step(policy.params_mut(), grads.params());
    }
    Ok(stats)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseLog {
    pub phase: Flavor,
    pub iteration: usize,
    pub mean_rounds: f64,
    pub mean_return: f64,
    pub loss: f64,
}

/// The pair of policies being trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct PolicyPair<S> {
    pub tree: FtsPolicyNet<S>,
    pub flow: WsPolicyNet<S>,
}

impl<S: Scalar> PolicyPair<S> {
    pub fn new(shared: &EnvShared, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init", 0));
        PolicyPair {
            tree: FtsPolicyNet::new(shared.fts_obs_dim(), shared.num_trees(), hidden, &mut rng),
            flow: WsPolicyNet::new(hidden, &mut rng),
        }
    }
}

/// Runs one phase: the learner of `flavor` is updated, the other policy is
/// left untouched.
pub fn train_phase<S: Scalar>(
    flavor: Flavor,
    pair: &mut PolicyPair<S>,
    opt: &mut Adam<S>,
    shared: &Arc<EnvShared>,
    cfg: &TrainConfig,
    phase_seed: u64,
) -> Result<(TrajectoryBuffer<S>, PhaseLog), TrainError> {
    let snapshot = pair.clone();
    let episodes: Vec<Episode<S>> = (0..cfg.rollouts)
        .into_par_iter()
        .map(|i| {
            rollout(
                shared,
                &snapshot.tree,
                &snapshot.flow,
                ActMode::Sample,
                derive_seed(phase_seed, "rollout", i as u64),
                Some(flavor),
                cfg.gamma,
            )
        })
        .collect::<Result<_, _>>()?;
    let mut buffer = TrajectoryBuffer::new(flavor);
    let mut rounds = 0.0;
    let mut returns = 0.0;
    for e in episodes {
        rounds += e.rounds as f64;
        returns += e.fts_return.to_f64_lossy();
        for t in e.fts {
            buffer.push_fts(t)?;
        }
        for t in e.ws {
            buffer.push_ws(t)?;
        }
    }
    let stats = match flavor {
        Flavor::Fts => ppo_update(&mut pair.tree, opt, buffer.fts()?, cfg)?,
        Flavor::Ws => ppo_update(&mut pair.flow, opt, buffer.ws()?, cfg)?,
    };
    let k = cfg.rollouts as f64;
    let log = PhaseLog {
        phase: flavor,
        iteration: 0,
        mean_rounds: rounds / k,
        mean_return: returns / k,
        loss: stats.total(cfg),
    };
    Ok((buffer, log))
}

/// Greedy-mode evaluation; one episode per seed.
pub fn evaluate<S: Scalar>(
    shared: &Arc<EnvShared>,
    tree: &FtsPolicyNet<S>,
    flow: &WsPolicyNet<S>,
    seeds: &[u64],
) -> Result<RoundSummary, TrainError> {
    let rounds = seeds
        .par_iter()
        .map(|s| rollout(shared, tree, flow, ActMode::Greedy, *s, None, 1.0).map(|e| e.rounds))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RoundSummary::from_rounds(rounds))
}

/// Training state, resumable from a [`Checkpoint`].
#[derive(Debug, Clone)]
pub struct Trainer<S: Scalar> {
    shared: Arc<EnvShared>,
    pub config: TrainConfig,
    pub policies: PolicyPair<S>,
    tree_opt: Adam<S>,
    flow_opt: Adam<S>,
    phases_done: usize,
    outer_done: usize,
    pub log: Vec<PhaseLog>,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(shared: Arc<EnvShared>, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let policies = PolicyPair::new(&shared, config.hidden, config.seed);
        let tree_opt = Adam::new(policies.tree.num_params(), config.learning_rate);
        let flow_opt = Adam::new(policies.flow.num_params(), config.learning_rate);
        Ok(Trainer {
            shared,
            config,
            policies,
            tree_opt,
            flow_opt,
            phases_done: 0,
            outer_done: 0,
            log: Vec::new(),
        })
    }

    pub fn shared(&self) -> &Arc<EnvShared> {
        &self.shared
    }

    pub fn outer_done(&self) -> usize {
        self.outer_done
    }

    pub fn is_finished(&self) -> bool {
        self.outer_done >= self.config.outer_iterations
    }

    fn phase(&mut self, flavor: Flavor) -> Result<PhaseLog, TrainError> {
        let seed = derive_seed(self.config.seed, "phase", self.phases_done as u64);
        let opt = match flavor {
            Flavor::Fts => &mut self.tree_opt,
            Flavor::Ws => &mut self.flow_opt,
        };
        let (_, mut log) = train_phase(flavor, &mut self.policies, opt, &self.shared, &self.config, seed)?;
        log.iteration = self.phases_done;
        self.phases_done += 1;
        self.log.push(log.clone());
        Ok(log)
    }

    /// J tree phases then K workload phases.
    pub fn outer_iteration(&mut self, mut on_phase: impl FnMut(&PhaseLog)) -> Result<(), TrainError> {
        for _ in 0..self.config.fts_phases {
            let log = self.phase(Flavor::Fts)?;
            on_phase(&log);
        }
        for _ in 0..self.config.ws_phases {
            let log = self.phase(Flavor::Ws)?;
            on_phase(&log);
        }
        self.outer_done += 1;
        Ok(())
    }

    /// Runs the remaining outer iterations; `on_outer` sees the trainer
    /// after each one.
    pub fn train(
        &mut self,
        mut on_phase: impl FnMut(&PhaseLog),
        mut on_outer: impl FnMut(&Self),
    ) -> Result<(), TrainError> {
        while !self.is_finished() {
            self.outer_iteration(&mut on_phase)?;
            on_outer(self);
        }
        Ok(())
    }

    pub fn evaluate(&self, seeds: &[u64]) -> Result<RoundSummary, TrainError> {
        evaluate(&self.shared, &self.policies.tree, &self.policies.flow, seeds)
    }

    pub fn checkpoint(&self, topology: &str, granularity: Granularity) -> Checkpoint<S> {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            scalar: std::any::type_name::<S>().to_string(),
            topology: topology.to_string(),
            granularity,
            config: self.config.clone(),
            policies: self.policies.clone(),
            tree_opt: self.tree_opt.clone(),
            flow_opt: self.flow_opt.clone(),
            rng: RngState {
                root_seed: self.config.seed,
                phases_done: self.phases_done,
            },
            outer_done: self.outer_done,
            log: self.log.clone(),
        }
    }

    pub fn from_checkpoint(shared: Arc<EnvShared>, ck: Checkpoint<S>) -> Result<Self, TrainError> {
        ck.check(&shared)?;
        Ok(Trainer {
            shared,
            config: ck.config,
            policies: ck.policies,
            tree_opt: ck.tree_opt,
            flow_opt: ck.flow_opt,
            phases_done: ck.rng.phases_done,
            outer_done: ck.outer_done,
            log: ck.log,
        })
    }
}

/// All randomness is derived from the root seed and the phase counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub root_seed: u64,
    pub phases_done: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Checkpoint<S> {
    pub format: String,
    pub version: u32,
    pub scalar: String,
    /// How the training topology was specified.
    pub topology: String,
    pub granularity: Granularity,
    pub config: TrainConfig,
    pub policies: PolicyPair<S>,
    pub tree_opt: Adam<S>,
    pub flow_opt: Adam<S>,
    pub rng: RngState,
    pub outer_done: usize,
    pub log: Vec<PhaseLog>,
}

impl<S: Scalar> Checkpoint<S> {
    /// Confirms the file format and that the policies fit `shared`.
    pub fn check(&self, shared: &EnvShared) -> Result<(), TrainError> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint(format!(
                "unsupported format {} v{}",
                self.format, self.version
            )));
        }
        if self.scalar != std::any::type_name::<S>() {
            return Err(TrainError::Checkpoint(format!("stored scalar type is {}", self.scalar)));
        }
        let tree = &self.policies.tree;
        if tree.actor.input_dim() != shared.fts_obs_dim() || tree.num_trees() != shared.num_trees() {
            return Err(TrainError::Checkpoint(format!(
                "tree policy expects {} features and {} trees, topology has {} and {}",
                tree.actor.input_dim(),
                tree.num_trees(),
                shared.fts_obs_dim(),
                shared.num_trees()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_bcube;
    use crate::workload::{build_all_trees, Granularity};

    fn tiny_shared() -> Arc<EnvShared> {
        let g = build_bcube(2, 0).unwrap();
        EnvShared::new(Arc::new(build_all_trees(&g, Granularity::Hop).unwrap()), EnvConfig::default())
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            outer_iterations: 1,
            fts_phases: 1,
            ws_phases: 1,
            rollouts: 4,
            update_epochs: 2,
            hidden: 8,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { gamma: 0.0, ..Default::default() },
            TrainConfig { clip_ratio: 1.0, ..Default::default() },
            TrainConfig { fts_phases: 0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
        }
    }

    #[test]
    fn buffer_rejects_other_flavor() {
        let shared = tiny_shared();
        let pair: PolicyPair<f64> = PolicyPair::new(&shared, 8, 0);
        let ep = rollout(&shared, &pair.tree, &pair.flow, ActMode::Sample, 1, Some(Flavor::Fts), 0.99).unwrap();
        let mut ws_buffer = TrajectoryBuffer::<f64>::new(Flavor::Ws);
        assert_eq!(
            ws_buffer.push_fts(ep.fts[0].clone()).unwrap_err(),
            TrainError::FlavorMismatch {
                buffer: Flavor::Ws,
                requested: Flavor::Fts
            }
        );
        assert!(ws_buffer.fts().is_err());
        assert!(ep.ws.is_empty());
    }

    #[test]
    fn returns_are_discounted_sums() {
        let shared = tiny_shared();
        let pair: PolicyPair<f64> = PolicyPair::new(&shared, 8, 0);
        let ep = rollout(&shared, &pair.tree, &pair.flow, ActMode::Sample, 3, Some(Flavor::Fts), 0.9).unwrap();
        let expect = ep.fts.iter().rev().fold(0.0, |acc, t| t.reward + 0.9 * acc);
        assert!((ep.fts[0].ret - expect).abs() < 1e-12);
        let total: f64 = ep.fts.iter().map(|t| t.reward).sum();
        assert!((total - ep.fts_return).abs() < 1e-12);
    }

    #[test]
    fn ws_returns_discount_by_round() {
        let shared = tiny_shared();
        let pair: PolicyPair<f64> = PolicyPair::new(&shared, 8, 0);
        let ep = rollout(&shared, &pair.tree, &pair.flow, ActMode::Sample, 5, Some(Flavor::Ws), 0.5).unwrap();
        if ep.done {
            let picks = ep.ws.iter().filter(|t| t.action != WsAction::Terminate).count();
            assert_eq!(picks, 4);
            let last = ep.ws.last().unwrap();
            assert_eq!(last.ret, last.reward);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let shared = tiny_shared();
        let cfg = TrainConfig { learning_rate: 0.0, ..small_config() };
        let mut trainer: Trainer<f64> = Trainer::new(shared, cfg).unwrap();
        let before = trainer.policies.clone();
        trainer.train(|_| {}, |_| {}).unwrap();
        assert_eq!(trainer.policies, before);
    }

    #[test]
    fn frozen_policy_is_untouched() {
        let shared = tiny_shared();
        let cfg = TrainConfig { learning_rate: 1e-2, ..small_config() };
        let mut pair: PolicyPair<f64> = PolicyPair::new(&shared, 8, 0);
        let mut opt = Adam::new(pair.tree.num_params(), cfg.learning_rate);
        let flow = pair.flow.fingerprint();
        let tree = pair.tree.fingerprint();
        train_phase(Flavor::Fts, &mut pair, &mut opt, &shared, &cfg, 1).unwrap();
        assert_eq!(pair.flow.fingerprint(), flow);
        assert_ne!(pair.tree.fingerprint(), tree);
    }

    #[test]
    fn checkpoint_round_trip() {
        let shared = tiny_shared();
        let mut trainer: Trainer<f64> = Trainer::new(Arc::clone(&shared), small_config()).unwrap();
        trainer.train(|_| {}, |_| {}).unwrap();
        let ck = trainer.checkpoint("bcube:2,0", Granularity::Hop);
        let json = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ck);
        let restored = Trainer::from_checkpoint(shared, back).unwrap();
        assert_eq!(restored.policies, trainer.policies);
        assert!(restored.is_finished());
        let wrong: Result<Checkpoint<f32>, _> = serde_json::from_str(&json);
        if let Ok(w) = wrong {
            assert!(w.check(trainer.shared()).is_err());
        }
    }

    #[test]
    fn training_is_reproducible() {
        let run = || {
            let mut t: Trainer<f64> = Trainer::new(tiny_shared(), small_config()).unwrap();
            t.train(|_| {}, |_| {}).unwrap();
            (t.policies, t.log)
        };
        assert_eq!(run(), run());
    }
}
