//! Actor-critic networks for the two decision levels.

use std::hash::{Hash, Hasher};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{FtsAction, FtsObservation, WsAction, WsObservation, ROW_FEATURES, WS_GLOBAL_FEATURES};
use crate::nn::Mlp;
use crate::scalar::{log_sigmoid, log_sum_exp, sigmoid, Scalar};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("observation has {got} features, expected {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("every candidate is masked")]
    AllMasked,
    #[error("action is not valid for this observation")]
    InvalidAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActMode {
    Sample,
    Greedy,
}

/// Per-sample loss sensitivities returned by the callback of
/// [`Policy::accumulate`]: the loss gradient is
/// `logp * d(logp) + entropy * d(entropy) + value * d(value)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<S> {
    pub logp: S,
    pub entropy: S,
    pub value: S,
}

/// What the network computed for one stored transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation<S> {
    pub logp: S,
    pub entropy: S,
    pub value: S,
}

pub trait Policy<S: Scalar>: Clone + Send + Sync {
    type Obs: Clone + Send + Sync;
    type Action: Clone + Send + Sync;

    fn act(&self, obs: &Self::Obs, rng: &mut impl Rng, mode: ActMode) -> Result<(Self::Action, S), PolicyError>;
    fn value(&self, obs: &Self::Obs) -> Result<S, PolicyError>;
    fn evaluate(&self, obs: &Self::Obs, action: &Self::Action) -> Result<Evaluation<S>, PolicyError>;

    /// Evaluates a transition, asks `weights` for the loss sensitivities
    /// and adds the resulting parameter gradient to `grads`.
    fn accumulate(
        &self,
        obs: &Self::Obs,
        action: &Self::Action,
        weights: impl FnOnce(&Evaluation<S>) -> LossWeights<S>,
        grads: &mut Self,
    ) -> Result<Evaluation<S>, PolicyError>;

    fn zeros_like(&self) -> Self;
    fn params(&self) -> impl Iterator<Item = &S>;
    fn params_mut(&mut self) -> impl Iterator<Item = &mut S>;

    fn num_params(&self) -> usize {
        self.params().count()
    }

    fn sq_norm(&self) -> S {
        self.params().map(|p| *p * *p).sum()
    }

    fn scale(&mut self, factor: S) {
        self.params_mut().for_each(|p| *p = *p * factor);
    }

    /// Hash of the exact parameter bits.
    fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for p in self.params() {
            p.to_f64_lossy().to_bits().hash(&mut h);
        }
        h.finish()
    }
}

fn check_dim(got: usize, expected: usize) -> Result<(), PolicyError> {
    if got == expected {
        Ok(())
    } else {
        Err(PolicyError::Dimension { got, expected })
    }
}

/// Tree selector: one independent Bernoulli per tree, plus a critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct FtsPolicyNet<S> {
    pub actor: Mlp<S>,
    pub critic: Mlp<S>,
}

impl<S: Scalar> FtsPolicyNet<S> {
    pub fn new(obs_dim: usize, num_trees: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        FtsPolicyNet {
            actor: Mlp::new(&[obs_dim, hidden, hidden, num_trees], 0.01, rng),
            critic: Mlp::new(&[obs_dim, hidden, hidden, 1], 1.0, rng),
        }
    }

    pub fn num_trees(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn logits(&self, obs: &FtsObservation<S>) -> Result<Vec<S>, PolicyError> {
        check_dim(obs.features.len(), self.actor.input_dim())?;
        Ok(self.actor.forward(&obs.features))
    }

    /// Selection probability of each tree.
    pub fn probabilities(&self, obs: &FtsObservation<S>) -> Result<Vec<S>, PolicyError> {
        Ok(self.logits(obs)?.into_iter().map(sigmoid).collect())
    }
}

fn bernoulli_logp<S: Scalar>(logits: &[S], action: &[bool]) -> S {
    logits
        .iter()
        .zip(action)
        .map(|(z, a)| if *a { log_sigmoid(*z) } else { log_sigmoid(-*z) })
        .sum()
}

fn bernoulli_entropy<S: Scalar>(logits: &[S]) -> S {
    // softplus(z) - z * sigmoid(z)
    logits.iter().map(|z| -log_sigmoid(-*z) - *z * sigmoid(*z)).sum()
}

impl<S: Scalar> Policy<S> for FtsPolicyNet<S> {
    type Obs = FtsObservation<S>;
    type Action = FtsAction;

    fn act(&self, obs: &Self::Obs, rng: &mut impl Rng, mode: ActMode) -> Result<(FtsAction, S), PolicyError> {
        let logits = self.logits(obs)?;
        let action: Vec<bool> = match mode {
            ActMode::Greedy => logits.iter().map(|z| *z > S::zero()).collect(),
            ActMode::Sample => logits
                .iter()
                .map(|z| rng.gen::<f64>() < sigmoid(*z).to_f64_lossy())
                .collect(),
        };
        let logp = bernoulli_logp(&logits, &action);
        Ok((FtsAction(action), logp))
    }

    fn value(&self, obs: &Self::Obs) -> Result<S, PolicyError> {
        check_dim(obs.features.len(), self.critic.input_dim())?;
        Ok(self.critic.forward(&obs.features)[0])
    }

    fn evaluate(&self, obs: &Self::Obs, action: &FtsAction) -> Result<Evaluation<S>, PolicyError> {
        let logits = self.logits(obs)?;
        if action.0.len() != logits.len() {
            return Err(PolicyError::InvalidAction);
        }
        Ok(Evaluation {
            logp: bernoulli_logp(&logits, &action.0),
            entropy: bernoulli_entropy(&logits),
            value: self.value(obs)?,
        })
    }

    fn accumulate(
        &self,
        obs: &Self::Obs,
        action: &FtsAction,
        weights: impl FnOnce(&Evaluation<S>) -> LossWeights<S>,
        grads: &mut Self,
    ) -> Result<Evaluation<S>, PolicyError> {
        check_dim(obs.features.len(), self.actor.input_dim())?;
        if action.0.len() != self.num_trees() {
            return Err(PolicyError::InvalidAction);
        }
        let actor = self.actor.forward_trace(&obs.features);
        let critic = self.critic.forward_trace(&obs.features);
        let logits = actor.output();
        let eval = Evaluation {
            logp: bernoulli_logp(logits, &action.0),
            entropy: bernoulli_entropy(logits),
            value: critic.output()[0],
        };
        let w = weights(&eval);
        let d_logits: Vec<S> = logits
            .iter()
            .zip(&action.0)
            .map(|(z, a)| {
                let p = sigmoid(*z);
                let a = if *a { S::one() } else { S::zero() };
                w.logp * (a - p) - w.entropy * *z * p * (S::one() - p)
            })
            .collect();
        self.actor.backward(&actor, &d_logits, &mut grads.actor);
        self.critic.backward(&critic, &[w.value], &mut grads.critic);
        Ok(eval)
    }

    fn zeros_like(&self) -> Self {
        FtsPolicyNet {
            actor: self.actor.zeros_like(),
            critic: self.critic.zeros_like(),
        }
    }

    fn params(&self) -> impl Iterator<Item = &S> {
        self.actor.params().chain(self.critic.params())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut S> {
        self.actor.params_mut().chain(self.critic.params_mut())
    }
}

/// Workload selector: a shared scorer applied to every candidate row,
/// a learned TERMINATE logit and a critic over pooled rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct WsPolicyNet<S> {
    pub scorer: Mlp<S>,
    pub terminate: S,
    pub critic: Mlp<S>,
}

pub const WS_SCORER_INPUT: usize = ROW_FEATURES + WS_GLOBAL_FEATURES;
pub const WS_CRITIC_INPUT: usize = 2 * ROW_FEATURES + WS_GLOBAL_FEATURES;

impl<S: Scalar> WsPolicyNet<S> {
    pub fn new(hidden: usize, rng: &mut impl Rng) -> Self {
        WsPolicyNet {
            scorer: Mlp::new(&[WS_SCORER_INPUT, hidden, hidden, 1], 0.01, rng),
            terminate: S::of(-3.0),
            critic: Mlp::new(&[WS_CRITIC_INPUT, hidden, hidden, 1], 1.0, rng),
        }
    }

    fn check(obs: &WsObservation<S>) -> Result<Vec<usize>, PolicyError> {
        check_dim(obs.rows.len(), obs.mask.len() * ROW_FEATURES)?;
        check_dim(obs.global.len(), WS_GLOBAL_FEATURES)?;
        let live: Vec<usize> = (0..obs.mask.len()).filter(|i| obs.mask[*i]).collect();
        if live.is_empty() {
            return Err(PolicyError::AllMasked);
        }
        Ok(live)
    }

    fn scorer_input(obs: &WsObservation<S>, i: usize) -> Vec<S> {
        let mut x = Vec::with_capacity(WS_SCORER_INPUT);
        x.extend_from_slice(obs.row(i));
        x.extend_from_slice(&obs.global);
        x
    }

    fn critic_input(obs: &WsObservation<S>, live: &[usize]) -> Vec<S> {
        let mut mean = vec![S::zero(); ROW_FEATURES];
        let mut max = vec![S::neg_infinity(); ROW_FEATURES];
        for &i in live {
            for (k, v) in obs.row(i).iter().enumerate() {
                mean[k] = mean[k] + *v;
                max[k] = max[k].max(*v);
            }
        }
        let n = S::of_usize(live.len());
        let mut x = obs.global.clone();
        x.extend(mean.into_iter().map(|m| m / n));
        x.extend(max);
        x
    }

    /// Logits of the unmasked rows in order, followed by TERMINATE.
    pub fn logits(&self, obs: &WsObservation<S>) -> Result<(Vec<usize>, Vec<S>), PolicyError> {
        let live = Self::check(obs)?;
        let mut logits: Vec<S> = live
            .iter()
            .map(|&i| self.scorer.forward(&Self::scorer_input(obs, i))[0])
            .collect();
        logits.push(self.terminate);
        Ok((live, logits))
    }

    /// Probability of every row (zero when masked) and of TERMINATE last.
    pub fn probabilities(&self, obs: &WsObservation<S>) -> Result<Vec<S>, PolicyError> {
        let (live, logits) = self.logits(obs)?;
        let lse = log_sum_exp(logits.iter().copied());
        let mut probs = vec![S::zero(); obs.mask.len() + 1];
        for (slot, z) in live.iter().chain(std::iter::once(&obs.mask.len())).zip(&logits) {
            probs[*slot] = (*z - lse).exp();
        }
        Ok(probs)
    }
}

fn action_slot(live: &[usize], action: &WsAction) -> Result<usize, PolicyError> {
    match action {
        WsAction::Terminate => Ok(live.len()),
        WsAction::Pick(i) => live.binary_search(i).map_err(|_| PolicyError::InvalidAction),
    }
}

fn categorical_entropy<S: Scalar>(log_probs: &[S]) -> S {
    -log_probs.iter().map(|lp| lp.exp() * *lp).sum::<S>()
}

impl<S: Scalar> Policy<S> for WsPolicyNet<S> {
    type Obs = WsObservation<S>;
    type Action = WsAction;

    fn act(&self, obs: &Self::Obs, rng: &mut impl Rng, mode: ActMode) -> Result<(WsAction, S), PolicyError> {
        let (live, logits) = self.logits(obs)?;
        let lse = log_sum_exp(logits.iter().copied());
        let slot = match mode {
            ActMode::Greedy => {
                let mut best = 0;
                for (k, z) in logits.iter().enumerate() {
                    if *z > logits[best] {
                        best = k;
                    }
                }
                best
            }
            ActMode::Sample => {
                let u = rng.gen::<f64>();
                let mut acc = 0.0;
                let mut chosen = logits.len() - 1;
                for (k, z) in logits.iter().enumerate() {
                    acc += (*z - lse).exp().to_f64_lossy();
                    if u < acc {
                        chosen = k;
                        break;
                    }
                }
                chosen
            }
        };
        let action = if slot == live.len() {
            WsAction::Terminate
        } else {
            WsAction::Pick(live[slot])
        };
        Ok((action, logits[slot] - lse))
    }

    fn value(&self, obs: &Self::Obs) -> Result<S, PolicyError> {
        let live = Self::check(obs)?;
        Ok(self.critic.forward(&Self::critic_input(obs, &live))[0])
    }

    fn evaluate(&self, obs: &Self::Obs, action: &WsAction) -> Result<Evaluation<S>, PolicyError> {
        let (live, logits) = self.logits(obs)?;
        let slot = action_slot(&live, action)?;
        let lse = log_sum_exp(logits.iter().copied());
        let log_probs: Vec<S> = logits.iter().map(|z| *z - lse).collect();
        Ok(Evaluation {
            logp: log_probs[slot],
            entropy: categorical_entropy(&log_probs),
            value: self.critic.forward(&Self::critic_input(obs, &live))[0],
        })
    }

    fn accumulate(
        &self,
        obs: &Self::Obs,
        action: &WsAction,
        weights: impl FnOnce(&Evaluation<S>) -> LossWeights<S>,
        grads: &mut Self,
    ) -> Result<Evaluation<S>, PolicyError> {
        let live = Self::check(obs)?;
        let slot = action_slot(&live, action)?;
        let traces: Vec<_> = live
            .iter()
            .map(|&i| self.scorer.forward_trace(&Self::scorer_input(obs, i)))
            .collect();
        let critic = self.critic.forward_trace(&Self::critic_input(obs, &live));
        let mut logits: Vec<S> = traces.iter().map(|t| t.output()[0]).collect();
        logits.push(self.terminate);
        let lse = log_sum_exp(logits.iter().copied());
        let log_probs: Vec<S> = logits.iter().map(|z| *z - lse).collect();
        let entropy = categorical_entropy(&log_probs);
        let eval = Evaluation {
            logp: log_probs[slot],
            entropy,
            value: critic.output()[0],
        };
        let w = weights(&eval);
        let d_logit = |k: usize| {
            let p = log_probs[k].exp();
            let onehot = if k == slot { S::one() } else { S::zero() };
            w.logp * (onehot - p) - w.entropy * p * (log_probs[k] + entropy)
        };
        for (k, trace) in traces.iter().enumerate() {
            self.scorer.backward(trace, &[d_logit(k)], &mut grads.scorer);
        }
        grads.terminate = grads.terminate + d_logit(live.len());
        self.critic.backward(&critic, &[w.value], &mut grads.critic);
        Ok(eval)
    }

    fn zeros_like(&self) -> Self {
        WsPolicyNet {
            scorer: self.scorer.zeros_like(),
            terminate: S::zero(),
            critic: self.critic.zeros_like(),
        }
    }

    fn params(&self) -> impl Iterator<Item = &S> {
        self.scorer
            .params()
            .chain(std::iter::once(&self.terminate))
            .chain(self.critic.params())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut S> {
        self.scorer
            .params_mut()
            .chain(std::iter::once(&mut self.terminate))
            .chain(self.critic.params_mut())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ws_obs(n: usize, rng: &mut ChaCha8Rng) -> WsObservation<f64> {
        WsObservation {
            rows: (0..n * ROW_FEATURES).map(|_| rng.gen()).collect(),
            mask: (0..n).map(|i| i % 3 != 1).collect(),
            occupancy: vec![false; 4],
            global: (0..WS_GLOBAL_FEATURES).map(|_| rng.gen()).collect(),
        }
    }

    /// Relative error of an analytic gradient against central differences
    /// of `f`, over every parameter.
    fn grad_error<P: Policy<f64>>(policy: &P, analytic: &P, f: impl Fn(&P) -> f64) -> f64 {
        let h = 1e-6;
        let n = policy.num_params();
        let mut worst: f64 = 0.0;
        let grads: Vec<f64> = analytic.params().copied().collect();
        for k in 0..n {
            let mut plus = policy.clone();
            *plus.params_mut().nth(k).unwrap() += h;
            let mut minus = policy.clone();
            *minus.params_mut().nth(k).unwrap() -= h;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
            let err = (numeric - grads[k]).abs() / numeric.abs().max(grads[k].abs()).max(1e-3);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn fts_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let policy: FtsPolicyNet<f64> = FtsPolicyNet::new(6, 3, 5, &mut rng);
        let obs = FtsObservation {
            features: (0..6).map(|_| rng.gen()).collect(),
        };
        let action = FtsAction(vec![true, false, true]);
        let (a, b, c) = (0.7, -0.3, 0.4);
        let mut grads = policy.zeros_like();
        policy
            .accumulate(&obs, &action, |_| LossWeights { logp: a, entropy: b, value: c }, &mut grads)
            .unwrap();
        let err = grad_error(&policy, &grads, |p| {
            let e = p.evaluate(&obs, &action).unwrap();
            a * e.logp + b * e.entropy + c * e.value
        });
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn ws_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let policy: WsPolicyNet<f64> = WsPolicyNet::new(6, &mut rng);
        let obs = ws_obs(5, &mut rng);
        for action in [WsAction::Pick(3), WsAction::Terminate] {
            let (a, b, c) = (-0.9, 0.25, 1.3);
            let mut grads = policy.zeros_like();
            policy
                .accumulate(&obs, &action, |_| LossWeights { logp: a, entropy: b, value: c }, &mut grads)
                .unwrap();
            let err = grad_error(&policy, &grads, |p| {
                let e = p.evaluate(&obs, &action).unwrap();
                a * e.logp + b * e.entropy + c * e.value
            });
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn bernoulli_sampling_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut policy: FtsPolicyNet<f64> = FtsPolicyNet::new(4, 2, 8, &mut rng);
        let last = policy.actor.layers.last_mut().unwrap();
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        last.bias = vec![1.0, -2.0];
        let obs = FtsObservation { features: vec![0.5; 4] };
        let n = 20_000;
        let mut hits = [0usize; 2];
        for _ in 0..n {
            let (a, _) = policy.act(&obs, &mut rng, ActMode::Sample).unwrap();
            for t in 0..2 {
                hits[t] += a.0[t] as usize;
            }
        }
        let p = policy.probabilities(&obs).unwrap();
        for t in 0..2 {
            let freq = hits[t] as f64 / n as f64;
            let se = (p[t] * (1.0 - p[t]) / n as f64).sqrt();
            assert!((freq - p[t]).abs() < 4.0 * se, "tree {t}: {freq} vs {}", p[t]);
        }
        let (greedy, _) = policy.act(&obs, &mut rng, ActMode::Greedy).unwrap();
        assert_eq!(greedy.0, vec![true, false]);
    }

    #[test]
    fn masked_rows_are_never_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let policy: WsPolicyNet<f64> = WsPolicyNet::new(8, &mut rng);
        let obs = ws_obs(7, &mut rng);
        for _ in 0..2000 {
            let (a, logp) = policy.act(&obs, &mut rng, ActMode::Sample).unwrap();
            if let WsAction::Pick(i) = a {
                assert!(obs.mask[i]);
            }
            assert!((policy.evaluate(&obs, &a).unwrap().logp - logp).abs() < 1e-12);
        }
        let probs = policy.probabilities(&obs).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(obs.mask.iter().zip(&probs).all(|(m, p)| *m || *p == 0.0));
    }

    #[test]
    fn all_masked_and_bad_dimensions_are_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ws: WsPolicyNet<f64> = WsPolicyNet::new(4, &mut rng);
        let mut obs = ws_obs(3, &mut rng);
        obs.mask = vec![false; 3];
        assert_eq!(ws.act(&obs, &mut rng, ActMode::Greedy).unwrap_err(), PolicyError::AllMasked);
        let fts: FtsPolicyNet<f64> = FtsPolicyNet::new(4, 2, 4, &mut rng);
        let bad = FtsObservation { features: vec![0.0; 5] };
        assert_eq!(
            fts.value(&bad).unwrap_err(),
            PolicyError::Dimension { got: 5, expected: 4 }
        );
        let ok = FtsObservation { features: vec![0.0; 4] };
        assert_eq!(
            fts.evaluate(&ok, &FtsAction(vec![true])).unwrap_err(),
            PolicyError::InvalidAction
        );
    }

    #[test]
    fn scores_are_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let policy: WsPolicyNet<f64> = WsPolicyNet::new(8, &mut rng);
        let mut obs = ws_obs(4, &mut rng);
        obs.mask = vec![true; 4];
        let perm = [2usize, 0, 3, 1];
        let mut shuffled = obs.clone();
        for (new, &old) in perm.iter().enumerate() {
            shuffled.rows[new * ROW_FEATURES..(new + 1) * ROW_FEATURES].copy_from_slice(obs.row(old));
        }
        let p = policy.probabilities(&obs).unwrap();
        let q = policy.probabilities(&shuffled).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            assert!((p[old] - q[new]).abs() < 1e-12);
        }
        assert!((p[4] - q[4]).abs() < 1e-12);
        assert!((policy.value(&obs).unwrap() - policy.value(&shuffled).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn fingerprint_tracks_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut policy: WsPolicyNet<f32> = WsPolicyNet::new(4, &mut rng);
        let before = policy.fingerprint();
        assert_eq!(before, policy.clone().fingerprint());
        policy.terminate += 1.0;
        assert_ne!(before, policy.fingerprint());
    }
}
