//! The two-level scheduling environments.
//!
//! The upper, per-round environment ([`FtsEnv`]) takes a multi-hot choice of
//! trees. The Ready workloads of those trees form a pool, and a lower,
//! per-step environment ([`WsRound`]) picks workloads from that pool one
//! at a time until it terminates or nothing non-conflicting is left. The
//! picked set is then sent as one simulator round.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{run_scheduler, GreedyScheduler};
use crate::scalar::Scalar;
use crate::sim::{SimConfig, SimState};
use crate::workload::{WorkloadId, WorkloadSet};

/// Features per candidate row of a [`WsObservation`].
pub const ROW_FEATURES: usize = 9;
/// Round-level features of a [`WsObservation`].
pub const WS_GLOBAL_FEATURES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvError {
    #[error("candidate {0} is masked or out of range")]
    IllegalAction(usize),
    #[error("the round is already closed")]
    RoundClosed,
    #[error("action has {got} entries, expected {expected}")]
    ActionLength { got: usize, expected: usize },
    #[error("the episode is over")]
    EpisodeOver,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Weight of the trees-selected term in the dense reward.
    pub tree_coef: f64,
    /// Stage reward on completion.
    pub done_bonus: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            tree_coef: 0.1,
            done_bonus: 10.0,
        }
    }
}

/// Upper-level reward with the default coefficients.
pub fn fts_reward<S: Scalar>(
    sent: usize,
    total: usize,
    trees_selected: usize,
    total_trees: usize,
    done: bool,
) -> S {
    fts_reward_with(&RewardConfig::default(), sent, total, trees_selected, total_trees, done)
}

/// `sent/total + c * selected/trees`, plus `done_bonus` on completion or
/// `-trees/total` otherwise.
pub fn fts_reward_with<S: Scalar>(
    cfg: &RewardConfig,
    sent: usize,
    total: usize,
    trees_selected: usize,
    total_trees: usize,
    done: bool,
) -> S {
    fts_dense_reward::<S>(cfg, sent, total, trees_selected, total_trees)
        + fts_stage_reward(cfg, total, total_trees, done)
}

pub fn fts_dense_reward<S: Scalar>(
    cfg: &RewardConfig,
    sent: usize,
    total: usize,
    trees_selected: usize,
    total_trees: usize,
) -> S {
    S::of_usize(sent) / S::of_usize(total)
        + S::of(cfg.tree_coef) * S::of_usize(trees_selected) / S::of_usize(total_trees)
}

pub fn fts_stage_reward<S: Scalar>(cfg: &RewardConfig, total: usize, total_trees: usize, done: bool) -> S {
    if done {
        S::of(cfg.done_bonus)
    } else {
        -(S::of_usize(total_trees) / S::of_usize(total))
    }
}

/// Reward for one workload picked in a round.
pub fn ws_reward<S: Scalar>(total: usize) -> S {
    S::one() / S::of_usize(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub rewards: RewardConfig,
    /// Episodes are truncated after `cap_factor` times the greedy
    /// scheduler's round count.
    pub cap_factor: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            rewards: RewardConfig::default(),
            cap_factor: 4,
        }
    }
}

/// Immutable per-topology data shared by every environment instance.
#[derive(Debug)]
pub struct EnvShared {
    pub set: Arc<WorkloadSet>,
    heights: Vec<usize>,
    max_height: usize,
    max_hops: usize,
    pub greedy_rounds: usize,
    pub round_cap: usize,
    pub config: EnvConfig,
}

impl EnvShared {
    pub fn new(set: Arc<WorkloadSet>, config: EnvConfig) -> Arc<Self> {
        let heights = set.chain_heights();
        let max_height = heights.iter().copied().max().unwrap_or(1).max(1);
        let max_hops = set
            .workloads()
            .iter()
            .map(|w| w.hops.len())
            .max()
            .unwrap_or(1)
            .max(1);
        let sim_config = SimConfig::for_topology(1, set.num_dir_links() / 2);
        let greedy_rounds =
            run_scheduler(Arc::clone(&set), &mut GreedyScheduler, &sim_config, 0).metrics.total_rounds;
        Arc::new(EnvShared {
            set,
            heights,
            max_height,
            max_hops,
            greedy_rounds,
            round_cap: (config.cap_factor * greedy_rounds).max(1),
            config,
        })
    }

    pub fn num_trees(&self) -> usize {
        self.set.trees().len()
    }

    pub fn total(&self) -> usize {
        self.set.len()
    }

    /// Length of an upper-level observation vector.
    pub fn fts_obs_dim(&self) -> usize {
        4 * self.num_trees() + self.set.num_dir_links() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FtsAction(pub Vec<bool>);

impl FtsAction {
    pub fn all(trees: usize) -> Self {
        FtsAction(vec![true; trees])
    }

    pub fn none(trees: usize) -> Self {
        FtsAction(vec![false; trees])
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }
}

/// Flattened upper-level observation, all components in `[0, 1]`:
/// per-tree remaining fraction, done flag and ready fraction; per directed
/// link Ready demand normalized by its maximum; the last action; overall
/// progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct FtsObservation<S> {
    pub features: Vec<S>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepInfo {
    pub round: usize,
    pub n_on: usize,
    pub committed: Vec<WorkloadId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct FtsStep<S> {
    pub obs: FtsObservation<S>,
    pub reward: S,
    /// Every workload is done.
    pub done: bool,
    /// The round cap was hit first.
    pub truncated: bool,
    pub info: StepInfo,
}

impl<S> FtsStep<S> {
    pub fn episode_over(&self) -> bool {
        self.done || self.truncated
    }
}

/// Upper-level environment: one step per simulator round.
#[derive(Debug, Clone)]
pub struct FtsEnv {
    shared: Arc<EnvShared>,
    state: SimState,
    last_action: FtsAction,
    over: bool,
}

impl FtsEnv {
    pub fn new(shared: Arc<EnvShared>) -> Self {
        let state = SimState::reset(Arc::clone(&shared.set));
        let trees = shared.num_trees();
        FtsEnv {
            shared,
            state,
            last_action: FtsAction::none(trees),
            over: false,
        }
    }

    pub fn shared(&self) -> &Arc<EnvShared> {
        &self.shared
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn reset<S: Scalar>(&mut self) -> FtsObservation<S> {
        self.state = SimState::reset(Arc::clone(&self.shared.set));
        self.last_action = FtsAction::none(self.shared.num_trees());
        self.over = false;
        self.observe()
    }

    pub fn is_over(&self) -> bool {
        self.over
    }

    pub fn observe<S: Scalar>(&self) -> FtsObservation<S> {
        let set = &self.shared.set;
        let trees = set.trees();
        let mut features = Vec::with_capacity(self.shared.fts_obs_dim());
        let mut remaining = vec![0usize; trees.len()];
        let mut ready = vec![0usize; trees.len()];
        let mut pressure = vec![0usize; set.num_dir_links()];
        for w in set.workloads() {
            let t = set.tree_of(w.id);
            match self.state.status(w.id) {
                crate::sim::Status::Done => {}
                crate::sim::Status::Ready => {
                    remaining[t] += 1;
                    ready[t] += 1;
                    for h in &w.hops {
                        pressure[h.index()] += 1;
                    }
                }
                crate::sim::Status::Blocked => remaining[t] += 1,
            }
        }
        let frac = |a: usize, b: usize| if b == 0 { S::zero() } else { S::of_usize(a) / S::of_usize(b) };
        features.extend(trees.iter().zip(&remaining).map(|(t, r)| frac(*r, t.len())));
        features.extend(remaining.iter().map(|r| if *r == 0 { S::one() } else { S::zero() }));
        features.extend(trees.iter().zip(&ready).map(|(t, r)| frac(*r, t.len())));
        let max_pressure = pressure.iter().copied().max().unwrap_or(0);
        features.extend(pressure.iter().map(|p| frac(*p, max_pressure)));
        features.extend(
            self.last_action
                .0
                .iter()
                .map(|b| if *b { S::one() } else { S::zero() }),
        );
        features.push(frac(self.state.done_count(), set.len()));
        FtsObservation { features }
    }

    /// Opens the lower-level round for a tree selection.
    pub fn begin_round<S: Scalar>(&self, action: &FtsAction) -> Result<WsRound<S>, EnvError> {
        if self.over {
            return Err(EnvError::EpisodeOver);
        }
        if action.0.len() != self.shared.num_trees() {
            return Err(EnvError::ActionLength {
                got: action.0.len(),
                expected: self.shared.num_trees(),
            });
        }
        Ok(WsRound::new(Arc::clone(&self.shared), &self.state, action))
    }

    /// Commits the round's picks and advances the simulator.
    pub fn finish_round<S: Scalar>(&mut self, round: WsRound<S>) -> FtsStep<S> {
        let committed = round.selected_ids();
        self.state
            .send_round(&committed)
            .expect("lower-level rounds only pick ready, conflict-free workloads");
        let trees_selected = round.trees_selected;
        self.last_action = round.action;
        let done = self.state.is_done();
        let truncated = !done && self.state.round() >= self.shared.round_cap;
        self.over = done || truncated;
        let cfg = &self.shared.config.rewards;
        let reward = fts_reward_with(
            cfg,
            committed.len(),
            self.shared.total(),
            trees_selected,
            self.shared.num_trees(),
            done,
        );
        FtsStep {
            obs: self.observe(),
            reward,
            done,
            truncated,
            info: StepInfo {
                round: self.state.round() - 1,
                n_on: committed.len(),
                committed,
            },
        }
    }

    /// One upper-level step; `driver` plays the lower level for the round.
    pub fn step<S: Scalar>(
        &mut self,
        action: &FtsAction,
        driver: impl FnOnce(&mut WsRound<S>),
    ) -> Result<FtsStep<S>, EnvError> {
        let mut round = self.begin_round(action)?;
        driver(&mut round);
        Ok(self.finish_round(round))
    }
}

/// Picks the first unmasked candidate until the round closes.
pub fn first_fit_driver<S: Scalar>(round: &mut WsRound<S>) {
    while let Some(i) = round.mask().iter().position(|m| *m) {
        round.step(WsAction::Pick(i)).expect("unmasked pick is legal");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WsAction {
    Pick(usize),
    Terminate,
}

/// Lower-level observation: a fixed candidate table for the round, the
/// currently selectable rows, link occupancy and round-level features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct WsObservation<S> {
    /// Row-major `mask.len() x ROW_FEATURES`.
    pub rows: Vec<S>,
    pub mask: Vec<bool>,
    pub occupancy: Vec<bool>,
    pub global: Vec<S>,
}

impl<S: Scalar> WsObservation<S> {
    pub fn num_rows(&self) -> usize {
        self.mask.len()
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.rows[i * ROW_FEATURES..(i + 1) * ROW_FEATURES]
    }

    pub fn any_selectable(&self) -> bool {
        self.mask.iter().any(|m| *m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct WsStep<S> {
    pub obs: WsObservation<S>,
    pub reward: S,
    pub done: bool,
}

/// One round of the lower-level environment.
#[derive(Debug, Clone)]
pub struct WsRound<S> {
    shared: Arc<EnvShared>,
    action: FtsAction,
    trees_selected: usize,
    candidates: Vec<WorkloadId>,
    // Static part of each row; the conflict-degree column is filled per step.
    base_rows: Vec<S>,
    conflict_graph: Vec<Vec<usize>>,
    mask: Vec<bool>,
    selected: Vec<usize>,
    occupancy: Vec<bool>,
    progress: S,
    closed: bool,
}

impl<S: Scalar> WsRound<S> {
    fn new(shared: Arc<EnvShared>, state: &SimState, action: &FtsAction) -> Self {
        let set = &shared.set;
        let candidates: Vec<WorkloadId> = state
            .ready_workloads()
            .iter()
            .copied()
            .filter(|id| action.0[set.tree_of(*id)])
            .collect();
        let n = candidates.len();

        let mut users: Vec<Vec<usize>> = vec![Vec::new(); set.num_dir_links()];
        for (i, id) in candidates.iter().enumerate() {
            for h in &set.get(*id).hops {
                users[h.index()].push(i);
            }
        }
        let mut conflict_graph = vec![Vec::new(); n];
        for u in &users {
            for &a in u {
                for &b in u {
                    if a != b {
                        conflict_graph[a].push(b);
                    }
                }
            }
        }
        for c in &mut conflict_graph {
            c.sort_unstable();
            c.dedup();
        }

        let trees = set.trees().len().max(1);
        let links = (set.num_dir_links() / 2).max(1);
        let mut base_rows = Vec::with_capacity(n * ROW_FEATURES);
        for id in &candidates {
            let w = set.get(*id);
            let t = set.tree_of(*id);
            let span = &set.trees()[t];
            let unblocks = set
                .dependents(*id)
                .iter()
                .filter(|d| state.pending_prefixes(**d) == 1)
                .count();
            let tree_remaining = span.ids().filter(|x| state.status(*x) != crate::sim::Status::Done).count();
            let first = w.hops[0];
            base_rows.extend([
                S::of_usize(t) / S::of_usize(trees),
                S::of_usize(first.link.index()) / S::of_usize(links),
                if first.dir == crate::topology::Direction::Up { S::one() } else { S::zero() },
                S::of_usize(unblocks.min(8)) / S::of(8.0),
                S::of_usize(shared.heights[id.index()]) / S::of_usize(shared.max_height),
                S::of_usize(w.hops.len()) / S::of_usize(shared.max_hops),
                S::zero(),
                S::of_usize(tree_remaining) / S::of_usize(span.len().max(1)),
                if w.head == w.root { S::one() } else { S::zero() },
            ]);
        }
        let progress = S::of_usize(state.done_count()) / S::of_usize(set.len().max(1));
        let occupancy = vec![false; set.num_dir_links()];
        WsRound {
            trees_selected: action.count(),
            action: action.clone(),
            shared,
            candidates,
            base_rows,
            conflict_graph,
            mask: vec![true; n],
            selected: Vec::new(),
            occupancy,
            progress,
            closed: n == 0,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn candidates(&self) -> &[WorkloadId] {
        &self.candidates
    }

    pub fn selected_ids(&self) -> Vec<WorkloadId> {
        self.selected.iter().map(|i| self.candidates[*i]).collect()
    }

    pub fn observe(&self) -> WsObservation<S> {
        let n = self.candidates.len();
        let mut rows = self.base_rows.clone();
        let denom = S::of_usize(n.saturating_sub(1).max(1));
        for i in 0..n {
            let live = self.conflict_graph[i].iter().filter(|j| self.mask[**j]).count();
            rows[i * ROW_FEATURES + 6] = S::of_usize(live) / denom;
        }
        let unmasked = self.mask.iter().filter(|m| **m).count();
        let size = S::of_usize(n.max(1));
        let used = self.occupancy.iter().filter(|o| **o).count();
        WsObservation {
            rows,
            mask: self.mask.clone(),
            occupancy: self.occupancy.clone(),
            global: vec![
                S::of_usize(self.selected.len()) / size,
                S::of_usize(unmasked) / size,
                self.progress,
                S::of_usize(used) / S::of_usize(self.occupancy.len().max(1)),
            ],
        }
    }

    pub fn step(&mut self, action: WsAction) -> Result<WsStep<S>, EnvError> {
        if self.closed {
            return Err(EnvError::RoundClosed);
        }
        let reward = match action {
            WsAction::Terminate => {
                self.closed = true;
                S::zero()
            }
            WsAction::Pick(i) => {
                if i >= self.mask.len() || !self.mask[i] {
                    return Err(EnvError::IllegalAction(i));
                }
                self.mask[i] = false;
                for &j in &self.conflict_graph[i] {
                    self.mask[j] = false;
                }
                for h in &self.shared.set.get(self.candidates[i]).hops {
                    self.occupancy[h.index()] = true;
                }
                self.selected.push(i);
                if !self.mask.iter().any(|m| *m) {
                    self.closed = true;
                }
                ws_reward(self.shared.total())
            }
        };
        Ok(WsStep {
            obs: self.observe(),
            reward,
            done: self.closed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::conflicts;
    use crate::topology::{build_bcube, build_dcell};
    use crate::workload::{build_all_trees, Granularity};

    fn env_for(set: WorkloadSet) -> FtsEnv {
        FtsEnv::new(EnvShared::new(Arc::new(set), EnvConfig::default()))
    }

    #[test]
    fn reward_examples() {
        let r: f64 = fts_reward(0, 144, 0, 9, false);
        assert_eq!(r, -0.0625);
        let r: f64 = fts_reward(144, 144, 9, 9, true);
        assert!((r - 11.1).abs() < 1e-12);
        let r: f32 = fts_reward(144, 144, 9, 9, true);
        assert!((r - 11.1).abs() < 1e-5);
        assert_eq!(ws_reward::<f64>(380), 1.0 / 380.0);
    }

    #[test]
    fn select_all_on_smallest_bcube() {
        let g = build_bcube(2, 0).unwrap();
        let mut env = env_for(build_all_trees(&g, Granularity::Hop).unwrap());
        let _: FtsObservation<f64> = env.reset();
        let step = env.step::<f64>(&FtsAction::all(2), first_fit_driver).unwrap();
        assert_eq!(step.info.n_on, 2);
        let dense: f64 = fts_dense_reward(&RewardConfig::default(), 2, 4, 2, 2);
        assert!((dense - 0.6).abs() < 1e-12);
        assert!((step.reward - (0.6 - 0.5)).abs() < 1e-12);
        assert!(!step.done);
        let last = env.step::<f64>(&FtsAction::all(2), first_fit_driver).unwrap();
        assert!(last.done);
        assert!((last.reward - (0.6 + 10.0)).abs() < 1e-12);
        assert!(env.step::<f64>(&FtsAction::all(2), first_fit_driver).is_err());
    }

    #[test]
    fn terminate_first_gives_empty_round() {
        let g = build_bcube(2, 0).unwrap();
        let mut env = env_for(build_all_trees(&g, Granularity::Hop).unwrap());
        let step = env
            .step::<f64>(&FtsAction::all(2), |r| {
                let s = r.step(WsAction::Terminate).unwrap();
                assert_eq!(s.reward, 0.0);
                assert!(s.done);
            })
            .unwrap();
        assert_eq!(step.info.n_on, 0);
        assert_eq!(env.state().round(), 1);
    }

    #[test]
    fn masked_pick_is_illegal() {
        let g = build_dcell(4, 1).unwrap();
        let env = env_for(build_all_trees(&g, Granularity::Segment).unwrap());
        let mut round: WsRound<f64> = env.begin_round(&FtsAction::all(20)).unwrap();
        let first = round.step(WsAction::Pick(0)).unwrap();
        assert_eq!(first.reward, 1.0 / 380.0);
        assert!(round.step(WsAction::Pick(0)).is_err());
        assert!(round.step(WsAction::Pick(10_000)).is_err());
    }

    #[test]
    fn picking_until_closed_gives_maximal_set() {
        let g = build_dcell(4, 1).unwrap();
        let env = env_for(build_all_trees(&g, Granularity::Segment).unwrap());
        let set = Arc::clone(&env.shared().set);
        let mut round: WsRound<f64> = env.begin_round(&FtsAction::all(20)).unwrap();
        let mut total = 0.0;
        while let Some(i) = round.mask().iter().rposition(|m| *m) {
            total += round.step(WsAction::Pick(i)).unwrap().reward;
        }
        let picked = round.selected_ids();
        assert!((total - picked.len() as f64 / 380.0).abs() < 1e-12);
        for c in round.candidates() {
            if picked.contains(c) {
                continue;
            }
            assert!(picked.iter().any(|p| conflicts(set.get(*p), set.get(*c))));
        }
    }

    #[test]
    fn empty_pool_closes_round_immediately() {
        let g = build_bcube(2, 0).unwrap();
        let env = env_for(build_all_trees(&g, Granularity::Hop).unwrap());
        let round: WsRound<f64> = env.begin_round(&FtsAction::none(2)).unwrap();
        assert!(round.is_closed());
    }

    #[test]
    fn observation_components_in_unit_interval() {
        let g = build_bcube(3, 1).unwrap();
        let mut env = env_for(build_all_trees(&g, Granularity::Segment).unwrap());
        let obs: FtsObservation<f64> = env.reset();
        assert_eq!(obs.features.len(), env.shared().fts_obs_dim());
        let mut round: WsRound<f64> = env.begin_round(&FtsAction::all(9)).unwrap();
        round.step(WsAction::Pick(3)).unwrap();
        let wobs = round.observe();
        assert!(wobs.rows.iter().chain(&wobs.global).all(|x| (0.0..=1.0).contains(x)));
        let step = env.finish_round(round);
        assert!(step.obs.features.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn action_length_checked() {
        let g = build_bcube(2, 0).unwrap();
        let env = env_for(build_all_trees(&g, Granularity::Hop).unwrap());
        assert_eq!(
            env.begin_round::<f64>(&FtsAction::all(3)).unwrap_err(),
            EnvError::ActionLength { got: 3, expected: 2 }
        );
    }

    #[test]
    fn idle_policy_is_truncated() {
        let g = build_bcube(2, 0).unwrap();
        let mut env = env_for(build_all_trees(&g, Granularity::Hop).unwrap());
        let cap = env.shared().round_cap;
        assert_eq!(cap, 8);
        let mut last = None;
        while !env.is_over() {
            last = Some(env.step::<f64>(&FtsAction::none(2), |_| {}).unwrap());
        }
        let last = last.unwrap();
        assert!(last.truncated && !last.done);
        assert_eq!(env.state().round(), cap);
    }
}
