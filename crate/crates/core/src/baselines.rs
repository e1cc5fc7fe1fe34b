//! Parameter Server, Ring AllReduce and random-greedy schedulers.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sim::{Metrics, RoundRecord, SimConfig, SimState};
use crate::topology::TopologyGraph;
use crate::workload::{
    build_ring, build_trees, Granularity, RingSync, WorkloadError, WorkloadId, WorkloadSet,
};

/// Picks the workloads to send in the next round.
///
/// Implementations must return Ready, pairwise conflict-free workloads and
/// at least one workload whenever any is ready.
pub trait Scheduler {
    fn name(&self) -> &str;
    fn next_round(&mut self, state: &SimState, rng: &mut ChaCha8Rng) -> Vec<WorkloadId>;
}

/// Seed-shuffled greedy maximal selection.
#[derive(Debug, Default, Clone, Copy)]
pub struct GreedyScheduler;

impl Scheduler for GreedyScheduler {
    fn name(&self) -> &str {
        "greedy"
    }

    fn next_round(&mut self, state: &SimState, rng: &mut ChaCha8Rng) -> Vec<WorkloadId> {
        let mut order: Vec<WorkloadId> = state.ready_workloads().iter().copied().collect();
        order.shuffle(rng);
        greedy_fill(state.workloads(), order)
    }
}

/// Adds workloads in the given order while they fit.
pub fn greedy_fill(
    set: &WorkloadSet,
    order: impl IntoIterator<Item = WorkloadId>,
) -> Vec<WorkloadId> {
    let mut busy = vec![false; set.num_dir_links()];
    let mut chosen = Vec::new();
    for id in order {
        let hops = &set.get(id).hops;
        if hops.iter().all(|h| !busy[h.index()]) {
            for h in hops {
                busy[h.index()] = true;
            }
            chosen.push(id);
        }
    }
    chosen
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: Metrics,
    pub log: Vec<RoundRecord>,
}

/// Drives a scheduler until every workload is done.
pub fn run_scheduler(
    set: Arc<WorkloadSet>,
    scheduler: &mut dyn Scheduler,
    config: &SimConfig,
    seed: u64,
) -> RunResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = SimState::reset(set);
    while !state.is_done() {
        let picked = scheduler.next_round(&state, &mut rng);
        assert!(
            !picked.is_empty() || state.ready_workloads().is_empty(),
            "scheduler {} stalled with ready workloads",
            scheduler.name()
        );
        state
            .send_round(&picked)
            .unwrap_or_else(|e| panic!("scheduler {} produced an invalid round: {e}", scheduler.name()));
    }
    RunResult {
        metrics: state.collect_metrics(config),
        log: state.log().to_vec(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ps,
    Ring,
    Greedy,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ps => "ps",
            Method::Ring => "ring",
            Method::Greedy => "greedy",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ps" => Ok(Method::Ps),
            "ring" => Ok(Method::Ring),
            "greedy" => Ok(Method::Greedy),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

/// How each baseline maps its transfers onto workloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineSettings {
    /// Unit size for the merged trees used by the greedy scheduler.
    pub tree_granularity: Granularity,
    /// Unit size for Parameter Server transfers.
    pub ps_granularity: Granularity,
    /// Unit size for ring neighbor transfers.
    pub ring_granularity: Granularity,
    pub ring_sync: RingSync,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        BaselineSettings {
            tree_granularity: Granularity::Segment,
            ps_granularity: Granularity::Segment,
            ring_granularity: Granularity::Segment,
            ring_sync: RingSync::Barrier,
        }
    }
}

impl BaselineSettings {
    /// Workload set a method runs on.
    pub fn workloads(&self, method: Method, g: &TopologyGraph) -> Result<WorkloadSet, WorkloadError> {
        match method {
            // Aggregation only at the destination: unmerged per-root chains.
            Method::Ps => build_trees(g, self.ps_granularity, false),
            Method::Ring => build_ring(g, self.ring_granularity, self.ring_sync),
            Method::Greedy => build_trees(g, self.tree_granularity, true),
        }
    }
}

/// Runs one method on one topology for one seed.
pub fn run_method(
    method: Method,
    g: &TopologyGraph,
    settings: &BaselineSettings,
    seed: u64,
) -> Result<RunResult, WorkloadError> {
    let set = Arc::new(settings.workloads(method, g)?);
    let config = SimConfig::for_topology(g.num_servers(), g.num_links());
    Ok(run_scheduler(set, &mut GreedyScheduler, &config, seed))
}

pub fn ps_schedule(g: &TopologyGraph, seed: u64) -> Result<Metrics, WorkloadError> {
    Ok(run_method(Method::Ps, g, &BaselineSettings::default(), seed)?.metrics)
}

pub fn ring_schedule(g: &TopologyGraph, seed: u64) -> Result<Metrics, WorkloadError> {
    Ok(run_method(Method::Ring, g, &BaselineSettings::default(), seed)?.metrics)
}

pub fn greedy_schedule(g: &TopologyGraph, seed: u64) -> Result<Metrics, WorkloadError> {
    Ok(run_method(Method::Greedy, g, &BaselineSettings::default(), seed)?.metrics)
}

/// Mean and population standard deviation of round counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub mean: f64,
    pub std: f64,
    pub rounds: Vec<usize>,
}

impl RoundSummary {
    pub fn from_rounds(rounds: Vec<usize>) -> Self {
        let n = rounds.len().max(1) as f64;
        let mean = rounds.iter().sum::<usize>() as f64 / n;
        let var = rounds
            .iter()
            .map(|r| (*r as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        RoundSummary {
            mean,
            std: var.sqrt(),
            rounds,
        }
    }
}

/// Runs seeds `0..seeds` and summarizes the round counts.
pub fn average_over_seeds(
    method: Method,
    g: &TopologyGraph,
    settings: &BaselineSettings,
    seeds: u64,
) -> Result<RoundSummary, WorkloadError> {
    let set = Arc::new(settings.workloads(method, g)?);
    let config = SimConfig::for_topology(g.num_servers(), g.num_links());
    let rounds = (0..seeds)
        .map(|s| run_scheduler(Arc::clone(&set), &mut GreedyScheduler, &config, s).metrics.total_rounds)
        .collect();
    Ok(RoundSummary::from_rounds(rounds))
}
