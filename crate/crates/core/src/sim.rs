//! Round-based execution of a workload set.
//!
//! Each round, every directed link carries at most one workload, and a
//! workload may only go out once all of its prefixes are done. A round
//! with an invalid selection is rejected as a whole.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::{Workload, WorkloadId, WorkloadSet};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("workload {0} is not ready")]
    NotReady(u32),
    #[error("workloads {0} and {1} occupy the same directed link")]
    Conflict(u32, u32),
    #[error("workload {0} selected twice")]
    Duplicate(u32),
    #[error("workload {0} does not exist")]
    Unknown(u32),
}

/// Cost-model constants. Rounds last one piece time `T_S = T_F / k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Total gradient size `P`, in abstract units.
    pub gradient_size: f64,
    /// Server count `N`.
    pub servers: usize,
    /// Number of gradient pieces `k`.
    pub pieces: usize,
    /// Time `T_F` to transmit the full gradient.
    pub full_time: f64,
    /// Physical link count `N_phy`.
    pub physical_links: usize,
}

impl SimConfig {
    /// Defaults to one piece per root tree (`k = N`) and `T_F = N`, so a
    /// round lasts one time unit.
    pub fn for_topology(servers: usize, physical_links: usize) -> Self {
        SimConfig {
            gradient_size: servers as f64,
            servers,
            pieces: servers.max(1),
            full_time: servers.max(1) as f64,
            physical_links,
        }
    }

    /// `T_S`.
    pub fn piece_time(&self) -> f64 {
        self.full_time / self.pieces as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Blocked,
    Ready,
    Done,
}

/// One committed round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub selected: Vec<WorkloadId>,
    /// `N_on`: workloads on the wire this round.
    pub n_on: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub total_rounds: usize,
    /// `total_rounds * T_S`.
    pub wall_clock: f64,
    pub total_workloads: usize,
    pub sent_workloads: usize,
    /// Per-round `N_on / N_phy`.
    pub utilization: Vec<f64>,
    /// Per-round `N_on / (2 N_phy)`, the fraction of duplex capacity.
    pub duplex_utilization: Vec<f64>,
    /// Per-round fraction of directed links carrying a workload.
    pub link_occupancy: Vec<f64>,
    pub mean_utilization: f64,
    pub mean_duplex_utilization: f64,
    /// `false` when collected before every workload was done.
    pub complete: bool,
}

/// Lower bounds any schedule must respect: every workload needs one directed
/// link for one round, and prefix chains are sequential.
pub fn round_lower_bound(set: &WorkloadSet) -> usize {
    let capacity = set.num_dir_links().max(1);
    let by_capacity = set.len().div_ceil(capacity);
    by_capacity.max(set.longest_chain())
}

/// True iff `a` and `b` need a common directed link.
pub fn conflicts(a: &Workload, b: &Workload) -> bool {
    a.hops.iter().any(|h| b.hops.contains(h))
}

/// Simulator state for one run. Single owner; clone for independent runs.
#[derive(Debug, Clone)]
pub struct SimState {
    set: Arc<WorkloadSet>,
    round: usize,
    status: Vec<Status>,
    pending_prefixes: Vec<u32>,
    ready: BTreeSet<WorkloadId>,
    done: usize,
    log: Vec<RoundRecord>,
}

impl SimState {
    /// Leaves are ready, everything else blocked.
    pub fn reset(set: Arc<WorkloadSet>) -> Self {
        let pending_prefixes: Vec<u32> = set
            .workloads()
            .iter()
            .map(|w| w.prefixes.len() as u32)
            .collect();
        let status: Vec<Status> = pending_prefixes
            .iter()
            .map(|p| if *p == 0 { Status::Ready } else { Status::Blocked })
            .collect();
        let ready = status
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == Status::Ready)
            .map(|(i, _)| WorkloadId(i as u32))
            .collect();
        SimState {
            set,
            round: 0,
            status,
            pending_prefixes,
            ready,
            done: 0,
            log: Vec::new(),
        }
    }

    pub fn workloads(&self) -> &Arc<WorkloadSet> {
        &self.set
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn status(&self, id: WorkloadId) -> Status {
        self.status[id.index()]
    }

    /// Ready workloads in ascending id order.
    pub fn ready_workloads(&self) -> &BTreeSet<WorkloadId> {
        &self.ready
    }

    pub fn is_ready(&self, id: WorkloadId) -> bool {
        self.status[id.index()] == Status::Ready
    }

    /// Number of not-yet-done prefixes.
    pub fn pending_prefixes(&self, id: WorkloadId) -> usize {
        self.pending_prefixes[id.index()] as usize
    }

    pub fn done_count(&self) -> usize {
        self.done
    }

    pub fn is_done(&self) -> bool {
        self.done == self.set.len()
    }

    pub fn log(&self) -> &[RoundRecord] {
        &self.log
    }

    /// Checks the selection without changing state.
    pub fn validate_round(&self, selected: &[WorkloadId]) -> Result<(), SimError> {
        let mut claimed: HashMap<usize, WorkloadId> = HashMap::new();
        let mut seen = BTreeSet::new();
        for &id in selected {
            if id.index() >= self.set.len() {
                return Err(SimError::Unknown(id.0));
            }
            if !seen.insert(id) {
                return Err(SimError::Duplicate(id.0));
            }
            if !self.is_ready(id) {
                return Err(SimError::NotReady(id.0));
            }
            for h in &self.set.get(id).hops {
                if let Some(other) = claimed.insert(h.index(), id) {
                    if other != id {
                        return Err(SimError::Conflict(other.0, id.0));
                    }
                }
            }
        }
        Ok(())
    }

    /// Sends `selected` for one round. Empty selections advance the clock.
    pub fn send_round(&mut self, selected: &[WorkloadId]) -> Result<&RoundRecord, SimError> {
        self.validate_round(selected)?;
        let set = Arc::clone(&self.set);
        for &id in selected {
            self.status[id.index()] = Status::Done;
            self.ready.remove(&id);
            self.done += 1;
        }
        for &id in selected {
            for d in set.dependents(id) {
                let p = &mut self.pending_prefixes[d.index()];
                *p -= 1;
                if *p == 0 {
                    self.status[d.index()] = Status::Ready;
                    self.ready.insert(*d);
                }
            }
        }
        let mut sorted = selected.to_vec();
        sorted.sort();
        self.log.push(RoundRecord {
            round: self.round,
            n_on: sorted.len(),
            selected: sorted,
        });
        self.round += 1;
        Ok(self.log.last().expect("just pushed"))
    }

    pub fn collect_metrics(&self, config: &SimConfig) -> Metrics {
        let n_phy = config.physical_links.max(1) as f64;
        let dir_links = self.set.num_dir_links().max(1) as f64;
        let utilization: Vec<f64> = self.log.iter().map(|r| r.n_on as f64 / n_phy).collect();
        let duplex_utilization: Vec<f64> = self
            .log
            .iter()
            .map(|r| r.n_on as f64 / (2.0 * n_phy))
            .collect();
        let link_occupancy = self
            .log
            .iter()
            .map(|r| {
                let used: usize = r.selected.iter().map(|id| self.set.get(*id).hops.len()).sum();
                used as f64 / dir_links
            })
            .collect();
        let mean = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        Metrics {
            total_rounds: self.round,
            wall_clock: self.round as f64 * config.piece_time(),
            total_workloads: self.set.len(),
            sent_workloads: self.done,
            mean_utilization: mean(&utilization),
            mean_duplex_utilization: mean(&duplex_utilization),
            utilization,
            duplex_utilization,
            link_occupancy,
            complete: self.is_done(),
        }
    }
}

/// Re-checks a round log against a workload set: every round is
/// conflict-free and prefix-respecting, and each workload is sent once.
pub fn replay_log(set: &Arc<WorkloadSet>, log: &[RoundRecord]) -> Result<SimState, SimError> {
    let mut state = SimState::reset(Arc::clone(set));
    for record in log {
        state.send_round(&record.selected)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_bcube;
    use crate::workload::{build_all_trees, Granularity};

    fn smallest() -> Arc<WorkloadSet> {
        let g = build_bcube(2, 0).unwrap();
        Arc::new(build_all_trees(&g, Granularity::Hop).unwrap())
    }

    #[test]
    fn reset_marks_leaves_ready() {
        let s = SimState::reset(smallest());
        assert_eq!(s.ready_workloads().len(), 2);
        assert_eq!(s.done_count(), 0);
        assert!(!s.is_done());
        assert_eq!(s.round(), 0);
    }

    #[test]
    fn empty_selection_advances_round() {
        let mut s = SimState::reset(smallest());
        s.send_round(&[]).unwrap();
        assert_eq!(s.round(), 1);
        assert_eq!(s.done_count(), 0);
    }

    #[test]
    fn smallest_bcube_finishes_in_two_rounds() {
        let mut s = SimState::reset(smallest());
        let leaves: Vec<_> = s.ready_workloads().iter().copied().collect();
        s.send_round(&leaves).unwrap();
        let next: Vec<_> = s.ready_workloads().iter().copied().collect();
        assert_eq!(next.len(), 2);
        s.send_round(&next).unwrap();
        assert!(s.is_done());
        let m = s.collect_metrics(&SimConfig::for_topology(2, 2));
        assert_eq!(m.total_rounds, 2);
        assert!(m.complete);
        assert_eq!(m.utilization, vec![1.0, 1.0]);
        assert_eq!(m.duplex_utilization, vec![0.5, 0.5]);
    }

    #[test]
    fn not_ready_rejects_whole_round() {
        let mut s = SimState::reset(smallest());
        let err = s.send_round(&[WorkloadId(0), WorkloadId(1)]).unwrap_err();
        assert_eq!(err, SimError::NotReady(1));
        assert_eq!(s.round(), 0);
        assert!(s.is_ready(WorkloadId(0)));
    }

    #[test]
    fn conflict_and_duplicate_rejected() {
        let set = smallest();
        let w = set.get(WorkloadId(0)).clone();
        assert!(conflicts(&w, &w));
        let mut s = SimState::reset(set);
        assert_eq!(
            s.send_round(&[WorkloadId(0), WorkloadId(0)]).unwrap_err(),
            SimError::Duplicate(0)
        );
        assert_eq!(s.send_round(&[WorkloadId(99)]).unwrap_err(), SimError::Unknown(99));
    }

    #[test]
    fn opposite_directions_do_not_conflict() {
        let set = smallest();
        // Tree 0 sends server1 -> switch; tree 1's last hop is switch -> server1.
        let up = set.get(WorkloadId(0));
        let down = set.get(WorkloadId(3));
        assert_eq!(up.hops[0].link, down.hops[0].link);
        assert_ne!(up.hops[0].dir, down.hops[0].dir);
        assert!(!conflicts(up, down));
    }

    #[test]
    fn partial_metrics_are_flagged() {
        let mut s = SimState::reset(smallest());
        s.send_round(&[WorkloadId(0)]).unwrap();
        let m = s.collect_metrics(&SimConfig::for_topology(2, 2));
        assert!(!m.complete);
        assert_eq!(m.sent_workloads, 1);
    }

    #[test]
    fn zero_workloads_is_done_immediately() {
        let empty = Arc::new(WorkloadSet::from_trees(Vec::new(), 1));
        let s = SimState::reset(empty);
        assert!(s.is_done());
        assert_eq!(s.collect_metrics(&SimConfig::for_topology(1, 1)).total_rounds, 0);
    }

    #[test]
    fn replay_reproduces_state() {
        let set = smallest();
        let mut s = SimState::reset(Arc::clone(&set));
        s.send_round(&[WorkloadId(0), WorkloadId(2)]).unwrap();
        s.send_round(&[WorkloadId(1), WorkloadId(3)]).unwrap();
        let replayed = replay_log(&set, s.log()).unwrap();
        assert!(replayed.is_done());
    }

    #[test]
    fn config_piece_time() {
        let c = SimConfig::for_topology(9, 18);
        assert_eq!(c.piece_time() * c.pieces as f64, c.full_time);
    }
}
