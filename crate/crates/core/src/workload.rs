//! Per-root node trees, workload trees with prefix dependencies, and the
//! merge operation that aggregates branches at servers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{DirLink, LinkId, NodeId, NodeKind, RoutingTable, TopologyGraph};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("tree root {0} is a switch")]
    RootIsSwitch(NodeId),
    #[error("topology has {0} servers, need at least 2")]
    TooFewServers(usize),
    #[error("invalid workload set: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkloadId(pub u32);

impl WorkloadId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// How a routed path is cut into schedulable workloads.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// One workload per physical link.
    Hop,
    /// One workload per server-to-server stretch; intermediate nodes are
    /// switches, which forward but never aggregate.
    #[default]
    Segment,
    /// The whole source-to-destination path as a single workload.
    Route,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Hop => "hop",
            Granularity::Segment => "segment",
            Granularity::Route => "route",
        }
    }
}

impl std::str::FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hop" => Ok(Granularity::Hop),
            "segment" => Ok(Granularity::Segment),
            "route" => Ok(Granularity::Route),
            other => Err(format!("unknown granularity `{other}`")),
        }
    }
}

/// A tree over physical nodes directed toward a root server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeTree {
    pub root: NodeId,
    /// `parent[u]` is the next node toward the root and the link used.
    pub parent: Vec<Option<(NodeId, LinkId)>>,
    pub members: BTreeSet<NodeId>,
}

impl NodeTree {
    pub fn contains(&self, n: NodeId) -> bool {
        self.members.contains(&n)
    }

    /// Nodes from `from` to the root, inclusive.
    pub fn path_to_root(&self, from: NodeId) -> Vec<NodeId> {
        let mut nodes = vec![from];
        let mut cur = from;
        while let Some((next, _)) = self.parent[cur.index()] {
            nodes.push(next);
            cur = next;
        }
        nodes
    }

    pub fn depth(&self, from: NodeId) -> usize {
        self.path_to_root(from).len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.parent.iter().filter(|p| p.is_some()).count()
    }
}

/// One schedulable unit of gradient data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub id: WorkloadId,
    /// Root server of the owning tree.
    pub root: NodeId,
    pub tail: NodeId,
    pub head: NodeId,
    /// Directed links occupied while the workload is on the wire.
    pub hops: Vec<DirLink>,
    pub prefixes: Vec<WorkloadId>,
    /// Servers whose contributions this workload carries.
    pub origins: Vec<NodeId>,
}

impl Workload {
    pub fn occupies(&self, d: DirLink) -> bool {
        self.hops.contains(&d)
    }
}

/// All workloads sharing one destination. Ids are dense within the tree
/// until the tree is placed into a [`WorkloadSet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadTree {
    pub root: NodeId,
    pub workloads: Vec<Workload>,
}

impl WorkloadTree {
    pub fn len(&self) -> usize {
        self.workloads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workloads.is_empty()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Workload> {
        self.workloads.iter().filter(|w| w.prefixes.is_empty())
    }
}

/// Overlays the shortest routes of every other server toward `root`.
///
/// Servers are processed in ascending id order and each path is cut off at
/// the first node already in the tree, so parents are assigned first-writer
/// wins and the result is always a tree.
pub fn build_node_tree(
    g: &TopologyGraph,
    routing: &RoutingTable,
    root: NodeId,
) -> Result<NodeTree, WorkloadError> {
    if g.kind(root) != NodeKind::Server {
        return Err(WorkloadError::RootIsSwitch(root));
    }
    let mut parent = vec![None; g.num_nodes()];
    let mut members = BTreeSet::from([root]);
    for s in g.servers().filter(|s| *s != root) {
        let mut cur = s;
        while !members.contains(&cur) {
            let (next, link) = routing
                .next_hop(g, cur, root)
                .expect("valid topologies are connected");
            parent[cur.index()] = Some((next, link));
            members.insert(cur);
            cur = next;
        }
    }
    Ok(NodeTree {
        root,
        parent,
        members,
    })
}

/// A path cut into units: `(tail, head, hops)`.
type Unit = (NodeId, NodeId, Vec<DirLink>);

fn split_path(g: &TopologyGraph, nodes: &[NodeId], granularity: Granularity) -> Vec<Unit> {
    let mut units = Vec::new();
    let mut start = 0;
    let mut hops = Vec::new();
    for i in 0..nodes.len().saturating_sub(1) {
        let (u, v) = (nodes[i], nodes[i + 1]);
        let link = g
            .neighbors(u)
            .iter()
            .find(|(n, _)| *n == v)
            .map(|(_, l)| *l)
            .expect("consecutive path nodes are adjacent");
        hops.push(g.dir_link(link, u));
        let cut = match granularity {
            Granularity::Hop => true,
            Granularity::Segment => g.kind(v) == NodeKind::Server,
            Granularity::Route => i + 2 == nodes.len(),
        };
        if cut {
            units.push((nodes[start], v, std::mem::take(&mut hops)));
            start = i + 1;
        }
    }
    units
}

/// Chains the units of one path; returns the ids assigned.
fn push_chain(
    workloads: &mut Vec<Workload>,
    root: NodeId,
    origin: NodeId,
    units: Vec<Unit>,
    first_prefixes: Vec<WorkloadId>,
) -> Vec<WorkloadId> {
    let mut prev: Option<WorkloadId> = None;
    let mut ids = Vec::with_capacity(units.len());
    for (tail, head, hops) in units {
        let id = WorkloadId(workloads.len() as u32);
        let prefixes = match prev {
            Some(p) => vec![p],
            None => first_prefixes.clone(),
        };
        workloads.push(Workload {
            id,
            root,
            tail,
            head,
            hops,
            prefixes,
            origins: vec![origin],
        });
        prev = Some(id);
        ids.push(id);
    }
    ids
}

/// Pre-merge workload tree: every non-root server contributes one chain of
/// workloads along its tree path, each unit depending on the previous one.
pub fn build_workload_tree(
    g: &TopologyGraph,
    tree: &NodeTree,
    granularity: Granularity,
) -> WorkloadTree {
    let mut workloads = Vec::new();
    for s in g.servers().filter(|s| *s != tree.root) {
        let path = tree.path_to_root(s);
        push_chain(
            &mut workloads,
            tree.root,
            s,
            split_path(g, &path, granularity),
            Vec::new(),
        );
    }
    WorkloadTree {
        root: tree.root,
        workloads,
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut c = x;
        while self.parent[c] != r {
            let next = self.parent[c];
            self.parent[c] = r;
            c = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        // Smaller index becomes the representative.
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.parent[hi] = lo;
        true
    }
}

/// Merges workloads that occupy the same links toward the same server.
///
/// Workloads with identical `(tail, head, hops)` whose head is a server are
/// unified; then, to a fixpoint, successors of unified workloads that
/// occupy identical links are unified too, even when they end at a switch,
/// since they already carry the same aggregate. Workloads are never merged
/// at a switch otherwise. Classes are renumbered by their smallest member,
/// so the result does not depend on merge order and merging is idempotent.
pub fn merge_workloads(g: &TopologyGraph, wt: &WorkloadTree) -> WorkloadTree {
    let n = wt.workloads.len();
    let index: HashMap<WorkloadId, usize> = wt
        .workloads
        .iter()
        .enumerate()
        .map(|(i, w)| (w.id, i))
        .collect();
    let mut successors = vec![Vec::new(); n];
    for (i, w) in wt.workloads.iter().enumerate() {
        for p in &w.prefixes {
            successors[index[p]].push(i);
        }
    }
    let key = |i: usize| {
        let w = &wt.workloads[i];
        (w.tail, w.head, w.hops.clone())
    };

    let mut uf = UnionFind::new(n);
    let mut by_key: HashMap<Unit, usize> = HashMap::new();
    for i in 0..n {
        if g.kind(wt.workloads[i].head) == NodeKind::Server {
            let first = *by_key.entry(key(i)).or_insert(i);
            uf.union(first, i);
        }
    }

    loop {
        let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            classes.entry(uf.find(i)).or_default().push(i);
        }
        let mut changed = false;
        for members in classes.values() {
            let mut seen: HashMap<Unit, usize> = HashMap::new();
            for &m in members {
                for &s in &successors[m] {
                    let first = *seen.entry(key(s)).or_insert(s);
                    changed |= uf.union(first, s);
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut class_members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        class_members.entry(uf.find(i)).or_default().push(i);
    }
    // Representatives are class minima, so BTreeMap order is min-member order.
    let new_id: HashMap<usize, WorkloadId> = class_members
        .keys()
        .enumerate()
        .map(|(k, rep)| (*rep, WorkloadId(k as u32)))
        .collect();
    let workloads = class_members
        .iter()
        .map(|(rep, members)| {
            let w = &wt.workloads[*rep];
            let mut prefixes = BTreeSet::new();
            let mut origins = Vec::new();
            for &m in members {
                for p in &wt.workloads[m].prefixes {
                    prefixes.insert(new_id[&uf.find(index[p])]);
                }
                origins.extend_from_slice(&wt.workloads[m].origins);
            }
            origins.sort();
            origins.dedup();
            Workload {
                id: new_id[rep],
                root: w.root,
                tail: w.tail,
                head: w.head,
                hops: w.hops.clone(),
                prefixes: prefixes.into_iter().collect(),
                origins,
            }
        })
        .collect();
    WorkloadTree {
        root: wt.root,
        workloads,
    }
}

/// A group of workloads: one tree per root, or one logical ring step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeSpan {
    pub label: String,
    pub root: Option<NodeId>,
    pub range: Range<u32>,
}

impl TreeSpan {
    pub fn ids(&self) -> impl Iterator<Item = WorkloadId> {
        self.range.clone().map(WorkloadId)
    }

    pub fn len(&self) -> usize {
        (self.range.end - self.range.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }
}

/// Workloads with globally unique dense ids, partitioned into trees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadSet {
    workloads: Vec<Workload>,
    trees: Vec<TreeSpan>,
    tree_of: Vec<u32>,
    dependents: Vec<Vec<WorkloadId>>,
    num_dir_links: usize,
}

impl WorkloadSet {
    /// Places trees side by side, renumbering ids to be globally unique.
    pub fn from_trees(trees: Vec<WorkloadTree>, num_links: usize) -> Self {
        let mut workloads = Vec::new();
        let mut spans = Vec::with_capacity(trees.len());
        for t in trees {
            let offset = workloads.len() as u32;
            let remap: HashMap<WorkloadId, WorkloadId> = t
                .workloads
                .iter()
                .enumerate()
                .map(|(i, w)| (w.id, WorkloadId(offset + i as u32)))
                .collect();
            for w in t.workloads {
                workloads.push(Workload {
                    id: remap[&w.id],
                    prefixes: w.prefixes.iter().map(|p| remap[p]).collect(),
                    ..w
                });
            }
            spans.push(TreeSpan {
                label: format!("root-{}", t.root.0),
                root: Some(t.root),
                range: offset..workloads.len() as u32,
            });
        }
        Self::from_parts(workloads, spans, num_links)
            .expect("trees built here are internally consistent")
    }

    /// Builds a set from already globally numbered workloads. Prefixes may
    /// cross trees (ring barriers do).
    pub fn from_parts(
        workloads: Vec<Workload>,
        trees: Vec<TreeSpan>,
        num_links: usize,
    ) -> Result<Self, WorkloadError> {
        let n = workloads.len();
        for (i, w) in workloads.iter().enumerate() {
            if w.id.index() != i {
                return Err(WorkloadError::Invalid(format!(
                    "workload ids must be dense, found {} at {i}",
                    w.id.0
                )));
            }
            if w.hops.is_empty() {
                return Err(WorkloadError::Invalid(format!(
                    "workload {i} occupies no link"
                )));
            }
            if let Some(p) = w.prefixes.iter().find(|p| p.index() >= n) {
                return Err(WorkloadError::Invalid(format!(
                    "workload {i} has unknown prefix {}",
                    p.0
                )));
            }
            if let Some(h) = w.hops.iter().find(|h| h.link.index() >= num_links) {
                return Err(WorkloadError::Invalid(format!(
                    "workload {i} uses unknown link {}",
                    h.link.0
                )));
            }
        }
        let mut tree_of = vec![u32::MAX; n];
        let mut next = 0u32;
        for (t, span) in trees.iter().enumerate() {
            if span.range.start != next || span.range.end < span.range.start {
                return Err(WorkloadError::Invalid(
                    "tree ranges must tile the id space in order".into(),
                ));
            }
            for id in span.ids() {
                tree_of[id.index()] = t as u32;
            }
            next = span.range.end;
        }
        if next as usize != n {
            return Err(WorkloadError::Invalid(
                "tree ranges must cover every workload".into(),
            ));
        }
        let mut dependents = vec![Vec::new(); n];
        for w in &workloads {
            for p in &w.prefixes {
                dependents[p.index()].push(w.id);
            }
        }
        Ok(WorkloadSet {
            workloads,
            trees,
            tree_of,
            dependents,
            num_dir_links: 2 * num_links,
        })
    }

    pub fn len(&self) -> usize {
        self.workloads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workloads.is_empty()
    }

    pub fn workloads(&self) -> &[Workload] {
        &self.workloads
    }

    pub fn get(&self, id: WorkloadId) -> &Workload {
        &self.workloads[id.index()]
    }

    pub fn trees(&self) -> &[TreeSpan] {
        &self.trees
    }

    pub fn tree_of(&self, id: WorkloadId) -> usize {
        self.tree_of[id.index()] as usize
    }

    pub fn dependents(&self, id: WorkloadId) -> &[WorkloadId] {
        &self.dependents[id.index()]
    }

    /// `2 * num_links`, the number of unit-capacity resources.
    pub fn num_dir_links(&self) -> usize {
        self.num_dir_links
    }

    /// Kahn's algorithm over prefix edges; `None` if there is a cycle.
    pub fn topological_order(&self) -> Option<Vec<WorkloadId>> {
        let mut pending: Vec<usize> = self.workloads.iter().map(|w| w.prefixes.len()).collect();
        let mut stack: Vec<WorkloadId> = self
            .workloads
            .iter()
            .filter(|w| w.prefixes.is_empty())
            .map(|w| w.id)
            .rev()
            .collect();
        let mut order = Vec::with_capacity(self.len());
        while let Some(id) = stack.pop() {
            order.push(id);
            for d in &self.dependents[id.index()] {
                pending[d.index()] -= 1;
                if pending[d.index()] == 0 {
                    stack.push(*d);
                }
            }
        }
        (order.len() == self.len()).then_some(order)
    }

    /// Per workload, the number of workloads on the longest dependent chain
    /// starting at it (itself included).
    pub fn chain_heights(&self) -> Vec<usize> {
        let order = self
            .topological_order()
            .expect("chain heights need an acyclic set");
        let mut height = vec![1usize; self.len()];
        for id in order.iter().rev() {
            let best = self.dependents[id.index()]
                .iter()
                .map(|d| height[d.index()])
                .max()
                .unwrap_or(0);
            height[id.index()] = best + 1;
        }
        height
    }

    /// Length of the longest prefix chain, a lower bound on rounds.
    pub fn longest_chain(&self) -> usize {
        self.chain_heights().into_iter().max().unwrap_or(0)
    }

    /// Tree `t` with ids rebased to start at zero.
    pub fn tree(&self, t: usize) -> WorkloadTree {
        let span = &self.trees[t];
        let offset = span.range.start;
        WorkloadTree {
            root: span.root.unwrap_or(NodeId(u32::MAX)),
            workloads: span
                .ids()
                .map(|id| {
                    let w = self.get(id);
                    Workload {
                        id: WorkloadId(w.id.0 - offset),
                        prefixes: w.prefixes.iter().map(|p| WorkloadId(p.0 - offset)).collect(),
                        ..w.clone()
                    }
                })
                .collect(),
        }
    }
}

/// One merged tree per server root; ids are assigned root by root.
pub fn build_all_trees(
    g: &TopologyGraph,
    granularity: Granularity,
) -> Result<WorkloadSet, WorkloadError> {
    build_trees(g, granularity, true)
}

/// Per-root trees, optionally merged.
pub fn build_trees(
    g: &TopologyGraph,
    granularity: Granularity,
    merge: bool,
) -> Result<WorkloadSet, WorkloadError> {
    if g.num_servers() < 2 {
        return Err(WorkloadError::TooFewServers(g.num_servers()));
    }
    let routing = RoutingTable::new(g);
    let trees = g
        .servers()
        .map(|root| {
            let nt = build_node_tree(g, &routing, root)?;
            let wt = build_workload_tree(g, &nt, granularity);
            Ok(if merge { merge_workloads(g, &wt) } else { wt })
        })
        .collect::<Result<Vec<_>, WorkloadError>>()?;
    Ok(WorkloadSet::from_trees(trees, g.num_links()))
}

/// Step ordering for ring transfers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RingSync {
    /// Step `t+1` starts after every transfer of step `t` is done.
    #[default]
    Barrier,
    /// A transfer waits only for the chunk its sender received last step.
    Pipelined,
}

impl std::str::FromStr for RingSync {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "barrier" => Ok(RingSync::Barrier),
            "pipelined" => Ok(RingSync::Pipelined),
            other => Err(format!("unknown ring sync `{other}`")),
        }
    }
}

/// Logical ring over servers in id order: `2(N-1)` steps in which every
/// server sends one chunk to its successor along the shortest route. How
/// consecutive steps are ordered is set by `sync`.
pub fn build_ring(
    g: &TopologyGraph,
    granularity: Granularity,
    sync: RingSync,
) -> Result<WorkloadSet, WorkloadError> {
    let n = g.num_servers();
    if n < 2 {
        return Err(WorkloadError::TooFewServers(n));
    }
    let routing = RoutingTable::new(g);
    let servers: Vec<NodeId> = g.servers().collect();
    let units: Vec<Vec<Unit>> = (0..n)
        .map(|i| {
            let route = routing
                .route(g, servers[i], servers[(i + 1) % n])
                .expect("valid topologies are connected");
            split_path(g, &route.nodes, granularity)
        })
        .collect();

    let mut workloads = Vec::new();
    let mut spans = Vec::new();
    let mut previous: Vec<WorkloadId> = Vec::new();
    for step in 0..2 * (n - 1) {
        let start = workloads.len() as u32;
        let mut tails = Vec::with_capacity(n);
        for i in 0..n {
            let dst = servers[(i + 1) % n];
            let waits_on = match (sync, previous.is_empty()) {
                (_, true) => Vec::new(),
                (RingSync::Barrier, false) => previous.clone(),
                (RingSync::Pipelined, false) => vec![previous[(i + n - 1) % n]],
            };
            let ids = push_chain(&mut workloads, dst, servers[i], units[i].clone(), waits_on);
            tails.extend(ids.last().copied());
        }
        previous = tails;
        spans.push(TreeSpan {
            label: format!("step-{step}"),
            root: None,
            range: start..workloads.len() as u32,
        });
    }
    WorkloadSet::from_parts(workloads, spans, g.num_links())
}

pub const WORKLOAD_DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpedTree {
    pub label: String,
    pub root: Option<NodeId>,
    pub workloads: Vec<Workload>,
}

/// On-disk workload listing consumed by the simulator and external checkers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadDump {
    pub version: u32,
    pub topology: String,
    pub granularity: Granularity,
    pub merged: bool,
    pub num_links: usize,
    pub total: usize,
    pub trees: Vec<DumpedTree>,
}

impl WorkloadDump {
    pub fn new(topology: &str, granularity: Granularity, merged: bool, set: &WorkloadSet) -> Self {
        WorkloadDump {
            version: WORKLOAD_DUMP_VERSION,
            topology: topology.to_string(),
            granularity,
            merged,
            num_links: set.num_dir_links() / 2,
            total: set.len(),
            trees: set
                .trees()
                .iter()
                .map(|span| DumpedTree {
                    label: span.label.clone(),
                    root: span.root,
                    workloads: span.ids().map(|id| set.get(id).clone()).collect(),
                })
                .collect(),
        }
    }

    pub fn into_set(self) -> Result<WorkloadSet, WorkloadError> {
        if self.version != WORKLOAD_DUMP_VERSION {
            return Err(WorkloadError::Invalid(format!(
                "unsupported dump version {}",
                self.version
            )));
        }
        let mut workloads = Vec::new();
        let mut spans = Vec::new();
        for t in self.trees {
            let start = workloads.len() as u32;
            workloads.extend(t.workloads);
            spans.push(TreeSpan {
                label: t.label,
                root: t.root,
                range: start..workloads.len() as u32,
            });
        }
        WorkloadSet::from_parts(workloads, spans, self.num_links)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_bcube, build_dcell, NodeKind, TopologyParams};

    fn tree_for(g: &TopologyGraph, root: u32, gran: Granularity) -> WorkloadTree {
        let rt = RoutingTable::new(g);
        let nt = build_node_tree(g, &rt, NodeId(root)).unwrap();
        build_workload_tree(g, &nt, gran)
    }

    #[test]
    fn smallest_bcube_node_tree() {
        let g = build_bcube(2, 0).unwrap();
        let rt = RoutingTable::new(&g);
        let nt = build_node_tree(&g, &rt, NodeId(0)).unwrap();
        assert_eq!(nt.num_edges(), 2);
        assert_eq!(nt.path_to_root(NodeId(1)), vec![NodeId(1), NodeId(2), NodeId(0)]);
    }

    #[test]
    fn switch_root_rejected() {
        let g = build_bcube(2, 0).unwrap();
        let rt = RoutingTable::new(&g);
        assert_eq!(
            build_node_tree(&g, &rt, NodeId(2)),
            Err(WorkloadError::RootIsSwitch(NodeId(2)))
        );
    }

    #[test]
    fn smallest_bcube_hop_workloads() {
        let g = build_bcube(2, 0).unwrap();
        let wt = tree_for(&g, 0, Granularity::Hop);
        assert_eq!(wt.len(), 2);
        let (w1, w2) = (&wt.workloads[0], &wt.workloads[1]);
        assert_eq!((w1.tail, w1.head), (NodeId(1), NodeId(2)));
        assert!(w1.prefixes.is_empty());
        assert_eq!((w2.tail, w2.head), (NodeId(2), NodeId(0)));
        assert_eq!(w2.prefixes, vec![w1.id]);
    }

    #[test]
    fn segment_units_span_switches() {
        let g = build_bcube(2, 0).unwrap();
        let wt = tree_for(&g, 0, Granularity::Segment);
        assert_eq!(wt.len(), 1);
        assert_eq!(wt.workloads[0].hops.len(), 2);
    }

    /// Four hosts A-D on a diamond: A-B, A-C, B-D, C-D. Rooted at A, the
    /// branch from D goes through B, so D->B->A and B->A share link B-A.
    fn diamond() -> TopologyGraph {
        TopologyGraph::from_parts(
            "diamond",
            TopologyParams::Custom,
            vec![NodeKind::Server; 4],
            &[(0, 1), (0, 2), (1, 3), (2, 3)],
        )
        .unwrap()
    }

    #[test]
    fn shared_server_link_is_merged() {
        let g = diamond();
        let pre = tree_for(&g, 0, Granularity::Hop);
        // B->A, C->A, D->B, D->B->A (second hop)
        assert_eq!(pre.len(), 4);
        let shared: Vec<_> = pre
            .workloads
            .iter()
            .filter(|w| (w.tail, w.head) == (NodeId(1), NodeId(0)))
            .collect();
        assert_eq!(shared.len(), 2);
        let post = merge_workloads(&g, &pre);
        assert_eq!(post.len(), 3);
        let merged = post
            .workloads
            .iter()
            .find(|w| (w.tail, w.head) == (NodeId(1), NodeId(0)))
            .unwrap();
        assert_eq!(merged.origins, vec![NodeId(1), NodeId(3)]);
        assert_eq!(merged.prefixes.len(), 1);
        // Link C-D carries nothing.
        assert!(post
            .workloads
            .iter()
            .all(|w| !w.hops.iter().any(|h| h.link == LinkId(3))));
    }

    #[test]
    fn no_shared_links_means_no_change() {
        let g = build_bcube(2, 0).unwrap();
        let pre = tree_for(&g, 0, Granularity::Hop);
        assert_eq!(merge_workloads(&g, &pre), pre);
    }

    #[test]
    fn switch_headed_hops_are_not_merged() {
        // Two servers behind one switch: s1->sw, s2->sw stay distinct, sw->root merges.
        let g = build_bcube(3, 0).unwrap();
        let pre = tree_for(&g, 0, Granularity::Hop);
        assert_eq!(pre.len(), 4);
        let post = merge_workloads(&g, &pre);
        assert_eq!(post.len(), 3);
        for w in &post.workloads {
            if g.kind(w.head) == NodeKind::Switch {
                assert!(w.prefixes.len() <= 1);
                assert_eq!(w.origins.len(), 1);
            }
        }
    }

    #[test]
    fn merge_is_idempotent_on_dcell() {
        let g = build_dcell(4, 1).unwrap();
        for gran in [Granularity::Hop, Granularity::Segment] {
            for root in [0, 7, 19] {
                let once = merge_workloads(&g, &tree_for(&g, root, gran));
                assert_eq!(merge_workloads(&g, &once), once);
            }
        }
    }

    #[test]
    fn pre_merge_count_is_sum_of_depths() {
        let g = build_bcube(3, 1).unwrap();
        let rt = RoutingTable::new(&g);
        let nt = build_node_tree(&g, &rt, NodeId(4)).unwrap();
        let wt = build_workload_tree(&g, &nt, Granularity::Hop);
        let expected: usize = g
            .servers()
            .filter(|s| *s != NodeId(4))
            .map(|s| nt.depth(s))
            .sum();
        assert_eq!(wt.len(), expected);
    }

    #[test]
    fn all_trees_partition_ids() {
        let g = build_bcube(2, 0).unwrap();
        let set = build_all_trees(&g, Granularity::Hop).unwrap();
        assert_eq!(set.trees().len(), 2);
        assert_eq!(set.len(), 4);
        for (t, span) in set.trees().iter().enumerate() {
            for id in span.ids() {
                assert_eq!(set.tree_of(id), t);
                for p in &set.get(id).prefixes {
                    assert_eq!(set.tree_of(*p), t);
                }
            }
        }
    }

    #[test]
    fn ring_has_barriers_between_steps() {
        let g = build_bcube(3, 0).unwrap();
        let set = build_ring(&g, Granularity::Route, RingSync::Barrier).unwrap();
        assert_eq!(set.trees().len(), 4);
        assert_eq!(set.len(), 12);
        let second = set.trees()[1].range.start;
        assert_eq!(set.get(WorkloadId(second)).prefixes.len(), 3);
        assert_eq!(set.longest_chain(), 4);
    }

    #[test]
    fn cycle_is_detected() {
        let g = build_bcube(2, 0).unwrap();
        let mut dump = WorkloadDump::new(
            "x",
            Granularity::Hop,
            true,
            &build_all_trees(&g, Granularity::Hop).unwrap(),
        );
        dump.trees[0].workloads[0].prefixes.push(WorkloadId(1));
        let set = dump.into_set().unwrap();
        assert!(set.topological_order().is_none());
    }
}
