//! Data-center topology generators (BCube, DCell level 1, Jellyfish) and
//! deterministic shortest-path routing.
//!
//! Node ids are dense: servers occupy `0..num_servers`, switches follow.
//! Every link has unit capacity in each direction (full duplex), so the
//! schedulable resource is a [`DirLink`].

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on generated node counts.
pub const DEFAULT_MAX_NODES: usize = 1 << 16;

/// Attempts at a simple pairing before moving to the next sub-seed.
const PAIRING_ATTEMPTS: usize = 2_000;
/// Sub-seeds tried before a Jellyfish request is declared unrealizable.
const MAX_SUB_SEEDS: u64 = 256;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("parameter out of range: {0}")]
    OutOfRange(String),
    #[error("topology would have {nodes} nodes, limit is {limit}")]
    TooLarge { nodes: usize, limit: usize },
    #[error("unrealizable degree sequence: {0}")]
    Unrealizable(String),
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("no route from {0} to {1}")]
    Disconnected(NodeId, NodeId),
    #[error("malformed topology: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub u32);

impl LinkId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Server,
    Switch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeRef {
    pub id: NodeId,
    pub kind: NodeKind,
}

/// An undirected physical link. `a < b` always holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub a: NodeId,
    pub b: NodeId,
}

impl Link {
    pub fn other(&self, n: NodeId) -> Option<NodeId> {
        if n == self.a {
            Some(self.b)
        } else if n == self.b {
            Some(self.a)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    /// From the lower-id endpoint to the higher-id endpoint.
    Up,
    Down,
}

/// One direction of one physical link: the unit of link capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DirLink {
    pub link: LinkId,
    pub dir: Direction,
}

impl DirLink {
    /// Dense index in `0..2 * num_links`.
    pub fn index(self) -> usize {
        self.link.index() * 2
            + match self.dir {
                Direction::Up => 0,
                Direction::Down => 1,
            }
    }

    pub fn reversed(self) -> DirLink {
        DirLink {
            link: self.link,
            dir: match self.dir {
                Direction::Up => Direction::Down,
                Direction::Down => Direction::Up,
            },
        }
    }
}

/// Generator parameters, kept alongside the graph for serialization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum TopologyParams {
    Bcube {
        n: usize,
        k: usize,
    },
    Dcell {
        n: usize,
        level: usize,
    },
    Jellyfish {
        num_switches: usize,
        switch_degree: usize,
        num_servers: usize,
        seed: u64,
    },
    /// Hand-built graphs (tests, imported files).
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologyGraph {
    name: String,
    params: TopologyParams,
    kinds: Vec<NodeKind>,
    links: Vec<Link>,
    // Neighbor lists sorted by neighbor id.
    adjacency: Vec<Vec<(NodeId, LinkId)>>,
    num_servers: usize,
}

impl TopologyGraph {
    /// Assembles a graph from raw parts and checks the structural invariants.
    ///
    /// Servers must come first in `kinds`. Links are renumbered in the given
    /// order and their endpoints normalized so that `a < b`.
    pub fn from_parts(
        name: impl Into<String>,
        params: TopologyParams,
        kinds: Vec<NodeKind>,
        edges: &[(usize, usize)],
    ) -> Result<Self, TopologyError> {
        let num_servers = kinds.iter().take_while(|k| **k == NodeKind::Server).count();
        if kinds[num_servers..].contains(&NodeKind::Server) {
            return Err(TopologyError::Malformed(
                "servers must precede switches".into(),
            ));
        }
        let n = kinds.len();
        let mut seen = BTreeSet::new();
        let mut links = Vec::with_capacity(edges.len());
        let mut adjacency = vec![Vec::new(); n];
        for (i, &(u, v)) in edges.iter().enumerate() {
            if u >= n || v >= n {
                return Err(TopologyError::Malformed(format!(
                    "link {i} references a missing node"
                )));
            }
            if u == v {
                return Err(TopologyError::Malformed(format!("self-loop on node {u}")));
            }
            let (a, b) = (u.min(v), u.max(v));
            if !seen.insert((a, b)) {
                return Err(TopologyError::Malformed(format!(
                    "duplicate link between {a} and {b}"
                )));
            }
            let id = LinkId(i as u32);
            links.push(Link {
                id,
                a: NodeId(a as u32),
                b: NodeId(b as u32),
            });
            adjacency[a].push((NodeId(b as u32), id));
            adjacency[b].push((NodeId(a as u32), id));
        }
        for adj in &mut adjacency {
            adj.sort();
        }
        let g = TopologyGraph {
            name: name.into(),
            params,
            kinds,
            links,
            adjacency,
            num_servers,
        };
        if !g.is_connected() {
            return Err(TopologyError::Malformed("graph is not connected".into()));
        }
        Ok(g)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &TopologyParams {
        &self.params
    }

    pub fn num_nodes(&self) -> usize {
        self.kinds.len()
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn num_servers(&self) -> usize {
        self.num_servers
    }

    pub fn num_switches(&self) -> usize {
        self.kinds.len() - self.num_servers
    }

    pub fn kind(&self, n: NodeId) -> NodeKind {
        self.kinds[n.index()]
    }

    pub fn node(&self, n: NodeId) -> NodeRef {
        NodeRef {
            id: n,
            kind: self.kind(n),
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeRef> + '_ {
        self.kinds.iter().enumerate().map(|(i, &kind)| NodeRef {
            id: NodeId(i as u32),
            kind,
        })
    }

    pub fn servers(&self) -> impl Iterator<Item = NodeId> {
        (0..self.num_servers as u32).map(NodeId)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.index()]
    }

    pub fn neighbors(&self, n: NodeId) -> &[(NodeId, LinkId)] {
        &self.adjacency[n.index()]
    }

    /// The directed link used when sending from `from` over `link`.
    pub fn dir_link(&self, link: LinkId, from: NodeId) -> DirLink {
        let l = self.link(link);
        let dir = if l.a == from {
            Direction::Up
        } else {
            debug_assert_eq!(l.b, from);
            Direction::Down
        };
        DirLink { link, dir }
    }

    /// Sender and receiver of a directed link.
    pub fn endpoints(&self, d: DirLink) -> (NodeId, NodeId) {
        let l = self.link(d.link);
        match d.dir {
            Direction::Up => (l.a, l.b),
            Direction::Down => (l.b, l.a),
        }
    }

    fn is_connected(&self) -> bool {
        if self.kinds.is_empty() {
            return true;
        }
        bfs_distances(&self.adjacency, 0)
            .iter()
            .all(|d| *d != usize::MAX)
    }
}

fn bfs_distances(adjacency: &[Vec<(NodeId, LinkId)>], source: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adjacency.len()];
    let mut queue = VecDeque::new();
    dist[source] = 0;
    queue.push_back(source);
    while let Some(u) = queue.pop_front() {
        for &(v, _) in &adjacency[u] {
            if dist[v.index()] == usize::MAX {
                dist[v.index()] = dist[u] + 1;
                queue.push_back(v.index());
            }
        }
    }
    dist
}

fn check_size(nodes: usize) -> Result<(), TopologyError> {
    if nodes > DEFAULT_MAX_NODES {
        return Err(TopologyError::TooLarge {
            nodes,
            limit: DEFAULT_MAX_NODES,
        });
    }
    Ok(())
}

/// BCube(n, k): `n^(k+1)` servers addressed by `k+1` base-`n` digits and
/// `k+1` levels of `n^k` switches. The level-`l` switch of a server is
/// found by deleting digit `l` from the server's address.
pub fn build_bcube(n: usize, k: usize) -> Result<TopologyGraph, TopologyError> {
    if n < 2 {
        return Err(TopologyError::OutOfRange(format!("bcube n={n}, need n >= 2")));
    }
    let servers = n
        .checked_pow(k as u32 + 1)
        .ok_or_else(|| TopologyError::OutOfRange(format!("bcube({n},{k}) overflows")))?;
    let per_level = servers / n;
    let switches = (k + 1) * per_level;
    check_size(servers + switches)?;

    let mut kinds = vec![NodeKind::Server; servers];
    kinds.extend(std::iter::repeat_n(NodeKind::Switch, switches));

    let mut edges = Vec::with_capacity(servers * (k + 1));
    for level in 0..=k {
        let low = n.pow(level as u32);
        for server in 0..servers {
            // Remove digit `level` from the address.
            let switch_index = (server / (low * n)) * low + server % low;
            edges.push((server, servers + level * per_level + switch_index));
        }
    }
    TopologyGraph::from_parts(
        format!("bcube-{n}-{k}"),
        TopologyParams::Bcube { n, k },
        kinds,
        &edges,
    )
}

/// DCell level 1: `n + 1` cells of `n` servers and one switch each, with one
/// server-server link between every pair of cells: server `[i, j-1]` is
/// joined to server `[j, i]` for `i < j`.
pub fn build_dcell(n: usize, level: usize) -> Result<TopologyGraph, TopologyError> {
    if level != 1 {
        return Err(TopologyError::OutOfRange(format!(
            "dcell level={level}, only level 1 is supported"
        )));
    }
    if n < 2 {
        return Err(TopologyError::OutOfRange(format!("dcell n={n}, need n >= 2")));
    }
    let cells = n + 1;
    let servers = n * cells;
    check_size(servers + cells)?;

    let mut kinds = vec![NodeKind::Server; servers];
    kinds.extend(std::iter::repeat_n(NodeKind::Switch, cells));

    let server = |cell: usize, idx: usize| cell * n + idx;
    let mut edges = Vec::with_capacity(servers + cells * n / 2);
    for cell in 0..cells {
        for idx in 0..n {
            edges.push((server(cell, idx), servers + cell));
        }
    }
    for i in 0..cells {
        for j in i + 1..cells {
            edges.push((server(i, j - 1), server(j, i)));
        }
    }
    TopologyGraph::from_parts(
        format!("dcell-{n}-{level}"),
        TopologyParams::Dcell { n, level },
        kinds,
        &edges,
    )
}

/// Jellyfish: a connected random `switch_degree`-regular graph over the
/// switches, with server `i` attached to switch `i mod num_switches`.
///
/// The switch graph is drawn by the pairing model; a sub-seed counter is
/// bumped until a simple, connected pairing is found, so the result is a
/// pure function of the arguments.
pub fn build_jellyfish(
    num_switches: usize,
    switch_degree: usize,
    num_servers: usize,
    seed: u64,
) -> Result<TopologyGraph, TopologyError> {
    if num_switches < 2 || num_servers < 1 {
        return Err(TopologyError::OutOfRange(format!(
            "jellyfish needs >= 2 switches and >= 1 server, got {num_switches}/{num_servers}"
        )));
    }
    if switch_degree == 0 || switch_degree >= num_switches {
        return Err(TopologyError::Unrealizable(format!(
            "degree {switch_degree} with {num_switches} switches"
        )));
    }
    if !(num_switches * switch_degree).is_multiple_of(2) {
        return Err(TopologyError::Unrealizable(format!(
            "{num_switches} x {switch_degree} stubs is odd"
        )));
    }
    if switch_degree == 1 && num_switches > 2 {
        return Err(TopologyError::Unrealizable(
            "a 1-regular graph on more than 2 switches is disconnected".into(),
        ));
    }
    check_size(num_switches + num_servers)?;

    let switch_edges = (0..MAX_SUB_SEEDS)
        .find_map(|sub| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(sub);
            (0..PAIRING_ATTEMPTS)
                .find_map(|_| random_regular_pairing(num_switches, switch_degree, &mut rng))
                .filter(|edges| edges_connected(num_switches, edges))
        })
        .ok_or_else(|| {
            TopologyError::Unrealizable(format!(
                "no connected simple {switch_degree}-regular graph found on {num_switches} switches"
            ))
        })?;

    let mut kinds = vec![NodeKind::Server; num_servers];
    kinds.extend(std::iter::repeat_n(NodeKind::Switch, num_switches));
    let mut edges: Vec<(usize, usize)> = (0..num_servers)
        .map(|s| (s, num_servers + s % num_switches))
        .collect();
    edges.extend(
        switch_edges
            .into_iter()
            .map(|(a, b)| (num_servers + a, num_servers + b)),
    );
    TopologyGraph::from_parts(
        format!("jellyfish-{num_switches}-{switch_degree}-{num_servers}"),
        TopologyParams::Jellyfish {
            num_switches,
            switch_degree,
            num_servers,
            seed,
        },
        kinds,
        &edges,
    )
}

fn random_regular_pairing(
    nodes: usize,
    degree: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<(usize, usize)>> {
    let mut stubs: Vec<usize> = (0..nodes)
        .flat_map(|v| std::iter::repeat_n(v, degree))
        .collect();
    stubs.shuffle(rng);
    let mut seen = BTreeSet::new();
    let mut edges = Vec::with_capacity(stubs.len() / 2);
    for pair in stubs.chunks_exact(2) {
        let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
        if a == b || !seen.insert((a, b)) {
            return None;
        }
        edges.push((a, b));
    }
    edges.sort_unstable();
    Some(edges)
}

fn edges_connected(nodes: usize, edges: &[(usize, usize)]) -> bool {
    let mut adjacency = vec![Vec::new(); nodes];
    for (i, &(a, b)) in edges.iter().enumerate() {
        adjacency[a].push((NodeId(b as u32), LinkId(i as u32)));
        adjacency[b].push((NodeId(a as u32), LinkId(i as u32)));
    }
    bfs_distances(&adjacency, 0).iter().all(|d| *d != usize::MAX)
}

/// A simple path as a sequence of directed links.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub src: NodeId,
    pub dst: NodeId,
    /// Visited nodes, `src` first and `dst` last.
    pub nodes: Vec<NodeId>,
    pub hops: Vec<DirLink>,
}

impl Route {
    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }
}

/// All-pairs BFS distances with deterministic next-hop selection.
///
/// The next hop from `u` toward `dst` is the smallest-id neighbor one step
/// closer to `dst`. Because that choice depends only on `(u, dst)`, every
/// suffix of a route is itself the route from its first node.
#[derive(Debug, Clone)]
pub struct RoutingTable {
    // dist[dst][u]
    dist: Vec<Vec<usize>>,
}

impl RoutingTable {
    pub fn new(g: &TopologyGraph) -> Self {
        let dist = (0..g.num_nodes())
            .map(|d| bfs_distances(&g.adjacency, d))
            .collect();
        RoutingTable { dist }
    }

    pub fn distance(&self, src: NodeId, dst: NodeId) -> usize {
        self.dist[dst.index()][src.index()]
    }

    pub fn next_hop(&self, g: &TopologyGraph, u: NodeId, dst: NodeId) -> Option<(NodeId, LinkId)> {
        let d = self.distance(u, dst);
        if d == 0 || d == usize::MAX {
            return None;
        }
        // Neighbor lists are sorted, so the first match has the smallest id.
        g.neighbors(u)
            .iter()
            .copied()
            .find(|(v, _)| self.distance(*v, dst) == d - 1)
    }

    pub fn route(&self, g: &TopologyGraph, src: NodeId, dst: NodeId) -> Result<Route, TopologyError> {
        for n in [src, dst] {
            if n.index() >= g.num_nodes() {
                return Err(TopologyError::UnknownNode(n));
            }
        }
        if self.distance(src, dst) == usize::MAX {
            return Err(TopologyError::Disconnected(src, dst));
        }
        let mut nodes = vec![src];
        let mut hops = Vec::with_capacity(self.distance(src, dst));
        let mut cur = src;
        while let Some((next, link)) = self.next_hop(g, cur, dst) {
            hops.push(g.dir_link(link, cur));
            nodes.push(next);
            cur = next;
        }
        Ok(Route {
            src,
            dst,
            nodes,
            hops,
        })
    }
}

/// Breadth-first shortest route with smallest-next-hop tie-breaking.
pub fn shortest_route(g: &TopologyGraph, src: NodeId, dst: NodeId) -> Result<Route, TopologyError> {
    RoutingTable::new(g).route(g, src, dst)
}

/// Named presets used by the benchmark harness.
///
/// The Jellyfish server/switch splits are chosen so that node and link
/// totals hit the reference sizes with a regular switch graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    B1,
    B2,
    B3,
    D1,
    D2,
    D3,
    J1,
    J2,
    J3,
}

impl Preset {
    pub const ALL: [Preset; 9] = [
        Preset::B1,
        Preset::B2,
        Preset::B3,
        Preset::D1,
        Preset::D2,
        Preset::D3,
        Preset::J1,
        Preset::J2,
        Preset::J3,
    ];

    pub fn params(self) -> TopologyParams {
        use TopologyParams::*;
        match self {
            Preset::B1 => Bcube { n: 3, k: 1 },
            Preset::B2 => Bcube { n: 4, k: 1 },
            Preset::B3 => Bcube { n: 5, k: 1 },
            Preset::D1 => Dcell { n: 4, level: 1 },
            Preset::D2 => Dcell { n: 5, level: 1 },
            Preset::D3 => Dcell { n: 6, level: 1 },
            Preset::J1 => Jellyfish {
                num_switches: 10,
                switch_degree: 4,
                num_servers: 10,
                seed: 0,
            },
            Preset::J2 => Jellyfish {
                num_switches: 15,
                switch_degree: 4,
                num_servers: 15,
                seed: 0,
            },
            Preset::J3 => Jellyfish {
                num_switches: 19,
                switch_degree: 4,
                num_servers: 21,
                seed: 0,
            },
        }
    }

    pub fn build(self) -> Result<TopologyGraph, TopologyError> {
        build(&self.params())
    }

    pub fn label(self) -> &'static str {
        match self {
            Preset::B1 => "B1",
            Preset::B2 => "B2",
            Preset::B3 => "B3",
            Preset::D1 => "D1",
            Preset::D2 => "D2",
            Preset::D3 => "D3",
            Preset::J1 => "J1",
            Preset::J2 => "J2",
            Preset::J3 => "J3",
        }
    }

    pub fn from_label(s: &str) -> Option<Preset> {
        Preset::ALL
            .into_iter()
            .find(|p| p.label().eq_ignore_ascii_case(s))
    }
}

/// Builds a topology from its generator parameters.
pub fn build(params: &TopologyParams) -> Result<TopologyGraph, TopologyError> {
    match *params {
        TopologyParams::Bcube { n, k } => build_bcube(n, k),
        TopologyParams::Dcell { n, level } => build_dcell(n, level),
        TopologyParams::Jellyfish {
            num_switches,
            switch_degree,
            num_servers,
            seed,
        } => build_jellyfish(num_switches, switch_degree, num_servers, seed),
        TopologyParams::Custom => Err(TopologyError::OutOfRange(
            "custom topologies cannot be regenerated".into(),
        )),
    }
}

pub const TOPOLOGY_FORMAT_VERSION: u32 = 1;

/// On-disk form of a topology.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyDocument {
    pub version: u32,
    pub name: String,
    pub params: TopologyParams,
    pub nodes: Vec<NodeRef>,
    pub links: Vec<Link>,
}

impl From<&TopologyGraph> for TopologyDocument {
    fn from(g: &TopologyGraph) -> Self {
        TopologyDocument {
            version: TOPOLOGY_FORMAT_VERSION,
            name: g.name.clone(),
            params: g.params.clone(),
            nodes: g.nodes().collect(),
            links: g.links.clone(),
        }
    }
}

impl TryFrom<TopologyDocument> for TopologyGraph {
    type Error = TopologyError;

    fn try_from(doc: TopologyDocument) -> Result<Self, Self::Error> {
        if doc.version != TOPOLOGY_FORMAT_VERSION {
            return Err(TopologyError::Malformed(format!(
                "unsupported topology version {}",
                doc.version
            )));
        }
        for (i, n) in doc.nodes.iter().enumerate() {
            if n.id.index() != i {
                return Err(TopologyError::Malformed(format!(
                    "node ids must be dense, found {} at position {i}",
                    n.id
                )));
            }
        }
        for (i, l) in doc.links.iter().enumerate() {
            if l.id.index() != i {
                return Err(TopologyError::Malformed(format!(
                    "link ids must be dense, found {} at position {i}",
                    l.id.0
                )));
            }
        }
        let kinds = doc.nodes.iter().map(|n| n.kind).collect();
        let edges: Vec<_> = doc.links.iter().map(|l| (l.a.index(), l.b.index())).collect();
        TopologyGraph::from_parts(doc.name, doc.params, kinds, &edges)
    }
}
