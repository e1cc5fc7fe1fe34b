//! Cross-checks against small independent implementations.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use arsched_core::baselines::{run_scheduler, BaselineSettings, GreedyScheduler, Method};
use arsched_core::sim::{conflicts, round_lower_bound, SimConfig};
use arsched_core::topology::{
    build_bcube, build_dcell, shortest_route, NodeId, NodeKind, Preset, RoutingTable, TopologyGraph,
};
use arsched_core::workload::{build_all_trees, build_node_tree, build_trees, Granularity, WorkloadSet};

fn bfs(g: &TopologyGraph, src: usize) -> Vec<usize> {
    let mut adj = vec![Vec::new(); g.num_nodes()];
    for l in g.links() {
        adj[l.a.index()].push(l.b.index());
        adj[l.b.index()].push(l.a.index());
    }
    let mut dist = vec![usize::MAX; g.num_nodes()];
    dist[src] = 0;
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
    }
    dist
}

#[test]
fn bcube_3_1_routes_have_length_two_or_four() {
    let g = build_bcube(3, 1).unwrap();
    let servers: Vec<NodeId> = g.servers().collect();
    let mut pairs = 0;
    let mut lengths = HashSet::new();
    for &a in &servers {
        let dist = bfs(&g, a.index());
        for &b in &servers {
            if a == b {
                continue;
            }
            let r = shortest_route(&g, a, b).unwrap();
            assert_eq!(r.len(), dist[b.index()]);
            lengths.insert(r.len());
            pairs += 1;
        }
    }
    assert_eq!(pairs, 72);
    assert_eq!(lengths, HashSet::from([2, 4]));
}

#[test]
fn routes_are_symmetric_in_length_and_walk_real_links() {
    for p in [Preset::B2, Preset::D1, Preset::J1] {
        let g = p.build().unwrap();
        let rt = RoutingTable::new(&g);
        for a in 0..g.num_nodes() as u32 {
            for b in 0..g.num_nodes() as u32 {
                let (a, b) = (NodeId(a), NodeId(b));
                let r = rt.route(&g, a, b).unwrap();
                assert_eq!(r.len(), rt.route(&g, b, a).unwrap().len());
                let mut at = a;
                for h in &r.hops {
                    let (from, to) = g.endpoints(*h);
                    assert_eq!(from, at);
                    at = to;
                }
                assert_eq!(at, b);
            }
        }
    }
}

#[test]
fn node_tree_depth_is_bfs_distance() {
    for p in [Preset::B1, Preset::D2, Preset::J2] {
        let g = p.build().unwrap();
        let rt = RoutingTable::new(&g);
        for root in g.servers() {
            let tree = build_node_tree(&g, &rt, root).unwrap();
            let dist = bfs(&g, root.index());
            for s in g.servers() {
                assert_eq!(tree.depth(s), dist[s.index()]);
            }
        }
    }
}

#[test]
fn conflict_test_matches_brute_force() {
    let g = build_dcell(4, 1).unwrap();
    let set = build_all_trees(&g, Granularity::Segment).unwrap();
    let ws = set.workloads();
    for a in ws.iter().step_by(7) {
        let mine: HashSet<_> = a.hops.iter().map(|h| (h.link, h.dir)).collect();
        for b in ws {
            let brute = b.hops.iter().any(|h| mine.contains(&(h.link, h.dir)));
            assert_eq!(conflicts(a, b), brute);
        }
    }
}

#[test]
fn lower_bound_formula() {
    for p in Preset::ALL {
        let g = p.build().unwrap();
        let set = build_all_trees(&g, Granularity::Segment).unwrap();
        let by_capacity = set.len().div_ceil(2 * g.num_links());
        // Longest chain by repeated relaxation over prefixes.
        let mut height = vec![1usize; set.len()];
        for _ in 0..set.len() {
            let mut changed = false;
            for w in set.workloads() {
                for p in &w.prefixes {
                    if height[w.id.index()] < height[p.index()] + 1 {
                        height[w.id.index()] = height[p.index()] + 1;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let chain = height.into_iter().max().unwrap();
        assert_eq!(round_lower_bound(&set), by_capacity.max(chain), "{}", p.label());
    }
}

/// Pushes contribution counts up each merged tree and checks that the root
/// receives every other server's gradient exactly once. A workload may only
/// inject its own tail on top of what its prefixes deliver.
fn assert_complete(g: &TopologyGraph, set: &WorkloadSet) {
    let order = set.topological_order().expect("acyclic");
    let n = g.num_nodes();
    let mut carried: Vec<Vec<usize>> = vec![Vec::new(); set.len()];
    for id in order {
        let w = set.get(id);
        let mut counts = vec![0usize; n];
        for p in &w.prefixes {
            assert_eq!(set.get(*p).head, w.tail, "prefix must end where {id:?} starts");
            for (c, x) in counts.iter_mut().zip(&carried[p.index()]) {
                *c += x;
            }
        }
        for o in &w.origins {
            if counts[o.index()] == 0 {
                assert_eq!(*o, w.tail, "{id:?} invents a contribution");
                counts[o.index()] = 1;
            }
        }
        carried[id.index()] = counts;
    }
    for (t, span) in set.trees().iter().enumerate() {
        let root = span.root.unwrap();
        let mut at_root = vec![0usize; n];
        for id in span.ids() {
            if set.get(id).head == root {
                for (c, x) in at_root.iter_mut().zip(&carried[id.index()]) {
                    *c += x;
                }
            }
        }
        for s in g.servers() {
            let expected = usize::from(s != root);
            assert_eq!(at_root[s.index()], expected, "tree {t}, server {s}");
        }
    }
}

#[test]
fn merged_trees_deliver_each_contribution_once() {
    for p in [Preset::B1, Preset::B2, Preset::D1, Preset::D2, Preset::J1] {
        let g = p.build().unwrap();
        for gran in [Granularity::Segment, Granularity::Hop] {
            assert_complete(&g, &build_all_trees(&g, gran).unwrap());
        }
    }
}

#[test]
fn dcell_workload_counts() {
    let counts: Vec<usize> = [Preset::D1, Preset::D2, Preset::D3]
        .iter()
        .map(|p| build_all_trees(&p.build().unwrap(), Granularity::Segment).unwrap().len())
        .collect();
    assert_eq!(counts, vec![380, 870, 1722]);
}

#[test]
fn unmerged_count_is_sum_of_route_segments() {
    let g = build_bcube(4, 1).unwrap();
    let rt = RoutingTable::new(&g);
    let mut expected = 0;
    for root in g.servers() {
        for s in g.servers().filter(|s| *s != root) {
            let r = rt.route(&g, s, root).unwrap();
            // One segment per server-to-server stretch.
            expected += r.nodes[1..].iter().filter(|n| g.kind(**n) == NodeKind::Server).count();
        }
    }
    assert_eq!(build_trees(&g, Granularity::Segment, false).unwrap().len(), expected);
}

#[test]
fn ring_has_two_n_minus_two_steps_with_n_transfers() {
    for p in [Preset::B1, Preset::D1, Preset::J1] {
        let g = p.build().unwrap();
        let n = g.num_servers();
        let set = BaselineSettings::default().workloads(Method::Ring, &g).unwrap();
        assert_eq!(set.trees().len(), 2 * (n - 1));
        for span in set.trees() {
            let transfers: HashSet<_> = span.ids().map(|id| set.get(id).root).collect();
            assert_eq!(transfers.len(), n);
        }
    }
}

#[test]
fn replayed_logs_never_double_book() {
    for p in [Preset::B1, Preset::D1, Preset::J2] {
        let g = p.build().unwrap();
        let set = Arc::new(build_all_trees(&g, Granularity::Segment).unwrap());
        let config = SimConfig::for_topology(g.num_servers(), g.num_links());
        let r = run_scheduler(Arc::clone(&set), &mut GreedyScheduler, &config, 4);
        let mut done_round = HashMap::new();
        for rec in &r.log {
            let mut used = HashSet::new();
            for id in &rec.selected {
                for h in &set.get(*id).hops {
                    assert!(used.insert(*h), "double booking in round {}", rec.round);
                }
                for pre in &set.get(*id).prefixes {
                    assert!(done_round[pre] < rec.round);
                }
                assert!(done_round.insert(*id, rec.round).is_none());
            }
        }
        assert_eq!(done_round.len(), set.len());
    }
}

#[test]
fn merged_segment_trees_have_one_upstream_send_per_server() {
    let mut graphs = Vec::new();
    for n in 2..=5 {
        for k in 0..=1 {
            graphs.push(build_bcube(n, k).unwrap());
        }
    }
    for n in 2..=6 {
        graphs.push(build_dcell(n, 1).unwrap());
    }
    graphs.push(Preset::J1.build().unwrap());
    graphs.push(Preset::J3.build().unwrap());
    for g in graphs {
        let n = g.num_servers();
        let set = build_all_trees(&g, Granularity::Segment).unwrap();
        assert_eq!(set.len(), n * (n - 1));
        for span in set.trees() {
            let tails: HashSet<_> = span.ids().map(|id| set.get(id).tail).collect();
            assert_eq!(tails.len(), n - 1);
            assert!(!tails.contains(&span.root.unwrap()));
        }
    }
}
