//! Reference figures for the nine benchmark presets.

use crate::topology::Preset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub nodes: usize,
    pub edges: usize,
    pub workloads: usize,
    pub ps_rounds: f64,
    pub ring_rounds: f64,
    pub rl_rounds: f64,
}

impl Preset {
    pub fn reference(self) -> ReferenceRow {
        let row = |nodes, edges, workloads, ps_rounds, ring_rounds, rl_rounds| ReferenceRow {
            nodes,
            edges,
            workloads,
            ps_rounds,
            ring_rounds,
            rl_rounds,
        };
        match self {
            Preset::B1 => row(15, 18, 144, 16.8, 18.0, 10.2),
            Preset::B2 => row(24, 32, 240, 31.8, 64.0, 20.8),
            Preset::B3 => row(35, 50, 1200, 51.6, 150.0, 34.7),
            Preset::D1 => row(25, 30, 380, 30.0, 47.1, 23.2),
            Preset::D2 => row(36, 45, 870, 48.4, 75.9, 33.8),
            Preset::D3 => row(49, 63, 1722, 71.2, 112.3, 48.0),
            Preset::J1 => row(20, 30, 180, 23.0, 40.0, 22.7),
            Preset::J2 => row(30, 45, 420, 36.0, 69.6, 39.9),
            Preset::J3 => row(40, 59, 760, 51.2, 80.0, 62.2),
        }
    }

    /// Whether the reference workload count is reproduced exactly by the
    /// merged segment trees; the other families only approximate it.
    pub fn workload_count_is_exact(self) -> bool {
        matches!(self, Preset::D1 | Preset::D2 | Preset::D3)
    }

    /// Preset whose generator parameters equal `params`, if any.
    pub fn matching(params: &crate::topology::TopologyParams) -> Option<Preset> {
        Preset::ALL.into_iter().find(|p| p.params() == *params)
    }
}
