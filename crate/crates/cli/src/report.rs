//! Result records, CSV output and the benchmark text table.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

pub const BENCH_SCHEMA: &str = "bench-v1";

/// One row of `baseline.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub method: String,
    pub topology: String,
    pub seed: u64,
    pub rounds: usize,
    pub mean_utilization: f64,
}

/// One row of `bench.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema: String,
    pub method: String,
    pub topology: String,
    pub nodes: usize,
    pub edges: usize,
    pub workloads: usize,
    pub lower_bound: usize,
    pub mean_rounds: f64,
    pub std_rounds: f64,
    pub seeds: usize,
    pub topology_format: u32,
    pub workload_format: u32,
}

/// One row of `train_log.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub phase: String,
    pub iteration: usize,
    pub mean_rounds: f64,
    pub mean_return: f64,
    pub loss: f64,
}

/// One row of `eval.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub topology: String,
    pub seed: u64,
    pub rounds: usize,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn display_method(m: &str) -> String {
    match m {
        "ps" => "Parameter Server (PS)".into(),
        "ring" => "Ring AllReduce".into(),
        "greedy" => "Random greedy".into(),
        "rl" => "RL (hierarchical)".into(),
        other => other.into(),
    }
}

/// Methods as rows, topologies as columns, with a `(nodes, edges)` header
/// line and a workload-count line.
pub fn format_table(records: &[ResultRecord]) -> String {
    let mut topologies: Vec<&ResultRecord> = Vec::new();
    let mut methods: Vec<&str> = Vec::new();
    for r in records {
        if !topologies.iter().any(|t| t.topology == r.topology) {
            topologies.push(r);
        }
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec![String::new()];
    header.extend(topologies.iter().map(|t| t.topology.clone()));
    rows.push(header);
    let mut sizes = vec!["(N_Node, N_Edge)".to_string()];
    sizes.extend(topologies.iter().map(|t| format!("({}, {})", t.nodes, t.edges)));
    rows.push(sizes);
    for m in &methods {
        let mut counts = vec![format!("Workloads: {}", display_method(m))];
        let mut line = vec![display_method(m)];
        for t in &topologies {
            match records.iter().find(|r| r.topology == t.topology && r.method == *m) {
                Some(r) => {
                    counts.push(r.workloads.to_string());
                    line.push(format!("{:.1} ± {:.1}", r.mean_rounds, r.std_rounds));
                }
                None => {
                    counts.push("-".into());
                    line.push("-".into());
                }
            }
        }
        rows.push(counts);
        rows.push(line);
    }
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, w))| {
                let pad = w - s.chars().count();
                if c == 0 {
                    format!("{s}{}", " ".repeat(pad))
                } else {
                    format!("{}{s}", " ".repeat(pad))
                }
            })
            .collect();
        writeln!(out, "| {} |", cells.join(" | ")).expect("writing to a string");
        if i == 1 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            writeln!(out, "|-{}-|", rule.join("-|-")).expect("writing to a string");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(method: &str, topology: &str, mean: f64) -> ResultRecord {
        ResultRecord {
            schema: BENCH_SCHEMA.into(),
            method: method.into(),
            topology: topology.into(),
            nodes: 15,
            edges: 18,
            workloads: 72,
            lower_bound: 2,
            mean_rounds: mean,
            std_rounds: 0.5,
            seeds: 10,
            topology_format: 1,
            workload_format: 1,
        }
    }

    #[test]
    fn table_layout() {
        let t = format_table(&[record("ps", "B1", 9.25), record("ring", "B1", 32.0)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines[1].contains("(15, 18)"));
        assert!(lines[4].contains("9.2 ± 0.5") || lines[4].contains("9.3 ± 0.5"));
        assert!(lines.iter().all(|l| l.chars().count() == lines[0].chars().count()));
    }

    #[test]
    fn empty_table_has_only_headers() {
        assert_eq!(format_table(&[]).lines().count(), 3);
    }
}
