//! The `arsched` command-line tool.

pub mod config;
pub mod report;

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use arsched_core::baselines::{run_scheduler, BaselineSettings, GreedyScheduler, Method, RoundSummary};
use arsched_core::env::EnvShared;
use arsched_core::seeds::derive_seed;
use arsched_core::sim::{replay_log, round_lower_bound, SimConfig};
use arsched_core::topology::{build, Preset, TopologyDocument, TopologyGraph, TopologyParams, TOPOLOGY_FORMAT_VERSION};
use arsched_core::train::{evaluate, rollout, Checkpoint, Trainer};
use arsched_core::workload::{
    build_trees, merge_workloads, Granularity, RingSync, WorkloadDump, WORKLOAD_DUMP_VERSION,
};
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::report::{format_table, write_csv, BaselineRow, EvalRow, ResultRecord, TrainLogRow, BENCH_SCHEMA};

/// A problem with the invocation rather than with the data; exits with 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(UsageError(msg.into()).into())
}

#[derive(Debug, Parser)]
#[command(name = "arsched", version, about = "AllReduce flow scheduling on data-center topologies")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for generated files (default `out`).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Only print errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a topology and write it as JSON.
    Topo(TopoArgs),
    /// Build the workload trees and write them as JSON.
    Trees(TreesArgs),
    /// Run one schedule and write its round log as JSON lines.
    Simulate(SimulateArgs),
    /// Run baseline schedulers over several seeds.
    Baseline(BaselineArgs),
    /// Train the tree and workload policies.
    Train(TrainArgs),
    /// Evaluate a trained checkpoint.
    Eval(EvalArgs),
    /// Compare methods across presets.
    Bench(BenchArgs),
    /// Re-check a topology file and a workload dump.
    Validate(ValidateArgs),
}

#[derive(Debug, Args, Default)]
pub struct TopologyArg {
    /// Preset (B1..B3, D1..D3, J1..J3), generator spec such as
    /// `bcube:3,1`, `dcell:4,1` or `jellyfish:10,4,10,0`, or a topology JSON file.
    #[arg(long, short)]
    pub topology: Option<String>,
}

#[derive(Debug, Args)]
pub struct TopoArgs {
    #[command(flatten)]
    pub topology: TopologyArg,
    /// Output file (default `<out-dir>/topology.json`).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TreesArgs {
    #[command(flatten)]
    pub topology: TopologyArg,
    /// Workload unit: `hop`, `segment` (default) or `route`.
    #[arg(long)]
    pub granularity: Option<Granularity>,
    /// Keep the per-route workloads separate.
    #[arg(long)]
    pub no_merge: bool,
    /// Output file (default `<out-dir>/workloads.json`).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub topology: TopologyArg,
    /// `ps`, `ring`, `greedy` or `rl`.
    #[arg(long)]
    pub method: Option<String>,
    /// Workload unit: `hop`, `segment` (default) or `route`.
    #[arg(long)]
    pub granularity: Option<Granularity>,
    /// Workload dump to schedule instead of building trees.
    #[arg(long)]
    pub workloads: Option<PathBuf>,
    /// Trained checkpoint for `rl`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output file (default `<out-dir>/rounds.jsonl`).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub topology: TopologyArg,
    /// Comma-separated subset of `ps,ring,greedy`.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Number of seeds to run.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Workload unit: `hop`, `segment` (default) or `route`.
    #[arg(long)]
    pub granularity: Option<Granularity>,
    /// Ring step ordering: `barrier` (default) or `pipelined`.
    #[arg(long)]
    pub ring_sync: Option<RingSync>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub topology: TopologyArg,
    /// Workload unit: `hop`, `segment` (default) or `route`.
    #[arg(long)]
    pub granularity: Option<Granularity>,
    /// Outer iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Tree-selector phases per outer iteration.
    #[arg(long)]
    pub fts_phases: Option<usize>,
    /// Workload-scheduler phases per outer iteration.
    #[arg(long)]
    pub ws_phases: Option<usize>,
    /// Episodes collected per phase.
    #[arg(long)]
    pub rollouts: Option<usize>,
    /// Adam step size.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Per-round discount.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Hidden layer width.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Checkpoint path (default `<out-dir>/checkpoint.json`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub topology: TopologyArg,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Number of seeds to run.
    #[arg(long)]
    pub seeds: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated preset labels.
    #[arg(long, value_delimiter = ',')]
    pub presets: Option<Vec<String>>,
    /// Comma-separated subset of `ps,ring,greedy,rl`; may be empty.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub methods: Option<Vec<String>>,
    /// Number of seeds to run.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Workload unit: `hop`, `segment` (default) or `route`.
    #[arg(long)]
    pub granularity: Option<Granularity>,
    /// `PRESET=PATH` checkpoint for the `rl` method; repeatable.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Topology JSON file.
    #[arg(long)]
    pub topology: PathBuf,
    /// Workload dump JSON file.
    #[arg(long)]
    pub workloads: PathBuf,
}

/// Flags merged over the config file.
struct RunContext {
    cfg: RunConfig,
    seed: u64,
    out_dir: PathBuf,
    quiet: bool,
}

impl RunContext {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn out_path(&self, explicit: Option<&PathBuf>, default: &str) -> anyhow::Result<PathBuf> {
        let p = match explicit {
            Some(p) => p.clone(),
            None => self.out_dir.join(default),
        };
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        }
        Ok(p)
    }

    fn granularity(&self, flag: Option<Granularity>) -> Granularity {
        flag.or(self.cfg.granularity).unwrap_or_default()
    }

    fn topology(&self, arg: &TopologyArg) -> anyhow::Result<(TopologyGraph, String)> {
        match arg.topology.as_ref().or(self.cfg.topology.as_ref()) {
            Some(spec) => resolve_topology(spec),
            None => usage("no topology given; pass --topology or set `topology` in the config"),
        }
    }
}

/// Label used in output files: the preset label, or the spec as given.
pub fn resolve_topology(spec: &str) -> anyhow::Result<(TopologyGraph, String)> {
    if let Some(p) = Preset::from_label(spec) {
        return Ok((p.build()?, p.label().to_string()));
    }
    if let Some((family, rest)) = spec.split_once(':') {
        let nums: Vec<u64> = rest
            .split(',')
            .map(|x| x.trim().parse::<u64>())
            .collect::<Result<_, _>>()
            .map_err(|_| UsageError(format!("bad numbers in topology spec `{spec}`")))?;
        let params = match (family.to_ascii_lowercase().as_str(), nums.as_slice()) {
            ("bcube", [n, k]) => TopologyParams::Bcube {
                n: *n as usize,
                k: *k as usize,
            },
            ("dcell", [n, l]) => TopologyParams::Dcell {
                n: *n as usize,
                level: *l as usize,
            },
            ("jellyfish", [s, d, h]) | ("jellyfish", [s, d, h, _]) => TopologyParams::Jellyfish {
                num_switches: *s as usize,
                switch_degree: *d as usize,
                num_servers: *h as usize,
                seed: nums.get(3).copied().unwrap_or(0),
            },
            _ => return usage(format!("unknown topology spec `{spec}`")),
        };
        let g = build(&params).map_err(|e| UsageError(format!("cannot build `{spec}`: {e}")))?;
        let label = Preset::matching(&params).map_or_else(|| spec.to_string(), |p| p.label().to_string());
        return Ok((g, label));
    }
    let path = Path::new(spec);
    if !path.exists() {
        return usage(format!("`{spec}` is neither a preset, a generator spec nor a file"));
    }
    let g = load_topology(path)?;
    let label = Preset::matching(g.params()).map_or_else(|| g.name().to_string(), |p| p.label().to_string());
    Ok((g, label))
}

fn load_topology(path: &Path) -> anyhow::Result<TopologyGraph> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let doc: TopologyDocument =
        serde_json::from_str(&text).with_context(|| format!("malformed topology file {}", path.display()))?;
    Ok(TopologyGraph::try_from(doc)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint<f64>> {
    if !path.exists() {
        return usage(format!("checkpoint {} does not exist", path.display()));
    }
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("malformed checkpoint {}", path.display()))
}

fn parse_method(s: &str) -> anyhow::Result<Method> {
    s.parse::<Method>().or_else(usage)
}

/// Outcome of a successful invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    ValidationFailed,
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::ValidationFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<Status> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| UsageError(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    let ctx = RunContext {
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        out_dir: cli.out_dir.clone().or(cfg.out_dir.clone()).unwrap_or_else(|| "out".into()),
        quiet: cli.quiet || cfg.quiet.unwrap_or(false),
        cfg,
    };
    match &cli.command {
        Command::Topo(a) => cmd_topo(&ctx, a),
        Command::Trees(a) => cmd_trees(&ctx, a),
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::Baseline(a) => cmd_baseline(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Bench(a) => cmd_bench(&ctx, a),
        Command::Validate(a) => cmd_validate(&ctx, a),
    }
}

fn cmd_topo(ctx: &RunContext, a: &TopoArgs) -> anyhow::Result<Status> {
    let (g, label) = ctx.topology(&a.topology)?;
    let path = ctx.out_path(a.output.as_ref(), "topology.json")?;
    write_json(&path, &TopologyDocument::from(&g))?;
    ctx.say(format!(
        "{label}: {} nodes ({} servers, {} switches), {} links -> {}",
        g.num_nodes(),
        g.num_servers(),
        g.num_switches(),
        g.num_links(),
        path.display()
    ));
    Ok(Status::Ok)
}

fn cmd_trees(ctx: &RunContext, a: &TreesArgs) -> anyhow::Result<Status> {
    let (g, label) = ctx.topology(&a.topology)?;
    let gran = ctx.granularity(a.granularity);
    let set = build_trees(&g, gran, !a.no_merge)?;
    let path = ctx.out_path(a.output.as_ref(), "workloads.json")?;
    write_json(&path, &WorkloadDump::new(&label, gran, !a.no_merge, &set))?;
    ctx.say(format!(
        "{label}: {} trees, {} workloads ({} granularity{}) -> {}",
        set.trees().len(),
        set.len(),
        gran.as_str(),
        if a.no_merge { ", unmerged" } else { "" },
        path.display()
    ));
    Ok(Status::Ok)
}

fn cmd_simulate(ctx: &RunContext, a: &SimulateArgs) -> anyhow::Result<Status> {
    let (g, label) = ctx.topology(&a.topology)?;
    let method = a
        .method
        .clone()
        .or(ctx.cfg.scheduler.method.clone())
        .unwrap_or_else(|| "greedy".into());
    let config = SimConfig::for_topology(g.num_servers(), g.num_links());
    let seed = derive_seed(ctx.seed, "scheduler", 0);
    let (set, log) = if method == "rl" {
        let path = a.checkpoint.clone().or(ctx.cfg.eval.checkpoint.clone());
        let Some(path) = path else {
            return usage("method `rl` needs --checkpoint");
        };
        let ck = load_checkpoint(&path)?;
        let set = Arc::new(build_trees(&g, ck.granularity, true)?);
        let shared = EnvShared::new(Arc::clone(&set), ck.config.env);
        ck.check(&shared)?;
        let ep = rollout(
            &shared,
            &ck.policies.tree,
            &ck.policies.flow,
            arsched_core::policy::ActMode::Greedy,
            seed,
            None,
            1.0,
        )?;
        (set, ep.log)
    } else {
        let m = parse_method(&method)?;
        let set = match &a.workloads {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
                let dump: WorkloadDump = serde_json::from_str(&text)
                    .with_context(|| format!("malformed workload dump {}", p.display()))?;
                dump.into_set()?
            }
            None => settings(ctx, a.granularity, None).workloads(m, &g)?,
        };
        let set = Arc::new(set);
        let r = run_scheduler(Arc::clone(&set), &mut GreedyScheduler, &config, seed);
        (set, r.log)
    };
    let state = replay_log(&set, &log)?;
    let metrics = state.collect_metrics(&config);
    let path = ctx.out_path(a.output.as_ref(), "rounds.jsonl")?;
    let mut out = std::io::BufWriter::new(
        fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?,
    );
    for r in &log {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    ctx.say(format!(
        "{label} {method}: {} rounds, {} workloads, mean utilization {:.3}{} -> {}",
        metrics.total_rounds,
        metrics.sent_workloads,
        metrics.mean_utilization,
        if metrics.complete { "" } else { " (incomplete)" },
        path.display()
    ));
    Ok(Status::Ok)
}

fn settings(ctx: &RunContext, gran: Option<Granularity>, sync: Option<RingSync>) -> BaselineSettings {
    let mut s = BaselineSettings::default();
    let gran = ctx.granularity(gran);
    s.tree_granularity = gran;
    s.ps_granularity = gran;
    s.ring_granularity = gran;
    if let Some(sync) = sync.or(ctx.cfg.scheduler.ring_sync) {
        s.ring_sync = sync;
    }
    s
}

fn scheduler_seeds(ctx: &RunContext, n: u64) -> Vec<u64> {
    (0..n).map(|i| derive_seed(ctx.seed, "scheduler", i)).collect()
}

fn cmd_baseline(ctx: &RunContext, a: &BaselineArgs) -> anyhow::Result<Status> {
    let (g, label) = ctx.topology(&a.topology)?;
    let methods = a
        .methods
        .clone()
        .or(ctx.cfg.scheduler.methods.clone())
        .unwrap_or_else(|| vec!["ps".into(), "ring".into(), "greedy".into()]);
    let methods: Vec<Method> = methods.iter().map(|m| parse_method(m)).collect::<Result<_, _>>()?;
    let n = a.seeds.or(ctx.cfg.scheduler.seeds).unwrap_or(10);
    let settings = settings(ctx, a.granularity, a.ring_sync);
    let config = SimConfig::for_topology(g.num_servers(), g.num_links());
    let seeds = scheduler_seeds(ctx, n);
    let mut rows = Vec::new();
    for m in methods {
        let set = Arc::new(settings.workloads(m, &g)?);
        let mut rounds = Vec::new();
        for &seed in &seeds {
            let r = run_scheduler(Arc::clone(&set), &mut GreedyScheduler, &config, seed);
            rounds.push(r.metrics.total_rounds);
            rows.push(BaselineRow {
                method: m.as_str().into(),
                topology: label.clone(),
                seed,
                rounds: r.metrics.total_rounds,
                mean_utilization: r.metrics.mean_utilization,
            });
        }
        let s = RoundSummary::from_rounds(rounds);
        ctx.say(format!(
            "{label} {:<6} {} workloads: {:.2} ± {:.2} rounds over {n} seeds",
            m.as_str(),
            set.len(),
            s.mean,
            s.std
        ));
    }
    let path = ctx.out_path(None, "baseline.csv")?;
    write_csv(&path, &rows)?;
    ctx.say(format!("-> {}", path.display()));
    Ok(Status::Ok)
}

fn cmd_train(ctx: &RunContext, a: &TrainArgs) -> anyhow::Result<Status> {
    let (g, label) = ctx.topology(&a.topology)?;
    let ck_path = ctx.out_path(a.checkpoint.as_ref(), "checkpoint.json")?;
    let log_path = ctx.out_path(None, "train_log.csv")?;
    let mut trainer: Trainer<f64> = match &a.resume {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            let set = Arc::new(build_trees(&g, ck.granularity, true)?);
            let shared = EnvShared::new(set, ck.config.env);
            let mut t = Trainer::from_checkpoint(shared, ck)?;
            if let Some(i) = a.iterations {
                t.config.outer_iterations = i;
            }
            t
        }
        None => {
            let mut tc = ctx.cfg.train.clone();
            tc.seed = ctx.seed;
            if let Some(v) = a.iterations {
                tc.outer_iterations = v;
            }
            if let Some(v) = a.fts_phases {
                tc.fts_phases = v;
            }
            if let Some(v) = a.ws_phases {
                tc.ws_phases = v;
            }
            if let Some(v) = a.rollouts {
                tc.rollouts = v;
            }
            if let Some(v) = a.learning_rate {
                tc.learning_rate = v;
            }
            if let Some(v) = a.gamma {
                tc.gamma = v;
            }
            if let Some(v) = a.hidden {
                tc.hidden = v;
            }
            tc.validate().map_err(|e| UsageError(e.to_string()))?;
            let gran = ctx.granularity(a.granularity);
            let set = Arc::new(build_trees(&g, gran, true)?);
            let shared = EnvShared::new(set, tc.env);
            Trainer::new(shared, tc)?
        }
    };
    let gran = a
        .resume
        .as_ref()
        .map(|p| load_checkpoint(p).map(|c| c.granularity))
        .transpose()?
        .unwrap_or_else(|| ctx.granularity(a.granularity));
    ctx.say(format!(
        "{label}: {} trees, {} workloads, greedy scheduler {} rounds",
        trainer.shared().num_trees(),
        trainer.shared().total(),
        trainer.shared().greedy_rounds
    ));
    let mut save_error = None;
    trainer.train(
        |p| {
            ctx.say(format!(
                "phase {:>4} {:<3} mean rounds {:>7.2} return {:>8.3} loss {:>9.4}",
                p.iteration,
                p.phase.as_str(),
                p.mean_rounds,
                p.mean_return,
                p.loss
            ))
        },
        |t| {
            let result = write_json(&ck_path, &t.checkpoint(&label, gran)).and_then(|_| {
                let rows: Vec<TrainLogRow> = t
                    .log
                    .iter()
                    .map(|p| TrainLogRow {
                        phase: p.phase.as_str().into(),
                        iteration: p.iteration,
                        mean_rounds: p.mean_rounds,
                        mean_return: p.mean_return,
                        loss: p.loss,
                    })
                    .collect();
                write_csv(&log_path, &rows)
            });
            if let Err(e) = result {
                save_error.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = save_error {
        return Err(e);
    }
    let eval = trainer.evaluate(&[derive_seed(ctx.seed, "eval", 0)])?;
    ctx.say(format!(
        "greedy-mode evaluation: {:.1} rounds -> {}",
        eval.mean,
        ck_path.display()
    ));
    Ok(Status::Ok)
}

fn cmd_eval(ctx: &RunContext, a: &EvalArgs) -> anyhow::Result<Status> {
    let path = a.checkpoint.clone().or(ctx.cfg.eval.checkpoint.clone());
    let Some(path) = path else {
        return usage("eval needs --checkpoint");
    };
    let ck = load_checkpoint(&path)?;
    let spec = a
        .topology
        .topology
        .clone()
        .or(ctx.cfg.topology.clone())
        .unwrap_or_else(|| ck.topology.clone());
    let (g, label) = resolve_topology(&spec)?;
    let set = Arc::new(build_trees(&g, ck.granularity, true)?);
    let shared = EnvShared::new(set, ck.config.env);
    ck.check(&shared)?;
    let n = a.seeds.or(ctx.cfg.eval.seeds).unwrap_or(10);
    let seeds: Vec<u64> = (0..n).map(|i| derive_seed(ctx.seed, "eval", i)).collect();
    let summary = evaluate(&shared, &ck.policies.tree, &ck.policies.flow, &seeds)?;
    let rows: Vec<EvalRow> = seeds
        .iter()
        .zip(&summary.rounds)
        .map(|(s, r)| EvalRow {
            topology: label.clone(),
            seed: *s,
            rounds: *r,
        })
        .collect();
    let out = ctx.out_path(None, "eval.csv")?;
    write_csv(&out, &rows)?;
    ctx.say(format!(
        "{label}: {:.2} ± {:.2} rounds over {n} seeds (greedy scheduler {}) -> {}",
        summary.mean,
        summary.std,
        shared.greedy_rounds,
        out.display()
    ));
    Ok(Status::Ok)
}

fn cmd_bench(ctx: &RunContext, a: &BenchArgs) -> anyhow::Result<Status> {
    let presets = a
        .presets
        .clone()
        .or(ctx.cfg.bench.presets.clone())
        .unwrap_or_else(|| Preset::ALL.iter().map(|p| p.label().to_string()).collect());
    let presets: Vec<Preset> = presets
        .iter()
        .map(|p| Preset::from_label(p).ok_or_else(|| UsageError(format!("unknown preset `{p}`"))))
        .collect::<Result<_, _>>()?;
    let methods: Vec<String> = a
        .methods
        .clone()
        .or(ctx.cfg.bench.methods.clone())
        .unwrap_or_else(|| vec!["ps".into(), "ring".into(), "greedy".into()])
        .into_iter()
        .filter(|m| !m.is_empty())
        .collect();
    let mut checkpoints = ctx.cfg.bench.checkpoints.clone();
    for c in &a.checkpoints {
        let Some((k, v)) = c.split_once('=') else {
            return usage(format!("--checkpoint expects PRESET=PATH, got `{c}`"));
        };
        checkpoints.insert(k.to_string(), PathBuf::from(v));
    }
    for m in &methods {
        if m != "rl" {
            parse_method(m)?;
        }
    }
    let n = a.seeds.or(ctx.cfg.bench.seeds).unwrap_or(10);
    let seeds = scheduler_seeds(ctx, n);
    let settings = settings(ctx, a.granularity, None);
    let mut records = Vec::new();
    for p in &presets {
        let g = p.build()?;
        let config = SimConfig::for_topology(g.num_servers(), g.num_links());
        for m in &methods {
            let (set, summary) = if m == "rl" {
                let path = checkpoints
                    .iter()
                    .find(|(k, _)| k.eq_ignore_ascii_case(p.label()))
                    .map(|(_, v)| v.clone());
                let Some(path) = path else {
                    return usage(format!("method `rl` needs a checkpoint for {}", p.label()));
                };
                let ck = load_checkpoint(&path)?;
                let set = Arc::new(build_trees(&g, ck.granularity, true)?);
                let shared = EnvShared::new(Arc::clone(&set), ck.config.env);
                ck.check(&shared)?;
                let summary = evaluate(&shared, &ck.policies.tree, &ck.policies.flow, &seeds)?;
                (set, summary)
            } else {
                let method = parse_method(m)?;
                let set = Arc::new(settings.workloads(method, &g)?);
                let rounds = seeds
                    .iter()
                    .map(|s| run_scheduler(Arc::clone(&set), &mut GreedyScheduler, &config, *s).metrics.total_rounds)
                    .collect();
                (set, RoundSummary::from_rounds(rounds))
            };
            records.push(ResultRecord {
                schema: BENCH_SCHEMA.into(),
                method: m.clone(),
                topology: p.label().into(),
                nodes: g.num_nodes(),
                edges: g.num_links(),
                workloads: set.len(),
                lower_bound: round_lower_bound(&set),
                mean_rounds: summary.mean,
                std_rounds: summary.std,
                seeds: seeds.len(),
                topology_format: TOPOLOGY_FORMAT_VERSION,
                workload_format: WORKLOAD_DUMP_VERSION,
            });
        }
    }
    let csv_path = ctx.out_path(None, "bench.csv")?;
    write_csv(&csv_path, &records)?;
    let table = format_table(&records);
    let txt_path = ctx.out_path(None, "bench.txt")?;
    fs::write(&txt_path, &table).with_context(|| format!("cannot write {}", txt_path.display()))?;
    ctx.say(table.trim_end());
    ctx.say(format!("-> {} and {}", csv_path.display(), txt_path.display()));
    Ok(Status::Ok)
}

/// One line of the validation report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Re-checks a topology and a workload dump against each other.
pub fn validate_files(topology: &Path, workloads: &Path) -> anyhow::Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut push = |name, passed, detail: String| checks.push(Check { name, passed, detail });
    let g = match load_topology(topology) {
        Ok(g) => {
            push("topology", true, format!("{} nodes, {} links, connected", g.num_nodes(), g.num_links()));
            g
        }
        Err(e) => {
            push("topology", false, format!("{e:#}"));
            return Ok(checks);
        }
    };
    let preset = Preset::matching(g.params());
    if let Some(p) = preset {
        let r = p.reference();
        let ok = (g.num_nodes(), g.num_links()) == (r.nodes, r.edges);
        push(
            "topology-size",
            ok,
            format!("({}, {}) vs reference ({}, {})", g.num_nodes(), g.num_links(), r.nodes, r.edges),
        );
    }
    let dump: WorkloadDump = match fs::read_to_string(workloads)
        .map_err(anyhow::Error::from)
        .and_then(|t| serde_json::from_str(&t).map_err(anyhow::Error::from))
    {
        Ok(d) => d,
        Err(e) => {
            push("workload-format", false, format!("{e:#}"));
            return Ok(checks);
        }
    };
    let (merged, gran, declared) = (dump.merged, dump.granularity, dump.total);
    let link_field = dump.num_links;
    let link_ok = link_field == g.num_links();
    let set = match dump.into_set() {
        Ok(s) => {
            push("workload-format", true, format!("{} trees", s.trees().len()));
            s
        }
        Err(e) => {
            push("workload-format", false, e.to_string());
            return Ok(checks);
        }
    };
    push(
        "total-field",
        declared == set.len(),
        format!("declared {declared}, found {}", set.len()),
    );
    push(
        "link-count",
        link_ok,
        format!("dump {link_field}, topology {}", g.num_links()),
    );
    let bad_path = set.workloads().iter().find(|w| !hops_form_path(&g, w));
    let consistent = link_ok && bad_path.is_none();
    push(
        "hop-paths",
        bad_path.is_none(),
        match bad_path {
            Some(w) => format!("workload {} does not run from its tail to its head", w.id.0),
            None => "every workload follows adjacent links".into(),
        },
    );
    let acyclic = set.topological_order().is_some();
    push(
        "acyclicity",
        acyclic,
        if acyclic {
            format!("longest prefix chain {}", set.longest_chain())
        } else {
            "prefix relation has a cycle".into()
        },
    );
    let misplaced = set
        .trees()
        .iter()
        .flat_map(|t| t.ids().map(move |id| (t.root, id)))
        .find(|(root, id)| root.is_some_and(|r| set.get(*id).root != r));
    push(
        "partition",
        misplaced.is_none(),
        match misplaced {
            Some((_, id)) => format!("workload {} sits in another root's tree", id.0),
            None => "each workload belongs to exactly one tree with its root".into(),
        },
    );
    if merged && acyclic && consistent {
        let changed = (0..set.trees().len()).find(|t| {
            let tree = set.tree(*t);
            merge_workloads(&g, &tree).len() != tree.len()
        });
        push(
            "merge-idempotence",
            changed.is_none(),
            match changed {
                Some(t) => format!("tree {t} shrinks when merged again"),
                None => "merging again changes nothing".into(),
            },
        );
    }
    if let Some(p) = preset.filter(|_| merged && gran == Granularity::Segment) {
        let target = p.reference().workloads;
        let exact = p.workload_count_is_exact();
        push(
            "workload-count",
            !exact || set.len() == target,
            format!(
                "{} vs reference {target}{}",
                set.len(),
                if exact { "" } else { " (informational)" }
            ),
        );
    }
    if acyclic && consistent {
        let config = SimConfig::for_topology(g.num_servers(), g.num_links());
        let set = Arc::new(set);
        let r = run_scheduler(Arc::clone(&set), &mut GreedyScheduler, &config, 0);
        let sent: usize = r.log.iter().map(|x| x.n_on).sum();
        let lb = round_lower_bound(&set);
        push(
            "simulation",
            sent == set.len() && r.metrics.total_rounds >= lb,
            format!("{} rounds (lower bound {lb}), {sent} of {} sent", r.metrics.total_rounds, set.len()),
        );
    }
    Ok(checks)
}

fn hops_form_path(g: &TopologyGraph, w: &arsched_core::workload::Workload) -> bool {
    if [w.root, w.tail, w.head].iter().any(|n| n.index() >= g.num_nodes()) {
        return false;
    }
    let mut at = w.tail;
    for h in &w.hops {
        if h.link.index() >= g.num_links() {
            return false;
        }
        let (from, to) = g.endpoints(*h);
        if from != at {
            return false;
        }
        at = to;
    }
    at == w.head
}

fn cmd_validate(ctx: &RunContext, a: &ValidateArgs) -> anyhow::Result<Status> {
    for p in [&a.topology, &a.workloads] {
        if !p.exists() {
            bail!(UsageError(format!("{} does not exist", p.display())));
        }
    }
    let checks = validate_files(&a.topology, &a.workloads)?;
    for c in &checks {
        ctx.say(format!("{} {:<18} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed == 0 {
        ctx.say(format!("all {} checks passed", checks.len()));
        Ok(Status::Ok)
    } else {
        eprintln!("{failed} of {} checks failed", checks.len());
        Ok(Status::ValidationFailed)
    }
}
