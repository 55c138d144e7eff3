//! Monte Carlo experiment harness: simulates every configured protocol at
//! every consensus iteration count over a fixed network, aggregates
//! accuracy and communication cost, and writes the result tables.
//!
//! All outputs except `timing.csv` are byte-identical across re-runs of the
//! same configuration; timing is wall-clock and kept in its own file so the
//! deterministic tables stay reproducible.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{ExperimentConfig, ProtocolName, TruthMode};
use crate::error::{Error, Result};
use crate::filter::{predict, update, BirthModel, MotionModel, SensorModel};
use crate::gaussian::{reduce, GaussianMixture, MergeScheme, ReductionConfig};
use crate::metrics::{consensus_efficiency, OspaConfig};
use crate::network::{
    generate_network, run_consensus, ConsensusProtocol, EvalContext, NetworkGraph, NodeState,
};
use crate::scenario::{
    default_region, generate_measurements, scripted_truth, sensor_for, simulate_truth,
    GroundTruth, SensorFrames,
};
use crate::unscented::UtParams;

/// One application of the splitmix64 mixing function.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for one purpose (`stream`) of one Monte Carlo run.
pub fn derive_seed(master: u64, run: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master).wrapping_add(run)).wrapping_add(stream))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Order-sensitive checksum of every measurement scalar, over the exact
/// bit patterns.
pub fn frames_checksum(frames: &[SensorFrames]) -> u64 {
    let mut hash = FNV_OFFSET;
    for sensor in frames {
        for step in 0..sensor.len() {
            for z in sensor.frame(step) {
                for v in z.iter() {
                    hash = fnv1a(hash, &v.to_bits().to_le_bytes());
                }
            }
        }
    }
    hash
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct StepMetrics {
    network_ospa: f64,
    mean_cardinality: f64,
    tuples: usize,
    fusion_seconds: f64,
}

struct RunResult {
    true_cardinality: Vec<usize>,
    baseline: Vec<StepMetrics>,
    /// Indexed `[protocol][positive-t index][step]`.
    evaluated: Vec<Vec<Vec<StepMetrics>>>,
}

struct SimSetup<'a> {
    graph: &'a NetworkGraph,
    sensors: &'a [SensorModel],
    motion: &'a MotionModel,
    birth: &'a BirthModel,
    filter_reduction: &'a ReductionConfig,
    scheme: MergeScheme,
    ut: UtParams,
    ospa: &'a OspaConfig,
}

/// Simulates one full filtering trajectory under a fusion rule: per step,
/// every node predicts, updates against its own frame, reduces, then the
/// network runs `t` consensus iterations; the fused posteriors become the
/// next step's priors.
fn simulate_trajectory(
    setup: &SimSetup,
    truth: &GroundTruth,
    frames: &[SensorFrames],
    protocol: &ConsensusProtocol,
    t: usize,
) -> Result<Vec<StepMetrics>> {
    let n = setup.graph.len();
    let mut priors = vec![GaussianMixture::empty(4); n];
    let mut out = Vec::with_capacity(truth.steps());
    for step in 0..truth.steps() {
        let mut states = Vec::with_capacity(n);
        for (node, prior) in priors.iter().enumerate() {
            let predicted = predict(prior, setup.motion, setup.birth)?;
            let posterior =
                update(&predicted, &setup.sensors[node], frames[node].frame(step), &setup.ut)?;
            let reduced = reduce(&posterior, setup.filter_reduction, setup.scheme)?;
            states.push(NodeState::from_mixture(reduced));
        }
        let truth_positions = truth.live_positions(step);
        let eval = EvalContext { truth_positions: &truth_positions, ospa: setup.ospa, step };
        let reports = run_consensus(setup.graph, &mut states, protocol, t, &eval, None)?;
        let last = reports.last().expect("at least the pre-communication report exists");
        out.push(StepMetrics {
            network_ospa: last.network_ospa(),
            mean_cardinality: last.mean_cardinality(),
            tuples: reports.iter().map(|r| r.total_tuples()).sum(),
            fusion_seconds: reports.iter().map(|r| r.total_fusion_seconds()).sum(),
        });
        priors = states.into_iter().map(|s| s.mixture).collect();
    }
    Ok(out)
}

fn simulate_run(
    cfg: &ExperimentConfig,
    setup: &SimSetup,
    protocols: &[(ProtocolName, ConsensusProtocol)],
    positive_t: &[usize],
    shared_truth: Option<&GroundTruth>,
    run: usize,
) -> Result<RunResult> {
    let master = cfg.master_seed;
    let sampled;
    let truth = match shared_truth {
        Some(t) => t,
        None => {
            sampled = simulate_truth(
                cfg.scenario_kind(),
                cfg.steps,
                setup.motion,
                setup.birth,
                &default_region(),
                derive_seed(master, run as u64, 0),
            )?;
            &sampled
        }
    };
    let frames: Vec<SensorFrames> = setup
        .sensors
        .iter()
        .enumerate()
        .map(|(s, sensor)| {
            generate_measurements(truth, sensor, derive_seed(master, run as u64, 1 + s as u64))
        })
        .collect::<Result<_>>()?;
    let checksum = frames_checksum(&frames);

    let baseline = simulate_trajectory(setup, truth, &frames, &ConsensusProtocol::None, 0)?;
    let mut evaluated = Vec::with_capacity(protocols.len());
    for (_, protocol) in protocols {
        let mut per_t = Vec::with_capacity(positive_t.len());
        for &t in positive_t {
            per_t.push(simulate_trajectory(setup, truth, &frames, protocol, t)?);
        }
        evaluated.push(per_t);
    }
    if frames_checksum(&frames) != checksum {
        return Err(Error::Domain(
            "measurement frames changed while protocols were being evaluated".into(),
        ));
    }
    Ok(RunResult {
        true_cardinality: (0..truth.steps()).map(|s| truth.cardinality(s)).collect(),
        baseline,
        evaluated,
    })
}

/// One row of the aggregate table: a protocol evaluated at one consensus
/// iteration count.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub protocol: String,
    pub t: usize,
    /// Network distance to truth, averaged over runs and steps.
    pub time_avg_network_ospa: f64,
    /// Tuples the whole network transmits per filtering step, averaged
    /// over runs and steps.
    pub mean_tuples_per_step: f64,
    /// Tuples per run, averaged over runs.
    pub total_tuples: f64,
    /// Accuracy gained per transmitted tuple relative to the
    /// no-communication baseline; absent when nothing is transmitted.
    pub consensus_efficiency: Option<f64>,
    mean_fusion_seconds_per_step: f64,
}

/// Everything `run` produced: where the tables were written and the
/// aggregate rows for programmatic use.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub aggregates: Vec<AggregateRow>,
}

struct Cell<'a> {
    name: &'a str,
    t: usize,
    /// Per run, per step.
    metrics: Vec<&'a Vec<StepMetrics>>,
}

fn collect_cells<'a>(
    protocols: &'a [(ProtocolName, ConsensusProtocol)],
    t_values: &[usize],
    positive_t: &[usize],
    results: &'a [RunResult],
) -> Vec<Cell<'a>> {
    let mut cells = Vec::new();
    cells.push(Cell {
        name: "none",
        t: 0,
        metrics: results.iter().map(|r| &r.baseline).collect(),
    });
    for (p, (name, _)) in protocols.iter().enumerate() {
        for &t in t_values {
            let metrics = if t == 0 {
                results.iter().map(|r| &r.baseline).collect()
            } else {
                let ti = positive_t.iter().position(|&v| v == t).expect("t is evaluated");
                results.iter().map(|r| &r.evaluated[p][ti]).collect()
            };
            cells.push(Cell { name: name.as_str(), t, metrics });
        }
    }
    cells
}

fn mean_over_cell(cell: &Cell, f: impl Fn(&StepMetrics) -> f64) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for run in &cell.metrics {
        for m in run.iter() {
            total += f(m);
            count += 1;
        }
    }
    if count == 0 { 0.0 } else { total / count as f64 }
}

fn write_table(dir: &Path, name: &str, content: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, content)?;
    files.push(path);
    Ok(())
}

/// Runs the configured experiment and writes every result table into
/// `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let started = std::time::Instant::now();
    let region = default_region();
    let graph = generate_network(
        cfg.network.nodes,
        cfg.network.comm_radius,
        &region,
        cfg.network.target_diameter,
        cfg.network.seed,
    )?;
    let sensors: Vec<SensorModel> = graph
        .nodes()
        .iter()
        .map(|n| sensor_for(n, cfg.filter.clutter_rate))
        .collect::<Result<_>>()?;
    let motion = cfg.motion()?;
    let birth = cfg.birth()?;
    let filter_reduction = cfg.filter_reduction()?;
    let ospa = cfg.ospa_config()?;
    let setup = SimSetup {
        graph: &graph,
        sensors: &sensors,
        motion: &motion,
        birth: &birth,
        filter_reduction: &filter_reduction,
        scheme: cfg.merge_scheme(),
        ut: cfg.ut_params()?,
        ospa: &ospa,
    };
    let protocols: Vec<(ProtocolName, ConsensusProtocol)> = cfg
        .protocol_names()
        .into_iter()
        .map(|name| Ok((name, cfg.protocol(name)?)))
        .collect::<Result<_>>()?;
    let t_values = cfg.t_values();
    let positive_t: Vec<usize> = t_values.iter().copied().filter(|&t| t > 0).collect();
    let shared_truth = match cfg.truth {
        TruthMode::Scripted => Some(scripted_truth(cfg.scenario_kind(), cfg.steps)?),
        TruthMode::Random => None,
    };

    let results: Vec<RunResult> = (0..cfg.mc_runs)
        .into_par_iter()
        .map(|run| simulate_run(cfg, &setup, &protocols, &positive_t, shared_truth.as_ref(), run))
        .collect::<Result<_>>()?;

    let cells = collect_cells(&protocols, &t_values, &positive_t, &results);
    if cells.is_empty() || results.is_empty() {
        return Err(Error::Domain("the experiment produced no result rows".into()));
    }

    let mut raw = String::from(
        "protocol,t,run,step,network_ospa,mean_cardinality,true_cardinality,tuples\n",
    );
    for cell in &cells {
        for (run, metrics) in cell.metrics.iter().enumerate() {
            for (step, m) in metrics.iter().enumerate() {
                let _ = writeln!(
                    raw,
                    "{},{},{},{},{},{},{},{}",
                    cell.name,
                    cell.t,
                    run,
                    step,
                    m.network_ospa,
                    m.mean_cardinality,
                    results[run].true_cardinality[step],
                    m.tuples
                );
            }
        }
    }

    let baseline_ospa = mean_over_cell(&cells[0], |m| m.network_ospa);
    let steps = cfg.steps as f64;
    let aggregates: Vec<AggregateRow> = cells
        .iter()
        .map(|cell| {
            let time_avg = mean_over_cell(cell, |m| m.network_ospa);
            let mean_tuples = mean_over_cell(cell, |m| m.tuples as f64);
            AggregateRow {
                protocol: cell.name.to_string(),
                t: cell.t,
                time_avg_network_ospa: time_avg,
                mean_tuples_per_step: mean_tuples,
                total_tuples: mean_tuples * steps,
                consensus_efficiency: consensus_efficiency(baseline_ospa, time_avg, mean_tuples),
                mean_fusion_seconds_per_step: mean_over_cell(cell, |m| m.fusion_seconds),
            }
        })
        .collect();

    let mut aggregate = String::from(
        "protocol,t,time_avg_network_ospa,mean_tuples_per_step,total_tuples,consensus_efficiency\n",
    );
    for row in &aggregates {
        let ce = row.consensus_efficiency.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            aggregate,
            "{},{},{},{},{},{}",
            row.protocol,
            row.t,
            row.time_avg_network_ospa,
            row.mean_tuples_per_step,
            row.total_tuples,
            ce
        );
    }

    let mut ospa_vs_step = String::from("protocol,t,step,mean_network_ospa\n");
    for cell in &cells {
        for step in 0..cfg.steps {
            let mean = cell.metrics.iter().map(|run| run[step].network_ospa).sum::<f64>()
                / cell.metrics.len() as f64;
            let _ = writeln!(ospa_vs_step, "{},{},{},{}", cell.name, cell.t, step, mean);
        }
    }

    let mut ospa_vs_t = String::from("protocol,t,time_avg_network_ospa\n");
    let mut cost_vs_t = String::from("protocol,t,mean_tuples_per_step\n");
    let mut ce_vs_t = String::from("protocol,t,consensus_efficiency\n");
    for row in &aggregates {
        let _ = writeln!(ospa_vs_t, "{},{},{}", row.protocol, row.t, row.time_avg_network_ospa);
        let _ = writeln!(cost_vs_t, "{},{},{}", row.protocol, row.t, row.mean_tuples_per_step);
        let ce = row.consensus_efficiency.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(ce_vs_t, "{},{},{}", row.protocol, row.t, ce);
    }

    let mut timing = String::from("protocol,t,mean_fusion_seconds_per_step,total_fusion_seconds\n");
    for (cell, row) in cells.iter().zip(&aggregates) {
        let total: f64 = cell
            .metrics
            .iter()
            .map(|run| run.iter().map(|m| m.fusion_seconds).sum::<f64>())
            .sum();
        let _ = writeln!(
            timing,
            "{},{},{},{}",
            row.protocol, row.t, row.mean_fusion_seconds_per_step, total
        );
    }

    let mut summary = String::new();
    let _ = writeln!(summary, "scenario: {:?}", cfg.scenario_kind());
    let _ = writeln!(
        summary,
        "network: {} nodes, {} edges, diameter {}",
        graph.len(),
        graph.edges().len(),
        graph.diameter()
    );
    let _ = writeln!(
        summary,
        "runs: {}, steps: {}, master seed: {}",
        cfg.mc_runs, cfg.steps, cfg.master_seed
    );
    let _ = writeln!(summary);
    let _ = writeln!(
        summary,
        "{:<10} {:>3} {:>18} {:>18} {:>22}",
        "protocol", "t", "avg network OSPA", "tuples per step", "efficiency per tuple"
    );
    for row in &aggregates {
        let ce = row
            .consensus_efficiency
            .map(|v| format!("{v:.6}"))
            .unwrap_or_else(|| "-".to_string());
        let _ = writeln!(
            summary,
            "{:<10} {:>3} {:>18.4} {:>18.2} {:>22}",
            row.protocol, row.t, row.time_avg_network_ospa, row.mean_tuples_per_step, ce
        );
    }
    let _ = writeln!(summary);
    let _ = writeln!(summary, "wall seconds: {:.3}", started.elapsed().as_secs_f64());

    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    write_table(out_dir, "raw.csv", &raw, &mut files)?;
    write_table(out_dir, "aggregate.csv", &aggregate, &mut files)?;
    write_table(out_dir, "ospa_vs_step.csv", &ospa_vs_step, &mut files)?;
    write_table(out_dir, "ospa_vs_t.csv", &ospa_vs_t, &mut files)?;
    write_table(out_dir, "cost_vs_t.csv", &cost_vs_t, &mut files)?;
    write_table(out_dir, "ce_vs_t.csv", &ce_vs_t, &mut files)?;
    write_table(out_dir, "timing.csv", &timing, &mut files)?;
    write_table(out_dir, "summary.txt", &summary, &mut files)?;
    Ok(ExperimentOutput { out_dir: out_dir.to_path_buf(), files, aggregates })
}
