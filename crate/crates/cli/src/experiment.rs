//! The `run-experiment` orchestration: replay scans from a dataset onto the
//! beamline endpoint, start one flow run per published scan, wait for the
//! batch, verify reconstruction outputs back at the beamline, and write the
//! timing reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc::RecvTimeoutError;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use serde_json::json;

use compute_endpoint::{ComputeEndpoint, EndpointConfig, QueueDelayModel};
use facility_sim::{
    extract_scan_id, prepare_remote_dirs, replay_acquisition, tree_checksum, Deployment, Endpoint,
    EndpointRole, EventLog, LinkSpec,
};
use flow_engine::{parse_definition, Engine, EngineConfig, FlowDefinition, RunStatus};
use metrics::{breakdown, ingest_events, scaling_csv, scaling_report, write_breakdown_csv};

use crate::providers::{register_recon_function, ComputeProvider, TransferProvider};

/// Default three-state flow: stage the scan in, reconstruct, stage the
/// result back out.
pub const DEFAULT_FLOW: &str = include_str!("../../../configs/ptycho-flow.json");

const TOKEN: &str = "ptychoflow-demo-token";

pub struct ExperimentArgs {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub deployment: Option<PathBuf>,
    pub flow: Option<PathBuf>,
    pub interval: f64,
    pub nodes: Vec<usize>,
    pub slots_per_node: usize,
    pub iterations: usize,
    pub partitions: usize,
    pub seed: u64,
    pub corrupt_scan: Option<String>,
}

/// Runs the experiment; returns the process exit code (0 ok, 1 failed runs,
/// 2 unusable configuration).
pub fn cmd_run_experiment(args: &ExperimentArgs) -> anyhow::Result<i32> {
    let views = match discover_views(&args.dataset) {
        Ok(v) if v.is_empty() => {
            eprintln!(
                "error: no scan directories under {}",
                args.dataset.display()
            );
            return Ok(2);
        }
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e:#}");
            return Ok(2);
        }
    };

    let flow_text = match &args.flow {
        Some(path) => std::fs::read_to_string(path)
            .with_context(|| format!("reading flow definition {}", path.display()))?,
        None => DEFAULT_FLOW.to_string(),
    };
    let definition = match parse_definition(&flow_text) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: flow definition is invalid: {e}");
            return Ok(2);
        }
    };

    if args.nodes.is_empty() {
        eprintln!("error: --nodes needs at least one node count");
        return Ok(2);
    }
    let sweep = args.nodes.len() > 1;
    if sweep && args.deployment.is_some() {
        eprintln!(
            "error: a node-count sweep synthesizes one deployment per count; \
             --deployment only applies to a single --nodes value"
        );
        return Ok(2);
    }
    if sweep && args.corrupt_scan.is_some() {
        eprintln!("error: --corrupt-scan is not meaningful during a scaling sweep");
        return Ok(2);
    }

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    let mut all_failures: Vec<String> = Vec::new();
    let mut series: BTreeMap<usize, f64> = BTreeMap::new();
    for &n in &args.nodes {
        if n == 0 {
            eprintln!("error: node count must be at least 1");
            return Ok(2);
        }
        let batch_dir = if sweep {
            args.out.join(format!("nodes-{n}"))
        } else {
            args.out.clone()
        };
        std::fs::create_dir_all(&batch_dir)
            .with_context(|| format!("creating {}", batch_dir.display()))?;
        eprintln!(
            "== {} view(s) through {} node(s) x {} slot(s) -> {}",
            views.len(),
            n,
            args.slots_per_node,
            batch_dir.display()
        );
        let batch = run_batch(args, &definition, &views, n, &batch_dir)?;
        if batch.compute_span > 0.0 {
            series.insert(n, batch.compute_span);
        }
        all_failures.extend(batch.failures);
        if crate::interrupted() {
            eprintln!("interrupted; slots released, exiting");
            return Ok(1);
        }
    }

    if sweep {
        match scaling_report(&series) {
            Ok(report) => {
                let path = args.out.join("scaling.csv");
                std::fs::write(&path, scaling_csv(&report))
                    .with_context(|| format!("writing {}", path.display()))?;
                eprintln!("scaling (base {} node(s), compute span):", report.base_n);
                eprintln!("  n   time_s      speedup  efficiency");
                for p in &report.points {
                    eprintln!(
                        "  {:<3} {:<11.3} {:<8.3} {:.3}",
                        p.n, p.time_s, p.speedup, p.efficiency
                    );
                }
                eprintln!(
                    "  (figures carry a +/-{:.0}% measurement noise band)",
                    report.noise_band * 100.0
                );
                eprintln!("wrote {}", path.display());
            }
            Err(e) => {
                eprintln!("error: no usable scaling series: {e}");
                all_failures.push("scaling series".into());
            }
        }
    }

    if all_failures.is_empty() {
        Ok(0)
    } else {
        eprintln!("failed runs:");
        for f in &all_failures {
            eprintln!("  {f}");
        }
        Ok(1)
    }
}

struct BatchResult {
    failures: Vec<String>,
    /// Span from first task start to last task end, for scaling series.
    compute_span: f64,
}

fn run_batch(
    args: &ExperimentArgs,
    definition: &FlowDefinition,
    views: &[String],
    nodes: usize,
    dir: &Path,
) -> anyhow::Result<BatchResult> {
    let journals = dir.join("journals");
    let flows_dir = journals.join("flows");
    std::fs::create_dir_all(&flows_dir)
        .with_context(|| format!("creating {}", flows_dir.display()))?;

    let deployment = Arc::new(match &args.deployment {
        Some(path) => Deployment::load(path)?,
        None => {
            let dep = synthesize_deployment(dir);
            dep.save(&dir.join("deployment.json"))?;
            dep
        }
    });
    deployment.ensure_roots()?;
    let beamline = endpoint_by_role(&deployment, EndpointRole::Beamline)?.clone();
    let compute = endpoint_by_role(&deployment, EndpointRole::Compute)?.clone();

    let facility_log = Arc::new(EventLog::open(&journals.join("facility.jsonl"))?);

    let endpoint = ComputeEndpoint::new(EndpointConfig {
        slot_file: dir.join("slots.json"),
        slots_per_node: args.slots_per_node,
        max_nodes: nodes,
        queue_delay: QueueDelayModel::default(),
        seed: args.seed,
        journal: Some(journals.join("endpoint.jsonl")),
    })?;
    let recon_fn = register_recon_function(&endpoint, compute.root.clone());

    let engine = Engine::new(EngineConfig {
        max_concurrent: 64,
        journal_dir: Some(flows_dir.clone()),
    });
    engine.register(
        "transfer",
        Arc::new(TransferProvider {
            deployment: deployment.clone(),
            token: TOKEN.into(),
            log: facility_log.clone(),
            corrupt_scan: args.corrupt_scan.clone(),
        }),
    );
    engine.register(
        "compute",
        Arc::new(ComputeProvider {
            endpoint: endpoint.clone(),
            functions: std::collections::HashMap::from([("reconstruct-view".into(), recon_fn)]),
        }),
    );

    let replay = replay_acquisition(
        &args.dataset,
        &beamline,
        args.interval,
        views,
        Some(facility_log.clone()),
    )?;

    // scan id -> run id, in arrival order.
    let mut runs: Vec<(String, String)> = Vec::new();
    let mut failures: Vec<String> = Vec::new();
    loop {
        if runs.len() + failures.len() == views.len() {
            break;
        }
        match replay.events.recv_timeout(Duration::from_millis(100)) {
            Ok(event) => {
                let scan_id = match extract_scan_id(&event.scan) {
                    Ok(id) => id,
                    Err(e) => {
                        failures.push(format!("{}: {e}", event.scan));
                        continue;
                    }
                };
                prepare_remote_dirs(&compute, &scan_id)?;
                let input = json!({
                    "scan_id": scan_id,
                    "scan_dir": event.scan,
                    "input_dir": format!("input/{scan_id}"),
                    "recon_dir": format!("recon/{scan_id}"),
                    "iterations": args.iterations,
                    "seed": args.seed,
                    "slots": args.partitions.max(1),
                });
                match engine.start_run(definition, input) {
                    Ok(run_id) => {
                        eprintln!("scan {} -> {}", event.scan, run_id);
                        runs.push((scan_id, run_id));
                    }
                    Err(e) => failures.push(format!("{}: {e}", event.scan)),
                }
            }
            Err(RecvTimeoutError::Timeout) => {
                if crate::interrupted() {
                    break;
                }
            }
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
    if let Err(e) = replay.join() {
        failures.push(format!("acquisition replay: {e}"));
    }

    for (scan_id, run_id) in &runs {
        let status = loop {
            let run = engine.get_run(run_id)?;
            if run.status != RunStatus::Running {
                break run.status;
            }
            if crate::interrupted() {
                break RunStatus::Running;
            }
            std::thread::sleep(Duration::from_millis(25));
        };
        match status {
            RunStatus::Succeeded => {
                let rel = Path::new("recon").join(scan_id);
                let at_beamline = tree_checksum(&beamline.root.join(&rel));
                let at_compute = tree_checksum(&compute.root.join(&rel));
                match (at_beamline, at_compute) {
                    (Ok(b), Ok(c)) if b == c => {
                        eprintln!("{run_id} (scan {scan_id}): succeeded, recon verified");
                    }
                    (Ok(b), Ok(c)) => failures.push(format!(
                        "{run_id} (scan {scan_id}): recon checksum mismatch at beamline \
                         ({b} vs {c})"
                    )),
                    (b, c) => failures.push(format!(
                        "{run_id} (scan {scan_id}): recon missing ({}/{})",
                        summarize(b),
                        summarize(c)
                    )),
                }
            }
            RunStatus::Failed => {
                let run = engine.get_run(run_id)?;
                let detail = run
                    .state_log
                    .last()
                    .and_then(|r| r.error.clone())
                    .unwrap_or_else(|| "failed".into());
                failures.push(format!("{run_id} (scan {scan_id}): {detail}"));
            }
            RunStatus::Running => {
                failures.push(format!("{run_id} (scan {scan_id}): interrupted"));
            }
        }
    }

    // Stop workers and wait for in-flight bodies, releasing their slots.
    endpoint.shutdown();

    let compute_span = write_reports(dir, &journals)?;
    Ok(BatchResult {
        failures,
        compute_span,
    })
}

/// Ingests the batch journals, writes `breakdown.csv`, and returns the batch
/// compute span (first task start to last task end over completed runs).
fn write_reports(dir: &Path, journals: &Path) -> anyhow::Result<f64> {
    let mut files: Vec<PathBuf> = Vec::new();
    let flows_dir = journals.join("flows");
    if flows_dir.is_dir() {
        let mut flow_files: Vec<PathBuf> = std::fs::read_dir(&flows_dir)?
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        flow_files.sort();
        files.extend(flow_files);
    }
    for name in ["endpoint.jsonl", "facility.jsonl"] {
        let path = journals.join(name);
        if path.is_file() {
            files.push(path);
        }
    }

    let table = match ingest_events(&files) {
        Ok(t) => t,
        Err(e) => {
            log::warn!("journals not ingestible, skipping reports: {e}");
            return Ok(0.0);
        }
    };

    let mut rows = Vec::new();
    let mut complete: Vec<String> = Vec::new();
    for run_id in table.run_ids() {
        match breakdown(&table, std::slice::from_ref(&run_id)) {
            Ok(b) => {
                rows.push(b);
                complete.push(run_id);
            }
            Err(e) => log::warn!("{run_id}: no breakdown: {e}"),
        }
    }
    let csv_path = dir.join("breakdown.csv");
    write_breakdown_csv(&csv_path, &rows)?;
    eprintln!("wrote {}", csv_path.display());

    if complete.is_empty() {
        return Ok(0.0);
    }
    Ok(breakdown(&table, &complete)?.compute_s)
}

fn summarize<E: std::fmt::Display>(r: Result<String, E>) -> String {
    match r {
        Ok(digest) => digest[..12.min(digest.len())].to_string(),
        Err(e) => e.to_string(),
    }
}

fn endpoint_by_role(deployment: &Deployment, role: EndpointRole) -> anyhow::Result<&Endpoint> {
    deployment
        .endpoints
        .iter()
        .find(|e| e.role == role)
        .ok_or_else(|| anyhow::anyhow!("deployment has no {role:?} endpoint"))
}

fn synthesize_deployment(dir: &Path) -> Deployment {
    Deployment {
        endpoints: vec![
            Endpoint {
                id: "beamline".into(),
                root: dir.join("beamline"),
                role: EndpointRole::Beamline,
            },
            Endpoint {
                id: "compute".into(),
                root: dir.join("compute"),
                role: EndpointRole::Compute,
            },
        ],
        links: vec![
            LinkSpec {
                src: "beamline".into(),
                dst: "compute".into(),
                bandwidth_bytes_per_s: 10e6,
                latency_s: 0.0,
            },
            LinkSpec {
                src: "compute".into(),
                dst: "beamline".into(),
                bandwidth_bytes_per_s: 10e6,
                latency_s: 0.0,
            },
        ],
        token: TOKEN.into(),
    }
}

/// Scan view directories (containing `meta.json`) under a dataset root,
/// ordered by numeric scan id where possible.
pub fn discover_views(dataset: &Path) -> anyhow::Result<Vec<String>> {
    let entries = std::fs::read_dir(dataset)
        .with_context(|| format!("reading dataset directory {}", dataset.display()))?;
    let mut views: Vec<String> = Vec::new();
    for entry in entries {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() && path.join("meta.json").is_file() {
            views.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    views.sort_by(|a, b| {
        let na = extract_scan_id(a).ok().and_then(|s| s.parse::<u64>().ok());
        let nb = extract_scan_id(b).ok().and_then(|s| s.parse::<u64>().ok());
        match (na, nb) {
            (Some(x), Some(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
            _ => a.cmp(b),
        }
    });
    Ok(views)
}
