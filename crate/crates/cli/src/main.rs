//! `ptychoflow`: generate synthetic ptychography experiments, replay them
//! through a simulated beamline-to-compute federation, reconstruct views, and
//! report wall-time breakdowns and scaling.
//!
//! Exit codes: 0 success, 1 runtime/workflow failure, 2 usage or
//! configuration error. Human-readable output goes to stderr; machine
//! artifacts (datasets, journals, CSVs, reconstructions) go to files.

mod experiment;
mod providers;
mod slots_cmd;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use anyhow::Context;
use clap::{Parser, Subcommand};

use phantoms::{generate_experiment, make_probe, PhantomKind, PhantomSpec};
use ptycho_core::{
    load_dataset, reconstruct, save_recon, Complex64, ComplexField2D, CoreError, NoiseModel,
    ReconConfig, SolverKind,
};

use experiment::{cmd_run_experiment, ExperimentArgs};

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

/// True once Ctrl-C has been received; long-running loops poll this.
pub fn interrupted() -> bool {
    INTERRUPTED.load(Ordering::SeqCst)
}

extern "C" fn on_sigint(_: libc::c_int) {
    INTERRUPTED.store(true, Ordering::SeqCst);
}

#[derive(Parser)]
#[command(
    name = "ptychoflow",
    version,
    about = "Simulated federated ptychography pipeline: generate, replay, reconstruct, report"
)]
struct Cli {
    /// Log filter (e.g. `info`, `debug`, `flow_engine=debug`).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic experiment: one scan directory per view.
    Generate {
        /// JSON file with a full phantom spec; overrides the other flags.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Phantom family: siemens-star, coin, flat, or catalyst.
        #[arg(long, default_value = "siemens-star", value_parser = parse_kind)]
        kind: PhantomKind,
        /// Object is object-size x object-size pixels.
        #[arg(long, default_value_t = 64)]
        object_size: usize,
        /// Probe is probe-size x probe-size pixels.
        #[arg(long, default_value_t = 16)]
        probe_size: usize,
        /// Raster step between probe positions, in pixels.
        #[arg(long, default_value_t = 8)]
        step: usize,
        /// Number of views (independent scans) to generate.
        #[arg(long, default_value_t = 1)]
        views: usize,
        /// Mean photons in the brightest frame pixel.
        #[arg(long, default_value_t = 1e4)]
        photon_scale: f64,
        /// Apply Poisson counting noise to the frames.
        #[arg(long)]
        noise: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dataset output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a dataset through the transfer/reconstruct/transfer flow.
    RunExperiment {
        /// Dataset directory produced by `generate`.
        #[arg(long)]
        dataset: PathBuf,
        /// Work/output directory (endpoints, journals, CSVs).
        #[arg(long)]
        out: PathBuf,
        /// Deployment JSON; synthesized under --out when omitted.
        #[arg(long)]
        deployment: Option<PathBuf>,
        /// Flow definition JSON; a built-in 3-state flow when omitted.
        #[arg(long)]
        flow: Option<PathBuf>,
        /// Seconds between published scans.
        #[arg(long, default_value_t = 0.5)]
        interval: f64,
        /// Compute node count, or a comma-separated sweep (e.g. 1,2,4,8)
        /// that reruns the batch per count and emits scaling.csv.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        nodes: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        slots_per_node: usize,
        /// Solver iterations per view.
        #[arg(long, default_value_t = 100)]
        iterations: usize,
        /// Slots requested per run; the solver uses one partition per slot.
        #[arg(long, default_value_t = 1)]
        partitions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fault injection: corrupt the outbound transfer of this scan id.
        #[arg(long)]
        corrupt_scan: Option<String>,
    },
    /// Reconstruct a single view dataset locally, without the federation.
    Reconstruct {
        /// One scan directory (contains meta.json).
        #[arg(long)]
        input: PathBuf,
        /// Output directory for object.bin / probe.bin / recon.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        iterations: usize,
        /// Grid partitions solved in parallel.
        #[arg(long, default_value_t = 1)]
        partitions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Solver: gradient-descent or epie.
        #[arg(long, default_value = "gradient-descent", value_parser = parse_solver)]
        solver: SolverKind,
        /// Relaxation factor in (0, 1].
        #[arg(long, default_value_t = 0.5)]
        step_size: f64,
        /// Keep the stored probe fixed instead of refining it.
        #[arg(long)]
        freeze_probe: bool,
    },
    /// Summarize journals into breakdown and scaling tables.
    Report {
        /// Journal file or directory (searched recursively for *.jsonl);
        /// repeatable.
        #[arg(long = "journal")]
        journals: Vec<PathBuf>,
        /// Where breakdown.csv / scaling.csv are written.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Scaling measurement `n=seconds` (repeatable), e.g. `2=64.1`.
        #[arg(long = "series", value_parser = parse_series)]
        series: Vec<(usize, f64)>,
    },
    /// Slot-file utilities.
    #[command(subcommand)]
    Slots(SlotsCmd),
}

#[derive(Subcommand)]
enum SlotsCmd {
    /// Create a slot file with node1..nodeN, each with the given slots.
    Init {
        #[arg(long)]
        slot_file: PathBuf,
        #[arg(long, default_value_t = 1)]
        nodes: usize,
        #[arg(long, default_value_t = 8)]
        slots_per_node: usize,
    },
    /// Print the slot table.
    Show {
        #[arg(long)]
        slot_file: PathBuf,
    },
    /// Free slots left busy by dead holders (all, or one holder).
    Repair {
        #[arg(long)]
        slot_file: PathBuf,
        #[arg(long)]
        holder: Option<String>,
    },
    /// Acquire/release loop for multi-process lock stress tests.
    #[command(hide = true)]
    StressWorker {
        #[arg(long)]
        slot_file: PathBuf,
        #[arg(long)]
        witness_dir: PathBuf,
        #[arg(long)]
        worker_id: usize,
        #[arg(long, default_value_t = 16)]
        cycles: usize,
        /// Microseconds to hold each slot.
        #[arg(long, default_value_t = 200)]
        hold_us: u64,
    },
}

fn parse_kind(s: &str) -> Result<PhantomKind, String> {
    match s {
        "siemens-star" => Ok(PhantomKind::SiemensStar),
        "coin" => Ok(PhantomKind::Coin),
        "flat" => Ok(PhantomKind::Flat),
        "catalyst" => Ok(PhantomKind::Catalyst),
        other => Err(format!(
            "unknown phantom kind '{other}' (expected siemens-star, coin, flat, or catalyst)"
        )),
    }
}

fn parse_solver(s: &str) -> Result<SolverKind, String> {
    match s {
        "gradient-descent" => Ok(SolverKind::GradientDescent),
        "epie" => Ok(SolverKind::Epie),
        other => Err(format!(
            "unknown solver '{other}' (expected gradient-descent or epie)"
        )),
    }
}

fn parse_series(s: &str) -> Result<(usize, f64), String> {
    let (n, t) = s
        .split_once('=')
        .ok_or_else(|| format!("expected n=seconds, got '{s}'"))?;
    let n: usize = n.trim().parse().map_err(|e| format!("bad n in '{s}': {e}"))?;
    let t: f64 = t.trim().parse().map_err(|e| format!("bad time in '{s}': {e}"))?;
    Ok((n, t))
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .target(env_logger::Target::Stderr)
        .init();
    let handler: extern "C" fn(libc::c_int) = on_sigint;
    unsafe {
        libc::signal(libc::SIGINT, handler as libc::sighandler_t);
    }
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    };
    std::process::exit(code);
}

fn run(command: Command) -> anyhow::Result<i32> {
    match command {
        Command::Generate {
            spec,
            kind,
            object_size,
            probe_size,
            step,
            views,
            photon_scale,
            noise,
            seed,
            out,
        } => {
            let spec = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading spec {}", path.display()))?;
                    match serde_json::from_str::<PhantomSpec>(&text) {
                        Ok(s) => s,
                        Err(e) => {
                            eprintln!("error: spec {} is invalid: {e}", path.display());
                            return Ok(2);
                        }
                    }
                }
                None => PhantomSpec {
                    kind,
                    object_shape: (object_size, object_size),
                    probe_shape: (probe_size, probe_size),
                    step,
                    views,
                    photon_scale,
                    noise: if noise {
                        NoiseModel::Poisson
                    } else {
                        NoiseModel::None
                    },
                    seed,
                },
            };
            cmd_generate(&spec, &out)
        }
        Command::RunExperiment {
            dataset,
            out,
            deployment,
            flow,
            interval,
            nodes,
            slots_per_node,
            iterations,
            partitions,
            seed,
            corrupt_scan,
        } => cmd_run_experiment(&ExperimentArgs {
            dataset,
            out,
            deployment,
            flow,
            interval,
            nodes,
            slots_per_node,
            iterations,
            partitions,
            seed,
            corrupt_scan,
        }),
        Command::Reconstruct {
            input,
            out,
            iterations,
            partitions,
            seed,
            solver,
            step_size,
            freeze_probe,
        } => cmd_reconstruct(
            &input,
            &out,
            ReconConfig {
                iterations,
                solver,
                step_size,
                recover_probe: !freeze_probe,
                partitions,
                seed,
            },
        ),
        Command::Report {
            journals,
            out_dir,
            series,
        } => cmd_report(&journals, &out_dir, &series),
        Command::Slots(slots) => match slots {
            SlotsCmd::Init {
                slot_file,
                nodes,
                slots_per_node,
            } => slots_cmd::cmd_init(&slot_file, nodes, slots_per_node),
            SlotsCmd::Show { slot_file } => slots_cmd::cmd_show(&slot_file),
            SlotsCmd::Repair { slot_file, holder } => {
                slots_cmd::cmd_repair(&slot_file, holder.as_deref())
            }
            SlotsCmd::StressWorker {
                slot_file,
                witness_dir,
                worker_id,
                cycles,
                hold_us,
            } => slots_cmd::cmd_stress_worker(&slot_file, &witness_dir, worker_id, cycles, hold_us),
        },
    }
}

fn cmd_generate(spec: &PhantomSpec, out: &Path) -> anyhow::Result<i32> {
    if let Err(e) = spec.validate() {
        eprintln!("error: {e}");
        return Ok(2);
    }
    let dirs = generate_experiment(spec, out)?;
    for dir in &dirs {
        let meta_path = dir.join("meta.json");
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&meta_path)?)
                .with_context(|| format!("reading back {}", meta_path.display()))?;
        let name = dir.file_name().unwrap_or_default().to_string_lossy();
        eprintln!(
            "{name}: {} frames of {}x{} ({} object, noise {}, seed {})",
            meta["count"],
            meta["probe_shape"][0],
            meta["probe_shape"][1],
            spec.kind.as_str(),
            meta["noise"],
            meta["seed"],
        );
    }
    eprintln!("{} view(s) under {}", dirs.len(), out.display());
    Ok(0)
}

fn cmd_reconstruct(input: &Path, out: &Path, config: ReconConfig) -> anyhow::Result<i32> {
    let loaded = match load_dataset(input) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot load dataset {}: {e}", input.display());
            return Ok(1);
        }
    };
    let probe = loaded
        .probe
        .unwrap_or_else(|| make_probe(loaded.dataset.probe_shape, config.seed));
    let object = ComplexField2D::filled(loaded.dataset.object_shape, Complex64::new(1.0, 0.0));
    let result = match reconstruct(&loaded.dataset, &object, &probe, &config) {
        Ok(r) => r,
        Err(e @ (CoreError::InvalidConfig(_) | CoreError::TooManyPartitions { .. })) => {
            eprintln!("error: {e}");
            return Ok(2);
        }
        Err(e) => {
            eprintln!("error: reconstruction failed: {e}");
            return Ok(1);
        }
    };
    save_recon(out, &result)?;
    let first = result.residual_history.first().copied().unwrap_or(0.0);
    let last = result.residual_history.last().copied().unwrap_or(0.0);
    eprintln!(
        "{} iterations, residual {first:.3e} -> {last:.3e}, wrote {}",
        result.iterations_run,
        out.display()
    );
    Ok(0)
}

fn cmd_report(journals: &[PathBuf], out_dir: &Path, series: &[(usize, f64)]) -> anyhow::Result<i32> {
    if journals.is_empty() && series.is_empty() {
        eprintln!("error: nothing to report; pass --journal and/or --series");
        return Ok(2);
    }
    std::fs::create_dir_all(out_dir)?;

    if !journals.is_empty() {
        let mut files = Vec::new();
        for path in journals {
            collect_jsonl(path, &mut files)?;
        }
        if files.is_empty() {
            eprintln!("error: no .jsonl journals under the given paths");
            return Ok(2);
        }
        files.sort();
        let table = match metrics::ingest_events(&files) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: {e}");
                return Ok(1);
            }
        };
        let rows = match metrics::all_run_breakdowns(&table) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: {e}");
                return Ok(1);
            }
        };
        let path = out_dir.join("breakdown.csv");
        metrics::write_breakdown_csv(&path, &rows)?;
        eprintln!(
            "{:<12} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "run", "incoming_s", "compute_s", "outgoing_s", "others_s", "total_s"
        );
        for r in &rows {
            eprintln!(
                "{:<12} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
                r.id, r.incoming_s, r.compute_s, r.outgoing_s, r.others_s, r.total_s
            );
        }
        if rows.len() > 1 {
            let ids = table.run_ids();
            let b = metrics::breakdown(&table, &ids)?;
            eprintln!(
                "{:<12} {:>10} {:>10.3} {:>10} {:>10.3} {:>10.3}  (concurrent span)",
                b.id, "-", b.compute_s, "-", b.others_s, b.total_s
            );
        }
        eprintln!("wrote {}", path.display());
    }

    if !series.is_empty() {
        let map: BTreeMap<usize, f64> = series.iter().copied().collect();
        let report = match metrics::scaling_report(&map) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: {e}");
                return Ok(1);
            }
        };
        let path = out_dir.join("scaling.csv");
        metrics::write_scaling_csv(&path, &report)?;
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
    Ok(0)
}

fn collect_jsonl(path: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    if path.is_file() {
        out.push(path.to_path_buf());
        return Ok(());
    }
    if path.is_dir() {
        for entry in std::fs::read_dir(path)
            .with_context(|| format!("reading {}", path.display()))?
        {
            let child = entry?.path();
            if child.is_dir() {
                collect_jsonl(&child, out)?;
            } else if child.extension().is_some_and(|x| x == "jsonl") {
                out.push(child);
            }
        }
        return Ok(());
    }
    anyhow::bail!("journal path {} does not exist", path.display());
}
