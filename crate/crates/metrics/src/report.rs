//! Timing breakdowns and scaling reports over an ingested event table,
//! plus the fixed-schema CSV emitters.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::MetricsError;
use crate::events::{EventTable, RunRecord};

/// Declared measurement tolerance for scaling comparisons: speedup and
/// efficiency figures from replayed experiments carry up to this much
/// relative noise (scheduling jitter, transfer pacing granularity).
pub const NOISE_BAND: f64 = 0.10;

/// Wall-clock accounting for one run or one concurrent batch. All components
/// are non-negative and expressed in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingBreakdown {
    pub id: String,
    pub incoming_s: f64,
    pub compute_s: f64,
    pub outgoing_s: f64,
    pub others_s: f64,
    pub total_s: f64,
}

/// Splits the wall time of the selected runs into incoming transfer,
/// compute, outgoing transfer, and unattributed remainder.
///
/// A single run is accounted sequentially: transfer states before the first
/// compute state count as incoming, transfer states after it as outgoing,
/// and compute time is the running interval of the run's linked tasks
/// (queue wait is excluded, so it lands in `others_s` along with engine
/// overhead). Several runs form a concurrent batch: total is the span from
/// first run start to last run finish, compute is the span from first task
/// start to last task end, and per-direction transfer times are not
/// separable, so they are reported as zero.
pub fn breakdown(table: &EventTable, run_ids: &[String]) -> Result<TimingBreakdown, MetricsError> {
    if run_ids.is_empty() {
        return Err(MetricsError::EmptySelection);
    }
    let mut runs = Vec::with_capacity(run_ids.len());
    for id in run_ids {
        let run = table
            .runs
            .get(id)
            .ok_or_else(|| MetricsError::UnknownRun(id.clone()))?;
        runs.push(complete(run)?);
    }
    if let [(run, started, finished)] = runs[..] {
        return single_run(table, run, started, finished);
    }
    batch(table, &runs, run_ids.len())
}

/// Breakdown of every run in the table, in run-id order.
pub fn all_run_breakdowns(table: &EventTable) -> Result<Vec<TimingBreakdown>, MetricsError> {
    table
        .runs
        .keys()
        .map(|id| breakdown(table, std::slice::from_ref(id)))
        .collect()
}

fn complete(run: &RunRecord) -> Result<(&RunRecord, f64, f64), MetricsError> {
    let started = run.started_ts.ok_or_else(|| MetricsError::IncompleteRun {
        run_id: run.run_id.clone(),
        missing: "run_started".into(),
    })?;
    let finished = run.finished_ts.ok_or_else(|| MetricsError::IncompleteRun {
        run_id: run.run_id.clone(),
        missing: "run_finished".into(),
    })?;
    Ok((run, started, finished))
}

fn single_run(
    table: &EventTable,
    run: &RunRecord,
    started: f64,
    finished: f64,
) -> Result<TimingBreakdown, MetricsError> {
    let total = (finished - started).max(0.0);

    let first_compute = run
        .states
        .iter()
        .filter(|s| s.action_type == "compute")
        .map(|s| s.started)
        .fold(f64::INFINITY, f64::min);

    let mut incoming = 0.0;
    let mut outgoing = 0.0;
    for state in &run.states {
        if state.action_type != "transfer" {
            continue;
        }
        let duration = (state.finished - state.started).max(0.0);
        if state.started < first_compute {
            incoming += duration;
        } else {
            outgoing += duration;
        }
    }

    let tasks = table.tasks_for_run(&run.run_id);
    let compute: f64 = if tasks.is_empty() {
        // No endpoint journal was ingested for this run; fall back to the
        // engine's view of the compute states (includes queue wait).
        run.states
            .iter()
            .filter(|s| s.action_type == "compute")
            .map(|s| (s.finished - s.started).max(0.0))
            .sum()
    } else {
        tasks
            .iter()
            .filter_map(|t| Some((t.finished? - t.started?).max(0.0)))
            .sum()
    };

    let others = (total - incoming - compute - outgoing).max(0.0);
    Ok(TimingBreakdown {
        id: run.run_id.clone(),
        incoming_s: incoming,
        compute_s: compute,
        outgoing_s: outgoing,
        others_s: others,
        total_s: total,
    })
}

fn batch(
    table: &EventTable,
    runs: &[(&RunRecord, f64, f64)],
    count: usize,
) -> Result<TimingBreakdown, MetricsError> {
    let first_start = runs.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let last_finish = runs.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    let total = (last_finish - first_start).max(0.0);

    let mut task_start = f64::INFINITY;
    let mut task_end = f64::NEG_INFINITY;
    for (run, _, _) in runs {
        for task in table.tasks_for_run(&run.run_id) {
            if let (Some(s), Some(f)) = (task.started, task.finished) {
                task_start = task_start.min(s);
                task_end = task_end.max(f);
            }
        }
    }
    if !task_start.is_finite() {
        // No linked tasks anywhere: use the compute states instead.
        for (run, _, _) in runs {
            for state in run.states.iter().filter(|s| s.action_type == "compute") {
                task_start = task_start.min(state.started);
                task_end = task_end.max(state.finished);
            }
        }
    }
    let compute = if task_start.is_finite() {
        (task_end - task_start).max(0.0)
    } else {
        0.0
    };

    Ok(TimingBreakdown {
        id: format!("batch-{count}"),
        incoming_s: 0.0,
        compute_s: compute,
        outgoing_s: 0.0,
        others_s: (total - compute).max(0.0),
        total_s: total,
    })
}

/// One measured configuration in a strong-scaling series.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingPoint {
    pub n: usize,
    pub time_s: f64,
    pub speedup: f64,
    pub efficiency: f64,
}

/// Strong-scaling summary relative to the smallest measured configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub base_n: usize,
    pub points: Vec<ScalingPoint>,
    /// Relative noise tolerance the figures should be read with.
    pub noise_band: f64,
}

/// Computes speedup and parallel efficiency against the smallest `n` in the
/// series. Speedup at the base is exactly 1 by construction.
pub fn scaling_report(series: &BTreeMap<usize, f64>) -> Result<ScalingReport, MetricsError> {
    let (&base_n, &base_t) = series.iter().next().ok_or(MetricsError::MissingBase)?;
    if base_t <= 0.0 {
        return Err(MetricsError::MissingBase);
    }
    let points = series
        .iter()
        .map(|(&n, &t)| {
            let speedup = if t > 0.0 { base_t / t } else { f64::INFINITY };
            let efficiency = speedup / (n as f64 / base_n as f64);
            ScalingPoint {
                n,
                time_s: t,
                speedup,
                efficiency,
            }
        })
        .collect();
    Ok(ScalingReport {
        base_n,
        points,
        noise_band: NOISE_BAND,
    })
}

/// One measured configuration in a weak-scaling series: `work` units spread
/// over `n` workers took `time_s` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakScalingPoint {
    pub n: usize,
    pub work: f64,
    pub time_s: f64,
    pub efficiency: f64,
}

/// Weak-scaling efficiency against the smallest configuration:
/// `(work/work_base) / ((n/n_base) * (t/t_base))`. Doubling both problem
/// size and workers at constant wall time scores 1.0.
pub fn weak_scaling_report(
    series: &[(usize, f64, f64)],
) -> Result<Vec<WeakScalingPoint>, MetricsError> {
    let mut sorted: Vec<_> = series.to_vec();
    sorted.sort_by_key(|&(n, _, _)| n);
    let &(base_n, base_work, base_t) = sorted.first().ok_or(MetricsError::MissingBase)?;
    if base_t <= 0.0 || base_work <= 0.0 {
        return Err(MetricsError::MissingBase);
    }
    Ok(sorted
        .iter()
        .map(|&(n, work, t)| {
            let scale = n as f64 / base_n as f64;
            let efficiency = (work / base_work) / (scale * (t / base_t));
            WeakScalingPoint {
                n,
                work,
                time_s: t,
                efficiency,
            }
        })
        .collect())
}

/// Renders breakdown rows with the fixed schema
/// `run_id,incoming_s,compute_s,outgoing_s,others_s,total_s`.
pub fn breakdown_csv(rows: &[TimingBreakdown]) -> String {
    let mut out = String::from("run_id,incoming_s,compute_s,outgoing_s,others_s,total_s\n");
    for r in rows {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.id, r.incoming_s, r.compute_s, r.outgoing_s, r.others_s, r.total_s
        )
        .expect("write to string");
    }
    out
}

/// Renders a scaling report with the fixed schema `n,time_s,speedup,efficiency`.
pub fn scaling_csv(report: &ScalingReport) -> String {
    let mut out = String::from("n,time_s,speedup,efficiency\n");
    for p in &report.points {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6}",
            p.n, p.time_s, p.speedup, p.efficiency
        )
        .expect("write to string");
    }
    out
}

pub fn write_breakdown_csv(path: &Path, rows: &[TimingBreakdown]) -> Result<(), MetricsError> {
    std::fs::write(path, breakdown_csv(rows)).map_err(|e| MetricsError::io(path, e))
}

pub fn write_scaling_csv(path: &Path, report: &ScalingReport) -> Result<(), MetricsError> {
    std::fs::write(path, scaling_csv(report)).map_err(|e| MetricsError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{ingest_events, write_journal};
    use serde_json::json;

    /// Run with in=2 s, a linked 5 s task, out=1 s, total=9 s.
    fn golden_journals(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let flow = dir.join("flow.jsonl");
        let endpoint = dir.join("endpoint.jsonl");
        write_journal(
            &flow,
            &[
                json!({"type":"run_started","ts":100.0,"run_id":"run-00001","definition":"f","input":{}}),
                json!({"type":"state","run_id":"run-00001","action_type":"transfer","state":"transfer_in",
                       "attempt":1,"started":100.0,"finished":102.0,"outcome":"success"}),
                json!({"type":"state","run_id":"run-00001","action_type":"compute","state":"reconstruct",
                       "attempt":1,"started":102.0,"finished":108.0,"outcome":"success"}),
                json!({"type":"state","run_id":"run-00001","action_type":"transfer","state":"transfer_out",
                       "attempt":1,"started":108.0,"finished":109.0,"outcome":"success"}),
                json!({"type":"run_finished","ts":109.0,"run_id":"run-00001","status":"succeeded"}),
            ],
        )
        .unwrap();
        write_journal(
            &endpoint,
            &[json!({"type":"task","event":"finished","ts":107.5,"task_id":"task-00001",
                     "run_id":"run-00001","state":"done",
                     "queued_at":102.0,"started":102.5,"finished":107.5})],
        )
        .unwrap();
        (flow, endpoint)
    }

    #[test]
    fn known_intervals_leave_one_second_of_others() {
        let dir = tempfile::tempdir().unwrap();
        let (flow, endpoint) = golden_journals(dir.path());
        let table = ingest_events(&[flow, endpoint]).unwrap();
        let b = breakdown(&table, &["run-00001".into()]).unwrap();
        assert!((b.incoming_s - 2.0).abs() < 1e-9);
        assert!((b.compute_s - 5.0).abs() < 1e-9);
        assert!((b.outgoing_s - 1.0).abs() < 1e-9);
        assert!((b.total_s - 9.0).abs() < 1e-9);
        assert!((b.others_s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn components_are_never_negative() {
        let dir = tempfile::tempdir().unwrap();
        let (flow, endpoint) = golden_journals(dir.path());
        let table = ingest_events(&[flow, endpoint]).unwrap();
        let b = breakdown(&table, &["run-00001".into()]).unwrap();
        for v in [b.incoming_s, b.compute_s, b.outgoing_s, b.others_s, b.total_s] {
            assert!(v >= 0.0);
        }
    }

    #[test]
    fn compute_without_task_journal_uses_engine_states() {
        let dir = tempfile::tempdir().unwrap();
        let (flow, _) = golden_journals(dir.path());
        let table = ingest_events(&[flow]).unwrap();
        let b = breakdown(&table, &["run-00001".into()]).unwrap();
        // Engine's view of the compute state is 6 s (includes queue wait).
        assert!((b.compute_s - 6.0).abs() < 1e-9);
        assert!((b.others_s - 0.0).abs() < 1e-9);
    }

    #[test]
    fn zero_length_run_is_all_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let flow = dir.path().join("flow.jsonl");
        write_journal(
            &flow,
            &[
                json!({"type":"run_started","ts":50.0,"run_id":"run-z","definition":"f","input":{}}),
                json!({"type":"run_finished","ts":50.0,"run_id":"run-z","status":"succeeded"}),
            ],
        )
        .unwrap();
        let table = ingest_events(&[flow]).unwrap();
        let b = breakdown(&table, &["run-z".into()]).unwrap();
        assert_eq!(
            (b.incoming_s, b.compute_s, b.outgoing_s, b.others_s, b.total_s),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn incomplete_run_error_names_the_missing_marker() {
        let dir = tempfile::tempdir().unwrap();
        let flow = dir.path().join("flow.jsonl");
        write_journal(
            &flow,
            &[json!({"type":"run_started","ts":1.0,"run_id":"run-x","definition":"f","input":{}})],
        )
        .unwrap();
        let table = ingest_events(&[flow]).unwrap();
        let err = breakdown(&table, &["run-x".into()]).unwrap_err();
        assert!(err.to_string().contains("run_finished"), "{err}");
    }

    #[test]
    fn unknown_run_id_is_rejected() {
        let table = EventTable::default();
        let err = breakdown(&table, &["run-missing".into()]).unwrap_err();
        assert!(matches!(err, MetricsError::UnknownRun(_)));
    }

    #[test]
    fn batch_compute_is_the_span_over_all_tasks() {
        let dir = tempfile::tempdir().unwrap();
        let flow = dir.path().join("flow.jsonl");
        let endpoint = dir.path().join("endpoint.jsonl");
        let mut flow_lines = Vec::new();
        let mut task_lines = Vec::new();
        // Four concurrent runs; tasks run [start, start+3] staggered by 1 s.
        for k in 0..4 {
            let run = format!("run-0000{k}");
            let task = format!("task-0000{k}");
            let t0 = 10.0 + k as f64;
            flow_lines.push(
                json!({"type":"run_started","ts":10.0,"run_id":run,"definition":"f","input":{}}),
            );
            flow_lines
                .push(json!({"type":"run_finished","ts":20.0,"run_id":run,"status":"succeeded"}));
            task_lines.push(json!({"type":"task","event":"finished","ts":t0+3.0,
                "task_id":task,"run_id":run,"state":"done",
                "queued_at":t0,"started":t0,"finished":t0+3.0}));
        }
        write_journal(&flow, &flow_lines).unwrap();
        write_journal(&endpoint, &task_lines).unwrap();
        let table = ingest_events(&[flow, endpoint]).unwrap();

        let ids: Vec<String> = (0..4).map(|k| format!("run-0000{k}")).collect();
        let b = breakdown(&table, &ids).unwrap();
        // First task starts at 10, last ends at 16: span 6, not the 12 s sum.
        assert!((b.compute_s - 6.0).abs() < 1e-9);
        assert!((b.total_s - 10.0).abs() < 1e-9);
        assert!((b.others_s - 4.0).abs() < 1e-9);
        assert_eq!(b.incoming_s, 0.0);
        assert_eq!(b.outgoing_s, 0.0);
        assert_eq!(b.id, "batch-4");
    }

    #[test]
    fn empty_selection_is_rejected() {
        let table = EventTable::default();
        assert!(matches!(
            breakdown(&table, &[]).unwrap_err(),
            MetricsError::EmptySelection
        ));
    }

    #[test]
    fn ideal_strong_scaling_has_unit_efficiency() {
        let series = BTreeMap::from([(1, 100.0), (2, 50.0), (4, 25.0)]);
        let report = scaling_report(&series).unwrap();
        assert_eq!(report.base_n, 1);
        let speedups: Vec<f64> = report.points.iter().map(|p| p.speedup).collect();
        assert_eq!(speedups, vec![1.0, 2.0, 4.0]);
        for p in &report.points {
            assert!((p.efficiency - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn measured_two_node_point_gives_speedup_1_56() {
        let series = BTreeMap::from([(1, 100.0), (2, 64.1)]);
        let report = scaling_report(&series).unwrap();
        assert!((report.points[1].speedup - 1.56).abs() < 0.005);
        assert!(report.points[1].efficiency > 0.0 && report.points[1].efficiency <= 1.0);
        assert_eq!(report.points[0].speedup, 1.0);
        assert!((report.noise_band - 0.10).abs() < 1e-12);
    }

    #[test]
    fn empty_series_has_no_base() {
        let series = BTreeMap::new();
        assert!(matches!(
            scaling_report(&series).unwrap_err(),
            MetricsError::MissingBase
        ));
    }

    #[test]
    fn weak_scaling_equal_times_score_unit_efficiency() {
        let series = [(1, 100.0, 12.0), (2, 200.0, 12.0), (4, 400.0, 12.0)];
        let points = weak_scaling_report(&series).unwrap();
        for p in &points {
            assert!((p.efficiency - 1.0).abs() < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn breakdown_csv_matches_fixed_schema() {
        let rows = vec![TimingBreakdown {
            id: "run-00001".into(),
            incoming_s: 2.0,
            compute_s: 5.0,
            outgoing_s: 1.0,
            others_s: 1.0,
            total_s: 9.0,
        }];
        let csv = breakdown_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "run_id,incoming_s,compute_s,outgoing_s,others_s,total_s"
        );
        assert_eq!(
            lines.next().unwrap(),
            "run-00001,2.000000,5.000000,1.000000,1.000000,9.000000"
        );
        assert!(lines.next().is_none());
    }

    #[test]
    fn scaling_csv_matches_fixed_schema() {
        let series = BTreeMap::from([(1, 100.0), (2, 64.1)]);
        let report = scaling_report(&series).unwrap();
        let csv = scaling_csv(&report);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "n,time_s,speedup,efficiency");
        assert_eq!(lines.next().unwrap(), "1,100.000000,1.000000,1.000000");
        assert_eq!(lines.next().unwrap(), "2,64.100000,1.560062,0.780031");
        assert!(lines.next().is_none());
    }

    #[test]
    fn csv_emission_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let (flow, endpoint) = golden_journals(dir.path());
        let journals = [flow, endpoint];
        let a = breakdown_csv(&all_run_breakdowns(&ingest_events(&journals).unwrap()).unwrap());
        let b = breakdown_csv(&all_run_breakdowns(&ingest_events(&journals).unwrap()).unwrap());
        assert_eq!(a, b);

        let out = dir.path().join("breakdown.csv");
        write_breakdown_csv(
            &out,
            &all_run_breakdowns(&ingest_events(&journals).unwrap()).unwrap(),
        )
        .unwrap();
        assert_eq!(std::fs::read_to_string(&out).unwrap(), a);
    }
}
