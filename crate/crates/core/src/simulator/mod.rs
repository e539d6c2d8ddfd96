//! Makespan projection against true degradations.
//!
//! Schedules are produced from predictions; everything in this module runs
//! them against a [`DegradationOracle`] holding measured (or planted)
//! slowdowns. All jobs are present at time zero.

mod experiment;
mod workload;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::profiles::{csv_io, ApplicationProfile};
use crate::scheduler::{pair_weight, DegradationGraph, JobQueue, Schedule, ScheduleEntry};
use crate::{Error, Result};

pub use experiment::{
    parse_report_csv, run_experiment, summarize, Experiment, Policy, Predictor, ReportRow, RunTimeline, SimulationReport,
    REPORT_HEADER,
};
pub use workload::{
    generate_random_queue, generate_stratified_queues, stratum_of, synth_workload, synth_workload_with, Stratum,
    SynthConfig, SyntheticWorkload, Traits,
};

/// True slowdown for every ordered pair of applications, plus solo runtimes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DegradationOracle {
    /// `(primary, interfering)` to percent.
    pub matrix: BTreeMap<(String, String), f64>,
    /// Solo runtime in seconds.
    pub t_alone: BTreeMap<String, f64>,
}

impl DegradationOracle {
    pub fn new(matrix: BTreeMap<(String, String), f64>, t_alone: BTreeMap<String, f64>) -> Result<Self> {
        for ((a, b), &d) in &matrix {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "true degradation of `{a}` next to `{b}` must be a non-negative number, got {d}"
                )));
            }
        }
        for (app, &t) in &t_alone {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::NonPositiveRuntime {
                    what: format!("t_alone of `{app}`"),
                    value: t,
                });
            }
        }
        Ok(DegradationOracle { matrix, t_alone })
    }

    pub fn apps(&self) -> Vec<&str> {
        self.t_alone.keys().map(String::as_str).collect()
    }

    pub fn runtime(&self, app: &str) -> Result<f64> {
        self.t_alone.get(app).copied().ok_or_else(|| Error::UnknownApp(app.to_string()))
    }

    pub fn degradation(&self, primary: &str, interfering: &str) -> Result<f64> {
        self.matrix
            .get(&(primary.to_string(), interfering.to_string()))
            .copied()
            .ok_or_else(|| Error::UncoveredPair {
                primary: primary.to_string(),
                interfering: interfering.to_string(),
            })
    }

    /// True pair runtime `max(T_a (1 + d_ab/100), T_b (1 + d_ba/100))`.
    pub fn pair_runtime(&self, a: &str, b: &str) -> Result<f64> {
        Ok(pair_weight(
            self.runtime(a)?,
            self.runtime(b)?,
            self.degradation(a, b)?,
            self.degradation(b, a)?,
        ))
    }

    /// Degradation graph built from true values: the perfect predictor.
    pub fn graph(&self, queue: &JobQueue) -> Result<DegradationGraph> {
        let truth = QueueTruth::new(queue, self)?;
        DegradationGraph::from_degradation_fn(truth.runtimes.clone(), |i, j| Ok(truth.deg(i, j)))
    }
}

/// Reads `oracle.csv` (`primary_id,interfering_id,degradation_pct`); solo
/// runtimes come from `profiles`.
pub fn parse_oracle(path: &Path, profiles: &[ApplicationProfile]) -> Result<DegradationOracle> {
    let file = std::fs::File::open(path)?;
    parse_oracle_from(file, &path.display().to_string(), profiles)
}

pub fn parse_oracle_from<R: Read>(
    input: R,
    source_name: &str,
    profiles: &[ApplicationProfile],
) -> Result<DegradationOracle> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let parse_err = |line: u64, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let headers = reader.headers().map_err(csv_io)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column `{name}`")))
    };
    let (pc, ic, dc) = (col("primary_id")?, col("interfering_id")?, col("degradation_pct")?);
    let t_alone: BTreeMap<String, f64> = profiles.iter().map(|p| (p.app_id.clone(), p.t_alone)).collect();
    let mut matrix = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(csv_io)?;
        let line = record.position().map_or(0, |p| p.line());
        let primary = record.get(pc).unwrap_or("").to_string();
        let interfering = record.get(ic).unwrap_or("").to_string();
        for app in [&primary, &interfering] {
            if !t_alone.contains_key(app) {
                return Err(parse_err(line, format!("unknown application `{app}`")));
            }
        }
        let raw = record.get(dc).unwrap_or("");
        let d: f64 = raw
            .parse()
            .map_err(|_| parse_err(line, format!("degradation_pct `{raw}` is not a number")))?;
        if !(d.is_finite() && d >= 0.0) {
            return Err(parse_err(line, format!("degradation_pct must be non-negative, got {raw}")));
        }
        if matrix.insert((primary.clone(), interfering.clone()), d).is_some() {
            return Err(parse_err(line, format!("duplicate entry for ({primary}, {interfering})")));
        }
    }
    DegradationOracle::new(matrix, t_alone)
}

/// Writes `oracle.csv`, one row per ordered pair in key order.
pub fn write_oracle<W: Write>(out: W, oracle: &DegradationOracle) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer
        .write_record(["primary_id", "interfering_id", "degradation_pct"])
        .map_err(csv_io)?;
    for ((a, b), d) in &oracle.matrix {
        writer.write_record([a.as_str(), b.as_str(), &d.to_string()]).map_err(csv_io)?;
    }
    writer.flush()?;
    Ok(())
}

/// Servers available to the simulated batch system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub n_servers: usize,
    /// Jobs added to a random queue for every server in the cluster.
    pub jobs_per_server_scale: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            n_servers: 1,
            jobs_per_server_scale: 50,
        }
    }
}

impl ClusterConfig {
    pub fn new(n_servers: usize) -> Self {
        ClusterConfig {
            n_servers,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_servers == 0 {
            return Err(Error::InvalidParameter("n_servers must be at least 1".into()));
        }
        if self.jobs_per_server_scale == 0 {
            return Err(Error::InvalidParameter("jobs_per_server_scale must be at least 1".into()));
        }
        Ok(())
    }

    /// Random-queue length for this cluster size.
    pub fn queue_len(&self) -> usize {
        self.n_servers * self.jobs_per_server_scale
    }
}

/// Constant-rate stretch of a job's execution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
    /// Solo-seconds of work done per second.
    pub rate: f64,
}

/// One job's execution on a server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    /// Position in the queue.
    pub job: usize,
    pub app_id: String,
    pub server: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub segments: Vec<Segment>,
}

impl TimelineEntry {
    /// Solo-seconds of work completed over the whole entry.
    pub fn work_done(&self) -> f64 {
        self.segments.iter().map(|s| s.rate * (s.end_s - s.start_s)).sum()
    }
}

/// Makespan and per-job timeline of one simulated run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulationOutcome {
    pub makespan_s: f64,
    /// Sorted by job index.
    pub timeline: Vec<TimelineEntry>,
}

impl SimulationOutcome {
    fn from_timeline(mut timeline: Vec<TimelineEntry>) -> Self {
        timeline.sort_by_key(|e| e.job);
        let makespan_s = timeline.iter().map(|e| e.end_s).fold(0.0, f64::max);
        SimulationOutcome { makespan_s, timeline }
    }

    /// Largest number of jobs running at once on any server.
    pub fn peak_occupancy(&self) -> usize {
        let mut events: BTreeMap<usize, Vec<(f64, i32)>> = BTreeMap::new();
        for e in &self.timeline {
            if e.end_s > e.start_s {
                let list = events.entry(e.server).or_default();
                list.push((e.start_s, 1));
                list.push((e.end_s, -1));
            }
        }
        let mut peak = 0;
        for list in events.values_mut() {
            // Departures before arrivals at equal times.
            list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut current = 0i32;
            for &(_, delta) in list.iter() {
                current += delta;
                peak = peak.max(current as usize);
            }
        }
        peak
    }
}

/// Runtimes and true slowdowns for the jobs of one queue.
pub(crate) struct QueueTruth {
    pub apps: Vec<String>,
    pub runtimes: Vec<f64>,
    deg: Vec<f64>,
}

impl QueueTruth {
    pub fn new(queue: &JobQueue, oracle: &DegradationOracle) -> Result<Self> {
        let n = queue.len();
        let runtimes = queue.jobs.iter().map(|a| oracle.runtime(a)).collect::<Result<Vec<_>>>()?;
        let mut deg = vec![0.0; n * n];
        for (i, a) in queue.jobs.iter().enumerate() {
            for (j, b) in queue.jobs.iter().enumerate() {
                if i != j {
                    deg[i * n + j] = oracle.degradation(a, b)?;
                }
            }
        }
        Ok(QueueTruth {
            apps: queue.jobs.clone(),
            runtimes,
            deg,
        })
    }

    pub fn deg(&self, i: usize, j: usize) -> f64 {
        self.deg[i * self.apps.len() + j]
    }

    fn degraded(&self, i: usize, j: usize) -> f64 {
        self.runtimes[i] * (1.0 + self.deg(i, j) / 100.0)
    }
}

/// Index of the server that frees up first; ties go to the lowest index.
fn earliest(free_at: &[f64]) -> usize {
    let mut best = 0;
    for (s, &t) in free_at.iter().enumerate() {
        if t < free_at[best] {
            best = s;
        }
    }
    best
}

fn solo_entry(job: usize, app: &str, server: usize, start: f64, duration: f64) -> TimelineEntry {
    TimelineEntry {
        job,
        app_id: app.to_string(),
        server,
        start_s: start,
        end_s: start + duration,
        segments: vec![Segment {
            start_s: start,
            end_s: start + duration,
            rate: 1.0,
        }],
    }
}

/// Serial execution in arrival order, each job on the first free server.
pub fn simulate_fifo(queue: &JobQueue, oracle: &DegradationOracle, cluster: &ClusterConfig) -> Result<SimulationOutcome> {
    cluster.validate()?;
    let runtimes = queue.jobs.iter().map(|a| oracle.runtime(a)).collect::<Result<Vec<_>>>()?;
    let mut free_at = vec![0.0; cluster.n_servers];
    let mut timeline = Vec::with_capacity(queue.len());
    for (job, (app, &t)) in queue.jobs.iter().zip(&runtimes).enumerate() {
        let s = earliest(&free_at);
        timeline.push(solo_entry(job, app, s, free_at[s], t));
        free_at[s] += t;
    }
    Ok(SimulationOutcome::from_timeline(timeline))
}

struct Slot {
    job: usize,
    remaining: f64,
    rate: f64,
    segment_start: f64,
}

/// Uncontrolled sharing: up to two jobs per server in arrival order, each
/// freed slot is refilled at once by the head of the queue.
pub fn simulate_fifo_shared(
    queue: &JobQueue,
    oracle: &DegradationOracle,
    cluster: &ClusterConfig,
) -> Result<SimulationOutcome> {
    cluster.validate()?;
    let truth = QueueTruth::new(queue, oracle)?;
    let n = queue.len();
    let mut entries: Vec<Option<TimelineEntry>> = vec![None; n];
    let mut servers: Vec<Vec<Slot>> = (0..cluster.n_servers).map(|_| Vec::with_capacity(2)).collect();
    let mut next = 0;
    let mut now = 0.0_f64;

    let close_segment = |entry: &mut TimelineEntry, slot: &Slot, end: f64| {
        if end > slot.segment_start {
            entry.segments.push(Segment {
                start_s: slot.segment_start,
                end_s: end,
                rate: slot.rate,
            });
        }
    };

    loop {
        // Backfill free slots in server order.
        for (s, slots) in servers.iter_mut().enumerate() {
            while slots.len() < 2 && next < n {
                entries[next] = Some(TimelineEntry {
                    job: next,
                    app_id: truth.apps[next].clone(),
                    server: s,
                    start_s: now,
                    end_s: now,
                    segments: Vec::new(),
                });
                slots.push(Slot {
                    job: next,
                    remaining: truth.runtimes[next],
                    rate: 1.0,
                    segment_start: now,
                });
                next += 1;
            }
        }
        // Update rates; a change of rate starts a new segment.
        for slots in servers.iter_mut() {
            let partner: Vec<Option<usize>> = (0..slots.len())
                .map(|k| (slots.len() == 2).then(|| slots[1 - k].job))
                .collect();
            for (slot, p) in slots.iter_mut().zip(partner) {
                let rate = p.map_or(1.0, |p| 1.0 / (1.0 + truth.deg(slot.job, p) / 100.0));
                if rate != slot.rate {
                    let entry = entries[slot.job].as_mut().expect("started job");
                    close_segment(entry, slot, now);
                    slot.rate = rate;
                    slot.segment_start = now;
                }
            }
        }

        let step = servers
            .iter()
            .flatten()
            .map(|slot| slot.remaining / slot.rate)
            .fold(f64::INFINITY, f64::min);
        if !step.is_finite() {
            break;
        }
        let t_next = now + step;
        for slots in servers.iter_mut() {
            let mut k = 0;
            while k < slots.len() {
                let slot = &mut slots[k];
                let finish = slot.remaining / slot.rate;
                if finish <= step * (1.0 + 1e-12) {
                    let slot = slots.remove(k);
                    let entry = entries[slot.job].as_mut().expect("started job");
                    close_segment(entry, &slot, t_next);
                    entry.end_s = t_next;
                } else {
                    slot.remaining -= slot.rate * step;
                    k += 1;
                }
            }
        }
        now = t_next;
    }
    Ok(SimulationOutcome::from_timeline(entries.into_iter().flatten().collect()))
}

/// Runs schedule entries in order, each on the first free server. A pair
/// holds its server until the slower member finishes; each member ends after
/// its own degraded runtime.
pub fn simulate_schedule(
    schedule: &Schedule,
    queue: &JobQueue,
    oracle: &DegradationOracle,
    cluster: &ClusterConfig,
) -> Result<SimulationOutcome> {
    cluster.validate()?;
    if schedule.n_jobs() != queue.len() {
        return Err(Error::InvalidSchedule(format!(
            "schedule holds {} jobs but the queue has {}",
            schedule.n_jobs(),
            queue.len()
        )));
    }
    schedule.validate(queue.len())?;
    let truth = QueueTruth::new(queue, oracle)?;
    let mut free_at = vec![0.0; cluster.n_servers];
    let mut timeline = Vec::with_capacity(queue.len());
    for entry in &schedule.entries {
        let s = earliest(&free_at);
        let start = free_at[s];
        match *entry {
            ScheduleEntry::Solo { solo, .. } => {
                let t = truth.runtimes[solo];
                timeline.push(solo_entry(solo, &truth.apps[solo], s, start, t));
                free_at[s] = start + t;
            }
            ScheduleEntry::Pair { pair: [i, j], .. } => {
                let mut busy: f64 = 0.0;
                for (a, b) in [(i, j), (j, i)] {
                    let duration = truth.degraded(a, b);
                    busy = busy.max(duration);
                    timeline.push(TimelineEntry {
                        job: a,
                        app_id: truth.apps[a].clone(),
                        server: s,
                        start_s: start,
                        end_s: start + duration,
                        segments: vec![Segment {
                            start_s: start,
                            end_s: start + duration,
                            rate: truth.runtimes[a] / duration,
                        }],
                    });
                }
                free_at[s] = start + busy;
            }
        }
    }
    Ok(SimulationOutcome::from_timeline(timeline))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn oracle(apps: &[(&str, f64)], deg: f64) -> DegradationOracle {
        let t_alone = apps.iter().map(|&(a, t)| (a.to_string(), t)).collect();
        let mut matrix = BTreeMap::new();
        for &(a, _) in apps {
            for &(b, _) in apps {
                matrix.insert((a.to_string(), b.to_string()), deg);
            }
        }
        DegradationOracle::new(matrix, t_alone).unwrap()
    }

    fn queue(ids: &[&str]) -> JobQueue {
        JobQueue::new(ids.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn fifo_examples() {
        let o = oracle(&[("a", 10.0), ("b", 20.0), ("c", 30.0)], 0.0);
        let q = queue(&["a", "b", "c"]);
        assert_eq!(simulate_fifo(&q, &o, &ClusterConfig::new(1)).unwrap().makespan_s, 60.0);
        let two = simulate_fifo(&q, &o, &ClusterConfig::new(2)).unwrap();
        assert_eq!(two.makespan_s, 40.0);
        let servers: Vec<usize> = two.timeline.iter().map(|e| e.server).collect();
        assert_eq!(servers, vec![0, 1, 0]);
        assert_eq!(two.timeline[2].start_s, 10.0);
        assert_eq!(simulate_fifo(&queue(&[]), &o, &ClusterConfig::new(1)).unwrap().makespan_s, 0.0);
    }

    #[test]
    fn fifo_shared_examples() {
        let q = queue(&["a", "b"]);
        let free = oracle(&[("a", 100.0), ("b", 100.0)], 0.0);
        assert_eq!(simulate_fifo_shared(&q, &free, &ClusterConfig::new(1)).unwrap().makespan_s, 100.0);
        let slow = oracle(&[("a", 100.0), ("b", 100.0)], 100.0);
        let out = simulate_fifo_shared(&q, &slow, &ClusterConfig::new(1)).unwrap();
        assert_eq!(out.makespan_s, 200.0);
        assert!(out.timeline.iter().all(|e| e.end_s == 200.0));

        let o = oracle(&[("a", 100.0), ("b", 100.0), ("c", 50.0)], 100.0);
        let out = simulate_fifo_shared(&queue(&["a", "b", "c"]), &o, &ClusterConfig::new(1)).unwrap();
        assert_eq!(out.makespan_s, 250.0);
        assert_eq!(out.timeline[2].start_s, 200.0);
        assert_eq!(out.timeline[2].segments, vec![Segment { start_s: 200.0, end_s: 250.0, rate: 1.0 }]);
        for e in &out.timeline {
            assert!((e.work_done() - o.runtime(&e.app_id).unwrap()).abs() < 1e-9);
        }
        assert_eq!(out.peak_occupancy(), 2);
    }

    #[test]
    fn fifo_shared_backfills_when_partner_finishes() {
        // b finishes first at 2*50 = 100; c joins a until a completes.
        let o = oracle(&[("a", 100.0), ("b", 50.0), ("c", 100.0)], 100.0);
        let out = simulate_fifo_shared(&queue(&["a", "b", "c"]), &o, &ClusterConfig::new(1)).unwrap();
        assert_eq!(out.timeline[1].end_s, 100.0);
        assert_eq!(out.timeline[2].start_s, 100.0);
        // a has 50 left at rate 1/2 -> ends at 200; c then runs alone: 50 done, 50 left.
        assert_eq!(out.timeline[0].end_s, 200.0);
        assert_eq!(out.timeline[2].end_s, 250.0);
    }

    #[test]
    fn schedule_uses_true_values() {
        let mut o = oracle(&[("a", 100.0), ("b", 200.0)], 0.0);
        o.matrix.insert(("a".into(), "b".into()), 50.0);
        let q = queue(&["a", "b"]);
        // Predicted weight is deliberately wrong; the simulation must ignore it.
        let s = Schedule {
            entries: vec![ScheduleEntry::Pair { pair: [0, 1], weight_s: 1.0 }],
            predicted_makespan_s: 1.0,
            strategy: crate::scheduler::Strategy::Blossom,
        };
        let out = simulate_schedule(&s, &q, &o, &ClusterConfig::new(1)).unwrap();
        assert_eq!(out.makespan_s, 200.0);
        assert_eq!(out.timeline[0].end_s, 150.0);
        assert!((out.timeline[0].work_done() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn two_pairs_on_two_servers() {
        let o = oracle(&[("a", 100.0), ("b", 80.0), ("c", 60.0), ("d", 70.0)], 10.0);
        let q = queue(&["a", "b", "c", "d"]);
        let s = Schedule {
            entries: vec![
                ScheduleEntry::Pair { pair: [0, 1], weight_s: 0.0 },
                ScheduleEntry::Pair { pair: [2, 3], weight_s: 0.0 },
            ],
            predicted_makespan_s: 0.0,
            strategy: crate::scheduler::Strategy::Greedy,
        };
        let out = simulate_schedule(&s, &q, &o, &ClusterConfig::new(2)).unwrap();
        assert!((out.makespan_s - 110.0).abs() < 1e-12);
        assert_eq!(out.peak_occupancy(), 2);
    }

    #[test]
    fn uncovered_apps_error() {
        let o = oracle(&[("a", 1.0)], 0.0);
        let err = simulate_fifo(&queue(&["zzz"]), &o, &ClusterConfig::new(1)).unwrap_err();
        assert_eq!(err.code(), "unknown_app");
        let mut o2 = oracle(&[("a", 1.0), ("b", 1.0)], 0.0);
        o2.matrix.remove(&("b".to_string(), "a".to_string()));
        let err = simulate_fifo_shared(&queue(&["a", "b"]), &o2, &ClusterConfig::new(1)).unwrap_err();
        assert_eq!(err.code(), "uncovered_pair");
    }

    #[test]
    fn oracle_csv_round_trip() {
        let o = oracle(&[("a", 10.0), ("b", 20.0)], 12.5);
        let mut buf = Vec::new();
        write_oracle(&mut buf, &o).unwrap();
        let profiles: Vec<ApplicationProfile> = o
            .t_alone
            .iter()
            .map(|(a, &t)| ApplicationProfile {
                app_id: a.clone(),
                t_alone: t,
                counters: Default::default(),
                derived: Default::default(),
            })
            .collect();
        let back = parse_oracle_from(buf.as_slice(), "oracle.csv", &profiles).unwrap();
        assert_eq!(back, o);
        let bad = "primary_id,interfering_id,degradation_pct\na,b,-1\n";
        let err = parse_oracle_from(bad.as_bytes(), "oracle.csv", &profiles).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }
}
