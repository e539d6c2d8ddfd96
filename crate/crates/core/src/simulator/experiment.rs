use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{simulate_fifo, simulate_fifo_shared, simulate_schedule, ClusterConfig, DegradationOracle, TimelineEntry};
use crate::model::DegradationModel;
use crate::profiles::{csv_io, ApplicationProfile};
use crate::scheduler::{build_degradation_graph, plan_schedule, DegradationGraph, JobQueue, Strategy};
use crate::{Error, Result};

/// Execution policy compared in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Fifo,
    FifoShared,
    Di,
    Blossom,
    Greedy,
}

impl Policy {
    pub const ALL: [Policy; 5] = [Policy::Fifo, Policy::FifoShared, Policy::Di, Policy::Blossom, Policy::Greedy];

    pub fn as_str(&self) -> &'static str {
        match self {
            Policy::Fifo => "fifo",
            Policy::FifoShared => "fifo_shared",
            Policy::Di => "di",
            Policy::Blossom => "blossom",
            Policy::Greedy => "greedy",
        }
    }

    fn strategy(&self) -> Option<Strategy> {
        match self {
            Policy::Di => Some(Strategy::Di),
            Policy::Blossom => Some(Strategy::Blossom),
            Policy::Greedy => Some(Strategy::Greedy),
            Policy::Fifo | Policy::FifoShared => None,
        }
    }

    /// Comma-separated list such as `fifo,blossom`.
    pub fn parse_list(s: &str) -> Result<Vec<Policy>> {
        let mut out = Vec::new();
        for token in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let p: Policy = token.parse()?;
            if !out.contains(&p) {
                out.push(p);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidParameter("policy list is empty".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Policy::ALL
            .into_iter()
            .find(|p| p.as_str() == key)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown policy `{s}` (expected fifo, fifo_shared, di, blossom or greedy)"
                ))
            })
    }
}

/// Source of the degradation graph used for scheduling decisions.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    Model(&'a DegradationModel),
    /// The oracle itself: a perfect predictor.
    Oracle,
}

/// One experiment: every policy on every queue.
#[derive(Debug, Clone)]
pub struct Experiment<'a> {
    pub policies: &'a [Policy],
    pub queues: &'a [JobQueue],
    pub oracle: &'a DegradationOracle,
    pub profiles: &'a [ApplicationProfile],
    pub predictor: Predictor<'a>,
    pub cluster: ClusterConfig,
    /// Record wall-clock predict and solve times. Queues then run one at a
    /// time; otherwise the times are reported as 0 and output is reproducible.
    pub measure_time: bool,
}

/// One line of `report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub queue_id: usize,
    pub policy: Policy,
    pub servers: usize,
    pub makespan_s: f64,
    /// Makespan over the FIFO makespan of the same queue.
    pub normalized: f64,
    pub predict_time_s: f64,
    pub solve_time_s: f64,
}

/// Simulated timeline for one (queue, policy) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTimeline {
    pub queue_id: usize,
    pub policy: Policy,
    pub servers: usize,
    pub makespan_s: f64,
    pub jobs: Vec<TimelineEntry>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulationReport {
    pub rows: Vec<ReportRow>,
    pub runs: Vec<RunTimeline>,
}

pub const REPORT_HEADER: [&str; 7] = [
    "queue_id",
    "policy",
    "servers",
    "makespan_s",
    "normalized",
    "predict_time_s",
    "solve_time_s",
];

impl SimulationReport {
    /// Normalized makespans of `policy`, one per queue.
    pub fn normalized(&self, policy: Policy) -> Vec<f64> {
        self.rows.iter().filter(|r| r.policy == policy).map(|r| r.normalized).collect()
    }

    pub fn makespans(&self, policy: Policy) -> Vec<f64> {
        self.rows.iter().filter(|r| r.policy == policy).map(|r| r.makespan_s).collect()
    }

    pub fn mean_normalized(&self, policy: Policy) -> Option<f64> {
        let v = self.normalized(policy);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REPORT_HEADER).map_err(csv_io)?;
        for r in &self.rows {
            w.write_record([
                r.queue_id.to_string(),
                r.policy.to_string(),
                r.servers.to_string(),
                r.makespan_s.to_string(),
                r.normalized.to_string(),
                r.predict_time_s.to_string(),
                r.solve_time_s.to_string(),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `{"runs": [...]}` with per-job intervals and rate segments.
    pub fn timeline_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            runs: &'a [RunTimeline],
        }
        Ok(serde_json::to_string_pretty(&Doc { runs: &self.runs })?)
    }
}

/// Reads rows written by [`SimulationReport::write_csv`].
pub fn parse_report_csv<R: std::io::Read>(input: R, source_name: &str) -> Result<Vec<ReportRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_io)?;
        let line = record.position().map_or(0, |p| p.line());
        let err = |m: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            message: m,
        };
        if record.len() != REPORT_HEADER.len() {
            return Err(err(format!("expected {} fields, got {}", REPORT_HEADER.len(), record.len())));
        }
        let num = |k: usize| -> Result<f64> {
            record[k]
                .parse()
                .map_err(|_| err(format!("field `{}` is not a number", REPORT_HEADER[k])))
        };
        let int = |k: usize| -> Result<usize> {
            record[k]
                .parse()
                .map_err(|_| err(format!("field `{}` is not an integer", REPORT_HEADER[k])))
        };
        rows.push(ReportRow {
            queue_id: int(0)?,
            policy: record[1].parse().map_err(|e: Error| err(e.to_string()))?,
            servers: int(2)?,
            makespan_s: num(3)?,
            normalized: num(4)?,
            predict_time_s: num(5)?,
            solve_time_s: num(6)?,
        });
    }
    Ok(rows)
}

fn run_queue(exp: &Experiment, queue_id: usize, queue: &JobQueue) -> Result<(Vec<ReportRow>, Vec<RunTimeline>)> {
    let cluster = &exp.cluster;
    let fifo = simulate_fifo(queue, exp.oracle, cluster)?;
    let needs_graph = exp.policies.iter().any(|p| p.strategy().is_some()) && !queue.is_empty();

    let mut predict_time = 0.0;
    let graph: Option<DegradationGraph> = if needs_graph {
        let started = Instant::now();
        let g = match exp.predictor {
            Predictor::Model(model) => build_degradation_graph(queue, exp.profiles, model)?,
            Predictor::Oracle => exp.oracle.graph(queue)?,
        };
        predict_time = started.elapsed().as_secs_f64();
        Some(g)
    } else {
        None
    };

    let mut rows = Vec::with_capacity(exp.policies.len());
    let mut runs = Vec::with_capacity(exp.policies.len());
    for &policy in exp.policies {
        let (outcome, predict_s, solve_s) = match (policy.strategy(), &graph) {
            (None, _) if policy == Policy::Fifo => (fifo.clone(), 0.0, 0.0),
            (None, _) => (simulate_fifo_shared(queue, exp.oracle, cluster)?, 0.0, 0.0),
            (Some(_), None) => (fifo.clone(), 0.0, 0.0),
            (Some(strategy), Some(g)) => {
                let started = Instant::now();
                let schedule = plan_schedule(strategy, g, queue, exp.profiles)?;
                let solve = started.elapsed().as_secs_f64();
                let predict = if strategy == Strategy::Di { 0.0 } else { predict_time };
                (simulate_schedule(&schedule, queue, exp.oracle, cluster)?, predict, solve)
            }
        };
        let normalized = if fifo.makespan_s > 0.0 {
            outcome.makespan_s / fifo.makespan_s
        } else {
            1.0
        };
        let (predict_s, solve_s) = if exp.measure_time { (predict_s, solve_s) } else { (0.0, 0.0) };
        rows.push(ReportRow {
            queue_id,
            policy,
            servers: cluster.n_servers,
            makespan_s: outcome.makespan_s,
            normalized,
            predict_time_s: predict_s,
            solve_time_s: solve_s,
        });
        runs.push(RunTimeline {
            queue_id,
            policy,
            servers: cluster.n_servers,
            makespan_s: outcome.makespan_s,
            jobs: outcome.timeline,
        });
    }
    Ok((rows, runs))
}

/// Schedules and simulates every queue under every policy.
pub fn run_experiment(exp: &Experiment) -> Result<SimulationReport> {
    exp.cluster.validate()?;
    if exp.policies.is_empty() {
        return Err(Error::InvalidParameter("no policies selected".into()));
    }
    let per_queue: Vec<(Vec<ReportRow>, Vec<RunTimeline>)> = if exp.measure_time {
        exp.queues
            .iter()
            .enumerate()
            .map(|(k, q)| run_queue(exp, k, q))
            .collect::<Result<_>>()?
    } else {
        exp.queues
            .par_iter()
            .enumerate()
            .map(|(k, q)| run_queue(exp, k, q))
            .collect::<Result<_>>()?
    };
    let mut report = SimulationReport::default();
    for (rows, runs) in per_queue {
        report.rows.extend(rows);
        report.runs.extend(runs);
    }
    Ok(report)
}

/// Mean, min and max normalized makespan per (policy, servers), over all rows.
pub fn summarize(rows: &[ReportRow]) -> BTreeMap<(usize, Policy), (f64, f64, f64, usize)> {
    let mut acc: BTreeMap<(usize, Policy), Vec<f64>> = BTreeMap::new();
    for r in rows {
        acc.entry((r.servers, r.policy)).or_default().push(r.normalized);
    }
    acc.into_iter()
        .map(|(k, v)| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (k, (mean, min, max, v.len()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate_random_queue, synth_workload};

    #[test]
    fn fifo_only_is_normalized_to_one() {
        let w = synth_workload(8, 1).unwrap();
        let apps: Vec<String> = w.oracle.t_alone.keys().cloned().collect();
        let queues: Vec<JobQueue> = (0..3).map(|k| generate_random_queue(&apps, 10, k).unwrap()).collect();
        let exp = Experiment {
            policies: &[Policy::Fifo],
            queues: &queues,
            oracle: &w.oracle,
            profiles: &w.profiles,
            predictor: Predictor::Oracle,
            cluster: ClusterConfig::new(1),
            measure_time: false,
        };
        let report = run_experiment(&exp).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(report.rows.iter().all(|r| r.normalized == 1.0));
    }

    #[test]
    fn perfect_predictor_dominance() {
        let w = synth_workload(16, 2).unwrap();
        let apps: Vec<String> = w.oracle.t_alone.keys().cloned().collect();
        let queues: Vec<JobQueue> = (0..4).map(|k| generate_random_queue(&apps, 20, k).unwrap()).collect();
        let exp = Experiment {
            policies: &Policy::ALL,
            queues: &queues,
            oracle: &w.oracle,
            profiles: &w.profiles,
            predictor: Predictor::Oracle,
            cluster: ClusterConfig::new(1),
            measure_time: false,
        };
        let report = run_experiment(&exp).unwrap();
        let b = report.makespans(Policy::Blossom);
        let g = report.makespans(Policy::Greedy);
        let f = report.makespans(Policy::Fifo);
        for k in 0..queues.len() {
            assert!(b[k] <= g[k] + 1e-9 && g[k] <= f[k] + 1e-9, "{} {} {}", b[k], g[k], f[k]);
        }
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let back = parse_report_csv(buf.as_slice(), "report.csv").unwrap();
        assert_eq!(back, report.rows);
    }

    #[test]
    fn policy_tokens() {
        assert_eq!(Policy::parse_list("fifo, fifo-shared,blossom").unwrap().len(), 3);
        assert!(Policy::parse_list("").is_err());
        assert!("bogus".parse::<Policy>().is_err());
    }
}
