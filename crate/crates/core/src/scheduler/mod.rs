//! Degradation graphs and pairing strategies.
//!
//! A [`DegradationGraph`] is a complete graph over the jobs of a queue. The
//! weight of edge `{i,j}` is the slower of the two degraded runtimes, so a
//! pairing's total weight is the single-server time spent on its pairs. The
//! solvers here return [`Pairing`]s; [`apply_threshold`] turns a pairing into
//! a [`Schedule`] by splitting pairs that are predicted to lose to running
//! serially.

mod blossom;

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{DegradationModel, Regressor};
use crate::profiles::{index_profiles, ApplicationProfile};
use crate::{Error, Result};

/// Largest queue accepted by [`brute_force_matching`].
pub const BRUTE_FORCE_LIMIT: usize = 12;

/// Counter used for the DI miss rate.
pub const DI_MISS_COUNTER: &str = "cache_misses";

/// Jobs waiting to run, in arrival order. Duplicate app ids are separate jobs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct JobQueue {
    pub jobs: Vec<String>,
}

impl JobQueue {
    pub fn new(jobs: Vec<String>) -> Self {
        JobQueue { jobs }
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    /// Profiles for each job, in queue order.
    pub fn resolve<'a>(&self, profiles: &'a [ApplicationProfile]) -> Result<Vec<&'a ApplicationProfile>> {
        let index = index_profiles(profiles);
        self.jobs
            .iter()
            .map(|id| index.get(id.as_str()).copied().ok_or_else(|| Error::UnknownApp(id.clone())))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Complete weighted graph over queued jobs.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationGraph {
    runtimes: Vec<f64>,
    /// Row-major `n x n`; entry `(i, j)` is the slowdown of `i` next to `j`, percent.
    degradations: Option<Vec<f64>>,
    /// Row-major `n x n`, symmetric; the diagonal is unused.
    weights: Vec<f64>,
    predictions: usize,
}

/// `max(T_i (1 + d_ij/100), T_j (1 + d_ji/100))`.
pub fn pair_weight(t_i: f64, t_j: f64, deg_ij: f64, deg_ji: f64) -> f64 {
    (t_i * (1.0 + deg_ij / 100.0)).max(t_j * (1.0 + deg_ji / 100.0))
}

fn check_runtimes(runtimes: &[f64]) -> Result<()> {
    for &t in runtimes {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::NonPositiveRuntime {
                what: "job runtime".into(),
                value: t,
            });
        }
    }
    Ok(())
}

impl DegradationGraph {
    /// Builds the graph by evaluating `deg(i, j)` for every ordered pair `i != j`.
    pub fn from_degradation_fn<F>(runtimes: Vec<f64>, mut deg: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> Result<f64>,
    {
        check_runtimes(&runtimes)?;
        let n = runtimes.len();
        let mut degradations = vec![0.0; n * n];
        let mut predictions = 0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let d = deg(i, j)?;
                    if !d.is_finite() {
                        return Err(Error::InvalidParameter(format!(
                            "degradation for ({i}, {j}) is not finite"
                        )));
                    }
                    degradations[i * n + j] = d;
                    predictions += 1;
                }
            }
        }
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let w = pair_weight(runtimes[i], runtimes[j], degradations[i * n + j], degradations[j * n + i]);
                weights[i * n + j] = w;
                weights[j * n + i] = w;
            }
        }
        Ok(DegradationGraph {
            runtimes,
            degradations: Some(degradations),
            weights,
            predictions,
        })
    }

    /// `deg[i][j]` is the slowdown of `i` next to `j`; the diagonal is ignored.
    pub fn from_degradations(runtimes: Vec<f64>, deg: &[Vec<f64>]) -> Result<Self> {
        let n = runtimes.len();
        if deg.len() != n || deg.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidParameter(format!("degradation matrix must be {n}x{n}")));
        }
        Self::from_degradation_fn(runtimes, |i, j| Ok(deg[i][j]))
    }

    /// Graph with explicit symmetric edge weights (seconds).
    pub fn from_weights(runtimes: Vec<f64>, weights: &[Vec<f64>]) -> Result<Self> {
        check_runtimes(&runtimes)?;
        let n = runtimes.len();
        if weights.len() != n || weights.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidParameter(format!("weight matrix must be {n}x{n}")));
        }
        let mut flat = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let w = weights[i][j];
                if !w.is_finite() {
                    return Err(Error::InvalidParameter(format!("weight ({i}, {j}) is not finite")));
                }
                if w != weights[j][i] {
                    return Err(Error::InvalidParameter(format!("weight ({i}, {j}) is not symmetric")));
                }
                flat[i * n + j] = w;
                flat[j * n + i] = w;
            }
        }
        Ok(DegradationGraph {
            runtimes,
            degradations: None,
            weights: flat,
            predictions: 0,
        })
    }

    /// Builds a graph from an edge list `(i, j, w)` over `runtimes.len()` nodes.
    pub fn from_edges(runtimes: Vec<f64>, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let n = runtimes.len();
        let mut w = vec![vec![0.0; n]; n];
        for &(i, j, wt) in edges {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidParameter(format!("bad edge ({i}, {j})")));
            }
            w[i][j] = wt;
            w[j][i] = wt;
        }
        Self::from_weights(runtimes, &w)
    }

    /// Node count.
    pub fn n(&self) -> usize {
        self.runtimes.len()
    }

    /// Edge count, `n(n-1)/2`.
    pub fn m(&self) -> usize {
        let n = self.n();
        n * n.saturating_sub(1) / 2
    }

    pub fn runtime(&self, i: usize) -> f64 {
        self.runtimes[i]
    }

    pub fn runtimes(&self) -> &[f64] {
        &self.runtimes
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n() + j]
    }

    /// Slowdown of `i` next to `j`, when the graph was built from degradations.
    pub fn degradation(&self, i: usize, j: usize) -> Option<f64> {
        self.degradations.as_ref().map(|d| d[i * self.n() + j])
    }

    /// Number of directional predictions made while building the graph.
    pub fn predictions_issued(&self) -> usize {
        self.predictions
    }

    /// Copy with every weight capped at the pair's serial time `T_i + T_j`.
    pub fn capped_at_serial(&self) -> DegradationGraph {
        let n = self.n();
        let mut g = self.clone();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let serial = self.runtimes[i] + self.runtimes[j];
                    g.weights[i * n + j] = self.weights[i * n + j].min(serial);
                }
            }
        }
        g
    }

    /// Copy with runtimes and weights multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> DegradationGraph {
        DegradationGraph {
            runtimes: self.runtimes.iter().map(|t| t * factor).collect(),
            degradations: self.degradations.clone(),
            weights: self.weights.iter().map(|w| w * factor).collect(),
            predictions: self.predictions,
        }
    }

    /// Weight between `i` and `j` after adding one dummy node at index `n`
    /// whose edge to job `i` costs `T_i`.
    fn augmented_weight(&self, i: usize, j: usize) -> f64 {
        let n = self.n();
        match (i == n, j == n) {
            (true, false) => self.runtimes[j],
            (false, true) => self.runtimes[i],
            _ => self.weight(i, j),
        }
    }

    fn augmented_len(&self) -> usize {
        let n = self.n();
        n + n % 2
    }
}

/// Predicts degradation in both directions for every pair of queued jobs.
pub fn build_degradation_graph(
    queue: &JobQueue,
    profiles: &[ApplicationProfile],
    model: &DegradationModel,
) -> Result<DegradationGraph> {
    if queue.is_empty() {
        return Err(Error::InvalidParameter("queue is empty".into()));
    }
    let jobs = queue.resolve(profiles)?;
    let fs = model.feature_set;
    let halves = jobs
        .iter()
        .map(|p| {
            p.features(&fs).map_err(|e| match e {
                Error::MissingCounter { app, counter } => Error::FeatureSetMismatch {
                    model: fs.to_string(),
                    data: format!("profile `{app}` lacks `{counter}`"),
                },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(h) = halves.first() {
        if 2 * h.len() != model.n_features {
            return Err(Error::FeatureLength {
                expected: model.n_features,
                got: 2 * h.len(),
            });
        }
    }
    let mut row = Vec::with_capacity(model.n_features);
    DegradationGraph::from_degradation_fn(jobs.iter().map(|p| p.t_alone).collect(), |i, j| {
        row.clear();
        row.extend_from_slice(&halves[i]);
        row.extend_from_slice(&halves[j]);
        Ok(model.predict_row(&row))
    })
}

/// Disjoint pairs plus unmatched jobs.
#[derive(Debug, Clone, PartialEq)]
pub struct Pairing {
    /// Each pair has `i < j`; sorted.
    pub pairs: Vec<(usize, usize)>,
    /// Sorted.
    pub solos: Vec<usize>,
    /// Sum of pair weights plus solo runtimes, seconds.
    pub total_weight: f64,
}

impl Pairing {
    /// Normalizes the pair orientation and order and computes the total weight.
    pub fn new(pairs: Vec<(usize, usize)>, solos: Vec<usize>, graph: &DegradationGraph) -> Self {
        let mut pairs: Vec<(usize, usize)> = pairs.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
        pairs.sort_unstable();
        let mut solos = solos;
        solos.sort_unstable();
        let total_weight = pairs.iter().map(|&(i, j)| graph.weight(i, j)).sum::<f64>()
            + solos.iter().map(|&i| graph.runtime(i)).sum::<f64>();
        Pairing {
            pairs,
            solos,
            total_weight,
        }
    }

    /// Checks that pairs and solos partition `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        let members = self.pairs.iter().flat_map(|&(i, j)| [i, j]).chain(self.solos.iter().copied());
        for v in members {
            if v >= n {
                return Err(Error::InvalidSchedule(format!("job index {v} out of range for {n} jobs")));
            }
            if std::mem::replace(&mut seen[v], true) {
                return Err(Error::InvalidSchedule(format!("job index {v} appears twice")));
            }
        }
        if let Some(v) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidSchedule(format!("job index {v} is not scheduled")));
        }
        Ok(())
    }

    fn from_mates(mates: &[Option<usize>], graph: &DegradationGraph) -> Self {
        let n = graph.n();
        let mut pairs = Vec::new();
        let mut solos = Vec::new();
        for (v, mate) in mates.iter().enumerate().take(n) {
            match *mate {
                Some(u) if u < n => {
                    if v < u {
                        pairs.push((v, u));
                    }
                }
                _ => solos.push(v),
            }
        }
        Pairing::new(pairs, solos, graph)
    }
}

/// Minimum total-weight perfect matching. Odd queues get a dummy node whose
/// edge to job `i` costs `T_i`; the job matched to it runs alone.
pub fn solve_blossom(graph: &DegradationGraph) -> Pairing {
    let n = graph.n();
    if n < 2 {
        return Pairing::new(Vec::new(), (0..n).collect(), graph);
    }
    let nn = graph.augmented_len();
    let mut float_edges = Vec::with_capacity(nn * (nn - 1) / 2);
    for i in 0..nn {
        for j in i + 1..nn {
            float_edges.push((i, j, graph.augmented_weight(i, j)));
        }
    }
    // Exact integer weights: scale so the largest magnitude sits near 2^96.
    let max_abs = float_edges.iter().map(|e| e.2.abs()).fold(0.0_f64, f64::max);
    let scale = if max_abs > 0.0 {
        2f64.powi(96 - max_abs.log2().ceil() as i32)
    } else {
        1.0
    };
    let ints: Vec<i128> = float_edges.iter().map(|e| (e.2 * scale).round() as i128).collect();
    let top = ints.iter().copied().max().unwrap_or(0);
    let edges: Vec<(usize, usize, i128)> = float_edges
        .iter()
        .zip(&ints)
        .map(|(&(i, j, _), &w)| (i, j, top - w))
        .collect();
    let mates = blossom::max_weight_matching(nn, &edges, true);
    Pairing::from_mates(&mates, graph)
}

/// Takes edges in ascending weight order (ties by index) while both ends are free.
pub fn solve_greedy(graph: &DegradationGraph) -> Pairing {
    let n = graph.n();
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(graph.m());
    for i in 0..n {
        for j in i + 1..n {
            edges.push((graph.weight(i, j), i, j));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut matched = vec![false; n];
    let mut pairs = Vec::with_capacity(n / 2);
    for (_, i, j) in edges {
        if !matched[i] && !matched[j] {
            matched[i] = true;
            matched[j] = true;
            pairs.push((i, j));
        }
    }
    let solos = (0..n).filter(|&v| !matched[v]).collect();
    Pairing::new(pairs, solos, graph)
}

/// Exhaustive minimum over all perfect matchings, for testing.
pub fn brute_force_matching(graph: &DegradationGraph) -> Result<Pairing> {
    brute_force_matching_counted(graph).map(|(p, _)| p)
}

/// Like [`brute_force_matching`], also returning how many perfect matchings were visited.
pub fn brute_force_matching_counted(graph: &DegradationGraph) -> Result<(Pairing, usize)> {
    let n = graph.n();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    if n < 2 {
        return Ok((Pairing::new(Vec::new(), (0..n).collect(), graph), usize::from(n == 1)));
    }
    struct Search<'a> {
        graph: &'a DegradationGraph,
        used: Vec<bool>,
        current: Vec<(usize, usize)>,
        best: Option<(f64, Vec<(usize, usize)>)>,
        visited: usize,
    }
    impl Search<'_> {
        fn go(&mut self, cost: f64) {
            let Some(i) = self.used.iter().position(|u| !u) else {
                self.visited += 1;
                if self.best.as_ref().is_none_or(|(c, _)| cost < *c) {
                    self.best = Some((cost, self.current.clone()));
                }
                return;
            };
            self.used[i] = true;
            for j in i + 1..self.used.len() {
                if !self.used[j] {
                    self.used[j] = true;
                    self.current.push((i, j));
                    let w = self.graph.augmented_weight(i, j);
                    self.go(cost + w);
                    self.current.pop();
                    self.used[j] = false;
                }
            }
            self.used[i] = false;
        }
    }
    let mut search = Search {
        graph,
        used: vec![false; graph.augmented_len()],
        current: Vec::new(),
        best: None,
        visited: 0,
    };
    search.go(0.0);
    let (_, best) = search.best.expect("at least one matching");
    let mut mates = vec![None; graph.augmented_len()];
    for (i, j) in best {
        mates[i] = Some(j);
        mates[j] = Some(i);
    }
    Ok((Pairing::from_mates(&mates, graph), search.visited))
}

/// Jobs sorted by DI miss rate (misses per second of solo runtime), low to high.
pub fn di_order(queue: &JobQueue, profiles: &[ApplicationProfile]) -> Result<Vec<usize>> {
    let jobs = queue.resolve(profiles)?;
    let rates = jobs
        .iter()
        .map(|p| Ok(p.counter(DI_MISS_COUNTER)?.mean / p.t_alone))
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..jobs.len()).collect();
    order.sort_by(|&a, &b| {
        rates[a]
            .total_cmp(&rates[b])
            .then_with(|| jobs[a].app_id.cmp(&jobs[b].app_id))
            .then(a.cmp(&b))
    });
    Ok(order)
}

/// Distributed Intensity: lowest miss rate with highest, second with
/// second-highest, and so on. The middle job of an odd queue runs alone.
pub fn di_pairing(queue: &JobQueue, profiles: &[ApplicationProfile], graph: &DegradationGraph) -> Result<Pairing> {
    if graph.n() != queue.len() {
        return Err(Error::InvalidParameter(format!(
            "graph has {} nodes but the queue has {} jobs",
            graph.n(),
            queue.len()
        )));
    }
    let order = di_order(queue, profiles)?;
    let n = order.len();
    let pairs = (0..n / 2).map(|k| (order[k], order[n - 1 - k])).collect();
    let solos = if n % 2 == 1 { vec![order[n / 2]] } else { Vec::new() };
    Ok(Pairing::new(pairs, solos, graph))
}

/// Pairing strategy named in schedule files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Blossom,
    Greedy,
    Di,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Blossom, Strategy::Greedy, Strategy::Di];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Blossom => "blossom",
            Strategy::Greedy => "greedy",
            Strategy::Di => "di",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "blossom" => Ok(Strategy::Blossom),
            "greedy" => Ok(Strategy::Greedy),
            "di" => Ok(Strategy::Di),
            other => Err(Error::InvalidParameter(format!(
                "unknown strategy `{other}` (expected blossom, greedy or di)"
            ))),
        }
    }
}

/// One unit of work on a server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleEntry {
    Pair { pair: [usize; 2], weight_s: f64 },
    Solo { solo: usize, runtime_s: f64 },
}

impl ScheduleEntry {
    /// Predicted seconds this entry occupies a server.
    pub fn contribution(&self) -> f64 {
        match self {
            ScheduleEntry::Pair { weight_s, .. } => *weight_s,
            ScheduleEntry::Solo { runtime_s, .. } => *runtime_s,
        }
    }

    pub fn jobs(&self) -> Vec<usize> {
        match self {
            ScheduleEntry::Pair { pair, .. } => pair.to_vec(),
            ScheduleEntry::Solo { solo, .. } => vec![*solo],
        }
    }

    fn first_job(&self) -> usize {
        match self {
            ScheduleEntry::Pair { pair, .. } => pair[0],
            ScheduleEntry::Solo { solo, .. } => *solo,
        }
    }
}

/// Ordered entries over queue indices plus the single-server predicted makespan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub entries: Vec<ScheduleEntry>,
    pub predicted_makespan_s: f64,
    pub strategy: Strategy,
}

impl Schedule {
    /// Schedule that runs `pairing` as given, entries ascending by contribution.
    pub fn from_pairing(pairing: &Pairing, graph: &DegradationGraph, strategy: Strategy) -> Schedule {
        let mut entries: Vec<ScheduleEntry> = pairing
            .pairs
            .iter()
            .map(|&(i, j)| ScheduleEntry::Pair {
                pair: [i, j],
                weight_s: graph.weight(i, j),
            })
            .chain(pairing.solos.iter().map(|&i| ScheduleEntry::Solo {
                solo: i,
                runtime_s: graph.runtime(i),
            }))
            .collect();
        entries.sort_by(|a, b| match a.contribution().total_cmp(&b.contribution()) {
            Ordering::Equal => a.first_job().cmp(&b.first_job()),
            other => other,
        });
        let predicted_makespan_s = entries.iter().map(ScheduleEntry::contribution).sum();
        Schedule {
            entries,
            predicted_makespan_s,
            strategy,
        }
    }

    /// Checks that every job in `0..n` appears exactly once.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut pairs = Vec::new();
        let mut solos = Vec::new();
        for e in &self.entries {
            match e {
                ScheduleEntry::Pair { pair, .. } => pairs.push((pair[0], pair[1])),
                ScheduleEntry::Solo { solo, .. } => solos.push(*solo),
            }
        }
        Pairing {
            pairs,
            solos,
            total_weight: 0.0,
        }
        .validate(n)
    }

    pub fn n_jobs(&self) -> usize {
        self.entries.iter().map(|e| e.jobs().len()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Splits every pair whose weight exceeds its serial time `T_i + T_j`.
pub fn apply_threshold(pairing: &Pairing, graph: &DegradationGraph, strategy: Strategy) -> Schedule {
    let mut pairs = Vec::with_capacity(pairing.pairs.len());
    let mut solos = pairing.solos.clone();
    for &(i, j) in &pairing.pairs {
        if graph.weight(i, j) > graph.runtime(i) + graph.runtime(j) {
            solos.extend([i, j]);
        } else {
            pairs.push((i, j));
        }
    }
    Schedule::from_pairing(&Pairing::new(pairs, solos, graph), graph, strategy)
}

/// Pairs the queue with `strategy` and returns the schedule to run.
///
/// Blossom minimizes the post-threshold cost directly by matching on weights
/// capped at the serial time. Greedy matches on raw weights and is then
/// thresholded. DI ignores the graph and is not thresholded.
pub fn plan_schedule(
    strategy: Strategy,
    graph: &DegradationGraph,
    queue: &JobQueue,
    profiles: &[ApplicationProfile],
) -> Result<Schedule> {
    Ok(match strategy {
        Strategy::Blossom => {
            let p = solve_blossom(&graph.capped_at_serial());
            let p = Pairing::new(p.pairs, p.solos, graph);
            apply_threshold(&p, graph, strategy)
        }
        Strategy::Greedy => apply_threshold(&solve_greedy(graph), graph, strategy),
        Strategy::Di => Schedule::from_pairing(&di_pairing(queue, profiles, graph)?, graph, strategy),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_node(w01: f64, w23: f64, w02: f64, w13: f64, w03: f64, w12: f64) -> DegradationGraph {
        DegradationGraph::from_edges(
            vec![1.0; 4],
            &[(0, 1, w01), (2, 3, w23), (0, 2, w02), (1, 3, w13), (0, 3, w03), (1, 2, w12)],
        )
        .unwrap()
    }

    #[test]
    fn edge_weight_formula() {
        let g = DegradationGraph::from_degradations(vec![100.0, 200.0], &[vec![0.0, 50.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(g.weight(0, 1), 200.0);
        assert_eq!(g.weight(1, 0), 200.0);
        let g = DegradationGraph::from_degradations(vec![30.0, 10.0, 20.0], &vec![vec![0.0; 3]; 3]).unwrap();
        assert_eq!(g.weight(0, 1), 30.0);
        assert_eq!(g.weight(1, 2), 20.0);
    }

    #[test]
    fn edge_and_prediction_counts() {
        let g = DegradationGraph::from_degradation_fn(vec![1.0; 50], |_, _| Ok(0.0)).unwrap();
        assert_eq!(g.m(), 1225);
        assert_eq!(g.predictions_issued(), 2450);
    }

    #[test]
    fn two_nodes_make_one_pair() {
        let g = DegradationGraph::from_edges(vec![1.0, 2.0], &[(0, 1, 2.5)]).unwrap();
        for p in [solve_blossom(&g), solve_greedy(&g), brute_force_matching(&g).unwrap()] {
            assert_eq!(p.pairs, vec![(0, 1)]);
            assert!(p.solos.is_empty());
            assert_eq!(p.total_weight, 2.5);
        }
    }

    #[test]
    fn four_node_instance() {
        let g = four_node(5.0, 5.0, 1.0, 1.0, 10.0, 10.0);
        let b = solve_blossom(&g);
        assert_eq!(b.pairs, vec![(0, 2), (1, 3)]);
        assert_eq!(b.total_weight, 2.0);
        let gr = solve_greedy(&g);
        assert_eq!(gr.pairs, vec![(0, 2), (1, 3)]);
        let (bf, visited) = brute_force_matching_counted(&g).unwrap();
        assert_eq!(bf.pairs, b.pairs);
        assert_eq!(visited, 3);
    }

    #[test]
    fn greedy_can_be_beaten() {
        let g = four_node(1.0, 100.0, 2.0, 2.0, 3.0, 3.0);
        let gr = solve_greedy(&g);
        assert_eq!(gr.pairs, vec![(0, 1), (2, 3)]);
        assert_eq!(gr.total_weight, 101.0);
        let b = solve_blossom(&g);
        assert_eq!(b.total_weight, 4.0);
        assert_eq!(brute_force_matching(&g).unwrap().total_weight, 4.0);
    }

    #[test]
    fn brute_force_counts_and_limit() {
        let g = DegradationGraph::from_degradation_fn(vec![1.0; 8], |_, _| Ok(0.0)).unwrap();
        assert_eq!(brute_force_matching_counted(&g).unwrap().1, 105);
        let g = DegradationGraph::from_degradation_fn(vec![1.0; 13], |_, _| Ok(0.0)).unwrap();
        assert!(matches!(brute_force_matching(&g), Err(Error::TooLarge { n: 13, .. })));
    }

    #[test]
    fn odd_graphs_leave_one_solo() {
        // Job 2 is expensive to pair with anyone; cheapest to run alone.
        let g = DegradationGraph::from_edges(vec![10.0, 10.0, 5.0], &[(0, 1, 12.0), (0, 2, 40.0), (1, 2, 40.0)])
            .unwrap();
        let b = solve_blossom(&g);
        assert_eq!(b.pairs, vec![(0, 1)]);
        assert_eq!(b.solos, vec![2]);
        assert_eq!(b.total_weight, 17.0);
        assert_eq!(brute_force_matching(&g).unwrap(), b);
        let single = DegradationGraph::from_edges(vec![3.0], &[]).unwrap();
        assert_eq!(solve_blossom(&single).solos, vec![0]);
        assert_eq!(solve_blossom(&single).total_weight, 3.0);
    }

    #[test]
    fn threshold_rule() {
        let g = DegradationGraph::from_edges(vec![100.0, 100.0], &[(0, 1, 150.0)]).unwrap();
        let s = apply_threshold(&solve_blossom(&g), &g, Strategy::Blossom);
        assert_eq!(s.entries, vec![ScheduleEntry::Pair { pair: [0, 1], weight_s: 150.0 }]);
        assert_eq!(s.predicted_makespan_s, 150.0);

        let g = DegradationGraph::from_edges(vec![100.0, 100.0], &[(0, 1, 230.0)]).unwrap();
        let p = solve_greedy(&g);
        let s = apply_threshold(&p, &g, Strategy::Greedy);
        assert_eq!(s.entries.len(), 2);
        assert!(s.entries.iter().all(|e| matches!(e, ScheduleEntry::Solo { .. })));
        assert_eq!(s.predicted_makespan_s, 200.0);
        assert!(s.predicted_makespan_s <= p.total_weight);
    }

    #[test]
    fn entries_sorted_by_contribution() {
        let g = DegradationGraph::from_edges(
            vec![50.0, 60.0, 10.0, 20.0, 5.0],
            &[(0, 1, 70.0), (2, 3, 25.0), (0, 2, 999.0), (0, 3, 999.0), (1, 2, 999.0), (1, 3, 999.0)],
        )
        .unwrap()
        .capped_at_serial();
        let s = apply_threshold(&Pairing::new(vec![(0, 1), (2, 3)], vec![4], &g), &g, Strategy::Blossom);
        let contributions: Vec<f64> = s.entries.iter().map(ScheduleEntry::contribution).collect();
        assert_eq!(contributions, vec![5.0, 25.0, 70.0]);
        assert_eq!(s.predicted_makespan_s, 100.0);
        s.validate(5).unwrap();
    }

    fn di_fixture(rates: &[f64]) -> (JobQueue, Vec<ApplicationProfile>) {
        let profiles: Vec<ApplicationProfile> = rates
            .iter()
            .enumerate()
            .map(|(k, &r)| {
                let mut p = ApplicationProfile {
                    app_id: format!("app{k}"),
                    t_alone: 10.0,
                    counters: Default::default(),
                    derived: Default::default(),
                };
                p.counters
                    .insert(DI_MISS_COUNTER.into(), crate::profiles::CounterStat::flat(r * 10.0));
                p
            })
            .collect();
        let queue = JobQueue::new(profiles.iter().map(|p| p.app_id.clone()).collect());
        (queue, profiles)
    }

    #[test]
    fn di_pairs_extremes() {
        let (q, p) = di_fixture(&[3.0, 1.0, 4.0, 2.0]);
        let g = DegradationGraph::from_degradation_fn(vec![10.0; 4], |_, _| Ok(0.0)).unwrap();
        // rate 1 (job 1) with rate 4 (job 2); rate 2 (job 3) with rate 3 (job 0).
        assert_eq!(di_pairing(&q, &p, &g).unwrap().pairs, vec![(0, 3), (1, 2)]);

        let (q, p) = di_fixture(&[1.0, 2.0, 3.0]);
        let g = DegradationGraph::from_degradation_fn(vec![10.0; 3], |_, _| Ok(0.0)).unwrap();
        let pairing = di_pairing(&q, &p, &g).unwrap();
        assert_eq!(pairing.pairs, vec![(0, 2)]);
        assert_eq!(pairing.solos, vec![1]);

        let (q, p) = di_fixture(&[5.0; 4]);
        let g = DegradationGraph::from_degradation_fn(vec![10.0; 4], |_, _| Ok(0.0)).unwrap();
        assert_eq!(di_pairing(&q, &p, &g).unwrap().pairs, vec![(0, 3), (1, 2)]);
    }

    #[test]
    fn di_needs_miss_counter() {
        let (q, mut p) = di_fixture(&[1.0, 2.0]);
        p[1].counters.clear();
        assert!(matches!(di_order(&q, &p), Err(Error::MissingCounter { .. })));
    }

    #[test]
    fn schedule_json_shape() {
        let s = Schedule {
            entries: vec![
                ScheduleEntry::Solo { solo: 2, runtime_s: 5.0 },
                ScheduleEntry::Pair { pair: [0, 1], weight_s: 7.5 },
            ],
            predicted_makespan_s: 12.5,
            strategy: Strategy::Greedy,
        };
        let v: serde_json::Value = serde_json::from_str(&s.to_json().unwrap()).unwrap();
        assert_eq!(v["strategy"], "greedy");
        assert_eq!(v["entries"][0]["solo"], 2);
        assert_eq!(v["entries"][1]["pair"][1], 1);
        assert_eq!(v["entries"][1]["weight_s"], 7.5);
        assert_eq!(Schedule::from_json(&s.to_json().unwrap()).unwrap(), s);
        let q = JobQueue::new(vec!["a".into(), "a".into()]);
        assert_eq!(JobQueue::from_json(r#"{"jobs":["a","a"]}"#).unwrap(), q);
    }

    #[test]
    fn unresolved_job_errors() {
        let q = JobQueue::new(vec!["ghost".into()]);
        assert!(matches!(q.resolve(&[]), Err(Error::UnknownApp(_))));
    }
}
