mod common;

use std::collections::BTreeMap;

use coloc_core::scheduler::{apply_threshold, plan_schedule, JobQueue, Pairing, ScheduleEntry, Strategy as Plan};
use coloc_core::simulator::{
    run_experiment, simulate_fifo, simulate_fifo_shared, simulate_schedule, ClusterConfig, DegradationOracle, Experiment,
    Policy, Predictor, SimulationOutcome,
};
use proptest::prelude::*;

fn oracle_with(t: &[f64], deg: &[f64], zero: bool) -> DegradationOracle {
    let k = t.len();
    let name = |i: usize| format!("app{i}");
    let t_alone = (0..k).map(|i| (name(i), t[i])).collect();
    let mut matrix = BTreeMap::new();
    for i in 0..k {
        for j in 0..k {
            let d = if zero { 0.0 } else { deg[i * k + j] };
            matrix.insert((name(i), name(j)), d);
        }
    }
    DegradationOracle::new(matrix, t_alone).unwrap()
}

fn scenario(max_jobs: usize) -> impl Strategy<Value = (DegradationOracle, JobQueue, usize)> {
    (2usize..6, 0usize..=max_jobs, 1usize..4, any::<bool>()).prop_flat_map(|(k, n, servers, zero)| {
        (
            prop::collection::vec(1.0f64..200.0, k),
            prop::collection::vec(0.0f64..250.0, k * k),
            prop::collection::vec(0..k, n),
        )
            .prop_map(move |(t, d, picks)| {
                let oracle = oracle_with(&t, &d, zero);
                let queue = JobQueue::new(picks.iter().map(|i| format!("app{i}")).collect());
                (oracle, queue, servers)
            })
    })
}

fn check_timeline(out: &SimulationOutcome, oracle: &DegradationOracle, queue: &JobQueue) -> Result<(), TestCaseError> {
    prop_assert_eq!(out.timeline.len(), queue.len());
    for e in &out.timeline {
        let t = oracle.runtime(&e.app_id).unwrap();
        prop_assert!((e.work_done() - t).abs() <= 1e-9 * t.max(1.0), "job {} did {} of {}", e.job, e.work_done(), t);
        prop_assert_eq!(&e.app_id, &queue.jobs[e.job]);
    }
    prop_assert!(out.peak_occupancy() <= 2);
    Ok(())
}

fn plans(oracle: &DegradationOracle, queue: &JobQueue) -> Vec<coloc_core::scheduler::Schedule> {
    let graph = oracle.graph(queue).unwrap();
    [Plan::Blossom, Plan::Greedy]
        .iter()
        .map(|&s| plan_schedule(s, &graph, queue, &[]).unwrap())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn work_is_conserved((oracle, queue, servers) in scenario(14)) {
        let cluster = ClusterConfig::new(servers);
        check_timeline(&simulate_fifo(&queue, &oracle, &cluster).unwrap(), &oracle, &queue)?;
        check_timeline(&simulate_fifo_shared(&queue, &oracle, &cluster).unwrap(), &oracle, &queue)?;
        if !queue.is_empty() {
            for s in plans(&oracle, &queue) {
                check_timeline(&simulate_schedule(&s, &queue, &oracle, &cluster).unwrap(), &oracle, &queue)?;
            }
        }
    }

    #[test]
    fn schedule_entries_never_overlap((oracle, queue, servers) in scenario(14)) {
        prop_assume!(!queue.is_empty());
        let cluster = ClusterConfig::new(servers);
        for s in plans(&oracle, &queue) {
            let out = simulate_schedule(&s, &queue, &oracle, &cluster).unwrap();
            // Group jobs into entries and check per-server entry intervals are disjoint.
            let mut by_server: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
            for entry in &s.entries {
                let jobs: Vec<_> = entry.jobs().iter().map(|&j| &out.timeline[j]).collect();
                let start = jobs[0].start_s;
                prop_assert!(jobs.iter().all(|e| e.start_s == start && e.server == jobs[0].server));
                let end = jobs.iter().map(|e| e.end_s).fold(0.0, f64::max);
                by_server.entry(jobs[0].server).or_default().push((start, end));
            }
            for intervals in by_server.values_mut() {
                intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
                for w in intervals.windows(2) {
                    prop_assert!(w[1].0 >= w[0].1);
                }
            }
        }
    }

    #[test]
    fn sharing_without_contention_never_hurts((oracle, queue, servers) in scenario(14)) {
        let zeroed = DegradationOracle::new(
            oracle.matrix.keys().map(|k| (k.clone(), 0.0)).collect(),
            oracle.t_alone.clone(),
        ).unwrap();
        let cluster = ClusterConfig::new(servers);
        let fifo = simulate_fifo(&queue, &zeroed, &cluster).unwrap().makespan_s;
        prop_assert!(simulate_fifo_shared(&queue, &zeroed, &cluster).unwrap().makespan_s <= fifo + 1e-9);
        if !queue.is_empty() {
            let single = ClusterConfig::new(1);
            let fifo1 = simulate_fifo(&queue, &zeroed, &single).unwrap().makespan_s;
            for s in plans(&zeroed, &queue) {
                prop_assert!(simulate_schedule(&s, &queue, &zeroed, &single).unwrap().makespan_s <= fifo1 + 1e-9);
            }
        }
    }

    #[test]
    fn blossom_is_minimal_among_thresholded_partitions((oracle, queue, _s) in scenario(10)) {
        prop_assume!(queue.len() >= 2);
        let single = ClusterConfig::new(1);
        let graph = oracle.graph(&queue).unwrap();
        let blossom = plan_schedule(Plan::Blossom, &graph, &queue, &[]).unwrap();
        let ours = simulate_schedule(&blossom, &queue, &oracle, &single).unwrap().makespan_s;
        let mut best = f64::INFINITY;
        for pairing in all_partitions(queue.len()) {
            let p = Pairing::new(pairing.0, pairing.1, &graph);
            let s = apply_threshold(&p, &graph, Plan::Blossom);
            best = best.min(simulate_schedule(&s, &queue, &oracle, &single).unwrap().makespan_s);
        }
        prop_assert!(ours <= best + 1e-9 * best.max(1.0), "blossom {ours} > best {best}");
    }
}

/// Every perfect matching of `0..n`; for odd `n` each job takes a turn as the solo.
fn all_partitions(n: usize) -> Vec<(Vec<(usize, usize)>, Vec<usize>)> {
    fn rec(free: &mut Vec<usize>, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if free.is_empty() {
            out.push(cur.clone());
            return;
        }
        let i = free.remove(0);
        for k in 0..free.len() {
            let j = free.remove(k);
            cur.push((i, j));
            rec(free, cur, out);
            cur.pop();
            free.insert(k, j);
        }
        free.insert(0, i);
    }
    let mut result = Vec::new();
    let solos: Vec<Option<usize>> = if n % 2 == 1 { (0..n).map(Some).collect() } else { vec![None] };
    for solo in solos {
        let mut free: Vec<usize> = (0..n).filter(|&v| Some(v) != solo).collect();
        let mut out = Vec::new();
        rec(&mut free, &mut Vec::new(), &mut out);
        result.extend(out.into_iter().map(|pairs| (pairs, solo.into_iter().collect())));
    }
    result
}

#[test]
fn partition_enumeration_counts() {
    assert_eq!(all_partitions(4).len(), 3);
    assert_eq!(all_partitions(5).len(), 15);
    assert_eq!(all_partitions(8).len(), 105);
}

#[test]
fn experiments_are_reproducible() {
    let w = common::workload(12, 8);
    let apps: Vec<String> = w.oracle.t_alone.keys().cloned().collect();
    let queues: Vec<JobQueue> = (0..6)
        .map(|k| coloc_core::simulator::generate_random_queue(&apps, 15, k).unwrap())
        .collect();
    let model = coloc_core::model::train_forest(
        &common::dataset(&w, Default::default()),
        Default::default(),
        &Default::default(),
    )
    .unwrap();
    let render = || {
        let report = run_experiment(&Experiment {
            policies: &Policy::ALL,
            queues: &queues,
            oracle: &w.oracle,
            profiles: &w.profiles,
            predictor: Predictor::Model(&model),
            cluster: ClusterConfig::new(2),
            measure_time: false,
        })
        .unwrap();
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        (csv, report.timeline_json().unwrap())
    };
    assert_eq!(render(), render());
}

#[test]
fn predicted_weights_do_not_leak_into_simulation() {
    let w = common::workload(6, 1);
    let queue = JobQueue::new(w.oracle.t_alone.keys().cloned().collect());
    let graph = w.oracle.graph(&queue).unwrap();
    let truth = plan_schedule(Plan::Blossom, &graph, &queue, &[]).unwrap();
    let mut skewed = truth.clone();
    for e in &mut skewed.entries {
        if let ScheduleEntry::Pair { weight_s, .. } = e {
            *weight_s *= 10.0;
        }
    }
    let one = ClusterConfig::new(1);
    assert_eq!(
        simulate_schedule(&truth, &queue, &w.oracle, &one).unwrap(),
        simulate_schedule(&skewed, &queue, &w.oracle, &one).unwrap()
    );
}
