//! Subcommand implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use coloc_core::model::{
    baseline_least_squares, cross_validate, holdout_split, load_model, predict_degradation, r2_score, save_model,
    train_forest, tune_hyperparameters, DegradationModel, EvaluationReport, ForestHyperparams, Regressor, SearchSpace,
};
use coloc_core::profiles::{
    build_training_dataset, compute_degradation, index_profiles, parse_colocations, parse_profiles, write_colocations,
    write_profiles, ApplicationProfile, FeatureSet,
};
use coloc_core::scheduler::{build_degradation_graph, plan_schedule, DegradationGraph, JobQueue, Schedule, Strategy};
use coloc_core::simulator::{
    generate_random_queue, generate_stratified_queues, parse_oracle, parse_report_csv, run_experiment, summarize,
    synth_workload, write_oracle, DegradationOracle, Experiment, Predictor,
};
use coloc_core::{Error, Result};

use crate::config::{PredictorKind, QueueKind, RunConfig};
use crate::dataset::{read_dataset, sha256_file, write_dataset, Provenance};

fn out_path(cfg: &RunConfig, explicit: Option<PathBuf>, default_name: &str) -> Result<PathBuf> {
    let path = explicit.unwrap_or_else(|| cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from(".")).join(default_name));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(path)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn hp_line(hp: &ForestHyperparams) -> String {
    format!(
        "n_estimators={} max_features={} min_samples_split={} bootstrap={}",
        hp.n_estimators, hp.max_features, hp.min_samples_split, hp.bootstrap
    )
}

fn fmt_r2(r2: Option<f64>) -> String {
    r2.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let w = synth_workload(cfg.apps, cfg.seed)?;
    let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    let stamp = format!("# synthetic workload seed={} apps={}", cfg.seed, cfg.apps);

    let mut out = create(&dir.join("profiles.csv"))?;
    writeln!(out, "{stamp}")?;
    write_profiles(&mut out, &w.profiles)?;
    out.flush()?;

    let mut out = create(&dir.join("oracle.csv"))?;
    writeln!(out, "{stamp}")?;
    let c = &w.config;
    writeln!(
        out,
        "# high_fraction={} mem_coeff={} compute_coeff={} os_coeff={} noise={}",
        c.high_fraction, c.mem_coeff, c.compute_coeff, c.os_coeff, c.noise
    )?;
    write_oracle(&mut out, &w.oracle)?;
    out.flush()?;

    let mut out = create(&dir.join("colocations.csv"))?;
    writeln!(out, "{stamp}")?;
    write_colocations(&mut out, &w.colocations)?;
    out.flush()?;

    let apps: Vec<String> = w.profiles.iter().map(|p| p.app_id.clone()).collect();
    let queue = generate_random_queue(&apps, cfg.queue_len(), cfg.seed)?;
    queue.save(&dir.join("queue.json"))?;

    println!("# seed={}", cfg.seed);
    println!(
        "wrote {} profiles, {} colocation measurements and a {}-job queue to {}",
        w.profiles.len(),
        w.colocations.len(),
        queue.len(),
        dir.display()
    );
    Ok(())
}

pub fn dataset(cfg: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let profiles_path = cfg.require(&cfg.profiles, "profiles")?;
    let colocations_path = cfg.require(&cfg.colocations, "colocations")?;
    let fs = cfg.feature_set;
    let profiles = parse_profiles(profiles_path, &fs)?;
    let measurements = parse_colocations(colocations_path)?;
    let samples = build_training_dataset(&profiles, &measurements, &fs)?;

    let index = index_profiles(&profiles);
    let mut clamped = 0usize;
    for m in &measurements {
        let t_alone = index[m.primary_id.as_str()].t_alone;
        if compute_degradation(t_alone, m.t_coloc)? < 0.0 {
            clamped += 1;
        }
    }

    let prov = Provenance {
        inputs: vec![
            (file_label(profiles_path), sha256_file(profiles_path)?),
            (file_label(colocations_path), sha256_file(colocations_path)?),
        ],
        feature_set: fs,
    };
    let path = out_path(cfg, out, "dataset.csv")?;
    let mut w = create(&path)?;
    write_dataset(&mut w, &prov, &samples)?;
    w.flush()?;
    println!(
        "rows={} clamped={} feature_set={} features={} out={}",
        samples.len(),
        clamped,
        fs,
        fs.pair_len(),
        path.display()
    );
    Ok(())
}

fn print_folds(report: &EvaluationReport) {
    for (k, (r2, size)) in report.per_fold_r2.iter().zip(&report.fold_sizes).enumerate() {
        println!("fold {} n={} r2={}", k + 1, size, fmt_r2(*r2));
    }
    println!("cv_mean_fold_r2={:.4} cv_pooled_r2={:.4}", report.mean_fold_r2(), report.r2);
}

pub fn train(cfg: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let (fs, samples) = read_dataset(cfg.require(&cfg.dataset, "dataset")?)?;
    let hp = cfg.hyperparams();
    hp.validate()?;
    if !(0.0..1.0).contains(&cfg.holdout) {
        return Err(Error::InvalidParameter(format!("holdout {} not in [0, 1)", cfg.holdout)));
    }
    println!("# seed={} feature_set={} {}", cfg.seed, fs, hp_line(&hp));

    let (train_part, test_part) = if cfg.holdout > 0.0 {
        holdout_split(&samples, cfg.holdout, cfg.seed)?
    } else {
        (samples.clone(), Vec::new())
    };
    println!("train_samples={} holdout_samples={}", train_part.len(), test_part.len());

    if cfg.folds >= 2 {
        print_folds(&cross_validate(&train_part, cfg.folds, fs, &hp)?);
    }

    let model = train_forest(&train_part, fs, &hp)?;
    if !test_part.is_empty() {
        let actual: Vec<f64> = test_part.iter().map(|s| s.degradation).collect();
        let predicted: Vec<f64> = test_part.iter().map(|s| model.predict_row(&s.features)).collect();
        println!("holdout_r2={}", fmt_r2(r2_score(&actual, &predicted).ok()));
        match baseline_least_squares(&samples, cfg.holdout, cfg.seed) {
            Ok((_, report)) => println!("baseline_least_squares_holdout_r2={:.4}", report.r2),
            Err(e) => println!("baseline_least_squares_holdout_r2=undefined ({e})"),
        }
    }

    let path = out_path(cfg, out, "model.json")?;
    save_model(&model, &path)?;
    println!("wrote {} trees to {}", model.trees.len(), path.display());
    Ok(())
}

pub fn tune(cfg: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let (fs, samples) = read_dataset(cfg.require(&cfg.dataset, "dataset")?)?;
    println!(
        "# seed={} feature_set={} budget={} folds={}",
        cfg.seed, fs, cfg.budget, cfg.folds
    );
    let outcome = tune_hyperparameters(&samples, cfg.budget, &SearchSpace::default(), cfg.folds, fs, cfg.seed)?;
    for (k, t) in outcome.trials.iter().enumerate() {
        println!("trial {} {} mean_fold_r2={:.4}", k + 1, hp_line(&t.hyperparams), t.score);
    }
    println!("best {} mean_fold_r2={:.4}", hp_line(&outcome.best), outcome.report.mean_fold_r2());
    println!("# config lines for the best configuration:");
    let best = &outcome.best;
    println!("n_estimators = {}", best.n_estimators);
    println!("max_features = \"{}\"", best.max_features);
    println!("min_samples_split = {}", best.min_samples_split);
    println!("bootstrap = {}", best.bootstrap);

    if let Some(path) = out {
        let path = out_path(cfg, Some(path), "model.json")?;
        let model = train_forest(&samples, fs, best)?;
        save_model(&model, &path)?;
        println!("wrote {} trees to {}", model.trees.len(), path.display());
    }
    Ok(())
}

/// Fastest of `repeats` passes predicting every row, in seconds.
fn time_predictions(model: &DegradationModel, rows: &[&[f64]], repeats: usize) -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let mut acc = 0.0;
        for r in rows {
            acc += model.predict_row(r);
        }
        std::hint::black_box(acc);
        best = best.min(start.elapsed().as_secs_f64());
    }
    best
}

pub fn eval(cfg: &RunConfig, compare: &[usize], repeats: usize) -> Result<()> {
    let model = load_model(cfg.require(&cfg.model, "model")?)?;
    let (fs, samples) = read_dataset(cfg.require(&cfg.dataset, "dataset")?)?;
    if fs != model.feature_set {
        return Err(Error::FeatureSetMismatch {
            model: model.feature_set.to_string(),
            data: fs.to_string(),
        });
    }
    let actual: Vec<f64> = samples.iter().map(|s| s.degradation).collect();
    let predicted: Vec<f64> = samples.iter().map(|s| model.predict_row(&s.features)).collect();
    println!("# feature_set={} {}", fs, hp_line(&model.hyperparams));
    println!("samples={} r2={}", samples.len(), fmt_r2(r2_score(&actual, &predicted).ok()));

    let counts: Vec<usize> = if compare.is_empty() { vec![model.trees.len()] } else { compare.to_vec() };
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
    let mut timings = Vec::with_capacity(counts.len());
    for &n in &counts {
        let secs = time_predictions(&model.truncated(n)?, &rows, repeats);
        println!(
            "n_estimators={} predict_s={:.6} per_prediction_us={:.3}",
            n,
            secs,
            1e6 * secs / rows.len() as f64
        );
        timings.push((n, secs));
    }
    if let Some(&(ref_n, ref_secs)) = timings.iter().max_by_key(|(n, _)| *n) {
        for &(n, secs) in timings.iter().filter(|(n, _)| *n != ref_n) {
            println!("predict_time_ratio {}/{} = {:.3}", n, ref_n, secs / ref_secs);
        }
    }
    Ok(())
}

pub fn predict(cfg: &RunConfig, primary: &str, interfering: &str) -> Result<()> {
    let model = load_model(cfg.require(&cfg.model, "model")?)?;
    let profiles = parse_profiles(cfg.require(&cfg.profiles, "profiles")?, &model.feature_set)?;
    let index = index_profiles(&profiles);
    let lookup = |id: &str| index.get(id).copied().ok_or_else(|| Error::UnknownApp(id.to_string()));
    let d = predict_degradation(&model, lookup(primary)?, lookup(interfering)?)?;
    println!("{primary} next to {interfering}: degradation_pct={d}");
    Ok(())
}

/// Profiles parsed with the counters the predictor needs.
fn load_profiles(cfg: &RunConfig, model: Option<&DegradationModel>) -> Result<Vec<ApplicationProfile>> {
    let fs: FeatureSet = model.map_or(cfg.feature_set, |m| m.feature_set);
    parse_profiles(cfg.require(&cfg.profiles, "profiles")?, &fs)
}

fn load_predictor_model(cfg: &RunConfig) -> Result<Option<DegradationModel>> {
    match cfg.predictor {
        PredictorKind::Model => Ok(Some(load_model(cfg.require(&cfg.model, "model")?)?)),
        PredictorKind::Oracle => Ok(None),
    }
}

pub fn schedule(cfg: &RunConfig, strategy: Strategy, out: Option<PathBuf>) -> Result<()> {
    let queue = JobQueue::load(cfg.require(&cfg.queue, "queue")?)?;
    let model = load_predictor_model(cfg)?;
    let profiles = load_profiles(cfg, model.as_ref())?;
    let graph: DegradationGraph = match &model {
        Some(m) => build_degradation_graph(&queue, &profiles, m)?,
        None => parse_oracle(cfg.require(&cfg.oracle, "oracle")?, &profiles)?.graph(&queue)?,
    };
    let schedule = plan_schedule(strategy, &graph, &queue, &profiles)?;
    let path = out_path(cfg, out, "schedule.json")?;
    schedule.save(&path)?;
    print_schedule(&schedule, queue.len(), cfg.predictor);
    Ok(())
}

fn print_schedule(schedule: &Schedule, n_jobs: usize, predictor: PredictorKind) {
    let pairs = schedule.entries.iter().filter(|e| e.jobs().len() == 2).count();
    println!(
        "strategy={} predictor={} jobs={} pairs={} solos={} predicted_makespan_s={}",
        schedule.strategy,
        predictor,
        n_jobs,
        pairs,
        schedule.entries.len() - pairs,
        schedule.predicted_makespan_s
    );
}

fn simulation_queues(cfg: &RunConfig, oracle: &DegradationOracle) -> Result<Vec<JobQueue>> {
    if let Some(path) = &cfg.queue {
        return Ok(vec![JobQueue::load(path)?]);
    }
    let len = cfg.queue_len();
    match cfg.queue_kind {
        QueueKind::Random => {
            let apps: Vec<String> = oracle.apps().into_iter().map(str::to_string).collect();
            (0..cfg.queues as u64)
                .map(|q| generate_random_queue(&apps, len, cfg.seed.wrapping_add(q)))
                .collect()
        }
        QueueKind::Stratified(level) => generate_stratified_queues(oracle, level, cfg.queues, len, cfg.seed),
    }
}

pub fn simulate(cfg: &RunConfig, timing: bool) -> Result<()> {
    let model = load_predictor_model(cfg)?;
    let profiles = load_profiles(cfg, model.as_ref())?;
    let oracle = parse_oracle(cfg.require(&cfg.oracle, "oracle")?, &profiles)?;
    let cluster = cfg.cluster();
    cluster.validate()?;
    let queues = simulation_queues(cfg, &oracle)?;
    let exp = Experiment {
        policies: &cfg.policies.0,
        queues: &queues,
        oracle: &oracle,
        profiles: &profiles,
        predictor: model.as_ref().map_or(Predictor::Oracle, Predictor::Model),
        cluster,
        measure_time: timing,
    };
    let report = run_experiment(&exp)?;

    let header = format!(
        "# seed={} queue_kind={} queues={} queue_size={} servers={} predictor={} policies={}",
        cfg.seed,
        if cfg.queue.is_some() { "file".to_string() } else { cfg.queue_kind.to_string() },
        queues.len(),
        queues.first().map_or(0, JobQueue::len),
        cluster.n_servers,
        cfg.predictor,
        cfg.policies
    );
    let report_path = out_path(cfg, None, "report.csv")?;
    let mut out = create(&report_path)?;
    writeln!(out, "{header}")?;
    report.write_csv(&mut out)?;
    out.flush()?;
    let timeline_path = out_path(cfg, None, "timeline.json")?;
    std::fs::write(&timeline_path, report.timeline_json()?)?;

    println!("{header}");
    print_summary(&report.rows);
    println!("wrote {} and {}", report_path.display(), timeline_path.display());
    Ok(())
}

fn print_summary(rows: &[coloc_core::simulator::ReportRow]) {
    println!("{:>7}  {:<12} {:>6} {:>10} {:>10} {:>10}", "servers", "policy", "queues", "mean", "min", "max");
    for ((servers, policy), (mean, min, max, count)) in summarize(rows) {
        println!("{servers:>7}  {:<12} {count:>6} {mean:>10.4} {min:>10.4} {max:>10.4}", policy.as_str());
    }
}

pub fn compare(reports: &[PathBuf], out: Option<PathBuf>) -> Result<()> {
    let mut rows = Vec::new();
    for path in reports {
        let file = File::open(path)?;
        rows.extend(parse_report_csv(file, &path.display().to_string())?);
    }
    println!("# normalized makespan (FIFO = 1) over {} report rows", rows.len());
    print_summary(&rows);
    if let Some(path) = out {
        let mut w = create(&path)?;
        writeln!(w, "servers,policy,queues,mean_normalized,min_normalized,max_normalized")?;
        for ((servers, policy), (mean, min, max, count)) in summarize(&rows) {
            writeln!(w, "{servers},{policy},{count},{mean},{min},{max}")?;
        }
        w.flush()?;
    }
    Ok(())
}
