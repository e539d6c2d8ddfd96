use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DegradationOracle;
use crate::profiles::{
    compute_degradation, derive_metrics, ApplicationProfile, ColocationMeasurement, CounterStat, ALL_COUNTERS, CPU_USAGE,
};
use crate::scheduler::JobQueue;
use crate::{Error, Result};

/// `size` uniform draws with replacement from `app_ids`.
pub fn generate_random_queue(app_ids: &[String], size: usize, seed: u64) -> Result<JobQueue> {
    if app_ids.is_empty() {
        return Err(Error::InvalidParameter("application universe is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(JobQueue::new(
        (0..size).map(|_| app_ids[rng.gen_range(0..app_ids.len())].clone()).collect(),
    ))
}

/// Degradation band of a pair, by true pair runtime over serial runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    /// Ratio below 0.75.
    Low,
    /// Ratio in `[0.75, 1.0)`.
    Medium,
    /// Ratio of 1.0 or more.
    High,
}

impl Stratum {
    pub fn of_ratio(ratio: f64) -> Stratum {
        if ratio < 0.75 {
            Stratum::Low
        } else if ratio < 1.0 {
            Stratum::Medium
        } else {
            Stratum::High
        }
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stratum::Low => "low",
            Stratum::Medium => "medium",
            Stratum::High => "high",
        })
    }
}

impl FromStr for Stratum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(Stratum::Low),
            "medium" => Ok(Stratum::Medium),
            "high" => Ok(Stratum::High),
            other => Err(Error::InvalidParameter(format!(
                "unknown degradation level `{other}` (expected low, medium or high)"
            ))),
        }
    }
}

/// Band of the unordered pair `{a, b}`.
pub fn stratum_of(oracle: &DegradationOracle, a: &str, b: &str) -> Result<Stratum> {
    let serial = oracle.runtime(a)? + oracle.runtime(b)?;
    Ok(Stratum::of_ratio(oracle.pair_runtime(a, b)? / serial))
}

/// Queues whose arrival slots `(2k, 2k+1)` hold pairs from the requested band.
/// Pairs are drawn with replacement; an odd final slot takes one member of a
/// further drawn pair.
pub fn generate_stratified_queues(
    oracle: &DegradationOracle,
    level: Stratum,
    count: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<JobQueue>> {
    let apps = oracle.apps();
    let mut qualifying = Vec::new();
    for (k, &a) in apps.iter().enumerate() {
        for &b in &apps[k + 1..] {
            if stratum_of(oracle, a, b)? == level {
                qualifying.push((a, b));
            }
        }
    }
    if qualifying.is_empty() {
        return Err(Error::InsufficientPairs(level.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5354_5241_5441);
    let mut queues = Vec::with_capacity(count);
    for _ in 0..count {
        let mut jobs = Vec::with_capacity(size);
        while jobs.len() < size {
            let &(a, b) = qualifying.choose(&mut rng).expect("non-empty");
            let (first, second) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
            jobs.push(first.to_string());
            if jobs.len() < size {
                jobs.push(second.to_string());
            }
        }
        queues.push(JobQueue::new(jobs));
    }
    Ok(queues)
}

/// Shape of the planted degradation function and the latent application traits.
///
/// Each application gets a memory pressure `m`, a compute pressure `u` and an
/// OS activity level `o`, all in `[0, 1]`. The slowdown of `i` next to `j` is
///
/// ```text
/// d_ij = max(0, (mem * (m_i m_j)^2 + compute * u_i u_j + os * m_i o_j) * (1 + e))
/// ```
///
/// with `e` uniform in `[-noise, noise]`. Counter statistics are generated from
/// the same traits, so the function is recoverable from profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Share of applications drawn from the high memory-pressure mode.
    pub high_fraction: f64,
    pub high_pressure: (f64, f64),
    pub low_pressure: (f64, f64),
    pub mem_coeff: f64,
    pub compute_coeff: f64,
    pub os_coeff: f64,
    pub noise: f64,
    /// Solo runtime range in seconds.
    pub t_alone_range: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            high_fraction: 0.4,
            high_pressure: (0.75, 1.0),
            low_pressure: (0.0, 0.35),
            mem_coeff: 600.0,
            compute_coeff: 40.0,
            os_coeff: 15.0,
            noise: 0.08,
            t_alone_range: (60.0, 240.0),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !(0.0..=1.0).contains(&self.high_fraction)
            || !range_ok(self.high_pressure)
            || !range_ok(self.low_pressure)
            || !range_ok(self.t_alone_range)
            || self.t_alone_range.0 <= 0.0
            || !(0.0..1.0).contains(&self.noise)
            || self.mem_coeff < 0.0
            || self.compute_coeff < 0.0
            || self.os_coeff < 0.0
        {
            return Err(Error::InvalidParameter(format!("invalid synthetic workload config {self:?}")));
        }
        Ok(())
    }

    /// Noise-free planted slowdown of an app with traits `i` next to one with traits `j`.
    pub fn planted(&self, i: &Traits, j: &Traits) -> f64 {
        self.mem_coeff * (i.memory * j.memory).powi(2)
            + self.compute_coeff * i.compute * j.compute
            + self.os_coeff * i.memory * j.os
    }
}

/// Latent traits of one synthetic application.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Traits {
    pub memory: f64,
    pub compute: f64,
    pub os: f64,
    pub cpu_usage: f64,
}

/// Profiles plus true degradations for a generated application universe.
#[derive(Debug, Clone)]
pub struct SyntheticWorkload {
    pub profiles: Vec<ApplicationProfile>,
    pub oracle: DegradationOracle,
    /// One measurement per ordered pair of distinct applications.
    pub colocations: Vec<ColocationMeasurement>,
    pub traits: BTreeMap<String, Traits>,
    pub config: SynthConfig,
    pub seed: u64,
}

/// Per-second rate of a counter as a function of the traits.
fn counter_rate(name: &str, t: &Traits, mix: &[f64; 4]) -> f64 {
    let freq = 2.6e9 * t.cpu_usage;
    match name {
        "cycles" => freq,
        "instructions" => freq * (0.4 + 2.0 * t.compute * (1.0 - 0.6 * t.memory)),
        "cache_references" => 2.0e6 + 6.0e7 * t.memory + 5.0e6 * t.compute,
        "cache_misses" => 1.0e5 + 4.0e7 * t.memory.powf(1.5),
        "branch_instructions" => freq * (0.05 + 0.25 * t.compute),
        "branch_misses" => freq * (0.001 + 0.01 * (1.0 - t.compute) * t.os + 0.002 * t.memory),
        "page_faults" => 50.0 + 4.0e4 * t.os + 2.0e3 * t.memory,
        "context_switches" => 20.0 + 3.0e3 * t.os,
        "cpu_migrations" => 1.0 + 80.0 * t.os,
        _ => {
            let base = 1.0e6 * (1.0 + 9.0 * mix[3]);
            base * (0.05 + mix[0] * t.memory + mix[1] * t.compute + mix[2] * t.os)
        }
    }
}

/// Seeded synthetic universe with the default [`SynthConfig`].
pub fn synth_workload(n_apps: usize, seed: u64) -> Result<SyntheticWorkload> {
    synth_workload_with(&SynthConfig::default(), n_apps, seed)
}

/// Generates `n_apps` applications with every counter of the full counter list,
/// and the matching oracle over all ordered pairs (diagonal included).
pub fn synth_workload_with(config: &SynthConfig, n_apps: usize, seed: u64) -> Result<SyntheticWorkload> {
    if n_apps < 2 {
        return Err(Error::InvalidParameter("synthetic workload needs at least 2 applications".into()));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..hi) } else { lo };

    let mixes: Vec<[f64; 4]> = ALL_COUNTERS
        .iter()
        .map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()])
        .collect();

    let n_high = (config.high_fraction * n_apps as f64).round() as usize;
    let mut high_flags: Vec<bool> = (0..n_apps).map(|k| k < n_high).collect();
    high_flags.shuffle(&mut rng);

    let width = n_apps.saturating_sub(1).to_string().len().max(2);
    let mut profiles = Vec::with_capacity(n_apps);
    let mut traits = BTreeMap::new();
    for (k, &high) in high_flags.iter().enumerate() {
        let app_id = format!("app{k:0width$}");
        let t = Traits {
            memory: uniform(&mut rng, if high { config.high_pressure } else { config.low_pressure }),
            compute: rng.gen(),
            os: rng.gen::<f64>().powi(2),
            cpu_usage: rng.gen_range(0.55..1.0),
        };
        let t_alone = uniform(&mut rng, config.t_alone_range);
        let variability = 0.02 + 0.15 * rng.gen::<f64>();
        let mut counters = BTreeMap::new();
        for (name, mix) in ALL_COUNTERS.iter().zip(&mixes) {
            let stat = if *name == CPU_USAGE {
                let mean = 100.0 * t.cpu_usage;
                CounterStat {
                    mean,
                    min: mean * (1.0 - variability),
                    max: (mean * (1.0 + variability)).max(mean),
                    sd: mean * variability / 2.0,
                }
            } else {
                let jitter = 1.0 + 0.03 * (rng.gen::<f64>() - 0.5);
                let mean = counter_rate(name, &t, mix) * t_alone * jitter;
                let spread = variability * (1.0 + t.memory);
                CounterStat {
                    mean,
                    min: mean * (1.0 - spread).max(0.0),
                    max: mean * (1.0 + spread),
                    sd: mean * spread / 2.0,
                }
            };
            counters.insert(name.to_string(), stat);
        }
        let mut profile = ApplicationProfile {
            app_id: app_id.clone(),
            t_alone,
            counters,
            derived: BTreeMap::new(),
        };
        profile.derived = derive_metrics(&profile)?;
        profiles.push(profile);
        traits.insert(app_id, t);
    }

    // Colocated runtimes are generated first; the oracle records the slowdown
    // they imply, so rebuilding a dataset from them reproduces it bit for bit.
    let mut matrix = BTreeMap::new();
    let mut colocations = Vec::with_capacity(n_apps * (n_apps - 1));
    for a in &profiles {
        for b in &profiles {
            let base = config.planted(&traits[&a.app_id], &traits[&b.app_id]);
            let e = if config.noise > 0.0 {
                rng.gen_range(-config.noise..config.noise)
            } else {
                0.0
            };
            let t_coloc = a.t_alone * (1.0 + (base * (1.0 + e)).max(0.0) / 100.0);
            let d = compute_degradation(a.t_alone, t_coloc)?.max(0.0);
            matrix.insert((a.app_id.clone(), b.app_id.clone()), d);
            if a.app_id != b.app_id {
                colocations.push(ColocationMeasurement {
                    primary_id: a.app_id.clone(),
                    interfering_id: b.app_id.clone(),
                    t_coloc,
                });
            }
        }
    }
    let t_alone = profiles.iter().map(|p| (p.app_id.clone(), p.t_alone)).collect();
    Ok(SyntheticWorkload {
        oracle: DegradationOracle::new(matrix, t_alone)?,
        profiles,
        colocations,
        traits,
        config: *config,
        seed,
    })
}
