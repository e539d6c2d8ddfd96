//! Application profiles, colocation measurements and training-set assembly.
//!
//! A profile holds the solo runtime of one application together with
//! per-counter statistics collected over repeated solo runs. A colocation
//! measurement records the runtime of a *primary* application while an
//! *interfering* application shares its server. Joining the two yields
//! directional training samples: the concatenated feature vectors of both
//! applications and the percentage slowdown suffered by the primary.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pseudo-counter carrying the calculated CPU utilisation metric.
pub const CPU_USAGE: &str = "CPU_usage";

/// Every collected hardware/software counter plus the `CPU_usage` pseudo-counter.
pub const ALL_COUNTERS: &[&str] = &[
    "cycles",
    "instructions",
    "resource_stalls.any",
    "branch_instructions",
    "stalled_cycles_frontend",
    "stalled_cycles_backend",
    "branch_misses",
    "page_faults",
    "context_switches",
    "cpu_migrations",
    "cache_references",
    "cache_misses",
    "LLC_prefetches",
    "LLC_prefetch_misses",
    "l2_rqsts.demand_data_rd_hit",
    "l2_rqsts.pf_hit",
    "l2_l1d_wb_rqsts.miss",
    "l2_lines_out.pf_clean",
    "l2_lines_out.pf_dirty",
    "l2_rqsts.all_pf",
    "l1d.allocated_in_m",
    "l2_lines_out.demand_clean",
    "l1d.eviction",
    "l2_rqsts.all_demand_data_rd",
    "l2_lines_in.all",
    "L1_dcache_store_misses",
    "L1_dcache_load_misses",
    "L1_dcache_loads",
    "L1_dcache_prefetch_misses",
    "l1d.replacement",
    "mem_uops_retired.all_stores",
    "mem_uops_retired.all_loads",
    "mem_load_uops_retired.llc_miss",
    "mem_load_uops_retired.llc_hit",
    CPU_USAGE,
];

/// Generic counters available on every modern architecture.
pub const GENERIC_COUNTERS: &[&str] = &[
    "cycles",
    "instructions",
    "branch_instructions",
    "branch_misses",
    "page_faults",
    "context_switches",
    "cpu_migrations",
    "cache_references",
    "cache_misses",
    CPU_USAGE,
];

pub const IPC: &str = "IPC";
pub const CACHE_REF_PER_INSTRUCTIONS: &str = "cache_ref_per_instructions";
pub const CACHE_MISSES_PER_INSTRUCTIONS: &str = "cache_misses_per_instructions";
pub const MISS_RATIO: &str = "miss_ratio";

/// Ratio metrics that enter the feature vector under [`CounterGroup::AllCounters`].
const RATIO_METRICS: &[&str] = &[
    IPC,
    CACHE_REF_PER_INSTRUCTIONS,
    CACHE_MISSES_PER_INSTRUCTIONS,
    MISS_RATIO,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterGroup {
    AllCounters,
    GenericSubset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatMode {
    MeanOnly,
    FullStats,
}

/// Which counters describe an application and which statistics of each are used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSet {
    pub counter_group: CounterGroup,
    pub stat_mode: StatMode,
}

impl FeatureSet {
    pub const fn new(counter_group: CounterGroup, stat_mode: StatMode) -> Self {
        FeatureSet {
            counter_group,
            stat_mode,
        }
    }

    /// Required counters, sorted lexicographically (feature order).
    pub fn counters(&self) -> Vec<&'static str> {
        let mut names: Vec<&'static str> = match self.counter_group {
            CounterGroup::AllCounters => ALL_COUNTERS.to_vec(),
            CounterGroup::GenericSubset => GENERIC_COUNTERS.to_vec(),
        };
        names.sort_unstable();
        names
    }

    /// Derived metrics appended after the counters, sorted lexicographically.
    ///
    /// The generic subset only lists `CPU_usage` as calculated, and it already
    /// travels as a pseudo-counter, so nothing extra is appended there.
    pub fn derived_features(&self) -> Vec<&'static str> {
        match self.counter_group {
            CounterGroup::AllCounters => {
                let mut names = RATIO_METRICS.to_vec();
                names.sort_unstable();
                names
            }
            CounterGroup::GenericSubset => Vec::new(),
        }
    }

    pub fn stats_per_counter(&self) -> usize {
        match self.stat_mode {
            StatMode::MeanOnly => 1,
            StatMode::FullStats => 4,
        }
    }

    /// Feature count describing a single application.
    pub fn per_app_len(&self) -> usize {
        self.counters().len() * self.stats_per_counter() + self.derived_features().len()
    }

    /// Length of a (primary ++ interfering) sample vector.
    pub fn pair_len(&self) -> usize {
        2 * self.per_app_len()
    }

    /// Column names for a pair vector, `p.` for primary and `i.` for interfering.
    pub fn feature_names(&self) -> Vec<String> {
        let stats: &[&str] = match self.stat_mode {
            StatMode::MeanOnly => &["mean"],
            StatMode::FullStats => &["mean", "min", "max", "sd"],
        };
        let mut names = Vec::with_capacity(self.pair_len());
        for side in ["p", "i"] {
            for counter in self.counters() {
                for stat in stats {
                    names.push(format!("{side}.{counter}.{stat}"));
                }
            }
            for metric in self.derived_features() {
                names.push(format!("{side}.{metric}"));
            }
        }
        names
    }
}

impl Default for FeatureSet {
    fn default() -> Self {
        FeatureSet::new(CounterGroup::GenericSubset, StatMode::MeanOnly)
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let group = match self.counter_group {
            CounterGroup::AllCounters => "all",
            CounterGroup::GenericSubset => "generic",
        };
        let stats = match self.stat_mode {
            StatMode::MeanOnly => "mean",
            StatMode::FullStats => "full",
        };
        write!(f, "{group}+{stats}")
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    /// Accepts `generic+mean`, `all+full`, etc.
    fn from_str(s: &str) -> Result<Self> {
        let (group, stats) = s
            .split_once('+')
            .ok_or_else(|| Error::InvalidParameter(format!("feature set `{s}`: expected GROUP+STATS")))?;
        let counter_group = match group {
            "all" => CounterGroup::AllCounters,
            "generic" => CounterGroup::GenericSubset,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown counter group `{other}` (all|generic)"
                )))
            }
        };
        let stat_mode = match stats {
            "mean" => StatMode::MeanOnly,
            "full" => StatMode::FullStats,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown stat mode `{other}` (mean|full)"
                )))
            }
        };
        Ok(FeatureSet::new(counter_group, stat_mode))
    }
}

/// Statistics of one counter over repeated solo runs (events per run).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterStat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub sd: f64,
}

impl CounterStat {
    /// A statistic with every slot set to `mean`.
    pub fn flat(mean: f64) -> Self {
        CounterStat {
            mean,
            min: mean,
            max: mean,
            sd: mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicationProfile {
    pub app_id: String,
    /// Solo runtime in seconds.
    pub t_alone: f64,
    pub counters: BTreeMap<String, CounterStat>,
    pub derived: BTreeMap<String, f64>,
}

impl ApplicationProfile {
    pub fn counter(&self, name: &str) -> Result<&CounterStat> {
        self.counters.get(name).ok_or_else(|| Error::MissingCounter {
            app: self.app_id.clone(),
            counter: name.to_string(),
        })
    }

    /// Feature half describing this application under `feature_set`.
    pub fn features(&self, feature_set: &FeatureSet) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(feature_set.per_app_len());
        for name in feature_set.counters() {
            let stat = self.counter(name)?;
            match feature_set.stat_mode {
                StatMode::MeanOnly => out.push(stat.mean),
                StatMode::FullStats => out.extend([stat.mean, stat.min, stat.max, stat.sd]),
            }
        }
        for metric in feature_set.derived_features() {
            let value = self.derived.get(metric).copied().ok_or_else(|| Error::MissingCounter {
                app: self.app_id.clone(),
                counter: metric.to_string(),
            })?;
            out.push(value);
        }
        Ok(out)
    }
}

/// Runtime of `primary_id` while colocated with `interfering_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColocationMeasurement {
    pub primary_id: String,
    pub interfering_id: String,
    pub t_coloc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColocationSample {
    pub primary_id: String,
    pub interfering_id: String,
    pub features: Vec<f64>,
    /// Slowdown of the primary in percent, clamped at zero.
    pub degradation: f64,
}

/// Percentage increase of a runtime under colocation, unclamped.
pub fn compute_degradation(t_alone: f64, t_coloc: f64) -> Result<f64> {
    if !(t_alone > 0.0) {
        return Err(Error::NonPositiveRuntime {
            what: "t_alone".into(),
            value: t_alone,
        });
    }
    if !(t_coloc > 0.0) {
        return Err(Error::NonPositiveRuntime {
            what: "t_coloc".into(),
            value: t_coloc,
        });
    }
    Ok(100.0 * (t_coloc - t_alone) / t_alone)
}

/// Ratio metrics computed from the counter means, plus the echoed `CPU_usage`.
pub fn derive_metrics(profile: &ApplicationProfile) -> Result<BTreeMap<String, f64>> {
    let mean = |name: &str| profile.counter(name).map(|c| c.mean);
    let instructions = mean("instructions")?;
    let cycles = mean("cycles")?;
    let references = mean("cache_references")?;
    let misses = mean("cache_misses")?;

    let ratio = |metric: &str, num: f64, den: f64, den_name: &str| {
        if den == 0.0 {
            Err(Error::DivisionByZero {
                app: profile.app_id.clone(),
                metric: metric.to_string(),
                denominator: den_name.to_string(),
            })
        } else {
            Ok(num / den)
        }
    };

    let mut out = BTreeMap::new();
    out.insert(IPC.to_string(), ratio(IPC, instructions, cycles, "cycles")?);
    out.insert(
        CACHE_REF_PER_INSTRUCTIONS.to_string(),
        ratio(CACHE_REF_PER_INSTRUCTIONS, references, instructions, "instructions")?,
    );
    out.insert(
        CACHE_MISSES_PER_INSTRUCTIONS.to_string(),
        ratio(CACHE_MISSES_PER_INSTRUCTIONS, misses, instructions, "instructions")?,
    );
    out.insert(
        MISS_RATIO.to_string(),
        ratio(MISS_RATIO, misses, references, "cache_references")?,
    );
    if let Some(cpu) = profile.counters.get(CPU_USAGE) {
        out.insert(CPU_USAGE.to_string(), cpu.mean);
    }
    Ok(out)
}

fn parse_error(source_name: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source_name.to_string(),
        line,
        message: message.into(),
    }
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(input)
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

fn parse_real(source_name: &str, line: u64, field: &str, raw: &str) -> Result<f64> {
    let value: f64 = raw
        .parse()
        .map_err(|_| parse_error(source_name, line, format!("field `{field}`: `{raw}` is not a number")))?;
    if !value.is_finite() {
        return Err(parse_error(source_name, line, format!("field `{field}` is not finite")));
    }
    Ok(value)
}

/// Reads `profiles.csv` (`app_id,t_alone_s,counter,mean,min,max,sd`).
pub fn parse_profiles(path: &Path, feature_set: &FeatureSet) -> Result<Vec<ApplicationProfile>> {
    let file = std::fs::File::open(path)?;
    parse_profiles_from(file, &path.display().to_string(), feature_set)
}

/// Parses profile rows from any reader; `source_name` labels error messages.
///
/// Under [`StatMode::MeanOnly`] the `min`, `max` and `sd` columns are optional and
/// every slot is filled with the mean. Counters outside the feature set are dropped.
pub fn parse_profiles_from<R: Read>(
    input: R,
    source_name: &str,
    feature_set: &FeatureSet,
) -> Result<Vec<ApplicationProfile>> {
    let mut reader = csv_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| parse_error(source_name, 1, e.to_string()))?
        .clone();
    let required = |name: &str| {
        column(&headers, name).ok_or_else(|| parse_error(source_name, 1, format!("missing column `{name}`")))
    };
    let app_col = required("app_id")?;
    let t_col = required("t_alone_s")?;
    let counter_col = required("counter")?;
    let mean_col = required("mean")?;
    let (min_col, max_col, sd_col) = match feature_set.stat_mode {
        StatMode::FullStats => (
            Some(required("min")?),
            Some(required("max")?),
            Some(required("sd")?),
        ),
        StatMode::MeanOnly => (None, None, None),
    };

    let wanted = feature_set.counters();
    // Keeps first-seen order of apps so output order follows the file.
    let mut order: Vec<String> = Vec::new();
    let mut by_app: BTreeMap<String, (f64, BTreeMap<String, CounterStat>)> = BTreeMap::new();

    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_error(source_name, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let app = field(app_col).to_string();
        if app.is_empty() {
            return Err(parse_error(source_name, line, "empty app_id"));
        }
        let t_alone = parse_real(source_name, line, "t_alone_s", field(t_col))?;
        if t_alone <= 0.0 {
            return Err(Error::NonPositiveRuntime {
                what: format!("t_alone_s of `{app}` (line {line})"),
                value: t_alone,
            });
        }
        let counter = field(counter_col).to_string();
        let mean = parse_real(source_name, line, "mean", field(mean_col))?;
        let stat = match feature_set.stat_mode {
            StatMode::MeanOnly => CounterStat::flat(mean),
            StatMode::FullStats => {
                let get = |col: Option<usize>, name: &str| {
                    parse_real(source_name, line, name, field(col.expect("column resolved")))
                };
                let stat = CounterStat {
                    mean,
                    min: get(min_col, "min")?,
                    max: get(max_col, "max")?,
                    sd: get(sd_col, "sd")?,
                };
                if !(stat.min <= stat.mean && stat.mean <= stat.max) || stat.sd < 0.0 {
                    return Err(Error::InvalidStat {
                        app,
                        counter,
                        message: format!(
                            "line {line}: need min <= mean <= max and sd >= 0, got {stat:?}"
                        ),
                    });
                }
                stat
            }
        };

        let entry = by_app.entry(app.clone()).or_insert_with(|| {
            order.push(app.clone());
            (t_alone, BTreeMap::new())
        });
        if entry.0 != t_alone {
            return Err(Error::InconsistentRuntime {
                app,
                first: entry.0,
                second: t_alone,
            });
        }
        if !wanted.contains(&counter.as_str()) {
            continue;
        }
        if entry.1.insert(counter.clone(), stat).is_some() {
            return Err(Error::DuplicateEntry { app, counter });
        }
    }

    let mut profiles = Vec::with_capacity(order.len());
    for app in order {
        let (t_alone, counters) = by_app.remove(&app).expect("app recorded");
        for name in &wanted {
            if !counters.contains_key(*name) {
                return Err(Error::MissingCounter {
                    app: app.clone(),
                    counter: name.to_string(),
                });
            }
        }
        let mut profile = ApplicationProfile {
            app_id: app,
            t_alone,
            counters,
            derived: BTreeMap::new(),
        };
        profile.derived = derive_metrics(&profile)?;
        profiles.push(profile);
    }
    Ok(profiles)
}

/// Writes profiles in the `profiles.csv` layout.
pub fn write_profiles<W: Write>(out: W, profiles: &[ApplicationProfile]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer
        .write_record(["app_id", "t_alone_s", "counter", "mean", "min", "max", "sd"])
        .map_err(csv_io)?;
    for profile in profiles {
        for (name, stat) in &profile.counters {
            writer
                .write_record([
                    profile.app_id.clone(),
                    profile.t_alone.to_string(),
                    name.clone(),
                    stat.mean.to_string(),
                    stat.min.to_string(),
                    stat.max.to_string(),
                    stat.sd.to_string(),
                ])
                .map_err(csv_io)?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Reads `colocations.csv` (`primary_id,interfering_id,t_coloc_s`).
pub fn parse_colocations(path: &Path) -> Result<Vec<ColocationMeasurement>> {
    let file = std::fs::File::open(path)?;
    parse_colocations_from(file, &path.display().to_string())
}

pub fn parse_colocations_from<R: Read>(input: R, source_name: &str) -> Result<Vec<ColocationMeasurement>> {
    let mut reader = csv_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| parse_error(source_name, 1, e.to_string()))?
        .clone();
    let required = |name: &str| {
        column(&headers, name).ok_or_else(|| parse_error(source_name, 1, format!("missing column `{name}`")))
    };
    let p_col = required("primary_id")?;
    let i_col = required("interfering_id")?;
    let t_col = required("t_coloc_s")?;

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_error(source_name, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let t_coloc = parse_real(source_name, line, "t_coloc_s", record.get(t_col).unwrap_or(""))?;
        if t_coloc <= 0.0 {
            return Err(Error::NonPositiveRuntime {
                what: format!("t_coloc_s (line {line})"),
                value: t_coloc,
            });
        }
        out.push(ColocationMeasurement {
            primary_id: record.get(p_col).unwrap_or("").to_string(),
            interfering_id: record.get(i_col).unwrap_or("").to_string(),
            t_coloc,
        });
    }
    Ok(out)
}

pub fn write_colocations<W: Write>(out: W, measurements: &[ColocationMeasurement]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer
        .write_record(["primary_id", "interfering_id", "t_coloc_s"])
        .map_err(csv_io)?;
    for m in measurements {
        writer
            .write_record([m.primary_id.as_str(), m.interfering_id.as_str(), &m.t_coloc.to_string()])
            .map_err(csv_io)?;
    }
    writer.flush()?;
    Ok(())
}

/// Indexes profiles by app id.
pub fn index_profiles(profiles: &[ApplicationProfile]) -> BTreeMap<&str, &ApplicationProfile> {
    profiles.iter().map(|p| (p.app_id.as_str(), p)).collect()
}

/// Concatenated feature vector for (primary, interfering).
pub fn pair_features(
    feature_set: &FeatureSet,
    primary: &ApplicationProfile,
    interfering: &ApplicationProfile,
) -> Result<Vec<f64>> {
    let mut features = primary.features(feature_set)?;
    features.extend(interfering.features(feature_set)?);
    Ok(features)
}

/// One sample per measurement, in measurement order; negative slowdowns become 0.
pub fn build_training_dataset(
    profiles: &[ApplicationProfile],
    measurements: &[ColocationMeasurement],
    feature_set: &FeatureSet,
) -> Result<Vec<ColocationSample>> {
    let index = index_profiles(profiles);
    let lookup = |id: &str| index.get(id).copied().ok_or_else(|| Error::UnknownApp(id.to_string()));
    let mut halves: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut samples = Vec::with_capacity(measurements.len());
    for m in measurements {
        let primary = lookup(&m.primary_id)?;
        let interfering = lookup(&m.interfering_id)?;
        let degradation = compute_degradation(primary.t_alone, m.t_coloc)?.max(0.0);
        let mut features = Vec::with_capacity(feature_set.pair_len());
        for profile in [primary, interfering] {
            if !halves.contains_key(profile.app_id.as_str()) {
                halves.insert(profile.app_id.as_str(), profile.features(feature_set)?);
            }
            features.extend_from_slice(&halves[profile.app_id.as_str()]);
        }
        samples.push(ColocationSample {
            primary_id: m.primary_id.clone(),
            interfering_id: m.interfering_id.clone(),
            features,
            degradation,
        });
    }
    Ok(samples)
}
