//! Training dataset files: `#` provenance lines, then a CSV table.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use coloc_core::profiles::{ColocationSample, FeatureSet};
use coloc_core::Error;
use sha2::{Digest, Sha256};

pub const ID_COLUMNS: [&str; 3] = ["primary_id", "interfering_id", "degradation_pct"];

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    /// `(file name, sha256 hex)` per input.
    pub inputs: Vec<(String, String)>,
    pub feature_set: FeatureSet,
}

pub fn sha256_file(path: &Path) -> Result<String, Error> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_dataset<W: Write>(mut out: W, prov: &Provenance, samples: &[ColocationSample]) -> Result<(), Error> {
    let names = prov.feature_set.feature_names();
    writeln!(out, "# coloc training dataset")?;
    for (name, digest) in &prov.inputs {
        writeln!(out, "# input {name} sha256={digest}")?;
    }
    writeln!(out, "# feature_set={}", prov.feature_set)?;
    writeln!(out, "# features={}", names.join(";"))?;
    let mut writer = csv::Writer::from_writer(out);
    let header: Vec<&str> = ID_COLUMNS.iter().copied().chain(names.iter().map(String::as_str)).collect();
    writer.write_record(&header).map_err(csv_err)?;
    for s in samples {
        if s.features.len() != names.len() {
            return Err(Error::FeatureLength {
                expected: names.len(),
                got: s.features.len(),
            });
        }
        let mut record = vec![s.primary_id.clone(), s.interfering_id.clone(), s.degradation.to_string()];
        record.extend(s.features.iter().map(f64::to_string));
        writer.write_record(&record).map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(FeatureSet, Vec<ColocationSample>), Error> {
    let file = std::fs::File::open(path)?;
    read_dataset_from(file, &path.display().to_string())
}

pub fn read_dataset_from<R: Read>(input: R, source: &str) -> Result<(FeatureSet, Vec<ColocationSample>), Error> {
    let parse = |line: u64, message: String| Error::Parse {
        source_name: source.to_string(),
        line,
        message,
    };
    let mut reader = BufReader::new(input);
    let mut feature_set = None;
    let mut line_no = 0u64;
    let mut header = String::new();
    loop {
        header.clear();
        if reader.read_line(&mut header)? == 0 {
            return Err(parse(line_no, "missing header row".into()));
        }
        line_no += 1;
        let Some(comment) = header.strip_prefix('#') else { break };
        if let Some(fs) = comment.trim().strip_prefix("feature_set=") {
            feature_set = Some(fs.parse::<FeatureSet>().map_err(|e| parse(line_no, e.to_string()))?);
        }
    }
    let feature_set = feature_set.ok_or_else(|| parse(1, "no `# feature_set=` provenance line".into()))?;
    let expected: Vec<String> = ID_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(feature_set.feature_names())
        .collect();
    let got: Vec<&str> = header.trim_end().split(',').map(str::trim).collect();
    if got != expected {
        return Err(parse(line_no, format!("header does not match feature set {feature_set}")));
    }

    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut samples = Vec::new();
    for (k, record) in csv.records().enumerate() {
        let row = line_no + 1 + k as u64;
        let record = record.map_err(|e| parse(row, e.to_string()))?;
        if record.len() != expected.len() {
            return Err(parse(row, format!("expected {} fields, got {}", expected.len(), record.len())));
        }
        let num = |i: usize| -> Result<f64, Error> {
            let v: f64 = record[i]
                .parse()
                .map_err(|_| parse(row, format!("`{}` is not a number in column {}", &record[i], expected[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse(row, format!("non-finite value in column {}", expected[i])))
            }
        };
        let degradation = num(2)?;
        if degradation < 0.0 {
            return Err(parse(row, "negative degradation_pct".into()));
        }
        samples.push(ColocationSample {
            primary_id: record[0].to_string(),
            interfering_id: record[1].to_string(),
            features: (3..record.len()).map(num).collect::<Result<_, _>>()?,
            degradation,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((feature_set, samples))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
