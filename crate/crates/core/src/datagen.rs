//! Labeled datasets of `(setting, wait)` pairs and their line-per-record file
//! format: the C offsets as integers followed by the label, separated by single
//! spaces, no header.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::microsim::{batch_simulate, SimConfig};
use crate::netmodel::{random_setting, RoadNetwork, SignalSetting};
use crate::rng::mix_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub setting: SignalSetting,
    pub wait_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledRecord>,
    pub test: Vec<LabeledRecord>,
}

/// Number of offsets shared by all records.
pub fn dimension(records: &[LabeledRecord]) -> Result<usize> {
    let first = records.first().ok_or(Error::EmptyDataset)?;
    let c = first.setting.len();
    for (i, r) in records.iter().enumerate() {
        r.setting.check_len(c).map_err(|e| Error::at(i, e))?;
    }
    Ok(c)
}

/// Seed of the `i`-th random setting of a dataset generated with `seed`.
pub fn record_seed(seed: u64, i: usize) -> u64 {
    mix_seed(seed, i as u64)
}

/// `n` random settings labeled by the simulator. Record `i` uses the setting
/// `random_setting(C, record_seed(seed, i))`, so a longer dataset with the
/// same seed extends a shorter one.
pub fn generate_dataset(
    network: &RoadNetwork,
    config: &SimConfig,
    n: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<LabeledRecord>> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be positive"));
    }
    let c = network.n_intersections();
    let settings: Vec<SignalSetting> = (0..n)
        .map(|i| random_setting(c, record_seed(seed, i)))
        .collect();
    let results = batch_simulate(network, &settings, config, workers)?;
    Ok(settings
        .into_iter()
        .zip(results)
        .map(|(setting, r)| LabeledRecord {
            setting,
            wait_s: r.total_red_wait_s as f64,
        })
        .collect())
}

/// First `train_n` records for training, the rest for testing, both in
/// source order.
pub fn prefix_split(records: &[LabeledRecord], train_n: usize) -> Result<DatasetSplit> {
    if train_n == 0 || train_n >= records.len() {
        return Err(Error::invalid(format!(
            "train_n must lie in 1..{} (got {train_n})",
            records.len()
        )));
    }
    Ok(DatasetSplit {
        train: records[..train_n].to_vec(),
        test: records[train_n..].to_vec(),
    })
}

/// One line per record. Labels use the shortest representation that parses
/// back to the same `f64`.
pub fn format_dataset(records: &[LabeledRecord]) -> Result<String> {
    if !records.is_empty() {
        dimension(records)?;
    }
    let mut out = String::new();
    for r in records {
        for o in r.setting.offsets() {
            write!(out, "{o} ").unwrap();
        }
        writeln!(out, "{:?}", r.wait_s).unwrap();
    }
    Ok(out)
}

pub fn write_dataset(records: &[LabeledRecord], path: &Path) -> Result<()> {
    let text = format_dataset(records)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses the dataset format. With `expected_dim = None` the dimension is
/// taken from the first line.
pub fn parse_dataset(
    text: &str,
    origin: &str,
    expected_dim: Option<usize>,
) -> Result<Vec<LabeledRecord>> {
    let mut dim = expected_dim;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: lineno,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let c = match dim {
            Some(c) => c,
            None => {
                if fields.len() < 2 {
                    return Err(err("need at least one offset and a label".into()));
                }
                dim = Some(fields.len() - 1);
                fields.len() - 1
            }
        };
        if fields.len() != c + 1 {
            return Err(err(format!(
                "expected {} fields ({c} offsets + label), found {}",
                c + 1,
                fields.len()
            )));
        }
        let offsets = fields[..c]
            .iter()
            .map(|f| {
                f.parse::<u8>()
                    .map_err(|_| err(format!("bad offset {f:?}")))
            })
            .collect::<Result<Vec<u8>>>()?;
        let setting = SignalSetting::new(offsets).map_err(|e| err(e.to_string()))?;
        let label = fields[c];
        let wait_s: f64 = label
            .parse()
            .map_err(|_| err(format!("bad label {label:?}")))?;
        if !wait_s.is_finite() || wait_s < 0.0 {
            return Err(err(format!("label must be a nonnegative number, got {label}")));
        }
        out.push(LabeledRecord { setting, wait_s });
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<LabeledRecord>> {
    read_dataset_with_dim(path, None)
}

pub fn read_dataset_with_dim(path: &Path, expected_dim: Option<usize>) -> Result<Vec<LabeledRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, &path.display().to_string(), expected_dim)
}
