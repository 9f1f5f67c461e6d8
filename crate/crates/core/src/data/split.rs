use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::DatasetIndex;
use crate::error::{Error, Result};
use crate::rng::stream;

const SPLIT_STREAM: u64 = 0x5350;

/// A labelled file, relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sample {
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Valid => "valid",
            Partition::Test => "test",
        })
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "valid" => Ok(Partition::Valid),
            "test" => Ok(Partition::Test),
            other => Err(Error::Config(format!("unknown partition `{other}` (train|valid|test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub test: Vec<Sample>,
    pub seed: u64,
}

impl Split {
    pub const RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

    pub fn part(&self, p: Partition) -> &[Sample] {
        match p {
            Partition::Train => &self.train,
            Partition::Valid => &self.valid,
            Partition::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-class `(train, valid, test)` sizes: train = round(0.8n),
/// valid = round(0.1n), test takes the remainder.
pub fn partition_counts(n: usize) -> (usize, usize, usize) {
    // half-up rounding in integer arithmetic
    let train = (8 * n + 5) / 10;
    let valid = (n + 5) / 10;
    (train, valid, n - train - valid)
}

/// Shuffles each class with a seed-derived stream and cuts it 80/10/10.
pub fn split_dataset(index: &DatasetIndex, seed: u64) -> Result<Split> {
    let mut split = Split {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for (label, class) in index.classes.iter().enumerate() {
        let n = class.files.len();
        if n < super::MIN_CLASS_SIZE {
            return Err(Error::Data(format!(
                "class `{}` has {n} files; at least {} are needed",
                class.directory,
                super::MIN_CLASS_SIZE
            )));
        }
        let mut files = class.files.clone();
        files.shuffle(&mut stream(seed, &[SPLIT_STREAM, label as u64]));
        let (train, valid, _) = partition_counts(n);
        for (i, path) in files.into_iter().enumerate() {
            let sample = Sample { path, label };
            if i < train {
                split.train.push(sample);
            } else if i < train + valid {
                split.valid.push(sample);
            } else {
                split.test.push(sample);
            }
        }
    }
    Ok(split)
}

/// Writes `path,class_index,partition` rows.
pub fn write_manifest(split: &Split, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["path", "class_index", "partition"]).map_err(|e| csv_error(path, e))?;
    for part in [Partition::Train, Partition::Valid, Partition::Test] {
        for s in split.part(part) {
            let p = s.path.to_string_lossy();
            w.write_record([p.as_ref(), &s.label.to_string(), &part.to_string()])
                .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path, seed: u64) -> Result<Split> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut split = Split {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = || Error::Data(format!("{}: malformed manifest row {rec:?}", path.display()));
        if rec.len() != 3 {
            return Err(bad());
        }
        let sample = Sample {
            path: PathBuf::from(&rec[0]),
            label: rec[1].parse().map_err(|_| bad())?,
        };
        match rec[2].parse::<Partition>().map_err(|_| bad())? {
            Partition::Train => split.train.push(sample),
            Partition::Valid => split.valid.push(sample),
            Partition::Test => split.test.push(sample),
        }
    }
    Ok(split)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}
