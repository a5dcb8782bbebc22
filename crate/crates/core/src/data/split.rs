use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Shuffles `ids` with `seed`, then takes `floor(n/10)` each for validation
/// and test; training keeps the remainder.
pub fn split_dataset(ids: &[String], seed: u64) -> Result<DatasetSplit> {
    if ids.len() < 10 {
        return Err(Error::Dataset(format!("need at least 10 samples to split, got {}", ids.len())));
    }
    let mut order = ids.to_vec();
    SplitMix64::new(seed).shuffle(&mut order);
    let tenth = order.len() / 10;
    let test = order.split_off(order.len() - tenth);
    let val = order.split_off(order.len() - tenth);
    Ok(DatasetSplit { train: order, val, test, seed })
}

impl DatasetSplit {
    pub fn get(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Parse(format!("unknown split `{other}` (expected train|val|test)"))),
        }
    }

    /// Three sections `[train]`, `[val]`, `[test]`, one id per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, ids) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            let _ = writeln!(out, "[{name}]");
            for id in ids {
                let _ = writeln!(out, "{id}");
            }
        }
        out
    }

    /// Parses [`DatasetSplit::to_text`] output. The seed is not stored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut split = DatasetSplit { train: vec![], val: vec![], test: vec![], seed: 0 };
        let mut current: Option<&mut Vec<String>> = None;
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            current = match line {
                "[train]" => Some(&mut split.train),
                "[val]" => Some(&mut split.val),
                "[test]" => Some(&mut split.test),
                id => {
                    let Some(list) = current else {
                        return Err(Error::Parse(format!("line {}: id `{id}` before any section", no + 1)));
                    };
                    list.push(id.to_string());
                    Some(list)
                }
            };
        }
        Ok(split)
    }
}
