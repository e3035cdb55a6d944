use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::MeasureTag;
use crate::error::{Error, Result};

/// SHA-256 of the compact JSON rendering of `config`. Object keys are
/// sorted, so equal configs hash equally regardless of construction order.
pub fn config_hash(config: &Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

/// Per-sample scores plus everything needed to reproduce them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub measure: MeasureTag,
    pub scores: Vec<f64>,
    /// `ranks[i]` is the position of sample i in ascending score order.
    pub ranks: Vec<usize>,
    pub groups: Option<Vec<String>>,
    pub flags: Option<Vec<bool>>,
    pub config: Value,
}

#[derive(Serialize)]
struct Row<'a> {
    index: usize,
    score: f64,
    rank: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    group: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    flag: Option<bool>,
}

/// Equal-width bins over `[lo, hi]`; the last bin is closed on the right.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Ascending order, ties kept in index order.
pub fn ascending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order
}

impl ScoreReport {
    pub fn new(measure: MeasureTag, scores: Vec<f64>, config: Value) -> Self {
        let mut ranks = vec![0; scores.len()];
        for (rank, i) in ascending_order(&scores).into_iter().enumerate() {
            ranks[i] = rank;
        }
        ScoreReport {
            measure,
            scores,
            ranks,
            groups: None,
            flags: None,
            config,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn with_groups(mut self, groups: Vec<String>) -> Result<Self> {
        if groups.len() != self.len() {
            return Err(Error::Dimension(format!("{} groups for {} scores", groups.len(), self.len())));
        }
        self.groups = Some(groups);
        Ok(self)
    }

    pub fn with_flags(mut self, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != self.len() {
            return Err(Error::Dimension(format!("{} flags for {} scores", flags.len(), self.len())));
        }
        self.flags = Some(flags);
        Ok(self)
    }

    /// Merges extra keys into the config snapshot.
    pub fn with_config(mut self, extra: Value) -> Self {
        if let (Value::Object(base), Value::Object(extra)) = (&mut self.config, extra) {
            base.extend(extra);
        }
        self
    }

    pub fn config_hash(&self) -> String {
        config_hash(&self.config)
    }

    /// Sample indices from least to most informative.
    pub fn order(&self) -> Vec<usize> {
        ascending_order(&self.scores)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# config_sha256={}", self.config_hash()).unwrap();
        writeln!(out, "# config={}", self.config).unwrap();
        out.push_str("index,score,rank,group,flag\n");
        for (i, s) in self.scores.iter().enumerate() {
            let group = self.groups.as_ref().map_or("", |g| g[i].as_str());
            let flag = self.flags.as_ref().map_or(String::new(), |f| u8::from(f[i]).to_string());
            writeln!(out, "{i},{s:e},{},{group},{flag}", self.ranks[i]).unwrap();
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Row> = (0..self.len())
            .map(|i| Row {
                index: i,
                score: self.scores[i],
                rank: self.ranks[i],
                group: self.groups.as_ref().map(|g| g[i].as_str()),
                flag: self.flags.as_ref().map(|f| f[i]),
            })
            .collect();
        serde_json::json!({
            "measure": self.measure,
            "config": self.config,
            "config_sha256": self.config_hash(),
            "scores": rows,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json()).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn histogram(&self, bins: usize) -> Histogram {
        let bins = bins.max(1);
        if self.is_empty() {
            return Histogram { edges: vec![0.0, 0.0], counts: vec![0] };
        }
        let lo = self.scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let edges = (0..=bins).map(|b| if b == bins { hi.max(lo + width) } else { lo + width * b as f64 }).collect();
        let mut counts = vec![0; bins];
        for &s in &self.scores {
            let b = (((s - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Histogram { edges, counts }
    }
}

impl Histogram {
    pub fn to_csv(&self, config_hash: &str) -> String {
        let mut out = format!("# config_sha256={config_hash}\nbin_start,bin_end,count\n");
        for (b, c) in self.counts.iter().enumerate() {
            writeln!(out, "{:e},{:e},{c}", self.edges[b], self.edges[b + 1]).unwrap();
        }
        out
    }
}
