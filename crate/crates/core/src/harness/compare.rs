//! Paired one-sided tests between two runs.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use super::aggregate::run_files;
use super::records::{read_records, EpisodeRecord};
use crate::error::{FetsError, Result};
use crate::stats::{wilcoxon_signed_rank_greater, SignedRankTest};

/// Half-open episode range `start:end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: u64,
    pub end: u64,
}

impl Window {
    pub fn contains(&self, episode: u64) -> bool {
        (self.start..self.end).contains(&episode)
    }
}

impl FromStr for Window {
    type Err = FetsError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || FetsError::invalid(format!("window must look like START:END, got '{s}'"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let start = a.trim().parse().map_err(|_| bad())?;
        let end = b.trim().parse().map_err(|_| bad())?;
        if end <= start {
            return Err(FetsError::invalid(format!("empty window {s}")));
        }
        Ok(Window { start, end })
    }
}

fn metric_of(spaces: &[String], r: &EpisodeRecord, metric: &str) -> Result<f64> {
    match metric {
        "acc_reward" => return Ok(r.acc_reward),
        "steps" => return Ok(r.steps as f64),
        _ => {}
    }
    let unknown = || FetsError::invalid(format!("unknown metric '{metric}'"));
    if let Some(space) = metric.strip_prefix("F_") {
        let i = spaces.iter().position(|s| s == space).ok_or_else(unknown)?;
        return r.free_energy[i].ok_or_else(|| FetsError::InsufficientData(format!("{metric} is empty in {}", r.run_id)));
    }
    if let Some(space) = metric.strip_prefix("sel_") {
        let i = spaces.iter().position(|s| s == space).ok_or_else(unknown)?;
        return Ok(r.selection[i]);
    }
    Err(unknown())
}

/// Per-seed sums of `metric` over `window`, from records of a single run id.
pub fn seed_sums(runs: &[(Vec<String>, Vec<EpisodeRecord>)], metric: &str, window: Window) -> Result<BTreeMap<u64, f64>> {
    let mut sums = BTreeMap::new();
    for (spaces, records) in runs {
        for r in records.iter().filter(|r| window.contains(r.episode)) {
            *sums.entry(r.seed).or_insert(0.0) += metric_of(spaces, r, metric)?;
        }
    }
    Ok(sums)
}

/// Loads the records of `dir`, keeping one method when several are present.
pub fn load_run(dir: &Path, method: Option<&str>) -> Result<Vec<(Vec<String>, Vec<EpisodeRecord>)>> {
    let mut out = Vec::new();
    let mut ids = std::collections::BTreeSet::new();
    for f in run_files(dir)? {
        let (spaces, records) = read_records(&f)?;
        let keep = match (method, records.first()) {
            (Some(m), Some(r)) => r.run_id.rsplit_once(':').map(|p| p.1) == Some(m),
            (None, _) => true,
            (Some(_), None) => false,
        };
        if keep {
            ids.extend(records.iter().map(|r| r.run_id.clone()));
            out.push((spaces, records));
        }
    }
    if ids.len() > 1 {
        return Err(FetsError::invalid(format!(
            "{} holds several runs ({}); pick one method",
            dir.display(),
            ids.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    if out.is_empty() {
        return Err(FetsError::InsufficientData(format!("no matching runs in {}", dir.display())));
    }
    Ok(out)
}

/// Tests whether run A's per-seed window sums exceed run B's, pairing by
/// seed.
pub fn compare(
    a: &[(Vec<String>, Vec<EpisodeRecord>)],
    b: &[(Vec<String>, Vec<EpisodeRecord>)],
    metric: &str,
    window: Window,
) -> Result<SignedRankTest> {
    let sa = seed_sums(a, metric, window)?;
    let sb = seed_sums(b, metric, window)?;
    let (mut xa, mut xb) = (Vec::new(), Vec::new());
    for (seed, va) in &sa {
        if let Some(vb) = sb.get(seed) {
            xa.push(*va);
            xb.push(*vb);
        }
    }
    wilcoxon_signed_rank_greater(&xa, &xb)
}
